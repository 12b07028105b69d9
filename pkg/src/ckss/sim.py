"""Run driver: builds a world from a scenario and advances it tick by tick.

Tick order: world step (clock, motion, scripts, impacts), scenario events,
message delivery, platforms in id order, swap transactions, world snapshot.
Every observable change goes to the black box.
"""

from __future__ import annotations

from dataclasses import replace

from .blackbox import BlackBox, canonical
from .codec import decode_key, encode_key, verify_key
from .collab import (
    NORMATIVE,
    HandoffRequest,
    SwapPhase,
    advance_swap,
    custody_violations,
    initiate_swap,
    request_collaboration,
)
from .command import (
    CeasefireNotice,
    ClashRecord,
    Decision,
    KeyTransfer,
    OperatorMode,
    Router,
    SwapAccept,
    SwapComplete,
    SwapProposal,
    ceasefire_in_effect,
    handle_clash,
    message_to_dict,
    receive_key,
    resolve_referral,
)
from .domain import (
    Classification,
    CombatRole,
    EntityKind,
    ForbiddenClause,
    TargetNature,
    TargetStatus,
    TargetValue,
    classify_target,
    gate_characteristics,
)
from .keys import CodifiedKey, KeyLedger, embed_vicinity, generate_key
from .ooda import (
    ABSORBING_STATES,
    BdaVerdict,
    MaintenanceUpdate,
    PlatformState,
    VersionSkew,
    WeaponPlatform,
    battle_damage_assessment,
    complete_or_handoff,
    maintenance_update,
)
from .scenario import Scenario, load_scenario
from .switch import (
    ENGAGING_KINDS,
    LETHAL_KINDS,
    OPEN_STATES,
    Action,
    ActionDispatched,
    ActionKind,
    ActionState,
    Capture,
    KeyClash,
    Mobility,
    PlatformContext,
    collect_from_wire,
    dispatch,
    replicate_key,
    surrendering,
)
from .world import WORLD_ACTOR, BattleSpace, Entity, distance, self_vector, sense, stream

IMMEDIATE_KINDS = frozenset(ActionKind) - ENGAGING_KINDS


def build_world(sc: Scenario, seed: int | None = None) -> BattleSpace:
    seed = sc.seed if seed is None else seed
    entities = [Entity(p.ref, p.position) for p in sc.platforms]
    entities += [Entity(t.ref, t.position, t.velocity, list(t.script), True, t.nature, t.truth) for t in sc.targets]
    entities += [Entity(c.ref, c.position) for c in sc.commands]
    return BattleSpace(entities, seed=seed, effect_table=sc.effects)


def key_record(key: CodifiedKey, role: str) -> dict:
    return {"key": encode_key(key), "role": role, "target": key.seg3_target_id,
            "classified": [key.seg6_timestamp, int(key.seg5_nature), int(key.seg8_status)]}


class Simulation:
    def __init__(self, scenario, *, seed: int | None = None, max_ticks: int | None = None,
                 operator=None, swap_mode: str | None = None):
        self.scenario: Scenario = load_scenario(scenario)
        sc = self.scenario
        self.seed = sc.seed if seed is None else seed
        self.max_ticks = sc.max_ticks if max_ticks is None else max_ticks
        self.swap_mode = swap_mode or sc.swap_mode
        self.policy = operator or sc.operator
        self.world = build_world(sc, self.seed)
        self.ledger = KeyLedger()
        self.log = BlackBox()
        self.router = Router([e.ref for e in self.world.entities.values()], stream(self.seed, "links"),
                             sc.default_link, sc.links)
        self.platforms: dict[int, WeaponPlatform] = {}
        for spec in sorted(sc.platforms, key=lambda s: s.id):
            cfg = sc.mission_config(spec.id)
            # pre-planned targets are only pre-planned for the platforms assigned to them
            cfg = replace(cfg, preplanned_targets=cfg.preplanned_targets & spec.assigned)
            ctx = PlatformContext(Mobility.OPERATIONAL, Capture.NONE, None, frozenset(), None, 0, cfg,
                                  spec.resources, {}, None, spec.position, sc.safety_radius, sc.staleness_limit)
            self.platforms[spec.id] = WeaponPlatform(
                spec.ref, PlatformState.SEARCHING, ctx, spec.position, spec.fidelity, spec.payloads,
                spec.sensor_range, spec.noise_scale, set(spec.assigned))
        self.actions: dict[int, Action] = {}
        self.owners: dict[int, int] = {}
        self.clashes: list[tuple[int, ClashRecord]] = []
        self.quarantines: list[dict] = []
        self.referrals: list[Decision] = []
        self.txns: dict = {}
        self.events = list(sc.events)
        self._self_keys: dict[tuple[int, int], CodifiedKey] = {}
        self._keyed: set[tuple[int, int]] = set()
        self.log.append(0, WORLD_ACTOR, "scenario", {"name": sc.name, "seed": self.seed, "max_ticks": self.max_ticks,
                                                      "swap_mode": self.swap_mode})
        for p in self.platforms.values():
            self._record_state(p, "start")
        self.log.append(0, WORLD_ACTOR, "world", self.world.snapshot())

    # -- plumbing --------------------------------------------------------------------

    @property
    def clock(self) -> int:
        return self.world.clock

    def record(self, actor, kind: str, payload=None):
        return self.log.append(self.clock, actor, kind, payload)

    def _record_state(self, p: WeaponPlatform, reason: str) -> None:
        self.record(p.ref, "state", {"state": p.state.label, "reason": reason,
                                     "munitions": [[k, c] for k, c in p.ctx.resources.weapons],
                                     "position": list(p.position)})

    def _set_state(self, p: WeaponPlatform, state: PlatformState, reason: str) -> None:
        if p.state in ABSORBING_STATES:
            return
        if p.state != state:
            p.state = state
            self._record_state(p, reason)

    def _new_action(self, p: WeaponPlatform, proposed: Action) -> Action:
        action = replace(proposed, action_id=len(self.actions) + 1)
        self.actions[action.action_id] = action
        self.owners[action.action_id] = p.id
        self._log_action(p, action)
        return action

    def _log_action(self, p: WeaponPlatform, action: Action) -> None:
        self.record(p.ref, "action", {"action": action.to_dict(), "kind": action.kind.label,
                                      "state": action.state.label})

    def _advance(self, p: WeaponPlatform, action: Action, state: ActionState) -> Action:
        moved = action.advance(state)
        self.actions[moved.action_id] = moved
        self._log_action(p, moved)
        return moved

    def send(self, msg, src, dst) -> None:
        delivery = self.router.route(msg, src, dst, self.clock)
        self.record(src, "message", {"seq": delivery.seq, "to": dst.id, "status": "lost" if delivery.lost else "sent",
                                     "due": delivery.due, **message_to_dict(msg)})
        if not delivery.lost and delivery.due <= self.clock:
            self._deliver_due()

    # -- tick --------------------------------------------------------------------------

    def run(self) -> dict:
        while self.clock < self.max_ticks and not self.quiescent():
            self.tick()
        return self.summary()

    def tick(self) -> None:
        for change in self.world.step():
            self.record(WORLD_ACTOR, "impact" if change["change"] == "impact" else "script", change)
        for pid in sorted(self.platforms):
            p = self.platforms[pid]
            p.ctx = replace(p.ctx, clock=self.clock)
        self._apply_events()
        self._deliver_due()
        for pid in sorted(self.platforms):
            tick_platform(self.platforms[pid], self)
        self._advance_swaps()
        self.record(WORLD_ACTOR, "world", self.world.snapshot())

    def quiescent(self) -> bool:
        if any(e.tick > self.clock for e in self.events):
            return False
        if self.router.in_flight or any(not t.terminal for t in self.txns.values()):
            return False
        if any(not eng.resolved for eng in self.world.engagements.values()):
            return False
        for e in self.world.entities.values():
            if e.mobile or any(t > self.clock for t, _ in e.script):
                return False
        for p in self.platforms.values():
            if p.terminal:
                continue
            if p.state != PlatformState.SEARCHING or p.maintenance is not None:
                return False
            cf = p.ctx.cfg.ceasefire_timetable
            if cf is not None and cf > self.clock:
                return False
            if self._candidates(p) or (p.assigned and complete_or_handoff(p) is not None):
                return False
        return True

    # -- scenario events -----------------------------------------------------------------

    def _apply_events(self) -> None:
        due = [e for e in self.events if e.tick == self.clock]
        for e in due:
            self.record(WORLD_ACTOR, "event", {"kind": e.kind, "params": {k: v for k, v in e.params}})
            targets = self._event_platforms(e)
            if e.kind == "fail":
                for p in targets:
                    p.ctx = replace(p.ctx, mobility=Mobility.FAILED)
            elif e.kind == "capture":
                by = Capture.HOSTILE if e.get("by") == "hostile" else Capture.NON_HOSTILE
                for p in targets:
                    p.ctx = replace(p.ctx, captured_by=by)
            elif e.kind == "tamper":
                for p in targets:
                    p.tamper.append({"mode": e.get("mode", "flip"), "byte": e.get("byte")})
            elif e.kind == "maintenance":
                add = tuple(ForbiddenClause.parse(c) for c in (e.get("add") or "").split())
                for p in targets:
                    p.maintenance = MaintenanceUpdate(int(e.get("version")), add)
            elif e.kind == "notice":
                src = self.world.get(int(e.get("from"))).ref
                for p in targets:
                    self.send(CeasefireNotice(int(e.get("tick"))), src, p.ref)
            elif e.kind == "inject":
                src = self.world.get(int(e.get("from"))).ref
                for p in targets:
                    self.send(KeyTransfer(self._forged_key(p, int(e.get("target")), e.get("byte"))), src, p.ref)

    def _event_platforms(self, e) -> list[WeaponPlatform]:
        raw = e.get("platform") or e.get("to")
        if raw is None:
            return []
        if raw == "all":
            return [self.platforms[pid] for pid in sorted(self.platforms)]
        return [self.platforms[int(pid)] for pid in raw.replace(",", " ").split()]

    def _forged_key(self, p: WeaponPlatform, target: int, byte) -> bytes:
        """A plausible hostile key for ``target`` with one byte corrupted in transit."""
        ref = self.world.get(target).ref
        cv = sense(self.world, p, ref, stream(self.seed, f"forge/{self.clock}"))
        key = CodifiedKey(p.id, p.ref.name, target, ref.name, TargetNature.HOSTILE, self.clock,
                          gate_characteristics(cv, p.ctx.cfg.thresholds), TargetStatus.ACTIVE, CombatRole.COMBATANT,
                          TargetValue(), p.ctx.resources)
        wire = bytearray(encode_key(key))
        pos = int(byte) if byte is not None else len(wire) // 2
        wire[pos % len(wire)] ^= 0xFF
        return bytes(wire)

    # -- messages ---------------------------------------------------------------------------

    def _deliver_due(self) -> None:
        for d in self.router.due(self.clock):
            self.record(d.dst, "message", {"seq": d.seq, "from": d.src.id, "status": "delivered",
                                           **message_to_dict(d.msg)})
            receiver = self.platforms.get(d.dst.id)
            msg = d.msg
            if isinstance(msg, KeyTransfer):
                decoded = receive_key(msg)
                if isinstance(decoded, list):
                    entry = {"from": d.src.id, "to": d.dst.id,
                             "faults": [[f.segment_id, f.fault.label] for f in decoded]}
                    self.quarantines.append(entry)
                    self.record(d.dst, "quarantine", entry)
                elif receiver is not None:
                    receiver.inbox.append(decoded)
                    receiver.received.append(decoded)
            elif receiver is None or receiver.state in ABSORBING_STATES:
                continue
            elif isinstance(msg, SwapProposal):
                self.send(SwapAccept(msg.txn_id), d.dst, d.src)
            elif isinstance(msg, SwapAccept):
                txn = self.txns.get(msg.txn_id)
                if txn is not None:
                    txn.acknowledged = True
            elif isinstance(msg, CeasefireNotice):
                cfg = receiver.ctx.cfg
                if cfg.ceasefire_timetable is None or msg.tick < cfg.ceasefire_timetable:
                    receiver.ctx = replace(receiver.ctx, cfg=replace(cfg, ceasefire_timetable=msg.tick))

    # -- keys -------------------------------------------------------------------------------

    def in_range(self, p: WeaponPlatform, entity_id: int) -> bool:
        return distance(p.position, self.world.get(entity_id).position) <= p.sensor_range

    def observe(self, p: WeaponPlatform, target: int):
        """Sense, gate and classify ``target``; value comes from the mission."""
        cv = sense(self.world, p, self.world.get(target).ref)
        cfg = p.ctx.cfg
        gated = gate_characteristics(cv, cfg.thresholds)
        c = classify_target(gated, cfg)
        c = replace(c, value=cfg.target_values.get(target, c.value))
        return gated, c

    def _issue(self, p: WeaponPlatform, target: int, gated, c: Classification) -> CodifiedKey:
        key = generate_key(p, self.world.get(target).ref, gated, c, self.clock, self.ledger)
        p.last_keyed[target] = self.clock
        return key

    def self_key(self, p: WeaponPlatform) -> CodifiedKey:
        cached = self._self_keys.get((p.id, self.clock))
        if cached is None:
            c = Classification(TargetNature.FRIENDLY, TargetStatus.ACTIVE, CombatRole.COMBATANT)
            cached = generate_key(p, p.ref, self_vector(p.position), c, self.clock, self.ledger)
            self._self_keys[(p.id, self.clock)] = cached
        return cached

    def with_vicinity(self, p: WeaponPlatform, key: CodifiedKey) -> CodifiedKey:
        nearby = []
        for e in self.world.targets():
            if e.ref.id != key.seg3_target_id and self.in_range(p, e.ref.id) and e.ref.id != p.id:
                nearby.append(self._issue(p, e.ref.id, *self.observe(p, e.ref.id)))
        friends = [self.self_key(q) for qid, q in sorted(self.platforms.items())
                   if qid != p.id and q.state not in ABSORBING_STATES and self.in_range(p, qid)]
        return embed_vicinity(key, nearby, friends)

    def fresh_key(self, p: WeaponPlatform, target: int, vicinity: bool = True) -> CodifiedKey:
        gated, c = self.observe(p, target)
        key = self._issue(p, target, gated, c)
        return self.with_vicinity(p, key) if vicinity else key

    def _tampered(self, p: WeaponPlatform, key: CodifiedKey, wire: bytes) -> bytes:
        order = p.tamper.pop(0)
        mode = order["mode"]
        if mode == "stale":
            forged = replace(key, seg6_timestamp=max(0, self.clock - p.ctx.staleness_limit - 1))
            wire = encode_key(forged)
        elif mode == "range":
            wire = encode_key(replace(key, seg5_nature=9))
        else:
            buf = bytearray(wire)
            pos = int(order["byte"]) if order.get("byte") is not None else len(buf) // 2
            buf[pos % len(buf)] ^= 0xFF
            wire = bytes(buf)
        self.record(p.ref, "tamper", {"mode": mode, "key": list(key.triple)})
        return wire

    # -- the switch pipeline ---------------------------------------------------------------

    def process_key(self, p: WeaponPlatform, key: CodifiedKey, role: str) -> str:
        """Record, replicate and evaluate one key; apply whatever it dispatches."""
        if p.clash is not None:
            p.clash.resolved_by = key.triple
            self.record(p.ref, "clash-resolved", {"clash": list(p.clash.key_triple), "resolved_by": list(key.triple)})
            p.clash = None
        self.record(p.ref, "key", key_record(key, role))
        wire = encode_key(key)
        if p.tamper:
            wire = self._tampered(p, key, wire)
        decoded = decode_key(wire)
        bus_key = decoded if isinstance(decoded, CodifiedKey) else None
        receipt = replicate_key(bus_key or key)
        self.record(p.ref, "replicate", {"key": list(receipt.key_triple),
                                         "deliveries": [dest for dest, _ in receipt.deliveries],
                                         "intact": bus_key is not None})
        target = key.seg3_target_id
        windows = dict(p.ctx.evidence_windows)
        if bus_key is not None:
            n = p.ctx.cfg.thresholds.gotcha_window
            windows[target] = (windows.get(target, ()) + (bus_key.seg7_characteristics,))[-n:]
        ctx = replace(p.ctx, evidence_windows=windows, position=p.position, clock=self.clock)
        self.record(p.ref, "context", {"key": list(key.triple), "ctx": ctx.to_dict(only_target=target)})
        _, invs = collect_from_wire(wire, ctx, key.triple)
        self.record(p.ref, "invocations", {"key": list(key.triple), "wire": wire, "rules": [int(i.rule) for i in invs]})
        result = dispatch(invs, ctx)
        if isinstance(result, KeyClash):
            self.record(p.ref, "dispatch", {"key": list(key.triple), "outcome": "clash", "action": None})
            self._clash(p, result.invocations)
            return "clash"
        valid = bus_key is not None and not verify_key(bus_key, self.clock, ctx.staleness_limit)
        if valid:
            p.ctx = replace(p.ctx, evidence_windows=windows)
            p.latest_keys[target] = bus_key
        if not isinstance(result, ActionDispatched):
            self.record(p.ref, "dispatch", {"key": list(key.triple), "outcome": "no-match", "action": None})
            self._lapse_latch(p, bus_key, valid)
            return "no-match"
        action = self._new_action(p, result.action)
        self.record(p.ref, "dispatch", {"key": list(key.triple), "outcome": "dispatched", "action": action.action_id})
        outcome = self._apply(p, action, bus_key)
        self._lapse_latch(p, bus_key, valid)
        return outcome

    def _lapse_latch(self, p: WeaponPlatform, key, valid: bool) -> None:
        if not valid:
            return
        t = key.seg3_target_id
        if t in p.ctx.surrender_latch and not surrendering(key) and key.seg5_nature == TargetNature.HOSTILE:
            p.ctx = replace(p.ctx, surrender_latch=p.ctx.surrender_latch - {t})
            self.record(p.ref, "latch", {"target": t, "latched": False})

    def _clash(self, p: WeaponPlatform, invs) -> None:
        proposals = []
        for inv in invs:
            action = self._new_action(p, inv.proposed)
            proposals.append(replace(inv, proposed=action))
        record, pending = handle_clash(proposals, p.ctx.pending)
        for a in record.nullified:
            self.actions[a.action_id] = a
            self._log_action(p, a)
        if pending is not None and pending.state == ActionState.NULLIFIED:
            self._stop_engagement(p)
            p.ctx = replace(p.ctx, pending=None, pending_nature=None)
        p.clash = record
        self.clashes.append((p.id, record))
        self.record(p.ref, "clash", record.to_dict())
        self._set_state(p, PlatformState.ACQUIRING, "key clash")

    def _stop_engagement(self, p: WeaponPlatform) -> None:
        if p.engagement_id is not None:
            self.world.cancel(p.engagement_id)
            self.record(p.ref, "launch-cancelled", {"engagement": p.engagement_id})
        p.engagement_id = None
        p.ctx = replace(p.ctx, engagement_in_flight=None)

    def _drop_pending(self, p: WeaponPlatform, only_invoked: bool = False) -> None:
        a = p.ctx.pending
        if a is not None and a.state in OPEN_STATES and not (only_invoked and a.state != ActionState.INVOKED):
            self._advance(p, self.actions[a.action_id], ActionState.CANCELLED)
            if a.state == ActionState.EXECUTING:
                self._stop_engagement(p)
            p.ctx = replace(p.ctx, pending=None, pending_nature=None)

    def _resolve(self, p: WeaponPlatform, target: int, outcome: str) -> None:
        if target not in p.resolved:
            p.resolved[target] = outcome
            self.record(p.ref, "resolved", {"target": target, "outcome": outcome})

    def _apply(self, p: WeaponPlatform, action: Action, key: CodifiedKey | None) -> str:
        kind = action.kind
        if kind in LETHAL_KINDS or kind == ActionKind.OPERATOR_REFERRAL:
            if kind == ActionKind.OPERATOR_REFERRAL:
                decision = resolve_referral(action, self.policy)
                self.referrals.append(decision)
                self.record(p.ref, "referral", {"action": action.action_id, "key": list(action.caused_by[1]),
                                                "target": action.target, "decision": decision.label})
                if decision == Decision.DENY:
                    self._advance(p, action, ActionState.CANCELLED)
                    self._resolve(p, action.target, "denied")
                    self._set_state(p, PlatformState.SEARCHING, "referral denied")
                    return "denied"
            p.ctx = replace(p.ctx, pending=action, pending_nature=key.seg5_nature)
            p.target = action.target
            p.pre_key = key
            self._set_state(p, PlatformState.ENGAGING, kind.label)
            return "engage"
        # non-lethal actions run to completion at once
        action = self._advance(p, action, ActionState.EXECUTING)
        self._advance(p, action, ActionState.EXECUTED)
        target = key.seg3_target_id if key is not None else action.caused_by[1][1]
        if kind == ActionKind.BLOCK:
            # an undetermined sighting is blocked but looked at again later
            if target in p.assigned and key is not None:
                if key.seg8_status == TargetStatus.NEUTRALIZED:
                    self._resolve(p, target, "neutralized")
                elif key.seg5_nature != TargetNature.UNDETERMINED:
                    self._resolve(p, target, "blocked")
            self._set_state(p, PlatformState.SEARCHING, "blocked")
        elif kind == ActionKind.TRACK_ONLY:
            p.ctx = replace(p.ctx, surrender_latch=p.ctx.surrender_latch | {target})
            self.record(p.ref, "latch", {"target": target, "latched": True})
            self._set_state(p, PlatformState.SEARCHING, "tracking surrendered target")
        elif kind == ActionKind.DISARM:
            self._drop_pending(p)
            p.ctx = replace(p.ctx, resources=p.ctx.resources.disarmed())
            self._record_state(p, "disarmed")
            self._set_state(p, PlatformState.DISARMED, "disarmed")
        elif kind == ActionKind.SELF_DESTRUCT:
            self._drop_pending(p)
            self.world.get(p.id).alive = False
            self._set_state(p, PlatformState.DESTROYED, "self-destruct")
        elif kind == ActionKind.ABORT_ENGAGEMENT:
            self._drop_pending(p)
            if not surrendering(key):
                self._resolve(p, target, "aborted")
            self._set_state(p, PlatformState.LEARNING, "engagement aborted")
        elif kind == ActionKind.DEACTIVATE:
            self._drop_pending(p)
            self._set_state(p, PlatformState.DEACTIVATED, "cease-fire")
        elif kind == ActionKind.MALFUNCTION_LOCKOUT:
            self._drop_pending(p, only_invoked=True)
            if p.ctx.pending is None or p.ctx.pending.state not in OPEN_STATES:
                self._set_state(p, PlatformState.SEARCHING, "malfunction lockout")
        elif kind == ActionKind.CANCEL_PENDING:
            self._drop_pending(p, only_invoked=True)
            self._set_state(p, PlatformState.ACQUIRING, "pending action cancelled")
        return kind.label

    # -- swaps -------------------------------------------------------------------------------

    def _advance_swaps(self) -> None:
        for tid in sorted(self.txns):
            txn = self.txns[tid]
            if txn.terminal:
                continue
            before = txn.phase
            txn = advance_swap(txn, self.world, self.clock, self.scenario.swap_timeout)
            self.txns[tid] = txn
            actor = self.platforms[txn.initiator].ref
            held = txn.custody[-1][1]
            self.record(actor, "custody", {"txn": tid, "phase": txn.phase.label,
                                           "violations": len(custody_violations(txn)),
                                           "custody": {str(t): sorted(h) for t, h in sorted(held.items())}})
            if txn.phase != before:
                self.record(actor, "swap", txn.to_dict())
            if txn.phase == SwapPhase.COMPLETE:
                self._finish_swap(txn)

    def _finish_swap(self, txn) -> None:
        acceptor = self.platforms[txn.acceptor]
        initiator = self.platforms[txn.initiator]
        targets = frozenset(txn.target_ids)
        acceptor.assigned |= targets
        cfg = acceptor.ctx.cfg
        acceptor.ctx = replace(acceptor.ctx, cfg=replace(cfg, preplanned_targets=cfg.preplanned_targets | targets))
        for t in sorted(targets):
            acceptor.resolved.pop(t, None)
        if acceptor.state == PlatformState.MISSION_COMPLETE:
            self._set_state(acceptor, PlatformState.MAINTENANCE, "reactivated for swap")
        self.send(SwapComplete(txn.id), initiator.ref, acceptor.ref)

    def start_handoff(self, p: WeaponPlatform, req: HandoffRequest) -> None:
        candidates = request_collaboration(req, self.world, self.platforms)
        self.record(p.ref, "handoff", {"munition": req.munition, "targets": list(req.targets),
                                       "candidates": candidates})
        if not candidates:
            return
        tid = len(self.txns) + 1
        payloads = [(k.seg3_target_id, encode_key(k)) for k in req.keys]
        txn = initiate_swap(p.id, candidates[0], payloads, self.world, self.platforms, txn_id=tid, now=self.clock,
                            mode=self.swap_mode)
        self.txns[tid] = txn
        p.txn = tid
        self.record(p.ref, "swap", txn.to_dict())
        if txn.phase == SwapPhase.ABORTED:
            return
        acceptor = self.platforms[txn.acceptor].ref
        self.send(SwapProposal(tid, txn.target_ids), p.ref, acceptor)
        recipients = [acceptor] + ([self.platforms[txn.extra_tracker].ref] if txn.extra_tracker else [])
        for dst in recipients:
            for _, payload in payloads:
                self.send(KeyTransfer(payload), p.ref, dst)

    # -- summaries ---------------------------------------------------------------------------

    def _candidates(self, p: WeaponPlatform) -> list[int]:
        """Targets worth keying next: unresolved assigned ones, then latched ones."""
        for group in (p.unresolved(), sorted(p.ctx.surrender_latch)):
            found = [t for t in group if t in self.world.entities and self.in_range(p, t)]
            if found:
                return sorted(found, key=lambda t: (p.last_keyed.get(t, -1),
                                                    distance(p.position, self.world.get(t).position), t))
        return []

    def summary(self) -> dict:
        decisions = {"Approve": 0, "Deny": 0}
        for d in self.referrals:
            decisions[d.label] += 1
        return canonical({
            "tick": self.clock,
            "platforms": {str(pid): {"state": p.state.label, "munitions": [[k, c] for k, c in p.ctx.resources.weapons]}
                          for pid, p in sorted(self.platforms.items())},
            "entities": {str(eid): {"position": list(e.position), "alive": e.alive, "status": int(e.status)}
                         for eid, e in sorted(self.world.entities.items())},
            "actions": {str(aid): {"kind": a.kind.label, "state": a.state.label, "target": a.target}
                        for aid, a in sorted(self.actions.items())},
            "clashes": len(self.clashes),
            "quarantines": len(self.quarantines),
            "referrals": decisions,
            "swaps": {str(tid): {"phase": t.phase.label, "violations": len(custody_violations(t))}
                      for tid, t in sorted(self.txns.items())},
        })

    def report(self) -> dict:
        return compliance_report(self.summary(), self.scenario.name, self.seed)


def compliance_report(summary: dict, name: str = "", seed: int = 0) -> dict:
    actions = summary["actions"].values()

    def count(kind, state=None):
        return sum(1 for a in actions if a["kind"] == kind and (state is None or a["state"] == state))

    engaging = {k.label for k in ENGAGING_KINDS}
    executed: dict[str, int] = {}
    for a in actions:
        if a["kind"] in engaging and a["state"] == "Executed":
            executed[str(a["target"])] = executed.get(str(a["target"]), 0) + 1
    return {
        "scenario": name,
        "seed": seed,
        "ticks": summary["tick"],
        "blocks": count("Block"),
        "clashes": summary["clashes"],
        "aborts": count("AbortEngagement"),
        "lockouts": count("MalfunctionLockout"),
        "deactivations": count("Deactivate"),
        "track_only": count("TrackOnly"),
        "referrals": {"total": count("OperatorReferral"), **summary["referrals"]},
        "attacks_dispatched": sum(count(k) for k in sorted(engaging)),
        "attacks_executed": dict(sorted(executed.items(), key=lambda kv: int(kv[0]))),
        "custody_violations": sum(s["violations"] for s in summary["swaps"].values()),
        "quarantines": summary["quarantines"],
        "platforms": {pid: p["state"] for pid, p in summary["platforms"].items()},
    }


# -- the platform state machine -------------------------------------------------------------

def _needs_status_key(p: WeaponPlatform, sim: Simulation) -> bool:
    ctx = p.ctx
    return (ceasefire_in_effect(sim.clock, ctx.cfg) or ctx.mobility == Mobility.FAILED
            or ctx.captured_by != Capture.NONE)


def _status_key(p: WeaponPlatform, sim: Simulation) -> None:
    if p.target is not None and p.target in sim.world.entities and sim.in_range(p, p.target):
        key = sim.fresh_key(p, p.target)
    else:
        key = sim.with_vicinity(p, sim.self_key(p))
    sim.process_key(p, key, "status")


def _search(p, sim):
    found = sim._candidates(p)
    if not found:
        if p.assigned:
            verdict = complete_or_handoff(p)
            if verdict == PlatformState.MISSION_COMPLETE:
                sim._set_state(p, PlatformState.MISSION_COMPLETE, "all assigned targets resolved")
            elif isinstance(verdict, HandoffRequest):
                sim._set_state(p, PlatformState.HANDOFF, "no feasible response")
        return
    p.target = found[0]
    sim._set_state(p, PlatformState.ACQUIRING, f"target {p.target}")


def _acquire(p, sim):
    if p.target is None or not sim.in_range(p, p.target):
        sim._set_state(p, PlatformState.SEARCHING, "target out of range")
        return
    p.acquired = sim.observe(p, p.target)
    sim._set_state(p, PlatformState.CLASSIFYING, "target acquired")


def _classify(p, sim):
    if p.acquired is None:
        sim._set_state(p, PlatformState.ACQUIRING, "nothing acquired")
        return
    gated, c = p.acquired
    p.acquired = None
    key = sim.with_vicinity(p, sim._issue(p, p.target, gated, c))
    outcome = sim.process_key(p, key, "classify")
    if outcome != "no-match":
        return
    target = p.target
    if (target in p.assigned and key.seg5_nature == TargetNature.HOSTILE
            and isinstance(complete_or_handoff(p), HandoffRequest)
            and target in complete_or_handoff(p).targets):
        sim._set_state(p, PlatformState.HANDOFF, "no feasible response")
    else:
        sim._set_state(p, PlatformState.SEARCHING, "no rule invoked")


def _engage(p, sim):
    a = p.ctx.pending
    if a is None or a.state not in OPEN_STATES:
        sim._set_state(p, PlatformState.SEARCHING, "nothing to engage")
        return
    if a.state == ActionState.INVOKED:
        # release confirmation: the action may still be switched off before launch
        outcome = sim.process_key(p, sim.fresh_key(p, a.target), "confirm")
        current = p.ctx.pending
        if outcome != "no-match" or current is None or current.action_id != a.action_id:
            return
        if p.ctx.resources.count(a.munition) == 0:
            sim._drop_pending(p)
            sim._set_state(p, PlatformState.HANDOFF, "munition exhausted")
            return
        p.ctx = replace(p.ctx, resources=p.ctx.resources.fire(a.munition))
        executing = sim._advance(p, sim.actions[a.action_id], ActionState.EXECUTING)
        eng = sim.world.launch(p.id, a.target, a.munition)
        p.engagement_id = eng.id
        p.ctx = replace(p.ctx, pending=executing, engagement_in_flight=(a.target, a.munition))
        sim.record(p.ref, "launch", {"engagement": eng.id, "action": a.action_id, "target": a.target,
                                     "munition": a.munition, "impact": eng.impact})
        sim._record_state(p, "munition fired")
        p.engage_turn = 0
        return
    eng = sim.world.engagements.get(p.engagement_id)
    if eng is not None and eng.resolved:
        done = sim._advance(p, sim.actions[a.action_id], ActionState.EXECUTED)
        p.ctx = replace(p.ctx, pending=done, engagement_in_flight=None)
        p.engagement_id = None
        p.bda_retry = False
        sim._set_state(p, PlatformState.ASSESSING, f"impact: {eng.outcome}")
        return
    # munition in flight: keep keys flowing, mostly on the engaged target
    turn = p.engage_turn
    p.engage_turn += 1
    others = [t for t in sim._candidates(p) if t != a.target]
    target = others[0] if turn % 2 == 1 and others else a.target
    if sim.in_range(p, target):
        sim.process_key(p, sim.fresh_key(p, target), "track")


def _assess(p, sim):
    target = p.target
    gated, c = sim.observe(p, target)
    key = sim._issue(p, target, gated, c)
    sim.record(p.ref, "key", key_record(key, "bda"))
    verdict = battle_damage_assessment(p.pre_key, key)
    sim.record(p.ref, "bda", {"key": list(key.triple), "verdict": verdict.label})
    if verdict == BdaVerdict.NEUTRALIZED:
        p.latest_keys[target] = key
        sim._resolve(p, target, "neutralized")
        sim._set_state(p, PlatformState.LEARNING, "target neutralized")
    elif verdict == BdaVerdict.STILL_HOSTILE:
        p.latest_keys[target] = key
        p.acquired = (gated, c)
        sim._set_state(p, PlatformState.CLASSIFYING, "target still hostile")
    elif not p.bda_retry:
        p.bda_retry = True
    else:
        p.latest_keys[target] = key
        p.forced_handoff.add(target)
        sim._set_state(p, PlatformState.HANDOFF, "assessment inconclusive")


def _learn(p, sim):
    n = p.ctx.cfg.thresholds.gotcha_window
    windows = dict(p.ctx.evidence_windows)
    drained = 0
    for key in p.inbox:
        for k in (key,) + key.seg_vicinity_targets:
            if not verify_key(k, sim.clock, p.ctx.staleness_limit):
                windows[k.seg3_target_id] = (windows.get(k.seg3_target_id, ()) + (k.seg7_characteristics,))[-n:]
                drained += 1
    p.inbox.clear()
    p.ctx = replace(p.ctx, evidence_windows=windows)
    sim.record(p.ref, "learning", {"vectors": drained})
    verdict = complete_or_handoff(p)
    if verdict == PlatformState.MISSION_COMPLETE:
        sim._set_state(p, PlatformState.MISSION_COMPLETE, "all assigned targets resolved")
    elif isinstance(verdict, HandoffRequest):
        sim._set_state(p, PlatformState.HANDOFF, "no feasible response")
    else:
        sim._set_state(p, PlatformState.SEARCHING, "next target")


def _handoff(p, sim):
    if p.txn is not None:
        txn = sim.txns[p.txn]
        if not txn.terminal:
            return
        p.txn = None
        if txn.phase == SwapPhase.COMPLETE:
            for t in txn.target_ids:
                sim._resolve(p, t, "handed-off")
        else:
            p.handoff_failed |= set(txn.target_ids)
        p.forced_handoff -= set(txn.target_ids)
    for t in p.unresolved():
        if sim.in_range(p, t) and p.last_keyed.get(t) != sim.clock:
            key = sim.fresh_key(p, t, vicinity=False)
            sim.record(p.ref, "key", key_record(key, "handoff"))
            p.latest_keys[t] = key
    verdict = complete_or_handoff(p)
    if verdict == PlatformState.MISSION_COMPLETE:
        sim._set_state(p, PlatformState.MISSION_COMPLETE, "all assigned targets resolved")
    elif verdict is None:
        sim._set_state(p, PlatformState.SEARCHING, "nothing to hand off")
    else:
        sim.start_handoff(p, verdict)


def _maintain(p, sim):
    update = p.maintenance
    p.maintenance = None
    if update is None:
        sim._set_state(p, PlatformState.SEARCHING, "reactivated")
        return
    before = p.ctx.cfg
    try:
        maintenance_update(p, update.version, update.add, update.thresholds)
    except VersionSkew as exc:
        sim.record(p.ref, "maintenance-rejected", {"reason": str(exc)})
        sim._set_state(p, PlatformState.SEARCHING, "update rejected")
        return
    sim.record(p.ref, "maintenance", {"from": before.ruleset_version, "to": p.ctx.cfg.ruleset_version,
                                      "added": [str(c) for c in update.add]})
    sim._record_state(p, "maintenance complete")


_HANDLERS = {
    PlatformState.INACTIVE: lambda p, sim: sim._set_state(p, PlatformState.SEARCHING, "activated"),
    PlatformState.SEARCHING: _search,
    PlatformState.ACQUIRING: _acquire,
    PlatformState.CLASSIFYING: _classify,
    PlatformState.ENGAGING: _engage,
    PlatformState.ASSESSING: _assess,
    PlatformState.HANDOFF: _handoff,
    PlatformState.LEARNING: _learn,
    PlatformState.MAINTENANCE: _maintain,
}


def tick_platform(p: WeaponPlatform, sim: Simulation):
    """One state-machine step for ``p``; returns the platform and the records it produced."""
    start = len(sim.log)
    if p.state in ABSORBING_STATES:
        return p, []
    if p.maintenance is not None and p.state in (PlatformState.SEARCHING, PlatformState.MISSION_COMPLETE):
        sim._set_state(p, PlatformState.MAINTENANCE, "servicing")
    idle = p.state == PlatformState.MISSION_COMPLETE
    if idle and not ceasefire_in_effect(sim.clock, p.ctx.cfg):
        return p, []
    if _needs_status_key(p, sim) and p.state != PlatformState.MAINTENANCE:
        _status_key(p, sim)
    else:
        _HANDLERS[p.state](p, sim)
    return p, list(sim.log.records[start:])


def run_scenario(scenario, **options) -> Simulation:
    sim = Simulation(scenario, **options)
    sim.run()
    return sim


__all__ = ["Simulation", "build_world", "compliance_report", "run_scenario", "tick_platform"]
