"""Post-hoc audit of a finished black-box log.

Everything here is recomputed from the records alone: switch invocations are
re-collected from the logged wire bytes and context snapshots, and the action
lifecycles, key uniqueness and terminal absorption are re-checked.
"""

from __future__ import annotations

from dataclasses import dataclass

from .blackbox import CorruptLog, check_density, thaw
from .codec import decode_key
from .domain import CombatRole
from .keys import CodifiedKey
from .switch import LETHAL_KINDS, TRANSITIONS, ActionState, PlatformContext, collect_from_wire

_ABSORBING = {"Disarmed", "Destroyed", "Deactivated"}
_EMITTING = {"key", "action", "invocations", "dispatch", "launch"}
_LETHAL_LABELS = {k.label for k in LETHAL_KINDS}


@dataclass(frozen=True)
class Violation:
    seq: int
    check: str
    detail: str

    def __str__(self) -> str:
        return f"seq {self.seq}: {self.check}: {self.detail}"


def verify_log(log) -> list[Violation]:
    records = list(log)
    try:
        check_density(records)
    except CorruptLog as exc:
        return [Violation(-1, "density", str(exc))]
    out: list[Violation] = []
    contexts: dict[tuple, dict] = {}
    invoked: dict[tuple, list[int]] = {}
    wires: dict[tuple, bytes] = {}
    lifecycles: dict[int, list[str]] = {}
    triples: set[tuple] = set()
    absorbed: dict[int, int] = {}

    for r in records:
        p = thaw(r.payload)
        actor = r.actor.id
        if actor in absorbed and (r.kind in _EMITTING or (r.kind == "message" and p.get("status") != "delivered")):
            out.append(Violation(r.seq, "terminal-absorption",
                                 f"platform {actor} emitted {r.kind} after becoming terminal"))
        if r.kind == "state" and p["state"] in _ABSORBING:
            absorbed.setdefault(actor, r.seq)
        elif r.kind == "key":
            key = decode_key(p["key"])
            if isinstance(key, CodifiedKey):
                if key.triple in triples:
                    out.append(Violation(r.seq, "key-uniqueness", f"triple {key.triple} recorded twice"))
                triples.add(key.triple)
        elif r.kind == "context":
            contexts[(actor, tuple(p["key"]))] = p["ctx"]
        elif r.kind == "invocations":
            triple = tuple(p["key"])
            ctx = contexts.get((actor, triple))
            if ctx is None:
                out.append(Violation(r.seq, "audit", f"no context snapshot for key {triple}"))
                continue
            _, invs = collect_from_wire(p["wire"], PlatformContext.from_dict(ctx), triple)
            rules = [int(i.rule) for i in invs]
            if rules != p["rules"]:
                out.append(Violation(r.seq, "rule-recompute", f"logged {p['rules']}, recomputed {rules}"))
            invoked[(actor, triple)] = p["rules"]
            wires[(actor, triple)] = p["wire"]
            decoded = decode_key(p["wire"])
            if isinstance(decoded, CodifiedKey) and decoded.triple != triple:
                # a replayed key acts under its own triple
                contexts[(actor, decoded.triple)] = ctx
                invoked[(actor, decoded.triple)] = p["rules"]
                wires[(actor, decoded.triple)] = p["wire"]
        elif r.kind == "dispatch":
            triple = tuple(p["key"])
            rules = invoked.get((actor, triple), [])
            expected = "dispatched" if len(rules) == 1 else "clash" if rules else "no-match"
            if p["outcome"] != expected:
                out.append(Violation(r.seq, "single-dispatch",
                                     f"{len(rules)} invocations but outcome {p['outcome']}"))
        elif r.kind == "action":
            a = p["action"]
            history = lifecycles.setdefault(a["id"], [])
            state = p["state"]
            if not history:
                if state != "Invoked":
                    out.append(Violation(r.seq, "lifecycle", f"action {a['id']} starts in {state}"))
                elif p["kind"] in _LETHAL_LABELS:
                    out.extend(_lethal_checks(r.seq, a, contexts.get((actor, tuple(a["key"]))),
                                              wires.get((actor, tuple(a["key"]))), invoked.get((actor, tuple(a["key"])))))
            else:
                previous = ActionState.parse(history[-1])
                if ActionState.parse(state) not in TRANSITIONS[previous]:
                    out.append(Violation(r.seq, "lifecycle", f"action {a['id']} {history[-1]} -> {state}"))
            if state in history:
                out.append(Violation(r.seq, "lifecycle", f"action {a['id']} entered {state} twice"))
            history.append(state)
    return out


def _lethal_checks(seq, action, ctx, wire, rules) -> list[Violation]:
    """A lethal action may only come from a single-rule dispatch of a safe key."""
    if ctx is None or wire is None:
        return [Violation(seq, "audit", f"lethal action {action['id']} has no recorded key")]
    if rules is not None and len(rules) > 1:
        return []  # proposed under a clash; nullified, never dispatched
    key = decode_key(wire)
    if not isinstance(key, CodifiedKey):
        return [Violation(seq, "tamper", f"lethal action {action['id']} from an undecodable key")]
    out = []
    if key.seg9_role == CombatRole.NON_COMBATANT:
        out.append(Violation(seq, "non-combatant", f"lethal action {action['id']} on a non-combatant"))
    if key.seg3_target_id in ctx["surrender_latch"]:
        out.append(Violation(seq, "surrender-latch", f"lethal action {action['id']} on a latched target"))
    ceasefire = ctx["cfg"]["ceasefire_timetable"]
    if ceasefire is not None and key.seg6_timestamp >= ceasefire:
        out.append(Violation(seq, "ceasefire", f"lethal action {action['id']} at or after cease-fire"))
    return out


def lethal_dispatches(log) -> list[dict]:
    """Every lethal action that was dispatched (not merely proposed in a clash)."""
    out = []
    clashed = {(r.actor.id, tuple(r.payload["key"])) for r in log
               if r.kind == "dispatch" and r.payload["outcome"] == "clash"}
    for r in log:
        if r.kind == "action" and r.payload["state"] == "Invoked" and r.payload["kind"] in _LETHAL_LABELS:
            a = thaw(r.payload["action"])
            if (r.actor.id, tuple(a["key"])) not in clashed:
                out.append({"tick": r.tick, "platform": r.actor.id, "kind": r.payload["kind"], **a})
    return out


__all__ = ["Violation", "verify_log", "lethal_dispatches"]
