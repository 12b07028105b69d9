"""The switching system: key replication, the fourteen rule predicates and
single-rule dispatch.

Every rule reads the same small set of derived facts about a key and the
platform's context (see ``_Facts``).  The conjuncts each rule needs are
listed next to it in ``_RULES``; overlaps between rules are deliberately not
arbitrated here and surface as a key clash in ``dispatch``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping

from .codec import DEFAULT_STALENESS_LIMIT, decode_key, verify_key
from .domain import (
    Activity,
    Acoustics,
    CharacteristicVector,
    Classification,
    CombatRole,
    MissionConfig,
    ResourceState,
    TargetNature,
    _Labelled,
    classify_target,
    hostility_score,
    is_forbidden,
    select_response,
)
from .keys import CodifiedKey

DEFAULT_SAFETY_RADIUS = 10.0


class SwitchRuleId(_Labelled, enum.IntEnum):
    PREPROGRAMMED_ATTACK = 1
    NOT_FORBIDDEN = 2
    FORBIDDEN = 3
    ATTACK_AGGRESSOR = 4
    DISARMAMENT = 5
    SELF_DESTRUCT_MOBILITY = 6
    SELF_DESTRUCT_CAPTURE = 7
    TARGET_SURRENDERED = 8
    GOTCHA = 9
    MISTAKEN_ABORT = 10
    CESSATION = 11
    IMPOSSIBLE_ABORT = 12
    BYPASS = 13
    OVERRIDE = 14


class ActionKind(_Labelled, enum.IntEnum):
    PRE_PROGRAMMED_ATTACK = 0
    OPERATOR_REFERRAL = 1
    BLOCK = 2
    COUNTER_ATTACK = 3
    DISARM = 4
    SELF_DESTRUCT = 5
    TRACK_ONLY = 6
    GOTCHA_ATTACK = 7
    ABORT_ENGAGEMENT = 8
    DEACTIVATE = 9
    MALFUNCTION_LOCKOUT = 10
    NOTED = 11
    CANCEL_PENDING = 12


LETHAL_KINDS = frozenset({ActionKind.PRE_PROGRAMMED_ATTACK, ActionKind.COUNTER_ATTACK, ActionKind.GOTCHA_ATTACK})
# a referral carries a munition and may end in an operator-executed attack
ENGAGING_KINDS = LETHAL_KINDS | {ActionKind.OPERATOR_REFERRAL}


class ActionState(_Labelled, enum.IntEnum):
    INVOKED = 0
    EXECUTING = 1
    EXECUTED = 2
    NULLIFIED = 3
    CANCELLED = 4


TRANSITIONS = {
    ActionState.INVOKED: frozenset({ActionState.EXECUTING, ActionState.NULLIFIED, ActionState.CANCELLED}),
    ActionState.EXECUTING: frozenset({ActionState.EXECUTED, ActionState.CANCELLED, ActionState.NULLIFIED}),
    ActionState.EXECUTED: frozenset(),
    ActionState.NULLIFIED: frozenset(),
    ActionState.CANCELLED: frozenset(),
}
OPEN_STATES = frozenset({ActionState.INVOKED, ActionState.EXECUTING})


class IllegalTransition(Exception):
    pass


class Mobility(_Labelled, enum.IntEnum):
    OPERATIONAL = 0
    FAILED = 1


class Capture(_Labelled, enum.IntEnum):
    NONE = 0
    HOSTILE = 1
    NON_HOSTILE = 2


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    target: int | None
    munition: str | None
    state: ActionState
    caused_by: tuple[SwitchRuleId, tuple[int, int, int]]
    action_id: int = 0

    def __post_init__(self):
        if self.kind in ENGAGING_KINDS and (self.target is None or self.munition is None):
            raise ValueError(f"{self.kind.label} must carry a target and a munition")

    @property
    def lethal(self) -> bool:
        return self.kind in LETHAL_KINDS

    def advance(self, state: ActionState) -> Action:
        if state not in TRANSITIONS[self.state]:
            raise IllegalTransition(f"action {self.action_id}: {self.state.label} -> {state.label}")
        return replace(self, state=state)

    def to_dict(self) -> dict:
        rule, triple = self.caused_by
        return {"id": self.action_id, "kind": int(self.kind), "target": self.target, "munition": self.munition,
                "state": int(self.state), "rule": int(rule), "key": list(triple)}

    @classmethod
    def from_dict(cls, data: Mapping) -> Action:
        return cls(ActionKind(data["kind"]), data["target"], data["munition"], ActionState(data["state"]),
                   (SwitchRuleId(data["rule"]), tuple(data["key"])), int(data["id"]))


@dataclass(frozen=True)
class Invocation:
    rule: SwitchRuleId
    key_triple: tuple[int, int, int]
    proposed: Action


@dataclass(frozen=True)
class PlatformContext:
    mobility: Mobility
    captured_by: Capture
    pending: Action | None
    surrender_latch: frozenset[int]
    engagement_in_flight: tuple[int, str] | None
    clock: int
    cfg: MissionConfig
    resources: ResourceState
    evidence_windows: Mapping[int, tuple[CharacteristicVector, ...]] = field(default_factory=dict)
    pending_nature: TargetNature | None = None
    position: tuple[float, float] = (0.0, 0.0)
    safety_radius: float = DEFAULT_SAFETY_RADIUS
    staleness_limit: int = DEFAULT_STALENESS_LIMIT

    __hash__ = None

    def to_dict(self, only_target: int | None = None) -> dict:
        windows = self.evidence_windows
        if only_target is not None:
            windows = {only_target: windows[only_target]} if only_target in windows else {}
        return {
            "mobility": int(self.mobility),
            "captured_by": int(self.captured_by),
            "pending": self.pending.to_dict() if self.pending else None,
            "surrender_latch": sorted(self.surrender_latch),
            "engagement_in_flight": list(self.engagement_in_flight) if self.engagement_in_flight else None,
            "clock": self.clock,
            "cfg": self.cfg.to_dict(),
            "resources": self.resources.to_dict(),
            "evidence_windows": {str(t): [cv.to_dict() for cv in w] for t, w in sorted(windows.items())},
            "pending_nature": None if self.pending_nature is None else int(self.pending_nature),
            "position": list(self.position),
            "safety_radius": self.safety_radius,
            "staleness_limit": self.staleness_limit,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> PlatformContext:
        return cls(
            mobility=Mobility(data["mobility"]),
            captured_by=Capture(data["captured_by"]),
            pending=Action.from_dict(data["pending"]) if data["pending"] else None,
            surrender_latch=frozenset(data["surrender_latch"]),
            engagement_in_flight=tuple(data["engagement_in_flight"]) if data["engagement_in_flight"] else None,
            clock=int(data["clock"]),
            cfg=MissionConfig.from_dict(data["cfg"]),
            resources=ResourceState.from_dict(data["resources"]),
            evidence_windows={int(t): tuple(CharacteristicVector.from_dict(cv) for cv in w)
                              for t, w in data["evidence_windows"].items()},
            pending_nature=None if data["pending_nature"] is None else TargetNature(data["pending_nature"]),
            position=tuple(data["position"]),
            safety_radius=float(data["safety_radius"]),
            staleness_limit=int(data["staleness_limit"]),
        )


# -- replication --------------------------------------------------------------

COMMAND_DESTINATION = "command"
DESTINATIONS = tuple(f"rule-{r.value}" for r in SwitchRuleId) + (COMMAND_DESTINATION,)


@dataclass(frozen=True)
class ReplicationReceipt:
    key_triple: tuple[int, int, int]
    deliveries: tuple[tuple[str, CodifiedKey], ...]


def replicate_key(k: CodifiedKey) -> ReplicationReceipt:
    """Fan one key out to the fourteen rule modules, then the command module."""
    return ReplicationReceipt(k.triple, tuple((dest, k) for dest in DESTINATIONS))


# -- rule predicates ------------------------------------------------------------

def key_forbidden(k: CodifiedKey, cfg: MissionConfig) -> bool:
    return is_forbidden(k.seg5_nature, k.seg8_status, k.seg9_role, k.seg7_characteristics, cfg.forbidden_criteria)


def surrendering(k: CodifiedKey) -> bool:
    cv = k.seg7_characteristics
    return cv.acoustics.has(Acoustics.SURRENDER) and cv.activity.has(Activity.COMPLYING)


def directed_fire(k: CodifiedKey) -> bool:
    return k.seg7_characteristics.activity.has(Activity.FIRING | Activity.DIRECTED_FIRE)


def non_combatant_nearby(k: CodifiedKey, position, radius: float) -> bool:
    """Any non-combatant (the key's own target or a vicinity target) within ``radius``.

    A non-combatant whose position channel carries no confidence counts as
    nearby.
    """
    candidates = list(k.seg_vicinity_targets)
    if k.seg3_target_id != k.seg1_weapon_id:
        candidates.append(k)
    for other in candidates:
        if other.seg9_role != CombatRole.NON_COMBATANT:
            continue
        pos = other.seg7_characteristics.position
        if pos.confidence == 0.0:
            return True
        if math.dist(pos.values, position) <= radius:
            return True
    return False


@dataclass(frozen=True)
class _Facts:
    valid: bool
    able: bool              # mobility operational and not captured
    ceasefire: bool         # key timestamp at or past the cease-fire timetable
    forbidden: bool
    hostile: bool
    undetermined: bool
    preplanned: bool
    latched: bool
    surrendering: bool
    busy: bool              # a pending action is Invoked or Executing
    pending_same: bool      # ...and it targets this key's target
    in_flight: bool
    nature_changed: bool
    directed_fire: bool
    low_confidence: bool
    window_hostile: bool
    failed: bool
    captured_by: Capture
    non_combatant_nearby: bool
    munition: str | None


def _facts(k: CodifiedKey, ctx: PlatformContext) -> _Facts:
    cfg = ctx.cfg
    target = k.seg3_target_id
    valid = not verify_key(k, ctx.clock, ctx.staleness_limit)
    pending = ctx.pending
    busy = pending is not None and pending.state in OPEN_STATES
    pending_same = busy and pending.target == target
    in_flight = ctx.engagement_in_flight is not None and ctx.engagement_in_flight[0] == target
    munition = None
    confidence = 0.0
    window_hostile = False
    hostile = undetermined = False
    if valid:
        hostile = k.seg5_nature == TargetNature.HOSTILE
        undetermined = k.seg5_nature == TargetNature.UNDETERMINED
        confidence = classify_target(k.seg7_characteristics, cfg).confidence
        as_hostile = Classification(TargetNature.HOSTILE, k.seg8_status, k.seg9_role, k.seg10_value, confidence)
        munition = select_response(as_hostile, cfg, ctx.resources)
        window = ctx.evidence_windows.get(target, ())[-cfg.thresholds.gotcha_window:]
        if len(window) >= cfg.thresholds.gotcha_window:
            window_hostile = hostility_score(window, cfg.thresholds) >= cfg.thresholds.hostility_threshold
    ceasefire = cfg.ceasefire_timetable is not None and k.seg6_timestamp >= cfg.ceasefire_timetable
    return _Facts(
        valid=valid,
        able=ctx.mobility == Mobility.OPERATIONAL and ctx.captured_by == Capture.NONE,
        ceasefire=ceasefire,
        forbidden=valid and key_forbidden(k, cfg),
        hostile=hostile,
        undetermined=undetermined,
        preplanned=target in cfg.preplanned_targets,
        latched=target in ctx.surrender_latch,
        surrendering=valid and surrendering(k),
        busy=busy,
        pending_same=pending_same,
        in_flight=in_flight,
        nature_changed=pending_same and ctx.pending_nature is not None and k.seg5_nature != ctx.pending_nature,
        directed_fire=valid and directed_fire(k),
        low_confidence=confidence < cfg.thresholds.autonomy_confidence,
        window_hostile=window_hostile,
        failed=ctx.mobility == Mobility.FAILED,
        captured_by=ctx.captured_by,
        non_combatant_nearby=non_combatant_nearby(k, ctx.position, ctx.safety_radius),
        munition=munition,
    )


def _engagable(f: _Facts) -> bool:
    # shared guard of the four lethal rules
    return (f.valid and f.able and not f.ceasefire and not f.forbidden and not f.latched
            and not f.surrendering and not f.busy and f.munition is not None)


def _live(f: _Facts) -> bool:
    # guard of the non-lethal key-content rules
    return f.valid and f.able and not f.ceasefire


_RULES = {
    SwitchRuleId.PREPROGRAMMED_ATTACK:
        (ActionKind.PRE_PROGRAMMED_ATTACK, lambda f: _engagable(f) and f.hostile and f.preplanned),
    SwitchRuleId.NOT_FORBIDDEN:
        (ActionKind.OPERATOR_REFERRAL,
         lambda f: _engagable(f) and f.hostile and not f.preplanned and f.low_confidence),
    SwitchRuleId.FORBIDDEN:
        (ActionKind.BLOCK, lambda f: _live(f) and f.forbidden and not f.busy),
    SwitchRuleId.ATTACK_AGGRESSOR:
        (ActionKind.COUNTER_ATTACK, lambda f: _engagable(f) and f.directed_fire),
    SwitchRuleId.DISARMAMENT:
        (ActionKind.DISARM,
         lambda f: f.failed and (f.captured_by == Capture.NON_HOSTILE or f.non_combatant_nearby)),
    SwitchRuleId.SELF_DESTRUCT_MOBILITY:
        (ActionKind.SELF_DESTRUCT,
         lambda f: f.failed and f.captured_by == Capture.NONE and not f.non_combatant_nearby),
    SwitchRuleId.SELF_DESTRUCT_CAPTURE:
        (ActionKind.SELF_DESTRUCT, lambda f: f.captured_by == Capture.HOSTILE),
    SwitchRuleId.TARGET_SURRENDERED:
        (ActionKind.TRACK_ONLY, lambda f: _live(f) and f.surrendering and not f.forbidden and not f.busy),
    SwitchRuleId.GOTCHA:
        (ActionKind.GOTCHA_ATTACK,
         lambda f: _engagable(f) and (f.hostile or f.undetermined) and not f.preplanned and f.window_hostile),
    SwitchRuleId.MISTAKEN_ABORT:
        (ActionKind.ABORT_ENGAGEMENT,
         lambda f: _live(f) and f.in_flight and (not f.hostile or f.forbidden or f.surrendering)),
    SwitchRuleId.CESSATION:
        (ActionKind.DEACTIVATE, lambda f: f.valid and f.able and f.ceasefire),
    SwitchRuleId.IMPOSSIBLE_ABORT:
        (ActionKind.MALFUNCTION_LOCKOUT, lambda f: not f.valid),
    SwitchRuleId.BYPASS:
        (ActionKind.NOTED, lambda f: _live(f) and f.busy and not f.pending_same),
    SwitchRuleId.OVERRIDE:
        (ActionKind.CANCEL_PENDING,
         lambda f: _live(f) and f.pending_same and not f.in_flight
         and (f.nature_changed or f.forbidden or f.surrendering)),
}

_PLATFORM_LEVEL = frozenset({ActionKind.DISARM, ActionKind.SELF_DESTRUCT, ActionKind.DEACTIVATE})


def _invocation(rule: SwitchRuleId, k: CodifiedKey, f: _Facts) -> Invocation | None:
    kind, predicate = _RULES[rule]
    if not predicate(f):
        return None
    target = None if kind in _PLATFORM_LEVEL else k.seg3_target_id
    munition = f.munition if kind in ENGAGING_KINDS else None
    action = Action(kind, target, munition, ActionState.INVOKED, (rule, k.triple))
    return Invocation(rule, k.triple, action)


def evaluate_rule(r: SwitchRuleId, k: CodifiedKey, ctx: PlatformContext) -> Invocation | None:
    return _invocation(SwitchRuleId(r), k, _facts(k, ctx))


def collect_invocations(k: CodifiedKey, ctx: PlatformContext) -> list[Invocation]:
    """Every rule invoked by ``k``, ascending by rule id."""
    facts = _facts(k, ctx)
    found = (_invocation(rule, k, facts) for rule in SwitchRuleId)
    return [inv for inv in found if inv is not None]


# -- dispatch ---------------------------------------------------------------------

@dataclass(frozen=True)
class ActionDispatched:
    action: Action

    @property
    def becomes_pending(self) -> bool:
        return self.action.kind not in (ActionKind.NOTED, ActionKind.BLOCK)


@dataclass(frozen=True)
class KeyClash:
    invocations: tuple[Invocation, ...]


@dataclass(frozen=True)
class NoMatch:
    pass


def dispatch(invs, ctx: PlatformContext | None = None):
    """Exactly one invocation dispatches; more is a key clash; none is a no-op."""
    invs = tuple(invs)
    if len(invs) == 1:
        return ActionDispatched(invs[0].proposed)
    if len(invs) > 1:
        return KeyClash(invs)
    return NoMatch()


def collect_from_wire(data: bytes, ctx: PlatformContext, triple: tuple[int, int, int]):
    """Decode a key off the bus and collect its invocations.

    An undecodable key cannot be trusted for any other rule, so it invokes
    only the malfunction lockout, addressed by the sender's ``triple``.
    """
    decoded = decode_key(data)
    if isinstance(decoded, CodifiedKey):
        return decoded, collect_invocations(decoded, ctx)
    rule = SwitchRuleId.IMPOSSIBLE_ABORT
    action = Action(ActionKind.MALFUNCTION_LOCKOUT, triple[1], None, ActionState.INVOKED, (rule, tuple(triple)))
    return None, [Invocation(rule, tuple(triple), action)]
