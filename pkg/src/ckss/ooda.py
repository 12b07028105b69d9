"""Platform mission state machine types and the pure decisions it relies on.

The per-tick driver lives in ``ckss.sim``; this module holds the platform
record, the battle damage assessment verdict table, the completion/handoff
decision and the maintenance-window update.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

from .collab import HandoffRequest
from .domain import (
    ContractViolation,
    EntityRef,
    ForbiddenClause,
    PerceptualThresholds,
    TargetNature,
    TargetStatus,
    _Labelled,
    value_band,
)
from .keys import CodifiedKey
from .switch import PlatformContext
from .world import DEFAULT_SENSOR_RANGE


class PlatformState(_Labelled, enum.IntEnum):
    INACTIVE = 0
    SEARCHING = 1
    ACQUIRING = 2
    CLASSIFYING = 3
    ENGAGING = 4
    ASSESSING = 5
    HANDOFF = 6
    LEARNING = 7
    MAINTENANCE = 8
    MISSION_COMPLETE = 9
    DISARMED = 10
    DESTROYED = 11
    DEACTIVATED = 12


TERMINAL_STATES = frozenset({PlatformState.MISSION_COMPLETE, PlatformState.DISARMED,
                             PlatformState.DESTROYED, PlatformState.DEACTIVATED})
# no way out of these, not even through maintenance
ABSORBING_STATES = TERMINAL_STATES - {PlatformState.MISSION_COMPLETE}


class BdaVerdict(_Labelled, enum.IntEnum):
    NEUTRALIZED = 0
    STILL_HOSTILE = 1
    UNDETERMINED = 2


class NotInMaintenance(Exception):
    pass


class VersionSkew(Exception):
    pass


@dataclass(frozen=True)
class MaintenanceUpdate:
    version: int
    add: tuple[ForbiddenClause, ...] = ()
    thresholds: PerceptualThresholds | None = None


@dataclass
class WeaponPlatform:
    ref: EntityRef
    state: PlatformState
    ctx: PlatformContext
    position: tuple[float, float] = (0.0, 0.0)
    sensor_fidelity: float = 1.0
    payloads: frozenset[str] = frozenset()
    sensor_range: float = DEFAULT_SENSOR_RANGE
    noise_scale: float = 1.0
    assigned: set[int] = field(default_factory=set)
    resolved: dict[int, str] = field(default_factory=dict)
    target: int | None = None
    acquired: tuple | None = None          # (gated vector, classification) awaiting a key
    last_keyed: dict[int, int] = field(default_factory=dict)
    latest_keys: dict[int, CodifiedKey] = field(default_factory=dict)
    pre_key: CodifiedKey | None = None     # key that caused the current engagement
    bda_retry: bool = False
    engagement_id: int | None = None
    engage_turn: int = 0
    inbox: list[CodifiedKey] = field(default_factory=list)
    received: list[CodifiedKey] = field(default_factory=list)
    clash: object | None = None            # ClashRecord awaiting the next key
    txn: int | None = None
    handoff_failed: set[int] = field(default_factory=set)
    forced_handoff: set[int] = field(default_factory=set)
    tamper: list[dict] = field(default_factory=list)
    maintenance: MaintenanceUpdate | None = None

    @property
    def id(self) -> int:
        return self.ref.id

    @property
    def terminal(self) -> bool:
        return self.state in TERMINAL_STATES

    def unresolved(self) -> list[int]:
        latch = self.ctx.surrender_latch
        return [t for t in sorted(self.assigned) if t not in self.resolved and t not in latch]


def battle_damage_assessment(pre_key: CodifiedKey, post_key: CodifiedKey) -> BdaVerdict:
    if pre_key.seg3_target_id != post_key.seg3_target_id:
        raise ContractViolation("assessment keys must describe the same target")
    if post_key.seg6_timestamp <= pre_key.seg6_timestamp:
        raise ContractViolation("assessment key must be newer than the engagement key")
    if post_key.seg8_status == TargetStatus.NEUTRALIZED:
        return BdaVerdict.NEUTRALIZED
    if post_key.seg8_status == TargetStatus.ACTIVE and post_key.seg5_nature == TargetNature.HOSTILE:
        return BdaVerdict.STILL_HOSTILE
    return BdaVerdict.UNDETERMINED


def required_munition(p: WeaponPlatform, key: CodifiedKey) -> str:
    cfg = p.ctx.cfg
    return cfg.response_table[value_band(key.seg10_value, cfg.value_bands)]


def complete_or_handoff(p: WeaponPlatform):
    """``PlatformState.MISSION_COMPLETE``, a ``HandoffRequest``, or ``None`` to carry on.

    A handoff is only raised for hostile targets this platform has no munition
    left for (or whose assessment stayed inconclusive twice).
    """
    remaining = p.unresolved()
    if not remaining:
        return PlatformState.MISSION_COMPLETE
    needs: list[tuple[str, CodifiedKey]] = []
    for t in remaining:
        key = p.latest_keys.get(t)
        if key is None or t in p.handoff_failed:
            continue
        if t in p.forced_handoff:
            needs.append((required_munition(p, key), key))
        elif key.seg5_nature == TargetNature.HOSTILE:
            munition = required_munition(p, key)
            if p.ctx.resources.count(munition) == 0:
                needs.append((munition, key))
    if not needs:
        return None
    munition = needs[0][0]
    return HandoffRequest(p.id, munition, tuple(k for m, k in needs if m == munition))


def maintenance_update(p: WeaponPlatform, new_ruleset_version: int, new_constraints=(),
                       thresholds: PerceptualThresholds | None = None) -> WeaponPlatform:
    """Servicing window: constraints may only be added; the version steps by one."""
    if p.state != PlatformState.MAINTENANCE:
        raise NotInMaintenance(f"platform {p.id} is {p.state.label}")
    cfg = p.ctx.cfg
    if new_ruleset_version != cfg.ruleset_version + 1:
        raise VersionSkew(f"ruleset {cfg.ruleset_version} cannot jump to {new_ruleset_version}")
    clauses = tuple(cfg.forbidden_criteria)
    clauses += tuple(c for c in new_constraints if c not in clauses)
    cfg = replace(cfg, forbidden_criteria=clauses, ruleset_version=new_ruleset_version,
                  thresholds=thresholds or cfg.thresholds)
    p.ctx = replace(p.ctx, cfg=cfg)
    p.state = PlatformState.SEARCHING
    return p
