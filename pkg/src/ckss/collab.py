"""Task swapping between platforms with continuous target custody."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

from .domain import _Labelled
from .keys import CodifiedKey

SWAP_TIMEOUT = 20
NORMATIVE = "normative"
NAIVE = "naive"


class SwapPhase(_Labelled, enum.IntEnum):
    PROPOSED = 0
    ACCEPTED = 1
    TRACKING_HANDOVER = 2
    COMPLETE = 3
    ABORTED = 4


TERMINAL_PHASES = frozenset({SwapPhase.COMPLETE, SwapPhase.ABORTED})


class UnknownPlatform(Exception):
    pass


class UnknownTarget(Exception):
    pass


@dataclass(frozen=True)
class HandoffRequest:
    platform: int
    munition: str
    keys: tuple[CodifiedKey, ...]

    @property
    def targets(self) -> tuple[int, ...]:
        return tuple(k.seg3_target_id for k in self.keys)


@dataclass(frozen=True)
class Slot:
    """Planned custody change for one target."""

    holder: int
    planned: int   # tick the holder is scheduled to acquire
    acquire: int   # tick the holder actually has the target
    release: int   # tick the initiator stops tracking


@dataclass
class SwapTransaction:
    id: int
    initiator: int
    acceptor: int
    extra_tracker: int | None
    targets: tuple[tuple[int, bytes], ...]
    phase: SwapPhase = SwapPhase.PROPOSED
    custody: list[tuple[int, dict[int, frozenset[int]]]] = field(default_factory=list)
    opened: int = 0
    reason: str | None = None
    mobile: frozenset[int] = frozenset()
    schedule: dict[int, Slot] = field(default_factory=dict)
    mode: str = NORMATIVE
    acknowledged: bool = False
    history: list[tuple[int, SwapPhase]] = field(default_factory=list)

    @property
    def target_ids(self) -> tuple[int, ...]:
        return tuple(t for t, _ in self.targets)

    @property
    def terminal(self) -> bool:
        return self.phase in TERMINAL_PHASES

    def to_dict(self) -> dict:
        return {"txn": self.id, "initiator": self.initiator, "acceptor": self.acceptor,
                "extra_tracker": self.extra_tracker, "targets": list(self.target_ids),
                "phase": self.phase.label, "reason": self.reason, "mode": self.mode,
                "violations": len(custody_violations(self))}


def _eligible(p) -> bool:
    from .ooda import PlatformState
    return p.state in (PlatformState.SEARCHING, PlatformState.MISSION_COMPLETE)


def request_collaboration(req: HandoffRequest, world, platforms) -> list[int]:
    """Platforms able to take over ``req``, nearest to its first target first."""
    if not req.keys:
        return []
    anchor = world.get(req.keys[0].seg3_target_id).position
    found = [p for pid, p in platforms.items()
             if pid != req.platform and req.munition in p.payloads and _eligible(p)]
    found.sort(key=lambda p: (math.dist(p.position, anchor), p.ref.id))
    return [p.ref.id for p in found]


def initiate_swap(initiator: int, acceptor: int, targets, world, platforms, *, txn_id: int = 1,
                  now: int = 0, mode: str = NORMATIVE) -> SwapTransaction:
    """Open a swap for ``targets`` (a list of (target id, encoded key) pairs).

    More than one mobile target needs a third platform to track alongside the
    acceptor; without one the transaction opens already aborted.  The naive
    mode skips that requirement on purpose, to demonstrate the custody gap.
    """
    for pid in (initiator, acceptor):
        if pid not in platforms:
            raise UnknownPlatform(f"no platform {pid}")
    targets = tuple((int(t), bytes(payload)) for t, payload in targets)
    for t, _ in targets:
        if t not in world.entities:
            raise UnknownTarget(f"no target {t}")
    mobile = frozenset(t for t, _ in targets if world.get(t).mobile)
    txn = SwapTransaction(txn_id, initiator, acceptor, None, targets, opened=now, mobile=mobile, mode=mode)
    if len(mobile) > 1 and mode == NORMATIVE:
        anchor = world.get(targets[0][0]).position
        spare = sorted((p for pid, p in platforms.items() if pid not in (initiator, acceptor) and _eligible(p)),
                       key=lambda p: (math.dist(p.position, anchor), p.ref.id))
        if not spare:
            txn.phase = SwapPhase.ABORTED
            txn.reason = "InsufficientTrackers"
        else:
            txn.extra_tracker = spare[0].ref.id
    txn.history.append((now, txn.phase))
    return txn


def plan_handover(txn: SwapTransaction, start: int) -> dict[int, Slot]:
    """One acquisition per tick in target-list order.

    Holders alternate between acceptor and extra tracker.  A holder that
    already has a mobile target needs one extra tick to slew onto another.
    Under the normative schedule the initiator lets go one tick after the new
    holder has the target; the naive schedule lets go at the planned tick.
    """
    holders = [txn.acceptor] if txn.extra_tracker is None else [txn.acceptor, txn.extra_tracker]
    has_mobile: set[int] = set()
    plan = {}
    for i, target in enumerate(txn.target_ids):
        holder = holders[i % len(holders)]
        planned = start + i
        acquire = planned + (1 if target in txn.mobile and holder in has_mobile else 0)
        release = acquire + 1 if txn.mode == NORMATIVE else planned
        if target in txn.mobile:
            has_mobile.add(holder)
        plan[target] = Slot(holder, planned, acquire, release)
    return plan


def custody_at(txn: SwapTransaction, tick: int) -> dict[int, frozenset[int]]:
    if txn.phase in (SwapPhase.PROPOSED, SwapPhase.ACCEPTED, SwapPhase.ABORTED):
        return {t: frozenset({txn.initiator}) for t in txn.target_ids}
    out = {}
    for t in txn.target_ids:
        slot = txn.schedule[t]
        holders = set()
        if tick < slot.release:
            holders.add(txn.initiator)
        if tick >= slot.acquire:
            holders.add(slot.holder)
        out[t] = frozenset(holders)
    return out


def advance_swap(txn: SwapTransaction, world, now: int, timeout: int = SWAP_TIMEOUT) -> SwapTransaction:
    """One phase step at tick ``now``, then the custody entry for ``now``."""
    if txn.terminal:
        return txn
    txn = replace(txn, custody=list(txn.custody), history=list(txn.history), schedule=dict(txn.schedule))
    before = txn.phase
    if txn.phase == SwapPhase.PROPOSED:
        if txn.acknowledged:
            txn.phase = SwapPhase.ACCEPTED
        elif now - txn.opened >= timeout:
            txn.phase = SwapPhase.ABORTED
            txn.reason = "Timeout"
    elif txn.phase == SwapPhase.ACCEPTED:
        txn.schedule = plan_handover(txn, now)
        txn.phase = SwapPhase.TRACKING_HANDOVER
    elif txn.phase == SwapPhase.TRACKING_HANDOVER:
        done = max(max(s.release, s.acquire) for s in txn.schedule.values())
        if now >= done:
            txn.phase = SwapPhase.COMPLETE
    if txn.phase != before:
        txn.history.append((now, txn.phase))
    txn.custody.append((now, custody_at(txn, now)))
    return txn


def custody_violations(txn: SwapTransaction) -> list[tuple[int, int]]:
    return [(tick, t) for tick, held in txn.custody for t, holders in sorted(held.items()) if not holders]
