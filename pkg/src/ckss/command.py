"""Command module: clash handling, cease-fire tracking, operator referrals and
the simulated message channel between entities."""

from __future__ import annotations

import enum
import random
import sys
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .codec import SegmentFault, decode_key
from .domain import ContractViolation, EntityRef, MissionConfig, _Labelled
from .keys import CodifiedKey
from .switch import OPEN_STATES, Action, ActionKind, ActionState, SwitchRuleId


@dataclass
class ClashRecord:
    key_triple: tuple[int, int, int]
    rules: tuple[SwitchRuleId, ...]
    nullified: tuple[Action, ...]
    resolved_by: tuple[int, int, int] | None = None

    def to_dict(self) -> dict:
        return {"key": list(self.key_triple), "rules": [int(r) for r in self.rules],
                "nullified": [a.to_dict() for a in self.nullified],
                "resolved_by": list(self.resolved_by) if self.resolved_by else None}


def handle_clash(invs, pending: Action | None) -> tuple[ClashRecord, Action | None]:
    """Nullify every proposal and any pending action not yet executed.

    Returns the record and the (possibly nullified) pending action.
    """
    invs = tuple(invs)
    if len(invs) < 2:
        raise ContractViolation("a key clash needs at least two invocations")
    nullified = [inv.proposed.advance(ActionState.NULLIFIED) for inv in invs]
    if pending is not None and pending.state in OPEN_STATES:
        pending = pending.advance(ActionState.NULLIFIED)
        nullified.append(pending)
    record = ClashRecord(invs[0].key_triple, tuple(inv.rule for inv in invs), tuple(nullified))
    return record, pending


def ceasefire_in_effect(clock: int, cfg: MissionConfig) -> bool:
    return cfg.ceasefire_timetable is not None and clock >= cfg.ceasefire_timetable


# -- operator referrals ---------------------------------------------------------

class OperatorMode(_Labelled, enum.Enum):
    SCRIPTED_TABLE = "scripted"
    ALWAYS_DENY = "deny"
    INTERACTIVE_PROMPT = "prompt"


class Decision(_Labelled, enum.Enum):
    APPROVE = "approve"
    DENY = "deny"


@dataclass
class OperatorPolicy:
    mode: OperatorMode = OperatorMode.ALWAYS_DENY
    table: Mapping[int, Decision] = field(default_factory=dict)
    # one line per decision; defaults to stdin
    read_line: Callable[[], str] | None = None
    prompt_out: Callable[[str], None] | None = None


def resolve_referral(a: Action, p: OperatorPolicy) -> Decision:
    if a.kind != ActionKind.OPERATOR_REFERRAL:
        raise ContractViolation(f"{a.kind.label} is not an operator referral")
    if p.mode == OperatorMode.ALWAYS_DENY:
        return Decision.DENY
    if p.mode == OperatorMode.SCRIPTED_TABLE:
        return p.table.get(a.target, Decision.DENY)
    write = p.prompt_out or (lambda s: print(s, end="", file=sys.stderr, flush=True))
    read = p.read_line or sys.stdin.readline
    write(f"approve {a.munition} attack on target {a.target} (key {a.caused_by[1]})? [y/N] ")
    line = read() or ""
    return Decision.APPROVE if line.strip().lower() == "y" else Decision.DENY


# -- messages -----------------------------------------------------------------------

@dataclass(frozen=True)
class KeyTransfer:
    payload: bytes


@dataclass(frozen=True)
class SwapProposal:
    txn_id: int
    targets: tuple[int, ...]


@dataclass(frozen=True)
class SwapAccept:
    txn_id: int


@dataclass(frozen=True)
class SwapComplete:
    txn_id: int


@dataclass(frozen=True)
class CeasefireNotice:
    tick: int


MESSAGE_KINDS = {KeyTransfer: "key-transfer", SwapProposal: "swap-proposal", SwapAccept: "swap-accept",
                 SwapComplete: "swap-complete", CeasefireNotice: "ceasefire-notice"}


def message_to_dict(msg) -> dict:
    kind = MESSAGE_KINDS[type(msg)]
    if isinstance(msg, KeyTransfer):
        return {"kind": kind, "payload": msg.payload}
    if isinstance(msg, SwapProposal):
        return {"kind": kind, "txn": msg.txn_id, "targets": list(msg.targets)}
    if isinstance(msg, CeasefireNotice):
        return {"kind": kind, "tick": msg.tick}
    return {"kind": kind, "txn": msg.txn_id}


class UnknownEndpoint(Exception):
    pass


@dataclass(frozen=True)
class LinkParams:
    delay: int = 0
    loss: float = 0.0

    def __post_init__(self):
        if self.delay < 0 or not 0.0 <= self.loss <= 1.0:
            raise ValueError("link delay must be >= 0 and loss in [0, 1]")


@dataclass(frozen=True)
class Delivery:
    seq: int
    sent: int
    due: int | None  # None when lost
    src: EntityRef
    dst: EntityRef
    msg: object

    @property
    def lost(self) -> bool:
        return self.due is None


class Router:
    """Simulated point-to-point channel with per-link delay and seeded loss.

    Deliveries come out in (due tick, send order), a total order fixed by
    the run's seed.
    """

    def __init__(self, endpoints, rng: random.Random, default: LinkParams = LinkParams(),
                 links: Mapping[tuple[int, int], LinkParams] | None = None):
        self._endpoints = {ref.id: ref for ref in endpoints}
        self._rng = rng
        self.default = default
        self.links = dict(links or {})
        self._queue: list[Delivery] = []
        self._seq = 0

    def add_endpoint(self, ref: EntityRef) -> None:
        self._endpoints[ref.id] = ref

    def link(self, src: int, dst: int) -> LinkParams:
        return self.links.get((src, dst)) or self.links.get((dst, src)) or self.default

    def route(self, msg, src: EntityRef, dst: EntityRef, now: int) -> Delivery:
        for ref in (src, dst):
            if self._endpoints.get(ref.id) != ref:
                raise UnknownEndpoint(f"{ref.kind.label} {ref.id} is not registered")
        if src == dst:
            raise ContractViolation("a message needs distinct endpoints")
        params = self.link(src.id, dst.id)
        lost = params.loss > 0.0 and self._rng.random() < params.loss
        delivery = Delivery(self._seq, now, None if lost else now + params.delay, src, dst, msg)
        self._seq += 1
        if not lost:
            self._queue.append(delivery)
        return delivery

    def due(self, now: int) -> list[Delivery]:
        ready = sorted((d for d in self._queue if d.due <= now), key=lambda d: (d.due, d.seq))
        self._queue = [d for d in self._queue if d.due > now]
        return ready

    @property
    def in_flight(self) -> int:
        return len(self._queue)


def receive_key(msg: KeyTransfer) -> CodifiedKey | list[SegmentFault]:
    """Decode a transferred key at the receiver; a fault list means quarantine."""
    return decode_key(msg.payload)
