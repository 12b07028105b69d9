"""Codified key values and the per-run key factory."""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace
from typing import Mapping

from .domain import (
    CharacteristicVector,
    Classification,
    CombatRole,
    EntityRef,
    ResourceState,
    TargetNature,
    TargetStatus,
    TargetValue,
)

NAME_LIMIT = 64  # bytes of UTF-8


class DuplicateTimestamp(Exception):
    """A (platform, target, tick) triple was issued twice."""


class NestingViolation(Exception):
    """A vicinity key carried vicinity keys of its own."""


@dataclass(frozen=True)
class CodifiedKey:
    seg1_weapon_id: int
    seg2_weapon_name: str
    seg3_target_id: int
    seg4_target_name: str
    seg5_nature: TargetNature
    seg6_timestamp: int
    seg7_characteristics: CharacteristicVector
    seg8_status: TargetStatus
    seg9_role: CombatRole
    seg10_value: TargetValue
    seg11_resources: ResourceState
    seg_vicinity_targets: tuple[CodifiedKey, ...] = ()
    seg_vicinity_friendlies: tuple[CodifiedKey, ...] = ()

    @property
    def triple(self) -> tuple[int, int, int]:
        return (self.seg1_weapon_id, self.seg3_target_id, self.seg6_timestamp)

    @property
    def is_bare(self) -> bool:
        return not self.seg_vicinity_targets and not self.seg_vicinity_friendlies

    def bare(self) -> CodifiedKey:
        return replace(self, seg_vicinity_targets=(), seg_vicinity_friendlies=())

    @property
    def classification(self) -> tuple:
        return (self.seg5_nature, self.seg8_status, self.seg9_role)


class KeyLedger:
    """Run-wide uniqueness ledger of issued (seg1, seg3, seg6) triples."""

    def __init__(self):
        self._lock = threading.Lock()
        self._issued: set[tuple[int, int, int]] = set()
        self._latest: dict[tuple[int, int], int] = {}

    def register(self, triple: tuple[int, int, int]) -> None:
        weapon, target, tick = triple
        with self._lock:
            last = self._latest.get((weapon, target))
            if triple in self._issued or (last is not None and tick <= last):
                raise DuplicateTimestamp(f"key {weapon}/{target}/{tick} already issued (latest tick {last})")
            self._issued.add(triple)
            self._latest[(weapon, target)] = tick

    def __contains__(self, triple) -> bool:
        return triple in self._issued

    def __len__(self) -> int:
        return len(self._issued)


def generate_key(platform, target: EntityRef, gated: CharacteristicVector, c: Classification, clock: int,
                 ledger: KeyLedger) -> CodifiedKey:
    """Transcribe one sensing of ``target`` into a fresh key and register it.

    ``platform`` needs ``ref`` (an EntityRef) and ``ctx.resources``.
    """
    key = CodifiedKey(
        seg1_weapon_id=platform.ref.id,
        seg2_weapon_name=platform.ref.name,
        seg3_target_id=target.id,
        seg4_target_name=target.name,
        seg5_nature=c.nature,
        seg6_timestamp=clock,
        seg7_characteristics=gated,
        seg8_status=c.status,
        seg9_role=c.role,
        seg10_value=c.value,
        seg11_resources=platform.ctx.resources,
    )
    ledger.register(key.triple)
    return key


def embed_vicinity(key: CodifiedKey, nearby_targets, nearby_friendlies) -> CodifiedKey:
    for k in tuple(nearby_targets) + tuple(nearby_friendlies):
        if not k.is_bare:
            raise NestingViolation(f"vicinity key {k.triple} already embeds vicinity keys")
    return replace(
        key,
        seg_vicinity_targets=tuple(k.bare() for k in nearby_targets),
        seg_vicinity_friendlies=tuple(k.bare() for k in nearby_friendlies),
    )


def key_depth(key: CodifiedKey) -> int:
    """Nesting depth: 0 for a bare key."""
    nested = key.seg_vicinity_targets + key.seg_vicinity_friendlies
    if not nested:
        return 0
    return 1 + max(key_depth(k) for k in nested)


def key_to_dict(key: CodifiedKey) -> dict:
    return {
        "seg1_weapon_id": key.seg1_weapon_id,
        "seg2_weapon_name": key.seg2_weapon_name,
        "seg3_target_id": key.seg3_target_id,
        "seg4_target_name": key.seg4_target_name,
        "seg5_nature": int(key.seg5_nature),
        "seg6_timestamp": key.seg6_timestamp,
        "seg7_characteristics": key.seg7_characteristics.to_dict(),
        "seg8_status": int(key.seg8_status),
        "seg9_role": int(key.seg9_role),
        "seg10_value": [key.seg10_value.economic, key.seg10_value.human_life, key.seg10_value.strategic],
        "seg11_resources": key.seg11_resources.to_dict(),
        "seg_vicinity_targets": [key_to_dict(k) for k in key.seg_vicinity_targets],
        "seg_vicinity_friendlies": [key_to_dict(k) for k in key.seg_vicinity_friendlies],
    }


def key_from_dict(data: Mapping) -> CodifiedKey:
    return CodifiedKey(
        seg1_weapon_id=int(data["seg1_weapon_id"]),
        seg2_weapon_name=data["seg2_weapon_name"],
        seg3_target_id=int(data["seg3_target_id"]),
        seg4_target_name=data["seg4_target_name"],
        seg5_nature=TargetNature(data["seg5_nature"]),
        seg6_timestamp=int(data["seg6_timestamp"]),
        seg7_characteristics=CharacteristicVector.from_dict(data["seg7_characteristics"]),
        seg8_status=TargetStatus(data["seg8_status"]),
        seg9_role=CombatRole(data["seg9_role"]),
        seg10_value=TargetValue(*data["seg10_value"]),
        seg11_resources=ResourceState.from_dict(data["seg11_resources"]),
        seg_vicinity_targets=tuple(key_from_dict(k) for k in data["seg_vicinity_targets"]),
        seg_vicinity_friendlies=tuple(key_from_dict(k) for k in data["seg_vicinity_friendlies"]),
    )
