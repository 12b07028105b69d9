"""CKSS v1 interchange encoding of codified keys.

Layout (all integers big-endian)::

    "CKSS" | version u8 | segment count u16
    repeated: segment id u16 | payload length u32 | payload | CRC-32C(id|length|payload) u32
    CRC-32C of everything above, u32

Segments 1..11 carry the core key fields, 12 and 13 the vicinity lists.
See docs/ckss-wire-format.md for the payload layouts.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass

from crc32c import crc32c

from .domain import (
    CHANNEL_ARITY,
    CHANNEL_NAMES,
    Channel,
    CharacteristicVector,
    CombatRole,
    ResourceState,
    TargetNature,
    TargetStatus,
    TargetValue,
    flag_mask,
)
from .keys import NAME_LIMIT, CodifiedKey

MAGIC = b"CKSS"
VERSION = 1
SEGMENT_IDS = tuple(range(1, 14))
VICINITY_TARGETS = 12
VICINITY_FRIENDLIES = 13
HEADER_ID = 0
TRAILER_ID = 0xFFFF
DEFAULT_STALENESS_LIMIT = 50

_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_F64 = struct.Struct(">d")
_FRAME = struct.Struct(">HI")


class FaultKind(enum.IntEnum):
    CHECKSUM_MISMATCH = 0
    OUT_OF_RANGE_VALUE = 1
    TRUNCATED = 2
    UNKNOWN_SEGMENT = 3
    STALE_TIMESTAMP = 4
    NESTING_VIOLATION = 5

    @property
    def label(self) -> str:
        return "".join(p.capitalize() for p in self.name.split("_"))


@dataclass(frozen=True, order=True)
class SegmentFault:
    segment_id: int
    fault: FaultKind

    def __str__(self) -> str:
        return f"{self.segment_id}:{self.fault.label}"


def _sorted(faults) -> list[SegmentFault]:
    return sorted(set(faults))


# -- encoding ---------------------------------------------------------------

def _name(text: str) -> bytes:
    raw = text.encode("utf-8")
    return _U16.pack(len(raw)) + raw


def _channel(name: str, ch: Channel) -> bytes:
    out = _F64.pack(ch.confidence) + _U32.pack(ch.flags)
    if name == "grouping":
        out += _U32.pack(int(ch.values[0]))
    else:
        for v in ch.values:
            out += _F64.pack(v)
    return out


def _payloads(k: CodifiedKey) -> list[tuple[int, bytes]]:
    res = k.seg11_resources
    weapons = _U16.pack(len(res.weapons)) + b"".join(_name(kind) + _U32.pack(c) for kind, c in res.weapons)
    value = k.seg10_value
    return [
        (1, _U64.pack(k.seg1_weapon_id)),
        (2, _name(k.seg2_weapon_name)),
        (3, _U64.pack(k.seg3_target_id)),
        (4, _name(k.seg4_target_name)),
        (5, bytes([int(k.seg5_nature) & 0xFF])),
        (6, _U64.pack(k.seg6_timestamp)),
        (7, b"".join(_channel(n, ch) for n, ch in zip(CHANNEL_NAMES, k.seg7_characteristics.channels))),
        (8, bytes([int(k.seg8_status) & 0xFF])),
        (9, bytes([int(k.seg9_role) & 0xFF])),
        (10, _F64.pack(value.economic) + _F64.pack(value.human_life) + _F64.pack(value.strategic)),
        (11, _F64.pack(res.fuel) + _U64.pack(res.endurance) + weapons),
        (VICINITY_TARGETS, _vicinity(k.seg_vicinity_targets)),
        (VICINITY_FRIENDLIES, _vicinity(k.seg_vicinity_friendlies)),
    ]


def _vicinity(keys) -> bytes:
    out = _U16.pack(len(keys))
    for k in keys:
        blob = encode_key(k)
        out += _U32.pack(len(blob)) + blob
    return out


def frame_segment(segment_id: int, payload: bytes) -> bytes:
    head = _FRAME.pack(segment_id, len(payload))
    return head + payload + _U32.pack(crc32c(head + payload))


def encode_key(k: CodifiedKey) -> bytes:
    """Deterministic CKSS v1 octets for ``k``."""
    segments = _payloads(k)
    body = MAGIC + bytes([VERSION]) + _U16.pack(len(segments))
    body += b"".join(frame_segment(sid, payload) for sid, payload in segments)
    return body + _U32.pack(crc32c(body))


# -- decoding ---------------------------------------------------------------

class _Short(Exception):
    pass


class _Bad(Exception):
    def __init__(self, fault=FaultKind.OUT_OF_RANGE_VALUE):
        self.fault = fault


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise _Short
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return _U16.unpack(self.take(2))[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def f64(self) -> float:
        v = _F64.unpack(self.take(8))[0]
        if not math.isfinite(v):
            raise _Bad
        return v

    def name(self) -> str:
        raw = self.take(self.u16())
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise _Bad from None
        if not raw or len(raw) > NAME_LIMIT:
            raise _Bad
        return text

    def done(self) -> None:
        if self.pos != len(self.data):
            raise _Bad


def _enum(cls, code: int):
    try:
        return cls(code)
    except ValueError:
        raise _Bad from None


def _parse_characteristics(r: _Reader) -> CharacteristicVector:
    channels = []
    for name in CHANNEL_NAMES:
        confidence = r.f64()
        flags = r.u32()
        if not 0.0 <= confidence <= 1.0 or flags & ~flag_mask(name):
            raise _Bad
        if name == "grouping":
            values = (r.u32(),)
        else:
            values = tuple(r.f64() for _ in range(CHANNEL_ARITY[name]))
        channels.append(Channel(confidence, flags, values))
    return CharacteristicVector.from_channels(channels)


def _parse_resources(r: _Reader) -> ResourceState:
    fuel = r.f64()
    endurance = r.u64()
    weapons = tuple((r.name(), r.u32()) for _ in range(r.u16()))
    if fuel < 0:
        raise _Bad
    return ResourceState(fuel, endurance, weapons)


def _parse_value(r: _Reader) -> TargetValue:
    parts = (r.f64(), r.f64(), r.f64())
    if any(p < 0 for p in parts):
        raise _Bad
    return TargetValue(*parts)


def _parse_vicinity(r: _Reader) -> tuple[CodifiedKey, ...]:
    keys = []
    for _ in range(r.u16()):
        result = decode_key(r.take(r.u32()))
        if not isinstance(result, CodifiedKey):
            kinds = {f.fault for f in result}
            raise _Bad(FaultKind.CHECKSUM_MISMATCH if FaultKind.CHECKSUM_MISMATCH in kinds
                       else FaultKind.TRUNCATED if FaultKind.TRUNCATED in kinds
                       else FaultKind.OUT_OF_RANGE_VALUE)
        if not result.is_bare:
            raise _Bad(FaultKind.NESTING_VIOLATION)
        keys.append(result)
    return tuple(keys)


_PARSERS = {
    1: _Reader.u64,
    2: _Reader.name,
    3: _Reader.u64,
    4: _Reader.name,
    5: lambda r: _enum(TargetNature, r.u8()),
    6: _Reader.u64,
    7: _parse_characteristics,
    8: lambda r: _enum(TargetStatus, r.u8()),
    9: lambda r: _enum(CombatRole, r.u8()),
    10: _parse_value,
    11: _parse_resources,
    VICINITY_TARGETS: _parse_vicinity,
    VICINITY_FRIENDLIES: _parse_vicinity,
}


def decode_key(data: bytes) -> CodifiedKey | list[SegmentFault]:
    """Decode CKSS v1 octets.

    Returns the key only when every frame, checksum and value verifies;
    otherwise the complete, ascending list of segment faults.  Never raises
    on malformed input.
    """
    data = bytes(data)
    faults: list[SegmentFault] = []
    if len(data) < 11:
        return [SegmentFault(HEADER_ID, FaultKind.TRUNCATED)]
    if data[:4] != MAGIC:
        faults.append(SegmentFault(HEADER_ID, FaultKind.UNKNOWN_SEGMENT))
    if data[4] != VERSION:
        faults.append(SegmentFault(HEADER_ID, FaultKind.OUT_OF_RANGE_VALUE))
    count = _U16.unpack(data[5:7])[0]
    if count != len(SEGMENT_IDS):
        faults.append(SegmentFault(HEADER_ID, FaultKind.OUT_OF_RANGE_VALUE))
    body_end = len(data) - 4
    if _U32.unpack(data[body_end:])[0] != crc32c(data[:body_end]):
        faults.append(SegmentFault(TRAILER_ID, FaultKind.CHECKSUM_MISMATCH))

    fields: dict[int, object] = {}
    seen: set[int] = set()
    pos = 7
    for index in range(count):
        if pos + _FRAME.size > body_end:
            faults.append(SegmentFault(index + 1, FaultKind.TRUNCATED))
            break
        sid, length = _FRAME.unpack_from(data, pos)
        end = pos + _FRAME.size + length
        if end + 4 > body_end:
            faults.append(SegmentFault(sid, FaultKind.TRUNCATED))
            break
        payload = data[pos + _FRAME.size:end]
        stored = _U32.unpack(data[end:end + 4])[0]
        pos = end + 4
        if stored != crc32c(data[end - length - _FRAME.size:end]):
            faults.append(SegmentFault(sid, FaultKind.CHECKSUM_MISMATCH))
            seen.add(sid)
            continue
        if sid not in _PARSERS or sid in seen:
            faults.append(SegmentFault(sid, FaultKind.UNKNOWN_SEGMENT))
            seen.add(sid)
            continue
        seen.add(sid)
        reader = _Reader(payload)
        try:
            value = _PARSERS[sid](reader)
            reader.done()
        except _Short:
            faults.append(SegmentFault(sid, FaultKind.TRUNCATED))
            continue
        except _Bad as bad:
            faults.append(SegmentFault(sid, bad.fault))
            continue
        fields[sid] = value
    else:
        if pos != body_end:
            faults.append(SegmentFault(HEADER_ID, FaultKind.OUT_OF_RANGE_VALUE))

    for sid in SEGMENT_IDS:
        if sid not in seen and not any(f.segment_id == sid for f in faults):
            faults.append(SegmentFault(sid, FaultKind.TRUNCATED))
    if faults:
        return _sorted(faults)
    return CodifiedKey(
        seg1_weapon_id=fields[1],
        seg2_weapon_name=fields[2],
        seg3_target_id=fields[3],
        seg4_target_name=fields[4],
        seg5_nature=fields[5],
        seg6_timestamp=fields[6],
        seg7_characteristics=fields[7],
        seg8_status=fields[8],
        seg9_role=fields[9],
        seg10_value=fields[10],
        seg11_resources=fields[11],
        seg_vicinity_targets=fields[VICINITY_TARGETS],
        seg_vicinity_friendlies=fields[VICINITY_FRIENDLIES],
    )


# -- structural verification -------------------------------------------------

def _valid_enum(cls, value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value in cls._value2member_map_


def _finite_nonneg(*values) -> bool:
    return all(isinstance(v, (int, float)) and math.isfinite(v) and v >= 0 for v in values)


def _valid_name(text) -> bool:
    if not isinstance(text, str) or not text:
        return False
    try:
        return len(text.encode("utf-8")) <= NAME_LIMIT
    except UnicodeEncodeError:
        return False


def _valid_characteristics(cv) -> bool:
    if not isinstance(cv, CharacteristicVector):
        return False
    for name, ch in zip(CHANNEL_NAMES, cv.channels):
        if not isinstance(ch.confidence, (int, float)) or not 0.0 <= ch.confidence <= 1.0:
            return False
        if ch.flags < 0 or ch.flags & ~flag_mask(name):
            return False
        arity = 1 if name == "grouping" else CHANNEL_ARITY[name]
        if len(ch.values) != arity or not all(math.isfinite(v) for v in ch.values):
            return False
        if name == "grouping" and (not isinstance(ch.values[0], int) or not 0 <= ch.values[0] < 2 ** 32):
            return False
        if ch.confidence == 0.0 and (ch.flags or any(ch.values)):
            return False
    return True


def _structural_faults(k: CodifiedKey) -> list[SegmentFault]:
    bad = FaultKind.OUT_OF_RANGE_VALUE
    faults = []
    for sid, value in ((1, k.seg1_weapon_id), (3, k.seg3_target_id), (6, k.seg6_timestamp)):
        if not isinstance(value, int) or not 0 <= value < 2 ** 64:
            faults.append(SegmentFault(sid, bad))
    for sid, text in ((2, k.seg2_weapon_name), (4, k.seg4_target_name)):
        if not _valid_name(text):
            faults.append(SegmentFault(sid, bad))
    for sid, cls, value in ((5, TargetNature, k.seg5_nature), (8, TargetStatus, k.seg8_status),
                            (9, CombatRole, k.seg9_role)):
        if not _valid_enum(cls, value):
            faults.append(SegmentFault(sid, bad))
    if not _valid_characteristics(k.seg7_characteristics):
        faults.append(SegmentFault(7, bad))
    v = k.seg10_value
    if not _finite_nonneg(v.economic, v.human_life, v.strategic):
        faults.append(SegmentFault(10, bad))
    res = k.seg11_resources
    if not (_finite_nonneg(res.fuel, res.endurance) and isinstance(res.endurance, int)
            and all(_valid_name(kind) and isinstance(c, int) and 0 <= c < 2 ** 32 for kind, c in res.weapons)):
        faults.append(SegmentFault(11, bad))
    return faults


def verify_key(k: CodifiedKey, now: int, staleness_limit: int = DEFAULT_STALENESS_LIMIT) -> list[SegmentFault]:
    """Faults that make ``k`` non-actionable at tick ``now``; empty means actionable."""
    faults = _structural_faults(k)
    ts = k.seg6_timestamp
    if isinstance(ts, int) and 0 <= ts:
        if ts > now:
            faults.append(SegmentFault(6, FaultKind.OUT_OF_RANGE_VALUE))
        elif now - ts > staleness_limit:
            faults.append(SegmentFault(6, FaultKind.STALE_TIMESTAMP))
    for sid, nested in ((VICINITY_TARGETS, k.seg_vicinity_targets),
                        (VICINITY_FRIENDLIES, k.seg_vicinity_friendlies)):
        for inner in nested:
            if not inner.is_bare:
                faults.append(SegmentFault(sid, FaultKind.NESTING_VIOLATION))
            if _structural_faults(inner):
                faults.append(SegmentFault(sid, FaultKind.OUT_OF_RANGE_VALUE))
    return _sorted(faults)
