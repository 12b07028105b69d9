"""Append-only black-box log: binary file format, replay and snapshot export.

Records carry a tagged payload built from a handful of primitive encodings
(big-endian fixed-width integers and binary64 floats, length-prefixed UTF-8
and octets, counted lists and maps).  The file ends with a trailer holding
the record count and a CRC-32C of everything before it.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Mapping

from crc32c import crc32c

from .domain import EntityKind, EntityRef, TargetNature, TargetStatus

FILE_MAGIC = b"CKBB"
TRAILER_MAGIC = b"CKBE"
FILE_VERSION = 1

_NONE, _FALSE, _TRUE, _INT, _FLOAT, _STR, _BYTES, _LIST, _MAP = range(9)
_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_I64 = struct.Struct(">q")
_F64 = struct.Struct(">d")


class SequenceGap(Exception):
    pass


class CorruptLog(Exception):
    pass


class TickOutOfRange(Exception):
    pass


# -- value encoding -----------------------------------------------------------------

def encode_value(v: Any) -> bytes:
    out = bytearray()
    _put(out, v)
    return bytes(out)


def _put(out: bytearray, v: Any) -> None:
    if v is None:
        out.append(_NONE)
    elif v is True:
        out.append(_TRUE)
    elif v is False:
        out.append(_FALSE)
    elif isinstance(v, int):
        out.append(_INT)
        out += _I64.pack(v)
    elif isinstance(v, float):
        out.append(_FLOAT)
        out += _F64.pack(v)
    elif isinstance(v, str):
        raw = v.encode("utf-8")
        out.append(_STR)
        out += _U32.pack(len(raw)) + raw
    elif isinstance(v, (bytes, bytearray)):
        out.append(_BYTES)
        out += _U32.pack(len(v)) + bytes(v)
    elif isinstance(v, (list, tuple)):
        out.append(_LIST)
        out += _U32.pack(len(v))
        for item in v:
            _put(out, item)
    elif isinstance(v, Mapping):
        out.append(_MAP)
        out += _U32.pack(len(v))
        for k, item in v.items():
            if not isinstance(k, str):
                raise TypeError(f"map keys must be text, got {type(k).__name__}")
            _put(out, k)
            _put(out, item)
    else:
        raise TypeError(f"cannot record a {type(v).__name__}")


def decode_value(data: bytes) -> Any:
    value, pos = _get(data, 0)
    if pos != len(data):
        raise CorruptLog("trailing bytes after value")
    return value


def _take(data: bytes, pos: int, n: int) -> tuple[bytes, int]:
    if pos + n > len(data):
        raise CorruptLog("value runs past end of record")
    return data[pos:pos + n], pos + n


def _get(data: bytes, pos: int):
    tag, pos = _take(data, pos, 1)
    tag = tag[0]
    if tag == _NONE:
        return None, pos
    if tag in (_TRUE, _FALSE):
        return tag == _TRUE, pos
    if tag == _INT:
        raw, pos = _take(data, pos, 8)
        return _I64.unpack(raw)[0], pos
    if tag == _FLOAT:
        raw, pos = _take(data, pos, 8)
        return _F64.unpack(raw)[0], pos
    if tag in (_STR, _BYTES, _LIST, _MAP):
        raw, pos = _take(data, pos, 4)
        n = _U32.unpack(raw)[0]
        if tag == _STR:
            raw, pos = _take(data, pos, n)
            try:
                return raw.decode("utf-8"), pos
            except UnicodeDecodeError as exc:
                raise CorruptLog("invalid UTF-8 in record") from exc
        if tag == _BYTES:
            raw, pos = _take(data, pos, n)
            return raw, pos
        if tag == _LIST:
            items = []
            for _ in range(n):
                item, pos = _get(data, pos)
                items.append(item)
            return tuple(items), pos
        entries = {}
        for _ in range(n):
            k, pos = _get(data, pos)
            if not isinstance(k, str):
                raise CorruptLog("map key is not text")
            entries[k], pos = _get(data, pos)
        return MappingProxyType(entries), pos
    raise CorruptLog(f"unknown value tag {tag}")


def thaw(v: Any) -> Any:
    """Plain (mutable) copy of a decoded value."""
    if isinstance(v, (tuple, list)):
        return [thaw(x) for x in v]
    if isinstance(v, Mapping):
        return {k: thaw(x) for k, x in v.items()}
    return v


def canonical(v: Any) -> Any:
    """Round-trip through the record encoding, yielding plain values."""
    return thaw(decode_value(encode_value(v)))


# -- records ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlackBoxRecord:
    seq: int
    tick: int
    actor: EntityRef
    kind: str
    payload: Any

    def encode(self) -> bytes:
        actor = self.actor
        return encode_value([self.seq, self.tick, [int(actor.kind), actor.id, actor.name], self.kind, self.payload])

    @classmethod
    def decode(cls, body: bytes) -> BlackBoxRecord:
        try:
            seq, tick, actor, kind, payload = decode_value(body)
            ref = EntityRef(EntityKind(actor[0]), actor[1], actor[2])
        except (ValueError, TypeError, IndexError) as exc:
            raise CorruptLog(f"malformed record: {exc}") from exc
        return cls(seq, tick, ref, kind, payload)


class BlackBox:
    """Single-writer append-only log."""

    def __init__(self, records: Iterable[BlackBoxRecord] = ()):
        self._records: list[BlackBoxRecord] = []
        for r in records:
            self.record(r)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __getitem__(self, i) -> BlackBoxRecord:
        return self._records[i]

    @property
    def records(self) -> tuple[BlackBoxRecord, ...]:
        return tuple(self._records)

    def record(self, r: BlackBoxRecord) -> BlackBox:
        if r.seq != len(self._records):
            raise SequenceGap(f"expected seq {len(self._records)}, got {r.seq}")
        # store a frozen copy so later mutation by the caller cannot reach the log
        self._records.append(BlackBoxRecord.decode(r.encode()))
        return self

    def append(self, tick: int, actor: EntityRef, kind: str, payload: Any = None) -> BlackBoxRecord:
        self.record(BlackBoxRecord(len(self._records), tick, actor, kind, payload))
        return self._records[-1]

    def to_bytes(self) -> bytes:
        out = bytearray(FILE_MAGIC)
        out.append(FILE_VERSION)
        for r in self._records:
            body = r.encode()
            out += _U32.pack(len(body)) + body
        out += TRAILER_MAGIC + _U64.pack(len(self._records))
        out += _U32.pack(crc32c(bytes(out)))
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> BlackBox:
        return cls(read_records(data))

    def write(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def read(cls, path) -> BlackBox:
        return cls.from_bytes(Path(path).read_bytes())


def read_records(data: bytes) -> list[BlackBoxRecord]:
    """Parse a log file; raises CorruptLog on any framing, CRC or density fault."""
    head = len(FILE_MAGIC) + 1
    tail = len(TRAILER_MAGIC) + 8 + 4
    if len(data) < head + tail or data[:4] != FILE_MAGIC:
        raise CorruptLog("not a black-box log")
    if data[4] != FILE_VERSION:
        raise CorruptLog(f"unsupported log version {data[4]}")
    (crc,) = _U32.unpack(data[-4:])
    if crc32c(data[:-4]) != crc:
        raise CorruptLog("trailer CRC mismatch")
    trailer = data[-tail:]
    if trailer[:4] != TRAILER_MAGIC:
        raise CorruptLog("missing trailer")
    (count,) = _U64.unpack(trailer[4:12])
    records = []
    pos, end = head, len(data) - tail
    while pos < end:
        if pos + 4 > end:
            raise CorruptLog("truncated record length")
        (n,) = _U32.unpack(data[pos:pos + 4])
        pos += 4
        if pos + n > end:
            raise CorruptLog("truncated record")
        records.append(BlackBoxRecord.decode(data[pos:pos + n]))
        pos += n
    if len(records) != count:
        raise CorruptLog(f"trailer counts {count} records, found {len(records)}")
    check_density(records)
    return records


def check_density(records) -> None:
    for i, r in enumerate(records):
        if r.seq != i:
            raise CorruptLog(f"sequence gap at position {i} (seq {r.seq})")


# -- replay ------------------------------------------------------------------------------

class _Fold:
    """Battle-space state re-derived from records alone."""

    def __init__(self):
        self.tick = 0
        self.platforms: dict[str, dict] = {}
        self.entities: dict[str, dict] = {}
        self.actions: dict[str, dict] = {}
        self.action_owner: dict[str, int] = {}
        self.clashes: list[dict] = []
        self.quarantines = 0
        self.referrals = {"Approve": 0, "Deny": 0}
        self.swaps: dict[str, dict] = {}
        self.custody: dict[str, dict] = {}
        self.classified: dict[int, tuple[int, int, int]] = {}  # target -> (seg6, nature, status)

    def apply(self, r: BlackBoxRecord) -> None:
        self.tick = max(self.tick, r.tick)
        p = r.payload
        if r.kind == "world":
            self.entities = {str(e["id"]): {"kind": e["kind"], "name": e["name"], "position": list(e["position"]),
                                            "alive": e["alive"], "status": e["status"]}
                             for e in p["entities"]}
        elif r.kind == "state":
            self.platforms[str(r.actor.id)] = {"name": r.actor.name, "state": p["state"],
                                               "munitions": thaw(p["munitions"]), "position": thaw(p["position"])}
        elif r.kind == "action":
            a = p["action"]
            self.actions[str(a["id"])] = {"kind": p["kind"], "state": p["state"], "target": a["target"]}
            self.action_owner[str(a["id"])] = r.actor.id
        elif r.kind == "clash":
            self.clashes.append({"platform": r.actor.id, "key": tuple(p["key"]), "rules": list(p["rules"]),
                                 "resolved_by": None})
        elif r.kind == "clash-resolved":
            for c in self.clashes:
                if c["key"] == tuple(p["clash"]):
                    c["resolved_by"] = tuple(p["resolved_by"])
        elif r.kind == "quarantine":
            self.quarantines += 1
        elif r.kind == "referral":
            self.referrals[p["decision"]] += 1
        elif r.kind == "swap":
            self.swaps[str(p["txn"])] = {"phase": p["phase"], "violations": p["violations"]}
        elif r.kind == "custody":
            self.custody[str(p["txn"])] = {"tick": r.tick, "custody": thaw(p["custody"])}
            self.swaps[str(p["txn"])] = {"phase": p["phase"], "violations": p["violations"]}
        elif r.kind == "key":
            seg = p["classified"]
            if p["target"] not in self.classified or self.classified[p["target"]][0] <= seg[0]:
                self.classified[p["target"]] = tuple(seg)

    def summary(self) -> dict:
        return {
            "tick": self.tick,
            "platforms": {k: {"state": v["state"], "munitions": v["munitions"]}
                          for k, v in sorted(self.platforms.items(), key=lambda kv: int(kv[0]))},
            "entities": {k: {"position": v["position"], "alive": v["alive"], "status": v["status"]}
                         for k, v in sorted(self.entities.items(), key=lambda kv: int(kv[0]))},
            "actions": {k: dict(v) for k, v in sorted(self.actions.items(), key=lambda kv: int(kv[0]))},
            "clashes": len(self.clashes),
            "quarantines": self.quarantines,
            "referrals": dict(self.referrals),
            "swaps": {k: dict(v) for k, v in sorted(self.swaps.items(), key=lambda kv: int(kv[0]))},
        }


@dataclass
class Replay:
    stream: list[tuple[int, list[BlackBoxRecord]]]  # records grouped by tick
    summary: dict | None


def replay(log) -> Replay:
    records = list(log)
    check_density(records)
    if not records:
        return Replay([], None)
    fold = _Fold()
    stream: list[tuple[int, list[BlackBoxRecord]]] = []
    for r in records:
        if not stream or stream[-1][0] != r.tick:
            stream.append((r.tick, []))
        stream[-1][1].append(r)
        fold.apply(r)
    return Replay(stream, canonical(fold.summary()))


# -- snapshot export -------------------------------------------------------------------

SNAPSHOT_HEADER = "CKSS-SNAPSHOT 1"


def _q(text: str) -> str:
    return json.dumps(text, ensure_ascii=False)


def _num(x: float) -> str:
    return repr(float(x))


def export_snapshot(log, tick: int) -> str:
    records = list(log)
    check_density(records)
    if not records or not 0 <= tick <= records[-1].tick:
        raise TickOutOfRange(f"tick {tick} outside the log")
    fold = _Fold()
    for r in records:
        if r.tick > tick:
            break
        fold.apply(r)
    lines = [SNAPSHOT_HEADER, f"tick {tick}"]
    for pid, p in sorted(fold.platforms.items(), key=lambda kv: int(kv[0])):
        x, y = p["position"]
        lines.append(f"platform {pid} {_q(p['name'])} pos {_num(x)} {_num(y)} state {p['state']}")
    for eid, e in sorted(fold.entities.items(), key=lambda kv: int(kv[0])):
        x, y = e["position"]
        seen = fold.classified.get(int(eid))
        nature = TargetNature(seen[1]).label if seen else "Unobserved"
        status = TargetStatus(seen[2]).label if seen else "Unobserved"
        lines.append(f"entity {eid} {EntityKind(e['kind']).label} {_q(e['name'])} pos {_num(x)} {_num(y)} "
                     f"nature {nature} status {status} alive {int(e['alive'])}")
    for txn, c in sorted(fold.custody.items(), key=lambda kv: int(kv[0])):
        if c["tick"] != tick or fold.swaps.get(txn, {}).get("phase") in ("Complete", "Aborted"):
            continue
        for target, holders in sorted(c["custody"].items(), key=lambda kv: int(kv[0])):
            lines.append(f"custody {txn} {target} {','.join(str(h) for h in holders) or '-'}")
    for aid, a in sorted(fold.actions.items(), key=lambda kv: int(kv[0])):
        if a["state"] in ("Invoked", "Executing"):
            target = "-" if a["target"] is None else a["target"]
            lines.append(f"pending {fold.action_owner[aid]} {aid} {a['kind']} {target} {a['state']}")
    for c in fold.clashes:
        if c["resolved_by"] is None:
            key = "/".join(str(v) for v in c["key"])
            lines.append(f"clash {c['platform']} {key} rules {','.join(str(r) for r in c['rules'])}")
    lines.append("end")
    return "\n".join(lines) + "\n"
