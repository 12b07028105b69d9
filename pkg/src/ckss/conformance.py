"""Golden-vector conformance suite for the CKSS v1 key encoding.

The corpus lives in ``ckss/data/conformance``: ``manifest.json`` lists each
case with the octets file (hex text), the key it must decode to (JSON) or the
fault list it must produce instead.  ``build_corpus`` regenerates the files
from the reference key below; the shipped files are frozen and the suite
compares against them, not against a fresh encoding.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from crc32c import crc32c

from .codec import SegmentFault, decode_key, encode_key
from .domain import (
    Acoustics,
    Activity,
    CombatRole,
    Markings,
    Possession,
    ResourceState,
    TargetNature,
    TargetStatus,
    TargetValue,
    observed,
)
from .keys import CodifiedKey, embed_vicinity, key_from_dict, key_to_dict

CORPUS_PACKAGE = "ckss.data.conformance"


def reference_key() -> CodifiedKey:
    """K0: a hostile key carrying one nearby target and one nearby friendly."""
    resources_ = ResourceState(72.5, 340, (("heavy", 1), ("light", 2)))
    main = CodifiedKey(
        1, "hawk-1", 21, "emplacement",
        TargetNature.HOSTILE, 12,
        observed(0.9, position=(8.0, -3.5), movement=(0.0, 0.0), group_count=3,
                 activity=Activity.EMPLACING | Activity.EMITTING, possession=Possession.WEAPON,
                 markings=Markings.MILITARY_INSIGNIA, acoustics=Acoustics.GUNFIRE),
        TargetStatus.ACTIVE, CombatRole.COMBATANT, TargetValue(40.0, 0.0, 120.0), resources_,
    )
    nearby = CodifiedKey(
        1, "hawk-1", 22, "ambulance",
        TargetNature.NEUTRAL, 12,
        observed(0.75, position=(9.0, -1.0), movement=(0.5, 0.0), group_count=1,
                 activity=Activity.EMITTING, possession=Possession.NOTHING,
                 markings=Markings.MEDICAL_EMBLEM),
        TargetStatus.ACTIVE, CombatRole.NON_COMBATANT, TargetValue(), resources_,
    )
    friend = CodifiedKey(
        2, "hawk-2", 2, "hawk-2",
        TargetNature.FRIENDLY, 12,
        observed(1.0, position=(0.0, 4.0)),
        TargetStatus.ACTIVE, CombatRole.COMBATANT, TargetValue(), ResourceState(50.0, 200, (("light", 4),)),
    )
    return embed_vicinity(main, [nearby], [friend])


def _segment_offsets(data: bytes) -> dict[int, tuple[int, int]]:
    """segment id -> (payload start, payload length) within an encoding."""
    out = {}
    pos = 7
    for _ in range(struct.unpack(">H", data[5:7])[0]):
        sid, length = struct.unpack(">HI", data[pos:pos + 6])
        out[sid] = (pos + 6, length)
        pos += 6 + length + 4
    return out


def _reseal(data: bytearray, sid: int) -> bytes:
    """Recompute one segment's CRC and the trailer after an in-place edit."""
    start, length = _segment_offsets(bytes(data))[sid]
    head = start - 6
    data[start + length:start + length + 4] = struct.pack(">I", crc32c(bytes(data[head:start + length])))
    data[-4:] = struct.pack(">I", crc32c(bytes(data[:-4])))
    return bytes(data)


def corrupted_variants(golden: bytes) -> dict[str, bytes]:
    """Named corruptions of the golden octets, one fault family each."""
    offsets = _segment_offsets(golden)
    out = {}
    flipped = bytearray(golden)
    flipped[offsets[5][0]] ^= 0x01
    out["nature-bit-flip"] = bytes(flipped)
    out["truncated"] = golden[:len(golden) // 2]
    out["empty"] = b""
    bad_magic = bytearray(golden)
    bad_magic[0:4] = b"CKSX"
    bad_magic[-4:] = struct.pack(">I", crc32c(bytes(bad_magic[:-4])))
    out["bad-magic"] = bytes(bad_magic)
    bad_enum = bytearray(golden)
    bad_enum[offsets[5][0]] = 9
    out["nature-out-of-range"] = _reseal(bad_enum, 5)
    bad_id = bytearray(golden)
    start = offsets[7][0] - 6
    bad_id[start:start + 2] = struct.pack(">H", 77)
    seg_start, length = offsets[7]
    bad_id[seg_start + length:seg_start + length + 4] = struct.pack(
        ">I", crc32c(bytes(bad_id[start:seg_start + length])))
    bad_id[-4:] = struct.pack(">I", crc32c(bytes(bad_id[:-4])))
    out["unknown-segment"] = bytes(bad_id)
    nested = reference_key()
    inner = nested.seg_vicinity_targets[0]
    inner = replace(inner, seg_vicinity_friendlies=nested.seg_vicinity_friendlies)
    deep = replace(nested, seg_vicinity_targets=(inner,))
    out["nesting-depth-two"] = encode_key(deep)
    return out


def _faults_to_json(faults: list[SegmentFault]) -> list[list]:
    return [[f.segment_id, f.fault.label] for f in faults]


def build_corpus(directory) -> None:
    """Write the golden corpus files into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    k0 = reference_key()
    golden = encode_key(k0)
    (directory / "k0.json").write_text(json.dumps(key_to_dict(k0), indent=1, sort_keys=True) + "\n")
    (directory / "k0.hex").write_text(golden.hex() + "\n")
    cases = [{"name": "k0", "octets": "k0.hex", "key": "k0.json", "faults": []}]
    for name, data in corrupted_variants(golden).items():
        (directory / f"k0-{name}.hex").write_text(data.hex() + "\n")
        result = decode_key(data)
        cases.append({"name": f"k0-{name}", "octets": f"k0-{name}.hex", "key": None,
                      "faults": _faults_to_json(result)})
    (directory / "manifest.json").write_text(json.dumps({"format": "CKSS", "version": 1, "cases": cases},
                                                        indent=1) + "\n")


@dataclass(frozen=True)
class CaseResult:
    name: str
    passed: bool
    detail: str


def _read(base, name: str) -> str:
    return base.joinpath(name).read_text(encoding="utf-8")


def run_conformance(directory=None) -> list[CaseResult]:
    """Check every corpus case: golden keys must encode byte-for-byte and
    decode back; corrupted octets must produce exactly the listed faults."""
    base = Path(directory) if directory is not None else resources.files(CORPUS_PACKAGE)
    manifest = json.loads(_read(base, "manifest.json"))
    results = []
    for case in manifest["cases"]:
        data = bytes.fromhex(_read(base, case["octets"]).strip())
        decoded = decode_key(data)
        if case["key"] is not None:
            key = key_from_dict(json.loads(_read(base, case["key"])))
            problems = []
            if encode_key(key) != data:
                problems.append("encoding differs from golden octets")
            if decoded != key:
                problems.append(f"decode gave {decoded if isinstance(decoded, list) else 'a different key'}")
            results.append(CaseResult(case["name"], not problems, "; ".join(problems) or "byte-exact"))
        else:
            got = _faults_to_json(decoded) if isinstance(decoded, list) else "a key"
            ok = got == [list(f) for f in case["faults"]]
            results.append(CaseResult(case["name"], ok, f"faults {got}"))
    return results


__all__ = ["CaseResult", "build_corpus", "corrupted_variants", "reference_key", "run_conformance"]
