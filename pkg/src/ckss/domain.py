"""Shared domain types, pre-mission thresholds, target classification and
proportional response selection.

Everything here is an immutable value; the operations are pure functions.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence


class ContractViolation(ValueError):
    """A caller broke an operation's precondition."""


def _camel(name: str) -> str:
    return "".join(part.capitalize() for part in name.split("_"))


class _Labelled:
    """Mixin giving enums a CamelCase label and a forgiving parser."""

    @property
    def label(self) -> str:
        return _camel(self.name)

    @classmethod
    def parse(cls, text: str):
        wanted = text.strip().replace("_", "").replace("-", "").upper()
        for member in cls:
            if member.name.replace("_", "") == wanted:
                return member
        raise ValueError(f"unknown {cls.__name__} {text!r}")


class EntityKind(_Labelled, enum.IntEnum):
    PLATFORM = 0
    TARGET = 1
    COMMAND_CENTRE = 2


@dataclass(frozen=True, order=True)
class EntityRef:
    kind: EntityKind
    id: int
    name: str

    def __post_init__(self):
        if not self.name:
            raise ValueError("entity name must be non-empty")
        if self.id < 0:
            raise ValueError("entity id must be non-negative")


class TargetNature(_Labelled, enum.IntEnum):
    UNDETERMINED = 0
    HOSTILE = 1
    FRIENDLY = 2
    NEUTRAL = 3


class TargetStatus(_Labelled, enum.IntEnum):
    UNDETERMINED = 0
    ACTIVE = 1
    DORMANT = 2
    NEUTRALIZED = 3


class CombatRole(_Labelled, enum.IntEnum):
    NON_COMBATANT = 0
    COMBATANT = 1


class ValueBand(_Labelled, enum.IntEnum):
    LOW = 0
    MEDIUM = 1
    HIGH = 2


# Channel flag vocabularies. Bit values are part of the wire format.

class Activity(_Labelled, enum.IntFlag):
    FIRING = 1
    EMPLACING = 2
    PLAYING = 4
    EMITTING = 8
    DIRECTED_FIRE = 16
    COMPLYING = 32
    DISABLED = 64


class Possession(_Labelled, enum.IntFlag):
    WEAPON = 1
    TOOL = 2
    NOTHING = 4


class Grouping(_Labelled, enum.IntFlag):
    FORMATION = 1


class Markings(_Labelled, enum.IntFlag):
    MILITARY_INSIGNIA = 1
    MEDICAL_EMBLEM = 2
    CIVILIAN_DRESS = 4


class Acoustics(_Labelled, enum.IntFlag):
    GUNFIRE = 1
    SPEECH = 2
    SURRENDER = 4


CHANNEL_NAMES = ("position", "activity", "possession", "movement", "grouping", "markings", "acoustics")

CHANNEL_FLAGS: dict[str, type[enum.IntFlag] | None] = {
    "position": None,
    "activity": Activity,
    "possession": Possession,
    "movement": None,
    "grouping": Grouping,
    "markings": Markings,
    "acoustics": Acoustics,
}

# number of numeric fields carried next to the flag bitmap
CHANNEL_ARITY = {"position": 2, "activity": 0, "possession": 0, "movement": 2,
                 "grouping": 1, "markings": 0, "acoustics": 0}


def flag_mask(channel: str) -> int:
    flags = CHANNEL_FLAGS[channel]
    if flags is None:
        return 0
    mask = 0
    for member in flags:
        mask |= int(member)
    return mask


def parse_flags(channel: str, names: Iterable[str]) -> int:
    flags = CHANNEL_FLAGS[channel]
    value = 0
    for name in names:
        if flags is None:
            raise ValueError(f"channel {channel!r} carries no flags")
        value |= int(flags.parse(name))
    return value


def flag_labels(channel: str, value: int) -> list[str]:
    flags = CHANNEL_FLAGS[channel]
    if flags is None:
        return []
    return [m.label for m in flags if value & int(m)]


@dataclass(frozen=True)
class Channel:
    """One sensed characteristic: flag bitmap, numeric fields, confidence."""

    confidence: float = 0.0
    flags: int = 0
    values: tuple = ()

    def has(self, flag: int) -> bool:
        return flag != 0 and (self.flags & flag) == flag


def empty_channel(name: str) -> Channel:
    arity = CHANNEL_ARITY[name]
    zero = (0,) if name == "grouping" else (0.0,) * arity
    return Channel(0.0, 0, zero)


def _empty(name):
    return field(default_factory=lambda: empty_channel(name))


@dataclass(frozen=True)
class CharacteristicVector:
    """Seven-channel sensor evidence in the fixed acquisition order."""

    position: Channel = _empty("position")
    activity: Channel = _empty("activity")
    possession: Channel = _empty("possession")
    movement: Channel = _empty("movement")
    grouping: Channel = _empty("grouping")
    markings: Channel = _empty("markings")
    acoustics: Channel = _empty("acoustics")

    @property
    def channels(self) -> tuple[Channel, ...]:
        return tuple(getattr(self, name) for name in CHANNEL_NAMES)

    @classmethod
    def from_channels(cls, channels: Sequence[Channel]) -> CharacteristicVector:
        if len(channels) != len(CHANNEL_NAMES):
            raise ValueError("a characteristic vector has exactly 7 channels")
        return cls(**dict(zip(CHANNEL_NAMES, channels)))

    def channel(self, name: str) -> Channel:
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {name: {"confidence": ch.confidence, "flags": ch.flags, "values": list(ch.values)}
                for name, ch in zip(CHANNEL_NAMES, self.channels)}

    @classmethod
    def from_dict(cls, data: Mapping) -> CharacteristicVector:
        return cls(**{name: Channel(float(data[name]["confidence"]), int(data[name]["flags"]),
                                    tuple(data[name]["values"]))
                      for name in CHANNEL_NAMES})


def observed(confidence: float = 1.0, *, position=(0.0, 0.0), movement=(0.0, 0.0), group_count: int = 0,
             activity: int = 0, possession: int = 0, grouping: int = 0, markings: int = 0,
             acoustics: int = 0) -> CharacteristicVector:
    """Build a vector where every channel carries the same confidence."""
    return CharacteristicVector(
        position=Channel(confidence, 0, tuple(float(v) for v in position)),
        activity=Channel(confidence, int(activity)),
        possession=Channel(confidence, int(possession)),
        movement=Channel(confidence, 0, tuple(float(v) for v in movement)),
        grouping=Channel(confidence, int(grouping), (int(group_count),)),
        markings=Channel(confidence, int(markings)),
        acoustics=Channel(confidence, int(acoustics)),
    )


@dataclass(frozen=True)
class TargetValue:
    economic: float = 0.0
    human_life: float = 0.0
    strategic: float = 0.0

    def __post_init__(self):
        for v in (self.economic, self.human_life, self.strategic):
            if not math.isfinite(v) or v < 0:
                raise ValueError("target value components must be finite and >= 0")

    def peak(self) -> float:
        return max(self.economic, self.human_life, self.strategic)


@dataclass(frozen=True)
class ResourceState:
    fuel: float = 0.0
    endurance: int = 0
    weapons: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        if self.fuel < 0 or self.endurance < 0 or any(c < 0 for _, c in self.weapons):
            raise ValueError("resource quantities must be non-negative")

    def count(self, munition: str) -> int:
        return sum(c for kind, c in self.weapons if kind == munition)

    def fire(self, munition: str) -> ResourceState:
        if self.count(munition) <= 0:
            raise ContractViolation(f"no {munition} left to fire")
        spent = False
        weapons = []
        for kind, c in self.weapons:
            if kind == munition and c > 0 and not spent:
                c -= 1
                spent = True
            weapons.append((kind, c))
        return replace(self, weapons=tuple(weapons))

    def disarmed(self) -> ResourceState:
        return replace(self, weapons=tuple((kind, 0) for kind, _ in self.weapons))

    def to_dict(self) -> dict:
        return {"fuel": self.fuel, "endurance": self.endurance, "weapons": [[k, c] for k, c in self.weapons]}

    @classmethod
    def from_dict(cls, data: Mapping) -> ResourceState:
        return cls(float(data["fuel"]), int(data["endurance"]), tuple((k, int(c)) for k, c in data["weapons"]))


@dataclass(frozen=True)
class PerceptualThresholds:
    per_channel_min: tuple[float, ...] = (0.5,) * 7
    hostility_threshold: float = 0.6
    gotcha_window: int = 3
    autonomy_confidence: float = 0.8

    def __post_init__(self):
        if len(self.per_channel_min) != 7 or not all(0.0 <= v <= 1.0 for v in self.per_channel_min):
            raise ValueError("per_channel_min needs 7 confidences in [0, 1]")
        if not 0.0 < self.hostility_threshold <= 1.0:
            raise ValueError("hostility_threshold must be in (0, 1]")
        if self.gotcha_window < 1:
            raise ValueError("gotcha_window must be >= 1")
        if not 0.0 <= self.autonomy_confidence <= 1.0:
            raise ValueError("autonomy_confidence must be in [0, 1]")

    def to_dict(self) -> dict:
        return {"per_channel_min": list(self.per_channel_min), "hostility_threshold": self.hostility_threshold,
                "gotcha_window": self.gotcha_window, "autonomy_confidence": self.autonomy_confidence}

    @classmethod
    def from_dict(cls, data: Mapping) -> PerceptualThresholds:
        return cls(tuple(float(v) for v in data["per_channel_min"]), float(data["hostility_threshold"]),
                   int(data["gotcha_window"]), float(data["autonomy_confidence"]))


@dataclass(frozen=True)
class Classification:
    nature: TargetNature
    status: TargetStatus
    role: CombatRole
    value: TargetValue = TargetValue()
    confidence: float = 0.0


@dataclass(frozen=True)
class ClassificationRow:
    """Ordered-table row: every channel in ``requires`` must carry all listed flags.

    The row only matches when the weakest referenced channel is at least
    ``floor`` confident; below that the evidence falls through to later rows.
    An empty ``requires`` matches anything (the default row).
    """

    requires: tuple[tuple[str, int], ...]
    nature: TargetNature
    status: TargetStatus
    role: CombatRole
    value: TargetValue = TargetValue()
    floor: float = 0.0

    def match(self, cv: CharacteristicVector) -> float | None:
        if not self.requires:
            return 0.0
        confidence = 1.0
        for name, flags in self.requires:
            ch = cv.channel(name)
            if ch.confidence <= 0.0 or not ch.has(flags):
                return None
            confidence = min(confidence, ch.confidence)
        if confidence < self.floor:
            return None
        return confidence

    def to_dict(self) -> dict:
        return {"requires": [[n, f] for n, f in self.requires], "nature": int(self.nature),
                "status": int(self.status), "role": int(self.role),
                "value": [self.value.economic, self.value.human_life, self.value.strategic], "floor": self.floor}

    @classmethod
    def from_dict(cls, data: Mapping) -> ClassificationRow:
        return cls(tuple((n, int(f)) for n, f in data["requires"]), TargetNature(data["nature"]),
                   TargetStatus(data["status"]), CombatRole(data["role"]), TargetValue(*data["value"]),
                   float(data["floor"]))


DEFAULT_ROW = ClassificationRow((), TargetNature.UNDETERMINED, TargetStatus.UNDETERMINED, CombatRole.NON_COMBATANT)


@dataclass(frozen=True)
class ForbiddenClause:
    """One Laws-of-War / RoE prohibition.

    ``subject`` is ``nature``, ``status``, ``role`` (equality against the enum
    code) or a channel name (all flags in ``value`` present with non-zero
    confidence).
    """

    subject: str
    value: int

    def __post_init__(self):
        if self.subject not in ("nature", "status", "role") + CHANNEL_NAMES:
            raise ValueError(f"unknown forbidden-clause subject {self.subject!r}")

    def holds(self, nature, status, role, cv: CharacteristicVector) -> bool:
        if self.subject == "nature":
            return int(nature) == self.value
        if self.subject == "status":
            return int(status) == self.value
        if self.subject == "role":
            return int(role) == self.value
        ch = cv.channel(self.subject)
        return ch.confidence > 0.0 and ch.has(self.value)

    @classmethod
    def parse(cls, text: str) -> ForbiddenClause:
        subject, _, raw = text.partition(":")
        subject = subject.strip()
        if subject == "nature":
            return cls(subject, int(TargetNature.parse(raw)))
        if subject == "status":
            return cls(subject, int(TargetStatus.parse(raw)))
        if subject == "role":
            return cls(subject, int(CombatRole.parse(raw)))
        if subject not in CHANNEL_FLAGS:
            raise ValueError(f"unknown forbidden-clause subject {subject!r}")
        return cls(subject, parse_flags(subject, raw.split("+")))

    def __str__(self) -> str:
        if self.subject == "nature":
            return f"nature:{TargetNature(self.value).label}"
        if self.subject == "status":
            return f"status:{TargetStatus(self.value).label}"
        if self.subject == "role":
            return f"role:{CombatRole(self.value).label}"
        return f"{self.subject}:{'+'.join(flag_labels(self.subject, self.value))}"


NON_COMBATANT_CLAUSE = ForbiddenClause("role", int(CombatRole.NON_COMBATANT))


@dataclass(frozen=True)
class MissionConfig:
    preplanned_targets: frozenset[int] = frozenset()
    forbidden_criteria: tuple[ForbiddenClause, ...] = (NON_COMBATANT_CLAUSE,)
    ceasefire_timetable: int | None = None
    thresholds: PerceptualThresholds = PerceptualThresholds()
    response_table: Mapping[ValueBand, str] = field(default_factory=dict)
    classification_table: tuple[ClassificationRow, ...] = ()
    ruleset_version: int = 1
    value_bands: tuple[float, float] = (10.0, 100.0)
    target_values: Mapping[int, TargetValue] = field(default_factory=dict)

    def __post_init__(self):
        if NON_COMBATANT_CLAUSE not in self.forbidden_criteria:
            object.__setattr__(self, "forbidden_criteria", (NON_COMBATANT_CLAUSE,) + tuple(self.forbidden_criteria))
        missing = [band.label for band in ValueBand if band not in self.response_table]
        if missing:
            raise ValueError(f"response table has no munition for band(s) {', '.join(missing)}")
        if self.ruleset_version < 1:
            raise ValueError("ruleset_version must be >= 1")
        lo, hi = self.value_bands
        if not 0 <= lo <= hi:
            raise ValueError("value bands must satisfy 0 <= low/medium split <= medium/high split")

    __hash__ = None  # mappings inside

    def to_dict(self) -> dict:
        return {
            "preplanned_targets": sorted(self.preplanned_targets),
            "forbidden_criteria": [[c.subject, c.value] for c in self.forbidden_criteria],
            "ceasefire_timetable": self.ceasefire_timetable,
            "thresholds": self.thresholds.to_dict(),
            "response_table": {band.label: self.response_table[band] for band in ValueBand},
            "classification_table": [row.to_dict() for row in self.classification_table],
            "ruleset_version": self.ruleset_version,
            "value_bands": list(self.value_bands),
            "target_values": {str(t): [v.economic, v.human_life, v.strategic]
                              for t, v in sorted(self.target_values.items())},
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> MissionConfig:
        return cls(
            preplanned_targets=frozenset(int(t) for t in data["preplanned_targets"]),
            forbidden_criteria=tuple(ForbiddenClause(s, int(v)) for s, v in data["forbidden_criteria"]),
            ceasefire_timetable=data["ceasefire_timetable"],
            thresholds=PerceptualThresholds.from_dict(data["thresholds"]),
            response_table={ValueBand.parse(k): v for k, v in data["response_table"].items()},
            classification_table=tuple(ClassificationRow.from_dict(r) for r in data["classification_table"]),
            ruleset_version=int(data["ruleset_version"]),
            value_bands=tuple(float(v) for v in data["value_bands"]),
            target_values={int(t): TargetValue(*v) for t, v in data["target_values"].items()},
        )


def value_band(value: TargetValue, bands: tuple[float, float]) -> ValueBand:
    peak = value.peak()
    if peak < bands[0]:
        return ValueBand.LOW
    if peak < bands[1]:
        return ValueBand.MEDIUM
    return ValueBand.HIGH


def gate_characteristics(cv: CharacteristicVector, t: PerceptualThresholds) -> CharacteristicVector:
    """Zero every channel whose confidence is below its pre-mission minimum."""
    gated = []
    for name, ch, minimum in zip(CHANNEL_NAMES, cv.channels, t.per_channel_min):
        gated.append(ch if ch.confidence >= minimum else empty_channel(name))
    return CharacteristicVector.from_channels(gated)


def classify_target(gated: CharacteristicVector, cfg: MissionConfig) -> Classification:
    """First matching row of the mission's classification table wins."""
    for row in tuple(cfg.classification_table) + (DEFAULT_ROW,):
        confidence = row.match(gated)
        if confidence is not None:
            return Classification(row.nature, row.status, row.role, row.value, confidence)
    raise AssertionError("default row always matches")


def select_response(c: Classification, cfg: MissionConfig, r: ResourceState) -> str | None:
    """Munition for a hostile target, or ``None`` when nothing feasible remains."""
    if c.nature != TargetNature.HOSTILE:
        raise ContractViolation("responses are only selected for hostile targets")
    munition = cfg.response_table[value_band(c.value, cfg.value_bands)]
    if r.count(munition) > 0:
        return munition
    return None


HOSTILE_INDICATORS: tuple[tuple[str, int], ...] = (
    ("activity", int(Activity.FIRING)),
    ("activity", int(Activity.EMPLACING)),
    ("possession", int(Possession.WEAPON)),
    ("grouping", int(Grouping.FORMATION)),
    ("acoustics", int(Acoustics.GUNFIRE)),
)


def evidence_score(cv: CharacteristicVector, indicators=HOSTILE_INDICATORS) -> float:
    present = sum(1 for name, flag in indicators if cv.channel(name).has(flag))
    return present / len(indicators)


def hostility_score(window: Sequence[CharacteristicVector], t: PerceptualThresholds,
                    indicators: Sequence[tuple[str, int]] = HOSTILE_INDICATORS) -> float:
    """Mean per-key hostile evidence over an observation window.

    ``t`` is accepted for symmetry with the trigger check; the score itself
    does not depend on it.
    """
    if not window:
        raise ContractViolation("hostility_score needs at least one vector")
    return sum(evidence_score(cv, indicators) for cv in window) / len(window)


def is_forbidden(nature, status, role, cv: CharacteristicVector, clauses: Iterable[ForbiddenClause]) -> bool:
    return any(clause.holds(nature, status, role, cv) for clause in clauses)


def _row(requires, nature, status, role, floor=0.3):
    return ClassificationRow(tuple(requires), nature, status, role, TargetValue(), floor)


_A, _P, _M, _S = Activity, Possession, Markings, Acoustics
_N, _T, _R = TargetNature, TargetStatus, CombatRole

REFERENCE_TABLE: tuple[ClassificationRow, ...] = (
    _row([("activity", _A.DISABLED)], _N.UNDETERMINED, _T.NEUTRALIZED, _R.NON_COMBATANT, floor=0.0),
    _row([("activity", _A.PLAYING)], _N.NEUTRAL, _T.ACTIVE, _R.NON_COMBATANT),
    _row([("markings", _M.MEDICAL_EMBLEM)], _N.NEUTRAL, _T.ACTIVE, _R.NON_COMBATANT),
    _row([("acoustics", _S.SURRENDER), ("activity", _A.COMPLYING)], _N.HOSTILE, _T.DORMANT, _R.COMBATANT),
    _row([("activity", _A.FIRING), ("possession", _P.WEAPON)], _N.HOSTILE, _T.ACTIVE, _R.COMBATANT),
    _row([("activity", _A.EMPLACING), ("possession", _P.WEAPON)], _N.HOSTILE, _T.ACTIVE, _R.COMBATANT),
    _row([("markings", _M.MILITARY_INSIGNIA), ("possession", _P.WEAPON)], _N.HOSTILE, _T.ACTIVE, _R.COMBATANT),
    _row([("markings", _M.CIVILIAN_DRESS)], _N.NEUTRAL, _T.ACTIVE, _R.NON_COMBATANT),
    _row([("markings", _M.MILITARY_INSIGNIA)], _N.UNDETERMINED, _T.ACTIVE, _R.COMBATANT),
)

REFERENCE_FORBIDDEN: tuple[ForbiddenClause, ...] = (
    NON_COMBATANT_CLAUSE,
    ForbiddenClause("nature", int(TargetNature.FRIENDLY)),
    ForbiddenClause("nature", int(TargetNature.NEUTRAL)),
    ForbiddenClause("status", int(TargetStatus.NEUTRALIZED)),
    ForbiddenClause("markings", int(Markings.MEDICAL_EMBLEM)),
)


def reference_config(**overrides) -> MissionConfig:
    """Mission configuration used by the shipped scenarios unless overridden."""
    settings = dict(
        forbidden_criteria=REFERENCE_FORBIDDEN,
        response_table={ValueBand.LOW: "light", ValueBand.MEDIUM: "light", ValueBand.HIGH: "heavy"},
        classification_table=REFERENCE_TABLE,
    )
    settings.update(overrides)
    return MissionConfig(**settings)
