"""Scenario documents: a flat, section-oriented UTF-8 text format.

    # comment
    [scenario]
    name = toddler-abort
    seed = 7

    [target 21]
    position = 8 0
    activity = Emplacing
    possession = Weapon

Sections may carry arguments (``[target 21]``, ``[link 1 2]``) and some may
repeat (``[classify]``, ``[forbid]``, ``[event]``).  The grammar is given in
EBNF in ``docs/scenario-grammar.md``.  ``load`` reports every problem at once
in a ``SchemaError``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .command import Decision, LinkParams, OperatorMode, OperatorPolicy
from .domain import (
    CHANNEL_FLAGS,
    CHANNEL_NAMES,
    ClassificationRow,
    CombatRole,
    EntityKind,
    EntityRef,
    ForbiddenClause,
    MissionConfig,
    PerceptualThresholds,
    REFERENCE_FORBIDDEN,
    REFERENCE_TABLE,
    ResourceState,
    TargetNature,
    TargetStatus,
    TargetValue,
    ValueBand,
    parse_flags,
)
from .keys import NAME_LIMIT
from .world import DEFAULT_SENSOR_RANGE, Behavior, Effect, Truth

CORPUS_PACKAGE = "ckss.data.scenarios"
EVENT_KINDS = ("fail", "capture", "notice", "tamper", "inject", "maintenance")
TAMPER_MODES = ("flip", "stale", "range")
SINGLE = ("scenario", "link", "mission", "respond", "operator")
REPEATED = ("classify", "forbid", "event")
WITH_ID = ("platform", "target", "script", "command", "effect", "mission", "link")


class SchemaError(Exception):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass
class Section:
    name: str
    args: tuple[str, ...]
    line: int
    entries: list[tuple[str, str, int]] = field(default_factory=list)

    @property
    def path(self) -> str:
        return "[" + " ".join((self.name,) + self.args) + "]"

    def get(self, key: str, default=None):
        for k, v, _ in self.entries:
            if k == key:
                return v
        return default

    def all(self, key: str) -> list[str]:
        return [v for k, v, _ in self.entries if k == key]


def parse_sections(text: str, errors: list[str]) -> list[Section]:
    sections: list[Section] = []
    current = None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                errors.append(f"line {n}: unterminated section header")
                current = None
                continue
            words = line[1:-1].split()
            if not words:
                errors.append(f"line {n}: empty section header")
                current = None
                continue
            current = Section(words[0].lower(), tuple(words[1:]), n)
            sections.append(current)
            continue
        key, sep, value = line.partition("=")
        if not sep:
            errors.append(f"line {n}: expected 'key = value'")
            continue
        if current is None:
            errors.append(f"line {n}: entry outside any section")
            continue
        current.entries.append((" ".join(key.split()).lower(), value.strip(), n))
    return sections


@dataclass
class PlatformSpec:
    id: int
    name: str
    position: tuple[float, float] = (0.0, 0.0)
    fidelity: float = 1.0
    sensor_range: float = DEFAULT_SENSOR_RANGE
    noise_scale: float = 1.0
    payloads: frozenset[str] = frozenset()
    resources: ResourceState = ResourceState()
    assigned: frozenset[int] = frozenset()

    @property
    def ref(self) -> EntityRef:
        return EntityRef(EntityKind.PLATFORM, self.id, self.name)


@dataclass
class TargetSpec:
    id: int
    name: str
    position: tuple[float, float] = (0.0, 0.0)
    velocity: tuple[float, float] = (0.0, 0.0)
    nature: TargetNature = TargetNature.UNDETERMINED
    value: TargetValue = TargetValue()
    truth: Truth = Truth()
    script: list[tuple[int, Behavior]] = field(default_factory=list)

    @property
    def ref(self) -> EntityRef:
        return EntityRef(EntityKind.TARGET, self.id, self.name)


@dataclass
class CommandSpec:
    id: int
    name: str
    position: tuple[float, float] = (0.0, 0.0)

    @property
    def ref(self) -> EntityRef:
        return EntityRef(EntityKind.COMMAND_CENTRE, self.id, self.name)


@dataclass(frozen=True)
class EventSpec:
    tick: int
    kind: str
    params: tuple[tuple[str, str], ...]

    def get(self, key, default=None):
        return dict(self.params).get(key, default)


@dataclass
class Scenario:
    name: str
    seed: int = 0
    max_ticks: int = 200
    staleness_limit: int = 50
    safety_radius: float = 10.0
    swap_mode: str = "normative"
    swap_timeout: int = 20
    default_link: LinkParams = LinkParams()
    links: dict[tuple[int, int], LinkParams] = field(default_factory=dict)
    operator: OperatorPolicy = field(default_factory=OperatorPolicy)
    mission: dict = field(default_factory=dict)
    mission_overrides: dict[int, dict] = field(default_factory=dict)
    classification_table: tuple[ClassificationRow, ...] = REFERENCE_TABLE
    forbidden: tuple[ForbiddenClause, ...] = REFERENCE_FORBIDDEN
    response_table: dict = field(default_factory=lambda: {ValueBand.LOW: "light", ValueBand.MEDIUM: "light",
                                                          ValueBand.HIGH: "heavy"})
    effects: dict[str, Effect] = field(default_factory=dict)
    platforms: list[PlatformSpec] = field(default_factory=list)
    targets: list[TargetSpec] = field(default_factory=list)
    commands: list[CommandSpec] = field(default_factory=list)
    events: list[EventSpec] = field(default_factory=list)

    def mission_config(self, platform_id: int) -> MissionConfig:
        settings = dict(self.mission)
        settings.update(self.mission_overrides.get(platform_id, {}))
        thresholds = PerceptualThresholds(
            per_channel_min=settings.get("per_channel_min", (0.5,) * 7),
            hostility_threshold=settings.get("hostility_threshold", 0.6),
            gotcha_window=settings.get("gotcha_window", 3),
            autonomy_confidence=settings.get("autonomy_confidence", 0.8),
        )
        return MissionConfig(
            preplanned_targets=frozenset(settings.get("preplanned", ())),
            forbidden_criteria=self.forbidden,
            ceasefire_timetable=settings.get("ceasefire"),
            thresholds=thresholds,
            response_table=dict(self.response_table),
            classification_table=self.classification_table,
            ruleset_version=settings.get("ruleset_version", 1),
            value_bands=settings.get("value_bands", (10.0, 100.0)),
            target_values={t.id: t.value for t in self.targets},
        )


# -- field parsers -------------------------------------------------------------------
# each raises ValueError with a short reason; the caller adds the path

def _int(text: str, minimum: int | None = 0) -> int:
    value = int(text)
    if minimum is not None and value < minimum:
        raise ValueError(f"must be >= {minimum}")
    return value


def _float(text: str, lo: float | None = None, hi: float | None = None) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError("must be finite")
    if lo is not None and value < lo or hi is not None and value > hi:
        raise ValueError(f"must be within [{lo}, {hi}]")
    return value


def _pair(text: str) -> tuple[float, float]:
    parts = text.replace(",", " ").split()
    if len(parts) != 2:
        raise ValueError("needs two numbers")
    return (_float(parts[0]), _float(parts[1]))


def _ids(text: str) -> tuple[int, ...]:
    return tuple(_int(p, 1) for p in text.replace(",", " ").split())


def _words(text: str) -> list[str]:
    return text.replace(",", " ").replace("+", " ").split()


def _name(text: str) -> str:
    if not text:
        raise ValueError("must be non-empty")
    if len(text.encode("utf-8")) > NAME_LIMIT:
        raise ValueError(f"longer than {NAME_LIMIT} bytes")
    return text


def _munitions(text: str) -> tuple[tuple[str, int], ...]:
    out = []
    for item in text.split():
        kind, sep, count = item.partition(":")
        if not sep or not kind:
            raise ValueError(f"expected kind:count, got {item!r}")
        out.append((kind, _int(count)))
    return tuple(out)


def _behavior(text: str) -> Behavior:
    changes = {}
    for item in text.split():
        field_name, sep, raw = item.partition(":")
        if not sep:
            raise ValueError(f"expected field:value, got {item!r}")
        if field_name == "velocity":
            changes["velocity"] = _pair(raw)
        elif field_name == "group_count":
            changes["group_count"] = _int(raw)
        elif field_name in CHANNEL_FLAGS and CHANNEL_FLAGS[field_name] is not None:
            changes[field_name] = parse_flags(field_name, _words(raw))
        else:
            raise ValueError(f"unknown behaviour field {field_name!r}")
    return Behavior(**changes)


def _truth(section: Section) -> Truth:
    values = {}
    for name in ("activity", "possession", "grouping", "markings", "acoustics"):
        raw = section.get(name)
        if raw is not None:
            values[name] = parse_flags(name, _words(raw))
    raw = section.get("group_count")
    if raw is not None:
        values["group_count"] = _int(raw)
    return Truth(**values)


def _row(section: Section) -> ClassificationRow:
    requires = []
    for item in (section.get("when") or "").split():
        channel, sep, raw = item.partition(":")
        if not sep or channel not in CHANNEL_NAMES or CHANNEL_FLAGS[channel] is None:
            raise ValueError(f"bad condition {item!r}")
        requires.append((channel, parse_flags(channel, raw.split("+"))))
    if not requires:
        raise ValueError("'when' needs at least one channel:flag condition")
    result = (section.get("result") or "").split()
    if len(result) != 3:
        raise ValueError("'result' needs nature, status and role")
    value = TargetValue(*(_float(v, 0.0) for v in section.get("value", "0 0 0").split()))
    return ClassificationRow(tuple(requires), TargetNature.parse(result[0]), TargetStatus.parse(result[1]),
                             CombatRole.parse(result[2]), value, _float(section.get("floor", "0"), 0.0, 1.0))


class _Collector:
    def __init__(self):
        self.errors: list[str] = []

    def field(self, section: Section, key: str, parse, default=None, required=False):
        raw = section.get(key)
        if raw is None:
            if required:
                self.errors.append(f"{section.path} {key}: required")
            return default
        try:
            return parse(raw)
        except (ValueError, TypeError) as exc:
            self.errors.append(f"{section.path} {key}: {exc}")
            return default

    def check_keys(self, section: Section, allowed) -> None:
        for k, _, n in section.entries:
            if k not in allowed and not (section.name == "script" and k.startswith("at ")):
                self.errors.append(f"{section.path} {k}: unknown key (line {n})")


_KEYS = {
    "scenario": {"name", "seed", "max_ticks", "staleness_limit", "safety_radius", "swap_schedule", "swap_timeout"},
    "link": {"delay", "loss"},
    "mission": {"preplanned", "ceasefire", "per_channel_min", "hostility_threshold", "gotcha_window",
                "autonomy_confidence", "value_bands", "ruleset_version"},
    "classify": {"when", "result", "value", "floor"},
    "forbid": {"clause"},
    "respond": {"low", "medium", "high"},
    "effect": {"p", "flight"},
    "platform": {"name", "position", "fidelity", "range", "noise", "payloads", "munitions", "fuel", "endurance",
                 "assigned"},
    "target": {"name", "position", "velocity", "nature", "value", "activity", "possession", "grouping",
               "group_count", "markings", "acoustics"},
    "script": set(),
    "command": {"name", "position"},
    "operator": {"mode", "approve", "deny"},
    "event": {"at", "kind", "platform", "by", "from", "to", "tick", "mode", "target", "version", "add", "byte"},
}


def _mission_settings(c: _Collector, s: Section) -> dict:
    out = {}
    parsers = {
        "preplanned": _ids,
        "ceasefire": _int,
        "per_channel_min": lambda t: tuple(_float(v, 0.0, 1.0) for v in t.split()),
        "hostility_threshold": lambda t: _float(t, 0.0, 1.0),
        "gotcha_window": lambda t: _int(t, 1),
        "autonomy_confidence": lambda t: _float(t, 0.0, 1.0),
        "value_bands": _pair,
        "ruleset_version": lambda t: _int(t, 1),
    }
    for key, parse in parsers.items():
        value = c.field(s, key, parse)
        if value is not None:
            out[key] = value
    try:
        PerceptualThresholds(**{k: v for k, v in (
            ("per_channel_min", out.get("per_channel_min", (0.5,) * 7)),
            ("hostility_threshold", out.get("hostility_threshold", 0.6)),
            ("gotcha_window", out.get("gotcha_window", 3)),
            ("autonomy_confidence", out.get("autonomy_confidence", 0.8)))})
    except ValueError as exc:
        c.errors.append(f"{s.path}: {exc}")
    return out


def parse_scenario(text: str) -> Scenario:
    c = _Collector()
    sections = parse_sections(text, c.errors)
    seen_single = set()
    for s in sections:
        if s.name not in _KEYS:
            c.errors.append(f"{s.path}: unknown section (line {s.line})")
            continue
        c.check_keys(s, _KEYS[s.name])
        needs_id = s.name in ("platform", "target", "script", "command", "effect")
        if needs_id and len(s.args) != 1:
            c.errors.append(f"{s.path}: needs exactly one argument (line {s.line})")
        if s.name in SINGLE and not s.args:
            if s.name in seen_single:
                c.errors.append(f"{s.path}: repeated section (line {s.line})")
            seen_single.add(s.name)

    def only(name):
        return [s for s in sections if s.name == name]

    head = next((s for s in only("scenario")), None)
    if head is None:
        c.errors.append("[scenario]: required section missing")
        head = Section("scenario", (), 0)
    sc = Scenario(name=c.field(head, "name", _name, "unnamed", required=True))
    sc.seed = c.field(head, "seed", _int, 0)
    sc.max_ticks = c.field(head, "max_ticks", lambda t: _int(t, 1), 200)
    sc.staleness_limit = c.field(head, "staleness_limit", _int, 50)
    sc.safety_radius = c.field(head, "safety_radius", lambda t: _float(t, 0.0), 10.0)
    sc.swap_timeout = c.field(head, "swap_timeout", lambda t: _int(t, 1), 20)

    def schedule(t):
        if t not in ("normative", "naive"):
            raise ValueError("must be 'normative' or 'naive'")
        return t
    sc.swap_mode = c.field(head, "swap_schedule", schedule, "normative")

    def link(s):
        try:
            return LinkParams(c.field(s, "delay", _int, 0), c.field(s, "loss", lambda t: _float(t, 0.0, 1.0), 0.0))
        except ValueError as exc:
            c.errors.append(f"{s.path}: {exc}")
            return LinkParams()
    for s in only("link"):
        if not s.args:
            sc.default_link = link(s)
        elif len(s.args) == 2:
            try:
                sc.links[(int(s.args[0]), int(s.args[1]))] = link(s)
            except ValueError:
                c.errors.append(f"{s.path}: endpoints must be entity ids")
        else:
            c.errors.append(f"{s.path}: needs no argument or two entity ids")

    for s in only("mission"):
        settings = _mission_settings(c, s)
        if not s.args:
            sc.mission = settings
        else:
            try:
                sc.mission_overrides[int(s.args[0])] = settings
            except ValueError:
                c.errors.append(f"{s.path}: argument must be a platform id")

    rows = []
    for s in only("classify"):
        try:
            rows.append(_row(s))
        except ValueError as exc:
            c.errors.append(f"{s.path} (line {s.line}): {exc}")
    if rows:
        sc.classification_table = tuple(rows)

    clauses = []
    for s in only("forbid"):
        for raw in s.all("clause"):
            try:
                clauses.append(ForbiddenClause.parse(raw))
            except ValueError as exc:
                c.errors.append(f"{s.path} clause: {exc}")
    if only("forbid"):
        sc.forbidden = tuple(clauses)

    for s in only("respond"):
        table = {}
        for band in ValueBand:
            raw = s.get(band.name.lower())
            if raw is None:
                c.errors.append(f"{s.path} {band.name.lower()}: required")
            else:
                table[band] = raw
        sc.response_table = table

    for s in only("effect"):
        if len(s.args) != 1:
            continue
        try:
            sc.effects[s.args[0]] = Effect(c.field(s, "p", lambda t: _float(t, 0.0, 1.0), 1.0),
                                           c.field(s, "flight", lambda t: _int(t, 1), 1))
        except ValueError as exc:
            c.errors.append(f"{s.path}: {exc}")

    for s in only("operator"):
        def mode(t):
            for m in OperatorMode:
                if m.value == t:
                    return m
            raise ValueError("must be scripted, deny or prompt")
        table = {t: Decision.APPROVE for t in c.field(s, "approve", _ids, ())}
        table.update({t: Decision.DENY for t in c.field(s, "deny", _ids, ())})
        sc.operator = OperatorPolicy(c.field(s, "mode", mode, OperatorMode.ALWAYS_DENY), table)

    def entity_id(s):
        try:
            value = int(s.args[0])
        except (IndexError, ValueError):
            c.errors.append(f"{s.path}: argument must be an entity id")
            return None
        if value < 1:
            c.errors.append(f"{s.path}: entity id must be >= 1")
            return None
        return value

    for s in only("platform"):
        pid = entity_id(s)
        if pid is None:
            continue
        resources = ResourceState()
        try:
            resources = ResourceState(c.field(s, "fuel", lambda t: _float(t, 0.0), 100.0),
                                      c.field(s, "endurance", _int, 1000),
                                      c.field(s, "munitions", _munitions, ()))
        except ValueError as exc:
            c.errors.append(f"{s.path}: {exc}")
        payloads = frozenset(_words(s.get("payloads", ""))) or frozenset(k for k, _ in resources.weapons)
        sc.platforms.append(PlatformSpec(
            pid, c.field(s, "name", _name, f"platform-{pid}"),
            c.field(s, "position", _pair, (0.0, 0.0)),
            c.field(s, "fidelity", lambda t: _float(t, 0.0, 1.0), 1.0),
            c.field(s, "range", lambda t: _float(t, 0.0), DEFAULT_SENSOR_RANGE),
            c.field(s, "noise", lambda t: _float(t, 0.0), 1.0),
            payloads, resources, frozenset(c.field(s, "assigned", _ids, ()))))

    for s in only("target"):
        tid = entity_id(s)
        if tid is None:
            continue
        truth = Truth()
        try:
            truth = _truth(s)
        except ValueError as exc:
            c.errors.append(f"{s.path}: {exc}")
        value = TargetValue()
        try:
            value = TargetValue(*c.field(s, "value", lambda t: tuple(_float(v, 0.0) for v in t.split()), ()))
        except (ValueError, TypeError) as exc:
            c.errors.append(f"{s.path} value: {exc}")
        sc.targets.append(TargetSpec(
            tid, c.field(s, "name", _name, f"target-{tid}"),
            c.field(s, "position", _pair, (0.0, 0.0)), c.field(s, "velocity", _pair, (0.0, 0.0)),
            c.field(s, "nature", TargetNature.parse, TargetNature.UNDETERMINED), value, truth))

    for s in only("command"):
        cid = entity_id(s)
        if cid is not None:
            sc.commands.append(CommandSpec(cid, c.field(s, "name", _name, f"command-{cid}"),
                                           c.field(s, "position", _pair, (0.0, 0.0))))

    targets = {t.id: t for t in sc.targets}
    for s in only("script"):
        tid = entity_id(s)
        if tid is None:
            continue
        if tid not in targets:
            c.errors.append(f"{s.path}: no target {tid}")
            continue
        steps = []
        for k, v, n in s.entries:
            try:
                steps.append((_int(k[3:].strip(), 1), _behavior(v)))
            except ValueError as exc:
                c.errors.append(f"{s.path} {k} (line {n}): {exc}")
        ticks = [t for t, _ in steps]
        if any(b <= a for a, b in zip(ticks, ticks[1:])):
            c.errors.append(f"{s.path}: script ticks must strictly increase")
        targets[tid].script.extend(steps)

    for s in only("event"):
        at = c.field(s, "at", lambda t: _int(t, 1), None, required=True)
        kind = s.get("kind")
        if kind not in EVENT_KINDS:
            c.errors.append(f"{s.path} kind (line {s.line}): must be one of {', '.join(EVENT_KINDS)}")
            continue
        if at is not None:
            sc.events.append(EventSpec(at, kind, tuple((k, v) for k, v, _ in s.entries if k not in ("at", "kind"))))

    _cross_check(sc, c)
    if c.errors:
        raise SchemaError(c.errors)
    sc.events.sort(key=lambda e: e.tick)
    return sc


def _cross_check(sc: Scenario, c: _Collector) -> None:
    seen: dict[int, str] = {}
    for kind, items in (("platform", sc.platforms), ("target", sc.targets), ("command", sc.commands)):
        for item in items:
            if item.id in seen:
                c.errors.append(f"[{kind} {item.id}]: duplicate entity id {item.id} (already a {seen[item.id]})")
            else:
                seen[item.id] = kind
    if not sc.platforms:
        c.errors.append("[platform]: at least one platform is required")
    target_ids = {t.id for t in sc.targets}
    platform_ids = {p.id for p in sc.platforms}
    for label, settings in [("[mission]", sc.mission)] + [(f"[mission {k}]", v)
                                                         for k, v in sc.mission_overrides.items()]:
        for t in settings.get("preplanned", ()):
            if t not in target_ids:
                c.errors.append(f"{label} preplanned: no target {t}")
    for pid in sc.mission_overrides:
        if pid not in platform_ids:
            c.errors.append(f"[mission {pid}]: no platform {pid}")
    for p in sc.platforms:
        for t in p.assigned:
            if t not in target_ids:
                c.errors.append(f"[platform {p.id}] assigned: no target {t}")
    for a, b in sc.links:
        for end in (a, b):
            if end not in seen:
                c.errors.append(f"[link {a} {b}]: no entity {end}")
    for e in sc.events:
        path = f"[event] at {e.tick} {e.kind}"
        for key in ("platform", "to"):
            raw = e.get(key)
            if raw is not None and raw != "all":
                for pid in raw.replace(",", " ").split():
                    if not pid.isdigit() or int(pid) not in platform_ids:
                        c.errors.append(f"{path} {key}: no platform {pid}")
        if e.kind in ("fail", "capture", "tamper", "maintenance") and e.get("platform") is None:
            c.errors.append(f"{path} platform: required")
        if e.kind == "capture" and e.get("by") not in ("hostile", "non-hostile"):
            c.errors.append(f"{path} by: must be hostile or non-hostile")
        if e.kind == "tamper" and e.get("mode", "flip") not in TAMPER_MODES:
            c.errors.append(f"{path} mode: must be one of {', '.join(TAMPER_MODES)}")
        if e.kind in ("notice", "inject"):
            src = e.get("from")
            if src is None or not src.isdigit() or int(src) not in seen:
                c.errors.append(f"{path} from: must name an entity")
            if e.get("to") is None:
                c.errors.append(f"{path} to: required")
        if e.kind == "notice":
            raw = e.get("tick")
            if raw is None or not raw.isdigit():
                c.errors.append(f"{path} tick: required non-negative integer")
        if e.kind == "inject":
            raw = e.get("target")
            if raw is None or not raw.isdigit() or int(raw) not in target_ids:
                c.errors.append(f"{path} target: must name a target")
        if e.kind == "maintenance":
            raw = e.get("version")
            if raw is None or not raw.isdigit():
                c.errors.append(f"{path} version: required integer")
            for clause in (e.get("add") or "").split():
                try:
                    ForbiddenClause.parse(clause)
                except ValueError as exc:
                    c.errors.append(f"{path} add: {exc}")


def load_scenario(source) -> Scenario:
    """Load from a path, a corpus scenario name, or document text."""
    if isinstance(source, Scenario):
        return source
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        return parse_scenario(read_scenario_text(str(source)))
    return parse_scenario(source)


def read_scenario_text(ref: str) -> str:
    path = Path(ref)
    if path.is_file():
        return path.read_text(encoding="utf-8")
    name = ref if ref.endswith(".scn") else f"{ref}.scn"
    corpus = resources.files(CORPUS_PACKAGE).joinpath(name)
    if corpus.is_file():
        return corpus.read_text(encoding="utf-8")
    raise SchemaError([f"{ref}: no such scenario file"])


def corpus_names() -> list[str]:
    return sorted(p.name[:-4] for p in resources.files(CORPUS_PACKAGE).iterdir() if p.name.endswith(".scn"))
