"""Deterministic discrete-tick battle-space: entities, scripted behaviour,
straight-line motion, the sensor model and the engagement effect model."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace

from .domain import (
    CHANNEL_FLAGS,
    Channel,
    CharacteristicVector,
    EntityKind,
    EntityRef,
    Activity,
    TargetNature,
    TargetStatus,
    empty_channel,
)

DEFAULT_SENSOR_RANGE = 100.0
WORLD_ACTOR = EntityRef(EntityKind.COMMAND_CENTRE, 0, "battlespace")


def stream(seed: int, name: str) -> random.Random:
    """Independent named random stream derived from the run seed."""
    return random.Random(f"{seed}/{name}")


@dataclass(frozen=True)
class Truth:
    """Ground-truth observables of an entity (flag bitmaps per channel)."""

    activity: int = 0
    possession: int = 0
    grouping: int = 0
    group_count: int = 0
    markings: int = 0
    acoustics: int = 0

    def flags(self, channel: str) -> int:
        return getattr(self, channel)

    def to_dict(self) -> dict:
        return {"activity": self.activity, "possession": self.possession, "grouping": self.grouping,
                "group_count": self.group_count, "markings": self.markings, "acoustics": self.acoustics}


@dataclass(frozen=True)
class Behavior:
    """A scripted change; ``None`` fields are left as they were."""

    activity: int | None = None
    possession: int | None = None
    grouping: int | None = None
    group_count: int | None = None
    markings: int | None = None
    acoustics: int | None = None
    velocity: tuple[float, float] | None = None

    def apply(self, e: Entity) -> None:
        changes = {name: getattr(self, name) for name in Truth.__dataclass_fields__
                   if getattr(self, name) is not None}
        e.truth = replace(e.truth, **changes)
        if self.velocity is not None:
            e.velocity = self.velocity


@dataclass
class Entity:
    ref: EntityRef
    position: tuple[float, float] = (0.0, 0.0)
    velocity: tuple[float, float] = (0.0, 0.0)
    script: list[tuple[int, Behavior]] = field(default_factory=list)
    alive: bool = True
    ground_truth_nature: TargetNature = TargetNature.UNDETERMINED
    truth: Truth = Truth()
    status: TargetStatus = TargetStatus.ACTIVE

    def __post_init__(self):
        ticks = [t for t, _ in self.script]
        if any(b <= a for a, b in zip(ticks, ticks[1:])):
            raise ValueError(f"script ticks for entity {self.ref.id} must strictly increase")

    @property
    def mobile(self) -> bool:
        return self.alive and self.velocity != (0.0, 0.0)

    def snapshot(self) -> dict:
        return {"id": self.ref.id, "kind": int(self.ref.kind), "name": self.ref.name,
                "position": list(self.position), "velocity": list(self.velocity), "alive": self.alive,
                "status": int(self.status), "truth": self.truth.to_dict()}


@dataclass(frozen=True)
class Effect:
    p: float = 1.0      # neutralization probability
    flight: int = 1     # ticks from launch to impact

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0 or self.flight < 1:
            raise ValueError("effect needs p in [0, 1] and flight >= 1")


@dataclass
class Engagement:
    id: int
    platform: int
    target: int
    munition: str
    launched: int
    impact: int
    outcome: str | None = None  # "neutralized", "missed" or "cancelled"

    @property
    def resolved(self) -> bool:
        return self.outcome is not None


class BattleSpace:
    def __init__(self, entities=(), *, seed: int = 0, effect_table=None, clock: int = 0):
        self.clock = clock
        self.rng_seed = seed
        self.entities: dict[int, Entity] = {}
        for e in entities:
            self.add(e)
        self.effect_table: dict[str, Effect] = dict(effect_table or {})
        self.engagements: dict[int, Engagement] = {}
        self._effects = stream(seed, "effects")
        self._sensing = stream(seed, "sensing")

    def add(self, e: Entity) -> None:
        if e.ref.id in self.entities:
            raise ValueError(f"duplicate entity id {e.ref.id}")
        self.entities[e.ref.id] = e

    def get(self, entity_id: int) -> Entity:
        return self.entities[entity_id]

    def targets(self) -> list[Entity]:
        return [e for _, e in sorted(self.entities.items()) if e.ref.kind == EntityKind.TARGET]

    def launch(self, platform: int, target: int, munition: str) -> Engagement:
        effect = self.effect_table.get(munition, Effect())
        eng = Engagement(len(self.engagements) + 1, platform, target, munition, self.clock,
                         self.clock + effect.flight)
        self.engagements[eng.id] = eng
        return eng

    def cancel(self, engagement_id: int) -> None:
        eng = self.engagements[engagement_id]
        if not eng.resolved:
            eng.outcome = "cancelled"

    def step(self) -> list[dict]:
        """Advance one tick; returns the changes made (for the log)."""
        self.clock += 1
        changes = []
        for _, e in sorted(self.entities.items()):
            if e.alive and e.velocity != (0.0, 0.0):
                e.position = (e.position[0] + e.velocity[0], e.position[1] + e.velocity[1])
        for _, e in sorted(self.entities.items()):
            for tick, behavior in e.script:
                if tick == self.clock and e.alive:
                    behavior.apply(e)
                    changes.append({"change": "script", "entity": e.ref.id})
        for _, eng in sorted(self.engagements.items()):
            if eng.resolved or eng.impact != self.clock:
                continue
            p = self.effect_table.get(eng.munition, Effect()).p
            hit = self._effects.random() < p
            target = self.entities[eng.target]
            if hit and target.alive:
                target.alive = False
                target.status = TargetStatus.NEUTRALIZED
                target.velocity = (0.0, 0.0)
                target.truth = replace(target.truth, activity=int(Activity.DISABLED), acoustics=0)
            eng.outcome = "neutralized" if hit else "missed"
            changes.append({"change": "impact", "engagement": eng.id, "target": eng.target,
                            "outcome": eng.outcome})
        return changes

    def snapshot(self) -> dict:
        return {"clock": self.clock, "entities": [e.snapshot() for _, e in sorted(self.entities.items())]}


def distance(a, b) -> float:
    return math.dist(a, b)


def sensing_confidence(fidelity: float, d: float, sensor_range: float) -> float:
    if sensor_range <= 0:
        return 0.0
    return fidelity * max(0.0, 1.0 - d / sensor_range)


def sense(w: BattleSpace, platform, target: EntityRef, rng: random.Random | None = None) -> CharacteristicVector:
    """Sensor reading of ``target`` from ``platform``.

    ``platform`` needs ``position``, ``sensor_fidelity``, ``sensor_range`` and
    ``noise_scale``.  Flags present in ground truth are each kept with
    probability equal to the confidence; nothing absent is ever reported.
    Out of range gives an all-zero vector.
    """
    rng = rng or w._sensing
    e = w.get(target.id)
    d = distance(platform.position, e.position)
    c = sensing_confidence(platform.sensor_fidelity, d, platform.sensor_range)
    if d > platform.sensor_range or c <= 0.0:
        return CharacteristicVector()
    amplitude = (1.0 - c) * platform.noise_scale

    def noisy(values):
        return tuple(float(v + rng.uniform(-1.0, 1.0) * amplitude) for v in values)

    def flags(channel):
        kept = 0
        for member in CHANNEL_FLAGS[channel]:
            bit = int(member)
            if e.truth.flags(channel) & bit and rng.random() < c:
                kept |= bit
        return kept

    return CharacteristicVector(
        position=Channel(c, 0, noisy(e.position)),
        activity=Channel(c, flags("activity")),
        possession=Channel(c, flags("possession")),
        movement=Channel(c, 0, noisy(e.velocity)),
        grouping=Channel(c, flags("grouping"), (e.truth.group_count,)),
        markings=Channel(c, flags("markings")),
        acoustics=Channel(c, flags("acoustics")),
    )


def self_vector(position) -> CharacteristicVector:
    """What a platform knows about itself: its own position, exactly."""
    return CharacteristicVector(position=Channel(1.0, 0, tuple(float(v) for v in position)))


__all__ = ["BattleSpace", "Behavior", "Effect", "Engagement", "Entity", "Truth", "WORLD_ACTOR", "sense",
           "sensing_confidence", "self_vector", "stream", "distance", "DEFAULT_SENSOR_RANGE"]
