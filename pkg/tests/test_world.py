from types import SimpleNamespace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ckss.domain import (
    CHANNEL_NAMES,
    Activity,
    EntityKind,
    EntityRef,
    Markings,
    Possession,
    TargetStatus,
)
from ckss.scenario import load_scenario
from ckss.sim import build_world
from ckss.world import (
    BattleSpace,
    Behavior,
    Effect,
    Entity,
    Truth,
    sense,
    sensing_confidence,
    stream,
)

FLAG_CHANNELS = ("activity", "possession", "grouping", "markings", "acoustics")


def target(tid=21, position=(0.0, 0.0), velocity=(0.0, 0.0), truth=Truth(), script=()):
    return Entity(EntityRef(EntityKind.TARGET, tid, f"t{tid}"), position, velocity, list(script), truth=truth)


def sensor(position=(0.0, 0.0), fidelity=1.0, sensor_range=100.0, noise_scale=1.0):
    return SimpleNamespace(position=position, sensor_fidelity=fidelity, sensor_range=sensor_range,
                           noise_scale=noise_scale)


RICH = Truth(activity=int(Activity.FIRING | Activity.EMITTING), possession=int(Possession.WEAPON),
             markings=int(Markings.MILITARY_INSIGNIA), acoustics=1, grouping=1, group_count=4)


# -- stepping ------------------------------------------------------------------------

def test_straight_line_motion():
    w = BattleSpace([target(velocity=(1.0, 0.0))])
    w.step()
    assert w.get(21).position == (1.0, 0.0)
    assert w.clock == 1


@settings(max_examples=50, deadline=None)
@given(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), st.tuples(st.integers(-5, 5), st.integers(-5, 5)),
       st.integers(1, 20))
def test_displacement_equals_velocity_every_tick(start, velocity, steps):
    w = BattleSpace([target(position=tuple(map(float, start)), velocity=tuple(map(float, velocity)))])
    for _ in range(steps):
        before = w.get(21).position
        w.step()
        after = w.get(21).position
        assert (after[0] - before[0], after[1] - before[1]) == velocity


def test_same_seed_same_successor():
    def world():
        w = BattleSpace([target(velocity=(0.5, 0.5)), target(22)], seed=7, effect_table={"light": Effect(0.5, 1)})
        w.launch(1, 21, "light")
        w.launch(1, 22, "light")
        return w
    a, b = world(), world()
    assert a.step() == b.step()
    assert a.snapshot() == b.snapshot()


def test_certain_effect_neutralizes_next_tick():
    w = BattleSpace([target(velocity=(1.0, 0.0))], effect_table={"light": Effect(1.0, 1)})
    eng = w.launch(1, 21, "light")
    changes = w.step()
    t = w.get(21)
    assert t.status == TargetStatus.NEUTRALIZED and not t.alive
    assert eng.outcome == "neutralized"
    assert {"change": "impact", "engagement": eng.id, "target": 21, "outcome": "neutralized"} in changes


def test_dead_entities_stop_moving():
    w = BattleSpace([target(velocity=(1.0, 0.0))], effect_table={"light": Effect(1.0, 1)})
    w.launch(1, 21, "light")
    w.step()
    frozen = w.get(21).position
    w.step()
    assert w.get(21).position == frozen


def test_impossible_effect_always_misses():
    w = BattleSpace([target()], effect_table={"light": Effect(0.0, 2)})
    eng = w.launch(1, 21, "light")
    w.step()
    assert eng.outcome is None
    w.step()
    assert eng.outcome == "missed" and w.get(21).alive


def test_cancelled_engagements_do_not_land():
    w = BattleSpace([target()], effect_table={"light": Effect(1.0, 2)})
    eng = w.launch(1, 21, "light")
    w.cancel(eng.id)
    w.step()
    w.step()
    assert eng.outcome == "cancelled" and w.get(21).alive


def test_effect_bounds():
    with pytest.raises(ValueError):
        Effect(1.5)
    with pytest.raises(ValueError):
        Effect(0.5, 0)


def test_script_ticks_must_increase():
    with pytest.raises(ValueError):
        target(script=[(5, Behavior()), (5, Behavior())])


def test_scripts_apply_on_their_tick_only():
    w = BattleSpace([target(truth=RICH, script=[(2, Behavior(activity=int(Activity.COMPLYING)))])])
    w.step()
    assert w.get(21).truth.activity == RICH.activity
    w.step()
    assert w.get(21).truth.activity == int(Activity.COMPLYING)
    assert w.get(21).truth.possession == RICH.possession


def test_streams_are_independent_and_reproducible():
    assert stream(3, "sensing").random() == stream(3, "sensing").random()
    assert stream(3, "sensing").random() != stream(3, "effects").random()
    assert stream(3, "sensing").random() != stream(4, "sensing").random()


# -- sensing -------------------------------------------------------------------------

def test_perfect_sensor_reads_ground_truth():
    w = BattleSpace([target(position=(0.0, 0.0), velocity=(2.0, 1.0), truth=RICH)])
    v = sense(w, sensor(), w.get(21).ref, stream(0, "t"))
    for name in CHANNEL_NAMES:
        assert getattr(v, name).confidence == 1.0
    for name in FLAG_CHANNELS:
        assert getattr(v, name).flags == RICH.flags(name)
    assert v.position.values == (0.0, 0.0)
    assert v.movement.values == (2.0, 1.0)
    assert v.grouping.values == (4,)


def test_out_of_range_gives_nothing():
    w = BattleSpace([target(position=(100.0, 0.0), truth=RICH), target(22, position=(150.0, 0.0), truth=RICH)])
    for tid in (21, 22):
        v = sense(w, sensor(), w.get(tid).ref, stream(0, "t"))
        assert all(getattr(v, name).confidence == 0.0 for name in CHANNEL_NAMES)
        assert all(getattr(v, name).flags == 0 for name in FLAG_CHANNELS)


def test_confidence_law():
    assert sensing_confidence(0.5, 50.0, 100.0) == 0.25
    assert sensing_confidence(1.0, 0.0, 100.0) == 1.0
    assert sensing_confidence(1.0, 120.0, 100.0) == 0.0
    assert sensing_confidence(1.0, 1.0, 0.0) == 0.0


def test_flag_retention_matches_confidence():
    truth = Truth(activity=int(Activity.FIRING))
    w = BattleSpace([target(position=(50.0, 0.0), truth=truth)])
    rng = stream(2024, "retention")
    platform = sensor(fidelity=0.5)
    kept = 0
    for _ in range(1000):
        v = sense(w, platform, w.get(21).ref, rng)
        assert v.activity.confidence == 0.25
        kept += bool(v.activity.flags)
    assert abs(kept / 1000 - 0.25) <= 0.05


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 127), st.integers(0, 7), st.integers(0, 7), st.integers(0, 7),
       st.floats(0.0, 1.0), st.floats(0.0, 120.0), st.integers(0, 1000))
def test_sensing_never_invents_flags(activity, possession, markings, acoustics, fidelity, d, seed):
    truth = Truth(activity=activity, possession=possession, markings=markings, acoustics=acoustics)
    w = BattleSpace([target(position=(d, 0.0), truth=truth)])
    v = sense(w, sensor(fidelity=fidelity), w.get(21).ref, stream(seed, "p"))
    for name in FLAG_CHANNELS:
        assert getattr(v, name).flags & ~truth.flags(name) == 0


def test_noise_shrinks_with_confidence():
    w = BattleSpace([target(position=(10.0, 0.0))])
    near = sense(w, sensor(fidelity=1.0, noise_scale=5.0), w.get(21).ref, stream(1, "n"))
    assert abs(near.position.values[0] - 10.0) <= (1 - near.position.confidence) * 5.0


# -- scenario-built worlds -----------------------------------------------------------

def test_toddler_script_flips_at_forty():
    sc = load_scenario("toddler-abort")
    w = build_world(sc)
    [(tick, change)] = w.get(21).script
    assert tick == 40
    assert change.activity == int(Activity.PLAYING)
    assert change.possession == int(Possession.NOTHING)
    assert change.markings == int(Markings.CIVILIAN_DRESS)
    while w.clock < 39:
        w.step()
    assert w.get(21).truth.activity == int(Activity.EMPLACING)
    w.step()
    assert w.get(21).truth.activity == int(Activity.PLAYING)


def test_built_world_is_reproducible():
    sc = load_scenario("swap-two-mobile-custody")
    a, b = build_world(sc), build_world(sc)
    for _ in range(10):
        assert a.step() == b.step()
    assert a.snapshot() == b.snapshot()
