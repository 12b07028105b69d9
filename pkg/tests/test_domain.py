import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ckss.domain import (
    CHANNEL_NAMES,
    HOSTILE_INDICATORS,
    REFERENCE_TABLE,
    Acoustics,
    Activity,
    Channel,
    CharacteristicVector,
    CombatRole,
    ContractViolation,
    ForbiddenClause,
    Grouping,
    Markings,
    PerceptualThresholds,
    Possession,
    ResourceState,
    TargetNature,
    TargetStatus,
    TargetValue,
    ValueBand,
    classify_target,
    gate_characteristics,
    hostility_score,
    is_forbidden,
    observed,
    reference_config,
    select_response,
    value_band,
    Classification,
)

from strategies import vectors

CFG = reference_config()


def hostile(value=TargetValue()):
    return Classification(TargetNature.HOSTILE, TargetStatus.ACTIVE, CombatRole.COMBATANT, value, 0.9)


# -- gating ------------------------------------------------------------------------

def test_gate_passes_full_confidence():
    cv = observed(1.0, activity=Activity.FIRING, possession=Possession.WEAPON)
    assert gate_characteristics(cv, PerceptualThresholds((0.9,) * 7)) == cv


def test_gate_with_zero_thresholds_is_identity():
    cv = observed(0.01, activity=Activity.FIRING)
    assert gate_characteristics(cv, PerceptualThresholds((0.0,) * 7)) == cv


def test_gate_zeroes_only_the_weak_channel():
    cv = observed(0.9, activity=Activity.FIRING, markings=Markings.CIVILIAN_DRESS)
    cv = CharacteristicVector(**{**{n: cv.channel(n) for n in CHANNEL_NAMES},
                                 "activity": Channel(0.3, int(Activity.FIRING))})
    gated = gate_characteristics(cv, PerceptualThresholds())
    assert gated.activity == Channel(0.0, 0, ())
    for name in CHANNEL_NAMES:
        if name != "activity":
            assert gated.channel(name) == cv.channel(name)


def test_gate_all_pass_fail_patterns():
    cv = observed(0.6, position=(1, 2), activity=Activity.FIRING, possession=Possession.WEAPON,
                  grouping=Grouping.FORMATION, group_count=4, markings=Markings.MILITARY_INSIGNIA,
                  acoustics=Acoustics.GUNFIRE)
    for pattern in itertools.product((False, True), repeat=7):
        mins = tuple(0.5 if keep else 0.7 for keep in pattern)
        gated = gate_characteristics(cv, PerceptualThresholds(mins))
        for keep, name in zip(pattern, CHANNEL_NAMES):
            ch = gated.channel(name)
            assert (ch == cv.channel(name)) if keep else ch.confidence == 0.0 and ch.flags == 0


@settings(max_examples=200, deadline=None)
@given(vectors(), st.lists(st.floats(0, 1), min_size=7, max_size=7))
def test_gate_is_idempotent(cv, mins):
    t = PerceptualThresholds(tuple(mins))
    once = gate_characteristics(cv, t)
    assert gate_characteristics(once, t) == once


@settings(max_examples=200, deadline=None)
@given(vectors())
def test_nothing_surviving_means_undetermined(cv):
    gated = gate_characteristics(cv, PerceptualThresholds((1.0,) * 7))
    if all(ch.confidence == 0.0 for ch in gated.channels):
        assert classify_target(gated, CFG).nature == TargetNature.UNDETERMINED


# -- classification ----------------------------------------------------------------

def test_toddler_is_neutral_non_combatant():
    cv = observed(0.9, activity=Activity.PLAYING, possession=Possession.NOTHING, markings=Markings.CIVILIAN_DRESS)
    c = classify_target(cv, CFG)
    assert (c.nature, c.role) == (TargetNature.NEUTRAL, CombatRole.NON_COMBATANT)


def test_no_evidence_defaults_to_undetermined_non_combatant():
    c = classify_target(CharacteristicVector(), CFG)
    assert (c.nature, c.status, c.role) == (TargetNature.UNDETERMINED, TargetStatus.UNDETERMINED,
                                            CombatRole.NON_COMBATANT)


def test_armed_soldier_firing_is_hostile_combatant():
    cv = observed(0.9, activity=Activity.FIRING, possession=Possession.WEAPON, markings=Markings.MILITARY_INSIGNIA)
    c = classify_target(cv, CFG)
    assert (c.nature, c.role) == (TargetNature.HOSTILE, CombatRole.COMBATANT)
    assert c.confidence == 0.9


def _first_row_by_hand(activity, possession, markings, acoustics):
    # the reference table, read top to bottom
    A, P, M, S = Activity, Possession, Markings, Acoustics
    N, T, R = TargetNature, TargetStatus, CombatRole
    if activity & A.DISABLED:
        return N.UNDETERMINED, T.NEUTRALIZED, R.NON_COMBATANT
    if activity & A.PLAYING or markings & M.MEDICAL_EMBLEM:
        return N.NEUTRAL, T.ACTIVE, R.NON_COMBATANT
    if acoustics & S.SURRENDER and activity & A.COMPLYING:
        return N.HOSTILE, T.DORMANT, R.COMBATANT
    if possession & P.WEAPON and (activity & (A.FIRING | A.EMPLACING) or markings & M.MILITARY_INSIGNIA):
        return N.HOSTILE, T.ACTIVE, R.COMBATANT
    if markings & M.CIVILIAN_DRESS:
        return N.NEUTRAL, T.ACTIVE, R.NON_COMBATANT
    if markings & M.MILITARY_INSIGNIA:
        return N.UNDETERMINED, T.ACTIVE, R.COMBATANT
    return N.UNDETERMINED, T.UNDETERMINED, R.NON_COMBATANT


def test_reference_table_over_its_whole_flag_domain():
    for activity, possession, markings, acoustics in itertools.product(range(128), range(8), range(8), range(8)):
        if activity % 3 and possession % 2:  # thin the activity axis; all bits still vary
            continue
        cv = observed(0.9, activity=activity, possession=possession, markings=markings, acoustics=acoustics)
        c = classify_target(cv, CFG)
        assert (c.nature, c.status, c.role) == _first_row_by_hand(activity, possession, markings, acoustics)


def test_row_below_its_floor_falls_through():
    cv = observed(0.2, activity=Activity.FIRING, possession=Possession.WEAPON)
    assert classify_target(cv, CFG).nature == TargetNature.UNDETERMINED


def test_disabled_row_matches_at_any_confidence():
    assert REFERENCE_TABLE[0].floor == 0.0


# -- response selection -------------------------------------------------------------

def test_low_value_hostile_gets_table_munition():
    r = ResourceState(1.0, 10, (("light", 3),))
    assert select_response(hostile(), CFG, r) == "light"


def test_exhausted_inventory_is_infeasible():
    r = ResourceState(1.0, 10, (("light", 0), ("heavy", 0)))
    for v in (TargetValue(), TargetValue(50, 0, 0), TargetValue(500, 0, 0)):
        assert select_response(hostile(v), CFG, r) is None


def test_high_value_uses_heavy_and_spends_it():
    r = ResourceState(1.0, 10, (("light", 2), ("heavy", 1)))
    munition = select_response(hostile(TargetValue(0, 0, 150)), CFG, r)
    assert munition == "heavy"
    after = r.fire(munition)
    assert after.count("heavy") == 0 and after.count("light") == 2
    assert select_response(hostile(TargetValue(0, 0, 150)), CFG, after) is None


def test_non_hostile_response_is_a_contract_violation():
    c = Classification(TargetNature.NEUTRAL, TargetStatus.ACTIVE, CombatRole.NON_COMBATANT)
    with pytest.raises(ContractViolation):
        select_response(c, CFG, ResourceState(1.0, 1, (("light", 1),)))


def test_value_bands_split_on_peak_component():
    assert value_band(TargetValue(9.9, 0, 0), (10, 100)) == ValueBand.LOW
    assert value_band(TargetValue(0, 10, 0), (10, 100)) == ValueBand.MEDIUM
    assert value_band(TargetValue(0, 0, 100), (10, 100)) == ValueBand.HIGH


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["light", "heavy"]), st.integers(0, 3)), max_size=3),
       st.floats(0, 500))
def test_selected_munition_is_always_stocked(weapons, worth):
    r = ResourceState(0.0, 0, tuple(weapons))
    m = select_response(hostile(TargetValue(worth, 0, 0)), CFG, r)
    assert m is None or r.count(m) > 0


# -- hostility score ----------------------------------------------------------------------

def test_no_indicators_scores_zero():
    assert hostility_score([observed(0.9, markings=Markings.CIVILIAN_DRESS)] * 3, PerceptualThresholds()) == 0.0


def test_every_indicator_scores_one():
    cv = observed(0.9, activity=Activity.FIRING | Activity.EMPLACING, possession=Possession.WEAPON,
                  grouping=Grouping.FORMATION, acoustics=Acoustics.GUNFIRE)
    assert hostility_score([cv] * 4, PerceptualThresholds()) == 1.0


def test_mean_of_half_and_full_evidence():
    # two indicators, so single vectors score 0.5 or 1.0
    pair = (("activity", int(Activity.FIRING)), ("possession", int(Possession.WEAPON)))
    half = observed(0.9, activity=Activity.FIRING)
    full = observed(0.9, activity=Activity.FIRING, possession=Possession.WEAPON)
    window = [half, half, full, full]
    score = hostility_score(window, PerceptualThresholds(), pair)
    assert score == 0.75
    brute = sum(sum(cv.channel(n).has(f) for n, f in pair) / 2 for cv in window) / 4
    assert score == brute


def test_empty_window_is_a_contract_violation():
    with pytest.raises(ContractViolation):
        hostility_score([], PerceptualThresholds())


@settings(max_examples=200, deadline=None)
@given(st.lists(vectors(), min_size=1, max_size=4), st.data())
def test_hostility_is_monotone_in_flags(window, data):
    i = data.draw(st.integers(0, len(window) - 1))
    name, flag = data.draw(st.sampled_from(HOSTILE_INDICATORS))
    ch = window[i].channel(name)
    richer = Channel(max(ch.confidence, 0.5), ch.flags | flag, ch.values or ((0,) if name == "grouping" else ()))
    bumped = list(window)
    bumped[i] = CharacteristicVector(**{**{n: window[i].channel(n) for n in CHANNEL_NAMES}, name: richer})
    t = PerceptualThresholds()
    assert hostility_score(bumped, t) >= hostility_score(window, t)


# -- forbidden criteria ---------------------------------------------------------------

def test_non_combatant_clause_is_always_present():
    cfg = reference_config(forbidden_criteria=())
    assert ForbiddenClause("role", int(CombatRole.NON_COMBATANT)) in cfg.forbidden_criteria


def test_forbidden_clause_parse_and_render():
    for text in ("nature:Friendly", "status:Neutralized", "role:NonCombatant", "markings:MedicalEmblem",
                 "activity:Firing+Emplacing"):
        assert str(ForbiddenClause.parse(text)) == text


def test_channel_clause_needs_confidence():
    clause = ForbiddenClause.parse("markings:MedicalEmblem")
    seen = observed(0.9, markings=Markings.MEDICAL_EMBLEM)
    assert is_forbidden(TargetNature.HOSTILE, TargetStatus.ACTIVE, CombatRole.COMBATANT, seen, [clause])
    assert not is_forbidden(TargetNature.HOSTILE, TargetStatus.ACTIVE, CombatRole.COMBATANT,
                            CharacteristicVector(), [clause])


def test_thresholds_reject_bad_values():
    with pytest.raises(ValueError):
        PerceptualThresholds((0.5,) * 6)
    with pytest.raises(ValueError):
        PerceptualThresholds(hostility_threshold=0.0)
    with pytest.raises(ValueError):
        PerceptualThresholds(gotcha_window=0)


def test_config_round_trips_through_dict():
    cfg = reference_config(preplanned_targets=frozenset({21}), ceasefire_timetable=30)
    assert type(cfg).from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()


def test_resources_cannot_go_negative():
    with pytest.raises(ValueError):
        ResourceState(-1.0, 0, ())
    with pytest.raises(ContractViolation):
        ResourceState(1.0, 1, (("light", 0),)).fire("light")
