from dataclasses import replace

import pytest

from ckss.blackbox import thaw
from ckss.codec import decode_key
from ckss.collab import HandoffRequest
from ckss.conformance import reference_key
from ckss.domain import (
    EntityKind,
    EntityRef,
    ForbiddenClause,
    ResourceState,
    TargetNature,
    TargetStatus,
    TargetValue,
    reference_config,
)
from ckss.ooda import (
    BdaVerdict,
    NotInMaintenance,
    PlatformState,
    VersionSkew,
    WeaponPlatform,
    battle_damage_assessment,
    complete_or_handoff,
    maintenance_update,
)
from ckss.scenario import load_scenario, parse_scenario
from ckss.sim import Simulation, run_scenario, tick_platform
from ckss.switch import Capture, Mobility, PlatformContext

PRE = replace(reference_key().bare(), seg6_timestamp=10)


def post(status, nature, tick=12):
    return replace(PRE, seg6_timestamp=tick, seg8_status=status, seg5_nature=nature)


def test_bda_neutralized():
    assert battle_damage_assessment(PRE, post(TargetStatus.NEUTRALIZED, TargetNature.HOSTILE)) == \
        BdaVerdict.NEUTRALIZED


def test_bda_still_hostile():
    assert battle_damage_assessment(PRE, post(TargetStatus.ACTIVE, TargetNature.HOSTILE)) == \
        BdaVerdict.STILL_HOSTILE


def test_bda_falls_through_to_undetermined():
    assert battle_damage_assessment(PRE, post(TargetStatus.DORMANT, TargetNature.UNDETERMINED)) == \
        BdaVerdict.UNDETERMINED


def test_bda_table_exhaustively():
    for status in TargetStatus:
        for nature in TargetNature:
            got = battle_damage_assessment(PRE, post(status, nature))
            if status == TargetStatus.NEUTRALIZED:
                assert got == BdaVerdict.NEUTRALIZED
            elif status == TargetStatus.ACTIVE and nature == TargetNature.HOSTILE:
                assert got == BdaVerdict.STILL_HOSTILE
            else:
                assert got == BdaVerdict.UNDETERMINED


def test_bda_guards():
    from ckss.domain import ContractViolation
    with pytest.raises(ContractViolation):
        battle_damage_assessment(PRE, replace(post(TargetStatus.ACTIVE, TargetNature.HOSTILE), seg3_target_id=99))
    with pytest.raises(ContractViolation):
        battle_damage_assessment(PRE, post(TargetStatus.ACTIVE, TargetNature.HOSTILE, tick=10))


def platform(weapons, state=PlatformState.ASSESSING, assigned=(21,)):
    resources = ResourceState(10.0, 100, weapons)
    ctx = PlatformContext(Mobility.OPERATIONAL, Capture.NONE, None, frozenset(), None, 0,
                          reference_config(preplanned_targets=frozenset(assigned)), resources)
    return WeaponPlatform(EntityRef(EntityKind.PLATFORM, 1, "hawk-1"), state, ctx, payloads=frozenset({"light"}),
                          assigned=set(assigned))


def hostile_key(target=21, value=TargetValue()):
    return replace(PRE, seg3_target_id=target, seg5_nature=TargetNature.HOSTILE, seg10_value=value)


def test_all_resolved_completes_the_mission():
    p = platform((("light", 1),))
    p.resolved[21] = "neutralized"
    assert complete_or_handoff(p) == PlatformState.MISSION_COMPLETE


def test_nothing_assigned_is_vacuously_complete():
    assert complete_or_handoff(platform((), assigned=())) == PlatformState.MISSION_COMPLETE


def test_out_of_munition_hands_off():
    p = platform((("light", 0),))
    p.latest_keys[21] = hostile_key()
    req = complete_or_handoff(p)
    assert isinstance(req, HandoffRequest)
    assert req.munition == "light" and req.targets == (21,)


def test_still_armed_carries_on():
    p = platform((("light", 1),))
    p.latest_keys[21] = hostile_key()
    assert complete_or_handoff(p) is None


def test_high_value_target_needs_heavy():
    p = platform((("light", 3),))
    p.latest_keys[21] = hostile_key(value=TargetValue(0, 0, 500))
    assert complete_or_handoff(p).munition == "heavy"


def test_surrendered_targets_count_as_resolved():
    p = platform((("light", 0),))
    p.ctx = replace(p.ctx, surrender_latch=frozenset({21}))
    assert complete_or_handoff(p) == PlatformState.MISSION_COMPLETE


def test_maintenance_happy_path():
    p = platform((("light", 1),), state=PlatformState.MAINTENANCE)
    clause = ForbiddenClause.parse("markings:CivilianDress")
    maintenance_update(p, 2, [clause])
    assert p.state == PlatformState.SEARCHING
    assert p.ctx.cfg.ruleset_version == 2
    assert clause in p.ctx.cfg.forbidden_criteria


def test_maintenance_only_adds_constraints():
    p = platform((("light", 1),), state=PlatformState.MAINTENANCE)
    before = set(p.ctx.cfg.forbidden_criteria)
    maintenance_update(p, 2, [ForbiddenClause.parse("nature:Undetermined")])
    assert before <= set(p.ctx.cfg.forbidden_criteria)


def test_maintenance_outside_window():
    with pytest.raises(NotInMaintenance):
        maintenance_update(platform((), state=PlatformState.SEARCHING), 2)


def test_maintenance_version_skew():
    with pytest.raises(VersionSkew):
        maintenance_update(platform((), state=PlatformState.MAINTENANCE), 3)


# -- the driver ---------------------------------------------------------------------

LONELY = """
[scenario]
name = lonely
seed = 1
max_ticks = 10

[platform 1]
name = hawk-1
position = 0 0
range = 5
munitions = light:1
assigned = 21

[target 21]
name = far-away
position = 500 0
activity = Firing
possession = Weapon
"""


def test_searching_with_nothing_in_range_stays_searching():
    sim = Simulation(parse_scenario(LONELY))
    p = sim.platforms[1]
    for _ in range(3):
        start = len(sim.log)
        sim.tick()
        assert p.state == PlatformState.SEARCHING
        assert not [r for r in sim.log.records[start:] if r.kind == "key"]


def test_preplanned_hostile_dispatches_r1_and_engages():
    sim = Simulation(load_scenario("preplanned-strike"))
    p = sim.platforms[1]
    while p.state != PlatformState.ENGAGING:
        sim.tick()
    invocations = [thaw(r.payload) for r in sim.log if r.kind == "invocations"]
    assert invocations[-1]["rules"] == [1]


def test_neutralized_targets_end_in_mission_complete():
    sim = run_scenario("preplanned-strike")
    assert sim.platforms[1].state == PlatformState.MISSION_COMPLETE
    assert sim.platforms[1].resolved == {21: "neutralized", 22: "neutralized"}


def test_absorbing_platforms_emit_nothing():
    sim = run_scenario("capture-selfdestruct")
    p = sim.platforms[1]
    assert p.state == PlatformState.DESTROYED
    _, records = tick_platform(p, sim)
    assert records == []


def test_ruleset_is_constant_outside_maintenance():
    sim = run_scenario("preplanned-strike")
    versions = {thaw(r.payload)["ctx"]["cfg"]["ruleset_version"] for r in sim.log if r.kind == "context"}
    criteria = {str(thaw(r.payload)["ctx"]["cfg"]["forbidden_criteria"]) for r in sim.log if r.kind == "context"}
    assert versions == {1} and len(criteria) == 1


def _is_subsequence(needle, haystack):
    it = iter(haystack)
    return all(any(x == y for y in it) for x in needle)


def test_engagement_step_order():
    sim = run_scenario("preplanned-strike")
    kinds = [r.kind for r in sim.log if r.actor.id == 1]
    launches = [i for i, k in enumerate(kinds) if k == "launch"]
    assert len(launches) == 2
    previous = 0
    for i in launches:
        assert _is_subsequence(["replicate", "invocations", "dispatch", "launch"], kinds[previous:i + 1])
        assert "bda" in kinds[i:]
        previous = i + 1


def test_engagement_loop_is_bounded_by_munitions():
    sim = run_scenario("preplanned-strike")
    launches = [r for r in sim.log if r.kind == "launch"]
    assert len(launches) <= 3 + 1


MAINTAIN = LONELY.replace("max_ticks = 10", "max_ticks = 20") + """
[event]
at = 2
kind = maintenance
platform = 1
version = 2
add = markings:CivilianDress

[event]
at = 6
kind = maintenance
platform = 1
version = 9
"""


def test_maintenance_event_updates_the_ruleset():
    sim = run_scenario(parse_scenario(MAINTAIN))
    p = sim.platforms[1]
    assert p.ctx.cfg.ruleset_version == 2
    assert ForbiddenClause.parse("markings:CivilianDress") in p.ctx.cfg.forbidden_criteria
    kinds = [r.kind for r in sim.log]
    assert "maintenance" in kinds and "maintenance-rejected" in kinds
    assert p.state == PlatformState.SEARCHING


def test_keys_in_log_decode():
    sim = run_scenario("preplanned-strike")
    for r in sim.log:
        if r.kind == "key":
            assert decode_key(thaw(r.payload)["key"]).seg1_weapon_id == 1
