from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ckss.codec import encode_key
from ckss.command import handle_clash
from ckss.domain import CombatRole, TargetNature, TargetStatus
from ckss.switch import (
    DESTINATIONS,
    LETHAL_KINDS,
    Action,
    ActionDispatched,
    ActionKind,
    ActionState,
    Capture,
    IllegalTransition,
    KeyClash,
    Mobility,
    NoMatch,
    SwitchRuleId,
    collect_from_wire,
    collect_invocations,
    dispatch,
    evaluate_rule,
    replicate_key,
)

import rule_oracle as ro


def point(**changes):
    base = ro.Point(TargetNature.HOSTILE, TargetStatus.ACTIVE, CombatRole.COMBATANT, "ok", "operational", "none",
                    "none", "none", False, True, "emplacing", "none", "stocked", "far")
    return replace(base, **changes)


def rules_for(pt):
    key, ctx = ro.build(pt)
    return [int(i.rule) for i in collect_invocations(key, ctx)]


def test_reference_space_is_large_enough():
    assert len(ro.reference_space()) >= 10_000


def test_engine_agrees_with_flat_oracle_everywhere():
    disagreements = [(pt, [int(i.rule) for i in invs], ro.expected_rules(pt))
                     for pt, _, _, invs in ro.evaluated()
                     if [int(i.rule) for i in invs] != ro.expected_rules(pt)]
    assert disagreements == []


def test_reference_space_reaches_every_rule():
    seen = {int(i.rule) for _, _, _, invs in ro.evaluated() for i in invs}
    assert seen == set(range(1, 15))


# -- worked examples ------------------------------------------------------------

def test_hostile_preplanned_key_invokes_only_r1():
    assert rules_for(point()) == [1]


def test_corrupted_preplanned_hostile_key_invokes_only_r12():
    assert rules_for(point(integrity="stale")) == [12]
    assert rules_for(point(integrity="future")) == [12]


def test_forbidden_preplanned_hostile_key_blocks_instead_of_attacking():
    assert rules_for(point(profile="medic")) == [3]


def test_non_combatant_role_is_blocked():
    assert rules_for(point(role=CombatRole.NON_COMBATANT)) == [3]


def test_toddler_reclassification_aborts_in_flight_engagement():
    key, ctx = ro.build(point(pending="same-executing"))
    toddler = replace(key, seg5_nature=TargetNature.NEUTRAL, seg9_role=CombatRole.NON_COMBATANT)
    inv = evaluate_rule(SwitchRuleId.MISTAKEN_ABORT, toddler, ctx)
    assert inv is not None and inv.proposed.kind == ActionKind.ABORT_ENGAGEMENT
    assert inv.proposed.target == ro.TARGET


def test_low_confidence_hostile_is_referred_to_operator():
    invs = collect_invocations(*ro.build(point(preplanned=False, profile="dim")))
    assert [i.proposed.kind for i in invs] == [ActionKind.OPERATOR_REFERRAL]
    assert invs[0].proposed.munition == "light"


def test_surrender_invokes_track_only():
    assert rules_for(point(profile="surrendering")) == [8]


def test_latched_target_is_not_attacked():
    assert rules_for(point(latched=True)) == []


def test_ceasefire_key_deactivates():
    assert rules_for(point(ceasefire="reached")) == [11]
    assert rules_for(point(ceasefire="later")) == [1]


def test_pending_on_other_target_notes_key():
    assert rules_for(point(pending="other-invoked")) == [13]


def test_nature_change_cancels_pending_not_yet_launched():
    assert rules_for(point(pending="same-invoked", nature=TargetNature.UNDETERMINED)) == [14]


def test_mobility_failure_rules_are_disjoint_for_plain_cases():
    assert rules_for(point(mobility="failed")) == [6]
    assert rules_for(point(mobility="failed", capture="non-hostile")) == [5]
    assert rules_for(point(mobility="failed", role=CombatRole.NON_COMBATANT, place="near")) == [5]


def test_adversarial_failure_and_hostile_capture_clash():
    invs = collect_invocations(*ro.build(point(mobility="failed", capture="hostile", role=CombatRole.NON_COMBATANT,
                                               place="near")))
    assert [int(i.rule) for i in invs] == [5, 7]
    assert isinstance(dispatch(invs), KeyClash)


def test_gotcha_needs_a_full_hostile_window():
    assert rules_for(point(preplanned=False, window="full-hostile")) == [9]
    assert rules_for(point(preplanned=False, window="short-hostile")) == []
    assert rules_for(point(preplanned=False, window="full-benign")) == []


def test_directed_fire_counter_attacks():
    assert rules_for(point(preplanned=False, profile="firing")) == [4]


def test_no_munition_means_no_lethal_rule():
    assert rules_for(point(stock="empty")) == []


# -- invariants over the reference space ------------------------------------------

def test_forbidden_keys_never_dispatch_lethal_actions():
    for pt, key, ctx, invs in ro.evaluated():
        if pt.integrity == "ok" and (pt.role == CombatRole.NON_COMBATANT or pt.profile == "medic"):
            result = dispatch(invs, ctx)
            assert not (isinstance(result, ActionDispatched) and result.action.lethal), pt


def test_ceasefire_falsifies_every_lethal_capable_rule():
    lethal_capable = {1, 2, 4, 9}
    for pt, _, _, invs in ro.evaluated():
        if pt.ceasefire == "reached":
            assert not lethal_capable & {int(i.rule) for i in invs}, pt


def test_invalid_keys_invoke_no_key_content_rule():
    content_rules = {1, 2, 3, 4, 8, 9, 10, 11, 13, 14}
    for pt, _, _, invs in ro.evaluated():
        if pt.integrity != "ok":
            assert 12 in {int(i.rule) for i in invs}
            assert not content_rules & {int(i.rule) for i in invs}, pt


def test_invocations_are_ascending_and_name_their_cause():
    for _, key, _, invs in ro.evaluated()[::97]:
        rules = [int(i.rule) for i in invs]
        assert rules == sorted(rules)
        for inv in invs:
            assert inv.proposed.caused_by == (inv.rule, key.triple)
            assert inv.proposed.state == ActionState.INVOKED
            if inv.proposed.kind in LETHAL_KINDS:
                assert inv.proposed.target is not None and inv.proposed.munition is not None


@settings(max_examples=200, deadline=None)
@given(st.integers(0, len(ro.reference_space()) - 1))
def test_collection_is_pure(i):
    pt = ro.reference_space()[i]
    key, ctx = ro.build(pt)
    assert collect_invocations(key, ctx) == collect_invocations(key, ctx)


# -- replication and dispatch ---------------------------------------------------------

def test_replication_fans_out_fifteen_identical_copies():
    key, _ = ro.build(point())
    receipt = replicate_key(key)
    assert [d for d, _ in receipt.deliveries] == list(DESTINATIONS)
    assert len(receipt.deliveries) == 15
    assert len({encode_key(k) for _, k in receipt.deliveries}) == 1


def test_replication_is_stateless():
    key, _ = ro.build(point())
    a, b = replicate_key(key), replicate_key(key)
    assert a is not b and a == b


def test_dispatch_cardinality():
    key, ctx = ro.build(point())
    [inv] = collect_invocations(key, ctx)
    result = dispatch([inv])
    assert isinstance(result, ActionDispatched) and result.action.kind == ActionKind.PRE_PROGRAMMED_ATTACK
    assert result.becomes_pending
    assert isinstance(dispatch([]), NoMatch)
    assert isinstance(dispatch([inv, inv]), KeyClash)


def test_block_and_noted_do_not_become_pending():
    for pt in (point(profile="medic"), point(pending="other-invoked")):
        result = dispatch(collect_invocations(*ro.build(pt)))
        assert not result.becomes_pending


def test_every_clash_in_the_space_nullifies_everything_open():
    for pt, _, ctx, invs in ro.evaluated():
        if len(invs) < 2:
            continue
        assert isinstance(dispatch(invs, ctx), KeyClash)
        record, pending = handle_clash(invs, ctx.pending)
        assert all(a.state == ActionState.NULLIFIED for a in record.nullified)
        if ctx.pending is not None:
            assert pending.state == ActionState.NULLIFIED


def test_undecodable_wire_invokes_lockout_only():
    _, ctx = ro.build(point())
    key, invs = collect_from_wire(b"garbage", ctx, (1, 21, 100))
    assert key is None
    assert [(i.rule, i.proposed.kind) for i in invs] == [(SwitchRuleId.IMPOSSIBLE_ABORT,
                                                          ActionKind.MALFUNCTION_LOCKOUT)]


def test_action_lifecycle_transitions():
    a = Action(ActionKind.TRACK_ONLY, 21, None, ActionState.INVOKED, (SwitchRuleId.TARGET_SURRENDERED, (1, 21, 3)))
    assert a.advance(ActionState.EXECUTING).advance(ActionState.EXECUTED).state == ActionState.EXECUTED
    assert a.advance(ActionState.NULLIFIED).state == ActionState.NULLIFIED
    assert a.advance(ActionState.EXECUTING).advance(ActionState.CANCELLED).state == ActionState.CANCELLED
    with pytest.raises(IllegalTransition):
        a.advance(ActionState.EXECUTED)
    # a clash may still nullify an action that has not finished
    assert a.advance(ActionState.EXECUTING).advance(ActionState.NULLIFIED).state == ActionState.NULLIFIED
    done = a.advance(ActionState.EXECUTING).advance(ActionState.EXECUTED)
    for state in ActionState:
        with pytest.raises(IllegalTransition):
            done.advance(state)


def test_lethal_action_requires_target_and_munition():
    with pytest.raises(ValueError):
        Action(ActionKind.COUNTER_ATTACK, 21, None, ActionState.INVOKED, (SwitchRuleId.ATTACK_AGGRESSOR, (1, 21, 3)))


def test_context_round_trips_through_dict():
    from ckss.switch import PlatformContext
    _, ctx = ro.build(point(pending="same-executing", window="full-hostile", latched=True, ceasefire="later"))
    again = PlatformContext.from_dict(ctx.to_dict())
    assert again.to_dict() == ctx.to_dict()
    assert again.mobility == Mobility.OPERATIONAL and again.captured_by == Capture.NONE
