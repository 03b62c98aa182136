import itertools

import pytest
from hypothesis import given

from conftest import states
from fax.craftworld import (
    S0, S_DMD, S_LOWDRINK, S_TREE, S_ZMB, Action, Material, apply_edit, make_edits,
    random_state,
)
from fax.policies import (
    PolicyProfile as P, argmax, decide, emittable_actions, fired_rule, preferences,
    profile_from_name, rollout, rule_table, spread,
)

FIXTURES = [S0, S_TREE, S_DMD, S_ZMB, S_LOWDRINK]


def test_decision_examples():
    assert decide(P.DIAMOND_SEEKER, S_DMD) is Action.DO
    assert decide(P.PACIFIST, S_ZMB) is Action.DOWN
    assert decide(P.DIAMOND_SEEKER, S0) is Action.UP
    assert decide(P.ITEM_HOARDER, S0) is Action.RIGHT
    assert decide(P.PACIFIST, S0) is Action.LEFT


def test_guards_fire_for_all_profiles():
    for p in P:
        assert decide(p, S_LOWDRINK) is Action.DO
    tired = apply_edit(S0, make_edits({"energy": 2}))
    assert {decide(p, tired) for p in P} == {Action.SLEEP}


def test_move_toward_prefers_horizontal_on_ties():
    s = apply_edit(S0, make_edits({"map(right2,up2)": "tree"}))
    assert decide(P.DIAMOND_SEEKER, s) is Action.RIGHT
    s = apply_edit(S0, make_edits({"map(left1,down3)": "tree"}))
    assert decide(P.DIAMOND_SEEKER, s) is Action.DOWN


@pytest.mark.parametrize("p", list(P))
def test_argmax_consistency(p):
    for s in FIXTURES + [random_state(k) for k in range(1000)]:
        assert argmax(preferences(p, s)) == decide(p, s)


def test_preference_examples():
    assert preferences(P.DIAMOND_SEEKER, S_DMD) == preferences(P.DIAMOND_SEEKER, S_DMD)
    assert spread(preferences(P.DIAMOND_SEEKER, S_DMD)) > spread(preferences(P.DIAMOND_SEEKER, S0))


def test_preference_scoring_law():
    r = len(rule_table(P.DIAMOND_SEEKER))
    rank, _, a = fired_rule(P.DIAMOND_SEEKER, S_DMD)
    prefs = preferences(P.DIAMOND_SEEKER, S_DMD)
    assert prefs[a] == r - rank
    assert min(prefs) == -1


def test_rollout_examples():
    steps = rollout(P.DIAMOND_SEEKER, S0, 1)
    assert [(st.state, st.action, st.prefs) for st in steps] == [
        (S0, decide(P.DIAMOND_SEEKER, S0), preferences(P.DIAMOND_SEEKER, S0))]
    steps = rollout(P.DIAMOND_SEEKER, S_TREE, 2)
    assert [st.action for st in steps] == [Action.DO, Action.UP]
    assert rollout(P.PACIFIST, S_ZMB, 6) == rollout(P.PACIFIST, S_ZMB, 6)


def test_profiles_disagree():
    probes = [random_state(10_000 + k) for k in range(200)]
    for a, b in itertools.combinations(P, 2):
        diff = sum(decide(a, s) != decide(b, s) for s in probes)
        assert diff >= 60, (a, b, diff)


@given(states)
def test_pacifist_never_strikes_creatures(s):
    if s.faced in (Material.ZOMBIE, Material.SKELETON, Material.COW):
        assert decide(P.PACIFIST, s) is not Action.DO


@given(states)
def test_decisions_are_emittable(s):
    for p in P:
        assert decide(p, s) in emittable_actions(p)


def test_profile_names():
    assert profile_from_name("diamond") is P.DIAMOND_SEEKER
    assert profile_from_name(P.PACIFIST) is P.PACIFIST
    with pytest.raises(ValueError):
        profile_from_name("berserker")
