import itertools
import math
import random

import pytest
from hypothesis import given, settings

from conftest import edit_sets, states
from fax.craftworld import (
    S0, S_DMD, S_TREE, S_ZMB, SLOTS, Action, Edit, Material, ValueOutOfRange, apply_edit, make_edits,
    random_state,
)
from fax.policies import PolicyProfile as P, decide, preferences, rollout
from fax.tools import (
    ANY_CHANGE, CounterfactualNotFound, TargetAction, active_slots, attribution_tool,
    counterfactual_tool, edit_and_decide, find_counterfactual, highlights, run_rollout,
    shapley_attribution,
)


def brute_shapley(policy, state, baseline=S0):
    """Average marginal contributions over every ordering of the players."""
    players = active_slots(state, baseline)
    factual = decide(policy, state)

    def v(coalition):
        s = baseline.replace({i: state.values[i] for i in coalition})
        return preferences(policy, s)[factual]

    phi = dict.fromkeys(players, 0.0)
    orders = list(itertools.permutations(players))
    for order in orders:
        seen = []
        for i in order:
            before = v(seen)
            seen.append(i)
            phi[i] += v(seen) - before
    return {SLOTS[i]: x / len(orders) for i, x in phi.items()}


def test_edit_examples():
    r = edit_and_decide(P.DIAMOND_SEEKER, S_DMD, make_edits({"inventory_iron_pickaxe": 0}))
    assert r.value.action is Action.UP and r.payload["action"] == "UP" and r.faithful
    assert edit_and_decide(P.PACIFIST, S_ZMB, ()).value.action == decide(P.PACIFIST, S_ZMB)
    with pytest.raises(ValueOutOfRange):
        edit_and_decide(P.PACIFIST, S0, make_edits({"inventory_wood": 12}))


@given(states, edit_sets())
def test_edit_and_decide_is_composition(s, e):
    for p in P:
        assert edit_and_decide(p, s, e).value.action == decide(p, apply_edit(s, e))


def test_counterfactual_examples():
    r = find_counterfactual(P.DIAMOND_SEEKER, S0, TargetAction(Action.DO), 1)
    assert r.edits == (Edit("map(center,up1)", Material.TREE),) and r.cost == 1
    r = find_counterfactual(P.DIAMOND_SEEKER, S_DMD, TargetAction(Action.DO), 2)
    assert r.edits == () and r.cost == 0
    r = find_counterfactual(P.DIAMOND_SEEKER, S_DMD, ANY_CHANGE, 1)
    assert r.cost == 1 and {e.slot for e in r.edits} <= {"inventory_iron_pickaxe", "map(center,up1)"}


def test_counterfactual_not_found_reports_reason():
    with pytest.raises(CounterfactualNotFound):
        find_counterfactual(P.PACIFIST, S0, TargetAction(Action.MAKE_IRON_PICKAXE), 2)
    payload = counterfactual_tool(P.PACIFIST, S0, TargetAction(Action.MAKE_IRON_PICKAXE)).payload
    assert payload["found"] is False


@settings(max_examples=30, deadline=None)
@given(states)
def test_counterfactual_valid_and_minimal(s):
    p = P.DIAMOND_SEEKER
    factual = decide(p, s)
    try:
        r = find_counterfactual(p, s, ANY_CHANGE, 2)
    except CounterfactualNotFound:
        return
    assert r.validated and decide(p, apply_edit(s, r.edits)) != factual
    for k in range(len(r.edits)):
        rest = r.edits[:k] + r.edits[k + 1:]
        assert decide(p, apply_edit(s, rest)) == factual


def test_single_atom_search_matches_brute_force():
    from fax.tools import candidate_atoms
    for seed in range(20):
        s = random_state(seed)
        for p in P:
            factual = decide(p, s)
            brute = [a for a in candidate_atoms(s)
                     if decide(p, s.replace({a[0]: a[1]})) != factual]
            try:
                r = find_counterfactual(p, s, ANY_CHANGE, 1)
            except CounterfactualNotFound:
                assert not brute
                continue
            assert brute and r.edits == (Edit(SLOTS[brute[0][0]], brute[0][1]),)


def test_counterfactual_is_deterministic():
    s = random_state(5)
    a = counterfactual_tool(P.ITEM_HOARDER, s, seed=3).to_json()
    assert a == counterfactual_tool(P.ITEM_HOARDER, s, seed=3).to_json()


def test_shap_on_baseline_is_empty():
    attr = shapley_attribution(P.DIAMOND_SEEKER, S0)
    assert attr.contributions == {}
    assert attribution_tool(P.DIAMOND_SEEKER, S0).payload["contributions"] == {}


def test_shap_two_features_by_hand():
    # v(empty)=v(S0)[DO], players are the diamond and the pickaxe
    attr = shapley_attribution(P.DIAMOND_SEEKER, S_DMD)
    assert set(attr.contributions) == {"map(center,up1)", "inventory_iron_pickaxe"}
    expected = preferences(P.DIAMOND_SEEKER, S_DMD)[Action.DO] - preferences(P.DIAMOND_SEEKER, S0)[Action.DO]
    assert sum(attr.contributions.values()) == pytest.approx(expected, abs=1e-9)
    assert attr.contributions["map(center,up1)"] == attr.contributions["inventory_iron_pickaxe"]
    assert attr.contributions == pytest.approx(brute_shapley(P.DIAMOND_SEEKER, S_DMD))


def test_shap_dummy_slot_gets_zero():
    s = apply_edit(S_DMD, make_edits({"inventory_wood_sword": 1}))
    attr = shapley_attribution(P.DIAMOND_SEEKER, s)
    assert attr.contributions["inventory_wood_sword"] == 0.0
    assert attr.contributions["map(center,up1)"] == attr.contributions["inventory_iron_pickaxe"]


@settings(max_examples=25, deadline=None)
@given(states)
def test_exact_shap_matches_permutation_oracle(s):
    if len(active_slots(s, S0)) > 6:
        return
    for p in P:
        got = shapley_attribution(p, s).contributions
        want = brute_shapley(p, s)
        assert set(got) == set(want)
        for k in want:
            assert math.isclose(got[k], want[k], abs_tol=1e-9)


def test_sampled_shap_is_seeded():
    s = random_state(77, density=0.3)
    a = shapley_attribution(P.ITEM_HOARDER, s, max_exact_features=0, permutations=200, seed=4)
    b = shapley_attribution(P.ITEM_HOARDER, s, max_exact_features=0, permutations=200, seed=4)
    assert a.contributions == b.contributions and a.estimator["kind"] == "sampled"


def _traj(policy, states_):
    return [rollout(policy, s, 1)[0] for s in states_]


def test_highlights_examples():
    t = _traj(P.DIAMOND_SEEKER, [S0, S0, S_DMD, S0])
    assert highlights(P.DIAMOND_SEEKER, t, 1).indices == [2]
    flat = _traj(P.DIAMOND_SEEKER, [S0] * 6)
    assert highlights(P.DIAMOND_SEEKER, flat, 2, window=1).indices == [0, 3]
    full = highlights(P.DIAMOND_SEEKER, t, 4, window=0)
    assert sorted(full.indices) == [0, 1, 2, 3] and full.indices[0] == 2
    with pytest.raises(ValueError):
        highlights(P.DIAMOND_SEEKER, t, 5)


def test_highlight_windows_do_not_overlap():
    rng = random.Random(3)
    for _ in range(30):
        s = random_state(rng.randrange(10**6))
        t = rollout(P.ITEM_HOARDER, s, 12)
        h = highlights(P.ITEM_HOARDER, t, 3)
        for (a0, a1), (b0, b1) in itertools.combinations(h.windows, 2):
            assert a1 < b0 or b1 < a0


def test_rollout_tool():
    r = run_rollout(P.DIAMOND_SEEKER, S_TREE, 2)
    assert r.payload["actions"][:2] == ["DO", "UP"] and r.faithful
    assert "[rollout | faithful]" in r.to_text()
