import pytest
from hypothesis import given
from hypothesis import strategies as st

from fax.agent import ExplanationDraft
from fax.claims import (
    Claim, ClaimSyntaxError, Condition, CounterfactualEdit, EvidenceKind, Expectation,
    Influence, Invariance, Necessity, Plan, PlanInfeasible, TestCall, TestPlan, TestResult,
    Trigger, VerdictLabel, analyze_evidence, assign_verdict, execute_plan, extract_claims,
    oracle_label, parse_claim, parse_claims, plan_tests, planted_suite, render_claim,
    render_claims, verify, verify_claim,
)
from fax.craftworld import (
    S0, S_DMD, S_TREE, SLOTS, Action, Edit, Material, apply_edit, make_edits, slot_domain,
)
from fax.policies import PolicyProfile as P, decide
from fax.tools import TargetAction, attribution_tool, counterfactual_tool

DS = P.DIAMOND_SEEKER


def claim(text):
    return parse_claim(text)


SAMPLES = [
    "[c1] invariance inventory_wood",
    "[c2] necessity inventory_iron_pickaxe>=1 -> DO",
    "[c3] trigger map(center,up1)==tree -> DO",
    "[c4] influence inventory_iron_pickaxe increase toward DO",
    "[c5] influence map(center,up1) presence=diamond away UP",
    "[c6] counterfactual inventory_iron_pickaxe=0; map(center,up1)=grass -> UP",
    "[c7] counterfactual {} -> DO",
    "[c8] plan DO UP UP",
    "[c9] necessity daylight==true -> SLEEP",
    "[c10] trigger facing==left -> LEFT",
]


@pytest.mark.parametrize("line", SAMPLES)
def test_render_parse_round_trip(line):
    c = parse_claim(line)
    assert render_claim(c) == line
    assert parse_claim(render_claim(c)) == c


@pytest.mark.parametrize("bad", [
    "[c1] invariance inventory_gold",
    "[c1] necessity wood>=1 -> DO",
    "[c1] necessity health>=1",
    "[c1] influence health sideways toward DO",
    "[c1] plan",
    "[c1] plan " + " ".join(["UP"] * 17),
    "[c1] trigger daylight>=1 -> SLEEP",
    "invariance health",
])
def test_parse_rejects(bad):
    with pytest.raises(ClaimSyntaxError):
        parse_claim(bad)


def test_parse_claims_ignores_prose():
    text = "The agent mines.\nCLAIMS:\n" + "\n".join(SAMPLES[:3]) + "\nthanks"
    assert [c.id for c in parse_claims(text)] == ["c1", "c2", "c3"]


@st.composite
def claims_(draw):
    i = draw(st.integers(0, len(SLOTS) - 1))
    slot = SLOTS[i]
    a = draw(st.sampled_from(list(Action)))
    kind = draw(st.sampled_from(["inv", "plan", "cf"]))
    if kind == "inv":
        return Claim("c1", Invariance(slot))
    if kind == "plan":
        return Claim("c1", Plan(tuple(draw(st.lists(st.sampled_from(list(Action)), min_size=1, max_size=16)))))
    v = draw(st.sampled_from(slot_domain(i)))
    return Claim("c1", CounterfactualEdit((Edit(slot, v),), a))


@given(claims_())
def test_round_trip_property(c):
    assert parse_claim(render_claim(c)) == c


def _draft(claims, evidence=None, structured=True):
    return ExplanationDraft("narrative\nCLAIMS:\n" + render_claims(claims), claims, evidence or {}, [],
                            structured)


def test_extract_claims():
    c = claim("[c1] invariance inventory_wood")
    assert extract_claims(_draft([c])) == [c]
    assert extract_claims(_draft([])) == []
    three = [claim(s) for s in SAMPLES[:3]]
    assert [x.id for x in extract_claims(_draft(three))] == ["c1", "c2", "c3"]


def test_condition_values():
    assert Condition("inventory_wood", ">=", 1).violation_value() == 0
    assert Condition("inventory_wood", "<=", 3).violation_value() == 4
    with pytest.raises(PlanInfeasible):
        Condition("inventory_wood", ">=", 0).violation_value()
    with pytest.raises(PlanInfeasible):
        Condition("inventory_wood", "<=", 9).violation_value()
    assert Condition("map(center,up1)", "==", Material.TREE).violation_value() is Material.GRASS


def test_evidence_examples():
    cf = counterfactual_tool(DS, S0, TargetAction(Action.DO), max_cost=1)
    c = Claim("c1", CounterfactualEdit(make_edits({"map(center,up1)": "tree"}), Action.DO))
    tags, needs = analyze_evidence(c, [cf], S0)
    assert [t.kind for t in tags] == [EvidenceKind.FAITHFUL_TOOL] and not needs
    assert all(t.source.faithful for t in tags)

    shap = attribution_tool(DS, S_DMD)
    infl = claim("[c2] influence inventory_iron_pickaxe increase toward DO")
    tags, needs = analyze_evidence(infl, [shap], S_DMD)
    assert [t.kind for t in tags] == [EvidenceKind.NOISY_TOOL] and needs

    nec = claim("[c3] necessity inventory_wood>=1 -> DO")
    tags, _ = analyze_evidence(nec, [], S0)
    assert EvidenceKind.CONTEXT_INCONSISTENT in [t.kind for t in tags]


def test_faithful_result_on_other_state_does_not_entail():
    cf = counterfactual_tool(DS, S0, TargetAction(Action.DO), max_cost=1)
    c = Claim("c1", CounterfactualEdit(make_edits({"map(center,up1)": "tree"}), Action.DO))
    _, needs = analyze_evidence(c, [cf], S_DMD)
    assert needs


def test_plan_tests_examples():
    inv = plan_tests(claim("[c1] invariance inventory_wood"), S0)
    assert [c.edits for c in inv.calls] == [(Edit("inventory_wood", v),) for v in (1, 5, 9)]
    nec = plan_tests(claim("[c2] necessity inventory_iron_pickaxe>=1 -> DO"), S_DMD)
    assert [c.edits for c in nec.calls] == [(Edit("inventory_iron_pickaxe", 0),)]
    assert nec.calls[0].expect.check(Action.DO, Action.UP)
    trg = plan_tests(claim("[c3] trigger map(center,up1)==tree -> DO"), S0)
    assert [(c.edits, c.expect) for c in trg.calls] == [
        ((Edit("map(center,up1)", Material.TREE),), Expectation("is", Action.DO))]
    with pytest.raises(PlanInfeasible):
        plan_tests(claim("[c4] necessity inventory_wood>=0 -> UP"), S0)


def test_execute_plan_examples():
    nec = plan_tests(claim("[c2] necessity inventory_iron_pickaxe>=1 -> DO"), S_DMD)
    [r] = execute_plan(DS, nec)
    assert r.outcome is Action.UP and r.valid and r.consistent
    bad = TestPlan("c9", S0, (TestCall("edit", (Edit("inventory_wood", 12),), Expectation("same")),))
    [r] = execute_plan(DS, bad)
    assert not r.valid
    assert execute_plan(DS, TestPlan("c0", S0, ())) == []


def _r(valid, consistent):
    return TestResult(TestCall("edit"), None, valid, consistent)


def test_verdict_rules():
    c = claim("[c1] invariance health")
    assert assign_verdict(c, [_r(True, True)]).label is VerdictLabel.CORROBORATED
    assert assign_verdict(c, [_r(True, True), _r(True, False)]).label is VerdictLabel.REFUTED
    assert assign_verdict(c, [_r(False, False)]).label is VerdictLabel.INCONCLUSIVE
    assert assign_verdict(c, []).label is VerdictLabel.INCONCLUSIVE


def test_plan_claim_verdicts():
    def label(text):
        return verify_claim(claim(text), DS, S_TREE).verdict.label
    assert label("[c1] plan DO UP UP") is VerdictLabel.CORROBORATED
    assert label("[c1] plan UP UP") is VerdictLabel.REFUTED
    assert label("[c1] plan DO DO") is VerdictLabel.INCONCLUSIVE


def test_verify_examples():
    cf = counterfactual_tool(DS, S0, TargetAction(Action.DO), max_cost=1)
    c = Claim("c1", CounterfactualEdit(make_edits({"map(center,up1)": "tree"}), Action.DO))
    rep = verify(_draft([c], {"c1": [cf]}), DS, S0)
    assert rep.summary()["Corroborated"] == 1 and rep.summary()["tool_calls"] == 0

    nec = claim("[c1] necessity inventory_iron_pickaxe>=1 -> DO")
    assert verify(_draft([nec]), DS, S_DMD).entries[0].verdict.label is VerdictLabel.CORROBORATED
    inv = claim("[c1] invariance inventory_iron_pickaxe")
    assert verify(_draft([inv]), DS, S_DMD).entries[0].verdict.label is VerdictLabel.REFUTED


def test_necessity_of_untaken_action_is_refuted():
    nec = claim("[c1] necessity inventory_iron_pickaxe>=1 -> DO")
    s = apply_edit(S_DMD, make_edits({"map(center,up1)": "grass"}))
    assert decide(DS, s) is not Action.DO
    assert verify_claim(nec, DS, s).verdict.label is VerdictLabel.REFUTED


def test_influence_tests_both_directions():
    good = claim("[c1] influence inventory_iron_pickaxe increase toward DO")
    bad = claim("[c1] influence inventory_iron_pickaxe increase away DO")
    assert verify_claim(good, DS, S_DMD).verdict.label is VerdictLabel.CORROBORATED
    assert verify_claim(bad, DS, S_DMD).verdict.label is VerdictLabel.REFUTED


def test_counterfactual_minimality_probe():
    redundant = claim("[c1] counterfactual inventory_iron_pickaxe=0; health=5 -> UP")
    assert verify_claim(redundant, DS, S_DMD).verdict.label is VerdictLabel.REFUTED


def test_verdicts_are_deterministic():
    c = claim("[c1] invariance inventory_iron_pickaxe")
    a = verify_claim(c, DS, S_DMD).to_json()
    assert a == verify_claim(c, DS, S_DMD).to_json()


def test_planted_suite_shape():
    suite = planted_suite(seed=3, n_true=20, n_false=20)
    assert sum(p.truth for p in suite) == 20 and len(suite) == 40
    assert {p.policy for p in suite} == set(P)
    for p in suite:
        assert oracle_label(p.policy, p.state, p.claim) is p.truth
