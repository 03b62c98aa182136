import random
from statistics import fmean

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stub_llm import remote
from fax import bench
from fax.agent import Category, FinalExplanation, Query, Variant, run_pipeline
from fax.bench import (
    EvaluationReport, Hypothesis, adversarial_explanation, derive_hypotheses, faithfulness,
    load_scenarios, parse_markdown_report, random_hypotheses, reference_explanation,
    render_report, rubric_to_unit, run_suite, score_hypotheses, usability_scores,
)
from fax.claims import parse_claim
from fax.craftworld import S0, S_DMD, Action, apply_edit, make_edits, named_state, random_state
from fax.policies import PolicyProfile as P, decide

DS = P.DIAMOND_SEEKER


def expl(*lines, variant=Variant.FAX):
    claims = [parse_claim(l) for l in lines]
    return FinalExplanation(variant, "\n".join(lines), claims, {}, [], [], [], 0)


def test_registry_shape():
    scs = load_scenarios()
    assert len(scs) == 40 and len({s.id for s in scs}) == 40
    for cat in Category:
        assert sum(s.category is cat for s in scs) == 10
    for s in scs:
        named_state(s.state)


def test_counterfactual_claim_lifts_directly():
    e = expl("[c1] counterfactual inventory_iron_pickaxe=0 -> UP")
    hyps = derive_hypotheses(e, DS, S_DMD)
    assert len(hyps) == 5
    assert Hypothesis(make_edits({"inventory_iron_pickaxe": 0}), Action.UP) in hyps


def test_claim_free_fallback():
    dash = run_pipeline(Variant.DASHBOARD, Query("q", Category.WHY), DS, S0).final
    hyps = derive_hypotheses(expl(), DS, S_DMD)
    assert hyps == [Hypothesis((), Action.DO)] * 5
    assert len(derive_hypotheses(dash, DS, S0)) == 5


def test_reference_explanation_at_s_dmd():
    e = reference_explanation(DS, S_DMD)
    hyps = derive_hypotheses(e, DS, S_DMD)
    for h in hyps:
        assert decide(DS, apply_edit(S_DMD, h.state_edit)) == h.expected


@pytest.mark.parametrize("p", list(P))
def test_reference_and_adversarial_bounds(p):
    for k in range(40):
        s = random_state(500 + k)
        assert faithfulness(reference_explanation(p, s), p, s, seed=k) >= 0.9
        assert faithfulness(adversarial_explanation(p, s), p, s, seed=k) <= 0.1


def test_invalid_hypotheses_count_as_misses():
    hyps = [Hypothesis({"inventory_wood": 12}, Action.UP), Hypothesis((), "JUMP"), Hypothesis((), Action.DO)]
    assert score_hypotheses(hyps, DS, S_DMD) == pytest.approx(1 / 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 5))
def test_corruption_lowers_score_by_k_over_n(seed, k):
    s = random_state(seed)
    truth = [Hypothesis((), decide(DS, s))] * 5
    wrong = next(a for a in Action if a != decide(DS, s))
    corrupted = [Hypothesis((), wrong)] * k + truth[k:]
    assert score_hypotheses(truth, DS, s) - score_hypotheses(corrupted, DS, s) == pytest.approx(k / 5)


def test_random_floor():
    rng = random.Random(11)
    scores = [score_hypotheses(random_hypotheses(S_DMD, rng), DS, S_DMD) for _ in range(1000)]
    assert abs(fmean(scores) - 1 / 17) <= 0.02


def test_rubric_rescaling():
    assert rubric_to_unit(5) == 1.0 and rubric_to_unit(1) == 0.0 and rubric_to_unit(3) == 0.5


def test_usability_proxies():
    q = Query("Why?", Category.WHY)
    assert usability_scores(expl(), q)["informativeness"] == 0.0
    u = usability_scores(expl("[c1] invariance health", "[c2] plan UP"), q)
    assert u == {"informativeness": 0.5, "query_relevance": 0.5, "fluency": 1.0}


def test_remote_hypotheses_and_rubrics():
    backend, stub = remote()
    e = expl("[c1] counterfactual inventory_iron_pickaxe=0 -> UP")
    assert faithfulness(e, DS, S_DMD, backend=backend) == 1.0
    assert usability_scores(e, Query("Why?", Category.WHY), backend)["fluency"] == 0.75


def _scenario(cat=Category.WHY):
    return [s for s in load_scenarios() if s.category is cat][:1]


def test_single_row_report():
    rep = run_suite([Variant.FAX], _scenario())
    assert len(rep.rows) == 1
    row = rep.rows[0]
    assert rep.overall(Variant.FAX) == row["faithfulness"]
    assert rep.summary()["FAX"]["average"]["fluency"] == row["fluency"]


def test_seed_means_are_averaged():
    rep = run_suite([Variant.STRUCTURED_NO_VERIFY], _scenario(), seeds=(0, 1, 2), noise=0.5)
    assert len(rep.rows) == 3
    assert rep.overall(Variant.STRUCTURED_NO_VERIFY) == pytest.approx(fmean(r["faithfulness"] for r in rep.rows))


def test_failures_are_recorded(monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("broken tool")
    monkeypatch.setattr(bench, "run_pipeline", boom)
    rep = run_suite([Variant.FAX], _scenario())
    assert rep.rows == [] and rep.errors[0]["error"] == "RuntimeError: broken tool"


def test_parallel_matches_serial():
    scs = load_scenarios()[::8]
    a = run_suite(bench.VARIANT_ORDER, scs, seeds=(0, 1), noise=0.5)
    b = run_suite(bench.VARIANT_ORDER, scs, seeds=(0, 1), noise=0.5, jobs=4)
    assert bench.report_to_json(a) == bench.report_to_json(b)


def test_report_rendering(tmp_path):
    scs = [s for cat in Category for s in load_scenarios() if s.category is cat][::5]
    rep = run_suite(bench.VARIANT_ORDER, scs)
    md = render_report(rep, "markdown", tmp_path / "r.md")
    lines = md.splitlines()
    assert len(lines) == 2 + 5 * 5
    assert [l.split("|")[1].strip() for l in lines[2::5]] == [v.label for v in bench.VARIANT_ORDER]
    back = parse_markdown_report((tmp_path / "r.md").read_text())
    for label, block in rep.summary().items():
        for cat, vals in block.items():
            for m, x in vals.items():
                assert back[label][cat][m] == float(f"{x:.2f}")
    for r in rep.rows:
        assert all(0.0 <= r[m] <= 1.0 for m in bench.METRICS)
    with pytest.raises(ValueError):
        render_report(rep, "csv")


def test_empty_report_is_header_only():
    md = render_report(EvaluationReport([], {}), "markdown")
    assert md.splitlines() == [
        "| Method | Query Category | Faithfulness | Informativeness | Query Relevance | Fluency |",
        "|---|---|---|---|---|---|",
    ]
