"""Benchmark harness: scenario registry, simulation-based faithfulness,
usability proxies, suite runner and report rendering.

Faithfulness is simulatability: hypotheses (state edit, expected action) are
derived from an explanation's asserted claims and scored against the policy's
actual decisions on the edited states.
"""
from __future__ import annotations

import json
import random
import re
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from statistics import fmean
from typing import Any, Iterable, Optional, Sequence

from .agent import (
    Backend, Category, FinalExplanation, Query, RemoteChat, StructuredTemplate,
    Variant, claims_from_results, run_pipeline, state_brief, variant_from_name,
)
from .claims import (
    Claim, Condition, CounterfactualEdit, Influence, Invariance, Necessity, Plan, Trigger, oracle_label,
    PlanInfeasible, parse_claims, probe_values,
)
from .claims import _influence_edits
from .craftworld import (
    SLOTS, Action, Edit, EditError, State, apply_edit, format_value, make_edits,
    named_state, slot_domain, slot_index,
)
from .policies import PolicyProfile, decide, profile_from_name

__all__ = [
    "Scenario", "Hypothesis", "MetricScores", "EvaluationReport", "load_scenarios",
    "derive_hypotheses", "predict_action", "faithfulness", "score_hypotheses",
    "usability_scores", "run_suite", "render_report", "report_to_json", "report_to_markdown",
    "parse_markdown_report", "explanation_claims", "reference_explanation",
    "adversarial_explanation", "random_hypotheses", "CATEGORY_ORDER", "VARIANT_ORDER",
]

N_HYPOTHESES = 5
CATEGORY_ORDER = (Category.COUNTERFACTUAL, Category.WHAT_IF, Category.PLAN, Category.WHY)
CATEGORY_LABELS = {
    Category.COUNTERFACTUAL: "Counterfactual", Category.WHAT_IF: "What if",
    Category.PLAN: "Plan", Category.WHY: "Why",
}
VARIANT_ORDER = (Variant.DASHBOARD, Variant.NAIVE_LLM, Variant.UNSTRUCTURED,
                 Variant.STRUCTURED_NO_VERIFY, Variant.FAX)
METRICS = ("faithfulness", "informativeness", "query_relevance", "fluency")


@dataclass(frozen=True)
class Scenario:
    id: str
    category: Category
    query: str
    policy: PolicyProfile
    state: str

    @classmethod
    def from_json(cls, d: dict) -> "Scenario":
        return cls(d["id"], Category(d["category"]), d["query"], profile_from_name(d["policy"]), d["state"])

    def to_json(self) -> dict:
        return {"id": self.id, "category": self.category.value, "query": self.query,
                "policy": self.policy.value, "state": self.state}

    @property
    def as_query(self) -> Query:
        return Query(self.query, self.category)


def load_scenarios(path: Optional[str | Path] = None) -> list[Scenario]:
    """The shipped registry, or a JSON array of scenario records."""
    if path is None:
        text = resources.files("fax").joinpath("data/scenarios.json").read_text()
    else:
        text = Path(path).read_text()
    data = json.loads(text)
    if not isinstance(data, list):
        raise ValueError("scenario file must hold a JSON array")
    return [Scenario.from_json(d) for d in data]


# --------------------------------------------------------------------------
# hypotheses


@dataclass(frozen=True)
class Hypothesis:
    state_edit: Any  # tuple of Edit, or the raw mapping when it does not parse
    expected: Any    # Action, or the raw name when it is not an action

    def to_json(self) -> dict:
        if isinstance(self.state_edit, tuple):
            edit = {e.slot: format_value(e.value) for e in self.state_edit}
        else:
            edit = self.state_edit
        exp = self.expected.name if isinstance(self.expected, Action) else self.expected
        return {"state_edit": edit, "expected_outcome": exp}


def _edits_equal(a: Sequence[Edit], b: Sequence[Edit]) -> bool:
    return set(a) == set(b)


def predict_action(claims: Sequence[Claim], state: State, edits: Sequence[Edit], factual: Action) -> Action:
    """What an observer holding only ``claims`` predicts after ``edits``.

    Exact counterfactual matches win, then triggers whose condition the
    edited state meets, then other positive statements. Statements that only
    rule an action out fall back to the first other action the explanation
    mentions (NOOP when there is none); with nothing applicable the observer
    keeps the factual action.
    """
    edits = tuple(edits)
    try:
        edited = apply_edit(state, edits)
    except EditError:
        return factual
    touched = {e.slot for e in edits}
    excluded: set[Action] = set()
    positive: list[Action] = []
    for c in claims:
        p = c.payload
        if isinstance(p, CounterfactualEdit) and _edits_equal(p.edits, edits):
            return p.target
    for c in claims:
        p = c.payload
        if isinstance(p, Trigger) and p.condition.slot in touched and p.condition.holds(edited):
            positive.append(p.action)
        elif isinstance(p, Plan) and not edits:
            positive.append(p.actions[0])
        elif isinstance(p, Necessity) and p.condition.slot in touched and not p.condition.holds(edited):
            excluded.add(p.action)
        elif isinstance(p, Influence) and touched == {p.slot}:
            along, _ = _influence_edits(p)
            is_along = edited.get(p.slot) == along
            if is_along == (p.effect == "toward"):
                positive.append(p.action)
            else:
                excluded.add(p.action)
        elif isinstance(p, Invariance) and touched == {p.slot}:
            positive.append(factual)
    for a in positive:
        if a not in excluded:
            return a
    if excluded:
        for a in _mentioned(claims):
            if a not in excluded:
                return a
        return Action.NOOP if Action.NOOP not in excluded else Action.LEFT
    return factual


def _mentioned(claims: Sequence[Claim]) -> list[Action]:
    out: list[Action] = []
    for c in claims:
        p = c.payload
        acts = p.actions if isinstance(p, Plan) else (getattr(p, "action", None) or getattr(p, "target", None),)
        out.extend(a for a in acts if a is not None and a not in out)
    return out


def _claim_hypothesis(c: Claim, claims: Sequence[Claim], state: State, factual: Action,
                      rng: random.Random) -> Optional[Hypothesis]:
    p = c.payload
    if isinstance(p, Invariance):
        idx = slot_index(p.slot)
        options = [v for v in slot_domain(idx) if v != state.values[idx]]
        edit = (Edit(p.slot, rng.choice(options)),)
        return Hypothesis(edit, factual)
    if isinstance(p, Necessity):
        try:
            edit = (Edit(p.condition.slot, p.condition.violation_value()),)
        except PlanInfeasible:
            return None
        return Hypothesis(edit, predict_action(claims, state, edit, factual))
    if isinstance(p, Trigger):
        return Hypothesis((Edit(p.condition.slot, p.condition.establish_value()),), p.action)
    if isinstance(p, CounterfactualEdit):
        return Hypothesis(p.edits, p.target)
    if isinstance(p, Plan):
        return Hypothesis((), p.actions[0])
    _, against = _influence_edits(p)
    edit = (Edit(p.slot, against),)
    return Hypothesis(edit, predict_action(claims, state, edit, factual))


def explanation_claims(expl: FinalExplanation, state: State) -> list[Claim]:
    """Asserted claims; raw dashboards are read through their payloads."""
    if expl.raw_payloads:
        payloads = claims_from_results(expl.tool_results, state)
        return [Claim(f"d{k}", p) for k, (p, _) in enumerate(payloads, 1)]
    return list(expl.claims)


def _rng(seed: int, *parts: str) -> random.Random:
    return random.Random(zlib.crc32("|".join((str(seed),) + parts).encode()))


def derive_hypotheses(explanation: FinalExplanation, policy, state: State, n: int = N_HYPOTHESES,
                      seed: int = 0, backend: Optional[Backend] = None, query: Optional[Query] = None
                      ) -> list[Hypothesis]:
    """Exactly ``n`` hypotheses from the explanation's asserted claims."""
    policy = profile_from_name(policy)
    factual = decide(policy, state)
    rng = _rng(seed, explanation.text)
    if backend is not None and not backend.structured:
        hyps = _remote_hypotheses(explanation, policy, state, backend, query)
    else:
        claims = explanation_claims(explanation, state)
        hyps = [h for c in claims if (h := _claim_hypothesis(c, claims, state, factual, rng)) is not None]
    if not hyps:
        return [Hypothesis((), factual)] * n
    if len(hyps) > n:
        keep = sorted(rng.sample(range(len(hyps)), n))
        return [hyps[i] for i in keep]
    return hyps + [rng.choice(hyps) for _ in range(n - len(hyps))]


def _remote_hypotheses(expl, policy, state, backend: RemoteChat, query) -> list[Hypothesis]:
    system = ("STAGE: EVALUATE\nRead the agent's answer about a game model and write 5 testable "
              "hypotheses as a JSON list of objects with keys state_edit (slot to value mapping) and "
              "expected_outcome (an action name). Output only JSON.\nActions: "
              + ", ".join(a.name for a in Action))
    user = (f"Initial state:\n{state_brief(policy, state)}\nQuestion: {query.text if query else ''}\n"
            f"Answer:\n{expl.text}")
    reply, _ = backend.chat("evaluate", system, user)
    m = re.search(r"\[.*\]", reply, re.S)
    try:
        items = json.loads(m.group(0)) if m else []
    except ValueError:
        items = []
    out = []
    for item in items if isinstance(items, list) else []:
        if not isinstance(item, dict):
            continue
        raw = item.get("state_edit") or {}
        try:
            edit: Any = make_edits(raw)
        except (EditError, TypeError, AttributeError):
            edit = raw
        name = str(item.get("expected_outcome", "")).strip().upper()
        out.append(Hypothesis(edit, Action[name] if name in Action.__members__ else name))
    return out


def score_hypotheses(hyps: Sequence[Hypothesis], policy, state: State) -> float:
    """Fraction of hypotheses whose expected action the policy actually takes."""
    if not hyps:
        return 0.0
    hits = 0
    for h in hyps:
        if not isinstance(h.state_edit, tuple) or not isinstance(h.expected, Action):
            continue
        try:
            hits += decide(policy, apply_edit(state, h.state_edit)) == h.expected
        except EditError:
            pass
    return hits / len(hyps)


def faithfulness(explanation: FinalExplanation, policy, state: State, n: int = N_HYPOTHESES,
                 seed: int = 0, backend: Optional[Backend] = None, query: Optional[Query] = None) -> float:
    hyps = derive_hypotheses(explanation, policy, state, n, seed, backend, query)
    return score_hypotheses(hyps, profile_from_name(policy), state)


# --------------------------------------------------------------------------
# usability

_GENERAL = (Invariance, Necessity, Trigger, Influence)
_RELEVANT = {
    Category.WHY: (Influence, Necessity, Invariance, Trigger, CounterfactualEdit),
    Category.WHAT_IF: (CounterfactualEdit, Invariance, Trigger),
    Category.COUNTERFACTUAL: (CounterfactualEdit, Trigger, Necessity),
    Category.PLAN: (Plan,),
}
DASHBOARD_FLUENCY = 0.25


@dataclass(frozen=True)
class MetricScores:
    faithfulness: float
    informativeness: float
    query_relevance: float
    fluency: float

    def to_json(self) -> dict:
        return {m: round(getattr(self, m), 6) for m in METRICS}


def rubric_to_unit(score: float) -> float:
    return min(1.0, max(0.0, (score - 1) / 4))


def usability_scores(explanation: FinalExplanation, query: Query, backend: Optional[Backend] = None,
                     state: Optional[State] = None) -> dict[str, float]:
    """Structural proxies under templates; 1-5 rubrics under a remote judge."""
    if backend is not None and not backend.structured:
        return {k: rubric_to_unit(_rubric(backend, k, explanation, query))
                for k in ("informativeness", "query_relevance", "fluency")}
    claims = explanation_claims(explanation, state) if state is not None else list(explanation.claims)
    if not claims:
        info = rel = 0.0
    else:
        info = sum(isinstance(c.payload, _GENERAL) for c in claims) / len(claims)
        rel = sum(isinstance(c.payload, _RELEVANT[query.category]) for c in claims) / len(claims)
    fluency = DASHBOARD_FLUENCY if explanation.raw_payloads else 1.0
    return {"informativeness": info, "query_relevance": rel, "fluency": fluency}


_RUBRICS = {
    "informativeness": "Does the answer state general rules about the model's behaviour beyond this one state?",
    "query_relevance": "Does the answer address the user's question directly?",
    "fluency": "Is the answer well written, clear and easy to read?",
}


def _rubric(backend: RemoteChat, metric: str, expl: FinalExplanation, query: Query) -> float:
    system = f"STAGE: JUDGE\nRate the answer from 1 (worst) to 5 (best). {_RUBRICS[metric]} Reply with one number."
    reply, _ = backend.chat("judge", system, f"Question: {query.text}\nAnswer:\n{expl.text}")
    m = re.search(r"[1-5](?:\.\d+)?", reply)
    return float(m.group(0)) if m else 1.0


# --------------------------------------------------------------------------
# suite


@dataclass
class EvaluationReport:
    rows: list[dict]
    meta: dict
    errors: list[dict] = field(default_factory=list)

    def summary(self) -> dict[str, dict[str, dict[str, float]]]:
        """Per variant and category: mean over scenarios of the seed means."""
        out: dict[str, dict[str, dict[str, float]]] = {}
        variants = [v for v in VARIANT_ORDER if any(r["variant"] == v.label for r in self.rows)]
        for v in variants:
            per_scenario: dict[str, list[dict]] = {}
            for r in self.rows:
                if r["variant"] == v.label:
                    per_scenario.setdefault(r["scenario"], []).append(r)
            seed_means = {
                sid: {m: fmean(r[m] for r in rs) for m in METRICS} | {"category": rs[0]["category"]}
                for sid, rs in per_scenario.items()
            }
            block = {}
            for cat in CATEGORY_ORDER:
                vals = [s for s in seed_means.values() if s["category"] == cat.value]
                if vals:
                    block[cat.value] = {m: fmean(s[m] for s in vals) for m in METRICS}
            block["average"] = {m: fmean(s[m] for s in seed_means.values()) for m in METRICS}
            out[v.label] = block
        return out

    def overall(self, variant: Variant | str, metric: str = "faithfulness") -> float:
        label = variant_from_name(variant).label
        return self.summary()[label]["average"][metric]

    def to_json(self) -> dict:
        def rounded(block):
            return {k: {m: round(x, 6) for m, x in v.items()} for k, v in block.items()}
        return {
            "meta": self.meta,
            "summary": {v: rounded(b) for v, b in self.summary().items()},
            "rows": self.rows,
            "errors": self.errors,
        }


def _evaluate(variant: Variant, sc: Scenario, seed: int, backend: Backend, noise: float) -> dict:
    state = named_state(sc.state)
    query = sc.as_query
    run = run_pipeline(variant, query, sc.policy, state, backend, seed=seed, noise=noise, scope=sc.id)
    expl = run.final
    hyps = derive_hypotheses(expl, sc.policy, state, N_HYPOTHESES, seed, backend, query)
    faith = score_hypotheses(hyps, sc.policy, state)
    usab = usability_scores(expl, query, backend, state)
    verdicts = {"Corroborated": 0, "Refuted": 0, "Inconclusive": 0}
    refuted_ids: set[str] = set()
    if run.report is not None:
        for e in run.report.entries:
            verdicts[e.verdict.label.value] += 1
            if e.verdict.label.value == "Refuted":
                refuted_ids.add(e.claim.id)
    # gating check: re-extract claims from the final text and diff against refuted ones
    final_ids = {c.id for c in parse_claims(expl.text, sc.id, strict=False)} if not expl.raw_payloads else set()
    return {
        "variant": variant.label,
        "scenario": sc.id,
        "category": sc.category.value,
        "seed": seed,
        "faithfulness": faith,
        "informativeness": usab["informativeness"],
        "query_relevance": usab["query_relevance"],
        "fluency": usab["fluency"],
        "tokens": run.trace.total_tokens,
        "tool_calls": run.trace.tool_calls(),
        "edit_calls": run.trace.tool_calls("edit_state"),
        "verdicts": verdicts,
        "refuted_in_final": len(final_ids & refuted_ids),
        "claims": [str(c) for c in expl.claims],
        "hypotheses": [h.to_json() for h in hyps],
    }


def run_suite(variants: Iterable[Variant | str], scenarios: Sequence[Scenario],
              backend: Optional[Backend] = None, seeds: Sequence[int] = (0,), noise: float = 0.0,
              jobs: int = 1) -> EvaluationReport:
    """Every variant x scenario x seed; failures are recorded and skipped."""
    backend = backend or StructuredTemplate()
    variants = [variant_from_name(v) for v in variants]
    if not seeds:
        raise ValueError("at least one seed is required")
    tasks = [(v, sc, s) for v in variants for sc in scenarios for s in seeds]

    def work(task):
        v, sc, s = task
        try:
            return _evaluate(v, sc, s, backend, noise), None
        except Exception as exc:  # recorded, the suite continues
            return None, {"variant": v.label, "scenario": sc.id, "seed": s, "error": f"{type(exc).__name__}: {exc}"}

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(work, tasks))
    else:
        outcomes = [work(t) for t in tasks]
    rows = [r for r, _ in outcomes if r is not None]
    errors = [e for _, e in outcomes if e is not None]
    meta = {
        "backend": backend.name,
        "variants": [v.label for v in variants],
        "scenarios": len(scenarios),
        "seeds": list(seeds),
        "noise": noise,
        "hypotheses_per_explanation": N_HYPOTHESES,
        "usability": "structural proxy" if backend.structured else "remote rubric",
    }
    return EvaluationReport(rows, meta, errors)


# --------------------------------------------------------------------------
# rendering


def report_to_markdown(report: EvaluationReport | dict) -> str:
    data = report.to_json() if isinstance(report, EvaluationReport) else report
    lines = [
        "| Method | Query Category | Faithfulness | Informativeness | Query Relevance | Fluency |",
        "|---|---|---|---|---|---|",
    ]
    for label, block in data.get("summary", {}).items():
        first = True
        for cat in CATEGORY_ORDER:
            if cat.value not in block:
                continue
            vals = " | ".join(f"{block[cat.value][m]:.2f}" for m in METRICS)
            lines.append(f"| {label if first else ''} | {CATEGORY_LABELS[cat]} | {vals} |")
            first = False
        vals = " | ".join(f"{block['average'][m]:.2f}" for m in METRICS)
        lines.append(f"| {label if first else ''} | **Average** | {vals} |")
    return "\n".join(lines) + "\n"


def report_to_json(report: EvaluationReport) -> str:
    return json.dumps(report.to_json(), sort_keys=True, indent=1) + "\n"


def render_report(report: EvaluationReport, fmt: str, path: Optional[str | Path] = None) -> str:
    if fmt == "json":
        text = report_to_json(report)
    elif fmt == "markdown":
        text = report_to_markdown(report)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def parse_markdown_report(text: str) -> dict[str, dict[str, dict[str, float]]]:
    """Read a rendered markdown table back into summary form."""
    back = {v: k for k, v in CATEGORY_LABELS.items()}
    out: dict[str, dict[str, dict[str, float]]] = {}
    current = None
    for line in text.splitlines()[2:]:
        cells = [c.strip() for c in line.strip().strip("|").split("|")]
        if len(cells) != 6:
            continue
        current = cells[0] or current
        cat = "average" if cells[1] == "**Average**" else back[cells[1]].value
        out.setdefault(current, {})[cat] = {m: float(x) for m, x in zip(METRICS, cells[2:])}
    return out


# --------------------------------------------------------------------------
# reference explanations for metric calibration


def reference_explanation(policy, state: State, limit: int = 5) -> FinalExplanation:
    """Ground-truth claims read off the rule table by exhaustive evaluation.

    Each active slot whose current value is necessary for the decision gets a
    necessity claim plus a trigger naming what the policy does once it is
    violated; slots that never matter get an invariance claim.
    """
    policy = profile_from_name(policy)
    factual = decide(policy, state)
    claims: list[Claim] = []
    for i in _probe_order_safe(state):
        slot = SLOTS[i]
        cond = Condition(slot, "==", state.values[i])
        nec = Claim("", Necessity(cond, factual))
        inv = Claim("", Invariance(slot))
        if oracle_label(policy, state, inv):
            claims.append(inv)
        else:
            if oracle_label(policy, state, nec):
                claims.append(nec)
            viol = Condition(slot, "==", cond.violation_value())
            claims.append(Claim("", Trigger(viol, decide(policy, state.replace({i: viol.value})))))
        if len(claims) >= limit:
            break
    claims = [Claim(f"g{k}", c.payload) for k, c in enumerate(claims, 1)]
    claims = claims or [Claim("g1", CounterfactualEdit((), factual))]
    return _static_explanation(claims)


def adversarial_explanation(policy, state: State, n: int = N_HYPOTHESES) -> FinalExplanation:
    """Counterfactual claims whose every target is wrong."""
    policy = profile_from_name(policy)
    order = _probe_order_safe(state)
    claims = []
    for k in range(n):
        i = order[k % len(order)]
        vals = [v for v in slot_domain(i) if v != state.values[i]]
        edits = (Edit(SLOTS[i], vals[k // len(order) % len(vals)]),)
        actual = decide(policy, apply_edit(state, edits))
        wrong = next(a for a in Action if a != actual)
        claims.append(Claim(f"x{k + 1}", CounterfactualEdit(edits, wrong)))
    return _static_explanation(claims)


def _probe_order_safe(state: State) -> list[int]:
    from .agent import _probe_order
    return _probe_order(state) or [state.faced_index]


def _static_explanation(claims: list[Claim]) -> FinalExplanation:
    text = "CLAIMS:\n" + "\n".join(str(c) for c in claims)
    return FinalExplanation(Variant.FAX, text, claims, {}, [], [], [], 0)


def random_hypotheses(state: State, rng: random.Random, n: int = N_HYPOTHESES) -> list[Hypothesis]:
    """Empty-edit hypotheses with uniformly random expected actions."""
    actions = list(Action)
    return [Hypothesis((), rng.choice(actions)) for _ in range(n)]
