"""Claim verification: typed atomic claims, evidence analysis, falsification
test plans, faithful execution and verdicts.

Claims are rendered one per line, ``[id] body``::

    [c1] invariance inventory_wood
    [c2] necessity inventory_iron_pickaxe>=1 -> DO
    [c3] trigger map(center,up1)==tree -> DO
    [c4] influence drink decrease toward DO
    [c5] influence map(center,up1) presence=diamond toward DO
    [c6] counterfactual map(center,up1)=grass -> UP
    [c7] plan DO UP UP

The structured parse is the exact inverse of :func:`render_claim`.
"""
from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Iterable, Optional, Sequence, Union

from .craftworld import (
    CENTER, DAYLIGHT, FACING, N_CELLS, SLOTS, Action, Direction, Edit,
    EditError, Material, State, apply_edit, canonical_slot, coerce_value,
    format_edits, format_value, make_edits, parse_edit, random_state,
    slot_domain, slot_index,
)
from .policies import PolicyProfile, decide, profile_from_name, rollout
from .tools import ToolResult, edit_and_decide, run_rollout

__all__ = [
    "Condition", "Invariance", "Necessity", "Trigger", "Influence",
    "CounterfactualEdit", "Plan", "Claim", "ClaimSyntaxError", "ExtractionError",
    "PlanInfeasible", "EvidenceKind", "EvidenceTag", "Expectation", "TestCall",
    "TestPlan", "TestResult", "VerdictLabel", "Verdict", "ClaimReport",
    "VerificationReport", "render_claim", "parse_claim", "render_claims",
    "parse_claims", "extract_claims", "analyze_evidence", "plan_tests",
    "execute_plan", "assign_verdict", "verify", "verify_claim", "entails", "oracle_label",
    "PlantedClaim", "planted_suite", "MAX_CALLS", "MAX_PLAN_HORIZON",
]

log = logging.getLogger(__name__)

MAX_CALLS = 3
MAX_PLAN_HORIZON = 16


class ClaimSyntaxError(ValueError):
    pass


class ExtractionError(RuntimeError):
    pass


class PlanInfeasible(ValueError):
    pass


# --------------------------------------------------------------------------
# claim payloads

_OPS = ("==", ">=", "<=")


def _is_count(index: int) -> bool:
    return N_CELLS <= index < DAYLIGHT


@dataclass(frozen=True)
class Condition:
    slot: str
    op: str
    value: Any

    def __post_init__(self):
        idx = slot_index(self.slot)
        object.__setattr__(self, "slot", SLOTS[idx])
        if self.op not in _OPS:
            raise ClaimSyntaxError(f"unknown operator {self.op!r}")
        if self.op != "==" and not _is_count(idx):
            raise ClaimSyntaxError(f"{self.op} needs a count slot, not {self.slot}")
        object.__setattr__(self, "value", coerce_value(idx, self.value))

    @property
    def index(self) -> int:
        return slot_index(self.slot)

    def holds(self, state: State) -> bool:
        v = state.values[self.index]
        if self.op == ">=":
            return v >= self.value
        if self.op == "<=":
            return v <= self.value
        return v == self.value

    def establish_value(self):
        return self.value

    def violation_value(self):
        """Canonical value that breaks the condition."""
        if self.op == ">=":
            if self.value == 0:
                raise PlanInfeasible(f"{self} cannot be violated")
            return self.value - 1
        if self.op == "<=":
            if self.value == 9:
                raise PlanInfeasible(f"{self} cannot be violated")
            return self.value + 1
        return _alternative(self.index, self.value)

    def __str__(self) -> str:
        return f"{self.slot}{self.op}{format_value(self.value)}"


def _alternative(index: int, value):
    if index < N_CELLS:
        for m in (Material.GRASS, Material.STONE, Material.SAND):
            if m != value and m in slot_domain(index):
                return m
    if index == DAYLIGHT:
        return not value
    if index == FACING:
        return Direction(value).opposite
    return 0 if value != 0 else 1


_COND_RE = re.compile(r"^(?P<slot>.+?)\s*(?P<op>==|>=|<=)\s*(?P<value>\S+)$")


def parse_condition(text: str) -> Condition:
    m = _COND_RE.match(text.strip())
    if not m:
        raise ClaimSyntaxError(f"malformed condition {text!r}")
    try:
        return Condition(m["slot"], m["op"], m["value"])
    except EditError as exc:
        raise ClaimSyntaxError(str(exc)) from exc


def _action(name: str) -> Action:
    try:
        return Action[name.strip().upper()]
    except KeyError:
        raise ClaimSyntaxError(f"unknown action {name!r}") from None


@dataclass(frozen=True)
class Invariance:
    slot: str

    def __post_init__(self):
        object.__setattr__(self, "slot", canonical_slot(self.slot))


@dataclass(frozen=True)
class Necessity:
    condition: Condition
    action: Action


@dataclass(frozen=True)
class Trigger:
    condition: Condition
    action: Action


INFLUENCE_DIRECTIONS = ("increase", "decrease", "presence", "absence")


@dataclass(frozen=True)
class Influence:
    slot: str
    direction: str
    effect: str  # toward | away
    action: Action
    value: Any = None

    def __post_init__(self):
        idx = slot_index(self.slot)
        object.__setattr__(self, "slot", SLOTS[idx])
        if self.direction not in INFLUENCE_DIRECTIONS:
            raise ClaimSyntaxError(f"unknown direction {self.direction!r}")
        if self.effect not in ("toward", "away"):
            raise ClaimSyntaxError(f"unknown effect {self.effect!r}")
        if self.direction in ("presence", "absence"):
            if self.value is None:
                raise ClaimSyntaxError(f"{self.direction} needs a value")
            object.__setattr__(self, "value", coerce_value(idx, self.value))
        elif not _is_count(idx):
            raise ClaimSyntaxError(f"{self.direction} needs a count slot, not {self.slot}")
        elif self.value is not None:
            raise ClaimSyntaxError(f"{self.direction} takes no value")


@dataclass(frozen=True)
class CounterfactualEdit:
    edits: tuple[Edit, ...]
    target: Action

    def __post_init__(self):
        object.__setattr__(self, "edits", make_edits(self.edits))


@dataclass(frozen=True)
class Plan:
    actions: tuple[Action, ...]

    def __post_init__(self):
        if not 1 <= len(self.actions) <= MAX_PLAN_HORIZON:
            raise ClaimSyntaxError(f"plan length must be in [1, {MAX_PLAN_HORIZON}]")
        object.__setattr__(self, "actions", tuple(Action(a) for a in self.actions))


Payload = Union[Invariance, Necessity, Trigger, Influence, CounterfactualEdit, Plan]

_KIND = {
    Invariance: "invariance", Necessity: "necessity", Trigger: "trigger",
    Influence: "influence", CounterfactualEdit: "counterfactual", Plan: "plan",
}


@dataclass(frozen=True)
class Claim:
    id: str
    payload: Payload
    scope: str = "query"

    @property
    def kind(self) -> str:
        return _KIND[type(self.payload)]

    def __str__(self) -> str:
        return render_claim(self)


def _body(p: Payload) -> str:
    if isinstance(p, Invariance):
        return f"invariance {p.slot}"
    if isinstance(p, (Necessity, Trigger)):
        return f"{_KIND[type(p)]} {p.condition} -> {p.action.name}"
    if isinstance(p, Influence):
        d = p.direction if p.value is None else f"{p.direction}={format_value(p.value)}"
        return f"influence {p.slot} {d} {p.effect} {p.action.name}"
    if isinstance(p, CounterfactualEdit):
        return f"counterfactual {format_edits(p.edits)} -> {p.target.name}"
    return "plan " + " ".join(a.name for a in p.actions)


def render_claim(claim: Claim) -> str:
    return f"[{claim.id}] {_body(claim.payload)}"


def render_claims(claims: Iterable[Claim]) -> str:
    return "\n".join(render_claim(c) for c in claims)


_LINE_RE = re.compile(r"^\[(?P<id>[A-Za-z0-9_.-]+)\]\s+(?P<kind>[a-z_]+)\s*(?P<rest>.*)$")
_INFL_RE = re.compile(r"^(?P<slot>\S+)\s+(?P<dir>[a-z]+)(?:=(?P<value>\S+))?\s+(?P<effect>toward|away)\s+(?P<action>\S+)$")


def _split_arrow(rest: str) -> tuple[str, Action]:
    lhs, arrow, rhs = rest.rpartition("->")
    if not arrow:
        raise ClaimSyntaxError(f"missing '->' in {rest!r}")
    return lhs.strip(), _action(rhs)


def parse_claim(line: str, scope: str = "query") -> Claim:
    m = _LINE_RE.match(line.strip())
    if not m:
        raise ClaimSyntaxError(f"not a claim line: {line!r}")
    kind, rest = m["kind"], m["rest"].strip()
    try:
        if kind == "invariance":
            payload: Payload = Invariance(rest)
        elif kind in ("necessity", "trigger"):
            lhs, action = _split_arrow(rest)
            cls = Necessity if kind == "necessity" else Trigger
            payload = cls(parse_condition(lhs), action)
        elif kind == "influence":
            im = _INFL_RE.match(rest)
            if not im:
                raise ClaimSyntaxError(f"malformed influence claim {rest!r}")
            payload = Influence(im["slot"], im["dir"], im["effect"], _action(im["action"]), im["value"])
        elif kind == "counterfactual":
            lhs, action = _split_arrow(rest)
            atoms = () if lhs in ("{}", "") else tuple(parse_edit(a) for a in lhs.split(";"))
            payload = CounterfactualEdit(atoms, action)
        elif kind == "plan":
            payload = Plan(tuple(_action(a) for a in rest.split()))
        else:
            raise ClaimSyntaxError(f"unknown claim kind {kind!r}")
    except EditError as exc:
        raise ClaimSyntaxError(str(exc)) from exc
    return Claim(m["id"], payload, scope)


def parse_claims(text: str, scope: str = "query", strict: bool = True) -> list[Claim]:
    """Parse every ``[id] ...`` line; other lines are ignored.

    With ``strict=False`` malformed claim lines are dropped with a logged
    diagnostic instead of raising.
    """
    out = []
    for line in text.splitlines():
        if not line.strip().startswith("["):
            continue
        try:
            out.append(parse_claim(line, scope))
        except ClaimSyntaxError as exc:
            if strict:
                raise
            log.warning("dropping claim line %r: %s", line.strip(), exc)
    return out


def extract_claims(draft, reparse: Optional[Callable[[str], str]] = None) -> list[Claim]:
    """Claims of a draft.

    Structured drafts are parsed strictly from their rendered text. Free-form
    drafts are parsed leniently; when nothing parses from non-empty text,
    ``reparse`` is asked once for a corrected reply before giving up.
    """
    scope = getattr(draft, "scope", "query")
    if getattr(draft, "structured", True):
        return parse_claims(draft.text, scope)
    claims = parse_claims(draft.text, scope, strict=False)
    if claims or not _has_claim_lines(draft.text):
        return claims
    if reparse is not None:
        claims = parse_claims(reparse(draft.text), scope, strict=False)
        if claims:
            return claims
    raise ExtractionError("no parseable claims in model reply")


def _has_claim_lines(text: str) -> bool:
    return any(line.strip().startswith("[") for line in text.splitlines())


# --------------------------------------------------------------------------
# evidence analysis


class EvidenceKind(str, Enum):
    FAITHFUL_TOOL = "FaithfulTool"
    NOISY_TOOL = "NoisyTool"
    PRIOR = "Prior"
    CONTEXT_INCONSISTENT = "ContextInconsistent"


@dataclass(frozen=True)
class EvidenceTag:
    kind: EvidenceKind
    source: Optional[ToolResult] = field(default=None, compare=False)
    note: str = ""

    def to_json(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind.value}
        if self.source is not None:
            out["tool"] = self.source.tool
        if self.note:
            out["note"] = self.note
        return out


def _same_edits(a: Iterable[Edit], b: Iterable[Edit]) -> bool:
    return set(a) == set(b)


def entails(result: ToolResult, claim: Claim, state: State) -> bool:
    """Syntactic entailment by one faithful result on the claim's own state."""
    if not result.faithful or result.state != state:
        return False
    p = claim.payload
    if isinstance(p, CounterfactualEdit) and result.tool == "counterfactual":
        cf = result.value
        return cf is not None and cf.validated and _same_edits(cf.edits, p.edits) and cf.new_action == p.target
    if isinstance(p, CounterfactualEdit) and result.tool == "edit_state":
        out = result.value
        return _same_edits(out.edits, p.edits) and out.action == p.target
    if isinstance(p, Plan) and result.tool == "rollout":
        observed = tuple(st.action for st in result.value)
        return observed[: len(p.actions)] == p.actions
    if isinstance(p, Trigger) and result.tool == "edit_state":
        out = result.value
        want = (Edit(p.condition.slot, p.condition.establish_value()),)
        return _same_edits(out.edits, want) and out.action == p.action
    if isinstance(p, Necessity) and result.tool == "edit_state":
        if not p.condition.holds(state):
            return False
        try:
            want = (Edit(p.condition.slot, p.condition.violation_value()),)
        except PlanInfeasible:
            return False
        out = result.value
        return _same_edits(out.edits, want) and out.action != p.action
    return False


def context_inconsistent(claim: Claim, state: State) -> Optional[str]:
    p = claim.payload
    if isinstance(p, Necessity) and not p.condition.holds(state):
        return f"{p.condition} is false in the current state"
    if isinstance(p, Influence) and p.direction in ("presence", "absence"):
        present = state.values[slot_index(p.slot)] == p.value
        if present != (p.direction == "presence"):
            return f"{p.slot} is {format_value(state.values[slot_index(p.slot)])}"
    return None


def analyze_evidence(claim: Claim, tool_results: Sequence[ToolResult], state: State
                     ) -> tuple[list[EvidenceTag], bool]:
    """Tag the claim's supporting results and decide whether it needs testing."""
    tags = [
        EvidenceTag(EvidenceKind.FAITHFUL_TOOL if r.faithful else EvidenceKind.NOISY_TOOL, r)
        for r in tool_results
    ]
    if not tags:
        tags.append(EvidenceTag(EvidenceKind.PRIOR))
    inconsistent = context_inconsistent(claim, state)
    if inconsistent:
        tags.append(EvidenceTag(EvidenceKind.CONTEXT_INCONSISTENT, note=inconsistent))
        return tags, True
    entailed = any(entails(r, claim, state) for r in tool_results)
    return tags, not entailed


# --------------------------------------------------------------------------
# test planning and execution


@dataclass(frozen=True)
class Expectation:
    # same: decision unchanged; is / not: decision (not) equal to action;
    # leaves: factual decision is action and the edited one is not
    mode: str
    action: Optional[Action] = None

    def check(self, factual: Action, observed: Action) -> bool:
        if self.mode == "same":
            return observed == factual
        if self.mode == "is":
            return observed == self.action
        if self.mode == "leaves":
            return factual == self.action and observed != self.action
        return observed != self.action

    def __str__(self) -> str:
        if self.mode == "same":
            return "unchanged"
        prefix = {"is": "= ", "not": "!= ", "leaves": "leaves "}[self.mode]
        return prefix + self.action.name


@dataclass(frozen=True)
class TestCall:
    __test__ = False
    kind: str  # edit | rollout
    edits: tuple = ()
    expect: Optional[Expectation] = None
    actions: tuple[Action, ...] = ()

    def describe(self) -> str:
        if self.kind == "rollout":
            return f"rollout {len(self.actions)} expect " + " ".join(a.name for a in self.actions)
        return f"edit {format_edits(self.edits)} expect {self.expect}"

    def to_json(self) -> dict:
        if self.kind == "rollout":
            return {"kind": "rollout", "expect": [a.name for a in self.actions]}
        return {
            "kind": "edit",
            "edits": [[slot, format_value(v)] for slot, v in self.edits],
            "expect": str(self.expect),
        }


@dataclass(frozen=True)
class TestPlan:
    __test__ = False
    claim_id: str
    state: State = field(repr=False)
    calls: tuple[TestCall, ...] = ()
    infeasible: Optional[str] = None


_COUNT_PROBES = (1, 5, 9, 0)
_CELL_PROBES = (
    Material.GRASS, Material.STONE, Material.TREE, Material.WATER, Material.SAND,
    Material.PATH, Material.PLANT,
)


def probe_values(index: int, current) -> list:
    """Up to three canonical alternative values for an invariance test."""
    if index < N_CELLS:
        pool = [m for m in _CELL_PROBES if m in slot_domain(index)]
    elif index == DAYLIGHT:
        pool = [False, True]
    elif index == FACING:
        pool = list(Direction)
    else:
        pool = list(_COUNT_PROBES)
    return [v for v in pool if v != current][:MAX_CALLS]


def _edit(slot: str, value, expect: Expectation) -> TestCall:
    return TestCall("edit", (Edit(slot, value),), expect)


def _influence_edits(p: Influence) -> tuple[Any, Any]:
    """(edit along the claimed direction, edit against it)."""
    if p.direction == "increase":
        return 9, 0
    if p.direction == "decrease":
        return 0, 9
    other = _alternative(slot_index(p.slot), p.value)
    return (p.value, other) if p.direction == "presence" else (other, p.value)


def plan_tests(claim: Claim, state: State) -> TestPlan:
    """Canonical falsification plan for one claim.

    Raises :class:`PlanInfeasible` when no legal edit expresses the test.
    """
    p = claim.payload
    calls: list[TestCall]
    if isinstance(p, Invariance):
        idx = slot_index(p.slot)
        same = Expectation("same")
        calls = [_edit(p.slot, v, same) for v in probe_values(idx, state.values[idx])]
    elif isinstance(p, Necessity):
        calls = [_edit(p.condition.slot, p.condition.violation_value(), Expectation("leaves", p.action))]
    elif isinstance(p, Trigger):
        calls = [_edit(p.condition.slot, p.condition.establish_value(), Expectation("is", p.action))]
    elif isinstance(p, Influence):
        along, against = _influence_edits(p)
        pro, con = ("is", "not") if p.effect == "toward" else ("not", "is")
        calls = [_edit(p.slot, along, Expectation(pro, p.action)),
                 _edit(p.slot, against, Expectation(con, p.action))]
    elif isinstance(p, CounterfactualEdit):
        calls = [TestCall("edit", p.edits, Expectation("is", p.target))]
        # minimality: one atom fewer must not already reach the target
        if p.edits:
            calls.append(TestCall("edit", p.edits[:-1], Expectation("not", p.target)))
    else:
        calls = [TestCall("rollout", actions=p.actions)]
    if not calls:
        raise PlanInfeasible(f"no test expresses {render_claim(claim)}")
    assert len(calls) <= MAX_CALLS
    return TestPlan(claim.id, state, tuple(calls))


@dataclass(frozen=True)
class TestResult:
    __test__ = False
    call: TestCall
    outcome: Any
    valid: bool
    consistent: bool
    note: str = ""
    tool_result: Optional[ToolResult] = field(default=None, compare=False, repr=False)

    def to_json(self) -> dict:
        if isinstance(self.outcome, Action):
            outcome: Any = self.outcome.name
        elif isinstance(self.outcome, tuple):
            outcome = [a.name for a in self.outcome]
        else:
            outcome = self.outcome
        out = {"call": self.call.to_json(), "outcome": outcome, "valid": self.valid,
               "consistent": self.consistent}
        if self.note:
            out["note"] = self.note
        return out


def execute_plan(policy: PolicyProfile | str, plan: TestPlan) -> list[TestResult]:
    """Run each planned call against the faithful tools."""
    policy = profile_from_name(policy)
    state = plan.state
    factual = decide(policy, state)
    results = []
    for call in plan.calls:
        if call.kind == "rollout":
            results.append(_run_rollout_call(policy, state, call))
            continue
        try:
            tr = edit_and_decide(policy, state, call.edits)
        except EditError as exc:
            results.append(TestResult(call, None, False, False, f"invalid edit: {exc}"))
            continue
        observed = tr.value.action
        results.append(TestResult(call, observed, True, call.expect.check(factual, observed), tool_result=tr))
    return results


def _run_rollout_call(policy, state: State, call: TestCall) -> TestResult:
    tr = run_rollout(policy, state, len(call.actions))
    observed = tuple(st.action for st in tr.value)
    if observed == call.actions:
        return TestResult(call, observed, True, True, tool_result=tr)
    first = next(i for i, (a, b) in enumerate(zip(observed, call.actions)) if a != b)
    if first == 0:
        return TestResult(call, observed, True, False, "diverges at step 1", tr)
    return TestResult(call, observed, False, False, f"diverges at step {first + 1}", tr)


# --------------------------------------------------------------------------
# verdicts


class VerdictLabel(str, Enum):
    CORROBORATED = "Corroborated"
    REFUTED = "Refuted"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class Verdict:
    label: VerdictLabel
    justification: tuple = ()
    note: str = ""


def assign_verdict(claim: Claim, results: Sequence[TestResult], note: str = "") -> Verdict:
    valid = [r for r in results if r.valid]
    if any(not r.consistent for r in valid):
        return Verdict(VerdictLabel.REFUTED, tuple(results), note)
    if valid:
        return Verdict(VerdictLabel.CORROBORATED, tuple(results), note)
    return Verdict(VerdictLabel.INCONCLUSIVE, tuple(results), note or "no valid test")


@dataclass
class ClaimReport:
    claim: Claim
    tags: list[EvidenceTag]
    needs_verification: bool
    plan: Optional[TestPlan]
    results: list[TestResult]
    verdict: Verdict

    @property
    def calls(self) -> int:
        return len(self.results)

    def to_json(self) -> dict:
        return {
            "claim": render_claim(self.claim),
            "kind": self.claim.kind,
            "tags": [t.to_json() for t in self.tags],
            "needs_verification": self.needs_verification,
            "plan": [c.to_json() for c in self.plan.calls] if self.plan else [],
            "results": [r.to_json() for r in self.results],
            "verdict": self.verdict.label.value,
            "note": self.verdict.note,
        }


@dataclass
class VerificationReport:
    entries: list[ClaimReport]

    def summary(self) -> dict[str, int]:
        counts = {v.value: 0 for v in VerdictLabel}
        for e in self.entries:
            counts[e.verdict.label.value] += 1
        counts["tool_calls"] = sum(e.calls for e in self.entries)
        return counts

    def by_label(self, label: VerdictLabel) -> list[ClaimReport]:
        return [e for e in self.entries if e.verdict.label is label]

    def to_json(self) -> dict:
        return {"claims": [e.to_json() for e in self.entries], "summary": self.summary()}

    def audit_table(self) -> str:
        rows = ["| claim | evidence | calls | verdict |", "|---|---|---|---|"]
        for e in self.entries:
            tags = ", ".join(t.kind.value for t in e.tags)
            rows.append(f"| {render_claim(e.claim)} | {tags} | {e.calls} | {e.verdict.label.value} |")
        return "\n".join(rows)


def verify_claim(claim: Claim, policy, state: State, evidence: Sequence[ToolResult] = ()) -> ClaimReport:
    tags, needs = analyze_evidence(claim, evidence, state)
    if not needs:
        support = tuple(t.source for t in tags if t.kind is EvidenceKind.FAITHFUL_TOOL)
        verdict = Verdict(VerdictLabel.CORROBORATED, support, "entailed by faithful evidence")
        return ClaimReport(claim, tags, False, None, [], verdict)
    try:
        plan = plan_tests(claim, state)
    except PlanInfeasible as exc:
        return ClaimReport(claim, tags, True, None, [], assign_verdict(claim, [], str(exc)))
    results = execute_plan(policy, plan)
    return ClaimReport(claim, tags, True, plan, results, assign_verdict(claim, results))


def verify(draft, policy, state: State, reparse=None) -> VerificationReport:
    """Extract, analyse, test and label every claim of ``draft``."""
    evidence = getattr(draft, "evidence", {}) or {}
    entries = [
        verify_claim(c, policy, state, evidence.get(c.id, ()))
        for c in extract_claims(draft, reparse)
    ]
    return VerificationReport(entries)


# --------------------------------------------------------------------------
# brute-force oracle and planted suite


def oracle_label(policy, state: State, claim: Claim) -> Optional[bool]:
    """Truth of a claim by exhaustive evaluation over the slot's domain.

    ``None`` marks claims that are neither cleanly true nor cleanly false
    (e.g. a necessity condition that matters for some violating values only).
    """
    policy = profile_from_name(policy)
    factual = decide(policy, state)
    p = claim.payload

    def with_value(slot, v):
        return decide(policy, state.replace({slot_index(slot): v}))

    if isinstance(p, Invariance):
        idx = slot_index(p.slot)
        return all(with_value(p.slot, v) == factual for v in slot_domain(idx))
    if isinstance(p, Necessity):
        if not p.condition.holds(state) or factual != p.action:
            return False
        idx = p.condition.index
        violating = [v for v in slot_domain(idx) if not p.condition.holds(state.replace({idx: v}))]
        changed = [with_value(p.condition.slot, v) != p.action for v in violating]
        if all(changed):
            return True
        if not any(changed):
            return False
        return None
    if isinstance(p, Trigger):
        return with_value(p.condition.slot, p.condition.establish_value()) == p.action
    if isinstance(p, CounterfactualEdit):
        return decide(policy, apply_edit(state, p.edits)) == p.target
    if isinstance(p, Plan):
        return tuple(st.action for st in rollout(policy, state, len(p.actions))) == p.actions
    raise TypeError("no oracle for influence claims")


@dataclass(frozen=True)
class PlantedClaim:
    policy: PolicyProfile
    state: State
    claim: Claim
    truth: bool
    template: str


def _quiet(rng: random.Random) -> State:
    """Random distant scenery with a cleared neighbourhood and full gauges."""
    s = random_state(rng.randrange(1 << 30))
    clear = {}
    for i in range(N_CELLS):
        dx, dy = i % 9 - 4, i // 9 - 3
        if abs(dx) + abs(dy) <= 2:
            clear[i] = Material.GRASS
    clear.update({slot_index(g): 9 for g in ("health", "food", "drink", "energy")})
    return s.replace(clear)


def _faced_slot(state: State) -> str:
    return SLOTS[state.faced_index]


def _tool_for(policy: PolicyProfile, material: Material) -> str:
    return {Material.DIAMOND: "iron_pickaxe", Material.IRON: "stone_pickaxe",
            Material.STONE: "wood_pickaxe", Material.COAL: "wood_pickaxe"}[material]


_MINEABLE = {
    PolicyProfile.DIAMOND_SEEKER: (Material.DIAMOND, Material.IRON, Material.STONE),
    PolicyProfile.ITEM_HOARDER: (Material.DIAMOND, Material.IRON, Material.STONE, Material.COAL),
    PolicyProfile.PACIFIST: (Material.STONE,),
}

_UNREAD = {
    PolicyProfile.DIAMOND_SEEKER: ("daylight", "inventory_sapling", "inventory_wood_sword",
                                   "inventory_stone_sword", "inventory_iron_sword", "inventory_diamond"),
    PolicyProfile.ITEM_HOARDER: ("daylight", "inventory_diamond"),
    PolicyProfile.PACIFIST: ("daylight", "inventory_wood_sword", "inventory_iron_sword",
                             "inventory_diamond", "inventory_coal", "inventory_iron"),
}


def _mining_scene(policy, rng):
    s = _quiet(rng)
    m = rng.choice(_MINEABLE[policy])
    tool = _tool_for(policy, m)
    s = s.replace({s.faced_index: m, slot_index(f"inventory_{tool}"): 1})
    if m is Material.COAL:
        s = s.replace({slot_index("inventory_coal"): 0})
    return s, tool


def _gauge_scene(policy, rng):
    s = _quiet(rng)
    gauge, material = rng.choice([("drink", Material.WATER), ("food", Material.PLANT)])
    return s.replace({s.faced_index: material, slot_index(gauge): 1}), gauge


# Each template returns (state, claim payload). True templates assert what
# the fired rule depends on; false ones assert the opposite.
def _t_necessity_tool(policy, rng):
    s, tool = _mining_scene(policy, rng)
    return s, Necessity(Condition(f"inventory_{tool}", ">=", 1), Action.DO)


def _t_necessity_gauge(policy, rng):
    s, gauge = _gauge_scene(policy, rng)
    return s, Necessity(Condition(gauge, "<=", 2), Action.DO)


def _t_trigger_tree(policy, rng):
    s = _quiet(rng)
    return s, Trigger(Condition(_faced_slot(s), "==", Material.TREE), Action.DO)


def _t_trigger_sleep(policy, rng):
    s = _quiet(rng)
    return s, Trigger(Condition("energy", "<=", rng.choice((0, 1, 2))), Action.SLEEP)


def _t_invariance_unread(policy, rng):
    s = _quiet(rng)
    return s, Invariance(rng.choice(_UNREAD[policy]))


def _f_invariance_tool(policy, rng):
    s, tool = _mining_scene(policy, rng)
    return s, Invariance(f"inventory_{tool}")


def _f_invariance_faced(policy, rng):
    s, _ = _mining_scene(policy, rng)
    return s, Invariance(_faced_slot(s))


def _f_invariance_gauge(policy, rng):
    s, gauge = _gauge_scene(policy, rng)
    return s, Invariance(gauge)


def _f_necessity_unread(policy, rng):
    s, _ = _mining_scene(policy, rng)
    slot = rng.choice(_UNREAD[policy])
    if slot == "daylight":
        cond = Condition(slot, "==", s.get(slot))
    else:
        s = s.replace({slot_index(slot): rng.randint(1, 9)})
        cond = Condition(slot, ">=", 1)
    return s, Necessity(cond, Action.DO)


def _f_trigger_wrong(policy, rng):
    s = _quiet(rng)
    return s, Trigger(Condition(_faced_slot(s), "==", Material.TREE), Action.SLEEP)


TRUE_TEMPLATES = (_t_necessity_tool, _t_necessity_gauge, _t_trigger_tree, _t_trigger_sleep, _t_invariance_unread)
FALSE_TEMPLATES = (_f_invariance_tool, _f_invariance_faced, _f_invariance_gauge, _f_necessity_unread, _f_trigger_wrong)


def planted_suite(seed: int = 0, n_true: int = 100, n_false: int = 100) -> list[PlantedClaim]:
    """Seeded claims whose truth is fixed by construction and confirmed by
    :func:`oracle_label`; drafts the oracle disagrees with are redrawn."""
    rng = random.Random(seed)
    profiles = list(PolicyProfile)
    out: list[PlantedClaim] = []
    for truth, n, templates in ((True, n_true, TRUE_TEMPLATES), (False, n_false, FALSE_TEMPLATES)):
        for k in range(n):
            policy = profiles[k % len(profiles)]
            template = templates[(k // len(profiles)) % len(templates)]
            for _ in range(100):
                state, payload = template(policy, rng)
                claim = Claim(f"p{len(out) + 1}", payload, "planted")
                if oracle_label(policy, state, claim) is truth:
                    break
            else:
                raise RuntimeError(f"template {template.__name__} never produced a {truth} claim")
            out.append(PlantedClaim(policy, state, claim, truth, template.__name__.lstrip("_")))
    return out
