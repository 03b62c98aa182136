"""XAI tools: state editing, counterfactual search, Shapley attribution and
HIGHLIGHTS-style saliency.

State editing and counterfactuals report the target policy's own decisions and
are faithful by construction. Attribution and saliency are post-hoc summaries
and are classed as noisy.
"""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Any, Iterable, Optional

from .craftworld import (
    CENTER, DAYLIGHT, FACING, N_CELLS, N_SLOTS, S0, SLOTS, Action, Direction,
    Edit, State, apply_edit, cell_offset, edits_to_json, format_edits,
    format_value, make_edits, render_state, slot_domain, state_to_json,
)
from .policies import (
    PolicyProfile, Step, decide, emittable_actions, preferences,
    profile_from_name, rollout, spread,
)

__all__ = [
    "FaithfulnessClass", "ToolResult", "EditOutcome", "DecisionCondition",
    "ANY_CHANGE", "TargetAction", "CounterfactualResult", "CounterfactualNotFound",
    "Attribution", "SaliencySummary", "edit_and_decide", "find_counterfactual",
    "shapley_attribution", "highlights", "run_rollout", "counterfactual_tool",
    "attribution_tool", "highlights_tool", "candidate_atoms", "active_slots",
]


class FaithfulnessClass(str, Enum):
    FAITHFUL_BY_CONSTRUCTION = "FaithfulByConstruction"
    NOISY_POST_HOC = "NoisyPostHoc"


FAITHFUL = FaithfulnessClass.FAITHFUL_BY_CONSTRUCTION
NOISY = FaithfulnessClass.NOISY_POST_HOC

TOOL_CLASS = {
    "edit_state": FAITHFUL,
    "counterfactual": FAITHFUL,
    "rollout": FAITHFUL,
    "shap": NOISY,
    "highlights": NOISY,
}


@dataclass
class ToolResult:
    tool: str
    faithfulness: FaithfulnessClass
    payload: dict[str, Any]
    provenance: str
    value: Any = field(default=None, repr=False, compare=False)
    state: Optional[State] = field(default=None, repr=False, compare=False)

    @property
    def faithful(self) -> bool:
        return self.faithfulness is FAITHFUL

    def to_json(self) -> dict[str, Any]:
        return {
            "tool": self.tool,
            "class": self.faithfulness.value,
            "payload": self.payload,
            "provenance": self.provenance,
        }

    def to_text(self) -> str:
        tag = "faithful" if self.faithful else "noisy post-hoc"
        body = json.dumps(self.payload, sort_keys=True)
        return f"[{self.tool} | {tag}] {body}"


def _result(tool: str, payload: dict, provenance: str, value: Any, state: State) -> ToolResult:
    return ToolResult(tool, TOOL_CLASS[tool], payload, provenance, value, state)


# --------------------------------------------------------------------------
# state editing


@dataclass(frozen=True)
class EditOutcome:
    edits: tuple[Edit, ...]
    edited_state: State
    action: Action


def edit_and_decide(policy: PolicyProfile | str, state: State, edits) -> ToolResult:
    """Apply ``edits`` and report the policy's decision on the edited state.

    Raises :class:`~fax.craftworld.EditError` on invalid edits; they are never
    repaired.
    """
    policy = profile_from_name(policy)
    atoms = make_edits(edits)
    edited = apply_edit(state, atoms)
    action = decide(policy, edited)
    payload = {"edits": edits_to_json(atoms), "action": action.name}
    return _result("edit_state", payload, f"policy={policy}; edits={format_edits(atoms)}",
                   EditOutcome(atoms, edited, action), state)


# --------------------------------------------------------------------------
# counterfactual search


@dataclass(frozen=True)
class DecisionCondition:
    """``target=None`` means any change away from the factual action."""

    target: Optional[Action] = None

    def holds(self, factual: Action, action: Action) -> bool:
        if self.target is None:
            return action != factual
        return action == self.target

    def __str__(self) -> str:
        return "AnyChange" if self.target is None else f"TargetAction({self.target.name})"


ANY_CHANGE = DecisionCondition()


def TargetAction(action: Action | str) -> DecisionCondition:
    return DecisionCondition(Action[action] if isinstance(action, str) else Action(action))


@dataclass(frozen=True)
class CounterfactualResult:
    edits: tuple[Edit, ...]
    new_action: Action
    cost: int
    validated: bool


class CounterfactualNotFound(LookupError):
    def __init__(self, reason: str = "budget_exhausted"):
        super().__init__(reason)
        self.reason = reason


BEAM_WIDTH = 256
_COUNT_PROBES = (0, 1, 9)


def _atom_values(index: int, current) -> list:
    if index < N_CELLS or index == FACING:
        return [v for v in slot_domain(index) if v != current]
    if index == DAYLIGHT:
        return [not current]
    return [v for v in _COUNT_PROBES if v != current]


def candidate_atoms(state: State) -> list[tuple[int, Any]]:
    """Single-slot edits in canonical (slot, value) order."""
    return [(i, v) for i in range(N_SLOTS) for v in _atom_values(i, state.values[i])]


def _salience(index: int) -> int:
    if index >= N_CELLS:
        return 0
    dx, dy = cell_offset(index)
    return abs(dx) + abs(dy)


def _to_edits(atoms: Iterable[tuple[int, Any]]) -> tuple[Edit, ...]:
    return tuple(Edit(SLOTS[i], v) for i, v in sorted(atoms, key=lambda a: a[0]))


def find_counterfactual(
    policy: PolicyProfile | str,
    state: State,
    condition: DecisionCondition = ANY_CHANGE,
    max_cost: int = 2,
    seed: int = 0,
) -> CounterfactualResult:
    """Minimum-cost edit set that makes the policy's decision meet ``condition``.

    Size 1 is searched exhaustively; larger sizes extend a beam of the
    ``BEAM_WIDTH`` single edits that move the preference vector most. Every
    candidate is judged by executing the policy, and the accepted set is
    re-validated through :func:`apply_edit` before it is returned.
    ``seed`` is recorded only; the search is deterministic.
    """
    if not 0 <= max_cost <= 4:
        raise ValueError("max_cost must be in [0, 4]")
    found = _cached_search(profile_from_name(policy), state, condition, max_cost)
    if found is None:
        raise CounterfactualNotFound()
    return found


@lru_cache(maxsize=4096)
def _cached_search(policy, state, condition, max_cost):
    try:
        return _search(policy, state, condition, max_cost)
    except CounterfactualNotFound:
        return None


def _search(policy: PolicyProfile, state: State, condition: DecisionCondition, max_cost: int
            ) -> CounterfactualResult:
    factual = decide(policy, state)
    if condition.holds(factual, factual):
        return CounterfactualResult((), factual, 0, True)
    if condition.target is not None and condition.target not in emittable_actions(policy):
        raise CounterfactualNotFound()
    if max_cost == 0:
        raise CounterfactualNotFound()

    base_prefs = preferences(policy, state)
    atoms = candidate_atoms(state)

    def moved(s: State) -> int:
        return sum(abs(a - b) for a, b in zip(preferences(policy, s), base_prefs))

    scored = []
    for i, v in atoms:
        s = state.replace({i: v})
        if condition.holds(factual, decide(policy, s)):
            return _accept(policy, state, condition, factual, [(i, v)])
        scored.append((-moved(s), _salience(i), len(scored), (i, v)))
    scored.sort()
    beam_atoms = [a for *_, a in scored[:BEAM_WIDTH]]
    beam: list[tuple] = [(a,) for a in beam_atoms]

    for depth in range(2, max_cost + 1):
        seen = set()
        cands = []
        for combo in beam:
            used = {i for i, _ in combo}
            for a in beam_atoms:
                if a[0] in used:
                    continue
                key = tuple(sorted(combo + (a,)))
                if key not in seen:
                    seen.add(key)
                    cands.append(key)
        cands.sort()
        ranked = []
        for key in cands:
            s = state.replace(dict(key))
            if condition.holds(factual, decide(policy, s)):
                if _locally_minimal(policy, state, condition, factual, key):
                    return _accept(policy, state, condition, factual, list(key))
                continue
            if depth < max_cost:
                ranked.append((-moved(s), sum(_salience(i) for i, _ in key), key))
        ranked.sort()
        beam = [key for *_, key in ranked[:BEAM_WIDTH]]
    raise CounterfactualNotFound()


def _locally_minimal(policy, state, condition, factual, key) -> bool:
    for drop in range(len(key)):
        rest = key[:drop] + key[drop + 1:]
        if condition.holds(factual, decide(policy, state.replace(dict(rest)))):
            return False
    return True


def _accept(policy, state, condition, factual, atoms) -> CounterfactualResult:
    edits = _to_edits(atoms)
    action = decide(policy, apply_edit(state, edits))
    validated = condition.holds(factual, action)
    return CounterfactualResult(edits, action, len(edits), validated)


def counterfactual_tool(policy, state: State, condition=ANY_CHANGE, max_cost: int = 2,
                        seed: int = 0) -> ToolResult:
    provenance = f"policy={profile_from_name(policy)}; condition={condition}; max_cost={max_cost}; seed={seed}"
    try:
        cf = find_counterfactual(policy, state, condition, max_cost, seed)
    except CounterfactualNotFound as exc:
        payload = {"found": False, "reason": exc.reason, "condition": str(condition)}
        return _result("counterfactual", payload, provenance, None, state)
    payload = {
        "found": True,
        "condition": str(condition),
        "edits": edits_to_json(cf.edits),
        "new_action": cf.new_action.name,
        "cost": cf.cost,
        "validated": cf.validated,
    }
    return _result("counterfactual", payload, provenance, cf, state)


# --------------------------------------------------------------------------
# Shapley attribution


@dataclass(frozen=True)
class Attribution:
    contributions: dict[str, float]
    factual_action: Action
    baseline: str
    estimator: dict[str, Any]

    def top(self, k: int) -> list[tuple[str, float]]:
        items = sorted(self.contributions.items(), key=lambda kv: (-abs(kv[1]), kv[0]))
        return items[:k]


def active_slots(state: State, baseline: State) -> list[int]:
    return [i for i in range(N_SLOTS) if state.values[i] != baseline.values[i]]


def shapley_attribution(
    policy: PolicyProfile | str,
    state: State,
    baseline: State = S0,
    max_exact_features: int = 12,
    permutations: int = 2000,
    seed: int = 0,
) -> Attribution:
    """Shapley values of the factual action's preference score.

    The players are the slots where ``state`` differs from ``baseline``; a
    coalition keeps its slots at ``state`` values and the rest at baseline.
    Exact enumeration up to ``max_exact_features`` players, otherwise seeded
    permutation sampling.
    """
    return _cached_attribution(profile_from_name(policy), state, baseline, max_exact_features,
                               permutations, seed)


@lru_cache(maxsize=4096)
def _cached_attribution(policy, state, baseline, max_exact_features, permutations, seed) -> Attribution:
    factual = decide(policy, state)
    active = active_slots(state, baseline)
    n = len(active)
    base_name = "S0" if baseline == S0 else "custom"

    def value(members: Iterable[int]) -> float:
        hybrid = baseline.replace({i: state.values[i] for i in members})
        return float(preferences(policy, hybrid)[factual])

    if n <= max_exact_features:
        phi = _exact_shapley(active, value)
        estimator: dict[str, Any] = {"kind": "exact"}
    else:
        phi = _sampled_shapley(active, value, permutations, seed)
        estimator = {"kind": "sampled", "permutations": permutations, "seed": seed, "antithetic": True, "cyclic": True}
    return Attribution({SLOTS[i]: phi[k] for k, i in enumerate(active)}, factual, base_name, estimator)


def _exact_shapley(active: list[int], value) -> list[float]:
    n = len(active)
    if n == 0:
        return []
    v = [value(active[k] for k in range(n) if mask >> k & 1) for mask in range(1 << n)]
    weights = [math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) for s in range(n)]
    phi = [0.0] * n
    for mask in range(1 << n):
        size = bin(mask).count("1")
        for k in range(n):
            if not mask >> k & 1:
                phi[k] += weights[size] * (v[mask | 1 << k] - v[mask])
    return phi


def _sampled_shapley(active: list[int], value, permutations: int, seed: int) -> list[float]:
    # Variance reduction: each random order is expanded into its n cyclic
    # shifts (every slot visits every position once), and each shift is also
    # walked in reverse.
    rng = random.Random(seed)
    n = len(active)
    cache: dict[frozenset, float] = {}

    def v(members: frozenset) -> float:
        if members not in cache:
            cache[members] = value(active[k] for k in members)
        return cache[members]

    def orders():
        base = list(range(n))
        while True:
            rng.shuffle(base)
            for shift in range(n):
                seq = base[shift:] + base[:shift]
                yield seq
                yield seq[::-1]

    phi = [0.0] * n
    for _, seq in zip(range(permutations), orders()):
        members: frozenset = frozenset()
        prev = v(members)
        for k in seq:
            members = members | {k}
            cur = v(members)
            phi[k] += cur - prev
            prev = cur
    return [p / permutations for p in phi]


def attribution_tool(policy, state: State, baseline: State = S0, seed: int = 0, **config) -> ToolResult:
    attr = shapley_attribution(policy, state, baseline, seed=seed, **config)
    payload = {
        "factual_action": attr.factual_action.name,
        "baseline": attr.baseline,
        "contributions": {k: round(v, 6) for k, v in attr.contributions.items()},
        "estimator": attr.estimator,
    }
    provenance = f"policy={profile_from_name(policy)}; baseline={attr.baseline}; seed={seed}"
    return _result("shap", payload, provenance, attr, state)


# --------------------------------------------------------------------------
# saliency


@dataclass(frozen=True)
class SaliencySummary:
    indices: list[int]
    scores: list[float]
    windows: list[tuple[int, int]]


def importance(prefs) -> float:
    return float(spread(prefs))


def highlights(policy, trajectory: list[Step], k: int, window: int = 1) -> SaliencySummary:
    """Top-``k`` steps by preference spread with non-overlapping context windows."""
    if not 1 <= k <= len(trajectory):
        raise ValueError("k must be in [1, len(trajectory)]")
    scores = [importance(st.prefs) for st in trajectory]
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    chosen: list[int] = []
    for i in order:
        if len(chosen) == k:
            break
        if all(abs(i - j) > 2 * window for j in chosen):
            chosen.append(i)
    last = len(trajectory) - 1
    return SaliencySummary(
        chosen,
        [scores[i] for i in chosen],
        [(max(0, i - window), min(last, i + window)) for i in chosen],
    )


def highlights_tool(policy, trajectory: list[Step], k: int = 3, window: int = 1) -> ToolResult:
    summary = highlights(policy, trajectory, min(k, len(trajectory)), window)
    payload = {
        "indices": summary.indices,
        "importance": summary.scores,
        "windows": [list(w) for w in summary.windows],
        "actions": [trajectory[i].action.name for i in summary.indices],
    }
    return _result("highlights", payload, f"policy={profile_from_name(policy)}; k={k}; window={window}", summary,
                   trajectory[0].state)


def run_rollout(policy, state: State, horizon: int = 8) -> ToolResult:
    traj = rollout(policy, state, horizon)
    payload = {"horizon": horizon, "actions": [st.action.name for st in traj]}
    return _result("rollout", payload, f"policy={profile_from_name(policy)}; horizon={horizon}", traj, state)
