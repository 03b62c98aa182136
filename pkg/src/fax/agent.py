"""Explanation pipelines: the verified five-stage workflow and its baselines.

Every variant runs through :func:`run_pipeline`. The backend is either the
deterministic :class:`StructuredTemplate` (normative for tests) or
:class:`RemoteChat`, a chat-completion client.
"""
from __future__ import annotations

import json
import logging
import random
import re
import threading
import time
import zlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional, Sequence

import httpx

from .claims import (
    Claim, ClaimReport, Condition, CounterfactualEdit, EvidenceKind, Influence,
    Invariance, Necessity, Plan, Trigger, VerdictLabel, VerificationReport,
    entails, extract_claims, parse_claims, render_claim, verify_claim,
)
from .craftworld import (
    DAYLIGHT, GAUGE_BASE, INV_BASE, N_CELLS, S0, SLOTS, Action, Edit,
    EditError, Material, State, cell_offset, format_edits, format_value,
    offset_name, render_state,
)
from .policies import PolicyProfile, decide, profile_from_name
from .tools import (
    ANY_CHANGE, DecisionCondition, TargetAction, ToolResult, attribution_tool,
    counterfactual_tool, edit_and_decide, highlights_tool, run_rollout,
)

__all__ = [
    "Category", "Query", "Variant", "BackendError", "Usage", "StructuredTemplate",
    "RemoteChat", "ToolRequest", "ExplanationDraft", "FinalExplanation", "Trace",
    "PipelineRun", "plan_stage", "execute_requests", "draft_stage", "final_stage",
    "run_pipeline", "prior_claims",
]

log = logging.getLogger(__name__)

ROLLOUT_HORIZON = 8
HIGHLIGHTS_K = 3
PLAN_PREFIX = 3
MAX_PROBES = 4
FREE_LOOP_CAP = 8


class Category(str, Enum):
    WHY = "why"
    WHAT_IF = "what_if"
    COUNTERFACTUAL = "counterfactual"
    PLAN = "plan"


@dataclass(frozen=True)
class Query:
    text: str
    category: Category
    note: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "category", Category(self.category))


class Variant(str, Enum):
    FAX = "fax"
    STRUCTURED_NO_VERIFY = "structured_no_verify"
    UNSTRUCTURED = "unstructured"
    NAIVE_LLM = "naive_llm"
    DASHBOARD = "dashboard"

    @property
    def label(self) -> str:
        return _VARIANT_LABELS[self]


_VARIANT_LABELS = {
    Variant.FAX: "FAX",
    Variant.STRUCTURED_NO_VERIFY: "StructuredNoVerify",
    Variant.UNSTRUCTURED: "Unstructured",
    Variant.NAIVE_LLM: "NaiveLLM",
    Variant.DASHBOARD: "Dashboard",
}


def variant_from_name(name: str | Variant) -> Variant:
    if isinstance(name, Variant):
        return name
    key = name.strip().lower().replace("-", "_")
    for v in Variant:
        if key in (v.value, v.label.lower(), v.value.replace("_", "")):
            return v
    raise ValueError(f"unknown variant {name!r}")


class BackendError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# token accounting and backends


def word_count(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class Usage:
    stage: str
    prompt_tokens: int
    completion_tokens: int
    estimated: bool

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def to_json(self) -> dict:
        return {"stage": self.stage, "prompt": self.prompt_tokens,
                "completion": self.completion_tokens, "estimated": self.estimated}


def estimate_usage(stage: str, prompt: str, completion: str) -> Usage:
    return Usage(stage, word_count(prompt), word_count(completion), True)


class StructuredTemplate:
    """Deterministic backend: claims and text are derived mechanically.

    Stage prompts are still rendered so token usage can be estimated with the
    same word-count rule the remote fallback uses.
    """

    name = "structured"
    structured = True


class RemoteChat:
    """Chat-completion client with retry and token accounting."""

    name = "remote"
    structured = False

    def __init__(self, base_url: str, model: str, api_key: Optional[str] = None,
                 temperature: float = 0.0, timeout: float = 60.0, retries: int = 2,
                 backoff: float = 0.5, max_in_flight: int = 4,
                 transport: Optional[httpx.BaseTransport] = None,
                 sleep: Callable[[float], None] = time.sleep):
        if not base_url or not model:
            raise ValueError("RemoteChat needs a base URL and a model name")
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self.model = model
        self.temperature = temperature
        self.retries = retries
        self.backoff = backoff
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._client = httpx.Client(base_url=base_url.rstrip("/") + "/", headers=headers,
                                    timeout=timeout, transport=transport)

    @classmethod
    def from_env(cls, env: Optional[dict] = None, **kwargs) -> "RemoteChat":
        import os
        env = os.environ if env is None else env
        return cls(env.get("FAX_LLM_BASE_URL", ""), env.get("FAX_LLM_MODEL", ""),
                   env.get("FAX_LLM_API_KEY"), **kwargs)

    def chat(self, stage: str, system: str, user: str) -> tuple[str, Usage]:
        body = {
            "model": self.model,
            "messages": [{"role": "system", "content": system}, {"role": "user", "content": user}],
            "temperature": self.temperature,
        }
        last: Optional[Exception] = None
        with self._slots:
            for attempt in range(self.retries + 1):
                if attempt:
                    self._sleep(self.backoff * 2 ** (attempt - 1))
                try:
                    resp = self._client.post("chat/completions", json=body)
                except httpx.HTTPError as exc:
                    last = exc
                    continue
                if resp.status_code >= 500 or resp.status_code == 429:
                    last = BackendError(f"HTTP {resp.status_code}")
                    continue
                if resp.status_code >= 400:
                    raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                return self._parse(stage, system + "\n" + user, resp)
        raise BackendError(f"chat request failed after {self.retries} retries: {last}")

    def _parse(self, stage: str, prompt: str, resp: httpx.Response) -> tuple[str, Usage]:
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed chat response: {exc}") from None
        usage = data.get("usage") or {}
        if "prompt_tokens" in usage and "completion_tokens" in usage:
            return text, Usage(stage, int(usage["prompt_tokens"]), int(usage["completion_tokens"]), False)
        return text, estimate_usage(stage, prompt, text)

    def close(self) -> None:
        self._client.close()


Backend = StructuredTemplate | RemoteChat


# --------------------------------------------------------------------------
# prompts

_ENV_BRIEF = (
    "CraftWorld is a small grid survival game. The agent sees a 9x7 window of "
    "cells around itself, carries an inventory, and has health, food, drink and "
    "energy gauges. Actions: " + ", ".join(a.name for a in Action) + "."
)

_TOOL_BRIEF = (
    "Tools: shap (feature attribution, noisy), highlights (important steps of a "
    "rollout, noisy), rollout (the agent's next actions), edit_state (apply slot "
    "edits and report the decision, faithful), counterfactual (smallest edit that "
    "changes the decision, faithful)."
)

_TOOL_SCHEMA = (
    "Tool arguments: shap takes none (baseline is the empty default state); "
    'edit_state takes "edits", a mapping from slot name to value such as {"map(center,up1)": "tree"} '
    'or {"inventory_wood": 0}; counterfactual takes "condition" ("AnyChange" or "TargetAction(ACTION)") '
    'and "max_cost" (1 or 2 edits); rollout takes "horizon" (steps, default 8); highlights takes '
    '"horizon" and "k" (number of steps to return). Slot names: map(OFFSET,OFFSET) with offsets '
    "center, leftN, rightN, upN, downN; inventory_ITEM; health, food, drink, energy; daylight; facing."
)

_CLAIM_GRAMMAR = (
    "Claim lines, one per line:\n"
    "[id] invariance SLOT\n[id] necessity SLOT>=N -> ACTION\n[id] trigger SLOT==VALUE -> ACTION\n"
    "[id] influence SLOT increase|decrease|presence=VALUE|absence=VALUE toward|away ACTION\n"
    "[id] counterfactual SLOT=VALUE; SLOT=VALUE -> ACTION\n[id] plan ACTION ACTION ..."
)


def _header(stage: str, role: str) -> str:
    return (f"STAGE: {stage}\nYou explain the behaviour of a trained agent in CraftWorld. "
            f"The agent pursues its own goals; do not assume typical player behaviour.\n{role}")


def state_brief(policy: PolicyProfile, state: State) -> str:
    return f"{render_state(state)}\nmodel decision: {decide(policy, state).name}"


def plan_prompt(query: Query, policy, state) -> tuple[str, str]:
    system = _header("PLAN", "Choose the tools needed to answer the question. Reply with a JSON list "
                     'such as [{"tool": "shap"}, {"tool": "edit_state", "args": {"edits": {"inventory_wood": 0}}}].\n'
                     + _TOOL_BRIEF + "\n" + _TOOL_SCHEMA + "\n" + _ENV_BRIEF)
    user = f"Question ({query.category.value}): {query.text}\n{_note(query)}State:\n{state_brief(policy, state)}"
    return system, user


def draft_prompt(query: Query, results: Sequence[ToolResult], policy, state) -> tuple[str, str]:
    system = _header("DRAFT", "Answer the question using the tool results as evidence. After the prose, "
                     "list every claim you make in a CLAIMS block.\n" + _CLAIM_GRAMMAR + "\n" + _ENV_BRIEF)
    user = (f"Question: {query.text}\n{_note(query)}State:\n{state_brief(policy, state)}\nTool results:\n"
            + "\n".join(r.to_text() for r in results))
    return system, user


def verify_prompt(draft_text: str) -> tuple[str, str]:
    system = _header("VERIFY", "Split the draft into atomic claims about the agent. Faithful tools "
                     "(edit_state, counterfactual) will test each claim with at most three calls; "
                     "attribution and saliency are only hints. If the draft has no claims, reply "
                     "'no claims'.\n" + _CLAIM_GRAMMAR)
    return system, f"Draft:\n{draft_text}"


def final_prompt(query: Query, report_table: str, draft_text: str = "") -> tuple[str, str]:
    system = _header("FINAL", "Write the final answer. Keep corroborated claims, drop refuted ones and "
                     "mark inconclusive ones as uncertain. Prefer faithful-tool results when evidence conflicts.")
    return system, f"Question: {query.text}\n{_note(query)}Draft:\n{draft_text}\nVerification:\n{report_table}"


def naive_prompt(query: Query, policy, state) -> tuple[str, str]:
    system = _header("ANSWER", "Answer from general knowledge of the game; no tools are available. "
                     "End with a CLAIMS block.\n" + _CLAIM_GRAMMAR + "\n" + _ENV_BRIEF)
    return system, f"Question: {query.text}\n{_note(query)}State:\n{state_brief(policy, state)}"


def free_prompt(query: Query, policy, state, history: Sequence[ToolResult]) -> tuple[str, str]:
    system = _header("FREE", 'Either call one tool, replying {"tool": NAME, "args": {...}}, or answer, '
                     'replying {"answer": TEXT}. End answers with a CLAIMS block.\n'
                     + _TOOL_BRIEF + "\n" + _CLAIM_GRAMMAR)
    seen = "\n".join(r.to_text() for r in history) or "(none)"
    return system, f"Question: {query.text}\nState:\n{state_brief(policy, state)}\nTool results so far:\n{seen}"


def _note(query: Query) -> str:
    return f"User note: {query.note}\n" if query.note else ""


# --------------------------------------------------------------------------
# trace and result types


@dataclass(frozen=True)
class ToolRequest:
    tool: str
    args: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"tool": self.tool, "args": _jsonable(self.args)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Enum):
        return obj.name if isinstance(obj, Action) else str(obj)
    if isinstance(obj, DecisionCondition):
        return str(obj)
    return obj


@dataclass
class Trace:
    events: list[dict] = field(default_factory=list)
    usage: list[Usage] = field(default_factory=list)

    def stage(self, name: str, **info) -> None:
        self.events.append({"stage": name, **_jsonable(info)})

    def tool(self, result: ToolResult, origin: str) -> None:
        self.events.append({"stage": "tool", "origin": origin, **result.to_json()})

    def tokens(self, usage: Usage) -> None:
        self.usage.append(usage)

    @property
    def stages(self) -> list[str]:
        return [e["stage"] for e in self.events if e["stage"] != "tool"]

    def tool_calls(self, tool: Optional[str] = None) -> int:
        return sum(1 for e in self.events if e["stage"] == "tool" and (tool is None or e["tool"] == tool))

    @property
    def total_tokens(self) -> int:
        return sum(u.total for u in self.usage)

    def to_json(self) -> dict:
        return {
            "events": self.events,
            "usage": [u.to_json() for u in self.usage],
            "total_tokens": self.total_tokens,
        }


@dataclass
class ExplanationDraft:
    text: str
    claims: list[Claim]
    evidence: dict[str, list[ToolResult]]
    tool_results: list[ToolResult]
    structured: bool = True
    scope: str = "query"


@dataclass
class FinalExplanation:
    variant: Variant
    text: str
    claims: list[Claim]
    verdicts: dict[str, Optional[str]]
    removed: list[dict]
    hedged: list[Claim]
    tool_results: list[ToolResult]
    tokens: int
    raw_payloads: bool = False

    def to_json(self) -> dict:
        return {
            "variant": self.variant.label,
            "text": self.text,
            "claims": [render_claim(c) for c in self.claims],
            "verdicts": self.verdicts,
            "removed": self.removed,
            "hedged": [render_claim(c) for c in self.hedged],
            "tokens": self.tokens,
        }


@dataclass
class PipelineRun:
    final: FinalExplanation
    trace: Trace
    draft: Optional[ExplanationDraft] = None
    report: Optional[VerificationReport] = None

    def to_json(self) -> dict:
        out = {"final": self.final.to_json(), "trace": self.trace.to_json()}
        if self.report is not None:
            out["verification"] = self.report.to_json()
        return out


# --------------------------------------------------------------------------
# stage 1: planning


def _probe_order(state: State) -> list[int]:
    """Active slots: faced cell, other cells nearest first, inventory, status."""
    active = [i for i in range(len(SLOTS)) if state.values[i] != S0.values[i]]
    faced = state.faced_index

    def key(i: int):
        if i == faced:
            return (0, 0, i)
        if i < N_CELLS:
            dx, dy = cell_offset(i)
            return (1, abs(dx) + abs(dy), i)
        return (2 if i < GAUGE_BASE else 3, 0, i)
    return sorted(active, key=key)


def probe_edits(state: State) -> list[dict]:
    """Single-slot resets of active slots back to the default-state value."""
    return [{SLOTS[i]: S0.values[i]} for i in _probe_order(state)[:MAX_PROBES]]


def what_if_edits(query: Query, state: State) -> list[dict]:
    text = query.text.lower()
    edits: list[dict] = []
    if "inventory" in text and "empty" in text:
        empty = {f"inventory_{k}": 0 for k, v in state.inventory.items() if v}
        if empty:
            edits.append(empty)
    if "diamond" in text:
        edits.append({_free_cell(state): Material.DIAMOND})
    if "pickaxe" in text and ("disappear" in text or "lost" in text or "lose" in text):
        edits.append({"inventory_wood_pickaxe": 0})
    return edits or probe_edits(state)


def _free_cell(state: State) -> str:
    """A grass cell two steps from the agent, preferring its right."""
    for dx, dy in ((2, 0), (0, -2), (-2, 0), (0, 2), (3, 0), (0, -3)):
        name = offset_name(dx, dy)
        if state.get(name) is Material.GRASS:
            return name
    return offset_name(2, 0)


def cf_condition(query: Query) -> DecisionCondition:
    text = query.text.lower()
    if "attack" in text or "monster" in text:
        return TargetAction(Action.DO)
    if "sleep" in text:
        return TargetAction(Action.SLEEP)
    return ANY_CHANGE


def canonical_plan(query: Query, state: State) -> list[ToolRequest]:
    c = query.category
    if c is Category.WHY:
        return [ToolRequest("shap")] + [ToolRequest("edit_state", {"edits": e}) for e in probe_edits(state)]
    if c is Category.WHAT_IF:
        return [ToolRequest("edit_state", {"edits": e}) for e in what_if_edits(query, state)]
    if c is Category.COUNTERFACTUAL:
        return [ToolRequest("counterfactual", {"condition": cf_condition(query), "max_cost": 2})]
    return [ToolRequest("rollout", {"horizon": ROLLOUT_HORIZON}),
            ToolRequest("highlights", {"horizon": ROLLOUT_HORIZON, "k": HIGHLIGHTS_K})]


def plan_stage(query: Query, state: State, backend: Backend, policy=None,
               trace: Optional[Trace] = None) -> list[ToolRequest]:
    trace = trace if trace is not None else Trace()
    policy = profile_from_name(policy or PolicyProfile.DIAMOND_SEEKER)
    system, user = plan_prompt(query, policy, state)
    if backend.structured:
        requests = canonical_plan(query, state)
        trace.tokens(estimate_usage("plan", system + "\n" + user,
                                    json.dumps([r.to_json() for r in requests])))
    else:
        reply, usage = backend.chat("plan", system, user)
        trace.tokens(usage)
        requests = parse_tool_requests(reply)
        if not requests:
            log.warning("unparseable plan reply; using the canonical tool set")
            requests = canonical_plan(query, state)
    trace.stage("plan", requests=[r.to_json() for r in requests])
    return requests


_JSON_RE = re.compile(r"(\[.*\]|\{.*\})", re.S)


def _loads(text: str):
    m = _JSON_RE.search(text)
    if not m:
        return None
    try:
        return json.loads(m.group(1))
    except ValueError:
        return None


def parse_tool_requests(text: str) -> list[ToolRequest]:
    data = _loads(text)
    if isinstance(data, dict):
        data = [data]
    out = []
    for item in data or []:
        if isinstance(item, dict) and isinstance(item.get("tool"), str):
            out.append(ToolRequest(item["tool"], dict(item.get("args") or {})))
    return out


# --------------------------------------------------------------------------
# stage 2: tool execution


def _condition_arg(raw) -> DecisionCondition:
    if isinstance(raw, DecisionCondition):
        return raw
    if raw in (None, "", "any", "AnyChange"):
        return ANY_CHANGE
    m = re.match(r"^TargetAction\((\w+)\)$", str(raw))
    return TargetAction(m.group(1) if m else str(raw).upper())


def execute_request(req: ToolRequest, policy, state: State, seed: int) -> ToolResult:
    a = req.args
    if req.tool == "shap":
        return attribution_tool(policy, state, seed=seed)
    if req.tool == "edit_state":
        return edit_and_decide(policy, state, a.get("edits", {}))
    if req.tool == "counterfactual":
        return counterfactual_tool(policy, state, _condition_arg(a.get("condition")),
                                   int(a.get("max_cost", 2)), seed)
    if req.tool == "rollout":
        return run_rollout(policy, state, int(a.get("horizon", ROLLOUT_HORIZON)))
    if req.tool == "highlights":
        traj = run_rollout(policy, state, int(a.get("horizon", ROLLOUT_HORIZON))).value
        return highlights_tool(policy, traj, int(a.get("k", HIGHLIGHTS_K)))
    raise KeyError(req.tool)


def execute_requests(requests: Sequence[ToolRequest], policy, state: State, seed: int = 0,
                     trace: Optional[Trace] = None, origin: str = "tools") -> list[ToolResult]:
    results = []
    for req in requests:
        try:
            r = execute_request(req, policy, state, seed)
        except (EditError, KeyError, ValueError) as exc:
            if trace is not None:
                trace.stage("tool_error", tool=req.tool, error=str(exc))
            continue
        if trace is not None:
            trace.tool(r, origin)
        results.append(r)
    return results


# --------------------------------------------------------------------------
# stage 3: drafting


def corrupt_attribution(result: ToolResult, rng: random.Random) -> ToolResult:
    """Permute attribution values across slots (the noise-injection hook)."""
    attr = result.value
    slots = list(attr.contributions)
    values = [attr.contributions[s] for s in slots]
    rng.shuffle(values)
    new = type(attr)(dict(zip(slots, values)), attr.factual_action, attr.baseline, attr.estimator)
    payload = dict(result.payload, contributions={s: round(v, 6) for s, v in new.contributions.items()})
    return ToolResult(result.tool, result.faithfulness, payload, result.provenance, new, result.state)


def _faced_slot(state: State) -> str:
    return SLOTS[state.faced_index]


def prior_claims(query: Query, state: State, factual: Action) -> list:
    """Generic game-knowledge claims a model might make without evidence."""
    text = query.text.lower()
    faced = _faced_slot(state)
    out: list = []
    if "wood" in text:
        out.append(Trigger(Condition(faced, "==", Material.TREE), Action.DO))
    if "sword" in text:
        out.append(Trigger(Condition("inventory_wood_pickaxe", "==", 0), Action.MAKE_WOOD_PICKAXE))
    if "run away" in text:
        out.append(Invariance("health"))
    if "attack" in text or "run away" in text:
        out.append(Trigger(Condition(faced, "==", Material.ZOMBIE), Action.DO))
    if "empty" in text:
        held = [k for k, v in state.inventory.items() if v]
        if held:
            out.append(Invariance(f"inventory_{held[0]}"))
    if "diamond" in text:
        out.append(Trigger(Condition(offset_name(2, 0), "==", Material.DIAMOND), Action.RIGHT))
    if "pickaxe" in text and "disappear" in text:
        out.append(Trigger(Condition("inventory_wood_pickaxe", "==", 0), Action.MAKE_WOOD_PICKAXE))
    if "sleep" in text:
        out.append(Trigger(Condition("energy", "<=", 2), Action.SLEEP))
        out.append(Trigger(Condition("daylight", "==", False), Action.SLEEP))
    if "plan" in text:
        out.append(Plan((factual, factual)))
    return out[:2]


def _influence_from(slot: str, phi: float, state: State, action: Action) -> Influence:
    effect = "toward" if phi > 0 else "away"
    idx = SLOTS.index(slot)
    value = state.values[idx]
    if INV_BASE <= idx < DAYLIGHT:
        direction = "increase" if value > S0.values[idx] else "decrease"
        return Influence(slot, direction, effect, action)
    return Influence(slot, "presence", effect, action, value)


def claims_from_results(results: Sequence[ToolResult], state: State, top: int = 2,
                        with_edits: bool = True) -> list[tuple[Any, list[ToolResult]]]:
    """Mechanical claim derivation from tool payloads, with evidence links."""
    out: list[tuple[Any, list[ToolResult]]] = []
    for r in results:
        if r.tool == "counterfactual" and r.value is not None and r.value.validated:
            out.append((CounterfactualEdit(r.value.edits, r.value.new_action), [r]))
        elif r.tool == "edit_state" and with_edits:
            out.append((CounterfactualEdit(r.value.edits, r.value.action), [r]))
    for r in results:
        if r.tool == "shap":
            attr = r.value
            ranked = [(s, v) for s, v in attr.top(len(attr.contributions)) if v != 0][:top]
            out.extend((_influence_from(s, v, state, attr.factual_action), [r]) for s, v in ranked)
    for r in results:
        if r.tool == "rollout":
            out.append((Plan(tuple(st.action for st in r.value[:PLAN_PREFIX])), [r]))
    return out


def _number(payloads: Sequence[tuple[Any, list]], scope: str) -> tuple[list[Claim], dict]:
    claims, evidence = [], {}
    for k, (payload, links) in enumerate(payloads, 1):
        c = Claim(f"c{k}", payload, scope)
        claims.append(c)
        evidence[c.id] = list(links)
    return claims, evidence


def describe_claim(claim: Claim) -> str:
    p = claim.payload
    if isinstance(p, Invariance):
        return f"Changing {p.slot} does not change the decision."
    if isinstance(p, Necessity):
        return f"The agent chooses {p.action.name} only while {p.condition} holds."
    if isinstance(p, Trigger):
        return f"When {p.condition}, the agent chooses {p.action.name}."
    if isinstance(p, Influence):
        what = p.direction if p.value is None else f"{p.direction} of {format_value(p.value)}"
        return f"The {what} at {p.slot} pushes the decision {p.effect} {p.action.name}."
    if isinstance(p, CounterfactualEdit):
        if not p.edits:
            return f"The agent currently chooses {p.target.name}."
        return f"After setting {format_edits(p.edits)}, the agent chooses {p.target.name}."
    return "The agent's next actions are " + ", ".join(a.name for a in p.actions) + "."


def render_draft(query: Query, claims: Sequence[Claim], results: Sequence[ToolResult]) -> str:
    lines = [f"Question: {query.text}"]
    for r in results:
        if r.tool == "counterfactual" and not r.payload.get("found"):
            lines.append(f"No counterfactual within cost {r.provenance.split('max_cost=')[-1].split(';')[0]} was found.")
        if r.tool == "highlights":
            steps = ", ".join(f"step {i + 1} ({a})" for i, a in zip(r.payload["indices"], r.payload["actions"]))
            lines.append(f"Most decisive moments: {steps}.")
    for c in claims:
        lines.append(describe_claim(c))
    lines.append("CLAIMS:")
    lines.extend(render_claim(c) for c in claims)
    return "\n".join(lines)


def link_evidence(claims: Sequence[Claim], results: Sequence[ToolResult], state: State) -> dict:
    """Evidence links for model-written claims: entailing results, plus
    attribution payloads that mention an influence claim's slot."""
    links = {}
    for c in claims:
        found = [r for r in results if entails(r, c, state)]
        if isinstance(c.payload, Influence):
            found += [r for r in results if r.tool == "shap" and c.payload.slot in r.payload["contributions"]]
        links[c.id] = found
    return links


def draft_stage(query: Query, tool_results: Sequence[ToolResult], backend: Backend, *,
                policy, state: State, variant: Variant = Variant.FAX, scope: str = "query",
                trace: Optional[Trace] = None) -> ExplanationDraft:
    trace = trace if trace is not None else Trace()
    policy = profile_from_name(policy)
    factual = decide(policy, state)
    system, user = (naive_prompt(query, policy, state) if variant is Variant.NAIVE_LLM
                    else draft_prompt(query, tool_results, policy, state))
    if backend.structured:
        top = 3 if variant is Variant.UNSTRUCTURED else 2
        payloads = claims_from_results(tool_results, state, top=top,
                                       with_edits=variant is not Variant.UNSTRUCTURED)
        payloads += [(p, []) for p in prior_claims(query, state, factual)]
        claims, evidence = _number(payloads, scope)
        text = render_draft(query, claims, tool_results)
        trace.tokens(estimate_usage("draft", system + "\n" + user, text))
        draft = ExplanationDraft(text, claims, evidence, list(tool_results), True, scope)
    else:
        text, usage = backend.chat("draft", system, user)
        trace.tokens(usage)
        claims = parse_claims(text, scope, strict=False)
        draft = ExplanationDraft(text, claims, link_evidence(claims, tool_results, state),
                                 list(tool_results), False, scope)
    trace.stage("draft", claims=[render_claim(c) for c in draft.claims])
    return draft


# --------------------------------------------------------------------------
# stage 4: verification


def verify_stage(draft: ExplanationDraft, policy, state: State, backend: Backend,
                 trace: Trace) -> VerificationReport:
    claims = draft.claims
    if not backend.structured:
        system, user = verify_prompt(draft.text)
        reply, usage = backend.chat("verify", system, user)
        trace.tokens(usage)

        def reparse(_text: str) -> str:
            again, u = backend.chat("verify", system, user + "\nReply with claim lines only.")
            trace.tokens(u)
            return again

        shadow = ExplanationDraft(reply, [], {}, draft.tool_results, False, draft.scope)
        if "no claims" in reply.lower() and not reply.strip().startswith("["):
            claims = []
        else:
            claims = extract_claims(shadow, reparse)
        draft.evidence = link_evidence(claims, draft.tool_results, state)
        draft.claims = claims
    entries: list[ClaimReport] = []
    for c in claims:
        entry = verify_claim(c, policy, state, draft.evidence.get(c.id, ()))
        for res in entry.results:
            if res.tool_result is not None:
                trace.tool(res.tool_result, "verify")
        entries.append(entry)
    report = VerificationReport(entries)
    trace.stage("verify", summary=report.summary(),
                verdicts={e.claim.id: e.verdict.label.value for e in entries})
    return report


# --------------------------------------------------------------------------
# stage 5: final response


def _rewrite(entry: ClaimReport) -> Optional[Claim]:
    """The literal observed result of the first failing test."""
    failing = next((r for r in entry.results if r.valid and not r.consistent), None)
    if failing is None:
        return None
    c = entry.claim
    if failing.call.kind == "rollout":
        payload: Any = Plan(failing.outcome)
    else:
        payload = CounterfactualEdit(failing.call.edits, failing.outcome)
    return Claim(f"{c.id}r", payload, c.scope)


def gate(report: VerificationReport) -> tuple[list[Claim], dict, list[dict], list[Claim]]:
    kept: list[Claim] = []
    verdicts: dict[str, Optional[str]] = {}
    removed: list[dict] = []
    hedged: list[Claim] = []
    for e in report.entries:
        label = e.verdict.label
        verdicts[e.claim.id] = label.value
        if label is VerdictLabel.CORROBORATED:
            kept.append(e.claim)
        elif label is VerdictLabel.REFUTED:
            new = _rewrite(e)
            removed.append({"claim": render_claim(e.claim),
                            "rewritten_as": render_claim(new) if new else None})
            if new is not None:
                kept.append(new)
                verdicts[new.id] = "Observed"
        else:
            hedged.append(e.claim)
    return kept, verdicts, removed, hedged


def render_final(query: Query, kept: Sequence[Claim], hedged: Sequence[Claim], prose: str = "") -> str:
    lines = [f"Question: {query.text}"]
    if prose:
        lines.extend(l for l in prose.splitlines() if l.strip() and not l.strip().startswith("["))
    if kept:
        lines.append("Supported by executed tests:")
        for c in kept:
            lines.append(render_claim(c))
            lines.append(f"  {describe_claim(c)}")
    if hedged:
        lines.append("Unverified, treat with caution:")
        for c in hedged:
            lines.append(f"~ possibly {render_claim(c)}")
    if not kept and not hedged:
        lines.append("No claim survived verification.")
    return "\n".join(lines)


def final_stage(draft: ExplanationDraft, report: VerificationReport, backend: Backend, *,
                query: Query, trace: Optional[Trace] = None) -> FinalExplanation:
    trace = trace if trace is not None else Trace()
    kept, verdicts, removed, hedged = gate(report)
    system, user = final_prompt(query, report.audit_table(), draft.text)
    prose = ""
    if backend.structured:
        text = render_final(query, kept, hedged)
        trace.tokens(estimate_usage("final", system + "\n" + user, text))
    else:
        prose, usage = backend.chat("final", system, user)
        trace.tokens(usage)
        text = render_final(query, kept, hedged, prose)
    trace.stage("final", kept=[render_claim(c) for c in kept], removed=removed,
                hedged=[render_claim(c) for c in hedged])
    return FinalExplanation(Variant.FAX, text, kept, verdicts, removed, hedged,
                            list(draft.tool_results), trace.total_tokens)


def _pass_through(variant: Variant, draft: ExplanationDraft, query: Query, backend: Backend,
                  trace: Trace, final_call: bool) -> FinalExplanation:
    """Final stage without verification: every draft claim passes unlabeled."""
    text = draft.text
    if final_call:
        system, user = final_prompt(query, render_claimlist(draft.claims), draft.text)
        if backend.structured:
            text = render_final(query, draft.claims, [])
            trace.tokens(estimate_usage("final", system + "\n" + user, text))
        else:
            prose, usage = backend.chat("final", system, user)
            trace.tokens(usage)
            text = render_final(query, draft.claims, [], prose)
        trace.stage("final", kept=[render_claim(c) for c in draft.claims])
    return FinalExplanation(variant, text, list(draft.claims), {c.id: None for c in draft.claims},
                            [], [], list(draft.tool_results), trace.total_tokens)


def render_claimlist(claims: Sequence[Claim]) -> str:
    return "\n".join(render_claim(c) for c in claims) or "(no claims)"


# --------------------------------------------------------------------------
# variants


def noise_rng(seed: int, query: Query, state: State) -> random.Random:
    key = f"{seed}|{query.category.value}|{query.text}|{render_state(state)}"
    return random.Random(zlib.crc32(key.encode()))


def _apply_noise(results: list[ToolResult], rng: random.Random, p: float, trace: Trace) -> list[ToolResult]:
    if p <= 0 or rng.random() >= p:
        return results
    out = []
    for r in results:
        if r.tool == "shap" and len(r.value.contributions) >= 2:
            r = corrupt_attribution(r, rng)
            trace.stage("noise", tool="shap", permuted=True)
        out.append(r)
    return out


def _dashboard(query, policy, state, seed, trace) -> FinalExplanation:
    requests = [
        ToolRequest("shap"),
        ToolRequest("counterfactual", {"condition": cf_condition(query), "max_cost": 2}),
        ToolRequest("highlights", {"horizon": ROLLOUT_HORIZON, "k": HIGHLIGHTS_K}),
    ]
    trace.stage("tools", requests=[r.to_json() for r in requests])
    results = execute_requests(requests, policy, state, seed, trace)
    text = "\n".join(r.to_text() for r in results)
    return FinalExplanation(Variant.DASHBOARD, text, [], {}, [], [], results, 0, raw_payloads=True)


_FREE_SEQUENCE = (
    ToolRequest("shap"),
    ToolRequest("rollout", {"horizon": ROLLOUT_HORIZON}),
    ToolRequest("highlights", {"horizon": ROLLOUT_HORIZON, "k": HIGHLIGHTS_K}),
)


def _unstructured(query, policy, state, backend, seed, noise, scope, trace) -> PipelineRun:
    results: list[ToolResult] = []
    rng = noise_rng(seed, query, state)
    if backend.structured:
        seq = list(_FREE_SEQUENCE)
        if query.category in (Category.COUNTERFACTUAL, Category.WHAT_IF):
            seq.append(ToolRequest("counterfactual", {"condition": cf_condition(query), "max_cost": 2}))
        for req in seq[:FREE_LOOP_CAP]:
            system, user = free_prompt(query, policy, state, results)
            trace.tokens(estimate_usage("free", system + "\n" + user, json.dumps(req.to_json())))
            results += execute_requests([req], policy, state, seed, trace, "free")
        results = _apply_noise(results, rng, noise, trace)
        draft = draft_stage(query, results, backend, policy=policy, state=state,
                            variant=Variant.UNSTRUCTURED, scope=scope, trace=trace)
    else:
        answer = None
        for _ in range(FREE_LOOP_CAP + 1):
            system, user = free_prompt(query, policy, state, results)
            reply, usage = backend.chat("free", system, user)
            trace.tokens(usage)
            data = _loads(reply)
            if isinstance(data, dict) and "tool" in data and len(results) < FREE_LOOP_CAP:
                results += execute_requests(parse_tool_requests(reply), policy, state, seed, trace, "free")
                continue
            answer = data.get("answer") if isinstance(data, dict) and "answer" in data else reply
            break
        answer = str(answer or "")
        claims = parse_claims(answer, scope, strict=False)
        draft = ExplanationDraft(answer, claims, link_evidence(claims, results, state), results, False, scope)
        trace.stage("draft", claims=[render_claim(c) for c in claims])
    final = _pass_through(Variant.UNSTRUCTURED, draft, query, backend, trace, final_call=False)
    return PipelineRun(final, trace, draft)


def _naive(query, policy, state, backend, scope, trace) -> PipelineRun:
    draft = draft_stage(query, [], backend, policy=policy, state=state,
                        variant=Variant.NAIVE_LLM, scope=scope, trace=trace)
    for c in draft.claims:
        draft.evidence[c.id] = []
    final = _pass_through(Variant.NAIVE_LLM, draft, query, backend, trace, final_call=False)
    return PipelineRun(final, trace, draft)


def run_pipeline(variant: Variant | str, query: Query, policy, state: State,
                 backend: Optional[Backend] = None, seed: int = 0, noise: float = 0.0,
                 scope: str = "query") -> PipelineRun:
    """Run one explanation variant end to end and record its trace."""
    variant = variant_from_name(variant)
    policy = profile_from_name(policy)
    backend = backend or StructuredTemplate()
    trace = Trace()
    if variant is Variant.DASHBOARD:
        return PipelineRun(_dashboard(query, policy, state, seed, trace), trace)
    if variant is Variant.NAIVE_LLM:
        return _naive(query, policy, state, backend, scope, trace)
    if variant is Variant.UNSTRUCTURED:
        return _unstructured(query, policy, state, backend, seed, noise, scope, trace)

    requests = plan_stage(query, state, backend, policy, trace)
    results = execute_requests(requests, policy, state, seed, trace)
    trace.stage("tools", calls=len(results))
    results = _apply_noise(results, noise_rng(seed, query, state), noise, trace)
    draft = draft_stage(query, results, backend, policy=policy, state=state,
                        variant=variant, scope=scope, trace=trace)
    if variant is Variant.STRUCTURED_NO_VERIFY:
        final = _pass_through(variant, draft, query, backend, trace, final_call=True)
        return PipelineRun(final, trace, draft)
    report = verify_stage(draft, policy, state, backend, trace)
    final = final_stage(draft, report, backend, query=query, trace=trace)
    return PipelineRun(final, trace, draft, report)
