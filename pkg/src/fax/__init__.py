"""Faithful explanations for scripted CraftWorld agents.

A verified explanation pipeline: tool calls over a gridworld policy, typed
claims drafted from their outputs, and a verification pass that tests every
claim with state edits before it reaches the final answer.
"""
from .craftworld import S0, Action, Material, State, apply_edit, make_edits, named_state
from .policies import PolicyProfile, decide, rollout
from .agent import Category, Query, RemoteChat, StructuredTemplate, Variant, run_pipeline
from .claims import Claim, VerdictLabel, parse_claim, verify

__version__ = "0.1.0"

__all__ = [
    "S0", "Action", "Material", "State", "apply_edit", "make_edits", "named_state",
    "PolicyProfile", "decide", "rollout", "Category", "Query", "RemoteChat",
    "StructuredTemplate", "Variant", "run_pipeline", "Claim", "VerdictLabel",
    "parse_claim", "verify",
]
