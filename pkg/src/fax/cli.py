"""Command-line entry point: ``fax explain``, ``fax bench`` and ``fax tools``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from . import bench
from .agent import (
    BackendError, Category, Query, RemoteChat, StructuredTemplate, Variant,
    run_pipeline, variant_from_name,
)
from .claims import ClaimSyntaxError
from .craftworld import (
    Action, EditError, ParseError, State, make_edits, named_state, parse_edit,
    parse_state, state_from_json,
)
from .policies import PolicyProfile, profile_from_name, rollout
from .tools import (
    ANY_CHANGE, TargetAction, attribution_tool, counterfactual_tool,
    edit_and_decide, highlights_tool, run_rollout,
)

EXIT_OK, EXIT_SCENARIO, EXIT_CONFIG, EXIT_BACKEND, EXIT_PARSE = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    backend: str = "structured"
    base_url: str = ""
    model: str = ""
    api_key: Optional[str] = None
    timeout: float = 60.0
    seeds: tuple[int, ...] = (0,)
    noise: float = 0.0
    output_dir: str = "fax-out"
    scenarios: Optional[str] = None
    jobs: int = 1

    def validate(self) -> "Config":
        if self.backend not in ("structured", "remote"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.backend == "remote" and not (self.base_url and self.model):
            raise ConfigError("remote backend needs base_url and model (or FAX_LLM_BASE_URL / FAX_LLM_MODEL)")
        if not self.seeds:
            raise ConfigError("seed list must be non-empty")
        if not 0.0 <= self.noise <= 1.0:
            raise ConfigError("noise must lie in [0, 1]")
        if self.jobs < 1:
            raise ConfigError("jobs must be positive")
        return self

    def make_backend(self):
        if self.backend == "structured":
            return StructuredTemplate()
        return RemoteChat(self.base_url, self.model, self.api_key, timeout=self.timeout)


_KEYS = {f for f in Config.__dataclass_fields__}


def load_config(path: Optional[str], env: Optional[dict] = None) -> Config:
    """JSON config file, then FAX_LLM_* environment overrides."""
    env = os.environ if env is None else env
    data: dict = {}
    if path:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(data) - _KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if "seeds" in data:
        data["seeds"] = tuple(int(s) for s in data["seeds"])
    for var, key in (("FAX_LLM_BASE_URL", "base_url"), ("FAX_LLM_MODEL", "model"), ("FAX_LLM_API_KEY", "api_key")):
        if env.get(var):
            data[key] = env[var]
    try:
        return Config(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def resolve_state(ref: str) -> State:
    """A fixture or benchmark state id, or a path to a JSON or text state file."""
    path = Path(ref)
    if path.is_file():
        text = path.read_text()
        if text.lstrip().startswith("{"):
            try:
                return state_from_json(json.loads(text))
            except ValueError as exc:
                raise ParseError(str(exc)) from None
        return parse_state(text)
    return named_state(ref)


def _seeds(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


# --------------------------------------------------------------------------


def cmd_explain(args, cfg: Config) -> int:
    state = resolve_state(args.state)
    policy = profile_from_name(args.model)
    variant = variant_from_name(args.variant)
    query = Query(args.query, Category(args.category))
    seed = cfg.seeds[0]
    run = run_pipeline(variant, query, policy, state, cfg.make_backend(), seed=seed, noise=cfg.noise)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"explain-{variant.value}"
    _dump(run.final.to_json(), out / f"{stem}.json")
    trace = run.to_json()
    trace.pop("final")
    _dump(trace, out / f"{stem}.trace.json")
    print(run.final.text)
    return EXIT_OK


def cmd_bench(args, cfg: Config) -> int:
    try:
        scenarios = bench.load_scenarios(args.scenarios or cfg.scenarios)
    except (OSError, ValueError, KeyError) as exc:
        raise ParseError(f"cannot load scenarios: {exc}") from None
    variants = [variant_from_name(v) for v in args.variants.split(",")] if args.variants else list(bench.VARIANT_ORDER)
    report = bench.run_suite(variants, scenarios, cfg.make_backend(), seeds=cfg.seeds,
                             noise=cfg.noise, jobs=cfg.jobs)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    bench.render_report(report, "json", out / "report.json")
    table = bench.render_report(report, "markdown", out / "report.md")
    print(table, end="")
    for e in report.errors:
        print(f"error: {e['variant']} {e['scenario']} seed={e['seed']}: {e['error']}", file=sys.stderr)
    return EXIT_SCENARIO if report.errors else EXIT_OK


def cmd_tools(args, cfg: Config) -> int:
    state = resolve_state(args.state)
    policy = profile_from_name(args.model)
    if args.tool == "edit":
        result = edit_and_decide(policy, state, make_edits([parse_edit(e) for e in args.set or []]))
    elif args.tool == "cf":
        cond = TargetAction(Action[args.target.upper()]) if args.target else ANY_CHANGE
        result = counterfactual_tool(policy, state, cond, max_cost=args.max_cost, seed=args.seed)
    elif args.tool == "shap":
        result = attribution_tool(policy, state, seed=args.seed, permutations=args.permutations)
    elif args.tool == "highlights":
        result = highlights_tool(policy, rollout(policy, state, args.horizon), k=args.k)
    else:
        result = run_rollout(policy, state, args.horizon)
    print(json.dumps(result.to_json(), sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--backend", choices=("structured", "remote"))
    common.add_argument("--seeds", type=_seeds, help="comma-separated seeds")
    common.add_argument("--noise", type=float, help="attribution corruption probability")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, help="parallel scenario workers")
    p = argparse.ArgumentParser(prog="fax", description="Verified explanations for CraftWorld policies.")
    sub = p.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("explain", parents=[common], help="answer one query")
    ex.add_argument("--variant", default="fax", choices=[v.value for v in Variant])
    ex.add_argument("--model", default="diamond", choices=[m.value for m in PolicyProfile])
    ex.add_argument("--state", required=True, help="fixture name, benchmark state id or file")
    ex.add_argument("--category", default="why", choices=[c.value for c in Category])
    ex.add_argument("-q", "--query", required=True)

    be = sub.add_parser("bench", parents=[common], help="run the scenario suite")
    be.add_argument("--scenarios", help="scenario JSON file (default: shipped registry)")
    be.add_argument("--variants", help="comma-separated variant names (default: all)")

    to = sub.add_parser("tools", parents=[common], help="call one tool directly")
    to.add_argument("tool", choices=("edit", "cf", "shap", "highlights", "rollout"))
    to.add_argument("--model", default="diamond", choices=[m.value for m in PolicyProfile])
    to.add_argument("--state", required=True)
    to.add_argument("--set", action="append", metavar="SLOT=VALUE")
    to.add_argument("--target", help="counterfactual target action")
    to.add_argument("--max-cost", type=int, default=2)
    to.add_argument("--permutations", type=int, default=2000)
    to.add_argument("--horizon", type=int, default=8)
    to.add_argument("--k", type=int, default=3)
    to.add_argument("--seed", type=int, default=0)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        overrides = {k: v for k, v in (("backend", args.backend), ("seeds", args.seeds), ("noise", args.noise),
                                       ("output_dir", args.out), ("jobs", args.jobs)) if v is not None}
        cfg = replace(cfg, **overrides).validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    handler = {"explain": cmd_explain, "bench": cmd_bench, "tools": cmd_tools}[args.command]
    try:
        return handler(args, cfg)
    except (ParseError, EditError, ClaimSyntaxError, KeyError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
