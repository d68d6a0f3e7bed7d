"""Command-line front end: ``rtakit run | list-scenarios | validate``.

Exit codes: 0 success, 1 usage error, 2 safety violation or failed check.
"""
from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys

import numpy as np

from .filters import VARIANTS
from .harness import RunResult, run_closed_loop
from .scenarios import Primary, ScenarioError, build_scenario, get_scenario, scenario_ids

EXIT_OK, EXIT_USAGE, EXIT_UNSAFE = 0, 1, 2
SEED_ENV = "RTAKIT_SEED"
CONFIG_KEYS = {"scenario", "plant", "params", "x0", "primary", "filter", "duration", "rate",
               "seed"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; usage errors here are exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        seed = int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None
    if seed < 0:
        raise UsageError(f"{SEED_ENV} must be nonnegative")
    return seed


def _parse_params(items) -> dict[str, float]:
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise UsageError(f"--param expects key=value, got {item!r}")
        try:
            out[key] = float(val)
        except ValueError:
            raise UsageError(f"--param {key}: {val!r} is not a number") from None
    return out


def _load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    extra = set(cfg) - CONFIG_KEYS
    if extra:
        raise UsageError(f"unknown config key(s) {sorted(extra)}")
    return cfg


# --------------------------------------------------------------------------- output

def columns(n: int, m: int) -> list[str]:
    return (["t"] + [f"x{i}" for i in range(n)] + [f"ud{j}" for j in range(m)]
            + [f"ua{j}" for j in range(m)] + ["intervened", "margin", "mode"])


def records(res: RunResult) -> list[list]:
    rows = []
    for k, out in enumerate(res.outputs):
        rows.append([float(res.times[k]), *map(float, res.states[k]), *map(float, res.u_des[k]),
                     *map(float, res.u_act[k]), int(out.intervened), float(out.margin), out.mode])
    return rows


def _summary_items(res: RunResult, scenario: str, variant: str) -> list[tuple[str, object]]:
    items = [("scenario", scenario), ("filter", variant)]
    items += list(res.summary.as_dict().items())
    items += [("truncated", res.truncated), ("diagnostic", res.diagnostic)]
    return items


def _csv_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return _fmt(v)
    return str(v)


def emit_csv(res: RunResult, scenario: str, variant: str, n: int, m: int) -> str:
    buf = io.StringIO()
    buf.write(",".join(columns(n, m)) + "\n")
    for row in records(res):
        buf.write(",".join(_csv_value(v) for v in row) + "\n")
    for k, v in _summary_items(res, scenario, variant):
        buf.write(f"# {k}={_csv_value(v)}\n")
    return buf.getvalue()


def _json_value(v):
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def emit_json(res: RunResult, scenario: str, variant: str, n: int, m: int) -> str:
    doc = {
        "columns": columns(n, m),
        "records": [[_json_value(v) for v in row] for row in records(res)],
        "summary": {k: _json_value(v) for k, v in _summary_items(res, scenario, variant)},
    }
    return json.dumps(doc, indent=1) + "\n"


def parse_csv(text: str) -> tuple[list[str], list[list], dict[str, str]]:
    """Inverse of :func:`emit_csv`: header, typed rows and the summary block."""
    lines = text.splitlines()
    header = lines[0].split(",")
    rows, summary = [], {}
    for line in lines[1:]:
        if line.startswith("# "):
            k, _, v = line[2:].partition("=")
            summary[k] = v
            continue
        parts = line.split(",")
        row = [float(p) for p in parts[:-3]] + [int(parts[-3]), float(parts[-2]), parts[-1]]
        rows.append(row)
    return header, rows, summary


# --------------------------------------------------------------------------- commands

def cmd_run(args) -> int:
    cfg = _load_config(args.config) if args.config else {}
    name = args.scenario or cfg.get("scenario")
    if not name:
        raise UsageError("run needs --scenario (or a config with a scenario key)")
    sc = get_scenario(name)
    if "plant" in cfg and cfg["plant"] != sc.plant:
        raise UsageError(f"config plant {cfg['plant']!r} does not match scenario plant "
                         f"{sc.plant!r}")
    fcfg = dict(cfg.get("filter") or {})
    variant = args.filter or fcfg.get("kind") or sc.default_filter
    if variant not in VARIANTS:
        raise UsageError(f"unknown filter {variant!r}; valid: {', '.join(VARIANTS)}")
    params = {k: float(v) for k, v in (cfg.get("params") or {}).items()}
    params.update(_parse_params(args.param))
    seed = args.seed if args.seed is not None else cfg.get("seed", _default_seed())
    primary = Primary.from_dict(cfg["primary"]) if "primary" in cfg else None
    scenario = build_scenario(
        sc.id, variant,
        duration=args.duration if args.duration is not None else cfg.get("duration"),
        rate=args.rate if args.rate is not None else cfg.get("rate"),
        seed=int(seed), params=params, x0=cfg.get("x0"), primary=primary,
        filter_overrides=fcfg,
    )
    res = run_closed_loop(scenario)
    n, m = scenario.plant.n, scenario.plant.m
    emit = emit_json if args.format == "json" else emit_csv
    text = emit(res, sc.id, variant, n, m)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    unsafe = res.summary.violated or res.truncated
    if unsafe:
        why = res.diagnostic or f"min constraint margin {res.summary.min_constraint_margin:.6g}"
        print(f"safety violation: {why}", file=sys.stderr)
    return EXIT_UNSAFE if unsafe else EXIT_OK


def cmd_list(args) -> int:
    ids = scenario_ids()
    if args.json:
        doc = [{"id": i, "plant": get_scenario(i).plant,
                "default_filter": get_scenario(i).default_filter} for i in ids]
        print(json.dumps(doc, indent=1))
    else:
        print("\n".join(ids))
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validation import FAULTS, run_validation

    if args.inject_fault and args.inject_fault not in FAULTS:
        raise UsageError(f"unknown fault {args.inject_fault!r}; valid: {', '.join(FAULTS)}")
    ids = None if args.all or not args.scenario else [get_scenario(args.scenario).id]
    seed = args.seed if args.seed is not None else _default_seed()
    results = run_validation(ids, seed=seed, fault=args.inject_fault or "")
    width = max(len(r.scenario) for r in results)
    cw = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.scenario:<{width}}  {r.name:<{cw}}  {status}  {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_UNSAFE


def _seed(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("seed must be nonnegative")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rtakit", description="Run-time-assurance filter scenarios.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("--scenario")
    r.add_argument("--filter", help=f"one of {', '.join(VARIANTS)}")
    r.add_argument("--out")
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    r.add_argument("--duration", type=float)
    r.add_argument("--rate", type=float)
    r.add_argument("--seed", type=_seed)
    r.add_argument("--param", action="append", metavar="K=V", help="plant parameter override")
    r.add_argument("--config", help="JSON scenario override file")
    r.set_defaults(func=cmd_run)

    ls = sub.add_parser("list-scenarios", help="print scenario ids")
    ls.add_argument("--json", action="store_true")
    ls.set_defaults(func=cmd_list)

    v = sub.add_parser("validate", help="run the invariant suites")
    g = v.add_mutually_exclusive_group()
    g.add_argument("--scenario")
    g.add_argument("--all", action="store_true")
    v.add_argument("--seed", type=_seed)
    v.add_argument("--inject-fault", metavar="NAME", help="mutation fixture, e.g. barrier-sign")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ScenarioError, ValueError) as exc:  # ValueError: bad parameters, shapes
        print(f"rtakit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

