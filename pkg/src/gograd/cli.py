"""Command-line front end.

    gograd toy-gamma --config gamma.toml --seed 42 --out-dir runs/gamma
    gograd toy-nb --set iterations=2000 --set optimizer.learning_rate=0.05
    gograd suite --out-dir runs/suite
    gograd graph-run --config graph_run.toml

Exit codes: 0 success, 1 invalid configuration or input, 2 non-finite
values in a trace (the message names the iteration).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .distributions import DomainError
from .statgraph import GRAPH_INTEGRANDS, GraphError, StochasticGraph, graph_go_gradient

SUBCOMMANDS = {
    "toy-gamma": "gamma_toy",
    "toy-nb": "nb_toy",
    "vae": "bernoulli_vae",
    "suite": "unbiasedness_suite",
    "graph-run": "graph_run",
}

SEED_ENV = "GO_GRAD_SEED"

GRAPH_DEFAULTS = {"graph": None, "integrand": "sum", "reads": None, "n_samples": 10000, "seed": 0}


class UsageError(ValueError):
    pass


def load_config_file(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e.strerror}") from None
    if path.suffix.lower() == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as e:
            raise UsageError(f"invalid JSON in {path}: {e}") from None
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise UsageError(f"invalid TOML in {path}: {e}") from None


def parse_override(item):
    """'a.b=value' -> (['a', 'b'], value); values parse as JSON when they can."""
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise UsageError(f"--set expects key=value, got {item!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(raw: dict, items):
    for item in items:
        path, value = parse_override(item)
        node = raw
        for part in path[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise UsageError(f"--set {'.'.join(path)}: {part!r} is not a table")
            node = nxt
        node[path[-1]] = value
    return raw


def resolve_seed(flag, fallback):
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return fallback


def _write_json(path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")


def _run_experiment(experiment, raw, args, out):
    cfg = ex.build_config(raw, experiment)
    cfg.seed = resolve_seed(args.seed, cfg.seed)
    cfg.validate()
    _write_json(out / "config.resolved.json", cfg.to_dict())
    if experiment == "unbiasedness_suite":
        rows = ex.run_unbiasedness_suite(cfg)
        _write_json(out / "report.json", rows)
        failed = [r for r in rows if not r["pass"]]
        print(f"suite: {len(rows) - len(failed)}/{len(rows)} rows pass")
        for r in failed:
            print(f"  FAIL {r['family']} {r['params']} {r['integrand']} {r['estimator']}")
        return 0
    result = ex.RUNNERS[experiment](cfg)
    first = cfg.estimators[0]
    ex.write_trace_csv(result.traces[first], out / "trace.csv")
    if len(result.traces) > 1:
        for tag, recs in result.traces.items():
            ex.write_trace_csv(recs, out / f"trace_{tag}.csv")
    _write_json(out / "report.json", {"experiment": experiment, "seed": cfg.seed, "summary": result.summary})
    for tag, recs in result.traces.items():
        bad = ex.first_nonfinite(recs)
        if bad is not None:
            print(f"error: non-finite value in {tag} trace at iteration {bad}", file=sys.stderr)
            return 2
    print(json.dumps(result.summary, default=float)[:2000])
    return 0


def _run_graph(raw, args, out, base_dir):
    unknown = set(raw) - set(GRAPH_DEFAULTS)
    if unknown:
        raise UsageError(f"unknown config key {sorted(unknown)[0]!r}")
    cfg = {**GRAPH_DEFAULTS, **raw}
    cfg["seed"] = resolve_seed(args.seed, cfg["seed"])
    if cfg["graph"] is None:
        raise UsageError("graph: missing (path to a graph JSON file or an inline table)")
    if cfg["integrand"] not in GRAPH_INTEGRANDS:
        raise UsageError(f"integrand: unknown {cfg['integrand']!r} (choose from {sorted(GRAPH_INTEGRANDS)})")
    if not isinstance(cfg["n_samples"], int) or cfg["n_samples"] < 2:
        raise UsageError("n_samples must be an integer >= 2")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise UsageError("seed must be a non-negative integer")
    doc = cfg["graph"]
    if isinstance(doc, str):
        path = Path(doc)
        if not path.is_absolute():
            path = base_dir / path
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot load graph {path}: {e}") from None
    graph = StochasticGraph.from_json(doc)
    resolved = {**cfg, "graph": graph.to_json()}
    _write_json(out / "config.resolved.json", resolved)
    est = graph_go_gradient(graph, GRAPH_INTEGRANDS[cfg["integrand"]], cfg["n_samples"],
                            np.random.default_rng(cfg["seed"]), reads=cfg["reads"])
    report = {"n_samples": est.n_samples, "gradient": est.per_param.tolist(), "se": est.se.tolist(),
              "slices": {k: [s.start, s.stop] for k, s in graph.slices.items()}}
    _write_json(out / "report.json", report)
    graph.save_weights(out / "weights")
    if not (np.all(np.isfinite(est.per_param)) and np.all(np.isfinite(est.se))):
        print("error: non-finite gradient estimate at iteration 0", file=sys.stderr)
        return 2
    print(json.dumps(report))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="gograd", description="GO gradient experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="TOML or JSON config file")
        s.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted-path override, repeatable")
        s.add_argument("--out-dir", type=Path, default=Path("gograd-out"))
        s.add_argument("--seed", type=int, default=None, help=f"overrides the config seed and ${SEED_ENV}")
        s.add_argument("--threads", type=int, default=1, help="accepted for compatibility; runs are single-threaded")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse has already printed its one-line complaint
        return 0 if e.code == 0 else 1
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise UsageError("--seed must lie in [0, 2^64)")
        raw = load_config_file(args.config) if args.config else {}
        apply_overrides(raw, args.overrides)
        out = args.out_dir
        out.mkdir(parents=True, exist_ok=True)
        experiment = SUBCOMMANDS[args.command]
        if experiment == "graph_run":
            base = args.config.parent if args.config else Path.cwd()
            return _run_graph(raw, args, out, base)
        return _run_experiment(experiment, raw, args, out)
    except (UsageError, ex.ConfigError, GraphError, DomainError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1


def console():
    sys.exit(main())


if __name__ == "__main__":
    console()
