"""Command line interface.

Exit codes: 0 success, 1 runtime failure, 2 malformed inputs or usage.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .bench import (
    ConfigError,
    ExperimentConfig,
    bisection_demo,
    consistency_check,
    counterexample_repro,
    run_experiment,
)
from .design import BudgetConfig, abcd_round
from .graphs import GraphError, InterventionFamily
from .posterior import PosteriorError, TargetFunctional, enumerate_all_dags, exhaustive_learner
from .sem import Dataset, DatasetFormatError


class UsageError(Exception):
    """Input problems the user must fix; mapped to exit code 2."""


def _load_config(path: str) -> dict:
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    if path.endswith(".json"):
        loaders = ("json",)
    elif path.endswith(".toml"):
        loaders = ("toml",)
    else:
        loaders = ("toml", "json")
    last = None
    for kind in loaders:
        try:
            if kind == "toml":
                with open(path, "rb") as f:
                    return tomllib.load(f)
            with open(path) as f:
                return json.load(f)
        except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
            last = exc
    raise UsageError(f"cannot parse config {path}: {last}")


def _cmd_simulate(args) -> int:
    cfg_dict = _load_config(args.config)
    try:
        config = ExperimentConfig.from_dict(cfg_dict)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    result = run_experiment(config, threads=args.threads, out_dir=args.out)
    for strategy, per_b in sorted(result.summary.items()):
        for b, stats in sorted(per_b.items(), key=lambda kv: int(kv[0])):
            print(
                f"{strategy} B={b}: median reduction {stats['median']:.4f} "
                f"(IQR {stats['q1']:.4f}..{stats['q3']:.4f}, mean {stats['mean']:.4f})"
            )
    print(f"wrote results.csv, summary.json, config.json to {args.out}")
    return 0


def _cmd_design_next(args) -> int:
    try:
        data = Dataset.load_csv(args.data)
    except FileNotFoundError:
        raise UsageError(f"data file not found: {args.data}") from None
    except DatasetFormatError as exc:
        raise UsageError(str(exc)) from None
    try:
        family = InterventionFamily.parse(data.p, args.family)
        functional = TargetFunctional.parse(args.functional)
        budget = BudgetConfig(args.nb, 1, args.k)
    except (GraphError, PosteriorError, ValueError) as exc:
        raise UsageError(str(exc)) from None

    candidates = enumerate_all_dags(data.p)
    trace: list[dict] = []
    design = abcd_round(
        functional,
        data,
        family,
        budget,
        args.t,
        args.m,
        lambda d: exhaustive_learner(d, candidates),
        args.seed,
        trace=trace,
    )
    print("recommended design:")
    for target, count in design.counts:
        print(f"  {{{target.encode()}}} x {count}")
    with open(args.out, "w") as f:
        json.dump(design.to_json_list(), f, sort_keys=True, indent=2)
        f.write("\n")
    print(f"wrote {args.out}")
    if args.trace is not None:
        with open(args.trace, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "candidate", "value", "std_error"])
            for row in trace:
                w.writerow(
                    [row["step"], row["candidate"], repr(row["value"]), repr(row["std_error"])]
                )
        print(f"wrote {args.trace}")
    return 0


def _boxplot_config(seed: int) -> ExperimentConfig:
    return ExperimentConfig(
        scm_kind="chain",
        p=11,
        n_total=30,
        batch_counts=(1, 2, 3),
        strategies=("abcd", "random", "chordal-random"),
        replicates=50,
        seed=seed,
        max_unique=1,
        n_obs=100,
        m_datasets=8,
        known_mec=True,
    )


def _er_curves_config(seed: int) -> ExperimentConfig:
    return ExperimentConfig(
        scm_kind="er",
        p=8,
        density=0.25,
        n_total=96,
        batch_counts=(1, 2, 3),
        strategies=("abcd", "random", "chordal-random"),
        replicates=30,
        seed=seed,
        max_unique=1,
        n_obs=100,
        m_datasets=8,
        known_mec=True,
    )


def _cmd_replicate(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    name = args.experiment
    if name == "bisection":
        selected = bisection_demo(args.p)
        print(f"chain p={args.p}: selected nodes per batch: {selected}")
        with open(os.path.join(args.out, "bisection.json"), "w") as f:
            json.dump({"p": args.p, "selected": selected}, f, sort_keys=True, indent=2)
            f.write("\n")
        return 0
    if name == "counterexample":
        res = counterexample_repro()
        payload = {
            "graph": res.graph.to_json_dict(),
            "mec_size": res.mec_size,
            "batches": [
                {
                    "index": b.index,
                    "meek_scores": list(b.meek_scores),
                    "meek_selected": b.meek_selected,
                    "meek_entropy_bits": b.meek_entropy_bits,
                    "mi_utilities": list(b.mi_utilities),
                    "mi_selected": b.mi_selected,
                    "mi_entropy_bits": b.mi_entropy_bits,
                }
                for b in res.batches
            ],
        }
        for b in res.batches:
            print(
                f"batch {b.index}: oriented-edge scores {[f'{s:g}' for s in b.meek_scores]}"
                f" -> node {b.meek_selected} (H={b.meek_entropy_bits:g} bits);"
                f" residual-entropy pick -> node {b.mi_selected} (H={b.mi_entropy_bits:g} bits)"
            )
        with open(os.path.join(args.out, "counterexample.json"), "w") as f:
            json.dump(payload, f, sort_keys=True, indent=2)
            f.write("\n")
        return 0
    if name == "consistency":
        traces = consistency_check(seed=args.seed or 0)
        final = [t[-1] for t in traces]
        ok = sum(1 for v in final if v > 0.99)
        print(f"posterior mass on truth > 0.99 in {ok}/{len(final)} replicates")
        with open(os.path.join(args.out, "consistency.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["replicate"] + [f"batch{i + 1}" for i in range(len(traces[0]))])
            for r, t in enumerate(traces):
                w.writerow([r] + [repr(v) for v in t])
        return 0
    if name == "boxplot":
        config = _boxplot_config(args.seed or 0)
    elif name == "er-curves":
        config = _er_curves_config(args.seed or 0)
    else:  # argparse choices guard this
        raise UsageError(f"unknown experiment {name!r}")
    result = run_experiment(config, threads=args.threads, out_dir=args.out)
    for strategy, per_b in sorted(result.summary.items()):
        for b, stats in sorted(per_b.items(), key=lambda kv: int(kv[0])):
            print(f"{strategy} B={b}: median reduction {stats['median']:.4f}")
    print(f"wrote results.csv, summary.json, config.json to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="abcdesign",
        description="Budgeted Bayesian experimental design for causal structure discovery.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a simulation study from a config file")
    p_sim.add_argument("--config", required=True, help="TOML (or JSON) experiment config")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_sim.add_argument("--threads", type=int, default=None, help="worker threads (results identical)")
    p_sim.set_defaults(func=_cmd_simulate)

    p_next = sub.add_parser("design-next", help="recommend the next batch for a dataset")
    p_next.add_argument("--data", required=True, help="CSV with columns x0..x{p-1},target")
    p_next.add_argument("--family", default="singles", help="'singles' or e.g. '{0};{1,2}'")
    p_next.add_argument("--functional", default="full", help="full | edge:i,j | orient:i,j | desc:i | parents:i")
    p_next.add_argument("--nb", required=True, type=int, help="batch size")
    p_next.add_argument("--k", type=int, default=None, help="max distinct targets in the batch")
    p_next.add_argument("--t", type=int, default=20, help="bootstrap ensemble size")
    p_next.add_argument("--m", type=int, default=16, help="synthetic datasets per member")
    p_next.add_argument("--seed", type=int, default=0)
    p_next.add_argument("--out", default="design.json", help="where to write the design JSON")
    p_next.add_argument("--trace", default=None, help="optional utility trace CSV path")
    p_next.set_defaults(func=_cmd_design_next)

    p_rep = sub.add_parser("replicate", help="reproduce a packaged experiment")
    p_rep.add_argument(
        "experiment",
        choices=("bisection", "boxplot", "er-curves", "counterexample", "consistency"),
    )
    p_rep.add_argument("--out", required=True, help="output directory")
    p_rep.add_argument("--p", type=int, default=15, help="chain length for bisection")
    p_rep.add_argument("--seed", type=int, default=None)
    p_rep.add_argument("--threads", type=int, default=None)
    p_rep.set_defaults(func=_cmd_replicate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure, distinct from usage problems
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
