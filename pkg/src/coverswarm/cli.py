"""Command-line front end: run scenarios, sweep weights, recompute metrics.

Exit codes: 0 success, 1 usage/config error, 2 non-convergence, 3 I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys
from multiprocessing import get_context
from pathlib import Path

from . import metrics as mx
from .engine import load_run, run as run_sim, write_run
from .inquisitor import run_all_attacks
from .model import ScenarioError, load_scenario, validate_scenario

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NONCONVERGED = 2
EXIT_IO = 3

SWEEP_FACTORS = ("w_ds", "w_a", "w_R", "w_c")


def _worker(job):
    cfg, seed, run_dir = job
    scenario = validate_scenario(cfg)
    trace = run_sim(scenario, seed)
    write_run(trace, run_dir)
    return seed, trace.summary["converged"]


def _execute_runs(cfg, seeds, out_dir: Path, jobs: int) -> list[tuple[int, bool, Path]]:
    jobs = max(1, jobs)
    tasks = [(cfg, seed, out_dir / "runs" / f"s{seed}") for seed in seeds]
    results = []
    if jobs == 1 or len(tasks) == 1:
        for task in tasks:
            seed, converged = _worker(task)
            results.append((seed, converged, task[2]))
    else:
        with get_context("spawn").Pool(jobs) as pool:
            for task, (seed, converged) in zip(tasks, pool.imap(_worker, tasks)):
                results.append((seed, converged, task[2]))
    return results


def _aggregate(run_dirs: list[Path], out_dir: Path, attacks: bool) -> list:
    """Per-run CSVs plus pooled CSVs; the same path cmd_metrics uses."""
    traces = []
    per_run = []
    for run_dir in run_dirs:
        trace = load_run(run_dir)
        rm = mx.compute_run_metrics(trace)
        mx.write_ranks_csv(run_dir / "ranks.csv", rm, trace)
        mx.write_costs_csv(run_dir / "costs.csv", rm.cost_rows)
        mx.write_patterns_csv(run_dir / "patterns.csv", rm.patterns)
        mx.write_rankstats_csv(run_dir / "rankstats.csv", rm.start_by_pop,
                               rm.end_by_pop, rm.start_cmp, rm.end_cmp)
        if attacks:
            mx.write_attacks_csv(run_dir / "attacks.csv", run_all_attacks(trace))
        traces.append(trace)
        per_run.append(rm)
    mx.write_summary_csv(out_dir / "summary.csv", per_run)
    start_cmp = mx.native_vs_cover(mx.pool_rank_populations(traces, "start"))
    end_cmp = mx.native_vs_cover(mx.pool_rank_populations(traces, "end"))
    patterns = {v: mx.pool_patterns(traces, 500.0, v)
                for v in ("global", "per_client_observed")}
    mx.write_patterns_csv(out_dir / "patterns.csv", patterns)
    mx.write_rankstats_csv(out_dir / "rankstats.csv",
                           mx.pool_popularity_ranks(traces, "start"),
                           mx.pool_popularity_ranks(traces, "end"),
                           start_cmp, end_cmp)
    if attacks:
        pooled = []
        for trace in traces:
            if trace.summary["converged"]:
                pooled.extend(run_all_attacks(trace))
        _write_pooled_attacks(out_dir / "attacks.csv", pooled)
    return per_run


def _write_pooled_attacks(path: Path, reports: list):
    merged: dict[tuple[str, str], list] = {}
    for rep in reports:
        merged.setdefault((rep.attacker_kind, rep.strategy), []).append(rep)
    rows = []
    header = ["attacker_kind", "strategy", "victim", "guess", "truth",
              "correct", "accuracy", "baseline"]
    for (kind, strategy) in sorted(merged):
        group = merged[(kind, strategy)]
        total = sum(len(r.guesses) for r in group)
        correct = sum(1 for r in group for _, _, ok in r.guesses.values() if ok)
        accuracy = correct / total if total else 0.0
        rows.append((kind, strategy, "aggregate", None, None, None,
                     accuracy, group[0].baseline if group else 0.0))
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join("" if v is None else
                              (format(v, ".10g") if isinstance(v, float) else str(v))
                              for v in row) + "\n")


def _load_config(args):
    cfg = load_scenario(args.scenario)
    if getattr(args, "literal_completion", False):
        cfg.weights.completion_cap = 1.0
    if getattr(args, "late_start", False):
        cfg.late_start = True
    return cfg


def _seed_list(args, cfg) -> list[int]:
    if args.seed_list:
        seeds = [int(s) for s in args.seed_list.split(",") if s.strip()]
    elif args.seeds:
        seeds = [cfg.seed + i for i in range(args.seeds)]
    else:
        seeds = [cfg.seed]
    if not seeds or len(set(seeds)) != len(seeds):
        raise ScenarioError("seeds must be non-empty and distinct")
    return seeds


def cmd_run(args) -> int:
    try:
        cfg = _load_config(args)
        seeds = _seed_list(args, cfg)
        validate_scenario(cfg)
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = _execute_runs(cfg, seeds, out_dir, args.jobs)
    per_run = _aggregate([r[2] for r in results], out_dir, args.attacks)
    for rm in per_run:
        mc, _, ma, _ = rm.cost_summary()
        print(f"run seed={rm.seed} converged={rm.converged} "
              f"mean_ctc={mc:.3f} mean_cta={ma:.3f} "
              f"transitive={rm.transitive:.4f}")
    if not all(converged for _, converged, _ in results):
        print("non-convergence in at least one run", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        cfg = _load_config(args)
        seeds = _seed_list(args, cfg)
        if args.sweep not in SWEEP_FACTORS:
            raise ScenarioError(f"sweep factor must be one of {SWEEP_FACTORS}")
        values = [float(v) for v in args.values.split(",") if v.strip()]
        if not values:
            raise ScenarioError("sweep needs at least one value")
        validate_scenario(cfg)
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    any_diverged = False
    for value in values:
        import copy

        sub_cfg = copy.deepcopy(cfg)
        setattr(sub_cfg.weights, args.sweep, value)
        label = format(value, "g")
        sub_out = out_dir / "sweep" / f"{args.sweep}_{label}"
        sub_out.mkdir(parents=True, exist_ok=True)
        results = _execute_runs(sub_cfg, seeds, sub_out, args.jobs)
        per_run = _aggregate([r[2] for r in results], sub_out, attacks=False)
        converged = [rm for rm in per_run if rm.converged]
        ctc = [rm.cost_summary()[0] for rm in converged]
        mean_ctc = sum(ctc) / len(ctc) if ctc else float("nan")
        rate = len(converged) / len(per_run)
        any_diverged = any_diverged or rate < 1.0
        rows.append((args.sweep, value, mean_ctc, rate))
        print(f"sweep {args.sweep}={label} mean_ctc={mean_ctc:.3f} "
              f"convergence={rate:.2f}")
    with open(out_dir / "sweep.csv", "w") as fh:
        fh.write("factor,value,mean_ctc,convergence_rate\n")
        for factor, value, mean_ctc, rate in rows:
            fh.write(f"{factor},{format(value, '.10g')},{format(mean_ctc, '.10g')},"
                     f"{format(rate, '.10g')}\n")
    return EXIT_NONCONVERGED if any_diverged else EXIT_OK


def cmd_metrics(args) -> int:
    run_dirs = [Path(p) for p in args.traces]
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        _aggregate(run_dirs, out_dir, args.attacks)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coverswarm",
        description="cover-traffic swarm simulator and metrics pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True, help="scenario INI file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seeds", type=int, default=0,
                       help="run N seeds starting at the scenario seed")
        p.add_argument("--seed-list", default="",
                       help="comma-separated explicit seeds")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                       help="parallel worker processes")
        p.add_argument("--literal-completion", action="store_true",
                       help="clamp the completion multiplier at 1.0")
        p.add_argument("--late-start", action="store_true",
                       help="draw the whole initial active set at random")

    p_run = sub.add_parser("run", help="execute one run per seed")
    common(p_run)
    p_run.add_argument("--attacks", action="store_true",
                       help="also run attack models and write attacks.csv")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="vary one valuation weight")
    common(p_sweep)
    p_sweep.add_argument("--sweep", required=True, choices=SWEEP_FACTORS,
                         help="which weight to vary")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated weight values")
    p_sweep.set_defaults(func=cmd_sweep)

    p_metrics = sub.add_parser("metrics", help="recompute metrics from traces")
    p_metrics.add_argument("traces", nargs="+", help="run directories")
    p_metrics.add_argument("--out", required=True)
    p_metrics.add_argument("--attacks", action="store_true")
    p_metrics.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
