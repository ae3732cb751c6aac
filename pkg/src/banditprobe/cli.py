"""Command-line entry point.

Exit codes: 0 success, 1 invalid input, 2 runtime or provider failure,
3 posterior diagnostics failed.
"""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import yaml

from .agents import CohortSpec
from .bandit import preset, structure_from_label
from .inference import FitQualityError, SamplerConfig
from .llm import AuthenticationError, BudgetExhausted, ProviderError
from .orchestrator import PlanError, fit_logs, load_plan, recover, reliability_logs, report, run_plan
from .records import LogParseError
from .rw_model import GroupHyper, NumericFailure

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_FIT = 0, 1, 2, 3
log = logging.getLogger("banditprobe")


def _add_sampler_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("sampler")
    g.add_argument("--config", type=Path, help="YAML file with sampler settings")
    g.add_argument("--chains", type=int, dest="n_chains")
    g.add_argument("--sampler-warmup", type=int, dest="n_warmup")
    g.add_argument("--samples", type=int, dest="n_samples")
    g.add_argument("--target-accept", type=float)
    g.add_argument("--max-tree-depth", type=int)
    g.add_argument("--leapfrog", type=int, dest="n_leapfrog", help="fixed-length HMC instead of NUTS")
    g.add_argument("--max-divergence-rate", type=float)
    g.add_argument("--jobs", type=int, dest="n_jobs", help="chains run in parallel processes")
    g.add_argument("--seed", type=int, dest="master_seed")


def sampler_config(args) -> SamplerConfig:
    settings = {}
    if args.config is not None:
        try:
            settings = yaml.safe_load(args.config.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise PlanError(f"cannot read sampler config {args.config}: {exc}") from None
        known = {f.name for f in dataclasses.fields(SamplerConfig)}
        unknown = set(settings) - known
        if unknown:
            raise PlanError(f"unknown sampler settings {sorted(unknown)}")
    for f in dataclasses.fields(SamplerConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            settings[f.name] = v
    return SamplerConfig(**settings)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="banditprobe", description="Two-arm bandit probes of LLM decision making.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute an experiment plan")
    p.add_argument("--plan", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, help="override the plan's master seed")
    p.add_argument("--warmup", type=int, help="override the metrics warm-up window")
    p.add_argument("--workers", type=int)
    p.add_argument("--max-requests", type=int, help="hard cap on provider requests")

    p = sub.add_parser("fit", help="fit the hierarchical RW model to run logs")
    p.add_argument("logs", nargs="+", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--structure", help="only fit runs with this reward structure label")
    p.add_argument("--all-draws", action="store_true", help="also write per-run parameter draws")
    _add_sampler_args(p)

    p = sub.add_parser("reliability", help="split-half ICC(3,1) of per-run parameters")
    p.add_argument("logs", nargs="+", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--structure")
    _add_sampler_args(p)

    p = sub.add_parser("recover", help="parameter recovery on a simulated RW cohort")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--group-a", type=float, default=0.2)
    p.add_argument("--group-tau", type=float, default=3.0)
    p.add_argument("--sigma-a", type=float, default=0.1)
    p.add_argument("--sigma-tau", type=float, default=0.1)
    p.add_argument("--runs", type=int, default=200)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--structure", default="asymmetric")
    p.add_argument("--prime-x", action="store_true")
    p.add_argument("--cohort-seed", type=int, default=0)
    p.add_argument("--tol-a", type=float, default=0.05)
    p.add_argument("--tol-tau", type=float, default=0.5)
    _add_sampler_args(p)

    p = sub.add_parser("report", help="consolidate summary tables")
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--out", type=Path, required=True)
    return ap


def _run(args) -> int:
    if args.command == "run":
        plan = load_plan(args.plan)
        if args.seed is not None:
            plan.master_seed = args.seed
        if args.warmup is not None:
            plan.warmup = args.warmup
        if args.max_requests is not None:
            plan.max_requests = args.max_requests
        result = run_plan(plan, args.out, args.workers, plan_dir=args.plan.parent)
        print(f"{len(result.log_paths)} conditions ({len(result.skipped)} resumed) -> {args.out}")
        return EXIT_OK
    if args.command == "fit":
        fits = fit_logs(args.logs, args.out, sampler_config(args), args.structure, args.all_draws)
        for cid, f in fits.items():
            a, t = f.summary.row("group_A"), f.summary.row("group_tau")
            print(f"{cid}: group_A={a['mean']:.3f} group_tau={t['mean']:.3f} max_rhat={f.max_rhat:.4f}")
        return EXIT_OK
    if args.command == "reliability":
        res = reliability_logs(args.logs, args.out, sampler_config(args), args.structure)
        for cid, r in res.items():
            print(f"{cid}: ICC(A)={r.icc_a:.3f} ICC(tau)={r.icc_tau:.3f}")
        return EXIT_OK
    if args.command == "recover":
        try:
            structure = preset(args.structure)
        except KeyError:
            structure = structure_from_label(args.structure)
        hyper = GroupHyper.from_natural(args.group_a, args.group_tau, args.sigma_a, args.sigma_tau)
        spec = CohortSpec(hyper, args.runs, args.trials, structure, args.prime_x, "recovery")
        rep = recover(spec, args.out, sampler_config(args), args.cohort_seed, args.tol_a, args.tol_tau)
        for row in rep.rows:
            print(",".join("" if v is None else str(v) for v in row))
        return EXIT_OK if rep.passed else EXIT_FIT
    if args.command == "report":
        written = report(args.inputs, args.out)
        for name, path in written.items():
            print(f"{name}: {path}")
        return EXIT_OK
    raise AssertionError(args.command)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except FitQualityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (PlanError, LogParseError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (AuthenticationError, BudgetExhausted, ProviderError, NumericFailure, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
