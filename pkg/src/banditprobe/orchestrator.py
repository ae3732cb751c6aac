"""Experiment plans, execution, fitting, recovery and reporting.

Output layout of ``run``::

    <out>/runs/<condition_id>.csv     one row per trial
    <out>/summary.csv                 condition_id, metric, mean, ci_low, ci_high, n
    <out>/plot_data.csv               condition_id, run_id, metric, value
    <out>/invalid_rates.csv           condition_id, n_trials, n_invalid, invalid_rate

``fit`` writes ``<out>/fits/<condition_id>/`` with ``summary.csv``,
``draws.csv``, ``run_means.csv``, ``loglik.csv`` and ``fit_info.json``.
"""

import csv
import json
import logging
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .agents import CohortSpec, LLMAgent, make_agent, play, simulate_cohort
from .bandit import BanditEnv, RewardStructure, preset
from .inference import SamplerConfig, fit_rw, split_half_reliability
from .inference.posterior import SUMMARY_COLUMNS as POSTERIOR_COLUMNS
from .llm import DECODING_PRESETS, ChatClient, DecodingConfig, MockBackend, ProviderConfig
from .metrics import (
    DEFAULT_WARMUP,
    SUMMARY_COLUMNS,
    condition_summary,
    plot_rows,
    run_metrics,
    write_plot_data,
    write_summaries,
)
from .records import RunLog, read_runs, write_runs
from .rng import run_seeds
from .rw_model import FitDataset

logger = logging.getLogger(__name__)

SYNTHETIC_KINDS = ("random", "oracle", "epsilon_greedy", "wsls", "rw")
RELIABILITY_COLUMNS = ("fit_id", "parameter", "icc", "n_subjects", "k")


class PlanError(ValueError):
    """Invalid plan or inputs; nothing has been executed."""


@dataclass(frozen=True)
class AgentSpec:
    kind: str
    name: str
    params: dict = field(default_factory=dict)

    @property
    def is_llm(self) -> bool:
        return self.kind == "llm"


@dataclass(frozen=True)
class Condition:
    condition_id: str
    agent: AgentSpec
    structure: RewardStructure
    decoding: Optional[DecodingConfig] = None


@dataclass
class ExperimentPlan:
    agents: list
    reward_structures: list
    decoding_configs: list = field(default_factory=list)
    n_runs: int = 200
    n_trials: int = 100
    warmup: int = DEFAULT_WARMUP
    master_seed: int = 0
    max_requests: Optional[int] = None

    def validate(self) -> None:
        if not self.agents:
            raise PlanError("plan lists no agents")
        if not self.reward_structures:
            raise PlanError("plan lists no reward structures")
        if self.n_runs < 1 or self.n_trials < 1:
            raise PlanError(f"n_runs and n_trials must be >= 1, got {self.n_runs}, {self.n_trials}")
        if not 0 <= self.warmup < self.n_trials:
            raise PlanError(f"warmup must satisfy 0 <= warmup < n_trials, got {self.warmup}")
        for a in self.agents:
            if a.kind not in SYNTHETIC_KINDS + ("llm",):
                raise PlanError(f"unknown agent kind {a.kind!r}")
            if a.kind == "rw" and not {"a", "tau"} <= set(a.params):
                raise PlanError(f"rw agent {a.name!r} needs 'a' and 'tau'")
            if a.is_llm and not ("provider" in a.params or "mock_script" in a.params or "mock_tokens" in a.params):
                raise PlanError(f"llm agent {a.name!r} needs a 'provider' or a mock script")
        if any(a.is_llm for a in self.agents) and not self.decoding_configs:
            raise PlanError("llm agents need at least one decoding config")
        ids = [c.condition_id for c in self.conditions()]
        dupes = {i for i in ids if ids.count(i) > 1}
        if dupes:
            raise PlanError(f"duplicate condition ids {sorted(dupes)}; give agents distinct names")

    def conditions(self) -> list:
        """Full factorial: agents x structures x (decodings for LLM agents, else one)."""
        out = []
        for agent in self.agents:
            for s in self.reward_structures:
                decodings = self.decoding_configs if agent.is_llm else [None]
                for d in decodings:
                    parts = [agent.name, s.label] + ([d.label] if d is not None else [])
                    cid = _slug("__".join(parts))
                    out.append(Condition(cid, agent, s, d))
        return out


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.+-]+", "-", text)


def _structure(entry) -> RewardStructure:
    if isinstance(entry, str):
        try:
            return preset(entry)
        except KeyError as exc:
            raise PlanError(str(exc)) from None
    if isinstance(entry, dict):
        try:
            return RewardStructure(float(entry["p_x"]), float(entry["p_y"]), str(entry.get("label", "")))
        except (KeyError, ValueError) as exc:
            raise PlanError(f"bad reward structure {entry!r}: {exc}") from None
    raise PlanError(f"bad reward structure {entry!r}")


def _decoding(entry) -> DecodingConfig:
    if isinstance(entry, str):
        if entry not in DECODING_PRESETS:
            raise PlanError(f"unknown decoding preset {entry!r}; expected one of {list(DECODING_PRESETS)}")
        return DECODING_PRESETS[entry]
    if isinstance(entry, dict):
        try:
            return DecodingConfig(float(entry["temperature"]), float(entry["top_p"]), str(entry["label"]))
        except (KeyError, ValueError) as exc:
            raise PlanError(f"bad decoding config {entry!r}: {exc}") from None
    raise PlanError(f"bad decoding config {entry!r}")


def plan_from_dict(raw: dict) -> ExperimentPlan:
    if not isinstance(raw, dict):
        raise PlanError("plan must be a mapping")
    agents = []
    for entry in raw.get("agents", []):
        if isinstance(entry, str):
            entry = {"kind": entry}
        entry = dict(entry)
        kind = entry.pop("kind", None)
        if kind is None:
            raise PlanError(f"agent entry without kind: {entry!r}")
        name = str(entry.pop("name", kind))
        agents.append(AgentSpec(kind, name, entry))
    plan = ExperimentPlan(
        agents=agents,
        reward_structures=[_structure(s) for s in raw.get("reward_structures", [])],
        decoding_configs=[_decoding(d) for d in raw.get("decoding_configs", [])],
        n_runs=int(raw.get("n_runs", 200)),
        n_trials=int(raw.get("n_trials", 100)),
        warmup=int(raw.get("warmup", DEFAULT_WARMUP)),
        master_seed=int(raw.get("master_seed", 0)),
        max_requests=raw.get("max_requests"),
    )
    unknown = set(raw) - {f.name for f in fields(ExperimentPlan)}
    if unknown:
        raise PlanError(f"unknown plan keys {sorted(unknown)}")
    plan.validate()
    return plan


def load_plan(path) -> ExperimentPlan:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise PlanError(f"plan file {path} not found") from None
    except yaml.YAMLError as exc:
        raise PlanError(f"cannot parse plan file {path}: {exc}") from None
    return plan_from_dict(raw)


# -- execution ---------------------------------------------------------------

def _synthetic_run(args) -> RunLog:
    cond, master_seed, run_id, n_trials = args
    env_seed, agent_seed = run_seeds(master_seed, cond.condition_id, run_id)
    agent = make_agent(cond.agent.kind, seed=agent_seed, structure=cond.structure, **cond.agent.params)
    trials = play(agent, BanditEnv(cond.structure, env_seed), n_trials)
    return RunLog(cond.condition_id, run_id, cond.structure, cond.agent.name, trials=trials)


def make_client(spec: AgentSpec, max_requests: Optional[int] = None, plan_dir: Optional[Path] = None) -> ChatClient:
    p = spec.params
    if "mock_script" in p or "mock_tokens" in p:
        if "mock_tokens" in p:
            backend = MockBackend(p["mock_tokens"])
        else:
            script = Path(p["mock_script"])
            if plan_dir is not None and not script.is_absolute():
                script = plan_dir / script
            backend = MockBackend.from_file(script)
        provider = ProviderConfig("mock://", spec.name)
        return ChatClient(provider, backend, max_requests=max_requests, sleep=lambda s: None)
    prov = dict(p["provider"])
    provider = ProviderConfig(
        endpoint_url=prov["endpoint_url"],
        model_name=prov["model_name"],
        api_key_env_var=prov.get("api_key_env_var", ""),
        max_retries=int(prov.get("max_retries", 3)),
        timeout=float(prov.get("timeout", 30.0)),
        max_in_flight=int(prov.get("max_in_flight", 4)),
        min_interval=float(prov.get("min_interval", 0.0)),
    )
    return ChatClient(provider, max_requests=max_requests)


def execute_condition(cond: Condition, plan: ExperimentPlan, workers: int = 1, client=None) -> list:
    """All runs of one condition, in run order."""
    if cond.agent.is_llm:
        def one(run_id):
            env_seed, _ = run_seeds(plan.master_seed, cond.condition_id, run_id)
            agent = LLMAgent(client, cond.decoding)
            trials = play(agent, BanditEnv(cond.structure, env_seed), plan.n_trials)
            return RunLog(cond.condition_id, run_id, cond.structure, cond.agent.name,
                          temperature=cond.decoding.temperature, top_p=cond.decoding.top_p, trials=trials)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(one, range(plan.n_runs)))
        return [one(i) for i in range(plan.n_runs)]
    jobs = [(cond, plan.master_seed, i, plan.n_trials) for i in range(plan.n_runs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_synthetic_run, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [_synthetic_run(j) for j in jobs]


def _complete_log(path: Path, plan: ExperimentPlan):
    """Existing runs if ``path`` holds a finished condition; PlanError if partial."""
    runs = read_runs(path)
    ok = len(runs) == plan.n_runs and all(len(r) == plan.n_trials for r in runs)
    ok = ok and sorted(r.run_id for r in runs) == list(range(plan.n_runs))
    if not ok:
        raise PlanError(f"{path} exists but does not hold a complete condition; remove it to rerun")
    return sorted(runs, key=lambda r: r.run_id)


@dataclass
class RunResult:
    out_dir: Path
    log_paths: dict
    summaries: list
    skipped: list


def run_plan(plan: ExperimentPlan, out_dir, workers: Optional[int] = None, plan_dir=None) -> RunResult:
    """Execute every condition, stream logs to CSV, then score and summarise."""
    plan.validate()
    out_dir = Path(out_dir)
    workers = workers or os.cpu_count() or 1
    conditions = plan.conditions()
    clients = {}
    for cond in conditions:
        if cond.agent.is_llm and cond.agent.name not in clients:
            clients[cond.agent.name] = make_client(cond.agent, plan.max_requests, plan_dir)

    log_paths, summaries, skipped = {}, [], []
    plot = []
    invalid_rows = []
    for cond in conditions:
        path = out_dir / "runs" / f"{cond.condition_id}.csv"
        if path.exists():
            runs = _complete_log(path, plan)
            skipped.append(cond.condition_id)
            logger.info("%s: complete log found, skipping execution", cond.condition_id)
        else:
            logger.info("%s: executing %d runs x %d trials", cond.condition_id, plan.n_runs, plan.n_trials)
            runs = execute_condition(cond, plan, workers, clients.get(cond.agent.name))
            tmp = path.with_suffix(".csv.partial")
            write_runs(tmp, runs)
            tmp.replace(path)
        log_paths[cond.condition_id] = path
        rms = [run_metrics(r, cond.structure, plan.warmup) for r in runs]
        if len(rms) >= 2:
            summaries.append(condition_summary(rms, plan.warmup, cond.condition_id))
        plot.extend(plot_rows(cond.condition_id, [r.run_id for r in runs], rms))
        n_tr = sum(rm.n_trials for rm in rms)
        n_inv = sum(rm.n_invalid for rm in rms)
        invalid_rows.append([cond.condition_id, n_tr, n_inv, repr(n_inv / n_tr)])
    write_summaries(out_dir / "summary.csv", summaries)
    write_plot_data(out_dir / "plot_data.csv", plot)
    with open(out_dir / "invalid_rates.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["condition_id", "n_trials", "n_invalid", "invalid_rate"])
        w.writerows(invalid_rows)
    return RunResult(out_dir, log_paths, summaries, skipped)


# -- fitting -----------------------------------------------------------------

def load_fit_groups(paths, structure: Optional[str] = None) -> dict:
    """Group run logs into fit units: one per (condition, reward structure).

    Keys are fit ids: the condition id, suffixed with the structure label only
    when one condition id spans several structures.
    """
    raw: dict = {}
    for p in paths:
        for run in read_runs(p):
            if structure is not None and run.structure.label != structure:
                continue
            raw.setdefault((run.condition_id, run.structure.label), []).append(run)
    labels_per_cond: dict = {}
    for cid, label in raw:
        labels_per_cond.setdefault(cid, set()).add(label)
    groups = {}
    for (cid, label), runs in raw.items():
        fit_id = cid if len(labels_per_cond[cid]) == 1 else f"{cid}__{label}"
        groups[fit_id] = sorted(runs, key=lambda r: r.run_id)
    return groups


def _draw_rows(rwfit, all_draws: bool):
    fit = rwfit.fit
    raw_names = fit.param_names
    keep_raw = range(len(raw_names)) if all_draws else range(4)
    nat_keep = range(len(rwfit.natural_names)) if all_draws else range(4)
    for c in range(fit.n_chains):
        for it in range(fit.n_samples):
            for k in keep_raw:
                yield [c, it, raw_names[k], repr(float(fit.draws[c, it, k]))]
            for k in nat_keep:
                yield [c, it, rwfit.natural_names[k], repr(float(rwfit.natural[c, it, k]))]


def write_fit(rwfit, fit_dir, all_draws: bool = False) -> None:
    fit_dir = Path(fit_dir)
    fit_dir.mkdir(parents=True, exist_ok=True)
    rwfit.summary.to_csv(fit_dir / "summary.csv")
    with open(fit_dir / "draws.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["chain", "iteration", "parameter", "value"])
        w.writerows(_draw_rows(rwfit, all_draws))
    a_mean, tau_mean = rwfit.run_means()
    with open(fit_dir / "run_means.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "a_mean", "tau_mean"])
        for rid, a, t in zip(rwfit.data.run_ids, a_mean, tau_mean):
            w.writerow([rid, repr(float(a)), repr(float(t))])
    ll = rwfit.per_run_loglik()
    with open(fit_dir / "loglik.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "mean_loglik", "sd_loglik", "n_valid_trials"])
        n_valid = rwfit.data.valid.sum(axis=1)
        for j, rid in enumerate(rwfit.data.run_ids):
            w.writerow([rid, repr(float(ll[:, j].mean())), repr(float(ll[:, j].std(ddof=1))), int(n_valid[j])])
    info = {
        "condition_id": rwfit.data.condition_id,
        "n_runs": rwfit.data.n_runs,
        "n_trials": rwfit.data.n_trials,
        "divergence_rate": rwfit.fit.divergence_rate,
        "max_rhat": rwfit.max_rhat,
        "min_ess_bulk": float(np.nanmin(rwfit.summary.ess_bulk)),
        "step_size": [float(s) for s in rwfit.fit.step_size],
        "mean_tree_depth": float(rwfit.fit.tree_depth.mean()),
    }
    (fit_dir / "fit_info.json").write_text(json.dumps(info, indent=2) + "\n", encoding="utf-8")


def fit_logs(paths, out_dir, config: SamplerConfig = SamplerConfig(), structure: Optional[str] = None,
             all_draws: bool = False) -> dict:
    """Fit the hierarchy separately to each condition found in the logs."""
    groups = load_fit_groups(paths, structure)
    if not groups:
        raise PlanError("no runs found" + (f" for structure {structure!r}" if structure else ""))
    for cid, runs in groups.items():
        if len(runs) < 2:
            raise PlanError(f"condition {cid!r} has {len(runs)} run(s); the hierarchy needs at least 2")
    fits = {}
    for cid, runs in groups.items():
        logger.info("fitting %s (%d runs)", cid, len(runs))
        data = FitDataset.from_runs(runs)
        data.condition_id = cid
        rwfit = fit_rw(data, config)
        write_fit(rwfit, Path(out_dir) / "fits" / cid, all_draws)
        fits[cid] = rwfit
    return fits


def reliability_logs(paths, out_dir, config: SamplerConfig = SamplerConfig(), structure: Optional[str] = None) -> dict:
    groups = load_fit_groups(paths, structure)
    if not groups:
        raise PlanError("no runs found")
    results = {}
    rows = []
    for cid, runs in groups.items():
        if len(runs) < 3:
            raise PlanError(f"condition {cid!r} has {len(runs)} run(s); ICC needs at least 3")
        res = split_half_reliability(FitDataset.from_runs(runs), config)
        results[cid] = res
        rows.append([cid, "A", repr(res.icc_a), res.n_subjects, res.k])
        rows.append([cid, "tau", repr(res.icc_tau), res.n_subjects, res.k])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "reliability.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RELIABILITY_COLUMNS)
        w.writerows(rows)
    return results


# -- recovery ----------------------------------------------------------------

@dataclass
class RecoveryReport:
    rows: list
    passed: bool
    fit: object = None
    runs: list = None


RECOVERY_COLUMNS = ("quantity", "truth", "estimate", "ci_low", "ci_high", "abs_error", "tolerance", "passed")


def recover(spec: CohortSpec, out_dir, config: SamplerConfig = SamplerConfig(), seed: int = 0,
            tol_a: float = 0.05, tol_tau: float = 0.5, max_rhat: float = 1.01,
            max_divergence: float = 0.02) -> RecoveryReport:
    """Simulate a synthetic cohort, fit it, and score recovered group parameters."""
    if spec.n_runs < 2:
        raise PlanError(f"recovery needs at least 2 runs, got {spec.n_runs}")
    out = Path(out_dir)
    runs = simulate_cohort(spec, seed)
    write_runs(out / "runs" / f"{spec.condition_id}.csv", runs)
    rwfit = fit_rw(FitDataset.from_runs(runs), config, check=False)
    write_fit(rwfit, out / "fits" / spec.condition_id)

    truth = spec.hyper.natural
    rows = []

    def add(q, true, est, lo, hi, tol):
        err = abs(est - true) if true is not None else math.nan
        ok = "" if tol is None else str(bool(err <= tol) if true is not None else bool(est <= tol))
        rows.append([q, true, est, lo, hi, err, tol, ok])

    for q, true, tol in (("group_A", truth.a, tol_a), ("group_tau", truth.tau, tol_tau)):
        r = rwfit.summary.row(q)
        add(q, true, r["mean"], r["ci2.5"], r["ci97.5"], tol)
    add("max_rhat", None, rwfit.max_rhat, None, None, max_rhat)
    add("divergence_rate", None, rwfit.fit.divergence_rate, None, None, max_divergence)
    a_true = np.array([r.true_params[0] for r in runs])
    tau_true = np.array([r.true_params[1] for r in runs])
    a_hat, tau_hat = rwfit.run_means()
    add("run_a_mae", None, float(np.mean(np.abs(a_hat - a_true))), None, None, None)
    add("run_tau_mae", None, float(np.mean(np.abs(tau_hat - tau_true))), None, None, None)
    add("run_a_spread", float(np.std(a_true)), float(np.std(a_hat)), None, None, None)
    add("run_tau_spread", float(np.std(tau_true)), float(np.std(tau_hat)), None, None, None)
    passed = all(r[7] == "True" for r in rows if r[7] != "")
    with open(out / "recovery.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECOVERY_COLUMNS)
        for r in rows:
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in r])
    return RecoveryReport(rows, passed, rwfit, runs)


# -- reporting ---------------------------------------------------------------

def _read_csv(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return list(reader.fieldnames or ()), list(reader)


def _fval(x: str) -> float:
    return float(x) if x not in ("", None) else math.nan


def report(inputs, out_dir) -> dict:
    """Consolidate condition summaries, posterior summaries and reliability tables.

    Inputs are recognised by their header. Nothing is written unless every
    input exists and parses.
    """
    inputs = [Path(p) for p in inputs]
    if not inputs:
        raise PlanError("report needs at least one input file")
    missing = [str(p) for p in inputs if not p.is_file()]
    if missing:
        raise PlanError(f"missing report inputs: {', '.join(missing)}")
    cond_rows, post_tables, rel_rows = [], {}, []
    for p in inputs:
        header, rows = _read_csv(p)
        if tuple(header) == SUMMARY_COLUMNS:
            cond_rows.extend(rows)
        elif tuple(header) == POSTERIOR_COLUMNS:
            fit_id = p.parent.name if p.name == "summary.csv" else p.stem
            post_tables[fit_id] = {r["parameter"]: r for r in rows}
        elif tuple(header) == RELIABILITY_COLUMNS:
            rel_rows.extend(rows)
        else:
            raise PlanError(f"{p}: unrecognised table header {header}")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {}
    if cond_rows:
        long_rows = sorted(cond_rows, key=lambda r: (r["metric"], r["condition_id"]))
        path = out / "conditions_long.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=("metric",) + tuple(c for c in SUMMARY_COLUMNS if c != "metric"), lineterminator="\n")
            w.writeheader()
            w.writerows(long_rows)
        written["conditions_long"] = path
        metrics = list(dict.fromkeys(r["metric"] for r in cond_rows))
        by_cond: dict = {}
        for r in cond_rows:
            by_cond.setdefault(r["condition_id"], {})[r["metric"]] = r
        cols = ["condition_id"] + [f"{m}_{s}" for m in metrics for s in ("mean", "ci_low", "ci_high", "n")]
        path = out / "conditions_wide.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for cid, ms in by_cond.items():
                row = [cid]
                for m in metrics:
                    r = ms.get(m, {})
                    row += [r.get("mean", ""), r.get("ci_low", ""), r.get("ci_high", ""), r.get("n", "")]
                w.writerow(row)
        written["conditions_wide"] = path
    if post_tables:
        wanted = ["group_A", "group_tau", "mu_a", "mu_tau", "sigma_a", "sigma_tau"]
        cols = ["fit_id"] + [f"{q}_{s}" for q in wanted for s in ("mean", "ci2.5", "ci97.5", "rhat")] + ["max_rhat"]
        path = out / "posterior_table.csv"
        plot_path = out / "posterior_plot_data.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh, open(plot_path, "w", newline="", encoding="utf-8") as ph:
            w = csv.writer(fh, lineterminator="\n")
            pw = csv.writer(ph, lineterminator="\n")
            w.writerow(cols)
            pw.writerow(["fit_id", "parameter", "stat", "value"])
            for fit_id, table in post_tables.items():
                row = [fit_id]
                for q in wanted:
                    r = table.get(q, {})
                    row += [r.get("mean", ""), r.get("ci2.5", ""), r.get("ci97.5", ""), r.get("rhat", "")]
                    for stat in ("mean", "ci2.5", "ci97.5"):
                        if r.get(stat, "") != "":
                            pw.writerow([fit_id, q, stat, r[stat]])
                rh = [_fval(r["rhat"]) for r in table.values()]
                row.append(repr(float(np.nanmax(rh))) if rh and not all(math.isnan(v) for v in rh) else "")
                w.writerow(row)
        written["posterior_table"] = path
        written["posterior_plot_data"] = plot_path
    if rel_rows:
        path = out / "reliability_table.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=RELIABILITY_COLUMNS, lineterminator="\n")
            w.writeheader()
            w.writerows(rel_rows)
        written["reliability_table"] = path
    return written
