"""Run-level behavioural indices and their condition-level aggregates.

Invalid trials count toward ``T`` (target rate denominator) and toward reward
totals (with reward 0), but never toward choice shares, shift counts or the
monomorphy check. Metrics whose denominator is empty are ``None`` and are left
out of condition means.
"""

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .bandit import Choice, RewardStructure

ORACLE_TARGET_RATE_REFERENCE = 0.90
STUBBORN_HIGH = 0.8
STUBBORN_LOW = 0.2
Z_95 = 1.96
DEFAULT_WARMUP = 10


@dataclass(frozen=True)
class RunMetrics:
    n_trials: int
    n_invalid: int
    total_reward: int
    target_rate: float
    loss_shift: Optional[float]
    win_shift: Optional[float]
    c_bar: Optional[float]
    choice_bias: Optional[float]
    post_warmup_monomorphic: bool
    post_warmup_loss_shift: Optional[float]
    post_warmup_win_shift: Optional[float]
    adjusted_choice_bias: Optional[float] = None

    @property
    def invalid_rate(self) -> float:
        return self.n_invalid / self.n_trials


def _shift_rate(choices, rewards, start: int, outcome: int) -> Optional[float]:
    """P(choice[t+1] != choice[t] | reward[t] == outcome) over t >= start, both trials valid."""
    n = 0
    switched = 0
    for t in range(start, len(choices) - 1):
        c0, c1 = choices[t], choices[t + 1]
        if not (c0.is_valid and c1.is_valid) or rewards[t] != outcome:
            continue
        n += 1
        switched += c1 is not c0
    return switched / n if n else None


def run_metrics(run, structure: Optional[RewardStructure] = None, warmup: int = DEFAULT_WARMUP) -> RunMetrics:
    """Compute every per-run index for a :class:`~banditprobe.records.RunLog`."""
    structure = structure or run.structure
    choices = [rec.choice for rec in run.trials]
    rewards = [rec.reward for rec in run.trials]
    T = len(choices)
    if T == 0:
        raise ValueError("cannot score an empty run")
    if not 0 <= warmup < T:
        raise ValueError(f"warmup must satisfy 0 <= warmup < {T}, got {warmup}")

    valid = [c for c in choices if c.is_valid]
    n_y = sum(c is Choice.Y for c in valid)
    c_bar = n_y / len(valid) if valid else None
    target = structure.target
    target_rate = sum(c is target for c in choices) / T

    post = [c for c in choices[warmup:] if c.is_valid]
    monomorphic = bool(post) and all(c is post[0] for c in post)

    return RunMetrics(
        n_trials=T,
        n_invalid=T - len(valid),
        total_reward=int(sum(rewards)),
        target_rate=target_rate,
        loss_shift=_shift_rate(choices, rewards, 0, 0),
        win_shift=_shift_rate(choices, rewards, 0, 1),
        c_bar=c_bar,
        choice_bias=None if c_bar is None else c_bar - 0.5,
        post_warmup_monomorphic=monomorphic,
        post_warmup_loss_shift=_shift_rate(choices, rewards, warmup, 0),
        post_warmup_win_shift=_shift_rate(choices, rewards, warmup, 1),
        adjusted_choice_bias=None if structure.is_symmetric else target_rate - ORACLE_TARGET_RATE_REFERENCE,
    )


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    ci_low: float
    ci_high: float
    n: int


def mean_ci(values) -> MetricSummary:
    """Mean with a normal-approximation 95% interval, mean +/- 1.96 sd / sqrt(n)."""
    x = np.asarray([v for v in values if v is not None], dtype=float)
    n = len(x)
    if n == 0:
        return MetricSummary(math.nan, math.nan, math.nan, 0)
    m = float(np.mean(x))
    if n == 1:
        return MetricSummary(m, math.nan, math.nan, 1)
    half = Z_95 * float(np.std(x, ddof=1)) / math.sqrt(n)
    return MetricSummary(m, m - half, m + half, n)


RUN_LEVEL_METRICS = (
    "total_reward",
    "target_rate",
    "loss_shift",
    "win_shift",
    "post_warmup_loss_shift",
    "post_warmup_win_shift",
    "c_bar",
    "choice_bias",
    "adjusted_choice_bias",
    "invalid_rate",
)


@dataclass
class ConditionSummary:
    condition_id: str
    n_runs: int
    warmup: int
    metrics: dict = field(default_factory=dict)
    stubbornness_rate: float = math.nan
    amplification_index: float = math.nan
    rigidity_index: float = math.nan
    invalid_rate: float = math.nan
    index_summaries: dict = field(default_factory=dict)

    def rows(self):
        """(metric, MetricSummary) pairs in output order, run-level metrics first."""
        out = [(k, v) for k, v in self.metrics.items()]
        out += [(k, v) for k, v in self.index_summaries.items()]
        return out


def condition_summary(runs, warmup: int = DEFAULT_WARMUP, condition_id: str = "") -> ConditionSummary:
    """Aggregate a list of :class:`RunMetrics` into condition means with 95% CIs."""
    runs = list(runs)
    if len(runs) < 2:
        raise ValueError(f"need at least 2 runs for a confidence interval, got {len(runs)}")
    summary = ConditionSummary(condition_id, len(runs), warmup)
    for name in RUN_LEVEL_METRICS:
        values = [getattr(r, name) for r in runs]
        if name == "adjusted_choice_bias" and all(v is None for v in values):
            continue
        summary.metrics[name] = mean_ci(values)

    defined_cbar = [r.c_bar for r in runs if r.c_bar is not None]
    stubborn = [float(c >= STUBBORN_HIGH or c <= STUBBORN_LOW) for c in defined_cbar]
    mono = [float(r.post_warmup_monomorphic) for r in runs]
    loss = summary.metrics["post_warmup_loss_shift"]

    stub_s = mean_ci(stubborn)
    amp_s = mean_ci(mono)
    rig_s = MetricSummary(1.0 - loss.mean, 1.0 - loss.ci_high, 1.0 - loss.ci_low, loss.n)
    inv_total = sum(r.n_invalid for r in runs) / sum(r.n_trials for r in runs)
    inv_s = summary.metrics["invalid_rate"]

    summary.stubbornness_rate = stub_s.mean
    summary.amplification_index = amp_s.mean
    summary.rigidity_index = rig_s.mean
    summary.invalid_rate = inv_total
    summary.index_summaries = {
        "stubbornness_rate": stub_s,
        "amplification_index": amp_s,
        "rigidity_index": rig_s,
        "condition_invalid_rate": MetricSummary(inv_total, inv_s.ci_low, inv_s.ci_high, inv_s.n),
    }
    return summary


def oracle_benchmarks(structure: RewardStructure, n_trials: int) -> tuple:
    """Reference (total reward, target rate) for an ideal agent.

    Asymmetric: always pull the better arm. Symmetric: an unbiased 50/50 split.
    """
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    if structure.is_symmetric:
        return n_trials * structure.p_x, 0.5
    return n_trials * max(structure.p_x, structure.p_y), 1.0


SUMMARY_COLUMNS = ("condition_id", "metric", "mean", "ci_low", "ci_high", "n")
PLOT_COLUMNS = ("condition_id", "run_id", "metric", "value")


def _num(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def write_summaries(path, summaries) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            for metric, m in s.rows():
                w.writerow([s.condition_id, metric, _num(m.mean), _num(m.ci_low), _num(m.ci_high), m.n])


def plot_rows(condition_id: str, run_ids, run_metrics_list):
    names = [f.name for f in fields(RunMetrics)] + ["invalid_rate"]
    for run_id, rm in zip(run_ids, run_metrics_list):
        for name in names:
            value = getattr(rm, name)
            if isinstance(value, bool):
                value = int(value)
            yield [condition_id, run_id, name, _num(value)]


def write_plot_data(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        w.writerows(rows)


def _batch_shift(choices, rewards, valid, start: int, outcome: int) -> np.ndarray:
    both = valid[:, :-1] & valid[:, 1:]
    both[:, :start] = False
    cond = both & (rewards[:, :-1] == outcome)
    switched = cond & (choices[:, 1:] != choices[:, :-1])
    n = cond.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n > 0, switched.sum(axis=1) / np.maximum(n, 1), np.nan)


def batch_run_metrics(choices, rewards, valid, structure: RewardStructure, warmup: int = DEFAULT_WARMUP) -> dict:
    """Vectorised :func:`run_metrics` over (n_runs, n_trials) arrays; undefined values are NaN.

    ``choices`` codes X as 0 and Y as 1 and is ignored where ``valid`` is False.
    """
    choices = np.asarray(choices)
    rewards = np.asarray(rewards)
    valid = np.asarray(valid, dtype=bool)
    n_runs, T = choices.shape
    if T == 0 or not 0 <= warmup < T:
        raise ValueError(f"need n_trials >= 1 and 0 <= warmup < n_trials, got T={T}, warmup={warmup}")
    is_y = valid & (choices == 1)
    n_valid = valid.sum(axis=1)
    n_y = is_y.sum(axis=1)
    target_is_y = structure.target is Choice.Y
    n_target = n_y if target_is_y else n_valid - n_y
    with np.errstate(invalid="ignore", divide="ignore"):
        c_bar = np.where(n_valid > 0, n_y / np.maximum(n_valid, 1), np.nan)
    post_valid = valid[:, warmup:].sum(axis=1)
    post_y = is_y[:, warmup:].sum(axis=1)
    target_rate = n_target / T
    out = {
        "n_trials": np.full(n_runs, T),
        "n_invalid": T - n_valid,
        "total_reward": np.where(valid, rewards, 0).sum(axis=1),
        "target_rate": target_rate,
        "loss_shift": _batch_shift(choices, rewards, valid, 0, 0),
        "win_shift": _batch_shift(choices, rewards, valid, 0, 1),
        "c_bar": c_bar,
        "choice_bias": c_bar - 0.5,
        "post_warmup_monomorphic": (post_valid > 0) & ((post_y == 0) | (post_y == post_valid)),
        "post_warmup_loss_shift": _batch_shift(choices, rewards, valid, warmup, 0),
        "post_warmup_win_shift": _batch_shift(choices, rewards, valid, warmup, 1),
        "adjusted_choice_bias": (np.full(n_runs, np.nan) if structure.is_symmetric
                                 else target_rate - ORACLE_TARGET_RATE_REFERENCE),
    }
    out["invalid_rate"] = out["n_invalid"] / T
    return out


def condition_level_from_batch(batch: dict) -> dict:
    """Condition means and indices from :func:`batch_run_metrics` output."""

    def nanmean(x):
        x = np.asarray(x, dtype=float)
        x = x[np.isfinite(x)]
        return float(x.mean()) if len(x) else math.nan

    c_bar = batch["c_bar"][np.isfinite(batch["c_bar"])]
    out = {name: nanmean(batch[name]) for name in RUN_LEVEL_METRICS}
    out["stubbornness_rate"] = float(np.mean((c_bar >= STUBBORN_HIGH) | (c_bar <= STUBBORN_LOW))) if len(c_bar) else math.nan
    out["amplification_index"] = float(np.mean(batch["post_warmup_monomorphic"]))
    out["rigidity_index"] = 1.0 - out["post_warmup_loss_shift"]
    out["condition_invalid_rate"] = float(np.sum(batch["n_invalid"]) / np.sum(batch["n_trials"]))
    return out
