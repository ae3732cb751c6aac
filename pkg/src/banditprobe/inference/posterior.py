"""Posterior summaries, posterior predictive simulation and per-run log-likelihoods."""

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.special import ndtr

from .. import _kernels
from ..bandit import RewardStructure
from ..metrics import batch_run_metrics, condition_level_from_batch
from ..rng import derive_seed, make_generator
from ..rw_model import TAU_MAX, FitDataset, HierarchicalRW, simulate_batch
from .diagnostics import DegenerateChainWarning, diagnostics
from .sampler import Fit, SamplerConfig, sample

SUMMARY_COLUMNS = ("parameter", "mean", "sd", "ci2.5", "ci97.5", "rhat", "ess_bulk")


@dataclass
class PosteriorSummary:
    names: list
    mean: np.ndarray
    sd: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    rhat: np.ndarray
    ess_bulk: np.ndarray

    def __len__(self):
        return len(self.names)

    def row(self, name: str) -> dict:
        i = self.names.index(name)
        return {
            "parameter": name,
            "mean": float(self.mean[i]),
            "sd": float(self.sd[i]),
            "ci2.5": float(self.ci_low[i]),
            "ci97.5": float(self.ci_high[i]),
            "rhat": float(self.rhat[i]),
            "ess_bulk": float(self.ess_bulk[i]),
        }

    def rows(self):
        return [self.row(n) for n in self.names]

    def to_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
            w.writeheader()
            for r in self.rows():
                w.writerow({k: (v if isinstance(v, str) else repr(v)) for k, v in r.items()})


def summarize(chains, names=None) -> PosteriorSummary:
    """Mean, sd, central 95% interval (linear-interpolated quantiles), R-hat and bulk ESS.

    ``chains`` is (n_chains, n_draws, dim). R-hat/ESS are NaN with one chain.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim == 2:
        x = x[..., None]
    if not np.all(np.isfinite(x)):
        raise ValueError("chains contain non-finite values")
    dim = x.shape[-1]
    names = list(names) if names is not None else [f"theta[{i}]" for i in range(dim)]
    if len(names) != dim:
        raise ValueError(f"{len(names)} names for {dim} parameters")
    flat = x.reshape(-1, dim)
    mean = flat.mean(axis=0)
    sd = flat.std(axis=0, ddof=1) if flat.shape[0] > 1 else np.zeros(dim)
    lo, hi = np.quantile(flat, [0.025, 0.975], axis=0)
    if x.shape[0] >= 2 and x.shape[1] >= 4:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateChainWarning)
            rhat, ess = diagnostics(x)
    else:
        rhat = np.full(dim, math.nan)
        ess = np.full(dim, math.nan)
    outside = (mean < lo) | (mean > hi)
    if np.any(outside):
        warnings.warn(f"posterior mean outside its 95% interval for {int(outside.sum())} parameter(s)", RuntimeWarning, stacklevel=2)
    return PosteriorSummary(names, mean, sd, lo, hi, rhat, ess)


def natural_draws(model: HierarchicalRW, draws: np.ndarray):
    """Derived quantities per draw: group-level natural scale, sigmas and per-run (a, tau).

    Returns ``(names, values)`` with values shaped like ``draws[..., k]`` stacked on the last axis.
    """
    flat = draws.reshape(-1, draws.shape[-1])
    n = model.n_runs
    group_a = ndtr(flat[:, 0])
    group_tau = TAU_MAX * ndtr(flat[:, 2])
    sigma_a = np.exp(flat[:, 1])
    sigma_tau = np.exp(flat[:, 3])
    a = np.empty((flat.shape[0], n))
    tau = np.empty((flat.shape[0], n))
    for s in range(flat.shape[0]):
        a[s], tau[s] = model.run_params(flat[s])
    names = ["group_A", "group_tau", "sigma_a", "sigma_tau"]
    names += [f"a[{i}]" for i in range(n)] + [f"tau[{i}]" for i in range(n)]
    values = np.column_stack([group_a, group_tau, sigma_a, sigma_tau, a, tau])
    return names, values.reshape(draws.shape[:-1] + (values.shape[-1],))


def per_run_loglik(model: HierarchicalRW, draws) -> np.ndarray:
    """Matrix (n_draws, n_runs) of run log-likelihoods under each draw's per-run parameters."""
    flat = np.asarray(draws, dtype=float).reshape(-1, model.dim)
    d = model.data
    out = np.empty((flat.shape[0], model.n_runs))
    for s in range(flat.shape[0]):
        a, tau = model.run_params(flat[s])
        out[s] = _kernels.loglik(a, tau, d.choices, d.rewards, d.valid)
    return out


@dataclass
class PredictiveResult:
    choices: np.ndarray          # (n_draws, n_runs, n_trials)
    rewards: np.ndarray
    metrics: dict                # metric -> (n_draws,) condition-level values
    intervals: dict = field(default_factory=dict)  # metric -> (mean, 2.5%, 97.5%)

    @property
    def n_draws(self) -> int:
        return self.choices.shape[0]


def posterior_predictive(a_draws, tau_draws, structure: RewardStructure, n_draws: int, n_trials: int,
                         seed: int = 0, warmup: int = 10, prime_x: bool = False) -> PredictiveResult:
    """Simulate a replicate cohort for each of ``n_draws`` posterior draws.

    ``a_draws`` and ``tau_draws`` are (total_draws, n_runs) natural-scale
    per-run parameters. Draws are picked without replacement with a seeded
    generator; each replicate run gets its own derived seed.
    """
    a_draws = np.atleast_2d(np.asarray(a_draws, dtype=float))
    tau_draws = np.atleast_2d(np.asarray(tau_draws, dtype=float))
    total, n_runs = a_draws.shape
    if n_draws > total:
        raise ValueError(f"requested {n_draws} predictive draws from {total} posterior draws")
    if n_draws == 0:
        empty = np.zeros((0, n_runs, n_trials))
        return PredictiveResult(empty.astype(np.int8), empty, {}, {})
    idx = np.sort(make_generator(seed, "ppc-draws").choice(total, size=n_draws, replace=False))
    choices = np.empty((n_draws, n_runs, n_trials), dtype=np.int8)
    rewards = np.empty((n_draws, n_runs, n_trials))
    per_metric = {}
    for k, s in enumerate(idx):
        seeds = [derive_seed(seed, "ppc", int(s), i) for i in range(n_runs)]
        c, r = simulate_batch(a_draws[s], tau_draws[s], structure, n_trials, seeds, prime_x)
        choices[k], rewards[k] = c, r
        batch = batch_run_metrics(c, r, np.ones_like(c, dtype=bool), structure, warmup)
        for name, value in condition_level_from_batch(batch).items():
            per_metric.setdefault(name, []).append(value)
    metrics = {k: np.asarray(v, dtype=float) for k, v in per_metric.items()}
    intervals = {}
    for k, v in metrics.items():
        v = v[np.isfinite(v)]
        if len(v):
            intervals[k] = (float(v.mean()), float(np.quantile(v, 0.025)), float(np.quantile(v, 0.975)))
    return PredictiveResult(choices, rewards, metrics, intervals)


@dataclass
class RWFit:
    """A fitted hierarchical RW model with raw and natural-scale summaries."""

    model: HierarchicalRW
    fit: Fit
    summary: PosteriorSummary
    natural_names: list
    natural: np.ndarray   # (chains, draws, n_natural)

    @property
    def data(self) -> FitDataset:
        return self.model.data

    def natural_column(self, name: str) -> np.ndarray:
        return self.natural[..., self.natural_names.index(name)]

    def run_means(self):
        """Per-run posterior means of (a, tau)."""
        n = self.model.n_runs
        flat = self.natural.reshape(-1, self.natural.shape[-1])
        means = flat.mean(axis=0)
        return means[4:4 + n], means[4 + n:4 + 2 * n]

    def run_param_draws(self):
        n = self.model.n_runs
        flat = self.natural.reshape(-1, self.natural.shape[-1])
        return flat[:, 4:4 + n], flat[:, 4 + n:4 + 2 * n]

    def per_run_loglik(self) -> np.ndarray:
        return per_run_loglik(self.model, self.fit.draws)

    def posterior_predictive(self, structure: RewardStructure, n_draws: int, n_trials: Optional[int] = None,
                             seed: int = 0, warmup: int = 10) -> PredictiveResult:
        a, tau = self.run_param_draws()
        return posterior_predictive(a, tau, structure, n_draws, n_trials or self.data.n_trials, seed, warmup)

    @property
    def max_rhat(self) -> float:
        return float(np.nanmax(self.summary.rhat))


def fit_rw(data: FitDataset, config: SamplerConfig = SamplerConfig(), check: bool = True) -> RWFit:
    """Sample the hierarchical RW posterior and summarise raw and natural-scale parameters."""
    if data.n_runs < 2:
        raise ValueError(f"the hierarchy needs at least 2 runs, got {data.n_runs}")
    model = HierarchicalRW(data)
    fit = sample(model, config, check=check)
    nat_names, nat = natural_draws(model, fit.draws)
    summary = summarize(np.concatenate([fit.draws, nat], axis=-1), model.param_names + nat_names)
    return RWFit(model, fit, summary, nat_names, nat)
