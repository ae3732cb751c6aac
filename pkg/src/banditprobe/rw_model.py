"""Hierarchical Rescorla-Wagner / softmax model.

Per-run parameters follow a non-centred probit hierarchy::

    a_i   = Phi(mu_a   + sigma_a   * z_a[i])
    tau_i = 5 * Phi(mu_tau + sigma_tau * z_tau[i])

with ``mu ~ Normal(0, 1)``, ``sigma ~ HalfNormal(0.2)`` and ``z ~ Normal(0, 1)``.
The sampler works on the unconstrained vector
``[mu_a, log sigma_a, mu_tau, log sigma_tau, z_a..., z_tau...]``.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri

from . import _kernels
from .bandit import Choice, RewardStructure
from .rng import derive_seed, make_generator

TAU_MAX = 5.0
SIGMA_PRIOR_SCALE = 0.2

_A_LO = np.finfo(float).tiny
_A_HI = np.nextafter(1.0, 0.0)
_TAU_HI = np.nextafter(TAU_MAX, 0.0)
_LOG_2PI = math.log(2.0 * math.pi)
_HALF_NORMAL_CONST = math.log(2.0) - math.log(SIGMA_PRIOR_SCALE) - 0.5 * _LOG_2PI


class NumericFailure(FloatingPointError):
    pass


@dataclass(frozen=True)
class RWParams:
    a: float
    tau: float


@dataclass(frozen=True)
class GroupHyper:
    mu_a: float
    sigma_a: float
    mu_tau: float
    sigma_tau: float

    def __post_init__(self):
        if not (self.sigma_a >= 0 and self.sigma_tau >= 0):
            raise ValueError(f"group scales must be non-negative, got {self.sigma_a}, {self.sigma_tau}")

    @classmethod
    def from_natural(cls, a: float, tau: float, sigma_a: float = 0.0, sigma_tau: float = 0.0) -> "GroupHyper":
        """Hyper-means placing the group-median run at natural-scale (a, tau)."""
        return cls(float(ndtri(a)), sigma_a, float(ndtri(tau / TAU_MAX)), sigma_tau)

    @property
    def natural(self) -> RWParams:
        return RWParams(float(ndtr(self.mu_a)), TAU_MAX * float(ndtr(self.mu_tau)))


def _clip_a(p):
    return np.clip(p, _A_LO, _A_HI)


def _clip_tau(p):
    return np.clip(TAU_MAX * np.clip(p, _A_LO, _A_HI), 0.0, _TAU_HI)


def transform(hyper: GroupHyper, z_a, z_tau):
    """Map standard-normal offsets to natural-scale (a, tau).

    Scalars in give an :class:`RWParams`; arrays in give a pair of arrays.
    """
    a = _clip_a(ndtr(hyper.mu_a + hyper.sigma_a * np.asarray(z_a, dtype=float)))
    tau = _clip_tau(ndtr(hyper.mu_tau + hyper.sigma_tau * np.asarray(z_tau, dtype=float)))
    if np.ndim(a) == 0 and np.ndim(tau) == 0:
        return RWParams(float(a), float(tau))
    return a, tau


@dataclass
class FitDataset:
    """Padded per-run arrays; ``valid`` is False for invalid and padding trials."""

    choices: np.ndarray
    rewards: np.ndarray
    valid: np.ndarray
    run_ids: list = field(default_factory=list)
    condition_id: str = ""

    def __post_init__(self):
        self.choices = np.ascontiguousarray(self.choices, dtype=np.int8)
        self.rewards = np.ascontiguousarray(self.rewards, dtype=float)
        self.valid = np.ascontiguousarray(self.valid, dtype=bool)
        if not (self.choices.shape == self.rewards.shape == self.valid.shape) or self.choices.ndim != 2:
            raise ValueError(
                f"choices/rewards/valid must share one 2-D shape, got "
                f"{self.choices.shape}, {self.rewards.shape}, {self.valid.shape}"
            )
        if not self.run_ids:
            self.run_ids = list(range(self.n_runs))

    @property
    def n_runs(self) -> int:
        return self.choices.shape[0]

    @property
    def n_trials(self) -> int:
        return self.choices.shape[1]

    @classmethod
    def empty(cls, n_trials: int = 0) -> "FitDataset":
        z = np.zeros((0, n_trials))
        return cls(z, z, z)

    @classmethod
    def from_runs(cls, runs) -> "FitDataset":
        runs = list(runs)
        n_trials = max((len(r) for r in runs), default=0)
        choices = np.zeros((len(runs), n_trials), dtype=np.int8)
        rewards = np.zeros((len(runs), n_trials))
        valid = np.zeros((len(runs), n_trials), dtype=bool)
        for i, run in enumerate(runs):
            for t, rec in enumerate(run.trials):
                choices[i, t] = 1 if rec.choice is Choice.Y else 0
                rewards[i, t] = rec.reward
                valid[i, t] = rec.choice.is_valid
        cond = runs[0].condition_id if runs else ""
        return cls(choices, rewards, valid, [r.run_id for r in runs], cond)

    def subset_trials(self, start: int, stop: int) -> "FitDataset":
        return FitDataset(
            self.choices[:, start:stop], self.rewards[:, start:stop], self.valid[:, start:stop],
            list(self.run_ids), self.condition_id,
        )

    def entry(self, i: int):
        return self.choices[i], self.rewards[i], self.valid[i]


def run_loglik(params: RWParams, choices, rewards, valid=None) -> float:
    """Log-likelihood of one run's observed choices under (a, tau)."""
    choices = np.asarray(choices, dtype=np.int8)[None, :]
    rewards = np.asarray(rewards, dtype=float)[None, :]
    if valid is None:
        valid = np.ones(choices.shape, dtype=bool)
    else:
        valid = np.asarray(valid, dtype=bool)[None, :]
    ll = _kernels.loglik(np.array([params.a]), np.array([params.tau]), choices, rewards, valid)[0]
    if not math.isfinite(ll):
        raise NumericFailure(f"non-finite log-likelihood at a={params.a}, tau={params.tau}")
    return float(ll)


def _std_normal_logpdf(x):
    return -0.5 * x * x - 0.5 * _LOG_2PI


class HierarchicalRW:
    """Joint log-posterior of the hierarchy on the unconstrained space."""

    n_hyper = 4
    hyper_names = ("mu_a", "log_sigma_a", "mu_tau", "log_sigma_tau")

    def __init__(self, data: FitDataset):
        self.data = data
        self.n_runs = data.n_runs
        self.dim = self.n_hyper + 2 * self.n_runs

    @property
    def param_names(self) -> list:
        n = self.n_runs
        return list(self.hyper_names) + [f"z_a[{i}]" for i in range(n)] + [f"z_tau[{i}]" for i in range(n)]

    def unpack(self, theta):
        n = self.n_runs
        return theta[0], theta[1], theta[2], theta[3], theta[4:4 + n], theta[4 + n:4 + 2 * n]

    def pack(self, hyper: GroupHyper, z_a, z_tau) -> np.ndarray:
        with np.errstate(divide="ignore"):
            head = [hyper.mu_a, np.log(hyper.sigma_a), hyper.mu_tau, np.log(hyper.sigma_tau)]
        return np.concatenate([head, np.asarray(z_a, float), np.asarray(z_tau, float)])

    def run_params(self, theta):
        mu_a, ls_a, mu_t, ls_t, z_a, z_t = self.unpack(theta)
        eta_a = mu_a + math.exp(ls_a) * z_a
        eta_t = mu_t + math.exp(ls_t) * z_t
        return _clip_a(ndtr(eta_a)), _clip_tau(ndtr(eta_t))

    def _prior(self, theta):
        mu_a, ls_a, mu_t, ls_t, z_a, z_t = self.unpack(theta)
        lp = _std_normal_logpdf(mu_a) + _std_normal_logpdf(mu_t)
        for ls in (ls_a, ls_t):
            s = math.exp(ls)
            lp += _HALF_NORMAL_CONST - 0.5 * (s / SIGMA_PRIOR_SCALE) ** 2 + ls
        lp += float(np.sum(_std_normal_logpdf(z_a)) + np.sum(_std_normal_logpdf(z_t)))
        return lp

    def log_prob(self, theta) -> float:
        theta = np.asarray(theta, dtype=float)
        lp = self._prior(theta)
        if self.n_runs:
            a, tau = self.run_params(theta)
            d = self.data
            lp += float(np.sum(_kernels.loglik(a, tau, d.choices, d.rewards, d.valid)))
        return lp

    def log_prob_grad(self, theta):
        theta = np.ascontiguousarray(theta, dtype=float)
        if _kernels.NUMBA_ENABLED:
            d = self.data
            lp, grad = _kernels.log_prob_grad_loop(theta, d.choices, d.rewards, d.valid)
            return float(lp), grad
        return self.log_prob_grad_numpy(theta)

    def log_prob_grad_numpy(self, theta):
        theta = np.asarray(theta, dtype=float)
        n = self.n_runs
        mu_a, ls_a, mu_t, ls_t, z_a, z_t = self.unpack(theta)
        s_a = math.exp(ls_a)
        s_t = math.exp(ls_t)
        lp = self._prior(theta)
        grad = np.empty(self.dim)
        grad[0] = -mu_a
        grad[2] = -mu_t
        grad[1] = 1.0 - (s_a / SIGMA_PRIOR_SCALE) ** 2
        grad[3] = 1.0 - (s_t / SIGMA_PRIOR_SCALE) ** 2
        grad[4:4 + n] = -z_a
        grad[4 + n:] = -z_t
        if n:
            eta_a = mu_a + s_a * z_a
            eta_t = mu_t + s_t * z_t
            a = _clip_a(ndtr(eta_a))
            tau = _clip_tau(ndtr(eta_t))
            d = self.data
            ll, g_a, g_tau = _kernels.loglik_grad_numpy(a, tau, d.choices, d.rewards, d.valid)
            lp += float(np.sum(ll))
            # chain rule through the probit: dPhi/deta = phi(eta)
            h_a = g_a * np.exp(_std_normal_logpdf(eta_a))
            h_t = g_tau * TAU_MAX * np.exp(_std_normal_logpdf(eta_t))
            grad[0] += np.sum(h_a)
            grad[1] += np.sum(h_a * s_a * z_a)
            grad[2] += np.sum(h_t)
            grad[3] += np.sum(h_t * s_t * z_t)
            grad[4:4 + n] += h_a * s_a
            grad[4 + n:] += h_t * s_t
        return lp, grad

    def hyper(self, theta) -> GroupHyper:
        mu_a, ls_a, mu_t, ls_t, _, _ = self.unpack(theta)
        return GroupHyper(float(mu_a), math.exp(ls_a), float(mu_t), math.exp(ls_t))


def _check_dims(latents, data: FitDataset):
    z_a, z_tau = latents
    if len(z_a) != data.n_runs or len(z_tau) != data.n_runs:
        raise ValueError(f"latent length ({len(z_a)}, {len(z_tau)}) does not match {data.n_runs} runs")


def joint_log_posterior(hyper: GroupHyper, latents, data: FitDataset, jacobian: bool = True) -> float:
    """Joint log density; ``latents`` is ``(z_a, z_tau)``.

    With ``jacobian=True`` the density is that of (log sigma_a, log sigma_tau),
    i.e. the target the sampler sees.
    """
    _check_dims(latents, data)
    model = HierarchicalRW(data)
    theta = model.pack(hyper, *latents)
    lp = model.log_prob(theta)
    if not jacobian:
        lp -= theta[1] + theta[3]
    return lp


def grad_joint_log_posterior(hyper: GroupHyper, latents, data: FitDataset) -> np.ndarray:
    """Gradient w.r.t. ``[mu_a, log sigma_a, mu_tau, log sigma_tau, z_a..., z_tau...]``."""
    _check_dims(latents, data)
    model = HierarchicalRW(data)
    return model.log_prob_grad(model.pack(hyper, *latents))[1]


@dataclass
class SimulatedRun:
    choices: np.ndarray
    rewards: np.ndarray
    valid: np.ndarray
    params: RWParams
    seed: Optional[int] = None


def _uniforms(seed: int, n_trials: int):
    return (
        make_generator(derive_seed(seed, "agent")).random(n_trials),
        make_generator(derive_seed(seed, "env")).random(n_trials),
    )


def simulate_batch(a, tau, structure: RewardStructure, n_trials: int, seeds, prime_x: bool = False):
    """Simulate one run per (a[i], tau[i], seeds[i]); returns (choices, rewards)."""
    a = np.asarray(a, dtype=float)
    tau = np.asarray(tau, dtype=float)
    choice_u = np.empty((len(seeds), n_trials))
    reward_u = np.empty((len(seeds), n_trials))
    for i, s in enumerate(seeds):
        choice_u[i], reward_u[i] = _uniforms(s, n_trials)
    return _kernels.simulate(a, tau, structure.p_x, structure.p_y, choice_u, reward_u, prime_x)


def simulate_run(params: RWParams, structure: RewardStructure, n_trials: int, seed: int,
                 prime_x: bool = False) -> SimulatedRun:
    """Generative RW/softmax run.

    Consumes the same streams as an :class:`~banditprobe.agents.RWAgent` playing
    a :class:`~banditprobe.bandit.BanditEnv` seeded via
    ``derive_seed(seed, "agent")`` / ``derive_seed(seed, "env")``.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    c, r = simulate_batch([params.a], [params.tau], structure, n_trials, [seed], prime_x)
    return SimulatedRun(c[0], r[0], np.ones(n_trials, dtype=bool), params, seed)
