"""Hamiltonian Monte Carlo with a diagonal metric.

The default transition is multinomial NUTS with the generalised no-U-turn
criterion; a fixed number of leapfrog steps can be requested instead. Warmup
follows the usual three-phase schedule: a fast step-size-only buffer, a run
of doubling slow windows that re-estimate the diagonal metric, and a final
fast buffer. Step size is tuned by dual averaging toward ``target_accept``.

The model is any object with ``dim`` and ``log_prob_grad(theta) -> (lp, grad)``.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..rng import derive_seed, make_generator

logger = logging.getLogger(__name__)

MAX_DELTA_H = 1000.0
MAX_INIT_TRIES = 10
INIT_RADIUS = 0.1
STATIC_JITTER = 0.2


class FitQualityError(RuntimeError):
    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 4
    n_warmup: int = 1000
    n_samples: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    n_leapfrog: Optional[int] = None
    master_seed: int = 0
    max_divergence_rate: float = 0.10
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if self.n_warmup < 0 or self.n_samples < 1:
            raise ValueError("need n_warmup >= 0 and n_samples >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be >= 1")
        if self.n_leapfrog is not None and self.n_leapfrog < 1:
            raise ValueError("n_leapfrog must be >= 1")


@dataclass
class Fit:
    """Post-warmup draws, shaped (n_chains, n_samples, dim), plus per-draw stats."""

    draws: np.ndarray
    accept_stat: np.ndarray
    divergent: np.ndarray
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    step_size: np.ndarray
    inv_metric: np.ndarray
    param_names: list = field(default_factory=list)
    warmup_divergences: np.ndarray = None

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_samples(self) -> int:
        return self.draws.shape[1]

    @property
    def divergence_rate(self) -> float:
        return float(np.mean(self.divergent))

    def flat(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[-1])


class _DualAveraging:
    def __init__(self, step_size: float, target: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.target = target
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(step_size)

    def restart(self, step_size: float):
        self.mu = math.log(10.0 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = x_eta * x + (1.0 - x_eta) * self.x_bar
        return math.exp(x)

    @property
    def final(self) -> float:
        return math.exp(self.x_bar)


def _windows(n_warmup: int, init_buffer=75, term_buffer=50, base_window=25):
    """Ends (exclusive) of the slow metric-adaptation windows, plus their starts."""
    if n_warmup < 20:
        return []
    if init_buffer + base_window + term_buffer > n_warmup:
        init_buffer = int(0.15 * n_warmup)
        term_buffer = int(0.1 * n_warmup)
        base_window = n_warmup - init_buffer - term_buffer
    out = []
    start = init_buffer
    size = base_window
    last = n_warmup - term_buffer
    while start < last:
        end = start + size
        # fold a too-short remainder into the current window
        if end + 2 * size > last:
            end = last
        out.append((start, end))
        start = end
        size *= 2
    return out


class _Chain:
    def __init__(self, model, config: SamplerConfig, seed: int):
        self.model = model
        self.config = config
        self.rng = make_generator(seed)
        self.dim = model.dim
        self.inv_metric = np.ones(self.dim)

    # -- primitives -------------------------------------------------------
    def _kinetic(self, p):
        return 0.5 * float(np.dot(p, self.inv_metric * p))

    def _momentum(self):
        return self.rng.standard_normal(self.dim) / np.sqrt(self.inv_metric)

    def _leapfrog(self, q, p, g, eps):
        p = p + 0.5 * eps * g
        q = q + eps * self.inv_metric * p
        lp, g = self.model.log_prob_grad(q)
        p = p + 0.5 * eps * g
        return q, p, g, lp

    def _init(self):
        for _ in range(MAX_INIT_TRIES):
            q = self.rng.uniform(-INIT_RADIUS, INIT_RADIUS, self.dim)
            lp, g = self.model.log_prob_grad(q)
            if math.isfinite(lp) and np.all(np.isfinite(g)):
                return q, lp, g
        raise FitQualityError(f"no finite initial point after {MAX_INIT_TRIES} jittered tries")

    def _find_step_size(self, q, lp, g, eps):
        p = self._momentum()
        h0 = -lp + self._kinetic(p)
        _, p1, _, lp1 = self._leapfrog(q, p, g, eps)
        h = -lp1 + self._kinetic(p1)
        if not math.isfinite(h):
            h = math.inf
        direction = 1 if h0 - h > math.log(0.8) else -1
        for _ in range(100):
            p = self._momentum()
            h0 = -lp + self._kinetic(p)
            _, p1, _, lp1 = self._leapfrog(q, p, g, eps)
            h = -lp1 + self._kinetic(p1)
            if not math.isfinite(h):
                h = math.inf
            delta = h0 - h
            if direction == 1 and not delta > math.log(0.8):
                break
            if direction == -1 and not delta < math.log(0.8):
                break
            eps = eps * 2.0 if direction == 1 else eps * 0.5
            if eps > 1e7 or eps < 1e-12:
                break
        return eps

    # -- static HMC -------------------------------------------------------
    def _hmc(self, q, lp, g, eps, n_steps):
        # a jittered step breaks the periodic orbits fixed-length trajectories fall into
        eps = eps * (1.0 + STATIC_JITTER * (2.0 * self.rng.random() - 1.0))
        p0 = self._momentum()
        h0 = -lp + self._kinetic(p0)
        q1, p1, g1, lp1 = q, p0, g, lp
        divergent = False
        for _ in range(n_steps):
            q1, p1, g1, lp1 = self._leapfrog(q1, p1, g1, eps)
            h = -lp1 + self._kinetic(p1)
            if not math.isfinite(h) or h - h0 > MAX_DELTA_H:
                divergent = True
                break
        if divergent:
            return q, lp, g, 0.0, True, 0, n_steps
        accept = min(1.0, math.exp(min(0.0, h0 - h)))
        if self.rng.random() < accept:
            return q1, lp1, g1, accept, False, 0, n_steps
        return q, lp, g, accept, False, 0, n_steps

    # -- NUTS -------------------------------------------------------------
    def _leaf(self, q, p, g, eps, h0):
        q, p, g, lp = self._leapfrog(q, p, g, eps)
        h = -lp + self._kinetic(p)
        delta = h - h0
        if not math.isfinite(delta):
            delta = math.inf
        ps = self.inv_metric * p
        return {
            "q_l": q, "p_l": p, "g_l": g, "ps_l": ps,
            "q_r": q, "p_r": p, "g_r": g, "ps_r": ps,
            "rho": p.copy(),
            "q_prop": q, "lp_prop": lp, "g_prop": g,
            "log_w": -delta,
            "n": 1,
            "sum_acc": math.exp(-delta) if delta > 0 else 1.0,
            "divergent": delta > MAX_DELTA_H,
            "turning": False,
        }

    @staticmethod
    def _no_u_turn(left, right) -> bool:
        def ok(ps_a, ps_b, rho):
            return float(np.dot(ps_a, rho)) > 0 and float(np.dot(ps_b, rho)) > 0

        rho = left["rho"] + right["rho"]
        return (
            ok(left["ps_l"], right["ps_r"], rho)
            and ok(left["ps_l"], right["ps_l"], left["rho"] + right["p_l"])
            and ok(left["ps_r"], right["ps_r"], right["rho"] + left["p_r"])
        )

    @staticmethod
    def _join(left, right, proposal_from, log_w):
        return {
            "q_l": left["q_l"], "p_l": left["p_l"], "g_l": left["g_l"], "ps_l": left["ps_l"],
            "q_r": right["q_r"], "p_r": right["p_r"], "g_r": right["g_r"], "ps_r": right["ps_r"],
            "rho": left["rho"] + right["rho"],
            "q_prop": proposal_from["q_prop"], "lp_prop": proposal_from["lp_prop"], "g_prop": proposal_from["g_prop"],
            "log_w": log_w,
            "n": left["n"] + right["n"],
            "sum_acc": left["sum_acc"] + right["sum_acc"],
            "divergent": False,
            "turning": False,
        }

    def _build(self, q, p, g, direction, depth, eps, h0):
        if depth == 0:
            return self._leaf(q, p, g, direction * eps, h0)
        first = self._build(q, p, g, direction, depth - 1, eps, h0)
        if first["divergent"] or first["turning"]:
            return first
        if direction > 0:
            second = self._build(first["q_r"], first["p_r"], first["g_r"], direction, depth - 1, eps, h0)
        else:
            second = self._build(first["q_l"], first["p_l"], first["g_l"], direction, depth - 1, eps, h0)
        if second["divergent"] or second["turning"]:
            second = dict(second)
            second["n"] += first["n"]
            second["sum_acc"] += first["sum_acc"]
            return second
        log_w = np.logaddexp(first["log_w"], second["log_w"])
        take_second = math.log(self.rng.random()) < second["log_w"] - log_w
        left, right = (first, second) if direction > 0 else (second, first)
        tree = self._join(left, right, second if take_second else first, log_w)
        tree["turning"] = not self._no_u_turn(left, right)
        return tree

    def _nuts(self, q, lp, g, eps):
        p0 = self._momentum()
        h0 = -lp + self._kinetic(p0)
        ps0 = self.inv_metric * p0
        tree = {
            "q_l": q, "p_l": p0, "g_l": g, "ps_l": ps0,
            "q_r": q, "p_r": p0, "g_r": g, "ps_r": ps0,
            "rho": p0.copy(), "q_prop": q, "lp_prop": lp, "g_prop": g,
            "log_w": 0.0, "n": 0, "sum_acc": 0.0,
        }
        n_leapfrog = 0
        sum_acc = 0.0
        divergent = False
        depth = 0
        while depth < self.config.max_tree_depth:
            direction = 1 if self.rng.random() > 0.5 else -1
            if direction > 0:
                sub = self._build(tree["q_r"], tree["p_r"], tree["g_r"], 1, depth, eps, h0)
            else:
                sub = self._build(tree["q_l"], tree["p_l"], tree["g_l"], -1, depth, eps, h0)
            n_leapfrog += sub["n"]
            sum_acc += sub["sum_acc"]
            if sub["divergent"]:
                divergent = True
                break
            if sub["turning"]:
                break
            depth += 1
            # biased progressive sampling favours the newer subtree
            if sub["log_w"] > tree["log_w"] or math.log(self.rng.random()) < sub["log_w"] - tree["log_w"]:
                proposal = sub
            else:
                proposal = tree
            log_w = np.logaddexp(tree["log_w"], sub["log_w"])
            left, right = (tree, sub) if direction > 0 else (sub, tree)
            merged = self._join(left, right, proposal, log_w)
            turning = not self._no_u_turn(left, right)
            tree = merged
            if turning:
                break
        accept = sum_acc / max(1, n_leapfrog)
        return tree["q_prop"], tree["lp_prop"], tree["g_prop"], accept, divergent, depth, n_leapfrog

    # -- driver -----------------------------------------------------------
    def run(self):
        cfg = self.config
        q, lp, g = self._init()
        eps = self._find_step_size(q, lp, g, 1.0)
        da = _DualAveraging(eps, cfg.target_accept)
        windows = _windows(cfg.n_warmup)
        window_ends = {end: start for start, end in windows}
        window_samples = []
        in_window = set()
        for start, end in windows:
            in_window.update(range(start, end))

        def transition(q, lp, g, eps):
            if cfg.n_leapfrog is not None:
                return self._hmc(q, lp, g, eps, cfg.n_leapfrog)
            return self._nuts(q, lp, g, eps)

        warm_div = 0
        for it in range(cfg.n_warmup):
            q, lp, g, acc, div, _, _ = transition(q, lp, g, eps)
            warm_div += div
            eps = da.update(acc)
            if it in in_window:
                window_samples.append(q)
            if it + 1 in window_ends:
                x = np.asarray(window_samples)
                n = len(x)
                var = np.var(x, axis=0, ddof=1) if n > 1 else np.ones(self.dim)
                self.inv_metric = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                window_samples = []
                eps = self._find_step_size(q, lp, g, eps)
                da.restart(eps)
        if cfg.n_warmup > 0:
            eps = da.final

        n = cfg.n_samples
        draws = np.empty((n, self.dim))
        accept = np.empty(n)
        divergent = np.zeros(n, dtype=bool)
        depth = np.zeros(n, dtype=int)
        n_leap = np.zeros(n, dtype=int)
        for i in range(n):
            q, lp, g, accept[i], divergent[i], depth[i], n_leap[i] = transition(q, lp, g, eps)
            draws[i] = q
        return draws, accept, divergent, depth, n_leap, eps, self.inv_metric.copy(), warm_div


def _run_chain(args):
    model, config, seed = args
    return _Chain(model, config, seed).run()


def sample(model, config: SamplerConfig = SamplerConfig(), check: bool = True) -> Fit:
    """Draw ``n_chains x n_samples`` posterior samples on the unconstrained space.

    Chains differ only in seed, ``derive_seed(master_seed, "chain", c)``. With
    ``check=True`` a post-warmup divergence rate above
    ``config.max_divergence_rate`` raises :class:`FitQualityError` carrying the fit.
    """
    jobs = [(model, config, derive_seed(config.master_seed, "chain", c)) for c in range(config.n_chains)]
    if config.n_jobs > 1 and config.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(config.n_jobs, config.n_chains)) as pool:
            results = list(pool.map(_run_chain, jobs))
    else:
        results = [_run_chain(j) for j in jobs]
    fit = Fit(
        draws=np.stack([r[0] for r in results]),
        accept_stat=np.stack([r[1] for r in results]),
        divergent=np.stack([r[2] for r in results]),
        tree_depth=np.stack([r[3] for r in results]),
        n_leapfrog=np.stack([r[4] for r in results]),
        step_size=np.array([r[5] for r in results]),
        inv_metric=np.stack([r[6] for r in results]),
        param_names=list(getattr(model, "param_names", [f"theta[{i}]" for i in range(model.dim)])),
        warmup_divergences=np.array([r[7] for r in results]),
    )
    rate = fit.divergence_rate
    if rate > 0:
        logger.warning("%.1f%% of post-warmup transitions diverged", 100 * rate)
    if check and rate > config.max_divergence_rate:
        raise FitQualityError(
            f"divergence rate {rate:.3f} exceeds {config.max_divergence_rate:.3f}", fit=fit
        )
    return fit
