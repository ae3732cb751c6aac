"""Rank-normalised split R-hat and bulk effective sample size.

Definitions follow Vehtari, Gelman, Simpson, Carpenter & Buerkner (2021):
chains are split in half, draws are replaced by normal scores of their pooled
ranks, and R-hat is the larger of the bulk and folded (tail) statistics.
ESS sums autocorrelations with Geyer's initial-monotone-sequence truncation.
"""

import math
import warnings

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata


class DegenerateChainWarning(RuntimeWarning):
    pass


def _split(x: np.ndarray) -> np.ndarray:
    """(chains, draws) -> (2*chains, draws//2), dropping the middle draw if odd."""
    n = x.shape[1]
    half = n // 2
    return np.concatenate([x[:, :half], x[:, n - half:]], axis=0)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    r = rankdata(x, method="average").reshape(x.shape)
    return ndtri((r - 3.0 / 8.0) / (x.size + 1.0 / 4.0))


def _rhat_basic(x: np.ndarray) -> float:
    m, n = x.shape
    means = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    var_plus = (n - 1) / n * w + b / n
    return math.sqrt(var_plus / w)


def _is_constant(x: np.ndarray) -> bool:
    return bool(np.all(x == x.flat[0])) or not np.all(np.isfinite(x))


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row via FFT."""
    n = x.shape[-1]
    size = 1 << (2 * n - 1).bit_length()
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, n=size, axis=-1)
    acov = np.fft.irfft(f * np.conjugate(f), n=size, axis=-1)[..., :n]
    return acov / n


def _ess_basic(x: np.ndarray) -> float:
    m, n = x.shape
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1.0)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum consecutive pairs while positive, enforcing monotone decrease
    pair_sums = []
    t = 0
    while t + 1 < n:
        s = rho[t] + rho[t + 1]
        if s <= 0:
            break
        pair_sums.append(s)
        t += 2
    for k in range(1, len(pair_sums)):
        if pair_sums[k] > pair_sums[k - 1]:
            pair_sums[k] = pair_sums[k - 1]
    tau = -1.0 + 2.0 * sum(pair_sums)
    tau = max(tau, 1.0 / math.log10(m * n)) if m * n > 1 else tau
    return m * n / tau


def rhat(chains) -> float:
    """Split R-hat for one scalar: the max of rank-normalised bulk, folded and raw split R-hat.

    ``chains`` is (n_chains, n_draws). Rank normalisation caps the statistic
    for fully separated chains (about 1.8 for two chains), so the raw split
    R-hat is included to keep gross non-convergence visible. Constant chains
    give NaN with a warning.
    """
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 4:
        raise ValueError(f"need (chains, draws>=4), got shape {x.shape}")
    if _is_constant(x):
        warnings.warn("constant or non-finite chain: R-hat undefined", DegenerateChainWarning, stacklevel=2)
        return math.nan
    xs = _split(x)
    bulk = _rhat_basic(_rank_normalize(xs))
    folded = np.abs(xs - np.median(xs))
    tail = _rhat_basic(_rank_normalize(folded)) if not _is_constant(folded) else 1.0
    raw = _rhat_basic(xs) if np.all(xs.var(axis=1) > 0) else bulk
    return max(bulk, tail, raw)


def ess_bulk(chains) -> float:
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[1] < 4:
        raise ValueError(f"need (chains, draws>=4), got shape {x.shape}")
    if _is_constant(x):
        return math.nan
    return _ess_basic(_rank_normalize(_split(x)))


def diagnostics(draws) -> tuple:
    """Per-parameter (rhat, ess_bulk) arrays for draws shaped (chains, draws, dim)."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 2:
        draws = draws[..., None]
    if draws.shape[0] < 2:
        raise ValueError("diagnostics need at least 2 chains")
    dim = draws.shape[-1]
    r = np.empty(dim)
    e = np.empty(dim)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateChainWarning)
        for k in range(dim):
            r[k] = rhat(draws[:, :, k])
            e[k] = ess_bulk(draws[:, :, k])
    if caught:
        warnings.warn(f"{len(caught)} parameter(s) had constant chains", DegenerateChainWarning, stacklevel=2)
    return r, e
