"""ICC(3,1) and split-half reliability of per-run parameter estimates."""

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..rw_model import FitDataset
from .sampler import SamplerConfig


class DegenerateICCWarning(RuntimeWarning):
    pass


def icc31(measurements) -> float:
    """Two-way mixed, consistency, single-measure ICC of an (n_subjects, k) matrix.

    ``(MS_rows - MS_error) / (MS_rows + (k - 1) * MS_error)``. Returns NaN (with a
    :class:`DegenerateICCWarning`) when the matrix has no variance at all.
    """
    x = np.asarray(measurements, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D (subjects, measurements) matrix, got shape {x.shape}")
    n, k = x.shape
    if n < 3 or k < 2:
        raise ValueError(f"need at least 3 subjects and 2 measurements, got {n} x {k}")
    if not np.all(np.isfinite(x)):
        raise ValueError("measurements must be finite")
    row_means = x.mean(axis=1)
    col_means = x.mean(axis=0)
    grand = col_means.mean()
    ss_rows = k * float(np.sum((row_means - grand) ** 2))
    resid = x - row_means[:, None] - col_means[None, :] + grand
    ss_err = float(np.sum(resid ** 2))
    ms_rows = ss_rows / (n - 1)
    ms_err = ss_err / ((n - 1) * (k - 1))
    denom = ms_rows + (k - 1) * ms_err
    if denom == 0.0:
        warnings.warn("zero variance across subjects and measurements: ICC undefined", DegenerateICCWarning, stacklevel=2)
        return math.nan
    return (ms_rows - ms_err) / denom


@dataclass
class ReliabilityResult:
    icc_a: float
    icc_tau: float
    n_subjects: int
    k: int = 2
    first_half: Optional[object] = None
    second_half: Optional[object] = None


def split_half_reliability(data: FitDataset, config: SamplerConfig = SamplerConfig(), check: bool = True) -> ReliabilityResult:
    """Fit trials 1..T/2 and T/2+1..T separately and correlate per-run posterior means."""
    from .posterior import fit_rw

    T = data.n_trials
    if T % 2:
        raise ValueError(f"split-half reliability needs an even trial count, got {T}")
    half = T // 2
    first = fit_rw(data.subset_trials(0, half), config, check=check)
    second = fit_rw(data.subset_trials(half, T), config, check=check)
    a1, t1 = first.run_means()
    a2, t2 = second.run_means()
    return ReliabilityResult(
        icc_a=icc31(np.column_stack([a1, a2])),
        icc_tau=icc31(np.column_stack([t1, t2])),
        n_subjects=data.n_runs,
        first_half=first,
        second_half=second,
    )
