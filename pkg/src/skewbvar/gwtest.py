"""Unconditional and conditional tests of equal predictive ability.

The p-values are only indicative when the competing models are re-estimated
recursively; the tests treat the loss differentials as given.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy import stats

MIN_LENGTH = 10


def newey_west(Z: np.ndarray, lags: int) -> np.ndarray:
    """Bartlett-kernel HAC covariance of the rows of ``Z`` (demeaned), divided by T."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    T = Z.shape[0]
    U = Z - Z.mean(axis=0)
    S = U.T @ U / T
    for j in range(1, min(lags, T - 1) + 1):
        G = U[j:].T @ U[:-j] / T
        S += (1.0 - j / (lags + 1.0)) * (G + G.T)
    return S


def _check(diff, min_length: int) -> np.ndarray:
    d = np.asarray(diff, dtype=float).ravel()
    if not np.all(np.isfinite(d)):
        raise ValueError("loss differentials must be finite")
    if d.size < 2:
        raise ValueError("need at least 2 loss differentials")
    if d.size < min_length:
        warnings.warn(f"only {d.size} loss differentials; asymptotic p-values are unreliable",
                      RuntimeWarning, stacklevel=3)
    return d


def gw_unconditional(diff, h: int = 1) -> tuple[float, float]:
    """t-type statistic on the mean loss differential with h - 1 Newey-West lags.

    Returns ``(statistic, two-sided p-value)``.
    """
    d = _check(diff, MIN_LENGTH)
    if np.all(d == 0):
        return 0.0, 1.0
    var = float(newey_west(d, max(h - 1, 0))[0, 0])
    if not var > 0:
        raise ValueError("zero HAC variance of the loss differential")
    stat = d.mean() / np.sqrt(var / d.size)
    return float(stat), float(2.0 * stats.norm.sf(abs(stat)))


def default_instruments(d: np.ndarray, h: int) -> np.ndarray:
    """Constant and the most recent differential known at the forecast origin."""
    T = d.size
    inst = np.full((T, 2), np.nan)
    inst[:, 0] = 1.0
    inst[h:, 1] = d[:-h]
    return inst


def gw_conditional(diff, h: int = 1, instruments=None) -> tuple[float, float]:
    """Wald statistic ``T_e * Zbar' Omega^{-1} Zbar`` with ``Z_t = instruments_t * diff_t``.

    ``instruments`` is a (T, q) array aligned with ``diff`` (row t must be known
    when the forecast for row t is made). Rows with missing instruments are
    dropped. Returns ``(statistic, p-value)`` from the chi-square with q dof.
    """
    d = _check(diff, MIN_LENGTH)
    inst = default_instruments(d, h) if instruments is None else np.asarray(instruments, dtype=float)
    if inst.ndim == 1:
        inst = inst[:, None]
    if inst.shape[0] != d.size:
        raise ValueError("instruments must have one row per loss differential")
    keep = np.all(np.isfinite(inst), axis=1)
    Z = inst[keep] * d[keep, None]
    q = Z.shape[1]
    if np.all(Z == 0):
        return 0.0, 1.0
    if Z.shape[0] < MIN_LENGTH + q:
        warnings.warn(f"{Z.shape[0]} usable rows for {q} instruments", RuntimeWarning, stacklevel=2)
    Omega = newey_west(Z, max(h - 1, 0))
    zbar = Z.mean(axis=0)
    if np.linalg.cond(Omega) > 1e12:
        raise np.linalg.LinAlgError("singular HAC covariance of the instrumented differentials")
    stat = float(Z.shape[0] * zbar @ np.linalg.solve(Omega, zbar))
    return stat, float(stats.chi2.sf(stat, q))
