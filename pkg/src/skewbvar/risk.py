"""Tail-risk measures from one-step-ahead predictive distributions."""

from __future__ import annotations

import numpy as np
import pandas as pd

from .model import H_LIMIT, Dataset, ModelSpec, ParameterDraw, StatePath
from .rv import RngHandle

ANNUALIZE_QUARTERLY = 4.0


def one_step_draws(spec: ModelSpec, params: ParameterDraw, y: np.ndarray, states: StatePath,
                   n_paths: int, rng: RngHandle) -> np.ndarray:
    """Draws of Y_t given data and states through t - 1, for every row at once.

    Returns an array of shape (T, n_paths, N); rows before ``first_row`` are NaN.
    """
    T, N = y.shape
    t0 = spec.first_row
    rows = np.arange(t0, T)
    n_t = rows.size
    K = spec.n_states
    beta = states.beta(spec)
    g = rng.gen
    z = g.standard_normal((n_t, n_paths, K))
    theta = g.standard_normal((n_t, n_paths, N))
    eps = g.standard_normal((n_t, n_paths, N))

    drift = params.alpha + beta[rows - 1] @ params.theta.T
    for j in range(spec.n_y_lags_in_transition):
        drift += y[rows - j - 1] @ params.dy[j].T
    new_beta = drift[:, None, :] + z @ np.linalg.cholesky(params.qcov).T
    h = np.clip(new_beta[..., :N], -H_LIMIT, H_LIMIT)

    mean = params.c + np.zeros((n_t, N))
    for j in range(spec.p_obs_lags):
        mean += y[rows - j - 1] @ params.B[j].T
    for l in range(spec.l_inmean_lags):
        mean += states.h[rows - l - 1] @ params.b[l].T
        if spec.variant.has_skew:
            mean += states.d[rows - l - 1] @ params.a[l].T
    E = np.exp(0.5 * h) * eps
    if spec.variant.has_skew:
        E = E + new_beta[..., N:] * np.abs(theta)
    out = np.full((T, n_paths, N), np.nan)
    out[t0:] = mean[:, None, :] + E @ params.A_inv.T
    return out


def predictive_sample(chain, dataset: Dataset | None = None, paths_per_draw: int = 10,
                      rng: RngHandle | None = None) -> np.ndarray:
    """Pooled one-step predictive draws over the posterior, shape (T, n_draws * paths, N)."""
    rng = rng or RngHandle(0)
    dataset = dataset if dataset is not None else chain.dataset
    spec = chain.spec
    parts = [one_step_draws(spec, p, dataset.y, s, paths_per_draw, rng.child(i))
             for i, (p, s) in enumerate(zip(chain.params, chain.states))]
    return np.concatenate(parts, axis=1)


def tail_percentiles(chain, dataset: Dataset | None = None, percentiles=(5, 95), paths_per_draw: int = 10,
                     rng: RngHandle | None = None) -> np.ndarray:
    """Empirical percentiles of the one-step predictive at every row, shape (T, N, len(percentiles))."""
    draws = predictive_sample(chain, dataset, paths_per_draw, rng)
    q = np.percentile(draws, list(percentiles), axis=1)  # (p, T, N)
    return np.moveaxis(q, 0, -1)


def exceedance_from_draws(draws, threshold: float, annualize: float = ANNUALIZE_QUARTERLY) -> float:
    x = annualize * np.asarray(draws, dtype=float)
    return float(np.mean(x > threshold))


def exceedance_prob(chain, dataset: Dataset | None, t: int, variable, threshold: float,
                    annualize: float = ANNUALIZE_QUARTERLY, paths_per_draw: int = 10,
                    rng: RngHandle | None = None) -> float:
    """Share of one-step predictive draws for row ``t`` whose annualized value exceeds ``threshold``."""
    dataset = dataset if dataset is not None else chain.dataset
    n = dataset.labels.index(variable) if isinstance(variable, str) else int(variable)
    if t < chain.spec.first_row:
        raise ValueError(f"row {t} precedes the first usable row {chain.spec.first_row}")
    draws = predictive_sample(chain, dataset, paths_per_draw, rng)[t, :, n]
    return exceedance_from_draws(draws, threshold, annualize)


def percentiles_frame(q: np.ndarray, dataset: Dataset, percentiles) -> pd.DataFrame:
    cols = {"date": list(dataset.dates)}
    for n, label in enumerate(dataset.labels):
        for j, p in enumerate(percentiles):
            cols[f"{label}_p{p:g}"] = q[:, n, j]
    return pd.DataFrame(cols)
