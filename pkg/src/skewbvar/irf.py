"""Generalized impulse responses to volatility and skewness shocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .forecast import Innovations, state_histories, simulate_paths
from .model import Dataset, ModelSpec, Variant
from .rv import RngHandle


@dataclass
class GirfResult:
    """Posterior draws of the responses.

    ``y`` has shape (n_draws, H, N) and ``beta`` (n_draws, H, K); horizon 0 is the
    period of the shock.
    """

    y: np.ndarray
    beta: np.ndarray
    labels: tuple
    shock: str

    def bands(self, which: str = "y") -> dict:
        arr = getattr(self, which)
        return {
            "median": np.median(arr, axis=0),
            "p16": np.percentile(arr, 16, axis=0),
            "p84": np.percentile(arr, 84, axis=0),
        }

    def to_frame(self) -> pd.DataFrame:
        b = self.bands("y")
        H = self.y.shape[1]
        cols = {"horizon": np.arange(H)}
        for n, label in enumerate(self.labels):
            for k in ("median", "p16", "p84"):
                cols[f"{label}_{k}"] = b[k][:, n]
        return pd.DataFrame(cols)


def state_names(spec: ModelSpec, labels) -> list[str]:
    names = [f"h:{lab}" for lab in labels]
    if spec.variant is not Variant.SV_ONLY:
        names += [f"d:{lab}" for lab in labels]
    return names


def shock_index(spec: ModelSpec, labels, shock) -> int:
    """Resolve a shock given as an index or a name such as ``h:y1`` / ``d:y1``."""
    names = state_names(spec, labels)
    if isinstance(shock, (int, np.integer)):
        k = int(shock)
    elif str(shock) in names:
        k = names.index(str(shock))
    elif str(shock).startswith("d:") and spec.variant is Variant.SV_ONLY:
        raise ValueError("the SV-only model has no skewness shocks")
    else:
        raise ValueError(f"unknown shock {shock!r}; choose from {names}")
    if not 0 <= k < spec.n_states:
        if spec.variant is Variant.SV_ONLY and spec.n_vars <= k < 2 * spec.n_vars:
            raise ValueError("the SV-only model has no skewness shocks")
        raise ValueError(f"shock index {k} outside 0..{spec.n_states - 1}")
    return k


def paired_responses(spec: ModelSpec, params, y: np.ndarray, states, row: int, k: int,
                     size: float, H: int, n_rep: int, rng: RngHandle):
    """Mean shocked-minus-baseline paths for one posterior draw (common random numbers)."""
    y_hist, b_hist = state_histories(spec, y, states, row)
    innov = Innovations.draw(n_rep, H, spec.n_states, spec.n_vars, rng)
    shift = size * np.linalg.cholesky(params.qcov)[:, k]
    y0, b0, _ = simulate_paths(spec, params, y_hist, b_hist, innov)
    y1, b1, _ = simulate_paths(spec, params, y_hist, b_hist, innov, eta0_shift=shift)
    return (y1 - y0).mean(axis=0), (b1 - b0).mean(axis=0)


def girf(chain, dataset: Dataset | None = None, shock=0, shock_size: float = 1.0, H: int = 20,
         n_rep: int = 100, rng: RngHandle | None = None) -> GirfResult:
    """Responses to a ``shock_size`` standard-deviation structural shock to state ``shock``.

    The shock enters the horizon-0 transition innovation through the Cholesky factor
    of Q; baseline and shocked paths share every other random number. The
    conditioning history is the final observation of ``dataset``.
    """
    rng = rng or RngHandle(0)
    dataset = dataset if dataset is not None else chain.dataset
    if dataset is None:
        raise ValueError("a dataset is required")
    spec = chain.spec
    k = shock_index(spec, dataset.labels, shock)
    row = dataset.T - 1
    ys, bs = [], []
    for i, (params, states) in enumerate(zip(chain.params, chain.states)):
        yr, br = paired_responses(spec, params, dataset.y, states, row, k, shock_size, H, n_rep, rng.child(i))
        ys.append(yr)
        bs.append(br)
    return GirfResult(np.array(ys), np.array(bs), dataset.labels, state_names(spec, dataset.labels)[k])
