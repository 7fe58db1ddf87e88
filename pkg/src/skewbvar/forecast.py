"""Predictive simulation and the recursive pseudo-real-time backtest."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .model import H_LIMIT, Dataset, ModelSpec, ParameterDraw, StatePath, Variant
from .rv import RngHandle

log = logging.getLogger(__name__)

MAX_REJECT_SHARE = 0.10
MAX_FAILED_ORIGINS = 0.05


class ClampBreachError(RuntimeError):
    pass


class BacktestError(RuntimeError):
    pass


@dataclass
class PredictiveDraws:
    """Predictive draws for one origin.

    ``draws`` has shape (H, n_sim, N); ``draws[h - 1]`` holds the horizon-h matrix.
    """

    origin: str
    draws: np.ndarray
    labels: tuple
    transforms: tuple = ()
    n_rejected: int = 0

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 3:
            raise ValueError(f"draws must be (H, n_sim, N), got shape {self.draws.shape}")
        if not np.all(np.isfinite(self.draws)):
            raise ValueError(f"non-finite predictive draws at origin {self.origin}")
        if not self.transforms:
            self.transforms = ("level",) * self.draws.shape[2]

    @property
    def H(self) -> int:
        return self.draws.shape[0]

    @property
    def n_sim(self) -> int:
        return self.draws.shape[1]

    def at(self, h: int) -> np.ndarray:
        return self.draws[h - 1]


# ---------------------------------------------------------------------------
# path simulation
# ---------------------------------------------------------------------------


@dataclass
class Innovations:
    """Standard-normal inputs for ``n`` paths of length ``H``.

    ``eta`` drives the states (K), ``theta`` the skew component and ``eps`` the
    Gaussian part of the structural innovation (both N).
    """

    eta: np.ndarray
    theta: np.ndarray
    eps: np.ndarray

    @classmethod
    def draw(cls, n: int, H: int, K: int, N: int, rng: RngHandle) -> "Innovations":
        return cls(rng.normal((n, H, K)), rng.normal((n, H, N)), rng.normal((n, H, N)))

    @classmethod
    def zeros(cls, n: int, H: int, K: int, N: int) -> "Innovations":
        return cls(np.zeros((n, H, K)), np.zeros((n, H, N)), np.zeros((n, H, N)))

    def take(self, idx) -> "Innovations":
        return Innovations(self.eta[idx], self.theta[idx], self.eps[idx])


def history_lags(spec: ModelSpec) -> tuple[int, int]:
    """Number of past data rows and past state rows the recursion needs."""
    return max(spec.p_obs_lags, spec.n_y_lags_in_transition, 1), spec.l_inmean_lags


def cov_factor(cov: np.ndarray) -> np.ndarray:
    """Cholesky factor, falling back to a symmetric root for singular (e.g. zero) covariances."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(cov)
        return V * np.sqrt(np.clip(w, 0.0, None))


def simulate_paths(spec: ModelSpec, params: ParameterDraw, y_hist: np.ndarray, beta_hist: np.ndarray,
                   innov: Innovations, eta0_shift: np.ndarray | None = None):
    """Run the generative recursion forward from fixed histories.

    Parameters
    ----------
    y_hist : (n_y, N) array
        Most recent data rows, oldest first.
    beta_hist : (L, K) array
        Most recent states, oldest first.
    innov : Innovations
        Standard-normal inputs of shape (n, H, .).
    eta0_shift : (K,) array, optional
        Added to the first-step state innovation (after scaling by chol(Q)).

    Returns
    -------
    y, beta, theta : arrays of shape (n, H, N), (n, H, K), (n, H, N)
    """
    n, H, K = innov.eta.shape
    N = spec.n_vars
    P, L = spec.p_obs_lags, spec.l_inmean_lags
    Qy = spec.n_y_lags_in_transition
    ny = y_hist.shape[0]
    ybuf = np.empty((n, ny + H, N))
    ybuf[:, :ny] = y_hist
    bbuf = np.empty((n, L + H, K))
    bbuf[:, :L] = beta_hist
    cholQ = cov_factor(params.qcov)
    Ainv = params.A_inv
    skew = spec.variant.has_skew
    for s in range(H):
        ty, tb = ny + s, L + s
        eta = innov.eta[:, s] @ cholQ.T
        if s == 0 and eta0_shift is not None:
            eta = eta + eta0_shift
        beta = params.alpha + bbuf[:, tb - 1] @ params.theta.T + eta
        for j in range(Qy):
            beta += ybuf[:, ty - j - 1] @ params.dy[j].T
        bbuf[:, tb] = beta
        h = beta[:, :N]
        mean = params.c + np.zeros((n, N))
        for j in range(P):
            mean += ybuf[:, ty - j - 1] @ params.B[j].T
        for l in range(L):
            mean += bbuf[:, tb - l - 1, :N] @ params.b[l].T
            if skew:
                mean += bbuf[:, tb - l - 1, N:] @ params.a[l].T
        E = np.exp(0.5 * np.clip(h, -H_LIMIT, H_LIMIT)) * innov.eps[:, s]
        if skew:
            E = E + beta[:, N:] * np.abs(innov.theta[:, s])
        ybuf[:, ty] = mean + E @ Ainv.T
    return ybuf[:, ny:], bbuf[:, L:], innov.theta


def breached(beta: np.ndarray, N: int) -> np.ndarray:
    """Paths whose log-variance leaves the clamp range at any step."""
    return np.any(np.abs(beta[:, :, :N]) > H_LIMIT, axis=(1, 2)) | ~np.all(np.isfinite(beta), axis=(1, 2))


def state_histories(spec: ModelSpec, y: np.ndarray, states: StatePath, row: int):
    ny, L = history_lags(spec)
    if row + 1 < ny:
        raise ValueError(f"origin row {row} leaves fewer than {ny} data lags")
    beta = states.beta(spec)
    return y[row + 1 - ny: row + 1], beta[row + 1 - L: row + 1]


def simulate_draw(spec: ModelSpec, params: ParameterDraw, y: np.ndarray, states: StatePath, row: int,
                  H: int, n_paths: int, rng: RngHandle, max_rounds: int = 50):
    """Forecast paths from one posterior draw; breached paths are redrawn.

    Returns ``(y_paths, beta_paths, n_rejected)``.
    """
    y_hist, b_hist = state_histories(spec, y, states, row)
    K, N = spec.n_states, spec.n_vars
    innov = Innovations.draw(n_paths, H, K, N, rng.child(0))
    yp, bp, _ = simulate_paths(spec, params, y_hist, b_hist, innov)
    bad = breached(bp, N)
    rejected = int(bad.sum())
    rounds = 0
    while bad.any():
        rounds += 1
        if rounds > max_rounds:
            raise ClampBreachError(f"forecast paths still breach |h| <= {H_LIMIT} after {max_rounds} redraws")
        idx = np.flatnonzero(bad)
        redo = Innovations.draw(len(idx), H, K, N, rng.child(rounds))
        yr, br, _ = simulate_paths(spec, params, y_hist, b_hist, redo)
        yp[idx], bp[idx] = yr, br
        bad = np.zeros(n_paths, dtype=bool)
        bad[idx] = breached(br, N)
        rejected += int(bad.sum())
    return yp, bp, rejected


def simulate_forecast(chain, dataset: Dataset, origin, H: int = 8, paths_per_draw: int = 5,
                      rng: RngHandle | None = None) -> PredictiveDraws:
    """Predictive draws for horizons 1..H from every retained posterior draw.

    ``origin`` is a row index or a date label of ``dataset``; the chain's state
    paths must cover that row.
    """
    rng = rng or RngHandle(0)
    row = origin_row(dataset, origin)
    spec = chain.spec
    if len(chain) == 0:
        raise ValueError("chain holds no draws")
    out = np.empty((H, len(chain) * paths_per_draw, spec.n_vars))
    total_rejected = 0
    for i, (params, states) in enumerate(zip(chain.params, chain.states)):
        if states.T <= row:
            raise ValueError(f"state path of length {states.T} does not reach origin row {row}")
        yp, _, rej = simulate_draw(spec, params, dataset.y, states, row, H, paths_per_draw, rng.child(i))
        total_rejected += rej
        out[:, i * paths_per_draw:(i + 1) * paths_per_draw] = yp.transpose(1, 0, 2)
    if total_rejected > MAX_REJECT_SHARE * out.shape[1]:
        raise ClampBreachError(f"{total_rejected} forecast paths breached |h| <= {H_LIMIT} "
                               f"({out.shape[1]} kept)")
    if total_rejected:
        log.info("origin %s: %d forecast paths redrawn", dataset.dates[row], total_rejected)
    return PredictiveDraws(dataset.dates[row], out, dataset.labels, n_rejected=total_rejected)


def cumulate_growth(pred: PredictiveDraws, mask) -> PredictiveDraws:
    """Replace masked variables by their running sum over horizons 1..h."""
    mask = np.asarray(mask, dtype=bool)
    draws = pred.draws.copy()
    draws[:, :, mask] = np.cumsum(pred.draws[:, :, mask], axis=0)
    tags = tuple("cumulative" if m else t for m, t in zip(mask, pred.transforms))
    return PredictiveDraws(pred.origin, draws, pred.labels, tags, pred.n_rejected)


def realized_targets(dataset: Dataset, row: int, H: int, mask) -> np.ndarray:
    """Outcomes matching :func:`cumulate_growth`; NaN beyond the sample. Shape (H, N)."""
    mask = np.asarray(mask, dtype=bool)
    out = np.full((H, dataset.N), np.nan)
    future = dataset.y[row + 1: row + 1 + H]
    out[:len(future)] = future
    out[:, mask] = np.cumsum(out[:, mask], axis=0)
    return out


def origin_row(dataset: Dataset, origin) -> int:
    if isinstance(origin, (int, np.integer)):
        row = int(origin)
    else:
        try:
            row = dataset.dates.index(str(origin))
        except ValueError:
            raise ValueError(f"origin {origin!r} is not a date of the dataset") from None
    if not 0 <= row < dataset.T:
        raise ValueError(f"origin row {row} outside the dataset")
    return row


# ---------------------------------------------------------------------------
# backtest
# ---------------------------------------------------------------------------


@dataclass
class BacktestPlan:
    first_origin: str
    last_origin: str
    H: int = 8
    variants: tuple = (Variant.FULL, Variant.RESTRICTED, Variant.SV_ONLY)
    paths_per_draw: int = 5
    cumulate: tuple = ()

    def __post_init__(self):
        self.variants = tuple(Variant.parse(v) for v in self.variants)
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if not self.variants:
            raise ValueError("at least one variant is required")

    def origin_rows(self, dataset: Dataset) -> list[int]:
        lo, hi = origin_row(dataset, self.first_origin), origin_row(dataset, self.last_origin)
        if hi < lo:
            raise ValueError("last origin precedes first origin")
        return list(range(lo, hi + 1))


def quarterly_origins(first: str, last: str) -> list[str]:
    """Calendar of quarterly origin labels such as ``1975Q2``, inclusive."""
    return [str(p) for p in pd.period_range(pd.Period(first, "Q"), pd.Period(last, "Q"), freq="Q")]


def archive_path(root, variant, origin: str, h: int) -> Path:
    return Path(root) / Variant.parse(variant).value / str(origin) / f"h{h}.csv"


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_predictive(root, variant, pred: PredictiveDraws) -> None:
    for h in range(1, pred.H + 1):
        frame = pd.DataFrame(pred.at(h), columns=list(pred.labels))
        _atomic_write(archive_path(root, variant, pred.origin, h), frame.to_csv(index=False, float_format="%.17g"))


def read_predictive(root, variant, origin: str, H: int | None = None) -> PredictiveDraws:
    base = Path(root) / Variant.parse(variant).value / str(origin)
    if H is None:
        H = len(list(base.glob("h*.csv")))
        if H == 0:
            raise FileNotFoundError(f"no archived draws under {base}")
    mats, labels = [], ()
    for h in range(1, H + 1):
        frame = pd.read_csv(base / f"h{h}.csv", float_precision="round_trip")
        labels = tuple(frame.columns)
        mats.append(frame.to_numpy(dtype=float))
    return PredictiveDraws(str(origin), np.stack(mats), labels)


def dataset_hash(dataset: Dataset) -> str:
    h = hashlib.sha256(np.ascontiguousarray(dataset.y).tobytes())
    h.update(json.dumps([list(dataset.labels), list(dataset.dates)]).encode())
    return h.hexdigest()


def spec_hash(spec: ModelSpec, extra: dict | None = None) -> str:
    payload = {"spec": spec.to_dict(), "extra": extra or {}}
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()


@dataclass
class _Task:
    spec: ModelSpec
    dataset: Dataset
    row: int
    seed: int
    settings: object
    plan: BacktestPlan
    out: str
    mask: tuple = field(default_factory=tuple)


def _run_origin(task: _Task) -> dict:
    from .sampler import estimate

    spec, row = task.spec, task.row
    origin = task.dataset.dates[row]
    rng = RngHandle(task.seed, (row,))
    try:
        sample = task.dataset.head(row + 1)
        chain = estimate(spec, sample, rng.child(0), task.settings)
        pred = simulate_forecast(chain, sample, row, task.plan.H, task.plan.paths_per_draw, rng.child(1))
        if task.mask and any(task.mask):
            pred = cumulate_growth(pred, task.mask)
        write_predictive(task.out, spec.variant, pred)
        return {"status": "ok", "n_sim": pred.n_sim, "n_rejected": pred.n_rejected}
    except Exception as exc:  # recorded per origin, summarized by the caller
        log.warning("origin %s (%s) failed: %s", origin, spec.variant.value, exc)
        return {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}


def load_manifest(out) -> dict:
    path = Path(out) / "manifest.json"
    if path.exists():
        return json.loads(path.read_text())
    return {}


def _entry_complete(out, variant: Variant, origin: str, H: int, entry: dict | None) -> bool:
    if not entry or entry.get("status") != "ok":
        return False
    return all(archive_path(out, variant, origin, h).exists() for h in range(1, H + 1))


def run_backtest(plan: BacktestPlan, dataset: Dataset, spec: ModelSpec, out, seed: int = 0,
                 settings=None, workers: int = 1) -> dict:
    """Re-estimate and forecast at every origin of ``plan`` for every variant.

    Results go to ``<out>/<variant>/<origin>/h<h>.csv``; ``<out>/manifest.json``
    records seeds, hashes and per-entry status. Entries already marked complete
    are skipped, so an interrupted run can be resumed.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rows = plan.origin_rows(dataset)
    mask = tuple(bool(m) for m in plan.cumulate) if plan.cumulate else ()
    manifest = load_manifest(out)
    manifest.update({
        "seed": int(seed),
        "data_hash": dataset_hash(dataset),
        "spec_hash": spec_hash(spec, {"H": plan.H, "paths_per_draw": plan.paths_per_draw}),
        "spec": spec.to_dict(),
        "H": plan.H,
        "labels": list(dataset.labels),
        "origins": [dataset.dates[r] for r in rows],
    })
    entries = manifest.setdefault("entries", {})
    tasks, keys = [], []
    for variant in plan.variants:
        vspec = spec.with_variant(variant)
        for row in rows:
            origin = dataset.dates[row]
            key = f"{variant.value}/{origin}"
            if _entry_complete(out, variant, origin, plan.H, entries.get(key)):
                continue
            tasks.append(_Task(vspec, dataset, row, int(seed), settings, plan, str(out), mask))
            keys.append(key)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_origin, tasks))
    else:
        results = [_run_origin(t) for t in tasks]
    for key, res in zip(keys, results):
        entries[key] = res
    manifest["entries"] = dict(sorted(entries.items()))
    _atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
    n_total = len(rows) * len(plan.variants)
    failed = sorted(k for k, v in entries.items() if v.get("status") != "ok")
    if failed and len(failed) > MAX_FAILED_ORIGINS * n_total:
        raise BacktestError(f"{len(failed)} of {n_total} backtest entries failed: {failed[:5]}")
    return manifest
