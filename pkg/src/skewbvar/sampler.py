"""Gibbs sampler over states, transition coefficients, Q, the rows of A and the VAR coefficients."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import (Dataset, ModelSpec, ParameterDraw, StatePath, Variant, block_mask,
                    obs_design, observation_mean, trans_design)
from .pgas import cpf_as
from .priors import GaussianPrior, IWPrior, Priors
from .rv import RngHandle, draw_inverse_wishart, draw_mvn_precision, safe_cholesky

log = logging.getLogger(__name__)

BLOCKS = ("states", "transition", "qcov", "A", "var_coeffs")


class GibbsError(RuntimeError):
    def __init__(self, sweep: int, block: str, cause: Exception):
        self.sweep = sweep
        self.block = block
        super().__init__(f"sweep {sweep}, block {block!r}: {cause}")


@dataclass
class Chain:
    spec: ModelSpec
    params: list = field(default_factory=list)
    states: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    seed: int | None = None
    dataset: Dataset | None = None

    def __len__(self) -> int:
        return len(self.params)

    def mean_states(self) -> StatePath:
        return StatePath(
            np.mean([s.h for s in self.states], axis=0),
            np.mean([s.d for s in self.states], axis=0),
            np.mean([s.theta_parent for s in self.states], axis=0),
        )

    def stacked(self, name: str) -> np.ndarray:
        """All draws of one parameter or state field, stacked along axis 0."""
        if name in ParameterDraw.__dataclass_fields__:
            return np.stack([getattr(p, name) for p in self.params])
        return np.stack([getattr(s, name) for s in self.states])

    # persistence ---------------------------------------------------------

    def save(self, path) -> tuple[Path, Path]:
        """Write ``<path>.npz`` (draws) and ``<path>.json`` (spec, diagnostics, seed)."""
        path = Path(path)
        if path.suffix in (".npz", ".json"):
            path = path.with_suffix("")
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = {}
        if len(self):
            for name in ParameterDraw.__dataclass_fields__:
                arrays[name] = self.stacked(name)
            for name in ("h", "d", "theta_parent"):
                arrays[f"state_{name}"] = self.stacked(name)
        if self.dataset is not None:
            arrays["data_y"] = self.dataset.y
        npz = path.with_suffix(".npz")
        with open(npz, "wb") as fh:
            np.savez(fh, **arrays)
        meta = {
            "spec": self.spec.to_dict(),
            "seed": self.seed,
            "n_stored": len(self),
            "diagnostics": _jsonable(self.diagnostics),
        }
        if self.dataset is not None:
            meta["labels"] = list(self.dataset.labels)
            meta["dates"] = list(self.dataset.dates)
        side = path.with_suffix(".json")
        side.write_text(json.dumps(meta, indent=2, sort_keys=True))
        return npz, side

    @classmethod
    def load(cls, path) -> "Chain":
        path = Path(path)
        if path.suffix in (".npz", ".json"):
            path = path.with_suffix("")
        meta = json.loads(path.with_suffix(".json").read_text())
        spec = ModelSpec(**meta["spec"])
        params, states = [], []
        with np.load(path.with_suffix(".npz")) as z:
            if meta["n_stored"]:
                fields = {name: z[name] for name in ParameterDraw.__dataclass_fields__}
                for i in range(meta["n_stored"]):
                    params.append(ParameterDraw(**{k: v[i] for k, v in fields.items()}))
                    states.append(StatePath(z["state_h"][i], z["state_d"][i], z["state_theta_parent"][i]))
            dataset = None
            if "data_y" in z.files:
                dataset = Dataset(z["data_y"], tuple(meta.get("labels", ())), tuple(meta.get("dates", ())))
        return cls(spec, params, states, meta.get("diagnostics", {}), meta.get("seed"), dataset)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# conditional posterior blocks
# ---------------------------------------------------------------------------


def transition_residuals(spec: ModelSpec, params: ParameterDraw, states: StatePath,
                         dataset: Dataset) -> np.ndarray:
    beta = states.beta(spec)
    Z = trans_design(spec, dataset.y, beta)
    return beta[spec.first_row:] - Z @ params.trans_coef_matrix(spec)


def transition_posterior(spec: ModelSpec, qcov: np.ndarray, states: StatePath, dataset: Dataset,
                         prior: GaussianPrior) -> tuple[np.ndarray, np.ndarray]:
    """Precision and right-hand side of the Normal conditional for vec([theta'; dy'; alpha'])."""
    beta = states.beta(spec)
    Z = trans_design(spec, dataset.y, beta)
    Qinv = np.linalg.inv(qcov)
    Qinv = 0.5 * (Qinv + Qinv.T)
    precision = prior.precision + np.kron(Qinv, Z.T @ Z)
    rhs = prior.precision @ prior.mean + (Z.T @ beta[spec.first_row:] @ Qinv).ravel(order="F")
    return precision, rhs


def draw_transition_coeffs(spec: ModelSpec, params: ParameterDraw, states: StatePath,
                           dataset: Dataset, prior: GaussianPrior, rng: RngHandle) -> ParameterDraw:
    """Draw (alpha, theta, d_j) given the states and the current Q.

    Cross-block entries of theta are pinned by the prior and then set exactly to zero.
    """
    precision, rhs = transition_posterior(spec, params.qcov, states, dataset, prior)
    try:
        draw, _ = draw_mvn_precision(precision, rhs, rng)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular transition posterior precision: {exc}") from exc
    F = draw.reshape(spec.n_trans_regressors, spec.n_states, order="F")
    out = params.with_trans_coef_matrix(spec, F)
    theta = np.array(out.theta)
    theta[block_mask(spec)] = 0.0
    return out.replace(theta=theta)


def draw_qcov(state_residuals: np.ndarray, iw_prior: IWPrior, rng: RngHandle) -> np.ndarray:
    """IW(eta'eta + v0, T + T0)."""
    eta = np.atleast_2d(state_residuals)
    scale = eta.T @ eta + iw_prior.scale
    return draw_inverse_wishart(0.5 * (scale + scale.T), eta.shape[0] + iw_prior.dof, rng)


def reduced_residuals(spec: ModelSpec, params: ParameterDraw, states: StatePath,
                      dataset: Dataset) -> np.ndarray:
    """V_t = Y_t - mean_t for the usable rows."""
    y = dataset.y
    return np.array([y[t] - observation_mean(spec, params, y, states.h, states.d, t)
                     for t in range(spec.first_row, dataset.T)])


def a_row_posterior(V: np.ndarray, h: np.ndarray, skew: np.ndarray, k: int,
                    prior: GaussianPrior) -> tuple[np.ndarray, np.ndarray]:
    """Precision and rhs for row k of A after the GLS rescaling by exp(h/2)."""
    scale = np.exp(-0.5 * h[:, k])
    yk = (V[:, k] - skew[:, k]) * scale
    Xk = -V[:, :k] * scale[:, None]
    precision = prior.precision + Xk.T @ Xk
    rhs = prior.precision @ prior.mean + Xk.T @ yk
    return precision, rhs


def draw_a_rows(spec: ModelSpec, V: np.ndarray, states: StatePath, a_priors: list,
                rng: RngHandle) -> np.ndarray:
    """Unit lower-triangular A, one Normal regression per row k = 2..N."""
    N = spec.n_vars
    A = np.eye(N)
    if N == 1:
        return A
    t0 = spec.first_row
    h = np.clip(states.h[t0:], -30.0, 30.0)
    skew = states.d[t0:] * states.tau[t0:] if spec.variant.has_skew else np.zeros_like(h)
    for k in range(1, N):
        precision, rhs = a_row_posterior(V, h, skew, k, a_priors[k - 1])
        A[k, :k], _ = draw_mvn_precision(precision, rhs, rng)
    return A


class KalmanCovarianceError(np.linalg.LinAlgError):
    def __init__(self, t: int):
        self.t = t
        super().__init__(f"Kalman filter covariance lost positive definiteness at row {t}")


def kalman_coefficient_moments(spec: ModelSpec, dataset: Dataset, states: StatePath,
                               params: ParameterDraw, prior: GaussianPrior) -> tuple[np.ndarray, np.ndarray]:
    """Terminal filtered mean/covariance of the constant coefficient state.

    The coefficient vector vec(G) is a state with no transition noise. Each row is
    premultiplied by A, which turns ``Sigma_t`` into the diagonal ``H_t`` so the N
    observations of a row are processed one scalar update at a time.
    """
    y = dataset.y
    t0 = spec.first_row
    N = spec.n_vars
    X = obs_design(spec, y, states)
    A = params.A
    skew = states.d[t0:] * states.tau[t0:] if spec.variant.has_skew else 0.0
    ystar = y[t0:] @ A.T - skew  # A Y*_t
    var = np.exp(np.clip(states.h[t0:], -30.0, 30.0))
    m = prior.mean.copy()
    P = prior.cov.copy()
    for r in range(X.shape[0]):
        for i in range(N):
            z = np.kron(A[i], X[r])
            Pz = P @ z
            s = z @ Pz + var[r, i]
            gain = Pz / s
            m += gain * (ystar[r, i] - z @ m)
            P -= np.outer(gain, Pz)
        if np.any(np.diag(P) <= 0):
            raise KalmanCovarianceError(t0 + r)
    return m, 0.5 * (P + P.T)


def draw_var_coeffs_kf(spec: ModelSpec, dataset: Dataset, states: StatePath, params: ParameterDraw,
                       prior: GaussianPrior, rng: RngHandle) -> ParameterDraw:
    m, P = kalman_coefficient_moments(spec, dataset, states, params, prior)
    try:
        L = np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise KalmanCovarianceError(dataset.T - 1) from None
    draw = m + L @ rng.normal(m.shape[0])
    G = draw.reshape(spec.n_obs_regressors, spec.n_vars, order="F")
    return params.with_obs_coef_matrix(spec, G)


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


def gibbs_sweep(spec: ModelSpec, dataset: Dataset, priors: Priors, params: ParameterDraw,
                states: StatePath, rng: RngHandle, timing: dict | None = None,
                fixed_cov=None, blocks=BLOCKS, sweep: int = 0):
    """One sweep in the order: states, transition coefficients, Q, A, VAR coefficients."""
    timing = timing if timing is not None else {}
    diag = None

    def run(name, fn):
        start = time.perf_counter()
        try:
            out = fn()
        except Exception as exc:
            raise GibbsError(sweep, name, exc) from exc
        timing[name] = timing.get(name, 0.0) + time.perf_counter() - start
        return out

    if "states" in blocks:
        states, diag = run("states", lambda: cpf_as(spec, params, dataset, states, priors.init,
                                                    rng.child(0), fixed_cov=fixed_cov,
                                                    return_diagnostics=True))
    if "transition" in blocks:
        params = run("transition", lambda: draw_transition_coeffs(spec, params, states, dataset,
                                                                  priors.trans, rng.child(1)))
    if "qcov" in blocks:
        eta = transition_residuals(spec, params, states, dataset)
        params = run("qcov", lambda: params.replace(qcov=draw_qcov(eta, priors.qcov, rng.child(2))))
    if "A" in blocks:
        V = reduced_residuals(spec, params, states, dataset)
        params = run("A", lambda: params.replace(A=draw_a_rows(spec, V, states, priors.a_rows, rng.child(3))))
    if "var_coeffs" in blocks:
        params = run("var_coeffs", lambda: draw_var_coeffs_kf(spec, dataset, states, params,
                                                              priors.obs, rng.child(4)))
    return params, states, diag


def run_gibbs(spec: ModelSpec, dataset: Dataset, priors: Priors, rng: RngHandle,
              init_params: ParameterDraw | None = None, init_states: StatePath | None = None,
              fixed_cov=None, progress=None) -> Chain:
    dataset.check(spec)
    params = init_params or priors.init_params
    states = init_states or priors.init_path
    if params is None or states is None:
        raise ValueError("starting parameters and state path are required")
    params = _enforce_variant(spec, params)
    if spec.variant is Variant.SV_ONLY:
        states = StatePath(states.h, np.zeros_like(states.d), states.theta_parent)
    chain = Chain(spec, seed=rng.seed, dataset=dataset)
    timing: dict = {}
    switches = 0
    ess_sum = 0.0
    for i in range(spec.n_draws):
        params, states, diag = gibbs_sweep(spec, dataset, priors, params, states, rng.child(i),
                                           timing, fixed_cov, sweep=i)
        if diag is not None:
            switches += diag.ancestor_switches
            ess_sum += float(diag.ess.mean())
        if i >= spec.n_burn and (i - spec.n_burn) % spec.thin == 0:
            chain.params.append(params)
            chain.states.append(states)
        if progress is not None:
            progress(i)
    n_steps = max(dataset.T - spec.first_row - 1, 1)
    chain.diagnostics = {
        "block_seconds": timing,
        "sweeps": spec.n_draws,
        "ancestor_switch_rate": switches / max(spec.n_draws * n_steps, 1),
        "mean_ess": ess_sum / max(spec.n_draws, 1),
    }
    return chain


def _enforce_variant(spec: ModelSpec, params: ParameterDraw) -> ParameterDraw:
    K, N = spec.n_states, spec.n_vars
    if params.alpha.shape[0] != K:
        # a starting point from a model with a different state dimension
        params = params.replace(alpha=params.alpha[:K], theta=params.theta[:K, :K],
                                dy=params.dy[:, :K], qcov=params.qcov[:K, :K])
    if spec.variant is Variant.RESTRICTED:
        params = params.replace(b=np.zeros_like(params.b), a=np.zeros_like(params.a),
                                dy=np.zeros_like(params.dy))
    elif spec.variant is Variant.SV_ONLY:
        params = params.replace(a=np.zeros_like(params.a))
    if spec.n_y_lags_in_transition == 0:
        params = params.replace(dy=np.zeros_like(params.dy))
    theta = np.array(params.theta)
    theta[block_mask(spec)] = 0.0
    return params.replace(theta=theta).validate(spec)


def estimate(spec: ModelSpec, dataset: Dataset, rng: RngHandle, settings=None, progress=None) -> Chain:
    """Build the priors (pre-model included) and run the main chain."""
    from .priors import build_priors

    priors = build_priors(dataset, spec, rng.child(10_000_000), settings)
    return run_gibbs(spec, dataset, priors, rng, progress=progress)
