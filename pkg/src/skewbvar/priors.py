"""Prior construction: dummy-observation Normal priors, the triangular-factor prior,
the inverse-Wishart prior on the state-innovation covariance and the initial-state
prior obtained from a simpler no-feedback pre-model."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import (Dataset, ModelSpec, ParameterDraw, StatePath, Variant, block_mask,
                    obs_design, trans_design)
from .rv import RngHandle, safe_cholesky

log = logging.getLogger(__name__)

MASKED_VARIANCE = 1e-9


@dataclass
class DummyPriorConfig:
    tau_tight: float = 0.1
    c_vol: float = 0.1
    c_flat: float = 1000.0
    gamma: np.ndarray | None = None
    s: np.ndarray | None = None

    def __post_init__(self):
        for name in ("tau_tight", "c_vol", "c_flat"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.gamma is not None:
            self.gamma = np.asarray(self.gamma, dtype=float)
            if not np.all(np.isfinite(self.gamma)):
                raise ValueError("gamma must be finite")
        if self.s is not None:
            self.s = np.asarray(self.s, dtype=float)


@dataclass
class GaussianPrior:
    mean: np.ndarray
    cov: np.ndarray
    _precision: np.ndarray | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        k = self.mean.shape[0]
        if self.cov.shape != (k, k):
            raise ValueError(f"prior covariance shape {self.cov.shape} does not match mean length {k}")
        safe_cholesky(self.cov, "prior covariance")

    @property
    def precision(self) -> np.ndarray:
        if self._precision is None:
            Linv = np.linalg.inv(np.linalg.cholesky(self.cov))
            self._precision = Linv.T @ Linv
        return self._precision


@dataclass
class IWPrior:
    scale: np.ndarray
    dof: float

    def __post_init__(self):
        self.scale = np.atleast_2d(np.asarray(self.scale, dtype=float))
        safe_cholesky(self.scale, "inverse Wishart prior scale")


@dataclass
class InitialStatePrior:
    """Prior for the pre-sample lag blocks ``beta_{first-1} .. beta_{first-L}``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        safe_cholesky(self.cov, "initial state covariance")


@dataclass
class Priors:
    obs: GaussianPrior
    trans: GaussianPrior
    a_rows: list
    qcov: IWPrior
    init: InitialStatePrior
    init_path: StatePath | None = None
    init_params: ParameterDraw | None = None


# ---------------------------------------------------------------------------
# dummy observations
# ---------------------------------------------------------------------------


def estimate_ar1(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column AR(1) with intercept: slope and residual standard deviation."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if y.shape[0] == 1:
        y = y.T
    gamma = np.empty(y.shape[1])
    s = np.empty(y.shape[1])
    for i in range(y.shape[1]):
        X = np.column_stack([np.ones(y.shape[0] - 1), y[:-1, i]])
        coef, *_ = np.linalg.lstsq(X, y[1:, i], rcond=None)
        resid = y[1:, i] - X @ coef
        gamma[i] = coef[1]
        s[i] = np.sqrt(resid @ resid / max(len(resid) - 2, 1))
    return gamma, s


def dummy_system(gamma, s, n_lags: int, ex_tightness, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Dummy rows for ``n_lags`` lag blocks plus exogenous columns with per-column tightness."""
    gamma = np.asarray(gamma, dtype=float)
    s = np.asarray(s, dtype=float)
    ex_tightness = np.atleast_1d(np.asarray(ex_tightness, dtype=float))
    if np.any(s == 0):
        raise ValueError("degenerate scale: some s_i is zero")
    N, EX, P = len(s), len(ex_tightness), n_lags
    y_D = np.zeros((N * P + EX, N))
    y_D[:N] = np.diag(gamma * s) / tau
    x_D = np.zeros((N * P + EX, N * P + EX))
    x_D[:N * P, :N * P] = np.kron(np.diag(np.arange(1, P + 1)), np.diag(s)) / tau
    x_D[N * P:, N * P:] = np.diag(1.0 / ex_tightness)
    return y_D, x_D


def obs_ex_tightness(spec: ModelSpec, config: DummyPriorConfig) -> np.ndarray:
    n_state_cols = spec.n_obs_regressors - spec.n_vars * spec.p_obs_lags - 1
    return np.concatenate([np.full(n_state_cols, config.c_vol), [config.c_flat]])


def build_dummy_observations(config: DummyPriorConfig, spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Dummy observations for the observation-equation coefficients ``[B_j; b_l; a_l; c]``."""
    if config.gamma is None or config.s is None:
        raise ValueError("gamma and s must be estimated from a training sample first")
    return dummy_system(config.gamma, config.s, spec.p_obs_lags,
                        obs_ex_tightness(spec, config), config.tau_tight)


def prior_from_dummies(y_D: np.ndarray, x_D: np.ndarray, S_scale) -> GaussianPrior:
    """N(Gamma0, S kron (x_D'x_D)^{-1}) over the column-stacked coefficient matrix."""
    S = np.atleast_2d(np.asarray(S_scale, dtype=float))
    if S.shape[0] == 1 and S.shape[1] > 1:
        S = np.diag(S[0])
    xtx = x_D.T @ x_D
    try:
        L = np.linalg.cholesky(xtx)
        if np.linalg.cond(L) > 1e8:
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        raise ValueError("x_D'x_D is singular; increase the prior tightness parameters") from None
    Linv = np.linalg.inv(L)
    xtx_inv = Linv.T @ Linv
    G0 = xtx_inv @ (x_D.T @ y_D)
    cov = np.kron(S, xtx_inv)
    return GaussianPrior(G0.ravel(order="F"), 0.5 * (cov + cov.T))


def transition_prior(spec: ModelSpec, config: DummyPriorConfig, tightening_mask=None,
                     S_scale=None) -> GaussianPrior:
    """Normal prior on vec([theta'; dy_j'; alpha']) with masked theta entries pinned at zero.

    ``config.gamma``/``config.s`` are AR(1) estimates for the K states; ``S_scale``
    defaults to ``diag(s**2)``. ``tightening_mask`` is a K x K boolean array over theta.
    """
    K = spec.n_states
    if config.gamma is None or config.s is None:
        raise ValueError("state AR(1) estimates required")
    n_ylag = spec.n_vars * spec.n_y_lags_in_transition
    ex = np.concatenate([np.full(n_ylag, config.c_vol), [config.c_flat]])
    y_D, x_D = dummy_system(config.gamma, config.s, 1, ex, config.tau_tight)
    if S_scale is None:
        S_scale = np.diag(np.asarray(config.s) ** 2)
    prior = prior_from_dummies(y_D, x_D, S_scale)
    if tightening_mask is None:
        return prior
    mask = np.asarray(tightening_mask, dtype=bool)
    if mask.shape != (K, K):
        raise ValueError(f"mask must be {K} x {K}")
    kz = spec.n_trans_regressors
    # theta[i, m] sits in row m of equation i's coefficient column
    idx = [i * kz + m for i, m in zip(*np.nonzero(mask))]
    if not idx:
        return prior
    mean = prior.mean.copy()
    cov = prior.cov.copy()
    mean[idx] = 0.0
    cov[idx, :] = 0.0
    cov[:, idx] = 0.0
    cov[idx, idx] = MASKED_VARIANCE
    return GaussianPrior(mean, cov)


def a_prior_from_residuals(v: np.ndarray) -> list[GaussianPrior]:
    """Row-wise prior for the free elements of A.

    The mean comes from the inverse Cholesky factor of ``var(v)`` with each row
    divided by its diagonal; the variance is the identity.
    """
    N = v.shape[1]
    if N == 1:
        return []
    L = safe_cholesky(np.cov(v, rowvar=False), "residual covariance")
    A_hat = np.linalg.inv(L)
    A_hat = A_hat / np.diag(A_hat)[:, None]
    return [GaussianPrior(A_hat[k, :k], np.eye(k)) for k in range(1, N)]


def a_hat_from_priors(a_rows: list[GaussianPrior], N: int) -> np.ndarray:
    A = np.eye(N)
    for k, pr in enumerate(a_rows, start=1):
        A[k, :k] = pr.mean
    return A


# ---------------------------------------------------------------------------
# pre-model and full prior assembly
# ---------------------------------------------------------------------------


@dataclass
class PriorSettings:
    dummy: DummyPriorConfig = field(default_factory=DummyPriorConfig)
    pre_model_draws: int = 200
    training_rows: int | None = None
    # bootstrap choices for the pre-model, which has no earlier state estimates
    bootstrap_state_gamma: float = 0.9
    bootstrap_qcov: float = 0.05
    state_scale_floor: float = 0.01


def _ols(X: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    coef, *_ = np.linalg.lstsq(X, Y, rcond=None)
    return coef, Y - X @ coef


def observation_prior(spec: ModelSpec, y_train: np.ndarray, settings: PriorSettings) -> GaussianPrior:
    gamma, s = estimate_ar1(y_train)
    cfg = DummyPriorConfig(settings.dummy.tau_tight, settings.dummy.c_vol, settings.dummy.c_flat, gamma, s)
    y_D, x_D = build_dummy_observations(cfg, spec)
    return prior_from_dummies(y_D, x_D, np.diag(np.var(y_train, axis=0, ddof=1)))


def _bootstrap_priors(dataset: Dataset, spec: ModelSpec, settings: PriorSettings,
                      rng: RngHandle) -> Priors:
    """Priors and a starting point for the pre-model (no earlier state estimates exist)."""
    y = dataset.y
    n_train = settings.training_rows or dataset.T
    obs = observation_prior(spec, y[:n_train], settings)
    t0 = spec.first_row
    X = np.column_stack([y[t0 - j: dataset.T - j] for j in range(1, spec.p_obs_lags + 1)]
                        + [np.ones(dataset.T - t0)])
    G, v = _ols(X, y[t0:])
    a_rows = a_prior_from_residuals(v)
    A = a_hat_from_priors(a_rows, spec.n_vars)
    E = v @ A.T
    K = spec.n_states
    N = spec.n_vars
    h0 = np.log(np.maximum(np.var(E, axis=0), 1e-8))
    beta_mean = np.concatenate([h0, np.zeros(K - N)])
    cfg = DummyPriorConfig(settings.dummy.tau_tight, settings.dummy.c_vol, settings.dummy.c_flat,
                           np.full(K, settings.bootstrap_state_gamma), np.ones(K))
    trans = transition_prior(spec, cfg, block_mask(spec))
    qcov = IWPrior(settings.bootstrap_qcov * np.eye(K), K + 1)
    init = InitialStatePrior(np.tile(beta_mean, spec.l_inmean_lags), np.eye(K * spec.l_inmean_lags))
    theta_parent = rng.normal((dataset.T, N))
    path = StatePath(np.tile(h0, (dataset.T, 1)), np.zeros((dataset.T, N)), theta_parent)
    F = np.zeros((spec.n_trans_regressors, K))
    F[-1] = beta_mean * (1 - settings.bootstrap_state_gamma)
    F[:K] = settings.bootstrap_state_gamma * np.eye(K)
    params = ParameterDraw.zeros(spec, settings.bootstrap_qcov).replace(A=A)
    params = params.with_trans_coef_matrix(spec, F)
    Gfull = np.zeros((spec.n_obs_regressors, N))
    Gfull[:N * spec.p_obs_lags] = G[:-1]
    Gfull[-1] = G[-1]
    params = params.with_obs_coef_matrix(spec, Gfull)
    return Priors(obs, trans, a_rows, qcov, init, path, params)


def run_pre_model(dataset: Dataset, spec: ModelSpec, settings: PriorSettings, rng: RngHandle):
    """Short particle-Gibbs chain on the no-feedback model (b = a = d_j = 0)."""
    from .sampler import run_gibbs

    n = max(settings.pre_model_draws, 2)
    pre_spec = ModelSpec(
        n_vars=spec.n_vars, p_obs_lags=spec.p_obs_lags, q_state_lags=spec.q_state_lags,
        l_inmean_lags=spec.l_inmean_lags, variant=Variant.RESTRICTED,
        n_particles=spec.n_particles, ancestor_factors=spec.ancestor_factors,
        n_draws=n, n_burn=n // 2,
    )
    boot = _bootstrap_priors(dataset, pre_spec, settings, rng.child(0))
    return pre_spec, run_gibbs(pre_spec, dataset, boot, rng.child(1))


def initialize_states(dataset: Dataset, spec: ModelSpec, rng: RngHandle,
                      settings: PriorSettings | None = None, pre_chain=None):
    """Initial-state prior and starting state path from the pre-model.

    Returns ``(InitialStatePrior, StatePath)``: the prior mean repeats the pre-model's
    posterior-mean state at the first usable row for every lag block; the prior
    covariance is the identity; the path is the pre-model's last draw.
    """
    settings = settings or PriorSettings()
    if pre_chain is None:
        _, pre_chain = run_pre_model(dataset, spec, settings, rng)
    mean_path = pre_chain.mean_states()
    beta_bar = mean_path.beta(spec)
    t0 = spec.first_row
    K, L = spec.n_states, spec.l_inmean_lags
    init = InitialStatePrior(np.tile(beta_bar[t0], L), np.eye(K * L))
    last = pre_chain.states[-1]
    if spec.variant is Variant.SV_ONLY:
        last = StatePath(last.h, np.zeros_like(last.d), last.theta_parent)
    return init, last


def build_priors(dataset: Dataset, spec: ModelSpec, rng: RngHandle,
                 settings: PriorSettings | None = None) -> Priors:
    """Every prior of the model, using a pre-model run for the state-dependent pieces."""
    settings = settings or PriorSettings()
    dataset.check(spec)
    y = dataset.y
    n_train = settings.training_rows or dataset.T
    obs = observation_prior(spec, y[:n_train], settings)

    pre_spec, pre_chain = run_pre_model(dataset, spec, settings, rng)
    init, path = initialize_states(dataset, spec, rng, settings, pre_chain=pre_chain)

    mean_path = pre_chain.mean_states()
    t0 = spec.first_row
    K, N = spec.n_states, spec.n_vars
    beta_bar = mean_path.beta(spec)

    # A prior from OLS residuals of the full observation equation at the mean states
    X = obs_design(spec, y, mean_path)
    G_ols, v = _ols(X, y[t0:])
    a_rows = a_prior_from_residuals(v)

    # transition prior from AR(1) fits of the mean state paths
    gamma, s = estimate_ar1(beta_bar[t0 - 1:])
    s = np.maximum(s, np.sqrt(settings.state_scale_floor))
    S_state = np.maximum(np.var(beta_bar[t0 - 1:], axis=0, ddof=1), settings.state_scale_floor)
    cfg = DummyPriorConfig(settings.dummy.tau_tight, settings.dummy.c_vol, settings.dummy.c_flat, gamma, s)
    trans = transition_prior(spec, cfg, block_mask(spec), S_scale=np.diag(S_state))

    q_bar = np.mean([p.qcov for p in pre_chain.params], axis=0)
    if spec.variant is Variant.SV_ONLY:
        q_bar = q_bar[:N, :N]
    qcov = IWPrior(np.diag(np.diag(q_bar)), K + 1)

    # starting parameters for the main chain
    Z = trans_design(spec, y, beta_bar)
    Qinv = np.diag(1.0 / np.diag(q_bar))
    prec = trans.precision + np.kron(Qinv, Z.T @ Z)
    rhs = trans.precision @ trans.mean + (Z.T @ beta_bar[t0:] @ Qinv).ravel(order="F")
    F = np.linalg.solve(prec, rhs).reshape(spec.n_trans_regressors, K, order="F")
    params = ParameterDraw.zeros(spec).replace(A=a_hat_from_priors(a_rows, N), qcov=np.diag(np.diag(q_bar)))
    params = params.with_trans_coef_matrix(spec, F)
    theta = params.theta.copy()
    theta[block_mask(spec)] = 0.0
    params = params.replace(theta=theta).with_obs_coef_matrix(spec, G_ols)
    return Priors(obs, trans, a_rows, qcov, init, path, params)
