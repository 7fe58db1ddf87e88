"""Model definition: dimensions, parameter/state containers and the observation density.

The model has a transition equation for the stacked state ``beta_t = (h_t, d_t)``

    beta_t = alpha + theta beta_{t-1} + sum_j dy_j Y_{t-j} + eta_t,   eta_t ~ N(0, Q)

and an observation equation

    Y_t = c + sum_j B_j Y_{t-j} + sum_l b_l h_{t-l} + sum_l a_l d_{t-l} + A^{-1} E_t
    E_t = d_t * tau_t + e_t,   tau_t = |Theta_t|,  Theta_t ~ N(0, I),  e_t ~ N(0, diag(exp(h_t)))

with ``A`` unit lower triangular.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))

# log-variance guard applied before every exponentiation
H_LIMIT = 30.0


class DimensionError(ValueError):
    """Raised when an array does not have the shape the model requires."""

    def __init__(self, matrix: str, expected, got):
        self.matrix = matrix
        self.expected = tuple(expected)
        self.got = tuple(got)
        super().__init__(f"{matrix}: expected shape {self.expected}, got {self.got}")


class Variant(str, enum.Enum):
    FULL = "Full"
    RESTRICTED = "RestrictedNoFeedback"
    SV_ONLY = "SvOnly"

    @classmethod
    def parse(cls, value: "str | Variant") -> "Variant":
        if isinstance(value, Variant):
            return value
        for v in cls:
            if value.lower() in (v.value.lower(), v.name.lower()):
                return v
        raise ValueError(f"unknown variant {value!r}; expected one of {[v.value for v in cls]}")

    @property
    def has_skew(self) -> bool:
        return self is not Variant.SV_ONLY

    @property
    def has_feedback(self) -> bool:
        # in-mean terms and lagged-Y terms in the transition equation
        return self is not Variant.RESTRICTED


@dataclass(frozen=True)
class ModelSpec:
    n_vars: int
    p_obs_lags: int = 2
    q_state_lags: int = 2
    l_inmean_lags: int = 1
    variant: Variant = Variant.FULL
    n_particles: int = 20
    ancestor_factors: int = 5
    n_draws: int = 20000
    n_burn: int | None = None
    thin: int = 1

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        if self.n_burn is None:
            object.__setattr__(self, "n_burn", self.n_draws // 2)
        problems = []
        if self.n_vars < 1:
            problems.append("n_vars must be >= 1")
        if self.p_obs_lags < 1:
            problems.append("p_obs_lags must be >= 1")
        if self.l_inmean_lags < 1:
            problems.append("l_inmean_lags must be >= 1")
        if self.q_state_lags < 0:
            problems.append("q_state_lags must be >= 0")
        if self.n_particles < 1:
            problems.append("n_particles must be >= 1")
        if self.ancestor_factors < 0:
            problems.append("ancestor_factors must be >= 0")
        if not 0 <= self.n_burn <= self.n_draws:
            problems.append("need 0 <= n_burn <= n_draws")
        if self.thin < 1:
            problems.append("thin must be >= 1")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def n_states(self) -> int:
        """State dimension K."""
        return self.n_vars if self.variant is Variant.SV_ONLY else 2 * self.n_vars

    @property
    def first_row(self) -> int:
        """First row of the data at which both equations can be evaluated."""
        return max(self.p_obs_lags, self.q_state_lags, self.l_inmean_lags)

    @property
    def n_y_lags_in_transition(self) -> int:
        return self.q_state_lags if self.variant.has_feedback else 0

    @property
    def n_obs_regressors(self) -> int:
        N, L = self.n_vars, self.l_inmean_lags
        k = N * self.p_obs_lags + 1
        if self.variant is Variant.FULL:
            k += 2 * N * L
        elif self.variant is Variant.SV_ONLY:
            k += N * L
        return k

    @property
    def n_trans_regressors(self) -> int:
        return self.n_states + self.n_vars * self.n_y_lags_in_transition + 1

    def with_variant(self, variant) -> "ModelSpec":
        return replace(self, variant=Variant.parse(variant))

    def to_dict(self) -> dict:
        return {
            "n_vars": self.n_vars,
            "p_obs_lags": self.p_obs_lags,
            "q_state_lags": self.q_state_lags,
            "l_inmean_lags": self.l_inmean_lags,
            "variant": self.variant.value,
            "n_particles": self.n_particles,
            "ancestor_factors": self.ancestor_factors,
            "n_draws": self.n_draws,
            "n_burn": self.n_burn,
            "thin": self.thin,
        }


@dataclass(frozen=True)
class Dataset:
    y: np.ndarray
    labels: tuple = ()
    dates: tuple = ()

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2:
            raise DimensionError("y", ("T", "N"), y.shape)
        if not np.all(np.isfinite(y)):
            raise ValueError("dataset contains missing or non-finite values")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        labels = tuple(self.labels) or tuple(f"y{i + 1}" for i in range(y.shape[1]))
        if len(labels) != y.shape[1]:
            raise ValueError(f"{len(labels)} labels for {y.shape[1]} variables")
        object.__setattr__(self, "labels", labels)
        dates = tuple(self.dates) or tuple(str(i) for i in range(y.shape[0]))
        if len(dates) != y.shape[0]:
            raise ValueError(f"{len(dates)} dates for {y.shape[0]} rows")
        object.__setattr__(self, "dates", dates)

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def N(self) -> int:
        return self.y.shape[1]

    def head(self, n_rows: int) -> "Dataset":
        """The first ``n_rows`` observations (an expanding-window estimation sample)."""
        return Dataset(self.y[:n_rows], self.labels, self.dates[:n_rows])

    def check(self, spec: ModelSpec) -> None:
        if self.N != spec.n_vars:
            raise DimensionError("y", (self.T, spec.n_vars), self.y.shape)
        need = spec.p_obs_lags + spec.q_state_lags + spec.l_inmean_lags
        if self.T <= need:
            raise ValueError(f"T={self.T} too short; need T > P + Q + L = {need}")


@dataclass(frozen=True)
class StatePath:
    """Latent paths, one row per observation.

    Rows before ``spec.first_row`` hold pre-sample states; only the last
    ``l_inmean_lags`` of them are ever used.
    """

    h: np.ndarray
    d: np.ndarray
    theta_parent: np.ndarray

    def __post_init__(self):
        for name in ("h", "d", "theta_parent"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.d.shape != self.h.shape:
            raise DimensionError("d", self.h.shape, self.d.shape)
        if self.theta_parent.shape != self.h.shape:
            raise DimensionError("theta_parent", self.h.shape, self.theta_parent.shape)

    @property
    def tau(self) -> np.ndarray:
        return np.abs(self.theta_parent)

    @property
    def T(self) -> int:
        return self.h.shape[0]

    def beta(self, spec: ModelSpec) -> np.ndarray:
        """Stacked transition state, T x K."""
        if spec.variant is Variant.SV_ONLY:
            return np.array(self.h)
        return np.hstack([self.h, self.d])

    @classmethod
    def from_beta(cls, spec: ModelSpec, beta: np.ndarray, theta_parent: np.ndarray) -> "StatePath":
        N = spec.n_vars
        if spec.variant is Variant.SV_ONLY:
            return cls(beta[:, :N], np.zeros_like(beta[:, :N]), theta_parent)
        return cls(beta[:, :N], beta[:, N:2 * N], theta_parent)


@dataclass(frozen=True)
class ParameterDraw:
    """One joint draw of the static parameters.

    ``B[j]`` multiplies ``Y_{t-j-1}``; ``b[l]``/``a[l]`` multiply ``h_{t-l-1}``/``d_{t-l-1}``;
    ``dy[j]`` (K x N) multiplies ``Y_{t-j-1}`` in the transition equation.
    """

    c: np.ndarray
    B: np.ndarray
    b: np.ndarray
    a: np.ndarray
    A: np.ndarray
    alpha: np.ndarray
    theta: np.ndarray
    dy: np.ndarray
    qcov: np.ndarray

    def __post_init__(self):
        for f in self.__dataclass_fields__:
            arr = np.array(getattr(self, f), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, f, arr)

    def validate(self, spec: ModelSpec, atol: float = 0.0) -> "ParameterDraw":
        N, K = spec.n_vars, spec.n_states
        P, L, Q = spec.p_obs_lags, spec.l_inmean_lags, spec.q_state_lags
        shapes = {
            "c": (N,), "B": (P, N, N), "b": (L, N, N), "a": (L, N, N), "A": (N, N),
            "alpha": (K,), "theta": (K, K), "dy": (Q, K, N), "qcov": (K, K),
        }
        for name, shape in shapes.items():
            got = getattr(self, name).shape
            if got != shape:
                raise DimensionError(name, shape, got)
        A = self.A
        if not (np.all(np.diag(A) == 1.0) and np.all(np.triu(A, 1) == 0.0)):
            raise ValueError("A must be unit lower triangular")
        if spec.variant is not Variant.SV_ONLY:
            cross = np.concatenate([self.theta[:N, N:].ravel(), self.theta[N:, :N].ravel()])
            if np.any(np.abs(cross) > atol):
                raise ValueError("theta must be block diagonal")
        if not np.allclose(self.qcov, self.qcov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(self.qcov).max())):
            raise ValueError("qcov must be symmetric")
        try:
            np.linalg.cholesky(self.qcov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("qcov is not positive definite") from exc
        return self

    @property
    def A_inv(self) -> np.ndarray:
        return np.linalg.inv(self.A)

    @classmethod
    def zeros(cls, spec: ModelSpec, qcov_scale: float = 1.0) -> "ParameterDraw":
        N, K = spec.n_vars, spec.n_states
        P, L, Q = spec.p_obs_lags, spec.l_inmean_lags, spec.q_state_lags
        return cls(
            c=np.zeros(N), B=np.zeros((P, N, N)), b=np.zeros((L, N, N)), a=np.zeros((L, N, N)),
            A=np.eye(N), alpha=np.zeros(K), theta=np.zeros((K, K)), dy=np.zeros((Q, K, N)),
            qcov=qcov_scale * np.eye(K),
        )

    def replace(self, **changes) -> "ParameterDraw":
        return replace(self, **changes)

    # coefficient-matrix views used by the regression blocks -----------------

    def obs_coef_matrix(self, spec: ModelSpec) -> np.ndarray:
        """Stacked k x N matrix G with ``Y_t' = x_t' G``."""
        blocks = [Bj.T for Bj in self.B]
        if spec.variant is not Variant.RESTRICTED:
            blocks += [bl.T for bl in self.b]
        if spec.variant is Variant.FULL:
            blocks += [al.T for al in self.a]
        blocks.append(self.c[None, :])
        return np.vstack(blocks)

    def with_obs_coef_matrix(self, spec: ModelSpec, G: np.ndarray) -> "ParameterDraw":
        N, P, L = spec.n_vars, spec.p_obs_lags, spec.l_inmean_lags
        G = np.asarray(G)
        if G.shape != (spec.n_obs_regressors, N):
            raise DimensionError("G", (spec.n_obs_regressors, N), G.shape)
        B = np.stack([G[j * N:(j + 1) * N].T for j in range(P)])
        pos = P * N
        b = np.zeros((L, N, N))
        a = np.zeros((L, N, N))
        if spec.variant is not Variant.RESTRICTED:
            b = np.stack([G[pos + l * N: pos + (l + 1) * N].T for l in range(L)])
            pos += L * N
        if spec.variant is Variant.FULL:
            a = np.stack([G[pos + l * N: pos + (l + 1) * N].T for l in range(L)])
        return self.replace(B=B, b=b, a=a, c=G[-1].copy())

    def trans_coef_matrix(self, spec: ModelSpec) -> np.ndarray:
        """Stacked matrix F with ``beta_t' = z_t' F``; rows (theta', dy_j', alpha)."""
        blocks = [self.theta.T]
        for j in range(spec.n_y_lags_in_transition):
            blocks.append(self.dy[j].T)
        blocks.append(self.alpha[None, :])
        return np.vstack(blocks)

    def with_trans_coef_matrix(self, spec: ModelSpec, F: np.ndarray) -> "ParameterDraw":
        K, N, Q = spec.n_states, spec.n_vars, spec.q_state_lags
        F = np.asarray(F)
        if F.shape != (spec.n_trans_regressors, K):
            raise DimensionError("F", (spec.n_trans_regressors, K), F.shape)
        dy = np.zeros((Q, K, N))
        for j in range(spec.n_y_lags_in_transition):
            dy[j] = F[K + j * N: K + (j + 1) * N].T
        return self.replace(theta=F[:K].T.copy(), dy=dy, alpha=F[-1].copy())


# ---------------------------------------------------------------------------
# regressors and means
# ---------------------------------------------------------------------------


def obs_regressors(spec: ModelSpec, y: np.ndarray, h: np.ndarray, d: np.ndarray, t: int) -> np.ndarray:
    parts = [y[t - j] for j in range(1, spec.p_obs_lags + 1)]
    L = spec.l_inmean_lags
    if spec.variant is not Variant.RESTRICTED:
        parts += [h[t - l] for l in range(1, L + 1)]
    if spec.variant is Variant.FULL:
        parts += [d[t - l] for l in range(1, L + 1)]
    parts.append(np.ones(1))
    return np.concatenate(parts)


def obs_design(spec: ModelSpec, y: np.ndarray, states: StatePath) -> np.ndarray:
    """Regressor matrix for rows ``first_row .. T-1`` of the observation equation."""
    return np.array([obs_regressors(spec, y, states.h, states.d, t)
                     for t in range(spec.first_row, y.shape[0])])


def trans_regressors(spec: ModelSpec, y: np.ndarray, beta: np.ndarray, t: int) -> np.ndarray:
    parts = [beta[t - 1]]
    parts += [y[t - j] for j in range(1, spec.n_y_lags_in_transition + 1)]
    parts.append(np.ones(1))
    return np.concatenate(parts)


def trans_design(spec: ModelSpec, y: np.ndarray, beta: np.ndarray) -> np.ndarray:
    return np.array([trans_regressors(spec, y, beta, t) for t in range(spec.first_row, y.shape[0])])


def exogenous_mean(spec: ModelSpec, params: ParameterDraw, y: np.ndarray, t: int) -> np.ndarray:
    """``c + sum_j B_j Y_{t-j}``: the part of the conditional mean free of latent states."""
    m = params.c.copy()
    for j in range(spec.p_obs_lags):
        m += params.B[j] @ y[t - j - 1]
    return m


def transition_drift(spec: ModelSpec, params: ParameterDraw, y: np.ndarray, t: int) -> np.ndarray:
    """``alpha + sum_j dy_j Y_{t-j}``."""
    m = params.alpha.copy()
    for j in range(spec.n_y_lags_in_transition):
        m += params.dy[j] @ y[t - j - 1]
    return m


def observation_mean(spec: ModelSpec, params: ParameterDraw, y: np.ndarray,
                     h: np.ndarray, d: np.ndarray, t: int) -> np.ndarray:
    m = exogenous_mean(spec, params, y, t)
    for l in range(spec.l_inmean_lags):
        m += params.b[l] @ h[t - l - 1] + params.a[l] @ d[t - l - 1]
    return m


def _check_row(spec: ModelSpec, dataset: Dataset, states: StatePath, t: int) -> None:
    if not spec.first_row <= t < dataset.T:
        raise IndexError(f"row {t} outside usable range [{spec.first_row}, {dataset.T})")
    if states.T != dataset.T:
        raise DimensionError("states.h", (dataset.T, spec.n_vars), states.h.shape)


def observation_residual(spec: ModelSpec, params: ParameterDraw, states: StatePath,
                         dataset: Dataset, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Structural residual ``E_t`` and reduced-form residual ``V_t = Y_t - mean_t``."""
    params.validate(spec, atol=np.inf)
    dataset.check(spec)
    _check_row(spec, dataset, states, t)
    V = dataset.y[t] - observation_mean(spec, params, dataset.y, states.h, states.d, t)
    return params.A @ V, V


def structural_loglik(u: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Gaussian log density of ``u ~ N(0, diag(exp(h)))``, summed over the last axis.

    Entries with ``|h| > H_LIMIT`` give ``-inf``.
    """
    hc = np.clip(h, -H_LIMIT, H_LIMIT)
    ll = -0.5 * (u.shape[-1] * LOG_2PI + hc.sum(-1) + (u * u * np.exp(-hc)).sum(-1))
    bad = np.any(np.abs(h) > H_LIMIT, axis=-1)
    return np.where(bad, -np.inf, ll)


def conditional_loglik(spec: ModelSpec, params: ParameterDraw, states: StatePath,
                       dataset: Dataset, t: int) -> float:
    """log N(Y_t - mean_t - A^{-1}(d_t * tau_t); 0, A^{-1} H_t A^{-1}').

    ``Sigma_t`` has Cholesky factor ``A^{-1} H_t^{1/2}``, so the quadratic form is
    evaluated as ``|H_t^{-1/2} (A V_t - d_t tau_t)|^2`` and ``log|Sigma_t| = sum h_t``.
    """
    h = states.h[t]
    if not np.all(np.isfinite(h)):
        raise ValueError(f"non-finite log-variance at row {t}")
    E, _ = observation_residual(spec, params, states, dataset, t)
    d = states.d[t] if spec.variant.has_skew else np.zeros(spec.n_vars)
    u = E - d * states.tau[t]
    return float(structural_loglik(u, np.clip(h, -H_LIMIT, H_LIMIT)))


def reconstruct_observation(spec: ModelSpec, params: ParameterDraw, states: StatePath,
                            y: np.ndarray, E: np.ndarray, t: int) -> np.ndarray:
    """Inverse of :func:`observation_residual`: ``Y_t = mean_t + A^{-1} E_t``."""
    mean = observation_mean(spec, params, y, states.h, states.d, t)
    return mean + np.linalg.solve(params.A, E)


def observation_covariance(params: ParameterDraw, h: np.ndarray) -> np.ndarray:
    """``Sigma_t = A^{-1} H_t A^{-1}'``."""
    Ainv = params.A_inv
    S = (Ainv * np.exp(np.clip(h, -H_LIMIT, H_LIMIT))) @ Ainv.T
    return 0.5 * (S + S.T)


def block_mask(spec: ModelSpec) -> np.ndarray:
    """Boolean K x K mask of the cross-block entries of theta (always zero)."""
    K, N = spec.n_states, spec.n_vars
    mask = np.zeros((K, K), dtype=bool)
    if spec.variant is not Variant.SV_ONLY:
        mask[:N, N:] = True
        mask[N:, :N] = True
    return mask


def draws_summary(draws: Sequence[ParameterDraw]) -> dict:
    """Posterior means of every parameter array, keyed by field name."""
    out = {}
    for name in ParameterDraw.__dataclass_fields__:
        out[name] = np.mean([getattr(p, name) for p in draws], axis=0)
    return out
