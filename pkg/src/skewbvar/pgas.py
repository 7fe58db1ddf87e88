"""Conditional particle filter with ancestor sampling for the latent state path.

Each particle carries the stacked state ``(Theta_t, beta_t, beta_{t-1}, ..., beta_{t-L})``.
The lag blocks are deterministic copies along the particle's lineage, so they are
stored as a buffer that is shifted on resampling. Ancestor sampling for the reference
trajectory uses the exact non-Markovian ancestor weight: the candidate's filter
weight, the transition density of the reference state given the candidate, and the
observation densities whose in-mean lags reach back into the candidate history.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .model import (H_LIMIT, LOG_2PI, Dataset, ModelSpec, ParameterDraw, StatePath, Variant,
                    exogenous_mean, structural_loglik, transition_drift)
from .priors import InitialStatePrior
from .rv import RngHandle, safe_cholesky

log = logging.getLogger(__name__)


class DegenerateWeightsError(FloatingPointError):
    pass


@dataclass
class ParticleSystem:
    """Particles at one time step.

    ``stack[j, l]`` is ``beta_{t-l}`` of particle ``j``; ``theta[j]`` its ``Theta_t``.
    The last slot (index ``M - 1``) holds the reference trajectory.
    """

    stack: np.ndarray
    theta: np.ndarray
    log_weights: np.ndarray
    ancestors: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        return normalize_log_weights(self.log_weights)


@dataclass
class CPFDiagnostics:
    ess: np.ndarray
    ancestor_switches: int


def normalize_log_weights(logw: np.ndarray) -> np.ndarray:
    m = np.max(logw)
    if not np.isfinite(m):
        raise DegenerateWeightsError("all particle weights are zero (log-weight underflow)")
    w = np.exp(logw - m)
    return w / w.sum()


def systematic_resample(p: np.ndarray, n: int, rng: RngHandle) -> np.ndarray:
    if n == 0:
        return np.zeros(0, dtype=int)
    positions = (rng.uniform() + np.arange(n)) / n
    cum = np.cumsum(p)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right").clip(0, len(p) - 1)


def conditional_systematic_resample(p: np.ndarray, b: int, rng: RngHandle) -> np.ndarray:
    """Ancestors of the ``len(p) - 1`` free particles given that the reference descends from ``b``.

    Systematic resampling of ``M = len(p)`` offspring conditioned on one of them
    being ``b``: the offset U then has density proportional to the number of
    offspring landing on ``b``, which is drawn by placing a point uniformly in
    ``b``'s CDF interval. That point's offspring is the reference; the other
    ``M - 1`` are returned.
    """
    M = len(p)
    cum = np.cumsum(p)
    cum[-1] = 1.0
    lo = cum[b - 1] if b > 0 else 0.0
    x = lo + rng.uniform() * (cum[b] - lo)
    slot = min(int(np.floor(M * x)), M - 1)
    u = min(max(M * x - slot, 0.0), np.nextafter(1.0, 0.0))
    a = np.searchsorted(cum, (u + np.arange(M)) / M, side="right").clip(0, M - 1)
    return np.delete(a, slot)


class _Model:
    """Parameter-dependent quantities precomputed once per sweep."""

    def __init__(self, spec: ModelSpec, params: ParameterDraw, y: np.ndarray, fixed_cov=None):
        self.spec = spec
        self.params = params
        self.y = y
        T, N, K = y.shape[0], spec.n_vars, spec.n_states
        self.N, self.K, self.L = N, K, spec.l_inmean_lags
        t0 = spec.first_row
        self.exo = np.full((T, N), np.nan)
        self.drift = np.full((T, K), np.nan)
        for t in range(t0, T):
            self.exo[t] = exogenous_mean(spec, params, y, t)
            self.drift[t] = transition_drift(spec, params, y, t)
        self.A = params.A
        self.Ainv = params.A_inv
        self.theta = params.theta
        self.cholQ = safe_cholesky(params.qcov, "state innovation covariance")
        self.logdetQ = 2.0 * np.log(np.diag(self.cholQ)).sum()
        self.skew = spec.variant.has_skew
        self.b = params.b
        self.a = params.a if spec.variant is Variant.FULL else None
        self.inmean = spec.variant is not Variant.RESTRICTED
        self.fixed_chol = None
        if fixed_cov is not None:
            self.fixed_chol = safe_cholesky(np.asarray(fixed_cov, dtype=float), "fixed observation covariance")
            self.fixed_logdet = 2.0 * np.log(np.diag(self.fixed_chol)).sum()

    def log_obs(self, t: int, beta_now: np.ndarray, theta_now: np.ndarray, lags: np.ndarray) -> np.ndarray:
        """Observation log density at row t for a batch of particles.

        ``beta_now``: (M, K); ``theta_now``: (M, N); ``lags``: (M, L, K) with ``lags[:, l] = beta_{t-l-1}``.
        """
        N = self.N
        mean = np.broadcast_to(self.exo[t], (beta_now.shape[0], N)).copy()
        if self.inmean:
            for l in range(self.L):
                mean += lags[:, l, :N] @ self.b[l].T
                if self.a is not None:
                    mean += lags[:, l, N:2 * N] @ self.a[l].T
        V = self.y[t] - mean
        h = beta_now[:, :N]
        skew = beta_now[:, N:2 * N] * np.abs(theta_now) if self.skew else 0.0
        if self.fixed_chol is not None:
            resid = V - (skew @ self.Ainv.T if self.skew else 0.0)
            z = solve_triangular(self.fixed_chol, resid.T, lower=True)
            return -0.5 * (N * LOG_2PI + self.fixed_logdet + (z * z).sum(0))
        u = V @ self.A.T - skew
        return structural_loglik(u, h)

    def log_trans(self, t: int, beta_now: np.ndarray, beta_prev: np.ndarray) -> np.ndarray:
        """log N(beta_now; drift_t + theta beta_prev, Q); either argument may be batched."""
        resid = beta_now - self.drift[t] - beta_prev @ self.theta.T
        resid = np.atleast_2d(resid)
        z = solve_triangular(self.cholQ, resid.T, lower=True)
        return -0.5 * (self.K * LOG_2PI + self.logdetQ + (z * z).sum(0))

    def propagate(self, t: int, beta_prev: np.ndarray, rng: RngHandle) -> tuple[np.ndarray, np.ndarray]:
        M = beta_prev.shape[0]
        eta = rng.normal((M, self.K)) @ self.cholQ.T
        beta = self.drift[t] + beta_prev @ self.theta.T + eta
        theta_now = rng.normal((M, self.N))
        return beta, theta_now


def propagate(spec: ModelSpec, params: ParameterDraw, y: np.ndarray, t: int,
              stack: np.ndarray, rng: RngHandle) -> tuple[np.ndarray, np.ndarray]:
    """Move particles from ``t-1`` to ``t`` through the transition equation.

    ``stack`` is (M, L+1, K) at ``t-1``; returns the new stack and ``Theta_t`` draws.
    The lag blocks of the new stack are the old blocks shifted by one.
    """
    model = _Model(spec, params, y)
    beta, theta_now = model.propagate(t, stack[:, 0], rng)
    new = np.empty_like(stack)
    new[:, 0] = beta
    new[:, 1:] = stack[:, :-1]
    return new, theta_now


def particle_log_weights(spec: ModelSpec, params: ParameterDraw, dataset: Dataset, t: int,
                         stack: np.ndarray, theta_now: np.ndarray, fixed_cov=None) -> np.ndarray:
    """Unnormalised log weights (conditional log likelihood) of a batch of particles."""
    model = _Model(spec, params, dataset.y, fixed_cov)
    return model.log_obs(t, stack[:, 0], theta_now, stack[:, 1:])


def weight(spec: ModelSpec, params: ParameterDraw, dataset: Dataset, t: int,
           stack: np.ndarray, theta_now: np.ndarray) -> np.ndarray:
    return np.exp(particle_log_weights(spec, params, dataset, t, stack, theta_now))


def _ancestor_log_weights(model: _Model, prev: ParticleSystem, ref_beta: np.ndarray,
                          ref_theta: np.ndarray, t: int, n_factors: int) -> np.ndarray:
    """log of ``w_{t-1}^j * f(ref_t | j) * prod_s g(y_s | j-history, ref_{t:s})``.

    ``ref_beta``/``ref_theta`` are full-length reference arrays indexed by data row.
    Observation factors beyond ``t + L - 1`` do not depend on the candidate and are
    omitted; they cancel on normalisation.
    """
    lw = prev.log_weights.copy()
    if n_factors == 0:
        return lw
    M = lw.shape[0]
    T = model.y.shape[0]
    L = model.L
    lw += model.log_trans(t, ref_beta[t], prev.stack[:, 0])
    last = min(t + min(n_factors, L) - 1, T - 1)
    for s in range(t, last + 1):
        lags = np.empty((M, L, model.K))
        for l in range(1, L + 1):
            if s - l >= t:
                lags[:, l - 1] = ref_beta[s - l]
            else:
                lags[:, l - 1] = prev.stack[:, (t - 1) - (s - l)]
        beta_now = np.broadcast_to(ref_beta[s], (M, model.K))
        theta_now = np.broadcast_to(ref_theta[s], (M, model.N))
        lw += model.log_obs(s, beta_now, theta_now, lags)
    return lw


def ancestor_log_weights(spec: ModelSpec, params: ParameterDraw, dataset: Dataset,
                         prev: ParticleSystem, ref_path: StatePath, t: int,
                         n_factors: int | None = None, fixed_cov=None) -> np.ndarray:
    model = _Model(spec, params, dataset.y, fixed_cov)
    n_factors = spec.ancestor_factors if n_factors is None else n_factors
    return _ancestor_log_weights(model, prev, ref_path.beta(spec), ref_path.theta_parent, t, n_factors)


def ancestor_sample_reference(spec: ModelSpec, params: ParameterDraw, dataset: Dataset,
                              prev: ParticleSystem, ref_path: StatePath, t: int,
                              n_factors: int, rng: RngHandle, fixed_cov=None) -> int:
    """Draw the ancestor index of the reference particle at row ``t``."""
    if t <= spec.first_row:
        raise ValueError("ancestor sampling starts at the second filtering step")
    p = normalize_log_weights(ancestor_log_weights(spec, params, dataset, prev, ref_path, t,
                                                   n_factors, fixed_cov))
    return int(rng.gen.choice(len(p), p=p))


def _init_stack(model: _Model, init: InitialStatePrior, n: int, rng: RngHandle) -> np.ndarray:
    """Pre-sample lag blocks ``beta_{t0-1} .. beta_{t0-L}`` for ``n`` particles, (n, L, K)."""
    K, L = model.K, model.L
    chol = safe_cholesky(init.cov, "initial state covariance")
    draws = init.mean + rng.normal((n, K * L)) @ chol.T
    return draws.reshape(n, L, K)


def cpf_as(spec: ModelSpec, params: ParameterDraw, dataset: Dataset, ref_path: StatePath,
           init: InitialStatePrior, rng: RngHandle, fixed_cov=None,
           return_diagnostics: bool = False):
    """One conditional-particle-filter-with-ancestor-sampling sweep.

    Returns a new :class:`StatePath` drawn from a Markov kernel that leaves the
    conditional posterior of the states invariant. ``fixed_cov`` replaces the
    time-varying observation covariance by a constant (linear-Gaussian special case).
    """
    y = dataset.y
    T = y.shape[0]
    t0 = spec.first_row
    M, K, N, L = spec.n_particles, spec.n_states, spec.n_vars, spec.l_inmean_lags
    if ref_path.T != T:
        raise ValueError("reference path length does not match the data")
    model = _Model(spec, params, y, fixed_cov)
    ref_beta = ref_path.beta(spec)
    ref_theta = np.array(ref_path.theta_parent)
    n_steps = T - t0
    free = M - 1

    stacks = np.empty((n_steps, M, L + 1, K))
    thetas = np.empty((n_steps, M, N))
    ancestors = np.zeros((n_steps, M), dtype=int)
    ess = np.empty(n_steps)
    switches = 0

    # step 0: draw pre-sample blocks and the first state for the free particles
    pre = _init_stack(model, init, free, rng)
    beta0, th0 = model.propagate(t0, pre[:, 0], rng)
    stacks[0, :free, 0] = beta0
    stacks[0, :free, 1:] = pre
    thetas[0, :free] = th0
    stacks[0, free, 0] = ref_beta[t0]
    stacks[0, free, 1:] = ref_beta[[t0 - l for l in range(1, L + 1)]]
    thetas[0, free] = ref_theta[t0]
    ancestors[0] = np.arange(M)
    logw = model.log_obs(t0, stacks[0, :, 0], thetas[0], stacks[0, :, 1:])
    p = normalize_log_weights(logw)
    ess[0] = 1.0 / np.sum(p * p)
    prev = ParticleSystem(stacks[0], thetas[0], logw, ancestors[0])

    for k in range(1, n_steps):
        t = t0 + k
        # the reference's ancestor first, then the free ancestors conditionally on it
        lw_anc = _ancestor_log_weights(model, prev, ref_beta, ref_theta, t, spec.ancestor_factors)
        a_ref = int(rng.gen.choice(M, p=normalize_log_weights(lw_anc)))
        switches += a_ref != free
        a = conditional_systematic_resample(p, a_ref, rng)
        beta, th = model.propagate(t, prev.stack[a, 0], rng)
        stacks[k, :free, 0] = beta
        stacks[k, :free, 1:] = prev.stack[a, :L]
        thetas[k, :free] = th
        ancestors[k, :free] = a
        ancestors[k, free] = a_ref
        stacks[k, free, 0] = ref_beta[t]
        stacks[k, free, 1:] = prev.stack[a_ref, :L]
        thetas[k, free] = ref_theta[t]
        logw = model.log_obs(t, stacks[k, :, 0], thetas[k], stacks[k, :, 1:])
        p = normalize_log_weights(logw)
        ess[k] = 1.0 / np.sum(p * p)
        prev = ParticleSystem(stacks[k], thetas[k], logw, ancestors[k])

    j = int(rng.gen.choice(M, p=p))
    beta_out = np.array(ref_beta)
    theta_out = np.array(ref_theta)
    for k in range(n_steps - 1, -1, -1):
        beta_out[t0 + k] = stacks[k, j, 0]
        theta_out[t0 + k] = thetas[k, j]
        if k > 0:
            j = ancestors[k, j]
    for l in range(1, L + 1):
        beta_out[t0 - l] = stacks[0, j, l]
    if t0 - L > 0:
        beta_out[: t0 - L] = beta_out[t0 - L]
    if np.all(ess < 1.0 + 1e-9) and M > 1:
        log.warning("particle system fully degenerate at every step (ESS = 1)")
    out = StatePath.from_beta(spec, beta_out, theta_out)
    if return_diagnostics:
        return out, CPFDiagnostics(ess, switches)
    return out


def clamp_breached(path: StatePath) -> bool:
    return bool(np.any(np.abs(path.h) > H_LIMIT))
