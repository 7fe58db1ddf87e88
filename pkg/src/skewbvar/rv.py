"""Random variates and density primitives shared by the samplers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special


class CholeskyError(np.linalg.LinAlgError):
    def __init__(self, what: str, min_eig: float):
        self.min_eig = min_eig
        super().__init__(f"{what} is not positive definite (smallest eigenvalue {min_eig:.3e})")


@dataclass
class RngHandle:
    """Reproducible, splittable random stream.

    ``(seed, stream)`` fully determines the draw sequence. Child handles are
    derived through :class:`numpy.random.SeedSequence` spawn keys, so every Gibbs
    block, origin or worker can own an independent stream.
    """

    seed: int
    stream: tuple = ()
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if isinstance(self.stream, int):
            self.stream = (self.stream,)
        self.stream = tuple(int(s) for s in self.stream)
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.stream)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    @property
    def gen(self) -> np.random.Generator:
        return self._gen

    def child(self, *keys: int) -> "RngHandle":
        return RngHandle(self.seed, self.stream + tuple(int(k) for k in keys))

    # thin conveniences
    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def integers(self, high: int, size=None) -> np.ndarray:
        return self._gen.integers(0, high, size)


def as_rng(rng) -> RngHandle:
    if isinstance(rng, RngHandle):
        return rng
    if rng is None:
        return RngHandle(0)
    return RngHandle(int(rng))


def safe_cholesky(cov: np.ndarray, what: str = "covariance") -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise CholeskyError(what, float(np.linalg.eigvalsh(0.5 * (cov + cov.T)).min())) from None


def draw_mvn(mean, cov, rng: RngHandle) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    L = safe_cholesky(cov)
    return mean + L @ rng.normal(mean.shape[0])


def draw_mvn_precision(precision: np.ndarray, rhs: np.ndarray, rng: RngHandle) -> tuple[np.ndarray, np.ndarray]:
    """Draw from N(precision^{-1} rhs, precision^{-1}) without forming the inverse.

    Returns ``(draw, mean)``.
    """
    U = safe_cholesky(0.5 * (precision + precision.T), "posterior precision")
    from scipy.linalg import cho_solve, solve_triangular

    mean = cho_solve((U, True), rhs)
    z = rng.normal(rhs.shape[0])
    return mean + solve_triangular(U.T, z, lower=False), mean


def draw_wishart(scale: np.ndarray, dof: float, rng: RngHandle) -> np.ndarray:
    """Bartlett decomposition: W = L C C' L' with L = chol(scale)."""
    k = scale.shape[0]
    L = safe_cholesky(scale, "Wishart scale")
    C = np.zeros((k, k))
    g = rng.gen
    for i in range(k):
        C[i, i] = np.sqrt(g.chisquare(dof - i))
        C[i, :i] = g.standard_normal(i)
    LC = L @ C
    return LC @ LC.T


def draw_inverse_wishart(scale, dof, rng: RngHandle) -> np.ndarray:
    """Draw from IW(scale, dof), i.e. the inverse of a Wishart(scale^{-1}, dof) draw."""
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    k = scale.shape[0]
    if dof <= k - 1:
        raise ValueError(f"inverse Wishart needs dof > k - 1 (dof={dof}, k={k})")
    scale_inv = np.linalg.inv(safe_cholesky(scale, "inverse Wishart scale"))
    scale_inv = scale_inv.T @ scale_inv
    W = draw_wishart(0.5 * (scale_inv + scale_inv.T), dof, rng)
    # invert through the Cholesky factor of W to stay symmetric
    Lw_inv = np.linalg.inv(safe_cholesky(W, "Wishart draw"))
    out = Lw_inv.T @ Lw_inv
    return 0.5 * (out + out.T)


def draw_skew_innovation(d, h, A, rng: RngHandle) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Structural skew-normal innovation ``E = d * |Theta| + e``.

    ``A`` is accepted for signature symmetry with the observation equation; the
    observation-space innovation ``A^{-1} E`` is formed by callers.
    """
    d = np.asarray(d, dtype=float)
    h = np.asarray(h, dtype=float)
    A = np.asarray(A, dtype=float)
    if A.shape != (d.shape[-1], d.shape[-1]):
        raise ValueError("A must be N x N")
    theta_parent = rng.normal(d.shape)
    tau = np.abs(theta_parent)
    e = np.exp(0.5 * h) * rng.normal(d.shape)
    return d * tau + e, tau, theta_parent


_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def std_normal_pdf(z):
    z = np.asarray(z, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def std_normal_cdf(z):
    return special.ndtr(np.asarray(z, dtype=float))


def half_normal_mean() -> float:
    return float(np.sqrt(2.0 / np.pi))
