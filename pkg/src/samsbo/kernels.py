"""Squared-exponential base kernel and its separable multi-task extension.

The multi-task covariance between task/input pairs factorizes as

    K((x, z), (x', z')) = Sigma[z, z'] * k(x, x'),

where ``k`` is a scalar anisotropic squared-exponential kernel and ``Sigma``
is a symmetric positive definite inter-task matrix with nonnegative entries
(intrinsic coregionalization).  Lipschitz constants are always taken over the
normalized unit hypercube, which is the input domain used throughout this
package after normalization.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

__all__ = [
    "KernelParams",
    "CorrelationMatrix",
    "se_kernel",
    "se_kernel_matrix",
    "multitask_kernel",
    "gram",
    "kernel_lipschitz",
    "kernel_lipschitz_grid",
    "multitask_lipschitz",
]

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True)
class KernelParams:
    """Hyperparameters of the squared-exponential kernel.

    ``signal_variance`` is the prior variance at zero distance, ``lengthscales``
    holds one positive scale per input dimension and ``noise_variance`` is the
    observation noise added to the Gram diagonal during inference.
    """

    signal_variance: float
    lengthscales: np.ndarray
    noise_variance: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        object.__setattr__(self, "noise_variance", float(self.noise_variance))
        if self.signal_variance <= 0.0:
            raise ValueError("signal_variance must be strictly positive")
        if ls.ndim != 1 or ls.size == 0 or np.any(ls <= 0.0):
            raise ValueError("lengthscales must be a vector of strictly positive reals")
        if self.noise_variance < 0.0:
            raise ValueError("noise_variance must be nonnegative")

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    def with_noise(self, noise_variance: float) -> "KernelParams":
        return KernelParams(self.signal_variance, self.lengthscales, noise_variance)


@dataclass(frozen=True)
class CorrelationMatrix:
    """Symmetric positive definite inter-task matrix with nonnegative entries.

    ``normalized=True`` additionally enforces a unit diagonal, the regime used
    with standardized outputs.  Instances are immutable and hashable through
    :meth:`key`, which makes deduplication of repeated MCMC samples cheap.
    """

    matrix: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        m = np.atleast_2d(m)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("correlation matrix must be square")
        if np.max(np.abs(m - m.T)) > SYMMETRY_TOL:
            raise ValueError("correlation matrix must be symmetric within 1e-12")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if np.min(m) < 0.0:
            raise ValueError("correlation matrix entries must be nonnegative")
        if np.min(np.linalg.eigvalsh(m)) <= 0.0:
            raise ValueError("correlation matrix must be positive definite")
        if self.normalized and np.max(np.abs(np.diag(m) - 1.0)) > 1e-9:
            raise ValueError("normalized correlation matrix must have unit diagonal")

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def key(self) -> bytes:
        return self.matrix.tobytes()

    @classmethod
    def identity(cls, u: int) -> "CorrelationMatrix":
        return cls(np.eye(u))

    @classmethod
    def two_task(cls, r: float) -> "CorrelationMatrix":
        return cls(np.array([[1.0, r], [r, 1.0]]))

    def offdiagonal(self) -> float:
        """Single off-diagonal entry, defined for the two-task case only."""
        if self.size != 2:
            raise ValueError("offdiagonal() requires a 2x2 matrix")
        return float(self.matrix[0, 1])


def _check_dims(x: np.ndarray, x_prime: np.ndarray, params: KernelParams) -> tuple[np.ndarray, np.ndarray]:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_prime = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != x_prime.shape or x.size != params.dim:
        raise ValueError(
            f"dimension mismatch: x {x.shape}, x' {x_prime.shape}, lengthscales ({params.dim},)"
        )
    return x, x_prime


def se_kernel(x: np.ndarray, x_prime: np.ndarray, params: KernelParams) -> float:
    """Squared-exponential kernel value sf2 * exp(-0.5 * sum(((x-x')/ell)^2))."""
    x, x_prime = _check_dims(x, x_prime, params)
    r = (x - x_prime) / params.lengthscales
    return float(params.signal_variance * np.exp(-0.5 * np.dot(r, r)))


def se_kernel_matrix(X: np.ndarray, Y: np.ndarray, params: KernelParams) -> np.ndarray:
    """Cross Gram matrix of the squared-exponential kernel for row stacks X, Y."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if X.shape[1] != params.dim or Y.shape[1] != params.dim:
        raise ValueError("input dimension does not match lengthscales")
    if X.shape[0] == 0 or Y.shape[0] == 0:
        return np.zeros((X.shape[0], Y.shape[0]))
    d2 = cdist(X / params.lengthscales, Y / params.lengthscales, metric="sqeuclidean")
    return params.signal_variance * np.exp(-0.5 * d2)


def multitask_kernel(
    x: np.ndarray,
    z: int,
    x_prime: np.ndarray,
    z_prime: int,
    sigma: CorrelationMatrix,
    params: KernelParams,
) -> float:
    """Separable covariance Sigma[z, z'] * k(x, x') with 1-based task indices."""
    u = sigma.size
    if not (1 <= z <= u and 1 <= z_prime <= u):
        raise ValueError(f"task indices must lie in 1..{u}")
    return float(sigma.matrix[z - 1, z_prime - 1]) * se_kernel(x, x_prime, params)


def gram(dataset, sigma: CorrelationMatrix, params: KernelParams) -> np.ndarray:
    """Multi-task Gram matrix of a dataset, entry (i, j) = Sigma[z_i, z_j] k(x_i, x_j).

    ``dataset`` only needs ``inputs`` (n x d) and ``tasks`` (length n, 1-based)
    attributes; see :class:`samsbo.gp.MultiTaskDataset`.
    """
    if dataset.inputs.shape[0] == 0:
        raise ValueError("gram requires a nonempty dataset")
    zi = np.asarray(dataset.tasks, dtype=int) - 1
    if zi.min() < 0 or zi.max() >= sigma.size:
        raise ValueError(f"task indices must lie in 1..{sigma.size}")
    base = se_kernel_matrix(dataset.inputs, dataset.inputs, params)
    return sigma.matrix[np.ix_(zi, zi)] * base


def kernel_lipschitz(params: KernelParams, norm_p: float = np.inf) -> float:
    """Lipschitz constant of the squared-exponential kernel in its first argument.

    Bounds |k(x, x') - k(y, x')| <= L_k * ||x - y||_p over the unit hypercube.
    Derived from the supremum of the dual norm of the kernel gradient; the
    gradient magnitude t * exp(-t^2/2) peaks at t = 1 with value 1/sqrt(e).
    """
    sf2 = params.signal_variance
    lmin = float(np.min(params.lengthscales))
    inv_sqrt_e = 1.0 / np.sqrt(np.e)
    if norm_p == np.inf:
        # dual norm is the 1-norm; the worst case spreads over all coordinates
        return sf2 * np.sqrt(params.dim) * inv_sqrt_e / lmin
    if norm_p in (1, 2):
        return sf2 * inv_sqrt_e / lmin
    raise ValueError("norm_p must be 1, 2 or inf")


def kernel_lipschitz_grid(
    params: KernelParams,
    norm_p: float = np.inf,
    n_pairs: int = 10_000,
    rng: np.random.Generator | None = None,
) -> float:
    """Numerical fallback: maximize the difference quotient over random pairs.

    Returns max |k(x, x') - k(y, x')| / ||x - y||_p for points drawn uniformly
    from the unit cube.  Lower-bounds the true constant, so it is used to
    sanity-check the analytic bound of :func:`kernel_lipschitz`.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    d = params.dim
    x = rng.random((n_pairs, d))
    y = rng.random((n_pairs, d))
    x_ref = rng.random((n_pairs, d))
    kx = _se_rowwise(x, x_ref, params)
    ky = _se_rowwise(y, x_ref, params)
    dist = np.linalg.norm(x - y, ord=norm_p, axis=1)
    good = dist > 1e-12
    return float(np.max(np.abs(kx - ky)[good] / dist[good]))


def _se_rowwise(X: np.ndarray, Y: np.ndarray, params: KernelParams) -> np.ndarray:
    r = (X - Y) / params.lengthscales
    return params.signal_variance * np.exp(-0.5 * np.sum(r * r, axis=1))


def multitask_lipschitz(sigma: CorrelationMatrix, l_k: float) -> float:
    """Multi-task kernel Lipschitz constant q * L_k with q the largest diagonal entry."""
    return float(np.max(np.diag(sigma.matrix))) * l_k
