"""Truncated Tikhonov regularization and its exact expected-error model.

Includes the combined (truncation level, alpha) worst-case bound for
``sigma_j = 1/j`` spectra, the mode-wise expected squared error of the
noisy reconstruction, the alpha threshold above which truncating exactly
at the intrinsic dimension is optimal, and reconstruction restricted to an
arbitrary orthonormal basis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .datagen import Basis
from .linop import DenseOperator, compute_svd


@dataclass(frozen=True)
class TruncatedScheme:
    """Truncation level plus regularization strength; alpha = 0 is plain
    truncated SVD."""

    m: int
    alpha: float

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("truncation level must be nonnegative")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")


def truncated_reconstruct(op: DenseOperator, y: np.ndarray,
                          scheme: TruncatedScheme) -> np.ndarray:
    """Filtered reconstruction restricted to the first ``scheme.m`` modes."""
    svd = compute_svd(op)
    if scheme.m > svd.n_modes:
        raise ValueError("truncation level exceeds the number of singular modes")
    y = np.asarray(y, dtype=float)
    if y.shape[0] != op.m:
        raise ValueError(f"expected data of length {op.m}, got {y.shape[0]}")
    if scheme.m == 0:
        return np.zeros(op.n)
    s = svd.sigma[:scheme.m]
    if scheme.alpha == 0.0 and s[-1] <= 0.0:
        raise ValueError("truncation level exceeds the operator rank")
    coeff = s / (s * s + scheme.alpha) * (svd.left_vectors[:, :scheme.m].T @ y)
    return svd.right_vectors[:, :scheme.m] @ coeff


def truncated_wc_bound(m: int, n_dim: int, alpha: float, delta: float,
                       rho: float) -> float:
    """Worst-case bound for the truncated scheme under a ``1/j`` spectrum.

    Requires m >= n_dim.  Data and approximation terms switch branches at
    sqrt(alpha) = 1/m and sqrt(alpha) = 1/(2 n_dim) respectively; above both
    kinks the bound coincides with the unrestricted closed form.
    """
    if n_dim < 1 or m < n_dim:
        raise ValueError("need m >= n_dim >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    root = math.sqrt(alpha)
    if root <= 1.0 / m:
        data = m * delta / (1.0 + alpha * m * m)
    else:
        data = delta / (2.0 * root)
    if root <= 1.0 / (2.0 * n_dim):
        approx = n_dim * alpha * rho
    else:
        approx = 0.5 * root * rho
    return data + approx


@dataclass(frozen=True)
class ExpectedErrorModel:
    """Mode-wise model of the expected squared reconstruction error.

    ``c`` holds the truth coefficients on the first ``len(c)`` right
    singular vectors, ``beta2`` the per-mode noise second moments, and
    ``sigma`` the singular values; all expansions are in the Euclidean norm
    of the singular basis, which keeps the identities exact.
    """

    c: np.ndarray
    beta2: np.ndarray
    sigma: np.ndarray
    alpha: float

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        beta2 = np.asarray(self.beta2, dtype=float)
        sigma = np.asarray(self.sigma, dtype=float)
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if beta2.shape != sigma.shape:
            raise ValueError("beta2 and sigma must cover the same modes")
        if c.size > sigma.size:
            raise ValueError("more truth coefficients than modes")
        if (beta2 < 0).any() or (sigma < 0).any():
            raise ValueError("beta2 and sigma must be nonnegative")
        for arr in (c, beta2, sigma):
            arr.setflags(write=False)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "beta2", beta2)
        object.__setattr__(self, "sigma", sigma)

    @property
    def n_dim(self) -> int:
        return self.c.size

    @property
    def n_modes(self) -> int:
        return self.sigma.size

    @property
    def a_factors(self) -> np.ndarray:
        return self.alpha / (self.sigma ** 2 + self.alpha)

    @property
    def b_factors(self) -> np.ndarray:
        return self.sigma / (self.sigma ** 2 + self.alpha)


def expected_sq_error(model: ExpectedErrorModel, m: int) -> float:
    """Exact expected squared error of the level-``m`` truncated scheme.

    Retained truth modes contribute shrinkage plus noise, retained modes
    beyond the truth contribute pure noise, and truncated truth modes
    contribute their full squared coefficient.
    """
    if m < 0 or m > model.n_modes:
        raise ValueError("truncation level out of range")
    n = model.n_dim
    a2 = model.a_factors ** 2
    b2 = model.b_factors ** 2
    both = min(m, n)
    total = float(np.sum(a2[:both] * model.c[:both] ** 2 + b2[:both] * model.beta2[:both]))
    if m > n:
        total += float(np.sum(b2[n:m] * model.beta2[n:m]))
    if n > m:
        total += float(np.sum(model.c[m:n] ** 2))
    return total


def alpha_threshold(model: ExpectedErrorModel) -> float:
    """Smallest alpha above which the expected error is nonincreasing below
    the truth dimension, so its argmin over truncation levels is exact."""
    if (model.c == 0).any():
        raise ValueError("all truth coefficients must be nonzero")
    n = model.n_dim
    gaps = model.beta2[:n] / model.c ** 2 - model.sigma[:n] ** 2
    return max(0.0, float(gaps.max())) / 2.0


def argmin_expected_level(model: ExpectedErrorModel, m_grid) -> int:
    """Level minimizing the expected squared error; smallest level wins ties
    within an absolute 1e-12 tolerance."""
    m_grid = sorted(set(int(m) for m in m_grid))
    if not m_grid:
        raise ValueError("m_grid must be nonempty")
    values = [expected_sq_error(model, m) for m in m_grid]
    best = min(values)
    for m, val in zip(m_grid, values):
        if val <= best + 1e-12:
            return m
    return m_grid[0]


@dataclass(frozen=True)
class SubspaceProblem:
    """Reconstruction basis block and its composition with the operator."""

    basis_matrix: np.ndarray
    composed: np.ndarray

    @classmethod
    def build(cls, op: DenseOperator, basis: Basis, m: int) -> "SubspaceProblem":
        if m < 0 or m > basis.size:
            raise ValueError("basis truncation level out of range")
        b = basis.vectors[:, :m]
        return cls(basis_matrix=b, composed=op.entries @ b)


def subspace_solver(op: DenseOperator, basis: Basis, m: int, alpha: float):
    """Prefactored map from data to the basis-restricted reconstruction.

    The returned callable accepts a data vector or an (m_data, k) stack of
    columns.  Raises for a singular restricted system, which can only occur
    at alpha = 0 with a rank-deficient composed operator.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    problem = SubspaceProblem.build(op, basis, m)
    b, composed = problem.basis_matrix, problem.composed
    if m == 0:
        return lambda y: np.zeros((op.n,) + np.shape(y)[1:])
    gram = composed.T @ composed + alpha * (b.T @ b)
    try:
        factor = scipy.linalg.cho_factor(gram)
    except scipy.linalg.LinAlgError as exc:
        raise ValueError("restricted normal matrix is singular") from exc

    def solve(y):
        y = np.asarray(y, dtype=float)
        return b @ scipy.linalg.cho_solve(factor, composed.T @ y)

    return solve


def subspace_reconstruct(op: DenseOperator, basis: Basis, m: int,
                         y: np.ndarray, alpha: float) -> np.ndarray:
    """Tikhonov reconstruction restricted to the first ``m`` basis vectors.

    For the singular-vector basis this coincides with the truncated scheme.
    """
    y = np.asarray(y, dtype=float)
    if y.shape[0] != op.m:
        raise ValueError(f"expected data of length {op.m}, got {y.shape[0]}")
    return subspace_solver(op, basis, m, alpha)(y)
