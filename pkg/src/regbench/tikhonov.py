"""Tikhonov reconstruction, closed-form worst-case bounds, parameter rules.

The worst-case bound, the mismatch ratio, and the subspace-refined bound
are evaluated exactly from their piecewise closed forms; reconstruction is
done through the SVD filter with an independent direct-solve path for
cross-checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .linop import DenseOperator, compute_svd


class _ZeroReconstruction:
    """Sentinel for the parameter rule when the noise level exceeds the
    source bound: the optimal scheme returns the zero vector.  Downstream
    code must branch on it; it never enters float arithmetic."""

    __slots__ = ()

    def __repr__(self):
        return "ZERO_RECONSTRUCTION"


ZERO_RECONSTRUCTION = _ZeroReconstruction()


def filter_value(sigma, alpha):
    """Spectral filter ``sigma^2 / (sigma^2 + alpha)``; accepts arrays."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    sigma = np.asarray(sigma, dtype=float)
    out = sigma * sigma / (sigma * sigma + alpha)
    return float(out) if out.ndim == 0 else out


def reconstruct(op: DenseOperator, y: np.ndarray, alpha: float,
                method: str = "svd") -> np.ndarray:
    """Regularized reconstruction ``(A*A + alpha I)^-1 A* y``.

    ``method="svd"`` sums the filtered singular expansion (reference path);
    ``method="direct"`` solves the normal equations through a Cholesky
    factorization.  The two agree to ~1e-8 and are cross-checked in tests.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    y = np.asarray(y, dtype=float)
    if y.shape[0] != op.m:
        raise ValueError(f"expected data of length {op.m}, got {y.shape[0]}")
    if method == "svd":
        svd = compute_svd(op)
        s = svd.sigma
        coeff = s / (s * s + alpha) * (svd.left_vectors.T @ y)
        return svd.right_vectors @ coeff
    if method == "direct":
        a = op.entries
        gram = a.T @ a + alpha * np.eye(op.n)
        factor = scipy.linalg.cho_factor(gram)
        return scipy.linalg.cho_solve(factor, a.T @ y)
    raise ValueError(f"unknown method {method!r}")


def wc_bound(alpha: float, delta: float, rho: float) -> float:
    """Closed-form worst-case reconstruction error for noise level ``delta``
    and source constant ``rho`` at regularization strength ``alpha``."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if delta < 0 or rho <= 0:
        raise ValueError("need delta >= 0 and rho > 0")
    if alpha <= 1.0:
        return 0.5 * (delta / math.sqrt(alpha) + math.sqrt(alpha) * rho)
    return (delta + alpha * rho) / (1.0 + alpha)


@dataclass(frozen=True)
class WcBound:
    alpha: float
    delta: float
    rho: float

    def value(self) -> float:
        return wc_bound(self.alpha, self.delta, self.rho)


def optimal_alpha(delta: float, rho: float):
    """A-priori rule ``alpha = delta / rho``; returns the zero-reconstruction
    sentinel once the noise level exceeds the source bound."""
    if delta < 0 or rho <= 0:
        raise ValueError("need delta >= 0 and rho > 0")
    if delta > rho:
        return ZERO_RECONSTRUCTION
    return delta / rho


@dataclass(frozen=True)
class ParamRule:
    """Noise-level-to-alpha rule parameterized by the source constant."""

    rho: float

    def alpha_for(self, delta: float):
        return optimal_alpha(delta, self.rho)


def relative_wc(delta_bar: float, delta: float, rho: float) -> float:
    """Worst-case error ratio of the rule tuned at ``delta_bar`` applied at
    ``delta``, relative to the optimally tuned rule.

    Only the regime where both induced regularization strengths lie in
    (0, 1) is covered; anything else raises.
    """
    for name, level in (("delta_bar", delta_bar), ("delta", delta)):
        if not 0.0 < level / rho < 1.0:
            raise ValueError(f"{name} must give a regularization strength in (0, 1)")
    return 0.5 * (math.sqrt(delta / delta_bar) + math.sqrt(delta_bar / delta))


def subspace_wc_bound(alpha: float, delta: float, rho: float, c: float,
                      n_dim: int) -> float:
    """Refined worst-case bound when truths live in an n_dim-dimensional
    subspace whose restricted operator obeys the ``c * n_dim`` norm bound."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    if c <= 0 or n_dim < 1:
        raise ValueError("need c > 0 and n_dim >= 1")
    root = math.sqrt(alpha)
    data = delta / (2.0 * root)
    if root > 1.0 / (2.0 * c * n_dim):
        return data + 0.5 * root * rho
    return data + alpha * c * n_dim * rho


@dataclass(frozen=True)
class SubspaceWcBound:
    alpha: float
    delta: float
    rho: float
    c: float
    n_dim: int

    def value(self) -> float:
        return subspace_wc_bound(self.alpha, self.delta, self.rho, self.c, self.n_dim)
