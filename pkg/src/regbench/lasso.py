"""Generalized-LASSO reconstruction with a fixed sparsifying transform.

Minimizes ``||Ax - y||_2^2 + alpha ||Wx||_1`` (no 1/2 on the data term, so
the optimality relation carries a factor 2) by a primal-dual splitting
scheme: explicit gradient steps on the quadratic, proximal steps on the
l1 term composed with W.  Ships KKT residuals, the dual subgradient bound,
solution-set invariance probing, alpha fine-tuning by grid search with
spline interpolation, and empirical stability estimation of the solution
map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .datagen import rng_for
from .linop import DenseOperator, operator_norm, weighted_norm


@dataclass(frozen=True)
class SparsifyingTransform:
    """Row-sparsifying matrix W; one of identity, 1-D difference, 2-D image
    gradient, or a custom externally supplied matrix."""

    kind: str
    matrix: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(np.asarray(self.matrix, dtype=float))
        if w.ndim != 2:
            raise ValueError("transform matrix must be 2-D")
        w.setflags(write=False)
        object.__setattr__(self, "matrix", w)

    @classmethod
    def identity(cls, n: int) -> "SparsifyingTransform":
        return cls("identity", np.eye(n))

    @classmethod
    def diff1d(cls, n: int) -> "SparsifyingTransform":
        """Forward differences of adjacent entries, (n-1) x n."""
        if n < 2:
            raise ValueError("need at least two entries for differences")
        w = np.zeros((n - 1, n))
        idx = np.arange(n - 1)
        w[idx, idx] = -1.0
        w[idx, idx + 1] = 1.0
        return cls("diff1d", w)

    @classmethod
    def grad2d(cls, side: int) -> "SparsifyingTransform":
        """Stacked horizontal and vertical first differences of a square
        image flattened row-major."""
        if side < 2:
            raise ValueError("need at least a 2x2 image")
        n = side * side
        rows = []
        horiz = np.zeros((side * (side - 1), n))
        k = 0
        for r in range(side):
            for c in range(side - 1):
                horiz[k, r * side + c] = -1.0
                horiz[k, r * side + c + 1] = 1.0
                k += 1
        vert = np.zeros((side * (side - 1), n))
        k = 0
        for r in range(side - 1):
            for c in range(side):
                vert[k, r * side + c] = -1.0
                vert[k, (r + 1) * side + c] = 1.0
                k += 1
        rows = np.vstack([horiz, vert])
        return cls("grad2d", rows)

    @classmethod
    def custom(cls, matrix: np.ndarray) -> "SparsifyingTransform":
        return cls("custom", matrix)


@dataclass(frozen=True)
class LassoProblem:
    operator: DenseOperator
    y: np.ndarray
    alpha: float
    transform: SparsifyingTransform

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if y.shape[0] != self.operator.m:
            raise ValueError("data length does not match the operator")
        if self.transform.matrix.shape[1] != self.operator.n:
            raise ValueError("transform width does not match the operator")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    def objective(self, x: np.ndarray) -> float:
        r = self.operator.entries @ x - self.y
        return float(r @ r + self.alpha * np.abs(self.transform.matrix @ x).sum())


@dataclass(frozen=True)
class PdSolution:
    """Converged primal-dual pair with diagnostics.

    ``gamma`` lives in the subdifferential of the l1 norm at Wx (entries in
    [-1, 1], equal to the sign on the support); ``support`` lists the rows
    of W with significantly nonzero response.
    """

    x: np.ndarray
    gamma: np.ndarray
    iterations: int
    kkt_residual: float
    objective: float
    objective_trace: np.ndarray = field(repr=False)
    support: np.ndarray = field(repr=False)


class ConvergenceError(RuntimeError):
    """Solver hit the iteration cap; ``last`` carries the final iterate."""

    def __init__(self, message: str, last: PdSolution):
        super().__init__(message)
        self.last = last


def _support(wx: np.ndarray, scale: float) -> np.ndarray:
    return np.nonzero(np.abs(wx) > 1e-6 * (1.0 + scale))[0]


def kkt_residual(problem: LassoProblem, x: np.ndarray, gamma: np.ndarray) -> float:
    """First-order optimality violation ``||2 A^T (Ax - y) + alpha W^T g||``.

    Before evaluating, the subgradient is projected onto the face selected
    by the sign pattern of Wx: it is pinned to the sign on the support and
    clipped to [-1, 1] elsewhere.
    """
    a = problem.operator.entries
    w = problem.transform.matrix
    wx = w @ x
    g = np.clip(np.asarray(gamma, dtype=float), -1.0, 1.0)
    on = _support(wx, float(np.abs(wx).max(initial=0.0)))
    g[on] = np.sign(wx[on])
    grad = 2.0 * (a.T @ (a @ x - problem.y))
    return float(np.linalg.norm(grad + problem.alpha * (w.T @ g)))


def solve(problem: LassoProblem, tol: float = 1e-8, max_iter: int = 20000,
          x0: np.ndarray | None = None) -> PdSolution:
    """Primal-dual splitting for the generalized LASSO.

    Step sizes satisfy ``tau * (L/2 + s ||W||^2) <= 1`` with ``L = 2||A||^2``.
    Terminates once the relative fixed-point residual drops below ``tol``;
    hitting ``max_iter`` first raises :class:`ConvergenceError` carrying the
    last iterate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    a = problem.operator.entries
    w = problem.transform.matrix
    y, alpha = problem.y, problem.alpha

    lip = 2.0 * operator_norm(problem.operator) ** 2
    w_norm = float(np.linalg.norm(w, 2)) if w.size else 0.0
    s = 1.0 / w_norm if w_norm > 0 else 1.0
    tau = 1.0 / (lip / 2.0 + s * w_norm ** 2) if (lip > 0 or w_norm > 0) else 1.0

    x = np.zeros(problem.operator.n) if x0 is None else np.asarray(x0, dtype=float).copy()
    dual = np.zeros(w.shape[0])
    trace = np.empty(max_iter)
    rel = math.inf
    iterations = 0
    for k in range(max_iter):
        grad = 2.0 * (a.T @ (a @ x - y))
        x_new = x - tau * (grad + w.T @ dual)
        dual_new = np.clip(dual + s * (w @ (2.0 * x_new - x)), -alpha, alpha)
        step = math.hypot(np.linalg.norm(x_new - x) / tau,
                          np.linalg.norm(dual_new - dual) / s)
        scale = 1.0 + math.hypot(np.linalg.norm(x_new), np.linalg.norm(dual_new))
        rel = step / scale
        x, dual = x_new, dual_new
        trace[k] = problem.objective(x)
        iterations = k + 1
        if rel <= tol:
            break

    gamma = dual / alpha
    solution = PdSolution(
        x=x,
        gamma=gamma,
        iterations=iterations,
        kkt_residual=kkt_residual(problem, x, gamma),
        objective=problem.objective(x),
        objective_trace=trace[:iterations].copy(),
        support=_support(w @ x, float(np.abs(w @ x).max(initial=0.0))),
    )
    if rel > tol:
        raise ConvergenceError(
            f"no convergence after {max_iter} iterations (residual {rel:.3e})",
            solution)
    return solution


def subgradient_bound_check(problem: LassoProblem, solution: PdSolution) -> bool:
    """Whether the returned dual satisfies
    ``||W^T gamma|| <= (2/alpha) ||A|| ||y||`` (with 1e-8 slack)."""
    lhs = float(np.linalg.norm(problem.transform.matrix.T @ solution.gamma))
    rhs = 2.0 / problem.alpha * operator_norm(problem.operator) * float(np.linalg.norm(problem.y))
    return lhs <= rhs + 1e-8


@dataclass(frozen=True)
class InvarianceReport:
    """Spread of the data image and the l1 value across restarted solves."""

    max_deviation_ax: float
    max_deviation_l1: float
    tolerance: float
    passed: bool


def solution_invariance_check(problem: LassoProblem, restarts: int, seed: int,
                              tol: float = 1e-8, max_iter: int = 20000) -> InvarianceReport:
    """Solve from several random starts; all minimizers must share the value
    of A x and of ||W x||_1 even when x itself is non-unique."""
    if restarts < 2:
        raise ValueError("need at least two restarts")
    a = problem.operator.entries
    w = problem.transform.matrix
    images, l1s = [], []
    for r in range(restarts):
        x0 = rng_for(seed, r).standard_normal(problem.operator.n)
        sol = solve(problem, tol=tol, max_iter=max_iter, x0=x0)
        images.append(a @ sol.x)
        l1s.append(float(np.abs(w @ sol.x).sum()))
    dev_ax = max(
        float(np.linalg.norm(images[i] - images[j]))
        for i in range(restarts) for j in range(i + 1, restarts)
    )
    dev_l1 = max(
        abs(l1s[i] - l1s[j])
        for i in range(restarts) for j in range(i + 1, restarts)
    )
    threshold = 1e-6 * (1.0 + float(np.linalg.norm(problem.y)))
    return InvarianceReport(max_deviation_ax=dev_ax, max_deviation_l1=dev_l1,
                            tolerance=threshold,
                            passed=dev_ax <= threshold and dev_l1 <= threshold)


@dataclass(frozen=True)
class GridSearchResult:
    alpha_star: float
    errors: tuple[tuple[float, float], ...]
    failures: tuple[tuple[float, str], ...]


def grid_search_alpha(op: DenseOperator, transform: SparsifyingTransform,
                      tuples, grid, tol: float = 1e-8,
                      max_iter: int = 20000) -> GridSearchResult:
    """Pick the grid alpha minimizing the mean reconstruction error over the
    supplied (truth, data) tuples.  Failed solves skip their cell; ties and
    duplicate entries resolve to the earliest grid position."""
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("alpha grid must be nonempty")
    if not tuples:
        raise ValueError("need at least one (x, y) tuple")
    errors, failures = [], []
    best_alpha, best_err = None, math.inf
    for alpha in grid:
        try:
            errs = [
                weighted_norm(solve(LassoProblem(op, y, alpha, transform),
                                    tol=tol, max_iter=max_iter).x - np.asarray(x, dtype=float))
                for x, y in tuples
            ]
        except ConvergenceError as exc:
            failures.append((alpha, str(exc)))
            continue
        mean_err = float(np.mean(errs))
        errors.append((alpha, mean_err))
        if mean_err < best_err:
            best_alpha, best_err = alpha, mean_err
    if best_alpha is None:
        raise RuntimeError("every grid cell failed to converge")
    return GridSearchResult(alpha_star=best_alpha, errors=tuple(errors),
                            failures=tuple(failures))


@dataclass(frozen=True)
class AlphaRule:
    """Piecewise-linear noise-level-to-alpha rule with constant tails."""

    knots: tuple[tuple[float, float], ...]

    def __post_init__(self):
        knots = tuple((float(d), float(a)) for d, a in self.knots)
        if not knots:
            raise ValueError("rule needs at least one knot")
        deltas = [d for d, _ in knots]
        if any(b <= a for a, b in zip(deltas, deltas[1:])):
            raise ValueError("knots must be strictly increasing in delta")
        if any(a <= 0 for _, a in knots):
            raise ValueError("knot alphas must be positive")
        object.__setattr__(self, "knots", knots)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("delta,alpha\n")
            for d, a in self.knots:
                fh.write(f"{d!r},{a!r}\n")

    @classmethod
    def from_csv(cls, path) -> "AlphaRule":
        knots = []
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "delta,alpha":
                raise ValueError(f"{path}: unexpected header {header!r}")
            for line in fh:
                if line.strip():
                    d, a = line.split(",")
                    knots.append((float(d), float(a)))
        return cls(tuple(knots))


def alpha_for_delta(rule: AlphaRule, delta: float) -> float:
    """Interpolate the rule at ``delta``; clamps to the boundary knots."""
    deltas = np.array([d for d, _ in rule.knots])
    alphas = np.array([a for _, a in rule.knots])
    return float(np.interp(delta, deltas, alphas))


def empirical_lipschitz(problem: LassoProblem, n_probes: int, radius: float,
                        seed: int, tol: float = 1e-10,
                        max_iter: int = 50000) -> float:
    """Largest observed solution-change rate over random data perturbations.

    Probes the solution map at ``y + r * direction`` with unit Gaussian
    directions and radii in [radius/2, radius]; reports the max ratio of
    solution change to data change.  This is an empirical lower estimate of
    the stability constant, not an upper bound.
    """
    if n_probes < 1 or radius <= 0:
        raise ValueError("need n_probes >= 1 and radius > 0")
    base = solve(problem, tol=tol, max_iter=max_iter)
    worst = 0.0
    for p in range(n_probes):
        rng = rng_for(seed, p)
        direction = rng.standard_normal(problem.y.size)
        direction /= np.linalg.norm(direction)
        r = radius * rng.uniform(0.5, 1.0)
        shifted = LassoProblem(problem.operator, problem.y + r * direction,
                               problem.alpha, problem.transform)
        sol = solve(shifted, tol=tol, max_iter=max_iter)
        worst = max(worst, float(np.linalg.norm(sol.x - base.x)) / r)
    return worst
