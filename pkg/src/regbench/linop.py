"""Dense linear operators, singular systems, weighted norms, and benchmarks.

Everything here is plain float64 dense algebra.  Operators are immutable
after construction; the singular value decomposition is computed once,
sign-fixed for reproducibility, and cached on the operator.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"RGB1"

_HEADER = struct.Struct("<QQ")
_SVD_HEADER = struct.Struct("<QQQ")


def weighted_norm(v: np.ndarray) -> float:
    """Dimension-weighted Euclidean norm, ``sqrt(mean(v_i^2))``.

    This is the discretized L2 norm used for reporting errors, noise
    levels, and source constants.
    """
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return 0.0
    return float(np.linalg.norm(v) / math.sqrt(v.size))


@dataclass(frozen=True)
class WeightedNorm:
    """Norm functional ``w -> dimension**-0.5 * ||w||_2`` on R^dimension."""

    dimension: int

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")

    def __call__(self, v: np.ndarray) -> float:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dimension,):
            raise ValueError(f"expected vector of length {self.dimension}, got shape {v.shape}")
        return weighted_norm(v)


@dataclass(frozen=True)
class SvdSystem:
    """Full singular system: ``A v_j = sigma_j u_j`` with orthonormal columns.

    ``sigma`` is sorted nonincreasing; each right vector is oriented so its
    first significant entry is positive (the paired left vector is flipped
    with it), which makes repeated computations bit-identical.
    """

    sigma: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray

    def __post_init__(self):
        for arr in (self.sigma, self.left_vectors, self.right_vectors):
            arr.setflags(write=False)

    @property
    def n_modes(self) -> int:
        return self.sigma.size


@dataclass
class DenseOperator:
    """An m-by-n real operator stored densely (row-major)."""

    entries: np.ndarray
    spectral_normalized: bool = False
    _svd: SvdSystem | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        a = np.ascontiguousarray(np.asarray(self.entries, dtype=float))
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError("operator entries must form a nonempty 2-D matrix")
        a.setflags(write=False)
        self.entries = a

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


def _orient_columns(vectors: np.ndarray, *paired: np.ndarray) -> None:
    """Flip column signs in place so each column's first significant entry
    is positive; paired arrays are flipped along with it."""
    for j in range(vectors.shape[1]):
        col = vectors[:, j]
        scale = np.abs(col).max()
        if scale == 0.0:
            continue
        nz = np.nonzero(np.abs(col) > 1e-12 * scale)[0]
        if nz.size and col[nz[0]] < 0.0:
            vectors[:, j] = -col
            for other in paired:
                other[:, j] = -other[:, j]


def compute_svd(op: DenseOperator) -> SvdSystem:
    """Deterministic full SVD of ``op``, cached on the operator.

    Singular values are sorted nonincreasing; right vectors carry the sign
    convention of :func:`_orient_columns`.  Raises on non-finite entries.
    """
    if op._svd is not None:
        return op._svd
    a = op.entries
    if not np.isfinite(a).all():
        raise ValueError("operator has non-finite entries")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    v = vt.T.copy()
    u = u.copy()
    _orient_columns(v, u)
    svd = SvdSystem(sigma=s, left_vectors=u, right_vectors=v)
    op._svd = svd
    return svd


def operator_norm(op: DenseOperator) -> float:
    """Spectral norm (largest singular value)."""
    return float(compute_svd(op).sigma[0])


def apply(op: DenseOperator, x: np.ndarray) -> np.ndarray:
    """Forward map ``A x``."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != op.n:
        raise ValueError(f"expected input of length {op.n}, got {x.shape[0]}")
    return op.entries @ x

def apply_adjoint(op: DenseOperator, y: np.ndarray) -> np.ndarray:
    """Adjoint map ``A* y`` in the Euclidean inner product (transpose)."""
    y = np.asarray(y, dtype=float)
    if y.shape[0] != op.m:
        raise ValueError(f"expected input of length {op.m}, got {y.shape[0]}")
    return op.entries.T @ y


def pinv_adjoint_apply(op: DenseOperator, x: np.ndarray, rel_tol: float = 1e-12) -> np.ndarray:
    """Apply the pseudoinverse of the adjoint: ``(A*)^+ x``.

    Modes with ``sigma_j <= rel_tol * sigma_1`` are truncated, never
    inverted, so the map is well defined for rank-deficient operators.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[0] != op.n:
        raise ValueError(f"expected input of length {op.n}, got {x.shape[0]}")
    svd = compute_svd(op)
    if svd.sigma[0] == 0.0:
        return np.zeros(op.m)
    keep = svd.sigma > rel_tol * svd.sigma[0]
    coeff = (svd.right_vectors[:, keep].T @ x) / svd.sigma[keep]
    return svd.left_vectors[:, keep] @ coeff


def spectral_normalize(op: DenseOperator) -> DenseOperator:
    """Divide the operator by its spectral norm.  Idempotent up to 1e-12."""
    top = operator_norm(op)
    if top == 0.0:
        raise ValueError("cannot normalize the zero operator")
    return DenseOperator(op.entries / top, spectral_normalized=True)


def integration_matrix(n: int) -> np.ndarray:
    """Raw (unnormalized) cumulative-sum matrix: lower-triangular ones."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return np.tril(np.ones((n, n)))


def build_integration_operator(n: int) -> DenseOperator:
    """Discrete integration operator on R^n, scaled to spectral norm one."""
    return spectral_normalize(DenseOperator(integration_matrix(n)))


def _ray_trace(point_x: float, point_y: float, dir_x: float, dir_y: float,
               side: int, row: np.ndarray) -> None:
    """Accumulate exact ray/pixel intersection lengths into ``row``.

    The pixel grid covers [-side/2, side/2]^2 with unit cells; pixel (i, j)
    occupies x in [i - side/2, i + 1 - side/2] and likewise in y, stored at
    flat index j * side + i.
    """
    half = side / 2.0
    eps = 1e-12
    taus = []
    if abs(dir_x) > eps:
        for i in range(side + 1):
            taus.append((i - half - point_x) / dir_x)
    if abs(dir_y) > eps:
        for j in range(side + 1):
            taus.append((j - half - point_y) / dir_y)
    taus = np.unique(np.asarray(taus))
    for a, b in zip(taus[:-1], taus[1:]):
        length = b - a
        if length <= eps:
            continue
        mid = 0.5 * (a + b)
        x = point_x + mid * dir_x
        y = point_y + mid * dir_y
        i = int(math.floor(x + half))
        j = int(math.floor(y + half))
        if 0 <= i < side and 0 <= j < side:
            row[j * side + i] += length


def radon_matrix(img_side: int, n_angles: int, n_offsets: int) -> np.ndarray:
    """Raw (unnormalized) parallel-beam projector matrix.

    Rows are rays, ordered angle-major; entries are exact intersection
    lengths of each ray with each pixel of the img_side^2 grid.  Angles are
    equispaced in [0, pi); detector offsets are equispaced across the image
    diagonal and centered at the image center.
    """
    if img_side < 2:
        raise ValueError("img_side must be at least 2")
    if n_angles < 1 or n_offsets < 1:
        raise ValueError("n_angles and n_offsets must be at least 1")
    diag = img_side * math.sqrt(2.0)
    if n_offsets == 1:
        offsets = np.array([0.0])
    else:
        offsets = np.linspace(-diag / 2.0, diag / 2.0, n_offsets)
    mat = np.zeros((n_angles * n_offsets, img_side * img_side))
    for ai in range(n_angles):
        theta = ai * math.pi / n_angles
        nx, ny = math.cos(theta), math.sin(theta)
        dir_x, dir_y = -ny, nx
        for oi, t in enumerate(offsets):
            _ray_trace(t * nx, t * ny, dir_x, dir_y, img_side,
                       mat[ai * n_offsets + oi])
    return mat


def build_radon_operator(img_side: int, n_angles: int, n_offsets: int) -> DenseOperator:
    """Dense parallel-beam tomography operator, scaled to spectral norm one."""
    return spectral_normalize(DenseOperator(radon_matrix(img_side, n_angles, n_offsets)))


# Binary container: b"RGB1", then rows and cols as 64-bit little-endian
# unsigned integers, then row-major float64 payload.

def save_matrix(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(np.asarray(array, dtype=float))
    if array.ndim != 2:
        raise ValueError("only 2-D arrays are serialized")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(array.shape[0], array.shape[1]))
        fh.write(array.astype("<f8").tobytes(order="C"))


def load_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < 4 + _HEADER.size:
        raise ValueError(f"{path}: truncated container header")
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: bad container magic {data[:4]!r}")
    rows, cols = _HEADER.unpack_from(data, 4)
    start = 4 + _HEADER.size
    need = start + rows * cols * 8
    if len(data) < need:
        raise ValueError(f"{path}: truncated container payload")
    flat = np.frombuffer(data[start:need], dtype="<f8")
    return flat.reshape(rows, cols).astype(float)


def _svd_sidecar(path) -> Path:
    return Path(str(path) + ".svd")


def save_operator(path, op: DenseOperator, include_svd: bool = True) -> None:
    """Write the operator container; a cached SVD goes to ``<path>.svd``."""
    save_matrix(path, op.entries)
    if include_svd and op._svd is not None:
        svd = op._svd
        with open(_svd_sidecar(path), "wb") as fh:
            fh.write(MAGIC)
            fh.write(_SVD_HEADER.pack(op.m, op.n, svd.n_modes))
            fh.write(svd.sigma.astype("<f8").tobytes())
            fh.write(svd.left_vectors.astype("<f8").tobytes(order="C"))
            fh.write(svd.right_vectors.astype("<f8").tobytes(order="C"))


def load_operator(path) -> DenseOperator:
    """Read an operator container, attaching the SVD sidecar if present.

    The normalization flag is recovered by checking the spectral norm, so
    loading may trigger one SVD when no sidecar exists.
    """
    entries = load_matrix(path)
    op = DenseOperator(entries)
    sidecar = _svd_sidecar(path)
    if sidecar.exists():
        data = sidecar.read_bytes()
        if data[:4] != MAGIC:
            raise ValueError(f"{sidecar}: bad container magic")
        m, n, k = _SVD_HEADER.unpack_from(data, 4)
        if (m, n) != op.shape:
            raise ValueError(f"{sidecar}: SVD shape {(m, n)} does not match operator {op.shape}")
        start = 4 + _SVD_HEADER.size
        need = start + 8 * (k + m * k + n * k)
        if len(data) < need:
            raise ValueError(f"{sidecar}: truncated SVD payload")
        sigma = np.frombuffer(data[start:start + 8 * k], dtype="<f8").astype(float)
        start += 8 * k
        left = np.frombuffer(data[start:start + 8 * m * k], dtype="<f8").reshape(m, k).astype(float)
        start += 8 * m * k
        right = np.frombuffer(data[start:start + 8 * n * k], dtype="<f8").reshape(n, k).astype(float)
        op._svd = SvdSystem(sigma=sigma, left_vectors=left, right_vectors=right)
    op.spectral_normalized = bool(abs(operator_norm(op) - 1.0) <= 1e-10)
    return op
