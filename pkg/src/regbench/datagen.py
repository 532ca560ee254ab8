"""Source-condition data, subspace data, noise realizations, bases, images.

All sampling is keyed by (master seed, index path) through a counter-based
generator, so datasets are bit-reproducible regardless of evaluation order
or parallel scheduling.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linop import DenseOperator, apply_adjoint, compute_svd, pinv_adjoint_apply, weighted_norm


def rng_for(master_seed: int, *path: int) -> np.random.Generator:
    """Counter-based generator for a (seed, index...) path.

    Distinct paths give statistically independent streams; the same path
    always reproduces the same stream.
    """
    ss = np.random.SeedSequence(entropy=int(master_seed),
                                spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SourceSample:
    """Ground truth generated through the adjoint: ``x_true = A* z``.

    ``rho`` is the weighted norm of the source element ``z`` and is the
    per-sample constant entering the worst-case bounds.
    """

    x_true: np.ndarray
    z: np.ndarray
    rho: float


@dataclass(frozen=True)
class NoisyMeasurement:
    y_true: np.ndarray
    y_noisy: np.ndarray
    delta: float
    seed_path: tuple[int, ...]


@dataclass(frozen=True)
class NoiseModel:
    """Per-mode second moments of the noise coefficients."""

    beta2: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.beta2, dtype=float)
        if not np.isfinite(b).all() or (b < 0).any():
            raise ValueError("noise second moments must be finite and nonnegative")
        b.setflags(write=False)
        object.__setattr__(self, "beta2", b)

    @classmethod
    def isotropic(cls, delta: float, n_modes: int) -> "NoiseModel":
        return cls(beta2=np.full(n_modes, float(delta) ** 2))


@dataclass(frozen=True)
class Basis:
    """Orthonormal column family used for restricted reconstruction."""

    kind: str
    vectors: np.ndarray
    permutation: np.ndarray | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vectors, dtype=float))
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def size(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class SubspaceSpec:
    """Selected singular-mode indices (0-based, distinct) spanning the data."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(set(idx)) != len(idx):
            raise ValueError("subspace indices must be distinct")
        if any(i < 0 for i in idx):
            raise ValueError("subspace indices must be nonnegative")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def first(cls, n_dim: int) -> "SubspaceSpec":
        return cls(tuple(range(n_dim)))

    @property
    def n_dim(self) -> int:
        return len(self.indices)


def sample_source_data(op: DenseOperator, count: int, seed: int) -> list[SourceSample]:
    """Draw samples fulfilling the source condition.

    Each source element mixes all left singular vectors with independent
    uniform [-1, 1] coefficients; the ground truth is its adjoint image.
    """
    svd = compute_svd(op)
    u = svd.left_vectors
    samples = []
    for i in range(count):
        d = rng_for(seed, i).uniform(-1.0, 1.0, size=svd.n_modes)
        z = u @ d
        x = apply_adjoint(op, z)
        samples.append(SourceSample(x_true=x, z=z, rho=weighted_norm(z)))
    return samples


def sample_subspace_data(op: DenseOperator, spec: SubspaceSpec, count: int,
                         seed: int) -> list[SourceSample]:
    """Source-condition samples restricted to the selected singular modes."""
    svd = compute_svd(op)
    idx = np.asarray(spec.indices)
    if idx.size and idx.max() >= svd.n_modes:
        raise ValueError("subspace index exceeds the number of singular modes")
    u = svd.left_vectors[:, idx]
    samples = []
    for i in range(count):
        d = rng_for(seed, i).uniform(-1.0, 1.0, size=idx.size)
        z = u @ d
        x = apply_adjoint(op, z)
        samples.append(SourceSample(x_true=x, z=z, rho=weighted_norm(z)))
    return samples


def sample_basis_coefficient_data(basis: Basis, n_dim: int, count: int,
                                  seed: int) -> list[np.ndarray]:
    """Samples with uniform [-1, 1] coefficients on the first n_dim basis vectors."""
    if n_dim > basis.size:
        raise ValueError("n_dim exceeds the basis size")
    b = basis.vectors[:, :n_dim]
    return [b @ rng_for(seed, i).uniform(-1.0, 1.0, size=n_dim) for i in range(count)]


def add_noise(y_true: np.ndarray, delta: float, seed_path) -> NoisyMeasurement:
    """Add componentwise i.i.d. Gaussian noise of standard deviation ``delta``.

    The realization is a pure function of ``seed_path``; the underlying
    standard-normal draw is shared across noise levels for a fixed path.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    path = tuple(int(p) for p in (seed_path if hasattr(seed_path, "__len__") else (seed_path,)))
    if not path:
        raise ValueError("seed_path must contain at least one integer")
    y_true = np.asarray(y_true, dtype=float)
    noise = rng_for(path[0], *path[1:]).standard_normal(y_true.size)
    return NoisyMeasurement(y_true=y_true, y_noisy=y_true + delta * noise,
                            delta=float(delta), seed_path=path)


@dataclass(frozen=True)
class SourceConstantEstimate:
    """Per-sample source constants recovered through the adjoint pseudoinverse.

    ``residuals`` holds ||x - A* (A*)^+ x||_2 per sample; for data that
    satisfies the source condition on the retained range it is ~0, for real
    images it is reported rather than asserted.
    """

    mean: float
    maximum: float
    values: np.ndarray
    residuals: np.ndarray


def estimate_source_constant(op: DenseOperator, samples, rel_tol: float = 1e-10) -> SourceConstantEstimate:
    """Estimate the source constant as the mean (and max) of per-sample norms."""
    if len(samples) == 0:
        raise ValueError("need at least one sample")
    values = np.empty(len(samples))
    residuals = np.empty(len(samples))
    for i, sample in enumerate(samples):
        x = np.asarray(getattr(sample, "x_true", sample), dtype=float)
        z_min = pinv_adjoint_apply(op, x, rel_tol)
        values[i] = weighted_norm(z_min)
        residuals[i] = float(np.linalg.norm(x - apply_adjoint(op, z_min)))
    return SourceConstantEstimate(mean=float(values.mean()), maximum=float(values.max()),
                                  values=values, residuals=residuals)


def pca_basis(data, n_components: int) -> Basis:
    """Top principal components of mean-centered data, variance-ordered.

    Component signs follow the same first-significant-entry-positive
    convention as the operator SVD.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        x = np.vstack([np.asarray(row, dtype=float) for row in data])
    if n_components > x.shape[1]:
        raise ValueError("cannot extract more components than coordinates")
    if n_components > x.shape[0]:
        raise ValueError("need at least as many samples as components")
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:n_components].T.copy()
    from .linop import _orient_columns

    _orient_columns(comps)
    return Basis(kind="pca", vectors=comps)


def coordinate_basis(n: int, seed: int) -> Basis:
    """Randomly permuted unit vectors; the permutation is kept on the basis
    so nested subspaces stay consistent across truncation levels."""
    perm = rng_for(seed).permutation(n)
    return Basis(kind="coordinate", vectors=np.eye(n)[:, perm], permutation=perm)


def svd_basis(op: DenseOperator) -> Basis:
    """Right singular vectors of the operator as a reconstruction basis."""
    return Basis(kind="svd", vectors=compute_svd(op).right_vectors)


_IDX3_MAGIC = 0x00000803


def load_idx_images(path) -> list[np.ndarray]:
    """Load an IDX3 image file (big-endian), flattened row-major in [0, 1]."""
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise ValueError(f"{path}: truncated IDX header")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != _IDX3_MAGIC:
        raise ValueError(f"{path}: bad IDX magic 0x{magic:08x}")
    need = 16 + count * rows * cols
    if len(data) < need:
        raise ValueError(f"{path}: truncated IDX payload ({len(data)} < {need} bytes)")
    pixels = np.frombuffer(data[16:need], dtype=np.uint8).astype(float) / 255.0
    size = rows * cols
    return [pixels[i * size:(i + 1) * size].copy() for i in range(count)]


def phantom_images(side: int, count: int, seed: int) -> list[np.ndarray]:
    """Synthetic piecewise-constant images as an offline image stand-in."""
    images = []
    for i in range(count):
        rng = rng_for(seed, i)
        img = np.zeros((side, side))
        for _ in range(int(rng.integers(2, 5))):
            r0, r1 = np.sort(rng.integers(0, side, size=2))
            c0, c1 = np.sort(rng.integers(0, side, size=2))
            img[r0:r1 + 1, c0:c1 + 1] = rng.uniform(0.2, 1.0)
        images.append(img.ravel())
    return images


def export_samples_csv(vectors, path) -> None:
    """Write vectors as long-format CSV: sample_id,component,value."""
    with open(path, "w", newline="\n") as fh:
        fh.write("sample_id,component,value\n")
        for sid, vec in enumerate(vectors):
            vec = np.asarray(getattr(vec, "x_true", vec), dtype=float)
            for comp, value in enumerate(vec):
                fh.write(f"{sid},{comp},{float(value)!r}\n")
