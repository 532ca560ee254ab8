"""Experiment configuration, mismatch grids, CSV emission, and the CLI.

Experiments are pure functions of (config, master seed).  Per-cell noise is
keyed by (seed, delta_bar index, delta index, sample, realization), so grid
cells can run on any number of threads and still produce byte-identical
CSV output.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import __version__
from .datagen import (
    SourceSample,
    add_noise,
    coordinate_basis,
    estimate_source_constant,
    load_idx_images,
    pca_basis,
    phantom_images,
    sample_source_data,
    sample_subspace_data,
    svd_basis,
    SubspaceSpec,
)
from .dimscan import DimScanConfig, DimScanResult, scan
from .lasso import AlphaRule, ConvergenceError, LassoProblem, SparsifyingTransform, alpha_for_delta, grid_search_alpha, solve
from .linop import (
    DenseOperator,
    apply,
    build_integration_operator,
    build_radon_operator,
    compute_svd,
    load_operator,
    save_operator,
    weighted_norm,
)
from .tikhonov import ZERO_RECONSTRUCTION, optimal_alpha, wc_bound


class ConfigError(ValueError):
    """Invalid configuration file or command line."""


DEFAULT_LEVELS = (0.001, 0.01, 0.1, 0.2, 0.5, 1.0)


@dataclass(frozen=True)
class OperatorSpec:
    kind: str = "integration"
    n: int = 50
    side: int = 28
    angles: int = 30
    offsets: int = 41
    path: str | None = None


@dataclass(frozen=True)
class DataSpec:
    kind: str = "source"
    count: int = 50
    n_dim: int = 8
    indices: tuple[int, ...] | None = None
    path: str | None = None
    side: int = 16


@dataclass(frozen=True)
class GridSpec:
    delta_bar: tuple[float, ...] = DEFAULT_LEVELS
    delta: tuple[float, ...] = DEFAULT_LEVELS
    realizations: int = 100

    def __post_init__(self):
        if not self.delta_bar or not self.delta:
            raise ConfigError("noise-level grids must be nonempty")
        if self.realizations < 1:
            raise ConfigError("need at least one realization")


@dataclass(frozen=True)
class MethodSpec:
    kind: str = "tikhonov"
    rho: str | float = "estimate"
    pinv_rel_tol: float = 1e-10
    alpha: float | None = None
    m_grid: tuple[int, ...] = (2, 4, 6, 8, 10, 12, 14, 16)
    basis: str = "svd"
    exact_truth: bool = False
    alpha_ref: float = 0.03
    delta_ref: float = 0.01
    transform: str = "identity"
    alpha_rule: str | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    operator: OperatorSpec = OperatorSpec()
    data: DataSpec = DataSpec()
    grid: GridSpec = GridSpec()
    method: MethodSpec = MethodSpec()
    seed: int = 0
    threads: int = 1


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(tok) for tok in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"cannot parse float list {text!r}") from exc


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"cannot parse integer list {text!r}") from exc


def load_config(path, seed: int = 0, threads: int = 1) -> ExperimentConfig:
    """Read the flat sectioned key-value config file."""
    parser = configparser.ConfigParser()
    text = Path(path).read_text()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    known = {"operator", "data", "grid", "method"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")

    try:
        op_sec = parser["operator"] if parser.has_section("operator") else {}
        operator = OperatorSpec(
            kind=op_sec.get("kind", "integration"),
            n=int(op_sec.get("n", 50)),
            side=int(op_sec.get("side", 28)),
            angles=int(op_sec.get("angles", 30)),
            offsets=int(op_sec.get("offsets", 41)),
            path=op_sec.get("path"),
        )
        da_sec = parser["data"] if parser.has_section("data") else {}
        indices = da_sec.get("indices") if hasattr(da_sec, "get") else None
        data = DataSpec(
            kind=da_sec.get("kind", "source"),
            count=int(da_sec.get("count", 50)),
            n_dim=int(da_sec.get("n_dim", 8)),
            indices=_ints(indices) if indices else None,
            path=da_sec.get("path"),
            side=int(da_sec.get("side", 16)),
        )
        gr_sec = parser["grid"] if parser.has_section("grid") else {}
        grid = GridSpec(
            delta_bar=_floats(gr_sec.get("delta_bar", "")) or DEFAULT_LEVELS,
            delta=_floats(gr_sec.get("delta", "")) or DEFAULT_LEVELS,
            realizations=int(gr_sec.get("realizations", 100)),
        )
        me_sec = parser["method"] if parser.has_section("method") else {}
        rho_raw = me_sec.get("rho", "estimate")
        rho: str | float
        if rho_raw in ("estimate", "per-sample"):
            rho = rho_raw
        else:
            try:
                rho = float(rho_raw)
            except ValueError as exc:
                raise ConfigError(f"bad rho value {rho_raw!r}") from exc
        method = MethodSpec(
            kind=me_sec.get("kind", "tikhonov"),
            rho=rho,
            pinv_rel_tol=float(me_sec.get("pinv_rel_tol", 1e-10)),
            alpha=float(me_sec["alpha"]) if "alpha" in me_sec else None,
            m_grid=_ints(me_sec.get("m_grid", "2 4 6 8 10 12 14 16")),
            basis=me_sec.get("basis", "svd"),
            exact_truth=me_sec.get("exact_truth", "false").lower() in ("1", "true", "yes"),
            alpha_ref=float(me_sec.get("alpha_ref", 0.03)),
            delta_ref=float(me_sec.get("delta_ref", 0.01)),
            transform=me_sec.get("transform", "identity"),
            alpha_rule=me_sec.get("alpha_rule"),
        )
    except (KeyError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc

    _validate(operator, data, method)
    return ExperimentConfig(operator=operator, data=data, grid=grid,
                            method=method, seed=seed, threads=threads)


def _validate(operator: OperatorSpec, data: DataSpec, method: MethodSpec) -> None:
    if operator.kind not in ("integration", "radon", "file"):
        raise ConfigError(f"unknown operator kind {operator.kind!r}")
    if operator.kind == "file" and not operator.path:
        raise ConfigError("operator kind 'file' needs a path")
    if data.kind not in ("source", "subspace", "idx", "phantom"):
        raise ConfigError(f"unknown data kind {data.kind!r}")
    if data.count < 1:
        raise ConfigError("need at least one sample")
    if method.kind not in ("tikhonov", "truncated", "subspace", "lasso"):
        raise ConfigError(f"unknown method kind {method.kind!r}")
    if method.basis not in ("svd", "coordinate", "pca"):
        raise ConfigError(f"unknown basis kind {method.basis!r}")
    if method.transform not in ("identity", "diff1d", "grad2d"):
        raise ConfigError(f"unknown transform kind {method.transform!r}")


def build_operator(spec: OperatorSpec) -> DenseOperator:
    if spec.kind == "integration":
        return build_integration_operator(spec.n)
    if spec.kind == "radon":
        return build_radon_operator(spec.side, spec.angles, spec.offsets)
    if spec.kind == "file":
        return load_operator(spec.path)
    raise ConfigError(f"unknown operator kind {spec.kind!r}")


def build_dataset(op: DenseOperator, spec: DataSpec, seed: int):
    """Samples for the configured data protocol.

    Source and subspace protocols return SourceSample records (with true
    source elements); image protocols return plain vectors.  A missing IDX
    file falls back to synthetic phantoms so runs stay offline-safe.
    """
    if spec.kind == "source":
        return sample_source_data(op, spec.count, seed)
    if spec.kind == "subspace":
        indices = spec.indices if spec.indices is not None else tuple(range(spec.n_dim))
        return sample_subspace_data(op, SubspaceSpec(indices), spec.count, seed)
    if spec.kind == "idx":
        if spec.path and Path(spec.path).exists():
            images = load_idx_images(spec.path)[:spec.count]
            if len(images) < spec.count:
                raise ConfigError(f"{spec.path}: fewer than {spec.count} images")
            if len(images[0]) != op.n:
                raise ConfigError(f"{spec.path}: image size {len(images[0])} != operator width {op.n}")
            return images
        side = int(round(op.n ** 0.5))
        if side * side != op.n:
            raise ConfigError("phantom fallback needs a square image operator")
        return phantom_images(side, spec.count, seed)
    if spec.kind == "phantom":
        side = int(round(op.n ** 0.5))
        if side * side != op.n:
            raise ConfigError("phantom data needs a square image operator")
        return phantom_images(side, spec.count, seed)
    raise ConfigError(f"unknown data kind {spec.kind!r}")


@dataclass(frozen=True)
class ErrorGrid:
    """Mean errors, relative errors, and analytic overlays on the
    (delta_bar, delta) grid, plus bound-check diagnostics."""

    delta_bar: tuple[float, ...]
    delta: tuple[float, ...]
    mean_errors: np.ndarray = field(repr=False)
    relative_errors: np.ndarray = field(repr=False)
    wc_overlay: np.ndarray = field(repr=False)
    alphas: np.ndarray = field(repr=False)
    sentinel_fraction: np.ndarray = field(repr=False)
    mean_realized_delta: np.ndarray = field(repr=False)
    rho_overlay: float
    violations: int
    checked: int
    min_margin: float


def _wc_vector(alpha: float, realized: np.ndarray, rho: float) -> np.ndarray:
    if alpha <= 1.0:
        return 0.5 * (realized / np.sqrt(alpha) + np.sqrt(alpha) * rho)
    return (realized + alpha * rho) / (1.0 + alpha)


def _tikhonov_cell(op, samples, x_mat, y_mat, rho_values, bi, delta_bar, di,
                   delta, realizations, seed, check_bounds):
    """One grid cell: mean error over samples x realizations, realized-noise
    bound checks, and sentinel accounting."""
    svd = compute_svd(op)
    u, v, s = svd.left_vectors, svd.right_vectors, svd.sigma
    root_n, root_m = np.sqrt(op.n), np.sqrt(op.m)
    err_sum = 0.0
    realized_sum = 0.0
    sentinels = 0
    violations = 0
    checked = 0
    min_margin = np.inf
    count = 0
    for si in range(len(samples)):
        rho_s = rho_values[si]
        rule_alpha = optimal_alpha(delta_bar, rho_s)
        noisy = np.column_stack([
            add_noise(y_mat[:, si], delta, (seed, bi, di, si, r)).y_noisy
            for r in range(realizations)
        ])
        if rule_alpha is ZERO_RECONSTRUCTION:
            sentinels += 1
            errors = np.full(realizations, weighted_norm(x_mat[:, si]))
        else:
            filt = s / (s * s + rule_alpha)
            rec = v @ (filt[:, None] * (u.T @ noisy))
            errors = np.linalg.norm(rec - x_mat[:, si][:, None], axis=0) / root_n
        realized = np.linalg.norm(noisy - y_mat[:, si][:, None], axis=0) / root_m
        err_sum += errors.sum()
        realized_sum += realized.sum()
        count += errors.size
        if check_bounds:
            if rule_alpha is ZERO_RECONSTRUCTION:
                bounds = np.full(realizations, rho_s)
            else:
                bounds = _wc_vector(rule_alpha, realized, rho_s)
            margin = bounds - errors
            violations += int((margin < -1e-9).sum())
            checked += errors.size
            min_margin = min(min_margin, float(margin.min()))
    return (err_sum / count, realized_sum / count, sentinels / len(samples),
            violations, checked, min_margin)


def run_mismatch_grid(config: ExperimentConfig) -> ErrorGrid:
    """Mean reconstruction errors when the rule is tuned at one noise level
    and applied at another, with the analytic worst-case overlay.

    The source constant is either estimated from the data through the
    adjoint pseudoinverse, supplied as a number, or taken per sample from
    the true source elements (``rho = per-sample``, only for generated
    data).  Cells where the tuning level exceeds the source constant use
    the zero reconstruction and are flagged through the sentinel fraction
    and an ``inf`` alpha in the CSV.
    """
    if config.method.kind == "lasso":
        return _run_lasso_grid(config)
    if config.method.kind != "tikhonov":
        raise ConfigError(f"mismatch grid supports tikhonov or lasso, not {config.method.kind!r}")
    op = build_operator(config.operator)
    samples = build_dataset(op, config.data, config.seed)
    compute_svd(op)

    have_z = bool(samples) and isinstance(samples[0], SourceSample)
    x_mat = np.column_stack([np.asarray(getattr(s, "x_true", s), dtype=float) for s in samples])
    y_mat = op.entries @ x_mat

    rho_spec = config.method.rho
    if rho_spec == "per-sample":
        if not have_z:
            raise ConfigError("rho = per-sample needs generated source data")
        rho_values = [s.rho for s in samples]
        rho_overlay = float(np.mean(rho_values))
    elif rho_spec == "estimate":
        est = estimate_source_constant(op, samples, config.method.pinv_rel_tol)
        rho_values = [est.mean] * len(samples)
        rho_overlay = est.mean
    else:
        rho_values = [float(rho_spec)] * len(samples)
        rho_overlay = float(rho_spec)

    bars, deltas = config.grid.delta_bar, config.grid.delta
    cells = [(bi, di) for bi in range(len(bars)) for di in range(len(deltas))]

    def work(cell):
        bi, di = cell
        return _tikhonov_cell(op, samples, x_mat, y_mat, rho_values, bi,
                              bars[bi], di, deltas[di],
                              config.grid.realizations, config.seed, have_z)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = dict(zip(cells, pool.map(work, cells)))
    else:
        results = {cell: work(cell) for cell in cells}

    shape = (len(bars), len(deltas))
    mean_errors = np.zeros(shape)
    realized = np.zeros(shape)
    sentinel = np.zeros(shape)
    violations = 0
    checked = 0
    min_margin = np.inf
    for (bi, di), (err, rel_delta, sent, viol, chk, margin) in results.items():
        mean_errors[bi, di] = err
        realized[bi, di] = rel_delta
        sentinel[bi, di] = sent
        violations += viol
        checked += chk
        min_margin = min(min_margin, margin)

    return _assemble_grid(config, mean_errors, realized, sentinel, rho_overlay,
                          violations, checked, min_margin)


def _run_lasso_grid(config: ExperimentConfig) -> ErrorGrid:
    """Mismatch grid for the sparse method; alpha comes from the tuned rule
    evaluated at the training noise level."""
    op = build_operator(config.operator)
    samples = build_dataset(op, config.data, config.seed)
    transform = _build_transform(config.method.transform, op)
    if config.method.alpha_rule:
        rule = AlphaRule.from_csv(config.method.alpha_rule)
    elif config.method.alpha is not None:
        rule = AlphaRule(((1.0, config.method.alpha),))
    else:
        raise ConfigError("lasso method needs alpha or alpha_rule")

    x_mat = np.column_stack([np.asarray(getattr(s, "x_true", s), dtype=float) for s in samples])
    y_mat = op.entries @ x_mat
    bars, deltas = config.grid.delta_bar, config.grid.delta
    shape = (len(bars), len(deltas))
    mean_errors = np.zeros(shape)
    realized = np.zeros(shape)
    alphas = np.zeros(shape)
    root_n, root_m = np.sqrt(op.n), np.sqrt(op.m)
    for bi, delta_bar in enumerate(bars):
        alpha = alpha_for_delta(rule, delta_bar)
        alphas[bi, :] = alpha
        for di, delta in enumerate(deltas):
            errs = []
            rel = []
            for si in range(x_mat.shape[1]):
                for r in range(config.grid.realizations):
                    meas = add_noise(y_mat[:, si], delta, (config.seed, bi, di, si, r))
                    sol = solve(LassoProblem(op, meas.y_noisy, alpha, transform))
                    errs.append(np.linalg.norm(sol.x - x_mat[:, si]) / root_n)
                    rel.append(np.linalg.norm(meas.y_noisy - y_mat[:, si]) / root_m)
            mean_errors[bi, di] = float(np.mean(errs))
            realized[bi, di] = float(np.mean(rel))

    est = estimate_source_constant(op, samples, config.method.pinv_rel_tol)
    grid = _assemble_grid(config, mean_errors, realized, np.zeros(shape),
                          est.mean, 0, 0, np.inf)
    # keep the actually used sparse alphas in the log
    grid.alphas[:, :] = alphas
    return grid


def _assemble_grid(config, mean_errors, realized, sentinel, rho_overlay,
                   violations, checked, min_margin) -> ErrorGrid:
    bars, deltas = config.grid.delta_bar, config.grid.delta
    shape = mean_errors.shape
    relative = np.full(shape, np.nan)
    for di, delta in enumerate(deltas):
        if delta in bars:
            denom = mean_errors[bars.index(delta), di]
            if denom > 0:
                relative[:, di] = mean_errors[:, di] / denom
    wc_overlay = np.zeros(shape)
    alphas = np.zeros(shape)
    for bi, delta_bar in enumerate(bars):
        rule_alpha = optimal_alpha(delta_bar, rho_overlay)
        for di, delta in enumerate(deltas):
            if rule_alpha is ZERO_RECONSTRUCTION:
                alphas[bi, di] = np.inf
                wc_overlay[bi, di] = rho_overlay
            else:
                alphas[bi, di] = rule_alpha
                wc_overlay[bi, di] = wc_bound(rule_alpha, delta, rho_overlay)
    return ErrorGrid(delta_bar=bars, delta=deltas, mean_errors=mean_errors,
                     relative_errors=relative, wc_overlay=wc_overlay,
                     alphas=alphas, sentinel_fraction=sentinel,
                     mean_realized_delta=realized, rho_overlay=rho_overlay,
                     violations=violations, checked=checked,
                     min_margin=float(min_margin))


def _build_transform(kind: str, op: DenseOperator) -> SparsifyingTransform:
    if kind == "identity":
        return SparsifyingTransform.identity(op.n)
    if kind == "diff1d":
        return SparsifyingTransform.diff1d(op.n)
    if kind == "grad2d":
        side = int(round(op.n ** 0.5))
        if side * side != op.n:
            raise ConfigError("grad2d transform needs a square image operator")
        return SparsifyingTransform.grad2d(side)
    raise ConfigError(f"unknown transform kind {kind!r}")


def run_dim_experiment(config: ExperimentConfig) -> DimScanResult:
    """Dimension scan of the first configured sample over the noise grid."""
    if config.method.kind not in ("subspace", "truncated"):
        raise ConfigError("dim scan needs a subspace or truncated method")
    if config.method.alpha is None or config.method.alpha <= 0:
        raise ConfigError("dim scan needs an explicit positive alpha")
    op = build_operator(config.operator)
    samples = build_dataset(op, config.data, config.seed)
    if config.method.basis == "svd":
        basis = svd_basis(op)
    elif config.method.basis == "coordinate":
        basis = coordinate_basis(op.n, config.seed)
    else:
        vectors = [np.asarray(getattr(s, "x_true", s), dtype=float) for s in samples]
        basis = pca_basis(vectors, min(op.n, len(vectors)))
    if max(config.method.m_grid) > basis.size:
        raise ConfigError("m_grid exceeds the basis size")
    x_true = np.asarray(getattr(samples[0], "x_true", samples[0]), dtype=float)
    scan_config = DimScanConfig(
        m_grid=config.method.m_grid,
        alpha=config.method.alpha,
        delta_list=config.grid.delta,
        realizations=config.grid.realizations,
        use_exact_truth=config.method.exact_truth,
        alpha_ref=config.method.alpha_ref,
        delta_ref=config.method.delta_ref,
        seed=config.seed,
    )
    return scan(op, basis, x_true, scan_config)


def _fmt(value) -> str:
    """Shortest round-trip decimal; inf and nan spelled out."""
    return repr(float(value))


def emit_mismatch_csv(grid: ErrorGrid, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("delta_bar,delta,mean_error,relative_error,wc_bound,alpha\n")
        for bi, delta_bar in enumerate(grid.delta_bar):
            for di, delta in enumerate(grid.delta):
                fh.write(",".join([
                    _fmt(delta_bar), _fmt(delta),
                    _fmt(grid.mean_errors[bi, di]),
                    _fmt(grid.relative_errors[bi, di]),
                    _fmt(grid.wc_overlay[bi, di]),
                    _fmt(grid.alphas[bi, di]),
                ]) + "\n")


def emit_dimscan_csv(result: DimScanResult, basis_kind: str, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("basis,M,delta,mean_error\n")
        for mi, m in enumerate(result.m_grid):
            for di, delta in enumerate(result.delta_list):
                fh.write(f"{basis_kind},{m},{_fmt(delta)},{_fmt(result.mean_errors[mi, di])}\n")


def emit_wc_curve_csv(alphas, bounds, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("alpha,bound\n")
        for a, b in zip(alphas, bounds):
            fh.write(f"{_fmt(a)},{_fmt(b)}\n")


@dataclass(frozen=True)
class RunManifest:
    master_seed: int
    config_hash: str
    operator_checksum: str
    tool_version: str
    wall_time_s: float

    def write(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def config_hash(config: ExperimentConfig) -> str:
    payload = json.dumps(asdict(config), sort_keys=True, default=str)
    return hashlib.sha256(payload.encode()).hexdigest()


def operator_checksum(op: DenseOperator) -> str:
    return hashlib.sha256(op.entries.tobytes()).hexdigest()


def make_manifest(config: ExperimentConfig, op: DenseOperator,
                  wall_time_s: float) -> RunManifest:
    return RunManifest(master_seed=config.seed, config_hash=config_hash(config),
                       operator_checksum=operator_checksum(op),
                       tool_version=__version__, wall_time_s=wall_time_s)


# ---------------------------------------------------------------------------
# CLI

def _shared_flags() -> argparse.ArgumentParser:
    # subparsers carry the global flags with SUPPRESS defaults so a flag
    # placed before the subcommand is not clobbered by a subparser default
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed")
    p.add_argument("--config", type=str, default=argparse.SUPPRESS, help="config file")
    p.add_argument("--out", type=str, default=argparse.SUPPRESS, help="output directory")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads")
    return p


def _build_parser() -> argparse.ArgumentParser:
    shared = _shared_flags()
    parser = argparse.ArgumentParser(
        prog="regbench",
        description="Regularization bench: worst-case curves, mismatch grids, "
                    "dimension scans, and sparse reconstruction.")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--config", type=str, default=None, help="config file")
    parser.add_argument("--out", type=str, default=".", help="output directory")
    parser.add_argument("--threads", type=int, default=1, help="worker threads")
    sub = parser.add_subparsers(dest="command")

    sub.add_parser("operator", parents=[shared],
                   help="build and save the configured operator")

    wc = sub.add_parser("wc-curve", parents=[shared],
                        help="closed-form worst-case curve over alpha")
    wc.add_argument("--rho", type=float, required=True)
    wc.add_argument("--delta", type=float, required=True)
    wc.add_argument("--points", type=int, default=200)

    sub.add_parser("mismatch-grid", parents=[shared],
                   help="error grid over (delta_bar, delta)")
    sub.add_parser("dim-scan", parents=[shared],
                   help="intrinsic-dimension scan")

    ls = sub.add_parser("lasso-solve", parents=[shared],
                        help="solve one sparse reconstruction")
    ls.add_argument("--delta", type=float, default=0.01)
    ls.add_argument("--alpha", type=float, default=None)
    ls.add_argument("--sample", type=int, default=0)

    at = sub.add_parser("alpha-tune", parents=[shared],
                        help="grid-search alphas into a rule CSV")
    at.add_argument("--delta-grid", type=str, default="0.001 0.01 0.1")
    at.add_argument("--alpha-grid", type=str, default="0.001 0.01 0.1 1")
    at.add_argument("--tuples", type=int, default=3)
    return parser


def _require_config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("this subcommand needs --config")
    if not Path(args.config).exists():
        raise ConfigError(f"config file {args.config} not found")
    return load_config(args.config, seed=args.seed, threads=args.threads)


def _cmd_operator(args) -> int:
    config = _require_config(args)
    op = build_operator(config.operator)
    compute_svd(op)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "operator.rgb"
    save_operator(target, op)
    print(f"operator kind={config.operator.kind} m={op.m} n={op.n} "
          f"checksum={operator_checksum(op)}")
    print(f"saved {target}")
    return 0


def _cmd_wc_curve(args) -> int:
    rule_alpha = optimal_alpha(args.delta, args.rho)
    grid = list(np.geomspace(1e-4, 1.0, args.points))
    if rule_alpha is not ZERO_RECONSTRUCTION:
        grid.append(rule_alpha)
    alphas = sorted(set(grid))
    bounds = [wc_bound(a, args.delta, args.rho) for a in alphas]
    print("alpha,bound")
    for a, b in zip(alphas, bounds):
        print(f"{_fmt(a)},{_fmt(b)}")
    best = alphas[int(np.argmin(bounds))]
    print(f"min_alpha={_fmt(best)}")
    out = Path(args.out)
    if args.out != ".":
        out.mkdir(parents=True, exist_ok=True)
    emit_wc_curve_csv(alphas, bounds, out / "wc_curve.csv")
    return 0


def _cmd_mismatch_grid(args) -> int:
    config = _require_config(args)
    start = time.perf_counter()
    grid = run_mismatch_grid(config)
    wall = time.perf_counter() - start
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_mismatch_csv(grid, out / "mismatch_grid.csv")
    op = build_operator(config.operator)
    make_manifest(config, op, wall).write(out / "manifest.json")
    print(f"wrote {out / 'mismatch_grid.csv'} (rho={_fmt(grid.rho_overlay)})")
    if grid.checked:
        print(f"bound checks: {grid.checked - grid.violations}/{grid.checked} "
              f"within bound, min margin {grid.min_margin:.3e}")
    return 0


def _cmd_dim_scan(args) -> int:
    config = _require_config(args)
    start = time.perf_counter()
    result = run_dim_experiment(config)
    wall = time.perf_counter() - start
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emit_dimscan_csv(result, config.method.basis, out / "dim_scan.csv")
    op = build_operator(config.operator)
    make_manifest(config, op, wall).write(out / "manifest.json")
    print(f"estimated_N={result.estimated_n}")
    return 0


def _cmd_lasso_solve(args) -> int:
    config = _require_config(args)
    op = build_operator(config.operator)
    samples = build_dataset(op, config.data, config.seed)
    if not 0 <= args.sample < len(samples):
        raise ConfigError(f"sample index {args.sample} out of range")
    transform = _build_transform(config.method.transform, op)
    alpha = args.alpha if args.alpha is not None else config.method.alpha
    if alpha is None:
        raise ConfigError("lasso-solve needs --alpha or a method alpha")
    x_true = np.asarray(getattr(samples[args.sample], "x_true", samples[args.sample]), dtype=float)
    meas = add_noise(apply(op, x_true), args.delta, (config.seed, args.sample))
    sol = solve(LassoProblem(op, meas.y_noisy, alpha, transform))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "lasso_solution.csv", "w", newline="\n") as fh:
        fh.write("sample_id,component,value\n")
        for comp, val in enumerate(sol.x):
            fh.write(f"{args.sample},{comp},{_fmt(val)}\n")
    print(f"objective={_fmt(sol.objective)} iterations={sol.iterations} "
          f"kkt_residual={sol.kkt_residual:.3e} "
          f"error={_fmt(weighted_norm(sol.x - x_true))}")
    return 0


def _cmd_alpha_tune(args) -> int:
    config = _require_config(args)
    op = build_operator(config.operator)
    samples = build_dataset(op, config.data, config.seed)[:args.tuples]
    transform = _build_transform(config.method.transform, op)
    delta_grid = _floats(args.delta_grid)
    alpha_grid = _floats(args.alpha_grid)
    knots = []
    for di, delta in enumerate(sorted(delta_grid)):
        tuples = []
        for si, sample in enumerate(samples):
            x = np.asarray(getattr(sample, "x_true", sample), dtype=float)
            meas = add_noise(apply(op, x), delta, (config.seed, di, si))
            tuples.append((x, meas.y_noisy))
        result = grid_search_alpha(op, transform, tuples, alpha_grid)
        knots.append((delta, result.alpha_star))
        print(f"delta={_fmt(delta)} alpha={_fmt(result.alpha_star)}")
    rule = AlphaRule(tuple(knots))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rule.to_csv(out / "alpha_rule.csv")
    print(f"wrote {out / 'alpha_rule.csv'}")
    return 0


_COMMANDS = {
    "operator": _cmd_operator,
    "wc-curve": _cmd_wc_curve,
    "mismatch-grid": _cmd_mismatch_grid,
    "dim-scan": _cmd_dim_scan,
    "lasso-solve": _cmd_lasso_solve,
    "alpha-tune": _cmd_alpha_tune,
}


def cli_main(argv=None) -> int:
    """Entry point; returns 0 on success, 1 on configuration errors, 2 on
    numerical failures."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ConvergenceError, np.linalg.LinAlgError, ValueError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
