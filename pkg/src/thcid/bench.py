"""Experiment runners behind the command line: configs, result rows, sweeps."""

from __future__ import annotations

import csv
import dataclasses
import datetime as _dt
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from thcid.coulomb import kernel_multiplier
from thcid.interpolative import DEFAULT_OVERSAMPLING, compress
from thcid.model import OrbitalSet, build_grid, random_potential, solve_orbitals
from thcid.thc import assemble_thc, df_least_squares, error_metrics

logger = logging.getLogger(__name__)

SEED_ENV = "THC_SEED"
# error_mode "auto" evaluates all pairs up to this N and samples beyond it
AUTO_FULL_MAX_N = 128


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    """One experiment, as read from a JSON config file.

    ``epsilon`` may be a number or a list. ``N_list`` / ``n_list`` drive the
    sweeps of ``scaling`` and ``compare-df``: ``N_list`` runs at the fixed
    grid ``points_per_axis``, ``n_list`` (total grid sizes) at the fixed ``N``.
    """

    dim: int = 1
    points_per_axis: int = 1024
    N: int = 128
    num_modes: int = 128
    amplitude: float = 100.0
    epsilon: list[float] = field(default_factory=lambda: [1e-5])
    r: int = DEFAULT_OVERSAMPLING
    seed: int = 0
    error_mode: str = "auto"
    sample_count: int = 100
    sample_seed: int = 0
    output_path: str | None = None
    include_baseline: bool = False
    N_list: list[int] = field(default_factory=list)
    n_list: list[int] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: dict[str, Any], env: dict[str, str] | None = None) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        data = dict(data)
        if "epsilon" in data and not isinstance(data["epsilon"], list):
            data["epsilon"] = [data["epsilon"]]
        env = os.environ if env is None else env
        if env.get(SEED_ENV):
            try:
                data["seed"] = int(env[SEED_ENV])
            except ValueError as exc:
                raise ConfigError(f"{SEED_ENV}={env[SEED_ENV]!r} is not an integer") from exc
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def validate(self) -> None:
        def need(cond: bool, msg: str) -> None:
            if not cond:
                raise ConfigError(msg)

        def is_int(x) -> bool:
            return isinstance(x, int) and not isinstance(x, bool)

        need(self.dim in (1, 3), f"dim must be 1 or 3, got {self.dim!r}")
        need(is_int(self.points_per_axis) and self.points_per_axis >= 2 and self.points_per_axis % 2 == 0,
             "points_per_axis must be an even integer >= 2")
        n = self.points_per_axis**self.dim
        need(is_int(self.N) and 1 <= self.N <= n, f"N must be an integer in 1..{n}")
        need(is_int(self.num_modes) and self.num_modes >= 0, "num_modes must be a nonnegative integer")
        need(isinstance(self.amplitude, (int, float)) and math.isfinite(self.amplitude), "amplitude must be finite")
        need(len(self.epsilon) > 0, "epsilon list is empty")
        for eps in self.epsilon:
            need(isinstance(eps, (int, float)) and 0 < eps < 1, f"epsilon {eps!r} not in (0, 1)")
        need(is_int(self.r) and self.r >= 1, "r must be an integer >= 1")
        need(is_int(self.seed) and 0 <= self.seed < 2**64, "seed must be an unsigned 64-bit integer")
        need(self.error_mode in ("auto", "full", "sampled"), "error_mode must be auto, full or sampled")
        need(is_int(self.sample_count) and self.sample_count >= 1, "sample_count must be >= 1")
        need(is_int(self.sample_seed) and self.sample_seed >= 0, "sample_seed must be >= 0")
        need(isinstance(self.include_baseline, bool), "include_baseline must be true or false")
        need(all(is_int(v) and 1 <= v <= n for v in self.N_list), f"N_list entries must be in 1..{n}")
        for nn in self.n_list:
            m = _axis_points(nn, self.dim)
            need(m is not None and m % 2 == 0, f"n_list entry {nn} is not an even {self.dim}-D grid size")
            need(self.N <= nn, f"N={self.N} exceeds grid size {nn} in n_list")

    def error_kwargs(self, N: int) -> dict[str, Any]:
        mode = self.error_mode
        if mode == "auto":
            mode = "full" if N <= AUTO_FULL_MAX_N else "sampled"
        return {"mode": mode, "samples": self.sample_count, "sample_seed": self.sample_seed}


def _axis_points(n: int, dim: int) -> int | None:
    if not isinstance(n, int) or n < 2:
        return None
    m = round(n ** (1.0 / dim))
    for cand in (m - 1, m, m + 1):
        if cand >= 2 and cand**dim == n:
            return cand
    return None


CSV_HEADER = (
    "dim", "m", "n", "N", "epsilon", "r", "seed", "N_aux",
    "max_e2", "max_ec", "rel_2_error", "rel_c_error",
    "time_compress_s", "time_baseline_s",
)  # fmt: skip


@dataclass
class ResultRow:
    """One measured configuration. The first fourteen fields are the CSV contract."""

    dim: int
    m: int
    n: int
    N: int
    epsilon: float
    r: int
    seed: int
    N_aux: int
    max_e2: float
    max_ec: float
    rel_2_error: float
    rel_c_error: float
    time_compress_s: float
    time_baseline_s: float | None = None
    num_modes: int = 0
    amplitude: float = 0.0
    error_mode: str = "full"
    pairs_evaluated: int = 0
    imag_ratio: float = 0.0
    time_orbitals_s: float = 0.0
    time_sketch_s: float = 0.0
    time_qr_s: float = 0.0
    time_basis_s: float = 0.0
    time_core_s: float = 0.0
    time_metrics_s: float = 0.0
    started_at: str = ""

    TIMING_FIELDS = frozenset(
        {"time_compress_s", "time_baseline_s", "time_orbitals_s", "time_sketch_s", "time_qr_s",
         "time_basis_s", "time_core_s", "time_metrics_s", "started_at"}
    )  # fmt: skip

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ResultRow":
        return cls(**data)

    def to_csv(self) -> dict[str, str]:
        return {k: "" if v is None else repr(v) if isinstance(v, float) else str(v) for k, v in self.to_dict().items()}

    @classmethod
    def from_csv(cls, data: dict[str, str]) -> "ResultRow":
        kwargs: dict[str, Any] = {}
        for f in fields(cls):
            raw = data[f.name]
            kind = f.type if isinstance(f.type, str) else f.type.__name__
            if raw == "" and "None" in kind:
                kwargs[f.name] = None
            elif kind.startswith("int"):
                kwargs[f.name] = int(raw)
            elif kind.startswith("float"):
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = raw
        return cls(**kwargs)

    def without_timings(self) -> dict[str, Any]:
        return {k: v for k, v in self.to_dict().items() if k not in self.TIMING_FIELDS}


def csv_fields() -> list[str]:
    names = [f.name for f in fields(ResultRow)]
    return list(CSV_HEADER) + [n for n in names if n not in CSV_HEADER]


class ResultWriter:
    """Writes rows as they arrive so a failing run still leaves its results."""

    def __init__(self, out_dir: str | os.PathLike | None, fmt: str = "both") -> None:
        if fmt not in ("csv", "json", "both"):
            raise ConfigError(f"unknown output format {fmt!r}")
        self.rows: list[ResultRow] = []
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.fmt = fmt
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            if fmt in ("csv", "both"):
                with open(self.csv_path, "w", newline="") as fh:
                    csv.DictWriter(fh, fieldnames=csv_fields()).writeheader()
            if fmt in ("json", "both"):
                self._dump_json()

    @property
    def csv_path(self) -> Path:
        return self.out_dir / "results.csv"

    @property
    def json_path(self) -> Path:
        return self.out_dir / "results.json"

    def _dump_json(self) -> None:
        tmp = self.json_path.with_suffix(".json.tmp")
        with open(tmp, "w") as fh:
            json.dump([r.to_dict() for r in self.rows], fh, indent=1)
        os.replace(tmp, self.json_path)

    def add(self, row: ResultRow) -> None:
        self.rows.append(row)
        if self.out_dir is None:
            return
        if self.fmt in ("csv", "both"):
            with open(self.csv_path, "a", newline="") as fh:
                csv.DictWriter(fh, fieldnames=csv_fields()).writerow(row.to_csv())
        if self.fmt in ("json", "both"):
            self._dump_json()


def read_csv(path: str | os.PathLike) -> list[ResultRow]:
    with open(path, newline="") as fh:
        return [ResultRow.from_csv(d) for d in csv.DictReader(fh)]


def read_json(path: str | os.PathLike) -> list[ResultRow]:
    with open(path) as fh:
        return [ResultRow.from_dict(d) for d in json.load(fh)]


def make_orbitals(cfg: ExperimentConfig, m: int, N: int) -> tuple[OrbitalSet, float]:
    t0 = time.perf_counter()
    grid = build_grid(cfg.dim, m)
    pot = random_potential(grid, cfg.num_modes, cfg.amplitude, cfg.seed)
    orbitals = solve_orbitals(grid, pot, N)
    return orbitals, time.perf_counter() - t0


def measure(
    cfg: ExperimentConfig,
    orbitals: OrbitalSet,
    epsilon: float,
    *,
    baseline: bool = False,
    time_orbitals: float = 0.0,
) -> ResultRow:
    """Compress, assemble the THC core, evaluate errors and optionally time the L2 fit."""
    started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    grid = orbitals.grid
    kernel = kernel_multiplier(grid)
    basis = compress(orbitals, epsilon, r=cfg.r, seed=cfg.seed)
    t0 = time.perf_counter()
    assemble_thc(orbitals, basis, kernel)
    t_core = time.perf_counter() - t0
    err_kw = cfg.error_kwargs(orbitals.N)
    report = error_metrics(orbitals, basis, kernel, **err_kw)
    t_base = df_least_squares(orbitals, basis, keep=False).seconds if baseline else None
    tm = basis.timings
    return ResultRow(
        dim=grid.dim,
        m=grid.m,
        n=grid.n,
        N=orbitals.N,
        epsilon=float(epsilon),
        r=cfg.r,
        seed=cfg.seed,
        N_aux=basis.N_aux,
        max_e2=report.max_e2,
        max_ec=report.max_ec,
        rel_2_error=report.rel_2_error,
        rel_c_error=report.rel_c_error,
        time_compress_s=tm["compress"],
        time_baseline_s=t_base,
        num_modes=cfg.num_modes,
        amplitude=float(cfg.amplitude),
        error_mode=err_kw["mode"],
        pairs_evaluated=report.pairs_evaluated,
        imag_ratio=basis.imag_ratio,
        time_orbitals_s=time_orbitals,
        time_sketch_s=tm["sketch"],
        time_qr_s=tm["qr"],
        time_basis_s=tm["basis"],
        time_core_s=t_core,
        time_metrics_s=report.stage_timings["metrics"],
        started_at=started,
    )


def cmd_run(cfg: ExperimentConfig, writer: ResultWriter | None = None) -> list[ResultRow]:
    """One orbital set, one row per epsilon."""
    writer = writer or ResultWriter(None)
    orbitals, t_orb = make_orbitals(cfg, cfg.points_per_axis, cfg.N)
    for eps in cfg.epsilon:
        row = measure(cfg, orbitals, eps, baseline=cfg.include_baseline, time_orbitals=t_orb)
        logger.info("N=%d n=%d eps=%.1e N_aux=%d rel2=%.3e relc=%.3e t=%.3fs", row.N, row.n, eps,
                    row.N_aux, row.rel_2_error, row.rel_c_error, row.time_compress_s)
        writer.add(row)
    return writer.rows


def loglog_slope(x: Iterable[float], y: Iterable[float]) -> float | None:
    """Least-squares slope of ``log y`` against ``log x``; ``None`` with fewer than two sizes."""
    x = np.asarray(list(x), dtype=float)
    y = np.asarray(list(y), dtype=float)
    if len(np.unique(x)) < 2:
        return None
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def _sweep_N(cfg: ExperimentConfig, eps: float, N_values: list[int], writer: ResultWriter, baseline: bool):
    N_values = sorted(set(N_values))
    orbitals, t_orb = make_orbitals(cfg, cfg.points_per_axis, max(N_values))
    rows = []
    for N in N_values:
        row = measure(cfg, orbitals.subset(N), eps, baseline=baseline, time_orbitals=t_orb)
        logger.info("N=%d n=%d N_aux=%d t_compress=%.3fs t_baseline=%s", N, row.n, row.N_aux,
                    row.time_compress_s, row.time_baseline_s)
        writer.add(row)
        rows.append(row)
    return rows


def _first_epsilon(cfg: ExperimentConfig) -> float:
    if len(cfg.epsilon) > 1:
        logger.warning("sweeps use a single threshold; using epsilon=%g", cfg.epsilon[0])
    return cfg.epsilon[0]


def naux_ratios(rows: list[ResultRow]) -> list[dict[str, float]]:
    rows = sorted(rows, key=lambda r: r.N)
    return [
        {"N_from": a.N, "N_to": b.N, "N_aux_from": a.N_aux, "N_aux_to": b.N_aux, "ratio": b.N_aux / a.N_aux}
        for a, b in zip(rows, rows[1:])
    ]


def cmd_scaling(cfg: ExperimentConfig, writer: ResultWriter | None = None) -> tuple[list[ResultRow], dict[str, Any]]:
    """Time and N_aux against N at fixed n, and against n at fixed N."""
    writer = writer or ResultWriter(None)
    eps = _first_epsilon(cfg)
    sizes = len(set(cfg.N_list)) + len(set(cfg.n_list))
    if sizes < 3:
        logger.warning("scaling sweep has only %d sizes; slopes may be missing", sizes)
    rows_N = _sweep_N(cfg, eps, cfg.N_list, writer, cfg.include_baseline) if cfg.N_list else []
    rows_n = []
    for nn in sorted(set(cfg.n_list)):
        m = _axis_points(nn, cfg.dim)
        orbitals, t_orb = make_orbitals(cfg, m, cfg.N)
        row = measure(cfg, orbitals, eps, baseline=cfg.include_baseline, time_orbitals=t_orb)
        logger.info("N=%d n=%d N_aux=%d t_compress=%.3fs", row.N, row.n, row.N_aux, row.time_compress_s)
        writer.add(row)
        rows_n.append(row)
    summary = {
        "epsilon": eps,
        "fixed_n": cfg.points_per_axis**cfg.dim,
        "fixed_N": cfg.N,
        "slope_time_vs_N": loglog_slope([r.N for r in rows_N], [r.time_compress_s for r in rows_N]),
        "slope_time_vs_n": loglog_slope([r.n for r in rows_n], [r.time_compress_s for r in rows_n]),
        "slope_naux_vs_N": loglog_slope([r.N for r in rows_N], [r.N_aux for r in rows_N]),
        "naux_ratios": naux_ratios(rows_N),
    }
    _write_summary(writer, "scaling_summary.json", summary)
    return writer.rows, summary


def crossover(rows: list[ResultRow]) -> int | None:
    """Smallest N from which the L2 fit is at least as slow as compression for every larger N."""
    rows = sorted(rows, key=lambda r: r.N)
    found = None
    for row in reversed(rows):
        if row.time_baseline_s is None or row.time_baseline_s < row.time_compress_s:
            break
        found = row.N
    return found


def crossover_interval(rows: list[ResultRow]) -> list[int] | None:
    """``[last N with compression slower, crossover_N]`` when both exist."""
    cross = crossover(rows)
    if cross is None:
        return None
    below = [r.N for r in rows if r.N < cross]
    return [max(below), cross] if below else None


def cmd_compare_df(cfg: ExperimentConfig, writer: ResultWriter | None = None) -> tuple[list[ResultRow], dict[str, Any]]:
    """Compression time against the conventional L2 fit on the same auxiliary basis."""
    writer = writer or ResultWriter(None)
    eps = _first_epsilon(cfg)
    N_values = cfg.N_list or [cfg.N]
    rows = _sweep_N(cfg, eps, N_values, writer, baseline=True)
    tail = sorted(rows, key=lambda r: r.N)[-3:]
    summary = {
        "epsilon": eps,
        "n": cfg.points_per_axis**cfg.dim,
        "slope_compress_vs_N": loglog_slope([r.N for r in tail], [r.time_compress_s for r in tail]),
        "slope_baseline_vs_N": loglog_slope([r.N for r in tail], [r.time_baseline_s for r in tail]),
        "slope_naux_vs_N": loglog_slope([r.N for r in rows], [r.N_aux for r in rows]),
        "crossover_N": crossover(rows),
        "crossover_interval": crossover_interval(rows),
    }
    if writer.out_dir is not None:
        summary["plot_files"] = [str(p) for p in emit_plot_data(rows, "naux_vs_N", writer.out_dir)]
        summary["plot_files"] += [str(p) for p in emit_plot_data(rows, "time_vs_N", writer.out_dir)]
    _write_summary(writer, "compare_summary.json", summary)
    return writer.rows, summary


def _write_summary(writer: ResultWriter, name: str, summary: dict[str, Any]) -> None:
    if writer.out_dir is not None:
        with open(writer.out_dir / name, "w") as fh:
            json.dump(summary, fh, indent=1)


def _reference(N: np.ndarray, y0: float, shape) -> list[float | None]:
    f = shape(N.astype(float))
    if f[0] == 0:
        return [None] * len(N)
    return list(y0 * f / f[0])


def emit_plot_data(rows: list[ResultRow], kind: str, out_dir: str | os.PathLike) -> list[Path]:
    """Write curve data for ``kind`` in {"naux_vs_N", "time_vs_N"}.

    One CSV per curve: ``N``, the measured value, and a reference power law
    scaled to pass through the first point (linear for N_aux; N^2 log N for
    compression time; N^3 for the L2 fit).
    """
    if not rows:
        raise ValueError("no rows to plot")
    rows = sorted(rows, key=lambda r: r.N)
    N = np.array([r.N for r in rows])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if kind == "naux_vs_N":
        curves = [("plot_naux_vs_N.csv", "N_aux", [r.N_aux for r in rows], "ref_linear", lambda x: x)]
    elif kind == "time_vs_N":
        curves = [("plot_time_compress_vs_N.csv", "time_compress_s", [r.time_compress_s for r in rows],
                   "ref_N2logN", lambda x: x**2 * np.log(x))]
        if all(r.time_baseline_s is not None for r in rows):
            curves.append(("plot_time_baseline_vs_N.csv", "time_baseline_s", [r.time_baseline_s for r in rows],
                           "ref_N3", lambda x: x**3))
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
    paths = []
    for name, col, values, ref_col, shape in curves:
        ref = _reference(N, values[0], shape)
        path = out_dir / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", col, ref_col])
            for n_, v, rv in zip(N, values, ref):
                w.writerow([int(n_), repr(float(v)) if isinstance(v, float) else v, "" if rv is None else repr(float(rv))])
        paths.append(path)
    return paths
