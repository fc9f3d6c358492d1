"""Command-line batch driver: t-plane scans, seeds, checkpoints and tabular output."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint
from .balanced import CloudSections, balanced_metric
from .deformation import hessian_fit, log_volume, wp_direct
from .errors import WPModuliError
from .projective import fifth_root_distance, section_basis
from .quantized import NEAR_SINGULAR, QuantizedPipeline
from .sampler import sample_quintic

log = logging.getLogger("wpmoduli")

METHODS = ("direct", "quadratic-fit", "balanced-only", "quantized", "compare")
CSV_COLUMNS = ("method", "t_re", "t_im", "k", "value", "stderr", "n_points", "seed", "wallclock_s", "near_singular")
SECTOR = 2 * math.pi / 5
EXCLUDE_RADIUS = 1e-3


@dataclass
class RunConfig:
    method: str = "direct"
    t_grid: list = field(default_factory=lambda: [0j])
    k_list: list = field(default_factory=lambda: [1])
    n_points: int = 100_000
    seed: int = 0
    ips_q: int = 1
    tol: float = 1e-6
    max_iter: int = 200
    out_path: str = None
    out_format: str = "csv"
    checkpoint_dir: str = None
    threads: int = 1
    fit_samples: int = 50
    fit_radius: float = 0.5
    fit_points: int = None

    def validate(self) -> "RunConfig":
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.method in ("direct", "compare") and self.n_points < 1000:
            raise ValueError("direct estimates need at least 1000 points")
        if not self.k_list or any(k < 1 or k > 8 for k in self.k_list):
            raise ValueError("k values must lie in 1..8")
        if self.out_format not in ("csv", "json"):
            raise ValueError("format must be csv or json")
        if self.ips_q < 1:
            raise ValueError("--ips must be >= 1")
        kept = []
        for t in self.t_grid:
            if fifth_root_distance(t) < EXCLUDE_RADIUS:
                log.warning("dropping t=%s: within %g of a singular fiber", t, EXCLUDE_RADIUS)
            else:
                kept.append(complex(t))
        self.t_grid = kept
        return self


@dataclass
class MetricResult:
    method: str
    t: complex
    k: int
    value: float
    stderr: float
    n_points: int
    seed: int
    wallclock_s: float
    near_singular: bool
    diagnostics: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {
            "method": self.method,
            "t_re": float(complex(self.t).real),
            "t_im": float(complex(self.t).imag),
            "k": int(self.k),
            "value": float(self.value),
            "stderr": float(self.stderr),
            "n_points": int(self.n_points),
            "seed": int(self.seed),
            "wallclock_s": float(self.wallclock_s),
            "near_singular": bool(self.near_singular),
        }

    def to_json(self) -> dict:
        out = self.row()
        out["diagnostics"] = self.diagnostics
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "MetricResult":
        return cls(obj["method"], complex(obj["t_re"], obj["t_im"]), obj["k"], obj["value"], obj["stderr"],
                   obj["n_points"], obj["seed"], obj["wallclock_s"], obj["near_singular"],
                   obj.get("diagnostics", {}))


# --------------------------------------------------------------------------- parsing


def parse_k_list(text: str) -> list:
    """``"1..6"``, ``"1,2,4"`` or ``"3"``."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(v) for v in text.split(",") if v.strip()]


def parse_grid(text: str) -> list:
    """``r0,r1,nr,a0,a1,na``: radii inclusive, angles on the half-open range ``[a0, a1)``."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 6:
        raise ValueError("grid needs six comma-separated values r0,r1,nr,a0,a1,na")
    r0, r1, a0, a1 = (float(parts[i]) for i in (0, 1, 3, 4))
    nr, na = int(parts[2]), int(parts[5])
    if nr < 1 or na < 1:
        raise ValueError("grid counts must be positive")
    if a0 < 0 or a1 > SECTOR + 1e-12 or a1 <= a0:
        raise ValueError(f"angles must satisfy 0 <= a0 < a1 <= 2 pi / 5 = {SECTOR:.6f}")
    radii = np.linspace(r0, r1, nr) if nr > 1 else np.array([r0])
    args = a0 + (a1 - a0) * np.arange(na) / na
    return [complex(r * np.cos(a), r * np.sin(a)) for r in radii for a in args]


def cell_seed(seed: int, index: int) -> int:
    """64-bit seed owned by grid cell ``index``."""
    return int(np.random.SeedSequence(int(seed), spawn_key=(int(index),)).generate_state(1, np.uint64)[0])


def _threads(cfg_threads: int) -> int:
    env = os.environ.get("WPMODULI_THREADS")
    return max(1, int(env)) if env else max(1, int(cfg_threads or 1))


# --------------------------------------------------------------------------- execution


def _fit_moduli(t: complex, cfg: RunConfig, seed: int) -> list:
    rng = np.random.default_rng(seed)
    r = cfg.fit_radius * np.sqrt(rng.uniform(size=cfg.fit_samples))
    phi = rng.uniform(0, 2 * np.pi, size=cfg.fit_samples)
    return [t + complex(a * np.cos(b), a * np.sin(b)) for a, b in zip(r, phi)]


def quadratic_fit_at(t: complex, cfg: RunConfig, seed: int, threads: int = 1):
    """Hessian of ``-log vol`` at ``t`` from independent clouds around it."""
    n = cfg.fit_points or cfg.n_points
    samples = []
    for i, ti in enumerate(_fit_moduli(t, cfg, seed)):
        cloud = sample_quintic(ti, n, seed=cell_seed(seed, i), threads=threads)
        F = log_volume(ti, cloud)
        samples.append((ti, F.value, F.stderr))
    return hessian_fit(samples, center=t), n * len(samples)


def run_point(cfg: RunConfig, t: complex, index: int = 0, threads: int = 1) -> list:
    """All rows for one modulus; module errors are re-raised with the cell context."""
    t = complex(t)
    seed = cell_seed(cfg.seed, index)
    near = fifth_root_distance(t) < NEAR_SINGULAR
    methods = ["direct", "quadratic-fit", "quantized"] if cfg.method == "compare" else [cfg.method]
    rows = []
    cloud = None

    def get_cloud():
        nonlocal cloud
        if cloud is None:
            cloud = sample_quintic(t, cfg.n_points, seed=seed, Q=cfg.ips_q, threads=threads)
            if cfg.checkpoint_dir and os.environ.get("WPMODULI_SAVE_CLOUDS"):
                checkpoint.save_cloud(cloud, Path(cfg.checkpoint_dir) / f"cloud-{index:04d}.json")
        return cloud

    try:
        for method in methods:
            if method == "direct":
                t0 = time.perf_counter()
                est = wp_direct(get_cloud())
                rows.append(MetricResult("direct", t, 0, est.value.real, est.stderr, est.n_points, seed,
                                         time.perf_counter() - t0, near, {"imag": est.value.imag}))
            elif method == "quadratic-fit":
                t0 = time.perf_counter()
                fit, n_total = quadratic_fit_at(t, cfg, seed, threads)
                rows.append(MetricResult("quadratic-fit", t, 0, fit.g, fit.err, n_total, seed,
                                         time.perf_counter() - t0, near, {"chi2_reduced": fit.chi2_reduced}))
            elif method == "balanced-only":
                for k in cfg.k_list:
                    t0 = time.perf_counter()
                    cs = CloudSections.build(get_cloud(), section_basis(k))
                    res = balanced_metric(t, k, cs, tol=cfg.tol, max_iter=cfg.max_iter)
                    if cfg.checkpoint_dir:
                        checkpoint.save_balanced(res, Path(cfg.checkpoint_dir) / f"H-{index:04d}-k{k}.json")
                    rows.append(MetricResult("balanced-only", t, k, res.residual, 0.0, cloud.n_points, seed,
                                             time.perf_counter() - t0, near, {"iterations": res.iterations}))
            elif method == "quantized":
                for k in cfg.k_list:
                    t0 = time.perf_counter()
                    pipe = QuantizedPipeline.build(get_cloud(), k, cfg.tol, cfg.max_iter)
                    if cfg.checkpoint_dir:
                        checkpoint.save_balanced(pipe.balanced, Path(cfg.checkpoint_dir) / f"H-{index:04d}-k{k}.json")
                    q = pipe.omega()
                    rows.append(MetricResult("quantized", t, k, q.value, q.stderr, cloud.n_points, seed,
                                             time.perf_counter() - t0, near,
                                             dict(q.diagnostics, balanced_residual=q.balanced_residual)))
    except WPModuliError as exc:
        raise type(exc)(f"cell {index} (t={t}): {exc}") from exc
    return rows


def _cell_path(cfg: RunConfig, index: int) -> Path:
    return Path(cfg.checkpoint_dir) / f"cell-{index:04d}.json"


def run_scan(cfg: RunConfig) -> list:
    """One result block per grid cell, in grid order; checkpointed cells are reused."""
    cfg.validate()
    workers = _threads(cfg.threads)
    cells = list(enumerate(cfg.t_grid))

    def one(item):
        index, t = item
        if cfg.checkpoint_dir:
            path = _cell_path(cfg, index)
            if path.exists():
                log.info("cell %d: reusing %s", index, path)
                with open(path) as fh:
                    return [MetricResult.from_json(o) for o in json.load(fh)["rows"]]
        inner = workers if len(cells) == 1 else 1
        rows = run_point(cfg, t, index, threads=inner)
        if cfg.checkpoint_dir:
            checkpoint.atomic_write(_cell_path(cfg, index), json.dumps(
                {"index": index, "t": [t.real, t.imag], "rows": [r.to_json() for r in rows]}, indent=1) + "\n")
        log.info("cell %d/%d done (t=%s)", index + 1, len(cells), t)
        return rows

    if workers > 1 and len(cells) > 1:
        with ThreadPoolExecutor(workers) as pool:
            blocks = list(pool.map(one, cells))
    else:
        blocks = [one(c) for c in cells]
    return [r for b in blocks for r in b]


# --------------------------------------------------------------------------- output


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        row = r.row()
        w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def to_json(results) -> str:
    return json.dumps([r.to_json() for r in results], indent=1) + "\n"


def from_json(text: str) -> list:
    return [MetricResult.from_json(o) for o in json.loads(text)]


def emit(results, fmt: str = "csv", path=None) -> str:
    """Render results as CSV or JSON and write to ``path`` (stdout when ``None``)."""
    text = to_csv(results) if fmt == "csv" else to_json(results)
    if path is None:
        sys.stdout.write(text)
    else:
        checkpoint.atomic_write(path, text)
    return text


# --------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wpmoduli", description="Weil-Petersson metrics on the quintic family.")
    p.add_argument("--method", choices=METHODS, default="direct")
    p.add_argument("--t-re", type=float, default=0.0)
    p.add_argument("--t-im", type=float, default=0.0)
    p.add_argument("--grid", help="r0,r1,nr,a0,a1,na polar grid (overrides --t-re/--t-im)")
    p.add_argument("--k", default="1", help="degrees, e.g. 1..6 or 1,2,3")
    p.add_argument("--points", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ips", type=int, default=1, help="number of FS metrics in the improved point set")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--checkpoint")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--fit-samples", type=int, default=50)
    p.add_argument("--fit-radius", type=float, default=0.5)
    p.add_argument("--fit-points", type=int)
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def config_from_args(args) -> RunConfig:
    grid = parse_grid(args.grid) if args.grid else [complex(args.t_re, args.t_im)]
    return RunConfig(
        method=args.method, t_grid=grid, k_list=parse_k_list(args.k), n_points=args.points, seed=args.seed,
        ips_q=args.ips, tol=args.tol, max_iter=args.max_iter, out_path=args.out, out_format=args.format,
        checkpoint_dir=args.checkpoint, threads=args.threads, fit_samples=args.fit_samples,
        fit_radius=args.fit_radius, fit_points=args.fit_points,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        results = run_scan(cfg)
    except (ValueError, WPModuliError) as exc:
        log.error("%s", exc)
        return 2
    emit(results, cfg.out_format, cfg.out_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
