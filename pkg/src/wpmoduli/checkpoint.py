"""Versioned JSON checkpoints for point clouds and balanced Hermitian forms."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .balanced import BalancedResult
from .errors import CorruptCheckpoint, NonPositiveH, VersionMismatch
from .hermitian import HermitianForm, check_hermitian
from .projective import RESIDUAL_RTOL, dependent_index, quintic_at, section_basis, weierstrass_cubic
from .sampler import PointCloud

FORMAT_VERSION = 1


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=False) + "\n"


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read(path) -> dict:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorruptCheckpoint(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(obj, dict) or "version" not in obj:
        raise CorruptCheckpoint(f"{path}: missing version field")
    if obj["version"] != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: version {obj['version']} != {FORMAT_VERSION}")
    return obj


def _pairs(z: np.ndarray) -> list:
    return [[float(v.real), float(v.imag)] for v in np.asarray(z).ravel()]


def _complex(pairs) -> np.ndarray:
    a = np.asarray(pairs, dtype=float)
    if a.shape[-1] != 2:
        raise CorruptCheckpoint("complex entries must be [re, im] pairs")
    return a[..., 0] + 1j * a[..., 1]


def _family_poly(family: str, t: complex):
    if family == "quintic":
        return quintic_at(t)
    if family == "cubic":
        return weierstrass_cubic()
    raise CorruptCheckpoint(f"unknown family {family!r}")


# --------------------------------------------------------------------------- clouds


def cloud_to_json(cloud: PointCloud) -> str:
    t = complex(cloud.t)
    obj = {
        "version": FORMAT_VERSION,
        "t": [t.real, t.imag],
        "seed": int(cloud.seed),
        "Q": int(cloud.Q),
        "family": cloud.family,
        "mass_scale": float(cloud.mass_scale),
        "points": [
            {"Z": _pairs(z), "mass": float(m), "q": int(q)}
            for z, m, q in zip(cloud.Z, cloud.mass, cloud.q)
        ],
    }
    return _dumps(obj)


def save_cloud(cloud: PointCloud, path) -> None:
    atomic_write(path, cloud_to_json(cloud))


def load_cloud(path) -> PointCloud:
    """Load and validate a cloud checkpoint (on-variety residuals, positive masses)."""
    obj = _read(path)
    try:
        t = complex(*obj["t"])
        family = obj.get("family", "quintic")
        P = _family_poly(family, t)
        pts = obj["points"]
        Z = _complex([p["Z"] for p in pts]).reshape(len(pts), P.n_vars)
        mass = np.array([p["mass"] for p in pts], dtype=float)
        q = np.array([p["q"] for p in pts], dtype=np.int64)
        Q = int(obj["Q"])
        seed = int(obj["seed"])
        scale = float(obj.get("mass_scale", 1.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"{path}: malformed cloud ({exc})") from exc
    if len(Z) == 0:
        return PointCloud(Z, np.zeros(0, int), np.zeros(0, int), Z, mass, q, P, t, seed, None, scale, family, Q)
    dehom = np.argmax(np.abs(Z), axis=1)
    if np.abs(Z[np.arange(len(Z)), dehom] - 1).max() > 1e-12:
        raise CorruptCheckpoint(f"{path}: coordinates are not chart-normalized")
    if np.abs(P.evaluate(Z)).max() > RESIDUAL_RTOL * P.max_coefficient:
        raise CorruptCheckpoint(f"{path}: points are off the variety")
    if not (np.all(np.isfinite(mass)) and np.all(mass > 0)):
        raise CorruptCheckpoint(f"{path}: masses must be finite and positive")
    if np.any(q < 0) or np.any(q >= Q):
        raise CorruptCheckpoint(f"{path}: subset index out of range")
    grad = P.gradient(Z)
    dep = dependent_index(grad, dehom)
    return PointCloud(Z, dehom, dep, grad, mass, q, P, t, seed, None, scale, family, Q)


# --------------------------------------------------------------------------- Hermitian forms


def balanced_to_json(result: BalancedResult) -> str:
    t = complex(result.t)
    H = result.H_star.matrix
    basis = result.basis or section_basis(result.k)
    obj = {
        "version": FORMAT_VERSION,
        "t": [t.real, t.imag],
        "k": int(result.k),
        "basis_order": [list(map(int, m)) for m in basis.monomials],
        "H": [_pairs(row) for row in H],
        "residual": float(result.residual),
        "iterations": int(result.iterations),
        "cloud_seed": None if result.cloud_id is None else int(result.cloud_id),
    }
    return _dumps(obj)


def save_balanced(result: BalancedResult, path) -> None:
    atomic_write(path, balanced_to_json(result))


def load_balanced(path) -> BalancedResult:
    """Load an H checkpoint; broken Hermiticity or positivity raises CorruptCheckpoint."""
    obj = _read(path)
    try:
        t = complex(*obj["t"])
        k = int(obj["k"])
        order = [tuple(m) for m in obj["basis_order"]]
        H = _complex(obj["H"])
        residual = float(obj["residual"])
        iterations = int(obj["iterations"])
        seed = obj.get("cloud_seed")
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"{path}: malformed H checkpoint ({exc})") from exc
    n_vars = len(order[0]) if order else 5
    basis = section_basis(k, n_vars)
    if tuple(order) != basis.monomials:
        raise CorruptCheckpoint(f"{path}: basis order does not match the degree-{k} basis")
    if H.shape != (basis.dim, basis.dim):
        raise CorruptCheckpoint(f"{path}: H has shape {H.shape}, expected {(basis.dim, basis.dim)}")
    if not check_hermitian(H):
        raise CorruptCheckpoint(f"{path}: H is not Hermitian")
    try:
        form = HermitianForm(H)
    except NonPositiveH as exc:
        raise CorruptCheckpoint(f"{path}: H is not positive definite") from exc
    return BalancedResult(form, iterations, residual, seed, t, k, basis)
