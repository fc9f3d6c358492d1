"""Monte Carlo point clouds on hypersurfaces from random hyperplane sections.

Points are drawn as intersections of the hypersurface with random lines, each
line cut out by ``n`` random degree-1 sections.  With sections Gaussian in an
``H``-orthonormal frame the zero locus has the Fubini-Study law of ``H``, so the
mass ``|f|^2 / det g_FS`` turns cloud averages into averages against the
holomorphic volume form.  Improved point sets mix several FS metrics and keep a
point only when its own generating metric is the one whose mass is closest to 1.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import DegenerateLine, EmptyCloud, EpsilonOutOfRange, SingularPullback
from .hermitian import HermitianForm, as_form
from .projective import (
    HomogeneousPolynomial,
    SurfacePoint,
    assign_charts,
    fs_pullback_batch,
    nu_density,
    polish_points,
    quintic_at,
    section_basis,
    Chart,
)
from .stats import batch_mean_stderr

log = logging.getLogger(__name__)

LINES_PER_BLOCK = 2000
MAX_CONSECUTIVE_FAILURES = 100
DEGENERATE_RTOL = 1e-10
DET_TINY = 1e-30
CHUNK = 20000
CALIBRATION_POINTS = 10_000
CALIBRATION_STREAM = 2**31


def _stream(seed: int, key: int) -> np.random.Generator:
    """Counter-based generator for block ``key`` of a run started from ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=(int(key),))))


@dataclass(frozen=True, eq=False)
class FSMetricSet:
    """Ordered list of FS metrics on O(1) plus the raw-to-normalized mass scale.

    All FS metrics on O(1) lie in one cohomology class and so have equal total
    volume; a single constant ``mass_scale`` (the mean raw base-metric mass,
    measured on a calibration cloud) therefore normalizes every member.
    """

    metrics: tuple
    base_index: int = 0
    mass_scale: float = None

    def __post_init__(self):
        metrics = tuple(as_form(h) for h in self.metrics)
        if not metrics:
            raise ValueError("an FS metric set needs at least one member")
        object.__setattr__(self, "metrics", metrics)

    @classmethod
    def single(cls, H=None, dim: int = 5) -> "FSMetricSet":
        return cls((H if H is not None else HermitianForm.identity(dim),))

    @property
    def Q(self) -> int:
        return len(self.metrics)

    @property
    def base(self) -> HermitianForm:
        return self.metrics[self.base_index]

    def __len__(self):
        return self.Q

    def appended(self, *forms) -> "FSMetricSet":
        return replace(self, metrics=self.metrics + tuple(forms))

    def calibrated(self, P: HomogeneousPolynomial, seed: int, n_points: int = CALIBRATION_POINTS) -> "FSMetricSet":
        """Set ``mass_scale`` from a base-metric cloud (no-op when already set)."""
        if self.mass_scale is not None:
            return self
        cloud = sample_cloud(P, n_points, FSMetricSet((self.base,)), seed, stream_offset=CALIBRATION_STREAM)
        return replace(self, mass_scale=cloud.mass_scale)

    def describe(self) -> dict:
        return {"Q": self.Q, "base_index": self.base_index, "mass_scale": self.mass_scale}


# --------------------------------------------------------------------------- masses


def raw_masses(Zn, dehom, dep, grad, metrics, strict: bool = True) -> np.ndarray:
    """``|f|^2 / det g_FS(H_q)`` per point and member, shape (n, Q)."""
    n_vars = Zn.shape[1]
    basis = section_basis(1, n_vars)
    f2 = np.abs(nu_density(grad, dep)) ** 2
    out = np.empty((len(Zn), len(metrics)))
    for q, H in enumerate(metrics):
        for lo in range(0, len(Zn), CHUNK):
            sl = slice(lo, lo + CHUNK)
            _, g = fs_pullback_batch(H, basis, Zn[sl], dehom[sl], dep[sl], grad[sl])
            det = np.linalg.det(g).real
            bad = det < DET_TINY
            if strict and bad.any():
                raise SingularPullback(f"det g = {det.min():.3e} below {DET_TINY}")
            out[sl, q] = np.where(bad, np.nan, f2[sl] / np.where(bad, 1.0, det))
    return out


def select_members(normalized: np.ndarray):
    """Index of the member whose mass is closest to 1, and that mass."""
    q = np.argmin(np.abs(normalized - 1.0), axis=1)
    return normalized[np.arange(len(q)), q], q


def mass(x: SurfacePoint, H) -> float:
    """Raw mass ``|f|^2 / det g_FS(H)`` at a single point."""
    m = raw_masses(x.Z[None, :], np.array([x.chart.dehom_index]), np.array([x.chart.dep_index]),
                   x.grad_p[None, :], [as_form(H)])
    return float(m[0, 0])


def mass_one_metric(x: SurfacePoint, H_base, m0: float = None, n: int = None) -> HermitianForm:
    """Rank-one deformation of ``H_base`` whose mass at ``x`` is 1.

    In an ``H_base``-orthonormal frame the new form is
    ``(Id + eps P_x) / (1 + eps)`` with ``P_x`` the projector onto the evaluation
    ray of ``x`` and ``eps = m0**(1/n) - 1``; this multiplies the pulled-back
    metric at ``x`` by ``1 + eps`` and so divides the mass by ``m0``.  ``m0``
    defaults to the raw mass of ``x`` under ``H_base``.
    """
    H_base = as_form(H_base)
    if m0 is None:
        m0 = mass(x, H_base)
    if n is None:
        n = len(x.chart.free_indices)
    if not m0 > 0:
        raise EpsilonOutOfRange(f"mass {m0} is not positive")
    return _mass_one_from_ray(H_base, x.Z, m0, n)


def _mass_one_from_ray(H_base: HermitianForm, eta: np.ndarray, m0: float, n: int) -> HermitianForm:
    eps = m0 ** (1.0 / n) - 1.0
    if eps <= -1.0:
        raise EpsilonOutOfRange(f"eps = {eps} <= -1")
    C = H_base.cholesky
    u = np.linalg.solve(C, np.asarray(eta, dtype=np.complex128))
    e = u / np.linalg.norm(u)
    lam = (np.eye(len(e)) + eps * np.outer(e, e.conj())) / (1.0 + eps)
    return HermitianForm(C @ lam @ C.conj().T)


def ips_mass(x: SurfacePoint, S: FSMetricSet):
    """(normalized mass, member index) with the member chosen by ``argmin |m_q - 1|``."""
    raw = raw_masses(x.Z[None, :], np.array([x.chart.dehom_index]), np.array([x.chart.dep_index]),
                     x.grad_p[None, :], S.metrics)
    m, q = select_members(raw / (S.mass_scale or 1.0))
    return float(m[0]), int(q[0])


def cloud_ips_masses(cloud: "PointCloud", S: FSMetricSet):
    """Vectorized :func:`ips_mass` over every point of ``cloud``."""
    raw = raw_masses(cloud.Z, cloud.dehom, cloud.dep, cloud.grad, S.metrics)
    return select_members(raw / (S.mass_scale or 1.0))


def extend_ips(S: FSMetricSet, eval_cloud: "PointCloud") -> FSMetricSet:
    """Append the mass-one metrics of the points with largest and smallest IPS mass."""
    if eval_cloud.n_points == 0:
        raise EmptyCloud("cannot extend an IPS on an empty cloud")
    if S.mass_scale is None:
        S = replace(S, mass_scale=1.0)
    m, _ = cloud_ips_masses(eval_cloud, S)
    base_raw = raw_masses(eval_cloud.Z, eval_cloud.dehom, eval_cloud.dep, eval_cloud.grad, [S.base])[:, 0]
    n = eval_cloud.Z.shape[1] - 2
    new = []
    for i in (int(np.argmax(m)), int(np.argmin(m))):
        m0 = base_raw[i] / S.mass_scale
        new.append(_mass_one_from_ray(S.base, eval_cloud.Z[i], m0, n))
    log.debug("extend_ips: Q %d -> %d, mass range [%.4g, %.4g]", S.Q, S.Q + 2, m.min(), m.max())
    return S.appended(*new)


def build_ips(S: FSMetricSet, eval_cloud: "PointCloud", Q: int) -> FSMetricSet:
    """Grow ``S`` with :func:`extend_ips` until it has at least ``Q`` members."""
    while S.Q < Q:
        S = extend_ips(S, eval_cloud)
    return S


# --------------------------------------------------------------------------- sections and lines


def random_section(H, rng: np.random.Generator, size=None) -> np.ndarray:
    """Coefficients of a random degree-1 section, Gaussian in an ``H``-orthonormal frame.

    The returned vector ``c`` (section ``sum c_a Z_a``) has covariance
    ``E[c c^†] = conj(H^{-1})``, so ``E|c.Z|^2 = Z^† H^{-1} Z``.
    """
    H = as_form(H)
    dim = H.dim
    shape = (dim,) if size is None else tuple(np.atleast_1d(size)) + (dim,)
    xi = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    return xi @ H.frame().conj().T


def _restriction_coefficients(P: HomogeneousPolynomial, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Coefficients (ascending powers) of ``s -> P(A + s B)`` via values on roots of unity."""
    d = P.degree
    w = np.exp(2j * np.pi * np.arange(d + 1) / (d + 1))
    pts = A[:, None, :] + w[None, :, None] * B[:, None, :]
    vals = P.evaluate(pts)
    return np.fft.fft(vals, axis=1) / (d + 1)


def line_roots(P: HomogeneousPolynomial, sections: np.ndarray):
    """Intersect the lines ``{sections @ Z = 0}`` with ``P = 0``.

    ``sections`` has shape (M, n_vars - 2, n_vars).  Returns homogeneous points
    of shape (M, deg, n_vars) and a boolean mask of non-degenerate lines.
    """
    sections = np.asarray(sections, dtype=np.complex128)
    M, r, nv = sections.shape
    _, s, vh = np.linalg.svd(sections)
    ok = s[:, -1] > DEGENERATE_RTOL * s[:, 0]
    null = vh[:, r:, :].conj()
    A, B = null[:, 0, :], null[:, 1, :]
    coef = _restriction_coefficients(P, A, B)
    d = P.degree
    lead = coef[:, d]
    ok &= np.abs(lead) >= DEGENERATE_RTOL * np.linalg.norm(coef, axis=1)
    safe = np.where(ok, lead, 1.0)
    comp = np.zeros((M, d, d), dtype=np.complex128)
    comp[:, np.arange(1, d), np.arange(d - 1)] = 1.0
    comp[:, :, d - 1] = -coef[:, :d] / safe[:, None]
    roots = np.linalg.eigvals(comp)
    big = np.abs(roots) > 1.0
    inv = np.where(big, 1.0 / np.where(big, roots, 1.0), 1.0)
    Z = np.where(big[..., None], A[:, None, :] * inv[..., None] + B[:, None, :],
                 A[:, None, :] + roots[..., None] * B[:, None, :])
    return Z, ok


def line_variety_intersect(sections, P: HomogeneousPolynomial) -> list:
    """All intersection points of one line with the hypersurface, as polished SurfacePoints."""
    sections = np.asarray(sections, dtype=np.complex128)
    Z, ok = line_roots(P, sections[None])
    if not ok[0]:
        raise DegenerateLine("sections do not cut out a line transversal to the hypersurface")
    return [SurfacePoint.from_homogeneous(z, P) for z in Z[0]]


def _max_run(flags: np.ndarray) -> int:
    """Longest run of True values."""
    if not flags.any():
        return 0
    padded = np.concatenate([[0], flags.astype(np.int8), [0]])
    edges = np.flatnonzero(np.diff(padded))
    return int((edges[1::2] - edges[::2]).max())


# --------------------------------------------------------------------------- clouds


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Weighted sample on a hypersurface with provenance.

    Coordinates are chart-normalized (``Z[dehom] == 1``).  ``mass`` is scaled
    to mean 1; ``mass * mass_scale`` recovers the raw ``|f|^2 / det g``.
    """

    Z: np.ndarray
    dehom: np.ndarray
    dep: np.ndarray
    grad: np.ndarray
    mass: np.ndarray
    q: np.ndarray
    poly: HomogeneousPolynomial = field(repr=False)
    t: complex = 0j
    seed: int = 0
    metric_set: FSMetricSet = field(default=None, repr=False)
    mass_scale: float = 1.0
    family: str = "quintic"
    ips_q: int = None

    def __post_init__(self):
        for name in ("Z", "dehom", "dep", "grad", "mass", "q"):
            a = np.asarray(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def n_points(self) -> int:
        return len(self.mass)

    def __len__(self):
        return self.n_points

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    @property
    def raw_mass(self) -> np.ndarray:
        return self.mass * self.mass_scale

    @property
    def Q(self) -> int:
        if self.metric_set is not None:
            return int(self.metric_set.Q)
        if self.ips_q is not None:
            return int(self.ips_q)
        return int(self.q.max(initial=0)) + 1

    @cached_property
    def nu_density(self) -> np.ndarray:
        return nu_density(self.grad, self.dep)

    @property
    def points(self) -> list:
        return [self.point(i) for i in range(self.n_points)]

    def point(self, i: int) -> SurfacePoint:
        return SurfacePoint(self.Z[i], Chart.from_indices(self.Z.shape[1], self.dehom[i], self.dep[i]),
                            self.grad[i], complex(self.nu_density[i]), self.poly)

    def subset(self, idx) -> "PointCloud":
        """Sub-cloud on ``idx`` (masses renormalized to mean 1, raw masses preserved)."""
        m = self.mass[idx]
        scale = m.mean() if len(m) else 1.0
        return replace(self, Z=self.Z[idx], dehom=self.dehom[idx], dep=self.dep[idx], grad=self.grad[idx],
                       mass=m / scale, q=self.q[idx], mass_scale=self.mass_scale * scale)

    def with_poly(self, P: HomogeneousPolynomial) -> "PointCloud":
        return replace(self, poly=P)


def _sample_block(P: HomogeneousPolynomial, S: FSMetricSet, frames: list, seed: int, key: int):
    rng = _stream(seed, key)
    nv = P.n_vars
    r = nv - 2
    Q = S.Q
    q_line = rng.integers(0, Q, size=LINES_PER_BLOCK) if Q > 1 else np.zeros(LINES_PER_BLOCK, dtype=np.int64)
    xi = (rng.standard_normal((LINES_PER_BLOCK, r, nv)) + 1j * rng.standard_normal((LINES_PER_BLOCK, r, nv))) / np.sqrt(2.0)
    sections = np.empty_like(xi)
    for q in range(Q):
        sel = q_line == q
        sections[sel] = xi[sel] @ frames[q].conj().T
    Zh, ok = line_roots(P, sections)
    d = P.degree
    Zh = Zh.reshape(-1, nv)
    Zn, dehom, dep, grad, grad_ok = assign_charts(Zh, P, strict=False)
    Zn, grad, res_ok = polish_points(Zn, dehom, dep, P)
    pt_ok = grad_ok & res_ok & (np.abs(grad[np.arange(len(grad)), dep]) >= 1e-12)
    ok &= pt_ok.reshape(-1, d).all(axis=1)
    if _max_run(~ok) >= MAX_CONSECUTIVE_FAILURES:
        raise DegenerateLine(f"{MAX_CONSECUTIVE_FAILURES} consecutive degenerate line draws")
    keep_pt = np.repeat(ok, d)
    Zn, dehom, dep, grad = Zn[keep_pt], dehom[keep_pt], dep[keep_pt], grad[keep_pt]
    qs = np.repeat(q_line[ok], d)
    raw = raw_masses(Zn, dehom, dep, grad, S.metrics, strict=False)
    finite = np.isfinite(raw).all(axis=1)
    # lines containing a point with a singular pullback are dropped whole
    line_finite = finite.reshape(-1, d).all(axis=1)
    keep = np.repeat(line_finite, d)
    if Q > 1:
        _, q_best = select_members(np.where(np.isfinite(raw), raw, np.inf) / S.mass_scale)
        keep &= q_best == qs
    own = raw[np.arange(len(qs)), qs]
    return Zn[keep], dehom[keep], dep[keep], grad[keep], own[keep], qs[keep], int(ok.size)


def _thread_count(threads) -> int:
    env = os.environ.get("WPMODULI_THREADS")
    if env:
        return max(1, int(env))
    return max(1, int(threads or 1))


def sample_cloud(P, NP: int, S: FSMetricSet = None, seed: int = 0, threads: int = 1,
                 stream_offset: int = 0, t: complex = None, family: str = None) -> PointCloud:
    """Draw exactly ``NP`` accepted points; deterministic in ``seed`` regardless of ``threads``.

    ``P`` is a defining polynomial or a complex modulus of the quintic family.
    """
    if NP < 1:
        raise ValueError("NP must be >= 1")
    if not isinstance(P, HomogeneousPolynomial):
        t = complex(P)
        P = quintic_at(t)
    if t is None:
        t = 0j
    if family is None:
        family = "quintic" if P.n_vars == 5 and P.degree == 5 else "custom"
    if S is None:
        S = FSMetricSet.single(dim=P.n_vars)
    if S.Q > 1 and S.mass_scale is None:
        S = S.calibrated(P, seed)
    frames = [H.frame() for H in S.metrics]
    workers = _thread_count(threads)
    parts, have, key = [], 0, 0
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        while have < NP:
            keys = range(key, key + workers)
            if pool is None:
                blocks = [_sample_block(P, S, frames, seed, stream_offset + k) for k in keys]
            else:
                blocks = list(pool.map(lambda k: _sample_block(P, S, frames, seed, stream_offset + k), keys))
            key += workers
            for b in blocks:
                if have >= NP:
                    break
                parts.append(b)
                have += len(b[4])
    finally:
        if pool is not None:
            pool.shutdown()
    cat = [np.concatenate([p[i] for p in parts])[:NP] for i in range(6)]
    Zn, dehom, dep, grad, raw, qs = cat
    lines = sum(p[6] for p in parts)
    scale = float(raw.mean())
    log.debug("sample_cloud: %d points from %d line draws (Q=%d)", NP, lines, S.Q)
    return PointCloud(Zn, dehom, dep, grad, raw / scale, qs, P, complex(t), int(seed), S, scale, family)


def sample_quintic(t: complex, NP: int, seed: int = 0, Q: int = 1, threads: int = 1,
                   ips_points: int = CALIBRATION_POINTS) -> PointCloud:
    """Cloud on the quintic at modulus ``t``; ``Q > 1`` builds an improved point set first."""
    P = quintic_at(t)
    S = FSMetricSet.single(dim=5)
    if Q > 1:
        S = S.calibrated(P, seed, ips_points)
        eval_cloud = sample_cloud(P, ips_points, FSMetricSet((S.base,), mass_scale=S.mass_scale), seed,
                                  stream_offset=CALIBRATION_STREAM + 1)
        S = build_ips(S, eval_cloud, Q)
    return sample_cloud(P, NP, S, seed, threads=threads, t=t)


# --------------------------------------------------------------------------- estimation


@dataclass(frozen=True)
class MCEstimate:
    value: complex
    stderr: float
    n_points: int

    def __post_init__(self):
        if not self.stderr >= 0:
            raise ValueError("stderr must be non-negative")


def mc_integrate(f_values, cloud) -> MCEstimate:
    """Mass-weighted average ``sum f m / sum m`` with its large-sample standard error.

    ``cloud`` may be a :class:`PointCloud` or a plain array of masses.
    """
    m = np.asarray(cloud.mass if isinstance(cloud, PointCloud) else cloud, dtype=float)
    f = np.asarray(f_values)
    n = len(m)
    if n == 0:
        raise EmptyCloud("no points to integrate over")
    if f.shape[0] != n:
        raise ValueError("f_values must align with the cloud")
    mbar = m.mean()
    value = (f * m).sum() / m.sum()
    resid = m * (f - value)
    stderr = float(np.sqrt(np.mean(np.abs(resid) ** 2) / n) / mbar)
    if not np.iscomplexobj(f):
        value = float(value)
    return MCEstimate(value, stderr, n)


def volume_estimate(cloud: PointCloud) -> MCEstimate:
    """Mean raw mass, i.e. the holomorphic volume relative to the FS volume, with stderr."""
    raw = cloud.raw_mass
    if len(raw) == 0:
        raise EmptyCloud("no points")
    return MCEstimate(float(raw.mean()), batch_mean_stderr(raw), len(raw))


def mass_ratio(masses) -> float:
    m = np.asarray(masses)
    return float(m.max() / m.min())
