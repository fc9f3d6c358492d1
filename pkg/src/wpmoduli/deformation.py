"""Deformations of the holomorphic volume form and the Weil-Petersson metric.

A tangent vector ``v d/dt`` to the family is realized by the ambient vector
field ``theta`` (minimal Fubini-Study norm solution of ``dp . theta = -dp/dt``).
Flowing along ``theta`` identifies nearby fibers; differentiating the pulled
back residue form gives a (3,0) part ``a * nu`` with ``a = div theta`` and a
(2,1) part with coefficients ``c[i, j]`` built from antiholomorphic
derivatives of ``theta`` restricted to the hypersurface.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyCloud, GradientNormTiny, NonHermitianResult, SingularDesign
from .hermitian import as_form
from .projective import HomogeneousPolynomial, deformation_poly, free_index_table, quintic_at
from .sampler import MCEstimate, PointCloud
from .stats import JACKKNIFE_BLOCKS, batch_mean_stderr, contiguous_blocks, jackknife

log = logging.getLogger(__name__)

CHUNK = 20000
GRAD_NORM_TINY = 1e-12
FD_STEP = 1e-5

ORIENTATION_SIGN = -1.0
"""Sign of the (2,1) contraction in the norm of the deformed form.

For threefolds the wedge of a (2,1)-form ``sum c_ij iota_i nu ^ dwbar_j`` with
its conjugate equals ``-sum c_ij conj(c_ji)`` times ``nu ^ nubar``; the minus
sign is also the one for which the metric comes out positive.
"""


@dataclass(frozen=True)
class ModuliTangent:
    """Tangent vector ``v * d/dt`` with the t-derivative of the defining polynomial."""

    v: complex = 1.0
    deformation_poly: HomogeneousPolynomial = field(default_factory=deformation_poly)

    def scaled(self, c: complex) -> "ModuliTangent":
        return ModuliTangent(self.v * c, self.deformation_poly)


@dataclass(frozen=True, eq=False)
class DeformationData:
    """Per-point deformation data for a batch (theta in sorted inhomogeneous coordinates)."""

    theta: np.ndarray  # (n, n_vars - 1)
    a: np.ndarray  # (n,)
    c: np.ndarray  # (n, n_free, n_free)

    def __len__(self):
        return len(self.a)

    def scaled(self, v: complex) -> "DeformationData":
        return DeformationData(v * self.theta, v * self.a, v * self.c)


def _masked(Zn, dehom):
    mask = np.ones(Zn.shape, dtype=bool)
    mask[np.arange(len(Zn)), dehom] = False
    return mask


def theta_closed_form(Zn, dehom, P: HomogeneousPolynomial, dP: HomogeneousPolynomial, derivatives: bool = False):
    """``theta`` for the identity ambient metric, optionally with analytic derivatives.

    In inhomogeneous coordinates ``w`` (index ``dehom`` dropped) with
    ``u = sum_m w_m p_m``, the inverse FS metric gives
    ``theta^i = -q (conj(p_i) + w_i conj(u)) / (|p|^2 + |u|^2)`` where
    ``q = dP``.  Arrays use the full n_vars index with the ``dehom`` slot zero.

    Returns ``theta`` or ``(theta, d_theta, dbar_theta)`` where
    ``d_theta[n, i, k] = d theta^i / dw_k`` and ``dbar_theta`` likewise for ``wbar_k``.
    """
    mask = _masked(Zn, dehom)
    p = np.where(mask, P.gradient(Zn), 0)
    q = dP.evaluate(Zn)
    w = np.where(mask, Zn, 0)
    u = np.einsum("nm,nm->n", w, p)
    A = np.where(mask, p.conj() + w * u.conj()[:, None], 0)
    B = np.einsum("nm,nm->n", p, p.conj()).real + np.abs(u) ** 2
    if np.any(B < GRAD_NORM_TINY):
        raise GradientNormTiny(f"gradient norm {np.sqrt(B.min()):.3e} is too small")
    theta = -q[:, None] * A / B[:, None]
    if not derivatives:
        return theta
    m2 = mask[:, :, None] & mask[:, None, :]
    hp = np.where(m2, P.hessian(Zn), 0)
    dq = np.where(mask, dP.gradient(Zn), 0)
    uk = p + np.einsum("nm,nmk->nk", w, hp)
    dB = np.einsum("nmk,nm->nk", hp, p.conj()) + uk * u.conj()[:, None]
    eye = np.where(m2, np.eye(Zn.shape[1]), 0)
    qB, qB2 = (q / B)[:, None, None], (q / B**2)[:, None, None]
    d_theta = (-(dq[:, None, :] * A[:, :, None]) / B[:, None, None]
               - qB * eye * u.conj()[:, None, None]
               + qB2 * A[:, :, None] * dB[:, None, :])
    dA_bar = np.where(m2, hp.conj() + w[:, :, None] * uk.conj()[:, None, :], 0)
    dbar_theta = -qB * dA_bar + qB2 * A[:, :, None] * dB.conj()[:, None, :]
    return theta, np.where(m2, d_theta, 0), np.where(m2, dbar_theta, 0)


def _fs_inverse_metric(Zn, dehom, G):
    """Inverse ``G^{i jbar}`` (as the matrix multiplying conj(grad)) of the FS metric of form ``G`` in inhomogeneous coords."""
    G = as_form(G)
    Ginv = G.inverse
    n, nv = Zn.shape
    mask = _masked(Zn, dehom)
    # d/dw_i of the homogeneous vector Z (Z_dehom fixed to 1) is the unit vector e_i
    E = np.broadcast_to(np.eye(nv), (n, nv, nv))
    AZ = Zn @ Ginv.T
    D = np.einsum("na,na->n", Zn.conj(), AZ).real
    AE = E @ Ginv.T
    M = np.einsum("nja,nia->nij", E.conj(), AE) / D[:, None, None]
    v = np.einsum("na,nia->ni", Zn.conj(), AE)
    M = M - v[:, :, None] * v.conj()[:, None, :] / (D**2)[:, None, None]
    # restrict to the inhomogeneous coordinates; pad the dehom slot with identity to invert
    m2 = mask[:, :, None] & mask[:, None, :]
    M = np.where(m2, M, 0) + np.where(~mask[:, :, None] & ~mask[:, None, :], np.eye(nv), 0)
    Ninv = np.linalg.inv(np.transpose(M, (0, 2, 1)))
    return np.where(m2, Ninv, 0)


def theta_general(Zn, dehom, P: HomogeneousPolynomial, dP: HomogeneousPolynomial, G):
    """``theta^i = -N^{ij} conj(p_j) q / (p^T N conj(p))`` for a general ambient FS metric."""
    mask = _masked(Zn, dehom)
    p = np.where(mask, P.gradient(Zn), 0)
    q = dP.evaluate(Zn)
    N = _fs_inverse_metric(Zn, dehom, G)
    Np = np.einsum("nij,nj->ni", N, p.conj())
    B = np.einsum("ni,ni->n", p, Np)
    if np.any(np.abs(B) < GRAD_NORM_TINY):
        raise GradientNormTiny("gradient norm too small")
    return -q[:, None] * Np / B[:, None]


def wirtinger_fd(func, Zn, dehom, h: float = FD_STEP):
    """Central-difference Wirtinger derivatives of a vector field ``func(Zn) -> (n, n_vars)``.

    Only the ``n_vars - 1`` inhomogeneous coordinates are perturbed; returns
    ``(d, dbar)`` with ``d[n, i, k] = d f^i / dw_k``.
    """
    n, nv = Zn.shape
    d = np.zeros((n, nv, nv), dtype=np.complex128)
    dbar = np.zeros_like(d)
    rows = np.arange(n)
    for k in range(nv):
        sel = dehom != k
        if not sel.any():
            continue
        scale = h * np.maximum(1.0, np.abs(Zn[:, k]))
        e = np.zeros_like(Zn)
        e[rows, k] = scale
        fx = (func(Zn + e) - func(Zn - e)) / (2 * scale[:, None])
        fy = (func(Zn + 1j * e) - func(Zn - 1j * e)) / (2 * scale[:, None])
        d[sel, :, k] = (0.5 * (fx - 1j * fy))[sel]
        dbar[sel, :, k] = (0.5 * (fx + 1j * fy))[sel]
    return d, dbar


def theta(x, dP: HomogeneousPolynomial = None, G=None) -> np.ndarray:
    """Vector field at a single SurfacePoint, in sorted inhomogeneous coordinates."""
    dP = dP if dP is not None else deformation_poly()
    Zn = x.Z[None, :]
    dehom = np.array([x.chart.dehom_index])
    if G is None:
        th = theta_closed_form(Zn, dehom, x.poly, dP)
    else:
        th = theta_general(Zn, dehom, x.poly, dP, G)
    return np.delete(th[0], x.chart.dehom_index)


def _components(theta_full, d_theta, dbar_theta, grad, dehom, dep):
    """Sorted-coordinate theta, divergence a, and (2,1) coefficients c."""
    n, nv = grad.shape
    rows = np.arange(n)
    a = np.trace(d_theta, axis1=1, axis2=2)
    free = free_index_table(nv)[dehom, dep]
    slopes = -np.take_along_axis(grad, free, axis=1) / grad[rows, dep][:, None]
    db_ff = np.take_along_axis(np.take_along_axis(dbar_theta, free[:, :, None], axis=1), free[:, None, :], axis=2)
    db_fd = np.take_along_axis(dbar_theta[rows, :, dep], free, axis=1)  # d theta^i / d wbar_dep, i free
    c = -(db_ff + db_fd[:, :, None] * slopes.conj()[:, None, :])
    keep = np.ones((n, nv), dtype=bool)
    keep[rows, dehom] = False
    th = theta_full[keep].reshape(n, nv - 1)
    return th, a, c


def deformation_data(Zn, dehom, dep, grad, P, dP, G=None, method: str = "analytic") -> DeformationData:
    """Batch ``theta``, ``a`` and ``c``; ``method`` is ``"analytic"`` or ``"fd"``.

    A general ambient metric ``G`` always uses finite differences.
    """
    if G is not None:
        method = "fd"
    parts = []
    for lo in range(0, len(Zn), CHUNK):
        sl = slice(lo, lo + CHUNK)
        Zc, dc = Zn[sl], dehom[sl]
        if method == "analytic":
            th, d, db = theta_closed_form(Zc, dc, P, dP, derivatives=True)
        else:
            if G is None:
                func = lambda Z: theta_closed_form(Z, dc, P, dP)  # noqa: E731
            else:
                func = lambda Z: theta_general(Z, dc, P, dP, G)  # noqa: E731
            th = func(Zc)
            d, db = wirtinger_fd(func, Zc, dc)
        parts.append(_components(th, d, db, grad[sl], dc, dep[sl]))
    return DeformationData(*(np.concatenate([p[i] for p in parts]) for i in range(3)))


def cloud_deformation(cloud: PointCloud, tangent: ModuliTangent = None, G=None, method: str = "analytic") -> DeformationData:
    tangent = tangent or ModuliTangent()
    data = deformation_data(cloud.Z, cloud.dehom, cloud.dep, cloud.grad, cloud.poly, tangent.deformation_poly, G, method)
    return data.scaled(tangent.v) if tangent.v != 1 else data


def dnu_components(x, theta_vec=None, dP: HomogeneousPolynomial = None):
    """``(a, c)`` at a single point; ``theta_vec`` is accepted for interface symmetry and ignored.

    Derivatives of theta are taken from its closed form, so the field itself is
    recomputed rather than consumed.
    """
    dP = dP if dP is not None else deformation_poly()
    data = deformation_data(x.Z[None, :], np.array([x.chart.dehom_index]), np.array([x.chart.dep_index]),
                            x.grad_p[None, :], x.poly, dP)
    return complex(data.a[0]), data.c[0]


# --------------------------------------------------------------------------- Weil-Petersson


def wp_from_components(mass, a1, c1, a2=None, c2=None, sigma: float = ORIENTATION_SIGN,
                       n_blocks: int = JACKKNIFE_BLOCKS, check_hermitian: bool = None):
    """``-<a1 conj(a2) + sigma tr(c1 conj(c2^T))> + <a1> conj(<a2>)`` with jackknife error."""
    if a2 is None:
        a2, c2 = a1, c1
        if check_hermitian is None:
            check_hermitian = True
    m = np.asarray(mass, dtype=float)
    n = len(m)
    if n == 0:
        raise EmptyCloud("no points")
    f1 = a1 * a2.conj() + sigma * np.einsum("nij,nji->n", c1, c2.conj())
    cols = np.stack([m, m * f1, m * a1, m * a2], axis=1)
    sums = np.array([cols[b].sum(axis=0) for b in contiguous_blocks(n, n_blocks)])

    def stat(s):
        return -s[1] / s[0] + (s[2] / s[0]) * np.conj(s[3] / s[0])

    value, stderr, loo = jackknife(stat, sums)
    if check_hermitian:
        B = len(loo)
        im_err = np.sqrt((B - 1) / B * np.sum((loo.imag - loo.imag.mean()) ** 2))
        if abs(value.imag) > 3 * im_err and abs(value.imag) > 1e-12 * max(abs(value), 1.0):
            raise NonHermitianResult(f"Im <v,v> = {value.imag:.3e} exceeds 3 sigma = {3 * im_err:.3e}")
    return MCEstimate(complex(value), stderr, n)


def wp_direct(cloud: PointCloud, v1: ModuliTangent = None, v2: ModuliTangent = None,
              data: DeformationData = None, sigma: float = ORIENTATION_SIGN) -> MCEstimate:
    """Weil-Petersson inner product ``<v1, v2>`` at the cloud's modulus.

    ``data`` optionally supplies precomputed deformation data for ``d/dt``
    (the unit tangent with the default deformation polynomial).
    """
    v1 = v1 if v1 is not None else ModuliTangent()
    v2 = v2 if v2 is not None else v1
    if cloud.n_points == 0:
        raise EmptyCloud("no points")
    base = {}

    def unit(tangent):
        key = id(tangent.deformation_poly)
        if data is not None and tangent.deformation_poly.terms == deformation_poly().terms:
            return data
        if key not in base:
            base[key] = cloud_deformation(cloud, ModuliTangent(1.0, tangent.deformation_poly))
        return base[key]

    d1 = unit(v1).scaled(v1.v)
    d2 = unit(v2).scaled(v2.v)
    same = v1.v == v2.v and v1.deformation_poly.terms == v2.deformation_poly.terms
    return wp_from_components(cloud.mass, d1.a, d1.c, d2.a, d2.c, sigma, check_hermitian=same)


def log_volume(t, cloud: PointCloud) -> MCEstimate:
    """``F(t) = -log(mean raw mass)`` (the WP potential up to a constant) with delta-method stderr."""
    raw = cloud.raw_mass
    n = len(raw)
    if n == 0:
        raise EmptyCloud("no points")
    mean = raw.mean()
    return MCEstimate(float(-np.log(mean)), batch_mean_stderr(raw) / mean, n)


def quadratic_design(t, center: complex = 0j) -> np.ndarray:
    """Columns ``[1, 2x, -2y, 2(x^2-y^2), -4xy, x^2+y^2]`` for ``dt = x + iy``.

    ``F = alpha + 2 Re(beta dt) + 2 Re(gamma dt^2) + delta |dt|^2`` is linear in
    ``(alpha, Re beta, Im beta, Re gamma, Im gamma, delta)`` with these columns.
    """
    dt = np.asarray(t, dtype=np.complex128) - center
    x, y = dt.real, dt.imag
    return np.stack([np.ones_like(x), 2 * x, -2 * y, 2 * (x**2 - y**2), -4 * x * y, x**2 + y**2], axis=1)


@dataclass(frozen=True)
class HessianFit:
    g: float
    err: float
    coefficients: np.ndarray
    chi2_reduced: float

    def __iter__(self):
        return iter((self.g, self.err))


def hessian_fit(samples, center: complex = 0j, inflate: bool = True) -> HessianFit:
    """Weighted least-squares quadratic fit of ``F(t)`` samples; ``g`` is the ``|t|^2`` coefficient.

    ``samples`` is a sequence of ``(t, F, stderr)``.  With ``inflate`` the
    reported error is scaled by ``sqrt(chi2/dof)`` when that exceeds 1.
    """
    samples = list(samples)
    if len(samples) < 6:
        raise SingularDesign("need at least 6 samples")
    t = np.array([complex(s[0]) for s in samples])
    F = np.array([float(s[1]) for s in samples])
    sig = np.array([float(s[2]) for s in samples])
    X = quadratic_design(t, center)
    w = np.ones_like(F) if np.any(sig <= 0) else 1.0 / sig
    Xw, Fw = X * w[:, None], F * w
    if np.linalg.matrix_rank(Xw) < X.shape[1]:
        raise SingularDesign("quadratic design matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(Xw, Fw, rcond=None)
    cov = np.linalg.inv(Xw.T @ Xw)
    dof = len(F) - X.shape[1]
    resid = Fw - Xw @ coef
    chi2 = float(resid @ resid / dof) if dof > 0 else 0.0
    if np.any(sig <= 0):
        cov = cov * chi2
    elif inflate and chi2 > 1:
        cov = cov * chi2
    return HessianFit(float(coef[5]), float(np.sqrt(cov[5, 5])), coef, chi2)


def log_volume_samples(ts, n_points: int, seed: int = 0, threads: int = 1):
    """``(t, F, stderr)`` for each modulus, each from an independent cloud."""
    from .sampler import sample_cloud

    out = []
    for i, t in enumerate(ts):
        cloud = sample_cloud(quintic_at(t), n_points, seed=int(seed) + i, threads=threads, t=t)
        est = log_volume(t, cloud)
        out.append((complex(t), est.value, est.stderr))
    return out
