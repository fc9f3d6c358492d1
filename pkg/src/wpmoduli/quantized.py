"""Quantized Weil-Petersson metric from the variation of balanced embeddings.

Along a tangent ``v`` the monomial sections move by ``d eta = d eta/dZ . theta``
and the balanced form moves by ``dH``, the solution of the linearized balanced
equation.  The covariant derivative of the sections, with its holomorphic part
projected away in the discrete L^2 product, has squared norm ``Omega_k``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .balanced import BalancedResult, CloudSections, balanced_metric
from .deformation import ModuliTangent, deformation_data, theta_closed_form
from .errors import MaxIterExceeded
from .hermitian import HermitianForm, as_form
from .projective import SectionBasis, fifth_root_distance, section_basis
from .sampler import PointCloud
from .stats import JACKKNIFE_BLOCKS, contiguous_blocks, jackknife

log = logging.getLogger(__name__)

CHUNK = 10000
NEAR_SINGULAR = 0.05


def is_near_singular(t: complex, radius: float = NEAR_SINGULAR) -> bool:
    return fifth_root_distance(t) < radius


# --------------------------------------------------------------------------- section variations


def theta_field(cloud: PointCloud, tangent: ModuliTangent = None) -> np.ndarray:
    """Ambient ``theta`` on every cloud point as a full (n, n_vars) array (zero in the dehom slot)."""
    tangent = tangent or ModuliTangent()
    out = np.empty(cloud.Z.shape, dtype=np.complex128)
    for lo in range(0, cloud.n_points, CHUNK):
        sl = slice(lo, lo + CHUNK)
        out[sl] = theta_closed_form(cloud.Z[sl], cloud.dehom[sl], cloud.poly, tangent.deformation_poly)
    return tangent.v * out


def dsections(B: SectionBasis, theta_values: np.ndarray, cloud) -> np.ndarray:
    """``d eta_a / dt = sum_i (d eta_a / dw_i) theta^i`` at every cloud point, shape (n, N+1).

    ``cloud`` is anything with normalized coordinates ``Z`` (a PointCloud or an array).
    """
    Z = cloud.Z if hasattr(cloud, "Z") else np.atleast_2d(cloud)
    theta_values = np.atleast_2d(theta_values)
    out = np.empty((len(Z), B.dim), dtype=np.complex128)
    for lo in range(0, len(Z), CHUNK):
        sl = slice(lo, lo + CHUNK)
        _, d = B.values_and_partials(Z[sl])
        out[sl] = np.einsum("nai,ni->na", d, theta_values[sl])
    return out


# --------------------------------------------------------------------------- linearized balance


@dataclass(frozen=True, eq=False)
class LinearizedSolution:
    dH: np.ndarray
    residual: float
    iterations: int
    residual_history: tuple = field(default=(), repr=False)


class _LinearizedMap:
    """Affine map ``X -> C0 + L(X)`` whose fixed point is ``dH``."""

    def __init__(self, H_star, cs: CloudSections, deta: np.ndarray, a_values: np.ndarray):
        H = as_form(H_star)
        self.cs = cs
        self.A = H.inverse
        eta, w = cs.eta, cs.weights
        dim = cs.dim
        self.Aeta = eta @ self.A.T
        self.D = np.einsum("na,na->n", eta.conj(), self.Aeta).real
        e_dD = np.einsum("na,na->n", eta.conj(), deta @ self.A.T)  # eta^† A d eta
        T = dim * cs.weighted_gram(w / self.D)
        mean_a = np.sum(w * a_values)
        c0 = dim * (deta.T @ (w[:, None] / self.D[:, None] * eta.conj()))
        c0 -= dim * cs.weighted_gram(w * e_dD / self.D**2)
        c0 += dim * cs.weighted_gram(w * a_values / self.D)
        c0 -= mean_a * T
        self.C0 = c0

    def linear(self, X: np.ndarray) -> np.ndarray:
        s = np.einsum("na,ab,nb->n", self.Aeta.conj(), X, self.Aeta)
        return self.cs.dim * self.cs.weighted_gram(self.cs.weights * s / self.D**2)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.C0 + self.linear(X)


def solve_linearized(H_star, cloud, theta_values=None, a_values=None, B: SectionBasis = None,
                     deta: np.ndarray = None, tol: float = 1e-6, max_iter: int = 10,
                     accelerate: bool = True, depth: int = 5) -> LinearizedSolution:
    """Solve the linearized balanced equation ``dH = C0 + L(dH)`` from ``dH = 0``.

    The plain fixed-point iteration contracts at the rate of the T-map itself
    (roughly 0.2, 0.3, 0.4, 0.5 for k = 1..4 on the quintic), so by default
    the iterates are Anderson-mixed over the last ``depth`` steps.  Convergence
    means ``|F(X) - X| / |F(X)| < tol``, i.e. the next plain iterate moves by
    less than ``tol`` relative.
    """
    cs = cloud if isinstance(cloud, CloudSections) else CloudSections.build(cloud, B)
    if deta is None:
        deta = dsections(cs.basis, theta_values, cs.cloud)
    F = _LinearizedMap(H_star, cs, deta, np.asarray(a_values))
    X = np.zeros_like(F.C0)
    if not np.any(F.C0):
        return LinearizedSolution(X, 0.0, 0)
    xs, gs, history = [], [], []
    for it in range(1, max_iter + 1):
        FX = F(X)
        g = FX - X
        res = float(np.linalg.norm(g) / np.linalg.norm(FX))
        history.append(res)
        log.debug("linearized it=%d residual=%.3e", it, res)
        if res < tol:
            return LinearizedSolution(FX, res, it, tuple(history))
        if not accelerate:
            X = FX
            continue
        xs.append(X.ravel())
        gs.append(g.ravel())
        xs, gs = xs[-(depth + 1):], gs[-(depth + 1):]
        if len(gs) == 1:
            X = FX
            continue
        dG = np.stack([gs[j + 1] - gs[j] for j in range(len(gs) - 1)], axis=1)
        dX = np.stack([xs[j + 1] - xs[j] for j in range(len(xs) - 1)], axis=1)
        gamma, *_ = np.linalg.lstsq(dG, gs[-1], rcond=None)
        X = (xs[-1] + gs[-1] - (dX + dG) @ gamma).reshape(X.shape)
    raise MaxIterExceeded(f"linearized balance did not reach {tol:g} in {max_iter} iterations (residual {res:.3e})",
                          residual=res, iterations=max_iter)


def covariant_derivative(cloud, H_star, dH: np.ndarray, deta: np.ndarray, B: SectionBasis = None) -> np.ndarray:
    """``nabla eta = d eta - eta * dD / D`` with ``dD = eta^†(-A dH A) eta + eta^† A d eta``."""
    cs = cloud if isinstance(cloud, CloudSections) else CloudSections.build(cloud, B)
    A = as_form(H_star).inverse
    eta = cs.eta
    Aeta = eta @ A.T
    D = np.einsum("na,na->n", eta.conj(), Aeta).real
    dD = -np.einsum("na,ab,nb->n", Aeta.conj(), dH, Aeta) + np.einsum("na,na->n", Aeta.conj(), deta)
    return deta - eta * (dD / D)[:, None]


# --------------------------------------------------------------------------- projection


@dataclass(frozen=True, eq=False)
class DiscreteFrame:
    """Sections orthonormal in the cloud inner product ``<f, g> = (N+1) sum w f conj(g) / D``."""

    values: np.ndarray  # (n, N+1) orthonormal section values
    density: np.ndarray  # D_{H*} per point
    weights: np.ndarray

    @classmethod
    def build(cls, cs: CloudSections, H_star) -> "DiscreteFrame":
        H = as_form(H_star)
        L = H.frame()
        s = cs.eta @ L.conj()
        D = cs.density(H)
        w = cs.weights
        G = cs.dim * (s.T @ (w[:, None] / D[:, None] * s.conj()))
        R = HermitianForm(G).cholesky
        # s'' = R^{-1} s' in column form; row form s' @ R^{-T}
        s2 = np.linalg.solve(R, s.T).T
        return cls(s2, D, w)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def inner(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        """Gram matrix ``<f_a, g_b>`` for per-point arrays of shape (n, ka), (n, kb)."""
        return self.dim * (f.T @ (self.weights[:, None] / self.density[:, None] * g.conj()))


def bergman_project(values: np.ndarray, frame: DiscreteFrame):
    """Project columns of ``values`` (n, K) onto the span of the discrete orthonormal sections.

    Returns ``(coefficients (K, N+1), residual_values (n, K))``.
    """
    values = np.asarray(values, dtype=np.complex128)
    single = values.ndim == 1
    if single:
        values = values[:, None]
    coef = frame.inner(values, frame.values)
    resid = values - frame.values @ coef.T
    if single:
        return coef[0], resid[:, 0]
    return coef, resid


# --------------------------------------------------------------------------- Omega_k


@dataclass(frozen=True, eq=False)
class QuantizedResult:
    k: int
    t: complex
    value: float
    stderr: float
    balanced_residual: float
    near_singular: bool = False
    diagnostics: dict = field(default_factory=dict)


def omega_from_residuals(r1: np.ndarray, r2: np.ndarray, H_star, frame: DiscreteFrame, n_blocks: int = JACKKNIFE_BLOCKS):
    """Mass-weighted average of ``r2^† H*^{-1} r1 / D`` with a blocked jackknife stderr."""
    A = as_form(H_star).inverse
    f = np.einsum("na,ab,nb->n", r2.conj(), A, r1) / frame.density
    w = frame.weights
    n = len(w)
    blocks = contiguous_blocks(n, n_blocks)
    sums = np.array([[w[b].sum(), (w[b] * f[b]).sum()] for b in blocks])
    value, stderr, _ = jackknife(lambda s: s[1] / s[0], sums)
    return complex(value), stderr


@dataclass(frozen=True, eq=False)
class QuantizedPipeline:
    """Balanced data at one (t, k) reusable across tangent vectors."""

    cloud: PointCloud
    sections: CloudSections
    balanced: BalancedResult
    frame: DiscreteFrame

    @classmethod
    def build(cls, cloud: PointCloud, k: int, tol: float = 1e-6, max_iter: int = 200,
              balanced: BalancedResult = None) -> "QuantizedPipeline":
        cs = CloudSections.build(cloud, section_basis(k, cloud.Z.shape[1]))
        if balanced is None:
            balanced = balanced_metric(cloud.t, k, cs, tol=tol, max_iter=max_iter)
        return cls(cloud, cs, balanced, DiscreteFrame.build(cs, balanced.H_star))

    @property
    def H_star(self) -> HermitianForm:
        return self.balanced.H_star

    def residuals(self, tangent: ModuliTangent, lin_tol: float = 1e-6, lin_max_iter: int = 10,
                  dH_shift: complex = 0.0):
        """Projected covariant derivatives ``(1 - P) nabla_v eta`` and the linearized solution."""
        cloud = self.cloud
        unit = ModuliTangent(1.0, tangent.deformation_poly)
        th = theta_field(cloud, unit)
        data = deformation_data(cloud.Z, cloud.dehom, cloud.dep, cloud.grad, cloud.poly, unit.deformation_poly)
        deta = dsections(self.sections.basis, th, cloud)
        lin = solve_linearized(self.H_star, self.sections, a_values=data.a, deta=deta,
                               tol=lin_tol, max_iter=lin_max_iter)
        dH = lin.dH + dH_shift * self.H_star.matrix
        nabla = covariant_derivative(self.sections, self.H_star, dH, deta)
        _, r = bergman_project(nabla, self.frame)
        return tangent.v * r, lin

    def omega(self, v1: ModuliTangent = None, v2: ModuliTangent = None, **kw) -> QuantizedResult:
        v1 = v1 or ModuliTangent()
        v2 = v2 or v1
        r1, lin1 = self.residuals(v1, **kw)
        if v2 is v1:
            r2, lin2 = r1, lin1
        else:
            r2, lin2 = self.residuals(v2, **kw)
        value, stderr = omega_from_residuals(r1, r2, self.H_star, self.frame)
        t = complex(self.cloud.t)
        diag = {"balanced_iterations": self.balanced.iterations, "linearized_iterations": lin1.iterations,
                "linearized_residual": lin1.residual, "imag": value.imag}
        return QuantizedResult(self.balanced.k, t, value.real if v2 is v1 else value, stderr,
                               self.balanced.residual, is_near_singular(t), diag)


def omega_k(t, k: int, v1: ModuliTangent = None, v2: ModuliTangent = None, cloud: PointCloud = None,
            tol: float = 1e-6, max_iter: int = 200, **kw) -> QuantizedResult:
    """Quantized WP metric ``Omega_k(v1, v2)`` at modulus ``t`` on ``cloud``."""
    if cloud is None:
        from .sampler import sample_cloud
        from .balanced import default_points

        cloud = sample_cloud(t, default_points(section_basis(k).dim), seed=0, t=t)
    return QuantizedPipeline.build(cloud, k, tol, max_iter).omega(v1, v2, **kw)
