"""Balanced metrics on spaces of sections via fixed-point iteration of the T-map.

For a Hermitian form ``H`` on ``H^0(X, O(k))`` the T-map returns the L^2
inner product of the monomial sections against the volume form of the cloud,
measured in the fiber metric induced by ``H``.  A balanced metric is a fixed
point (up to scale); on a fixed cloud it is the exact discrete fixed point.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DenominatorUnderflow, MaxIterExceeded, NonPositiveDrift, NonPositiveInput, NonPositiveH
from .hermitian import HermitianForm, as_form
from .projective import SectionBasis, section_basis
from .sampler import PointCloud

log = logging.getLogger(__name__)

__all__ = [
    "HermitianForm",
    "BalancedResult",
    "CloudSections",
    "tmap",
    "balanced_metric",
    "bergman_density",
    "orthonormal_frame",
    "default_points",
]

D_TINY = 1e-30
CHUNK = 50000


def default_points(dim: int) -> int:
    """Recommended cloud size ``max(1e5, 50 (N+1)^2)``."""
    return max(100_000, 50 * dim * dim)


@dataclass(frozen=True, eq=False)
class CloudSections:
    """Section values of a basis on every point of a cloud, with normalized weights."""

    basis: SectionBasis
    eta: np.ndarray
    weights: np.ndarray
    cloud: PointCloud = field(default=None, repr=False)

    @classmethod
    def build(cls, cloud: PointCloud, basis: SectionBasis) -> "CloudSections":
        eta = np.empty((cloud.n_points, basis.dim), dtype=np.complex128)
        for lo in range(0, cloud.n_points, CHUNK):
            eta[lo:lo + CHUNK] = basis.values(cloud.Z[lo:lo + CHUNK])
        eta.setflags(write=False)
        w = cloud.mass / cloud.mass.sum()
        return cls(basis, eta, w, cloud)

    @property
    def dim(self) -> int:
        return self.basis.dim

    def density(self, H) -> np.ndarray:
        """``D_H = eta^† H^{-1} eta`` at every point."""
        A = as_form(H).inverse
        out = np.empty(len(self.eta))
        for lo in range(0, len(self.eta), CHUNK):
            e = self.eta[lo:lo + CHUNK]
            out[lo:lo + CHUNK] = np.einsum("na,na->n", e.conj(), e @ A.T).real
        return out

    def weighted_gram(self, w: np.ndarray) -> np.ndarray:
        """``sum_l w_l eta_a(l) conj(eta_b(l))``."""
        dim = self.dim
        out = np.zeros((dim, dim), dtype=np.complex128)
        for lo in range(0, len(self.eta), CHUNK):
            e = self.eta[lo:lo + CHUNK]
            out += e.T @ (w[lo:lo + CHUNK, None] * e.conj())
        return out


def _sections(cloud, basis) -> CloudSections:
    if isinstance(cloud, CloudSections):
        return cloud
    if basis is None:
        raise ValueError("a SectionBasis is required with a bare PointCloud")
    return CloudSections.build(cloud, basis)


def tmap(H, cloud, B: SectionBasis = None, return_density: bool = False):
    """``T(H) = (N+1) sum_l m_l eta eta^† / D_H / sum_l m_l`` (not trace-normalized).

    ``cloud`` is a PointCloud (with ``B``) or a prebuilt :class:`CloudSections`.
    """
    cs = _sections(cloud, B)
    try:
        H = as_form(H)
        D = cs.density(H)
    except NonPositiveH as exc:
        raise NonPositiveInput(str(exc)) from exc
    if np.any(D < D_TINY):
        raise DenominatorUnderflow(f"D_H = {D.min():.3e} below {D_TINY}")
    T = cs.dim * cs.weighted_gram(cs.weights / D)
    T = HermitianForm(T, check=False)
    return (T, D) if return_density else T


def trace_pairing(H, T) -> float:
    """``sum (H^{-1})^{ba} T_ab``; equals N+1 exactly for ``T = tmap(H)``."""
    return float(np.einsum("ba,ab->", as_form(H).inverse, as_form(T).matrix).real)


@dataclass(frozen=True, eq=False)
class BalancedResult:
    H_star: HermitianForm
    iterations: int
    residual: float
    cloud_id: int
    t: complex = 0j
    k: int = 1
    basis: SectionBasis = field(default=None, repr=False)
    residual_history: tuple = field(default=(), repr=False)
    trace_history: tuple = field(default=(), repr=False)


def _residual(T: np.ndarray, H: np.ndarray) -> float:
    return float(np.linalg.norm(T - H, 2) / np.linalg.norm(H, 2))


def balanced_metric(t, k: int, cloud, tol: float = 1e-6, max_iter: int = 200, H0=None,
                    basis: SectionBasis = None) -> BalancedResult:
    """Iterate ``H <- T(H)`` with trace fixed to N+1 until ``|T(H) - H| / |H| < tol``.

    The residual is the operator norm of the trace-normalized ``T(H) - H``.
    Raises :class:`MaxIterExceeded` with the last residual when ``max_iter``
    steps do not reach ``tol``.
    """
    if isinstance(cloud, CloudSections):
        cs = cloud
    else:
        cs = CloudSections.build(cloud, basis or section_basis(k, cloud.Z.shape[1]))
    dim = cs.dim
    H = HermitianForm.identity(dim) if H0 is None else as_form(H0).trace_normalized()
    residuals, traces = [], []
    seed = getattr(cs.cloud, "seed", None)
    for it in range(1, max_iter + 1):
        T = tmap(H, cs)
        traces.append(trace_pairing(H, T))
        Tn = T.matrix * (dim / np.trace(T.matrix).real)
        res = _residual(Tn, H.matrix)
        residuals.append(res)
        try:
            H_next = HermitianForm(Tn)
        except NonPositiveH as exc:
            raise NonPositiveDrift(f"T-map output lost positivity at iteration {it}") from exc
        log.debug("balanced k=%d it=%d residual=%.3e", k, it, res)
        if res < tol:
            # H is the fixed point to tolerance; return the last evaluated image
            return BalancedResult(H_next, it, res, seed, complex(t), k, cs.basis, tuple(residuals), tuple(traces))
        H = H_next
    raise MaxIterExceeded(f"balanced iteration did not reach {tol:g} in {max_iter} steps (residual {res:.3e})",
                          residual=res, iterations=max_iter)


def bergman_density(H, B: SectionBasis, x, cloud) -> np.ndarray:
    """Normalized Bergman function ``(N+1) D_{T(H)}(x) / D_H(x)``.

    ``D_{T(H)} / D_H`` is the pointwise sum of ``|s_a|^2`` over an orthonormal
    basis for the L^2 product ``T(H) / (N+1)``, measured in the fiber metric of
    ``H``.  Its mass-weighted cloud average is exactly N+1, and it is constant
    iff ``H`` is balanced.  ``x`` is a SurfacePoint, an array of normalized
    coordinates, or ``None`` for every cloud point.
    """
    cs = _sections(cloud, B)
    H = as_form(H)
    T = tmap(H, cs)
    if x is None:
        eta = cs.eta
    elif hasattr(x, "Z"):
        eta = cs.basis.values(x.Z[None, :])
    else:
        eta = cs.basis.values(np.atleast_2d(x))
    DT = np.einsum("na,na->n", eta.conj(), eta @ T.inverse.T).real
    DH = np.einsum("na,na->n", eta.conj(), eta @ H.inverse.T).real
    rho = cs.dim * DT / DH
    return rho if x is None or rho.size > 1 else float(rho[0])


def orthonormal_frame(H) -> np.ndarray:
    """``L`` with ``L^† H L = Id``; section values map to the frame as ``eta @ L.conj()``."""
    return as_form(H).frame()
