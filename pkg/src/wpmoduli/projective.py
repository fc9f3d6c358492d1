"""Homogeneous polynomials, affine charts and Fubini-Study pullbacks on hypersurfaces.

Everything here is vectorized over a leading batch axis: a batch of points is a
``(n, n_vars)`` complex array of homogeneous coordinates, normalized so that the
chart's dehomogenizing coordinate equals exactly 1, plus two integer arrays
``dehom`` and ``dep`` naming the coordinate set to 1 and the coordinate solved
implicitly from the defining equation.  The remaining ``n_vars - 2`` indices are
the free (holomorphic) chart coordinates.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from math import comb
from typing import Mapping

import numpy as np

from .errors import AllGradientsTiny, DivisionNearZero, RootPolishFailed
from .hermitian import as_form

Monomial = tuple

G4_I = -3.151212
"""Eisenstein series value used for the Weierstrass cubic test fixture."""

GRADIENT_TINY = 1e-8
DENSITY_TINY = 1e-12
RESIDUAL_RTOL = 1e-10


def _power_table(Z: np.ndarray, max_power: int) -> np.ndarray:
    """``out[..., v, p] = Z[..., v] ** p`` for ``p = 0..max_power``."""
    out = np.empty(Z.shape + (max_power + 1,), dtype=np.complex128)
    out[..., 0] = 1.0
    for p in range(1, max_power + 1):
        out[..., p] = out[..., p - 1] * Z
    return out


def _gather_monomials(pw: np.ndarray, exps: np.ndarray) -> np.ndarray:
    """Evaluate monomials with exponent rows ``exps`` from a power table."""
    n_vars = exps.shape[1]
    out = pw[..., 0, exps[:, 0]]
    for v in range(1, n_vars):
        out = out * pw[..., v, exps[:, v]]
    return out


@dataclass(frozen=True, eq=False)
class HomogeneousPolynomial:
    """Sparse homogeneous polynomial: exponent tuple -> complex coefficient."""

    degree: int
    terms: Mapping[Monomial, complex]
    n_vars: int = field(default=None)

    def __post_init__(self):
        terms = {}
        n_vars = self.n_vars
        for mono, coef in self.terms.items():
            mono = tuple(int(e) for e in mono)
            if n_vars is None:
                n_vars = len(mono)
            if len(mono) != n_vars or min(mono) < 0:
                raise ValueError(f"bad monomial {mono}")
            if sum(mono) != self.degree:
                raise ValueError(f"monomial {mono} does not have degree {self.degree}")
            coef = complex(coef)
            if coef != 0:
                terms[mono] = terms.get(mono, 0) + coef
        if n_vars is None:
            raise ValueError("cannot infer the number of variables of an empty polynomial")
        terms = {m: c for m, c in terms.items() if c != 0}
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "n_vars", n_vars)

    @cached_property
    def exponents(self) -> np.ndarray:
        if not self.terms:
            return np.zeros((0, self.n_vars), dtype=np.int64)
        return np.array(list(self.terms.keys()), dtype=np.int64)

    @cached_property
    def coefficients(self) -> np.ndarray:
        return np.array(list(self.terms.values()), dtype=np.complex128)

    @property
    def max_coefficient(self) -> float:
        return float(np.abs(self.coefficients).max()) if self.terms else 0.0

    def __len__(self):
        return len(self.terms)

    def __call__(self, Z) -> np.ndarray:
        return self.evaluate(Z)

    def evaluate(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.complex128)
        if not self.terms:
            return np.zeros(Z.shape[:-1], dtype=np.complex128)
        pw = _power_table(Z, max(self.degree, 1))
        return _gather_monomials(pw, self.exponents) @ self.coefficients

    def partial(self, i: int) -> "HomogeneousPolynomial":
        return self._partials[i]

    @cached_property
    def _partials(self):
        out = []
        for i in range(self.n_vars):
            terms = {}
            for mono, coef in self.terms.items():
                if mono[i] > 0:
                    m = list(mono)
                    m[i] -= 1
                    terms[tuple(m)] = coef * mono[i]
            out.append(HomogeneousPolynomial(max(self.degree - 1, 0), terms, self.n_vars))
        return out

    def gradient(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.complex128)
        return np.stack([self.partial(i).evaluate(Z) for i in range(self.n_vars)], axis=-1)

    def hessian(self, Z) -> np.ndarray:
        Z = np.asarray(Z, dtype=np.complex128)
        nv = self.n_vars
        out = np.empty(Z.shape[:-1] + (nv, nv), dtype=np.complex128)
        for i in range(nv):
            pi = self.partial(i)
            for j in range(i, nv):
                out[..., i, j] = pi.partial(j).evaluate(Z)
                out[..., j, i] = out[..., i, j]
        return out

    def scaled(self, c: complex) -> "HomogeneousPolynomial":
        return HomogeneousPolynomial(self.degree, {m: c * v for m, v in self.terms.items()}, self.n_vars)

    def __add__(self, other: "HomogeneousPolynomial") -> "HomogeneousPolynomial":
        if other.degree != self.degree or other.n_vars != self.n_vars:
            raise ValueError("can only add polynomials of equal degree and arity")
        terms = dict(self.terms)
        for m, c in other.terms.items():
            terms[m] = terms.get(m, 0) + c
        return HomogeneousPolynomial(self.degree, terms, self.n_vars)

    def __sub__(self, other):
        return self + other.scaled(-1.0)

    def __repr__(self):
        return f"HomogeneousPolynomial(degree={self.degree}, n_terms={len(self.terms)})"


def eval_and_grad(P: HomogeneousPolynomial, Z):
    """Value and ambient partials ``dP/dZ_i`` (broadcast over leading axes)."""
    return P.evaluate(Z), P.gradient(Z)


def quintic_at(t: complex) -> HomogeneousPolynomial:
    """``Z0^5 + ... + Z4^5 - 5 t Z0 Z1 Z2 Z3 Z4``."""
    terms = {tuple(5 * int(i == j) for j in range(5)): 1.0 for i in range(5)}
    terms[(1, 1, 1, 1, 1)] = -5.0 * complex(t)
    return HomogeneousPolynomial(5, terms, 5)


def deformation_poly() -> HomogeneousPolynomial:
    """t-derivative of the quintic family, ``-5 Z0 Z1 Z2 Z3 Z4``."""
    return HomogeneousPolynomial(5, {(1, 1, 1, 1, 1): -5.0}, 5)


def weierstrass_cubic(g4: float = G4_I) -> HomogeneousPolynomial:
    """``Z2^2 Z0 - 4 Z1^3 + 60 g4 Z1 Z0^2`` on P^2 (an elliptic curve)."""
    return HomogeneousPolynomial(3, {(1, 0, 2): 1.0, (0, 3, 0): -4.0, (2, 1, 0): 60.0 * g4}, 3)


def fifth_root_distance(t: complex) -> float:
    """Distance from ``t`` to the nearest singular modulus (fifth root of unity)."""
    roots = np.exp(2j * np.pi * np.arange(5) / 5)
    return float(np.abs(complex(t) - roots).min())


def canonical_modulus(t: complex) -> complex:
    """Representative of ``t`` with ``0 <= arg t < 2 pi / 5``."""
    t = complex(t)
    if t == 0:
        return t
    sector = 2 * np.pi / 5
    arg = np.angle(t) % (2 * np.pi)
    return abs(t) * np.exp(1j * (arg % sector))


# --------------------------------------------------------------------------- charts


@dataclass(frozen=True)
class Chart:
    dehom_index: int
    dep_index: int
    free_indices: tuple

    def __post_init__(self):
        if self.dehom_index == self.dep_index:
            raise ValueError("dehomogenizing and dependent coordinates must differ")
        rest = set(self.free_indices) | {self.dep_index}
        if self.dehom_index in rest or len(rest) != len(self.free_indices) + 1:
            raise ValueError("chart indices must partition the non-dehomogenized coordinates")

    @classmethod
    def from_indices(cls, n_vars: int, dehom: int, dep: int) -> "Chart":
        free = tuple(i for i in range(n_vars) if i not in (dehom, dep))
        return cls(int(dehom), int(dep), free)


@lru_cache(maxsize=None)
def free_index_table(n_vars: int) -> np.ndarray:
    """``table[d, e]`` = sorted free indices of the chart (dehom d, dep e)."""
    table = np.zeros((n_vars, n_vars, n_vars - 2), dtype=np.int64)
    for d, e in itertools.product(range(n_vars), repeat=2):
        if d != e:
            table[d, e] = [i for i in range(n_vars) if i not in (d, e)]
    table.setflags(write=False)
    return table


def normalize_points(Z: np.ndarray):
    """Divide by the largest-modulus coordinate; return (Zn, dehom)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.complex128))
    dehom = np.argmax(np.abs(Z), axis=-1)
    Zn = Z / np.take_along_axis(Z, dehom[:, None], axis=1)
    Zn[np.arange(len(Zn)), dehom] = 1.0
    return Zn, dehom


def dependent_index(grad: np.ndarray, dehom: np.ndarray) -> np.ndarray:
    g = np.abs(grad).copy()
    g[np.arange(len(g)), dehom] = -1.0
    return np.argmax(g, axis=-1)


def assign_charts(Z: np.ndarray, P: HomogeneousPolynomial, strict: bool = True):
    """Normalize points and pick charts.

    Returns ``(Zn, dehom, dep, grad, ok)``.  With ``strict`` an
    :class:`AllGradientsTiny` is raised when any point has a vanishing gradient;
    otherwise ``ok`` flags the usable points.
    """
    Zn, dehom = normalize_points(Z)
    grad = P.gradient(Zn)
    dep = dependent_index(grad, dehom)
    gmax = np.abs(grad[np.arange(len(Zn)), dep])
    ok = gmax >= GRADIENT_TINY
    if strict and not ok.all():
        raise AllGradientsTiny(f"gradient modulus {gmax.min():.3e} below {GRADIENT_TINY}")
    return Zn, dehom, dep, grad, ok


def choose_chart(x, P: HomogeneousPolynomial) -> Chart:
    """Chart for a single point: largest |Z_i| dehomogenizes, largest gradient is dependent."""
    Zn, dehom, dep, _, _ = assign_charts(np.asarray(x)[None, :], P)
    return Chart.from_indices(P.n_vars, dehom[0], dep[0])


def polish_points(Zn, dehom, dep, P: HomogeneousPolynomial, steps: int = 1):
    """Newton steps in the dependent coordinate; returns (Zn, grad, residual_ok)."""
    idx = np.arange(len(Zn))
    Zn = Zn.copy()
    for _ in range(steps):
        val = P.evaluate(Zn)
        grad = P.gradient(Zn)
        pd = grad[idx, dep]
        Zn[idx, dep] -= val / pd
    grad = P.gradient(Zn)
    resid = np.abs(P.evaluate(Zn))
    ok = resid <= RESIDUAL_RTOL * P.max_coefficient
    return Zn, grad, ok


def nu_density(grad: np.ndarray, dep: np.ndarray) -> np.ndarray:
    """Residue density ``f = 1 / (dp/dw_dep)``; ``|f|^2`` is the density of nu∧nū."""
    pd = grad[np.arange(len(grad)), dep]
    if np.any(np.abs(pd) < DENSITY_TINY):
        raise DivisionNearZero("dependent-coordinate derivative below 1e-12")
    return 1.0 / pd


def dependent_slopes(grad: np.ndarray, dehom: np.ndarray, dep: np.ndarray) -> np.ndarray:
    """``dw_dep/dw_i = -p_i/p_dep`` for the free indices, shape (n, n_free)."""
    idx = np.arange(len(grad))
    free = free_index_table(grad.shape[1])[dehom, dep]
    pd = grad[idx, dep]
    return -np.take_along_axis(grad, free, axis=1) / pd[:, None]


# --------------------------------------------------------------------------- sections


@dataclass(frozen=True, eq=False)
class SectionBasis:
    """Monomial basis of H^0(O(k)) modulo the leading monomial of the defining polynomial."""

    degree: int
    monomials: tuple

    @cached_property
    def exponents(self) -> np.ndarray:
        e = np.array(self.monomials, dtype=np.int64).reshape(len(self.monomials), -1)
        e.setflags(write=False)
        return e

    @property
    def dim(self) -> int:
        return len(self.monomials)

    @property
    def n_vars(self) -> int:
        return self.exponents.shape[1]

    def values(self, Zn: np.ndarray) -> np.ndarray:
        """Section values ``eta_a`` in the chart frame (points normalized, Z_dehom = 1)."""
        pw = _power_table(np.asarray(Zn, dtype=np.complex128), max(self.degree, 1))
        return _gather_monomials(pw, self.exponents)

    def values_and_partials(self, Zn: np.ndarray):
        """``eta`` (n, N) and ambient partials ``d eta / dZ_i`` (n, N, n_vars)."""
        Zn = np.asarray(Zn, dtype=np.complex128)
        E = self.exponents
        pw = _power_table(Zn, max(self.degree, 1))
        factors = [pw[:, v, E[:, v]] for v in range(self.n_vars)]
        eta = factors[0].copy()
        for f in factors[1:]:
            eta *= f
        d = np.empty(eta.shape + (self.n_vars,), dtype=np.complex128)
        for i in range(self.n_vars):
            lower = pw[:, i, np.maximum(E[:, i] - 1, 0)] * E[:, i]
            prod = lower
            for v in range(self.n_vars):
                if v != i:
                    prod = prod * factors[v]
            d[:, :, i] = prod
        return eta, d


def enumerate_monomials(n_vars: int, degree: int):
    """All exponent tuples of given degree, graded-lexicographic (descending) order."""
    out = []
    for combo in itertools.combinations_with_replacement(range(n_vars), degree):
        e = [0] * n_vars
        for v in combo:
            e[v] += 1
        out.append(tuple(e))
    return sorted(out, reverse=True)


def section_basis(k: int, n_vars: int = 5, leading: Monomial = None) -> SectionBasis:
    """Degree-k monomials not divisible by ``leading`` (default ``Z0^5`` for the quintic)."""
    if k < 1:
        raise ValueError("section degree k must be >= 1")
    if leading is None:
        leading = (n_vars,) + (0,) * (n_vars - 1)
    leading = tuple(leading)
    monos = [m for m in enumerate_monomials(n_vars, k) if any(a < b for a, b in zip(m, leading))]
    return SectionBasis(k, tuple(monos))


def expected_dimension(k: int, n_vars: int = 5, degree: int = 5) -> int:
    """``C(k+n,n) - C(k-d+n,n)``: dimension of H^0(O(k)) on a degree-d hypersurface."""
    n = n_vars - 1
    second = comb(k - degree + n, n) if k >= degree else 0
    return comb(k + n, n) - second


# --------------------------------------------------------------------------- pullbacks


def tangent_jacobian(d_eta: np.ndarray, grad: np.ndarray, dehom, dep) -> np.ndarray:
    """Total derivatives ``d eta / dw_i`` along the hypersurface, shape (n, n_free, N)."""
    idx = np.arange(len(grad))
    free = free_index_table(grad.shape[1])[dehom, dep]
    slopes = dependent_slopes(grad, dehom, dep)
    d_free = np.take_along_axis(d_eta, free[:, None, :], axis=2)  # (n, N, nf)
    d_dep = d_eta[idx, :, dep]  # (n, N)
    J = d_free + d_dep[:, :, None] * slopes[:, None, :]
    return np.transpose(J, (0, 2, 1))


def fs_pullback_batch(H, basis: SectionBasis, Zn, dehom, dep, grad):
    """Potential ``log D_H`` and pulled-back metric ``g[n, i, j] = g_{i jbar}``."""
    H = as_form(H)
    A = H.inverse
    eta, d_eta = basis.values_and_partials(Zn)
    J = tangent_jacobian(d_eta, grad, dehom, dep)
    Aeta = eta @ A.T
    D = np.einsum("na,na->n", eta.conj(), Aeta).real
    AJ = J @ A.T
    M = np.einsum("nja,nia->nij", J.conj(), AJ)
    v = np.einsum("na,nia->ni", eta.conj(), AJ)
    g = M / D[:, None, None] - v[:, :, None] * v.conj()[:, None, :] / (D**2)[:, None, None]
    return np.log(D), g


def fs_pullback(H, basis: SectionBasis, x: "SurfacePoint"):
    """Single-point version of :func:`fs_pullback_batch`."""
    phi, g = fs_pullback_batch(
        H, basis, x.Z[None, :], np.array([x.chart.dehom_index]), np.array([x.chart.dep_index]),
        x.grad_p[None, :],
    )
    return float(phi[0]), g[0]


@dataclass(frozen=True, eq=False)
class SurfacePoint:
    """A point on the hypersurface with its chart and cached first-order data."""

    Z: np.ndarray
    chart: Chart
    grad_p: np.ndarray
    nu_density: complex
    poly: HomogeneousPolynomial = field(repr=False)
    _sections: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_homogeneous(cls, Z, P: HomogeneousPolynomial, polish: bool = True) -> "SurfacePoint":
        Zn, dehom, dep, grad, _ = assign_charts(np.asarray(Z)[None, :], P)
        if polish:
            Zn, grad, ok = polish_points(Zn, dehom, dep, P)
        else:
            ok = np.abs(P.evaluate(Zn)) <= RESIDUAL_RTOL * P.max_coefficient
        if not ok[0]:
            raise RootPolishFailed(f"|p(Z)| = {abs(P.evaluate(Zn)[0]):.3e} after polishing")
        f = nu_density(grad, dep)[0]
        Zn = Zn[0]
        Zn.setflags(write=False)
        return cls(Zn, Chart.from_indices(P.n_vars, dehom[0], dep[0]), grad[0], complex(f), P)

    def section_values(self, basis: SectionBasis) -> np.ndarray:
        key = id(basis)
        if key not in self._sections:
            self._sections[key] = basis.values(self.Z[None, :])[0]
        return self._sections[key]


def fubini_study_mass(H, Zn, dehom, dep, grad, basis: SectionBasis = None):
    """Raw mass ``|f|^2 / det g_FS(H)`` for a batch; the FS metric lives on O(1) unless ``basis`` is given."""
    if basis is None:
        basis = section_basis(1, Zn.shape[1])
    _, g = fs_pullback_batch(H, basis, Zn, dehom, dep, grad)
    det = np.linalg.det(g).real
    f = nu_density(grad, dep)
    return np.abs(f) ** 2 / det, det
