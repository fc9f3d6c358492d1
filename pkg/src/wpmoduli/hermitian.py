"""Positive-definite Hermitian forms on spaces of sections."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import FactorizationFailed, NonPositiveH

HERMITIAN_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class HermitianForm:
    """A positive-definite Hermitian matrix ``H`` on the section space.

    Convention: ``H[a, b] = <s_a, s_b>`` so that a point with section
    vector ``eta`` has Fubini-Study potential ``log(eta^† H^{-1} eta)``.

    The matrix is re-symmetrized on construction; set ``check=False`` to skip
    the positive-definiteness test (used on hot inner loops that check
    separately).
    """

    matrix: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.complex128)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {m.shape}")
        m = 0.5 * (m + m.conj().T)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if self.check:
            _ = self.cholesky

    @classmethod
    def identity(cls, dim: int) -> "HermitianForm":
        return cls(np.eye(dim, dtype=np.complex128))

    @classmethod
    def random(cls, dim: int, rng: np.random.Generator, spread: float = 0.5) -> "HermitianForm":
        """Random positive-definite form ``exp(spread * X)`` with ``X`` Hermitian Gaussian."""
        x = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        x = 0.5 * (x + x.conj().T) / np.sqrt(dim)
        w, v = np.linalg.eigh(x)
        return cls((v * np.exp(spread * w)) @ v.conj().T)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def cholesky(self) -> np.ndarray:
        """Lower-triangular ``C`` with ``H = C C^†``."""
        try:
            return np.linalg.cholesky(self.matrix)
        except np.linalg.LinAlgError as exc:
            raise NonPositiveH("Hermitian form is not positive definite") from exc

    @cached_property
    def inverse(self) -> np.ndarray:
        c_inv = np.linalg.inv(self.cholesky)
        inv = c_inv.conj().T @ c_inv
        return 0.5 * (inv + inv.conj().T)

    def frame(self) -> np.ndarray:
        """Matrix ``L`` with ``L^† H L = Id``.

        Section vectors map to an H-orthonormal frame as ``s' = L^† eta``.
        """
        try:
            c_inv = np.linalg.inv(self.cholesky)
        except (np.linalg.LinAlgError, NonPositiveH) as exc:
            raise FactorizationFailed(str(exc)) from exc
        return c_inv.conj().T

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def scaled(self, c: float) -> "HermitianForm":
        return HermitianForm(c * self.matrix)

    def trace_normalized(self) -> "HermitianForm":
        """Rescale so that ``trace(H) = dim``."""
        return HermitianForm(self.matrix * (self.dim / np.trace(self.matrix).real))

    def density(self, eta: np.ndarray) -> np.ndarray:
        """``D_H = eta^† H^{-1} eta`` for section vectors ``eta`` of shape (..., dim)."""
        return np.einsum("...a,ab,...b->...", eta.conj(), self.inverse, eta).real


def as_form(h) -> HermitianForm:
    if isinstance(h, HermitianForm):
        return h
    return HermitianForm(np.asarray(h))


def check_hermitian(m: np.ndarray, rtol: float = HERMITIAN_RTOL) -> bool:
    m = np.asarray(m)
    scale = max(np.abs(m).max(), 1e-300)
    return bool(np.abs(m - m.conj().T).max() <= rtol * scale)
