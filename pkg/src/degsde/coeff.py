"""Coefficient fields of the SDE class and their algebra.

Every field is evaluated in batches: a point array of shape ``(n, d)`` maps to
``(n,)``, ``(n, d)`` or ``(n, d, d)``.  A single point of shape ``(d,)`` is
also accepted and returns a scalar, a vector or a matrix.

The drift of the simulated equation is ``H_hat`` and the dispersion is
``sqrt(inv_psi) * sigma`` with ``sigma @ sigma.T == A``.  ``inv_psi`` (the
function 1/psi) is stored directly so that degeneracy points, where it
vanishes, never require a division.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import MissingField, NotPositiveDefinite, SingularPoint

PD_TOL = 1e-12


def _as_batch(x) -> tuple[np.ndarray, bool]:
    X = np.asarray(x, dtype=float)
    if X.ndim == 1:
        return X[None, :], True
    if X.ndim != 2:
        raise ValueError(f"points must have shape (d,) or (n, d), got {X.shape}")
    return X, False


def fd_step(X: np.ndarray) -> np.ndarray:
    """Central-difference step ``1e-5 * (1 + |x|)`` per point."""
    return 1e-5 * (1.0 + np.linalg.norm(X, axis=-1))


@dataclass(frozen=True, eq=False)
class ScalarField:
    dim: int
    fn: Callable[[np.ndarray], np.ndarray]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    point_fn: Optional[Callable[[np.ndarray], float]] = None
    constant: Optional[float] = None
    label: str = ""

    def __call__(self, x):
        X, single = _as_batch(x)
        if single and self.point_fn is not None:
            return self.point_fn(X[0])
        if self.constant is not None:
            out = np.full(X.shape[0], float(self.constant))
        else:
            out = np.asarray(self.fn(X), dtype=float)
        return float(out[0]) if single else out

    @classmethod
    def const(cls, d: int, value: float, label: str | None = None) -> "ScalarField":
        value = float(value)
        return cls(d, lambda X: np.full(X.shape[0], value), gradient=lambda X: np.zeros_like(X),
                   constant=value, label=label or repr(value))


@dataclass(frozen=True, eq=False)
class VectorField:
    dim: int
    fn: Callable[[np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    constant: Optional[np.ndarray] = None
    label: str = ""

    def __call__(self, x):
        X, single = _as_batch(x)
        if self.constant is not None:
            out = np.broadcast_to(self.constant, X.shape).copy()
        else:
            out = np.asarray(self.fn(X), dtype=float)
        return out[0] if single else out

    @classmethod
    def const(cls, d: int, value, label: str | None = None) -> "VectorField":
        v = np.asarray(value, dtype=float).reshape(d)
        return cls(d, lambda X: np.broadcast_to(v, X.shape).copy(),
                   jacobian=lambda X: np.zeros((X.shape[0], d, d)), constant=v,
                   label=label or str(v.tolist()))

    @classmethod
    def from_components(cls, comps: Sequence[ScalarField], label: str = "") -> "VectorField":
        d = len(comps)
        if all(c.constant is not None for c in comps):
            return cls.const(d, [c.constant for c in comps], label or None)
        return cls(d, lambda X: np.stack([c(X) for c in comps], axis=-1), label=label)


@dataclass(frozen=True, eq=False)
class MatrixField:
    """``divergence``, when given, is the exact row divergence ``sum_j d_j b_ij``."""

    dim: int
    fn: Callable[[np.ndarray], np.ndarray]
    divergence: Optional[Callable[[np.ndarray], np.ndarray]] = None
    constant: Optional[np.ndarray] = None
    label: str = ""

    def __call__(self, x):
        X, single = _as_batch(x)
        if self.constant is not None:
            out = np.broadcast_to(self.constant, (X.shape[0],) + self.constant.shape).copy()
        else:
            out = np.asarray(self.fn(X), dtype=float)
        return out[0] if single else out

    @classmethod
    def const(cls, value, label: str | None = None) -> "MatrixField":
        M = np.array(value, dtype=float)
        d = M.shape[0]
        return cls(d, lambda X: np.broadcast_to(M, (X.shape[0], d, d)).copy(),
                   divergence=lambda X: np.zeros((X.shape[0], d)), constant=M,
                   label=label or str(M.tolist()))

    @classmethod
    def from_components(cls, comps: Sequence[Sequence[ScalarField]], label: str = "",
                        divergence: Optional[Callable] = None) -> "MatrixField":
        d = len(comps)
        if divergence is None and all(c.constant is not None for row in comps for c in row):
            return cls.const([[c.constant for c in row] for row in comps], label or None)

        def fn(X):
            return np.stack([np.stack([c(X) for c in row], axis=-1) for row in comps], axis=-2)

        return cls(d, fn, divergence=divergence, label=label)

    @classmethod
    def scaled_identity(cls, d: int, scale: ScalarField, label: str = "") -> "MatrixField":
        I = np.eye(d)
        return cls(d, lambda X: scale(X)[:, None, None] * I, label=label)


class Factorization(str, Enum):
    CHOLESKY = "cholesky"
    SYMMETRIC_SQRT = "sqrt"
    EXPLICIT = "explicit"


def factorize(A_value, method: Factorization | str = Factorization.CHOLESKY) -> np.ndarray:
    """Return ``sigma`` with ``sigma @ sigma.T == A``. Works on ``(d, d)`` or ``(n, d, d)``.

    No jitter is ever added: a smallest eigenvalue ``<= 1e-12`` raises
    :class:`NotPositiveDefinite`.
    """
    method = Factorization(method)
    A = np.asarray(A_value, dtype=float)
    w, V = np.linalg.eigh(A)
    lam = w[..., 0]
    if np.any(lam <= PD_TOL) or not np.all(np.isfinite(w)):
        worst = float(np.min(lam))
        raise NotPositiveDefinite(f"matrix is not strictly positive definite (smallest eigenvalue {worst:.3e})")
    if method is Factorization.CHOLESKY:
        return np.linalg.cholesky(A)
    if method is Factorization.SYMMETRIC_SQRT:
        root = (V * np.sqrt(w)[..., None, :]) @ np.swapaxes(V, -1, -2)
        return 0.5 * (root + np.swapaxes(root, -1, -2))
    raise ValueError("the explicit factor comes from CoefficientSet.sigma, not from factorize")


def _check_singular(X: np.ndarray, singular_points: Sequence) -> None:
    for p in singular_points:
        hit = np.all(X == np.asarray(p, dtype=float), axis=-1)
        if np.any(hit):
            raise SingularPoint(f"evaluation at declared singular point {tuple(p)}")


def divergence_matrix(B: MatrixField, x, singular_points: Sequence = ()) -> np.ndarray:
    """Row divergence ``(div B)_i = sum_j d_j b_ij`` at ``x``.

    Uses ``B.divergence`` when present, otherwise central differences with step
    ``1e-5 * (1 + |x|)``.
    """
    X, single = _as_batch(x)
    _check_singular(X, singular_points)
    if B.divergence is not None:
        out = np.asarray(B.divergence(X), dtype=float)
    else:
        n, d = X.shape
        h = fd_step(X)
        out = np.zeros((n, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = 1.0
            shift = h[:, None] * e
            diff = B(X + shift)[:, :, j] - B(X - shift)[:, :, j]
            out += diff / (2.0 * h[:, None])
    return out[0] if single else out


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    d: int
    A: MatrixField
    inv_psi: ScalarField
    H_hat: VectorField
    C: Optional[MatrixField] = None
    sigma: Optional[MatrixField] = None
    H: Optional[VectorField] = None
    singular_points: tuple = ()
    # declared, never checked: e.g. {"vmo_modulus": "..."}
    metadata: dict = field(default_factory=dict)

    def psi(self, x):
        """psi = 1/inv_psi, +inf where inv_psi vanishes."""
        ip = np.asarray(self.inv_psi(x), dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(ip > 0.0, 1.0 / np.where(ip > 0.0, ip, 1.0), np.inf)

    def psi_bar(self, x):
        return self.psi(x)

    def div_A(self, x):
        return divergence_matrix(self.A, x, self.singular_points)

    def div_A_plus_C(self, x):
        """The divergence entering G: column divergence of A + C, i.e. row divergence of A - C."""
        out = self.div_A(x)
        if self.C is not None:
            out = out - divergence_matrix(self.C, x, self.singular_points)
        return out

    def validate(self, points) -> None:
        """Check the pointwise invariants at the sample ``points`` and raise on failure."""
        X, _ = _as_batch(points)
        A = self.A(X)
        asym = np.max(np.abs(A - np.swapaxes(A, -1, -2)))
        if asym > 1e-12:
            raise ValueError(f"A is not symmetric (max asymmetry {asym:.3e})")
        if self.C is not None:
            C = self.C(X)
            sym = np.max(np.abs(C + np.swapaxes(C, -1, -2)))
            if sym > 1e-12:
                raise ValueError(f"C is not anti-symmetric (max defect {sym:.3e})")
        ip = self.inv_psi(X)
        if np.any(ip < 0.0):
            raise ValueError("inv_psi takes negative values")
        if self.sigma is not None:
            S = self.sigma(X)
            rel = np.linalg.norm(S @ np.swapaxes(S, -1, -2) - A, axis=(-2, -1)) / np.linalg.norm(A, axis=(-2, -1))
            if np.max(rel) > 1e-10:
                raise ValueError(f"sigma sigma^T != A (relative error {np.max(rel):.3e})")


class DriftMode(str, Enum):
    FROM_HHAT = "from_hhat"
    FROM_H = "from_h"


def assemble_drift_G(coeffs: CoefficientSet, mode: DriftMode | str, x) -> np.ndarray:
    """Total drift ``G = (1/2 psi) div(A + C) + H``.

    With ``C = 0`` and ``H = H_hat - (1/2 psi) div A`` this is ``H_hat`` exactly,
    which is what the ``from_hhat`` mode returns.
    """
    mode = DriftMode(mode)
    X, single = _as_batch(x)
    _check_singular(X, coeffs.singular_points)
    if mode is DriftMode.FROM_HHAT:
        out = coeffs.H_hat(X)
    else:
        if coeffs.H is None:
            raise MissingField("mode from_h needs the field H")
        out = 0.5 * coeffs.inv_psi(X)[:, None] * coeffs.div_A_plus_C(X) + coeffs.H(X)
    return out[0] if single else out


def H_from_Hhat(coeffs: CoefficientSet) -> VectorField:
    """The field ``H = H_hat - (1/2 psi) div A`` (assumes ``C = 0``)."""
    return VectorField(coeffs.d, lambda X: coeffs.H_hat(X) - 0.5 * coeffs.inv_psi(X)[:, None] * coeffs.div_A(X))


@dataclass(frozen=True)
class LinearGaussian:
    """Closed-form family ``dX = (b + B X) dt + S dW`` with ``Q = S S^T`` constant."""

    B: np.ndarray
    b: np.ndarray
    Q: np.ndarray


@dataclass(frozen=True, eq=False)
class SdeSpec:
    coeffs: CoefficientSet
    factorization: Factorization = Factorization.CHOLESKY
    degeneracy_eps_ladder: tuple = (0.1, 0.05, 0.01)
    domain_radius_max: float = 1e3
    gaussian: Optional[LinearGaussian] = None
    name: str = "custom"
    # canonical description used for the provenance hash
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "factorization", Factorization(self.factorization))
        ladder = tuple(float(e) for e in self.degeneracy_eps_ladder)
        if any(e <= 0 for e in ladder) or any(a <= b for a, b in zip(ladder, ladder[1:])):
            raise ValueError(f"eps ladder must be positive and strictly decreasing: {ladder}")
        object.__setattr__(self, "degeneracy_eps_ladder", ladder)
        if self.factorization is Factorization.EXPLICIT and self.coeffs.sigma is None:
            raise MissingField("explicit factorization needs coeffs.sigma")

    @property
    def d(self) -> int:
        return self.coeffs.d

    @cached_property
    def constant_sigma(self) -> Optional[np.ndarray]:
        """Factor of A when A is constant, computed once."""
        if self.factorization is Factorization.EXPLICIT:
            s = self.coeffs.sigma
            return None if s.constant is None else np.asarray(s.constant)
        if self.coeffs.A.constant is None:
            return None
        return factorize(self.coeffs.A.constant, self.factorization)

    def sigma(self, X: np.ndarray) -> np.ndarray:
        """Factor of A at a batch of points, shape ``(n, d, d)``."""
        const = self.constant_sigma
        if const is not None:
            return np.broadcast_to(const, (X.shape[0],) + const.shape)
        if self.factorization is Factorization.EXPLICIT:
            return self.coeffs.sigma(X)
        return factorize(self.coeffs.A(X), self.factorization)

    def with_factorization(self, method: Factorization | str) -> "SdeSpec":
        src = dict(self.source)
        src["factorization"] = Factorization(method).value
        return SdeSpec(self.coeffs, method, self.degeneracy_eps_ladder, self.domain_radius_max,
                       self.gaussian, self.name, src)

    @property
    def spec_hash(self) -> str:
        src = dict(self.source) or {"name": self.name}
        src.setdefault("factorization", self.factorization.value)
        src.setdefault("eps_ladder", list(self.degeneracy_eps_ladder))
        blob = json.dumps(src, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def sigma_hat(spec: SdeSpec, x) -> np.ndarray:
    """Dispersion ``sqrt(inv_psi(x)) * sigma(x)``; exactly zero where inv_psi vanishes."""
    X, single = _as_batch(x)
    root = np.sqrt(spec.coeffs.inv_psi(X))
    out = root[:, None, None] * spec.sigma(X)
    return out[0] if single else out
