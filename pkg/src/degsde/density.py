"""Candidate infinitesimally invariant density on a truncated box.

The stationary divergence-form identity

    div( 1/2 (A + C^T) grad rho - rho psi H ) = 0

is discretized by cell-centred finite volumes with zero flux through the box
boundary and closed by the normalization ``sum rho psi dx = 1``.  Diffusive
fluxes use two-point differences normal to a face and averaged central
differences across it; the advective flux uses the face average of rho.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .coeff import CoefficientSet, DriftMode, assemble_drift_G, divergence_matrix
from .errors import DomainError, NonPositiveSolution, OutOfBox, SingularPoint, SingularSystem


@dataclass
class DensityGrid:
    lo: np.ndarray
    hi: np.ndarray
    values: np.ndarray  # rho at cell centres, shape = cells per axis
    normalization: float = 1.0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        self.values = np.asarray(self.values, dtype=float)

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / np.asarray(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> list[np.ndarray]:
        h = self.spacing
        return [self.lo[k] + h[k] * (np.arange(n) + 0.5) for k, n in enumerate(self.shape)]

    def centers(self) -> np.ndarray:
        """Cell centres in C order, shape ``(N, d)``."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @classmethod
    def from_function(cls, fn: Callable, lo, hi, shape, psi: Optional[Callable] = None,
                      normalization: float = 1.0) -> "DensityGrid":
        """Sample ``fn`` at the cell centres and normalize ``sum rho psi dx``."""
        grid = cls(lo, hi, np.zeros(tuple(shape)), normalization)
        X = grid.centers()
        vals = np.asarray(fn(X), dtype=float)
        weight = np.ones(len(X)) if psi is None else psi(X)
        grid.values = (vals * normalization / (np.sum(vals * weight) * grid.cell_volume)).reshape(grid.shape)
        return grid

    def gradient(self) -> np.ndarray:
        """Central differences of rho at cell centres (one-sided at the boundary), shape ``shape + (d,)``."""
        return np.stack(np.gradient(self.values, *self.spacing, edge_order=1), axis=-1)

    def _check_inside(self, X: np.ndarray) -> None:
        if np.any(X < self.lo) or np.any(X > self.hi):
            raise OutOfBox("query point outside the density box")

    def interpolate(self, x, data: Optional[np.ndarray] = None) -> np.ndarray:
        """Multilinear interpolation of cell-centred ``data`` (default rho), clamped at the outer half cell."""
        X = np.atleast_2d(np.asarray(x, dtype=float))
        self._check_inside(X)
        data = self.values if data is None else data
        h = self.spacing
        pos = (X - self.lo) / h - 0.5
        n = np.asarray(self.shape)
        pos = np.clip(pos, 0.0, n - 1.0)
        i0 = np.minimum(np.floor(pos).astype(int), np.maximum(n - 2, 0))
        frac = pos - i0
        extra = data.shape[self.d:]
        out = np.zeros((X.shape[0],) + extra)
        for corner in range(1 << self.d):
            bits = [(corner >> k) & 1 for k in range(self.d)]
            w = np.ones(X.shape[0])
            idx = []
            for k, b in enumerate(bits):
                w = w * (frac[:, k] if b else 1.0 - frac[:, k])
                idx.append(np.minimum(i0[:, k] + b, n[k] - 1))
            vals = data[tuple(idx)]
            out += w.reshape((-1,) + (1,) * len(extra)) * vals
        return out

    def save(self, path: str | Path, **header) -> None:
        np.savez(path, lo=self.lo, hi=self.hi, values=self.values,
                 normalization=self.normalization, header=np.array(repr(header)))

    @classmethod
    def load(cls, path: str | Path) -> "DensityGrid":
        with np.load(path) as z:
            return cls(z["lo"], z["hi"], z["values"], float(z["normalization"]))

    def write_slice_csv(self, path: str | Path, axis: int = 0, meta: dict | None = None) -> None:
        """rho along ``axis`` through the cell nearest the box centre."""
        mid = [n // 2 for n in self.shape]
        idx = list(mid)
        idx[axis] = slice(None)
        centres = [ax[m] for ax, m in zip(self.axes(), mid)]
        with open(path, "w", newline="") as fh:
            for k in sorted(meta or {}):
                fh.write(f"# {k}={meta[k]}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x_{k + 1}" for k in range(self.d)] + ["rho"])
            for i, v in enumerate(self.values[tuple(idx)]):
                pt = list(centres)
                pt[axis] = self.axes()[axis][i]
                w.writerow([repr(float(c)) for c in pt] + [repr(float(v))])


def _eval_on_faces(fn: Callable, F: np.ndarray, left: np.ndarray, right: np.ndarray, singular) -> np.ndarray:
    """Evaluate ``fn`` at face centres; faces on a declared singular point take the
    mean of the two adjacent cell-centre values instead."""
    hit = np.zeros(len(F), dtype=bool)
    for p in singular:
        hit |= np.all(F == np.asarray(p, dtype=float), axis=1)
    if not hit.any():
        return fn(F)
    out = np.empty((len(F),) + np.shape(fn(F[:1]))[1:])
    if (~hit).any():
        out[~hit] = fn(F[~hit])
    out[hit] = 0.5 * (fn(left[hit]) + fn(right[hit]))
    return out


def _psi_H(coeffs: CoefficientSet, X: np.ndarray) -> np.ndarray:
    """psi H with H = H_hat - (1/2psi) div(A + C) unless H is given explicitly."""
    ip = coeffs.inv_psi(X)
    if coeffs.H is not None:
        vec = coeffs.H(X)
        correction = 0.0
    else:
        vec = coeffs.H_hat(X)
        correction = 0.5 * coeffs.div_A_plus_C(X)
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = np.where(vec == 0.0, 0.0, vec / ip[:, None])
    out = scaled - correction
    if not np.all(np.isfinite(out)):
        raise DomainError("psi H is not finite on the grid (inv_psi vanishes where the drift does not)")
    return out


def solve_rho(coeffs: CoefficientSet, lo: Sequence[float], hi: Sequence[float], shape: Sequence[int],
              normalization: float = 1.0) -> DensityGrid:
    """Finite-volume solve for rho on the box ``[lo, hi]`` with ``shape`` cells per axis."""
    d = coeffs.d
    shape = tuple(int(n) for n in shape)
    if len(shape) != d:
        raise ValueError(f"grid shape {shape} does not match dimension {d}")
    grid = DensityGrid(lo, hi, np.zeros(shape), normalization)
    h = grid.spacing
    N = int(np.prod(shape))
    centres = grid.centers()
    for p in coeffs.singular_points:
        if np.any(np.all(centres == np.asarray(p, dtype=float), axis=1)):
            raise SingularPoint(f"singular point {p} coincides with a cell centre; change the resolution")
    cell = np.arange(N).reshape(shape)

    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(r)
        cols.append(c)
        vals.append(v)

    # transverse central differences per cell: g_j(c) = (rho[c+] - rho[c-]) / span
    trans = []
    for j in range(d):
        plus = np.roll(cell, -1, axis=j)
        minus = np.roll(cell, 1, axis=j)
        span = np.full(shape, 2.0 * h[j])
        sl_first = [slice(None)] * d
        sl_first[j] = 0
        sl_last = [slice(None)] * d
        sl_last[j] = -1
        minus[tuple(sl_first)] = cell[tuple(sl_first)]
        plus[tuple(sl_last)] = cell[tuple(sl_last)]
        span[tuple(sl_first)] = h[j]
        span[tuple(sl_last)] = h[j]
        if shape[j] == 1:
            span[...] = np.inf
        trans.append((plus, minus, span))

    for k in range(d):
        if shape[k] < 2:
            continue
        sl_l = [slice(None)] * d
        sl_l[k] = slice(0, -1)
        sl_r = [slice(None)] * d
        sl_r[k] = slice(1, None)
        L = cell[tuple(sl_l)].ravel()
        R = cell[tuple(sl_r)].ravel()
        XL, XR = centres[L], centres[R]
        F = 0.5 * (XL + XR)
        singular = coeffs.singular_points

        def M_of(X):
            A = coeffs.A(X)
            if coeffs.C is not None:
                A = A + np.swapaxes(coeffs.C(X), -1, -2)
            return 0.5 * A

        M = _eval_on_faces(M_of, F, XL, XR, singular)
        w = _eval_on_faces(lambda X: _psi_H(coeffs, X), F, XL, XR, singular)

        # flux across the face from L to R, as a linear form in rho
        terms = [
            (R, M[:, k, k] / h[k]),
            (L, -M[:, k, k] / h[k]),
            (L, -0.5 * w[:, k]),
            (R, -0.5 * w[:, k]),
        ]
        for j in range(d):
            if j == k:
                continue
            plus, minus, span = trans[j]
            for C in (L, R):
                coef = 0.5 * M[:, k, j] / span.ravel()[C]
                terms.append((plus.ravel()[C], coef))
                terms.append((minus.ravel()[C], -coef))
        for c, coef in terms:
            add(L, c, coef / h[k])
            add(R, c, -coef / h[k])

    K = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    )
    psi_c = coeffs.psi(centres)
    if not np.all(np.isfinite(psi_c)):
        raise DomainError("psi is infinite at a cell centre; the normalization row is undefined")
    weights = psi_c * grid.cell_volume

    # the balance rows sum to zero, so one of them can carry the normalization
    drop = N - 1
    Kn = K.tolil()
    Kn[drop, :] = weights
    rhs = np.zeros(N)
    rhs[drop] = normalization
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            rho = spsolve(Kn.tocsc(), rhs)
        except (MatrixRankWarning, RuntimeError) as exc:
            raise SingularSystem(f"flux-balance system is singular: {exc}") from exc
    if not np.all(np.isfinite(rho)):
        raise SingularSystem("flux-balance solve produced non-finite values")

    grid.values = rho.reshape(shape)
    grid.diagnostics = {
        "flux_residual": float(np.max(np.abs(K @ rho))),
        "normalization_residual": float(abs(weights @ rho - normalization)),
        "cells": N,
        "spacing": h.tolist(),
    }
    if rho.min() <= 0.0:
        worst = np.unravel_index(int(np.argmin(rho)), shape)
        raise NonPositiveSolution(
            f"density has non-positive cells (min {rho.min():.3e} at cell {worst}); refine the grid or enlarge the box",
            cell=worst, value=float(rho.min()),
        )
    return grid


def beta_field(coeffs: CoefficientSet, rho: DensityGrid, x) -> np.ndarray:
    """``(1/2psi) div A + (1/(2 psi rho)) A^T grad rho`` with rho and grad rho interpolated from the grid."""
    X, single = (np.asarray(x, dtype=float)[None, :], True) if np.ndim(x) == 1 else (np.asarray(x, dtype=float), False)
    if np.any(X <= rho.lo) or np.any(X >= rho.hi):
        raise OutOfBox("beta_field needs points strictly inside the box")
    r = rho.interpolate(X)
    grad = rho.interpolate(X, rho.gradient())
    out = _beta(coeffs, X, r, grad)
    return out[0] if single else out


def _beta(coeffs: CoefficientSet, X: np.ndarray, r: np.ndarray, grad: np.ndarray) -> np.ndarray:
    ip = coeffs.inv_psi(X)
    A = coeffs.A(X)
    divA = divergence_matrix(coeffs.A, X, coeffs.singular_points)
    return 0.5 * ip[:, None] * divA + 0.5 * (ip / r)[:, None] * np.einsum("nji,nj->ni", A, grad)


@dataclass(frozen=True)
class Bump:
    """Smooth bump ``exp(-1 / (1 - |x - c|^2 / s^2))`` supported in ``B_s(c)``."""

    center: tuple
    scale: float

    def value(self, X: np.ndarray) -> np.ndarray:
        u = np.sum((X - np.asarray(self.center)) ** 2, axis=1) / self.scale**2
        out = np.zeros(len(X))
        inside = u < 1.0
        out[inside] = np.exp(-1.0 / (1.0 - u[inside]))
        return out

    def grad(self, X: np.ndarray) -> np.ndarray:
        diff = X - np.asarray(self.center)
        u = np.sum(diff**2, axis=1) / self.scale**2
        out = np.zeros_like(X)
        inside = u < 1.0
        ui = u[inside]
        phi = np.exp(-1.0 / (1.0 - ui))
        out[inside] = (phi * -2.0 / (self.scale**2 * (1.0 - ui) ** 2))[:, None] * diff[inside]
        return out


def default_bumps(lo, hi, count: int = 12) -> list[Bump]:
    """Deterministic bumps with varied centres and scales, all strictly inside the box."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    d = len(lo)
    bumps = [Bump(tuple(mid), 0.5 * float(half.min()))]
    golden = 0.6180339887498949
    for i in range(1, count):
        frac = (i * golden) % 1.0
        scale = float(half.min()) * (0.2 + 0.25 * frac)
        direction = np.cos(2 * np.pi * (i * golden + np.arange(d) / d))
        direction /= max(np.linalg.norm(direction), 1e-12)
        reach = (float(half.min()) - scale) * (0.15 + 0.7 * ((i * 0.37) % 1.0))
        bumps.append(Bump(tuple(mid + reach * direction), scale))
    return bumps


@dataclass
class ResidualReport:
    test_functions: int
    max_abs_residual: float
    residuals: list
    drift_B: Callable = field(repr=False, default=None)


def _cell_quantities(coeffs: CoefficientSet, rho: DensityGrid):
    X = rho.centers()
    r = rho.values.ravel()
    grad = rho.gradient().reshape(-1, rho.d)
    mode = DriftMode.FROM_H if coeffs.H is not None else DriftMode.FROM_HHAT
    G = assemble_drift_G(coeffs, mode, X)
    beta = _beta(coeffs, X, r, grad)
    return X, r, G, beta


def helm_residual(coeffs: CoefficientSet, rho: DensityGrid, test_bumps: Optional[Sequence[Bump]] = None) -> ResidualReport:
    """Midpoint quadrature of ``int <G - beta, grad phi> rho psi dx`` for each bump ``phi``."""
    bumps = list(test_bumps) if test_bumps is not None else default_bumps(rho.lo, rho.hi)
    for b in bumps:
        c = np.asarray(b.center)
        if np.any(c - b.scale <= rho.lo) or np.any(c + b.scale >= rho.hi):
            raise OutOfBox(f"bump {b} is not strictly inside the box")
    X, r, G, beta = _cell_quantities(coeffs, rho)
    weight = r * coeffs.psi(X) * rho.cell_volume
    B = G - beta
    residuals = [float(np.sum(np.einsum("ni,ni->n", B, b.grad(X)) * weight)) for b in bumps]

    def drift_B(x):
        Y = np.atleast_2d(np.asarray(x, dtype=float))
        mode = DriftMode.FROM_H if coeffs.H is not None else DriftMode.FROM_HHAT
        return assemble_drift_G(coeffs, mode, Y) - beta_field(coeffs, rho, Y)

    return ResidualReport(len(bumps), float(np.max(np.abs(residuals))), residuals, drift_B)


def c2_posteriori_check(coeffs: CoefficientSet, rho: DensityGrid, s: float, center, radius: float) -> dict:
    """``int_ball |G|^s rho psi dx`` at the grid resolution and on cells split in two per axis."""
    center = np.asarray(center, dtype=float)
    if np.any(center - radius < rho.lo) or np.any(center + radius > rho.hi):
        raise OutOfBox("ball must lie inside the density box")
    mode = DriftMode.FROM_H if coeffs.H is not None else DriftMode.FROM_HHAT

    def integral(X, r, vol):
        inside = np.linalg.norm(X - center, axis=1) < radius
        Xi = X[inside]
        G = assemble_drift_G(coeffs, mode, Xi)
        return float(np.sum(np.linalg.norm(G, axis=1) ** s * r[inside] * coeffs.psi(Xi)) * vol)

    X = rho.centers()
    coarse = integral(X, rho.values.ravel(), rho.cell_volume)
    h = rho.spacing
    offsets = np.stack(np.meshgrid(*([[-0.25, 0.25]] * rho.d), indexing="ij"), axis=-1).reshape(-1, rho.d) * h
    fine_pts = (X[:, None, :] + offsets[None, :, :]).reshape(-1, rho.d)
    fine = integral(fine_pts, rho.interpolate(fine_pts), rho.cell_volume / len(offsets))
    rel = abs(fine - coarse) / max(abs(fine), 1e-300)
    finite = bool(np.isfinite(coarse) and np.isfinite(fine))
    return {"integral": coarse, "refined": fine, "relative_change": rel,
            "finite": finite, "stable": bool(finite and rel < 0.05)}
