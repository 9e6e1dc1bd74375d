"""Sampled audits of the standing hypotheses on a coefficient set.

Every report here is a certificate over a finite, deterministic sample (or a
quadrature grid), never a proof.  Condition labels in the reports are the ones
used throughout the package: ``(C)``, ``(C1)``, ``(C2)`` and ``(C3)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .coeff import CoefficientSet, DriftMode, _check_singular, assemble_drift_G
from .errors import ConfigError, DegsdeError

EIG_TOL = 1e-12
DIVERGENCE_RATIO = 2.0


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ConfigError(f"ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def d(self) -> int:
        return len(self.center)

    @classmethod
    def origin(cls, d: int, radius: float) -> "Ball":
        return cls((0.0,) * d, radius)


def _inv(v: float) -> float:
    return 0.0 if math.isinf(v) else 1.0 / v


@dataclass(frozen=True)
class ConditionParams:
    """Exponents ``(d, q, s, p)``; ``q = inf`` is allowed."""

    d: int
    q: float
    s: float
    p: float

    def __post_init__(self):
        if self.d < 2:
            raise ConfigError("the exponent audit needs d >= 2")

    @property
    def q0(self) -> float:
        """``1/q0 + 1/q = 1/(d+1)``."""
        rest = 1.0 / (self.d + 1) - _inv(self.q)
        return math.inf if rest <= 0 else 1.0 / rest

    def c1_fragments(self) -> dict:
        d, q, s = self.d, self.q, self.s
        return {
            "q > d/2": q > d / 2,
            "d/2 < s < inf": d / 2 < s < math.inf,
            "1/q + 1/s < 2/d": _inv(q) + 1.0 / s < 2.0 / d,
            "p > d": self.p > d,
        }

    def c3_fragments(self) -> dict:
        return {"q > d+1": self.q > self.d + 1, "p = d+1": self.p == self.d + 1}

    def report(self) -> dict:
        c1 = self.c1_fragments()
        c3 = self.c3_fragments()
        return {
            "params": {"d": self.d, "q": self.q, "s": self.s, "p": self.p, "q0": self.q0},
            "(C1)": {"fragments": c1, "passed": all(c1.values())},
            "(C3)": {"fragments": c3, "passed": all(c3.values()) and all(c1.values())},
        }


def ball_points(ball: Ball, n: int) -> np.ndarray:
    """The first ``n`` points of the unscrambled Halton sequence falling in ``ball``.

    Rejection from the bounding cube keeps the sequence prefix-consistent, so
    the sample for ``n`` is contained in the sample for ``2n``.
    """
    if n < 1:
        raise ConfigError("sample count must be >= 1")
    d = ball.d
    center = np.asarray(ball.center)
    engine = qmc.Halton(d, scramble=False)
    out = []
    have = 0
    while have < n:
        U = engine.random(max(2 * (n - have), 64))
        X = center + ball.radius * (2.0 * U - 1.0)
        keep = X[np.sum((X - center) ** 2, axis=1) < ball.radius**2]
        out.append(keep)
        have += len(keep)
    return np.concatenate(out)[:n]


def _safe_eval(fn: Callable, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate ``fn`` row-wise where the batch call fails; returns values and an ok mask."""
    try:
        vals = np.asarray(fn(X), dtype=float)
        return vals, np.ones(len(X), dtype=bool)
    except DegsdeError:
        pass
    rows, ok = [], np.zeros(len(X), dtype=bool)
    template = None
    for i, x in enumerate(X):
        try:
            v = np.asarray(fn(x[None, :]), dtype=float)[0]
            ok[i] = True
            template = v
        except DegsdeError:
            v = None
        rows.append(v)
    if template is None:
        return np.zeros((len(X),)), ok
    filler = np.full_like(template, np.nan)
    return np.stack([filler if v is None else v for v in rows]), ok


@dataclass
class EllipticityReport:
    ball: Ball
    lambda_B: float
    Lambda_B: float
    n_samples: int
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "condition": "(C)",
            "fragment": "local uniform ellipticity of A",
            "certificate": f"sampled at {self.n_samples} Halton points",
            "ball": asdict(self.ball),
            "lambda_B": self.lambda_B,
            "Lambda_B": self.Lambda_B,
            "n_samples": self.n_samples,
            "violations": [list(map(float, v)) for v in self.violations],
            "passed": self.passed,
        }


def check_ellipticity(coeffs: CoefficientSet, ball: Ball, n: int = 1024) -> EllipticityReport:
    """Extreme eigenvalues of ``A`` over quasi-random points of ``ball``."""
    X = ball_points(ball, n)
    A, ok = _safe_eval(coeffs.A, X)
    eig = np.linalg.eigvalsh(0.5 * (A[ok] + np.swapaxes(A[ok], -1, -2)))
    lo, hi = eig[:, 0], eig[:, -1]
    bad = np.flatnonzero(ok)[lo <= EIG_TOL]
    return EllipticityReport(ball, float(lo.min()), float(hi.max()), n, [tuple(X[i]) for i in bad])


@dataclass(frozen=True)
class NonExplosionParams:
    N0: int = 1
    M: float = 1.0
    shells: tuple = (2.0, 4.0, 8.0, 16.0)
    samples_per_shell: int = 64

    def __post_init__(self):
        if self.N0 < 1 or self.M <= 0:
            raise ConfigError("N0 must be a positive integer and M positive")
        if any(r <= self.N0 for r in self.shells):
            raise ConfigError(f"all shell radii must exceed N0 = {self.N0}")
        if self.samples_per_shell < 1:
            raise ConfigError("samples_per_shell must be >= 1")


def sphere_points(d: int, n: int) -> np.ndarray:
    """Deterministic, roughly uniform unit vectors."""
    if d == 1:
        return np.array([[1.0], [-1.0]] * ((n + 1) // 2))[:n]
    if d == 2:
        a = 2 * np.pi * (np.arange(n) + 0.5) / n
        return np.stack([np.cos(a), np.sin(a)], axis=1)
    U = qmc.Halton(d, scramble=False).random(n + 1)[1:]
    Z = ndtri(np.clip(U, 1e-12, 1 - 1e-12))
    return Z / np.linalg.norm(Z, axis=1, keepdims=True)


def lyapunov_excess(coeffs: CoefficientSet, X: np.ndarray, M: float) -> np.ndarray:
    """LHS - RHS of the radial non-explosion inequality at each row of ``X``."""
    _check_singular(X, coeffs.singular_points)
    ip = coeffs.inv_psi(X)
    A = coeffs.A(X)
    r2 = np.sum(X * X, axis=1)
    quad = np.einsum("ni,nij,nj->n", X, A, X)
    lhs = -ip * quad / r2 + 0.5 * ip * np.trace(A, axis1=1, axis2=2) + np.sum(coeffs.H_hat(X) * X, axis=1)
    rhs = M * r2 * (0.5 * np.log(r2) + 1.0)
    return lhs - rhs


def check_nonexplosion(coeffs: CoefficientSet, params: NonExplosionParams = NonExplosionParams()) -> dict:
    dirs = sphere_points(coeffs.d, params.samples_per_shell)
    worst, worst_pt, skipped = -math.inf, None, 0
    per_shell = []
    for R in params.shells:
        X = R * dirs
        excess, ok = _safe_eval(lambda Y: lyapunov_excess(coeffs, Y, params.M), X)
        skipped += int((~ok).sum())
        if ok.any():
            e = excess[ok]
            i = int(np.argmax(e))
            shell_max = float(e[i])
            per_shell.append({"radius": R, "max_violation": shell_max})
            if shell_max > worst:
                worst, worst_pt = shell_max, X[ok][i].tolist()
        else:
            per_shell.append({"radius": R, "max_violation": None})
    return {
        "condition": "(C)",
        "fragment": "Lyapunov non-explosion inequality",
        "certificate": f"{params.samples_per_shell} points on each of {len(params.shells)} shells",
        "N0": params.N0,
        "M": params.M,
        "shells": per_shell,
        "max_violation": worst,
        "worst_point": worst_pt,
        "skipped": skipped,
        "passed": bool(worst <= 0.0),
    }


def _cube_midpoints(ball: Ball, n: int, singular: Sequence) -> tuple[np.ndarray, float]:
    """Cell centres of an ``n^d`` grid on the bounding cube that lie in the ball.

    ``n`` is bumped to the next value whose centres avoid every declared
    singular point.
    """
    center = np.asarray(ball.center)
    d = ball.d
    while True:
        h = 2.0 * ball.radius / n
        ax = -ball.radius + h * (np.arange(n) + 0.5)
        mesh = np.meshgrid(*([ax] * d), indexing="ij")
        rel = np.stack([m.ravel() for m in mesh], axis=1)
        rel = rel[np.sum(rel * rel, axis=1) < ball.radius**2]
        X = center + rel
        if not any(np.any(np.all(X == np.asarray(p), axis=1)) for p in singular):
            return X, h**d
        n += 1


def refined_integral(fn: Callable, ball: Ball, grid_n: int, singular: Sequence = (), levels: int = 3) -> dict:
    """Midpoint estimates of ``int_ball fn`` at ``grid_n * 2^k``; flags divergence by the last ratio."""
    if grid_n < 16:
        raise ConfigError("grid_n must be >= 16")
    estimates = []
    for k in range(levels):
        X, vol = _cube_midpoints(ball, grid_n * 2**k, singular)
        with np.errstate(over="ignore", invalid="ignore"):
            estimates.append(float(np.sum(fn(X)) * vol))
    finite = all(math.isfinite(e) for e in estimates)
    ratios = [_ratio(a, b) for a, b in zip(estimates, estimates[1:])] if finite else []
    diverged = (not finite) or ratios[-1] > DIVERGENCE_RATIO
    best = estimates[-1]
    if not diverged and levels >= 3:
        # integrable singularities converge geometrically in the refinement level
        d1, d2 = estimates[-2] - estimates[-3], estimates[-1] - estimates[-2]
        if d1 != 0.0 and 0.0 < d2 / d1 < 1.0:
            best = estimates[-1] + d2 * d2 / (d1 - d2)
    return {"integral_estimate": best, "estimates": estimates, "ratios": ratios, "diverged": diverged}


def _ratio(a: float, b: float) -> float:
    if a == 0.0:
        return 1.0 if b == 0.0 else math.inf
    return b / a


def check_psi_integrability(coeffs: CoefficientSet, q: float, ball: Ball, grid_n: int = 32) -> dict:
    """Staggered midpoint estimate of ``int_ball psi^q dx`` under two refinements."""
    if math.isinf(q):
        X, _ = _cube_midpoints(ball, grid_n * 4, coeffs.singular_points)
        sup = float(np.max(coeffs.psi(X)))
        out = {"integral_estimate": sup, "estimates": [sup], "ratios": [], "diverged": not math.isfinite(sup)}
    else:
        out = refined_integral(lambda X: coeffs.psi(X) ** q, ball, grid_n, coeffs.singular_points)
    return {"condition": "(C)", "fragment": f"psi in L^{q} on the ball", "q": q,
            "ball": asdict(ball), **out, "passed": not out["diverged"]}


def check_local_bounds(coeffs: CoefficientSet, ball: Ball, n: int = 1024) -> dict:
    X = ball_points(ball, n)
    ip, ok1 = _safe_eval(coeffs.inv_psi, X)
    H, ok2 = _safe_eval(coeffs.H_hat, X)
    sup_ip = float(np.max(ip[ok1]))
    sup_H = float(np.max(np.linalg.norm(H[ok2], axis=1)))
    return {
        "condition": "(C)",
        "fragment": "local boundedness of inv_psi and H_hat",
        "certificate": f"sampled at {n} Halton points",
        "ball": asdict(ball),
        "sup_inv_psi": sup_ip,
        "sup_Hhat_norm": sup_H,
        "skipped": int((~ok1).sum() + (~ok2).sum()),
        "passed": bool(math.isfinite(sup_ip) and math.isfinite(sup_H)),
    }


def check_c2_routes(coeffs: CoefficientSet, params: ConditionParams, ball: Ball, grid_n: int = 32,
                    n_samples: int = 1024) -> dict:
    """Numerically checkable fragments of the two sufficient routes to (C2).

    Route (i): ``psi G`` in ``L^s`` on the ball together with a bounded ``1/psi``.
    Route (ii): ``G`` in ``L^{sq/(q-1)}`` on the ball (exponent ``s`` when ``q = inf``).
    Neither certifies the measure-theoretic statement; both need (C1).
    """
    mode = DriftMode.FROM_H if coeffs.H is not None else DriftMode.FROM_HHAT
    singular = coeffs.singular_points

    def G_norm(X):
        return np.linalg.norm(assemble_drift_G(coeffs, mode, X), axis=1)

    s, q = params.s, params.q
    route1 = refined_integral(lambda X: (coeffs.psi(X) * G_norm(X)) ** s, ball, grid_n, singular)
    bounds = check_local_bounds(coeffs, ball, n_samples)
    exponent = s if math.isinf(q) else s * q / (q - 1.0)
    route2 = refined_integral(lambda X: G_norm(X) ** exponent, ball, grid_n, singular)
    c1 = params.report()["(C1)"]
    r1 = c1["passed"] and not route1["diverged"] and bounds["passed"]
    r2 = c1["passed"] and not route2["diverged"]
    return {
        "condition": "(C2)",
        "(C1)": c1,
        "route_i": {"psi_G_in_L^s": route1, "sup_inv_psi": bounds["sup_inv_psi"], "passed": r1},
        "route_ii": {"exponent": exponent, "G_in_L^(sq/(q-1))": route2, "passed": r2},
        "passed": bool(r1 or r2),
    }


def audit(coeffs: CoefficientSet, ball: Optional[Ball] = None, q: float = math.inf,
          nonexplosion: NonExplosionParams = NonExplosionParams(), n: int = 1024, grid_n: int = 32) -> dict:
    """Run the pointwise (C) audits on one ball and gather them in one document."""
    ball = ball or Ball.origin(coeffs.d, 1.0)
    ell = check_ellipticity(coeffs, ball, n).to_dict()
    nonexp = check_nonexplosion(coeffs, nonexplosion)
    integ = check_psi_integrability(coeffs, q, ball, grid_n)
    bounds = check_local_bounds(coeffs, ball, n)
    parts = {"ellipticity": ell, "nonexplosion": nonexp, "psi_integrability": integ, "local_bounds": bounds}
    return {"conditions_audited": ["(C)"], **parts, "passed": all(p["passed"] for p in parts.values())}
