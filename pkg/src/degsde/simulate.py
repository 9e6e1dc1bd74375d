"""Euler-Maruyama ensembles with exit times, explosion handling, occupation
times at the degeneracy set and Krylov-type time integrals.

The scheme is ``X_{k+1} = X_k + sqrt(inv_psi(X_k)) sigma(X_k) sqrt(dt) Z_k + H_hat(X_k) dt``.
Degeneracy is taken literally: where ``inv_psi`` vanishes the noise is exactly
zero, with no reflection or jitter.  Time integrals are left-endpoint Riemann
sums.  Exit times are first grid times, without bridge correction.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import rng
from .coeff import ScalarField, SdeSpec
from .errors import ConfigError, DomainError, SingularPoint

BLOCK_SIZE = 4096
STEP_CHUNK = 256


class StoreMode(str, Enum):
    FULL_PATHS = "full"
    MARGINALS = "marginals"
    FUNCTIONALS_ONLY = "functionals"


@dataclass(frozen=True, eq=False)
class Functional:
    """Registers ``int_0^{t ^ D_R} g(X_s) ds`` for online accumulation."""

    name: str
    g: ScalarField
    t: float
    stop_radius: Optional[float] = None


@dataclass(frozen=True)
class SimConfig:
    dt: float
    T: float
    y: tuple
    n_paths: int
    seed: int
    R_explode: float = 1e3
    store: StoreMode = StoreMode.FUNCTIONALS_ONLY
    marginal_times: tuple = ()
    exit_radii: tuple = ()
    functionals: tuple = ()
    # limiting value of inv_psi where it cannot be evaluated at a declared singular point
    singular_inv_psi: Optional[float] = None
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "y", tuple(float(v) for v in self.y))
        object.__setattr__(self, "store", StoreMode(self.store))
        object.__setattr__(self, "marginal_times", tuple(float(t) for t in self.marginal_times))
        object.__setattr__(self, "exit_radii", tuple(sorted(float(r) for r in self.exit_radii)))
        self.validate()

    def validate(self) -> None:
        if not (self.dt > 0 and self.T > 0):
            raise ConfigError(f"dt and T must be positive (dt={self.dt}, T={self.T})")
        if self.dt >= self.T:
            raise ConfigError(f"dt must be smaller than T (dt={self.dt}, T={self.T})")
        if self.n_paths < 1:
            raise ConfigError("n_paths must be at least 1")
        if not self.R_explode > math.hypot(*self.y):
            raise ConfigError("R_explode must exceed |y|")
        if any(t < 0 or t > self.T * (1 + 1e-12) for t in self.marginal_times):
            raise ConfigError("marginal times must lie in [0, T]")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        for f in self.functionals:
            if f.t > self.T * (1 + 1e-12):
                raise ConfigError(f"functional {f.name}: t exceeds T")

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    def step_index(self, t: float) -> int:
        return int(round(t / self.dt))

    def riemann(self, sums: np.ndarray, t: float) -> np.ndarray:
        """Turn per-step sums of an integrand into left-endpoint integrals up to ``t``.

        On grid times this is ``(sums / n) * t``, so a unit integrand gives ``t`` exactly.
        """
        n = self.step_index(t)
        if n and math.isclose(n * self.dt, t, rel_tol=1e-9):
            return sums / n * t
        return sums * self.dt

    def replace(self, **changes) -> "SimConfig":
        from dataclasses import replace

        return replace(self, **changes)

    def describe(self) -> dict:
        return {
            "dt": self.dt, "T": self.T, "y": list(self.y), "n_paths": self.n_paths, "seed": self.seed,
            "R_explode": self.R_explode, "store": self.store.value,
            "marginal_times": list(self.marginal_times), "exit_radii": list(self.exit_radii),
            "functionals": [
                {"name": f.name, "g": f.g.label, "t": f.t, "stop_radius": f.stop_radius} for f in self.functionals
            ],
        }


@dataclass
class Path:
    """One trajectory's record. ``states`` is only present for full-path ensembles."""

    times: np.ndarray
    states: Optional[np.ndarray]
    exit_times: dict
    exploded: bool
    explode_time: float
    occupation: dict


@dataclass
class Ensemble:
    config: SimConfig
    spec_hash: str
    eps_ladder: tuple
    stream_ids: np.ndarray  # path i uses stream (seed, i)
    exit_times: np.ndarray  # (n, n_radii), inf when never reached
    exploded: np.ndarray  # (n,)
    explode_time: np.ndarray  # (n,), inf when not exploded
    occupation_steps: np.ndarray  # (n, n_eps) integer step counts
    functionals: dict = field(default_factory=dict)  # name -> (n,)
    snapshots: dict = field(default_factory=dict)  # grid index -> (n, d)
    paths: Optional[np.ndarray] = None  # (n, n_steps + 1, d)

    @property
    def n_paths(self) -> int:
        return len(self.stream_ids)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.config.n_steps + 1) * self.config.dt

    @property
    def occupation(self) -> np.ndarray:
        """Time spent in ``{sqrt(inv_psi) <= eps}``, shape ``(n, n_eps)``."""
        return self.config.riemann(self.occupation_steps.astype(float), self.config.T)

    def state_at(self, k: int) -> np.ndarray:
        if self.paths is not None:
            return self.paths[:, k]
        if k in self.snapshots:
            return self.snapshots[k]
        raise KeyError(f"grid index {k} was not stored; add it to marginal_times")

    def path(self, i: int) -> Path:
        cfg = self.config
        return Path(
            times=self.times,
            states=None if self.paths is None else self.paths[i],
            exit_times=dict(zip(cfg.exit_radii, self.exit_times[i].tolist())),
            exploded=bool(self.exploded[i]),
            explode_time=float(self.explode_time[i]),
            occupation=dict(zip(self.eps_ladder, self.occupation[i].tolist())),
        )


def _inv_psi(spec: SdeSpec, X: np.ndarray, limit: Optional[float]) -> np.ndarray:
    try:
        return spec.coeffs.inv_psi(X)
    except DomainError:
        pass
    out = np.empty(X.shape[0])
    singular = [np.asarray(p, dtype=float) for p in spec.coeffs.singular_points]
    for i, x in enumerate(X):
        try:
            out[i] = spec.coeffs.inv_psi(x)
        except DomainError as exc:
            at_singular = any(np.array_equal(x, p) for p in singular)
            if at_singular and limit is not None:
                out[i] = limit
            elif at_singular:
                raise SingularPoint(f"path reached declared singular point {tuple(x)} where inv_psi is undefined") from exc
            else:
                raise
    return out


def _simulate_block(spec: SdeSpec, cfg: SimConfig, start: int, stop: int) -> dict:
    n = stop - start
    d = spec.d
    dt = cfg.dt
    sqdt = math.sqrt(dt)
    n_steps = cfg.n_steps
    eps = np.asarray(spec.degeneracy_eps_ladder)
    radii = np.asarray(cfg.exit_radii)
    snap_idx = sorted({cfg.step_index(t) for t in cfg.marginal_times})
    f_steps = [cfg.step_index(f.t) for f in cfg.functionals]

    X = np.broadcast_to(np.asarray(cfg.y), (n, d)).copy()
    alive = np.ones(n, dtype=bool)
    explode_time = np.full(n, np.inf)
    exit_times = np.full((n, len(radii)), np.inf)
    occ = np.zeros((n, len(eps)), dtype=np.int64)
    f_sums = [np.zeros(n) for _ in cfg.functionals]
    f_active = [np.ones(n, dtype=bool) for _ in cfg.functionals]
    snaps = {}
    paths = np.empty((n, n_steps + 1, d)) if cfg.store is StoreMode.FULL_PATHS else None
    if paths is not None:
        paths[:, 0] = X
    if 0 in snap_idx:
        snaps[0] = X.copy()

    gens = rng.path_streams(cfg.seed, start, stop)
    Z = None
    for k in range(n_steps):
        if k % STEP_CHUNK == 0:
            Z = rng.draw_normals(gens, min(STEP_CHUNK, n_steps - k), d)
        norms = np.linalg.norm(X, axis=1)
        if len(radii):
            newly = (norms[:, None] >= radii[None, :]) & np.isinf(exit_times)
            exit_times[newly] = k * dt

        ip = _inv_psi(spec, X, cfg.singular_inv_psi)
        root = np.sqrt(ip)
        occ += root[:, None] <= eps[None, :]

        for j, f in enumerate(cfg.functionals):
            act = f_active[j]
            if f.stop_radius is not None:
                act &= norms < f.stop_radius
            act &= k < f_steps[j]
            if act.any():
                f_sums[j][act] += f.g(X[act])

        idx = np.flatnonzero(alive)
        if idx.size:
            Xa = X[idx]
            noise = np.einsum("nij,nj->ni", spec.sigma(Xa), Z[idx, k % STEP_CHUNK])
            Xn = Xa + root[idx, None] * noise * sqdt + spec.coeffs.H_hat(Xa) * dt
            finite = np.all(np.isfinite(Xn), axis=1)
            Xn[~finite] = Xa[~finite]
            boom = ~finite | (np.linalg.norm(Xn, axis=1) >= cfg.R_explode)
            X[idx] = Xn
            if boom.any():
                alive[idx[boom]] = False
                explode_time[idx[boom]] = (k + 1) * dt
        if paths is not None:
            paths[:, k + 1] = X
        if k + 1 in snap_idx:
            snaps[k + 1] = X.copy()

    if len(radii):
        newly = (np.linalg.norm(X, axis=1)[:, None] >= radii[None, :]) & np.isinf(exit_times)
        exit_times[newly] = n_steps * dt

    return {
        "exit_times": exit_times,
        "exploded": ~alive,
        "explode_time": explode_time,
        "occupation_steps": occ,
        "functionals": {f.name: cfg.riemann(s, f.t) for f, s in zip(cfg.functionals, f_sums)},
        "snapshots": snaps,
        "paths": paths,
    }


def euler_maruyama(spec: SdeSpec, cfg: SimConfig, block_size: int = BLOCK_SIZE) -> Ensemble:
    """Simulate ``cfg.n_paths`` Euler-Maruyama paths of ``spec``.

    Paths are processed in fixed blocks of ``block_size`` so results do not
    depend on ``cfg.threads``.
    """
    if len(cfg.y) != spec.d:
        raise ConfigError(f"start point has dimension {len(cfg.y)}, spec has {spec.d}")
    spec.sigma(np.asarray(cfg.y)[None, :])  # surfaces NotPositiveDefinite before any work
    bounds = [(s, min(s + block_size, cfg.n_paths)) for s in range(0, cfg.n_paths, block_size)]
    if cfg.threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts = list(pool.map(lambda b: _simulate_block(spec, cfg, *b), bounds))
    else:
        parts = [_simulate_block(spec, cfg, *b) for b in bounds]

    def cat(key):
        return np.concatenate([p[key] for p in parts])

    snapshots = {k: np.concatenate([p["snapshots"][k] for p in parts]) for k in parts[0]["snapshots"]}
    return Ensemble(
        config=cfg,
        spec_hash=spec.spec_hash,
        eps_ladder=spec.degeneracy_eps_ladder,
        stream_ids=np.arange(cfg.n_paths),
        exit_times=cat("exit_times"),
        exploded=cat("exploded"),
        explode_time=cat("explode_time"),
        occupation_steps=cat("occupation_steps"),
        functionals={f.name: np.concatenate([p["functionals"][f.name] for p in parts]) for f in cfg.functionals},
        snapshots=snapshots,
        paths=cat("paths") if cfg.store is StoreMode.FULL_PATHS else None,
    )


def _mean_ci(values: np.ndarray) -> tuple[float, float]:
    n = len(values)
    if np.any(np.isinf(values)):
        return math.inf, math.inf
    mean = float(np.mean(values))
    if n < 2 or np.all(values == values[0]):
        return (float(values[0]) if n else mean), 0.0
    return mean, float(1.96 * np.std(values, ddof=1) / math.sqrt(n))


def occupation_profile(ens: Ensemble) -> dict:
    """Ensemble mean and 95% half-width of the occupation time per ladder threshold."""
    out = {}
    for j, e in enumerate(ens.eps_ladder):
        mean, ci = _mean_ci(ens.occupation[:, j])
        out[e] = {"mean": mean, "ci95": ci}
    return out


def krylov_functional(ens: Ensemble, g: ScalarField, t: float, stop_radius: Optional[float] = None) -> dict:
    """Monte Carlo estimate of ``E_y[int_0^{t ^ D_R} g(X_s) ds]`` with a 95% half-width.

    ``g`` may take the value ``+inf`` (for instance ``psi_bar`` at a zero of
    inv_psi); a single such step makes the estimate infinite.
    """
    cfg = ens.config
    if t > cfg.T * (1 + 1e-12):
        raise ValueError(f"t = {t} exceeds the ensemble horizon {cfg.T}")
    if ens.paths is not None:
        n_t = cfg.step_index(t)
        values = np.zeros(ens.n_paths)
        active = np.ones(ens.n_paths, dtype=bool)
        for k in range(n_t):
            Xk = ens.paths[:, k]
            if stop_radius is not None:
                active &= np.linalg.norm(Xk, axis=1) < stop_radius
            if active.any():
                values[active] += g(Xk[active])
        values = cfg.riemann(values, t)
    else:
        for f in cfg.functionals:
            if f.g is g and math.isclose(f.t, t) and f.stop_radius == stop_radius:
                values = ens.functionals[f.name]
                break
        else:
            raise ValueError("functional not registered in SimConfig.functionals and full paths were not stored")
    est, ci = _mean_ci(values)
    return {"estimate": est, "ci95": ci}


def psi_bar_indicator(spec: SdeSpec, radius: float) -> ScalarField:
    """``1_{B_radius} * psi_bar`` with ``psi_bar = 1/inv_psi`` and ``+inf`` at zeros of inv_psi."""
    coeffs = spec.coeffs

    def fn(X):
        inside = np.linalg.norm(X, axis=1) < radius
        out = np.zeros(X.shape[0])
        if inside.any():
            out[inside] = coeffs.psi(X[inside])
        return out

    return ScalarField(spec.d, fn, label=f"1_B{radius}*psi_bar")
