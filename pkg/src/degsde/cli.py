"""Command-line front end: ``degsde <command> --spec ... --out DIR``.

Each run writes ``report.json``, one or more CSV tables and ``summary.txt``
into ``--out``, all stamped with the spec hash and seed.  Exit status is 0
when the command's checks pass, 2 when a check or test fails, 1 on errors.
"""

from __future__ import annotations

import argparse
import math
import os
import shutil
import sys
from pathlib import Path
from typing import Callable, Optional

import yaml

from . import conditions, density, exprlang, io, laws
from .config import build_spec, load_document
from .errors import DegsdeError
from .families import family_config
from .simulate import Functional, SimConfig, StoreMode, euler_maruyama, krylov_functional, occupation_profile

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2
THREADS_ENV = "DEGSDE_THREADS"


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    try:
        value = yaml.safe_load(text)  # lists such as A=[[2,1],[1,2]]
    except yaml.YAMLError:
        return text
    return value if isinstance(value, list) else text


def _load_spec(args, **family_overrides):
    """``--spec`` is a YAML/JSON path or ``family:<name>``; ``--set k=v`` feeds family parameters."""
    params = dict(kv.split("=", 1) for kv in args.set or [])
    params = {k: _value(v) for k, v in params.items()} | family_overrides
    if args.spec.startswith("family:"):
        doc = family_config(args.spec.split(":", 1)[1], **params)
    else:
        doc = load_document(args.spec)
        if params:
            if "family" not in doc:
                raise DegsdeError("--set only applies to family-based specs")
            doc = {**doc, "params": {**doc.get("params", {}), **params}}
    if "family" in doc:
        doc = family_config(doc["family"], **doc.get("params", {}))
    if args.eps_ladder:
        doc = {**doc, "eps_ladder": list(_floats(args.eps_ladder))}
    try:
        return build_spec(doc)
    except DegsdeError as exc:
        raise type(exc)(f"{args.spec}: {exc}") from exc


def _sim_config(args, spec, **extra) -> SimConfig:
    y = _floats(args.y) if args.y else (0.0,) * spec.d
    return SimConfig(dt=args.dt, T=args.T, y=y, n_paths=args.paths, seed=args.seed,
                     threads=args.threads, **extra)


class Artifacts:
    """Tracks files written into the output directory so a failed run leaves nothing behind."""

    def __init__(self, out: Path, spec_hash: str, seed: int):
        self.out = out
        self.created_dir = not out.exists()
        out.mkdir(parents=True, exist_ok=True)
        self.meta = io.provenance(spec_hash, seed)
        self.files: list[Path] = []

    def path(self, name: str) -> Path:
        p = self.out / name
        self.files.append(p)
        return p

    def rows(self, name: str, rows: list[dict]) -> None:
        io.write_rows(self.path(name), rows, self.meta)

    def report(self, doc: dict, summary: str) -> None:
        io.write_json(self.path("report.json"), {"provenance": self.meta, **doc})
        lines = [f"spec_hash: {self.meta['spec_hash']}", f"seed: {self.meta['seed']}", "", summary.rstrip(), ""]
        self.path("summary.txt").write_text("\n".join(lines), encoding="utf-8")

    def discard(self) -> None:
        for p in self.files:
            p.unlink(missing_ok=True)
        if self.created_dir:
            shutil.rmtree(self.out, ignore_errors=True)


def _status(passed: bool) -> int:
    return EXIT_PASS if passed else EXIT_FAIL


def _verdict(passed: bool) -> str:
    return "PASS" if passed else "FAIL"


# --------------------------------------------------------------------------- commands


def cmd_check(args, art_factory) -> int:
    spec = _load_spec(args)
    art = art_factory(spec.spec_hash)
    ball = conditions.Ball(_floats(args.center) if args.center else (0.0,) * spec.d, args.radius)
    shells = _floats(args.shells)
    nonexp = conditions.NonExplosionParams(N0=args.N0, M=args.M, shells=shells, samples_per_shell=args.samples)
    doc = conditions.audit(spec.coeffs, ball, args.q, nonexp, n=args.samples * 16, grid_n=args.grid)
    if args.s is not None and args.p is not None and spec.d >= 2:
        params = conditions.ConditionParams(spec.d, args.q, args.s, args.p)
        doc["exponents"] = params.report()
        doc["c2_routes"] = conditions.check_c2_routes(spec.coeffs, params, ball, grid_n=args.grid)
        doc["conditions_audited"] += ["(C1)", "(C2)", "(C3)"]
    rows = [
        {"condition": part["condition"], "fragment": part["fragment"], "passed": part["passed"]}
        for part in (doc["ellipticity"], doc["nonexplosion"], doc["psi_integrability"], doc["local_bounds"])
    ]
    if "c2_routes" in doc:
        rows.append({"condition": "(C1)", "fragment": "exponent constraints", "passed": doc["exponents"]["(C1)"]["passed"]})
        rows.append({"condition": "(C3)", "fragment": "exponent constraints", "passed": doc["exponents"]["(C3)"]["passed"]})
        rows.append({"condition": "(C2)", "fragment": "sufficient integrability routes", "passed": doc["c2_routes"]["passed"]})
        doc["passed"] = doc["passed"] and doc["c2_routes"]["passed"]
    art.rows("checks.csv", rows)
    ell, nx = doc["ellipticity"], doc["nonexplosion"]
    summary = "\n".join(
        [f"{r['condition']} {r['fragment']}: {_verdict(r['passed'])}" for r in rows]
        + [f"lambda_B = {ell['lambda_B']:.6g}, Lambda_B = {ell['Lambda_B']:.6g} ({ell['n_samples']} samples)",
           f"non-explosion max_violation = {nx['max_violation']:.6g} at {nx['worst_point']}",
           "Sampled certificates only; none of these is a proof."]
    )
    art.report({"command": "check", "spec": spec.name, **doc}, summary)
    return _status(doc["passed"])


def cmd_simulate(args, art_factory) -> int:
    spec = _load_spec(args)
    times = _floats(args.times) if args.times else (args.T,)
    cfg = _sim_config(args, spec, store=StoreMode.MARGINALS, marginal_times=times,
                      exit_radii=_floats(args.exit_radii) if args.exit_radii else ())
    art = art_factory(spec.spec_hash)
    ens = euler_maruyama(spec, cfg)
    io.write_marginals_csv(art.path("marginals.csv"), ens, times)
    if args.save_ensemble:
        io.save_ensemble(art.path("ensemble.npz"), ens)
    rows = []
    for t in times:
        law = laws.marginal(ens, t)
        m, v = law.samples.mean(axis=0), law.samples.var(axis=0, ddof=1)
        rows += [{"time": law.t, "coordinate": k, "mean": m[k], "variance": v[k], "n": law.n,
                  "excluded": law.excluded} for k in range(spec.d)]
    art.rows("moments.csv", rows)
    exploded = int(ens.exploded.sum())
    art.report({"command": "simulate", "config": cfg.describe(), "moments": rows, "exploded": exploded},
               f"{cfg.n_paths} paths, dt={cfg.dt}, T={cfg.T}; exploded paths: {exploded}")
    return EXIT_PASS


def cmd_occupation(args, art_factory) -> int:
    spec = _load_spec(args)
    cfg = _sim_config(args, spec)
    art = art_factory(spec.spec_hash)
    prof = occupation_profile(euler_maruyama(spec, cfg))
    rows = [{"eps": e, "mean": v["mean"], "ci95": v["ci95"]} for e, v in prof.items()]
    art.rows("occupation.csv", rows)
    art.report({"command": "occupation", "config": cfg.describe(), "occupation": rows},
               "\n".join(f"occupation(eps={r['eps']}) = {r['mean']:.6g} +- {r['ci95']:.2g}" for r in rows))
    return EXIT_PASS


def cmd_krylov(args, art_factory) -> int:
    spec = _load_spec(args)
    g = exprlang.field(args.g, spec.d)
    t = args.t if args.t is not None else args.T
    fn = Functional("g", g, t, args.stop_radius)
    cfg = _sim_config(args, spec, functionals=(fn,))
    art = art_factory(spec.spec_hash)
    res = krylov_functional(euler_maruyama(spec, cfg), g, t, args.stop_radius)
    row = {"g": args.g, "t": t, "stop_radius": args.stop_radius, "dt": cfg.dt, **res}
    art.rows("krylov.csv", [row])
    art.report({"command": "krylov", "config": cfg.describe(), "result": row},
               f"E[int_0^t g(X_s) ds] ~ {res['estimate']:.6g} +- {res['ci95']:.2g} (g = {args.g}, t = {t})")
    return EXIT_PASS


def cmd_compare_laws(args, art_factory) -> int:
    spec = _load_spec(args)
    times = _floats(args.times) if args.times else (0.5, 1.0)
    cfg = _sim_config(args, spec)
    art = art_factory(spec.spec_hash)
    rep = laws.uniqueness_experiment(spec, cfg, times, n_perm=args.permutations)
    cols = ("time", "projection", "method", "statistic", "p_value", "n1", "n2")
    art.rows("tests.csv", [{c: r[c] for c in cols} for r in rep["tests"]])
    summary = "\n".join(
        [f"t={r['time']} {r['projection']} {r['method']}: p = {r['p_value']:.4g}" for r in rep["tests"]]
        + [f"min p = {rep['min_p_value']:.4g} vs threshold {rep['threshold']}: {_verdict(rep['passed'])}"]
    )
    art.report({"command": "compare-laws", "config": cfg.describe(), **rep}, summary)
    return _status(rep["passed"])


def cmd_demo(args, art_factory) -> int:
    d = len(_floats(args.y)) if args.y else 2
    y = (0.0,) * d
    spec_hash = laws_spec_hash(args.alpha, d)
    cfg = SimConfig(dt=args.dt, T=args.T, y=y, n_paths=args.paths, seed=args.seed, threads=args.threads)
    art = art_factory(spec_hash)
    rep = laws.nonuniqueness_demo(args.alpha, cfg, n_perm=args.permutations)
    rows = []
    for label in ("occupation_trivial", "occupation_delta_start"):
        rows += [{"ensemble": label.split("_", 1)[1], "eps": e, "mean": v["mean"], "ci95": v["ci95"]}
                 for e, v in rep[label].items()]
    art.rows("occupation.csv", rows)
    art.rows("energy_test.csv", [rep["energy_test"]])
    checks = "\n".join(f"{k}: {_verdict(v)}" for k, v in rep["checks"].items())
    art.report({"command": "demo-nonuniqueness", "config": cfg.describe(), **rep},
               f"{rep['summary']}\n\n{checks}\nenergy p = {rep['energy_test']['p_value']:.4g}")
    return _status(rep["passed"])


def laws_spec_hash(alpha: float, d: int) -> str:
    from .families import family_spec

    return family_spec("girsanov", alpha=alpha, d=d).spec_hash


def cmd_density(args, art_factory) -> int:
    spec = _load_spec(args)
    lo = _floats(args.lo) if args.lo else (-3.0,) * spec.d
    hi = _floats(args.hi) if args.hi else (3.0,) * spec.d
    shape = (args.cells,) * spec.d
    art = art_factory(spec.spec_hash)
    rho = density.solve_rho(spec.coeffs, lo, hi, shape)
    res = density.helm_residual(spec.coeffs, rho)
    rho.save(art.path("density.npz"), **art.meta)
    rho.write_slice_csv(art.path("slice.csv"), meta=art.meta)
    art.rows("residuals.csv", [{"bump": i, "residual": r} for i, r in enumerate(res.residuals)])
    passed = res.max_abs_residual < args.tol
    doc = {"command": "density", "box": {"lo": lo, "hi": hi}, "cells": shape, "diagnostics": rho.diagnostics,
           "min_rho": float(rho.values.min()), "max_abs_residual": res.max_abs_residual,
           "test_functions": res.test_functions, "tolerance": args.tol, "passed": passed}
    art.report(doc, f"rho solved on {shape} cells, min {doc['min_rho']:.4g}; "
                    f"weak-identity residual {res.max_abs_residual:.3g} (tolerance {args.tol}): {_verdict(passed)}")
    return _status(passed)


def cmd_kolmogorov(args, art_factory) -> int:
    spec = _load_spec(args)
    f = exprlang.field(args.f, spec.d)
    t = args.t if args.t is not None else args.T
    cfg = _sim_config(args, spec)
    art = art_factory(spec.spec_hash)
    res = laws.kolmogorov_consistency(spec, f, cfg.y, t, cfg)
    ref = res["reference"]
    passed = True if ref is None else abs(res["mc"] - ref) <= 3 * res["se"] + 2 * cfg.dt
    art.rows("kolmogorov.csv", [{"f": args.f, "t": t, "mc": res["mc"], "se": res["se"],
                                 "reference": "unavailable" if ref is None else ref}])
    art.report({"command": "kolmogorov", "config": cfg.describe(), **res, "passed": passed},
               f"E_y f(X_t): mc = {res['mc']:.6g} +- {res['se']:.2g}, reference = {ref}: {_verdict(passed)}")
    return _status(passed)


COMMANDS: dict[str, Callable] = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "occupation": cmd_occupation,
    "krylov": cmd_krylov,
    "compare-laws": cmd_compare_laws,
    "demo-nonuniqueness": cmd_demo,
    "density": cmd_density,
    "kolmogorov": cmd_kolmogorov,
}


def build_parser() -> argparse.ArgumentParser:
    env_threads = int(os.environ.get(THREADS_ENV, "1") or 1)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=env_threads,
                        help=f"worker threads (default ${THREADS_ENV} or 1); never changes results")
    common.add_argument("--dt", type=float, default=1e-3)
    common.add_argument("--T", type=float, default=1.0)
    common.add_argument("--paths", type=int, default=20000)
    common.add_argument("--times", help="comma-separated marginal times")
    common.add_argument("--y", help="comma-separated start point (default: origin)")
    common.add_argument("--eps-ladder", help="comma-separated decreasing occupation thresholds")
    common.add_argument("--permutations", type=int, default=laws.MIN_PERMUTATIONS)

    with_spec = argparse.ArgumentParser(add_help=False, parents=[common])
    with_spec.add_argument("--spec", required=True, help="config file or family:<name>")
    with_spec.add_argument("--set", action="append", metavar="KEY=VALUE", help="family parameter override")

    ap = argparse.ArgumentParser(prog="degsde", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", parents=[with_spec], help="audit ellipticity, bounds, integrability, non-explosion")
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--center")
    p.add_argument("--q", type=float, default=math.inf)
    p.add_argument("--s", type=float)
    p.add_argument("--p", type=float)
    p.add_argument("--N0", type=int, default=1)
    p.add_argument("--M", type=float, default=1.0)
    p.add_argument("--shells", default="2,4,8,16")
    p.add_argument("--samples", type=int, default=64)
    p.add_argument("--grid", type=int, default=32)

    p = sub.add_parser("simulate", parents=[with_spec], help="simulate and export marginals")
    p.add_argument("--exit-radii")
    p.add_argument("--save-ensemble", action="store_true")

    sub.add_parser("occupation", parents=[with_spec], help="occupation time of the degeneracy set")

    p = sub.add_parser("krylov", parents=[with_spec], help="E[int_0^t g(X_s) ds]")
    p.add_argument("--g", default="step(1 - norm(x))")
    p.add_argument("--t", type=float)
    p.add_argument("--stop-radius", type=float)

    sub.add_parser("compare-laws", parents=[with_spec], help="Cholesky vs symmetric-sqrt equality in law")

    p = sub.add_parser("demo-nonuniqueness", parents=[common], help="two laws from the origin for the Girsanov SDE")
    p.add_argument("--alpha", type=float, default=1.0)

    p = sub.add_parser("density", parents=[with_spec], help="finite-volume invariant density")
    p.add_argument("--lo")
    p.add_argument("--hi")
    p.add_argument("--cells", type=int, default=120)
    p.add_argument("--tol", type=float, default=1e-3)

    p = sub.add_parser("kolmogorov", parents=[with_spec], help="Monte Carlo vs closed-form E_y f(X_t)")
    p.add_argument("--f", default="exp(-norm(x)^2)")
    p.add_argument("--t", type=float)
    return ap


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    created: list[Artifacts] = []

    def factory(spec_hash: str) -> Artifacts:
        art = Artifacts(Path(args.out), spec_hash, args.seed)
        created.append(art)
        return art

    try:
        return COMMANDS[args.command](args, factory)
    except (DegsdeError, ValueError, OSError) as exc:
        for art in created:
            art.discard()
        print(f"degsde {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
