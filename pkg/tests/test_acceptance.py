"""Acceptance criteria 1-11, each timed against its limit.

Every test records one ``PASS``/``FAIL criterion N`` line; the lines are
printed in the terminal summary (see ``conftest.py``) and, when this file is
run directly, on stdout.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest
from scipy import integrate

from degsde import exprlang as ex
from degsde import laws
from degsde.cli import main as cli_main
from degsde.coeff import Factorization, factorize
from degsde.conditions import NonExplosionParams, check_nonexplosion
from degsde.density import DensityGrid, default_bumps, helm_residual, solve_rho
from degsde.families import family_spec
from degsde.simulate import Functional, SimConfig, euler_maruyama, krylov_functional, occupation_profile, \
    psi_bar_indicator

RESULTS: list[str] = []

# frozen [DERIVED] references, recomputed independently where cheap
KRYLOV_REF = 0.6733561376754474  # int_0^1 (1 - exp(-1/(2s))) ds
OU_MEAN = (math.exp(-1.0), 0.0)
OU_VAR = 1.0 - math.exp(-2.0)
KOLMOGOROV_REF = 1.0 / 3.0  # E exp(-|B_1|^2) in d = 2


class Criterion:
    def __init__(self, number, limit):
        self.number, self.limit = number, limit
        self.checks: list[tuple[str, bool]] = []

    def check(self, label, ok):
        self.checks.append((label, bool(ok)))


@contextmanager
def criterion(number, limit):
    c = Criterion(number, limit)
    t0 = time.perf_counter()
    error = None
    try:
        yield c
    except Exception as exc:  # recorded, then re-raised
        error = exc
        raise
    finally:
        elapsed = time.perf_counter() - t0
        c.check(f"time {elapsed:.2f}s < {limit}s", elapsed < limit)
        if error is not None:
            c.check(f"error {type(error).__name__}: {error}", False)
        ok = all(v for _, v in c.checks)
        detail = "; ".join(f"{label}{'' if v else ' [x]'}" for label, v in c.checks)
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        RESULTS.append(line)
        print(line)
    failed = [label for label, v in c.checks if not v]
    assert not failed, failed


def within(est, ref, se, dt):
    return abs(est - ref) <= 3 * se + 2 * dt


def test_criterion_01_factorizations():
    gen = np.random.default_rng(1)
    with criterion(1, 1.0) as c:
        worst = 0.0
        for _ in range(1000):
            d = int(gen.integers(2, 7))
            M = gen.standard_normal((d, d))
            A = M @ M.T + 0.1 * np.eye(d)
            for method in (Factorization.CHOLESKY, Factorization.SYMMETRIC_SQRT):
                S = factorize(A, method)
                worst = max(worst, np.linalg.norm(S @ S.T - A) / np.linalg.norm(A))
        c.check(f"max rel Frobenius {worst:.2e} <= 1e-10", worst <= 1e-10)


def test_criterion_02_ou_weak_convergence():
    with criterion(2, 60.0) as c:
        dt = 1e-3
        cfg = SimConfig(dt=dt, T=1.0, y=(1.0, 0.0), n_paths=20_000, seed=2, marginal_times=(1.0,), store="marginals")
        X = laws.marginal(euler_maruyama(family_spec("ou"), cfg), 1.0).samples
        se = X.std(axis=0, ddof=1) / math.sqrt(len(X))
        mean, var = X.mean(axis=0), X.var(axis=0, ddof=1)
        for i in range(2):
            c.check(f"mean_{i} {mean[i]:.4f} vs {OU_MEAN[i]:.4f}", within(mean[i], OU_MEAN[i], se[i], dt))
            c.check(f"var_{i} {var[i]:.4f} within 5% of {OU_VAR:.4f}", abs(var[i] / OU_VAR - 1) < 0.05)


def uniqueness_args(out, threads):
    return ["compare-laws", "--spec", "family:example512", "--set", "alpha=0.5", "--set", "phi=1",
            "--set", "gamma=1", "--set", "A=[[2,1],[1,2]]", "--y", "1,0", "--paths", "20000", "--dt", "1e-3",
            "--T", "1", "--times", "0.5,1", "--seed", "3", "--threads", str(threads), "--out", str(out)]


def test_criterion_03_uniqueness_in_law():
    with criterion(3, 300.0) as c:
        spec = family_spec("example512", alpha=0.5, phi="1", gamma=1.0, A=[[2.0, 1.0], [1.0, 2.0]])
        cfg = SimConfig(dt=1e-3, T=1.0, y=(1.0, 0.0), n_paths=20_000, seed=3)
        rep = laws.uniqueness_experiment(spec, cfg, times=(0.5, 1.0))
        for r in rep["tests"]:
            c.check(f"t={r['time']} {r['projection']} {r['method']} p={r['p_value']:.3f}", r["p_value"] > 0.01)
        c.check(f"excluded {rep['excluded_fraction']}", rep["excluded_fraction"] < 1e-3)


def test_criterion_04_nonuniqueness_demo():
    with criterion(4, 180.0) as c:
        cfg = SimConfig(dt=1e-3, T=1.0, y=(0.0, 0.0), n_paths=20_000, seed=4)
        rep = laws.nonuniqueness_demo(1.0, cfg)
        trivial = rep["occupation_trivial"]
        c.check("trivial occupation == 1 for every eps", all(v["mean"] == 1.0 for v in trivial.values()))
        occ = rep["occupation_delta_start"]["0.05"]["mean"]
        c.check(f"delta-start occupation(0.05) {occ:.4f} < {laws.GIRSANOV_OCCUPATION_BOUND}",
                occ < laws.GIRSANOV_OCCUPATION_BOUND)
        p = rep["energy_test"]["p_value"]
        c.check(f"energy p {p:.4f} < 0.01", p < 0.01)


def test_criterion_05_nonexplosion():
    with criterion(5, 5.0) as c:
        params = NonExplosionParams(N0=1, M=1.0, shells=(2, 4, 8, 16))
        ou = check_nonexplosion(family_spec("ou").coeffs, params)
        c.check(f"OU max_violation {ou['max_violation']:.3g} <= 0", ou["max_violation"] <= 0)
        quartic = check_nonexplosion(family_spec("quartic").coeffs, params)
        at4 = next(s for s in quartic["shells"] if s["radius"] == 4.0)["max_violation"]
        c.check(f"quartic violation at r=4 {at4:.1f} > 100", at4 > 100)


def test_criterion_06_invariant_density():
    with criterion(6, 30.0) as c:
        coeffs = family_spec("ou").coeffs
        lo, hi = (-3.0, -3.0), (3.0, 3.0)
        rho = solve_rho(coeffs, lo, hi, (120, 120))  # h = 0.05
        exact = DensityGrid.from_function(lambda X: np.exp(-0.5 * np.sum(X**2, axis=1)), lo, hi, rho.shape)
        err = np.linalg.norm(rho.values - exact.values) / np.linalg.norm(exact.values)
        c.check(f"rel L2 {err:.2e} < 2e-2", err < 0.02)
        c.check(f"min rho {rho.values.min():.3e} > 0", rho.values.min() > 0)
        bumps = default_bumps(lo, hi, count=10)
        res = helm_residual(coeffs, rho, bumps).max_abs_residual
        c.check(f"residual {res:.2e} < 1e-3 over {len(bumps)} bumps", res < 1e-3 and len(bumps) == 10)
        wrong = DensityGrid.from_function(lambda X: np.exp(-0.25 * np.sum(X**2, axis=1)), lo, hi, rho.shape)
        res_wrong = helm_residual(coeffs, wrong, bumps).max_abs_residual
        c.check(f"wrong-rho residual {res_wrong:.2e} > 1e-2", res_wrong > 1e-2)


def test_criterion_07_krylov():
    ref, _ = integrate.quad(lambda s: 1.0 - math.exp(-1.0 / (2.0 * s)), 0.0, 1.0, epsabs=1e-13)
    assert ref == pytest.approx(KRYLOV_REF, abs=1e-12)
    with criterion(7, 60.0) as c:
        spec = family_spec("brownian")
        g = ex.field("step(1 - norm(x))", 2)
        est = {}
        for dt in (1e-3, 5e-4):
            cfg = SimConfig(dt=dt, T=1.0, y=(0.0, 0.0), n_paths=20_000, seed=7, functionals=(Functional("g", g, 1.0),))
            est[dt] = krylov_functional(euler_maruyama(spec, cfg), g, 1.0)
        e, ci = est[1e-3]["estimate"], est[1e-3]["ci95"]
        se = ci / 1.96
        c.check(f"estimate {e:.4f} vs {ref:.4f} (se {se:.4f})", within(e, ref, se, 1e-3))
        change = abs(est[5e-4]["estimate"] / e - 1)
        c.check(f"dt-halving change {change:.2%} < 5%", change < 0.05)


def test_criterion_08_psi_bar():
    with criterion(8, 1.0) as c:
        spec = family_spec("girsanov", alpha=1.0)
        g = psi_bar_indicator(spec, 1.0)
        cfg = SimConfig(dt=1e-2, T=1.0, y=(0.0, 0.0), n_paths=4, seed=8, functionals=(Functional("pb", g, 1.0),))
        ens = euler_maruyama(spec, cfg)
        k = krylov_functional(ens, g, 1.0)["estimate"]
        c.check(f"krylov(1_B1 psi_bar) = {k}", k == math.inf)
        occ = occupation_profile(ens)
        c.check("occupation(eps) = T for every eps", all(v["mean"] == cfg.T for v in occ.values()))


def test_criterion_09_determinism(tmp_path):
    with criterion(9, 600.0) as c:
        outs = {}
        for threads in (1, 8):
            code = cli_main(uniqueness_args(tmp_path / f"threads{threads}", threads))
            c.check(f"exit code {code} with {threads} workers", code in (0, 2))
            out = tmp_path / f"threads{threads}"
            outs[threads] = {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}
        c.check(f"CSV outputs {sorted(outs[1])} byte-identical", outs[1] == outs[8] and outs[1])


def _random_ast(gen, depth):
    if depth == 0 or gen.random() < 0.25:
        k = gen.integers(3)
        if k == 0:
            return ex.Num(float(gen.choice([0.0, 1.0, 2.5, gen.random() * 10.0 ** gen.integers(-5, 6)])))
        return ex.Var(int(gen.integers(3))) if k == 1 else ex.Norm()
    sub = lambda: _random_ast(gen, depth - 1)  # noqa: E731
    k = gen.integers(6)
    if k == 0:
        return ex.Neg(sub())
    if k == 1:
        return ex.BinOp(str(gen.choice(list("+-*/^"))), sub(), sub())
    if k == 2:
        return ex.Call(str(gen.choice(["abs", "sqrt", "exp", "log", "step"])), (sub(),))
    if k == 3:
        return ex.Call(str(gen.choice(["pow", "min", "max"])), (sub(), sub()))
    cond = ex.Compare(str(gen.choice(ex.COMPARISONS)), sub(), sub())
    return ex.If(cond, sub(), sub()) if k == 4 else ex.BinOp("*", sub(), sub())


def test_criterion_10_parser():
    gen = np.random.default_rng(10)
    with criterion(10, 1.0) as c:
        bad = 0
        for _ in range(1000):
            node = _random_ast(gen, 4)
            bad += ex.parse(ex.to_source(node), 3) != node
        c.check(f"{1000 - bad}/1000 round trips exact", bad == 0)
        for src, want in [("1+2*3", 7.0), ("2^3^2", 64.0), ("-2^2", -4.0), ("(1+2)*3", 9.0), ("2*3^2", 18.0)]:
            got = ex.interpret(ex.parse(src, 1), np.zeros(1))
            c.check(f"{src} = {got:g}", got == want)


def test_criterion_11_kolmogorov():
    with criterion(11, 60.0) as c:
        dt = 1e-3
        f = ex.field("exp(-norm(x)^2)", 2)
        cfg = SimConfig(dt=dt, T=1.0, y=(0.0, 0.0), n_paths=20_000, seed=11)
        res = laws.kolmogorov_consistency(family_spec("brownian"), f, (0.0, 0.0), 1.0, cfg)
        c.check(f"MC {res['mc']:.4f} vs 1/3 (se {res['se']:.4f})", within(res["mc"], KOLMOGOROV_REF, res["se"], dt))
        c.check(f"quadrature {res['reference']:.6f}", abs(res["reference"] - KOLMOGOROV_REF) < 1e-6)


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
