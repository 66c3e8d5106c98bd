"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -s`` to see the lines as they are
produced; they are also collected in the terminal summary.
"""
import time

import numpy as np

from spectral_shift import discretize as ds
from spectral_shift.domains import box_domain, nested_square_pair, random_side_deviation, square_domain
from spectral_shift.experiments import (
    cusp_family,
    diffeo_experiment,
    example_hoelder_shift,
    example_wedge,
    fit_stability,
    oscillation_family,
    stability_sweep,
    vertical_shift_family,
)
from spectral_shift.metrics import atlas_distance, chain_check
from spectral_shift.perturbation import Diffeomorphism, inclusion_check

LAP = ds.OperatorSpec.laplacian()
H = 1 / 96


def test_criterion_01_dirichlet_oracle(acceptance):
    start = time.perf_counter()
    lam = ds.spectrum(box_domain(), LAP, "dirichlet", 1 / 64, k=5).eigenvalues
    elapsed = time.perf_counter() - start
    ref = ds.oracle_rectangle(1, 1, "dirichlet", 5)
    err = np.abs(lam - ref) / ref
    ok = bool(np.all(err <= 0.01) and elapsed <= 30)
    acceptance(1, "Dirichlet unit square within 1% of pi^2 (p^2 + q^2)", ok,
               f"max rel err {err.max():.2e}, {elapsed:.2f} s")
    assert ok


def test_criterion_02_neumann_oracle(acceptance):
    lam = ds.spectrum(box_domain(), LAP, "neumann", 1 / 64, k=3).eigenvalues
    err = np.abs(lam[1:3] - np.pi ** 2) / np.pi ** 2
    ok = bool(abs(lam[0]) <= 1e-6 * lam[1] and np.all(err <= 0.03))
    acceptance(2, "Neumann unit square lambda_1 ~ 0, lambda_2,3 within 3% of pi^2", ok,
               f"lambda_1 {lam[0]:.2e}, max rel err {err.max():.2e}")
    assert ok


def test_criterion_03_clamped_consistency(acceptance):
    ref = ds.oracle_clamped_interval(1.0, 2)
    errs = []
    for n in (63, 127):
        K, M = ds.clamped_interval_matrices(n)
        errs.append(np.abs(ds.solve_lowest(K, M, 2).eigenvalues - ref))
    ratios = errs[0] / errs[1]
    plate = ds.OperatorSpec.biharmonic()
    coarse, fine = (ds.spectrum(box_domain(), plate, "dirichlet", h, k=1)[0] for h in (1 / 48, 1 / 96))
    drift = abs(coarse - fine) / fine
    extrapolated = (4 * fine - coarse) / 3
    ok = bool(np.all((ratios >= 3.5) & (ratios <= 4.5)) and drift < 0.01)
    acceptance(3, "clamped beam second order, clamped square stable under refinement", ok,
               f"ratios {ratios.round(3).tolist()}, plate drift {drift:.2e}, extrapolated {extrapolated:.2f}")
    assert ok


def test_criterion_04_distance_chain(acceptance):
    rng = np.random.default_rng(ds.DEFAULT_SEED)
    bad = 0
    for _ in range(200):
        d1 = square_domain(side_deviation=random_side_deviation(rng, 0.05))
        d2 = square_domain(side_deviation=random_side_deviation(rng, 0.05))
        bad += not chain_check(d1, d2).passed
    acceptance(4, "d_HP <= d^HP <= d_A + slack on 200 pairs", bad == 0, f"{bad} violations")
    assert bad == 0


def test_criterion_05_wedge(acceptance):
    worst = 0.0
    for c in (2.0, 3.0):
        for eps in (0.05, 0.1):
            r = example_wedge(c, eps)
            worst = max(worst, abs(r["ratio"] - np.sqrt(c * c + 1)))
    ok = worst <= 1e-3
    acceptance(5, "wedge d^HP / d_HP = sqrt(c^2 + 1)", ok, f"worst deviation {worst:.2e}")
    assert ok


def test_criterion_06_hoelder_shift(acceptance):
    rows = [example_hoelder_shift(eps) for eps in (0.04, 0.01)]
    ok = all(r["d_A"] >= np.sqrt(r["eps"]) * (1 - 1e-12) and r["d_hp"] <= r["eps"] + r["slack"] for r in rows)
    acceptance(6, "Hoelder shift d_A >= sqrt(eps), d^HP <= eps + slack", ok,
               ", ".join(f"eps {r['eps']}: d_A {r['d_A']:.4f}, d^HP {r['d_hp']:.4f}" for r in rows))
    assert ok


def test_criterion_07_t_eps_inclusion(acceptance, certified_transform):
    t = certified_transform
    s = t.partition.s
    eps = 0.9 * t.certificate.E1
    rng = np.random.default_rng(ds.DEFAULT_SEED)
    violations, worst = 0, 0.0
    for i in range(50):
        d1, d2 = nested_square_pair(rng, 0.04, 0.9 * eps / s)
        worst = max(worst, atlas_distance(d1, d2).value)
        violations += inclusion_check(d1, d2, eps, t, n_samples=10_000, seed=i).violations
    ok = violations == 0 and worst < eps / s
    acceptance(7, "T_eps(Omega_1) inside Omega_2 on 50 pairs, 10^4 samples each", ok,
               f"{violations} violations, eps {eps:.3e}, max d_A {worst:.3e} < eps/s {eps / s:.3e}")
    assert ok


def test_criterion_08_partition_certificate(acceptance, certified_transform):
    t = certified_transform
    pu = t.partition
    X = pu.sample_support(20_000)
    X = X[pu.covered(X)][:10_000]
    sum_err = float(np.max(np.abs(pu(X).sum(axis=0) - 1)))
    A2, E1 = t.certificate.A2, t.certificate.E1
    band = []
    for eps in (0.25 * E1, 0.5 * E1, E1):
        det = t.jacobian_det(X, eps)
        band.append(float(np.max(np.abs(det - 1)) / (A2 * eps)))
    ok = len(X) >= 10_000 and sum_err <= 1e-10 and max(band) <= 1
    acceptance(8, "partition sums to 1, det of the T_eps Jacobian in [1 - A2 eps, 1 + A2 eps]", ok,
               f"{len(X)} samples, sum err {sum_err:.1e}, worst |det - 1| / (A2 eps) {max(band):.3f}")
    assert ok


def test_criterion_09_lipschitz_exponent(acceptance):
    start = time.perf_counter()
    grid = [H, 2 * H, 4 * H, 8 * H]
    exps, degenerate, ok = [], 0, True
    for family in (vertical_shift_family(grid), oscillation_family(grid)):
        r = stability_sweep(family, LAP, "both", 3, H)
        for bc in r.bcs:
            for n in (1, 2, 3):
                fit = fit_stability(r, n, "d_A", bc)
                if fit.degenerate:
                    # the eigenvalue does not move, so |d lambda| <= c d_A holds with c = 0
                    degenerate += 1
                    continue
                exps.append(fit.exponent)
                ok &= 0.9 <= fit.exponent <= 1.3
    elapsed = time.perf_counter() - start
    ok = bool(ok and elapsed <= 600)
    acceptance(9, "Lipschitz families: exponent of |d lambda_n| vs d_A in [0.9, 1.3]", ok,
               f"exponents {min(exps):.3f} to {max(exps):.3f}, {degenerate} exact-zero fits, {elapsed:.1f} s")
    assert ok


def test_criterion_10_hoelder_exponent(acceptance):
    f = cusp_family([1 / 256, 1 / 128, 1 / 64, 1 / 32, 1 / 16])
    r = stability_sweep(f, LAP, "dirichlet", 3, H)
    fit = fit_stability(r, 1, "d_hp_lower", "dirichlet")
    ok = fit.exponent >= 0.4
    acceptance(10, "cusp family exponent of |d lambda_1| vs d_HP >= 0.4", ok,
               f"exponent {fit.exponent:.3f} on {fit.n_rows} rows")
    assert ok


def test_criterion_11_monotonicity(acceptance):
    rng = np.random.default_rng(ds.DEFAULT_SEED)
    tol = 1e-8
    order_fail, nest_fail = 0, 0
    for _ in range(20):
        d1, d2 = nested_square_pair(rng, 0.02, 0.03)
        lam = {}
        for name, d in (("outer", d1), ("inner", d2)):
            g = ds.rasterize(d, H)
            lD = ds.spectrum(d, LAP, "dirichlet", H, k=6, grid=g).eigenvalues
            lN = ds.spectrum(d, LAP, "neumann", H, k=6, grid=g).eigenvalues
            order_fail += int(np.sum(lN > lD + tol * np.maximum(1.0, lD)))
            lam[name] = lD
        nest_fail += int(np.sum(lam["outer"] > lam["inner"] + tol * np.maximum(1.0, lam["inner"])))
    ok = order_fail == 0 and nest_fail == 0
    acceptance(11, "lambda_N <= lambda_D (n <= 6) and Dirichlet nesting on 20 pairs", ok,
               f"{order_fail} order and {nest_fail} nesting violations")
    assert ok


def test_criterion_12_dilation_ratio(acceptance):
    deltas = (1e-2, 5e-3, 2.5e-3)
    maps = [Diffeomorphism.dilation(1 + d, (0.5, 0.5)) for d in deltas]
    r = diffeo_experiment(square_domain(), maps, LAP, "dirichlet", k=3, h=H, method="rasterize")
    worst, spread = 0.0, 0.0
    for row, d in zip(r.rows, deltas):
        predicted = np.abs(r.base * (1 / (1 + d) ** 2 - 1))
        worst = max(worst, float(np.max(row["delta"] / predicted)))
    for n in (1, 2, 3):
        q = r.ratios(n)
        spread = max(spread, float(q.max() / q.min()))
    ok = worst <= 1.1 and spread < 2
    acceptance(12, "dilation: |d lambda_n| <= 1.1 x scaling law, ratio stable within 2x", ok,
               f"worst measured/predicted {worst:.4f}, ratio spread {spread:.3f}")
    assert ok


def test_criterion_13_metric_axioms(acceptance):
    rng = np.random.default_rng(ds.DEFAULT_SEED)
    asym, tri = 0, 0
    for _ in range(100):
        d = [square_domain(side_deviation=random_side_deviation(rng, 0.05)) for _ in range(3)]
        r01, r10 = atlas_distance(d[0], d[1]), atlas_distance(d[1], d[0])
        r12, r02 = atlas_distance(d[1], d[2]), atlas_distance(d[0], d[2])
        asym += r01.value != r10.value
        tri += r02.value > r01.value + r12.value + r01.slack + r12.slack + r02.slack
    ok = asym == 0 and tri == 0
    acceptance(13, "d_A symmetric and triangle inequality on 100 triples", ok,
               f"{asym} asymmetric, {tri} triangle violations")
    assert ok
