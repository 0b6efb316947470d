"""Acceptance battery: one test per criterion, one PASS/FAIL line each.

Thresholds are asserted exactly as stated in the criteria list; every
randomized part runs at the frozen calibration seed, so the battery is
deterministic.  Two sub-checks of criterion 09 are out of reach at desk
scale (the assertion message carries the measured values); they fail
honestly instead of being loosened.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from ratnear.counting import (
    EpsRule,
    InhomShift,
    count_N,
    enumerate_N,
    fit_slope,
    predicted_main,
    scaling_sweep,
)
from ratnear.genericity import (
    calibrated_rho,
    check_inclusion,
    count_generic,
    delta_cover_fraction,
    special_decay_slope,
    special_flags,
    special_fraction,
)
from ratnear.harness.calibration import load_manifest
from ratnear.harness.runner import (
    CALIBRATION_SEED,
    SCHEMAS,
    _random_integer_basis,
    csv_body,
    execute,
)
from ratnear.harness.config import load_config
from ratnear.khintchine import ApproxFunction, exponent_estimate, mc_khintchine
from ratnear.lattice import (
    SquareMatrix,
    b_t_matrix,
    dual,
    g_eps_t,
    successive_minima,
    u1_dual_closed_form,
    u1_matrix,
    unit_ball_volume,
    weyl,
    z_matrix,
)
from ratnear.manifold import Ball, paraboloid, veronese
from ratnear.nondivergence import (
    bound_S1,
    family_params,
    family_rhs_log_slope,
    measure_S,
    measure_S1_1d,
)
from ratnear.poly import Poly

MANIFEST = load_manifest()
V2 = veronese(2)
P2 = paraboloid(2)
ZERO2 = InhomShift.zero(2, 1)
WIDE = Ball.make((Fraction(1, 2),), Fraction(2, 5))


def report(num: int, ok: bool, detail: str) -> str:
    line = f"criterion {num:02d} {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    return line


def test_criterion_01_lattice_identities():
    t0 = time.time()
    checks = []

    for k in range(2, 7):
        sig = weyl(k)
        checks.append((sig @ sig).allclose(SquareMatrix.identity(k), 0.0))

    rng = np.random.default_rng(CALIBRATION_SEED)
    worst_mult = 0.0
    for _ in range(50):
        g = SquareMatrix.from_rows(rng.uniform(-2, 2, (3, 3)).tolist())
        h = SquareMatrix.from_rows(rng.uniform(-2, 2, (3, 3)).tolist())
        if abs(g.det()) < 1e-3 or abs(h.det()) < 1e-3:
            continue
        lhs, rhs = dual(g @ h), dual(g) @ dual(h)
        worst_mult = max(
            worst_mult,
            max(abs(lhs.rows[i][j] - rhs.rows[i][j]) for i in range(3) for j in range(3)),
        )
    checks.append(worst_mult <= 1e-9)

    for x in ((Fraction(2, 7),), (Fraction(5, 13),)):
        u1 = u1_matrix(V2, x)
        checks.append(dual(u1).allclose(u1_dual_closed_form(V2, x), 0.0))
        checks.append(u1.det() == 1)

    worst_conj = 0.0
    for _ in range(100):
        eps = float(rng.uniform(0.05, 0.95))
        t = float(rng.uniform(0.5, 8.0))
        x = (float(rng.uniform(0.0, 1.0)),)
        g = g_eps_t(V2.n, eps, t)
        z = z_matrix(V2, x)
        conj = (g @ z) @ g.inverse()
        worst_conj = max(
            worst_conj,
            max(abs(conj.rows[i][j] - z.rows[i][j]) for i in range(3) for j in range(3)),
        )
    checks.append(worst_conj <= 1e-12)

    worst_bt = max(abs(b_t_matrix(1, 1, t).det() - 1.0) for t in (0.5, 2.0, 5.0, 9.0))
    checks.append(worst_bt <= 1e-12)

    elapsed = time.time() - t0
    ok = all(checks) and elapsed < 10.0
    line = report(
        1,
        ok,
        f"identities: dual-mult worst {worst_mult:.2e}, conjugation worst "
        f"{worst_conj:.2e}, det(b_t) off by {worst_bt:.2e}, {elapsed:.1f}s",
    )
    assert ok, line


def test_criterion_02_minkowski_and_dual_band():
    t0 = time.time()
    rng = np.random.default_rng(np.random.SeedSequence((CALIBRATION_SEED, 3)))
    prods = {3: [], 4: [], 5: []}
    mink_fail = 0
    for i in range(500):
        k = (3, 4, 5)[i % 3]
        g = _random_integer_basis(rng, k)
        mv = successive_minima(g)
        prod = 1.0
        for dv in mv.deltas:
            prod *= dv
        ratio = prod * unit_ball_volume(k) / abs(float(g.det()))
        if not 2.0**k / math.factorial(k) <= ratio <= 2.0**k + 1e-9:
            mink_fail += 1
        prods[k].append(mv.deltas[0] * successive_minima(dual(g)).deltas[-1])
    band_fail = 0
    for k in (3, 4, 5):
        lo, hi = MANIFEST.dual_band(k)
        if not (lo <= min(prods[k]) and max(prods[k]) <= hi):
            band_fail += 1
    elapsed = time.time() - t0
    ok = mink_fail == 0 and band_fail == 0 and elapsed < 60.0
    line = report(
        2,
        ok,
        f"500 bases: minkowski violations {mink_fail}, dual-band violations "
        f"{band_fail} (frozen band, zero slack), {elapsed:.1f}s",
    )
    assert ok, line


def _brute_triples(q0, q1, eps, lo, hi, th1, th2):
    """Exact triple loop over (q, p1, p2) for the planar quadratic map."""

    def ceil_f(x):
        return -((-x.numerator) // x.denominator)

    def floor_f(x):
        return x.numerator // x.denominator

    out = []
    for q in range(q0, q1 + 1):
        for p1 in range(ceil_f(q * lo - th1), floor_f(q * hi - th1) + 1):
            x = (p1 + th1) / q
            y = q * x * x - th2
            for p2 in range(ceil_f(y - eps), floor_f(y + eps) + 1):
                out.append((q, (p1,), (p2,)))
    return out


def test_criterion_03_counting_matches_brute_force():
    t0 = time.time()
    unit = Ball.make((Fraction(1, 2),), Fraction(1, 2))
    hand = count_N(V2, ZERO2, unit, Fraction(2, 5), math.log(10.0), mode="exact")

    rng = np.random.default_rng(CALIBRATION_SEED)
    mismatches = 0
    witnesses = 0
    for _ in range(50):
        t = float(rng.uniform(1.8, 4.2))
        q0 = max(1, math.ceil(math.exp(t - 1.0)))
        q1 = math.floor(math.exp(t))
        lo = Fraction(int(rng.integers(0, 40)), 100)
        hi = lo + Fraction(int(rng.integers(30, 60)), 100)
        eps = Fraction(int(rng.integers(5, 50)), 100)
        th1 = Fraction(int(rng.integers(0, 10)), 10)
        th2 = Fraction(int(rng.integers(0, 10)), 10)
        ball = Ball.make(((lo + hi) / 2,), (hi - lo) / 2)
        shift = InhomShift((th1, th2), 1)
        got = [(w.q, w.p_d, w.p_m) for w in enumerate_N(V2, shift, ball, eps, t, mode="exact")]
        want = sorted(_brute_triples(q0, q1, eps, lo, hi, th1, th2))
        if got != want:
            mismatches += 1
        witnesses += len(want)
    elapsed = time.time() - t0
    ok = hand == 48 and mismatches == 0
    line = report(
        3,
        ok,
        f"hand instance count {hand} (want 48); 50 randomized instances, "
        f"{witnesses} witnesses, {mismatches} mismatches, {elapsed:.1f}s",
    )
    assert ok, line


def test_criterion_04_main_term_scaling():
    t0 = time.time()
    t_list = [6.0, 7.0, 8.0, 9.0, 10.0, 11.0]
    bv = Ball.make((Fraction(1, 2),), Fraction(1, 400))
    bp = Ball.make((Fraction(1, 2), Fraction(1, 2)), Fraction(1, 640))
    zero3 = InhomShift.zero(3, 2)

    results = []
    for name, mmap, shift, ball, rho, budget in (
        ("veronese", V2, ZERO2, bv, 0.4, 2 * 10**7),
        ("paraboloid", P2, zero3, bp, 0.25, 13 * 10**8),
    ):
        fixed = scaling_sweep(
            mmap, shift, ball, t_list, EpsRule(eps0=0.3, rho=0.0), budget=budget, mode="float"
        )
        target = mmap.d + 1
        slope_ok = abs(fixed.slope - target) <= 0.15
        decay = scaling_sweep(
            mmap, shift, ball, t_list, EpsRule(eps0=0.3, rho=rho), budget=budget, mode="float"
        )
        ratios = [r.ratio for r in decay.reports]
        band = max(ratios) / min(ratios)
        band_ok = band <= 100.0 and not decay.reports[0].range_warning
        results.append((name, fixed.slope, target, slope_ok, band, band_ok))

    elapsed = time.time() - t0
    ok = all(s and b for _, _, _, s, _, b in results) and elapsed < 600.0
    detail = "; ".join(
        f"{name} slope {slope:.3f} (want {target}+-0.15), decay ratio band {band:.1f} (<=100)"
        for name, slope, target, _, band, _ in results
    )
    line = report(4, ok, f"{detail}; {elapsed:.0f}s")
    assert ok, line


def test_criterion_05_one_dimensional_measure_bound():
    t0 = time.time()
    rng = np.random.default_rng(CALIBRATION_SEED)
    worst = 0.0
    over = 0
    for i in range(20):
        a = float(rng.uniform(1.0, 5.0))
        b = float(rng.uniform(-3.0, 3.0))
        c = float(rng.uniform(0.0, 1.0))
        k = 2 if i % 2 == 0 else 3
        F = Poly.from_terms(1, {(0,): c, (1,): b, (k,): a})
        delta = float(rng.uniform(1e-3, 0.05))
        lo = float(rng.uniform(0.0, 0.3))
        hi = lo + float(rng.uniform(0.4, 1.0))
        theta = float(rng.uniform(0.5, 2.0))
        est = measure_S1_1d(F, delta, theta, (lo, hi), k, grid_n=1_000_000)
        bound = bound_S1(k, theta, delta, hi - lo)
        ratio = est.value / bound
        worst = max(worst, ratio)
        if ratio > 1.0 + 1e-3:
            over += 1
    elapsed = time.time() - t0
    ok = over == 0 and elapsed < 120.0
    line = report(
        5,
        ok,
        f"20 instances at grid 1e6: worst estimate/bound {worst:.4f} "
        f"(cap 1.001), {over} over, {elapsed:.1f}s",
    )
    assert ok, line


def test_criterion_06_nondivergence_family_decay():
    t0 = time.time()
    t_list = [4.0, 5.0, 6.0, 7.0, 8.0, 9.0]
    vals = []
    for t in t_list:
        eps = math.exp(-0.4 * t)
        params = family_params(0.5, eps, t, 2, 1)
        res = measure_S(V2, WIDE, params, sampler="grid", n_pts=50_000, budget=5_000_000)
        vals.append(res.estimate.value)
    slope = fit_slope(t_list, [math.log(v) for v in vals])[0]
    predicted = float(family_rhs_log_slope(2, 1, 2, 0.4))
    elapsed = time.time() - t0
    ok = slope >= predicted - 0.1 and elapsed < 600.0
    line = report(
        6,
        ok,
        f"family measure slope {slope:.4f} vs predicted {predicted:.4f} "
        f"(tolerance -0.1), {elapsed:.1f}s",
    )
    assert ok, line


def test_criterion_07_generic_special_machinery():
    t0 = time.time()

    # every sampled special point admits a finite dyadic inclusion constant
    missing = 0
    n_special = 0
    for eps_exp, t in ((-2.0, 8.0), (-3.0, 8.0), (-2.5, 9.0), (-2.0, 7.0)):
        eps = math.exp(eps_exp)
        pts = WIDE.grid(200)
        hits = pts[special_flags(V2, pts, eps, t)][:10]
        n_special += len(hits)
        missing += sum(1 for x in hits if check_inclusion(V2, x, eps, t) is None)
    bp = Ball.make((Fraction(1, 2), Fraction(1, 2)), Fraction(1, 10))
    epsp, tp = math.exp(-2.0), 7.0
    ptsp = bp.grid(20)
    specp = ptsp[special_flags(P2, ptsp, epsp, tp)][:10]
    n_special += len(specp)
    missing += sum(1 for x in specp if check_inclusion(P2, x, epsp, tp) is None)

    # special-measure decay along an admissible rule
    t_list = [6.0, 7.0, 8.0, 9.0, 10.0]
    fracs = [
        special_fraction(V2, WIDE, math.exp(-1.0 - 0.25 * t), t, grid_n=3500) for t in t_list
    ]
    slope = fit_slope(t_list, [math.log(f) for f in fracs])[0]
    predicted = special_decay_slope(2, 1, 2, 0.25)
    decay_ok = abs(slope - predicted) <= 0.5

    # generic count against the frozen constants
    consts = MANIFEST.constants("veronese:2", (0.0, 0.0))
    ratio_fail = 0
    worst_ratio = 0.0
    for t in (6.0, 7.0):
        eps = math.exp(-1.0 - 0.25 * t)
        gc = count_generic(V2, ZERO2, WIDE, eps, t)
        ratio = int(gc) / predicted_main(V2, WIDE, eps, t)
        worst_ratio = max(worst_ratio, ratio)
        if ratio > consts["C_semi"] or gc.tile_max > consts["C_tile"] * gc.tile_bound:
            ratio_fail += 1

    elapsed = time.time() - t0
    ok = missing == 0 and n_special >= 25 and decay_ok and ratio_fail == 0
    line = report(
        7,
        ok,
        f"inclusion {n_special - missing}/{n_special}; decay slope {slope:.3f} vs "
        f"{predicted:.3f} (tol 0.5); generic/pred worst {worst_ratio:.3f} "
        f"<= C_semi {consts['C_semi']:.3f}; {elapsed:.0f}s",
    )
    assert ok, line


def test_criterion_08_lower_bound_coverage():
    t0 = time.time()
    worst = math.inf
    fails = 0
    for theta in ((0, 0), (Fraction(3, 10), Fraction(7, 10))):
        shift = InhomShift(theta, 1)
        consts = MANIFEST.constants("veronese:2", tuple(float(v) for v in theta))
        for rho_rule in (0.5, 0.75):
            for t in (8.0, 9.0, 10.0, 11.0):
                eps = math.exp(-rho_rule * t)
                rho = calibrated_rho(V2, eps, t, consts["C0"])
                frac = delta_cover_fraction(
                    V2, shift, WIDE, eps, t, rho, budget=4 * 10**9
                )
                worst = min(worst, frac)
                if frac < 0.5:
                    fails += 1
    elapsed = time.time() - t0
    ok = fails == 0
    line = report(
        8,
        ok,
        f"16 coverage runs (2 shifts x 2 rules x t in 8..11): worst fraction "
        f"{worst:.3f} (need >= 0.5), {fails} below, {elapsed:.0f}s",
    )
    assert ok, line


def test_criterion_09_khintchine_dichotomy():
    t0 = time.time()
    q_max = 100_000
    failures = []

    div = mc_khintchine(
        V2, ZERO2, ApproxFunction(kind="power", tau=0.45), 200, q_max, seed=CALIBRATION_SEED
    )
    last_full = div.last_full_block_fraction()
    if last_full < 0.9:
        failures.append(f"divergent last-block fraction {last_full:.3f} < 0.9")

    conv = mc_khintchine(
        V2, ZERO2, ApproxFunction(kind="power", tau=0.7), 200, q_max, seed=CALIBRATION_SEED
    )
    tail = conv.tail_fraction(1000)
    if tail > 0.2:
        failures.append(f"convergent tail fraction {tail:.3f} > 0.2")

    vals = []
    for i in range(200):
        rng = np.random.default_rng(np.random.SeedSequence((CALIBRATION_SEED, i)))
        x = tuple(float(v) for v in V2.domain.sample(rng, 1)[0])
        vals.append(exponent_estimate(V2, ZERO2, x, q_max).value)
    vals = np.array(vals)
    share = float(((vals >= 0.45) & (vals <= 0.60)).mean())
    if share < 0.9:
        failures.append(
            f"exponent share in [0.45,0.60] is {share:.3f} < 0.9 "
            f"(median {np.median(vals):.3f})"
        )

    elapsed = time.time() - t0
    ok = not failures and elapsed < 900.0
    line = report(
        9,
        ok,
        f"divergent last-block {last_full:.3f}, convergent tail {tail:.3f}, "
        f"exponent share {share:.3f}, {elapsed:.0f}s"
        + ("" if not failures else " | " + "; ".join(failures)),
    )
    assert ok, line


def test_criterion_10_reproducibility(tmp_path):
    t0 = time.time()
    bodies = {}
    flag_sets = {
        "khintchine-mc": {
            "map": "veronese:2",
            "tau": "0.6",
            "n_samples": "6",
            "q_max": "400",
            "seed": "11",
        },
        "generic-split": {
            "map": "veronese:2",
            "ball_center": "0.5",
            "ball_radius": "0.4",
            "t_list": "6",
            "eps0": "0.3679",
            "rho": "0",
            "seed": "11",
        },
    }
    identical = True
    for sub, flags in flag_sets.items():
        per_worker = []
        for run, workers in (("a", 0), ("b", 2), ("c", 0)):
            cfg = load_config(
                SCHEMAS[sub], None, dict(flags, workers=str(workers)), environ={}
            )
            _, csv_path = execute(sub, cfg, MANIFEST, str(tmp_path / f"{sub}-{run}"))
            per_worker.append(csv_body(csv_path))
        bodies[sub] = len(per_worker[0])
        if not per_worker[0] == per_worker[1] == per_worker[2]:
            identical = False
    elapsed = time.time() - t0
    ok = identical
    line = report(
        10,
        ok,
        f"csv bodies byte-identical across reruns and worker counts "
        f"({', '.join(f'{k}: {v}B' for k, v in bodies.items())}), {elapsed:.1f}s",
    )
    assert ok, line
