import math
from fractions import Fraction

import numpy as np
import pytest

from ratnear.counting import InhomShift, count_N_total
from ratnear.errors import BudgetExceededError, PreconditionError
from ratnear.genericity import (
    _union_fraction_1d,
    calibrated_rho,
    check_inclusion,
    classify,
    classify_G,
    count_generic,
    cover_radius,
    delta_cover_fraction,
    dual_route_delta1,
    good_fraction,
    rho_of_v,
    special_cover,
    special_decay_slope,
    special_flags,
    special_fraction,
)
from ratnear.lattice import a_eps_t_v, delta1, delta_last, dual, phi_h, u1_matrix
from ratnear.manifold import Ball, paraboloid, veronese


VB = Ball.make((Fraction(1, 2),), Fraction(2, 5))


def test_classify_reports_consistent_threshold():
    mmap = veronese(2)
    eps, t = math.exp(-2.0), 8.0
    phi, eh = phi_h(2, 1, eps, t)
    for x in (0.21, 0.5, 0.739):
        verdict = classify(mmap, (x,), eps, t)
        assert math.isclose(verdict.threshold, phi * eh)
        assert verdict.is_special == (verdict.delta_last > verdict.threshold)
        assert verdict.verdict in ("generic", "special_raw")


def test_classify_rejects_points_outside_domain():
    with pytest.raises(PreconditionError):
        classify(veronese(2), (1.5,), 0.1, 4.0)


def test_special_flags_match_pointwise_classification():
    mmap = veronese(2)
    eps, t = math.exp(-2.0), 7.0
    pts = VB.grid(60)
    flags = special_flags(mmap, pts, eps, t)
    for p, flag in zip(pts, flags):
        assert classify(mmap, tuple(p), eps, t).is_special == bool(flag)


def test_special_flags_worker_independent():
    mmap = veronese(2)
    pts = VB.grid(40)
    a = special_flags(mmap, pts, math.exp(-1.5), 6.0, workers=0)
    b = special_flags(mmap, pts, math.exp(-1.5), 6.0, workers=3)
    assert np.array_equal(a, b)


def test_cover_radius_formula():
    assert math.isclose(cover_radius(0.04, 6.0), 0.2 * math.exp(-3.0))


def test_special_cover_pitch_guard():
    mmap = veronese(2)
    eps, t = math.exp(-2.0), 8.0
    # pitch 0.8/4 far above the cover radius: refuse
    with pytest.raises(PreconditionError):
        special_cover(mmap, VB, eps, t, grid_n=4)
    r = cover_radius(eps, t)
    grid_n = math.ceil(2 * 0.8 / r)
    cover = special_cover(mmap, VB, eps, t, grid_n=grid_n)
    assert all(b.radius == r for b in cover)
    assert 0 < len(cover) < grid_n


def test_special_fraction_decays_along_admissible_rule():
    mmap = veronese(2)
    f6 = special_fraction(mmap, VB, math.exp(-1.0 - 0.25 * 6.0), 6.0, grid_n=400)
    f8 = special_fraction(mmap, VB, math.exp(-1.0 - 0.25 * 8.0), 8.0, grid_n=400)
    assert 0.0 < f8 < f6 < 0.2


def test_special_decay_slope_value():
    assert math.isclose(special_decay_slope(2, 1, 2, 0.25), -(1.0 / 9.0) * 1.125)
    assert special_decay_slope(2, 1, 2, 0.0) == -1.5 / 9.0


def test_inclusion_holds_with_unit_constant():
    # every special point found on a medium grid already lies in the
    # c = 1 parameter box
    mmap = veronese(2)
    eps, t = math.exp(-2.0), 8.0
    pts = VB.grid(150)
    flags = special_flags(mmap, pts, eps, t)
    specials = pts[flags]
    assert len(specials) > 0
    for p in specials[:25]:
        assert check_inclusion(mmap, tuple(p), eps, t) == 1


def test_inclusion_paraboloid():
    mmap = paraboloid(2)
    ball = Ball.make((Fraction(1, 2), Fraction(1, 2)), Fraction(1, 10))
    eps, t = math.exp(-2.0), 7.0
    pts = ball.grid(20)
    flags = special_flags(mmap, pts, eps, t)
    specials = pts[flags]
    assert len(specials) > 0
    for p in specials[:10]:
        assert check_inclusion(mmap, tuple(p), eps, t) == 1


def test_count_generic_bounded_by_total():
    mmap = veronese(2)
    shift = InhomShift.zero(2, 1)
    eps, t = math.exp(-2.5), 7.0
    gc = count_generic(mmap, shift, VB, eps, t)
    assert 0 <= gc.count <= gc.total
    assert gc.total == count_N_total(mmap, shift, VB, eps, t)
    assert gc.tile_max <= gc.count or gc.count == 0
    assert int(gc) == gc.count
    assert gc.tile_bound == pytest.approx(
        eps**2 * math.exp(t) * (eps * math.exp(-t)) ** -0.5
    )


def test_count_generic_with_empty_cover_keeps_everything():
    mmap = veronese(2)
    shift = InhomShift.zero(2, 1)
    gc = count_generic(mmap, shift, VB, math.exp(-2.5), 7.0, cover=[])
    assert gc.count == gc.total


def test_count_generic_removes_points_near_special_cover():
    mmap = veronese(2)
    shift = InhomShift.zero(2, 1)
    eps, t = math.exp(-2.0), 7.0
    full = count_generic(mmap, shift, VB, eps, t, cover=[])
    pruned = count_generic(mmap, shift, VB, eps, t)
    assert pruned.count < full.count


def test_classify_G_validation_and_membership():
    mmap = veronese(2)
    with pytest.raises(PreconditionError):
        classify_G(mmap, (0.3,), 0.0, 6.0, 0.1)
    with pytest.raises(PreconditionError):
        classify_G(mmap, (0.3,), 1.5, 6.0, 0.1)
    cell = classify_G(mmap, (0.3,), 0.25, 8.0, math.exp(-2.0))
    assert cell.in_G == (cell.delta1 >= 0.25)
    assert cell.rho == pytest.approx(rho_of_v(mmap, math.exp(-2.0), 8.0, 0.25))


def test_rho_formulas():
    mmap = veronese(2)
    eps, t = 0.1, 5.0
    base = (eps * math.exp(2 * t)) ** -1.0
    assert math.isclose(rho_of_v(mmap, eps, t, 0.5), base / (2 * 0.5**3))
    assert math.isclose(calibrated_rho(mmap, eps, t, 2.0), 2.0 * base)


def test_dual_route_tracks_transference():
    # delta_1(L) delta_{n+1}(L*) sits in the transference band, and the
    # helper is literally the first dual minimum of the translated lattice
    mmap = veronese(2)
    v, t, eps = 0.25, 8.0, math.exp(-2.0)
    for x in (0.11, 0.43, 0.5, 0.77):
        g = a_eps_t_v(1, 1, eps, t, v).inverse() @ u1_matrix(mmap, (x,))
        prod = delta1(g) * delta_last(dual(g))
        assert 0.99 <= prod <= 3.0
        helper = dual_route_delta1(mmap, (x,), v, t, eps)
        assert helper == pytest.approx(delta1(dual(g)))


def test_good_fraction_monotone_in_v():
    mmap = veronese(2)
    lo_v = good_fraction(mmap, VB, 0.05, 8.0, math.exp(-2.0), grid_n=90)
    hi_v = good_fraction(mmap, VB, 0.9, 8.0, math.exp(-2.0), grid_n=90)
    assert 0.0 <= hi_v <= lo_v <= 1.0


def test_union_fraction_oracle_cases():
    assert _union_fraction_1d(np.array([0.2]), 0.1, 0.0, 1.0) == pytest.approx(0.2)
    # overlapping pair: [-0.05,0.25] and [0.15,0.45] clip to [0,0.45]
    assert _union_fraction_1d(np.array([0.1, 0.3]), 0.15, 0.0, 1.0) == pytest.approx(0.45)
    # clipping at the edges
    assert _union_fraction_1d(np.array([0.0]), 0.2, 0.0, 1.0) == pytest.approx(0.2)
    assert _union_fraction_1d(np.array([]), 0.2, 0.0, 1.0) == 0.0


def test_delta_cover_empty_instance_gives_zero():
    mmap = veronese(2)
    shift = InhomShift.zero(2, 1)
    ball = Ball.make((Fraction(3, 20),), Fraction(1, 20))
    frac = delta_cover_fraction(mmap, shift, ball, 1e-3, 2.0, rho=1e-4)
    assert frac == 0.0


def test_delta_cover_saturates_with_wide_radius():
    mmap = veronese(2)
    shift = InhomShift.zero(2, 1)
    frac = delta_cover_fraction(mmap, shift, VB, 0.3, 3.0, rho=1.0)
    assert frac == pytest.approx(1.0)


def test_delta_cover_grid_agrees_with_exact_union():
    mmap = veronese(2)
    shift = InhomShift.zero(2, 1)
    eps, t = math.exp(-4.0), 8.0
    rho = calibrated_rho(mmap, eps, t, 1.0)
    exact = delta_cover_fraction(mmap, shift, VB, eps, t, rho)
    grid = delta_cover_fraction(mmap, shift, VB, eps, t, rho, grid_n=20_000)
    assert abs(exact - grid) < 5e-3
    assert 0.0 < exact < 1.0


def test_delta_cover_raster_2d_brackets():
    mmap = paraboloid(2)
    shift = InhomShift.zero(3, 2)
    ball = Ball.make((Fraction(1, 2), Fraction(1, 2)), Fraction(1, 10))
    eps, t = math.exp(-1.25 * 5.0 / 5.0), 5.0
    rho = calibrated_rho(mmap, eps, t, 1.0)
    frac = delta_cover_fraction(mmap, shift, ball, eps, t, rho, grid_n=400)
    assert 0.0 <= frac <= 1.0


def test_count_generic_budget_guard():
    mmap = veronese(2)
    shift = InhomShift.zero(2, 1)
    with pytest.raises(BudgetExceededError):
        count_generic(mmap, shift, VB, math.exp(-2.0), 7.0, budget=50)
