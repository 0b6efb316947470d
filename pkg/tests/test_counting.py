import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ratnear.counting import (
    EpsRule,
    InhomShift,
    RationalWitness,
    alpha,
    block_centers,
    count_N,
    count_N_star,
    count_N_total,
    dyadic_partition,
    enumerate_N,
    eta,
    fit_slope,
    predicted_error,
    predicted_main,
    q_bounds,
    scaling_sweep,
    total_centers,
)
from ratnear.errors import (
    BudgetExceededError,
    InvalidDimensionError,
    PreconditionError,
)
from ratnear.manifold import Ball, paraboloid, veronese


def _ceil(x: Fraction) -> int:
    return -((-x.numerator) // x.denominator)


def _floor(x: Fraction) -> int:
    return x.numerator // x.denominator


def brute_count_veronese2(q0, q1, eps, lo, hi, th1=Fraction(0), th2=Fraction(0)):
    """Triple loop straight from the definition, exact arithmetic.

    Counts (q, p1, p2) with (p1+th1)/q in [lo, hi] and
    |q x^2 - th2 - p2| <= eps for x = (p1+th1)/q.
    """
    eps, lo, hi = Fraction(eps), Fraction(lo), Fraction(hi)
    total = 0
    for q in range(q0, q1 + 1):
        for p1 in range(_ceil(q * lo - th1), _floor(q * hi - th1) + 1):
            x = (p1 + th1) / q
            y = q * x * x - th2
            total += max(0, _floor(y + eps) - _ceil(y - eps) + 1)
    return total


UNIT = Ball.make((Fraction(1, 2),), Fraction(1, 2))
T10 = math.log(10.0)


def test_hand_count_is_48():
    # e^t = 10, eps = 2/5, veronese(2) on [0,1]: worked out by hand to 48
    assert q_bounds(T10) == (4, 10)
    oracle = brute_count_veronese2(4, 10, Fraction(2, 5), 0, 1)
    assert oracle == 48
    got = count_N(veronese(2), InhomShift.zero(2, 1), UNIT, Fraction(2, 5), T10)
    assert got == 48


def test_float_mode_drops_boundary_ties():
    # the same instance has window-edge ties at rational x; binary floats
    # resolve them downward, which is why exact mode is the reference
    got = count_N(
        veronese(2), InhomShift.zero(2, 1), UNIT, 0.4, T10, mode="float"
    )
    assert got == 45


def test_exact_mode_requires_exact_inputs():
    with pytest.raises(PreconditionError):
        count_N(veronese(2), InhomShift.zero(2, 1), UNIT, 0.4, T10, mode="exact")


def test_count_matches_oracle_with_shift():
    shift = InhomShift((Fraction(3, 10), Fraction(7, 10)), d=1)
    oracle = brute_count_veronese2(
        4, 10, Fraction(2, 5), 0, 1, Fraction(3, 10), Fraction(7, 10)
    )
    got = count_N(veronese(2), shift, UNIT, Fraction(2, 5), T10)
    assert got == oracle


def test_count_matches_oracle_on_subinterval():
    ball = Ball.make((Fraction(2, 5),), Fraction(3, 10))  # [1/10, 7/10]
    for eps in (Fraction(1, 10), Fraction(1, 4)):
        oracle = brute_count_veronese2(4, 10, eps, Fraction(1, 10), Fraction(7, 10))
        assert count_N(veronese(2), InhomShift.zero(2, 1), ball, eps, T10) == oracle


def test_witnesses_satisfy_the_definition():
    shift = InhomShift((Fraction(3, 10), Fraction(7, 10)), d=1)
    eps = Fraction(2, 5)
    wits = enumerate_N(veronese(2), shift, UNIT, eps, T10)
    assert len(wits) == count_N(veronese(2), shift, UNIT, eps, T10)
    assert len(set(wits)) == len(wits)
    for w in wits:
        x = (w.p_d[0] + Fraction(3, 10)) / w.q
        assert 0 <= x <= 1
        assert abs(w.q * x * x - Fraction(7, 10) - w.p_m[0]) <= eps
        assert 4 <= w.q <= 10


def test_float_and_exact_agree_off_ties():
    # no window boundary passes within 1e-9 of a lattice point here
    ball = Ball.make((Fraction(1, 2),), Fraction(2, 5))
    exact = count_N(veronese(2), InhomShift.zero(2, 1), ball, Fraction(37, 100), 2.3)
    floaty = count_N(veronese(2), InhomShift.zero(2, 1), ball, 0.37, 2.3, mode="float")
    assert exact == floaty


def test_paraboloid_small_block_by_hand():
    # q = 1: p_d in {0,1}^2, f = x1^2+x2^2 in {0, 1, 2}; window 1/2 catches
    # exactly one p_m at each corner
    pm = paraboloid(2)
    ball = Ball.make((Fraction(1, 2), Fraction(1, 2)), Fraction(1, 2))
    got = count_N(pm, InhomShift.zero(3, 2), ball, Fraction(1, 2), 0.5)
    assert q_bounds(0.5) == (1, 1)
    assert got == 4


def test_witness_point_reconstruction():
    w = RationalWitness(5, (3,), (2,))
    shift = InhomShift((Fraction(1, 2), Fraction(0)), d=1)
    assert w.point(shift) == (Fraction(7, 10),)
    assert w.p == (3, 2)
    with pytest.raises(PreconditionError):
        RationalWitness(0, (), ())


@settings(max_examples=25, deadline=None)
@given(
    e1=st.fractions(min_value="1/100", max_value="1/2"),
    e2=st.fractions(min_value="1/100", max_value="1/2"),
)
def test_count_monotone_in_eps(e1, e2):
    if e1 > e2:
        e1, e2 = e2, e1
    small = count_N(veronese(2), InhomShift.zero(2, 1), UNIT, e1, 2.0)
    large = count_N(veronese(2), InhomShift.zero(2, 1), UNIT, e2, 2.0)
    assert small <= large


@settings(max_examples=20, deadline=None)
@given(
    a=st.fractions(min_value=0, max_value=1),
    b=st.fractions(min_value=0, max_value=1),
    k1=st.integers(-3, 3),
    k2=st.integers(-3, 3),
)
def test_count_periodic_in_theta(a, b, k1, k2):
    base = InhomShift((a, b), d=1)
    moved = InhomShift((a + k1, b + k2), d=1)
    eps = Fraction(3, 10)
    c0 = count_N(veronese(2), base, UNIT, eps, 2.0)
    c1 = count_N(veronese(2), moved, UNIT, eps, 2.0)
    assert c0 == c1


def test_block_count_dominated_by_inflated_star():
    # every block pair sits within eps/q <= e eps e^(-t) of the graph
    e = math.e
    for eps, t in ((0.3, 2.3), (0.15, 3.1), (0.45, 2.0)):
        blk = count_N(veronese(2), InhomShift.zero(2, 1), UNIT, eps, t, mode="float")
        star = count_N_star(veronese(2), InhomShift.zero(2, 1), UNIT, e * eps, t)
        assert blk <= star


def test_star_rigorous_brackets_witness():
    for t in (2.0, 3.0):
        lo, hi = count_N_star(
            veronese(2), InhomShift.zero(2, 1), UNIT, 0.3, t, mode="rigorous"
        )
        wit = count_N_star(veronese(2), InhomShift.zero(2, 1), UNIT, 0.3, t)
        assert lo == wit <= hi


def test_dyadic_partition_tiles_everything():
    for t in (0.5, 1.0, 2.7, 5.3):
        blocks = dyadic_partition(t)
        qs = [q for q0, q1 in blocks for q in range(q0, q1 + 1)]
        assert sorted(qs) == list(range(1, math.floor(math.exp(t)) + 1))


def test_total_centers_multiplicity_matches_total_count():
    mmap = veronese(2)
    shift = InhomShift.zero(2, 1)
    ball = Ball.make((Fraction(1, 2),), Fraction(2, 5))
    for eps, t in ((0.25, 3.0), (0.1, 4.0)):
        pts, mult = total_centers(mmap, shift, ball, eps, t, budget=10_000_000)
        assert int(mult.sum()) == count_N_total(mmap, shift, ball, eps, t)
        assert pts.shape == (len(mult), 1)
        assert np.all(pts[:, 0] >= 0.1 - eps * math.exp(-t) - 1e-12)


def test_block_centers_land_in_the_ball():
    mmap = veronese(2)
    ball = Ball.make((Fraction(1, 2),), Fraction(1, 4))
    pts = block_centers(mmap, InhomShift.zero(2, 1), ball, 0.3, 3.0)
    assert pts.ndim == 2 and pts.shape[1] == 1
    assert np.all((pts >= 0.25) & (pts <= 0.75))
    wits = enumerate_N(mmap, InhomShift.zero(2, 1), ball, Fraction(3, 10), 3.0)
    assert len(pts) == len({(w.q, w.p_d) for w in wits})


def test_empty_count_instance():
    # eps too small for any denominator in the block to land inside
    ball = Ball.make((Fraction(3, 20),), Fraction(1, 20))  # [0.1, 0.2]
    got = count_N(veronese(2), InhomShift.zero(2, 1), ball, Fraction(1, 1000), 2.0)
    assert got == 0


def test_budget_guard_raises():
    with pytest.raises(BudgetExceededError):
        count_N(veronese(2), InhomShift.zero(2, 1), UNIT, Fraction(2, 5), 9.0, budget=10)


def test_input_validation():
    with pytest.raises(InvalidDimensionError):
        count_N(veronese(2), InhomShift.zero(3, 1), UNIT, 0.3, 2.0)
    with pytest.raises(InvalidDimensionError):
        count_N(veronese(2), InhomShift.zero(2, 1), Ball.make((0.5, 0.5), 0.1), 0.3, 2.0)
    with pytest.raises(PreconditionError):
        count_N(veronese(2), InhomShift.zero(2, 1), UNIT, 0.0, 2.0)
    with pytest.raises(PreconditionError):
        q_bounds(0.0)


def test_exponent_constants():
    assert eta(2, 1) == Fraction(3, 3)
    assert eta(3, 1) == Fraction(3, 5)
    assert eta(3, 2) == Fraction(1, 2)
    assert alpha(2, 1, 2) == Fraction(1, 9)
    assert alpha(3, 1, 3) == Fraction(1, 20)


def test_predictions_positive_and_scaling():
    mmap = veronese(2)
    pm = predicted_main(mmap, UNIT, 0.3, 4.0)
    assert math.isclose(pm, 0.3 * math.exp(8.0))
    assert predicted_error(mmap, 0.3, 4.0) > 0


def test_fit_slope_recovers_line():
    xs = [1.0, 2.0, 3.0, 4.0]
    ys = [2.5 * x - 1.0 for x in xs]
    slope, intercept = fit_slope(xs, ys)
    assert math.isclose(slope, 2.5)
    assert math.isclose(intercept, -1.0)
    with pytest.raises(PreconditionError):
        fit_slope([1.0], [2.0])


def test_eps_rule_validation_and_admissibility():
    rule = EpsRule(rho=0.5, eps0=2.0)
    assert math.isclose(rule.eps_at(2.0), 2.0 * math.exp(-1.0))
    assert rule.admissible(2, 1)  # eta(2,1) = 1
    assert not EpsRule(rho=1.5).admissible(2, 1)
    with pytest.raises(PreconditionError):
        EpsRule(rho=-0.1)
    with pytest.raises(PreconditionError):
        EpsRule(rho=0.1, eps0=0.0)


def test_scaling_sweep_growth_matches_volume_heuristic():
    # fixed eps: log N should grow like (d+1) t
    sweep = scaling_sweep(
        veronese(2),
        InhomShift.zero(2, 1),
        UNIT,
        [4.0, 5.0, 6.0],
        EpsRule(rho=0.0, eps0=0.3),
    )
    assert not sweep.range_warning
    assert abs(sweep.slope - 2.0) < 0.1
    assert all(0.5 < r < 1.5 for r in sweep.ratios())


def test_scaling_sweep_flags_inadmissible_rule():
    sweep = scaling_sweep(
        veronese(2),
        InhomShift.zero(2, 1),
        UNIT,
        [3.0, 4.0],
        EpsRule(rho=1.2, eps0=1.0),
    )
    assert sweep.range_warning
    assert all(r.range_warning for r in sweep.reports)
