"""Membership tests and measure estimators for the short-form sets.

The basic set collects parameter points x admitting an integer pair
(a_0, a), a != 0, with

    |a_0 + F(x) a^T| < delta,   ||grad(F(x) a^T)|| < K,   |a_i| < T_i,

where F is the full Monge map (x_1, ..., x_d, f_1, ..., f_m), the norm
is the sup norm and all three inequalities are strict. a_0 is always
the nearest integer to -F(x) a^T, which minimises the first form.

Measure estimators sample the membership indicator on grids or Monte
Carlo points and report the estimate next to the two reference bounds

    delta prod_d min(K, T_i) (T_{d+1}...T_n) vol(B)
      + E_sharp (delta min(K, 1/r) T_1...T_n / max T_i)^alpha       (sharp)
    E (delta K T_1...T_n / max T_i)^alpha vol(B)                    (plain)

whose constants are calibration inputs, never derived.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import product

import numpy as np

from .counting import alpha
from .errors import BudgetExceededError, PreconditionError
from .manifold import Ball, ManifoldMap
from .poly import Poly, as_fraction, is_exact_scalar

DEFAULT_WITNESS_BUDGET = 2_000_000


@dataclass(frozen=True)
class SBoxParams:
    """delta in (0,1], K > 0, T_i >= 1."""

    delta: float
    K: float
    T: tuple

    def __post_init__(self):
        object.__setattr__(self, "T", tuple(self.T))
        if not 0 < float(self.delta) <= 1:
            raise PreconditionError(f"delta must lie in (0,1], got {self.delta}")
        if not float(self.K) > 0:
            raise PreconditionError(f"K must be positive, got {self.K}")
        if not all(float(t) >= 1 for t in self.T):
            raise PreconditionError("every T_i must be >= 1")

    @property
    def n(self) -> int:
        return len(self.T)

    @property
    def admissible(self) -> bool:
        """delta^n < K T_1...T_n / max T_i."""
        prod = 1.0
        for t in self.T:
            prod *= float(t)
        return float(self.delta) ** self.n < float(self.K) * prod / max(
            float(t) for t in self.T
        )

    def t_product_over_max(self) -> float:
        prod = 1.0
        for t in self.T:
            prod *= float(t)
        return prod / max(float(t) for t in self.T)


@dataclass(frozen=True)
class MeasureEstimate:
    value: float
    half_width: float
    samples: int


@dataclass(frozen=True)
class MeasureResult:
    estimate: MeasureEstimate
    fraction: float
    rhs_sharp: float
    rhs_plain: float
    admissible: bool
    sampler: str


def family_params(c: float, eps: float, t: float, n: int, d: int) -> SBoxParams:
    """Scaled family delta = c e^-t, K = c (eps^m e^t)^(1/d), T_i = c / eps."""
    m = n - d
    return SBoxParams(
        delta=c * math.exp(-t),
        K=c * (eps**m * math.exp(t)) ** (1.0 / d),
        T=(c / eps,) * n,
    )


def family_rhs_log_slope(n: int, d: int, l: int, rho: float) -> float:
    """d/dt of log of the plain bound along the family with eps = eps0 e^(-rho t).

    Zero whenever d = 1: the decay of delta is exactly offset by the
    growth of K and the T-product.
    """
    m = n - d
    inner = -1.0 + (1.0 - m * rho) / d + (n - 1) * rho
    return float(alpha(n, d, l)) * inner


def _form_values(mmap: ManifoldMap, x, a):
    """(F(x) a^T, gradient vector a_d + J(x) a_m) for the full map."""
    d, m = mmap.d, mmap.m
    fx = mmap.eval_f(x)
    jac = mmap.jacobian(x)
    val = sum(x[i] * a[i] for i in range(d)) + sum(
        fx[j] * a[d + j] for j in range(m)
    )
    grad = [
        a[i] + sum(jac[i][j] * a[d + j] for j in range(m)) for i in range(d)
    ]
    return val, grad


def _nearest_int(v) -> int:
    if isinstance(v, Fraction):
        return _floor_half(v)
    return math.floor(v + 0.5)


def _floor_half(v: Fraction) -> int:
    w = v + Fraction(1, 2)
    return w.numerator // w.denominator


def _caps(T) -> list:
    # strict |a_i| < T_i for integers: |a_i| <= ceil(T_i) - 1
    return [max(0, math.ceil(float(t)) - 1) for t in T]


def witness_S(
    mmap: ManifoldMap,
    x,
    params: SBoxParams,
    budget: int = DEFAULT_WITNESS_BUDGET,
):
    """Minimal sup-norm (a_0, a) satisfying all three strict inequalities,
    or None when the capped box holds nothing.

    Shells of increasing sup norm; inside each shell the last m
    coordinates run over their box while the first d are pruned by the
    gradient window |a_i + (J a_m)_i| < K. Ties resolve to the
    lexicographically smallest a.
    """
    d, m, n = mmap.d, mmap.m, mmap.n
    if params.n != n:
        raise PreconditionError("parameter vector length must equal n")
    caps = _caps(params.T)
    k_win = 2 * (math.floor(float(params.K)) + 1) + 1
    cost = 1
    for j in range(m):
        cost *= 2 * caps[d + j] + 1
    for i in range(d):
        cost *= min(2 * caps[i] + 1, k_win)
    if cost > budget:
        raise BudgetExceededError(
            f"witness search box needs about {cost} candidates, budget {budget}"
        )
    exact = mmap.is_exact and all(is_exact_scalar(v) for v in x)
    if exact:
        x = tuple(as_fraction(v) for v in x)
    fx = mmap.eval_f(x)
    jac = mmap.jacobian(x)
    delta, kk = params.delta, params.K
    s_max = max(caps, default=0)
    for s in range(1, s_max + 1):
        found = []
        m_ranges = [range(-min(s, caps[d + j]), min(s, caps[d + j]) + 1) for j in range(m)]
        for a_m in product(*m_ranges):
            g0 = [sum(jac[i][j] * a_m[j] for j in range(m)) for i in range(d)]
            d_ranges = []
            feasible = True
            for i in range(d):
                lo = max(-min(s, caps[i]), math.floor(-kk - float(g0[i])) + 1)
                hi = min(min(s, caps[i]), math.ceil(kk - float(g0[i])) - 1)
                if lo > hi:
                    feasible = False
                    break
                d_ranges.append(range(lo, hi + 1))
            if not feasible:
                continue
            for a_d in product(*d_ranges):
                a = a_d + a_m
                if max(abs(v) for v in a) != s:
                    continue
                grads = [a_d[i] + g0[i] for i in range(d)]
                if not all(abs(g) < kk for g in grads):
                    continue
                val = sum(x[i] * a[i] for i in range(d)) + sum(
                    fx[j] * a[d + j] for j in range(m)
                )
                a0 = _nearest_int(-val)
                if abs(a0 + val) < delta:
                    found.append((a, a0))
        if found:
            a, a0 = min(found)
            return a0, a
    return None


def witness_Sdd(mmap: ManifoldMap, x, delta: float, a, grad_threshold: float) -> bool:
    """Nearest-integer a_0 gives |a_0 + F(x)a^T| < delta with gradient >= G."""
    if all(v == 0 for v in a):
        raise PreconditionError("a must be nonzero")
    val, grad = _form_values(mmap, x, a)
    a0 = _nearest_int(-val)
    return abs(a0 + val) < delta and max(abs(g) for g in grad) >= grad_threshold


def rhs_sharp(params: SBoxParams, d: int, l: int, r: float, vol: float, e_sharp: float = 1.0) -> float:
    """Sharp-bound right side; e_sharp scales both terms jointly."""
    n = params.n
    kk = float(params.K)
    term1 = float(params.delta)
    for i in range(d):
        term1 *= min(kk, float(params.T[i]))
    for j in range(d, n):
        term1 *= float(params.T[j])
    term1 *= vol
    a = float(alpha(n, d, l))
    term2 = (float(params.delta) * min(kk, 1.0 / r) * params.t_product_over_max()) ** a
    return e_sharp * (term1 + term2)


def rhs_plain(params: SBoxParams, d: int, l: int, vol: float, e_plain: float = 1.0) -> float:
    """Plain-bound right side E (delta K T-product/max)^alpha vol."""
    a = float(alpha(params.n, d, l))
    return e_plain * (float(params.delta) * float(params.K) * params.t_product_over_max()) ** a * vol


def measure_S(
    mmap: ManifoldMap,
    ball: Ball,
    params: SBoxParams,
    sampler: str = "grid",
    n_pts: int = 4096,
    seed: int | None = None,
    budget: int = DEFAULT_WITNESS_BUDGET,
    e_sharp: float = 1.0,
    e_plain: float = 1.0,
    l: int | None = None,
    workers: int = 1,
) -> MeasureResult:
    """Sampled measure of the set inside ball, with both reference bounds.

    Grid mode uses cell centres and reports a flip-cell resolution
    half-width; mc mode is seeded (a seed is required) and reports the
    95% binomial half-width. The membership test is vectorized across
    sample points, so the workers knob is accepted for interface parity
    but can never change the result.
    """
    if ball.dim != mmap.d:
        raise PreconditionError("ball dimension disagrees with the map")
    if l is None:
        l = mmap.l_max
    vol = float(ball.volume())
    if sampler == "grid":
        pts_axis = max(2, round(n_pts ** (1.0 / mmap.d)))
        pts = ball.grid(pts_axis)
        cell_vol = vol / (pts_axis**mmap.d)
    elif sampler == "mc":
        if seed is None:
            raise PreconditionError("mc sampler requires a seed")
        rng = np.random.default_rng(seed)
        pts = ball.sample(rng, n_pts)
        cell_vol = 0.0
    else:
        raise PreconditionError(f"unknown sampler {sampler!r}")
    total = len(pts)
    members = _member_flags(mmap, params, budget, pts)
    hits = int(members.sum())
    frac = hits / total if total else 0.0
    if sampler == "grid":
        shape = (pts_axis,) * mmap.d
        cube = members.reshape(shape)
        flips = 0
        for ax in range(mmap.d):
            flips += int(np.abs(np.diff(cube.astype(np.int8), axis=ax)).sum())
        hw = flips * cell_vol
    else:
        hw = 1.96 * math.sqrt(max(frac * (1 - frac), 1e-12) / total) * vol
    est = MeasureEstimate(value=frac * vol, half_width=hw, samples=total)
    return MeasureResult(
        estimate=est,
        fraction=frac,
        rhs_sharp=rhs_sharp(params, mmap.d, l, float(ball.radius), vol, e_sharp),
        rhs_plain=rhs_plain(params, mmap.d, l, vol, e_plain),
        admissible=params.admissible,
        sampler=sampler,
    )


def _member_flags(mmap, params, budget, pts) -> np.ndarray:
    """Membership of each point, vectorized across points.

    Walks the same integer box as witness_S (same caps, same strict
    inequalities) but tests all points per coefficient vector at once, so
    the decision per row agrees exactly with witness_S(...) is not None.
    """
    X = np.asarray(pts, dtype=float)
    d, m = mmap.d, mmap.m
    delta, K = float(params.delta), float(params.K)
    caps = _caps(params.T)
    caps_d, caps_m = caps[:d], caps[d:]
    per_point = 1
    for c in caps_m:
        per_point *= 2 * c + 1
    for c in caps_d:
        per_point *= min(2 * c + 1, 2 * (math.floor(K) + 1) + 1)
    if per_point > budget:
        raise BudgetExceededError(
            f"coefficient box of size {per_point} exceeds budget {budget}"
        )
    F = mmap.eval_f_array(X)  # (P, m)
    J = mmap.jacobian_array(X)  # (P, d, m)
    member = np.zeros(len(X), dtype=bool)
    for a_m in product(*[range(-c, c + 1) for c in caps_m]):
        am = np.array(a_m, dtype=float)
        val_m = F @ am
        g0 = J @ am  # (P, d)
        ranges = []
        for i in range(d):
            lo = max(-caps_d[i], math.floor(-K - float(g0[:, i].max())) + 1)
            hi = min(caps_d[i], math.ceil(K - float(g0[:, i].min())) - 1)
            ranges.append(range(lo, hi + 1))
        zero_m = not any(a_m)
        for a_d in product(*ranges):
            if zero_m and not any(a_d):
                continue
            ad = np.array(a_d, dtype=float)
            ok = np.all(np.abs(ad[None, :] + g0) < K, axis=1)
            if not ok.any():
                continue
            val = val_m + X @ ad
            member |= ok & (np.abs(val - np.round(val)) < delta)
        if member.all():
            break
    return member


# ---------------------------------------------------------------------------
# the one-dimensional cell bound


def bound_S1(k: int, theta: float, delta: float, length: float) -> float:
    """8 k Theta delta |I|."""
    return 8.0 * k * theta * delta * length


def measure_S1_1d(
    F: Poly,
    delta: float,
    theta: float,
    interval,
    k: int,
    grid_n: int = 1_000_000,
) -> MeasureEstimate:
    """Grid measure of {x in I : dist(F(x), Z) < delta, |F'(x)| > 1/(Theta |I|)}.

    The precondition inf_I |F^(k)| > 0 is certified on the same grid
    with a Lipschitz bound on F^(k); failure raises rather than returning
    a silent estimate.
    """
    if theta < 0.5:
        raise PreconditionError(f"Theta must be >= 1/2, got {theta}")
    if k < 2:
        raise PreconditionError(f"k must be >= 2, got {k}")
    if F.nvars != 1:
        raise PreconditionError("F must be a one-variable polynomial")
    lo, hi = float(interval[0]), float(interval[1])
    if not lo < hi:
        raise PreconditionError("interval must be nondegenerate")
    length = hi - lo
    h = length / grid_n
    xs = np.linspace(lo + h / 2, hi - h / 2, grid_n)

    f1vals = F.diff(0).eval_array(xs[:, None])
    steep = np.abs(f1vals) > 1.0 / (theta * length)
    if not np.any(steep):
        # gradient condition empty: the set is empty, no bound needed
        return MeasureEstimate(value=0.0, half_width=0.0, samples=grid_n)

    fk = F
    for _ in range(k):
        fk = fk.diff(0)
    fk1 = fk.diff(0)
    lip = max(
        float(fk1.sup_bound((lo,), (hi,))),
        float((-fk1).sup_bound((lo,), (hi,))),
    )
    fk_vals = np.abs(fk.eval_array(xs[:, None]))
    if not np.all(fk_vals > lip * h / 2):
        raise PreconditionError(
            f"cannot certify inf |F^({k})| > 0 on the grid (margin {lip * h / 2:.3e})"
        )

    fvals = F.eval_array(xs[:, None])
    member = (np.abs(fvals - np.round(fvals)) < delta) & steep
    frac = float(member.mean())
    flips = int(np.abs(np.diff(member.astype(np.int8))).sum())
    return MeasureEstimate(value=frac * length, half_width=flips * h, samples=grid_n)
