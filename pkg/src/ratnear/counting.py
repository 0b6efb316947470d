"""Counting rational points near a Monge graph.

Three counts, all over triples (q, p_d, p_m) with the shift theta split
as (theta_d, theta_m):

  * block count: q in [ceil(e^(t-1)), floor(e^t)], (p_d + theta_d)/q in B,
    and every integer p_m with |q f((p_d+theta_d)/q) - theta_m - p_m| <= eps
    componentwise (several p_m per (q, p_d) once eps >= 1/2);
  * star count: pairs (q, p) whose full point (p + theta)/q lies within
    eps e^(-t) of the graph, certified through the clamped projection
    witness; a rigorous mode brackets the count with a Lipschitz bound;
  * total count: the star count with q from 1, evaluated as a sum over a
    half-open dyadic partition of the q-range so blocks never overlap.

All inequalities are closed. When the map, shift, ball and eps are exact
rationals the enumeration runs in exact arithmetic; otherwise it runs
vectorised in floats, one q at a time.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from fractions import Fraction
from itertools import product

import numpy as np

from .errors import BudgetExceededError, InvalidDimensionError, PreconditionError
from .manifold import Ball, ManifoldMap
from .poly import as_fraction, is_exact_scalar

DEFAULT_BUDGET = 10_000_000


def eta(n: int, d: int) -> Fraction:
    """Admissible decay exponent for eps(t): 3/(2n-1) on curves, 1/(n-1) above."""
    if not 1 <= d < n:
        raise InvalidDimensionError(f"need 1 <= d < n, got d={d}, n={n}")
    return Fraction(3, 2 * n - 1) if d == 1 else Fraction(1, n - 1)


def alpha(n: int, d: int, l: int) -> Fraction:
    """Nondivergence exponent 1/(d(2l-1)(n+1))."""
    if l < 1:
        raise PreconditionError(f"nondegeneracy order l must be >= 1, got {l}")
    return Fraction(1, d * (2 * l - 1) * (n + 1))


@dataclass(frozen=True)
class InhomShift:
    """Shift theta in R^n, split as (theta_d, theta_m) after d coordinates."""

    theta: tuple
    d: int

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(self.theta))
        if not 0 <= self.d <= len(self.theta):
            raise InvalidDimensionError("split index d out of range")

    @staticmethod
    def zero(n: int, d: int) -> "InhomShift":
        return InhomShift((0,) * n, d)

    @property
    def n(self) -> int:
        return len(self.theta)

    @property
    def theta_d(self) -> tuple:
        return self.theta[: self.d]

    @property
    def theta_m(self) -> tuple:
        return self.theta[self.d :]

    @property
    def is_exact(self) -> bool:
        return all(is_exact_scalar(v) for v in self.theta)


@dataclass(frozen=True)
class RationalWitness:
    """A triple (q, p_d, p_m); q >= 1."""

    q: int
    p_d: tuple
    p_m: tuple

    def __post_init__(self):
        if self.q < 1:
            raise PreconditionError(f"witness needs q >= 1, got {self.q}")
        object.__setattr__(self, "p_d", tuple(int(v) for v in self.p_d))
        object.__setattr__(self, "p_m", tuple(int(v) for v in self.p_m))

    @property
    def p(self) -> tuple:
        return self.p_d + self.p_m

    def point(self, shift: InhomShift) -> tuple:
        """Projected parameter point (p_d + theta_d)/q."""
        return tuple(
            (p + th) / self.q for p, th in zip(self.p_d, shift.theta_d)
        )


@dataclass(frozen=True)
class CountReport:
    t: float
    eps: float
    count: int
    pred_main: float
    pred_error_term: float
    ratio: float
    mode: str
    elapsed_s: float = 0.0
    range_warning: bool = False


@dataclass(frozen=True)
class EpsRule:
    """eps(t) = eps0 exp(-rho t); rho = 0 keeps eps fixed at eps0."""

    rho: float
    eps0: float = 1.0

    def __post_init__(self):
        if not self.eps0 > 0:
            raise PreconditionError("eps0 must be positive")
        if self.rho < 0:
            raise PreconditionError("rho must be nonnegative")

    def eps_at(self, t: float) -> float:
        return self.eps0 * math.exp(-self.rho * t)

    def admissible(self, n: int, d: int, slack: float = 1.0) -> bool:
        """Inside the range where the main term dominates: rho < slack * eta."""
        return self.rho < slack * float(eta(n, d))


def q_bounds(t: float) -> tuple:
    """Dyadic q-block [ceil(e^(t-1)), floor(e^t)]."""
    if not t > 0:
        raise PreconditionError(f"t must be positive, got {t}")
    return max(1, math.ceil(math.exp(t - 1))), math.floor(math.exp(t))


def _ceil_frac(x: Fraction) -> int:
    return -((-x.numerator) // x.denominator)


def _floor_frac(x: Fraction) -> int:
    return x.numerator // x.denominator


def _grid_cost(widths, q0: int, q1: int) -> int:
    """Number of f-evaluations for q in [q0, q1]: sum of p_d box sizes."""
    total = 0
    for q in range(q0, q1 + 1):
        size = 1
        for w in widths:
            size *= int(q * w) + 1
        total += size
    return total


def _check_budget(widths, q0: int, q1: int, budget: int) -> None:
    cost = _grid_cost(widths, q0, q1)
    if cost > budget:
        raise BudgetExceededError(
            f"enumeration needs about {cost} evaluations, budget is {budget}"
        )


def _exact_inputs(mmap: ManifoldMap, shift: InhomShift, ball: Ball, eps) -> bool:
    return (
        mmap.is_exact
        and shift.is_exact
        and ball.is_exact
        and is_exact_scalar(eps)
    )


def _p_box_exact(q, lo, hi, theta_d):
    ranges = []
    for lo_i, hi_i, th_i in zip(lo, hi, theta_d):
        a = _ceil_frac(q * as_fraction(lo_i) - as_fraction(th_i))
        b = _floor_frac(q * as_fraction(hi_i) - as_fraction(th_i))
        if a > b:
            return None
        ranges.append(range(a, b + 1))
    return ranges


def _enumerate_exact(mmap, shift, ball, eps, q0, q1, collect, witnesses):
    eps = as_fraction(eps)
    lo, hi = ball.lo(), ball.hi()
    th_d = [as_fraction(v) for v in shift.theta_d]
    th_m = [as_fraction(v) for v in shift.theta_m]
    total = 0
    for q in range(q0, q1 + 1):
        ranges = _p_box_exact(q, lo, hi, shift.theta_d)
        if ranges is None:
            continue
        for p_d in product(*ranges):
            x = tuple((p + th) / q for p, th in zip(p_d, th_d))
            fx = mmap.eval_f(x)
            m_ranges = []
            hit = 1
            for fj, th in zip(fx, th_m):
                y = q * as_fraction(fj) - th
                a = _ceil_frac(y - eps)
                b = _floor_frac(y + eps)
                cnt = b - a + 1
                if cnt <= 0:
                    hit = 0
                    break
                hit *= cnt
                m_ranges.append(range(a, b + 1))
            if hit:
                total += hit
                if collect:
                    for p_m in product(*m_ranges):
                        witnesses.append(RationalWitness(q, p_d, p_m))
    return total


def _enumerate_float(mmap, shift, ball, eps, q0, q1, collect, witnesses):
    d, m = mmap.d, mmap.m
    eps = float(eps)
    lo = np.array([float(v) for v in ball.lo()])
    hi = np.array([float(v) for v in ball.hi()])
    th_d = np.array([float(v) for v in shift.theta_d])
    th_m = np.array([float(v) for v in shift.theta_m])
    total = 0
    for q in range(q0, q1 + 1):
        a = np.ceil(q * lo - th_d)
        b = np.floor(q * hi - th_d)
        if np.any(a > b):
            continue
        axes = [np.arange(a[i], b[i] + 1) for i in range(d)]
        if d == 1:
            grid = axes[0][:, None]
        else:
            mesh = np.meshgrid(*axes, indexing="ij")
            grid = np.stack([g.ravel() for g in mesh], axis=-1)
        x = (grid + th_d) / q
        fx = mmap.eval_f_array(x)
        y = q * fx - th_m
        los = np.ceil(y - eps)
        his = np.floor(y + eps)
        counts = np.maximum(his - los + 1, 0.0).prod(axis=-1)
        total += int(counts.sum())
        if collect:
            for idx in np.nonzero(counts > 0)[0]:
                p_d = tuple(int(v) for v in grid[idx])
                m_ranges = [
                    range(int(los[idx][j]), int(his[idx][j]) + 1) for j in range(m)
                ]
                for p_m in product(*m_ranges):
                    witnesses.append(RationalWitness(q, p_d, p_m))
    return total


def _run_block(mmap, shift, ball, eps, q0, q1, collect, budget, mode):
    if q1 < q0:
        return 0, []
    _check_budget([h - l for l, h in zip(ball.lo(), ball.hi())], q0, q1, budget)
    witnesses: list = []
    if mode == "auto":
        mode = "exact" if _exact_inputs(mmap, shift, ball, eps) else "float"
    if mode == "exact":
        if not _exact_inputs(mmap, shift, ball, eps):
            raise PreconditionError("exact mode requires exact map, shift, ball, eps")
        total = _enumerate_exact(mmap, shift, ball, eps, q0, q1, collect, witnesses)
    else:
        total = _enumerate_float(mmap, shift, ball, eps, q0, q1, collect, witnesses)
    return total, witnesses


def enumerate_N(
    mmap: ManifoldMap,
    shift: InhomShift,
    ball: Ball,
    eps,
    t: float,
    budget: int = DEFAULT_BUDGET,
    mode: str = "auto",
) -> list:
    """All witnesses of the block count, sorted by (q, p_d, p_m)."""
    _validate_inputs(mmap, shift, ball, eps)
    q0, q1 = q_bounds(t)
    _, witnesses = _run_block(mmap, shift, ball, eps, q0, q1, True, budget, mode)
    witnesses.sort(key=lambda w: (w.q, w.p_d, w.p_m))
    return witnesses


def count_N(
    mmap: ManifoldMap,
    shift: InhomShift,
    ball: Ball,
    eps,
    t: float,
    budget: int = DEFAULT_BUDGET,
    mode: str = "auto",
) -> int:
    """Block count only; avoids materialising witnesses."""
    _validate_inputs(mmap, shift, ball, eps)
    q0, q1 = q_bounds(t)
    total, _ = _run_block(mmap, shift, ball, eps, q0, q1, False, budget, mode)
    return total


def _validate_inputs(mmap, shift, ball, eps) -> None:
    if shift.n != mmap.n or shift.d != mmap.d:
        raise InvalidDimensionError("shift dimensions disagree with the map")
    if ball.dim != mmap.d:
        raise InvalidDimensionError("ball dimension disagrees with the map")
    if not float(eps) > 0:
        raise PreconditionError(f"eps must be positive, got {eps}")


def block_centers(
    mmap: ManifoldMap,
    shift: InhomShift,
    ball: Ball,
    eps,
    t: float,
    budget: int = DEFAULT_BUDGET,
) -> np.ndarray:
    """Projected parameter points (p_d + theta_d)/q of all block-count hits.

    Returns an array of shape (W, d); multiplicities in p_m are ignored.
    Array-based so that large admissible ranges stay within memory.
    """
    _validate_inputs(mmap, shift, ball, eps)
    q0, q1 = q_bounds(t)
    _check_budget([h - l for l, h in zip(ball.lo(), ball.hi())], q0, q1, budget)
    d = mmap.d
    eps = float(eps)
    lo = np.array([float(v) for v in ball.lo()])
    hi = np.array([float(v) for v in ball.hi()])
    th_d = np.array([float(v) for v in shift.theta_d])
    th_m = np.array([float(v) for v in shift.theta_m])
    out = []
    for q in range(q0, q1 + 1):
        a = np.ceil(q * lo - th_d)
        b = np.floor(q * hi - th_d)
        if np.any(a > b):
            continue
        axes = [np.arange(a[i], b[i] + 1) for i in range(d)]
        if d == 1:
            grid = axes[0][:, None]
        else:
            mesh = np.meshgrid(*axes, indexing="ij")
            grid = np.stack([g.ravel() for g in mesh], axis=-1)
        x = (grid + th_d) / q
        y = q * mmap.eval_f_array(x) - th_m
        counts = np.maximum(np.floor(y + eps) - np.ceil(y - eps) + 1, 0.0).prod(axis=-1)
        mask = counts > 0
        if np.any(mask):
            out.append(x[mask])
    if not out:
        return np.empty((0, d))
    return np.concatenate(out, axis=0)


# ---------------------------------------------------------------------------
# star and total counts (threshold eps e^(-t) on the full graph distance)


def _star_block(mmap, shift, delta, eps, thr, q0, q1, mode, budget):
    """Count pairs (q, p) for q in [q0, q1] with graph distance below thr.

    Witness route: u = clamp of the projected point into delta certifies
    the infimum from above. Rigorous route also keeps candidates whose
    Lipschitz lower bound cannot rule them out, giving [lo, hi].
    """
    d, m = mmap.d, mmap.m
    lo = np.array([float(v) for v in delta.lo()])
    hi = np.array([float(v) for v in delta.hi()])
    th_d = np.array([float(v) for v in shift.theta_d])
    th_m = np.array([float(v) for v in shift.theta_m])
    lip = d * float(mmap.derivative_bound())  # sup-norm Lipschitz constant of f
    widths = [(h - l) + 2 * thr for l, h in zip(lo, hi)]
    _check_budget(widths, q0, q1, budget)
    n_lo = 0
    n_hi = 0
    for q in range(q0, q1 + 1):
        a = np.ceil(q * (lo - thr) - th_d)
        b = np.floor(q * (hi + thr) - th_d)
        if np.any(a > b):
            continue
        axes = [np.arange(a[i], b[i] + 1) for i in range(d)]
        if d == 1:
            grid = axes[0][:, None]
        else:
            mesh = np.meshgrid(*axes, indexing="ij")
            grid = np.stack([g.ravel() for g in mesh], axis=-1)
        y_d = (grid + th_d) / q
        u = np.clip(y_d, lo, hi)
        adist = np.abs(y_d - u).max(axis=-1)  # distance of y_d to delta
        fu = mmap.eval_f_array(u)
        keep = adist <= thr
        if not np.any(keep):
            continue
        fu_k = fu[keep]
        y_c = q * fu_k - th_m
        cnt_lo = np.maximum(
            np.floor(y_c + q * thr) - np.ceil(y_c - q * thr) + 1, 0.0
        ).prod(axis=-1)
        n_lo += int(cnt_lo.sum())
        if mode == "rigorous":
            pad = q * (thr * (1.0 + lip) + lip * adist[keep])[:, None]
            cnt_hi = np.maximum(
                np.floor(y_c + pad) - np.ceil(y_c - pad) + 1, 0.0
            ).prod(axis=-1)
            n_hi += int(cnt_hi.sum())
    return (n_lo, n_hi) if mode == "rigorous" else (n_lo, n_lo)


def count_N_star(
    mmap: ManifoldMap,
    shift: InhomShift,
    delta: Ball,
    eps,
    t: float,
    mode: str = "witness",
    budget: int = DEFAULT_BUDGET,
):
    """Pairs (q, p), q in the dyadic block, within eps e^(-t) of the graph."""
    _validate_inputs(mmap, shift, delta, eps)
    if mode not in ("witness", "rigorous"):
        raise PreconditionError(f"unknown mode {mode!r}")
    q0, q1 = q_bounds(t)
    thr = float(eps) * math.exp(-t)
    n_lo, n_hi = _star_block(mmap, shift, delta, eps, thr, q0, q1, mode, budget)
    return (n_lo, n_hi) if mode == "rigorous" else n_lo


def dyadic_partition(t: float) -> list:
    """Half-open q-blocks (floor(e^(t-j-1)), floor(e^(t-j))] covering 1..floor(e^t)."""
    blocks = []
    j = 0
    while True:
        q_hi = math.floor(math.exp(t - j))
        if q_hi < 1:
            break
        q_lo = math.floor(math.exp(t - j - 1)) + 1
        blocks.append((max(1, q_lo), q_hi))
        if q_lo <= 1:
            break
        j += 1
    return blocks


def count_N_total(
    mmap: ManifoldMap,
    shift: InhomShift,
    delta: Ball,
    eps,
    t: float,
    mode: str = "witness",
    budget: int = DEFAULT_BUDGET,
):
    """Star count with q from 1, summed over the half-open dyadic partition."""
    _validate_inputs(mmap, shift, delta, eps)
    if mode not in ("witness", "rigorous"):
        raise PreconditionError(f"unknown mode {mode!r}")
    thr = float(eps) * math.exp(-t)
    n_lo = 0
    n_hi = 0
    for q0, q1 in dyadic_partition(t):
        lo, hi = _star_block(mmap, shift, delta, eps, thr, q0, q1, mode, budget)
        n_lo += lo
        n_hi += hi
    return (n_lo, n_hi) if mode == "rigorous" else n_lo


def total_centers(
    mmap: ManifoldMap,
    shift: InhomShift,
    delta: Ball,
    eps,
    t: float,
    budget: int = DEFAULT_BUDGET,
):
    """Witness-mode hits behind count_N_total, as (points, multiplicities).

    points[i] is the clamped projection of (p_d + theta_d)/q into delta and
    multiplicities[i] the number of p_m choices for that (q, p_d), so that
    multiplicities.sum() == count_N_total(..., mode="witness").
    """
    _validate_inputs(mmap, shift, delta, eps)
    d = mmap.d
    thr = float(eps) * math.exp(-t)
    lo = np.array([float(v) for v in delta.lo()])
    hi = np.array([float(v) for v in delta.hi()])
    th_d = np.array([float(v) for v in shift.theta_d])
    th_m = np.array([float(v) for v in shift.theta_m])
    pts = []
    mults = []
    for q0, q1 in dyadic_partition(t):
        widths = [(h - l) + 2 * thr for l, h in zip(lo, hi)]
        _check_budget(widths, q0, q1, budget)
        for q in range(q0, q1 + 1):
            a = np.ceil(q * (lo - thr) - th_d)
            b = np.floor(q * (hi + thr) - th_d)
            if np.any(a > b):
                continue
            axes = [np.arange(a[i], b[i] + 1) for i in range(d)]
            if d == 1:
                grid = axes[0][:, None]
            else:
                mesh = np.meshgrid(*axes, indexing="ij")
                grid = np.stack([g.ravel() for g in mesh], axis=-1)
            y_d = (grid + th_d) / q
            u = np.clip(y_d, lo, hi)
            adist = np.abs(y_d - u).max(axis=-1)
            keep = adist <= thr
            if not np.any(keep):
                continue
            u_k = u[keep]
            y_c = q * mmap.eval_f_array(u_k) - th_m
            cnt = np.maximum(
                np.floor(y_c + q * thr) - np.ceil(y_c - q * thr) + 1, 0.0
            ).prod(axis=-1)
            hit = cnt > 0
            if np.any(hit):
                pts.append(u_k[hit])
                mults.append(cnt[hit].astype(np.int64))
    if not pts:
        return np.empty((0, d)), np.empty((0,), dtype=np.int64)
    return np.concatenate(pts, axis=0), np.concatenate(mults)


# ---------------------------------------------------------------------------
# predictions and sweeps


def predicted_main(mmap: ManifoldMap, ball: Ball, eps, t: float) -> float:
    """Leading term eps^m e^((d+1)t) vol(B)."""
    return float(eps) ** mmap.m * math.exp((mmap.d + 1) * t) * float(ball.volume())


def predicted_error(mmap: ManifoldMap, eps, t: float, l: int | None = None) -> float:
    """Error term e^((d+1)t) (eps^(n-1/2) e^(3t/2))^(-alpha)."""
    n, d = mmap.n, mmap.d
    if l is None:
        l = mmap.l_max
    a = float(alpha(n, d, l))
    return math.exp((d + 1) * t) * (float(eps) ** (n - 0.5) * math.exp(1.5 * t)) ** (-a)


def fit_slope(xs, ys) -> tuple:
    """Least-squares slope and intercept of ys against xs."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) < 2:
        raise PreconditionError("slope fit needs at least two points")
    slope, intercept = np.polyfit(xs, ys, 1)
    return float(slope), float(intercept)


@dataclass(frozen=True)
class SweepResult:
    reports: tuple
    slope: float
    intercept: float
    range_warning: bool

    def ratios(self) -> list:
        return [r.ratio for r in self.reports]


def scaling_sweep(
    mmap: ManifoldMap,
    shift: InhomShift,
    ball: Ball,
    t_list,
    eps_rule: EpsRule,
    budget: int = DEFAULT_BUDGET,
    mode: str = "auto",
    slack: float = 1.0,
) -> SweepResult:
    """Block counts along t with eps from the rule, plus a log-slope fit.

    A rule outside the admissible decay range only sets a warning flag;
    the sweep still runs.
    """
    warn = not eps_rule.admissible(mmap.n, mmap.d, slack)
    reports = []
    for t in t_list:
        eps = eps_rule.eps_at(t)
        t0 = time.perf_counter()
        cnt = count_N(mmap, shift, ball, eps, t, budget=budget, mode=mode)
        elapsed = time.perf_counter() - t0
        pm = predicted_main(mmap, ball, eps, t)
        pe = predicted_error(mmap, eps, t)
        ratio = cnt / pm if pm > 0 else math.inf
        reports.append(
            CountReport(
                t=float(t),
                eps=float(eps),
                count=cnt,
                pred_main=pm,
                pred_error_term=pe,
                ratio=ratio,
                mode=mode,
                elapsed_s=elapsed,
                range_warning=warn,
            )
        )
    logs = [(r.t, math.log(r.count)) for r in reports if r.count > 0]
    if len(logs) >= 2:
        slope, intercept = fit_slope([x for x, _ in logs], [y for _, y in logs])
    else:
        slope, intercept = math.nan, math.nan
    return SweepResult(tuple(reports), slope, intercept, warn)
