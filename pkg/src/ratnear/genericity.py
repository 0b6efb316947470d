"""Generic/special splitting of base points and lower-bound coverage.

Two lattice criteria drive everything here.  A point x is *special* (raw)
when the last minimum of d_eps b_t g_{eps,t} u1(x) Z^(n+1) exceeds phi e^h;
the special set is thickened by balls of radius sqrt(eps) e^(-t/2) into a
cover, and counting is then restricted to the generic complement.  A point
belongs to the good set G(v,t,eps) when the first minimum of
a_{eps,t,v}^(-1) u1(x) Z^(n+1) is at least v; the associated coverage
statement says that balls of radius rho around the projected rational
points of a counting block fill at least half of the base ball.

All verdicts are deterministic: the minima routines operate exactly on the
(dyadic) float entries, so repeated calls agree bit for bit.
"""

from dataclasses import dataclass
import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .errors import BudgetExceededError, PreconditionError
from .manifold import Ball, ManifoldMap
from .counting import InhomShift, DEFAULT_BUDGET, alpha, block_centers, total_centers
from .lattice import (
    SquareMatrix,
    a_eps_t_v,
    b_t_matrix,
    d_eps_matrix,
    delta1,
    delta_last,
    dual,
    g_eps_t,
    phi_h,
    u1_matrix,
)
from .nondivergence import SBoxParams, witness_S

DEFAULT_C_GRID = tuple(2**j for j in range(11))  # dyadic 1 .. 1024


# ---------------------------------------------------------------------------
# raw special/generic verdicts


@dataclass(frozen=True)
class GenericityVerdict:
    x: tuple
    delta_last: float
    threshold: float
    verdict: str  # "generic" | "special_raw"

    def __post_init__(self):
        if self.verdict not in ("generic", "special_raw"):
            raise PreconditionError(f"unknown verdict {self.verdict!r}")

    @property
    def is_special(self) -> bool:
        return self.verdict == "special_raw"


def _expansion_matrix(mmap: ManifoldMap, x, eps: float, t: float) -> SquareMatrix:
    g = d_eps_matrix(mmap.d, mmap.m, eps)
    g = g @ b_t_matrix(mmap.d, mmap.m, t)
    g = g @ g_eps_t(mmap.n, eps, t)
    return g @ u1_matrix(mmap, x)


def classify(mmap: ManifoldMap, x, eps: float, t: float) -> GenericityVerdict:
    """Special iff the last minimum of the expanded lattice exceeds phi e^h."""
    x = tuple(x)
    if not mmap.domain.contains(x):
        raise PreconditionError("x outside the map domain")
    phi, eh = phi_h(mmap.n, mmap.d, eps, t)
    thr = phi * eh
    dl = delta_last(_expansion_matrix(mmap, x, eps, t))
    verdict = "special_raw" if dl > thr else "generic"
    return GenericityVerdict(x=x, delta_last=dl, threshold=thr, verdict=verdict)


def _special_chunk(args):
    mmap, rows, eps, t = args
    return [classify(mmap, tuple(r), eps, t).is_special for r in rows]


def special_flags(
    mmap: ManifoldMap,
    points: np.ndarray,
    eps: float,
    t: float,
    workers: int = 0,
) -> np.ndarray:
    """Vector of is_special verdicts; chunked over processes when workers > 1.

    Chunk boundaries cannot change any verdict (classify is per-point pure),
    so the result is identical for every worker count.
    """
    rows = [tuple(float(v) for v in r) for r in np.atleast_2d(points)]
    if workers and workers > 1:
        chunks = [rows[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_special_chunk, [(mmap, c, eps, t) for c in chunks]))
        flags = [False] * len(rows)
        for i, part in enumerate(parts):
            flags[i::workers] = part
        return np.array(flags, dtype=bool)
    return np.array(_special_chunk((mmap, rows, eps, t)), dtype=bool)


def cover_radius(eps: float, t: float) -> float:
    return math.sqrt(eps) * math.exp(-t / 2.0)


def special_cover(
    mmap: ManifoldMap,
    ball: Ball,
    eps: float,
    t: float,
    grid_n: int,
    workers: int = 0,
) -> list:
    """Balls of radius sqrt(eps)e^(-t/2) around special grid points of ball.

    The grid pitch must not exceed the ball radius, otherwise the union can
    miss special points between grid nodes and the cover guarantee is void.
    """
    r = cover_radius(eps, t)
    widths = [float(h) - float(l) for l, h in zip(ball.lo(), ball.hi())]
    pitch = max(w / grid_n for w in widths)
    if pitch > r * (1.0 + 1e-12):
        raise PreconditionError(
            f"grid pitch {pitch:.3g} coarser than cover radius {r:.3g}"
        )
    pts = ball.grid(grid_n)
    flags = special_flags(mmap, pts, eps, t, workers=workers)
    return [Ball.make(tuple(p), r) for p in pts[flags]]


def special_fraction(
    mmap: ManifoldMap,
    ball: Ball,
    eps: float,
    t: float,
    grid_n: int,
    workers: int = 0,
) -> float:
    """Fraction of grid points of ball classified special_raw."""
    pts = ball.grid(grid_n)
    flags = special_flags(mmap, pts, eps, t, workers=workers)
    return float(flags.mean())


def special_decay_slope(n: int, d: int, l: int, rho: float) -> float:
    """Predicted d/dt of log |special part| under eps = eps0 e^(-rho t).

    The measure bound is (eps^(n-1/2) e^(3t/2))^(-alpha); substituting the
    eps rule gives slope -alpha (3/2 - (n - 1/2) rho), negative on the
    admissible range rho < eta.
    """
    a = float(alpha(n, d, l))
    return -a * (1.5 - (n - 0.5) * rho)


# ---------------------------------------------------------------------------
# inclusion of the special set into a counting box


def check_inclusion(
    mmap: ManifoldMap,
    x_special,
    eps: float,
    t: float,
    c_grid=DEFAULT_C_GRID,
    budget: int = None,
):
    """Least c in c_grid whose box (ce^-t, c eps^-1/2 e^-t/2, c eps^-1 ...)
    admits a witness at x_special; None when the whole grid fails.

    A None from the largest c is an inclusion violation and should fail the
    calling test, not raise here.
    """
    x = tuple(x_special)
    for c in sorted(c_grid):
        delta = c * math.exp(-t)
        if delta > 1.0:
            continue  # box degenerate for this c; cannot be expressed
        params = SBoxParams(
            delta=delta,
            K=c * eps ** (-0.5) * math.exp(-t / 2.0),
            T=(c / eps,) * mmap.n,
        )
        kwargs = {} if budget is None else {"budget": budget}
        if witness_S(mmap, x, params, **kwargs) is not None:
            return c
    return None


# ---------------------------------------------------------------------------
# generic counting


@dataclass(frozen=True)
class GenericCount:
    """Witness count over the generic part, with per-tile statistics.

    Tiles partition the base ball at pitch sqrt(eps e^-t); tile_max is the
    largest generic-witness count in a single tile and tile_bound the
    uncalibrated reference value eps^n e^t (eps e^-t)^(-d/2).
    """

    count: int
    total: int
    tile_max: int
    tile_bound: float

    def __int__(self) -> int:
        return self.count


def _min_sup_dist(pts: np.ndarray, centers: np.ndarray, budget: int) -> np.ndarray:
    """Per-point sup-norm distance to the nearest center (inf when none)."""
    if len(centers) == 0:
        return np.full(len(pts), np.inf)
    if pts.shape[1] == 1:
        c = np.sort(centers[:, 0])
        idx = np.searchsorted(c, pts[:, 0])
        left = np.abs(pts[:, 0] - c[np.clip(idx - 1, 0, len(c) - 1)])
        right = np.abs(pts[:, 0] - c[np.clip(idx, 0, len(c) - 1)])
        return np.minimum(left, right)
    if len(pts) * len(centers) > budget:
        raise BudgetExceededError(
            f"{len(pts)} x {len(centers)} distance pairs exceed budget {budget}"
        )
    diff = np.abs(pts[:, None, :] - centers[None, :, :]).max(axis=-1)
    return diff.min(axis=-1)


def count_generic(
    mmap: ManifoldMap,
    shift: InhomShift,
    ball: Ball,
    eps: float,
    t: float,
    cover: list = None,
    grid_n: int = None,
    workers: int = 0,
    budget: int = DEFAULT_BUDGET,
) -> GenericCount:
    """Witnesses of the total count whose projected point avoids the cover.

    When no cover is supplied one is built on a grid of pitch at most half
    the cover radius (so that genuinely special points cannot hide between
    nodes).  Only generic witnesses feed the per-tile maxima.
    """
    if cover is None:
        r = cover_radius(eps, t)
        widths = [float(h) - float(l) for l, h in zip(ball.lo(), ball.hi())]
        if grid_n is None:
            grid_n = max(2, math.ceil(2.0 * max(widths) / r))
        cover = special_cover(mmap, ball, eps, t, grid_n, workers=workers)
    pts, mult = total_centers(mmap, shift, ball, eps, t, budget=budget)
    total = int(mult.sum())
    if cover:
        centers = np.array([[float(v) for v in b.center] for b in cover])
        radius = max(float(b.radius) for b in cover)
        generic = _min_sup_dist(pts, centers, budget) > radius
    else:
        generic = np.ones(len(pts), dtype=bool)
    count = int(mult[generic].sum())

    tile_w = math.sqrt(eps * math.exp(-t))
    lo = np.array([float(v) for v in ball.lo()])
    tile_bound = eps**mmap.n * math.exp(t) * (eps * math.exp(-t)) ** (-mmap.d / 2.0)
    tile_max = 0
    if count:
        idx = np.floor((pts[generic] - lo) / tile_w).astype(np.int64)
        _, inv = np.unique(idx, axis=0, return_inverse=True)
        sums = np.bincount(inv, weights=mult[generic].astype(float))
        tile_max = int(sums.max())
    return GenericCount(count=count, total=total, tile_max=tile_max, tile_bound=tile_bound)


# ---------------------------------------------------------------------------
# lower-bound cells and coverage


@dataclass(frozen=True)
class LowerBoundCell:
    x: tuple
    delta1: float
    in_G: bool
    rho: float


def rho_of_v(mmap: ManifoldMap, eps: float, t: float, v: float) -> float:
    """Ball radius (1 / 2v^(n+1)) (eps^m e^((d+1)t))^(-1/d)."""
    base = (eps**mmap.m * math.exp((mmap.d + 1) * t)) ** (-1.0 / mmap.d)
    return base / (2.0 * v ** (mmap.n + 1))


def calibrated_rho(mmap: ManifoldMap, eps: float, t: float, c0: float) -> float:
    """Ball radius C0 (eps^m e^((d+1)t))^(-1/d) with a frozen constant."""
    return c0 * (eps**mmap.m * math.exp((mmap.d + 1) * t)) ** (-1.0 / mmap.d)


def classify_G(
    mmap: ManifoldMap, x, v: float, t: float, eps: float
) -> LowerBoundCell:
    """Membership in G(v,t,eps): first minimum of a^(-1) u1(x) at least v."""
    if not 0.0 < v <= 1.0:
        raise PreconditionError(f"v must lie in (0,1], got {v!r}")
    x = tuple(x)
    a = a_eps_t_v(mmap.d, mmap.m, eps, t, v)
    d1 = delta1(a.inverse() @ u1_matrix(mmap, x))
    return LowerBoundCell(x=x, delta1=d1, in_G=d1 >= v, rho=rho_of_v(mmap, eps, t, v))


def dual_route_delta1(mmap: ManifoldMap, x, v: float, t: float, eps: float) -> float:
    """First minimum of the dual-translated lattice (a^(-1))* u1*(x) Z^(n+1).

    When x falls outside G(v,t,eps) this value is small, of order v^(1/n);
    the transference step of the lower bound rests on exactly that decay.
    """
    a = a_eps_t_v(mmap.d, mmap.m, eps, t, v)
    return delta1(dual(a.inverse() @ u1_matrix(mmap, tuple(x))))


def good_fraction(
    mmap: ManifoldMap,
    ball: Ball,
    v: float,
    t: float,
    eps: float,
    grid_n: int,
) -> float:
    """Fraction of grid points of ball inside G(v,t,eps)."""
    pts = ball.grid(grid_n)
    hits = sum(1 for p in pts if classify_G(mmap, tuple(p), v, t, eps).in_G)
    return hits / len(pts)


def _union_fraction_1d(centers: np.ndarray, rho: float, lo: float, hi: float) -> float:
    # exact Lebesgue measure of the clipped interval union (grid-free)
    c = np.sort(centers)
    starts = np.clip(c - rho, lo, hi)
    ends = np.clip(c + rho, lo, hi)
    keep = ends > starts
    starts, ends = starts[keep], ends[keep]
    if len(starts) == 0:
        return 0.0
    cum = np.maximum.accumulate(ends)
    cut = np.flatnonzero(starts[1:] > cum[:-1])
    gs = starts[np.concatenate(([0], cut + 1))]
    ge = cum[np.concatenate((cut, [len(c) - 1]))]
    return float((ge - gs).sum() / (hi - lo))


def delta_cover_fraction(
    mmap: ManifoldMap,
    shift: InhomShift,
    ball: Ball,
    eps: float,
    t: float,
    rho: float,
    grid_n: int = None,
    budget: int = DEFAULT_BUDGET,
) -> float:
    """Fraction of ball covered by rho-balls at the block witness points.

    Centers are the projected points (p_d + theta_d)/q of the counting
    block at (eps, t).  For d = 1 the default is the exact measure of the
    interval union (the limit every fine grid approximates); pass grid_n to
    force the grid estimate.  For d >= 2 a grid is required.
    """
    if rho <= 0:
        raise PreconditionError(f"rho must be positive, got {rho!r}")
    centers = block_centers(mmap, shift, ball, eps, t, budget=budget)
    if len(centers) == 0:
        return 0.0
    d = mmap.d
    lo = np.array([float(v) for v in ball.lo()])
    hi = np.array([float(v) for v in ball.hi()])
    if d == 1 and grid_n is None:
        return _union_fraction_1d(centers[:, 0], rho, lo[0], hi[0])
    if grid_n is None:
        grid_n = 256
    h = (hi - lo) / grid_n
    if d == 1:
        xs = lo[0] + (np.arange(grid_n) + 0.5) * h[0]
        dist = _min_sup_dist(xs[:, None], centers, budget=max(budget, grid_n))
        return float((dist <= rho).mean())
    if grid_n**d > budget:
        raise BudgetExceededError(f"{grid_n}^{d} grid cells exceed budget {budget}")
    mask = np.zeros((grid_n,) * d, dtype=bool)
    marked = 0
    for cpt in centers:
        i0 = np.ceil((cpt - rho - lo) / h - 0.5).astype(np.int64)
        i1 = np.floor((cpt + rho - lo) / h - 0.5).astype(np.int64)
        i0 = np.clip(i0, 0, grid_n - 1)
        i1 = np.clip(i1, -1, grid_n - 1)
        if np.any(i1 < i0):
            continue
        marked += int(np.prod(i1 - i0 + 1))
        if marked > budget:
            raise BudgetExceededError(f"cover raster exceeded budget {budget}")
        mask[tuple(slice(a, b + 1) for a, b in zip(i0, i1))] = True
    return float(mask.mean())
