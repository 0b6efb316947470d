"""Approximability traces, Monte-Carlo dichotomy runs, exponent estimates.

The basic signal is m_q = dist(q F(x) - theta, Z^n) for q = 1..Q_max: x is
(psi, theta)-approximable when m_q <= psi(q) infinitely often.  At desk
scale "infinitely often" becomes "in late dyadic blocks e^(t-1) <= q < e^t"
and the a.e. dichotomy becomes sample fractions, so everything here reduces
to computing m_q honestly and aggregating.

Rational x and theta get exact arithmetic (incremental fractional parts, so
denominators never grow).  Float inputs carry an uncertainty of q * 1e-16
per coordinate; threshold comparisons inside that band are flagged
ambiguous and never counted as hits.
"""

from dataclasses import dataclass, field
import math
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction

import numpy as np

from .errors import BudgetExceededError, PreconditionError
from .manifold import ManifoldMap
from .counting import InhomShift
from .poly import as_fraction, is_exact_scalar

DEFAULT_Q_BUDGET = 1_000_000
FLOAT_ULP = 1e-16  # per-unit rounding scale for the uncertainty model


# ---------------------------------------------------------------------------
# approximating functions


@dataclass(frozen=True)
class ApproxFunction:
    """psi(q): either a power law q^(-tau) or a right-constant step table."""

    kind: str
    tau: float = None
    table: tuple = ()

    def __post_init__(self):
        if self.kind == "power":
            if self.tau is None or not float(self.tau) > 0:
                raise PreconditionError("power law needs tau > 0")
        elif self.kind == "table":
            object.__setattr__(self, "table", tuple((float(q), float(v)) for q, v in self.table))
            if not self.table:
                raise PreconditionError("table must be nonempty")
            qs = [q for q, _ in self.table]
            vs = [v for _, v in self.table]
            if sorted(qs) != qs or len(set(qs)) != len(qs):
                raise PreconditionError("table q values must be strictly increasing")
            if any(b > a for a, b in zip(vs, vs[1:])):
                raise PreconditionError("table values must be non-increasing")
            if not all(0.0 < v < 1.0 for v in vs):
                raise PreconditionError("table values must lie in (0,1)")
        else:
            raise PreconditionError(f"unknown kind {self.kind!r}")

    def values(self, qs: np.ndarray) -> np.ndarray:
        qs = np.asarray(qs, dtype=float)
        if self.kind == "power":
            return qs ** (-float(self.tau))
        knots = np.array([q for q, _ in self.table])
        vals = np.array([v for _, v in self.table])
        idx = np.clip(np.searchsorted(knots, qs, side="right") - 1, 0, len(vals) - 1)
        return vals[idx]

    def __call__(self, q) -> float:
        return float(self.values(np.array([q]))[0])

    def check_range(self, q_lo: int, q_hi: int) -> None:
        """Non-increasing with values in (0,1) over [q_lo, q_hi], heading to 0."""
        a, b = self(q_lo), self(q_hi)
        if not (0.0 < b <= a < 1.0):
            raise PreconditionError(
                f"psi must decrease within (0,1) on [{q_lo},{q_hi}], got {a}..{b}"
            )

    def descriptor(self) -> str:
        if self.kind == "power":
            return f"power:{float(self.tau):.17g}"
        return "table:" + ";".join(f"{q:.17g},{v:.17g}" for q, v in self.table)


# ---------------------------------------------------------------------------
# traces


def block_edges(q_max: int):
    """Ranges [ceil(e^(t-1)), floor(e^t)] for t = 1,2,..., clipped at q_max.

    The final block is kept even when q_max cuts it short; whether it is
    full can be read off from hi == floor(e^t).
    """
    edges = []
    t = 1
    while True:
        lo = max(1, math.ceil(math.exp(t - 1)))
        if lo > q_max:
            break
        hi = min(q_max, math.ceil(math.exp(t)) - 1)  # e^t is never an integer
        edges.append((t, lo, hi))
        t += 1
    return edges


@dataclass(frozen=True)
class ApproxTrace:
    """m_q for q = 1..Q_max at a fixed x, plus per-block minima."""

    x: tuple
    q: np.ndarray
    m: np.ndarray
    uncertainty: np.ndarray  # zero in exact mode
    blocks: tuple  # (t, q_lo, q_hi, q_best, m_best)
    exact: bool

    @property
    def q_max(self) -> int:
        return int(self.q[-1])

    def hit_mask(self, psi: ApproxFunction) -> np.ndarray:
        """Strict hits m_q <= psi(q), with the ambiguous band excluded."""
        vals = psi.values(self.q)
        return self.m <= vals - self.uncertainty

    def ambiguous_mask(self, psi: ApproxFunction) -> np.ndarray:
        vals = psi.values(self.q)
        return np.abs(self.m - vals) <= self.uncertainty

    def best_in_window(self, q_lo: int, q_hi: int):
        """(q, m_q) minimizing m over q_lo <= q <= q_hi."""
        sel = (self.q >= q_lo) & (self.q <= q_hi)
        if not np.any(sel):
            raise PreconditionError(f"window [{q_lo},{q_hi}] has no trace entries")
        sub_q, sub_m = self.q[sel], self.m[sel]
        i = int(np.argmin(sub_m))
        return int(sub_q[i]), float(sub_m[i])


def _exact_m_values(mmap: ManifoldMap, shift: InhomShift, x, q_max: int):
    fx = tuple(as_fraction(v) for v in x) + tuple(
        as_fraction(v) for v in mmap.eval_f(tuple(as_fraction(v) for v in x))
    )
    th = tuple(as_fraction(v) for v in shift.theta)
    # incremental fractional parts: denominators fixed by x and theta
    steps = [c % 1 for c in fx]
    rs = [(c - t) % 1 for c, t in zip(fx, th)]
    out = np.empty(q_max, dtype=float)
    zero = np.zeros(q_max, dtype=bool)
    for i in range(q_max):
        m = Fraction(0)
        for r in rs:
            dist = min(r, 1 - r)
            if dist > m:
                m = dist
        out[i] = float(m)
        zero[i] = m == 0
        rs = [(r + s) % 1 for r, s in zip(rs, steps)]
    return out, zero


def trace(
    mmap: ManifoldMap,
    shift: InhomShift,
    x,
    q_max: int,
    budget: int = DEFAULT_Q_BUDGET,
) -> ApproxTrace:
    """m_q for all q <= q_max; exact when x and theta are both rational."""
    x = tuple(x)
    if len(x) != mmap.d or shift.n != mmap.n:
        raise PreconditionError("dimension mismatch between x, theta and the map")
    if q_max < 1:
        raise PreconditionError(f"q_max must be >= 1, got {q_max}")
    if q_max > budget:
        raise BudgetExceededError(f"q_max {q_max} exceeds budget {budget}")
    qs = np.arange(1, q_max + 1, dtype=np.int64)
    exact = shift.is_exact and all(is_exact_scalar(v) for v in x)
    if exact:
        m, _ = _exact_m_values(mmap, shift, x, q_max)
        unc = np.zeros(q_max)
    else:
        xf = np.array([float(v) for v in x])
        coords = np.concatenate((xf, mmap.eval_f_array(xf[None, :])[0]))
        th = np.array([float(v) for v in shift.theta])
        vals = qs[:, None] * coords[None, :] - th[None, :]
        m = np.abs(vals - np.round(vals)).max(axis=1)
        unc = qs * FLOAT_ULP
    blocks = []
    for t, lo, hi in block_edges(q_max):
        seg = m[lo - 1 : hi]
        i = int(np.argmin(seg))
        blocks.append((t, lo, hi, lo + i, float(seg[i])))
    return ApproxTrace(x=x, q=qs, m=m, uncertainty=unc, blocks=tuple(blocks), exact=exact)


def is_approximable_count(tr: ApproxTrace, psi: ApproxFunction) -> int:
    """#{q <= Q_max : m_q <= psi(q)}, ambiguous comparisons excluded."""
    return int(tr.hit_mask(psi).sum())


# ---------------------------------------------------------------------------
# Monte-Carlo dichotomy


@dataclass(frozen=True)
class KhintchineSummary:
    """Per-sample hit statistics against a fixed psi.

    block_fraction[j] is the share of samples with at least one hit inside
    dyadic block j; last_hit_q[i] the largest q at which sample i hits
    (0 when it never does).
    """

    n_samples: int
    q_max: int
    psi: str
    seed: int
    block_t: np.ndarray
    block_lo: np.ndarray
    block_hi: np.ndarray
    block_fraction: np.ndarray
    hits: np.ndarray
    last_hit_q: np.ndarray
    ambiguous_total: int
    xs: np.ndarray

    @property
    def mean_hits(self) -> float:
        return float(self.hits.mean())

    def last_full_block_fraction(self) -> float:
        full = self.block_hi == np.floor(np.exp(self.block_t))
        idx = np.flatnonzero(full)
        if len(idx) == 0:
            raise PreconditionError("no full dyadic block below q_max")
        return float(self.block_fraction[idx[-1]])

    def tail_fraction(self, q0: int) -> float:
        """Share of samples with at least one hit at q > q0."""
        return float((self.last_hit_q > q0).mean())


def analytic_hit_sum(psi: ApproxFunction, n: int, q_max: int) -> float:
    """First-moment heuristic sum_q min(1, (2 psi(q))^n) for uniform x."""
    qs = np.arange(1, q_max + 1, dtype=float)
    return float(np.minimum(1.0, (2.0 * psi.values(qs)) ** n).sum())


def _mc_chunk(args):
    mmap, shift, psi, q_max, entries = args
    rows = []
    for idx, seed_key in entries:
        rng = np.random.default_rng(np.random.SeedSequence(seed_key))
        x = tuple(float(v) for v in mmap.domain.sample(rng, 1)[0])
        tr = trace(mmap, shift, x, q_max)
        hm = tr.hit_mask(psi)
        amb = int(tr.ambiguous_mask(psi).sum())
        hit_q = tr.q[hm]
        last = int(hit_q[-1]) if len(hit_q) else 0
        per_block = [bool(hm[lo - 1 : hi].any()) for _, lo, hi, _, _ in tr.blocks]
        rows.append((idx, x, int(hm.sum()), last, per_block, amb))
    return rows


def mc_khintchine(
    mmap: ManifoldMap,
    shift: InhomShift,
    psi: ApproxFunction,
    n_samples: int,
    q_max: int,
    seed: int,
    workers: int = 0,
    budget: int = DEFAULT_Q_BUDGET,
) -> KhintchineSummary:
    """Sample x uniformly from the domain and aggregate hit statistics.

    Sample i always uses the i-th spawn of SeedSequence(seed), so results
    are identical for every worker count and sharding.
    """
    if n_samples < 1:
        raise PreconditionError("need at least one sample")
    if q_max > budget:
        raise BudgetExceededError(f"q_max {q_max} exceeds budget {budget}")
    psi.check_range(2, q_max)
    keys = [(i, (seed, i)) for i in range(n_samples)]
    if workers and workers > 1:
        chunks = [keys[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = ex.map(_mc_chunk, [(mmap, shift, psi, q_max, c) for c in chunks])
        rows = [r for part in parts for r in part]
        rows.sort(key=lambda r: r[0])
    else:
        rows = _mc_chunk((mmap, shift, psi, q_max, keys))
    edges = block_edges(q_max)
    block_t = np.array([t for t, _, _ in edges])
    block_lo = np.array([lo for _, lo, _ in edges])
    block_hi = np.array([hi for _, _, hi in edges])
    per_block = np.array([r[4] for r in rows], dtype=bool)
    return KhintchineSummary(
        n_samples=n_samples,
        q_max=q_max,
        psi=psi.descriptor(),
        seed=seed,
        block_t=block_t,
        block_lo=block_lo,
        block_hi=block_hi,
        block_fraction=per_block.mean(axis=0),
        hits=np.array([r[2] for r in rows], dtype=np.int64),
        last_hit_q=np.array([r[3] for r in rows], dtype=np.int64),
        ambiguous_total=sum(r[5] for r in rows),
        xs=np.array([r[1] for r in rows]),
    )


# ---------------------------------------------------------------------------
# exponent estimates


@dataclass(frozen=True)
class ExponentEstimate:
    value: float  # may be inf
    q_at: int
    rational_flag: bool  # some m_q indistinguishable from 0 in the window
    window: tuple


def exponent_estimate(
    mmap: ManifoldMap,
    shift: InhomShift,
    x,
    q_max: int,
    window: tuple = None,
    budget: int = DEFAULT_Q_BUDGET,
) -> ExponentEstimate:
    """Windowed surrogate for the Diophantine exponent at x.

    max over q in [window] of -log m_q / log q; m_q = 0 (or below the float
    uncertainty) maps to +inf with the rational-point flag set.  The window
    defaults to [sqrt(Q_max), Q_max], large q standing in for "infinitely
    many".
    """
    tr = trace(mmap, shift, x, q_max, budget=budget)
    if window is None:
        window = (int(math.isqrt(q_max)), q_max)
    q_lo, q_hi = int(window[0]), int(window[1])
    if not 1 <= q_lo <= q_hi <= q_max:
        raise PreconditionError(f"window {window} not inside [1, {q_max}]")
    sel = (tr.q >= q_lo) & (tr.q <= q_hi)
    qs, ms, unc = tr.q[sel], tr.m[sel], tr.uncertainty[sel]
    degenerate = ms <= unc
    if np.any(degenerate):
        j = int(np.flatnonzero(degenerate)[0])
        return ExponentEstimate(
            value=math.inf, q_at=int(qs[j]), rational_flag=True, window=(q_lo, q_hi)
        )
    vals = -np.log(ms) / np.log(qs)
    i = int(np.argmax(vals))
    return ExponentEstimate(
        value=float(vals[i]), q_at=int(qs[i]), rational_flag=False, window=(q_lo, q_hi)
    )
