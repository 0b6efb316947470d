"""Lattices, dual lattices, structured unipotent matrices, successive minima.

Conventions. A matrix g acts on column vectors and the lattice under
study is g Z^k, so basis vectors are the columns of g. The dual is
g* = sigma^(-1) (g^T)^(-1) sigma with sigma the long Weyl element
(antidiagonal ones). Successive minima delta_1 <= ... <= delta_k are
taken with respect to the closed unit Euclidean ball.

Minima are computed exactly: float entries are dyadic rationals, the
basis is scaled to integers, LLL-reduced (all-integer Lovasz condition,
delta = 99/100) and enumerated. The i-th minimum equals the shortest
vector outside the span of greedily chosen shorter ones; that span is
saturated and moved to the front of the basis by a unimodular change of
coordinates, after which the enumeration can skip the whole sublattice
in one branch. This keeps the search small even when the spectrum is
very unbalanced (grid points sitting on low-denominator rationals).

Supported size: k = n + 1 <= 9.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import (
    BudgetExceededError,
    IllConditionedWarning,
    InvalidDimensionError,
    NumericOverflowError,
    PreconditionError,
    SingularMatrixError,
)
from .manifold import ManifoldMap
from .poly import as_fraction, is_exact_scalar

MAX_DIM = 9
TOL_DET = 1e-12          # float-mode singularity guard
COND_GUARD = 1e12        # warn above this condition number
_ENUM_NODE_CAP = 5_000_000


# ---------------------------------------------------------------------------
# matrices


@dataclass(frozen=True)
class SquareMatrix:
    """Dense square matrix, either exact (Fraction entries) or float."""

    rows: tuple
    exact: bool

    @staticmethod
    def from_rows(rows) -> "SquareMatrix":
        rows = [list(r) for r in rows]
        k = len(rows)
        if k == 0 or any(len(r) != k for r in rows):
            raise InvalidDimensionError("matrix must be square and nonempty")
        exact = all(is_exact_scalar(v) for r in rows for v in r)
        if exact:
            packed = tuple(tuple(as_fraction(v) for v in r) for r in rows)
        else:
            packed = tuple(tuple(float(v) for v in r) for r in rows)
            if not all(math.isfinite(v) for r in packed for v in r):
                raise NumericOverflowError("non-finite matrix entry")
        return SquareMatrix(packed, exact)

    @staticmethod
    def identity(k: int) -> "SquareMatrix":
        return SquareMatrix.from_rows(
            [[1 if i == j else 0 for j in range(k)] for i in range(k)]
        )

    @staticmethod
    def from_diag(entries) -> "SquareMatrix":
        k = len(entries)
        return SquareMatrix.from_rows(
            [[entries[i] if i == j else 0 for j in range(k)] for i in range(k)]
        )

    @property
    def k(self) -> int:
        return len(self.rows)

    def __matmul__(self, other: "SquareMatrix") -> "SquareMatrix":
        if self.k != other.k:
            raise InvalidDimensionError("size mismatch in matrix product")
        a, b = self.rows, other.rows
        k = self.k
        out = [
            [sum(a[i][l] * b[l][j] for l in range(k)) for j in range(k)]
            for i in range(k)
        ]
        return SquareMatrix.from_rows(out)

    def transpose(self) -> "SquareMatrix":
        return SquareMatrix.from_rows(list(zip(*self.rows)))

    def to_array(self) -> np.ndarray:
        return np.array([[float(v) for v in r] for r in self.rows], dtype=np.float64)

    def det(self):
        if self.exact:
            return _det_exact([list(r) for r in self.rows])
        return float(np.linalg.det(self.to_array()))

    def inverse(self) -> "SquareMatrix":
        if self.exact:
            inv = _inverse_exact([list(r) for r in self.rows])
            return SquareMatrix.from_rows(inv)
        a = self.to_array()
        det = np.linalg.det(a)
        if not math.isfinite(det) or abs(det) < TOL_DET:
            raise SingularMatrixError(f"float-mode determinant {det} below guard")
        return SquareMatrix.from_rows(np.linalg.inv(a).tolist())

    def allclose(self, other: "SquareMatrix", tol: float = 1e-12) -> bool:
        if self.k != other.k:
            return False
        for ra, rb in zip(self.rows, other.rows):
            for a, b in zip(ra, rb):
                if abs(float(a) - float(b)) > tol:
                    return False
        return True


def _det_exact(rows) -> Fraction:
    k = len(rows)
    rows = [[as_fraction(v) for v in r] for r in rows]
    det = Fraction(1)
    for col in range(k):
        pivot = next((r for r in range(col, k) if rows[r][col] != 0), None)
        if pivot is None:
            return Fraction(0)
        if pivot != col:
            rows[col], rows[pivot] = rows[pivot], rows[col]
            det = -det
        det *= rows[col][col]
        inv = 1 / rows[col][col]
        for r in range(col + 1, k):
            if rows[r][col] != 0:
                f = rows[r][col] * inv
                rows[r] = [a - f * b for a, b in zip(rows[r], rows[col])]
    return det


def _inverse_exact(rows):
    k = len(rows)
    aug = [
        [as_fraction(v) for v in rows[i]]
        + [Fraction(1 if j == i else 0) for j in range(k)]
        for i in range(k)
    ]
    for col in range(k):
        pivot = next((r for r in range(col, k) if aug[r][col] != 0), None)
        if pivot is None:
            raise SingularMatrixError("exact matrix is singular")
        aug[col], aug[pivot] = aug[pivot], aug[col]
        inv = 1 / aug[col][col]
        aug[col] = [v * inv for v in aug[col]]
        for r in range(k):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [a - f * b for a, b in zip(aug[r], aug[col])]
    return [r[k:] for r in aug]


def weyl(k: int) -> SquareMatrix:
    """Long Weyl element sigma_k: ones on the antidiagonal."""
    if k < 1:
        raise InvalidDimensionError("weyl needs k >= 1")
    return SquareMatrix.from_rows(
        [[1 if i + j == k - 1 else 0 for j in range(k)] for i in range(k)]
    )


def dual(g: SquareMatrix) -> SquareMatrix:
    """g* = sigma^(-1) (g^T)^(-1) sigma; sigma is its own inverse."""
    s = weyl(g.k)
    return (s @ g.transpose().inverse()) @ s


# ---------------------------------------------------------------------------
# structured matrices of the counting problem


def u_matrix(mmap: ManifoldMap, x) -> SquareMatrix:
    """u(x): identity with last column sigma_n F(x)^T (graph point reversed)."""
    n = mmap.n
    full = mmap.full_map(x)
    rows = [[1 if i == j else 0 for j in range(n + 1)] for i in range(n + 1)]
    for i in range(n):
        rows[i][n] = full[n - 1 - i]
    return SquareMatrix.from_rows(rows)


def z_matrix(mmap: ManifoldMap, x) -> SquareMatrix:
    """Shear removing the Jacobian part: block -sigma_m J(x)^T sigma_d."""
    d, m, n = mmap.d, mmap.m, mmap.n
    jac = mmap.jacobian(x)  # d x m, entry (i, j) = d_i f_j
    rows = [[1 if i == j else 0 for j in range(n + 1)] for i in range(n + 1)]
    for a in range(m):
        for b in range(d):
            rows[a][m + b] = -jac[d - 1 - b][m - 1 - a]
    return SquareMatrix.from_rows(rows)


def u1_matrix(mmap: ManifoldMap, x) -> SquareMatrix:
    """u_1(x) = z(x) u(x), written out entry by entry.

    Top m rows carry minus the reversed gradients and f_j - sum_i x_i d_i f_j
    in the last column (row 0 corresponds to f_m, row m-1 to f_1); the
    middle d rows carry x_d, ..., x_1 in the last column.
    """
    d, m, n = mmap.d, mmap.m, mmap.n
    f = mmap.eval_f(x)
    jac = mmap.jacobian(x)
    rows = [[1 if i == j else 0 for j in range(n + 1)] for i in range(n + 1)]
    for a in range(m):
        jj = m - 1 - a
        for b in range(d):
            rows[a][m + b] = -jac[d - 1 - b][jj]
        rows[a][n] = f[jj] - sum(x[i] * jac[i][jj] for i in range(d))
    for b in range(d):
        rows[m + b][n] = x[d - 1 - b]
    return SquareMatrix.from_rows(rows)


def u1_dual_closed_form(mmap: ManifoldMap, x) -> SquareMatrix:
    """Closed form of u_1*(x): first row (1, -x, -f(x)), J(x) block beside I_d."""
    d, m, n = mmap.d, mmap.m, mmap.n
    f = mmap.eval_f(x)
    jac = mmap.jacobian(x)
    rows = [[1 if i == j else 0 for j in range(n + 1)] for i in range(n + 1)]
    for i in range(d):
        rows[0][1 + i] = -x[i]
    for j in range(m):
        rows[0][1 + d + j] = -f[j]
    for i in range(d):
        for j in range(m):
            rows[1 + i][1 + d + j] = jac[i][j]
    return SquareMatrix.from_rows(rows)


def _checked_exp(v: float) -> float:
    try:
        out = math.exp(v)
    except OverflowError as exc:
        raise NumericOverflowError(f"exp({v}) overflows") from exc
    if out == 0.0 or not math.isfinite(out):
        raise NumericOverflowError(f"exp({v}) leaves float range")
    return out


def _check_eps(eps: float) -> None:
    if not (isinstance(eps, (int, float)) and 0.0 < eps):
        raise PreconditionError(f"eps must be positive, got {eps!r}")


def phi_h(n: int, d: int, eps: float, t: float) -> tuple:
    """(phi, e^h) with phi = (eps^n e^t)^(1/(n+1)) and h = d t / (2(n+1))."""
    _check_eps(eps)
    phi = (eps**n * _checked_exp(t)) ** (1.0 / (n + 1))
    eh = _checked_exp(d * t / (2.0 * (n + 1)))
    return phi, eh


def g_eps_t(n: int, eps: float, t: float) -> SquareMatrix:
    """phi * diag(eps^-1 x n, e^-t); unimodular by the choice of phi."""
    _check_eps(eps)
    phi = (eps**n * _checked_exp(t)) ** (1.0 / (n + 1))
    entries = [phi / eps] * n + [phi * _checked_exp(-t)]
    return SquareMatrix.from_diag(entries)


def b_t_matrix(d: int, m: int, t: float) -> SquareMatrix:
    n = d + m
    a = _checked_exp(d * t / (2.0 * (n + 1)))
    b = _checked_exp(-(m + 1) * t / (2.0 * (n + 1)))
    return SquareMatrix.from_diag([a] * m + [b] * d + [a])


def d_eps_matrix(d: int, m: int, eps: float) -> SquareMatrix:
    _check_eps(eps)
    return SquareMatrix.from_diag([1.0] * m + [math.sqrt(eps)] * d + [1.0])


def a_eps_t_v(d: int, m: int, eps: float, t: float, v: float) -> SquareMatrix:
    _check_eps(eps)
    if not 0.0 < v:
        raise PreconditionError(f"v must be positive, got {v!r}")
    n = d + m
    et = _checked_exp(t)
    mid = (eps**m * et) ** (-1.0 / d)
    entries = [eps / v] * m + [mid / v] * d + [v**n * et]
    return SquareMatrix.from_diag(entries)


def unit_ball_volume(k: int) -> float:
    """Euclidean unit-ball volume V_k = pi^(k/2) / Gamma(k/2 + 1)."""
    return math.pi ** (k / 2.0) / math.gamma(k / 2.0 + 1.0)


# ---------------------------------------------------------------------------
# exact successive minima


@dataclass(frozen=True)
class MinimaVector:
    """delta_1 <= ... <= delta_k plus achieving vectors (integer coefficients
    with respect to the input basis columns, sign-normalised)."""

    deltas: tuple
    norms_sq: tuple  # exact squared minima as Fractions
    vectors: tuple
    exact: bool

    @property
    def k(self) -> int:
        return len(self.deltas)


def successive_minima(g: SquareMatrix, upto: int | None = None) -> MinimaVector:
    """Exact successive minima of the lattice g Z^k (Euclidean norm)."""
    if not isinstance(g, SquareMatrix):
        g = SquareMatrix.from_rows(g)
    k = g.k
    if k > MAX_DIM:
        raise InvalidDimensionError(f"k={k} exceeds supported maximum {MAX_DIM}")
    if upto is None:
        upto = k
    if not 1 <= upto <= k:
        raise InvalidDimensionError(f"upto={upto} out of range 1..{k}")
    if not g.exact:
        arr = g.to_array()
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(arr)
        if not math.isfinite(cond) or cond > COND_GUARD:
            warnings.warn(
                f"condition number {cond:.3e} above {COND_GUARD:.0e};"
                " minima reflect the rounded matrix",
                IllConditionedWarning,
                stacklevel=2,
            )
    cols, denom = _integer_columns(g)
    if _det_int(cols) == 0:
        raise SingularMatrixError("lattice basis is singular")
    coords = [[1 if i == j else 0 for j in range(k)] for i in range(k)]
    _lll(cols, coords, [(0, k)])
    chosen: list = []
    norms: list = []
    vecs: list = []
    for i in range(upto):
        r = len(chosen)
        if r:
            cmat = [_solve_integer_coeffs(cols, v) for v in chosen]  # r coeff cols
            t = _adaptation_transform(cmat, k)
            _apply_col_transform(cols, t)
            _apply_col_transform(coords, t)
            _lll(cols, coords, [(0, r), (r, k)])
        norm2, c_cur = _fp_min_outside(cols, r)
        vec = _mat_vec(cols, c_cur)
        orig = _sign_normalise(_mat_vec(coords, c_cur))
        chosen.append(vec)
        norms.append(norm2)
        vecs.append(tuple(orig))
    denom2 = denom * denom
    deltas = tuple(math.sqrt(float(Fraction(nn, denom2))) for nn in norms)
    norms_sq = tuple(Fraction(nn, denom2) for nn in norms)
    return MinimaVector(deltas, norms_sq, tuple(vecs), g.exact)


def delta1(g: SquareMatrix) -> float:
    return successive_minima(g, upto=1).deltas[0]


def delta_last(g: SquareMatrix) -> float:
    mv = successive_minima(g)
    return mv.deltas[-1]


def _integer_columns(g: SquareMatrix):
    """Scale columns of g to integers; returns (columns, common denominator)."""
    k = g.k
    fracs = [[as_fraction(g.rows[i][j]) for i in range(k)] for j in range(k)]
    denom = 1
    for col in fracs:
        for v in col:
            denom = denom * v.denominator // math.gcd(denom, v.denominator)
    cols = [[int(v * denom) for v in col] for col in fracs]
    return cols, denom


def _det_int(cols) -> int:
    k = len(cols)
    rows = [[Fraction(cols[j][i]) for j in range(k)] for i in range(k)]
    d = _det_exact(rows)
    return int(d)


def _mat_vec(cols, c):
    k = len(cols[0])
    return [sum(cols[j][i] * c[j] for j in range(len(cols))) for i in range(k)]


def _sign_normalise(vec):
    for v in vec:
        if v != 0:
            return [-x for x in vec] if v < 0 else list(vec)
    return list(vec)


def _solve_integer_coeffs(cols, target):
    """Solve cols . c = target exactly; coefficients must be integers."""
    k = len(cols)
    aug = [[Fraction(cols[j][i]) for j in range(k)] + [Fraction(target[i])] for i in range(k)]
    for col in range(k):
        pivot = next((r for r in range(col, k) if aug[r][col] != 0), None)
        if pivot is None:
            raise SingularMatrixError("dependent basis in coefficient solve")
        aug[col], aug[pivot] = aug[pivot], aug[col]
        inv = 1 / aug[col][col]
        aug[col] = [v * inv for v in aug[col]]
        for r in range(k):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [a - f * b for a, b in zip(aug[r], aug[col])]
    out = []
    for r in range(k):
        v = aug[r][k]
        if v.denominator != 1:
            raise SingularMatrixError("non-integer coefficient for lattice vector")
        out.append(int(v))
    return out


def _apply_col_transform(cols, t):
    """cols <- cols . t for a k x k integer transform (columns of t are combos)."""
    k = len(cols)
    dim = len(cols[0])
    new = []
    for j in range(k):
        vec = [0] * dim
        for l in range(k):
            w = t[l][j]
            if w:
                col = cols[l]
                for i in range(dim):
                    vec[i] += w * col[i]
        new.append(vec)
    cols[:] = new


# --- integer column echelon / kernels -------------------------------------


def _col_echelon(mat_rows, k: int):
    """Unimodular V with (mat . V) in column echelon; returns (echelon, V, rank).

    `mat_rows` is a list of length-k integer rows. Kernel of the row map
    equals the integer span of V's trailing k - rank columns.
    """
    rows = [list(r) for r in mat_rows]
    p = len(rows)
    v = [[1 if i == j else 0 for j in range(k)] for i in range(k)]

    def col_sub(dst, src, q):
        for rr in range(p):
            rows[rr][dst] -= q * rows[rr][src]
        for rr in range(k):
            v[rr][dst] -= q * v[rr][src]

    def col_swap(a, b):
        if a == b:
            return
        for rr in range(p):
            rows[rr][a], rows[rr][b] = rows[rr][b], rows[rr][a]
        for rr in range(k):
            v[rr][a], v[rr][b] = v[rr][b], v[rr][a]

    def col_negate(a):
        for rr in range(p):
            rows[rr][a] = -rows[rr][a]
        for rr in range(k):
            v[rr][a] = -v[rr][a]

    piv = 0
    for row in range(p):
        active = [c for c in range(piv, k) if rows[row][c] != 0]
        if not active:
            continue
        while len(active) > 1:
            c0 = min(active, key=lambda c: (abs(rows[row][c]), c))
            rest = [c for c in active if c != c0]
            for c in rest:
                q = rows[row][c] // rows[row][c0]
                if q:
                    col_sub(c, c0, q)
            active = [c for c in active if rows[row][c] != 0]
        col_swap(active[0], piv)
        if rows[row][piv] < 0:
            col_negate(piv)
        piv += 1
        if piv == k:
            break
    return rows, v, piv


def _kernel_cols(mat_rows, k: int):
    """Saturated basis (as columns) of {x in Z^k : mat . x = 0}."""
    _, v, rank = _col_echelon(mat_rows, k)
    return [[v[i][j] for i in range(k)] for j in range(rank, k)], rank


def _adaptation_transform(coeff_cols, k: int):
    """Unimodular T whose first r columns span the saturation of the span
    of the given coefficient columns."""
    r = len(coeff_cols)
    ct_rows = [[coeff_cols[j][i] for i in range(k)] for j in range(r)]  # r x k
    n_cols, _ = _kernel_cols(ct_rows, k)  # right kernel, k x (k - r)
    nt_rows = [[col[i] for i in range(k)] for col in n_cols]  # (k - r) x k
    _, v, rank = _col_echelon(nt_rows, k)
    if k - rank != r:
        raise SingularMatrixError("saturation rank mismatch")
    order = list(range(rank, k)) + list(range(rank))  # kernel columns first
    return [[v[i][j] for j in order] for i in range(k)]


# --- all-integer LLL (Lovasz delta = 99/100) -------------------------------


def _lambda_d_state(cols):
    """Integral Gram-Schmidt state: lam[i][j] = d_j mu_ij, dd[i+1] = d_i."""
    k = len(cols)
    dd = [1] * (k + 1)
    lam = [[0] * k for _ in range(k)]
    for i in range(k):
        for j in range(i + 1):
            u = sum(a * b for a, b in zip(cols[i], cols[j]))
            for l in range(j):
                u = (dd[l + 1] * u - lam[i][l] * lam[j][l]) // dd[l]
            if j < i:
                lam[i][j] = u
            else:
                if u <= 0:
                    raise SingularMatrixError("basis not positive definite")
                dd[i + 1] = u
    return lam, dd


def _lll(cols, coords, blocks):
    """In-place LLL; swaps are confined to the given index blocks so a
    saturated front block keeps spanning the same subspace."""
    k = len(cols)
    lam, dd = _lambda_d_state(cols)
    block_of = [0] * k
    for bi, (a, b) in enumerate(blocks):
        for i in range(a, b):
            block_of[i] = bi

    def red(i, j):
        if 2 * abs(lam[i][j]) > dd[j + 1]:
            q = (2 * lam[i][j] + dd[j + 1]) // (2 * dd[j + 1])
            for rr in range(len(cols[i])):
                cols[i][rr] -= q * cols[j][rr]
            for rr in range(len(coords[i])):
                coords[i][rr] -= q * coords[j][rr]
            lam[i][j] -= q * dd[j + 1]
            for l in range(j):
                lam[i][l] -= q * lam[j][l]

    def swap(kk):
        cols[kk], cols[kk - 1] = cols[kk - 1], cols[kk]
        coords[kk], coords[kk - 1] = coords[kk - 1], coords[kk]
        for j in range(kk - 1):
            lam[kk][j], lam[kk - 1][j] = lam[kk - 1][j], lam[kk][j]
        lam_ = lam[kk][kk - 1]
        bb = (dd[kk - 1] * dd[kk + 1] + lam_ * lam_) // dd[kk]
        for i in range(kk + 1, k):
            t = lam[i][kk]
            lam[i][kk] = (dd[kk + 1] * lam[i][kk - 1] - lam_ * t) // dd[kk]
            lam[i][kk - 1] = (bb * t + lam_ * lam[i][kk]) // dd[kk + 1]
        dd[kk] = bb

    kk = 1
    while kk < k:
        red(kk, kk - 1)
        if (
            block_of[kk] == block_of[kk - 1]
            and 100 * (dd[kk + 1] * dd[kk - 1] + lam[kk][kk - 1] ** 2) < 99 * dd[kk] ** 2
        ):
            swap(kk)
            kk = max(kk - 1, 1)
        else:
            for j in range(kk - 2, -1, -1):
                red(kk, j)
            kk += 1


# --- enumeration -----------------------------------------------------------


def _gso(cols):
    k = len(cols)
    gram = [
        [sum(a * b for a, b in zip(cols[i], cols[j])) for j in range(k)]
        for i in range(k)
    ]
    mu = [[Fraction(0)] * k for _ in range(k)]
    dvec = [Fraction(0)] * k
    for i in range(k):
        for j in range(i):
            acc = Fraction(gram[i][j])
            for l in range(j):
                acc -= mu[i][l] * mu[j][l] * dvec[l]
            mu[i][j] = acc / dvec[j]
        acc = Fraction(gram[i][i])
        for l in range(i):
            acc -= mu[i][l] * mu[i][l] * dvec[l]
        if acc <= 0:
            raise SingularMatrixError("degenerate Gram data")
        dvec[i] = acc
    return mu, dvec


def _sqrt_floor(x: Fraction) -> Fraction:
    """Rational lower bound for sqrt(x), exact integer arithmetic only."""
    if x < 0:
        raise ValueError("negative radicand")
    return Fraction(math.isqrt(x.numerator * x.denominator), x.denominator)


def _level_range(s: Fraction, rem: Fraction, dj: Fraction):
    """All integers c with dj * (c + s)^2 <= rem."""
    bound = _sqrt_floor(rem / dj)
    lo = math.ceil(-s - bound)
    hi = math.floor(-s + bound)
    while dj * (Fraction(lo - 1) + s) ** 2 <= rem:
        lo -= 1
    while dj * (Fraction(lo) + s) ** 2 > rem and lo <= hi:
        lo += 1
    while dj * (Fraction(hi + 1) + s) ** 2 <= rem:
        hi += 1
    while dj * (Fraction(hi) + s) ** 2 > rem and hi >= lo:
        hi -= 1
    return lo, hi


def _fp_min_outside(cols, r):
    """Minimal-norm lattice vector outside the span of the first r basis
    columns (any nonzero vector when r = 0). Returns (norm^2, coeffs)."""
    k = len(cols)
    mu, dvec = _gso(cols)
    best_norm = None
    best_key = None
    best_c = None
    for idx in range(r, k):
        nn = sum(v * v for v in cols[idx])
        c = [0] * k
        c[idx] = 1
        key = tuple(c)
        if best_norm is None or nn < best_norm or (nn == best_norm and key < best_key):
            best_norm, best_key, best_c = nn, key, list(c)

    c = [0] * k
    nodes = 0

    def descend(level, partial):
        nonlocal best_norm, best_key, best_c, nodes
        nodes += 1
        if nodes > _ENUM_NODE_CAP:
            raise BudgetExceededError("minima enumeration exceeded node cap")
        rem = Fraction(best_norm) - partial
        if rem < 0:
            return
        s = Fraction(0)
        for l in range(level + 1, k):
            if c[l]:
                s += mu[l][level] * c[l]
        lo, hi = _level_range(s, rem, dvec[level])
        for cv in range(lo, hi + 1):
            c[level] = cv
            outer_zero = all(c[l] == 0 for l in range(r, k))
            if level == r and outer_zero:
                continue  # whole subtree lies inside the avoided span
            term = dvec[level] * (Fraction(cv) + s) ** 2
            new_partial = partial + term
            if new_partial > best_norm:
                continue
            if level == 0:
                if r == 0 and all(v == 0 for v in c):
                    continue
                nn = new_partial
                if nn.denominator == 1:
                    nn = nn.numerator
                key = tuple(_sign_normalise(c))
                if nn < best_norm or (nn == best_norm and key < best_key):
                    best_norm, best_key, best_c = nn, key, list(c)
            else:
                descend(level - 1, new_partial)
        c[level] = 0

    descend(k - 1, Fraction(0))
    return best_norm, best_c
