"""Monge-parametrised manifolds x -> (x, f(x)) and their derivative data.

A manifold here is a polynomial map f: R^d -> R^m on a closed sup-norm
ball U, with n = d + m the ambient dimension. Everything downstream
(counting boxes, unipotent matrices, gradient constraints) consumes the
pieces defined in this module: exact partial derivatives, the Jacobian
J(x) = [d_i f_j], a derivative bound M >= 1 valid on U, and the order of
nondegeneracy at a point.

Built-in families: the Veronese curve f(x) = (x^2, ..., x^n) and the
paraboloid f(x) = |x|^2. Arbitrary polynomial maps come from coefficient
tables, either inline or from a JSON definition file.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import CapabilityError, InvalidDimensionError
from .poly import Poly, as_fraction, is_exact_scalar

TOL_RANK = 1e-9  # relative singular-value cutoff for float rank decisions


@dataclass(frozen=True)
class Ball:
    """Closed sup-norm ball: the box prod_i [center_i - radius, center_i + radius]."""

    center: tuple
    radius: object  # Fraction or float, shared by all axes

    @staticmethod
    def make(center, radius) -> "Ball":
        c = tuple(as_fraction(v) if is_exact_scalar(v) else float(v) for v in center)
        r = as_fraction(radius) if is_exact_scalar(radius) else float(radius)
        if not len(c):
            raise InvalidDimensionError("ball needs at least one coordinate")
        if r <= 0:
            raise InvalidDimensionError(f"radius {r} must be positive")
        return Ball(c, r)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def is_exact(self) -> bool:
        return is_exact_scalar(self.radius) and all(is_exact_scalar(v) for v in self.center)

    def volume(self):
        return (2 * self.radius) ** self.dim

    def lo(self) -> tuple:
        return tuple(c - self.radius for c in self.center)

    def hi(self) -> tuple:
        return tuple(c + self.radius for c in self.center)

    def contains(self, x) -> bool:
        return all(abs(v - c) <= self.radius for v, c in zip(x, self.center))

    def clamp(self, x) -> tuple:
        out = []
        for v, c in zip(x, self.center):
            out.append(min(max(v, c - self.radius), c + self.radius))
        return tuple(out)

    def grid(self, pts_per_axis: int) -> np.ndarray:
        """Cell-centred uniform grid, shape (pts_per_axis**dim, dim)."""
        if pts_per_axis < 1:
            raise InvalidDimensionError("grid needs >= 1 point per axis")
        lo = np.array([float(v) for v in self.lo()])
        hi = np.array([float(v) for v in self.hi()])
        axes = [
            lo[i] + (hi[i] - lo[i]) * (np.arange(pts_per_axis) + 0.5) / pts_per_axis
            for i in range(self.dim)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def sample(self, rng: np.random.Generator, k: int) -> np.ndarray:
        lo = np.array([float(v) for v in self.lo()])
        hi = np.array([float(v) for v in self.hi()])
        return rng.uniform(lo, hi, size=(k, self.dim))


@dataclass(frozen=True)
class ManifoldMap:
    """Polynomial Monge map f: R^d -> R^m with domain ball U in R^d."""

    d: int
    n: int
    components: tuple  # m = n - d polynomials in d variables
    domain: Ball
    l_max: int
    name: str = ""

    def __post_init__(self):
        if not 1 <= self.d < self.n:
            raise InvalidDimensionError(f"need 1 <= d < n, got d={self.d} n={self.n}")
        if len(self.components) != self.m:
            raise InvalidDimensionError(
                f"{len(self.components)} components for m={self.m}"
            )
        if self.domain.dim != self.d:
            raise InvalidDimensionError("domain dimension != d")
        if self.l_max < 1:
            raise InvalidDimensionError("l_max must be >= 1")
        object.__setattr__(self, "_partial_cache", {})
        object.__setattr__(self, "_bound_cache", {})

    @property
    def m(self) -> int:
        return self.n - self.d

    def eval_f(self, x) -> tuple:
        """f(x) as an m-tuple; exact when x is rational."""
        return tuple(p(x) for p in self.components)

    def eval_f_array(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.stack([p.eval_array(X) for p in self.components], axis=-1)

    def full_map(self, x) -> tuple:
        """The graph point F(x) = (x, f(x)) in R^n."""
        return tuple(x) + self.eval_f(x)

    def partial(self, j: int, beta) -> Poly:
        """Exact partial d^beta f_j as a polynomial; beta is a multi-index."""
        beta = tuple(int(b) for b in beta)
        if len(beta) != self.d or any(b < 0 for b in beta):
            raise InvalidDimensionError(f"bad multi-index {beta}")
        key = (j, beta)
        cache = self._partial_cache
        if key not in cache:
            cache[key] = self.components[j].diff_multi(beta)
        return cache[key]

    def jacobian(self, x):
        """J(x) as a d x m nested tuple, entry (i, j) = d_i f_j(x)."""
        rows = []
        for i in range(self.d):
            unit = tuple(1 if k == i else 0 for k in range(self.d))
            rows.append(tuple(self.partial(j, unit)(x) for j in range(self.m)))
        return tuple(rows)

    def jacobian_array(self, X: np.ndarray) -> np.ndarray:
        """Vectorised Jacobian, shape (..., d, m)."""
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(X.shape[:-1] + (self.d, self.m), dtype=np.float64)
        for i in range(self.d):
            unit = tuple(1 if k == i else 0 for k in range(self.d))
            for j in range(self.m):
                out[..., i, j] = self.partial(j, unit).eval_array(X)
        return out

    def derivative_bound(self) -> Fraction:
        """M >= 1 with |d_i f_j| <= M and |d_i d_k f_j| <= M on the domain."""
        cache = self._bound_cache
        if "M" not in cache:
            lo, hi = self.domain.lo(), self.domain.hi()
            bound = Fraction(1)
            for beta in _multi_indices(self.d, 1) + _multi_indices(self.d, 2):
                for j in range(self.m):
                    bound = max(bound, self.partial(j, beta).sup_bound(lo, hi))
            cache["M"] = bound
        return cache["M"]

    def is_exact(self) -> bool:
        return True  # polynomial tables carry Fraction coefficients throughout

    def descriptor(self) -> str:
        """Stable text id used in reports and calibration manifests."""
        if self.name:
            return self.name
        comp = ";".join(str(p) for p in self.components)
        return f"poly[d={self.d},n={self.n}]({comp})"


def _multi_indices(d: int, order: int) -> list:
    """All multi-indices of exact total order `order` in d variables."""
    out = []
    for combo in itertools.combinations_with_replacement(range(d), order):
        beta = [0] * d
        for i in combo:
            beta[i] += 1
        out.append(tuple(beta))
    return sorted(out)


def veronese(n: int, domain: Ball | None = None) -> ManifoldMap:
    """The curve x -> (x, x^2, ..., x^n) on [0, 1] by default."""
    if n < 2:
        raise InvalidDimensionError(f"veronese needs n >= 2, got {n}")
    if domain is None:
        domain = Ball.make((Fraction(1, 2),), Fraction(1, 2))
    comps = tuple(Poly.monomial(1, (k,)) for k in range(2, n + 1))
    return ManifoldMap(1, n, comps, domain, l_max=n, name=f"veronese:{n}")


def paraboloid(d: int, domain: Ball | None = None) -> ManifoldMap:
    """x -> (x, x_1^2 + ... + x_d^2), n = d + 1, 2-nondegenerate."""
    if d < 1:
        raise InvalidDimensionError(f"paraboloid needs d >= 1, got {d}")
    if domain is None:
        domain = Ball.make((Fraction(1, 2),) * d, Fraction(1, 2))
    table = {tuple(2 if k == i else 0 for k in range(d)): 1 for i in range(d)}
    comp = Poly.from_terms(d, table)
    return ManifoldMap(d, d + 1, (comp,), domain, l_max=2, name=f"paraboloid:{d}")


def polynomial_monge(d: int, n: int, tables, domain: Ball, name: str = "") -> ManifoldMap:
    """Map from coefficient tables, one {exponent-tuple: coeff} per component."""
    comps = tuple(Poly.from_terms(d, t) for t in tables)
    if len(comps) != n - d:
        raise InvalidDimensionError(f"{len(comps)} tables for m={n - d}")
    l_max = max(2, max((p.degree() for p in comps), default=2))
    return ManifoldMap(d, n, comps, domain, l_max=l_max, name=name)


def jacobian(mmap: ManifoldMap, x):
    return mmap.jacobian(x)


def full_derivative_vector(mmap: ManifoldMap, beta, x) -> tuple:
    """d^beta F(x) in R^n for the full map F = (x, f(x))."""
    beta = tuple(int(b) for b in beta)
    order = sum(beta)
    head = []
    for i in range(mmap.d):
        if order == 1 and beta[i] == 1:
            head.append(Fraction(1) if all(is_exact_scalar(v) for v in x) else 1.0)
        else:
            head.append(Fraction(0) if all(is_exact_scalar(v) for v in x) else 0.0)
    tail = [mmap.partial(j, beta)(x) for j in range(mmap.m)]
    return tuple(head) + tuple(tail)


def nondegeneracy_order(mmap: ManifoldMap, x, l_cap: int | None = None) -> int:
    """Smallest l with span{d^beta F(x): 1 <= |beta| <= l} = R^n.

    Raises CapabilityError if rank n is not reached by l_cap (default
    l_max): the map is not certified l-nondegenerate at x.
    """
    if l_cap is None:
        l_cap = mmap.l_max
    if l_cap < 1:
        raise InvalidDimensionError("l_cap must be >= 1")
    exact = all(is_exact_scalar(v) for v in x)
    rows: list = []
    for l in range(1, l_cap + 1):
        for beta in _multi_indices(mmap.d, l):
            rows.append(full_derivative_vector(mmap, beta, x))
        if _rank(rows, exact) == mmap.n:
            return l
    raise CapabilityError(
        f"rank {_rank(rows, exact)} < n={mmap.n} using partials of order <= {l_cap}"
    )


def _rank(rows, exact: bool) -> int:
    if not rows:
        return 0
    if exact:
        return _rank_exact([list(map(Fraction, r)) for r in rows])
    a = np.array([[float(v) for v in r] for r in rows], dtype=np.float64)
    sv = np.linalg.svd(a, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > TOL_RANK * sv[0]))


def _rank_exact(rows) -> int:
    """Gaussian elimination over Fractions."""
    rank = 0
    ncols = len(rows[0])
    rows = [r[:] for r in rows]
    for col in range(ncols):
        pivot = None
        for r in range(rank, len(rows)):
            if rows[r][col] != 0:
                pivot = r
                break
        if pivot is None:
            continue
        rows[rank], rows[pivot] = rows[pivot], rows[rank]
        pr = rows[rank]
        for r in range(rank + 1, len(rows)):
            if rows[r][col] != 0:
                factor = rows[r][col] / pr[col]
                rows[r] = [a - factor * b for a, b in zip(rows[r], pr)]
        rank += 1
        if rank == min(len(rows), ncols):
            break
    return rank


def load_map(path) -> ManifoldMap:
    """Read a map definition file (JSON).

    Fields: dim_d, dim_n, polynomials (list of {exponent-key: coeff}),
    center, radius, optional name. Exponent keys are comma-separated
    integers ("2" or "1,0"); coefficients may be ints, floats, or exact
    rational strings like "3/2".
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    try:
        d = int(raw["dim_d"])
        n = int(raw["dim_n"])
        polys = raw["polynomials"]
        center = raw["center"]
        radius = raw["radius"]
    except KeyError as exc:
        raise InvalidDimensionError(f"map file missing field {exc}") from exc
    tables = []
    for table in polys:
        parsed = {}
        for key, coeff in table.items():
            exps = tuple(int(s) for s in str(key).split(","))
            parsed[exps] = as_fraction(coeff)
        tables.append(parsed)
    center = [as_fraction(c) if isinstance(c, (int, str)) else float(c) for c in center]
    radius = as_fraction(radius) if isinstance(radius, (int, str)) else float(radius)
    domain = Ball.make(center, radius)
    return polynomial_monge(d, n, tables, domain, name=str(raw.get("name", "")))


def dump_map(mmap: ManifoldMap, path) -> None:
    tables = []
    for p in mmap.components:
        tables.append({",".join(map(str, e)): str(c) for e, c in p.terms})
    doc = {
        "dim_d": mmap.d,
        "dim_n": mmap.n,
        "polynomials": tables,
        "center": [str(c) for c in mmap.domain.center],
        "radius": str(mmap.domain.radius),
        "name": mmap.name,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
