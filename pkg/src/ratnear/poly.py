"""Exact multivariate polynomials with rational coefficients.

Small on purpose: evaluation (exact or vectorised float), partial
derivatives, and a sup bound on a box. This is the only symbolic
machinery the package needs; map components, their Jacobians and all
higher partials stay exact so that membership tests downstream can be
decided with rational comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidDimensionError


def as_fraction(value) -> Fraction:
    """Exact conversion; floats convert via their binary value."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(value)
    if isinstance(value, str):
        return Fraction(value)
    raise TypeError(f"cannot convert {type(value).__name__} to Fraction")


def is_exact_scalar(value) -> bool:
    return isinstance(value, (int, Fraction))


@dataclass(frozen=True)
class Poly:
    """Polynomial in `nvars` variables, terms keyed by exponent tuple."""

    nvars: int
    terms: tuple  # ((exps, coeff), ...) sorted by exps, coeff Fraction, nonzero

    @staticmethod
    def from_terms(nvars: int, table) -> "Poly":
        if nvars < 1:
            raise InvalidDimensionError(f"nvars={nvars} must be >= 1")
        acc: dict = {}
        for exps, coeff in dict(table).items():
            exps = tuple(int(e) for e in exps)
            if len(exps) != nvars or any(e < 0 for e in exps):
                raise InvalidDimensionError(f"bad exponent tuple {exps} for nvars={nvars}")
            c = as_fraction(coeff)
            if c != 0:
                acc[exps] = acc.get(exps, Fraction(0)) + c
        items = tuple(sorted((e, c) for e, c in acc.items() if c != 0))
        return Poly(nvars, items)

    @staticmethod
    def monomial(nvars: int, exps, coeff=1) -> "Poly":
        return Poly.from_terms(nvars, {tuple(exps): coeff})

    def __call__(self, x):
        """Evaluate at a point (sequence of length nvars). Exact iff x is."""
        if len(x) != self.nvars:
            raise InvalidDimensionError(f"point has {len(x)} coords, expected {self.nvars}")
        total = Fraction(0) if all(is_exact_scalar(v) for v in x) else 0.0
        for exps, coeff in self.terms:
            term = coeff if isinstance(total, Fraction) else float(coeff)
            for v, e in zip(x, exps):
                if e:
                    term = term * v**e
            total = total + term
        return total

    def eval_array(self, X: np.ndarray) -> np.ndarray:
        """Vectorised evaluation; X has shape (..., nvars)."""
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.nvars:
            raise InvalidDimensionError(f"last axis {X.shape[-1]} != nvars {self.nvars}")
        out = np.zeros(X.shape[:-1], dtype=np.float64)
        for exps, coeff in self.terms:
            term = np.full(X.shape[:-1], float(coeff))
            for i, e in enumerate(exps):
                if e == 1:
                    term = term * X[..., i]
                elif e:
                    term = term * X[..., i] ** e
            out += term
        return out

    def diff(self, i: int) -> "Poly":
        if not 0 <= i < self.nvars:
            raise InvalidDimensionError(f"no variable {i} in {self.nvars}-variate polynomial")
        table = {}
        for exps, coeff in self.terms:
            if exps[i] == 0:
                continue
            new = list(exps)
            new[i] -= 1
            table[tuple(new)] = table.get(tuple(new), Fraction(0)) + coeff * exps[i]
        return Poly.from_terms(self.nvars, table)

    def diff_multi(self, beta) -> "Poly":
        """Partial derivative for a multi-index beta (one entry per variable)."""
        p = self
        for i, b in enumerate(beta):
            for _ in range(int(b)):
                p = p.diff(i)
        return p

    def __neg__(self) -> "Poly":
        return Poly(self.nvars, tuple((e, -c) for e, c in self.terms))

    def degree(self) -> int:
        return max((sum(e) for e, _ in self.terms), default=0)

    def is_zero(self) -> bool:
        return not self.terms

    def sup_bound(self, lo, hi) -> Fraction:
        """Upper bound for |p| on the box prod [lo_i, hi_i], term by term."""
        # each monomial is bounded separately; crude but safe and exact
        bound = Fraction(0)
        for exps, coeff in self.terms:
            term = abs(coeff)
            for a, b, e in zip(lo, hi, exps):
                if e:
                    term *= max(abs(as_fraction(a)), abs(as_fraction(b))) ** e
            bound += term
        return bound

    def __str__(self) -> str:
        if not self.terms:
            return "0"
        parts = []
        for exps, coeff in self.terms:
            mono = "*".join(
                f"x{i}" if e == 1 else f"x{i}^{e}" for i, e in enumerate(exps) if e
            )
            parts.append(f"{coeff}" + (f"*{mono}" if mono else ""))
        return " + ".join(parts)
