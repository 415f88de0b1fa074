"""Piecewise polynomials on the real line.

Drift terms are restricted to piecewise polynomials so that roots, zero
crossings and growth can be checked exactly instead of by sampling only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.polynomial import polynomial as P

_CONTINUITY_TOL = 1e-9


@dataclass(frozen=True)
class PiecewisePolynomial:
    """A function given by one polynomial per interval.

    ``breaks`` has ``len(coeffs) + 1`` entries, the outer ones may be
    infinite.  Piece ``k`` covers ``[breaks[k], breaks[k + 1])``; the last
    piece also includes its right end.  Coefficients are in ascending
    degree order.
    """

    breaks: tuple[float, ...]
    coeffs: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        b = np.asarray(self.breaks, dtype=float)
        if len(self.coeffs) == 0 or len(b) != len(self.coeffs) + 1:
            raise ValueError("need one coefficient list per interval")
        if np.any(np.diff(b) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        for k in range(1, len(b) - 1):
            left = P.polyval(b[k], self.coeffs[k - 1])
            right = P.polyval(b[k], self.coeffs[k])
            scale = 1.0 + abs(left) + abs(right)
            if abs(left - right) > _CONTINUITY_TOL * scale:
                raise ValueError(f"discontinuity at breakpoint {b[k]}: {left} vs {right}")

    # construction ---------------------------------------------------------

    @classmethod
    def polynomial(cls, coeffs: Sequence[float]) -> "PiecewisePolynomial":
        return cls((-math.inf, math.inf), (tuple(float(c) for c in coeffs),))

    @classmethod
    def from_pieces(cls, pieces: Sequence[Sequence]) -> "PiecewisePolynomial":
        """Build from ``[[lo, hi, [c0, c1, ...]], ...]`` with contiguous pieces."""
        pieces = sorted(pieces, key=lambda p: float(p[0]))
        breaks = [float(pieces[0][0])]
        coeffs = []
        for lo, hi, c in pieces:
            if float(lo) != breaks[-1]:
                raise ValueError("pieces must be contiguous")
            breaks.append(float(hi))
            coeffs.append(tuple(float(v) for v in c))
        return cls(tuple(breaks), tuple(coeffs))

    def to_pieces(self) -> list:
        return [[self.breaks[k], self.breaks[k + 1], list(c)] for k, c in enumerate(self.coeffs)]

    # evaluation -----------------------------------------------------------

    @property
    def n_pieces(self) -> int:
        return len(self.coeffs)

    @property
    def lower(self) -> float:
        return self.breaks[0]

    @property
    def upper(self) -> float:
        return self.breaks[-1]

    def piece_index(self, x: np.ndarray) -> np.ndarray:
        inner = np.asarray(self.breaks[1:-1])
        return np.searchsorted(inner, x, side="right")

    def __call__(self, x):
        x_arr = np.asarray(x, dtype=float)
        if self.n_pieces == 1:
            out = P.polyval(x_arr, self.coeffs[0])
        else:
            idx = self.piece_index(x_arr)
            out = np.empty_like(x_arr)
            for k, c in enumerate(self.coeffs):
                mask = idx == k
                if np.any(mask):
                    out[mask] = P.polyval(x_arr[mask], c)
        if np.ndim(x) == 0:
            return float(out)
        return out

    def derivative(self) -> "PiecewisePolynomial":
        """Piecewise derivative (may be discontinuous, so continuity is not checked)."""
        coeffs = tuple(tuple(P.polyder(c)) if len(c) > 1 else (0.0,) for c in self.coeffs)
        obj = object.__new__(PiecewisePolynomial)
        object.__setattr__(obj, "breaks", self.breaks)
        object.__setattr__(obj, "coeffs", coeffs)
        return obj

    def antiderivative(self) -> "PiecewisePolynomial":
        """Continuous antiderivative that vanishes at 0 (or at the left end if 0 is outside)."""
        anchor = 0.0 if self.lower <= 0.0 <= self.upper else self.lower
        k0 = int(self.piece_index(np.array(anchor)))
        raw = [np.asarray(P.polyint(c), dtype=float) for c in self.coeffs]
        # shift each piece so that the result is continuous and zero at the anchor
        raw[k0] = raw[k0] - np.r_[P.polyval(anchor, raw[k0]), np.zeros(len(raw[k0]) - 1)]
        for k in range(k0 + 1, self.n_pieces):
            b = self.breaks[k]
            raw[k] = raw[k] + np.r_[P.polyval(b, raw[k - 1]) - P.polyval(b, raw[k]), np.zeros(len(raw[k]) - 1)]
        for k in range(k0 - 1, -1, -1):
            b = self.breaks[k + 1]
            raw[k] = raw[k] + np.r_[P.polyval(b, raw[k + 1]) - P.polyval(b, raw[k]), np.zeros(len(raw[k]) - 1)]
        return PiecewisePolynomial(self.breaks, tuple(tuple(r) for r in raw))

    def __add__(self, other: "PiecewisePolynomial") -> "PiecewisePolynomial":
        lo, hi = max(self.lower, other.lower), min(self.upper, other.upper)
        merged = sorted({lo, hi, *[b for b in self.breaks + other.breaks if lo < b < hi]})
        coeffs = []
        for left, right in zip(merged[:-1], merged[1:]):
            probe = _interior_point(left, right)
            a = self.coeffs[int(self.piece_index(np.array(probe)))]
            b = other.coeffs[int(other.piece_index(np.array(probe)))]
            coeffs.append(tuple(P.polyadd(a, b)))
        return PiecewisePolynomial(tuple(merged), tuple(coeffs))

    def degree(self, k: int) -> int:
        c = np.trim_zeros(np.asarray(self.coeffs[k]), "b")
        return len(c) - 1

    # roots ------------------------------------------------------------------

    def piece_roots(self, k: int, tol: float = 1e-9) -> np.ndarray:
        """Real roots of the polynomial of piece ``k`` (anywhere on the line)."""
        c = np.trim_zeros(np.asarray(self.coeffs[k], dtype=float), "b")
        if len(c) <= 1:
            return np.empty(0)
        r = P.polyroots(c)
        scale = 1.0 + np.abs(r)
        real = np.sort(r[np.abs(r.imag) <= tol * scale].real)
        return _polish_roots(c, real)

    def roots(self) -> np.ndarray:
        """Real roots inside each piece's own interval, sorted and de-duplicated."""
        out = []
        for k in range(self.n_pieces):
            lo, hi = self.breaks[k], self.breaks[k + 1]
            r = self.piece_roots(k)
            out.extend(r[(r >= lo) & (r <= hi)])
        if not out:
            return np.empty(0)
        out = np.sort(np.asarray(out))
        keep = np.r_[True, np.diff(out) > 1e-9 * (1.0 + np.abs(out[1:]))]
        return out[keep]

    def is_zero_piece(self, k: int) -> bool:
        return bool(np.all(np.asarray(self.coeffs[k]) == 0.0))


def _interior_point(lo: float, hi: float) -> float:
    if math.isinf(lo) and math.isinf(hi):
        return 0.0
    if math.isinf(lo):
        return hi - 1.0
    if math.isinf(hi):
        return lo + 1.0
    return 0.5 * (lo + hi)


def _polish_roots(c: np.ndarray, roots: np.ndarray) -> np.ndarray:
    """A couple of Newton steps on each root; multiple roots are left as found."""
    dc = P.polyder(c)
    out = roots.copy()
    for _ in range(3):
        f = P.polyval(out, c)
        d = P.polyval(out, dc)
        step = np.where(np.abs(d) > 1e-12 * (1.0 + np.abs(f)), f / np.where(d == 0, 1.0, d), 0.0)
        cand = out - step
        better = np.abs(P.polyval(cand, c)) <= np.abs(f)
        out = np.where(better, cand, out)
    return np.sort(out)


def sign_changes(values: np.ndarray, atol: float = 0.0) -> int:
    """Number of strict sign alternations in a sequence, ignoring (near) zeros."""
    v = np.asarray(values, dtype=float)
    s = np.sign(np.where(np.abs(v) <= atol, 0.0, v))
    s = s[s != 0]
    if s.size < 2:
        return 0
    return int(np.count_nonzero(s[1:] != s[:-1]))
