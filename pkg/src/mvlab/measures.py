"""Probability measures on the real line and the stochastic-order calculus.

Three concrete representations are supported:

* ``Dirac``        a point mass,
* ``Empirical``    finitely many weighted atoms (canonical: sorted, merged),
* ``GridDensity``  a density stored as log-values on a grid and interpolated
                   linearly between grid points.

Everything in the order calculus goes through CDFs and quantile functions.
``mu <=_st nu`` holds exactly when ``F_mu >= F_nu`` pointwise, and the
p-Wasserstein distance is the L^p distance between quantile functions.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

LOG_TRUNCATION = 60.0
WEIGHT_FLOOR = 1e-15
DEFAULT_TOL = 1e-9

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


def _check_u(u) -> np.ndarray:
    u_arr = np.asarray(u, dtype=float)
    if np.any(~(u_arr > 0)) or np.any(~(u_arr < 1)):
        raise ValueError("quantile level must lie in the open interval (0, 1)")
    return u_arr


class Measure1D:
    """Common interface; see the concrete subclasses."""

    kind: str = ""

    def cdf(self, x):
        raise NotImplementedError

    def _quantile(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def quantile(self, u):
        """Generalized inverse ``inf{x : F(x) >= u}`` for ``u`` in (0, 1)."""
        u_arr = _check_u(u)
        out = self._quantile(np.atleast_1d(u_arr))
        return float(out[0]) if np.ndim(u) == 0 else out.reshape(u_arr.shape)

    def moment(self, k: int) -> float:
        raise NotImplementedError

    @property
    def mean(self) -> float:
        return self.moment(1)

    @property
    def second_moment(self) -> float:
        return self.moment(2)

    @property
    def variance(self) -> float:
        return max(self.second_moment - self.mean**2, 0.0)

    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    def eval_points(self) -> np.ndarray:
        """Points where the CDF changes shape (atoms or grid nodes)."""
        raise NotImplementedError

    def u_breaks(self) -> np.ndarray:
        """Levels in (0, 1) where the quantile function changes shape."""
        raise NotImplementedError

    def atoms(self) -> tuple[np.ndarray, np.ndarray]:
        """A discrete version: exact for atomic measures, cell centroids for grids."""
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Dirac(Measure1D):
    point: float
    kind = "dirac"

    def __post_init__(self) -> None:
        if not math.isfinite(self.point):
            raise ValueError("Dirac point must be finite")
        object.__setattr__(self, "point", float(self.point))

    def cdf(self, x):
        out = (np.asarray(x, dtype=float) >= self.point).astype(float)
        return float(out) if np.ndim(x) == 0 else out

    def _quantile(self, u):
        return np.full(u.shape, self.point)

    def moment(self, k: int) -> float:
        return self.point**k

    def support(self):
        return self.point, self.point

    def eval_points(self):
        return np.array([self.point])

    def u_breaks(self):
        return np.empty(0)

    def atoms(self):
        return np.array([self.point]), np.array([1.0])

    def to_json(self) -> dict:
        return {"type": "dirac", "point": self.point}

    def __repr__(self) -> str:
        return f"Dirac({self.point!r})"


@dataclass(frozen=True, eq=False)
class Empirical(Measure1D):
    """Weighted atoms.  Construction canonicalizes: sorts, merges duplicates,
    drops weights below 1e-15 and renormalizes when needed."""

    atoms_: np.ndarray
    weights: np.ndarray
    _cum: np.ndarray = field(init=False, repr=False)
    kind = "empirical"

    def __init__(self, atoms: Sequence[float], weights: Optional[Sequence[float]] = None):
        a = np.asarray(atoms, dtype=float).ravel()
        if a.size == 0:
            raise ValueError("empirical measure needs at least one atom")
        if not np.all(np.isfinite(a)):
            raise ValueError("atoms must be finite")
        if weights is None:
            w = np.full(a.size, 1.0 / a.size)
        else:
            w = np.asarray(weights, dtype=float).ravel()
            if w.shape != a.shape:
                raise ValueError("atoms and weights differ in length")
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError("weights must be nonnegative and finite")
        order = np.argsort(a, kind="stable")
        a, w = a[order], w[order]
        changed = False
        if a.size > 1 and np.any(a[1:] == a[:-1]):
            uniq, start = np.unique(a, return_index=True)
            w = np.add.reduceat(w, start)
            a = uniq
            changed = True
        total = w.sum()
        if not total > 0:
            raise ValueError("weights sum to zero")
        small = w / total < WEIGHT_FLOOR
        if np.any(small):
            a, w = a[~small], w[~small]
            changed = True
        total = w.sum()
        if changed or abs(total - 1.0) > 1e-12:
            w = w / total
        cum = np.cumsum(w)
        cum[-1] = 1.0
        object.__setattr__(self, "atoms_", _readonly(a))
        object.__setattr__(self, "weights", _readonly(w))
        object.__setattr__(self, "_cum", _readonly(cum))

    @property
    def points(self) -> np.ndarray:
        return self.atoms_

    @property
    def n_atoms(self) -> int:
        return int(self.atoms_.size)

    def cdf(self, x):
        x_arr = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.atoms_, x_arr, side="right")
        out = np.where(idx > 0, self._cum[np.maximum(idx - 1, 0)], 0.0)
        return float(out) if np.ndim(x) == 0 else out

    def _quantile(self, u):
        idx = np.searchsorted(self._cum, u, side="left")
        return self.atoms_[np.minimum(idx, self.atoms_.size - 1)]

    def moment(self, k: int) -> float:
        return float(np.dot(self.weights, self.atoms_**k))

    def support(self):
        return float(self.atoms_[0]), float(self.atoms_[-1])

    def eval_points(self):
        return np.asarray(self.atoms_)

    def u_breaks(self):
        return np.asarray(self._cum[:-1])

    def atoms(self):
        return np.asarray(self.atoms_), np.asarray(self.weights)

    @property
    def effective_size(self) -> float:
        return float(1.0 / np.sum(self.weights**2))

    def to_json(self) -> dict:
        return {"type": "empirical", "atoms": self.atoms_.tolist(), "weights": self.weights.tolist()}

    def __repr__(self) -> str:
        return f"Empirical(n_atoms={self.n_atoms}, support={self.support()})"


@dataclass(frozen=True, eq=False)
class GridDensity(Measure1D):
    """Density exp(log_pdf) / normalizer, linear between grid nodes.

    The trapezoid rule integrates the interpolated density exactly, so the
    CDF is piecewise quadratic and the quantile function has a closed form
    on every cell.
    """

    grid: np.ndarray
    log_pdf: np.ndarray
    normalizer: float
    _pdf: np.ndarray = field(init=False, repr=False)
    _cum: np.ndarray = field(init=False, repr=False)
    kind = "grid"

    def __init__(self, grid: Sequence[float], log_pdf: Sequence[float], normalizer: float):
        g = np.asarray(grid, dtype=float).ravel()
        lp = np.asarray(log_pdf, dtype=float).ravel()
        if g.size < 2 or g.shape != lp.shape:
            raise ValueError("grid and log_pdf must have equal length >= 2")
        if np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing")
        if not (normalizer > 0 and math.isfinite(normalizer)):
            raise ValueError("normalizer must be positive and finite")
        pdf = np.exp(lp) / normalizer
        cells = 0.5 * (pdf[1:] + pdf[:-1]) * np.diff(g)
        total = cells.sum()
        if abs(total - 1.0) > 1e-8:
            raise ValueError(f"density integrates to {total}, not 1")
        cum = np.r_[0.0, np.cumsum(cells)] / total
        cum[-1] = 1.0
        object.__setattr__(self, "grid", _readonly(g))
        object.__setattr__(self, "log_pdf", _readonly(lp))
        object.__setattr__(self, "normalizer", float(normalizer))
        object.__setattr__(self, "_pdf", _readonly(pdf / total))
        object.__setattr__(self, "_cum", _readonly(cum))

    @classmethod
    def from_log_pdf(cls, grid, log_pdf, truncate: float = LOG_TRUNCATION) -> "GridDensity":
        """Normalize unnormalized log-density values, dropping far tails."""
        g = np.asarray(grid, dtype=float)
        lp = np.asarray(log_pdf, dtype=float)
        top = float(np.max(lp))
        keep = np.nonzero(lp >= top - truncate)[0]
        lo, hi = max(keep[0] - 1, 0), min(keep[-1] + 1, g.size - 1)
        g, lp = g[lo : hi + 1], lp[lo : hi + 1]
        shifted = lp - top
        z = float(np.sum(0.5 * (np.exp(shifted[1:]) + np.exp(shifted[:-1])) * np.diff(g)))
        return cls(g, shifted, z)

    @classmethod
    def gaussian(cls, mean: float = 0.0, std: float = 1.0, n: int = 4001, width: float = 11.0) -> "GridDensity":
        g = np.linspace(mean - width * std, mean + width * std, n)
        return cls.from_log_pdf(g, -0.5 * ((g - mean) / std) ** 2)

    @property
    def pdf_values(self) -> np.ndarray:
        return self._pdf

    def pdf(self, x):
        return np.interp(x, self.grid, self._pdf, left=0.0, right=0.0)

    def cdf(self, x):
        x_arr = np.asarray(x, dtype=float)
        g, f, c = self.grid, self._pdf, self._cum
        j = np.clip(np.searchsorted(g, x_arr, side="right") - 1, 0, g.size - 2)
        h = g[j + 1] - g[j]
        t = np.clip(x_arr - g[j], 0.0, h)
        slope = (f[j + 1] - f[j]) / h
        val = c[j] + f[j] * t + 0.5 * slope * t * t
        val = np.where(x_arr < g[0], 0.0, np.where(x_arr >= g[-1], 1.0, np.clip(val, 0.0, 1.0)))
        return float(val) if np.ndim(x) == 0 else val

    def _quantile(self, u):
        g, f, c = self.grid, self._pdf, self._cum
        j = np.clip(np.searchsorted(c, u, side="left") - 1, 0, g.size - 2)
        h = g[j + 1] - g[j]
        rest = np.maximum(u - c[j], 0.0)
        a = 0.5 * (f[j + 1] - f[j]) / h
        b = f[j]
        disc = np.sqrt(np.maximum(b * b + 4.0 * a * rest, 0.0))
        denom = b + disc
        t = np.where(denom > 0, 2.0 * rest / np.where(denom > 0, denom, 1.0), 0.0)
        return g[j] + np.clip(t, 0.0, h)

    def moment(self, k: int) -> float:
        # Simpson per cell is exact for polynomial times linear density up to k = 2
        g, f = self.grid, self._pdf
        xm = 0.5 * (g[1:] + g[:-1])
        fm = 0.5 * (f[1:] + f[:-1])
        h = np.diff(g)
        return float(np.sum(h / 6.0 * (g[:-1] ** k * f[:-1] + 4.0 * xm**k * fm + g[1:] ** k * f[1:])))

    def support(self):
        return float(self.grid[0]), float(self.grid[-1])

    def eval_points(self):
        return np.asarray(self.grid)

    def u_breaks(self):
        c = self._cum[1:-1]
        return np.asarray(c[(c > 0) & (c < 1)])

    def atoms(self):
        g, f = self.grid, self._pdf
        h = np.diff(g)
        mass = np.diff(self._cum)
        # centroid of a linear density on [g0, g1]
        num = h * (f[:-1] * (2 * g[:-1] + g[1:]) + f[1:] * (g[:-1] + 2 * g[1:])) / 6.0
        den = 0.5 * h * (f[:-1] + f[1:])
        cen = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.5 * (g[:-1] + g[1:]))
        keep = mass > 0
        return cen[keep], mass[keep]

    def to_json(self) -> dict:
        return {"type": "grid", "grid": self.grid.tolist(), "log_pdf": self.log_pdf.tolist(), "normalizer": self.normalizer}

    def __repr__(self) -> str:
        return f"GridDensity(n={self.grid.size}, support={self.support()})"


# --------------------------------------------------------------------------
# serialization


def measure_from_json(obj: dict) -> Measure1D:
    kind = obj.get("type")
    if kind == "dirac":
        return Dirac(float(obj["point"]))
    if kind == "empirical":
        return Empirical(obj["atoms"], obj.get("weights"))
    if kind == "grid":
        return GridDensity(obj["grid"], obj["log_pdf"], float(obj["normalizer"]))
    raise ValueError(f"unknown measure type {kind!r}")


# --------------------------------------------------------------------------
# Wasserstein distance


def _merged_u_breaks(*measures: Measure1D) -> np.ndarray:
    parts = [np.array([0.0, 1.0])] + [m.u_breaks() for m in measures]
    return np.unique(np.concatenate(parts))


def wasserstein(mu: Measure1D, nu: Measure1D, p: float = 2.0) -> float:
    """p-Wasserstein distance via the quantile formula.

    The levels where either quantile function has a kink or a jump are
    merged, and each sub-interval is integrated with 8-point Gauss-Legendre;
    for atomic measures this is exact.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if isinstance(nu, Dirac) and p == 2.0:
        mu, nu = nu, mu
    if isinstance(mu, Dirac) and p == 2.0:
        c = mu.point
        return math.sqrt(max(nu.second_moment - 2 * c * nu.mean + c * c, 0.0))
    br = _merged_u_breaks(mu, nu)
    lo, hi = br[:-1], br[1:]
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    u = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    u = np.clip(u, 1e-300, 1 - 1e-16)
    diff = np.abs(mu._quantile(u) - nu._quantile(u)) ** p
    total = float(np.sum((diff.reshape(-1, _GL_NODES.size) @ _GL_WEIGHTS) * half))
    return total ** (1.0 / p)


# --------------------------------------------------------------------------
# stochastic order


class Relation(str, enum.Enum):
    LeqStrict = "LeqStrict"
    Equal = "Equal"
    GeqStrict = "GeqStrict"
    Unrelated = "Unrelated"


@dataclass(frozen=True)
class OrderResult:
    """``max_violation_leq`` is max(F_nu - F_mu): positive values contradict
    mu <=_st nu.  ``max_violation_geq`` is max(F_mu - F_nu)."""

    relation: Relation
    max_violation_leq: float
    max_violation_geq: float
    tol: float

    @property
    def leq(self) -> bool:
        return self.relation in (Relation.LeqStrict, Relation.Equal)

    @property
    def geq(self) -> bool:
        return self.relation in (Relation.GeqStrict, Relation.Equal)

    def to_json(self) -> dict:
        return {
            "relation": self.relation.value,
            "max_violation_leq": self.max_violation_leq,
            "max_violation_geq": self.max_violation_geq,
            "tol": self.tol,
        }


def ks_tolerance(n: float, level: float = 1.36) -> float:
    """Twice the Kolmogorov-Smirnov noise level for an empirical CDF of size n."""
    return 2.0 * level / math.sqrt(n)


def comparison_points(*measures: Measure1D) -> np.ndarray:
    pts = np.unique(np.concatenate([m.eval_points() for m in measures]))
    if pts.size > 1:
        pts = np.sort(np.r_[pts, 0.5 * (pts[1:] + pts[:-1])])
    return pts


def compare_st(mu: Measure1D, nu: Measure1D, tol: float = DEFAULT_TOL) -> OrderResult:
    """First-order stochastic comparison through CDFs on a merged grid."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    x = comparison_points(mu, nu)
    gap = np.asarray(nu.cdf(x)) - np.asarray(mu.cdf(x))
    v_leq = float(max(np.max(gap), 0.0))
    v_geq = float(max(np.max(-gap), 0.0))
    leq, geq = v_leq <= tol, v_geq <= tol
    if leq and geq:
        rel = Relation.Equal
    elif leq:
        rel = Relation.LeqStrict
    elif geq:
        rel = Relation.GeqStrict
    else:
        rel = Relation.Unrelated
    return OrderResult(rel, v_leq, v_geq, tol)


# --------------------------------------------------------------------------
# families, suprema and order bounds


@dataclass(frozen=True)
class ParametricFamily:
    """An infinite family ``member(n)`` for ``n >= start``.

    ``upper_tail(u)`` should return sup_n member(n)((u, inf)) and
    ``lower_tail(u)`` sup_n member(n)((-inf, -u)); when they are missing
    they are estimated from the first ``enumerate_limit`` members.
    """

    member: Callable[[int], Measure1D]
    start: int = 1
    upper_tail: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lower_tail: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "family"
    enumerate_limit: int = 200

    def members(self, n_max: int) -> list[Measure1D]:
        return [self.member(n) for n in range(self.start, n_max + 1)]


def _remark_weight(n):
    n = np.asarray(n, dtype=float)
    return 1.0 / (n * n * np.log(n))


def slow_tail_family() -> ParametricFamily:
    """mu_n = w_n delta_{-n} + (1 - 2 w_n) delta_0 + w_n delta_n, w_n = 1/(n^2 log n), n >= 3.

    Every member has a finite second moment and the family is uniformly
    bounded in second moment, yet the supremum tail integral diverges, so
    the family has neither an upper nor a lower bound in the stochastic
    order on measures with finite second moment.
    """

    def member(n: int) -> Measure1D:
        w = float(_remark_weight(n))
        return Empirical([-n, 0.0, n], [w, 1 - 2 * w, w])

    def tail(u):
        k = np.maximum(np.floor(np.asarray(u, dtype=float)) + 1.0, 3.0)
        return _remark_weight(k)

    return ParametricFamily(member, start=3, upper_tail=tail, lower_tail=tail, name="slow_tail")


def _pointwise_cdf(family: Sequence[Measure1D], reducer) -> tuple[np.ndarray, np.ndarray]:
    if all(not isinstance(m, GridDensity) for m in family):
        x = np.unique(np.concatenate([m.eval_points() for m in family]))
    else:
        base = np.unique(np.concatenate([m.eval_points() for m in family]))
        # refine so that the discretized bound is tight
        extra = np.linspace(base[0], base[-1], 20001)
        x = np.unique(np.r_[base, extra])
    vals = reducer(np.vstack([np.asarray(m.cdf(x)) for m in family]), axis=0)
    return x, np.maximum.accumulate(np.clip(vals, 0.0, 1.0))


def _as_list(family) -> list[Measure1D]:
    if isinstance(family, ParametricFamily):
        bounds = order_bounds(family)
        if not (bounds.above and bounds.below):
            raise UnboundedFamilyError(
                "parametric family is not order-bounded", max(bounds.upper_integral, bounds.lower_integral)
            )
        return family.members(family.start + family.enumerate_limit - 1)
    out = list(family)
    if not out:
        raise ValueError("family must be nonempty")
    return out


class UnboundedFamilyError(ValueError):
    def __init__(self, message: str, tail_integral: float):
        super().__init__(f"{message}; tail integral partial sum {tail_integral:.6g}")
        self.tail_integral = tail_integral


def family_supremum(family) -> Measure1D:
    """Least upper bound: CDF = pointwise minimum of the member CDFs.

    Exact for atomic members.  With grid members the CDF is sampled on a
    fine grid and the mass of each cell is put at its right end, which
    keeps the result an upper bound of every member.
    """
    members = _as_list(family)
    if len(members) == 1:
        return members[0]
    x, G = _pointwise_cdf(members, np.min)
    w = np.diff(np.r_[0.0, G])
    return Empirical(x, np.maximum(w, 0.0))


def family_infimum(family) -> Measure1D:
    """Greatest lower bound: CDF = pointwise maximum of the member CDFs."""
    members = _as_list(family)
    if len(members) == 1:
        return members[0]
    x, H = _pointwise_cdf(members, np.max)
    if all(not isinstance(m, GridDensity) for m in members):
        w = np.diff(np.r_[0.0, H])
        return Empirical(x, np.maximum(w, 0.0))
    # mass of each cell [x_j, x_{j+1}) sits at its left end, which keeps the
    # CDF above every member
    weights = np.diff(H)
    weights[0] += H[0]
    return Empirical(x[:-1], np.maximum(weights, 0.0))


@dataclass
class OrderBounds:
    above: bool
    below: bool
    upper_witness: Optional[Measure1D] = None
    lower_witness: Optional[Measure1D] = None
    upper_integral: float = 0.0
    lower_integral: float = 0.0
    upper_decade_fraction: float = 0.0
    lower_decade_fraction: float = 0.0

    def to_json(self) -> dict:
        return {
            "above": self.above,
            "below": self.below,
            "upper_integral": self.upper_integral,
            "lower_integral": self.lower_integral,
            "upper_decade_fraction": self.upper_decade_fraction,
            "lower_decade_fraction": self.lower_decade_fraction,
        }


def _tail_integral_test(tail: Callable, horizon: int, threshold: float) -> tuple[bool, float, float]:
    """Partial sums of the integral of tail(u) * u over [0, horizon] on unit cells.

    Returns (bounded, integral, last-decade fraction).  The tail is treated
    as constant on each cell [k-1, k), using its value at the midpoint.
    """
    k = np.arange(1, int(horizon) + 1, dtype=float)
    cell = tail(k - 0.5) * (2.0 * k - 1.0) / 2.0
    partial = np.cumsum(cell)
    total = float(partial[-1])
    if total <= 0:
        return True, 0.0, 0.0
    cut = int(horizon) // 10
    last = total - float(partial[cut - 1]) if cut >= 1 else total
    frac = last / total
    return frac <= threshold, total, frac


def _estimated_tail(family: ParametricFamily, upper: bool) -> Callable:
    members = family.members(family.start + family.enumerate_limit - 1)

    def tail(u):
        u = np.asarray(u, dtype=float)
        if upper:
            vals = [1.0 - np.asarray(m.cdf(u)) for m in members]
        else:
            vals = [np.asarray(m.cdf(np.nextafter(-u, -np.inf))) for m in members]
        return np.max(np.vstack(vals), axis=0)

    return tail


def _positive_part_second_moment(m: Measure1D, sign: float) -> float:
    a, w = m.atoms() if not isinstance(m, GridDensity) else (m.grid, None)
    if isinstance(m, GridDensity):
        g, f = m.grid, m.pdf_values
        y = np.maximum(sign * g, 0.0) ** 2 * f
        return float(np.trapezoid(y, g))
    return float(np.dot(w, np.maximum(sign * a, 0.0) ** 2))


def order_bounds(family, horizon: int = 1_000_000, threshold: float = 0.01) -> OrderBounds:
    """Decide whether a family has upper and lower bounds in the stochastic order
    among measures with finite second moment.

    Finite families are always bounded and the witnesses are the lattice
    supremum and infimum.  Parametric families are decided by the
    divergence test on the supremum-tail integral.
    """
    if isinstance(family, ParametricFamily):
        up = family.upper_tail or _estimated_tail(family, True)
        lo = family.lower_tail or _estimated_tail(family, False)
        a_ok, a_int, a_frac = _tail_integral_test(up, horizon, threshold)
        b_ok, b_int, b_frac = _tail_integral_test(lo, horizon, threshold)
        res = OrderBounds(a_ok, b_ok, None, None, a_int, b_int, a_frac, b_frac)
        if a_ok and b_ok:
            res.upper_witness = family_supremum(family.members(family.start + family.enumerate_limit - 1))
            res.lower_witness = family_infimum(family.members(family.start + family.enumerate_limit - 1))
        return res
    members = _as_list(family)
    sup = family_supremum(members)
    inf = family_infimum(members)
    # integral of u * nu((u, inf)) over u > 0 equals E[(X+)^2] / 2
    return OrderBounds(
        True,
        True,
        sup,
        inf,
        0.5 * _positive_part_second_moment(sup, 1.0),
        0.5 * _positive_part_second_moment(inf, -1.0),
    )


def uniform_integrability_profile(bounds: OrderBounds, levels: Sequence[float]) -> np.ndarray:
    """Upper bound on sup over the family of E[X^2; |X| > N] for each level N.

    For an order-bounded family every member's right tail is dominated by
    the upper witness and its left tail by the lower witness, so the
    profile must tend to zero.
    """
    if bounds.upper_witness is None or bounds.lower_witness is None:
        raise ValueError("profile needs both witnesses")
    out = []
    for n in levels:
        a, w = bounds.upper_witness.atoms()
        right = float(np.dot(w, np.where(a > n, a * a, 0.0)))
        a, w = bounds.lower_witness.atoms()
        left = float(np.dot(w, np.where(a < -n, a * a, 0.0)))
        out.append(right + left)
    return np.asarray(out)


# --------------------------------------------------------------------------
# order interval projection and sampling


def project_to_order_interval(mu: Measure1D, lower: Measure1D, upper: Measure1D, tol: float = DEFAULT_TOL) -> tuple[Measure1D, float]:
    """Nearest point in W2 of the order interval [lower, upper].

    The interval consists of the measures whose quantile functions lie
    between those of the endpoints, so the projection clamps the quantile
    function of ``mu`` pointwise.
    """
    if not compare_st(lower, upper, tol).leq:
        raise ValueError("lower and upper are not ordered")
    if compare_st(lower, mu, tol).leq and compare_st(mu, upper, tol).leq:
        return mu, 0.0
    br = _merged_u_breaks(mu, lower, upper)
    atomic = not any(isinstance(m, GridDensity) for m in (mu, lower, upper))
    if not atomic:
        br = np.unique(np.r_[br, np.linspace(0.0, 1.0, 4097)])
    a, b = br[:-1], br[1:]
    keep = b > a
    a, b = a[keep], b[keep]
    mid = 0.5 * (a + b)
    q = mu._quantile(mid)
    if atomic:
        q = np.clip(q, lower._quantile(mid), upper._quantile(mid))
    else:
        # constant on the cell and still between the endpoint quantiles on the whole cell
        lo_edge = lower._quantile(np.clip(np.nextafter(b, 0.0), 1e-300, 1.0 - 1e-16))
        hi_edge = upper._quantile(np.clip(a, 1e-300, 1.0 - 1e-16))
        ok = lo_edge <= hi_edge
        lo_c = np.where(ok, lo_edge, lower._quantile(mid))
        hi_c = np.where(ok, hi_edge, upper._quantile(mid))
        q = np.clip(q, lo_c, hi_c)
    proj = Empirical(q, b - a)
    return proj, wasserstein(mu, proj, 2.0)


def sample(mu: Measure1D, n: int, seed: int) -> Empirical:
    """Inverse-CDF sample of size n, deterministic in the seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    u = np.random.default_rng(seed).random(n)
    u = np.clip(u, 1e-300, 1.0 - 1e-16)
    return Empirical(mu._quantile(u))


def stratified_uniforms(n: int, seed: int) -> np.ndarray:
    """One uniform in each of the n strata [i/n, (i+1)/n)."""
    u = (np.arange(n) + np.random.default_rng(seed).random(n)) / n
    return np.clip(u, 1e-300, 1.0 - 1e-16)


# --------------------------------------------------------------------------
# order-unrelated perturbation


def _exp_tail_offsets(k: int) -> np.ndarray:
    """Conditional quantiles of a unit exponential at levels (j + 1/2)/k."""
    return -np.log1p(-(np.arange(k) + 0.5) / k)


def _claim_measure(a, w, c, eps, k) -> Empirical:
    inner = (a > -c) & (a < c)
    p0 = float(w[inner].sum())
    alpha = 0.5 * math.exp(-c / eps)  # mass of the two exponential tails together
    if alpha >= p0:
        raise ValueError("tail mass exceeds the central mass")
    new_w = w.copy()
    new_w[inner] *= (p0 - alpha) / p0
    off = eps * _exp_tail_offsets(k)
    tail_w = np.full(k, 0.5 * alpha / k)
    atoms = np.r_[a, -c - off, c + off]
    weights = np.r_[new_w, tail_w, tail_w]
    return Empirical(atoms, weights)


def _move_tail(nu: Empirical, target: float, eta: float, side: str) -> Empirical:
    """Move mass eta from the outermost atoms on one side of nu to ``target``."""
    a, w = nu.atoms()
    a, w = a.copy(), w.copy()
    order = np.arange(a.size) if side == "left" else np.arange(a.size)[::-1]
    need = eta
    for i in order:
        if need <= 0:
            break
        take = min(w[i] * 0.5, need)
        w[i] -= take
        need -= take
    moved = eta - need
    return Empirical(np.r_[a, target], np.r_[w, moved])


def perturb_order_unrelated(
    mu: Measure1D,
    center: Measure1D,
    delta: float,
    tail_atoms: int = 16,
    max_attempts: int = 60,
    tol: float = DEFAULT_TOL,
) -> Empirical:
    """A measure within W2 distance 2*delta of ``center`` that is order-unrelated to ``mu``.

    First the center gets two thin exponential tails outside [-c, c], paid
    for by the mass inside (-c, c), with the scale chosen so that the W2
    distance is about delta/2.  If ``mu`` is still comparable, a small
    amount of tail mass is moved beyond the extreme support of ``mu`` on
    the side that is missing a witness.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    a, w = center.atoms()
    c = max(abs(center.quantile(0.25)), abs(center.quantile(0.75))) + 1.0

    def dist(eps: float) -> float:
        return wasserstein(_claim_measure(a, w, c, eps, tail_atoms), center, 2.0)

    eps_hi = 0.99 * min(1.0, c)
    target = 0.5 * delta
    if dist(eps_hi) <= target:
        eps = eps_hi
    else:
        lo, hi = math.log(c / 700.0), math.log(eps_hi)
        for _ in range(max_attempts):
            midp = 0.5 * (lo + hi)
            if dist(math.exp(midp)) > target:
                hi = midp
            else:
                lo = midp
            if hi - lo < 1e-3:
                break
        eps = math.exp(lo)
    nu = _claim_measure(a, w, c, eps, tail_atoms)
    tail_mass = 0.5 * math.exp(-c / eps)
    check_tol = min(tol, 0.01 * tail_mass / tail_atoms)
    if compare_st(mu, nu, check_tol).relation is Relation.Unrelated:
        return nu

    m_lo, m_hi = mu.support()
    budget = 0.9 * delta
    for _ in range(max_attempts):
        cand = nu
        gap = np.asarray(cand.cdf(comparison_points(mu, cand))) - np.asarray(mu.cdf(comparison_points(mu, cand)))
        if not np.any(gap > check_tol):
            # no point with F_nu > F_mu: add mass to the left of mu
            tgt = m_lo - 1.0
            far = max(abs(tgt - cand.support()[0]), abs(tgt + c))
            eta = min(0.5 * tail_mass, (budget / far) ** 2 * 0.5)
            cand = _move_tail(cand, tgt, eta, "left")
            check_tol = min(check_tol, 0.01 * eta)
        pts = comparison_points(mu, cand)
        gap = np.asarray(cand.cdf(pts)) - np.asarray(mu.cdf(pts))
        if not np.any(gap < -check_tol):
            tgt = m_hi + 1.0
            far = max(abs(tgt - cand.support()[1]), abs(tgt - c))
            eta = min(0.5 * tail_mass, (budget / far) ** 2 * 0.5)
            cand = _move_tail(cand, tgt, eta, "right")
            check_tol = min(check_tol, 0.01 * eta)
        if compare_st(mu, cand, check_tol).relation is Relation.Unrelated and wasserstein(cand, center) < 2 * delta:
            return cand
        budget *= 0.5
    raise RuntimeError("could not build an order-unrelated perturbation inside the ball")
