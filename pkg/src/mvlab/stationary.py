"""Stationary laws of the frozen-mean SDE and the invariant measures they generate.

For a fixed value ``m`` of the mean, the SDE

    dX = (-V'(X) - theta (X - m)) dt + sigma(X) dB

has a unique stationary law ``mu_m`` with log-density (up to a constant)

    phi_m(x) = -2 int_0^x (V'(y) + theta y - theta m) / sigma(y)^2 dy - log sigma(x)^2.

Invariant measures of the mean-field equation are exactly the ``mu_m`` whose
mean equals ``m``, i.e. the zeros of ``F(m) = Z_m (mean(mu_m) - m)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy import optimize

from .measures import GridDensity, Measure1D, compare_st
from .model import Model, zero_crossing_number
from .polynomials import PiecewisePolynomial

TRUNCATION = 60.0
REL_TOL = 1e-10
GRID_POINTS = 4001

_GL16_X, _GL16_W = np.polynomial.legendre.leggauss(16)


class QuadratureError(RuntimeError):
    pass


class RootCountError(RuntimeError):
    pass


class DegenerateModelError(ValueError):
    """Every frozen mean is self-consistent, so invariant measures form a continuum."""


# --------------------------------------------------------------------------
# log-density


class _Exponent:
    """Evaluates phi_m(x) for one model, reusing the m-independent parts."""

    def __init__(self, model: Model):
        self.model = model
        self.theta = model.theta
        self.constant = model.sigma.is_constant
        self.kinks = np.array([b for b in model.vprime.breaks[1:-1]], dtype=float)
        if self.constant:
            self.s2 = model.sigma.value**2
            self.V = model.vprime.antiderivative()
        else:
            sig_breaks = [b for b in model.sigma.poly.breaks[1:-1]]
            self.kinks = np.unique(np.r_[self.kinks, sig_breaks])

    def _cumulative(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """int_0^x of V'/s2, y/s2 and 1/s2, for variable sigma."""
        x = np.asarray(x, dtype=float)
        nodes = np.unique(np.r_[x.ravel(), 0.0, self.kinks[(self.kinks > x.min()) & (self.kinks < x.max())]])
        a, b = nodes[:-1], nodes[1:]
        half = 0.5 * (b - a)
        pts = 0.5 * (a + b)[:, None] + half[:, None] * _GL16_X[None, :]
        inv = 1.0 / self.model.sigma2(pts)
        seg = lambda f: (f * inv) @ _GL16_W * half
        ia = seg(self.model.vprime(pts))
        ib = seg(pts)
        ic = seg(np.ones_like(pts))
        cum = [np.r_[0.0, np.cumsum(v)] for v in (ia, ib, ic)]
        zero = np.searchsorted(nodes, 0.0)
        idx = np.searchsorted(nodes, x)
        return tuple(c[idx] - c[zero] for c in cum)

    def __call__(self, m: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.constant:
            return -2.0 * (self.V(x) + 0.5 * self.theta * x * x - self.theta * m * x) / self.s2 - math.log(self.s2)
        A, B, C = self._cumulative(x)
        return -2.0 * (A + self.theta * B - self.theta * m * C) - np.log(self.model.sigma2(x))


def _drift_roots(model: Model, m: float) -> np.ndarray:
    shifted = model.vprime + PiecewisePolynomial.polynomial([-model.theta * m, model.theta])
    r = shifted.roots()
    return r if r.size else np.array([m])


def _find_edge(phi, start: float, direction: float, level: float, step0: float) -> float:
    """First point beyond ``start`` (in ``direction``) where phi drops to ``level``."""
    prev, step = start, step0
    for _ in range(200):
        x = start + direction * step
        if phi(x) < level:
            f = lambda y: phi(y) - level
            return optimize.brentq(f, min(prev, x), max(prev, x), xtol=1e-12)
        prev, step = x, 2.0 * step
    raise QuadratureError("log-density does not decay; domain search failed")


def _domain(expo: _Exponent, m: float) -> tuple[float, float, float, np.ndarray]:
    roots = _drift_roots(expo.model, m)
    lo, hi = float(roots[0]), float(roots[-1])
    probe = np.r_[roots, np.linspace(lo, hi, 65)] if hi > lo else roots
    vals = expo(m, probe)
    top = float(np.max(vals))
    phi = lambda y: float(expo(m, np.array([y]))[0])
    scale = math.sqrt(max(expo.model.sigma_bounds[1] ** 2, 1e-12) / (2.0 * expo.theta))
    step0 = max(0.25 * scale, 1e-3)
    level = top - TRUNCATION - 1.0
    left = _find_edge(phi, lo, -1.0, level, step0)
    right = _find_edge(phi, hi, 1.0, level, step0)
    return left, right, top, roots


@dataclass
class _Panels:
    nodes: np.ndarray
    weights: np.ndarray


def _adaptive_panels(f, edges: np.ndarray, rel_tol: float = REL_TOL, max_panels: int = 200_000) -> _Panels:
    """Composite 16-point Gauss-Legendre, splitting panels until each local
    estimate changes by less than ``rel_tol`` times the running total."""
    a, b = edges[:-1].astype(float), edges[1:].astype(float)
    done_x, done_w = [], []

    def rule(lo, hi):
        half = 0.5 * (hi - lo)
        x = 0.5 * (lo + hi)[:, None] + half[:, None] * _GL16_X[None, :]
        w = half[:, None] * _GL16_W[None, :]
        return x, w

    total = None
    for _ in range(40):
        mid = 0.5 * (a + b)
        x1, w1 = rule(a, b)
        xl, wl = rule(a, mid)
        xr, wr = rule(mid, b)
        i1 = np.sum(f(x1) * w1, axis=1)
        fl, fr = f(xl), f(xr)
        i2 = np.sum(fl * wl, axis=1) + np.sum(fr * wr, axis=1)
        if total is None:
            total = float(np.sum(i2))
            if not total > 0:
                raise QuadratureError("integrand has no mass on the domain")
        ok = np.abs(i1 - i2) <= rel_tol * total
        done_x.append(np.r_[xl[ok].ravel(), xr[ok].ravel()])
        done_w.append(np.r_[wl[ok].ravel(), wr[ok].ravel()])
        if np.all(ok):
            x = np.concatenate(done_x)
            w = np.concatenate(done_w)
            return _Panels(x, w)
        bad = ~ok
        a = np.r_[a[bad], mid[bad]]
        b = np.r_[mid[bad], b[bad]]
        order = np.argsort(a)
        a, b = a[order], b[order]
        if a.size > max_panels:
            break
    raise QuadratureError(f"adaptive quadrature did not converge ({a.size} unresolved panels)")


# --------------------------------------------------------------------------
# stationary density


@dataclass(frozen=True, eq=False)
class StationaryDensity:
    """The stationary law ``mu_m`` of the frozen-mean SDE.

    ``log_normalizer`` is log Z_m with Z_m = int exp(phi_m).  The cached
    ``mean`` and ``second_moment`` come from adaptive Gauss-Legendre and are
    more accurate than moments of the gridded ``measure``.
    """

    m: float
    model: Model
    grid: np.ndarray
    log_unnormalized: np.ndarray
    log_normalizer: float
    mean: float
    second_moment: float
    f_direct_scaled: float
    f_by_parts_scaled: float
    log_scale: float
    measure: GridDensity = field(repr=False)

    @property
    def normalizer(self) -> float:
        try:
            return math.exp(self.log_normalizer)
        except OverflowError:
            return math.inf

    @property
    def residual(self) -> float:
        return self.mean - self.m

    @property
    def variance(self) -> float:
        return max(self.second_moment - self.mean**2, 0.0)

    def w2_to_point(self, a: float) -> float:
        return math.sqrt(max(self.second_moment - 2 * a * self.mean + a * a, 0.0))

    def to_json(self, include_grid: bool = False) -> dict:
        out = {
            "m": self.m,
            "log_normalizer": self.log_normalizer,
            "mean": self.mean,
            "second_moment": self.second_moment,
        }
        if include_grid:
            out["measure"] = self.measure.to_json()
        return out


def _stationary(model: Model, m: float, expo: Optional[_Exponent] = None, n_grid: int = GRID_POINTS, with_grid: bool = True) -> StationaryDensity:
    expo = expo or _Exponent(model)
    left, right, top, roots = _domain(expo, m)
    edges = np.unique(np.r_[left, right, roots[(roots > left) & (roots < right)], expo.kinks[(expo.kinks > left) & (expo.kinks < right)]])
    n_init = 48
    fine = np.linspace(left, right, n_init + 1)
    edges = np.unique(np.r_[edges, fine])
    dens = lambda x: np.exp(expo(m, x) - top)
    panels = _adaptive_panels(dens, edges)
    x, w = panels.nodes, panels.weights
    e = np.exp(expo(m, x) - top)
    z = float(np.dot(w, e))
    mean = float(np.dot(w, x * e)) / z
    m2 = float(np.dot(w, x * x * e)) / z
    f_direct = float(np.dot(w, (x - m) * e))
    f_bp = float(-np.dot(w, model.vprime(x) * e)) / model.theta
    if with_grid:
        grid = np.linspace(left, right, n_grid)
        lu = expo(m, grid)
        measure = GridDensity.from_log_pdf(grid, lu)
    else:
        grid = np.array([left, right])
        lu = expo(m, grid)
        measure = None
    return StationaryDensity(
        m=float(m),
        model=model,
        grid=grid,
        log_unnormalized=lu,
        log_normalizer=top + math.log(z),
        mean=mean,
        second_moment=m2,
        f_direct_scaled=f_direct,
        f_by_parts_scaled=f_bp,
        log_scale=top,
        measure=measure,
    )


def stationary_density(model: Model, m: float, n_grid: int = GRID_POINTS) -> StationaryDensity:
    """The stationary law of the SDE with the mean-field term frozen at ``m``."""
    return _stationary(model, float(m), n_grid=n_grid)


def self_consistency_F(model: Model, m: float, form: str = "direct") -> float:
    """F(m) with the unnormalized density, in the direct or integrated-by-parts form.

    The value can overflow for extreme parameters; ``normalized_F`` is the
    scale-free version used for root finding.
    """
    s = _stationary(model, float(m), with_grid=False)
    if form == "direct":
        val = s.f_direct_scaled
    elif form == "by_parts":
        val = s.f_by_parts_scaled
    else:
        raise ValueError("form must be 'direct' or 'by_parts'")
    if val == 0.0:
        return 0.0
    log_abs = s.log_scale + math.log(abs(val))
    return math.copysign(math.exp(log_abs) if log_abs < 709.0 else math.inf, val)


def normalized_F(model: Model, m: float, expo: Optional[_Exponent] = None) -> float:
    """mean(mu_m) - m, which has the sign and the zeros of F."""
    s = _stationary(model, float(m), expo=expo, with_grid=False)
    return s.mean - s.m


# --------------------------------------------------------------------------
# invariant measures


@dataclass
class InvariantCatalog:
    model: Model
    roots: np.ndarray
    brackets: list[tuple[float, float]]
    residuals: np.ndarray
    measures: list[StationaryDensity]
    stability: list[str]
    count_bound: int
    search_bracket: tuple[float, float]

    @property
    def count(self) -> int:
        return int(self.roots.size)

    def stable_indices(self) -> list[int]:
        return [i for i, s in enumerate(self.stability) if s == "stable"]

    def rows(self) -> list[dict]:
        return [
            {
                "m_k": float(r),
                "residual": float(res),
                "mean": s.mean,
                "second_moment": s.second_moment,
                "stability_tag": tag,
            }
            for r, res, s, tag in zip(self.roots, self.residuals, self.measures, self.stability)
        ]

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        wr = csv.DictWriter(buf, fieldnames=["m_k", "residual", "mean", "second_moment", "stability_tag"], lineterminator="\n")
        wr.writeheader()
        for row in self.rows():
            wr.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
        return buf.getvalue()

    def to_json(self, include_grids: bool = False) -> dict:
        return {
            "model": self.model.to_json(),
            "count": self.count,
            "count_bound": self.count_bound,
            "search_bracket": list(self.search_bracket),
            "entries": [
                dict(row, bracket=list(br), **({"measure": s.measure.to_json()} if include_grids else {}))
                for row, br, s in zip(self.rows(), self.brackets, self.measures)
            ],
        }


def _scan_constant_sigma(expo: _Exponent, ms: np.ndarray) -> np.ndarray:
    """mean(mu_m) - m on a vector of m values using one shared uniform x-grid."""
    model = expo.model
    doms = [_domain(expo, float(mm)) for mm in (ms[0], ms[len(ms) // 2], ms[-1])]
    left = min(d[0] for d in doms)
    right = max(d[1] for d in doms)
    roots = np.concatenate([d[3] for d in doms])
    span = np.linspace(roots.min() - 1.0, roots.max() + 1.0, 401)
    curv = float(np.max(model.vprime.derivative()(span))) + model.theta
    sd = math.sqrt(expo.s2 / (2.0 * max(curv, 1e-12)))
    n_x = int(np.clip((right - left) / (sd / 20.0), 2000, 40000))
    x = np.linspace(left, right, n_x)
    base = expo(0.0, x)
    tilt = 2.0 * expo.theta / expo.s2
    out = np.empty(ms.size)
    for start in range(0, ms.size, 64):
        block = ms[start : start + 64]
        phi = base[None, :] + tilt * block[:, None] * x[None, :]
        phi -= phi.max(axis=1, keepdims=True)
        e = np.exp(phi)
        out[start : start + 64] = (e @ x) / e.sum(axis=1) - block
    return out


def _scan(expo: _Exponent, ms: np.ndarray) -> np.ndarray:
    if expo.constant:
        return _scan_constant_sigma(expo, ms)
    return np.array([normalized_F(expo.model, float(mm), expo) for mm in ms])


def _hyper_dissipative(model: Model) -> bool:
    vp = model.vprime
    for k in (0, vp.n_pieces - 1):
        c = np.trim_zeros(np.asarray(vp.coeffs[k], dtype=float), "b")
        if len(c) < 2 or (len(c) - 1) % 2 == 0 or c[-1] <= 0:
            return False
    return True


def find_invariant_measures(model: Model, n_grid: int = 512, xtol: float = 1e-12) -> InvariantCatalog:
    """All invariant measures, as zeros of the self-consistency function.

    Sign changes of ``mean(mu_m) - m`` are located on an ``n_grid``-point
    scan over a bracket that is expanded until the end signs lock, then
    each is refined with Brent's method on the accurate quadrature.
    """
    if all(model.vprime.is_zero_piece(k) for k in range(model.vprime.n_pieces)):
        raise DegenerateModelError(
            "V' vanishes identically: mean(mu_m) = m for every m, so every mu_m is invariant"
        )
    expo = _Exponent(model)
    zc = zero_crossing_number(model.vprime)
    vroots = model.vprime.roots()
    lo = float(vroots.min()) - 2.0 if vroots.size else -2.0
    hi = float(vroots.max()) + 2.0 if vroots.size else 2.0
    F = lambda mm: normalized_F(model, mm, expo)
    f_lo, f_hi = F(lo), F(hi)
    while f_lo <= 0 or f_hi >= 0:
        width = hi - lo
        if f_lo <= 0:
            lo -= width
            f_lo = F(lo)
        if f_hi >= 0:
            hi += width
            f_hi = F(hi)
        if max(abs(lo), abs(hi)) > 1e3:
            raise RootCountError("bracket expansion passed |m| = 1000 without locking the end signs")

    def changes(n):
        ms = np.linspace(lo, hi, n)
        vals = _scan(expo, ms)
        vals[0], vals[-1] = f_lo, f_hi
        s = np.sign(vals)
        idx = np.nonzero(s[:-1] * s[1:] <= 0)[0]
        # collapse consecutive indices caused by exact zeros
        brackets = []
        for i in idx:
            if brackets and brackets[-1][1] >= ms[i] and s[i] == 0:
                continue
            brackets.append((ms[i], ms[i + 1]))
        return ms, brackets

    ms, brackets = changes(n_grid)
    if len(brackets) % 2 == 0:
        ms, brackets = changes(2 * n_grid - 1)

    roots, final_brackets = [], []
    step = ms[1] - ms[0]
    for a, b in brackets:
        fa, fb = F(a), F(b)
        widen = 0
        while fa * fb > 0 and widen < 3:
            a, b = a - step, b + step
            fa, fb = F(a), F(b)
            widen += 1
        if fa == 0:
            r = a
        elif fb == 0:
            r = b
        elif fa * fb < 0:
            r = optimize.brentq(F, a, b, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
        else:
            continue
        if roots and abs(r - roots[-1]) < 1e-9:
            continue
        roots.append(r)
        final_brackets.append((float(a), float(b)))

    if zc >= 1 and _hyper_dissipative(model) and len(roots) > zc:
        raise RootCountError(f"found {len(roots)} invariant measures but the zero-crossing bound is {zc}")

    roots_arr = np.asarray(roots)
    measures = [_stationary(model, r, expo) for r in roots_arr]
    residuals = np.array([abs(s.mean - s.m) for s in measures])
    if len(roots) == zc:
        stability = ["stable" if k % 2 == 0 else "unstable" for k in range(len(roots))]
    else:
        stability = ["unknown"] * len(roots)
    return InvariantCatalog(model, roots_arr, final_brackets, residuals, measures, stability, zc, (lo, hi))


def catalog_is_ordered(cat: InvariantCatalog, tol: float = 1e-9) -> bool:
    ok = True
    for s, t in zip(cat.measures[:-1], cat.measures[1:]):
        ok &= compare_st(s.measure, t.measure, tol).leq
    return bool(ok)


# --------------------------------------------------------------------------
# the map mu -> mu_{mean(mu)}


def psi_map(model: Model, mu) -> StationaryDensity:
    """Stationary law with the mean-field term frozen at the mean of ``mu``."""
    m = mu.mean if isinstance(mu, (StationaryDensity, Measure1D)) else float(mu)
    return stationary_density(model, m)


@dataclass
class PsiBallReport:
    passed: bool
    margin: float
    sup_distance: float
    argmax_m: float


def psi_ball_check(model: Model, a: float, r: float, n_grid: int = 41) -> PsiBallReport:
    """Whether the map sends the closed W2-ball around delta_a into the open ball.

    Means of measures in the closed ball fill [a - r, a + r] and the map
    depends only on the mean, so it suffices to maximize
    W2(mu_m, delta_a) over that interval.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    expo = _Exponent(model)

    def dist(mm: float) -> float:
        s = _stationary(model, float(mm), expo, with_grid=False)
        return s.w2_to_point(a)

    ms = np.linspace(a - r, a + r, n_grid)
    vals = np.array([dist(mm) for mm in ms])
    i = int(np.argmax(vals))
    best_m, best = float(ms[i]), float(vals[i])
    lo, hi = ms[max(i - 1, 0)], ms[min(i + 1, n_grid - 1)]
    if hi > lo:
        res = optimize.minimize_scalar(lambda mm: -dist(mm), bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
        if -res.fun > best:
            best_m, best = float(res.x), float(-res.fun)
    return PsiBallReport(best < r, r - best, best, best_m)
