"""Coefficient triples (V', theta, sigma) for the mean-field SDE.

The interaction is always quadratic, W(x) = theta * x**2 / 2, so the
mean-field drift is -theta * (x - mean).  V' is a piecewise polynomial and
sigma is either constant or a clamped piecewise polynomial.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Optional, Sequence, Union

import numpy as np
from numpy.polynomial import polynomial as P

from .polynomials import PiecewisePolynomial, sign_changes

PRESET_NAMES = (
    "SymmetricDoubleWell",
    "FlatBottomDoubleWell",
    "AsymmetricDoubleWell",
    "MultiWell",
    "PerturbedDoubleWell",
)

FLAT_INNER = 31.0 / 32.0


# --------------------------------------------------------------------------
# diffusion coefficient


@dataclass(frozen=True)
class ConstantSigma:
    value: float

    def __post_init__(self) -> None:
        if not self.value > 0:
            raise ValueError("sigma must be positive")

    def __call__(self, x):
        return np.full_like(np.asarray(x, dtype=float), self.value) if np.ndim(x) else float(self.value)

    def sigma2(self, x):
        return self(x) ** 2

    def bounds(self) -> tuple[float, float]:
        return self.value, self.value

    @property
    def is_constant(self) -> bool:
        return True

    def to_json(self) -> dict:
        return {"type": "constant", "value": self.value}


@dataclass(frozen=True)
class ClampedSigma:
    """sigma(x) = clip(p(x), lo, hi) for a piecewise polynomial p."""

    poly: PiecewisePolynomial
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not (0 < self.lo <= self.hi):
            raise ValueError("need 0 < sigma_lo <= sigma_hi")

    def __call__(self, x):
        out = np.clip(self.poly(np.asarray(x, dtype=float)), self.lo, self.hi)
        return float(out) if np.ndim(x) == 0 else out

    def sigma2(self, x):
        return self(x) ** 2

    def bounds(self) -> tuple[float, float]:
        return self.lo, self.hi

    @property
    def is_constant(self) -> bool:
        return False

    def to_json(self) -> dict:
        return {"type": "clamped", "pieces": self.poly.to_pieces(), "lo": self.lo, "hi": self.hi}


Sigma = Union[ConstantSigma, ClampedSigma]


def sigma_from_json(obj: Any) -> Sigma:
    if isinstance(obj, (int, float)):
        return ConstantSigma(float(obj))
    kind = obj.get("type", "constant")
    if kind == "constant":
        if "sigma2" in obj:
            return ConstantSigma(math.sqrt(float(obj["sigma2"])))
        return ConstantSigma(float(obj["value"]))
    if kind == "clamped":
        return ClampedSigma(PiecewisePolynomial.from_pieces(_pieces_in(obj["pieces"])), float(obj["lo"]), float(obj["hi"]))
    raise ValueError(f"unknown sigma type {kind!r}")


# --------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class Constants:
    """Constants of the standing assumptions; fitted numerically, not proven."""

    L: float
    kappa: float
    alpha: float
    beta: float
    delta: float
    numeric: bool = True


@dataclass(frozen=True)
class Model:
    vprime: PiecewisePolynomial
    theta: float
    sigma: Sigma
    constants: Optional[Constants] = None
    name: str = "custom"
    f_bound: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if self.constants is None:
            object.__setattr__(self, "constants", fit_constants(self.vprime))

    @classmethod
    def from_coefficients(cls, coeffs: Sequence[float], theta: float, sigma: float | Sigma, name: str = "custom") -> "Model":
        sig = sigma if isinstance(sigma, (ConstantSigma, ClampedSigma)) else ConstantSigma(float(sigma))
        return cls(PiecewisePolynomial.polynomial(coeffs), float(theta), sig, name=name)

    def drift(self, x, m: float):
        """Frozen-mean drift -V'(x) - theta (x - m)."""
        return -self.vprime(x) - self.theta * (np.asarray(x) - m)

    def sigma2(self, x):
        return self.sigma.sigma2(x)

    @property
    def sigma_bounds(self) -> tuple[float, float]:
        return self.sigma.bounds()

    def with_params(self, theta: float | None = None, sigma: float | Sigma | None = None) -> "Model":
        kw: dict[str, Any] = {}
        if theta is not None:
            kw["theta"] = float(theta)
        if sigma is not None:
            kw["sigma"] = sigma if isinstance(sigma, (ConstantSigma, ClampedSigma)) else ConstantSigma(float(sigma))
        return replace(self, **kw)

    def is_symmetric(self) -> bool:
        """True when V' is odd and sigma is even, checked on probe points."""
        x = np.linspace(0.05, 7.3, 97)
        v = self.vprime(x) + self.vprime(-x)
        s = self.sigma2(x) - self.sigma2(-x)
        scale = 1.0 + np.abs(self.vprime(x))
        return bool(np.all(np.abs(v) <= 1e-12 * scale) and np.all(np.abs(s) <= 1e-12))

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "vprime": self.vprime.to_pieces(),
            "theta": self.theta,
            "sigma": self.sigma.to_json(),
            "constants": asdict(self.constants) if self.constants else None,
            "f_bound": self.f_bound,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Model":
        if "preset" in obj:
            sigma = obj.get("sigma")
            if sigma is None and "sigma2" in obj:
                sigma = math.sqrt(float(obj["sigma2"]))
            return preset(obj["preset"], float(obj["theta"]), sigma_from_json(sigma))
        consts = obj.get("constants")
        return cls(
            PiecewisePolynomial.from_pieces(_pieces_in(obj["vprime"])),
            float(obj["theta"]),
            sigma_from_json(obj["sigma"]),
            Constants(**consts) if consts else None,
            obj.get("name", "custom"),
            obj.get("f_bound"),
        )


def _pieces_in(pieces) -> list:
    """Piece list from JSON; ``null`` stands for an unbounded end."""
    return [
        [-math.inf if lo is None else float(lo), math.inf if hi is None else float(hi), [float(c) for c in cs]]
        for lo, hi, cs in pieces
    ]


# --------------------------------------------------------------------------
# presets

INF = math.inf


def _poly_from_roots(roots: Sequence[float]) -> tuple[float, ...]:
    return tuple(float(c) for c in P.polyfromroots(roots))


def _vprime_for(name: str, f: PiecewisePolynomial | None = None) -> PiecewisePolynomial:
    if name == "SymmetricDoubleWell":
        return PiecewisePolynomial.polynomial([0.0, -1.0, 0.0, 1.0])
    if name == "FlatBottomDoubleWell":
        a2 = FLAT_INNER**2
        outer = (0.0, -1.0, 0.0, 1.0)
        inner = (0.0, -a2, 0.0, 1.0)
        zero = (0.0,)
        return PiecewisePolynomial(
            (-INF, -1.0, -FLAT_INNER, FLAT_INNER, 1.0, INF),
            (outer, zero, inner, zero, outer),
        )
    if name == "AsymmetricDoubleWell":
        return PiecewisePolynomial.polynomial(_poly_from_roots([0.0, 1.0, -2.0]))
    if name == "MultiWell":
        return PiecewisePolynomial.polynomial(_poly_from_roots([0.0, 1.0, -1.0, 2.0, -2.0]))
    if name == "PerturbedDoubleWell":
        f = default_perturbation() if f is None else f
        return PiecewisePolynomial.polynomial([0.0, -1.0, 0.0, 1.0]) + f
    raise ValueError(f"unknown preset {name!r}; expected one of {PRESET_NAMES}")


def default_perturbation(level: float = 0.1) -> PiecewisePolynomial:
    """A bounded Lipschitz bump: level * clip(x, -1, 1)."""
    return PiecewisePolynomial((-INF, -1.0, 1.0, INF), ((-level,), (0.0, level), (level,)))


def preset(
    name: str,
    theta: float,
    sigma: float | Sigma | None = None,
    *,
    sigma2: float | None = None,
    f: PiecewisePolynomial | None = None,
    f_bound: float | None = None,
) -> Model:
    """One of the named example models.

    ``sigma`` is the diffusion coefficient (not its square); pass
    ``sigma2=`` instead to give the variance scale directly.
    """
    if sigma is None and sigma2 is None:
        raise ValueError("give sigma or sigma2")
    if sigma2 is not None:
        if sigma is not None:
            raise ValueError("give only one of sigma and sigma2")
        sigma = math.sqrt(sigma2)
    sig = sigma if isinstance(sigma, (ConstantSigma, ClampedSigma)) else ConstantSigma(float(sigma))
    vp = _vprime_for(name, f)
    if name == "PerturbedDoubleWell":
        fx = default_perturbation() if f is None else f
        grid = np.linspace(-50, 50, 20001)
        measured = float(np.max(np.abs(fx(grid))))
        if f_bound is None:
            f_bound = measured
        elif measured > f_bound * (1 + 1e-12):
            raise ValueError(f"perturbation exceeds declared bound: {measured} > {f_bound}")
        for k in (0, fx.n_pieces - 1):
            if fx.degree(k) > 0:
                raise ValueError("perturbation must be bounded (constant on unbounded pieces)")
    return Model(vp, float(theta), sig, name=name, f_bound=f_bound)


# --------------------------------------------------------------------------
# zero crossings


def zero_crossing_number(f: PiecewisePolynomial, bracket: tuple[float, float] | None = None) -> int:
    """Number of strict sign alternations of a continuous piecewise polynomial.

    The sign is evaluated at every root, breakpoint and at midpoints between
    them, so no alternation can be missed.  Intervals on which ``f``
    vanishes identically are skipped.
    """
    roots_all = f.roots()
    if bracket is None:
        if roots_all.size:
            bracket = (float(roots_all[0]) - 1.0, float(roots_all[-1]) + 1.0)
        else:
            bracket = (-1.0, 1.0)
    lo, hi = map(float, bracket)
    if not lo < hi:
        raise ValueError("empty bracket")
    outside = roots_all[(roots_all < lo) | (roots_all > hi)]
    if outside.size:
        need = (min(lo, float(outside.min()) - 1.0), max(hi, float(outside.max()) + 1.0))
        raise ValueError(f"bracket [{lo}, {hi}] misses real roots {outside.tolist()}; expand to {need}")
    pts = [lo, hi, *roots_all.tolist(), *[b for b in f.breaks if lo < b < hi]]
    pts = np.unique(np.asarray(pts))
    mids = 0.5 * (pts[:-1] + pts[1:])
    probe = np.sort(np.r_[pts, mids])
    vals = f(probe)
    atol = 1e-12 * max(1.0, float(np.max(np.abs(vals))))
    return sign_changes(vals, atol=atol)


def zero_crossing_number_sampled(values: np.ndarray) -> int:
    """Sign-alternation count of sampled values (for non-polynomial functions)."""
    v = np.asarray(values, dtype=float)
    return sign_changes(v, atol=1e-13 * max(1.0, float(np.max(np.abs(v)))))


def model_zero_crossings(model: Model) -> int:
    return zero_crossing_number(model.vprime)


# --------------------------------------------------------------------------
# standing assumptions


def _unbounded_degrees(vp: PiecewisePolynomial) -> list[int]:
    return [vp.degree(0), vp.degree(vp.n_pieces - 1)]


def _osl_bound(vp: PiecewisePolynomial) -> float:
    """sup over the line of -V'' (exact for piecewise polynomials)."""
    best = -math.inf
    for k in range(vp.n_pieces):
        c = np.trim_zeros(np.asarray(vp.coeffs[k], dtype=float), "b")
        d2 = -P.polyder(c) if len(c) > 1 else np.zeros(1)
        lo, hi = vp.breaks[k], vp.breaks[k + 1]
        d2t = np.trim_zeros(np.asarray(d2), "b")
        if len(d2t) > 1:
            lead = d2t[-1]
            deg = len(d2t) - 1
            if math.isinf(hi) and lead > 0:
                return math.inf
            if math.isinf(lo) and lead * (-1) ** deg > 0:
                return math.inf
        cand = [p for p in (lo, hi) if math.isfinite(p)]
        if len(d2t) > 2:
            crit = P.polyroots(P.polyder(d2t))
            crit = crit[np.abs(crit.imag) < 1e-12].real
            cand.extend(c_ for c_ in crit if lo <= c_ <= hi)
        if not cand:
            cand = [0.0]
        best = max(best, float(np.max(P.polyval(np.asarray(cand), d2t if len(d2t) else [0.0]))))
    return best


def _hd_fit(vp: PiecewisePolynomial, delta: float) -> tuple[float, float]:
    xs = np.linspace(-20.0, 20.0, 321)
    x, y = np.meshgrid(xs, xs, indexing="ij")
    fx, fy = vp(x), vp(y)
    d = np.abs(x - y)
    prod = (x - y) * (fx - fy)
    far = d >= 10.0
    ratio = prod[far] / d[far] ** (2 + delta)
    alpha = 0.5 * float(np.min(ratio))
    beta = float(np.max(-prod + alpha * d ** (2 + delta)))
    return alpha, max(beta, 0.0)


def fit_constants(vp: PiecewisePolynomial) -> Constants:
    kappa = float(max(max(_unbounded_degrees(vp)), 0))
    grid = np.linspace(-10.0, 10.0, 20001)
    growth = float(np.max(np.abs(vp(grid)) / (1.0 + np.abs(grid) ** kappa)))
    osl = _osl_bound(vp)
    delta = max(kappa - 1.0, 0.0)
    alpha, beta = _hd_fit(vp, delta) if delta > 0 else (0.0, 0.0)
    return Constants(L=max(growth, osl if math.isfinite(osl) else growth), kappa=kappa, alpha=alpha, beta=beta, delta=delta)


@dataclass
class AssumptionItem:
    passed: bool
    value: float
    witness: Any = None
    note: str = ""


@dataclass
class AssumptionReport:
    items: dict[str, AssumptionItem] = field(default_factory=dict)

    @property
    def all_passed(self) -> bool:
        return all(i.passed for i in self.items.values())

    def to_json(self) -> dict:
        return {k: asdict(v) for k, v in self.items.items()}


def validate_assumptions(model: Model, n_pairs: int = 10_000, seed: int = 0) -> AssumptionReport:
    """Check the standing assumptions on the coefficients and report witnesses."""
    vp = model.vprime
    c = model.constants
    rep = AssumptionReport()
    rng = np.random.default_rng(seed)

    x = rng.uniform(-10, 10, n_pairs)
    y = rng.uniform(-10, 10, n_pairs)
    keep = np.abs(x - y) > 1e-6
    q = -(vp(x[keep]) - vp(y[keep])) / (x[keep] - y[keep])
    i = int(np.argmax(q))
    analytic = _osl_bound(vp)
    rep.items["one_sided_lipschitz"] = AssumptionItem(
        passed=bool(analytic <= c.L * (1 + 1e-12) + 1e-12 and q[i] <= c.L + 1e-9),
        value=analytic,
        witness={"sampled_sup": float(q[i]), "pair": [float(x[keep][i]), float(y[keep][i])]},
        note="value is the exact sup of -V''; sampled pairs give a lower estimate",
    )

    grid = np.linspace(-10.0, 10.0, 20001)
    ratio = np.abs(vp(grid)) / (1.0 + np.abs(grid) ** c.kappa)
    j = int(np.argmax(ratio))
    degree_ok = max(_unbounded_degrees(vp)) <= c.kappa
    rep.items["growth"] = AssumptionItem(
        passed=bool(degree_ok and ratio[j] <= c.L * (1 + 1e-12)),
        value=float(ratio[j]),
        witness=float(grid[j]),
    )

    symbolic = True
    for k in (0, vp.n_pieces - 1):
        coeffs = np.trim_zeros(np.asarray(vp.coeffs[k], dtype=float), "b")
        deg = len(coeffs) - 1
        if deg < 1 or deg % 2 == 0 or coeffs[-1] <= 0:
            symbolic = False
    alpha, beta = _hd_fit(vp, c.delta) if c.delta > 0 else (0.0, math.inf)
    rep.items["hyper_dissipative"] = AssumptionItem(
        passed=bool(symbolic and c.delta > 0 and alpha > 0 and c.alpha <= alpha * (1 + 1e-9) and c.beta >= beta * (1 - 1e-9)),
        value=alpha,
        witness={"alpha_fit": alpha, "beta_fit": beta, "delta": c.delta, "leading_term_ok": symbolic},
    )

    lo, hi = model.sigma_bounds
    s2 = model.sigma2(grid)
    rep.items["sigma_bounds"] = AssumptionItem(
        passed=bool(np.min(s2) >= lo**2 * (1 - 1e-12) and np.max(s2) <= hi**2 * (1 + 1e-12)),
        value=float(np.max(s2)),
        witness={"min_sigma2": float(np.min(s2)), "max_sigma2": float(np.max(s2)), "sigma_lo": lo, "sigma_hi": hi},
    )
    return rep
