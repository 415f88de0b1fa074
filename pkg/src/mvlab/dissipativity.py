"""Local-dissipativity certificates.

A certificate at a well centre ``a`` is a radius ``r`` and a function

    g(z, w) = sum_k c_k z^{p_k} w^{q_k}

with half-integer exponents.  It certifies that the W2-ball of radius r
around delta_a is positively invariant when

  (i)   -2x V'(x+a) - 2x theta (x - mean) + sigma(x+a)^2 <= -g(x^2, w)
        for every measure with second moment w,
  (ii)  g(., r^2) is convex, inf over w <= r^2 of g(z, w) is attained at
        w = r^2, and inf_{z >= r^2} g(z, r^2) > 0.

Everything here is polynomial in sqrt(z) and sqrt(w), so the checks are
done with exact polynomial algebra where possible and with grids otherwise.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Optional, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import polynomial as P
from scipy import optimize

from .model import Model

CERTIFIED_PRESETS = ("SymmetricDoubleWell", "FlatBottomDoubleWell", "AsymmetricDoubleWell", "MultiWell")

SQRT3, SQRT13, SQRT17, SQRT33 = math.sqrt(3.0), math.sqrt(13.0), math.sqrt(17.0), math.sqrt(33.0)


# --------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class Term:
    z_exp: float
    w_exp: float
    coeff: float

    def __post_init__(self) -> None:
        for e in (self.z_exp, self.w_exp):
            if e < 0 or abs(2 * e - round(2 * e)) > 1e-12:
                raise ValueError("exponents must be nonnegative half-integers")


@dataclass(frozen=True)
class Certificate:
    a: float
    r: float
    terms: tuple[Term, ...]
    label: str = ""

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise ValueError("radius must be positive")

    def to_json(self) -> dict:
        return {"a": self.a, "r": self.r, "label": self.label, "terms": [asdict(t) for t in self.terms]}

    @classmethod
    def from_json(cls, obj: dict) -> "Certificate":
        terms = tuple(Term(float(t["z_exp"]), float(t["w_exp"]), float(t["coeff"])) for t in obj["terms"])
        return cls(float(obj["a"]), float(obj["r"]), terms, obj.get("label", ""))


def eval_g(cert: Certificate, z, w):
    """g(z, w) evaluated with integer powers of sqrt(z) and sqrt(w)."""
    z_arr, w_arr = np.asarray(z, dtype=float), np.asarray(w, dtype=float)
    if np.any(z_arr < 0) or np.any(w_arr < 0):
        raise ValueError("z and w must be nonnegative")
    uz, uw = np.sqrt(z_arr), np.sqrt(w_arr)
    out = np.zeros(np.broadcast(uz, uw).shape)
    for t in cert.terms:
        out = out + t.coeff * uz ** int(round(2 * t.z_exp)) * uw ** int(round(2 * t.w_exp))
    return float(out) if out.ndim == 0 else out


def _z_poly(cert: Certificate, w: float) -> np.ndarray:
    """Coefficients (ascending, in u = sqrt(z)) of g(u^2, w)."""
    deg = max(int(round(2 * t.z_exp)) for t in cert.terms)
    c = np.zeros(deg + 1)
    sw = math.sqrt(w)
    for t in cert.terms:
        c[int(round(2 * t.z_exp))] += t.coeff * sw ** int(round(2 * t.w_exp))
    return c


def _second_derivative_poly(cert: Certificate, w: float) -> tuple[np.ndarray, int]:
    """u^M * g''(u^2) as a polynomial in u, with the shift M >= 0 that clears negative powers."""
    powers, coeffs = [], []
    sw = math.sqrt(w)
    for t in cert.terms:
        p = t.z_exp
        if p in (0.0, 1.0):
            continue
        powers.append(int(round(2 * p - 4)))
        coeffs.append(t.coeff * sw ** int(round(2 * t.w_exp)) * p * (p - 1))
    if not powers:
        return np.zeros(1), 0
    shift = max(0, -min(powers))
    c = np.zeros(max(powers) + shift + 1)
    for k, v in zip(powers, coeffs):
        c[k + shift] += v
    return c, shift


def _min_on_halfline(c: np.ndarray, start: float) -> tuple[float, float]:
    """Minimum of a polynomial on [start, inf) and a minimizer (inf if unbounded below)."""
    c = np.trim_zeros(np.asarray(c, dtype=float), "b")
    if c.size == 0:
        return 0.0, start
    if c.size > 1 and c[-1] < 0:
        return -math.inf, math.inf
    cand = [start]
    if c.size > 2:
        crit = P.polyroots(P.polyder(c))
        crit = crit[np.abs(crit.imag) <= 1e-9 * (1 + np.abs(crit))].real
        cand.extend(x for x in crit if x > start)
    cand = np.asarray(cand)
    vals = P.polyval(cand, c)
    i = int(np.argmin(vals))
    return float(vals[i]), float(cand[i])


# --------------------------------------------------------------------------
# verification


@dataclass
class ConditionResult:
    passed: bool
    margin: float
    witness: Any = None
    detail: dict = field(default_factory=dict)


@dataclass
class ConfigurationReport:
    a: float
    r: float
    conditions: dict[str, ConditionResult]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.conditions.values())

    def failed(self) -> list[str]:
        return [k for k, c in self.conditions.items() if not c.passed]

    def to_json(self) -> dict:
        return {
            "a": self.a,
            "r": self.r,
            "all_passed": self.all_passed,
            "conditions": {k: asdict(v) for k, v in self.conditions.items()},
        }


def _outer_poly(model: Model, side: float) -> Polynomial:
    vp = model.vprime
    k = vp.n_pieces - 1 if side > 0 else 0
    return Polynomial(vp.coeffs[k])


def _tail_check(model: Model, cert: Certificate, x_max: float, w_values: Sequence[float]) -> tuple[bool, float, Any]:
    """Sign of LHS + g for |x| >= x_max, exactly, using the outer polynomial pieces.

    In s = |x| the expression is a polynomial once sigma^2 is replaced by its
    upper bound, and it is affine in sqrt(w), so w = 0 and w = r^2 suffice.
    """
    theta = model.theta
    s2_hi = model.sigma_bounds[1] ** 2
    s = Polynomial([0.0, 1.0])
    worst = -math.inf
    where = None
    for side in (1.0, -1.0):
        x = side * s
        vp = _outer_poly(model, side)(x + cert.a)
        for w in w_values:
            sw = math.sqrt(w)
            expr = -2.0 * x * vp - 2.0 * theta * s * s + 2.0 * theta * sw * s + s2_hi
            gc = _z_poly(cert, w)
            expr = expr + Polynomial(gc)
            c = expr.coef.copy()
            scale = np.max(np.abs(c)) if c.size else 1.0
            c[np.abs(c) <= 1e-10 * max(scale, 1.0)] = 0.0
            c = np.trim_zeros(c, "b")
            if c.size == 0:
                val, at = 0.0, x_max
            else:
                val, at = _min_on_halfline(-c, x_max)
                val = -val
            if val > worst:
                worst, where = val, {"side": side, "w": w, "s": at}
    return worst <= 1e-9, -worst, where


def verify_configuration(
    model: Model,
    cert: Certificate,
    x_max: float = 20.0,
    n_x: int = 4001,
    n_w: int = 21,
    n_z: int = 400,
) -> ConfigurationReport:
    """Check conditions (i) and (ii-a, ii-b, ii-c) of a local-dissipativity certificate."""
    if x_max < 10:
        raise ValueError("grid must cover at least [-10, 10]")
    a, r = cert.a, cert.r
    theta = model.theta
    out: dict[str, ConditionResult] = {}

    # (i): worst case over measures with second moment w is |mean| = sqrt(w)
    x = np.linspace(-x_max, x_max, n_x)[:, None]
    w = np.linspace(0.0, r * r, n_w)[None, :]
    drift = -2.0 * x * model.vprime(x + a)
    inter = -2.0 * theta * x * x + 2.0 * theta * np.abs(x) * np.sqrt(w)
    noise = model.sigma2(x + a)
    gval = eval_g(cert, x * x, np.broadcast_to(w, (1, n_w)))
    total = drift + inter + noise + gval
    scale = np.abs(drift) + np.abs(inter) + noise + sum(
        np.abs(t.coeff) * np.abs(x) ** int(round(2 * t.z_exp)) * np.sqrt(w) ** int(round(2 * t.w_exp)) for t in cert.terms
    )
    excess = total - 1e-12 * (1.0 + scale)
    i, j = np.unravel_index(int(np.argmax(excess)), excess.shape)
    grid_ok = bool(excess[i, j] <= 0)
    tail_ok, tail_margin, tail_where = _tail_check(model, cert, x_max, [0.0, r * r])
    out["i"] = ConditionResult(
        grid_ok and tail_ok,
        float(min(-total[i, j], tail_margin)),
        {"x": float(x[i, 0]), "w": float(w[0, j])},
        {"grid_max": float(total[i, j]), "tail_ok": tail_ok, "tail_margin": tail_margin, "tail_witness": tail_where},
    )

    # (ii-a): convexity of g(., r^2) on z > 0
    c2, shift = _second_derivative_poly(cert, r * r)
    mn, arg = _min_on_halfline(c2, 0.0)
    coef_scale = max(1.0, float(np.max(np.abs(c2))))
    analytic_ok = mn >= -1e-12 * coef_scale
    zs = np.logspace(-6, 4, n_z)
    gz = eval_g(cert, zs, r * r)
    h1, h2 = np.diff(zs)[:-1], np.diff(zs)[1:]
    sd = 2.0 * ((gz[2:] - gz[1:-1]) / h2 - (gz[1:-1] - gz[:-2]) / h1) / (h1 + h2)
    sd_ok = bool(np.min(sd) >= -1e-10 * (1 + np.max(np.abs(sd))))
    detail = {"min_scaled_second_derivative": mn, "argmin_sqrt_z": arg, "numeric_second_difference_ok": sd_ok}
    family = _simple_family_criterion(cert)
    if family is not None:
        detail["closed_form_criterion"] = family
    out["ii_a"] = ConditionResult(bool(analytic_ok), float(mn), {"sqrt_z": arg}, detail)

    # (ii-b): g nonincreasing in w, so the infimum over w <= r^2 sits at w = r^2
    mixed = [t for t in cert.terms if t.w_exp > 0]
    coeff_ok = all(t.coeff <= 0 for t in mixed)
    if coeff_ok:
        out["ii_b"] = ConditionResult(True, float(-max((t.coeff for t in mixed), default=0.0)), None, {"method": "coefficient signs"})
    else:
        zz = np.linspace(0.0, 10.0 * max(r * r, 1.0), 201)[:, None]
        ww = np.linspace(0.0, r * r, 41)[None, :]
        vals = eval_g(cert, np.broadcast_to(zz, (201, 41)), np.broadcast_to(ww, (201, 41)))
        gap = vals[:, -1] - vals.min(axis=1)
        k = int(np.argmax(gap))
        out["ii_b"] = ConditionResult(bool(gap[k] <= 1e-12), float(-gap[k]), {"z": float(zz[k, 0])}, {"method": "grid"})

    # (ii-c): minimum of g(u^2, r^2) over u >= r, exact
    gc = _z_poly(cert, r * r)
    mn_c, arg_c = _min_on_halfline(gc, r)
    slope = float(P.polyval(r, P.polyder(gc)) / (2 * r)) if gc.size > 1 else 0.0
    out["ii_c"] = ConditionResult(
        bool(mn_c > 0),
        float(mn_c),
        {"z": arg_c * arg_c if math.isfinite(arg_c) else math.inf},
        {"g_at_r2": float(eval_g(cert, r * r, r * r)), "dg_dz_at_r2": slope},
    )
    return ConfigurationReport(a, r, out)


def _simple_family_criterion(cert: Certificate) -> Optional[dict]:
    """Closed-form convexity test when g'' = A + B z^{-1/2} + C z^{-3/2}.

    With t = z^{-1/2} this is A + B t + C t^3 on t > 0; for A > 0, B < 0,
    C > 0 the minimum is A + (2/3) B sqrt(-B / (3C)).  For the double-well
    certificate this is the threshold theta >= 27 / (16 sqrt(w)).
    """
    exps = {(t.z_exp, t.w_exp) for t in cert.terms if t.coeff != 0}
    if not exps <= {(2.0, 0.0), (1.5, 0.0), (1.0, 0.0), (0.5, 0.5), (0.0, 0.0)}:
        return None
    get = lambda key: sum(t.coeff for t in cert.terms if (t.z_exp, t.w_exp) == key)
    r2 = cert.r**2
    A = 2.0 * get((2.0, 0.0))
    B = 0.75 * get((1.5, 0.0))
    C = -0.25 * get((0.5, 0.5)) * math.sqrt(r2)
    if not (A > 0 and B < 0 and C > 0):
        return None
    t_star = math.sqrt(-B / (3.0 * C))
    value = A + (2.0 / 3.0) * B * t_star
    return {"A": A, "B": B, "C": C, "min_value": value, "convex": value >= -1e-12}


# --------------------------------------------------------------------------
# separation


@dataclass
class SeparationReport:
    passed: bool
    disjoint: bool
    pairs: list[dict]

    def __bool__(self) -> bool:
        return self.passed


def separation_check(certs: Sequence[Certificate]) -> SeparationReport:
    """r_k^2 + r_{k+1}^2 <= (a_{k+1} - a_k)^2 / 2 for adjacent certificates."""
    cs = list(certs)
    if any(b.a < a.a for a, b in zip(cs[:-1], cs[1:])):
        raise ValueError("certificates must be sorted by centre")
    pairs, ok, disjoint = [], True, True
    for c0, c1 in zip(cs[:-1], cs[1:]):
        gap = c1.a - c0.a
        lhs = c0.r**2 + c1.r**2
        sep = lhs <= 0.5 * gap * gap
        dis = c0.r + c1.r <= gap
        ok &= sep
        disjoint &= dis
        pairs.append({"a": [c0.a, c1.a], "sum_r2": lhs, "half_gap2": 0.5 * gap * gap, "separated": sep, "disjoint": dis})
    return SeparationReport(bool(ok), bool(disjoint), pairs)


# --------------------------------------------------------------------------
# certificate families of the named presets


@dataclass(frozen=True)
class TermTemplate:
    z_exp: float
    w_exp: float
    base: float
    theta_coeff: float = 0.0
    sigma2_coeff: float = 0.0


@dataclass(frozen=True)
class CertificateFamily:
    a: float
    radius: float
    templates: tuple[TermTemplate, ...]
    label: str

    def instantiate(self, theta: float, sigma2_bar: float, r: float | None = None) -> Certificate:
        terms = tuple(
            Term(t.z_exp, t.w_exp, t.base + t.theta_coeff * theta + t.sigma2_coeff * sigma2_bar) for t in self.templates
        )
        return Certificate(self.a, self.radius if r is None else r, terms, self.label)


def _interaction(linear: float, shift: float = 0.0) -> list[TermTemplate]:
    return [
        TermTemplate(1.0, 0.0, linear, 2.0),
        TermTemplate(0.5, 0.5, 0.0, -2.0),
        TermTemplate(0.0, 0.0, shift, 0.0, -1.0),
    ]


def _double_well(a: float, shift: float, label: str) -> CertificateFamily:
    t = [TermTemplate(2.0, 0.0, 2.0), TermTemplate(1.5, 0.0, -6.0)] + _interaction(4.0, shift)
    return CertificateFamily(a, (9.0 - SQRT17) / 8.0, tuple(t), label)


def certificate_families(name: str) -> tuple[list[CertificateFamily], bool]:
    """The certificate families of a preset and whether they share one radius."""
    if name == "SymmetricDoubleWell":
        return [_double_well(-1.0, 0.0, "left well"), _double_well(1.0, 0.0, "right well")], True
    if name == "FlatBottomDoubleWell":
        return [_double_well(-1.0, -0.25, "left well"), _double_well(1.0, -0.25, "right well")], True
    if name == "AsymmetricDoubleWell":
        left = [TermTemplate(2.0, 0.0, 2.0), TermTemplate(1.5, 0.0, -10.0)] + _interaction(12.0)
        right = [TermTemplate(2.0, 0.0, 2.0), TermTemplate(1.5, 0.0, -8.0)] + _interaction(6.0)
        return [
            CertificateFamily(-2.0, (15.0 - SQRT33) / 8.0, tuple(left), "deep well"),
            CertificateFamily(1.0, (3.0 - SQRT3) / 2.0, tuple(right), "shallow well"),
        ], False
    if name == "MultiWell":
        r = math.sqrt((5.0 - SQRT13) / 3.0)
        centre = [TermTemplate(3.0, 0.0, 2.0), TermTemplate(2.0, 0.0, -10.0)] + _interaction(8.0)
        outer = [
            TermTemplate(3.0, 0.0, 2.0),
            TermTemplate(2.5, 0.0, -20.0),
            TermTemplate(2.0, 0.0, 70.0),
            TermTemplate(1.5, 0.0, -100.0),
        ] + _interaction(48.0)
        return [
            CertificateFamily(-2.0, r, tuple(outer), "outer well"),
            CertificateFamily(0.0, r, tuple(centre), "central well"),
            CertificateFamily(2.0, r, tuple(outer), "outer well"),
        ], True
    raise ValueError(f"no certificate family for preset {name!r}; certified presets are {CERTIFIED_PRESETS}")


def preset_certificates(name: str, theta: float, sigma_hi: float, r: float | None = None) -> list[Certificate]:
    """Certificates of a named preset, instantiated at (theta, sigma_hi), sorted by centre."""
    fams, _ = certificate_families(name)
    return [f.instantiate(theta, sigma_hi**2, r) for f in sorted(fams, key=lambda f: f.a)]


# --------------------------------------------------------------------------
# thresholds


def _diagonal_poly(fam: CertificateFamily) -> np.ndarray:
    """g(r^2, r^2) + sigma_bar^2 as a polynomial in r; theta cancels on the diagonal."""
    deg = max(int(round(2 * (t.z_exp + t.w_exp))) for t in fam.templates)
    c = np.zeros(deg + 1)
    for t in fam.templates:
        c[int(round(2 * (t.z_exp + t.w_exp)))] += t.base
    return c


def _first_positive_root(c: np.ndarray) -> float:
    """First positive root of the r-dependent part (constant slack removed)."""
    c = np.asarray(c, dtype=float).copy()
    c[0] = 0.0
    r = P.polyroots(np.trim_zeros(c, "b"))
    r = r[(np.abs(r.imag) < 1e-12) & (r.real > 1e-12)].real
    if r.size == 0:
        raise ValueError("no positive root bounds the search interval")
    return float(r.min())


def convexity_theta(fam: CertificateFamily, r: float) -> float:
    """Smallest theta for which g(., r^2) is convex on z > 0.

    g'' = A(z) + theta * B(z) with B > 0, so the threshold is sup_z -A/B,
    found exactly from the stationarity polynomial in u = sqrt(z).
    """
    base = fam.instantiate(0.0, 0.0, r)
    unit = Certificate(fam.a, r, tuple(Term(t.z_exp, t.w_exp, t.theta_coeff) for t in fam.templates))
    ca, sa = _second_derivative_poly(base, r * r)
    cb, sb = _second_derivative_poly(unit, r * r)
    shift = max(sa, sb)
    ca = np.r_[np.zeros(shift - sa), ca]
    cb = np.r_[np.zeros(shift - sb), cb]
    if not np.any(cb):
        return 0.0 if _min_on_halfline(ca, 0.0)[0] >= 0 else math.inf
    num = P.polysub(P.polymul(P.polyder(ca), cb), P.polymul(ca, P.polyder(cb)))
    crit = P.polyroots(np.trim_zeros(num, "b")) if np.trim_zeros(num, "b").size > 1 else np.empty(0)
    crit = crit[(np.abs(crit.imag) < 1e-9) & (crit.real > 0)].real
    best = 0.0
    for u in crit:
        bval = P.polyval(u, cb)
        if bval > 0:
            best = max(best, -P.polyval(u, ca) / bval)
    return best


@dataclass
class FamilyThreshold:
    a: float
    label: str
    r_star: float
    sigma2_max: float
    theta_min: float


@dataclass
class ThresholdResult:
    """Optimal radius and the resulting parameter thresholds.

    ``sigma2_max`` is the smallest and ``theta_min`` the largest value over
    the certificates, i.e. the values that actually bind.  ``r_star`` is the
    radius of the certificate that binds ``sigma2_max``.
    """

    r_star: float
    sigma2_max: float
    theta_min: float
    per_certificate: list[FamilyThreshold]

    @property
    def r_star_squared(self) -> float:
        return self.r_star**2

    def to_json(self) -> dict:
        return {
            "r_star": self.r_star,
            "r_star_squared": self.r_star_squared,
            "sigma2_max": self.sigma2_max,
            "theta_min": self.theta_min,
            "per_certificate": [asdict(p) for p in self.per_certificate],
        }


def _maximize_poly(c: np.ndarray, hi: float) -> tuple[float, float]:
    """Golden-section maximization on (0, hi), polished on the stationarity polynomial."""
    grid = np.linspace(0.0, hi, 257)
    k = int(np.clip(np.argmax(P.polyval(grid, c)), 1, grid.size - 2))
    res = optimize.minimize_scalar(lambda x: -P.polyval(x, c), bracket=(grid[k - 1], grid[k], grid[k + 1]), method="golden")
    guess = float(res.x)
    crit = P.polyroots(P.polyder(c))
    crit = crit[(np.abs(crit.imag) < 1e-9) & (crit.real > 0) & (crit.real < hi)].real
    if crit.size == 0:
        raise ValueError("no interior maximum")
    r = float(crit[np.argmin(np.abs(crit - guess))])
    for _ in range(3):
        d1 = P.polyval(r, P.polyder(c))
        d2 = P.polyval(r, P.polyder(c, 2))
        if d2 == 0:
            break
        r -= d1 / d2
    return float(r), float(P.polyval(r, c))


def optimize_threshold(name: str) -> ThresholdResult:
    """Reproduce the best radius and the (theta, sigma^2) thresholds of a preset."""
    fams, shared = certificate_families(name)
    polys = [_diagonal_poly(f) for f in fams]
    per: list[FamilyThreshold] = []
    if shared:
        hi = min(_first_positive_root(c) for c in polys)
        grid = np.linspace(1e-6 * hi, hi * (1 - 1e-6), 2001)
        env = np.min([P.polyval(grid, c) for c in polys], axis=0)
        guess = float(grid[int(np.argmax(env))])
        bind = int(np.argmin([P.polyval(guess, c) for c in polys]))
        r, _ = _maximize_poly(polys[bind], hi)
        for f, c in zip(fams, polys):
            per.append(FamilyThreshold(f.a, f.label, r, float(P.polyval(r, c)), float(convexity_theta(f, r))))
    else:
        for f, c in zip(fams, polys):
            r, val = _maximize_poly(c, _first_positive_root(c))
            per.append(FamilyThreshold(f.a, f.label, r, val, float(convexity_theta(f, r))))
    binding = min(per, key=lambda p: p.sigma2_max)
    return ThresholdResult(binding.r_star, binding.sigma2_max, max(p.theta_min for p in per), per)
