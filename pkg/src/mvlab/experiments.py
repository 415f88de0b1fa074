"""Experiment suites: phase sweeps, basins, interval attraction, ball invariance.

Each suite takes a model (or preset name plus parameters), runs the
static or particle computations and returns a table of rows together
with a pass/fail verdict.  Predictions for the basin suite come from the
invariant-measure catalog and the certificate balls, never from
hard-coded answers.

Independent runs fan out over a process pool when ``threads > 1`` and the
results are collected in input order, so outputs do not depend on the
scheduling.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Sequence

import numpy as np

from .dissipativity import Certificate, preset_certificates
from .measures import Dirac, Empirical, Measure1D, measure_from_json, project_to_order_interval, wasserstein
from .model import PRESET_NAMES, Model, model_zero_crossings
from .particles import SURROGATE_NOTE, SimConfig, simulate
from .stationary import InvariantCatalog, find_invariant_measures, stationary_density

W2_TOL = 0.05
GUARD_BAND = 0.05
KINDS = ("PhaseSweep", "Basin", "IntervalAttraction", "BallInvariance", "SegmentConvergence")


def _pool_map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def spec_hash(obj: Any) -> str:
    """SHA-256 of the canonical JSON form of a spec."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


# --------------------------------------------------------------------------
# spec


@dataclass
class ExperimentSpec:
    kind: str
    model: Model
    theta_grid: list[float] = field(default_factory=list)
    sigma2_grid: list[float] = field(default_factory=list)
    sim: SimConfig = field(default_factory=SimConfig)
    inits: list[dict] = field(default_factory=list)
    ball: Optional[dict] = None
    outputs: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.kind == "PhaseSweep" and (not self.theta_grid or not self.sigma2_grid):
            raise ValueError("a phase sweep needs nonempty theta and sigma2 grids")
        if self.kind in ("Basin", "IntervalAttraction", "SegmentConvergence") and not self.inits:
            raise ValueError(f"{self.kind} needs at least one initial condition")

    @property
    def sha256(self) -> str:
        return spec_hash(self.raw)

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentSpec":
        model_obj = obj.get("model")
        if model_obj is None:
            name = obj.get("preset")
            if name not in PRESET_NAMES:
                raise ValueError(f"unknown preset {name!r}")
            model_obj = {"preset": name, "theta": obj.get("theta", 1.0)}
            if "sigma2" in obj:
                model_obj["sigma2"] = obj["sigma2"]
            else:
                model_obj["sigma"] = obj.get("sigma", 1.0)
        elif "preset" in model_obj and model_obj["preset"] not in PRESET_NAMES:
            raise ValueError(f"unknown preset {model_obj['preset']!r}")
        sim = SimConfig(**obj.get("sim", {}))
        return cls(
            kind=obj["kind"],
            model=Model.from_json(model_obj),
            theta_grid=[float(v) for v in obj.get("theta_grid", [])],
            sigma2_grid=[float(v) for v in obj.get("sigma2_grid", [])],
            sim=sim,
            inits=list(obj.get("inits", [])),
            ball=obj.get("ball"),
            outputs=dict(obj.get("outputs", {})),
            raw=obj,
        )


# --------------------------------------------------------------------------
# phase sweep


@dataclass
class PhaseTable:
    rows: list[tuple[float, float, int]]
    z_bound: int
    allowed: tuple[int, ...]
    nonmonotone_thetas: list[float]

    @property
    def bound_violations(self) -> list[tuple[float, float, int]]:
        return [r for r in self.rows if r[2] > self.z_bound]

    @property
    def unexpected_counts(self) -> list[tuple[float, float, int]]:
        return [r for r in self.rows if r[2] not in self.allowed]

    @property
    def passed(self) -> bool:
        return not self.bound_violations and not self.unexpected_counts

    def to_csv(self, header_comment: str | None = None) -> str:
        lines = [f"# {header_comment}"] if header_comment else []
        lines.append("theta,sigma2,count")
        lines += [f"{t!r},{s!r},{c}" for t, s, c in self.rows]
        return "\n".join(lines) + "\n"


def _count_at(args: tuple[Model, float, float]) -> int:
    model, theta, sigma2 = args
    return find_invariant_measures(model.with_params(theta=theta, sigma=math.sqrt(sigma2))).count


def phase_sweep(model: Model, theta_grid: Iterable[float], sigma2_grid: Iterable[float], threads: int = 1) -> PhaseTable:
    """Invariant-measure counts over a (theta, sigma^2) grid.

    A theta column whose counts rise again after the first drop is listed
    in ``nonmonotone_thetas``; this is reported, not treated as failure.
    """
    thetas = [float(t) for t in theta_grid]
    sig2 = [float(s) for s in sigma2_grid]
    if not thetas or not sig2:
        raise ValueError("grids must be nonempty")
    jobs = [(model, t, s) for t in thetas for s in sig2]
    counts = _pool_map(_count_at, jobs, threads)
    rows = [(t, s, c) for (_, t, s), c in zip(jobs, counts)]
    z = model_zero_crossings(model)
    allowed = tuple(range(1, z + 1, 2))
    flagged = []
    for t in thetas:
        col = [c for (tt, s, c) in sorted(rows, key=lambda r: r[1]) if tt == t]
        if any(col[k + 1] > col[k] for k in range(len(col) - 1)):
            flagged.append(t)
    return PhaseTable(rows, z, allowed, flagged)


# --------------------------------------------------------------------------
# initial conditions


def build_init(spec: dict, model: Model | None = None) -> tuple[Measure1D, Optional[float]]:
    """Materialize an initial-condition spec.

    Supported types: ``dirac`` (point), ``ball_sample`` (``center``,
    ``spread``, ``shift``, ``n_atoms``, ``seed``: Gaussian atoms rescaled to
    the given standard deviation around ``center + shift``), ``mu_m``
    (``m``, the frozen-mean stationary law), ``uniform_atoms`` (``lo``,
    ``hi``, ``n_atoms``) and ``measure`` (a measure JSON).  The second
    return value is ``m`` for ``mu_m`` inits and ``None`` otherwise.
    """
    kind = spec["type"]
    if kind == "dirac":
        return Dirac(float(spec["point"])), None
    if kind == "ball_sample":
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        n = int(spec.get("n_atoms", 200))
        z = rng.standard_normal(n)
        z = (z - z.mean()) / z.std()
        c = float(spec["center"]) + float(spec.get("shift", 0.0))
        return Empirical(c + float(spec["spread"]) * z), None
    if kind == "mu_m":
        if model is None:
            raise ValueError("mu_m inits need a model")
        m = float(spec["m"])
        return stationary_density(model, m).measure, m
    if kind == "uniform_atoms":
        return Empirical(np.linspace(float(spec["lo"]), float(spec["hi"]), int(spec.get("n_atoms", 61)))), None
    if kind == "measure":
        return measure_from_json(spec["measure"]), None
    raise ValueError(f"unknown init type {kind!r}")


def init_label(spec: dict) -> str:
    kind = spec["type"]
    if kind == "dirac":
        return f"dirac({spec['point']:g})"
    if kind == "ball_sample":
        return f"ball({spec['center']:g}{float(spec.get('shift', 0.0)):+g},sd={spec['spread']:g},seed={spec.get('seed', 0)})"
    if kind == "mu_m":
        return f"mu_m({spec['m']:g})"
    if kind == "uniform_atoms":
        return f"uniform[{spec['lo']:g},{spec['hi']:g}]"
    return kind


# --------------------------------------------------------------------------
# basin predictions


@dataclass(frozen=True)
class Prediction:
    index: Optional[int]
    reason: str


def _ball_owner(cat: InvariantCatalog, cert: Certificate) -> Optional[int]:
    best, best_d = None, math.inf
    for k in cat.stable_indices():
        d = cat.measures[k].w2_to_point(cert.a)
        if d < cert.r and d < best_d:
            best, best_d = k, d
    return best


def _translated_ball_distance2(mean: float, var: float, a: float, direction: int) -> float:
    """Smallest squared W2 distance to a point mass at a + s*direction, s >= 0."""
    gap = (mean - a) * direction
    return var if gap >= 0 else var + gap * gap


def predict_attractor(cat: InvariantCatalog, certs: Sequence[Certificate], init: Measure1D,
                      m: Optional[float] = None, guard: float = GUARD_BAND) -> Prediction:
    """Stable catalog measure an initial law should converge to.

    Ball rule: the outermost certificate balls may be translated outward,
    so a law whose distance to ``{delta_{a_1 + s}: s <= 0}`` is below the
    radius is attracted by the measure inside the leftmost ball (and
    symmetrically on the right); inner balls are used as they are.
    Segment rule, for frozen-mean stationary laws ``mu_m``: ``m`` strictly
    between two consecutive unstable roots (or beyond the outermost one)
    selects the stable root in that segment.  Laws within ``guard`` of an
    unstable root are not predicted.
    """
    mean, var = init.mean, max(init.variance, 0.0)
    certs = sorted(certs, key=lambda c: c.a)
    for j, c in enumerate(certs):
        if j == 0 and len(certs) > 1:
            d2 = _translated_ball_distance2(mean, var, c.a, -1)
        elif j == len(certs) - 1 and len(certs) > 1:
            d2 = _translated_ball_distance2(mean, var, c.a, +1)
        else:
            d2 = var + (mean - c.a) ** 2
        if d2 < c.r * c.r:
            owner = _ball_owner(cat, c)
            if owner is not None:
                return Prediction(owner, f"ball a={c.a:g}")
    if m is not None:
        if "unknown" in cat.stability:
            return Prediction(None, "stability of roots unknown")
        unstable = [cat.roots[k] for k, s in enumerate(cat.stability) if s == "unstable"]
        if any(abs(m - u) <= guard for u in unstable):
            return Prediction(None, "guard band around an unstable root")
        edges = [-math.inf] + unstable + [math.inf]
        for lo, hi in zip(edges[:-1], edges[1:]):
            if lo < m < hi:
                inside = [k for k in cat.stable_indices() if lo < cat.roots[k] < hi]
                if len(inside) == 1:
                    return Prediction(inside[0], f"segment ({lo:g}, {hi:g})")
        return Prediction(None, "no stable root in segment")
    return Prediction(None, "outside certified balls")


# --------------------------------------------------------------------------
# basin experiment


@dataclass
class BasinRow:
    label: str
    predicted: Optional[int]
    reason: str
    w2_final: list[float]
    passed: Optional[bool]
    note: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "init": self.label,
            "predicted": self.predicted,
            "reason": self.reason,
            "w2_final": self.w2_final,
            "passed": self.passed,
            "note": self.note,
        }


@dataclass
class BasinReport:
    rows: list[BasinRow]
    roots: list[float]
    tol: float
    required_fraction: float

    @property
    def judged(self) -> list[BasinRow]:
        return [r for r in self.rows if r.passed is not None]

    @property
    def pass_fraction(self) -> float:
        j = self.judged
        return sum(r.passed for r in j) / len(j) if j else 0.0

    @property
    def passed(self) -> bool:
        return bool(self.judged) and self.pass_fraction >= self.required_fraction

    def to_csv(self, header_comment: str | None = None) -> str:
        lines = [f"# {header_comment}"] if header_comment else []
        if any(r.note for r in self.rows):
            lines.append(f"# note: {SURROGATE_NOTE}")
        lines.append("init,predicted,reason,passed," + ",".join(f"w2_root{k}" for k in range(len(self.roots))))
        for r in self.rows:
            pred = "" if r.predicted is None else str(r.predicted)
            ok = "" if r.passed is None else str(r.passed).lower()
            lines.append(f"\"{r.label}\",{pred},\"{r.reason}\",{ok}," + ",".join(f"{w:.6g}" for w in r.w2_final))
        return "\n".join(lines) + "\n"

    def to_json(self) -> dict:
        return {
            "roots": self.roots,
            "tol": self.tol,
            "pass_fraction": self.pass_fraction,
            "passed": self.passed,
            "rows": [r.to_json() for r in self.rows],
        }


def _basin_job(args) -> list[float]:
    model, init, config, targets = args
    stats = simulate(model, init, config)
    return [wasserstein(stats.final, t) for t in targets]


def basin_experiment(model: Model, init_specs: Sequence[dict], config: SimConfig,
                     certificates: Sequence[Certificate] | None = None, tol: float = W2_TOL,
                     required_fraction: float = 0.95, threads: int = 1,
                     catalog: InvariantCatalog | None = None) -> BasinReport:
    """Run each initial condition and compare the final law with the predicted attractor.

    ``certificates`` default to the preset certificates of ``model.name``
    at the model's parameters.
    """
    cat = catalog or find_invariant_measures(model)
    if certificates is None:
        certificates = preset_certificates(model.name, model.theta, model.sigma_bounds[1])
    built = [build_init(s, model) for s in init_specs]
    preds = [predict_attractor(cat, certificates, mu, m) for mu, m in built]
    targets = [d.measure for d in cat.measures]
    jobs = [(model, mu, config, targets) for mu, _ in built]
    finals = _pool_map(_basin_job, jobs, threads)
    unstable = [cat.roots[k] for k, s in enumerate(cat.stability) if s != "stable"]
    rows = []
    for spec, (mu, m), pred, w2 in zip(init_specs, built, preds, finals):
        ok = None if pred.index is None else bool(w2[pred.index] < tol)
        near = m is not None and any(abs(m - u) < 4 * GUARD_BAND for u in unstable)
        rows.append(BasinRow(init_label(spec), pred.index, pred.reason, w2, ok, SURROGATE_NOTE if near else None))
    return BasinReport(rows, cat.roots.tolist(), tol, required_fraction)


def default_basin_inits(model: Model, certificates: Sequence[Certificate], catalog: InvariantCatalog,
                        seed: int = 0) -> list[dict]:
    """Forty initial conditions spanning translated balls and mu_m segments.

    For a two-well landscape: ten point masses translated outward from the
    outer ball centres, six point masses inside the balls, eight perturbed
    empirical laws inside the balls and sixteen frozen-mean laws spread
    over both segments away from the guard band.
    """
    certs = sorted(certificates, key=lambda c: c.a)
    lo, hi = certs[0], certs[-1]
    r = min(lo.r, hi.r)
    inits: list[dict] = []
    for s in (0.0, 0.5, 1.0, 2.0, 3.0):
        inits.append({"type": "dirac", "point": lo.a - s})
        inits.append({"type": "dirac", "point": hi.a + s})
    for frac in (0.3, 0.5, 0.8):
        inits.append({"type": "dirac", "point": lo.a + frac * r})
        inits.append({"type": "dirac", "point": hi.a - frac * r})
    rng = np.random.default_rng(seed)
    for k in range(4):
        spread = float(rng.uniform(0.1, 0.45)) * r
        shift = float(rng.uniform(-0.5, 0.5)) * math.sqrt(max(r * r - spread * spread, 0.0))
        s = int(rng.integers(2**31))
        inits.append({"type": "ball_sample", "center": lo.a, "shift": shift, "spread": spread, "seed": s})
        inits.append({"type": "ball_sample", "center": hi.a, "shift": -shift, "spread": spread, "seed": s + 1})
    unstable = [catalog.roots[k] for k, st in enumerate(catalog.stability) if st == "unstable"]
    pivot = unstable[0] if unstable else 0.5 * (lo.a + hi.a)
    for d in (0.15, 0.3, 0.6, 1.0, 1.5, 2.5, 4.0, 6.0):
        inits.append({"type": "mu_m", "m": pivot - d})
        inits.append({"type": "mu_m", "m": pivot + d})
    return inits


# --------------------------------------------------------------------------
# interval attraction


@dataclass
class IntervalRow:
    label: str
    times: np.ndarray
    distance: np.ndarray
    passed: bool

    def to_json(self) -> dict:
        return {"init": self.label, "t": self.times.tolist(), "distance": self.distance.tolist(), "passed": self.passed}


@dataclass
class IntervalReport:
    rows: list[IntervalRow]
    tol: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def to_json(self) -> dict:
        return {"tol": self.tol, "passed": self.passed, "rows": [r.to_json() for r in self.rows]}


class _IntervalDistance:
    def __init__(self, lower: Measure1D, upper: Measure1D):
        self.lower, self.upper = lower, upper

    def __call__(self, emp: Empirical) -> float:
        return project_to_order_interval(emp, self.lower, self.upper)[1]


def _interval_job(args):
    model, init, config, lower, upper = args
    stats = simulate(model, init, config, refs={"interval": _IntervalDistance(lower, upper)})
    return stats.times, stats.w2["interval"]


def interval_verdict(distance: np.ndarray, tol: float) -> bool:
    """Final distance below tol, finite throughout, and decreasing on average
    when the run starts away from the interval."""
    if not np.all(np.isfinite(distance)) or not distance[-1] < tol:
        return False
    q = max(1, distance.size // 4)
    first, last = float(np.mean(distance[:q])), float(np.mean(distance[-q:]))
    return last < first if first >= tol else bool(np.all(distance < tol))


def interval_attraction(model: Model, init_specs: Sequence[dict], config: SimConfig, tol: float = W2_TOL,
                        threads: int = 1, catalog: InvariantCatalog | None = None) -> IntervalReport:
    """Distance of the particle law to the order interval spanned by the extreme invariant measures."""
    cat = catalog or find_invariant_measures(model)
    lower, upper = cat.measures[0].measure, cat.measures[-1].measure
    built = [build_init(s, model)[0] for s in init_specs]
    out = _pool_map(_interval_job, [(model, mu, config, lower, upper) for mu in built], threads)
    rows = [IntervalRow(init_label(s), t, d, interval_verdict(d, tol)) for s, (t, d) in zip(init_specs, out)]
    return IntervalReport(rows, tol)


# --------------------------------------------------------------------------
# ball invariance


@dataclass
class BallRun:
    label: str
    init_distance: float
    max_distance: float
    trajectory: Optional[np.ndarray] = None


@dataclass
class BallReport:
    a: float
    r: float
    margin: float
    claimed: bool
    runs: list[BallRun]

    @property
    def excursions(self) -> list[BallRun]:
        return [b for b in self.runs if b.max_distance >= self.r - self.margin]

    @property
    def passed(self) -> bool:
        """Only a claimed ball can fail; unclaimed controls just report."""
        return not self.claimed or not self.excursions

    def to_json(self) -> dict:
        return {
            "a": self.a,
            "r": self.r,
            "margin": self.margin,
            "claimed": self.claimed,
            "passed": self.passed,
            "runs": [
                {
                    "init": b.label,
                    "init_distance": b.init_distance,
                    "max_distance": b.max_distance,
                    "trajectory": None if b.trajectory is None else b.trajectory.tolist(),
                }
                for b in self.runs
            ],
        }


def ball_inits(a: float, r: float, n_inits: int, seed: int = 0, fill: float = 0.8) -> list[dict]:
    """Random laws with W2 distance at most ``fill * r`` from a point mass at a."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_inits):
        rho = fill * r * math.sqrt(rng.uniform())
        if k % 3 == 0:
            out.append({"type": "dirac", "point": a + rho * (1 if rng.uniform() < 0.5 else -1)})
            continue
        frac = rng.uniform(0.0, 1.0)
        spread = rho * math.sqrt(frac)
        shift = rho * math.sqrt(1 - frac) * (1 if rng.uniform() < 0.5 else -1)
        out.append({"type": "ball_sample", "center": a, "shift": shift, "spread": spread,
                    "seed": int(rng.integers(2**31)), "n_atoms": 101})
    return out


def _ball_job(args):
    model, init, config, a = args
    stats = simulate(model, init, config, refs={"ball": Dirac(a)})
    return stats.times, stats.w2["ball"]


def ball_invariance_dynamic(model: Model, a: float, r: float, config: SimConfig, n_inits: int = 8,
                            init_specs: Sequence[dict] | None = None, claimed: bool = True,
                            seed: int = 0, threads: int = 1) -> BallReport:
    """Whether particle laws started inside the ball around a stay inside.

    The margin ``3/sqrt(N)`` absorbs the sampling error of the empirical
    law.  Runs that leave the ball keep their distance series.
    """
    specs = list(init_specs) if init_specs is not None else ball_inits(a, r, n_inits, seed)
    built = [build_init(s, model)[0] for s in specs]
    dist0 = [wasserstein(mu, Dirac(a)) for mu in built]
    out = _pool_map(_ball_job, [(model, mu, config, a) for mu in built], threads)
    margin = 3.0 / math.sqrt(config.n_particles)
    runs = []
    for s, d0, (t, d) in zip(specs, dist0, out):
        mx = float(np.max(d))
        traj = np.column_stack([t, d]) if mx >= r - margin else None
        runs.append(BallRun(init_label(s), d0, mx, traj))
    return BallReport(float(a), float(r), margin, claimed, runs)


def segment_convergence(model: Model, ms: Sequence[float], config: SimConfig, **kw) -> BasinReport:
    """Basin experiment restricted to frozen-mean stationary laws."""
    return basin_experiment(model, [{"type": "mu_m", "m": float(m)} for m in ms], config, **kw)

