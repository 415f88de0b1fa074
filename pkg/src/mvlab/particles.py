"""Interacting particle approximation of the mean-field SDE.

Each particle follows

    dX_i = (-V'(X_i) - theta (X_i - mean_N)) dt + sigma(X_i) dB_i,

where ``mean_N`` is the ensemble average.  The quadratic interaction makes
the pairwise sum collapse to a single mean per step, so a step is O(N).

Time stepping is tamed Euler (the drift ``b`` is replaced by
``b / (1 + dt |b|)``) or a variant that treats ``-theta x`` implicitly.
Noise comes from :mod:`mvlab.noise`, so the increment seen by particle
``i`` at step ``k`` is a function of ``(seed, k, i)`` alone.  Coupled runs
advance two ensembles through one kernel call with shared increments.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Union

import numpy as np
from numba import njit

from .measures import Empirical, Measure1D, Relation, compare_st, stratified_uniforms, wasserstein
from .model import ConstantSigma, Model
from .noise import ppnd16, raw_block, word_to_uniform

BLOWUP = 1e6
SCHEMES = ("tamed_euler", "semi_implicit_linear")
_SCHEME_CODE = {"tamed_euler": 0, "semi_implicit_linear": 1}
_CHUNK_WORDS = 1 << 20  # raw words buffered per kernel call
SURROGATE_NOTE = (
    "trajectories started near an unstable invariant measure are numerical "
    "surrogates for connecting orbits, not the orbits themselves"
)


class SimulationBlowUp(RuntimeError):
    """A particle left the finite region or became non-finite."""

    def __init__(self, step: int, time: float):
        super().__init__(f"particle blow-up (|x| > {BLOWUP:g} or non-finite) at step {step}, t = {time:g}")
        self.step = step
        self.time = time


@dataclass(frozen=True)
class SimConfig:
    n_particles: int = 10_000
    dt: float = 1e-3
    t_final: float = 50.0
    scheme: str = "tamed_euler"
    seed: int = 0
    record_stride: int = 100

    def __post_init__(self) -> None:
        if int(self.n_particles) < 2:
            raise ValueError("n_particles must be >= 2")
        if not (0 < self.dt <= 0.01):
            raise ValueError("dt must lie in (0, 0.01]")
        if not self.t_final >= self.dt:
            raise ValueError("t_final must be >= dt")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if int(self.record_stride) < 1:
            raise ValueError("record_stride must be >= 1")
        if not (0 <= int(self.seed) < 2**64):
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def to_json(self) -> dict:
        return {
            "n_particles": self.n_particles,
            "dt": self.dt,
            "t_final": self.t_final,
            "scheme": self.scheme,
            "seed": self.seed,
            "record_stride": self.record_stride,
        }


@dataclass
class Ensemble:
    positions: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=float)
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")

    @property
    def mean(self) -> float:
        return float(np.mean(self.positions))

    @property
    def second_moment(self) -> float:
        return float(np.mean(self.positions**2))

    def empirical(self) -> Empirical:
        return Empirical(self.positions)


@dataclass
class TrajectoryStats:
    times: np.ndarray
    mean: np.ndarray
    second_moment: np.ndarray
    w2: dict[str, np.ndarray]
    final: Empirical
    config: SimConfig
    note: Optional[str] = None

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            for line in header_comment.splitlines():
                buf.write(f"# {line}\n")
        if self.note:
            buf.write(f"# note: {self.note}\n")
        names = list(self.w2)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "mean", "m2"] + [f"w2_{n}" for n in names])
        for k in range(self.times.size):
            w.writerow(
                [repr(float(self.times[k])), repr(float(self.mean[k])), repr(float(self.second_moment[k]))]
                + [repr(float(self.w2[n][k])) for n in names]
            )
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "t": self.times.tolist(),
            "mean": self.mean.tolist(),
            "m2": self.second_moment.tolist(),
            "w2": {k: v.tolist() for k, v in self.w2.items()},
            "final": self.final.to_json(),
            "note": self.note,
        }


# --------------------------------------------------------------------------
# numba kernel


def _pack_poly(poly) -> tuple[np.ndarray, np.ndarray]:
    inner = np.asarray(poly.breaks[1:-1], dtype=float)
    deg = max(len(c) for c in poly.coeffs)
    coef = np.zeros((poly.n_pieces, deg))
    for k, c in enumerate(poly.coeffs):
        coef[k, : len(c)] = c
    return inner, coef


@njit(cache=True, inline="always")
def _peval(x, inner, coef):
    k = 0
    while k < inner.size and x >= inner[k]:
        k += 1
    row = coef[k]
    acc = 0.0
    for j in range(row.size - 1, -1, -1):
        acc = acc * x + row[j]
    return acc


@njit(cache=True)
def _advance(X, raw, first_step, dt, theta, ext_mean, vp_inner, vp_coef,
             sg_const, sg_inner, sg_coef, sg_lo, sg_hi, scheme, viol, blowup):
    """Advance every ensemble row of X through raw.shape[0] steps in place.

    ext_mean[s] is used as the mean at local step s unless it is NaN, in
    which case each row uses its own average.  Returns the global index of
    the first step producing a bad particle, or -1.
    """
    E, N = X.shape
    sq = math.sqrt(dt)
    means = np.empty(E)
    for s in range(raw.shape[0]):
        for e in range(E):
            if math.isnan(ext_mean[s]):
                acc = 0.0
                for i in range(N):
                    acc += X[e, i]
                means[e] = acc / N
            else:
                means[e] = ext_mean[s]
        for i in range(N):
            z = ppnd16(word_to_uniform(raw[s, i]))
            for e in range(E):
                x = X[e, i]
                if sg_const > 0.0:
                    sig = sg_const
                else:
                    sig = min(max(_peval(x, sg_inner, sg_coef), sg_lo), sg_hi)
                vp = _peval(x, vp_inner, vp_coef)
                if scheme == 0:
                    b = -vp - theta * (x - means[e])
                    xn = x + dt * b / (1.0 + dt * abs(b)) + sig * sq * z
                else:
                    b = -vp
                    xn = (x + dt * b / (1.0 + dt * abs(b)) + theta * means[e] * dt + sig * sq * z) / (1.0 + theta * dt)
                if not (abs(xn) <= blowup):
                    return first_step + s
                X[e, i] = xn
            if E == 2:
                d = X[0, i] - X[1, i]
                if d > viol[0]:
                    viol[0] = d
    return -1


def _kernel_args(model: Model):
    vp_inner, vp_coef = _pack_poly(model.vprime)
    sig = model.sigma
    if isinstance(sig, ConstantSigma):
        return vp_inner, vp_coef, float(sig.value), np.zeros(0), np.zeros((1, 1)), 0.0, 0.0
    sg_inner, sg_coef = _pack_poly(sig.poly)
    return vp_inner, vp_coef, 0.0, sg_inner, sg_coef, float(sig.lo), float(sig.hi)


# --------------------------------------------------------------------------
# drivers


MeanPath = Union[float, Callable[[float], float], None]
# A reference is a measure (W2 to it is recorded) or any function of the
# current empirical law.
Ref = Union[Measure1D, Callable[[Empirical], float]]


def initial_positions(init: Measure1D, n: int, seed: int) -> np.ndarray:
    """Inverse-CDF positions at stratified uniforms (sorted)."""
    u = stratified_uniforms(n, seed)
    return np.asarray(init.quantile(u), dtype=float)


def _init_seed(seed: int) -> list[int]:
    return [int(seed), 0x1D17]


def _as_measure(ref):
    return ref.measure if hasattr(ref, "measure") and not isinstance(ref, Measure1D) else ref


def _step_loop(model: Model, X: np.ndarray, config: SimConfig, mean_path: MeanPath,
               on_record: Callable[[int], None]) -> float:
    """Advance X in place to t_final, calling on_record(step) at each record.

    Returns the largest row-0-minus-row-1 gap seen (0 for a single row).
    """
    N = X.shape[1]
    n_steps = config.n_steps
    stride = int(config.record_stride)
    args = _kernel_args(model)
    scheme = _SCHEME_CODE[config.scheme]
    viol = np.zeros(1)
    on_record(0)
    chunk = max(1, min(stride, _CHUNK_WORDS // N))
    step = 0
    while step < n_steps:
        next_record = (step // stride + 1) * stride
        n = min(chunk, next_record - step, n_steps - step)
        raw = raw_block(config.seed, step, n, N)
        if mean_path is None:
            ext = np.full(n, np.nan)
        elif callable(mean_path):
            ext = np.array([float(mean_path((step + s) * config.dt)) for s in range(n)])
        else:
            ext = np.full(n, float(mean_path))
        bad = _advance(X, raw, step, config.dt, model.theta, ext, *args, scheme, viol, BLOWUP)
        if bad >= 0:
            raise SimulationBlowUp(int(bad), bad * config.dt)
        step += n
        if step % stride == 0 or step == n_steps:
            on_record(step)
    return float(viol[0])


def _observe(emp: Empirical, ref) -> float:
    """W2 to a reference measure, or the value of a callable observer."""
    if isinstance(ref, Measure1D):
        return wasserstein(emp, ref)
    return float(ref(emp))


def _run(model: Model, X: np.ndarray, config: SimConfig, mean_path: MeanPath,
         refs: Mapping[str, Ref] | None):
    refs = {k: _as_measure(v) for k, v in (refs or {}).items()}
    rec_t: list[float] = []
    rec: list[list[tuple]] = [[] for _ in range(X.shape[0])]

    def record(step: int) -> None:
        rec_t.append(step * config.dt)
        for e in range(X.shape[0]):
            w = {}
            if refs:
                emp = Empirical(X[e])
                w = {k: _observe(emp, r) for k, r in refs.items()}
            rec[e].append((float(np.mean(X[e])), float(np.mean(X[e] ** 2)), w))

    viol = _step_loop(model, X, config, mean_path, record)
    return np.asarray(rec_t), rec, viol


def _stats(times, rows, X_row, config, names, note) -> TrajectoryStats:
    return TrajectoryStats(
        times=times,
        mean=np.array([r[0] for r in rows]),
        second_moment=np.array([r[1] for r in rows]),
        w2={k: np.array([r[2][k] for r in rows]) for k in names},
        final=Empirical(X_row),
        config=config,
        note=note,
    )


def simulate(model: Model, init: Measure1D, config: SimConfig,
             refs: Mapping[str, Ref] | None = None, note: str | None = None) -> TrajectoryStats:
    """Self-consistent particle run from inverse-CDF samples of ``init``."""
    X = initial_positions(init, config.n_particles, _init_seed(config.seed))[None, :].copy()
    times, rec, _ = _run(model, X, config, None, refs)
    return _stats(times, rec[0], X[0], config, list(refs or {}), note)


def frozen_input_simulate(model: Model, mean_path: float | Callable[[float], float], init: Measure1D,
                          config: SimConfig, refs: Mapping[str, Ref] | None = None) -> TrajectoryStats:
    """Particles driven by a prescribed mean instead of their own average."""
    if mean_path is None:
        raise ValueError("mean_path is required")
    if callable(mean_path):
        probe = np.array([mean_path(t) for t in np.linspace(0.0, config.t_final, 257)], dtype=float)
        if not np.all(np.isfinite(probe)):
            raise ValueError("mean_path must be finite on [0, t_final]")
    X = initial_positions(init, config.n_particles, _init_seed(config.seed))[None, :].copy()
    times, rec, _ = _run(model, X, config, mean_path, refs)
    return _stats(times, rec[0], X[0], config, list(refs or {}), None)


def mean_path_from(stats: TrajectoryStats) -> Callable[[float], float]:
    """Piecewise-linear interpolant of a recorded mean series."""
    t, m = stats.times.copy(), stats.mean.copy()
    return lambda s: float(np.interp(s, t, m))


def coupled_simulate(model: Model, init_lo: Measure1D, init_hi: Measure1D, config: SimConfig,
                     refs: Mapping[str, Ref] | None = None, tol: float = 1e-9):
    """Two ensembles with comonotone starts and shared increments.

    Returns ``(stats_lo, stats_hi, max_violation)`` where the violation is
    the largest ``(x_lo_i - x_hi_i)^+`` seen after any step.
    """
    rel = compare_st(init_lo, init_hi, tol=tol).relation
    if rel not in (Relation.LeqStrict, Relation.Equal):
        raise ValueError(f"coupled_simulate needs init_lo <=_st init_hi, got {rel.value}")
    u = stratified_uniforms(config.n_particles, _init_seed(config.seed))
    X = np.vstack([init_lo.quantile(u), init_hi.quantile(u)]).astype(float)
    viol0 = max(0.0, float(np.max(X[0] - X[1])))
    times, rec, viol = _run(model, X, config, None, refs)
    names = list(refs or {})
    return (_stats(times, rec[0], X[0], config, names, None),
            _stats(times, rec[1], X[1], config, names, None),
            max(viol0, float(viol)))


# --------------------------------------------------------------------------
# moment probe


@dataclass
class MomentProbe:
    radius: float
    p: float
    times: np.ndarray
    moments: np.ndarray
    band: tuple[float, float]
    decay_rate: float
    entry_time: float
    monotone: bool
    stays_in_band: bool

    @property
    def band_center(self) -> float:
        return 0.5 * (self.band[0] + self.band[1])

    def rows(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.moments.tolist()))


def moment_probe(model: Model, radius: float, p: float, config: SimConfig, noise_tol: float = 0.01) -> MomentProbe:
    """p-th absolute moment along a run started from a point mass.

    The band is the range of the moment over the second half of the run.
    The decay rate is the slope of log-moment over the records where the
    moment still exceeds ten times the band top (the initial transient);
    it is NaN when there is no such transient.
    """
    if p < 2:
        raise ValueError("p must be >= 2")
    if radius < 0:
        raise ValueError("radius must be >= 0")
    X = np.full((1, config.n_particles), float(radius))
    times: list[float] = []
    p_moments: list[float] = []

    def record(step: int) -> None:
        times.append(step * config.dt)
        p_moments.append(float(np.mean(np.abs(X[0]) ** p)))

    _step_loop(model, X, config, None, record)
    t = np.asarray(times)
    m = np.asarray(p_moments)
    tail = m[m.size // 2:]
    band = (float(tail.min()), float(tail.max()))
    hi = band[1]
    inside = np.nonzero(m <= hi)[0]
    k_in = int(inside[0]) if inside.size else m.size - 1
    monotone = bool(np.all(m[1 : k_in + 1] <= (1 + noise_tol) * m[:k_in])) if k_in > 0 else True
    stays = bool(np.all(m[k_in:] <= (1 + noise_tol) * hi))
    trans = np.nonzero(m > 10 * hi)[0]
    if trans.size >= 2:
        sl = slice(0, int(trans[-1]) + 1)
        slope = np.polyfit(t[sl], np.log(m[sl]), 1)[0]
        rate = float(-slope)
    else:
        rate = float("nan")
    return MomentProbe(float(radius), float(p), t, m, band, rate, float(t[k_in]), monotone, stays)
