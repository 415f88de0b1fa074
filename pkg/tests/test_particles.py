import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from mvlab.measures import Dirac, Empirical, GridDensity, wasserstein
from mvlab.model import Model, preset
from mvlab.noise import normals, ppnd16, raw_words, word_to_uniform
from mvlab.particles import (
    SURROGATE_NOTE,
    SimConfig,
    SimulationBlowUp,
    coupled_simulate,
    frozen_input_simulate,
    initial_positions,
    mean_path_from,
    moment_probe,
    simulate,
)
from mvlab.stationary import stationary_density

# V'(x) = x with theta = 1: the law stays Gaussian, the mean decays like e^{-t}
# and the variance relaxes to sigma^2 / (2 (1 + theta)) = 1/4.
LINEAR = Model.from_coefficients([0.0, 1.0], 1.0, 1.0)


# --------------------------------------------------------------------------
# noise


@settings(deadline=None)
@given(st.floats(1e-300, 1 - 1e-16))
def test_ppnd16_matches_scipy(p):
    assert ppnd16(p) == pytest.approx(stats.norm.ppf(p), rel=1e-14, abs=1e-14)


def test_uniforms_lie_in_open_interval():
    assert 0.0 < word_to_uniform(np.uint64(0)) < 1e-15
    assert np.isfinite(ppnd16(word_to_uniform(np.uint64(2**64 - 1))))
    assert 1.0 - 1e-15 < word_to_uniform(np.uint64(2**64 - 1)) < 1.0


def test_normals_depend_only_on_seed_step_and_index():
    a = normals(7, 3, 1000)
    b = normals(7, 3, 50)
    assert np.array_equal(a[:50], b)
    assert not np.array_equal(a, normals(7, 4, 1000))
    assert not np.array_equal(a, normals(8, 3, 1000))
    assert np.array_equal(raw_words(7, 3, 10), raw_words(7, 3, 10))


def test_normals_are_standard():
    z = normals(11, 0, 200_000)
    assert abs(z.mean()) < 0.01
    assert z.std() == pytest.approx(1.0, abs=0.01)
    assert stats.kstest(z, "norm").pvalue > 1e-3


# --------------------------------------------------------------------------
# configuration and inits


@pytest.mark.parametrize(
    "kw",
    [
        dict(dt=0.02),
        dict(dt=0.0),
        dict(n_particles=1),
        dict(t_final=1e-4),
        dict(scheme="rk4"),
        dict(seed=-1),
        dict(seed=2**64),
        dict(record_stride=0),
    ],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SimConfig(**kw)


def test_config_steps_and_json():
    c = SimConfig(100, 1e-3, 2.0, seed=5)
    assert c.n_steps == 2000
    assert c.to_json()["seed"] == 5


def test_initial_positions_are_sorted_quantiles():
    g = GridDensity.gaussian(1.0, 0.5)
    x = initial_positions(g, 5000, [0, 0x1D17])
    assert np.all(np.diff(x) >= 0)
    assert x.mean() == pytest.approx(1.0, abs=0.01)
    assert x.std() == pytest.approx(0.5, rel=0.01)
    assert np.all(initial_positions(Dirac(2.0), 10, [0, 1]) == 2.0)


# --------------------------------------------------------------------------
# self-consistent runs


@pytest.mark.parametrize("scheme", ["tamed_euler", "semi_implicit_linear"])
def test_linear_model_moments(scheme):
    cfg = SimConfig(20_000, 1e-3, 4.0, scheme=scheme, seed=3, record_stride=500)
    st_ = simulate(LINEAR, Dirac(2.0), cfg)
    assert st_.times[-1] == pytest.approx(4.0)
    assert np.allclose(st_.mean, 2.0 * np.exp(-st_.times), atol=0.02)
    var_end = st_.second_moment[-1] - st_.mean[-1] ** 2
    # variance of the Gaussian law at time t, started from a point mass
    assert var_end == pytest.approx(0.25 * (1 - math.exp(-16.0)), rel=0.04)


def test_ou_from_point_mass():
    theta, sigma, n, t_final = 2.0, 0.8, 20_000, 3.0
    ou = Model.from_coefficients([0.0], theta, sigma)
    st_ = simulate(ou, Dirac(0.0), SimConfig(n, 1e-3, t_final, seed=12, record_stride=500))
    assert np.all(np.abs(st_.mean) <= 3 * sigma * np.sqrt(st_.times) / math.sqrt(n) + 1e-12)
    assert st_.second_moment[-1] == pytest.approx(sigma**2 / (2 * theta), rel=0.1)


def test_ou_frozen_zero_mean_relaxes_exponentially():
    theta = 1.5
    ou = Model.from_coefficients([0.0], theta, 0.5)
    st_ = frozen_input_simulate(ou, 0.0, Dirac(1.0), SimConfig(20_000, 1e-3, 2.0, seed=13, record_stride=250))
    assert np.allclose(st_.mean, np.exp(-theta * st_.times), atol=0.02)


def test_runs_are_reproducible():
    model = preset("SymmetricDoubleWell", 2.0, sigma2=0.3)
    cfg = SimConfig(500, 1e-3, 0.5, seed=9, record_stride=50)
    a = simulate(model, Dirac(0.3), cfg)
    b = simulate(model, Dirac(0.3), cfg)
    assert np.array_equal(a.final.points, b.final.points)
    assert np.array_equal(a.mean, b.mean)
    c = simulate(model, Dirac(0.3), SimConfig(500, 1e-3, 0.5, seed=10, record_stride=50))
    assert not np.array_equal(a.final.points, c.final.points)


def test_record_stride_does_not_change_path():
    model = preset("SymmetricDoubleWell", 2.0, sigma2=0.3)
    a = simulate(model, Dirac(0.3), SimConfig(300, 1e-3, 0.4, seed=1, record_stride=7))
    b = simulate(model, Dirac(0.3), SimConfig(300, 1e-3, 0.4, seed=1, record_stride=400))
    assert np.array_equal(a.final.points, b.final.points)
    assert a.times[-1] == pytest.approx(0.4)


def test_reference_distances_recorded():
    model = preset("SymmetricDoubleWell", 3.0, sigma2=0.3)
    mu1 = stationary_density(model, 1.0)
    cfg = SimConfig(2000, 1e-3, 1.0, seed=2, record_stride=250)
    st_ = simulate(model, Dirac(1.0), cfg, refs={"mu": mu1, "m": lambda e: e.mean})
    assert st_.w2["mu"][0] == pytest.approx(wasserstein(Dirac(1.0), mu1.measure), rel=1e-9)
    assert np.allclose(st_.w2["m"], st_.mean)


def test_blowup_is_reported():
    expanding = Model.from_coefficients([0.0, -50.0], 1.0, 0.1)
    with pytest.raises(SimulationBlowUp) as err:
        simulate(expanding, Dirac(999_990.0), SimConfig(10, 0.01, 1.0))
    assert err.value.step < 100


def test_csv_layout():
    st_ = simulate(LINEAR, Dirac(1.0), SimConfig(100, 1e-3, 0.01, record_stride=5), refs={"z": Dirac(0.0)},
                   note=SURROGATE_NOTE)
    lines = st_.to_csv("spec_sha256: ff").splitlines()
    assert lines[0] == "# spec_sha256: ff"
    assert lines[1].startswith("# note: ")
    assert lines[2] == "t,mean,m2,w2_z"
    assert len(lines) == 3 + 3
    assert float(lines[3].split(",")[1]) == 1.0


# --------------------------------------------------------------------------
# frozen mean and coupling


def test_frozen_constant_mean_relaxes_to_frozen_law():
    model = preset("SymmetricDoubleWell", 3.0, sigma2=0.3)
    target = stationary_density(model, 0.4)
    cfg = SimConfig(20_000, 1e-3, 6.0, seed=4, record_stride=1000)
    st_ = frozen_input_simulate(model, 0.4, Dirac(-1.0), cfg, refs={"mu": target})
    assert st_.w2["mu"][-1] < 0.03
    assert st_.mean[-1] == pytest.approx(target.mean, abs=0.02)


def test_frozen_replay_of_own_mean():
    model = preset("SymmetricDoubleWell", 2.0, sigma2=0.3)
    cfg = SimConfig(400, 1e-3, 0.3, seed=6, record_stride=1)
    own = simulate(model, Dirac(0.7), cfg)
    replay = frozen_input_simulate(model, mean_path_from(own), Dirac(0.7), cfg)
    assert np.allclose(replay.final.points, own.final.points, atol=1e-10)


def test_frozen_requires_finite_path():
    with pytest.raises(ValueError):
        frozen_input_simulate(LINEAR, lambda t: math.inf, Dirac(0.0), SimConfig(10, 1e-3, 0.01))


def test_coupling_identical_inits_stay_identical():
    model = preset("SymmetricDoubleWell", 2.0, sigma2=0.3)
    init = GridDensity.gaussian(0.2, 0.4)
    lo, hi, viol = coupled_simulate(model, init, init, SimConfig(1000, 1e-3, 0.5, seed=8))
    assert viol == 0.0
    assert np.array_equal(lo.final.points, hi.final.points)


@settings(max_examples=8, deadline=None)
@given(st.floats(-2, 1), st.floats(0.01, 2))
def test_coupling_preserves_order(a, gap):
    model = preset("SymmetricDoubleWell", 2.5, sigma2=0.3)
    lo, hi, viol = coupled_simulate(model, Dirac(a), Dirac(a + gap), SimConfig(300, 1e-3, 0.3, seed=1))
    assert viol == 0.0
    assert np.all(lo.mean <= hi.mean)


def test_coupling_rejects_unordered_inits():
    with pytest.raises(ValueError):
        coupled_simulate(LINEAR, Dirac(1.0), Dirac(0.0), SimConfig(10, 1e-3, 0.01))
    with pytest.raises(ValueError):
        coupled_simulate(LINEAR, Empirical([0.0, 3.0]), Dirac(1.0), SimConfig(10, 1e-3, 0.01))


# --------------------------------------------------------------------------
# moment probe


def test_moment_probe_linear_decay():
    probe = moment_probe(LINEAR, 10.0, 2.0, SimConfig(4000, 1e-3, 12.0, seed=2, record_stride=50))
    # the mean part 100 e^{-2t} dominates the transient and is negligible by t = 6
    assert probe.decay_rate == pytest.approx(2.0, rel=0.05)
    assert probe.monotone and probe.stays_in_band
    assert probe.band[0] <= probe.band_center <= probe.band[1]
    assert probe.band_center == pytest.approx(0.25, rel=0.1)
    assert len(probe.rows()) == probe.times.size


def test_moment_probe_argument_checks():
    with pytest.raises(ValueError):
        moment_probe(LINEAR, 1.0, 1.0, SimConfig(10, 1e-3, 0.01))
    with pytest.raises(ValueError):
        moment_probe(LINEAR, -1.0, 2.0, SimConfig(10, 1e-3, 0.01))
