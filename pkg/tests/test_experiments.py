import math

import numpy as np
import pytest

from mvlab.dissipativity import preset_certificates
from mvlab.experiments import (
    ExperimentSpec,
    ball_inits,
    ball_invariance_dynamic,
    basin_experiment,
    build_init,
    default_basin_inits,
    init_label,
    interval_attraction,
    interval_verdict,
    phase_sweep,
    predict_attractor,
    segment_convergence,
    spec_hash,
)
from mvlab.measures import Dirac, Empirical, wasserstein
from mvlab.model import preset
from mvlab.particles import SimConfig
from mvlab.stationary import find_invariant_measures, stationary_density

THETA_DW = 27 * (9 + math.sqrt(17)) / 128
R_DW = (9 - math.sqrt(17)) / 8


@pytest.fixture(scope="module")
def dw():
    model = preset("SymmetricDoubleWell", THETA_DW, sigma2=0.3)
    cat = find_invariant_measures(model)
    certs = preset_certificates(model.name, model.theta, model.sigma_bounds[1])
    return model, cat, certs


# --------------------------------------------------------------------------
# specs


def test_spec_from_preset_fields():
    spec = ExperimentSpec.from_json(
        {"kind": "PhaseSweep", "preset": "MultiWell", "theta": 2.0, "sigma2": 1.0,
         "theta_grid": [1, 2], "sigma2_grid": [0.5], "sim": {"n_particles": 100, "t_final": 1.0}}
    )
    assert spec.model.name == "MultiWell"
    assert spec.theta_grid == [1.0, 2.0]
    assert spec.sim.n_particles == 100
    assert len(spec.sha256) == 64


@pytest.mark.parametrize(
    "obj",
    [
        {"kind": "Sweep", "preset": "MultiWell"},
        {"kind": "PhaseSweep", "preset": "MultiWell", "theta_grid": [], "sigma2_grid": [1.0]},
        {"kind": "Basin", "preset": "NoSuchWell", "inits": [{"type": "dirac", "point": 0}]},
        {"kind": "Basin", "model": {"preset": "NoSuchWell", "theta": 1.0, "sigma2": 1.0}, "inits": [1]},
        {"kind": "Basin", "preset": "MultiWell"},
    ],
)
def test_spec_validation(obj):
    with pytest.raises(ValueError):
        ExperimentSpec.from_json(obj)


def test_spec_hash_ignores_key_order():
    assert spec_hash({"a": 1, "b": [1, 2]}) == spec_hash({"b": [1, 2], "a": 1})
    assert spec_hash({"a": 1}) != spec_hash({"a": 2})


# --------------------------------------------------------------------------
# phase sweep


def test_phase_sweep_double_well_transition():
    table = phase_sweep(preset("SymmetricDoubleWell", 3.0, 1.0), [3.0], [0.3, 1.0, 4.0])
    counts = [c for _, _, c in table.rows]
    assert counts[0] == 3 and counts[-1] == 1
    assert table.z_bound == 3 and table.allowed == (1, 3)
    assert table.passed and not table.nonmonotone_thetas
    lines = table.to_csv("spec_sha256: 00").splitlines()
    assert lines[:2] == ["# spec_sha256: 00", "theta,sigma2,count"]
    assert len(lines) == 5


def test_phase_sweep_multiwell_pinned_point():
    table = phase_sweep(preset("MultiWell", 1.0, 1.0), [8 * math.sqrt(5 + math.sqrt(13))], [1.0])
    assert table.rows[0][2] == 5
    assert table.allowed == (1, 3, 5)


def test_phase_sweep_requires_grids():
    with pytest.raises(ValueError):
        phase_sweep(preset("MultiWell", 1.0, 1.0), [], [1.0])


# --------------------------------------------------------------------------
# inits and predictions


def test_build_init_kinds(dw):
    model, _, _ = dw
    mu, m = build_init({"type": "dirac", "point": 2.0})
    assert mu.mean == 2.0 and m is None
    mu, _ = build_init({"type": "ball_sample", "center": 1.0, "shift": 0.1, "spread": 0.2, "n_atoms": 50, "seed": 3})
    assert mu.mean == pytest.approx(1.1, abs=1e-12)
    assert math.sqrt(mu.variance) == pytest.approx(0.2, rel=1e-12)
    mu, m = build_init({"type": "mu_m", "m": 0.5}, model)
    assert m == 0.5 and isinstance(mu.mean, float)
    mu, _ = build_init({"type": "uniform_atoms", "lo": -3, "hi": 3})
    assert mu.mean == pytest.approx(0.0, abs=1e-12)
    mu, _ = build_init({"type": "measure", "measure": Empirical([0.0, 1.0]).to_json()})
    assert mu.mean == pytest.approx(0.5)
    with pytest.raises(ValueError):
        build_init({"type": "mu_m", "m": 0.5})
    with pytest.raises(ValueError):
        build_init({"type": "cauchy"})


def test_init_labels():
    assert init_label({"type": "dirac", "point": -4.0}) == "dirac(-4)"
    assert init_label({"type": "mu_m", "m": 0.25}) == "mu_m(0.25)"
    assert init_label({"type": "uniform_atoms", "lo": -3, "hi": 3}) == "uniform[-3,3]"


def test_predictions(dw):
    _, cat, certs = dw
    assert predict_attractor(cat, certs, Dirac(-4.0)).index == 0
    assert predict_attractor(cat, certs, Dirac(1.0)).index == 2
    assert predict_attractor(cat, certs, Dirac(1.0 - 0.5 * R_DW)).index == 2
    assert predict_attractor(cat, certs, Dirac(0.0)).index is None
    for m, want in ((-0.3, 0), (0.3, 2), (-5.0, 0)):
        mu = stationary_density(cat.model, m).measure
        assert predict_attractor(cat, certs, mu, m=m).index == want
    guarded = predict_attractor(cat, certs, stationary_density(cat.model, 0.02).measure, m=0.02)
    assert guarded.index is None and "guard" in guarded.reason


def test_default_inits_are_all_predicted(dw):
    model, cat, certs = dw
    inits = default_basin_inits(model, certs, cat)
    assert len(inits) == 40
    kinds = [s["type"] for s in inits]
    assert kinds.count("dirac") == 16 and kinds.count("ball_sample") == 8 and kinds.count("mu_m") == 16
    for s in inits:
        mu, m = build_init(s, model)
        assert predict_attractor(cat, certs, mu, m).index in (0, 2)


def test_ball_inits_lie_in_ball():
    for s in ball_inits(1.0, R_DW, 12, seed=4):
        mu, _ = build_init(s)
        assert wasserstein(mu, Dirac(1.0)) <= 0.8 * R_DW + 1e-12


# --------------------------------------------------------------------------
# particle suites (small ensembles)


def test_basin_small(dw):
    model, cat, _ = dw
    inits = [{"type": "dirac", "point": -2.0}, {"type": "dirac", "point": 1.3}, {"type": "mu_m", "m": 0.02},
             {"type": "mu_m", "m": -0.6}]
    rep = basin_experiment(model, inits, SimConfig(2000, 1e-3, 6.0, seed=5, record_stride=1000), tol=0.1, catalog=cat)
    assert [r.predicted for r in rep.rows] == [0, 2, None, 0]
    assert rep.rows[2].passed is None and rep.rows[2].note
    assert rep.pass_fraction == 1.0 and rep.passed
    text = rep.to_csv("spec_sha256: 1")
    assert text.splitlines()[0] == "# spec_sha256: 1"
    assert text.splitlines()[1].startswith("# note: ")
    assert rep.to_json()["passed"] is True


def test_segment_convergence_small(dw):
    model, cat, _ = dw
    rep = segment_convergence(model, [-1.0, 1.0], SimConfig(1000, 1e-3, 4.0, seed=2, record_stride=1000),
                              tol=0.12, catalog=cat)
    assert [r.predicted for r in rep.rows] == [0, 2]
    assert rep.passed


def test_parallel_matches_serial(dw):
    model, cat, _ = dw
    inits = [{"type": "dirac", "point": -1.5}, {"type": "dirac", "point": 1.5}]
    cfg = SimConfig(300, 1e-3, 0.5, seed=7, record_stride=500)
    a = basin_experiment(model, inits, cfg, catalog=cat, threads=1)
    b = basin_experiment(model, inits, cfg, catalog=cat, threads=2)
    assert [r.w2_final for r in a.rows] == [r.w2_final for r in b.rows]


def test_interval_verdict_rules():
    assert interval_verdict(np.array([1.0, 0.5, 0.2, 0.01]), 0.05)
    assert not interval_verdict(np.array([1.0, 0.5, 0.2, 0.06]), 0.05)
    assert not interval_verdict(np.array([1.0, np.inf, 0.01, 0.01]), 0.05)
    assert interval_verdict(np.array([0.0, 0.01, 0.02, 0.01]), 0.05)
    assert not interval_verdict(np.array([0.0, 0.07, 0.02, 0.01]), 0.05)


def test_interval_attraction_small(dw):
    model, cat, _ = dw
    rep = interval_attraction(model, [{"type": "dirac", "point": 3.0}], SimConfig(2000, 1e-3, 5.0, seed=3, record_stride=500),
                              tol=0.1, catalog=cat)
    row = rep.rows[0]
    assert row.distance[0] > 1.0
    assert rep.passed
    assert rep.to_json()["rows"][0]["init"] == "dirac(3)"


def test_ball_invariance_and_control(dw):
    model, _, _ = dw
    cfg = SimConfig(2000, 1e-3, 2.0, seed=1, record_stride=100)
    rep = ball_invariance_dynamic(model, 1.0, R_DW, cfg, init_specs=[{"type": "dirac", "point": 1.3},
                                                                     {"type": "dirac", "point": 1 + 0.79 * R_DW}])
    assert rep.passed and not rep.excursions
    assert rep.margin == pytest.approx(3 / math.sqrt(2000))
    control = ball_invariance_dynamic(model, 0.0, R_DW, cfg, init_specs=[{"type": "dirac", "point": 0.3}], claimed=False)
    assert control.excursions and control.passed
    assert control.excursions[0].trajectory is not None
    assert control.to_json()["claimed"] is False
    claimed = ball_invariance_dynamic(model, 0.0, R_DW, cfg, init_specs=[{"type": "dirac", "point": 0.3}])
    assert not claimed.passed
