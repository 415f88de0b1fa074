"""Invariant measures, stochastic order and particle simulation for
one-dimensional McKean-Vlasov equations with quadratic interaction."""

from .dissipativity import (
    Certificate,
    ConfigurationReport,
    Term,
    optimize_threshold,
    preset_certificates,
    separation_check,
    verify_configuration,
)
from .measures import (
    Dirac,
    Empirical,
    GridDensity,
    Measure1D,
    OrderResult,
    Relation,
    compare_st,
    order_bounds,
    perturb_order_unrelated,
    project_to_order_interval,
    sample,
    wasserstein,
)
from .model import Model, preset, validate_assumptions, zero_crossing_number
from .particles import SimConfig, TrajectoryStats, coupled_simulate, frozen_input_simulate, moment_probe, simulate
from .polynomials import PiecewisePolynomial
from .stationary import (
    InvariantCatalog,
    find_invariant_measures,
    psi_ball_check,
    psi_map,
    self_consistency_F,
    stationary_density,
)

__all__ = [name for name in dir() if not name.startswith("_")]
