"""Lattice harness dynamics: event-driven simulation, backward-walk duality,
difference-walk variance oracles and the Gaussian harmonic crystal."""

from .dual import (
    backward_weights,
    dual_height,
    martingale_increments,
    nested_box_run,
    representation_residual,
)
from .dwalk import (
    Bound,
    DWalkLaw,
    MonteCarlo,
    Uniformization,
    difference_variance,
    green_at_origin,
    occupancy_probability,
    potential_kernel,
    residual_tail,
    window_variance,
)
from .engine import EventStream, evolve, evolve_seen_from_origin, generate_events, sample_batch
from .experiments import ExperimentConfig, list_experiments, run_experiment
from .gibbs import (
    build_model,
    conditional_mean_weights,
    coupled_nested_fields,
    detailed_balance_statistic,
    log_density,
    sample_field,
    stationary_model,
)
from .lattice import HeightField, Kernel, Region, is_harmonic, p_average
from .stats import estimate, fit_power_law

__version__ = "0.1.0"

__all__ = [
    "Bound", "DWalkLaw", "EventStream", "ExperimentConfig", "HeightField", "Kernel",
    "MonteCarlo", "Region", "Uniformization", "backward_weights", "build_model",
    "conditional_mean_weights", "coupled_nested_fields", "detailed_balance_statistic",
    "difference_variance", "dual_height", "estimate", "evolve", "evolve_seen_from_origin",
    "fit_power_law", "generate_events", "green_at_origin", "is_harmonic", "list_experiments",
    "log_density", "martingale_increments", "nested_box_run", "occupancy_probability",
    "p_average", "potential_kernel", "representation_residual", "residual_tail",
    "run_experiment", "sample_batch", "sample_field", "stationary_model", "window_variance",
]
