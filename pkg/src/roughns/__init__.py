"""Pseudo-spectral 3D Navier-Stokes vorticity solver with transport noise
and rough-path diagnostics on the torus."""

__version__ = "0.1.0"

from .lattice import (
    LatticeMode,
    NoiseCoefficients,
    enumerate_modes,
    sigma_action_offsets,
    theta_coefficients,
)
from .spectral import (
    SpectralField,
    Truncation,
    biot_savart,
    leray_project,
    lie_derivative,
    sobolev_norm,
    transport_apply,
    trilinear_b,
)
from .brownian import (
    BrownianEnsemble,
    PiecewiseLinearFamily,
    complex_from_real,
    piecewise_linear,
    sample_ensemble,
)
from .roughpath import (
    RoughPathLift,
    TwoIndexMap,
    canonical_lift,
    driver_norm_proxy,
    holder_seminorm,
    remainder_map,
    stratonovich_reference_lift,
)
from .dynamics import (
    SolverConfig,
    Trajectory,
    cutoff_factor,
    lifespan,
    rhs_wong_zakai,
    simulate,
    step,
)

__all__ = [
    "LatticeMode",
    "NoiseCoefficients",
    "enumerate_modes",
    "sigma_action_offsets",
    "theta_coefficients",
    "SpectralField",
    "Truncation",
    "biot_savart",
    "leray_project",
    "lie_derivative",
    "sobolev_norm",
    "transport_apply",
    "trilinear_b",
    "BrownianEnsemble",
    "PiecewiseLinearFamily",
    "complex_from_real",
    "piecewise_linear",
    "sample_ensemble",
    "RoughPathLift",
    "TwoIndexMap",
    "canonical_lift",
    "driver_norm_proxy",
    "holder_seminorm",
    "remainder_map",
    "stratonovich_reference_lift",
    "SolverConfig",
    "Trajectory",
    "cutoff_factor",
    "lifespan",
    "rhs_wong_zakai",
    "simulate",
    "step",
]
