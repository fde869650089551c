"""Viscoelastic McKibben actuator force-velocity modeling toolkit."""

from .analysis import FvCurve, FvPoint, RampWindow, SegmentationError, build_fv_curve, extract_fv_point, \
    fit_ramp_velocity, segment_ramps, synchronize
from .fitting import FitError, FitProblem, FitResult, fit_control, fit_sheath, init_control, r_squared
from .protocol import ProtocolConfig, build_protocol, contraction_ratio, strain_from_extension
from .slse import (
    NormalizedSlse,
    RampSpec,
    SlseChain,
    SlseParams,
    denormalize_params,
    dfv_asymptote,
    dfv_chain,
    dfv_single,
    fv_chain,
    fv_single,
    normalize_params,
    slse_ramp_force,
    v_alpha_approx,
    v_alpha_exact,
)
from .timesim import ChainState, ForceTrace, StrainProfile, add_noise, simulate, step_exact

__version__ = "0.1.0"
