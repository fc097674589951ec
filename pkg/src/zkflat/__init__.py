"""Flatness-based boundary control of the linear Zakharov-Kuznetsov equation.

Synthesizes boundary controls on (-1, 0) x (0, 1) from power-series generating
functions and Gevrey flat outputs, and verifies them with a mode-decoupled
spectral simulator.
"""

from .domain import Field, Grid, Params, TransverseBasis, l2_norm, make_basis, sine_analyze, sine_synthesize
from .genfun import GenFunTable, PowerSeries, build_table, check_bound
from .gevrey import BumpParams, borel_interpolate, bump, bump_deriv, step_deriv
from .freeflow import build_mode_operator, evolve_free, trace_f, trace_f_derivs
from .synthesis import (ControlSignal, FlatOutput, ReachCoefficients, TargetSpec, assemble_control,
                        assemble_state, null_flat_output, reach_coefficients, reach_flat_output)
from .simulator import compare_fields, pde_residual, simulate_controlled

__version__ = "0.1.0"
