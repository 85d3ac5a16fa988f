"""Convergence-rate certificates for loops driven by gradients of sector-bounded fields.

The building blocks are small state-space utilities (:mod:`ss_core`),
Zames-Falb alpha-IQC multipliers (:mod:`zf_multiplier`), an SDP layer with
independent verification (:mod:`sdp_interface`), the LMIs themselves
(:mod:`lmi_assembly`), bisection and sweeps (:mod:`rate_certifier`), graph
sector constants (:mod:`graph_tools`) and simulation-based audits
(:mod:`fields_sim`).
"""
from .ss_core import StateSpace, from_tf, gradient_flow_channel, kron_lift, series
from .zf_multiplier import MultiplierClass, PValues, ZFConfig, build_multiplier
from .sdp_interface import SdpProblem, SolveOptions, solve_feasibility, verify_solution
from .lmi_assembly import (FlockingModel, assemble_flocking_lmi, assemble_rate_lmi,
                           assemble_rate_lmi_full, assemble_rate_lmi_lpv)
from .rate_certifier import certify_plant, certify_rate, flocking_kd_threshold, stability_margin, sweep_L

__version__ = "0.1.0"
