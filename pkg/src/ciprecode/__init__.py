"""Constructive-interference symbol-level precoding for QAM downlinks."""

__version__ = "0.1.0"

from .baselines import Precoder, rzf_precode, zf_precode  # noqa: E402
from .ci_core import CiGeometry, ScalingSolution, build_geometry, reconstruct_precoder, solve_ci  # noqa: E402
from .ci_overload import (OverloadGeometry, OverloadSolution, build_overload_geometry,  # noqa: E402
                          check_feasibility, solve_ci_overload)
from .modem import (Constellation, SymbolFrame, build_expansion, classify_components,  # noqa: E402
                    decompose_symbol, detect_symbol, make_square_qam, map_bits)
from .qp import (QpProblem, QpSolution, QpWorkspace, qp_setup, solve_active_set,  # noqa: E402
                 solve_closed_form_dual, solve_oracle)
from .sim import SimConfig, draw_channel, run_ber_sweep, run_feasibility_stats, transmit_slot  # noqa: E402

__all__ = [
    "Constellation", "SymbolFrame", "make_square_qam", "map_bits", "decompose_symbol",
    "classify_components", "build_expansion", "detect_symbol",
    "QpProblem", "QpWorkspace", "QpSolution", "qp_setup", "solve_active_set",
    "solve_closed_form_dual", "solve_oracle",
    "CiGeometry", "ScalingSolution", "build_geometry", "solve_ci", "reconstruct_precoder",
    "OverloadGeometry", "OverloadSolution", "build_overload_geometry", "solve_ci_overload",
    "check_feasibility", "Precoder", "zf_precode", "rzf_precode",
    "SimConfig", "draw_channel", "transmit_slot", "run_ber_sweep", "run_feasibility_stats",
]
