from .oracles import exact_dual_maximize, exact_dual_objective, primal_bruteforce
from .sga import (
    SgaConfig,
    SgaResult,
    extract_reweighting,
    h1_eval,
    h1_subgradient,
    sga_estimate,
)

__all__ = [
    "SgaConfig",
    "SgaResult",
    "exact_dual_maximize",
    "exact_dual_objective",
    "extract_reweighting",
    "h1_eval",
    "h1_subgradient",
    "primal_bruteforce",
    "sga_estimate",
]
