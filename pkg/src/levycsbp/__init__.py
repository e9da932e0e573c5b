"""Monte Carlo and numerical tools for continuous-state branching processes in Levy environments."""

__version__ = "0.1.0"

from .branching import BranchingMechanism, ExponentialTail, FiniteAtoms, NoJumps, StablePower
from .environment import (EnvAtoms, EnvironmentPath, EnvironmentSpec, EnvNoJumps, TruncatedStable,
                          TwoSidedExponential, check_h1, check_h3, sample_path, spitzer_estimate)
from .quenched import quenched_survival, solve_backward, v_infinity
from .montecarlo import (SurvivalEstimate, decomposition_terms, estimate_survival,
                         estimate_survival_curve, fit_exponent, merge_estimates)

__all__ = [
    "BranchingMechanism", "ExponentialTail", "FiniteAtoms", "NoJumps", "StablePower",
    "EnvAtoms", "EnvironmentPath", "EnvironmentSpec", "EnvNoJumps", "TruncatedStable",
    "TwoSidedExponential", "check_h1", "check_h3", "sample_path", "spitzer_estimate",
    "quenched_survival", "solve_backward", "v_infinity",
    "SurvivalEstimate", "decomposition_terms", "estimate_survival", "estimate_survival_curve",
    "fit_exponent", "merge_estimates",
]
