"""Feasibility-aware imitation learning for generalized Benders decomposition."""

from .problem import ADMISSIBLE, FAMILY_PBC, N_ACTIONS, ProblemInstance, sample_instance

__all__ = ["ADMISSIBLE", "FAMILY_PBC", "N_ACTIONS", "ProblemInstance", "sample_instance"]
__version__ = "0.1.0"
