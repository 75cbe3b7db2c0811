"""Two-stage distributionally robust optimization with partitioned decision rules.

The package compiles Wasserstein-type moment and chi-square ambiguity models
into semidefinite programs, solves them directly or by Benders decomposition,
and evaluates solutions out of sample.
"""

__version__ = "0.1.0"

from .ambiguity import AmbiguityParameters, theoretical_epsilon, theoretical_gamma  # noqa: E402
from .conic import ConicProgram, SolverSettings, solve  # noqa: E402
from .geometry import PartitionScheme, SupportCone, build_box_support, build_partition  # noqa: E402
from .reformulate import TwoStageProblem, check_complete_recourse, solve_pdr  # noqa: E402

__all__ = [
    "__version__",
    "AmbiguityParameters",
    "theoretical_epsilon",
    "theoretical_gamma",
    "ConicProgram",
    "SolverSettings",
    "solve",
    "PartitionScheme",
    "SupportCone",
    "build_box_support",
    "build_partition",
    "TwoStageProblem",
    "check_complete_recourse",
    "solve_pdr",
]
