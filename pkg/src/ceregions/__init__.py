"""Exact certainty-equivalence regions for constrained linear-quadratic control.

Computes the subset of the state space on which replacing the disturbance by
its mean (while keeping constraints robust) is provably optimal, as an
explicit collection of polytopic regions with affine laws and quadratic
values, via a backward sweep of multi-parametric QPs — optionally reduced by
a finite symmetry group of the problem.
"""

from .dp import (
    CERegionResult,
    DPTable,
    PCollection,
    ProblemSpec,
    RiccatiSequence,
    brute_force_dp,
    ce_backup,
    certainty_test,
    compute_ce_region,
    riccati_recursion,
    terminal_collection,
)
from .errors import (
    CERegionsError,
    EmptySetError,
    GridTooCoarseError,
    InfeasibleProblemError,
    MalformedInputError,
    NonFiniteGroupError,
    NotCoveredError,
    OrbitInconsistencyError,
    SchemaError,
    VerificationError,
)
from .geometry import (
    Polytope,
    chebyshev_center,
    facet_index_sets,
    linear_image_equal,
    minimal_rep,
    normalize,
    pontryagin_diff,
    polytopes_equal,
    vertices_2d,
)
from .mpqp import CriticalRegion, MPQPForm, PWASolution, canonicalize, eval_pwa, eval_value, solve_mpqp
from .problem_io import ProblemFile, parse_problem, spec_to_dict, write_problem
from .solvers import QPProblem, QPSolution, kkt_residuals, solve_lp, solve_qp
from .symmetry import (
    OrbitPartition,
    SymmetricCEResult,
    SymmetryGroup,
    SymmetryPair,
    close_group,
    orbit_region,
    quotient,
    reconstruct_collection,
    symmetric_ce_region,
    verify_symmetry,
)
from .truncation import (
    DisturbanceSpec,
    TruncationResult,
    chebyshev_box,
    per_stage_mass,
    truncate_disturbance,
    truncate_gaussian_1d,
    verify_symmetric_support,
)

__version__ = "0.1.0"
