"""Reduced-basis approximation and eigenvalue tracking for a 2D cavity
eigenproblem on parameter-dependent domains."""

from .assembly import AssembledSystem, assemble, discrete_gradient, matrix_derivatives
from .config import RunConfig, load_config, parse_config
from .eigensolve import (
    EigenSolution,
    b_normalize,
    b_orthonormalize,
    count_null,
    eigenvalue_clusters,
    solve_gevp,
)
from .errors import (
    CavityError,
    ConfigError,
    GapUndefinedError,
    GeometryError,
    NumericalError,
    RankDeficiencyError,
    SingularDerivativeError,
)
from .gauge import (
    TreeCotree,
    build_tree_cotree,
    divergence_defect,
    graddiv_project,
    gram_schmidt_clean,
    tree_cotree_condense,
    tree_cotree_expand,
)
from .geometry import (
    MappingFamily,
    ReferenceMesh,
    affine_stretch,
    build_reference_mesh,
    identity_map,
    sine_bump,
)
from .greedy import ErrorEstimate, GreedyConfig, estimate, gap, greedy_extend, residual
from .pod import (
    ReducedBasis,
    SnapshotSet,
    collect_snapshots,
    pod_basis,
    reduce_system,
    upscale,
)
from .problem import CavityProblem
from .tracking import (
    TrackingConfig,
    TrackingTrace,
    analytic_rectangle_table,
    classify_endpoint,
    correlation_match,
    eigen_derivatives,
    taylor_predict,
    track,
)

__version__ = "0.1.0"
