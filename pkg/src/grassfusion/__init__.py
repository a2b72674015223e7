"""Subspace clustering and completion of incomplete data by Grassmannian fusion.

Each partially observed column gets its own proxy subspace. The proxies are
pulled towards a completion of their column and towards each other, then
clustered, and each cluster is completed at low rank.
"""

from .cluster import (
    affinity,
    clustering_error,
    distance_matrix,
    estimate_k_eigengap,
    spectral_cluster,
)
from .complete import (
    PipelineConfig,
    PipelineResult,
    SubspaceEstimate,
    assign_point,
    complete_point,
    hrmc_pipeline,
    identify_subspace,
    lrmc_als,
    project_coefficients,
    rank_sweep,
    sketch_select,
)
from .exceptions import *  # noqa: F401,F403
from .manifold import (
    chordal_residual,
    geodesic_distance,
    geodesic_step,
    orthonormalize,
    principal_angles,
    project_tangent,
)
from .objective import (
    ObservedVector,
    OptimizationTrace,
    ProxyEnsemble,
    armijo_step,
    build_completion_basis,
    evaluate,
    init_proxy,
    objective_value,
    optimize,
    total_gradient,
)
from .synth import MaskedMatrix, add_noise, apply_mask, generate_union, sampling_limit

__version__ = "0.1.0"
