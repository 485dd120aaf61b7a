"""Structured-grid AMG with attention-sparsified non-Galerkin coarse operators."""

from .krylov import GmresConfig, gmres_solve
from .mg import (
    MgHierarchy,
    NumericalError,
    SolveReport,
    build_hierarchy,
    solve,
    speq_spectrum,
    theta,
    two_grid_error_ops,
    v_cycle,
)
from .neural import (
    AttentionParams,
    SparsifierModel,
    TrainConfig,
    TrainSet,
    attention_forward,
    build_scalar_train_set,
    grad_check,
    location_probs,
    loss,
    sparsify_stencil,
    topk_mask,
    train_level,
)
from .problems import (
    ElasticityParams,
    ParamInterval,
    RotLapParams,
    circulant_stencil,
    rotlap_stencil,
    sample_params,
    train_grid,
)
from .relax import SmootherSpec, residual, smooth
from .specvec import EigPair, build_T, rayleigh, smooth_vectors, training_vectors
from .stencil import (
    BlockStencil2x2,
    Stencil,
    analytic_equivalent_5pt,
    apply,
    assemble,
    galerkin_coarsen,
    prolong_bilinear,
    restrict_fw,
    truncate_by_magnitude,
)

__version__ = "0.1.0"
