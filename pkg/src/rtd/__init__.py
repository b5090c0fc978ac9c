"""Robust decomposition of symmetric third-order tensors into low-rank CP and
sparse parts, with synthetic generators and matrix robust-PCA baselines."""

from .tensors import (
    SymTensor3,
    SparseTensor3,
    FactorModel,
    idx,
    contract_1,
    contract_2,
    contract_3,
    rank1_accumulate,
    flatten,
    unflatten,
    tensor_slice,
    inf_norm,
    fro_norm,
    hard_threshold,
    spectral_norm_estimate,
    sym_embed,
    symmetrize_dense,
)
from .eig import (
    EigConfig,
    EigenPair,
    EigResult,
    svd_init,
    power_iterate,
    best_of_restarts,
    grad_ascent_refine,
    top_r_eigenpairs,
    grad_f,
    hessian_apply,
    ascent_objective,
)
from .decompose import (
    RtdConfig,
    Decomposition,
    Metrics,
    RtdError,
    threshold_schedule,
    practical_threshold,
    ncralgo,
    evaluate,
    trace_csv,
)
from .synth import (
    SynthSpec,
    Instance,
    gen_low_rank,
    measured_incoherence,
    gen_sparse_entrywise,
    gen_sparse_block,
    measured_eta,
    orbit_symmetrize,
    gen_instance,
)
from .baselines import (
    MatrixRpcaConfig,
    MatrixRpcaResult,
    truncated_svd,
    matrix_rpca,
    rpca_slices,
    rpca_flatten,
    whiten,
    unwhiten_model,
    whiten_decompose,
    slice_moment_estimate,
)

__version__ = "0.1.0"
