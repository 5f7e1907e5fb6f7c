"""Vine-copula bias correction for multivariate ensembles with zero-inflated margins."""

__version__ = "0.1.0"

from .copula import (
    BivariateCopula,
    CheckerboardCopula,
    ClaytonCopula,
    FrankCopula,
    GaussianCopula,
    GumbelCopula,
    IndependenceCopula,
    PseudoObs,
    fit_pair,
    gen_density,
    hfunc,
    hfunc_inverse,
    kendall_tau,
)
from .correction import CorrectedSet, CorrectionConfig, delta_map, ubc_correct, vbc_correct
from .dataset import (
    Chunk,
    ChunkKey,
    ClimateTable,
    VariableSpec,
    chunk_manifest,
    extend_overlap,
    load_table,
    make_chunks,
)
from .evaluation import (
    MetricReport,
    UnitMetrics,
    copula_iw2,
    empirical_joint_cdf,
    improvement_iw2,
    mci,
    per_margin_iw2,
    wasserstein2,
)
from .marginal import (
    MarginalEvaluation,
    MixtureMarginal,
    fit_marginal,
    marginal_eval,
    marginal_quantile,
    randomized_pit,
)
from .vine import (
    VineModel,
    VineStructure,
    count_structures,
    fit_vine,
    rosenblatt_forward,
    rosenblatt_inverse,
    select_structure,
    vine_log_density,
    vine_sample,
)

__all__ = [
    "BivariateCopula",
    "CheckerboardCopula",
    "Chunk",
    "ChunkKey",
    "ClaytonCopula",
    "ClimateTable",
    "CorrectedSet",
    "CorrectionConfig",
    "FrankCopula",
    "GaussianCopula",
    "GumbelCopula",
    "IndependenceCopula",
    "MarginalEvaluation",
    "MetricReport",
    "MixtureMarginal",
    "PseudoObs",
    "UnitMetrics",
    "VariableSpec",
    "VineModel",
    "VineStructure",
    "chunk_manifest",
    "copula_iw2",
    "count_structures",
    "delta_map",
    "empirical_joint_cdf",
    "extend_overlap",
    "fit_marginal",
    "fit_pair",
    "fit_vine",
    "gen_density",
    "hfunc",
    "hfunc_inverse",
    "improvement_iw2",
    "kendall_tau",
    "load_table",
    "make_chunks",
    "marginal_eval",
    "marginal_quantile",
    "mci",
    "per_margin_iw2",
    "randomized_pit",
    "rosenblatt_forward",
    "rosenblatt_inverse",
    "select_structure",
    "ubc_correct",
    "vbc_correct",
    "vine_log_density",
    "vine_sample",
    "wasserstein2",
]
