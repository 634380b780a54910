from .compare import (
    DegenerateColumn,
    InsufficientCount,
    LRTResult,
    NotNested,
    chi2_pvalue,
    clean_pos_tag,
    correlations,
    delta_loglik,
    effect_size_ms,
    lrt,
    pos_delta_rmse,
    token_delta_rmse,
)
from .lme import ModelSpec, NotConverged, RegressionFit, Singular, fit_lme, ols_loglik
from .signed_rank import WilcoxonResult, bonferroni, null_distribution, wilcoxon

__all__ = [
    "DegenerateColumn", "InsufficientCount", "LRTResult", "ModelSpec", "NotConverged",
    "NotNested", "RegressionFit", "Singular", "WilcoxonResult", "bonferroni", "chi2_pvalue",
    "clean_pos_tag", "correlations", "delta_loglik", "effect_size_ms", "fit_lme", "lrt",
    "null_distribution", "ols_loglik", "pos_delta_rmse", "token_delta_rmse", "wilcoxon",
]
