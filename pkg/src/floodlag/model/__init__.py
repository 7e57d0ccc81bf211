from .conditional import (Panel, ConditionalFit, check_rank, conditional_loglik,
                          equivalence_check_fixed_effects, fit_conditional, fit_fixed_effects_poisson,
                          pearson_dispersion, separated_columns)
from .inference import (N_CAUSES, PercentChange, bonferroni_z, cumulative_effect, holm_alphas,
                        percent_change, wald_pvalue)
from .quasipoisson import (CONFOUNDERS, LAG_NAMES, N_LAGS, FitResult, ModelSpec, assemble_panel,
                           ci_halfwidth_ratio, fit_conditional_quasipoisson, fit_panel)
from .splines import SplineBasis, natural_spline_basis
from .stratified import Partition, split_strata, stratified_fit
