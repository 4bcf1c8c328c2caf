"""Staggered-adoption difference-in-differences with cluster-jackknife inference."""

from .aggregate import AttResult, aggregate_att, estimate_att, scheme_weights
from .errors import (ConfigError, DegenerateVarianceError, EmptyDesignError, InfeasibleError,
                     InputError, JackknifeAbort, PanelError)
from .estimator import (CellDesign, CellEstimate, att_gt, att_gt_ols, estimate_all_cells,
                        influence_contributions, twfe_beta)
from .inference import (BootstrapDetail, InferenceResult, JackknifeDetail, LooProfile,
                        asymptotic_inference, cluster_jackknife, cv3, format_table, loo_profile,
                        mammen_weights, multiplier_bootstrap)
from .montecarlo import (DESIGN_GRID, DgpConfig, McConfig, RejectionTable, placebo_assign,
                         run_experiment, run_grid, subsample_window, synth_panel)
from .panel import (CellSpec, CohortMap, PanelData, assign_cohorts, demean_by_region,
                    enumerate_cells, feasible_cells, load_gvar, load_panel)

__version__ = "0.1.0"

__all__ = [
    "AttResult", "BootstrapDetail", "CellDesign", "CellEstimate", "CellSpec", "CohortMap",
    "ConfigError", "DegenerateVarianceError", "DgpConfig", "EmptyDesignError",
    "InfeasibleError", "InferenceResult", "InputError", "JackknifeAbort", "JackknifeDetail",
    "LooProfile", "McConfig", "DESIGN_GRID", "PanelData", "PanelError", "RejectionTable",
    "aggregate_att", "assign_cohorts", "asymptotic_inference", "att_gt", "att_gt_ols",
    "cluster_jackknife", "cv3", "demean_by_region", "enumerate_cells", "estimate_all_cells",
    "estimate_att", "feasible_cells", "format_table", "influence_contributions", "load_gvar",
    "load_panel", "loo_profile", "mammen_weights", "multiplier_bootstrap", "placebo_assign",
    "run_experiment", "run_grid", "scheme_weights", "subsample_window", "synth_panel",
    "twfe_beta",
]
