"""Information projection tests: outlier-robust change detection on finite alphabets."""

from .bounds import (
    BoundInputs, BoundPreconditionError, arl_bound, bounds_table, fa_bound, lorden_wadd, md_bound,
    tcd_bounds, wadd_bound, wald_root,
)
from .detectors import (
    AlarmReport, FixedIptConfig, QuickestIpt, QuickestIptConfig, SlidingFma, SlidingIpt, fixed_ipt_run,
    fma_run, glrt_run, glrt_statistic, quickest_ipt_run,
)
from .evaluation import (
    CurvePoint, ExperimentConfig, auc, bench_step_time, detector_auc, simulate, simulate_arl_wadd,
    simulate_roc_cht, simulate_roc_tcd,
)
from .projection import (
    ConvergenceError, InfeasibleError, ProjectionCache, ProjectionResult, i_project, reverse_project,
)
from .series import (
    DataError, QuantizerSpec, RllfRow, SeriesSpec, calibrate_cd, ingest_csv, quantize, rllf_analysis,
)
from .simplex import Alphabet, Pmf, QFunction, kl_divergence

__version__ = "0.1.0"
