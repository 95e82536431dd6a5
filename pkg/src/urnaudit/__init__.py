"""Simulation and audit tools for reinforced sequential risk scoring."""

__version__ = "0.1.0"

from .urn import (
    CLASSIC,
    Classification,
    DefendantTrajectory,
    UrnParameters,
    UrnState,
    counts_to_probability,
    derive_seed,
    enumerate_exact,
    gamma_weight,
    initial_probability,
    simulate_path,
    step,
    update_probability,
)
from .limit import (
    BetaParams,
    GoodnessOfFitResult,
    beta_cdf,
    beta_moments,
    beta_pdf,
    fit_limit_law,
    ks_statistic,
    limit_distribution,
)
from .cohort import (
    CohortConfig,
    CohortResult,
    GroupSpec,
    apply_bias,
    disparity_curve,
    group_disparity,
    run_cohort,
)
from .validation import (
    SnapshotSpec,
    ValidationReport,
    amplification_report,
    auc,
    one_shot_power,
    snapshot_validation,
)
