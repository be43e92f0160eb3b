"""Threshold calibration with risk control under performative distribution shift."""

from .bounds import (
    WidthMethod,
    bernstein_width_at,
    clt_width_at,
    cvar_clt_width,
    hb_pvalue,
    hb_width_at,
    hoeffding_width,
    precomputed_width,
)
from .env import (
    CreditEnvConfig,
    CreditEnvironment,
    EmpiricalCreditEnvironment,
    SensitivityEstimate,
    analytic_gamma,
    estimate_gamma,
    load_scores_csv,
    sample_batch,
    shift_score,
)
from .harness import (
    ExperimentConfig,
    ExperimentReport,
    emit_report,
    failure_rate,
    read_report,
    run_experiment,
    validation_risk,
)
from .prc import (
    SolvePlan,
    Trajectory,
    joint_solve,
    min_delta_alpha,
    run_prc,
    run_prc_quantile,
    threshold_update,
    v_objective,
)
from .quantile import (
    CdfBand,
    StepCdf,
    WeightFn,
    dkw_band,
    empirical_cdf,
    inverse_cdf,
    m_factor,
    quantile_risk,
    quantile_width_at,
    risk_interval_from_band,
)
from .risk import (
    RiskSpec,
    SampleBatch,
    SampleRecord,
    ThresholdWindow,
    empirical_risk,
    loss_eval,
    risk_curve,
)

__version__ = "0.1.0"
