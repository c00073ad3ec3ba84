"""growthlab: fat-tailed growth dynamics, linear forecasters, and the
predictable mistakes they make; pricing and momentum diagnostics on top.
"""

from .config import ExperimentConfig
from .dgp import GrowthPanel, GrowthPath, ModelParams, sample_student_t, simulate_panel, simulate_path
from .forecaster import (
    ArFit,
    CgResult,
    ForecastPanel,
    ForecastRecord,
    cg_regression,
    fit_ar,
    forecast_horizon,
    kalman_forecast,
    kalman_gain,
    panel_forecasts,
    run_forecaster,
)
from .nonparam import (
    BinnedCurve,
    MadTable,
    QqPoints,
    StudentFit,
    binscatter,
    bootstrap_band,
    build_binned_curve,
    fit_student_nu,
    loess_curve,
    mad_normalize,
    percentile_bandwidth,
    qq_tail,
)
from .pricing import (
    CompanionMatrix,
    PricedSeries,
    cs_return_decomposition,
    cs_rho,
    discounted_growth_sum,
    price_claim,
    price_path,
    simulate_priced_panel,
)
from .strategy import (
    SignalPanel,
    StrategyReport,
    backtest,
    build_signal_panel,
    momentum_signal,
    optimize_inflections,
    weight_schedule,
)
from .experiment import run_experiment
from .ingest import ingest_forecast_panel

__version__ = "0.1.0"
