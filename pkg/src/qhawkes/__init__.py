"""Quadratic self-exciting point processes: simulation, estimation, asymptotics.

A library for event streams whose intensity combines linear self-excitation
with a quadratic term built from signed event memory, together with the
estimators, discretized variance models, and diffusion limits used to study
them.
"""

from .asymptotics import (
    PhaseExponents,
    TailExponents,
    feedback_ratio,
    gaussian_scaling_coeff,
    phase_exponents,
    stationary_cdf_nohawkes,
    stationary_density_nohawkes,
    tail_exponents,
)
from .dataio import (
    NormalizedPanel,
    OhlcPanel,
    load_csv,
    normalize,
    write_audit,
    write_normalized_csv,
)
from .diffusion import (
    DiffusionParams,
    DiffusionPath,
    FeedbackRatioEstimate,
    feedback_ratio_mc,
    integrate,
    price_path,
    sample_stationary,
)
from .errors import ConfigError, NumericalError, QhawkesError
from .estimators import (
    CorrelationEstimates,
    HillReport,
    IdentityResiduals,
    TraReport,
    apparent_branching,
    covariance_identity_residuals,
    estimate_correlations,
    hill_exponent,
    rate_autocovariance,
    rate_return_pair_covariance,
    rs_vol,
    tra_curve,
)
from .qarch import (
    GmmFit,
    KernelFit,
    MleFit,
    QarchModel,
    QarchSample,
    endogeneity,
    filter_variance,
    gmm_estimate,
    mle_student,
    parametric_fit,
    qarch_variance,
    rank_one_diag_fit,
    read_qarch_csv,
    simulate_qarch,
    write_kernel_fit_csv,
    write_qarch_csv,
)
from .kernels import (
    ExponentialHawkes,
    ExponentialZumbach,
    ModelParams,
    PowerLawHawkes,
    ZeroKernel,
    discretize_qarch,
    kernel_norms,
    load_model,
    model_from_keyvalues,
    model_to_keyvalues,
    save_model,
    stationarity_check,
)
from .presets import PRESET_NAMES, preset_model
from .simulate import (
    BinSeries,
    EventStream,
    bin_series,
    mean_rate,
    read_bins_csv,
    read_events_csv,
    simulate_markovian,
    simulate_thinning,
    write_bins_csv,
    write_events_csv,
)

__version__ = "0.1.0"

__all__ = [
    "QhawkesError",
    "ConfigError",
    "NumericalError",
    "ExponentialHawkes",
    "PowerLawHawkes",
    "ExponentialZumbach",
    "ZeroKernel",
    "ModelParams",
    "kernel_norms",
    "stationarity_check",
    "discretize_qarch",
    "model_to_keyvalues",
    "model_from_keyvalues",
    "save_model",
    "load_model",
    "EventStream",
    "BinSeries",
    "simulate_thinning",
    "simulate_markovian",
    "mean_rate",
    "bin_series",
    "write_events_csv",
    "read_events_csv",
    "write_bins_csv",
    "read_bins_csv",
    "CorrelationEstimates",
    "IdentityResiduals",
    "HillReport",
    "TraReport",
    "rate_autocovariance",
    "rate_return_pair_covariance",
    "estimate_correlations",
    "covariance_identity_residuals",
    "hill_exponent",
    "rs_vol",
    "tra_curve",
    "apparent_branching",
    "DiffusionParams",
    "DiffusionPath",
    "FeedbackRatioEstimate",
    "integrate",
    "sample_stationary",
    "feedback_ratio_mc",
    "price_path",
    "PhaseExponents",
    "TailExponents",
    "phase_exponents",
    "stationary_density_nohawkes",
    "stationary_cdf_nohawkes",
    "feedback_ratio",
    "tail_exponents",
    "gaussian_scaling_coeff",
    "QarchModel",
    "QarchSample",
    "GmmFit",
    "MleFit",
    "KernelFit",
    "qarch_variance",
    "filter_variance",
    "simulate_qarch",
    "gmm_estimate",
    "mle_student",
    "rank_one_diag_fit",
    "parametric_fit",
    "endogeneity",
    "write_qarch_csv",
    "read_qarch_csv",
    "write_kernel_fit_csv",
    "OhlcPanel",
    "NormalizedPanel",
    "load_csv",
    "normalize",
    "write_normalized_csv",
    "write_audit",
    "PRESET_NAMES",
    "preset_model",
    "__version__",
]
