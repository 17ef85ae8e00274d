"""Off-policy evaluation of slate policies with pseudoinverse estimators and control variates."""
from .errors import CapacityError, CoverageError, SlateError, UndefinedEstimateError, ValidationError
from .estimators import (
    EstimateReport,
    RatioVector,
    VarianceReport,
    WeightVector,
    compute_ratios,
    delta_method_se,
    estimate_crossfit,
    estimate_crossfit_from_folds,
    estimate_fixed_weights,
    estimate_picvm,
    estimate_picvs,
    estimate_pi,
    estimate_wpi,
    fit_beta_star,
    fit_w_star,
    run_estimator,
    variance_report,
)
from .oracle import (
    GroundTruth,
    PopulationMoments,
    enumerate_ground_truth,
    enumerate_moments,
    exact_estimator_expectation,
)
from .policy import (
    FactoredPolicy,
    LoggedRecord,
    SlateDataset,
    SlateSchema,
    annotate_records,
    make_deterministic_policy,
    make_uniform_policy,
    read_jsonl,
    write_jsonl,
)
from .simulator import RewardModel, SimConfig, generate_logs, sample_additive_model, sample_geometric_tensor

__version__ = "0.1.0"
