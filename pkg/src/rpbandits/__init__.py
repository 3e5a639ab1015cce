"""Batched stochastic linear bandits with corruption-robust, locally private
least squares estimation.

The public surface re-exports the pieces most users need: action set and
optimal design construction, the filtered least squares estimator, reward
privatization, simulation environments, the phased elimination policy, and
the sweep harness.
"""

from .design import (
    ActionSet,
    Coreset,
    Design,
    build_coreset,
    compute_design,
    effective_dimension,
    load_action_set,
    save_action_set,
    weighted_norm_sq,
)
from .env import (
    AdversaryConfig,
    BanditInstance,
    EnvOracle,
    LearnerEnv,
    Observation,
    generate_instance,
    instantaneous_regret,
    load_instance,
    save_instance,
)
from .errors import (
    BanditError,
    CheckpointOutOfRange,
    ConfigInvalid,
    FailsToConverge,
    InvalidNu,
    OutOfSpan,
    SingularGram,
    TooManyRemoved,
)
from .harness import (
    SweepResult,
    emit_plotdata,
    load_sweep,
    run_cell,
    run_sweep,
    summarize,
    summary_table,
    validate_config,
    write_summary_csv,
    write_trace_csv,
)
from .policy import (
    RegretTrace,
    RoundRecord,
    Schedule,
    ThresholdConfig,
    default_num_rounds,
    run_elimination,
    run_nonrobust_elimination,
    run_vanilla_elimination,
    threshold_m1,
    threshold_m2,
)
from .privacy import (
    PrivacyParams,
    laplace_icdf,
    m1_scale,
    m2_scale,
    privatize_m1,
    privatize_m2,
    sample_laplace,
)
from .robust import (
    FilterDiagnostics,
    RobustEstimate,
    confidence_radius_bound,
    robust_least_squares,
    spectral_filter,
    vanilla_least_squares,
)
from .seeding import derive_entropy, rng_from, seed_sequence

__version__ = "0.1.0"

__all__ = [
    "ActionSet",
    "AdversaryConfig",
    "BanditError",
    "BanditInstance",
    "CheckpointOutOfRange",
    "ConfigInvalid",
    "Coreset",
    "Design",
    "EnvOracle",
    "FailsToConverge",
    "FilterDiagnostics",
    "InvalidNu",
    "LearnerEnv",
    "Observation",
    "OutOfSpan",
    "PrivacyParams",
    "RegretTrace",
    "RobustEstimate",
    "RoundRecord",
    "Schedule",
    "SingularGram",
    "SweepResult",
    "ThresholdConfig",
    "TooManyRemoved",
    "build_coreset",
    "compute_design",
    "confidence_radius_bound",
    "default_num_rounds",
    "derive_entropy",
    "effective_dimension",
    "emit_plotdata",
    "generate_instance",
    "instantaneous_regret",
    "laplace_icdf",
    "load_action_set",
    "load_instance",
    "load_sweep",
    "m1_scale",
    "m2_scale",
    "privatize_m1",
    "privatize_m2",
    "robust_least_squares",
    "rng_from",
    "run_cell",
    "run_elimination",
    "run_nonrobust_elimination",
    "run_sweep",
    "run_vanilla_elimination",
    "sample_laplace",
    "save_action_set",
    "save_instance",
    "seed_sequence",
    "spectral_filter",
    "summarize",
    "summary_table",
    "threshold_m1",
    "threshold_m2",
    "validate_config",
    "vanilla_least_squares",
    "weighted_norm_sq",
    "write_summary_csv",
    "write_trace_csv",
]
