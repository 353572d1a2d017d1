"""Event-based diffusion LMS: simulation, metrics, and stability analysis."""

__version__ = "0.1.0"

from .topology import (  # noqa: F401
    CombinationMatrix,
    NetworkTopology,
    build_topology,
    metropolis_weights,
    path_topology,
    random_geometric_topology,
    validate_combination,
)
from .datamodel import (  # noqa: F401
    DataSample,
    GroundTruth,
    NodeProfile,
    generate_sample,
    sample_ground_truth,
    sample_profiles,
)
from .diffusion import (  # noqa: F401
    Algorithm,
    IterationTrace,
    NetworkState,
    NodeState,
    ThresholdSchedule,
    TriggerPolicy,
    adapt,
    combine,
    evaluate_trigger,
    simulate,
    step_network,
)
from .analysis import (  # noqa: F401
    AnalysisWorkspace,
    block_max_norm,
    build_workspace,
    delta_total,
    empirical_trigger_matrix,
    mean_error_bound,
    mean_stability_condition,
    msd_bound_vectors,
    msd_step_size_interval,
    msd_upper_bound,
    stability_report,
    bound_report,
    vec_trace_identity_check,
)
from .metrics import (  # noqa: F401
    LearningCurves,
    SteadyStateSummary,
    accumulate,
    steady_state,
)
from .harness import (  # noqa: F401
    ExperimentConfig,
    load_config,
    parse_config,
    run_bound_comparison,
    run_experiment,
)
