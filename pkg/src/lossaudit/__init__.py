"""Telemetry-loss measurement and loss-aware A/B experiment analysis.

The package follows the data flow of a loss-aware experimentation
pipeline: ingest client/server event logs and join them per leg
(``events``), measure absolute loss with the anchor and sequence
methods (``loss``), detect loss-rate imbalance and sample ratio
mismatch (``bias``), reconstruct no-loss outcomes and map the tolerance
safe zone (``simulate``), assemble trust-flagged scorecards
(``scorecard``), and validate it all against seeded synthetic logs with
known ground truth (``synth``).
"""

from .bias import (
    BiasDecomposition,
    TestResult,
    bias_delta,
    loss_rate_imbalance_test,
    srm_test,
    welch_z_test,
)
from .errors import (
    BadRowRatioExceeded,
    DegenerateSample,
    DegenerateVariance,
    InsufficientData,
    InvalidSpec,
    LossAuditError,
    MethodMismatch,
    MissingLossEstimate,
    NoExpectedEvents,
    UnknownEventType,
    UnknownVariant,
    UnreadableStream,
)
from .events import (
    Event,
    EventLog,
    SessionRecord,
    deduplicate,
    join_sessions,
    parse_event_log,
    split_by_source,
    write_event_log,
)
from .loss import (
    LossEstimate,
    Sequence,
    SequenceState,
    aggregate_sequence_state,
    anchor_loss,
    merge_loss_estimates,
    sequence_loss,
    sequence_loss_rate,
    update_sequence_state,
)
from .scorecard import (
    MetricDefinition,
    MetricResult,
    Scorecard,
    ScorecardConfig,
    build_scorecard,
    flag_metrics,
    render_scorecard,
)
from .simulate import (
    LossScenario,
    ObservedArm,
    PlatformProfile,
    SimulatedResult,
    ToleranceGrid,
    combine_mean,
    combine_variance,
    default_lost_scenario,
    impute_lost_mean,
    simulate_treatment_effect,
    tolerance_grid,
)
from .synth import (
    GroundTruth,
    LossMechanism,
    OutcomeModel,
    SessionCountModel,
    SynthSpec,
    apply_loss,
    generate_population,
)

__version__ = "0.1.0"
