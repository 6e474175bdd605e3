"""Monte Carlo approximation of quasistationary distributions of killed
diffusions, via a self-interacting Euler scheme with decreasing steps that
restarts from its own occupation measure.
"""

from .schedules import StepSchedule, H3Report, ScheduleError
from .domain import Domain, Interval, Box, Ball, Partition, DomainError
from .dynamics import (
    SdeModel,
    BrownianMotion,
    OrnsteinUhlenbeck,
    CustomAffine,
    RngStream,
    euler_step,
    reference_path,
    DynamicsError,
)
from .measures import (
    EmpiricalLaw,
    ReferenceQsd,
    BmIntervalQsd,
    NumericTableQsd,
    dirichlet_qsd_1d,
    wasserstein1_1d,
    wasserstein1_sliced,
    integrate,
    reflect_path_pos,
    reflect_path_neg,
    MeasureError,
)
from .redistribution import (
    RedistributionPolicy,
    FullOccupationPolicy,
    SlidingWindowPolicy,
    QuantizedPolicy,
    FixedPolicy,
    WeightedEmpiricalMeasure,
    window_rule,
    h4_discrepancy,
    EmptyMeasureError,
)
from .estimator import (
    run,
    QsdRunResult,
    survival_rate,
    renewal_measure,
    tightness_profile,
    replay_check,
    default_checkpoints,
    RunError,
)
from .return_process import (
    ReturnProcessConfig,
    simulate_return_chain,
    estimate_A,
    estimate_A_multi,
    estimate_Pi,
    weak_error_curve,
    exit_time_tail,
    measure_sampler,
    ReturnProcessError,
)
from .config import (
    ConfigError,
    load_config,
    parse_config,
    resolve_config,
    serialize_config,
    config_hash,
    build_domain,
    build_model,
    build_schedule,
    build_policy,
)

__version__ = "0.1.0"
