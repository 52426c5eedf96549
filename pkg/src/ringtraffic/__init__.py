"""Ring-road car-following simulator with delay stability analysis and
frustration-driven stochastic lane changes."""

__version__ = "0.1.0"

from .core import (
    FundamentalDiagramSummary,
    ModelParams,
    equilibrium_flow,
    fundamental_diagram_curve,
    fundamental_diagram_summary,
    velocity_from_headway,
)
from .lane_change import (
    DriverState,
    LaneChangeParams,
    TwoLaneState,
    adjacent_headway,
    attempt_probability,
    detect_passes,
    frustration_update,
    init_two_lane,
    per_step_attempt_probability,
    run_two_lane,
    safety_gap_check,
    two_lane_step,
)
from .metrics import (
    FlowField,
    GrowthFit,
    aggregate_monte_carlo,
    cyclic_amplitudes,
    fit_growth_rate,
    flow_field,
    flow_rate,
    flow_series,
    growth_rate_from_record,
    lane_imbalance,
    lane_imbalance_series,
)
from .records import CollisionReport, LaneEvent, TrajectoryRecord
from .single_lane import (
    HistoryBuffer,
    RingState,
    delayed_headway,
    detect_collisions,
    euler_step,
    init_ring_equilibrium,
    perturb,
    run_single_lane,
)
from .stability import (
    JacobianSpec,
    StabilityVerdict,
    build_jacobian_dense,
    characteristic_roots,
    closed_form_eigenvalues,
    critical_reaction_time,
    jacobian_spec,
    lambert_w,
    max_growth_rate,
)

__all__ = [
    "__version__",
    "ModelParams",
    "FundamentalDiagramSummary",
    "velocity_from_headway",
    "equilibrium_flow",
    "fundamental_diagram_curve",
    "fundamental_diagram_summary",
    "RingState",
    "HistoryBuffer",
    "CollisionReport",
    "LaneEvent",
    "TrajectoryRecord",
    "init_ring_equilibrium",
    "perturb",
    "delayed_headway",
    "euler_step",
    "detect_collisions",
    "run_single_lane",
    "JacobianSpec",
    "StabilityVerdict",
    "build_jacobian_dense",
    "closed_form_eigenvalues",
    "jacobian_spec",
    "lambert_w",
    "characteristic_roots",
    "max_growth_rate",
    "critical_reaction_time",
    "DriverState",
    "LaneChangeParams",
    "TwoLaneState",
    "init_two_lane",
    "adjacent_headway",
    "frustration_update",
    "attempt_probability",
    "per_step_attempt_probability",
    "safety_gap_check",
    "detect_passes",
    "two_lane_step",
    "run_two_lane",
    "FlowField",
    "GrowthFit",
    "flow_rate",
    "flow_series",
    "flow_field",
    "cyclic_amplitudes",
    "fit_growth_rate",
    "growth_rate_from_record",
    "lane_imbalance",
    "lane_imbalance_series",
    "aggregate_monte_carlo",
]
