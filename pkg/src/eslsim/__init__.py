"""eslsim: discrete-time multi-robot task allocation with switching delays.

A simulator and policy suite for M robots serving N Bernoulli task queues
under one-slot travel costs, plus an exact solver on capped instances that
audits the serve-longest policy structure, and paired sample-path
experiments for the underlying exchange arguments.
"""

from .model import (
    IDLE,
    IDLE_ACTION,
    SERVE,
    SERVE_ACTION,
    SWITCH,
    InfeasibleActionError,
    JointAction,
    ModelConfig,
    RobotAction,
    SlotDelta,
    SlotLedger,
    SystemState,
    admissible_robot_actions,
    initial_state,
    is_feasible,
    iter_joint_actions,
    sample_arrivals,
    stage_cost,
    step,
    switch_to,
    validate_state,
)
from .policies import (
    POLICY_NAMES,
    AgeBookDesyncError,
    CyclicPlan,
    CyclicPolicy,
    DegenerateRateError,
    EslPolicy,
    FcfsPolicy,
    TaskAgeBook,
    continuous_dwell,
    cyclic_decide,
    dwell_metadata,
    dwell_objective,
    esl_decide,
    fcfs_decide,
    make_policy,
    optimize_dwell,
    switch_to_shortest_decide,
    tuned_dwell,
)
from .evaluator import (
    PRNG_ID,
    AggregateResult,
    EpisodeMetrics,
    EpisodeTrace,
    ExperimentConfig,
    InsufficientReplicationsError,
    aggregate,
    make_grid,
    grid_dwell_metadata,
    resolve_dwell,
    run_episode,
    run_grid,
    trace_episode,
)
from .mdp import (
    StateSpaceTooLargeError,
    TruncatedMdp,
    ValueTable,
    Violation,
    build_truncated_mdp,
    check_esl_optimality,
    count_states,
    is_interior,
    monotonicity_violations,
    q_values,
    value_iteration,
)
from .coupling import (
    SCENARIO_NAMES,
    CouplingReport,
    CouplingScenario,
    ScenarioPreconditionError,
    check_gap_pattern,
    coupled_run,
    make_scenario,
    validate_scenario,
)

__version__ = "0.1.0"
