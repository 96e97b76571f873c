"""DoS/delay resilience analysis for linear networked control loops.

Pipeline: load a plant/controller model, assemble the closed-loop blocks,
synthesize Lyapunov certificates by LMI feasibility, trace the drop/delay
trade-off curve, and validate certificates against event-exact hybrid
simulation.
"""

from .certificate import (
    INPUT_OUTPUT,
    ZERO_INPUT,
    Certificate,
    CertificateBounds,
    check_certificate,
    compute_bounds,
    condition_matrix,
    evaluate_V,
    evaluate_V_flow_derivative,
    grid_check,
)
from .hybrid import (
    AttackSchedule,
    HybridState,
    NetworkParams,
    ScheduleEntry,
    TargetSet,
    enumerate_worst_schedules,
    flow_derivative,
    in_flow_set,
    in_jump_set,
    jump,
    validate_schedule,
    zero_state,
)
from .lmi import (
    FeasibilityResult,
    LmiProblem,
    SolverOptions,
    build_problem,
    solve,
    verify_point,
)
from .model import (
    ClosedLoopMatrices,
    ControllerModel,
    ModelError,
    PerformanceOutput,
    PlantModel,
    assemble_closed_loop,
    load_model,
    save_model,
)
from .sim import (
    DisturbanceSignal,
    HybridTrajectory,
    SimulationMetrics,
    empirical_l2_gain,
    monitor_certificate,
    simulate,
    simulate_held_coordinates,
)
from .tradeoff import (
    SearchPolicy,
    TradeoffPoint,
    gamma_floor,
    max_delay_for_drops,
    tradeoff_curve,
    write_curve_csv,
)

__version__ = "0.1.0"
