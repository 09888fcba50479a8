"""Simulation library for stealthy false-data injection against
Kalman-filtered plants and the sensor-output coding defense."""

__version__ = "0.1.0"

from .errors import Error
from .lti import (
    AttackSequence,
    EigenPair,
    LinearSystem,
    Trajectory,
    controllability_matrix,
    in_span,
    make_system,
    simulate,
    simulate_attacked,
    unstable_eigenpairs,
    zero_attack,
)
from .estimation import (
    FaultDetectionFilter,
    FilterState,
    KalmanDesign,
    ResidueTrace,
    apply_active_monitor,
    chi2_stat,
    detect,
    fd_filter_step,
    initial_filter_state,
    kalman_step,
    residue_trace,
    steady_state_kalman,
)
from .attack import (
    DifferenceTrace,
    FeasibilityVerdict,
    difference_dynamics,
    literal_benchmark_attack,
    stealth_feasible,
    synth_combined_attack,
    synth_sensor_attack,
)
from .coding import (
    CodingMatrix,
    GivensRotation,
    check_feasible_combined,
    check_feasible_multi,
    check_feasible_single,
    coding_matrix,
    decode,
    encode,
    generate_coding_matrix,
    givens_matrix,
)
from .adversary import (
    BilinearProblem,
    EstimateResult,
    MeasurementLog,
    adapt_attack,
    bilinear_cost,
    build_bilinear,
    empty_log,
    estimate_coding_matrix,
    record,
    solve_bilinear_als,
)
from .scheduler import (
    StealthReport,
    choose_refresh_interval,
    record_coded_log,
    stealth_gain,
    stealth_gain_from_times,
    stealth_report,
    stealth_time,
)
from .harness import RunReport, load_scenario, reproduce, reproduce_all, run_scenario
