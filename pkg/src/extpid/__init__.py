"""Extended PID control of SISO affine nonlinear uncertain systems:
stabilizing gain manifolds, closed-loop simulation, and numerical
certification of the exponential-convergence and finite-escape claims."""

__version__ = "0.1.0"

from .errors import ExtPidError
from .gain_manifold import (
    GainVector,
    LambdaVector,
    ManifoldConstants,
    UncertaintyBounds,
    build_P,
    c0_upper_bound,
    compute_alpha,
    compute_d,
    effective_bounds,
    in_omega1,
    lambda_to_gains,
    manifold_constants,
    omega_lambda_threshold,
    sample_omega,
    semiglobal_bounds,
)
from .plants import PlantModel, PresetParams, derived_bounds, eval_plant, make_preset
from .controllers import (
    OBSERVER_BASED,
    STATE_DERIVATIVE_FEEDBACK,
    ControllerState,
    ObserverCertificate,
    ObserverConfig,
    epsilon_star,
    hurwitz_beta,
    observer_derivative,
    observer_pid_control,
    pid_control,
    solve_lyapunov_Q,
)
from .simulator import (
    AugmentedState,
    ClosedLoop,
    IntegratorPolicy,
    Trace,
    assemble_closed_loop,
    integrate,
    integrate_batch,
    write_trace_csv,
)
from .analysis import (
    CertificateReport,
    WCoordinates,
    assumption_grid_check,
    charpoly_residuals,
    check_error_bound,
    fit_rate,
    lyapunov_check,
    omega_monotonicity_check,
    to_w_coordinates,
)
from .experiment import expand_sweep, load_config, run_experiment
