"""Adaptive observers for affine systems built on dynamic regressor extension and mixing."""
from .errors import ConfigError, DremError, InsufficientDataError, IntegrationFault, IntegrityError
from .mixing import MixingMode, adjugate, delta, determinant, theta_dot
from .model import (
    AffineMap,
    CertificateP,
    Dimensions,
    InputSignal,
    Scenario,
    SignalTerm,
    SystemModel,
    builtin_scenario,
    lambda_map,
    output,
    plant_rhs,
    xi_map,
)
from .observer import ObserverGains, ObserverState, ObserverVariant, observer_rhs, reconstruct_x, t_matrix
from .sim import SimConfig, Trace, compare_rho_sweep, rk4_step, run

__version__ = "0.1.0"
