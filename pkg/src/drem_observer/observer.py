"""Right-hand sides of the two adaptive observers.

``Prop1`` is the basic observer: state estimator driven by output injection,
Kreisselmeier extension ``(Yscript, Phi)`` of the regressor ``Xi = C Y + Psi``
and a mixing update for ``theta_hat``. ``Prop2`` adds feedback from the
extension into the filter ``Y`` and the estimator ``z_hat`` through
``T = P^-1 C' Xi``; with ``rho_gain = 0`` the two coincide.
"""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, IntegrationFault
from .mixing import MixingMode, theta_dot
from .model import CertificateP, Dimensions, SystemModel, lambda_map, xi_map


class ObserverVariant(enum.Enum):
    Prop1 = "prop1"
    Prop2 = "prop2"

    @classmethod
    def parse(cls, value) -> "ObserverVariant":
        if isinstance(value, cls):
            return value
        for v in cls:
            if str(value).lower() in (v.value, v.name.lower()):
                return v
        raise ConfigError(f"unknown observer variant {value!r}; expected prop1 or prop2")


@dataclass(frozen=True)
class ObserverGains:
    lam: float = 1.0
    kappa: float = 1.0
    rho_gain: float = 0.0
    mode: MixingMode = MixingMode.Adjugate

    def __post_init__(self):
        object.__setattr__(self, "mode", MixingMode.parse(self.mode))
        for name in ("lam", "kappa", "rho_gain"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if not self.lam > 0:
            raise ConfigError("lambda must be > 0")
        if not self.kappa > 0:
            raise ConfigError("kappa must be > 0")
        if not self.rho_gain >= 0:
            raise ConfigError("rho must be >= 0")


@dataclass(frozen=True)
class ObserverState:
    z_hat: np.ndarray
    theta_hat: np.ndarray
    Y: np.ndarray
    Y_script: np.ndarray
    Phi: np.ndarray

    @classmethod
    def zeros(cls, dims: Dimensions) -> "ObserverState":
        return cls(
            z_hat=np.zeros(dims.n_x),
            theta_hat=np.zeros(dims.p),
            Y=np.zeros((dims.n_x, dims.p)),
            Y_script=np.zeros(dims.p),
            Phi=np.zeros((dims.p, dims.p)),
        )

    def replace(self, **changes) -> "ObserverState":
        changes = {k: np.array(v, dtype=float) for k, v in changes.items()}
        return dataclasses.replace(self, **changes)

    def validate(self, dims: Dimensions) -> "ObserverState":
        shapes = {
            "z_hat": (dims.n_x,),
            "theta_hat": (dims.p,),
            "Y": (dims.n_x, dims.p),
            "Y_script": (dims.p,),
            "Phi": (dims.p, dims.p),
        }
        fixed = {}
        for name, shape in shapes.items():
            arr = np.array(getattr(self, name), dtype=float)
            if arr.size != math.prod(shape):
                raise ConfigError(f"initial {name} has {arr.size} entries, expected shape {shape}")
            arr = arr.reshape(shape)
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"initial {name} must be finite")
            fixed[name] = arr
        Phi = fixed["Phi"]
        if not np.array_equal(Phi, Phi.T) or np.linalg.eigvalsh(Phi).min() < -1e-12:
            raise ConfigError("initial Phi must be symmetric positive semidefinite")
        return ObserverState(**fixed)


def t_matrix(model: SystemModel, certificate: CertificateP, u, Y) -> np.ndarray:
    """Feedback direction ``P^-1 C(u)' Xi(u, Y)``."""
    return certificate.P_inv @ model.C_map(u).T @ xi_map(model, u, Y)


def observer_rhs(variant, model: SystemModel, certificate: CertificateP, gains: ObserverGains,
                 state: ObserverState, u, y, t: float | None = None) -> ObserverState:
    """Time derivative of every observer integrator, returned as an ObserverState."""
    variant = ObserverVariant.parse(variant)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    Lam = lambda_map(model, u, y)
    Gam = model.Gamma_map(u, y)
    C = model.C_map(u)
    Xi = xi_map(model, u, state.Y)

    dz = Lam @ state.z_hat + Gam @ y + model.L_map(u, y)
    dY = Lam @ state.Y + model.Omega_map(u, y) - Gam @ model.Psi_map(u)
    if variant is ObserverVariant.Prop2:
        T = t_matrix(model, certificate, u, state.Y)
        dz = dz + gains.rho_gain * (T @ state.Y_script)
        dY = dY - gains.rho_gain * (T @ state.Phi)
    d_Ys = -gains.kappa * state.Y_script + Xi.T @ (y - C @ state.z_hat)
    d_Phi = -gains.kappa * state.Phi + Xi.T @ Xi
    d_theta = theta_dot(state.Phi, state.Y_script, state.theta_hat, gains.lam, gains.mode)

    deriv = ObserverState(z_hat=dz, theta_hat=d_theta, Y=dY, Y_script=d_Ys, Phi=d_Phi)
    for f in dataclasses.fields(deriv):
        if not np.all(np.isfinite(getattr(deriv, f.name))):
            raise IntegrationFault(f"non-finite derivative of {f.name} at t={t}", t=t, field=f.name)
    return deriv


def reconstruct_x(state: ObserverState) -> np.ndarray:
    """State estimate ``z_hat + Y theta_hat``."""
    return state.z_hat + state.Y @ state.theta_hat
