"""Affine plant description, input signal algebra and the built-in scenario catalog.

The plant is

    x' = A(u, y) x + Omega(u, y) theta + L(u, y)
    y  = C(u) x + Psi(u) theta

and the observer design adds an output-injection map Gamma(u, y). Every map is
stored as an :class:`AffineMap`, i.e. a constant array plus one coefficient array
per input channel and per output channel. That covers the whole catalog
(e.g. ``Omega = u``) and keeps scenarios reproducible from a config file alone.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, IntegrationFault

MAX_PARAMS = 5


@dataclass(frozen=True)
class Dimensions:
    n_x: int
    n_u: int
    n_y: int
    p: int

    def __post_init__(self):
        for name in ("n_x", "n_u", "n_y", "p"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"dimension {name} must be >= 1")
        if self.p > MAX_PARAMS:
            raise ConfigError(f"p={self.p} exceeds the supported maximum of {MAX_PARAMS}")


class AffineMap:
    """``M(u, y) = base + sum_k u_k du[k] + sum_j y_j dy[j]``.

    Works for matrix- and vector-valued maps alike; ``shape`` is the shape of
    ``base``.
    """

    def __init__(self, base, du=None, dy=None, n_u: int = 1, n_y: int = 1):
        self.base = np.array(base, dtype=float)
        self.shape = self.base.shape
        self.du = np.zeros((n_u,) + self.shape) if du is None else np.array(du, dtype=float)
        self.dy = np.zeros((n_y,) + self.shape) if dy is None else np.array(dy, dtype=float)
        if self.du.shape != (n_u,) + self.shape:
            raise ConfigError(f"input coefficients have shape {self.du.shape}, expected {(n_u,) + self.shape}")
        if self.dy.shape != (n_y,) + self.shape:
            raise ConfigError(f"output coefficients have shape {self.dy.shape}, expected {(n_y,) + self.shape}")
        for arr in (self.base, self.du, self.dy):
            if not np.all(np.isfinite(arr)):
                raise ConfigError("map coefficients must be finite")

    @classmethod
    def from_terms(cls, base, n_u: int, n_y: int, u_terms=None, y_terms=None) -> "AffineMap":
        """Build from sparse ``{channel: coefficient}`` dictionaries."""
        base = np.array(base, dtype=float)
        du = np.zeros((n_u,) + base.shape)
        dy = np.zeros((n_y,) + base.shape)
        for k, coef in (u_terms or {}).items():
            if not 0 <= int(k) < n_u:
                raise ConfigError(f"input channel {k} out of range")
            du[int(k)] = coef
        for j, coef in (y_terms or {}).items():
            if not 0 <= int(j) < n_y:
                raise ConfigError(f"output channel {j} out of range")
            dy[int(j)] = coef
        return cls(base, du, dy, n_u=n_u, n_y=n_y)

    @property
    def depends_on_u(self) -> bool:
        return bool(np.any(self.du != 0.0))

    @property
    def depends_on_y(self) -> bool:
        return bool(np.any(self.dy != 0.0))

    def __call__(self, u, y=None) -> np.ndarray:
        flat = np.asarray(u, dtype=float) @ self.du.reshape(len(self.du), -1)
        if y is not None:
            flat = flat + np.asarray(y, dtype=float) @ self.dy.reshape(len(self.dy), -1)
        return self.base + flat.reshape(self.shape)

    def __repr__(self):
        return f"AffineMap(shape={self.shape}, u-dependent={self.depends_on_u}, y-dependent={self.depends_on_y})"


@dataclass(frozen=True)
class SystemModel:
    dims: Dimensions
    A_map: AffineMap
    Omega_map: AffineMap
    L_map: AffineMap
    C_map: AffineMap
    Psi_map: AffineMap
    Gamma_map: AffineMap
    psi_sup: float = 0.0

    def __post_init__(self):
        d = self.dims
        expected = {
            "A_map": (d.n_x, d.n_x),
            "Omega_map": (d.n_x, d.p),
            "L_map": (d.n_x,),
            "C_map": (d.n_y, d.n_x),
            "Psi_map": (d.n_y, d.p),
            "Gamma_map": (d.n_x, d.n_y),
        }
        for name, shape in expected.items():
            m = getattr(self, name)
            if m.shape != shape:
                raise ConfigError(f"{name} has shape {m.shape}, expected {shape}")
            if m.du.shape[0] != d.n_u or m.dy.shape[0] != d.n_y:
                raise ConfigError(f"{name} coefficient channels do not match n_u={d.n_u}, n_y={d.n_y}")
        # y is computed from C and Psi, so they may only depend on u
        for name in ("C_map", "Psi_map"):
            if getattr(self, name).depends_on_y:
                raise ConfigError(f"{name} must not depend on y")
        if not (self.psi_sup >= 0.0 and math.isfinite(self.psi_sup)):
            raise ConfigError("psi_sup must be a finite number >= 0")
        if not self.Psi_map.depends_on_u:
            norm = spectral_norm(self.Psi_map.base)
            if norm > self.psi_sup * (1 + 1e-12):
                raise ConfigError(f"psi_sup={self.psi_sup} is below ||Psi||={norm}")


def spectral_norm(M) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if not M.size:
        return 0.0
    return float(np.linalg.norm(M, 2))


@dataclass(frozen=True)
class CertificateP:
    """Constant quadratic certificate ``V(zbar) = 0.5 zbar' P zbar``."""

    P: np.ndarray
    P_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        P = np.atleast_2d(np.array(self.P, dtype=float))
        if P.shape[0] != P.shape[1]:
            raise ConfigError("P must be square")
        if not np.allclose(P, P.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(P).max())):
            raise ConfigError("P must be symmetric")
        P = 0.5 * (P + P.T)
        if np.linalg.eigvalsh(P).min() <= 0.0:
            raise ConfigError("P must be positive definite")
        P_inv = np.linalg.inv(P)
        if np.abs(P @ P_inv - np.eye(len(P))).max() > 1e-12:
            raise ConfigError("P is too ill-conditioned to invert reliably")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "P_inv", P_inv)


def solve_lyapunov(Lam, Q) -> np.ndarray:
    """Solve ``P Lam + Lam' P = Q`` by a direct Kronecker-product linear solve."""
    Lam = np.atleast_2d(np.asarray(Lam, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = Lam.shape[0]
    eye = np.eye(n)
    # row-major vec: vec(P Lam) = (I kron Lam') vec(P), vec(Lam' P) = (Lam' kron I) vec(P)
    K = np.kron(eye, Lam.T) + np.kron(Lam.T, eye)
    P = np.linalg.solve(K, Q.reshape(-1)).reshape(n, n)
    return 0.5 * (P + P.T)


# -- input signal algebra ---------------------------------------------------

SIGNAL_KINDS = ("const", "sin", "cos")


@dataclass(frozen=True)
class SignalTerm:
    """``amp * exp(-decay t) * f(freq t + phase)`` while ``t_on <= t < t_off``, else 0.

    ``f`` is 1, sin or cos depending on ``kind``.
    """

    kind: str = "const"
    amp: float = 1.0
    freq: float = 0.0
    phase: float = 0.0
    decay: float = 0.0
    t_on: float = -math.inf
    t_off: float = math.inf

    def __post_init__(self):
        if self.kind not in SIGNAL_KINDS:
            raise ConfigError(f"unknown signal kind {self.kind!r}; expected one of {SIGNAL_KINDS}")
        for name in ("amp", "freq", "phase", "decay"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"signal {name} must be finite")
        if self.decay < 0:
            raise ConfigError("signal decay must be >= 0")
        if not self.t_on < self.t_off:
            raise ConfigError("signal window needs t_on < t_off")

    def __call__(self, t: float) -> float:
        if not self.t_on <= t < self.t_off:
            return 0.0
        v = self.amp
        if self.decay:
            v *= math.exp(-self.decay * t)
        if self.kind == "sin":
            v *= math.sin(self.freq * t + self.phase)
        elif self.kind == "cos":
            v *= math.cos(self.freq * t + self.phase)
        return v

    def as_row(self) -> list[float]:
        return [float(SIGNAL_KINDS.index(self.kind)), self.amp, self.freq, self.phase,
                self.decay, self.t_on, self.t_off]


@dataclass(frozen=True)
class InputSignal:
    """Vector input; channel ``k`` is the sum of ``channels[k]``."""

    channels: tuple[tuple[SignalTerm, ...], ...]

    @property
    def n_u(self) -> int:
        return len(self.channels)

    def __call__(self, t: float) -> np.ndarray:
        return np.array([sum(term(t) for term in ch) for ch in self.channels], dtype=float)

    def table(self) -> np.ndarray:
        """Flat ``(n_terms, 8)`` table: channel index followed by :meth:`SignalTerm.as_row`."""
        rows = [[float(k)] + term.as_row() for k, ch in enumerate(self.channels) for term in ch]
        return np.array(rows, dtype=float).reshape(-1, 8)


def sine(amp=1.0, freq=1.0, **kw) -> SignalTerm:
    return SignalTerm("sin", amp=amp, freq=freq, **kw)


@dataclass(frozen=True)
class Scenario:
    model: SystemModel
    theta_true: np.ndarray
    x0: np.ndarray
    input: InputSignal
    certificate: CertificateP
    t_final: float
    name: str = "custom"

    def __post_init__(self):
        d = self.model.dims
        theta = np.atleast_1d(np.array(self.theta_true, dtype=float))
        x0 = np.atleast_1d(np.array(self.x0, dtype=float))
        if theta.shape != (d.p,):
            raise ConfigError(f"theta_true has length {theta.size}, expected p={d.p}")
        if x0.shape != (d.n_x,):
            raise ConfigError(f"x0 has length {x0.size}, expected n_x={d.n_x}")
        if self.input.n_u != d.n_u:
            raise ConfigError(f"input signal has {self.input.n_u} channels, expected n_u={d.n_u}")
        if self.certificate.P.shape != (d.n_x, d.n_x):
            raise ConfigError(f"certificate P has shape {self.certificate.P.shape}, expected {(d.n_x, d.n_x)}")
        if not (self.t_final > 0 and math.isfinite(self.t_final)):
            raise ConfigError("t_final must be positive and finite")
        object.__setattr__(self, "theta_true", theta)
        object.__setattr__(self, "x0", x0)

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)


# -- operations --------------------------------------------------------------

def _vec(v, n: int, what: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(v, dtype=float))
    if arr.shape != (n,):
        raise ConfigError(f"{what} has shape {arr.shape}, expected ({n},)")
    return arr


def output(model: SystemModel, x, theta, u) -> np.ndarray:
    d = model.dims
    x = _vec(x, d.n_x, "x")
    theta = _vec(theta, d.p, "theta")
    u = _vec(u, d.n_u, "u")
    return model.C_map(u) @ x + model.Psi_map(u) @ theta


def plant_rhs(model: SystemModel, x, theta, u, t: float | None = None) -> np.ndarray:
    x = _vec(x, model.dims.n_x, "x")
    theta = _vec(theta, model.dims.p, "theta")
    u = _vec(u, model.dims.n_u, "u")
    y = output(model, x, theta, u)
    dx = model.A_map(u, y) @ x + model.Omega_map(u, y) @ theta + model.L_map(u, y)
    if not np.all(np.isfinite(dx)):
        raise IntegrationFault(f"non-finite plant derivative at t={t}", t=t, field="x")
    return dx


def lambda_map(model: SystemModel, u, y) -> np.ndarray:
    return model.A_map(u, y) - model.Gamma_map(u, y) @ model.C_map(u)


def xi_map(model: SystemModel, u, Y) -> np.ndarray:
    return model.C_map(u) @ np.asarray(Y, dtype=float) + model.Psi_map(u)


# -- catalog ------------------------------------------------------------------

SCENARIO_NAMES = ("S1", "S2", "S3", "S4", "W1")


def _scalar_plant(psi: float) -> SystemModel:
    dims = Dimensions(n_x=1, n_u=1, n_y=1, p=1)
    return SystemModel(
        dims=dims,
        A_map=AffineMap([[-1.0]]),
        Omega_map=AffineMap.from_terms([[0.0]], 1, 1, u_terms={0: [[1.0]]}),
        L_map=AffineMap([0.0]),
        C_map=AffineMap([[1.0]]),
        Psi_map=AffineMap([[psi]]),
        Gamma_map=AffineMap([[0.0]]),
        psi_sup=abs(psi),
    )


def _s1(psi: float = 0.0, name: str = "S1", u: InputSignal | None = None, t_final: float = 50.0) -> Scenario:
    return Scenario(
        model=_scalar_plant(psi),
        theta_true=np.array([2.0]),
        x0=np.array([1.0]),
        input=u or InputSignal(((sine(),),)),
        certificate=CertificateP(np.array([[1.0]])),
        t_final=t_final,
        name=name,
    )


def _s2() -> Scenario:
    dims = Dimensions(n_x=2, n_u=1, n_y=1, p=1)
    model = SystemModel(
        dims=dims,
        A_map=AffineMap([[0.0, 1.0], [0.0, 0.0]]),
        Omega_map=AffineMap.from_terms([[0.0], [0.0]], 1, 1, u_terms={0: [[0.0], [1.0]]}),
        L_map=AffineMap([0.0, 0.0]),
        C_map=AffineMap([[1.0, 0.0]]),
        Psi_map=AffineMap([[0.0]]),
        Gamma_map=AffineMap([[2.0], [1.0]]),
        psi_sup=0.0,
    )
    C = model.C_map.base
    Lam = model.A_map.base - model.Gamma_map.base @ C
    P = solve_lyapunov(Lam, -C.T @ C - 0.1 * np.eye(2))
    return Scenario(model, np.array([1.5]), np.array([1.0, 0.0]), InputSignal(((sine(),),)),
                    CertificateP(P), 50.0, "S2")


def _s4() -> Scenario:
    dims = Dimensions(n_x=1, n_u=2, n_y=1, p=2)
    model = SystemModel(
        dims=dims,
        A_map=AffineMap([[-1.0]], n_u=2),
        Omega_map=AffineMap.from_terms([[0.0, 0.0]], 2, 1, u_terms={0: [[1.0, 0.0]], 1: [[0.0, 1.0]]}),
        L_map=AffineMap([0.0], n_u=2),
        C_map=AffineMap([[1.0]], n_u=2),
        Psi_map=AffineMap([[0.0, 0.0]], n_u=2),
        Gamma_map=AffineMap([[0.0]], n_u=2),
        psi_sup=0.0,
    )
    u = InputSignal(((sine(),), (SignalTerm("cos", freq=2.0),)))
    return Scenario(model, np.array([2.0, -1.0]), np.array([1.0]), u,
                    CertificateP(np.array([[1.0]])), 50.0, "S4")


_CATALOG: dict[str, Callable[[], Scenario]] = {
    "S1": _s1,
    "S2": _s2,
    "S3": lambda: _s1(psi=0.5, name="S3"),
    "S4": _s4,
    # horizon long enough for delta to fall below 1e-8 after the switch-off at t=20
    "W1": lambda: _s1(name="W1", u=InputSignal(((sine(t_off=20.0),),)), t_final=100.0),
}

DESCRIPTIONS = {
    "S1": "scalar plant, A=-1, Omega=u, Psi=0, u=sin t",
    "S2": "second-order plant with output injection Gamma=[2;1], u=sin t",
    "S3": "S1 with feedthrough Psi=0.5",
    "S4": "scalar plant with two parameters, u=(sin t, cos 2t)",
    "W1": "S1 with the input switched off at t=20",
}


def builtin_scenario(name: str) -> Scenario:
    try:
        factory = _CATALOG[name]
    except KeyError:
        raise ConfigError(f"unknown scenario {name!r}; valid names: {', '.join(SCENARIO_NAMES)}") from None
    return factory()


def list_scenarios() -> Sequence[str]:
    return SCENARIO_NAMES
