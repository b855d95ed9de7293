"""Fixed-step co-simulation of plant, observer and the proof-only error oracle.

The augmented state packs, in order: plant ``x``, the observer integrators
``z_hat, theta_hat, Y, Y_script, Phi`` and the oracle ``eps``, which follows

    eps' = -kappa eps + Xi' C zbar,   zbar = (x - Y theta) - z_hat.

``eps`` needs the true parameter, so it is only ever used for verification.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernel
from .errors import ConfigError, IntegrationFault
from .mixing import delta as delta_of, determinant
from .model import Dimensions, Scenario, output, plant_rhs, xi_map
from .observer import ObserverGains, ObserverState, ObserverVariant, observer_rhs

log = logging.getLogger(__name__)

MAX_DT = 1e-2
DIVERGENCE_GUARD = 1e9

STATUS_TEXT = {
    _kernel.OK: "ok",
    _kernel.NONFINITE: "integration fault",
    _kernel.DIVERGED: "divergence guard",
    _kernel.PSI_BOUND: "psi_sup violated",
}


@dataclass(frozen=True)
class StateLayout:
    """Offsets of each block inside the flat augmented state vector."""

    dims: Dimensions

    @property
    def blocks(self) -> list[tuple[str, tuple[int, ...]]]:
        d = self.dims
        return [
            ("x", (d.n_x,)),
            ("z_hat", (d.n_x,)),
            ("theta_hat", (d.p,)),
            ("Y", (d.n_x, d.p)),
            ("Y_script", (d.p,)),
            ("Phi", (d.p, d.p)),
            ("eps", (d.p,)),
        ]

    @property
    def size(self) -> int:
        return sum(math.prod(shape) for _, shape in self.blocks)

    def slices(self) -> dict[str, slice]:
        out, o = {}, 0
        for name, shape in self.blocks:
            n = math.prod(shape)
            out[name] = slice(o, o + n)
            o += n
        return out

    def field_of(self, index: int) -> str:
        for name, sl in self.slices().items():
            if sl.start <= index < sl.stop:
                return name
        raise IndexError(index)

    def pack(self, aug: "AugmentedState") -> np.ndarray:
        obs = aug.observer
        parts = [aug.x, obs.z_hat, obs.theta_hat, obs.Y, obs.Y_script, obs.Phi, aug.eps]
        return np.concatenate([np.asarray(a, dtype=float).ravel() for a in parts])

    def unpack(self, s: np.ndarray) -> "AugmentedState":
        """Works on a single state ``(size,)`` or on a stack ``(n, size)``."""
        lead = s.shape[:-1]
        parts = {name: s[..., self.slices()[name]].reshape(lead + shape) for name, shape in self.blocks}
        obs = ObserverState(parts["z_hat"], parts["theta_hat"], parts["Y"], parts["Y_script"], parts["Phi"])
        return AugmentedState(parts["x"], obs, parts["eps"])


@dataclass(frozen=True)
class AugmentedState:
    x: np.ndarray
    observer: ObserverState
    eps: np.ndarray


@dataclass(frozen=True)
class SimConfig:
    scenario: Scenario
    variant: ObserverVariant = ObserverVariant.Prop1
    gains: ObserverGains = field(default_factory=ObserverGains)
    dt: float = 1e-3
    record_every: int = 1
    initial_overrides: Optional[ObserverState] = None

    def __post_init__(self):
        object.__setattr__(self, "variant", ObserverVariant.parse(self.variant))
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ConfigError("dt must be positive")
        if self.dt > MAX_DT:
            raise ConfigError(f"dt={self.dt} exceeds the stability guard {MAX_DT}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ConfigError("record_every must be an integer >= 1")
        self.n_steps  # validates the horizon

    @property
    def n_steps(self) -> int:
        ratio = self.scenario.t_final / self.dt
        n = int(round(ratio))
        if abs(n - ratio) > 1e-6 or n < 1:
            raise ConfigError(f"t_final={self.scenario.t_final} is not a whole number of steps of dt={self.dt}")
        if n > 2**31:
            raise ConfigError("too many steps")
        return n

    @property
    def effective_rho(self) -> float:
        return self.gains.rho_gain if self.variant is ObserverVariant.Prop2 else 0.0

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def initial_state(self) -> AugmentedState:
        sc = self.scenario
        obs = self.initial_overrides or ObserverState.zeros(sc.model.dims)
        obs = obs.validate(sc.model.dims)
        # chosen so that Y_script - eps = Phi theta holds from t=0
        eps0 = obs.Y_script - obs.Phi @ sc.theta_true
        return AugmentedState(sc.x0.copy(), obs, eps0)


@dataclass
class Trace:
    """Recorded run. Per-step arrays share the leading time axis.

    ``z``, ``z_hat``, ``Y``, ``Y_script`` and ``Phi`` are only present on
    traces produced in memory; a trace read back from CSV carries the CSV
    columns only.
    """

    t: np.ndarray
    x: np.ndarray
    xhat: np.ndarray
    zbar: np.ndarray
    theta_hat: np.ndarray
    theta_tilde: np.ndarray
    delta: np.ndarray
    det_phi: np.ndarray
    min_eig_phi: np.ndarray
    eps: np.ndarray
    swap_residual: np.ndarray
    V0: np.ndarray
    z: Optional[np.ndarray] = None
    z_hat: Optional[np.ndarray] = None
    Y: Optional[np.ndarray] = None
    Y_script: Optional[np.ndarray] = None
    Phi: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def status(self) -> str:
        return self.meta.get("status", "ok")

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def __len__(self):
        return len(self.t)

    def theta_tilde_norm(self) -> np.ndarray:
        return np.linalg.norm(self.theta_tilde, axis=1)

    def zbar_norm(self) -> np.ndarray:
        return np.linalg.norm(self.zbar, axis=1)

    def eps_norm(self) -> np.ndarray:
        return np.linalg.norm(self.eps, axis=1)

    def columns(self) -> dict[str, np.ndarray]:
        """CSV columns in their fixed order."""
        cols = {"t": self.t}

        def add(prefix, arr):
            for i in range(arr.shape[1]):
                cols[f"{prefix}_{i + 1}"] = arr[:, i]

        add("x", self.x)
        add("xhat", self.xhat)
        add("zbar", self.zbar)
        add("thetahat", self.theta_hat)
        add("thetatilde", self.theta_tilde)
        cols["delta"] = self.delta
        cols["det_phi"] = self.det_phi
        cols["min_eig_phi"] = self.min_eig_phi
        add("eps", self.eps)
        cols["swap_residual"] = self.swap_residual
        cols["V0"] = self.V0
        return cols


def rk4_step(f: Callable[[float, np.ndarray], np.ndarray], s: np.ndarray, t: float, dt: float) -> np.ndarray:
    """One classical Runge-Kutta step of ``s' = f(t, s)``."""
    half = 0.5 * dt

    def stage(i, ts, arg):
        try:
            k = np.asarray(f(ts, arg), dtype=float)
        except IntegrationFault as exc:
            raise IntegrationFault(f"non-finite RK4 stage {i} at t={t}: {exc}", t=t, stage=i, field=exc.field) from exc
        if not np.all(np.isfinite(k)):
            raise IntegrationFault(f"non-finite RK4 stage {i} at t={t}", t=t, stage=i)
        return k

    k1 = stage(1, t, s)
    k2 = stage(2, t + half, s + half * k1)
    k3 = stage(3, t + half, s + half * k2)
    k4 = stage(4, t + dt, s + dt * k3)
    return s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def augmented_rhs(config: SimConfig) -> Callable[[float, np.ndarray], np.ndarray]:
    """Reference right-hand side assembled from the numpy operations."""
    sc = config.scenario
    model, theta = sc.model, sc.theta_true
    layout = StateLayout(model.dims)

    def f(t, s):
        aug = layout.unpack(s)
        obs = aug.observer
        u = sc.input(t)
        y = output(model, aug.x, theta, u)
        dx = plant_rhs(model, aug.x, theta, u, t=t)
        dobs = observer_rhs(config.variant, model, sc.certificate, config.gains, obs, u, y, t=t)
        zbar = (aug.x - obs.Y @ theta) - obs.z_hat
        Xi = xi_map(model, u, obs.Y)
        deps = -config.gains.kappa * aug.eps + Xi.T @ (model.C_map(u) @ zbar)
        return layout.pack(AugmentedState(dx, dobs, deps))

    return f


def _pack_model(sc: Scenario):
    m = sc.model
    maps = []
    for amap in (m.A_map, m.Omega_map, m.L_map, m.C_map, m.Psi_map, m.Gamma_map):
        base, du, dy = amap.base, amap.du, amap.dy
        if base.ndim == 1:
            base, du, dy = base[:, None], du[..., None], dy[..., None]
        maps += [np.ascontiguousarray(a, dtype=float) for a in (base, du, dy)]
    return tuple(maps)


def _tables(p: int):
    perms, signs = _kernel.permutation_table(p)
    mperms, msigns = _kernel.permutation_table(p - 1)
    return perms, signs, mperms, msigns


def _integrate_compiled(config: SimConfig, s0: np.ndarray):
    sc = config.scenario
    d = sc.model.dims
    g = config.gains
    return _kernel.integrate(
        s0, float(config.dt), config.n_steps, int(config.record_every), DIVERGENCE_GUARD,
        sc.model.Psi_map.depends_on_u, float(sc.model.psi_sup),
        np.array([d.n_x, d.n_u, d.n_y, d.p], dtype=np.int64), sc.theta_true, _pack_model(sc),
        sc.input.table(), sc.certificate.P_inv, float(g.lam), float(g.kappa), float(g.rho_gain),
        config.variant is ObserverVariant.Prop2, g.mode.code, _tables(d.p),
        _kernel.workspace(d.n_x, d.n_u, d.n_y, d.p),
    )


def _integrate_reference(config: SimConfig, s0: np.ndarray):
    sc = config.scenario
    f = augmented_rhs(config)
    layout = StateLayout(sc.model.dims)
    dt, n_steps, every = config.dt, config.n_steps, config.record_every
    times, records = [0.0], [s0.copy()]
    s = s0.copy()
    status, fault_t, stage, index = _kernel.OK, math.nan, -1, -1
    for n in range(n_steps):
        t = n * dt
        if sc.model.Psi_map.depends_on_u:
            from .model import spectral_norm
            if spectral_norm(sc.model.Psi_map(sc.input(t))) > sc.model.psi_sup * (1.0 + 1e-12):
                status, fault_t = _kernel.PSI_BOUND, t
                break
        try:
            s_next = rk4_step(f, s, t, dt)
        except IntegrationFault as exc:
            status, fault_t, stage = _kernel.NONFINITE, t, exc.stage or 0
            if exc.field in layout.slices():
                index = layout.slices()[exc.field].start
            break
        s = s_next
        if (n + 1) % every == 0 or n + 1 == n_steps:
            times.append((n + 1) * dt)
            records.append(s.copy())
        if np.max(np.abs(s)) > DIVERGENCE_GUARD:
            status, fault_t = _kernel.DIVERGED, (n + 1) * dt
            if times[-1] != fault_t:
                times.append(fault_t)
                records.append(s.copy())
            break
    return np.array(times), np.array(records), status, fault_t, stage, index


def build_trace(config: SimConfig, times: np.ndarray, records: np.ndarray, meta: dict | None = None) -> Trace:
    sc = config.scenario
    layout = StateLayout(sc.model.dims)
    aug = layout.unpack(records)
    obs = aug.observer
    theta = sc.theta_true
    z = aug.x - obs.Y @ theta
    zbar = z - obs.z_hat
    xhat = obs.z_hat + np.einsum("nij,nj->ni", obs.Y, obs.theta_hat)
    swap = np.linalg.norm(obs.Y_script - aug.eps - obs.Phi @ theta, axis=1)
    P = sc.certificate.P
    V0 = 0.5 * np.einsum("ni,ij,nj->n", zbar, P, zbar) + 0.5 * config.effective_rho * np.sum(aug.eps**2, axis=1)
    return Trace(
        t=times,
        x=aug.x,
        xhat=xhat,
        zbar=zbar,
        theta_hat=obs.theta_hat,
        theta_tilde=theta - obs.theta_hat,
        delta=delta_of(obs.Phi),
        det_phi=determinant(obs.Phi),
        min_eig_phi=np.linalg.eigvalsh(obs.Phi).min(axis=1),
        eps=aug.eps,
        swap_residual=swap,
        V0=V0,
        z=z,
        z_hat=obs.z_hat,
        Y=obs.Y,
        Y_script=obs.Y_script,
        Phi=obs.Phi,
        meta=dict(meta or {}),
    )


def run(config: SimConfig, engine: str = "compiled", check_certificate: bool = True) -> Trace:
    """Integrate plant, observer and oracle from t=0 to the scenario horizon.

    Faults (non-finite values, the 1e9 divergence guard, a psi_sup violation)
    end the run early and are reported in ``trace.meta`` rather than raised.
    """
    sc = config.scenario
    if check_certificate:
        from .diagnostics import certificate_check

        cert = certificate_check(sc)
        if not cert.passed:
            raise ConfigError(
                f"certificate P does not satisfy P*Lambda + Lambda'*P + C'C <= 0 for scenario {sc.name} "
                f"(worst eigenvalue {cert.worst_eigenvalue:.3e})"
            )
    layout = StateLayout(sc.model.dims)
    s0 = layout.pack(config.initial_state())
    if engine == "compiled":
        times, records, status, fault_t, stage, index = _integrate_compiled(config, s0)
    elif engine == "reference":
        times, records, status, fault_t, stage, index = _integrate_reference(config, s0)
    else:
        raise ConfigError(f"unknown engine {engine!r}")
    meta = {
        "scenario": sc.name,
        "variant": config.variant.value,
        "lambda": config.gains.lam,
        "kappa": config.gains.kappa,
        "rho": config.gains.rho_gain,
        "mode": config.gains.mode.value,
        "dt": config.dt,
        "record_every": config.record_every,
        "t_final": sc.t_final,
        "status": STATUS_TEXT[int(status)],
    }
    if status != _kernel.OK:
        meta["fault_t"] = float(fault_t)
        if status == _kernel.NONFINITE:
            meta["fault_stage"] = int(stage)
            if index >= 0:
                meta["fault_field"] = layout.field_of(int(index))
        log.warning("run %s/%s stopped early: %s at t=%s", sc.name, config.variant.value, meta["status"], fault_t)
    return build_trace(config, times, records, meta)


@dataclass(frozen=True)
class RhoSweepEntry:
    rho: float
    sup_eps: float
    sup_theta_tilde: float
    final_theta_tilde: float
    trace: Trace = field(repr=False, compare=False)


def compare_rho_sweep(config: SimConfig, rho_values: Sequence[float]) -> list[RhoSweepEntry]:
    """Run the Prop2 observer once per feedback gain, all else equal."""
    rho_values = [float(r) for r in rho_values]
    if not rho_values:
        raise ConfigError("rho list is empty")
    base = config.replace(variant=ObserverVariant.Prop2)
    aug0 = base.initial_state()
    zbar0 = (aug0.x - aug0.observer.Y @ base.scenario.theta_true) - aug0.observer.z_hat
    if not np.any(zbar0 != 0.0):
        raise ConfigError("the rho sweep needs a nonzero initial state error zbar(0)")
    out = []
    for rho in rho_values:
        cfg = base.replace(gains=dataclasses.replace(base.gains, rho_gain=rho))
        tr = run(cfg)
        tt = tr.theta_tilde_norm()
        out.append(RhoSweepEntry(rho, float(tr.eps_norm().max()), float(tt.max()), float(tt[-1]), tr))
    return out
