"""Excitation metrics, the kappa gain bound, Lyapunov monitoring and certificate checks."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, InsufficientDataError
from .model import CertificateP, Scenario, lambda_map, output, plant_rhs

CERTIFICATE_TOL = 1e-9
LYAPUNOV_TOL = 1e-8
DEFAULT_PE_LEVEL = 1e-6
FLAT_TAIL_RTOL = 1e-6


def _uniform_step(t) -> float:
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or len(t) < 2:
        raise InsufficientDataError("need at least two samples")
    steps = np.diff(t)
    h = float(steps.mean())
    if h <= 0 or np.abs(steps - h).max() > 1e-6 * h:
        raise ConfigError("delta series must be uniformly sampled")
    return h


def _cumtrapz(t, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    out = np.zeros_like(f)
    out[1:] = np.cumsum(0.5 * np.diff(t) * (f[1:] + f[:-1]))
    return out


def pe_window_metric(t, delta, T: float) -> float:
    """Smallest integral of ``delta**2`` over any window ``[t, t+T]`` on the sample grid."""
    h = _uniform_step(t)
    if not T > 0:
        raise ConfigError("window length T must be > 0")
    m = int(round(T / h))
    if m < 1 or m > len(t) - 1:
        raise InsufficientDataError(f"series spans {t[-1] - t[0]:.6g} s, shorter than the window T={T}")
    cum = _cumtrapz(t, np.asarray(delta, dtype=float) ** 2)
    return float(np.min(cum[m:] - cum[:-m]))


@dataclass(frozen=True)
class CumulativeExcitation:
    t: np.ndarray
    integral: np.ndarray
    tail_slope: float

    @property
    def mean_rate(self) -> float:
        span = self.t[-1] - self.t[0]
        return float(self.integral[-1] / span) if span > 0 else 0.0

    @property
    def consistent_with_divergence(self) -> bool:
        """Finite-horizon proxy only: a tail that still grows is consistent with a divergent integral.

        Tail slopes below ``FLAT_TAIL_RTOL`` times the mean rate count as flat (round-off).
        """
        return self.tail_slope > FLAT_TAIL_RTOL * self.mean_rate and self.tail_slope > 0.0


def cumulative_excitation(t, delta, tail_fraction: float = 0.2) -> CumulativeExcitation:
    """Running integral of ``delta**2`` and its least-squares slope over the final stretch."""
    t = np.asarray(t, dtype=float)
    _uniform_step(t)
    cum = _cumtrapz(t, np.asarray(delta, dtype=float) ** 2)
    start = t[-1] - tail_fraction * (t[-1] - t[0])
    tail = t >= start - 1e-12
    if tail.sum() < 2:
        tail[-2:] = True
    slope = float(np.polyfit(t[tail], cum[tail], 1)[0])
    return CumulativeExcitation(t, cum, slope)


@dataclass(frozen=True)
class ExcitationReport:
    pe_window_T: float
    pe_level: float
    min_window_integral: float
    cumulative: CumulativeExcitation

    @property
    def pe_satisfied(self) -> bool:
        return self.min_window_integral >= self.pe_level


def excitation_report(trace, pe_window_T: Optional[float] = None, pe_level: float = DEFAULT_PE_LEVEL) -> ExcitationReport:
    t = trace.t
    if pe_window_T is None:
        pe_window_T = 0.1 * (t[-1] - t[0])
    return ExcitationReport(
        pe_window_T=pe_window_T,
        pe_level=pe_level,
        min_window_integral=pe_window_metric(t, trace.delta, pe_window_T),
        cumulative=cumulative_excitation(t, trace.delta),
    )


@dataclass(frozen=True)
class KappaVerdict:
    passed: bool
    margin: float
    required: float


def kappa_bound_check(kappa: float, rho_gain: float, p: int, psi_sup: float) -> KappaVerdict:
    """Forgetting-rate bound for the feedback redesign: ``kappa > rho * (p/4) * psi_sup**2``."""
    if not kappa > 0:
        raise ConfigError("kappa must be > 0")
    if rho_gain < 0 or psi_sup < 0 or p < 1:
        raise ConfigError("rho and psi_sup must be >= 0 and p >= 1")
    required = rho_gain * (p / 4.0) * psi_sup**2
    margin = kappa - required
    return KappaVerdict(margin > 0.0, margin, required)


def lyapunov_values(trace, certificate: CertificateP, rho_gain: float) -> np.ndarray:
    zbar = np.asarray(trace.zbar, dtype=float)
    eps = np.asarray(trace.eps, dtype=float)
    return 0.5 * np.einsum("ni,ij,nj->n", zbar, certificate.P, zbar) + 0.5 * rho_gain * np.sum(eps**2, axis=1)


def lyapunov_monitor(trace, certificate: CertificateP, kappa: float, rho_gain: float) -> float:
    """Largest step-to-step increase of ``0.5 zbar'P zbar + (rho/2)|eps|^2``.

    ``kappa`` only enters the decay rate, not V0 itself; it is validated and
    otherwise unused. Pass ``rho_gain=0`` for the basic observer. A value at or
    below ``LYAPUNOV_TOL`` certifies monotone decrease at trace resolution.
    """
    if not kappa > 0:
        raise ConfigError("kappa must be > 0")
    V = lyapunov_values(trace, certificate, rho_gain)
    if len(V) < 2:
        return 0.0
    return float(max(np.diff(V).max(), 0.0))


@dataclass(frozen=True)
class CertificateReport:
    passed: bool
    worst_eigenvalue: float
    n_samples: int


def certificate_check(scenario: Scenario, n_samples: int = 201) -> CertificateReport:
    """Max eigenvalue of ``P Lambda + Lambda' P + C'C`` over (u, y) from a nominal open-loop run."""
    from .sim import rk4_step

    model, theta, P = scenario.model, scenario.theta_true, scenario.certificate.P
    if not any(m.depends_on_u or m.depends_on_y for m in (model.A_map, model.Gamma_map, model.C_map)):
        n_samples = 1  # the matrix inequality is constant along any run
    t_grid = np.linspace(0.0, scenario.t_final, n_samples)
    sub = max(1, int(math.ceil(scenario.t_final / max(n_samples - 1, 1) / 0.05)))

    def f(t, x):
        return plant_rhs(model, x, theta, scenario.input(t), t=t)

    x = scenario.x0.copy()
    worst = -math.inf
    count = 0
    for i, t in enumerate(t_grid):
        if i:
            h = (t - t_grid[i - 1]) / sub
            for j in range(sub):
                x = rk4_step(f, x, t_grid[i - 1] + j * h, h)
            if not np.all(np.isfinite(x)) or np.abs(x).max() > 1e9:
                break
        u = scenario.input(t)
        y = output(model, x, theta, u)
        Lam = lambda_map(model, u, y)
        C = model.C_map(u)
        M = P @ Lam + Lam.T @ P + C.T @ C
        worst = max(worst, float(np.linalg.eigvalsh(0.5 * (M + M.T)).max()))
        count += 1
    return CertificateReport(worst <= CERTIFICATE_TOL, worst, count)


@dataclass(frozen=True)
class ConvergenceFit:
    slope: float
    intercept: float

    @property
    def rate(self) -> float:
        return -self.slope


def convergence_fit(trace, t_start: float, t_end: float) -> ConvergenceFit:
    """Least-squares line through ``log ||(zbar, theta_tilde)||`` on ``[t_start, t_end]``."""
    sel = (trace.t >= t_start) & (trace.t <= t_end)
    err = np.sqrt(np.sum(trace.zbar[sel] ** 2, axis=1) + np.sum(trace.theta_tilde[sel] ** 2, axis=1))
    if sel.sum() < 2 or np.any(err <= 0):
        raise InsufficientDataError("need at least two nonzero error samples in the fit window")
    slope, intercept = np.polyfit(trace.t[sel], np.log(err), 1)
    return ConvergenceFit(float(slope), float(intercept))
