"""Trace CSV (v1) serialization and the run summary report."""
from __future__ import annotations

import io
import re
from pathlib import Path

import numpy as np

from . import diagnostics
from .errors import ConfigError
from .sim import SimConfig, Trace

TRACE_MAGIC = "# drem-observer trace v1"
FLOAT_FMT = "%.17g"

_VECTOR_PREFIXES = ("x", "xhat", "zbar", "thetahat", "thetatilde", "eps")
_SCALARS = ("t", "delta", "det_phi", "min_eig_phi", "swap_residual", "V0")


def column_names(trace: Trace) -> list[str]:
    return list(trace.columns())


def write_trace_csv(trace: Trace, path) -> None:
    cols = trace.columns()
    data = np.column_stack(list(cols.values()))
    lines = [TRACE_MAGIC]
    lines += [f"# {k}={v}" for k, v in trace.meta.items()]
    buf = io.StringIO()
    np.savetxt(buf, data, fmt=FLOAT_FMT, delimiter=",")
    text = "\n".join(lines) + "\n" + ",".join(cols) + "\n" + buf.getvalue()
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc


def read_header(path) -> tuple[list[str], dict, int]:
    """Column names, metadata and the number of leading lines before the data."""
    try:
        fh = open(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    meta = {}
    with fh:
        first = fh.readline().rstrip("\n")
        if first != TRACE_MAGIC:
            raise ConfigError(f"{path}: not a v1 trace (first line {first!r})")
        n = 1
        for line in fh:
            n += 1
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key] = value
                continue
            names = [c.strip() for c in line.split(",")]
            break
        else:
            raise ConfigError(f"{path}: missing column header")
    _check_columns(names, path)
    return names, meta, n


def _indexed(names, prefix) -> list[str]:
    pat = re.compile(rf"^{prefix}_(\d+)$")
    found = sorted((int(m.group(1)), n) for n in names if (m := pat.match(n)))
    return [n for _, n in found]


def _check_columns(names, path) -> None:
    missing = [c for c in _SCALARS if c not in names]
    for prefix in _VECTOR_PREFIXES:
        idx = _indexed(names, prefix)
        if not idx:
            missing.append(f"{prefix}_1")
        elif idx != [f"{prefix}_{i + 1}" for i in range(len(idx))]:
            raise ConfigError(f"{path}: non-contiguous {prefix}_* columns")
    if missing:
        raise ConfigError(f"{path}: malformed header, missing columns {missing}")
    if len(set(names)) != len(names):
        raise ConfigError(f"{path}: duplicate column names")


def read_trace_csv(path) -> Trace:
    names, meta, skip = read_header(path)
    data = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    if data.shape[1] != len(names):
        raise ConfigError(f"{path}: rows have {data.shape[1]} fields, header has {len(names)}")
    col = {n: data[:, i] for i, n in enumerate(names)}

    def stack(prefix):
        return np.column_stack([col[n] for n in _indexed(names, prefix)])

    known = set(_SCALARS) | {n for p in _VECTOR_PREFIXES for n in _indexed(names, p)}
    meta["extra_columns"] = [n for n in names if n not in known]
    return Trace(
        t=col["t"],
        x=stack("x"),
        xhat=stack("xhat"),
        zbar=stack("zbar"),
        theta_hat=stack("thetahat"),
        theta_tilde=stack("thetatilde"),
        delta=col["delta"],
        det_phi=col["det_phi"],
        min_eig_phi=col["min_eig_phi"],
        eps=stack("eps"),
        swap_residual=col["swap_residual"],
        V0=col["V0"],
        meta=meta,
    )


def summarize(config: SimConfig, trace: Trace, pe_window_T=None, pe_level=diagnostics.DEFAULT_PE_LEVEL) -> dict:
    """Key figures of a run, in report order."""
    sc, g = config.scenario, config.gains
    kappa = diagnostics.kappa_bound_check(g.kappa, config.effective_rho, sc.model.dims.p, sc.model.psi_sup)
    out = {
        "scenario": sc.name,
        "variant": config.variant.value,
        "status": trace.status,
        "t_end": float(trace.t[-1]),
        "final_theta_tilde_norm": float(trace.theta_tilde_norm()[-1]),
        "final_zbar_norm": float(trace.zbar_norm()[-1]),
        "final_x_error_norm": float(np.linalg.norm(trace.x[-1] - trace.xhat[-1])),
        "delta_min": float(trace.delta.min()),
        "delta_max": float(trace.delta.max()),
        "delta_mean": float(trace.delta.mean()),
        "max_swap_residual": float(trace.swap_residual.max()),
        "min_eig_phi": float(trace.min_eig_phi.min()),
        "lyapunov_max_increment": diagnostics.lyapunov_monitor(trace, sc.certificate, g.kappa, config.effective_rho),
        "kappa_bound": "PASS" if kappa.passed else "FAIL",
        "kappa_margin": kappa.margin,
    }
    if len(trace) > 2:
        try:
            exc = diagnostics.excitation_report(trace, pe_window_T, pe_level)
        except Exception as err:  # short or faulted runs
            out["pe"] = f"unavailable ({err})"
        else:
            out["pe_window_T"] = exc.pe_window_T
            out["pe_level"] = exc.pe_level
            out["pe_min_window_integral"] = exc.min_window_integral
            out["pe"] = "PASS" if exc.pe_satisfied else "FAIL"
            out["excitation_total"] = float(exc.cumulative.integral[-1])
            out["excitation_tail_slope"] = exc.cumulative.tail_slope
            out["non_square_integrability"] = (
                "consistent" if exc.cumulative.consistent_with_divergence else "inconsistent"
            )
    for key in ("fault_t", "fault_stage", "fault_field"):
        if key in trace.meta:
            out[key] = trace.meta[key]
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def format_summary(summary: dict) -> str:
    s = summary
    lines = [
        f"run {s['scenario']} / {s['variant']}: {s['status']} (t_end={_fmt(s['t_end'])})",
        f"  |theta_tilde|(end) = {_fmt(s['final_theta_tilde_norm'])}   |zbar|(end) = {_fmt(s['final_zbar_norm'])}",
        f"  delta: min {_fmt(s['delta_min'])}  mean {_fmt(s['delta_mean'])}  max {_fmt(s['delta_max'])}",
        f"  Lyapunov max increment {_fmt(s['lyapunov_max_increment'])}",
        f"  kappa bound {s['kappa_bound']} (margin {_fmt(s['kappa_margin'])})",
    ]
    if "pe_min_window_integral" in s:
        lines.append(
            f"  PE window T={_fmt(s['pe_window_T'])}: min integral {_fmt(s['pe_min_window_integral'])} "
            f"vs level {_fmt(s['pe_level'])} -> {s['pe']}"
        )
        lines.append(
            f"  cumulative excitation tail slope {_fmt(s['excitation_tail_slope'])}: "
            f"{s['non_square_integrability']} with a divergent integral of delta^2"
        )
    lines.append("")
    lines += [f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in s.items()]
    return "\n".join(lines) + "\n"
