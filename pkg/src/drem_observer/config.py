"""YAML run-config files (schema version 1).

Example::

    schema_version: 1
    scenario: S1                 # catalog name, or an inline mapping (see below)
    observer: {variant: prop2, lambda: 1.0, kappa: 1.0, rho: 1.0, mode: adj}
    sim:
      dt: 0.001
      record_every: 1
      t_final: 50                # optional horizon override
      initial_overrides: {z_hat: [-1.0], theta_hat: [0.0]}
    diagnostics: {pe_window_T: 5.0, pe_level: 1.0e-6}

An inline scenario gives ``dims`` and each map (``A, Omega, L, C, Psi,
Gamma``) either as a constant nested list or as ``{const: M, u1: M1, y1: N1}``
meaning ``M + u_1 M1 + y_1 N1``. ``input`` is a list with one entry per input
channel, each a number or a list of signal terms such as
``{kind: sin, amp: 1, freq: 1, t_off: 20}``. ``P`` is a matrix or
``{lyapunov_margin: m}``, which solves ``P Lam + Lam' P = -C'C - m I`` at the
nominal (zero) operating point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .errors import ConfigError
from .model import (
    AffineMap,
    CertificateP,
    Dimensions,
    InputSignal,
    Scenario,
    SignalTerm,
    SystemModel,
    builtin_scenario,
    solve_lyapunov,
)
from .observer import ObserverGains, ObserverState, ObserverVariant
from .sim import SimConfig

SCHEMA_VERSION = 1
_TOP_KEYS = {"schema_version", "scenario", "observer", "sim", "diagnostics"}


@dataclass(frozen=True)
class RunConfigFile:
    sim: SimConfig
    pe_window_T: Optional[float] = None
    pe_level: float = 1e-6


def _section(doc: dict, key: str) -> dict:
    sec = doc.get(key) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section {key!r} must be a mapping")
    return sec


def _float(value, what: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a number, got {value!r}") from None
    if math.isnan(out):
        raise ConfigError(f"{what} must not be NaN")
    return out


def _array(value, what: str, shape=None) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be numeric") from None
    if shape is not None:
        if arr.size != math.prod(shape):
            raise ConfigError(f"{what} has {arr.size} entries, expected shape {shape}")
        arr = arr.reshape(shape)
    return arr


def _map(spec, shape, dims: Dimensions, what: str) -> AffineMap:
    if spec is None:
        return AffineMap(np.zeros(shape), n_u=dims.n_u, n_y=dims.n_y)
    if not isinstance(spec, dict):
        return AffineMap(_array(spec, what, shape), n_u=dims.n_u, n_y=dims.n_y)
    u_terms, y_terms = {}, {}
    for key, value in spec.items():
        if key == "const":
            continue
        if len(key) > 1 and key[0] in "uy" and key[1:].isdigit():
            idx = int(key[1:]) - 1
            (u_terms if key[0] == "u" else y_terms)[idx] = _array(value, f"{what}.{key}", shape)
        else:
            raise ConfigError(f"{what}: unknown key {key!r} (expected const, u1.., y1..)")
    base = _array(spec.get("const", np.zeros(shape)), f"{what}.const", shape)
    return AffineMap.from_terms(base, dims.n_u, dims.n_y, u_terms, y_terms)


def _signal_term(spec, what: str) -> SignalTerm:
    if isinstance(spec, (int, float)):
        return SignalTerm("const", amp=float(spec))
    if not isinstance(spec, dict):
        raise ConfigError(f"{what}: signal term must be a number or a mapping")
    allowed = {"kind", "amp", "freq", "phase", "decay", "t_on", "t_off"}
    unknown = set(spec) - allowed
    if unknown:
        raise ConfigError(f"{what}: unknown signal keys {sorted(unknown)}")
    kw = {k: _float(v, f"{what}.{k}") for k, v in spec.items() if k != "kind"}
    return SignalTerm(spec.get("kind", "const"), **kw)


def _input(spec, n_u: int) -> InputSignal:
    if not isinstance(spec, list) or len(spec) != n_u:
        raise ConfigError(f"input must be a list with one entry per input channel ({n_u})")
    channels = []
    for k, ch in enumerate(spec):
        terms = ch if isinstance(ch, list) else [ch]
        channels.append(tuple(_signal_term(t, f"input[{k}]") for t in terms))
    return InputSignal(tuple(channels))


def parse_scenario(spec) -> Scenario:
    if isinstance(spec, str):
        return builtin_scenario(spec)
    if not isinstance(spec, dict):
        raise ConfigError("scenario must be a catalog name or a mapping")
    try:
        d = spec["dims"]
        dims = Dimensions(int(d["n_x"]), int(d["n_u"]), int(d["n_y"]), int(d["p"]))
    except (KeyError, TypeError, ValueError):
        raise ConfigError("inline scenario needs dims: {n_x, n_u, n_y, p}") from None
    shapes = {
        "A": (dims.n_x, dims.n_x),
        "Omega": (dims.n_x, dims.p),
        "L": (dims.n_x,),
        "C": (dims.n_y, dims.n_x),
        "Psi": (dims.n_y, dims.p),
        "Gamma": (dims.n_x, dims.n_y),
    }
    maps = {k: _map(spec.get(k), shape, dims, k) for k, shape in shapes.items()}
    if "psi_sup" in spec:
        psi_sup = _float(spec["psi_sup"], "psi_sup")
    elif not maps["Psi"].depends_on_u:
        psi_sup = float(np.linalg.norm(np.atleast_2d(maps["Psi"].base), 2))
    else:
        raise ConfigError("psi_sup is required when Psi depends on the input")
    model = SystemModel(dims, maps["A"], maps["Omega"], maps["L"], maps["C"], maps["Psi"], maps["Gamma"], psi_sup)

    P_spec = spec.get("P")
    if isinstance(P_spec, dict) and "lyapunov_margin" in P_spec:
        zu, zy = np.zeros(dims.n_u), np.zeros(dims.n_y)
        C = model.C_map(zu)
        Lam = model.A_map(zu, zy) - model.Gamma_map(zu, zy) @ C
        m = _float(P_spec["lyapunov_margin"], "P.lyapunov_margin")
        P = solve_lyapunov(Lam, -C.T @ C - m * np.eye(dims.n_x))
    elif P_spec is None:
        raise ConfigError("inline scenario needs a certificate P")
    else:
        P = _array(P_spec, "P", (dims.n_x, dims.n_x))
    for key in ("theta_true", "x0", "input", "t_final"):
        if key not in spec:
            raise ConfigError(f"inline scenario is missing {key!r}")
    return Scenario(
        model=model,
        theta_true=_array(spec["theta_true"], "theta_true", (dims.p,)),
        x0=_array(spec["x0"], "x0", (dims.n_x,)),
        input=_input(spec["input"], dims.n_u),
        certificate=CertificateP(P),
        t_final=_float(spec["t_final"], "t_final"),
        name=str(spec.get("name", "custom")),
    )


def parse_overrides(spec: dict, scenario: Scenario) -> Optional[ObserverState]:
    if not spec:
        return None
    dims = scenario.model.dims
    base = ObserverState.zeros(dims)
    allowed = {"z_hat", "theta_hat", "Y", "Y_script", "Phi"}
    unknown = set(spec) - allowed
    if unknown:
        raise ConfigError(f"unknown initial_overrides keys {sorted(unknown)}")
    changes = {k: _array(v, f"initial_overrides.{k}", getattr(base, k).shape) for k, v in spec.items()}
    return base.replace(**changes).validate(dims)


def parse_document(doc: Any) -> RunConfigFile:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}")
    if "scenario" not in doc:
        raise ConfigError("config needs a scenario")
    scenario = parse_scenario(doc["scenario"])
    obs = _section(doc, "observer")
    sim = _section(doc, "sim")
    diag = _section(doc, "diagnostics")
    if "t_final" in sim:
        scenario = scenario.replace(t_final=_float(sim["t_final"], "sim.t_final"))
    gains = ObserverGains(
        lam=_float(obs.get("lambda", 1.0), "observer.lambda"),
        kappa=_float(obs.get("kappa", 1.0), "observer.kappa"),
        rho_gain=_float(obs.get("rho", 0.0), "observer.rho"),
        mode=obs.get("mode", "adj"),
    )
    record_every = sim.get("record_every", 1)
    if not isinstance(record_every, int):
        raise ConfigError("sim.record_every must be an integer")
    cfg = SimConfig(
        scenario=scenario,
        variant=ObserverVariant.parse(obs.get("variant", "prop1")),
        gains=gains,
        dt=_float(sim.get("dt", 1e-3), "sim.dt"),
        record_every=record_every,
        initial_overrides=parse_overrides(sim.get("initial_overrides") or {}, scenario),
    )
    pe_T = diag.get("pe_window_T")
    return RunConfigFile(
        sim=cfg,
        pe_window_T=None if pe_T is None else _float(pe_T, "diagnostics.pe_window_T"),
        pe_level=_float(diag.get("pe_level", 1e-6), "diagnostics.pe_level"),
    )


def load_config(path) -> RunConfigFile:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return parse_document(doc)
