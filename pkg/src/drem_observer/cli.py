"""Command line front end.

Exit codes:
    0  success (check-kappa: bound satisfied)
    1  check-kappa: bound violated
    2  a run stopped early (divergence guard, non-finite state, psi_sup violation)
    3  configuration or usage error (bad flags, unknown scenario, unreadable or
       unwritable files, malformed CSV)
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, plotting, traceio
from .config import load_config
from .errors import ConfigError, DremError, IntegrationFault, IntegrityError
from .mixing import MixingMode
from .model import DESCRIPTIONS, SCENARIO_NAMES, builtin_scenario
from .observer import ObserverGains, ObserverState, ObserverVariant
from .sim import SimConfig, compare_rho_sweep, run

EXIT_OK, EXIT_FAIL, EXIT_FAULT, EXIT_CONFIG = 0, 1, 2, 3

log = logging.getLogger("drem_observer")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _color(text: str, ok: bool) -> str:
    if os.environ.get("NO_COLOR") or not sys.stdout.isatty():
        return text
    return f"\033[{32 if ok else 31}m{text}\033[0m"


def _floats(text: str, what: str) -> list[float]:
    parts = [p for p in text.split(",") if p.strip()]
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def _add_run_flags(p: argparse.ArgumentParser, with_variant: bool = True):
    src = p.add_argument_group("scenario")
    src.add_argument("--config", help="YAML run config (flags given explicitly override it)")
    src.add_argument("--scenario", help=f"catalog scenario: {', '.join(SCENARIO_NAMES)}")
    obs = p.add_argument_group("observer")
    if with_variant:
        obs.add_argument("--observer", choices=[v.value for v in ObserverVariant])
    obs.add_argument("--lambda", dest="lam", type=float)
    obs.add_argument("--kappa", type=float)
    if with_variant:
        obs.add_argument("--rho", type=float)
    obs.add_argument("--mode", choices=[m.value for m in MixingMode])
    sim = p.add_argument_group("integration")
    sim.add_argument("--dt", type=float)
    sim.add_argument("--tfinal", type=float)
    sim.add_argument("--record-every", type=int)
    sim.add_argument("--zhat0", help="initial z_hat, comma-separated")
    sim.add_argument("--thetahat0", help="initial theta_hat, comma-separated")


def _build_config(args) -> tuple[SimConfig, float | None, float]:
    if args.config:
        rc = load_config(args.config)
        cfg, pe_T, pe_level = rc.sim, rc.pe_window_T, rc.pe_level
        if args.scenario:
            cfg = cfg.replace(scenario=builtin_scenario(args.scenario), initial_overrides=None)
    elif args.scenario:
        cfg = SimConfig(builtin_scenario(args.scenario))
        pe_T, pe_level = None, diagnostics.DEFAULT_PE_LEVEL
    else:
        raise ConfigError("give --scenario or --config")

    sc = cfg.scenario
    if args.tfinal is not None:
        sc = sc.replace(t_final=args.tfinal)
    g = cfg.gains
    gains = ObserverGains(
        lam=g.lam if args.lam is None else args.lam,
        kappa=g.kappa if args.kappa is None else args.kappa,
        rho_gain=g.rho_gain if getattr(args, "rho", None) is None else args.rho,
        mode=g.mode if args.mode is None else args.mode,
    )
    variant = cfg.variant if getattr(args, "observer", None) is None else args.observer
    init = cfg.initial_overrides
    if args.zhat0 is not None or args.thetahat0 is not None:
        init = init or ObserverState.zeros(sc.model.dims)
        if args.zhat0 is not None:
            init = init.replace(z_hat=_floats(args.zhat0, "--zhat0"))
        if args.thetahat0 is not None:
            init = init.replace(theta_hat=_floats(args.thetahat0, "--thetahat0"))
    cfg = SimConfig(
        scenario=sc,
        variant=variant,
        gains=gains,
        dt=cfg.dt if args.dt is None else args.dt,
        record_every=cfg.record_every if args.record_every is None else args.record_every,
        initial_overrides=init,
    )
    if getattr(args, "pe_window", None) is not None:
        pe_T = args.pe_window
    if getattr(args, "pe_level", None) is not None:
        pe_level = args.pe_level
    return cfg, pe_T, pe_level


def cmd_simulate(args) -> int:
    cfg, pe_T, pe_level = _build_config(args)
    out = Path(args.out)
    trace = run(cfg)
    traceio.write_trace_csv(trace, out)
    summary = traceio.summarize(cfg, trace, pe_T, pe_level)
    text = traceio.format_summary(summary)
    sys.stdout.write(text)
    try:
        Path(f"{out}.summary.txt").write_text(text)
    except OSError as exc:
        raise ConfigError(f"cannot write summary: {exc}") from exc
    if not args.no_figure:
        fig = plotting.trace_figure(trace, out.with_suffix(".png"), title=f"{cfg.scenario.name} / {cfg.variant.value}")
        print(f"figure={fig}")
    return EXIT_OK if trace.ok else EXIT_FAULT


def cmd_check_kappa(args) -> int:
    v = diagnostics.kappa_bound_check(args.kappa, args.rho, args.p, args.psi_sup)
    verdict = "PASS" if v.passed else "FAIL"
    print(f"{_color(verdict, v.passed)}: kappa={args.kappa:g} required > {v.required:.6g} margin={v.margin:.6g}")
    return EXIT_OK if v.passed else EXIT_FAIL


def cmd_sweep_rho(args) -> int:
    rhos = _floats(args.rho_list, "--rho-list")
    if not rhos:
        raise ConfigError("--rho-list is empty")
    if any(r < 0 for r in rhos):
        raise ConfigError("rho values must be >= 0")
    cfg, _, _ = _build_config(args)
    entries = compare_rho_sweep(cfg, rhos)
    header = ["rho", "sup_eps", "sup_theta_tilde", "final_theta_tilde", "status"]
    print(f"{'rho':>10} {'sup|eps|':>14} {'sup|th~|':>14} {'final|th~|':>14}  status")
    for e in entries:
        print(f"{e.rho:>10.4g} {e.sup_eps:>14.6g} {e.sup_theta_tilde:>14.6g} {e.final_theta_tilde:>14.6g}  {e.trace.status}")
    out = Path(args.out)
    try:
        with out.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for e in entries:
                w.writerow([repr(e.rho), repr(e.sup_eps), repr(e.sup_theta_tilde), repr(e.final_theta_tilde), e.trace.status])
    except OSError as exc:
        raise ConfigError(f"cannot write {out}: {exc}") from exc
    if not args.no_figure:
        fig = plotting.sweep_figure(entries, out.with_suffix(".png"), title=f"rho sweep on {cfg.scenario.name}")
        print(f"figure={fig}")
    return EXIT_OK if all(e.trace.ok for e in entries) else EXIT_FAULT


def cmd_plot(args) -> int:
    try:
        plotting.write_gnuplot_script(args.csv, args.out)
    except OSError as exc:
        raise ConfigError(f"cannot write {args.out}: {exc}") from exc
    print(f"script={args.out}")
    if args.png:
        trace = traceio.read_trace_csv(args.csv)
        print(f"figure={plotting.trace_figure(trace, args.png)}")
    return EXIT_OK


def cmd_list_scenarios(args) -> int:
    for name in SCENARIO_NAMES:
        print(f"{name}  {DESCRIPTIONS[name]}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drem-observer", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="run one scenario and write the trace CSV, summary and figure")
    _add_run_flags(p)
    p.add_argument("--out", required=True, help="trace CSV path")
    p.add_argument("--pe-window", type=float, help="PE window length T (default: 10%% of the horizon)")
    p.add_argument("--pe-level", type=float, help="PE level (default 1e-6)")
    p.add_argument("--no-figure", action="store_true", help="skip the PNG figure")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check-kappa", help="check kappa > rho * (p/4) * psi_sup^2")
    p.add_argument("--kappa", type=float, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--psi-sup", type=float, required=True)
    p.set_defaults(func=cmd_check_kappa)

    p = sub.add_parser("sweep-rho", help="compare the feedback observer over several rho values")
    _add_run_flags(p, with_variant=False)
    p.add_argument("--rho-list", required=True, help="comma-separated rho values, e.g. 0,1,10")
    p.add_argument("--out", default="rho_sweep.csv", help="sweep table CSV path")
    p.add_argument("--no-figure", action="store_true")
    p.set_defaults(func=cmd_sweep_rho)

    p = sub.add_parser("plot", help="emit a gnuplot script for a trace CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True, help="script path")
    p.add_argument("--png", help="also render the figure with matplotlib to this path")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("list-scenarios", help="list the built-in scenarios")
    p.set_defaults(func=cmd_list_scenarios)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IntegrationFault, IntegrityError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_FAULT
    except DremError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
