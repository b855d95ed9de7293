"""Figures for traces and rho sweeps, plus gnuplot script emission.

matplotlib is imported lazily and always with the Agg backend; nothing here
opens a window.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .traceio import _indexed, read_header

FIGSIZE = (7.0, 6.0)


def _norm_expr(cols: list[str]) -> str:
    terms = "+".join(f'column("{c}")**2' for c in cols)
    return f"(sqrt({terms}))"


def gnuplot_script(csv_path, columns: list[str]) -> str:
    """Script plotting |theta_tilde|, |zbar|, delta and V0 against t from a v1 trace CSV.

    Only the standard columns are referenced, extra user columns are ignored.
    """
    csv_path = str(csv_path)
    out_png = Path(csv_path).with_suffix(".png").name
    tt = _indexed(columns, "thetatilde")
    zb = _indexed(columns, "zbar")
    panels = [
        ("|theta_tilde|", _norm_expr(tt)),
        ("|zbar|", _norm_expr(zb)),
        ("delta", '(column("delta"))'),
        ("V0", '(column("V0"))'),
    ]
    lines = [
        "# generated by drem-observer; run with: gnuplot <this file>",
        "set datafile separator ','",
        "set datafile commentschars '#'",
        "set datafile columnheaders",
        "set terminal pngcairo size 900,800",
        f"set output '{out_png}'",
        "set multiplot layout 4,1",
        "set xlabel 't [s]'",
        "set grid",
    ]
    for i, (label, expr) in enumerate(panels):
        lines.append(f"set ylabel '{label}'")
        lines.append("set logscale y" if i in (0, 1, 3) else "unset logscale y")
        lines.append(f"plot '{csv_path}' using (column(\"t\")):{expr} with lines notitle")
    lines.append("unset multiplot")
    return "\n".join(lines) + "\n"


def write_gnuplot_script(csv_path, out_path) -> str:
    names, _, _ = read_header(csv_path)
    text = gnuplot_script(csv_path, names)
    Path(out_path).write_text(text)
    return text


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _positive(v):
    v = np.asarray(v, dtype=float)
    return np.where(v > 0, v, np.nan)


def trace_figure(trace, path, title: str | None = None) -> Path:
    plt = _pyplot()
    fig, axes = plt.subplots(4, 1, sharex=True, figsize=FIGSIZE)
    t = trace.t
    axes[0].semilogy(t, _positive(trace.theta_tilde_norm()), lw=1)
    axes[0].set_ylabel(r"$|\tilde\theta|$")
    axes[1].semilogy(t, _positive(trace.zbar_norm()), lw=1)
    axes[1].set_ylabel(r"$|\bar z|$")
    axes[2].plot(t, trace.delta, lw=1)
    axes[2].set_ylabel(r"$\delta$")
    axes[3].semilogy(t, _positive(trace.V0), lw=1)
    axes[3].set_ylabel(r"$V_0$")
    axes[3].set_xlabel("t [s]")
    for ax in axes:
        ax.grid(True, alpha=0.3)
    if title:
        axes[0].set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def sweep_figure(entries, path, title: str | None = None) -> Path:
    plt = _pyplot()
    fig, (ax_eps, ax_th) = plt.subplots(2, 1, sharex=True, figsize=FIGSIZE)
    for e in entries:
        tr = e.trace
        ax_eps.plot(tr.t, tr.eps_norm(), lw=1, label=f"rho={e.rho:g}")
        ax_th.semilogy(tr.t, _positive(tr.theta_tilde_norm()), lw=1, label=f"rho={e.rho:g}")
    ax_eps.set_ylabel(r"$|\epsilon|$ (oracle)")
    ax_th.set_ylabel(r"$|\tilde\theta|$")
    ax_th.set_xlabel("t [s]")
    ax_eps.legend(loc="upper right", fontsize=8)
    for ax in (ax_eps, ax_th):
        ax.grid(True, alpha=0.3)
    if title:
        ax_eps.set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
