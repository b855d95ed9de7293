import textwrap

import numpy as np
import pytest

from drem_observer import ConfigError, MixingMode, ObserverVariant, run
from drem_observer.config import load_config, parse_document

S1_INLINE = """
schema_version: 1
scenario:
  name: S1
  dims: {n_x: 1, n_u: 1, n_y: 1, p: 1}
  A: [[-1.0]]
  Omega: {u1: [[1.0]]}
  C: [[1.0]]
  Psi: [[0.0]]
  Gamma: [[0.0]]
  P: [[1.0]]
  theta_true: [2.0]
  x0: [1.0]
  input: [[{kind: sin, amp: 1.0, freq: 1.0}]]
  t_final: 50
observer: {variant: prop2, lambda: 1.0, kappa: 1.0, rho: 1.0}
sim: {dt: 0.001, t_final: 5, initial_overrides: {z_hat: [-1.0]}}
"""

S1_CATALOG = """
schema_version: 1
scenario: S1
observer: {variant: prop2, lambda: 1.0, kappa: 1.0, rho: 1.0}
sim: {dt: 0.001, t_final: 5, initial_overrides: {z_hat: [-1.0]}}
"""


def write(tmp_path, text, name="run.yaml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


def test_inline_matches_catalog(tmp_path):
    a = load_config(write(tmp_path, S1_INLINE, "a.yaml")).sim
    b = load_config(write(tmp_path, S1_CATALOG, "b.yaml")).sim
    ta, tb = run(a), run(b)
    for f in ("t", "x", "theta_hat", "zbar", "eps", "V0"):
        assert np.array_equal(getattr(ta, f), getattr(tb, f))


def test_fields_parsed(tmp_path):
    rc = load_config(write(tmp_path, S1_CATALOG + "diagnostics: {pe_window_T: 2.0, pe_level: 0.01}\n"))
    cfg = rc.sim
    assert cfg.variant is ObserverVariant.Prop2
    assert cfg.gains.rho_gain == 1.0 and cfg.gains.mode is MixingMode.Adjugate
    assert cfg.scenario.t_final == 5.0 and cfg.n_steps == 5000
    assert cfg.initial_overrides.z_hat == pytest.approx([-1.0])
    assert rc.pe_window_T == 2.0 and rc.pe_level == 0.01


def test_lyapunov_margin_certificate():
    doc = {
        "schema_version": 1,
        "scenario": {
            "dims": {"n_x": 2, "n_u": 1, "n_y": 1, "p": 1},
            "A": [[0, 1], [0, 0]],
            "Omega": {"u1": [[0], [1]]},
            "C": [[1, 0]],
            "Gamma": [[2], [1]],
            "P": {"lyapunov_margin": 0.1},
            "theta_true": [1.5],
            "x0": [1, 0],
            "input": [[{"kind": "sin", "freq": 1}]],
            "t_final": 1,
        },
    }
    P = parse_document(doc).sim.scenario.certificate.P
    assert P == pytest.approx(np.array([[0.3, -0.05], [-0.05, 0.4]]), abs=1e-12)


@pytest.mark.parametrize(
    "text",
    [
        "schema_version: 2\nscenario: S1\n",
        "scenario: S1\n",
        "schema_version: 1\n",
        "schema_version: 1\nscenario: bogus\n",
        "schema_version: 1\nscenario: S1\nextra: 1\n",
        "schema_version: 1\nscenario: S1\nobserver: {lambda: -1}\n",
        "schema_version: 1\nscenario: S1\nobserver: {mode: sideways}\n",
        "schema_version: 1\nscenario: S1\nsim: {dt: 0.5}\n",
        "schema_version: 1\nscenario: S1\nsim: {record_every: 1.5}\n",
        "schema_version: 1\nscenario: S1\nsim: {initial_overrides: {z_hat: [1, 2]}}\n",
        "schema_version: 1\nscenario: S1\nsim: {initial_overrides: {bogus: [1]}}\n",
        "schema_version: 1\nscenario: {dims: {n_x: 1}}\n",
        "[unclosed",
        "- just\n- a list\n",
    ],
)
def test_rejects_bad_documents(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, text))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")


def test_inline_needs_psi_sup_for_signal_psi():
    doc = {
        "schema_version": 1,
        "scenario": {
            "dims": {"n_x": 1, "n_u": 1, "n_y": 1, "p": 1},
            "A": [[-1]], "C": [[1]], "Psi": {"u1": [[1]]}, "P": [[1]],
            "theta_true": [1], "x0": [0], "input": [0.0], "t_final": 1,
        },
    }
    with pytest.raises(ConfigError, match="psi_sup"):
        parse_document(doc)
