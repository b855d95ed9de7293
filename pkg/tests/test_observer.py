import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drem_observer import (
    ConfigError,
    IntegrationFault,
    MixingMode,
    ObserverGains,
    ObserverState,
    ObserverVariant,
    builtin_scenario,
    lambda_map,
    observer_rhs,
    output,
    plant_rhs,
    reconstruct_x,
    t_matrix,
    xi_map,
)
from drem_observer.model import SCENARIO_NAMES


def random_state(sc, rng):
    d = sc.model.dims
    B = rng.normal(size=(d.p, d.p))
    return ObserverState(
        z_hat=rng.normal(size=d.n_x),
        theta_hat=rng.normal(size=d.p),
        Y=rng.normal(size=(d.n_x, d.p)),
        Y_script=rng.normal(size=d.p),
        Phi=B @ B.T,
    )


class TestTMatrix:
    def test_zero(self):
        sc = builtin_scenario("S1")
        assert np.all(t_matrix(sc.model, sc.certificate, [0.3], [[0.0]]) == 0)

    def test_s1(self):
        sc = builtin_scenario("S1")
        assert t_matrix(sc.model, sc.certificate, [0.3], [[0.4]]) == pytest.approx(np.array([[0.4]]))

    def test_s2_first_column_of_p_inverse(self, reference):
        sc = builtin_scenario("S2")
        P = np.array(reference["S2_P_hand"]["P"])
        T = t_matrix(sc.model, sc.certificate, [0.0], [[1.0], [0.0]])
        assert T[:, 0] == pytest.approx(np.linalg.inv(P)[:, 0], rel=1e-12)
        assert T[:, 0] == pytest.approx([3.4042553191, 0.4255319149], abs=1e-9)


class TestObserverRhs:
    def test_zero_state_s1(self, reference):
        sc = builtin_scenario("S1")
        st0 = ObserverState(**{k: np.array(v, dtype=float) for k, v in reference["S1_zero_state_observer_rhs_hand"].items()})
        d = observer_rhs("prop1", sc.model, sc.certificate, ObserverGains(), st0, [0.5], [1.0])
        # z_hat' = -z_hat + 0*y, Y' = -Y + u, Ys' = 0, Phi' = 0, theta' = 0
        assert d.z_hat == pytest.approx([0.0])
        assert d.Y == pytest.approx(np.array([[0.5]]))
        assert np.all(d.Y_script == 0) and np.all(d.Phi == 0) and np.all(d.theta_hat == 0)

    @pytest.mark.parametrize("variant", list(ObserverVariant))
    @pytest.mark.parametrize("name", SCENARIO_NAMES)
    def test_equilibrium(self, name, variant):
        sc = builtin_scenario(name)
        rng = np.random.default_rng(5)
        s = random_state(sc, rng)
        theta = sc.theta_true
        x = rng.normal(size=sc.model.dims.n_x)
        u = sc.input(0.7)
        y = output(sc.model, x, theta, u)
        z = x - s.Y @ theta
        s = s.replace(z_hat=z, theta_hat=theta.copy(), Y_script=s.Phi @ theta)
        g = ObserverGains(1.3, 0.7, 2.0, MixingMode.Adjugate)
        d = observer_rhs(variant, sc.model, sc.certificate, g, s, u, y)
        zdot = plant_rhs(sc.model, x, theta, u) - d.Y @ theta
        assert np.allclose(d.theta_hat, 0.0, atol=1e-12)
        assert np.allclose(zdot - d.z_hat, 0.0, atol=1e-12)

    def test_rho_zero_prop2_bit_identical(self):
        sc = builtin_scenario("S3")
        s = random_state(sc, np.random.default_rng(6))
        g = ObserverGains(1.0, 1.0, 0.0)
        a = observer_rhs("prop1", sc.model, sc.certificate, g, s, [0.2], [0.4])
        b = observer_rhs("prop2", sc.model, sc.certificate, g, s, [0.2], [0.4])
        for f in ("z_hat", "theta_hat", "Y", "Y_script", "Phi"):
            assert np.array_equal(getattr(a, f), getattr(b, f))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_names_field(self):
        sc = builtin_scenario("S1")
        s = ObserverState.zeros(sc.model.dims).replace(z_hat=np.array([np.inf]))
        with pytest.raises(IntegrationFault) as err:
            observer_rhs("prop1", sc.model, sc.certificate, ObserverGains(), s, [0.0], [0.0], t=1.5)
        assert err.value.field == "z_hat" and err.value.t == 1.5

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000), name=st.sampled_from(SCENARIO_NAMES),
           rho=st.floats(0.0, 5.0), t=st.floats(0.0, 20.0))
    def test_error_dynamics(self, seed, name, rho, t):
        """zbar' = Lam zbar for the basic observer and Lam zbar - rho T eps with feedback."""
        sc = builtin_scenario(name)
        rng = np.random.default_rng(seed)
        s = random_state(sc, rng)
        theta = sc.theta_true
        x = rng.normal(size=sc.model.dims.n_x)
        u = sc.input(t)
        y = output(sc.model, x, theta, u)
        Lam = lambda_map(sc.model, u, y)
        zbar = x - s.Y @ theta - s.z_hat
        eps = s.Y_script - s.Phi @ theta
        for variant, r in (("prop1", 0.0), ("prop2", rho)):
            d = observer_rhs(variant, sc.model, sc.certificate, ObserverGains(1.0, 1.0, r), s, u, y)
            zbar_dot = plant_rhs(sc.model, x, theta, u) - d.Y @ theta - d.z_hat
            want = Lam @ zbar - r * t_matrix(sc.model, sc.certificate, u, s.Y) @ eps
            scale = 1 + np.abs(want).max() + r * np.abs(s.Phi).max()
            assert np.allclose(zbar_dot, want, atol=1e-10 * scale)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_phi_derivative_symmetric(self, seed):
        sc = builtin_scenario("S4")
        s = random_state(sc, np.random.default_rng(seed))
        d = observer_rhs("prop2", sc.model, sc.certificate, ObserverGains(rho_gain=1.0), s, sc.input(1.0), [0.3])
        assert np.array_equal(d.Phi, d.Phi.T)
        Xi = xi_map(sc.model, sc.input(1.0), s.Y)
        assert d.Phi == pytest.approx(-s.Phi + Xi.T @ Xi)


class TestStateAndGains:
    def test_reconstruct_x(self):
        s = ObserverState.zeros(builtin_scenario("S1").model.dims)
        assert reconstruct_x(s.replace(z_hat=np.array([2.5]))) == pytest.approx([2.5])
        s2 = ObserverState(np.zeros(2), np.array([3.0]), np.array([[1.0], [2.0]]), np.zeros(1), np.zeros((1, 1)))
        assert reconstruct_x(s2) == pytest.approx([3.0, 6.0])

    @pytest.mark.parametrize("kw", [{"lam": 0.0}, {"kappa": -1.0}, {"rho_gain": -0.1}, {"mode": "bogus"}])
    def test_gain_validation(self, kw):
        with pytest.raises(ConfigError):
            ObserverGains(**kw)

    def test_validate_rejects_bad_phi(self):
        dims = builtin_scenario("S4").model.dims
        s = ObserverState.zeros(dims)
        with pytest.raises(ConfigError):
            s.replace(Phi=np.array([[1.0, 0.2], [0.0, 1.0]])).validate(dims)
        with pytest.raises(ConfigError):
            s.replace(Phi=np.diag([1.0, -1.0])).validate(dims)
