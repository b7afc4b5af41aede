"""Strip aerodynamics: indicial functions, lag states, loads, gust."""

import numpy as np
import pytest

from aeroflex.aero import (
    AeroConstants,
    AeroStripState,
    DegenerateFlowError,
    GustSpec,
    StripGeometry,
    aero_state_rates,
    effective_aoa,
    effective_velocity,
    gust_velocity,
    kussner_psi,
    strip_loads,
    theodorsen_jones,
    wagner_equilibrium_states,
    wagner_phi,
)

C = AeroConstants()
RHO = 0.0889


class TestIndicialFunctions:
    def test_wagner_limits(self):
        assert np.isclose(wagner_phi(0.0), 0.5)
        assert np.isclose(wagner_phi(1e6), 1.0)
        # direct evaluation oracle at tau = 10
        expected = 1 - 0.165 * np.exp(-0.455) - 0.335 * np.exp(-3.0)
        assert np.isclose(wagner_phi(10.0), expected, rtol=1e-12)
        assert abs(wagner_phi(10.0) - 0.8786) < 5e-4

    def test_wagner_monotone(self):
        tau = np.linspace(0, 100, 2000)
        assert np.all(np.diff(wagner_phi(tau)) >= 0.0)

    def test_wagner_negative_tau(self):
        with pytest.raises(ValueError):
            wagner_phi(-0.1)

    def test_kussner_limits(self):
        assert np.isclose(kussner_psi(0.0), 0.0, atol=1e-12)
        assert np.isclose(kussner_psi(1e6), 1.0)
        expected = 1 - 0.5792 * np.exp(-0.1393) - 0.4208 * np.exp(-1.802)
        assert np.isclose(kussner_psi(1.0), expected, rtol=1e-12)
        assert abs(kussner_psi(1.0) - 0.4269) < 5e-4

    def test_theodorsen_limits(self):
        assert np.isclose(theodorsen_jones(0.0), 1.0 + 0.0j)
        assert np.isclose(theodorsen_jones(1e9), 0.5, atol=1e-6)

    def test_theodorsen_matches_lag_transfer_function(self):
        # Frequency response of the two-state realization:
        # H(ik) = (1 - psi1 - psi2) + sum_i psi_i eps_i / (ik + eps_i)
        for k in (0.01, 0.1, 0.3, 1.0, 3.0):
            ik = 1j * k
            H = (1 - C.psi1 - C.psi2) + C.psi1 * C.eps1 / (ik + C.eps1) \
                + C.psi2 * C.eps2 / (ik + C.eps2)
            assert abs(H - theodorsen_jones(k)) < 1e-10

    def test_constants_invariants(self):
        assert np.isclose(C.psi1 + C.psi2, 0.5)
        assert np.isclose(C.phi1 + C.phi2, 1.0)
        with pytest.raises(ValueError):
            AeroConstants(psi1=0.2)


class TestEffectiveVelocity:
    def test_level_rest(self):
        strip = StripGeometry(s=0.0, b=0.5, ds=0.4)
        V = effective_velocity(strip, [25.0, 0, 0], np.eye(3), np.zeros(3), np.zeros(3))
        assert np.allclose(V, [25.0, 0.0, 0.0])

    def test_plunge_sign(self):
        strip = StripGeometry(s=0.0, b=0.5, ds=0.4)
        V = effective_velocity(strip, [25.0, 0, 0], np.eye(3), np.zeros(3),
                               [0.0, 0.0, -1.0])
        assert np.isclose(V[2], 1.0)

    def test_pitch_rate_cross_product(self):
        # Station 8 m ahead (upwind) of the CG, pitch rate 0.1 rad/s.
        strip = StripGeometry(s=0.0, b=0.5, ds=0.4)
        omega = np.array([0.0, 0.1, 0.0])
        r = np.array([-8.0, 0.0, 0.0])
        v_body = np.cross(omega, r)
        V = effective_velocity(strip, [25.0, 0, 0], np.eye(3), v_body, np.zeros(3))
        assert np.allclose(V, np.array([25.0, 0, 0]) - v_body)

    def test_effective_aoa(self):
        assert np.isclose(effective_aoa([25.0, 0, 0]), 0.0)
        assert np.isclose(effective_aoa([25.0, 0.0, 25 * np.tan(np.radians(2))]),
                          np.radians(2))
        assert np.isclose(np.degrees(effective_aoa([25.0, 0.0, -2.5])), -5.7106,
                          atol=1e-3)
        with pytest.raises(DegenerateFlowError):
            effective_aoa([0.0, 1.0, 1.0])


class TestLagStates:
    def test_zero_rates(self):
        st = AeroStripState()
        assert np.allclose(aero_state_rates(st, 0.0, 0.0, 25.0, 0.5), 0.0)

    def test_equilibrium(self):
        U, b, w = 25.0, 0.5, 2.0
        x1, x2 = wagner_equilibrium_states(w, U, b)
        st = AeroStripState(x1=x1, x2=x2)
        r = aero_state_rates(st, w, 0.0, U, b)
        assert np.allclose(r[:2], 0.0, atol=1e-12)

    def test_quasi_steady_lift_recovery(self):
        # With equilibrium lag states the circulatory lift is 2 pi rho U b w.
        U, b, w = 25.0, 0.5, 2.0
        x1, x2 = wagner_equilibrium_states(w, U, b)
        st = AeroStripState(x1=x1, x2=x2)
        strip = StripGeometry(s=0.0, b=b, ds=1.0)
        L, M, D = strip_loads(strip, {"U": U, "alpha": w / U}, st, C, RHO)
        assert np.isclose(L, 2 * np.pi * RHO * U * b * w, rtol=1e-12)


class TestStripLoads:
    def test_steady_alpha_classical(self):
        U, b, alpha = 25.0, 0.5, 0.1
        w = U * alpha
        x1, x2 = wagner_equilibrium_states(w, U, b)
        st = AeroStripState(x1=x1, x2=x2)
        strip = StripGeometry(s=0.0, b=b, ds=1.0)
        L, M, D = strip_loads(strip, {"U": U, "alpha": alpha}, st, C, RHO)
        assert np.isclose(L, 2 * np.pi * RHO * U * b * (U * alpha), rtol=1e-12)
        assert abs(L - 17.45) < 0.02
        # a = 0: steady circulatory moment arm is b/2.
        assert np.isclose(M, 0.5 * b * L, rtol=1e-12)

    def test_zero_kinematics_drag_only(self):
        strip = StripGeometry(s=0.0, b=0.5, ds=1.0)
        L, M, D = strip_loads(strip, {"U": 25.0}, AeroStripState(), C, RHO)
        assert L == 0.0 and M == 0.0
        assert np.isclose(D, 0.5 * RHO * 625 * 1.0 * 0.01, rtol=1e-12)
        assert abs(D - 0.278) < 1e-3

    def test_drag_nonnegative_quadratic(self):
        strip = StripGeometry(s=0.0, b=0.5, ds=1.0)
        U = 25.0
        D0 = strip_loads(strip, {"U": U}, AeroStripState(), C, RHO)[2]
        alphas = np.linspace(-0.3, 0.3, 13)
        drags, lifts = [], []
        for al in alphas:
            x1, x2 = wagner_equilibrium_states(U * al, U, 0.5)
            st = AeroStripState(x1=x1, x2=x2)
            L, _, D = strip_loads(strip, {"U": U, "alpha": al}, st, C, RHO)
            assert D >= 0.0
            drags.append(D - D0)
            lifts.append(L)
        drags = np.array(drags)
        lifts = np.array(lifts)
        # induced part proportional to CL^2
        ratio = drags[lifts != 0] / lifts[lifts != 0] ** 2
        assert np.allclose(ratio, ratio[0], rtol=1e-9)


class TestGust:
    def test_profile(self):
        spec = GustSpec(w_g0=5.0, H_g=25.0, t0=1.0)
        U = 25.0
        assert gust_velocity(0.5, spec, U) == 0.0
        assert np.isclose(gust_velocity(1.0 + 0.5, spec, U), 5.0)  # peak at H_g/(2U)
        assert np.isclose(gust_velocity(1.0 + 1.0, spec, U), 0.0, atol=1e-12)
        assert gust_velocity(5.0, spec, U) == 0.0

    def test_continuity(self):
        spec = GustSpec(w_g0=5.0, H_g=25.0, t0=0.0)
        eps = 1e-9
        assert abs(gust_velocity(eps, spec, 25.0)) < 1e-6
        assert abs(gust_velocity(1.0 - eps, spec, 25.0)) < 1e-6

    def test_validation(self):
        with pytest.raises(ValueError):
            GustSpec(w_g0=5.0, H_g=-1.0)
        with pytest.raises(ValueError):
            GustSpec(w_g0=-5.0)
