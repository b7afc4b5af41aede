"""Rigid-body kinematics and dynamics."""

import numpy as np
import pytest

from aeroflex.rigid import (
    MassProperties,
    RigidState,
    cg_rates,
    gravity_body,
    inertia_correction,
    mass_line_inertia,
    quat_from_axis_angle,
    quat_normalize,
    quat_rates,
    quat_to_matrix,
    rk4_rigid_step,
    rotational_rates,
    translational_rates,
)

RNG = np.random.default_rng(7)


class TestQuaternion:
    def test_zero_rate(self):
        assert np.allclose(quat_rates([1, 0, 0, 0], np.zeros(3)), 0.0)

    def test_pitch_rate_by_hand(self):
        qd = quat_rates([1, 0, 0, 0], [0.0, 0.2, 0.0])
        assert np.allclose(qd, [0.0, 0.0, 0.1, 0.0])

    def test_constant_yaw_rate_closed_form(self):
        # omega = (0, 0, pi/10) for 5 s -> 90 deg yaw.
        dt = 0.001
        q = np.array([1.0, 0.0, 0.0, 0.0])
        om = np.array([0.0, 0.0, np.pi / 10])
        for _ in range(5000):
            k1 = quat_rates(q, om)
            k2 = quat_rates(q + dt / 2 * k1, om)
            k3 = quat_rates(q + dt / 2 * k2, om)
            k4 = quat_rates(q + dt * k3, om)
            q = quat_normalize(q + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4))
        assert np.allclose(q, [np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)], atol=1e-6)

    def test_matrix_identity(self):
        assert np.allclose(quat_to_matrix([1, 0, 0, 0]), np.eye(3))

    def test_matrix_yaw(self):
        R = quat_to_matrix(quat_from_axis_angle([0, 0, 1], np.pi / 2))
        assert np.allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-14)

    def test_orthonormal_random(self):
        for _ in range(100):
            q = quat_normalize(RNG.normal(size=4))
            R = quat_to_matrix(q)
            assert np.allclose(R.T @ R, np.eye(3), atol=1e-12)

    def test_zero_quaternion_rejected(self):
        with pytest.raises(ValueError):
            quat_to_matrix([0.0, 0.0, 0.0, 0.0])

    def test_kinematic_consistency(self):
        # d/dt R(q) == R(q) skew(omega) for the implemented pair of conventions.
        q = quat_normalize(RNG.normal(size=4))
        om = RNG.normal(size=3)
        h = 1e-7
        qd = quat_rates(q, om)
        dR = (quat_to_matrix(q + h * qd) - quat_to_matrix(q - h * qd)) / (2 * h)
        sk = np.array([[0, -om[2], om[1]], [om[2], 0, -om[0]], [-om[1], om[0], 0]])
        assert np.allclose(dR, quat_to_matrix(q) @ sk, atol=1e-6)


class TestRates:
    def test_translational_zero(self):
        st = RigidState()
        mp = MassProperties(m=74.0, J0=np.diag([2048.0, 3.2, 2051.0]))
        assert np.allclose(
            translational_rates(st, mp, np.zeros(3), np.zeros(3), np.zeros(3)), 0.0)

    def test_free_fall(self):
        st = RigidState()
        mp = MassProperties(m=74.0, J0=np.diag([2048.0, 3.2, 2051.0]))
        Fg = mp.m * gravity_body(st.q)
        vd = translational_rates(st, mp, np.zeros(3), Fg, np.zeros(3))
        assert np.allclose(vd, [0.0, 0.0, -9.81])

    def test_coriolis_cross_product(self):
        st = RigidState(V_B=[25.0, 0, 0], omega_B=[0, 0.1, 0])
        mp = MassProperties(m=74.0, J0=np.eye(3))
        vd = translational_rates(st, mp, np.zeros(3), np.zeros(3), np.zeros(3))
        assert np.allclose(vd, [0.0, 0.0, 2.5])

    def test_rotational_zero_and_principal(self):
        mp = MassProperties(m=74.0, J0=np.diag([10.0, 20.0, 30.0]))
        st = RigidState()
        assert np.allclose(rotational_rates(st, mp, np.zeros(3), np.zeros(3)), 0.0)
        st = RigidState(omega_B=[0.0, 2.0, 0.0])
        assert np.allclose(rotational_rates(st, mp, np.zeros(3), np.zeros(3)), 0.0)

    def test_cg_rates(self):
        st = RigidState(V_B=[25.0, 0, 0])
        assert np.allclose(cg_rates(st), [25.0, 0, 0])
        st = RigidState(V_B=[25.0, 0, 0], q=quat_from_axis_angle([0, 0, 1], np.pi / 2))
        p = cg_rates(st)
        assert np.isclose(abs(p[1]), 25.0) and abs(p[0]) < 1e-12
        st = RigidState()
        assert np.allclose(cg_rates(st), 0.0)


class TestConservation:
    def test_torque_free_momentum(self):
        # Asymmetric inertia, random spin: inertial angular momentum constant.
        mp = MassProperties(m=10.0, J0=np.diag([5.0, 12.0, 9.0]))
        st = RigidState(omega_B=[0.8, -0.4, 1.1])
        L0 = quat_to_matrix(st.q) @ (mp.J @ st.omega_B)
        dt = 0.01
        for _ in range(1000):
            st = rk4_rigid_step(st, mp, lambda s: (np.zeros(3), np.zeros(3)), dt)
        L1 = quat_to_matrix(st.q) @ (mp.J @ st.omega_B)
        assert np.linalg.norm(L1 - L0) / np.linalg.norm(L0) < 1e-6
        assert abs(np.linalg.norm(st.q) - 1.0) < 1e-10

    def test_attitude_vs_closed_form(self):
        mp = MassProperties(m=1.0, J0=np.eye(3))
        om = np.array([0.0, 0.0, 0.3])
        st = RigidState(omega_B=om)
        dt = 0.01
        for _ in range(1000):
            st = rk4_rigid_step(st, mp, lambda s: (np.zeros(3), np.zeros(3)), dt)
        q_exact = quat_from_axis_angle([0, 0, 1], 0.3 * 10.0)
        err = min(np.linalg.norm(st.q - q_exact), np.linalg.norm(st.q + q_exact))
        assert err < 1e-6


class TestInertiaCorrection:
    def test_zero_displacement(self):
        mu = np.ones(5)
        r0 = RNG.normal(size=(5, 3))
        assert np.allclose(inertia_correction(mu, r0, np.zeros((5, 3))), 0.0)

    def test_single_point_hand_value(self):
        # 1 kg at r0 = (0,1,0) displaced u = (0,0,1): dJ = J(r0+u) - J(r0).
        mu = np.array([1.0])
        r0 = np.array([[0.0, 1.0, 0.0]])
        u = np.array([[0.0, 0.0, 1.0]])
        dJ = inertia_correction(mu, r0, u)
        J_after = mass_line_inertia(mu, r0 + u)
        J_before = mass_line_inertia(mu, r0)
        assert np.allclose(dJ, J_after - J_before, atol=1e-14)
        # by hand: diag changes (1, 1, -... ) for this case
        assert np.allclose(dJ, np.array([[1.0, 0, 0], [0, 1.0, -1.0], [0, -1.0, 0.0]]))

    def test_exact_identity_random(self):
        for _ in range(10):
            mu = RNG.uniform(0.1, 2.0, size=8)
            r0 = RNG.normal(size=(8, 3))
            u = RNG.normal(size=(8, 3))
            dJ = inertia_correction(mu, r0, u)
            ref = mass_line_inertia(mu, r0 + u) - mass_line_inertia(mu, r0)
            assert np.allclose(dJ, ref, atol=1e-12)
            assert np.allclose(dJ, dJ.T, atol=1e-12)

    def test_linear_leading_order(self):
        mu = np.ones(4)
        r0 = RNG.normal(size=(4, 3))
        u = RNG.normal(size=(4, 3))
        n1 = np.linalg.norm(inertia_correction(mu, r0, 1e-4 * u))
        n2 = np.linalg.norm(inertia_correction(mu, r0, 2e-4 * u))
        assert abs(n2 / n1 - 2.0) < 1e-3
