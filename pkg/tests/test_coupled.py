"""Monolithic coupled solver: packing, residual consistency, Newmark props."""

import numpy as np
import pytest

import aeroflex.beam as beam_mod
from aeroflex.aero import AeroConstants, GustSpec, kussner_psi, wagner_phi
from aeroflex.beam import distributed_load_vector, point_load_vector, static_solve, strain_energy
from aeroflex.coupled import (
    CoupledModel,
    Iterate,
    SolverSettings,
    StateLayout,
    Stepper,
    consistent_initial_cache,
    equilibrium_lag_states,
    integrated_aero_loads,
    newmark_newton_step,
    pack_state,
    simulate,
    unpack_state,
)
from aeroflex.rigid import quat_from_axis_angle
from aeroflex.vehicle import Aircraft, aircraft_mesh, cantilever_mesh
from aeroflex.rotations import rotation_from_rotvec

RNG = np.random.default_rng(11)


def small_aircraft_model(n_semi=4, sigma=1.0, **kw):
    ac = Aircraft()
    mesh = aircraft_mesh(ac, n_semi, sigma)
    return CoupledModel(ac, mesh, sigma, free_flying=True, **kw)


def small_cantilever_model(n_nodes=8, sigma=1.0, **kw):
    ac = Aircraft()
    mesh = cantilever_mesh(ac, n_nodes, sigma)
    return CoupledModel(ac, mesh, sigma, free_flying=False, **kw)


class TestPackState:
    def test_round_trip(self):
        layout = StateLayout(n_eta=18, n_strips=5)
        x = RNG.normal(size=layout.total)
        parts = unpack_state(layout, x)
        x2 = pack_state(layout, **parts)
        assert np.array_equal(x, x2)

    def test_zero_parts_identity_quaternion(self):
        layout = StateLayout(n_eta=6, n_strips=2)
        x = pack_state(layout)
        assert np.count_nonzero(x) == 1
        assert x[layout.q][0] == 1.0

    def test_dimension_formula(self):
        # 12 n_nodes(reduced) + 4 n_strips + 13
        model = small_aircraft_model(4)
        n_free_nodes = model.mesh.n_nodes - 1
        expected = 12 * n_free_nodes + 4 * model.strips.n + 13
        assert model.layout.total == expected

    def test_dimension_mismatch_raises(self):
        layout = StateLayout(n_eta=6, n_strips=2)
        with pytest.raises(ValueError):
            pack_state(layout, eta=np.zeros(5))
        with pytest.raises(ValueError):
            unpack_state(layout, np.zeros(layout.total + 1))


class TestIntegratedAeroLoads:
    def test_flat_wing_uniform_lift(self):
        model = small_aircraft_model(6)
        mesh = model.mesh
        span = 2 * model.aircraft.semi_span
        l_per = 10.0
        f_local = np.tile([0.0, 0.0, l_per], (mesh.n_elements, 1))
        F, M = integrated_aero_loads(mesh, mesh.zero_state(), f_local)
        assert np.isclose(F[2], span * l_per, rtol=1e-12)
        assert abs(F[1]) < 1e-10 and abs(M[0]) < 1e-9

    def test_uniform_dihedral(self):
        # Both semi-spans rigidly rotated up by 10 deg about the chord axis.
        model = small_aircraft_model(6)
        mesh = model.mesh
        gam = np.radians(10.0)
        u = np.zeros((mesh.n_nodes, 3))
        psi = np.zeros((mesh.n_nodes, 3))
        center = mesh.clamped_nodes[0]
        Rp = rotation_from_rotvec([-gam, 0.0, 0.0])  # port side up
        Rs = rotation_from_rotvec([+gam, 0.0, 0.0])  # starboard side up
        for i in range(mesh.n_nodes):
            R = Rp if i > center else (Rs if i < center else np.eye(3))
            u[i] = R @ mesh.r0[i] - mesh.r0[i]
            psi[i] = [-gam, 0, 0] if i > center else ([gam, 0, 0] if i < center else 0)
        eta = mesh.join(u, psi)
        l_per = 10.0
        f_local = np.tile([0.0, 0.0, l_per], (mesh.n_elements, 1))
        F, M = integrated_aero_loads(mesh, eta, f_local)
        # The two strips touching the unrotated centre node carry half the
        # dihedral (geodesic midpoint); all others the full angle.
        ds = mesh.l_ref
        expected = l_per * (np.sum(ds) - ds[center - 1] - ds[center]) * np.cos(gam) \
            + l_per * (ds[center - 1] + ds[center]) * np.cos(gam / 2)
        assert np.isclose(F[2], expected, rtol=1e-10)
        assert abs(F[1]) < 1e-9  # lateral components cancel

    def test_antisymmetric_roll_moment(self):
        model = small_aircraft_model(6)
        mesh = model.mesh
        # more lift on the port side -> positive roll moment about +x
        f_local = np.zeros((mesh.n_elements, 3))
        s_mid = 0.5 * (mesh.r0[mesh.elements[:, 0], 1] + mesh.r0[mesh.elements[:, 1], 1])
        f_local[:, 2] = 1.0 + 0.1 * np.sign(s_mid)
        F, M = integrated_aero_loads(mesh, mesh.zero_state(), f_local)
        assert M[0] > 0.0
        assert abs(F[1]) < 1e-12


class TestLagStepResponse:
    def test_wagner_step_equivalence(self):
        # Trapezoidal integration of the lag ODEs for a unit downwash step
        # must reproduce the Wagner function pointwise to 1e-4.
        c = AeroConstants()
        U, b = 25.0, 0.5
        dtau = 0.04
        dt = dtau * b / U
        n = int(50.0 / dtau)
        x1 = x2 = 0.0
        w = 1.0
        p1, p2 = c.eps1 * U / b, c.eps2 * U / b
        max_err = 0.0
        for i in range(1, n + 1):
            # trapezoid: (x+ - x)/dt = 0.5 (f(x+) + f(x))
            x1 = ((1 - 0.5 * dt * p1) * x1 + dt * w) / (1 + 0.5 * dt * p1)
            x2 = ((1 - 0.5 * dt * p2) * x2 + dt * w) / (1 + 0.5 * dt * p2)
            lift_ratio = (1 - c.psi1 - c.psi2) * w + c.eps1 * c.psi1 * U / b * x1 \
                + c.eps2 * c.psi2 * U / b * x2
            max_err = max(max_err, abs(lift_ratio - wagner_phi(i * dtau)))
        assert max_err < 1e-4

    def test_kussner_step_equivalence(self):
        c = AeroConstants()
        U, b = 25.0, 0.5
        dtau = 0.04
        dt = dtau * b / U
        n = int(50.0 / dtau)
        xg1 = xg2 = 0.0
        w = 1.0
        p1, p2 = c.beta1 * U / b, c.beta2 * U / b
        max_err = 0.0
        for i in range(1, n + 1):
            xg1 = ((1 - 0.5 * dt * p1) * xg1 + dt * w) / (1 + 0.5 * dt * p1)
            xg2 = ((1 - 0.5 * dt * p2) * xg2 + dt * w) / (1 + 0.5 * dt * p2)
            lift_ratio = c.beta1 * c.phi1 * U / b * xg1 + c.beta2 * c.phi2 * U / b * xg2
            max_err = max(max_err, abs(lift_ratio - kussner_psi(i * dtau)))
        assert max_err < 1e-4


class TestResidual:
    def test_vacuum_rest_zero_residual(self):
        model = small_cantilever_model(6, aero_enabled=False, gravity=False)
        st = Stepper(model, SolverSettings())
        it = Iterate(eta=np.zeros(model.layout.n_eta),
                     x_a=np.zeros(4 * model.strips.n),
                     V_B=np.zeros(3), omega_B=np.zeros(3),
                     q=np.array([1.0, 0, 0, 0]), p_cg=np.zeros(3))
        cache = consistent_initial_cache(model, it)
        res, _, _, _ = st.residual(it, cache, st.s.dt)
        assert np.linalg.norm(res) < 1e-12

    def test_tangent_matches_fd(self):
        # Monolithic consistency: Newton tangent vs central FD of the residual.
        model = small_aircraft_model(3)
        st = Stepper(model, SolverSettings())
        layout = model.layout
        it0 = Iterate(eta=np.zeros(layout.n_eta), x_a=np.zeros(4 * model.strips.n),
                      V_B=np.zeros(3), omega_B=np.zeros(3),
                      q=quat_from_axis_angle([0, 1, 0], 0.05), p_cg=np.zeros(3))
        cache = consistent_initial_cache(model, it0)
        errs = []
        for _ in range(3):
            dz = np.zeros(st._z_dim)
            dz[: layout.n_eta] = RNG.normal(size=layout.n_eta) * 0.02
            dz[layout.n_eta :] = RNG.normal(size=st._z_dim - layout.n_eta) * 0.02
            it = st.apply_dz(it0, dz)
            K = st.tangent(it, cache, st.s.dt)
            K_fd = np.zeros_like(K)
            h = 1e-6
            for j in range(st._z_dim):
                e = np.zeros(st._z_dim)
                e[j] = h
                rp, _, _, _ = st.residual(st.apply_dz(it, e), cache, st.s.dt)
                rm, _, _, _ = st.residual(st.apply_dz(it, -e), cache, st.s.dt)
                K_fd[:, j] = (rp - rm) / (2 * h)
            errs.append(np.linalg.norm(K - K_fd) / np.linalg.norm(K_fd))
        assert max(errs) < 1e-4


class TestNewmark:
    def test_free_vibration_energy(self):
        # Vacuum beam released from a static tip-load deflection: energy drift
        # below 0.1% over ten periods of the first mode.
        model = small_cantilever_model(11, aero_enabled=False, gravity=False)
        mesh = model.mesh
        f = point_load_vector(mesh, mesh.n_nodes - 1, [0.0, 0.0, 3.0])
        eta0_full = static_solve(mesh, f, 1.0)
        from aeroflex.beam import modal_frequencies

        w1 = modal_frequencies(mesh, 1.0, 1)[0][0]
        T = 2 * np.pi / w1
        settings = SolverSettings(dt=0.01)
        x0 = pack_state(model.layout, eta=mesh.reduce(eta0_full))
        hist = simulate(model, x0, settings, horizon=10 * T)
        M_red = mesh.reduce(mesh.mass_full)

        def energy(i):
            parts = unpack_state(model.layout, hist.states[i])
            v = parts["eta_dot"]
            return 0.5 * v @ M_red @ v + strain_energy(
                mesh, mesh.expand(parts["eta"]), 1.0)

        E0 = energy(0)
        En = np.array([energy(i) for i in range(hist.t.size)])
        assert np.max(np.abs(En - E0)) / E0 < 1e-3

    def test_rigid_trimmed_equilibrium_preserved(self):
        # Gravity-free rigid aircraft at rest with no aero: state constant.
        model = small_aircraft_model(3, sigma=0.001, aero_enabled=False,
                                     gravity=False)
        x0 = pack_state(model.layout)
        settings = SolverSettings(dt=0.01)
        hist = simulate(model, x0, settings, horizon=1.0)
        assert np.max(np.abs(hist.states[-1] - hist.states[0])) < 1e-8

    def test_quaternion_norm_preserved(self):
        model = small_aircraft_model(3, aero_enabled=True)
        layout = model.layout
        x0 = pack_state(layout, omega_B=[0.0, 0.05, 0.0])
        settings = SolverSettings(dt=0.01)
        hist = simulate(model, x0, settings, horizon=0.5)
        for i in range(hist.t.size):
            q = hist.states[i][layout.q]
            assert abs(np.linalg.norm(q) - 1.0) < 1e-10


class TestGustSimulation:
    def test_zero_gust_from_equilibrium_constant(self):
        # Cantilever at zero incidence with zero profile drag: the undeformed
        # state is an exact equilibrium, so every channel stays constant.
        ac = Aircraft(consts=AeroConstants(CD0=0.0))
        mesh = cantilever_mesh(ac, 6, 1.0)
        model = CoupledModel(ac, mesh, 1.0, free_flying=False,
                             gust=GustSpec(w_g0=0.0))
        layout = model.layout
        xa = equilibrium_lag_states(model, np.zeros(layout.n_eta), np.zeros(3),
                                    np.array([1.0, 0, 0, 0]))
        x0 = pack_state(layout, x_a=xa)
        hist = simulate(model, x0, SolverSettings(dt=0.01), horizon=0.5)
        assert np.max(np.abs(hist.tip_defl)) < 1e-9
        assert np.max(np.abs(hist.states[-1] - hist.states[0])) < 1e-7
