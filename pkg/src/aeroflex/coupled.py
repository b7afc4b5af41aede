"""Monolithic coupling of beam, strip aerodynamics and rigid-body dynamics.

State vector (packed order): x = [eta, eta_dot, x_a, V_B, omega_B, q, p_cg]
with eta the reduced structural DOFs, x_a four lag states per strip.  Time
integration: Newmark-beta on the structural partition (multiplicative update
for the rotation DOFs) and the trapezoidal rule, its first-order companion,
for the lag/rigid/quaternion/CG rows; every row is evaluated implicitly at
t_{n+1} and the whole step is solved by Newton iteration on the configuration
unknowns (structural velocities and accelerations are slaved to the
configuration through the integration relations).

The Newton tangent is assembled from the analytic structural blocks (constant
mass, complex-step beam tangent) plus finite-difference load-coupling blocks
(graph-colored central differences of the nonlinear load pipeline).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import beam as beam_mod
from .aero import GustSpec, gust_velocity, pipeline_loads
from .beam import BeamMesh, internal_force, tangent_stiffness
from .rigid import GRAVITY, quat_normalize, quat_rates, quat_to_matrix
from .rotations import (
    cross3,
    jac_right_inv,
    rotation_from_rotvec,
    rotvec_from_rotation,
    rotvec_small_rel,
)
from .vehicle import STRIP_ALIGNMENT, Aircraft, rigid_mass_properties, strips_for_mesh


class NewtonFailure(RuntimeError):
    """Newton iteration for a time step failed; carries the residual history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


@dataclass
class SolverSettings:
    beta: float = 0.25
    gamma: float = 0.5
    dt: float = 0.01
    newton_rel_tol: float = 1e-8
    max_newton_iter: int = 25
    modified_newton: bool = False
    fd_central: bool = True   # central vs forward differences for load coupling

    def __post_init__(self):
        if not (2.0 * self.beta >= self.gamma >= 0.5):
            raise ValueError("Newmark parameters outside the unconditionally "
                             "stable region 2*beta >= gamma >= 1/2")
        if self.dt <= 0.0:
            raise ValueError("time step must be positive")


@dataclass(frozen=True)
class StateLayout:
    """Slice bookkeeping for the packed monolithic state."""

    n_eta: int
    n_strips: int

    @property
    def eta(self):
        return slice(0, self.n_eta)

    @property
    def eta_dot(self):
        return slice(self.n_eta, 2 * self.n_eta)

    @property
    def x_a(self):
        return slice(2 * self.n_eta, 2 * self.n_eta + 4 * self.n_strips)

    @property
    def V_B(self):
        o = 2 * self.n_eta + 4 * self.n_strips
        return slice(o, o + 3)

    @property
    def omega_B(self):
        o = 2 * self.n_eta + 4 * self.n_strips + 3
        return slice(o, o + 3)

    @property
    def q(self):
        o = 2 * self.n_eta + 4 * self.n_strips + 6
        return slice(o, o + 4)

    @property
    def p_cg(self):
        o = 2 * self.n_eta + 4 * self.n_strips + 10
        return slice(o, o + 3)

    @property
    def total(self):
        return 2 * self.n_eta + 4 * self.n_strips + 13


def pack_state(layout: StateLayout, eta=None, eta_dot=None, x_a=None, V_B=None,
               omega_B=None, q=None, p_cg=None):
    """Pack parts into the monolithic vector (identity quaternion default)."""
    x = np.zeros(layout.total)
    x[layout.q.start] = 1.0
    for sl, val in ((layout.eta, eta), (layout.eta_dot, eta_dot),
                    (layout.x_a, x_a), (layout.V_B, V_B),
                    (layout.omega_B, omega_B), (layout.q, q),
                    (layout.p_cg, p_cg)):
        if val is not None:
            val = np.asarray(val, dtype=float).reshape(-1)
            if val.size != sl.stop - sl.start:
                raise ValueError(
                    f"pack_state: expected {sl.stop - sl.start} entries, got {val.size}")
            x[sl] = val
    return x


def unpack_state(layout: StateLayout, x):
    x = np.asarray(x, dtype=float)
    if x.size != layout.total:
        raise ValueError(f"unpack_state: expected length {layout.total}, got {x.size}")
    return {
        "eta": x[layout.eta].copy(),
        "eta_dot": x[layout.eta_dot].copy(),
        "x_a": x[layout.x_a].copy(),
        "V_B": x[layout.V_B].copy(),
        "omega_B": x[layout.omega_B].copy(),
        "q": x[layout.q].copy(),
        "p_cg": x[layout.p_cg].copy(),
    }


@dataclass
class LoadBundle:
    """Instantaneous generalized loads and first-order rates."""

    f_struct: np.ndarray       # reduced structural forcing (aero+gravity+frame)
    lag_rates: np.ndarray      # (n_strips, 4)
    fV: np.ndarray             # rigid translational rate
    fom: np.ndarray            # rigid rotational rate
    q_dot: np.ndarray
    p_dot: np.ndarray
    diagnostics: dict = field(default_factory=dict)


class CoupledModel:
    """A configured aeroelastic(-flight dynamic) model bound to one mesh."""

    def __init__(self, aircraft: Aircraft, mesh: BeamMesh, sigma: float = 1.0, *,
                 free_flying: bool = False, gravity: bool = None,
                 thrust: float = 0.0, tail_incidence: float = 0.0,
                 gust: GustSpec = None, aero_enabled: bool = True):
        self.aircraft = aircraft
        self.mesh = mesh
        self.sigma = float(sigma)
        self.free_flying = free_flying
        self.aero_enabled = aero_enabled
        self.gravity = free_flying if gravity is None else gravity
        self.thrust = float(thrust)
        self.tail_incidence = float(tail_incidence)
        self.gust = gust or GustSpec(w_g0=0.0)
        self.strips = strips_for_mesh(aircraft, mesh)
        self.layout = StateLayout(n_eta=len(mesh.free_dofs), n_strips=self.strips.n)
        self.V_inf = np.array([aircraft.U, 0.0, 0.0])
        self.m_rigid, self.J0 = rigid_mass_properties(aircraft, mesh)
        i1, i2 = mesh.elements[:, 0], mesh.elements[:, 1]
        self._mu_ds = np.array([s.mu for s in mesh.sections]) * mesh.l_ref
        self._el_nodes = (i1, i2)
        # Sectional rotary inertia per element length in global axes.
        self._Jbar_ds = np.stack([
            mesh.l_ref[e] * (mesh.R0[i1[e]] @ mesh.sections[e].J_rho @ mesh.R0[i1[e]].T)
            for e in range(mesh.n_elements)
        ])

    # -- helpers ---------------------------------------------------------------

    def eta_full(self, eta_reduced):
        return self.mesh.expand(eta_reduced)

    def node_arrays(self, eta_r, eta_dot_r, eta_ddot_r):
        mesh = self.mesh
        u, psi = mesh.split(self.eta_full(eta_r))
        v, om = mesh.split(self.eta_full(eta_dot_r))
        a, omdot = mesh.split(self.eta_full(eta_ddot_r))
        return u, psi, v, om, a, omdot

    def gust_velocity_at(self, t):
        return gust_velocity(t, self.gust, self.aircraft.U)

    def delta_inertia(self, eta_r):
        from .rigid import inertia_correction

        u, _ = self.mesh.split(self.eta_full(eta_r))
        i1, i2 = self._el_nodes
        u_mid = 0.5 * (u[i1] + u[i2])
        i1r, i2r = self._el_nodes
        r_mid = 0.5 * (self.mesh.r0[i1r] + self.mesh.r0[i2r])
        return inertia_correction(self._mu_ds, r_mid, u_mid)

    # -- instantaneous load evaluation ----------------------------------------

    def evaluate_loads(self, eta_r, eta_dot_r, eta_ddot_r, x_a, V_B, omega_B,
                       Vdot_B, omdot_B, q, t, dJ=None) -> LoadBundle:
        mesh = self.mesh
        ac = self.aircraft
        u, psi, v, om, a, omdot = self.node_arrays(eta_r, eta_dot_r, eta_ddot_r)
        i1, i2 = self._el_nodes

        eta_full = self.eta_full(eta_r)
        node_triads = rotation_from_rotvec(psi) @ mesh.R0
        Rgp, x_mid = beam_mod.element_midpoint_frames(mesh, eta_full, node_triads)
        R_strip = Rgp @ STRIP_ALIGNMENT
        v_mid = 0.5 * (v[i1] + v[i2])
        a_mid = 0.5 * (a[i1] + a[i2])
        om_mid = 0.5 * (om[i1] + om[i2])
        omdot_mid = 0.5 * (omdot[i1] + omdot[i2])

        Rz = quat_to_matrix(q)
        V_air_body = Rz.T @ self.V_inf - V_B
        w_g = self.gust_velocity_at(t)
        w_gust_body = Rz.T @ np.array([0.0, 0.0, w_g])

        if self.aero_enabled:
            pl = pipeline_loads(
                self.strips, R_strip, x_mid, v_mid, a_mid, om_mid, omdot_mid,
                x_a.reshape(-1, 4), V_air_body, Vdot_B, omega_B, omdot_B,
                w_gust_body,
            )
        else:
            ns = self.strips.n
            z1 = np.zeros(ns)
            pl = {"F_body": np.zeros((ns, 3)), "M_body": np.zeros((ns, 3)),
                  "lag_rates": np.zeros((ns, 4)), "U": z1 + self.aircraft.U,
                  "alpha_eff": z1, "w34": z1, "w_gust_normal": z1,
                  "L_total": z1, "L_circ": z1}

        # Nodal generalized forces: half of each strip load to each node.
        f_nodes = np.zeros(mesh.n_dofs)
        fe = np.concatenate([0.5 * pl["F_body"], 0.5 * pl["M_body"],
                             0.5 * pl["F_body"], 0.5 * pl["M_body"]], axis=1)

        g_body = Rz.T @ np.array([0.0, 0.0, -GRAVITY])
        if self.gravity:
            fg = 0.5 * self._mu_ds[:, None] * g_body[None, :]
            zero3 = np.zeros_like(fg)
            fe = fe + np.concatenate([fg, zero3, fg, zero3], axis=1)

        if self.free_flying:
            # Frame inertial relief: -mu (a_B + omdot x r + om x (om x r) + 2 om x v).
            a_B = Vdot_B + cross3(omega_B, V_B)
            acc = (
                a_B[None, :]
                + cross3(omdot_B[None, :], x_mid)
                + cross3(omega_B[None, :], cross3(omega_B[None, :], x_mid))
                + 2.0 * cross3(omega_B[None, :], v_mid)
            )
            ff = -0.5 * self._mu_ds[:, None] * acc
            # Rotary relief on the moment slots (small, kept for momentum tidiness).
            fm = -0.5 * (np.einsum("eij,j->ei", self._Jbar_ds, omdot_B)
                         + cross3(omega_B, np.einsum("eij,j->ei", self._Jbar_ds, omega_B)))
            fe = fe + np.concatenate([ff, fm, ff, fm], axis=1)

        np.add.at(f_nodes, mesh.el_dofs, fe)
        f_struct = mesh.reduce(f_nodes)

        # Rigid resultants about the body origin (mid-span attachment point).
        F_rigid = pl["F_body"].sum(axis=0)
        M_rigid = (pl["M_body"] + cross3(x_mid, pl["F_body"])).sum(axis=0)
        tail_force = 0.0
        if self.free_flying:
            if self.gravity:
                F_rigid = F_rigid + self.m_rigid * g_body
            F_rigid = F_rigid + np.array([-self.thrust, 0.0, 0.0])
            # Idealized stabilizer: pure pitch couple about the CG.
            r_t = np.array([ac.tail.arm, 0.0, 0.0])
            V_t = V_air_body + w_gust_body - cross3(omega_B, r_t)
            q_loc = 0.5 * ac.rho * (V_t[0] ** 2 + V_t[2] ** 2)
            alpha_t = np.arctan2(V_t[2], V_t[0])
            tail_force = q_loc * ac.tail.volume * (alpha_t + self.tail_incidence)
            M_rigid = M_rigid + np.array([0.0, -ac.tail.arm * tail_force, 0.0])

        if dJ is None:
            dJ = self.delta_inertia(eta_r)
        J = self.J0 + dJ
        if self.free_flying:
            fV = F_rigid / self.m_rigid - cross3(omega_B, V_B)
            fom = np.linalg.solve(J, M_rigid - cross3(omega_B, J @ omega_B))
        else:
            fV = np.zeros(3)
            fom = np.zeros(3)
        q_dot = quat_rates(q, omega_B)
        p_dot = Rz @ V_B

        return LoadBundle(
            f_struct=f_struct,
            lag_rates=pl["lag_rates"],
            fV=fV,
            fom=fom,
            q_dot=q_dot,
            p_dot=p_dot,
            diagnostics={
                "alpha_eff": pl["alpha_eff"],
                "U": pl["U"],
                "L_total": pl["L_total"],
                "L_circ": pl["L_circ"],
                "F_rigid": F_rigid,
                "M_rigid": M_rigid,
                "tail_force": tail_force,
                "F_aero_body": pl["F_body"].sum(axis=0),
                "strip_F_body": pl["F_body"],
                "strip_M_body": pl["M_body"],
                "x_mid": x_mid,
                "w_gust": w_g,
            },
        )

    # Rate-vector layout mirrors the Newton unknowns (see _z_layout).
    def loads_vector(self, bundle: LoadBundle):
        return np.concatenate([
            bundle.f_struct,
            bundle.lag_rates.reshape(-1),
            bundle.fV, bundle.fom, bundle.q_dot, bundle.p_dot,
        ])


def equilibrium_lag_states(model: CoupledModel, eta_r, V_B, q):
    """Steady Wagner states for the current configuration (gust states zero)."""
    mesh = model.mesh
    zeros = np.zeros_like(eta_r)
    bundle = model.evaluate_loads(
        eta_r, zeros, zeros, np.zeros(4 * model.strips.n), V_B, np.zeros(3),
        np.zeros(3), np.zeros(3), q, t=-1e9,
    )
    # lag_rates = -eps U/b x + w34; at x = 0 the rate IS the forcing.
    c = model.strips.consts
    U = bundle.diagnostics["U"]
    b = model.strips.b
    w34 = bundle.lag_rates[:, 0]
    x = np.zeros((model.strips.n, 4))
    x[:, 0] = w34 * b / (c.eps1 * U)
    x[:, 1] = w34 * b / (c.eps2 * U)
    return x.reshape(-1)


# ---------------------------------------------------------------------------
# Integrated aerodynamic resultants (load-transfer contract)
# ---------------------------------------------------------------------------


def integrated_aero_loads(mesh: BeamMesh, eta_full, f_local_per_span,
                          m_local_per_span=None):
    """Total force/moment about the body origin from per-strip local loads.

    f_local_per_span/m_local_per_span: (n_el, 3) strip-frame loads per unit
    span.  Each strip's load is rotated through its deformed orientation and
    weighted by the strip width; moments pick up the r x F transport term.
    """
    f_local = np.asarray(f_local_per_span, dtype=float)
    m_local = (np.zeros_like(f_local) if m_local_per_span is None
               else np.asarray(m_local_per_span, dtype=float))
    Rgp, x_mid = beam_mod.element_midpoint_frames(mesh, eta_full)
    R_strip = Rgp @ STRIP_ALIGNMENT
    ds = mesh.l_ref[:, None]
    F_b = np.einsum("nij,nj->ni", R_strip, f_local * ds)
    M_b = np.einsum("nij,nj->ni", R_strip, m_local * ds)
    F = F_b.sum(axis=0)
    M = (M_b + cross3(x_mid, F_b)).sum(axis=0)
    return F, M


# ---------------------------------------------------------------------------
# Implicit time stepping
# ---------------------------------------------------------------------------


@dataclass
class Iterate:
    """Configuration-level unknowns of one time step."""

    eta: np.ndarray       # reduced structural configuration [u, psi] per free node
    x_a: np.ndarray
    V_B: np.ndarray
    omega_B: np.ndarray
    q: np.ndarray
    p_cg: np.ndarray

    def copy(self):
        return Iterate(self.eta.copy(), self.x_a.copy(), self.V_B.copy(),
                       self.omega_B.copy(), self.q.copy(), self.p_cg.copy())


@dataclass
class StepCache:
    """Converged state and rates at t_n needed by the implicit relations."""

    it: Iterate
    eta_dot: np.ndarray
    eta_ddot: np.ndarray
    lag_rates: np.ndarray
    fV: np.ndarray
    fom: np.ndarray
    q_dot: np.ndarray
    p_dot: np.ndarray
    R_nodes: np.ndarray   # full-mesh node triads at t_n
    dJ: np.ndarray = None


def _node_triads(model, eta_r):
    u, psi = model.mesh.split(model.eta_full(eta_r))
    return rotation_from_rotvec(psi) @ model.mesh.R0


def _rot_dof_mask(model):
    """Boolean mask over reduced DOFs marking rotational entries."""
    mask_full = np.zeros(model.mesh.n_dofs, dtype=bool)
    mask_full.reshape(-1, 6)[:, 3:] = True
    return mask_full[model.mesh.free_dofs]


class Stepper:
    """Newmark/trapezoidal implicit stepping of a CoupledModel."""

    def __init__(self, model: CoupledModel, settings: SolverSettings):
        self.model = model
        self.s = settings
        self._rot_mask = _rot_dof_mask(model)
        free_nodes = sorted({d // 6 for d in model.mesh.free_dofs})
        self._free_nodes = np.array(free_nodes, dtype=int)
        self._z_dim = model.layout.n_eta + 4 * model.strips.n + 13
        n_eta = model.layout.n_eta
        ns = model.strips.n
        self.sl_s = slice(0, n_eta)
        self.sl_a = slice(n_eta, n_eta + 4 * ns)
        o = n_eta + 4 * ns
        self.sl_V = slice(o, o + 3)
        self.sl_om = slice(o + 3, o + 6)
        self.sl_q = slice(o + 6, o + 10)
        self.sl_p = slice(o + 10, o + 13)

    # -- kinematic relations ----------------------------------------------------

    def increments(self, it: Iterate, cache: StepCache):
        """Configuration increment over the step in the tangent basis."""
        mesh = self.model.mesh
        u_p, _ = mesh.split(self.model.eta_full(it.eta))
        u_n, _ = mesh.split(self.model.eta_full(cache.it.eta))
        R_p = _node_triads(self.model, it.eta)
        A = np.einsum("nij,nkj->nik", R_p, cache.R_nodes)  # R_plus R_n^T
        dth = rotvec_small_rel(A)
        d_full = np.concatenate([u_p - u_n, dth], axis=1).reshape(-1)
        return mesh.reduce(d_full), dth

    def derived_rates(self, it: Iterate, cache: StepCache):
        s = self.s
        dt = s.dt
        d, dth = self.increments(it, cache)
        a = (d - dt * cache.eta_dot - dt * dt * (0.5 - s.beta) * cache.eta_ddot) / (
            s.beta * dt * dt)
        v = cache.eta_dot + dt * ((1.0 - s.gamma) * cache.eta_ddot + s.gamma * a)
        Vdot = 2.0 * (it.V_B - cache.it.V_B) / dt - cache.fV
        omdot = 2.0 * (it.omega_B - cache.it.omega_B) / dt - cache.fom
        return v, a, Vdot, omdot, dth

    def residual(self, it: Iterate, cache: StepCache, t_plus):
        """Fully implicit residual at t_{n+1}; returns (res, bundle, rates)."""
        m = self.model
        dt = self.s.dt
        v, a, Vdot, omdot, _ = self.derived_rates(it, cache)
        bundle = m.evaluate_loads(it.eta, v, a, it.x_a, it.V_B, it.omega_B,
                                  Vdot, omdot, it.q, t_plus, dJ=cache.dJ)
        M_red = m.mesh.reduce(m.mesh.mass_full)
        f_inertia = M_red @ a
        f_elastic = internal_force(m.mesh, m.eta_full(it.eta), m.sigma)
        res = np.empty(self._z_dim)
        res[self.sl_s] = f_inertia + f_elastic - bundle.f_struct
        res[self.sl_a] = ((it.x_a - cache.it.x_a) / dt
                          - 0.5 * (bundle.lag_rates.reshape(-1)
                                   + cache.lag_rates.reshape(-1)))
        if m.free_flying:
            res[self.sl_V] = (it.V_B - cache.it.V_B) / dt - 0.5 * (bundle.fV + cache.fV)
            res[self.sl_om] = (it.omega_B - cache.it.omega_B) / dt - 0.5 * (
                bundle.fom + cache.fom)
            res[self.sl_q] = (it.q - cache.it.q) / dt - 0.5 * (bundle.q_dot + cache.q_dot)
            res[self.sl_p] = (it.p_cg - cache.it.p_cg) / dt - 0.5 * (
                bundle.p_dot + cache.p_dot)
        else:
            res[self.sl_V] = it.V_B - cache.it.V_B
            res[self.sl_om] = it.omega_B - cache.it.omega_B
            res[self.sl_q] = it.q - cache.it.q
            res[self.sl_p] = it.p_cg - cache.it.p_cg
        # Force scale for the relative convergence test: magnitude of the
        # balanced force terms (forcing, inertia, elastic), so free vibration
        # with zero external forcing still has a meaningful scale.
        scale = (np.linalg.norm(self.model.loads_vector(bundle))
                 + np.linalg.norm(f_inertia) + np.linalg.norm(f_elastic))
        return res, bundle, (v, a, Vdot, omdot), scale

    # -- iterate updates ----------------------------------------------------------

    def apply_dz(self, it: Iterate, dz):
        new = it.copy()
        mesh = self.model.mesh
        d_eta_full = mesh.expand(dz[self.sl_s])
        new.eta = mesh.reduce(mesh.apply_increment(self.model.eta_full(it.eta),
                                                   d_eta_full))
        new.x_a = it.x_a + dz[self.sl_a]
        new.V_B = it.V_B + dz[self.sl_V]
        new.omega_B = it.omega_B + dz[self.sl_om]
        new.q = it.q + dz[self.sl_q]
        new.p_cg = it.p_cg + dz[self.sl_p]
        return new

    # -- load-coupling Jacobian by colored central differences --------------------

    def _rich_eval(self, it, cache, t_plus):
        v, a, Vdot, omdot, _ = self.derived_rates(it, cache)
        b = self.model.evaluate_loads(it.eta, v, a, it.x_a, it.V_B, it.omega_B,
                                      Vdot, omdot, it.q, t_plus, dJ=cache.dJ)
        y = self.model.loads_vector(b)
        d = b.diagnostics
        return y, d["strip_F_body"], d["strip_M_body"], d["x_mid"]

    def loads_jacobian(self, it: Iterate, cache: StepCache, t_plus):
        """J = d loads_vector / dz by graph-colored finite differences.

        Strip loads are local (two nodes + own lag states + rigid states), so
        structural columns use a distance-3 node coloring and lag columns a
        distance-2 strip coloring; the dense rigid-resultant rows are rebuilt
        from the per-strip force deltas.  Central differences by default
        (fd_central), forward otherwise (h = 1e-6).
        """
        m = self.model
        mesh = m.mesh
        nz = self._z_dim
        n_eta = m.layout.n_eta
        ns = m.strips.n
        J = np.zeros((nz, nz))
        h = 1e-6
        central = self.s.fd_central
        free_nodes = self._free_nodes
        node_to_red = {}
        for r, dof in enumerate(mesh.free_dofs):
            node_to_red.setdefault(dof // 6, []).append(r)

        def perturb(cols, sign):
            dz = np.zeros(nz)
            dz[cols] = sign * h
            return self.apply_dz(it, dz)

        Jrot = self.model.J0 + cache.dJ
        # Values at the linearization point (base for forward differences and
        # the r x F transport terms).
        y0, F0, M0, x0 = self._rich_eval(it, cache, t_plus)

        def diff(cols):
            yp, Fp, Mp, xp = self._rich_eval(perturb(cols, +1), cache, t_plus)
            if central:
                ym, Fm, Mm, xm = self._rich_eval(perturb(cols, -1), cache, t_plus)
                d = 2.0 * h
            else:
                ym, Fm, Mm, xm = y0, F0, M0, x0
                d = h
            return (yp - ym) / d, (Fp - Fm) / d, (Mp - Mm) / d, (xp - xm) / d

        struct_coupling = m.aero_enabled or m.free_flying
        # structural columns, distance-3 coloring along the node chain
        for color in range(3 if struct_coupling else 0):
            nodes_c = [k for k in free_nodes if k % 3 == color]
            if not nodes_c:
                continue
            for comp in range(6):
                cols = np.array(
                    [np.searchsorted(mesh.free_dofs, 6 * k + comp) for k in nodes_c],
                    dtype=int)
                dy, dF, dM, dx = diff(cols)
                for k, col in zip(nodes_c, cols):
                    rows = []
                    strips_k = []
                    for nb in (k - 1, k, k + 1):
                        rows.extend(node_to_red.get(nb, []))
                    for e in (k - 1, k):
                        if 0 <= e < ns:
                            strips_k.append(e)
                            rows.extend(range(n_eta + 4 * e, n_eta + 4 * e + 4))
                    rows = np.array(rows, dtype=int)
                    J[rows, col] = dy[rows]
                    if m.free_flying:
                        dFr = np.zeros(3)
                        dMr = np.zeros(3)
                        for e in strips_k:
                            dFr += dF[e]
                            dMr += dM[e] + cross3(dx[e], F0[e]) + cross3(x0[e], dF[e])
                        J[self.sl_V, col] = dFr / m.m_rigid
                        J[self.sl_om, col] = np.linalg.solve(Jrot, dMr)

        # lag columns, distance-2 coloring over strips
        for color in range(2 if m.aero_enabled else 0):
            strips_c = [e for e in range(ns) if e % 2 == color]
            if not strips_c:
                continue
            for comp in range(4):
                cols = np.array([n_eta + 4 * e + comp for e in strips_c], dtype=int)
                dy, dF, dM, _ = diff(cols)
                for e, col in zip(strips_c, cols):
                    rows = []
                    for nb in (mesh.elements[e, 0], mesh.elements[e, 1]):
                        rows.extend(node_to_red.get(nb, []))
                    rows.extend(range(n_eta + 4 * e, n_eta + 4 * e + 4))
                    rows = np.array(rows, dtype=int)
                    J[rows, col] = dy[rows]
                    if m.free_flying:
                        J[self.sl_V, col] = dF[e] / m.m_rigid
                        J[self.sl_om, col] = np.linalg.solve(
                            Jrot, dM[e] + cross3(x0[e], dF[e]))

        # rigid columns, dense single-column differences
        rigid_cols = (list(range(self.sl_V.start, self.sl_q.stop))
                      if (m.free_flying or m.aero_enabled or m.gravity) else [])
        for col in rigid_cols:
            dy, _, _, _ = diff(np.array([col]))
            J[:, col] = dy
        return J

    def tangent(self, it: Iterate, cache: StepCache, t_plus):
        m = self.model
        dt = self.s.dt
        n_eta = m.layout.n_eta
        K = np.zeros((self._z_dim, self._z_dim))

        _, dth = self.increments(it, cache)
        # d(a)/d(increment): translations 1/(beta dt^2); rotations pick up the
        # inverse left Jacobian of the step increment.
        D = np.zeros((m.mesh.n_dofs, m.mesh.n_dofs))
        fac = 1.0 / (self.s.beta * dt * dt)
        for k in range(m.mesh.n_nodes):
            D[6 * k : 6 * k + 3, 6 * k : 6 * k + 3] = fac * np.eye(3)
            Tl_inv = jac_right_inv(dth[k]).T  # inverse left Jacobian
            D[6 * k + 3 : 6 * k + 6, 6 * k + 3 : 6 * k + 6] = fac * Tl_inv
        D_red = m.mesh.reduce(D)
        M_red = m.mesh.reduce(m.mesh.mass_full)
        K_t = tangent_stiffness(m.mesh, m.eta_full(it.eta), m.sigma)
        K[self.sl_s, self.sl_s] = M_red @ D_red + K_t

        J = self.loads_jacobian(it, cache, t_plus)
        K[self.sl_s, :] -= J[self.sl_s, :]
        idx_a = np.arange(self.sl_a.start, self.sl_a.stop)
        K[idx_a, idx_a] += 1.0 / dt
        K[self.sl_a, :] -= 0.5 * J[self.sl_a, :]
        if m.free_flying:
            for sl in (self.sl_V, self.sl_om, self.sl_q, self.sl_p):
                idx = np.arange(sl.start, sl.stop)
                K[idx, idx] += 1.0 / dt
                K[sl, :] -= 0.5 * J[sl, :]
        else:
            for sl in (self.sl_V, self.sl_om, self.sl_q, self.sl_p):
                idx = np.arange(sl.start, sl.stop)
                K[sl, :] = 0.0
                K[idx, idx] = 1.0
        return K

    # -- single step ---------------------------------------------------------------

    def step(self, cache: StepCache, t_plus) -> tuple[Iterate, StepCache]:
        m = self.model
        s = self.s
        dt = s.dt
        # Explicit predictor (Newmark displacement predictor + Euler rates);
        # also freezes the inertia correction for this step.
        d_pred = dt * cache.eta_dot + dt * dt * (0.5 - s.beta) * cache.eta_ddot
        eta_pred = m.mesh.reduce(
            m.mesh.apply_increment(m.eta_full(cache.it.eta), m.mesh.expand(d_pred)))
        cache.dJ = m.delta_inertia(eta_pred) if m.free_flying else np.zeros((3, 3))
        it = Iterate(
            eta=eta_pred,
            x_a=cache.it.x_a + dt * cache.lag_rates.reshape(-1),
            V_B=cache.it.V_B + dt * cache.fV,
            omega_B=cache.it.omega_B + dt * cache.fom,
            q=cache.it.q + dt * cache.q_dot,
            p_cg=cache.it.p_cg + dt * cache.p_dot,
        ) if m.free_flying or True else cache.it.copy()
        if not m.free_flying:
            it.V_B = cache.it.V_B.copy()
            it.omega_B = cache.it.omega_B.copy()
            it.q = cache.it.q.copy()
            it.p_cg = cache.it.p_cg.copy()

        history = []
        lu = None
        z_scale = 1.0 + max(np.abs(it.eta).max(initial=0.0),
                            np.abs(it.V_B).max(initial=0.0))
        for i in range(s.max_newton_iter):
            res, bundle, rates, scale = self.residual(it, cache, t_plus)
            rel = np.linalg.norm(res) / max(scale, 1e-12)
            history.append(rel)
            if rel < s.newton_rel_tol or np.linalg.norm(res) < 1e-12:
                return self._accept(it, bundle, rates, cache)
            if lu is None or not s.modified_newton or (i % 3 == 0):
                try:
                    lu = scipy.linalg.lu_factor(self.tangent(it, cache, t_plus))
                except (scipy.linalg.LinAlgError, ValueError) as exc:
                    raise NewtonFailure(f"singular Newton tangent: {exc}", history)
            dz = scipy.linalg.lu_solve(lu, -res)
            if np.abs(dz).max() < 1e-13 * z_scale and rel < 1e-4:
                # Roundoff floor of the residual (very stiff sections amplify
                # machine noise); the increment is no longer representable.
                return self._accept(it, bundle, rates, cache)
            it = self.apply_dz(it, dz)
        raise NewtonFailure(
            f"no convergence in {s.max_newton_iter} Newton iterations "
            f"(last relative residual {history[-1]:.3e})", history)

    def _accept(self, it: Iterate, bundle, rates, cache) -> tuple[Iterate, StepCache]:
        it.q = quat_normalize(it.q)
        v, a, Vdot, omdot = rates
        new_cache = StepCache(
            it=it.copy(), eta_dot=v, eta_ddot=a,
            lag_rates=bundle.lag_rates.copy(), fV=bundle.fV.copy(),
            fom=bundle.fom.copy(), q_dot=bundle.q_dot.copy(),
            p_dot=bundle.p_dot.copy(),
            R_nodes=_node_triads(self.model, it.eta), dJ=cache.dJ,
        )
        return it, new_cache


# ---------------------------------------------------------------------------
# Simulation driver
# ---------------------------------------------------------------------------


@dataclass
class TimeHistory:
    """Time-marched channels plus the full packed state at every step."""

    t: np.ndarray
    tip_defl: np.ndarray
    root_Mx: np.ndarray
    alpha_eff_root: np.ndarray
    pitch: np.ndarray
    u: np.ndarray
    w: np.ndarray
    q_rate: np.ndarray
    altitude: np.ndarray
    states: np.ndarray
    layout: StateLayout

    def channels(self):
        return np.column_stack([
            self.t, self.tip_defl, self.root_Mx, self.alpha_eff_root,
            self.pitch, self.u, self.w, self.q_rate, self.altitude,
        ])


def pitch_angle(q):
    """Nose-up pitch angle: elevation of the upwind body axis."""
    R = quat_to_matrix(q)
    return float(np.arcsin(np.clip(-R[2, 0], -1.0, 1.0)))


def consistent_initial_cache(model: CoupledModel, it: Iterate, eta_dot=None,
                             t0=0.0, fixed_point_iters: int = 8) -> StepCache:
    """Rates at t0 consistent with the dynamic equations.

    The apparent-mass terms make the structural acceleration implicit; a short
    fixed-point iteration converges quickly (added mass is a small fraction of
    the structural mass).
    """
    mesh = model.mesh
    n_eta = model.layout.n_eta
    M_red = mesh.reduce(mesh.mass_full)
    a = np.zeros(n_eta)
    v = np.zeros(n_eta) if eta_dot is None else np.asarray(eta_dot, dtype=float)
    Vdot = np.zeros(3)
    omdot = np.zeros(3)
    bundle = None
    dJ = model.delta_inertia(it.eta) if model.free_flying else np.zeros((3, 3))
    for _ in range(fixed_point_iters):
        bundle = model.evaluate_loads(it.eta, v, a, it.x_a, it.V_B, it.omega_B,
                                      Vdot, omdot, it.q, t0, dJ=dJ)
        f = bundle.f_struct - internal_force(mesh, model.eta_full(it.eta), model.sigma)
        a = np.linalg.solve(M_red, f)
        Vdot = bundle.fV
        omdot = bundle.fom
    return StepCache(
        it=it.copy(), eta_dot=v.copy(), eta_ddot=a,
        lag_rates=bundle.lag_rates.copy(), fV=bundle.fV.copy(),
        fom=bundle.fom.copy(), q_dot=bundle.q_dot.copy(), p_dot=bundle.p_dot.copy(),
        R_nodes=_node_triads(model, it.eta), dJ=dJ,
    )


def iterate_from_packed(model: CoupledModel, x):
    parts = unpack_state(model.layout, x)
    it = Iterate(eta=parts["eta"], x_a=parts["x_a"], V_B=parts["V_B"],
                 omega_B=parts["omega_B"], q=parts["q"], p_cg=parts["p_cg"])
    return it, parts["eta_dot"]


def packed_from_iterate(model: CoupledModel, it: Iterate, eta_dot):
    return pack_state(model.layout, eta=it.eta, eta_dot=eta_dot, x_a=it.x_a,
                      V_B=it.V_B, omega_B=it.omega_B, q=it.q, p_cg=it.p_cg)


def newmark_newton_step(model: CoupledModel, cache: StepCache,
                        settings: SolverSettings, t_n, max_halvings: int = 4):
    """Advance one nominal step; on Newton failure halve dt (up to 4 times).

    Returns the cache at t_n + settings.dt (sub-steps are internal).
    """

    from dataclasses import replace as _replace

    def advance(cache, t_start, dt, depth):
        stepper = Stepper(model, _replace(settings, dt=dt))
        try:
            _, new_cache = stepper.step(cache, t_start + dt)
            return new_cache
        except NewtonFailure as exc:
            if depth >= max_halvings:
                raise NewtonFailure(
                    f"time step failed at t = {t_start:.4f} s after "
                    f"{max_halvings} halvings: {exc}", exc.history) from exc
            half = 0.5 * dt
            mid = advance(cache, t_start, half, depth + 1)
            return advance(mid, t_start + half, half, depth + 1)

    return advance(cache, t_n, settings.dt, 0)


def simulate(model: CoupledModel, x0, settings: SolverSettings, horizon: float,
             root_element: int = None) -> TimeHistory:
    """Time-march the coupled system from the packed initial state x0."""
    mesh = model.mesh
    layout = model.layout
    if root_element is None:
        # Element immediately outboard (port side) of the clamped node.
        root_node = model.mesh.clamped_nodes[0]
        root_element = min(root_node, mesh.n_elements - 1)
    tip_node = mesh.n_nodes - 1

    it, eta_dot0 = iterate_from_packed(model, x0)
    cache = consistent_initial_cache(model, it, eta_dot0, 0.0)

    n_steps = int(round(horizon / settings.dt))
    rows = {k: np.zeros(n_steps + 1) for k in
            ("t", "tip", "Mx", "aeff", "pitch", "u", "w", "qr", "alt")}
    states = np.zeros((n_steps + 1, layout.total))

    def record(i, t, cache):
        it = cache.it
        eta_full = model.eta_full(it.eta)
        rows["t"][i] = t
        rows["tip"][i] = eta_full[6 * tip_node + 2]
        _, Msec = beam_mod.element_section_loads(mesh, eta_full, model.sigma)
        rows["Mx"][i] = -Msec[root_element, 1]  # flap moment, + = tips-up bending
        bundle = model.evaluate_loads(
            it.eta, cache.eta_dot, cache.eta_ddot, it.x_a, it.V_B, it.omega_B,
            cache.fV, cache.fom, it.q, t, dJ=cache.dJ)
        rows["aeff"][i] = bundle.diagnostics["alpha_eff"][root_element]
        rows["pitch"][i] = pitch_angle(it.q)
        rows["u"][i] = it.V_B[0]
        rows["w"][i] = it.V_B[2]
        rows["qr"][i] = it.omega_B[1]
        rows["alt"][i] = it.p_cg[2]
        states[i] = packed_from_iterate(model, it, cache.eta_dot)

    record(0, 0.0, cache)
    t = 0.0
    for i in range(1, n_steps + 1):
        cache = newmark_newton_step(model, cache, settings, t)
        t += settings.dt
        record(i, t, cache)

    return TimeHistory(
        t=rows["t"], tip_defl=rows["tip"], root_Mx=rows["Mx"],
        alpha_eff_root=rows["aeff"], pitch=rows["pitch"], u=rows["u"],
        w=rows["w"], q_rate=rows["qr"], altitude=rows["alt"],
        states=states, layout=layout,
    )
