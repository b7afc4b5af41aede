"""Quaternion-based six-DOF rigid-body dynamics.

The attitude matrix returned by ``quat_to_matrix`` follows the paper's
component layout; with the unit quaternion q it maps body components to
inertial components, v_inertial = R(q) v_body (its transpose brings the
inertial freestream into body axes, as used by the strip aerodynamics).
Gravity acts along inertial -z (z up), magnitude ``GRAVITY``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rotations import cross3

GRAVITY = 9.81


@dataclass
class RigidState:
    V_B: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega_B: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    p_cg: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.V_B = np.asarray(self.V_B, dtype=float)
        self.omega_B = np.asarray(self.omega_B, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        self.p_cg = np.asarray(self.p_cg, dtype=float)


@dataclass
class MassProperties:
    """Total mass, undeformed inertia and elastic inertia correction."""

    m: float
    J0: np.ndarray
    dJ: np.ndarray = None

    def __post_init__(self):
        self.J0 = np.asarray(self.J0, dtype=float)
        if self.dJ is None:
            self.dJ = np.zeros((3, 3))
        self.dJ = np.asarray(self.dJ, dtype=float)
        if self.m <= 0.0:
            raise ValueError("total mass must be positive")

    @property
    def J(self):
        return self.J0 + self.dJ


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion")
    return q / n


def quat_rates(q, omega_B):
    """Kinematics q_dot = 1/2 Omega(omega) q with the standard Omega matrix."""
    p, r, y = omega_B  # (p, q, r) body rates; local names avoid shadowing q
    Om = np.array(
        [
            [0.0, -p, -r, -y],
            [p, 0.0, y, -r],
            [r, -y, 0.0, p],
            [y, r, -p, 0.0],
        ]
    )
    return 0.5 * Om @ np.asarray(q, dtype=float)


def quat_to_matrix(q):
    """Attitude matrix from the unit quaternion (renormalized first)."""
    q0, q1, q2, q3 = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (q2 * q2 + q3 * q3), 2 * (q1 * q2 - q0 * q3), 2 * (q1 * q3 + q0 * q2)],
            [2 * (q1 * q2 + q0 * q3), 1 - 2 * (q1 * q1 + q3 * q3), 2 * (q2 * q3 - q0 * q1)],
            [2 * (q1 * q3 - q0 * q2), 2 * (q2 * q3 + q0 * q1), 1 - 2 * (q1 * q1 + q2 * q2)],
        ]
    )


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2.0)], np.sin(angle / 2.0) * axis])


def gravity_body(q, g=GRAVITY):
    """Gravity acceleration resolved in body axes (inertial z up)."""
    return quat_to_matrix(q).T @ np.array([0.0, 0.0, -g])


def translational_rates(state: RigidState, mass: MassProperties, F_aero,
                        F_grav, F_thrust):
    """Newton equation in body axes: V_dot = sum(F)/m - omega x V."""
    F = np.asarray(F_aero, dtype=float) + np.asarray(F_grav, dtype=float) + np.asarray(
        F_thrust, dtype=float
    )
    return F / mass.m - cross3(state.omega_B, state.V_B)


def rotational_rates(state: RigidState, mass: MassProperties, M_aero, M_thrust):
    """Euler equation: omega_dot = J^-1 (sum(M) - omega x J omega)."""
    J = mass.J
    M = np.asarray(M_aero, dtype=float) + np.asarray(M_thrust, dtype=float)
    rhs = M - cross3(state.omega_B, J @ state.omega_B)
    try:
        return np.linalg.solve(J, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"singular inertia tensor: {exc}") from exc


def cg_rates(state: RigidState):
    """Inertial CG velocity: p_dot = R(q) V_B."""
    return quat_to_matrix(state.q) @ state.V_B


def inertia_correction(mu_ds, r0, u):
    """Elastic inertia correction from the displaced mass line.

    Exact identity dJ = J(r0 + u) - J(r0) for a mass line with weights
    mu_ds (element-midpoint quadrature):

        dJ = sum mu [ |u|^2 I - u u^T ]
           + 2 sum mu [ (r0 . u) I - sym(r0 u^T) ]
    """
    mu_ds = np.asarray(mu_ds, dtype=float)
    r0 = np.asarray(r0, dtype=float)
    u = np.asarray(u, dtype=float)
    uu = np.einsum("n,ni,nj->ij", mu_ds, u, u)
    u2 = np.einsum("n,ni,ni->", mu_ds, u, u)
    ru = np.einsum("n,ni,ni->", mu_ds, r0, u)
    r_u = np.einsum("n,ni,nj->ij", mu_ds, r0, u)
    sym = 0.5 * (r_u + r_u.T)
    return (u2 * np.eye(3) - uu) + 2.0 * (ru * np.eye(3) - sym)


def mass_line_inertia(mu_ds, points, rotary=None):
    """Inertia tensor of a lumped mass line about the origin."""
    mu_ds = np.asarray(mu_ds, dtype=float)
    points = np.asarray(points, dtype=float)
    r2 = np.einsum("n,ni,ni->", mu_ds, points, points)
    rr = np.einsum("n,ni,nj->ij", mu_ds, points, points)
    J = r2 * np.eye(3) - rr
    if rotary is not None:
        J = J + np.sum(np.asarray(rotary, dtype=float), axis=0)
    return J


def rk4_rigid_step(state: RigidState, mass: MassProperties, forces_fn, dt):
    """One RK4 step of the free rigid body; forces_fn(state) -> (F, M) body frame.

    Used for module-level conservation tests and the rigid-only reference
    simulation; the coupled solver integrates the same equations implicitly.
    """

    def rates(s):
        F, M = forces_fn(s)
        return (
            translational_rates(s, mass, F, np.zeros(3), np.zeros(3)),
            rotational_rates(s, mass, M, np.zeros(3)),
            quat_rates(s.q, s.omega_B),
            cg_rates(s),
        )

    def blend(s, k, h):
        return RigidState(
            V_B=s.V_B + h * k[0],
            omega_B=s.omega_B + h * k[1],
            q=s.q + h * k[2],
            p_cg=s.p_cg + h * k[3],
        )

    k1 = rates(state)
    k2 = rates(blend(state, k1, dt / 2))
    k3 = rates(blend(state, k2, dt / 2))
    k4 = rates(blend(state, k3, dt))
    new = RigidState(
        V_B=state.V_B + dt / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
        omega_B=state.omega_B + dt / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
        q=state.q + dt / 6 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]),
        p_cg=state.p_cg + dt / 6 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3]),
    )
    new.q = quat_normalize(new.q)
    return new
