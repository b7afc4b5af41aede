"""Two-dimensional unsteady strip aerodynamics.

Classical thin-aerofoil loads: non-circulatory (apparent mass) terms plus
circulatory lift realized through two Wagner lag states per strip, with two
more Kuessner states for gust penetration.  Per-strip scalar operations work
in the classical typical-section variables (plunge h positive down, pitch
alpha nose-up); the batched pipeline used by the coupled solver resolves the
same physics from 3-D strip kinematics.

Strip frame axes: 1 chordwise (leading edge to trailing edge, i.e. along the
undisturbed relative wind), 2 spanwise, 3 normal ("up"); a positive normal
component of the relative air velocity is an upwash and produces positive
lift.  Circulatory and gust lift act perpendicular to the local relative wind,
the apparent-mass lift along the strip normal, drag along the relative wind.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rotations import cross3

TWO_PI = 2.0 * np.pi


class DegenerateFlowError(ValueError):
    """Chordwise relative velocity vanished; angle of attack undefined."""


@dataclass(frozen=True)
class AeroConstants:
    """Wagner (R.T. Jones) and Kuessner approximation coefficients, drag polar."""

    psi1: float = 0.165
    psi2: float = 0.335
    eps1: float = 0.0455
    eps2: float = 0.3
    phi1: float = 0.5792
    phi2: float = 0.4208
    beta1: float = 0.1393
    beta2: float = 1.802
    CD0: float = 0.01
    e0: float = 0.95
    cl_alpha: float = TWO_PI

    def __post_init__(self):
        if abs(self.psi1 + self.psi2 - 0.5) > 1e-12:
            raise ValueError("Wagner coefficients must satisfy psi1 + psi2 = 1/2")
        if abs(self.phi1 + self.phi2 - 1.0) > 1e-12:
            raise ValueError("Kuessner coefficients must satisfy phi1 + phi2 = 1")


@dataclass
class StripGeometry:
    """Spanwise strip: semi-chord b, width ds, elastic-axis offset a (semi-chords
    aft of mid-chord), orientation R_c with columns (chordwise, spanwise, normal)."""

    s: float
    b: float
    ds: float
    a: float = 0.0
    R_c: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.R_c = np.asarray(self.R_c, dtype=float)
        if self.ds <= 0.0 or self.b <= 0.0:
            raise ValueError("strip width and semi-chord must be positive")
        if not np.allclose(self.R_c @ self.R_c.T, np.eye(3), atol=1e-9):
            raise ValueError("strip rotation R_c must be orthonormal")

    @property
    def c(self):
        return 2.0 * self.b


@dataclass
class AeroStripState:
    """Augmented lag states: Wagner pair (x1, x2), Kuessner pair (xg1, xg2)."""

    x1: float = 0.0
    x2: float = 0.0
    xg1: float = 0.0
    xg2: float = 0.0
    w34: float = 0.0


@dataclass
class GustSpec:
    """1-minus-cosine discrete gust."""

    w_g0: float = 0.0
    H_g: float = 25.0
    t0: float = 0.0

    def __post_init__(self):
        if self.H_g <= 0.0:
            raise ValueError("gust gradient distance H_g must be positive")
        if self.w_g0 < 0.0:
            raise ValueError("peak gust velocity w_g0 must be nonnegative")


# ---------------------------------------------------------------------------
# Indicial functions and their frequency-domain counterpart
# ---------------------------------------------------------------------------


def wagner_phi(tau, consts: AeroConstants = AeroConstants()):
    """Wagner function Phi(tau) = 1 - psi1 e^(-eps1 tau) - psi2 e^(-eps2 tau)."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0.0):
        raise ValueError("nondimensional time tau must be nonnegative")
    out = 1.0 - consts.psi1 * np.exp(-consts.eps1 * tau) - consts.psi2 * np.exp(
        -consts.eps2 * tau
    )
    return out.item() if out.ndim == 0 else out


def kussner_psi(tau, consts: AeroConstants = AeroConstants()):
    """Kuessner function Psi(tau), Psi(0) = 0."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0.0):
        raise ValueError("nondimensional time tau must be nonnegative")
    out = 1.0 - consts.phi1 * np.exp(-consts.beta1 * tau) - consts.phi2 * np.exp(
        -consts.beta2 * tau
    )
    return out.item() if out.ndim == 0 else out


def theodorsen_jones(k, consts: AeroConstants = AeroConstants()):
    """Rational (Jones) approximation of the Theodorsen function.

    C(k) = 1 - psi1 ik/(ik + eps1) - psi2 ik/(ik + eps2); used for
    frequency-domain cross-checks of the lag-state realization.
    """
    k = np.asarray(k, dtype=float)
    ik = 1j * k
    out = 1.0 - consts.psi1 * ik / (ik + consts.eps1) - consts.psi2 * ik / (
        ik + consts.eps2
    )
    return complex(out) if out.ndim == 0 else out


def gust_velocity(t, spec: GustSpec, U: float):
    """1-minus-cosine gust velocity at time t (uniform across the span)."""
    if U <= 0.0:
        raise ValueError("freestream speed must be positive")
    t = np.asarray(t, dtype=float)
    duration = spec.H_g / U
    xi = (t - spec.t0) / duration
    inside = (xi >= 0.0) & (xi <= 1.0)
    w = np.where(inside, 0.5 * spec.w_g0 * (1.0 - np.cos(TWO_PI * np.clip(xi, 0, 1))), 0.0)
    return w.item() if w.ndim == 0 else w


# ---------------------------------------------------------------------------
# Strip kinematics
# ---------------------------------------------------------------------------


def effective_velocity(strip: StripGeometry, V_inf, R_zeta, v_body, u_dot):
    """Relative air velocity resolved in the strip frame.

    V_eff = R_c^T (R_zeta^T V_inf - v_body - u_dot): inertial freestream
    brought into the body frame, minus rigid-body and elastic velocities of
    the strip point (both given in the body frame).  Components are ordered
    (chordwise, spanwise, normal).
    """
    V_inf = np.asarray(V_inf, dtype=float)
    R_zeta = np.asarray(R_zeta, dtype=float)
    v_rel = R_zeta.T @ V_inf - np.asarray(v_body, dtype=float) - np.asarray(u_dot, dtype=float)
    return strip.R_c.T @ v_rel


def effective_aoa(V_eff):
    """alpha_eff = atan2(normal, chordwise) of the strip-frame velocity."""
    V_eff = np.asarray(V_eff, dtype=float)
    if abs(V_eff[0]) < 1e-12:
        raise DegenerateFlowError("vanishing chordwise velocity component")
    return float(np.arctan2(V_eff[2], V_eff[0]))


def aero_state_rates(state: AeroStripState, w34: float, w_gust: float, U: float,
                     b: float, consts: AeroConstants = AeroConstants()):
    """Rates of the four augmented states (Eq.-level contract, scalar strip)."""
    if U <= 0.0 or b <= 0.0:
        raise ValueError("U and b must be positive")
    return (
        -consts.eps1 * U / b * state.x1 + w34,
        -consts.eps2 * U / b * state.x2 + w34,
        -consts.beta1 * U / b * state.xg1 + w_gust,
        -consts.beta2 * U / b * state.xg2 + w_gust,
    )


# ---------------------------------------------------------------------------
# Shared load kernels (scalar or batched arrays)
# ---------------------------------------------------------------------------


def circulatory_lift(w34, x1, x2, U, b, rho, consts):
    """Augmented-state circulatory lift per unit span."""
    return consts.cl_alpha * rho * U * b * (
        (1.0 - consts.psi1 - consts.psi2) * w34
        + consts.eps1 * consts.psi1 * U / b * x1
        + consts.eps2 * consts.psi2 * U / b * x2
    )


def gust_lift(w_gust, xg1, xg2, U, b, rho, consts):
    """Kuessner gust lift: same augmented pattern with (phi_i, beta_i)."""
    return consts.cl_alpha * rho * U * b * (
        (1.0 - consts.phi1 - consts.phi2) * w_gust
        + consts.beta1 * consts.phi1 * U / b * xg1
        + consts.beta2 * consts.phi2 * U / b * xg2
    )


def noncirculatory_loads(h_ddot, alpha_dot, alpha_ddot, U, b, a, rho):
    """Apparent-mass lift and elastic-axis moment per unit span (h down +)."""
    L_nc = np.pi * rho * b * b * (h_ddot + U * alpha_dot - b * a * alpha_ddot)
    M_nc = np.pi * rho * b * b * (
        -b * a * h_ddot - U * b * (0.5 - a) * alpha_dot
        - b * b * (0.125 + a * a) * alpha_ddot
    )
    return L_nc, M_nc


def drag_polar(L_total, U, c, rho, AR, consts):
    """Parabolic polar D = q c (CD0 + CL^2 / (pi e0 AR)) with CL from L."""
    q = 0.5 * rho * U * U
    if np.ndim(q) == 0 and q <= 0.0:
        return 0.0 * np.asarray(L_total)
    CL = L_total / np.where(np.asarray(q) > 0.0, q, 1.0) / c
    return q * c * (consts.CD0 + CL * CL / (np.pi * consts.e0 * AR))


def strip_loads(strip: StripGeometry, kinematics: dict, state: AeroStripState,
                consts: AeroConstants, rho: float, AR: float = 32.0,
                w_gust: float = 0.0):
    """Classical typical-section loads per unit span: (L, M_ea, D).

    kinematics keys: h_dot, h_ddot (plunge, positive down), alpha, alpha_dot,
    alpha_ddot (pitch, positive nose-up), U.  The circulatory part is realized
    through the lag states carried in ``state``; pass equilibrium states for
    steady results.
    """
    U = kinematics["U"]
    if U <= 0.0:
        raise ValueError("U must be positive")
    b, a = strip.b, strip.a
    w34 = (
        kinematics.get("h_dot", 0.0)
        + U * kinematics.get("alpha", 0.0)
        + b * (0.5 - a) * kinematics.get("alpha_dot", 0.0)
    )
    L_c = circulatory_lift(w34, state.x1, state.x2, U, b, rho, consts)
    L_g = gust_lift(w_gust, state.xg1, state.xg2, U, b, rho, consts)
    L_nc, M_nc = noncirculatory_loads(
        kinematics.get("h_ddot", 0.0),
        kinematics.get("alpha_dot", 0.0),
        kinematics.get("alpha_ddot", 0.0),
        U, b, a, rho,
    )
    L = L_nc + L_c + L_g
    M_ea = M_nc + b * (a + 0.5) * (L_c + L_g)
    D = drag_polar(L, U, strip.c, rho, AR, consts)
    return L, M_ea, D


def wagner_equilibrium_states(w34, U, b, consts: AeroConstants = AeroConstants()):
    """Steady lag states for constant downwash: x_i = w34 b / (eps_i U)."""
    return w34 * b / (consts.eps1 * U), w34 * b / (consts.eps2 * U)


def kussner_equilibrium_states(w_gust, U, b, consts: AeroConstants = AeroConstants()):
    return w_gust * b / (consts.beta1 * U), w_gust * b / (consts.beta2 * U)


# ---------------------------------------------------------------------------
# Batched pipeline over all strips (used by the coupled solver)
# ---------------------------------------------------------------------------


@dataclass
class StripSet:
    """Arrays describing all strips of a wing (one strip per beam element)."""

    s: np.ndarray          # spanwise stations of strip centres
    b: np.ndarray          # semi-chords
    ds: np.ndarray         # strip widths
    a: np.ndarray          # elastic-axis offsets
    AR: float
    consts: AeroConstants
    rho: float

    @property
    def n(self):
        return len(self.s)

    def strip(self, j, R_c=None):
        return StripGeometry(
            s=float(self.s[j]), b=float(self.b[j]), ds=float(self.ds[j]),
            a=float(self.a[j]), R_c=np.eye(3) if R_c is None else R_c,
        )


def pipeline_loads(strips: StripSet, R_strip, r_mid, v_mid, a_mid, om_mid,
                   omdot_mid, x_lag, V_air_body, Vdot_B, om_B, omdot_B,
                   w_gust_body):
    """Strip loads for the whole wing from 3-D kinematics (body frame).

    R_strip: (n,3,3) deformed strip triads; r_mid/v_mid/a_mid: position,
    velocity, acceleration of strip reference (elastic-axis) points; om_mid /
    omdot_mid: elastic angular velocity/acceleration; x_lag: (n,4) lag states;
    V_air_body: air velocity relative to the (unaccelerated) body origin,
    i.e. R_zeta^T V_inf - V_B; w_gust_body: (3,) gust velocity in body axes.

    Returns dict with per-strip forces/moments (body frame, integrated over
    ds), lag forcing terms and local flow data.
    """
    c = strips.consts
    rho = strips.rho
    b = strips.b

    # Relative air velocity at each strip point.
    v_rel = V_air_body[None, :] - cross3(om_B[None, :], r_mid) - v_mid
    V1 = np.einsum("ni,ni->n", R_strip[:, :, 0], v_rel)
    V2 = np.einsum("ni,ni->n", R_strip[:, :, 1], v_rel)
    V3 = np.einsum("ni,ni->n", R_strip[:, :, 2], v_rel)
    U = np.sqrt(V1 * V1 + V3 * V3)
    if np.any(U < 1e-9) or np.any(V1 <= 0.0):
        raise DegenerateFlowError("chordwise flow reversed or vanished on a strip")
    alpha_eff = np.arctan2(V3, V1)

    om_tot = om_mid + om_B[None, :]
    omdot_tot = omdot_mid + omdot_B[None, :]
    alpha_dot = np.einsum("ni,ni->n", R_strip[:, :, 1], om_tot)
    alpha_ddot = np.einsum("ni,ni->n", R_strip[:, :, 1], omdot_tot)

    w34 = V3 + b * (0.5 - strips.a) * alpha_dot

    # Point acceleration including frame terms; h is positive down.
    a_pt = (
        a_mid
        + Vdot_B[None, :]
        + cross3(omdot_B[None, :], r_mid)
        + cross3(om_B[None, :], cross3(om_B[None, :], r_mid))
        + 2.0 * cross3(om_B[None, :], v_mid)
    )
    h_ddot = -np.einsum("ni,ni->n", R_strip[:, :, 2], a_pt)

    w_gn = np.einsum("ni,i->n", R_strip[:, :, 2], w_gust_body)

    L_c = circulatory_lift(w34, x_lag[:, 0], x_lag[:, 1], U, b, rho, c)
    L_g = gust_lift(w_gn, x_lag[:, 2], x_lag[:, 3], U, b, rho, c)
    L_nc, M_nc = noncirculatory_loads(h_ddot, alpha_dot, alpha_ddot, U, b, strips.a, rho)
    L_tot = L_c + L_g + L_nc
    M_ea = M_nc + b * (strips.a + 0.5) * (L_c + L_g)
    D = drag_polar(L_tot, U, 2.0 * b, rho, strips.AR, c)

    # Local force: circulatory/gust lift perpendicular to the relative wind,
    # apparent mass along the normal, drag along the relative wind.
    cw, sw = V1 / U, V3 / U
    f1 = -(L_c + L_g) * sw + D * cw
    f3 = (L_c + L_g) * cw + L_nc + D * sw
    F_local = np.stack([f1, np.zeros_like(f1), f3], axis=1) * strips.ds[:, None]
    M_local = np.stack([np.zeros_like(M_ea), M_ea, np.zeros_like(M_ea)], axis=1) * strips.ds[:, None]

    F_body = np.einsum("nij,nj->ni", R_strip, F_local)
    M_body = np.einsum("nij,nj->ni", R_strip, M_local)

    lag_rates = np.stack(
        [
            -c.eps1 * U / b * x_lag[:, 0] + w34,
            -c.eps2 * U / b * x_lag[:, 1] + w34,
            -c.beta1 * U / b * x_lag[:, 2] + w_gn,
            -c.beta2 * U / b * x_lag[:, 3] + w_gn,
        ],
        axis=1,
    )
    return {
        "F_body": F_body,
        "M_body": M_body,
        "lag_rates": lag_rates,
        "U": U,
        "alpha_eff": alpha_eff,
        "w34": w34,
        "w_gust_normal": w_gn,
        "L_total": L_tot,
        "L_circ": L_c + L_g,
    }
