"""Finite-rotation utilities on SO(3).

Rotations are parameterised by the Cartesian rotation vector psi (axis times
angle).  The exponential map uses the Rodrigues formula with series fallbacks
below ``SMALL_ANGLE`` so that psi -> 0 is smooth; this also keeps every routine
analytic in its argument, which is required for complex-step differentiation of
the beam internal forces.

Conventions (verified by finite differences in the test suite):

* ``exp((psi + J_r(psi) dphi)^) ~ exp(psi^) exp(dphi^)``, i.e. ``jac_right``
  maps additive rotation-vector increments to right (body-frame) increments.
* ``rotvec_from_rotation`` is the inverse of ``rotation_from_rotvec`` for
  angles in [0, pi]; angles up to 2*pi are rejected by the parameterisation
  guard in ``rotation_from_rotvec`` per the model's validity range.
"""

from __future__ import annotations

import numpy as np

SMALL_ANGLE = 1e-6
TWO_PI = 2.0 * np.pi


class RotationRangeError(ValueError):
    """Rotation vector magnitude outside the valid parameterisation range."""


def skew(v):
    """Skew-symmetric matrix such that skew(v) @ w = v x w."""
    v = np.asarray(v)
    out = np.zeros(v.shape[:-1] + (3, 3), dtype=v.dtype)
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def unskew(m):
    """Axial vector of a (near-)skew-symmetric matrix."""
    m = np.asarray(m)
    return 0.5 * np.stack(
        [
            m[..., 2, 1] - m[..., 1, 2],
            m[..., 0, 2] - m[..., 2, 0],
            m[..., 1, 0] - m[..., 0, 1],
        ],
        axis=-1,
    )


def _angle(psi):
    """sqrt(psi . psi) without conjugation, safe for complex-step inputs."""
    psi = np.asarray(psi)
    return np.sqrt(np.sum(psi * psi, axis=-1))


def _sinc_coeffs(theta):
    """Return (sin t / t, (1 - cos t)/t^2) with 4th-order series near zero."""
    theta = np.asarray(theta)
    t2 = theta * theta
    small = np.abs(theta) < SMALL_ANGLE
    # Series: sin t / t = 1 - t^2/6 + t^4/120, (1-cos t)/t^2 = 1/2 - t^2/24 + t^4/720
    with np.errstate(invalid="ignore", divide="ignore"):
        a_exact = np.sin(theta) / np.where(small, 1.0, theta)
        b_exact = (1.0 - np.cos(theta)) / np.where(small, 1.0, t2)
    a_series = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
    b_series = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
    return np.where(small, a_series, a_exact), np.where(small, b_series, b_exact)


def rotation_from_rotvec(psi, check_range: bool = True):
    """Rodrigues formula: R = I + a(t) psi^ + b(t) psi^2, t = |psi|.

    Supports stacked inputs (..., 3) and complex dtype (for complex-step
    derivatives, where ``check_range`` must be disabled by the caller passing
    perturbed complex arguments; the range check only inspects the real part).
    """
    psi = np.asarray(psi)
    theta = _angle(psi)
    if check_range and np.any(np.real(theta) >= TWO_PI):
        raise RotationRangeError(
            f"rotation vector magnitude {float(np.max(np.real(theta))):.6g} >= 2*pi"
        )
    a, b = _sinc_coeffs(theta)
    s = skew(psi)
    eye = np.zeros(s.shape, dtype=s.dtype)
    eye[..., 0, 0] = eye[..., 1, 1] = eye[..., 2, 2] = 1.0
    return eye + a[..., None, None] * s + b[..., None, None] * (s @ s)


def rotvec_from_rotation(R):
    """Rotation vector of R (angle in [0, pi]); robust near 0 and pi.

    Real-valued input only; used for state extraction after multiplicative
    updates, not inside differentiated code paths.
    """
    R = np.asarray(R, dtype=float)
    tr = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(tr)
    ax = unskew(R)  # = sin(theta) * axis
    s = np.sin(theta)
    if theta < 1e-8:
        return ax  # sin t ~ t: unskew already equals psi to O(t^3)
    if np.pi - theta < 1e-6:
        # Near pi the axial part degenerates; recover axis from R + I.
        B = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        k = int(np.argmax(axis))
        axis = B[:, k] / max(axis[k], 1e-12)
        axis = axis / np.linalg.norm(axis)
        # Fix sign using the axial vector where it is nonzero.
        if np.dot(axis, ax) < 0.0:
            axis = -axis
        return theta * axis
    return (theta / s) * ax


def rotvec_small_rel(R):
    """Rotation vector of a relative rotation, analytic and complex-safe.

    Valid for angles below ~pi/2 (guarded); used for the per-element relative
    rotation where fine meshes keep the angle far below the guard.
    """
    R = np.asarray(R)
    ax = unskew(R)  # sin(theta) * axis
    s = _angle(ax)
    c = 0.5 * (R[..., 0, 0] + R[..., 1, 1] + R[..., 2, 2] - 1.0)
    if np.any(np.real(c) < 0.1):
        raise RotationRangeError(
            "relative rotation within an element exceeds ~84 deg; refine the mesh"
        )
    small = np.abs(s) < SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        theta = np.arctan(s / c)
        f_exact = theta / np.where(small, 1.0, s)
    f_series = 1.0 + s * s / 6.0  # theta/sin(theta); c -> 1 as s -> 0 here
    f = np.where(small, f_series, f_exact)
    return f[..., None] * ax


def jac_right(psi):
    """Right (body-frame) tangent of the exponential map.

    J_r(psi) = I - (1-cos t)/t^2 psi^ + (t - sin t)/t^3 psi^2
    satisfies exp((psi + J_r dpsi)^) = exp(psi^) exp(dpsi^) to first order.
    """
    psi = np.asarray(psi)
    theta = _angle(psi)
    t2 = theta * theta
    small = np.abs(theta) < SMALL_ANGLE
    _, b = _sinc_coeffs(theta)
    with np.errstate(invalid="ignore", divide="ignore"):
        c_exact = (theta - np.sin(theta)) / np.where(small, 1.0, t2 * theta)
    c_series = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    c = np.where(small, c_series, c_exact)
    s = skew(psi)
    eye = np.zeros(s.shape, dtype=s.dtype)
    eye[..., 0, 0] = eye[..., 1, 1] = eye[..., 2, 2] = 1.0
    return eye - b[..., None, None] * s + c[..., None, None] * (s @ s)


def jac_right_inv(psi):
    """Inverse of jac_right, with the usual closed form and small-angle series."""
    psi = np.asarray(psi)
    theta = _angle(psi)
    t2 = theta * theta
    small = np.abs(theta) < SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        # d = (1/t^2) - (1 + cos t)/(2 t sin t)
        d_exact = 1.0 / np.where(small, 1.0, t2) - (1.0 + np.cos(theta)) / np.where(
            small, 1.0, 2.0 * theta * np.sin(theta)
        )
    d_series = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    d = np.where(small, d_series, d_exact)
    s = skew(psi)
    eye = np.zeros(s.shape, dtype=s.dtype)
    eye[..., 0, 0] = eye[..., 1, 1] = eye[..., 2, 2] = 1.0
    return eye + 0.5 * s + d[..., None, None] * (s @ s)


def compose_rotvec(dtheta, psi):
    """Rotation vector of exp(dtheta^) exp(psi^): multiplicative update."""
    return rotvec_from_rotation(
        rotation_from_rotvec(dtheta, check_range=False) @ rotation_from_rotvec(psi)
    )


def cross3(a, b):
    """Cross product for (..., 3) arrays without np.cross overhead."""
    a = np.asarray(a)
    b = np.asarray(b)
    out = np.empty(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
    out[..., 0] = a[..., 1] * b[..., 2] - a[..., 2] * b[..., 1]
    out[..., 1] = a[..., 2] * b[..., 0] - a[..., 0] * b[..., 2]
    out[..., 2] = a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]
    return out


def quat_from_rotvec_many(psi):
    """Unit quaternions (w, x, y, z) for stacked rotation vectors."""
    psi = np.asarray(psi, dtype=float)
    theta = np.sqrt(np.sum(psi * psi, axis=-1))
    half = 0.5 * theta
    small = theta < SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(small, 0.5 - half * half / 12.0,
                     np.sin(half) / np.where(small, 1.0, theta))
    q = np.empty(psi.shape[:-1] + (4,))
    q[..., 0] = np.cos(half)
    q[..., 1:] = s[..., None] * psi
    return q


def rotvec_from_quat_many(q):
    """Rotation vectors (canonical branch, angle <= pi) from unit quaternions."""
    q = np.asarray(q, dtype=float)
    sign = np.where(q[..., 0] < 0.0, -1.0, 1.0)
    q = q * sign[..., None]
    vn = np.sqrt(np.sum(q[..., 1:] * q[..., 1:], axis=-1))
    theta = 2.0 * np.arctan2(vn, q[..., 0])
    small = vn < SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(small, 2.0 / np.where(np.abs(q[..., 0]) < 1e-300, 1.0, q[..., 0]),
                     theta / np.where(small, 1.0, vn))
    return f[..., None] * q[..., 1:]


def quat_multiply_many(qa, qb):
    """Hamilton product of stacked quaternions."""
    w1, x1, y1, z1 = (qa[..., k] for k in range(4))
    w2, x2, y2, z2 = (qb[..., k] for k in range(4))
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def compose_rotvec_many(dtheta, psi):
    """Batched rotation vector of exp(dtheta^) exp(psi^)."""
    return rotvec_from_quat_many(
        quat_multiply_many(quat_from_rotvec_many(dtheta), quat_from_rotvec_many(psi))
    )
