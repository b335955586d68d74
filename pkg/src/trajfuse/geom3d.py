"""Quaternion and rotation algebra shared by every module.

Conventions, fixed once here and never mixed:

- Quaternions are float64 arrays ``[x, y, z, w]`` with the scalar part LAST.
  Public operations return unit quaternions with the canonical sign w >= 0
  (q and -q encode the same rotation; picking w >= 0 makes error comparisons
  deterministic).
- ``to_rotation_matrix(q)`` maps local (body) coordinates to global ones:
  ``v_global = R @ v_local``.
- Euler angles are extrinsic X-Y-Z: roll about the global X axis, then pitch
  about global Y, then yaw about global Z, i.e. ``R = Rz(yaw) @ Ry(pitch) @
  Rx(roll)``. Yaw lives in (-pi, pi], pitch in [-pi/2, pi/2].
- The rate vector in ``qdot = 0.5 * omega_matrix(w) @ q`` is expressed in the
  GLOBAL frame.
"""

from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np

from ._jit import njit
from .errors import GimbalLockWarning

GIMBAL_LOCK_TOL = 1e-6


class EulerAngles(NamedTuple):
    """Extrinsic X-Y-Z angles in radians."""

    roll: float
    pitch: float
    yaw: float

    def as_array(self) -> np.ndarray:
        return np.array([self.roll, self.pitch, self.yaw])


def q_identity() -> np.ndarray:
    """Identity quaternion [0, 0, 0, 1]."""
    return np.array([0.0, 0.0, 0.0, 1.0])


@njit(cache=True)
def q_normalize(q):
    """Unit-norm quaternion with canonical sign w >= 0."""
    n = np.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])
    out = q / n
    if out[3] < 0.0:
        out = -out
    return out


@njit(cache=True)
def q_mul(a, b):
    """Hamilton product a (x) b, renormalized and sign-canonical."""
    ax, ay, az, aw = a[0], a[1], a[2], a[3]
    bx, by, bz, bw = b[0], b[1], b[2], b[3]
    out = np.empty(4)
    out[0] = aw * bx + bw * ax + ay * bz - az * by
    out[1] = aw * by + bw * ay + az * bx - ax * bz
    out[2] = aw * bz + bw * az + ax * by - ay * bx
    out[3] = aw * bw - ax * bx - ay * by - az * bz
    return q_normalize(out)


@njit(cache=True)
def q_inv(q):
    """Inverse (conjugate) of a unit quaternion."""
    out = np.empty(4)
    out[0] = -q[0]
    out[1] = -q[1]
    out[2] = -q[2]
    out[3] = q[3]
    return q_normalize(out)


@njit(cache=True)
def omega_matrix(w):
    """4x4 rate matrix giving qdot = 0.5 * omega_matrix(w) @ q (global-frame w)."""
    wx, wy, wz = w[0], w[1], w[2]
    out = np.empty((4, 4))
    out[0, 0] = 0.0
    out[0, 1] = -wz
    out[0, 2] = wy
    out[0, 3] = wx
    out[1, 0] = wz
    out[1, 1] = 0.0
    out[1, 2] = -wx
    out[1, 3] = wy
    out[2, 0] = -wy
    out[2, 1] = wx
    out[2, 2] = 0.0
    out[2, 3] = wz
    out[3, 0] = -wx
    out[3, 1] = -wy
    out[3, 2] = -wz
    out[3, 3] = 0.0
    return out


@njit(cache=True)
def to_rotation_matrix(q):
    """Local-to-global rotation matrix of a unit quaternion."""
    x, y, z, w = q[0], q[1], q[2], q[3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    out = np.empty((3, 3))
    out[0, 0] = 1.0 - 2.0 * (yy + zz)
    out[0, 1] = 2.0 * (xy - wz)
    out[0, 2] = 2.0 * (xz + wy)
    out[1, 0] = 2.0 * (xy + wz)
    out[1, 1] = 1.0 - 2.0 * (xx + zz)
    out[1, 2] = 2.0 * (yz - wx)
    out[2, 0] = 2.0 * (xz - wy)
    out[2, 1] = 2.0 * (yz + wx)
    out[2, 2] = 1.0 - 2.0 * (xx + yy)
    return out


@njit(cache=True)
def quat_from_rotmat(r):
    """Unit quaternion of a rotation matrix (Shepperd's branch selection)."""
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    d0 = 1.0 + tr
    d1 = 1.0 + 2.0 * r[0, 0] - tr
    d2 = 1.0 + 2.0 * r[1, 1] - tr
    d3 = 1.0 + 2.0 * r[2, 2] - tr
    q = np.empty(4)
    if d0 >= d1 and d0 >= d2 and d0 >= d3:
        w = 0.5 * np.sqrt(d0)
        s = 0.25 / w
        q[0] = (r[2, 1] - r[1, 2]) * s
        q[1] = (r[0, 2] - r[2, 0]) * s
        q[2] = (r[1, 0] - r[0, 1]) * s
        q[3] = w
    elif d1 >= d2 and d1 >= d3:
        x = 0.5 * np.sqrt(d1)
        s = 0.25 / x
        q[0] = x
        q[1] = (r[0, 1] + r[1, 0]) * s
        q[2] = (r[0, 2] + r[2, 0]) * s
        q[3] = (r[2, 1] - r[1, 2]) * s
    elif d2 >= d3:
        y = 0.5 * np.sqrt(d2)
        s = 0.25 / y
        q[0] = (r[0, 1] + r[1, 0]) * s
        q[1] = y
        q[2] = (r[1, 2] + r[2, 1]) * s
        q[3] = (r[0, 2] - r[2, 0]) * s
    else:
        z = 0.5 * np.sqrt(d3)
        s = 0.25 / z
        q[0] = (r[0, 2] + r[2, 0]) * s
        q[1] = (r[1, 2] + r[2, 1]) * s
        q[2] = z
        q[3] = (r[1, 0] - r[0, 1]) * s
    return q_normalize(q)


@njit(cache=True)
def euler_from_rotmat(r):
    """(roll, pitch, yaw) of a rotation matrix; roll forced to 0 at gimbal lock."""
    sp = -r[2, 0]
    if sp > 1.0:
        sp = 1.0
    elif sp < -1.0:
        sp = -1.0
    pitch = np.arcsin(sp)
    out = np.empty(3)
    if np.abs(sp) >= 1.0 - 1e-12:
        out[0] = 0.0
        out[1] = pitch
        out[2] = np.arctan2(-r[0, 1], r[1, 1])
    else:
        out[0] = np.arctan2(r[2, 1], r[2, 2])
        out[1] = pitch
        out[2] = np.arctan2(r[1, 0], r[0, 0])
    return out


@njit(cache=True)
def quat_from_euler(e):
    """Unit quaternion of extrinsic X-Y-Z angles [roll, pitch, yaw]."""
    hr, hp, hy = 0.5 * e[0], 0.5 * e[1], 0.5 * e[2]
    qx = np.array([np.sin(hr), 0.0, 0.0, np.cos(hr)])
    qy = np.array([0.0, np.sin(hp), 0.0, np.cos(hp)])
    qz = np.array([0.0, 0.0, np.sin(hy), np.cos(hy)])
    return q_mul(qz, q_mul(qy, qx))


@njit(cache=True)
def euler_from_quat(q):
    return euler_from_rotmat(to_rotation_matrix(q))


@njit(cache=True)
def wrap_angle(x):
    """Wrap an angle to (-pi, pi]."""
    return np.pi - np.mod(np.pi - x, 2.0 * np.pi)


def q2a(q: np.ndarray) -> EulerAngles:
    """Euler angles of a unit quaternion.

    Warns with GimbalLockWarning when |pitch| is within tolerance of pi/2;
    in that regime roll is reported as 0 and yaw absorbs the full twist.
    """
    e = euler_from_quat(np.asarray(q, dtype=np.float64))
    if abs(abs(e[1]) - 0.5 * np.pi) < GIMBAL_LOCK_TOL:
        warnings.warn("pitch within tolerance of +/-90 deg", GimbalLockWarning)
    return EulerAngles(float(e[0]), float(e[1]), float(e[2]))


def a2q(e) -> np.ndarray:
    """Unit quaternion of Euler angles (EulerAngles, tuple or 3-array)."""
    if isinstance(e, EulerAngles):
        arr = e.as_array()
    else:
        arr = np.asarray(e, dtype=np.float64)
    return quat_from_euler(arr)
