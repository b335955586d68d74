"""Rigid-body orientation from three fitted tag positions.

The world-frame tag fits are centered on their mean and matched against the
body-frame tag offsets by the closed-form orthogonal point-set alignment
(SVD of the 3x3 cross-covariance with determinant sign correction). Centering
on the measured mean is valid because the tag offsets are defined with their
barycenter at the body origin.
"""

from __future__ import annotations

import warnings

import numpy as np

from ._jit import njit
from .errors import DegenerateGeometry, ReflectionCaseWarning
from .geom3d import EulerAngles, euler_from_rotmat, quat_from_rotmat
from .trilateration import DEFAULT_ITERS, solve

# Second singular value of the centered point matrix below this is collinear
# (the smallest is always ~0: three centered points span at most a plane).
COLLINEAR_TOL = 1e-9


@njit(cache=True)
def _fit_rotation(world, body):
    """Rotation R minimizing ||R b_z - a_z|| over the three point pairs.

    ``world`` rows are centered world points, ``body`` rows the body offsets.
    Returns (R, reflected) where reflected means the determinant branch fired.
    """
    m = np.zeros((3, 3))  # sum_z a_z b_z^T
    for z in range(world.shape[0]):
        for i in range(3):
            for j in range(3):
                m[i, j] += world[z, i] * body[z, j]
    u, s, vt = np.linalg.svd(m)
    scale = s[0] if s[0] > 1e-30 else 1e-30
    degenerate = s[1] <= 1e-12 * scale
    d = np.linalg.det(u) * np.linalg.det(vt)
    reflected = d < 0.0
    if reflected:
        u = u.copy()
        u[:, 2] = -u[:, 2]
    r = np.ascontiguousarray(u) @ np.ascontiguousarray(vt)
    return r, reflected, degenerate


def rotation_from_tags(tag_positions: np.ndarray, tag_offsets: np.ndarray):
    """Rotation matrix aligning body tag offsets onto world tag positions.

    Raises DegenerateGeometry for collinear points; warns ReflectionCaseWarning
    when the sign-corrected branch of the alignment is taken.
    """
    world = np.asarray(tag_positions, dtype=np.float64)
    body = np.asarray(tag_offsets, dtype=np.float64)
    centered = world - world.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[1] <= COLLINEAR_TOL:
        raise DegenerateGeometry(f"tag points near-collinear (s2={sv[1]:.3e})")
    r, reflected, degenerate = _fit_rotation(
        np.ascontiguousarray(centered), np.ascontiguousarray(body)
    )
    if degenerate:
        raise DegenerateGeometry("cross-covariance of the point pairs is rank deficient")
    if reflected:
        warnings.warn("determinant sign correction applied", ReflectionCaseWarning)
    return r


def orientation_from_tags(tag_positions: np.ndarray, tag_offsets: np.ndarray) -> EulerAngles:
    """Euler angles of the rigid body holding the given world tag positions."""
    r = rotation_from_tags(tag_positions, tag_offsets)
    e = euler_from_rotmat(r)
    return EulerAngles(float(e[0]), float(e[1]), float(e[2]))


def quat_from_tags(tag_positions: np.ndarray, tag_offsets: np.ndarray) -> np.ndarray:
    """Quaternion form of orientation_from_tags."""
    return quat_from_rotmat(rotation_from_tags(tag_positions, tag_offsets))


def delta(
    ranges: np.ndarray,
    anchors: np.ndarray,
    tag_offsets: np.ndarray,
    init: np.ndarray,
    iters: int = DEFAULT_ITERS,
) -> EulerAngles:
    """Orientation straight from one UWB frame: range fit, then point alignment.

    Propagates SingularHessian / DivergedResult from the range fit and
    DegenerateGeometry from the alignment.
    """
    fit = solve(ranges, anchors, init, iters=iters)
    return orientation_from_tags(fit.tag_positions, tag_offsets)
