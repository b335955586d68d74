"""Per-tag range least-squares solved by a fixed number of Newton steps.

One UWB frame carries 3N ranges (N anchors x 3 tags, tag-major layout
``d[z * N + i]``). Each tag's position is fit independently by minimizing

    J_z(p) = sum_i (||p - a_i|| - d_iz)^2

with full Newton steps using the analytic gradient and Hessian, iterated a
fixed number of times (5 by default) so the runtime is deterministic. The
position fix is the mean of the three per-tag solutions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._jit import njit
from .errors import DivergedResult, SingularHessian

DEFAULT_ITERS = 5
COND_LIMIT = 1e12
# |det H| below this times the cubed Hessian scale counts as singular.
_DET_EPS = 1e-12
# Newton step-length clamp [m]: keeps noisy ill-conditioned steps from
# escaping the convergence region (with coplanar anchors the cost has an
# exact mirror minimum across the anchor plane; uncapped steps can hop into
# that basin). Near the solution steps are tiny, so the clamp never engages
# and quadratic convergence is untouched.
DEFAULT_MAX_STEP = 1.0


@dataclass(frozen=True)
class TrilaterationResult:
    """Per-tag fits, their mean, the final total residual and iteration count."""

    tag_positions: np.ndarray  # (3, 3), row z = fitted position of tag z [m]
    barycenter: np.ndarray  # (3,) mean of the rows [m]
    residual: float  # total cost J over all tags [m^2]
    iterations: int


@njit(cache=True)
def _cost_single(p, anchors, d):
    acc = 0.0
    for i in range(anchors.shape[0]):
        dx = p[0] - anchors[i, 0]
        dy = p[1] - anchors[i, 1]
        dz = p[2] - anchors[i, 2]
        r = np.sqrt(dx * dx + dy * dy + dz * dz)
        e = r - d[i]
        acc += e * e
    return acc


@njit(cache=True)
def _grad_hess(p, anchors, d):
    """Analytic gradient and Hessian of the single-tag cost at p."""
    g = np.zeros(3)
    h = np.zeros((3, 3))
    for i in range(anchors.shape[0]):
        ux = p[0] - anchors[i, 0]
        uy = p[1] - anchors[i, 1]
        uz = p[2] - anchors[i, 2]
        r = np.sqrt(ux * ux + uy * uy + uz * uz)
        if r < 1e-12:
            # tag sitting on an anchor; poison the Hessian so callers bail out
            return g, np.zeros((3, 3))
        ux /= r
        uy /= r
        uz /= r
        e = r - d[i]
        g[0] += 2.0 * e * ux
        g[1] += 2.0 * e * uy
        g[2] += 2.0 * e * uz
        c = e / r
        h[0, 0] += 2.0 * (ux * ux + c * (1.0 - ux * ux))
        h[0, 1] += 2.0 * (ux * uy - c * ux * uy)
        h[0, 2] += 2.0 * (ux * uz - c * ux * uz)
        h[1, 1] += 2.0 * (uy * uy + c * (1.0 - uy * uy))
        h[1, 2] += 2.0 * (uy * uz - c * uy * uz)
        h[2, 2] += 2.0 * (uz * uz + c * (1.0 - uz * uz))
    h[1, 0] = h[0, 1]
    h[2, 0] = h[0, 2]
    h[2, 1] = h[1, 2]
    return g, h


@njit(cache=True)
def _solve3(h, g):
    """Cramer solve of h x = g; ok=False when h is numerically singular."""
    c00 = h[1, 1] * h[2, 2] - h[1, 2] * h[2, 1]
    c01 = h[1, 2] * h[2, 0] - h[1, 0] * h[2, 2]
    c02 = h[1, 0] * h[2, 1] - h[1, 1] * h[2, 0]
    det = h[0, 0] * c00 + h[0, 1] * c01 + h[0, 2] * c02
    scale = 0.0
    for i in range(3):
        for j in range(3):
            a = np.abs(h[i, j])
            if a > scale:
                scale = a
    x = np.zeros(3)
    if np.abs(det) <= _DET_EPS * scale * scale * scale or scale == 0.0:
        return x, False
    c10 = h[0, 2] * h[2, 1] - h[0, 1] * h[2, 2]
    c11 = h[0, 0] * h[2, 2] - h[0, 2] * h[2, 0]
    c12 = h[0, 1] * h[2, 0] - h[0, 0] * h[2, 1]
    c20 = h[0, 1] * h[1, 2] - h[0, 2] * h[1, 1]
    c21 = h[0, 2] * h[1, 0] - h[0, 0] * h[1, 2]
    c22 = h[0, 0] * h[1, 1] - h[0, 1] * h[1, 0]
    x[0] = (c00 * g[0] + c10 * g[1] + c20 * g[2]) / det
    x[1] = (c01 * g[0] + c11 * g[1] + c21 * g[2]) / det
    x[2] = (c02 * g[0] + c12 * g[1] + c22 * g[2]) / det
    return x, True


@njit(cache=True)
def _newton_single(p0, anchors, d, iters, max_step):
    """Fixed-iteration Newton descent for one tag. ok=False on singular Hessian."""
    p = p0.copy()
    for _ in range(iters):
        g, h = _grad_hess(p, anchors, d)
        step, ok = _solve3(h, g)
        if not ok:
            return p, False
        if max_step > 0.0:
            sn = np.sqrt(step[0] ** 2 + step[1] ** 2 + step[2] ** 2)
            if sn > max_step:
                step = step * (max_step / sn)
        p = p - step
    return p, True


@njit(cache=True)
def _solve_tags(init, anchors, d_flat, iters, max_step):
    """All three tags from a flat tag-major range vector. status: 0 ok,
    1 singular Hessian, 2 diverged."""
    n = anchors.shape[0]
    tags = np.empty((3, 3))
    j0 = 0.0
    j1 = 0.0
    for z in range(3):
        dz = d_flat[z * n : (z + 1) * n]
        j0 += _cost_single(init[z], anchors, dz)
        p, ok = _newton_single(init[z], anchors, dz, iters, max_step)
        if not ok:
            return tags, 1
        tags[z] = p
        j1 += _cost_single(p, anchors, dz)
    if j1 > 10.0 * j0 and j1 > 1e-12:
        return tags, 2
    return tags, 0


def cost_J(tag_positions: np.ndarray, anchors: np.ndarray, ranges: np.ndarray) -> float:
    """Total range-fit cost over all tags and anchors.

    ``tag_positions`` is (3, 3) with row z the candidate position of tag z,
    ``ranges`` is the flat tag-major 3N vector.
    """
    tag_positions = np.asarray(tag_positions, dtype=np.float64)
    anchors = np.asarray(anchors, dtype=np.float64)
    ranges = np.asarray(ranges, dtype=np.float64)
    n = anchors.shape[0]
    total = 0.0
    for z in range(3):
        total += _cost_single(tag_positions[z], anchors, ranges[z * n : (z + 1) * n])
    return float(total)


def newton_step(p: np.ndarray, anchors: np.ndarray, d_z: np.ndarray) -> np.ndarray:
    """One full (unclamped) Newton step on the single-tag cost.

    Raises SingularHessian when the 3x3 system is ill conditioned (condition
    number above 1e12), which happens exactly when the candidate sits on an
    anchor.
    """
    p = np.asarray(p, dtype=np.float64)
    anchors = np.asarray(anchors, dtype=np.float64)
    d_z = np.asarray(d_z, dtype=np.float64)
    g, h = _grad_hess(p, anchors, d_z)
    sv = np.linalg.svd(h, compute_uv=False)
    if sv[-1] <= 0.0 or sv[0] / sv[-1] > COND_LIMIT:
        raise SingularHessian(f"range-fit Hessian condition {sv[0] / max(sv[-1], 1e-300):.3e}")
    return p - np.linalg.solve(h, g)


def grad_hess(p: np.ndarray, anchors: np.ndarray, d_z: np.ndarray):
    """Analytic (gradient, Hessian) of the single-tag cost; exposed for checks."""
    g, h = _grad_hess(
        np.asarray(p, dtype=np.float64),
        np.asarray(anchors, dtype=np.float64),
        np.asarray(d_z, dtype=np.float64),
    )
    return g, h


def solve(
    ranges: np.ndarray,
    anchors: np.ndarray,
    init: np.ndarray,
    iters: int = DEFAULT_ITERS,
    max_step: float = DEFAULT_MAX_STEP,
) -> TrilaterationResult:
    """Fit all three tags with ``iters`` Newton steps each and average them.

    ``init`` is (3, 3), row z the starting point for tag z; it must lie in the
    convergence region (in practice: the previous tag estimate, or anywhere
    within ~1 m of the truth for the reference anchor geometry). max_step <= 0
    disables the step-length clamp.
    """
    ranges = np.asarray(ranges, dtype=np.float64)
    anchors = np.asarray(anchors, dtype=np.float64)
    init = np.asarray(init, dtype=np.float64)
    n = anchors.shape[0]
    if ranges.shape[0] != 3 * n:
        raise ValueError(f"expected {3 * n} ranges, got {ranges.shape[0]}")
    tags, status = _solve_tags(init, anchors, ranges, iters, max_step)
    if status == 1:
        raise SingularHessian("singular Hessian during fixed-iteration fit")
    if status == 2:
        raise DivergedResult("final residual exceeds 10x the initial residual")
    residual = cost_J(tags, anchors, ranges)
    return TrilaterationResult(
        tag_positions=tags,
        barycenter=tags.mean(axis=0),
        residual=float(residual),
        iterations=iters,
    )
