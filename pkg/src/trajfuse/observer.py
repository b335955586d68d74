"""Hybrid position/orientation observer driven by IMU flow and UWB jumps.

Between range frames the 19-dim estimate [p, v, b, a, q, w] flows as

    pdot = v,  vdot = a - b,  bdot = 0,  adot = alpha (R(q) y_a - a),
    qdot = 0.5 * omega_matrix(w) q,  wdot = alpha (R(q) y_w - w),

i.e. the filtered acceleration/rate states chase the IMU samples rotated into
the global frame with the *current* orientation estimate. At every UWB frame
the state jumps: with m = fix - p (fix = mean of the three fitted tag
positions),

    p += K1 m,  v += K2 m,  b += K3 m,

and the quaternion moves toward the orientation recovered from the tag fits:
the Euler-angle mismatch (wrapped per axis) is scaled by diag(k4, k5, k6) and
added to the current angles, so unit gains reset the estimate to the measured
pose exactly and zero gains leave it untouched.

A jump whose range fit fails (singular Hessian, divergence, degenerate tag
geometry) is skipped and counted; the flow carries on uncorrected.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._jit import njit
from .errors import DegenerateGeometry, DivergedResult, NonFiniteState, SingularHessian
from .geom3d import (
    a2q,
    euler_from_quat,
    euler_from_rotmat,
    omega_matrix,
    q_inv,
    q_mul,
    q_normalize,
    quat_from_euler,
    to_rotation_matrix,
    wrap_angle,
)
from .plant import MeasurementFrame, PlantState, TagGeometry, Trajectory
from .trilateration import DEFAULT_ITERS, DEFAULT_MAX_STEP, _solve_tags
from .procrustes import _fit_rotation

logger = logging.getLogger(__name__)

_JUMP_STATUS = {1: "singular Hessian", 2: "diverged range fit", 3: "degenerate tag geometry"}


@dataclass(frozen=True)
class GainSet:
    """Six scalar injection gains.

    k1..k3 scale the position-fix mismatch into the position, velocity and
    bias updates (each as k * I3); k4..k6 weight the roll, pitch and yaw
    corrections of the orientation update.
    """

    k1: float = 0.5
    k2: float = 0.5
    k3: float = 0.0
    k4: float = 1.0
    k5: float = 1.0
    k6: float = 1.0

    def as_array(self) -> np.ndarray:
        return np.array([self.k1, self.k2, self.k3, self.k4, self.k5, self.k6])

    @staticmethod
    def from_array(k) -> "GainSet":
        k = np.asarray(k, dtype=np.float64)
        return GainSet(*(float(v) for v in k))

    @property
    def K1(self) -> np.ndarray:
        return self.k1 * np.eye(3)

    @property
    def K2(self) -> np.ndarray:
        return self.k2 * np.eye(3)

    @property
    def K3(self) -> np.ndarray:
        return self.k3 * np.eye(3)

    @property
    def K4(self) -> np.ndarray:
        return np.diag([self.k4, self.k5, self.k6])

    @property
    def K_stack(self) -> np.ndarray:
        """[K1; K2; K3] stacked to 9x3."""
        return np.vstack([self.K1, self.K2, self.K3])


@dataclass(frozen=True)
class ObserverConfig:
    alpha: float = 20.0  # IMU low-pass rate [1/s]
    gains: GainSet = field(default_factory=GainSet)
    tril_iters: int = DEFAULT_ITERS
    tril_max_step: float = DEFAULT_MAX_STEP

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class ObserverState:
    """Estimate [p, v, b, a, q, w]; a is the filtered global acceleration."""

    p: np.ndarray
    v: np.ndarray
    b: np.ndarray
    a: np.ndarray
    q: np.ndarray
    w: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, self.b, self.a, self.q, self.w])

    @staticmethod
    def from_array(x: np.ndarray) -> "ObserverState":
        x = np.asarray(x, dtype=np.float64)
        return ObserverState(
            p=x[0:3].copy(),
            v=x[3:6].copy(),
            b=x[6:9].copy(),
            a=x[9:12].copy(),
            q=q_normalize(x[12:16].copy()),
            w=x[16:19].copy(),
        )


@dataclass(frozen=True)
class ErrorSample:
    """Estimation error: stacked [p - p_hat, v - v_hat, b - b_hat] and the
    orientation error quaternion q^-1 (x) q_hat (sign-canonical)."""

    e_p: np.ndarray  # (9,)
    e_q: np.ndarray  # (4,)


@dataclass(frozen=True)
class ObserverRun:
    """Time-indexed observer output with errors against the driving truth."""

    t: np.ndarray  # (n,)
    states: np.ndarray  # (n, 19)
    e_p: np.ndarray  # (n, 9)
    e_q: np.ndarray  # (n, 4)
    skipped_jumps: int
    diverged: bool = False  # state went non-finite; rows NaN from that frame on

    def state_at(self, k: int) -> ObserverState:
        return ObserverState.from_array(self.states[k])

    @property
    def p_hat(self) -> np.ndarray:
        return self.states[:, 0:3]

    @property
    def q_hat(self) -> np.ndarray:
        return self.states[:, 12:16]


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _obs_rhs(s, ya, yw, alpha):
    r = to_rotation_matrix(s[12:16])
    ds = np.empty(19)
    ds[0:3] = s[3:6]
    ds[3:6] = s[9:12] - s[6:9]
    ds[6:9] = 0.0
    ds[9:12] = alpha * (r @ ya - s[9:12])
    ds[12:16] = 0.5 * (omega_matrix(s[16:19]) @ s[12:16])
    ds[16:19] = alpha * (r @ yw - s[16:19])
    return ds


@njit(cache=True)
def _obs_flow(s, ya, yw, alpha, dt):
    k1 = _obs_rhs(s, ya, yw, alpha)
    k2 = _obs_rhs(s + 0.5 * dt * k1, ya, yw, alpha)
    k3 = _obs_rhs(s + 0.5 * dt * k2, ya, yw, alpha)
    k4 = _obs_rhs(s + dt * k3, ya, yw, alpha)
    out = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    out[12:16] = q_normalize(out[12:16])
    return out


@njit(cache=True)
def _obs_jump(s, d_row, anchors, tag_offsets, k, tril_iters, max_step):
    """One injection step. status: 0 ok, 1 singular, 2 diverged, 3 degenerate."""
    p_hat = s[0:3]
    q_hat = s[12:16]
    r_hat = to_rotation_matrix(q_hat)
    init = np.empty((3, 3))
    for z in range(3):
        for i in range(3):
            init[z, i] = (
                p_hat[i]
                + r_hat[i, 0] * tag_offsets[z, 0]
                + r_hat[i, 1] * tag_offsets[z, 1]
                + r_hat[i, 2] * tag_offsets[z, 2]
            )
    tags, st = _solve_tags(init, anchors, d_row, tril_iters, max_step)
    if st != 0:
        return s, st
    g = np.empty(3)
    for i in range(3):
        g[i] = (tags[0, i] + tags[1, i] + tags[2, i]) / 3.0
    centered = tags - g
    rm, _reflected, degenerate = _fit_rotation(centered, tag_offsets)
    if degenerate:
        return s, 3
    ang_meas = euler_from_rotmat(rm)
    ang_est = euler_from_quat(q_hat)
    out = s.copy()
    m = g - p_hat
    out[0:3] = out[0:3] + k[0] * m
    out[3:6] = out[3:6] + k[1] * m
    out[6:9] = out[6:9] + k[2] * m
    ang_new = np.empty(3)
    for i in range(3):
        ang_new[i] = ang_est[i] + k[3 + i] * wrap_angle(ang_meas[i] - ang_est[i])
    out[12:16] = quat_from_euler(ang_new)
    return out, 0


@njit(cache=True)
def _run_observer(t, ya, yw, uwb, d, init19, anchors, tag_offsets, k, alpha, tril_iters, max_step):
    """Full hybrid execution. status 0 ok, 1 non-finite state (rows NaN-filled
    from the first bad frame on)."""
    n = t.shape[0]
    out = np.empty((n, 19))
    s = init19.copy()
    n_skipped = 0
    for i in range(n):
        if i > 0:
            s = _obs_flow(s, ya[i - 1], yw[i - 1], alpha, t[i] - t[i - 1])
        finite = True
        for j in range(19):
            if not np.isfinite(s[j]):
                finite = False
                break
        if not finite:
            for rr in range(i, n):
                for j in range(19):
                    out[rr, j] = np.nan
            return out, n_skipped, 1
        if uwb[i]:
            s2, st = _obs_jump(s, d[i], anchors, tag_offsets, k, tril_iters, max_step)
            if st == 0:
                s = s2
            else:
                n_skipped += 1
        out[i] = s
    return out, n_skipped, 0


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------


def flow(state: ObserverState, frame: MeasurementFrame, cfg: ObserverConfig, dt: float) -> ObserverState:
    """One RK4 step of the observer flow using the frame's IMU sample."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    s = _obs_flow(state.as_array(), frame.y_a, frame.y_w, cfg.alpha, dt)
    if not np.all(np.isfinite(s)):
        raise NonFiniteState("non-finite observer state after flow step")
    return ObserverState.from_array(s)


def jump(
    state: ObserverState,
    y_d: np.ndarray,
    anchors,
    tags: TagGeometry,
    cfg: ObserverConfig,
) -> ObserverState:
    """One injection step from a complete 3N range block."""
    s, st = _obs_jump(
        state.as_array(),
        np.asarray(y_d, dtype=np.float64),
        anchors.positions,
        tags.offsets,
        cfg.gains.as_array(),
        cfg.tril_iters,
        cfg.tril_max_step,
    )
    if st == 1:
        raise SingularHessian("singular Hessian in jump range fit")
    if st == 2:
        raise DivergedResult("range fit diverged in jump")
    if st == 3:
        raise DegenerateGeometry("fitted tags near-collinear in jump")
    return ObserverState.from_array(s)


def position_fix(
    state: ObserverState, y_d: np.ndarray, anchors, tags: TagGeometry, cfg: ObserverConfig
) -> np.ndarray:
    """The position fix g(y_d) the jump would inject, from the same per-tag
    initialization the jump uses (current estimate plus rotated offsets)."""
    p_hat = state.p
    r_hat = to_rotation_matrix(state.q)
    init = p_hat[None, :] + tags.offsets @ r_hat.T
    fitted, st = _solve_tags(
        init, anchors.positions, np.asarray(y_d, dtype=np.float64), cfg.tril_iters,
        cfg.tril_max_step,
    )
    if st != 0:
        raise SingularHessian(_JUMP_STATUS.get(st, "range fit failed"))
    return fitted.mean(axis=0)


def error_of(truth: PlantState, est: ObserverState) -> ErrorSample:
    """Componentwise translational errors and the orientation error quaternion."""
    e_p = np.concatenate([truth.p - est.p, truth.v - est.v, truth.b - est.b])
    e_q = q_mul(q_inv(truth.q), est.q)
    return ErrorSample(e_p=e_p, e_q=e_q)


def default_init(
    traj: Trajectory, pos_offset: float = 0.0, yaw_offset_deg: float = 0.0
) -> ObserverState:
    """Start-of-run estimate: truth pose shifted by a position offset (applied
    along x) and a yaw offset; velocity taken from truth, bias/acceleration
    unknown (zero), rate zero."""
    s0 = traj.state_at(0)
    ang = euler_from_quat(s0.q)
    ang[2] = ang[2] + np.deg2rad(yaw_offset_deg)
    return ObserverState(
        p=s0.p + np.array([pos_offset, 0.0, 0.0]),
        v=s0.v.copy(),
        b=np.zeros(3),
        a=np.zeros(3),
        q=a2q(ang),
        w=np.zeros(3),
    )


def run(
    traj: Trajectory,
    cfg: ObserverConfig,
    init: ObserverState,
    strict: bool = True,
) -> ObserverRun:
    """Flow at every IMU frame and jump at every UWB frame of a trajectory.

    Failed jumps are skipped (state held) and counted. A non-finite state
    raises NonFiniteState, or, with strict=False, returns a run marked
    diverged (used by the tuner to penalize destabilizing gains).
    """
    states, n_skipped, status = _run_observer(
        traj.t,
        traj.y_a,
        traj.y_w,
        traj.uwb_tick,
        traj.d,
        init.as_array(),
        traj.anchors.positions,
        traj.tags.offsets,
        cfg.gains.as_array(),
        cfg.alpha,
        cfg.tril_iters,
        cfg.tril_max_step,
    )
    if status != 0 and strict:
        raise NonFiniteState("observer state went non-finite during run")
    if n_skipped and strict:
        logger.warning("observer skipped %d of %d jumps", n_skipped, int(traj.uwb_tick.sum()))
    e_p = traj.states[:, 0:9] - states[:, 0:9]
    with np.errstate(invalid="ignore"):
        e_q = _batched_error_quat(traj.states[:, 9:13], states[:, 12:16])
    return ObserverRun(
        t=traj.t,
        states=states,
        e_p=e_p,
        e_q=e_q,
        skipped_jumps=int(n_skipped),
        diverged=status != 0,
    )


def _batched_error_quat(q_true: np.ndarray, q_est: np.ndarray) -> np.ndarray:
    """Rows of q_true^-1 (x) q_est, normalized with canonical sign."""
    a = np.column_stack([-q_true[:, 0], -q_true[:, 1], -q_true[:, 2], q_true[:, 3]])
    ax, ay, az, aw = a[:, 0], a[:, 1], a[:, 2], a[:, 3]
    bx, by, bz, bw = q_est[:, 0], q_est[:, 1], q_est[:, 2], q_est[:, 3]
    out = np.empty_like(a)
    out[:, 0] = aw * bx + bw * ax + ay * bz - az * by
    out[:, 1] = aw * by + bw * ay + az * bx - ax * bz
    out[:, 2] = aw * bz + bw * az + ax * by - ay * bx
    out[:, 3] = aw * bw - ax * bx - ay * by - az * bz
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    flip = out[:, 3] < 0
    out[flip] *= -1.0
    return out


def batched_euler(q: np.ndarray) -> np.ndarray:
    """Euler angles for an (n, 4) array of quaternions (vectorized q2a)."""
    x, y, z, w = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    r20 = 2.0 * (x * z - w * y)
    sp = np.clip(-r20, -1.0, 1.0)
    pitch = np.arcsin(sp)
    roll = np.arctan2(2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y))
    yaw = np.arctan2(2.0 * (x * y + w * z), 1.0 - 2.0 * (y * y + z * z))
    locked = np.abs(sp) >= 1.0 - 1e-12
    if np.any(locked):
        # roll folded into yaw at the singularity, matching euler_from_rotmat
        r01 = 2.0 * (x * y - w * z)
        r11 = 1.0 - 2.0 * (x * x + z * z)
        yaw = np.where(locked, np.arctan2(-r01, r11), yaw)
        roll = np.where(locked, 0.0, roll)
    return np.column_stack([roll, pitch, yaw])


def write_estimate_log(path, run_out: ObserverRun, traj: Trajectory, method: str = "TBOD") -> None:
    """CSV log of the estimate, its Euler angles and headline errors."""
    euler = batched_euler(run_out.q_hat)
    ep_norm = np.linalg.norm(run_out.e_p, axis=1)
    yaw_err = np.rad2deg(batched_euler(run_out.e_q)[:, 2])
    header = (
        ["method", "t"]
        + [f"p{c}" for c in "xyz"]
        + [f"v{c}" for c in "xyz"]
        + [f"b{c}" for c in "xyz"]
        + [f"q{c}" for c in "xyzw"]
        + ["roll", "pitch", "yaw", "ep_norm", "yaw_err_deg"]
    )
    lines = [",".join(header)]
    for k in range(run_out.t.shape[0]):
        row = [method, repr(float(run_out.t[k]))]
        row += [repr(float(v)) for v in run_out.states[k, 0:16]]
        row += [repr(float(v)) for v in euler[k]]
        row.append(repr(float(ep_norm[k])))
        row.append(repr(float(yaw_err[k])))
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")
