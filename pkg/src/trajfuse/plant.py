"""Ground-truth rover simulator with multi-rate IMU/UWB sampling.

The rover state is [p, v, b, q, w]: position, velocity, accelerometer bias,
orientation quaternion and global-frame angular velocity. Between samples the
state flows as

    pdot = v,  vdot = R(q) u_a,  bdot = 0,
    qdot = 0.5 * omega_matrix(w) q,  wdot = R(q) u_w,

driven by body-frame inputs (u_a, u_w), integrated with classical fixed-step
RK4 at the IMU period so the integration and sampling grids coincide.

Sensor model at each IMU tick (period dt_a):

    y_a = u_a + R(q)^T b + noise_a   (body frame; b is the global-frame
                                      constant bias resolved in the body)
    y_w = R(q)^T w + noise_w         (body frame)

and every dt_d = hbar * dt_a (integer hbar) a UWB block of 3N ranges
``d[z * N + i] = ||anchor_i - (p + R(q) t_z)|| + noise_d`` is appended, where
t_z are the body-frame tag offsets. Gravity is excluded: y_a is modeled as the
already-compensated specific force. The bias b is drawn once per run and held
constant. Time t = 0 carries a UWB block (the range grid starts at zero).

Trajectory files are CSV with a JSON sidecar carrying the geometry; see
save_trajectory/load_trajectory.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import CoplanarAnchorsWarning, FormatError, GridError, NonFiniteState
from .geom3d import omega_matrix, q_normalize, quat_from_euler, to_rotation_matrix

DEFAULT_DT_A = 0.01
DEFAULT_DT_D = 0.05

# Reference indoor anchor layout used throughout the benchmark [m].
DEFAULT_ANCHORS = np.array(
    [
        [-0.40, 4.20, 2.00],
        [-0.40, -1.80, 2.00],
        [2.48, -2.20, 2.00],
        [2.80, -4.20, 2.00],
    ]
)

# Coordinates of an equilateral tag triangle of side s in the body XY plane,
# barycenter at the origin (circumradius s / sqrt(3)).
def equilateral_tags(side: float = 0.20) -> np.ndarray:
    r = side / np.sqrt(3.0)
    return np.array(
        [
            [r, 0.0, 0.0],
            [-0.5 * r, 0.5 * side, 0.0],
            [-0.5 * r, -0.5 * side, 0.0],
        ]
    )


@dataclass(frozen=True)
class PlantState:
    """True rover state."""

    p: np.ndarray  # position [m]
    v: np.ndarray  # velocity [m/s]
    b: np.ndarray  # accelerometer bias [m/s^2]
    q: np.ndarray  # orientation quaternion [x, y, z, w]
    w: np.ndarray  # angular velocity, global frame [rad/s]

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.p, self.v, self.b, self.q, self.w])

    @staticmethod
    def from_array(x: np.ndarray) -> "PlantState":
        x = np.asarray(x, dtype=np.float64)
        return PlantState(
            p=x[0:3].copy(),
            v=x[3:6].copy(),
            b=x[6:9].copy(),
            q=q_normalize(x[9:13].copy()),
            w=x[13:16].copy(),
        )


@dataclass(frozen=True)
class InputSignal:
    """Body-frame input functions of time with a declared magnitude bound."""

    u_a: Callable[[float], np.ndarray]  # linear acceleration [m/s^2]
    u_w: Callable[[float], np.ndarray]  # angular acceleration [rad/s^2]
    bound: float = 1.0  # common bound on |u_a|, |u_w| and their rates


def zero_input() -> InputSignal:
    z = np.zeros(3)
    return InputSignal(u_a=lambda t: z, u_w=lambda t: z, bound=0.0)


def constant_input(u_a, u_w=None) -> InputSignal:
    ua = np.asarray(u_a, dtype=np.float64)
    uw = np.zeros(3) if u_w is None else np.asarray(u_w, dtype=np.float64)
    bound = max(np.linalg.norm(ua), np.linalg.norm(uw))
    return InputSignal(u_a=lambda t: ua, u_w=lambda t: uw, bound=bound)


@dataclass(frozen=True)
class RoverProfile:
    """Input signal plus the matching initial state (bias left to the draw)."""

    u: InputSignal
    init: "PlantState"


def rover_profile(
    seed: int,
    center=(1.0, 0.0, 0.2),
    pos_amp=(1.3, 2.2, 0.08),
    yaw_amp: float = 1.6,
) -> RoverProfile:
    """Seeded patrol-style excitation that stays inside the anchor field.

    The position follows a sum of two incommensurate sinusoids per axis and
    the heading a slow sinusoid, both bounded by construction; the body-frame
    inputs are derived analytically from those profiles (u_a = R^T pddot,
    u_w = yaw acceleration about z), so roll and pitch stay at zero, matching
    the flat-floor scenario the benchmark models.
    """
    rng = np.random.default_rng(seed)
    center = np.asarray(center, dtype=np.float64)
    amp1 = np.asarray(pos_amp, dtype=np.float64) * rng.uniform(0.55, 0.75, 3)
    amp2 = np.asarray(pos_amp, dtype=np.float64) * rng.uniform(0.2, 0.3, 3)
    w1 = 2.0 * np.pi * rng.uniform(0.02, 0.05, 3)
    w2 = 2.0 * np.pi * rng.uniform(0.06, 0.11, 3)
    ph1 = rng.uniform(0.0, 2.0 * np.pi, 3)
    ph2 = rng.uniform(0.0, 2.0 * np.pi, 3)
    ya = yaw_amp * rng.uniform(0.6, 1.0)
    wy = 2.0 * np.pi * rng.uniform(0.02, 0.05)
    phy = rng.uniform(0.0, 2.0 * np.pi)

    def yaw(t: float) -> float:
        return ya * np.sin(wy * t + phy)

    def u_a(t: float) -> np.ndarray:
        pdd = -amp1 * w1**2 * np.sin(w1 * t + ph1) - amp2 * w2**2 * np.sin(w2 * t + ph2)
        c, s = np.cos(yaw(t)), np.sin(yaw(t))
        # Rz(yaw)^T @ pdd
        return np.array([c * pdd[0] + s * pdd[1], -s * pdd[0] + c * pdd[1], pdd[2]])

    def u_w(t: float) -> np.ndarray:
        return np.array([0.0, 0.0, -ya * wy**2 * np.sin(wy * t + phy)])

    bound = float(
        np.linalg.norm(amp1 * w1**2 + amp2 * w2**2) + np.linalg.norm(amp1 * w1**3 + amp2 * w2**3)
    )
    bound = max(bound, ya * wy**2 + ya * wy**3, 1.0)

    p0 = center + amp1 * np.sin(ph1) + amp2 * np.sin(ph2)
    v0 = amp1 * w1 * np.cos(ph1) + amp2 * w2 * np.cos(ph2)
    init = PlantState(
        p=p0,
        v=v0,
        b=np.zeros(3),
        q=quat_from_euler(np.array([0.0, 0.0, yaw(0.0)])),
        w=np.array([0.0, 0.0, ya * wy * np.cos(phy)]),
    )
    return RoverProfile(u=InputSignal(u_a=u_a, u_w=u_w, bound=bound), init=init)


@dataclass(frozen=True)
class AnchorMap:
    """Fixed UWB anchor positions, one row per anchor [m]."""

    positions: np.ndarray

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        object.__setattr__(self, "positions", pos)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 4:
            raise ValueError("anchor map needs at least 4 rows of xyz positions")
        if self.is_coplanar:
            # The reference indoor layout itself is coplanar (all anchors at
            # one height); fixes then have a mirror ambiguity across that
            # plane which the fit initialization must resolve.
            warnings.warn("anchors are coplanar", CoplanarAnchorsWarning)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def is_coplanar(self) -> bool:
        centered = self.positions - self.positions.mean(axis=0)
        sv = np.linalg.svd(centered, compute_uv=False)
        return bool(sv[2] < 1e-9 * max(sv[0], 1.0))


@dataclass(frozen=True)
class TagGeometry:
    """Body-frame UWB tag offsets, one row per tag [m], barycenter at origin."""

    offsets: np.ndarray

    def __post_init__(self):
        off = np.ascontiguousarray(self.offsets, dtype=np.float64)
        object.__setattr__(self, "offsets", off)
        if off.shape != (3, 3):
            raise ValueError("tag geometry needs exactly 3 rows of xyz offsets")
        if np.linalg.norm(off.mean(axis=0)) > 1e-12:
            raise ValueError("tag barycenter must sit at the body origin")
        sv = np.linalg.svd(off - off.mean(axis=0), compute_uv=False)
        if sv[1] < 1e-9:
            raise ValueError("tags must be non-collinear")


@dataclass(frozen=True)
class NoiseConfig:
    """Gaussian sensor noise levels and the bias draw scale."""

    sigma_a: float = 0.05  # accelerometer [m/s^2]
    sigma_w: float = 0.01  # rate gyro [rad/s]
    sigma_d: float = 0.2  # UWB range [m]
    sigma_b: float = 0.1  # per-axis accelerometer bias draw [m/s^2]
    seed: int = 0

    def __post_init__(self):
        if min(self.sigma_a, self.sigma_w, self.sigma_d, self.sigma_b) < 0:
            raise ValueError("noise levels must be nonnegative")


@dataclass(frozen=True)
class MeasurementFrame:
    """One timestamped sensor sample; ranges present only on UWB ticks."""

    t: float
    y_a: np.ndarray
    y_w: np.ndarray
    y_d: np.ndarray | None = None


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled truth + measurements plus the geometry that made them.

    Array layout: ``states[k] = [p, v, b, q, w]`` (16 columns), ``d[k]`` holds
    the 3N tag-major ranges on UWB rows and NaN elsewhere.
    """

    t: np.ndarray  # (n,)
    states: np.ndarray  # (n, 16)
    y_a: np.ndarray  # (n, 3)
    y_w: np.ndarray  # (n, 3)
    uwb_tick: np.ndarray  # (n,) bool
    d: np.ndarray  # (n, 3N)
    dt_a: float
    dt_d: float
    anchors: AnchorMap
    tags: TagGeometry
    seed: int
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    @property
    def n_frames(self) -> int:
        return self.t.shape[0]

    def state_at(self, k: int) -> PlantState:
        return PlantState.from_array(self.states[k])

    def frame_at(self, k: int) -> MeasurementFrame:
        return MeasurementFrame(
            t=float(self.t[k]),
            y_a=self.y_a[k].copy(),
            y_w=self.y_w[k].copy(),
            y_d=self.d[k].copy() if self.uwb_tick[k] else None,
        )


def _rhs(x: np.ndarray, u_a: np.ndarray, u_w: np.ndarray) -> np.ndarray:
    r = to_rotation_matrix(x[9:13])
    dx = np.empty(16)
    dx[0:3] = x[3:6]
    dx[3:6] = r @ u_a
    dx[6:9] = 0.0
    dx[9:13] = 0.5 * (omega_matrix(x[13:16]) @ x[9:13])
    dx[13:16] = r @ u_w
    return dx


def flow_step(state: PlantState, u: InputSignal, t: float, dt: float) -> PlantState:
    """One RK4 step of the rover flow; quaternion renormalized afterwards."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = state.as_array()
    k1 = _rhs(x, u.u_a(t), u.u_w(t))
    k2 = _rhs(x + 0.5 * dt * k1, u.u_a(t + 0.5 * dt), u.u_w(t + 0.5 * dt))
    k3 = _rhs(x + 0.5 * dt * k2, u.u_a(t + 0.5 * dt), u.u_w(t + 0.5 * dt))
    k4 = _rhs(x + dt * k3, u.u_a(t + dt), u.u_w(t + dt))
    x_new = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_new)):
        raise NonFiniteState(f"non-finite plant state after step at t={t}")
    return PlantState.from_array(x_new)


def tag_world_positions(p: np.ndarray, q: np.ndarray, tags: TagGeometry) -> np.ndarray:
    """World positions of the three tags for pose (p, q), one row per tag."""
    r = to_rotation_matrix(np.asarray(q, dtype=np.float64))
    return np.asarray(p, dtype=np.float64)[None, :] + tags.offsets @ r.T


def true_ranges(p: np.ndarray, q: np.ndarray, anchors: AnchorMap, tags: TagGeometry) -> np.ndarray:
    """Noise-free tag-major 3N range vector for pose (p, q)."""
    world = tag_world_positions(p, q, tags)
    diffs = world[:, None, :] - anchors.positions[None, :, :]  # (3, N, 3)
    return np.linalg.norm(diffs, axis=2).reshape(-1)


def sample_outputs(
    state: PlantState,
    u: InputSignal,
    t: float,
    noise: NoiseConfig,
    anchors: AnchorMap,
    tags: TagGeometry,
    at_uwb_tick: bool,
    rng: np.random.Generator | None = None,
) -> MeasurementFrame:
    """Sensor outputs for one state: body-frame IMU, plus ranges on UWB ticks.

    With rng=None the sample is noise-free regardless of the configured sigmas.
    """
    r = to_rotation_matrix(state.q)
    y_a = u.u_a(t) + r.T @ state.b
    y_w = r.T @ state.w
    y_d = None
    if at_uwb_tick:
        y_d = true_ranges(state.p, state.q, anchors, tags)
    if rng is not None:
        y_a = y_a + rng.normal(0.0, noise.sigma_a, 3)
        y_w = y_w + rng.normal(0.0, noise.sigma_w, 3)
        if y_d is not None:
            y_d = y_d + rng.normal(0.0, noise.sigma_d, y_d.shape[0])
    return MeasurementFrame(t=t, y_a=y_a, y_w=y_w, y_d=y_d)


def simulate(
    u: InputSignal,
    noise: NoiseConfig,
    anchors: AnchorMap,
    tags: TagGeometry,
    duration: float,
    dt_a: float = DEFAULT_DT_A,
    dt_d: float = DEFAULT_DT_D,
    init: PlantState | None = None,
) -> Trajectory:
    """Run the rover for ``duration`` seconds and record truth + measurements.

    The UWB period must be an integer multiple of the IMU period. Deterministic
    for a fixed NoiseConfig seed: the bias is drawn first, then per-frame IMU
    noise and per-tick range noise in frame order.
    """
    if duration <= 0:
        raise ValueError("duration must be positive")
    hbar = dt_d / dt_a
    if abs(hbar - round(hbar)) > 1e-9 or round(hbar) < 1:
        raise GridError(f"dt_d={dt_d} is not an integer multiple of dt_a={dt_a}")
    hbar = int(round(hbar))

    rng = np.random.default_rng(noise.seed)
    bias = rng.normal(0.0, noise.sigma_b, 3)
    if init is None:
        init = PlantState(
            p=np.array([1.0, 0.0, 0.2]),
            v=np.zeros(3),
            b=bias,
            q=np.array([0.0, 0.0, 0.0, 1.0]),
            w=np.zeros(3),
        )
    else:
        init = PlantState(p=init.p, v=init.v, b=bias, q=init.q, w=init.w)

    n = int(round(duration / dt_a))
    t = np.arange(n) * dt_a
    states = np.empty((n, 16))
    y_a = np.empty((n, 3))
    y_w = np.empty((n, 3))
    uwb_tick = (np.arange(n) % hbar) == 0
    d = np.full((n, 3 * anchors.n), np.nan)

    s = init
    for k in range(n):
        states[k] = s.as_array()
        frame = sample_outputs(s, u, t[k], noise, anchors, tags, bool(uwb_tick[k]), rng)
        y_a[k] = frame.y_a
        y_w[k] = frame.y_w
        if frame.y_d is not None:
            d[k] = frame.y_d
        if k + 1 < n:
            s = flow_step(s, u, float(t[k]), dt_a)

    return Trajectory(
        t=t,
        states=states,
        y_a=y_a,
        y_w=y_w,
        uwb_tick=uwb_tick,
        d=d,
        dt_a=dt_a,
        dt_d=dt_d,
        anchors=anchors,
        tags=tags,
        seed=noise.seed,
        noise=noise,
    )


# ---------------------------------------------------------------------------
# Trajectory files: CSV + JSON sidecar
# ---------------------------------------------------------------------------

_FIXED_COLS = (
    ["t"]
    + [f"p{c}" for c in "xyz"]
    + [f"v{c}" for c in "xyz"]
    + [f"b{c}" for c in "xyz"]
    + [f"q{c}" for c in "xyzw"]
    + [f"w{c}" for c in "xyz"]
    + [f"ya{c}" for c in "xyz"]
    + [f"yw{c}" for c in "xyz"]
    + ["uwb_tick"]
)


def _meta_path(path: Path) -> Path:
    return path.with_suffix(".meta.json")


def _fmt(x: float) -> str:
    return repr(float(x))


def save_trajectory(traj: Trajectory, path) -> None:
    """Write the trajectory CSV and its JSON geometry sidecar.

    Range columns are empty strings on non-UWB rows; floats are written in
    shortest round-trip form so save/load is lossless and byte-deterministic.
    """
    path = Path(path)
    n_d = traj.d.shape[1]
    header = _FIXED_COLS + [f"d{i}" for i in range(n_d)]
    lines = [",".join(header)]
    for k in range(traj.n_frames):
        row = [_fmt(traj.t[k])]
        row += [_fmt(v) for v in traj.states[k]]
        row += [_fmt(v) for v in traj.y_a[k]]
        row += [_fmt(v) for v in traj.y_w[k]]
        row.append("1" if traj.uwb_tick[k] else "0")
        if traj.uwb_tick[k]:
            row += [_fmt(v) for v in traj.d[k]]
        else:
            row += [""] * n_d
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n")

    meta = {
        "dt_a": traj.dt_a,
        "dt_d": traj.dt_d,
        "seed": traj.seed,
        "anchors": traj.anchors.positions.tolist(),
        "tag_offsets": traj.tags.offsets.tolist(),
        "sigma_a": traj.noise.sigma_a,
        "sigma_w": traj.noise.sigma_w,
        "sigma_d": traj.noise.sigma_d,
        "sigma_b": traj.noise.sigma_b,
    }
    _meta_path(path).write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def load_trajectory(path) -> Trajectory:
    """Read a trajectory written by save_trajectory.

    Raises FormatError on schema violations and GridError when the timestamps
    are not a uniform IMU grid with dt_d an integer multiple of dt_a.
    """
    path = Path(path)
    meta_path = _meta_path(path)
    if not meta_path.exists():
        raise FormatError(f"missing sidecar {meta_path}")
    meta = json.loads(meta_path.read_text())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CoplanarAnchorsWarning)
        anchors = AnchorMap(np.array(meta["anchors"]))
    tags = TagGeometry(np.array(meta["tag_offsets"]))
    noise = NoiseConfig(
        sigma_a=meta["sigma_a"],
        sigma_w=meta["sigma_w"],
        sigma_d=meta["sigma_d"],
        sigma_b=meta["sigma_b"],
        seed=meta["seed"],
    )

    lines = path.read_text().strip().split("\n")
    if not lines:
        raise FormatError("empty trajectory file")
    n_d = 3 * anchors.n
    expected_header = _FIXED_COLS + [f"d{i}" for i in range(n_d)]
    header = lines[0].split(",")
    if header != expected_header:
        raise FormatError(f"bad header: expected {len(expected_header)} known columns")

    n = len(lines) - 1
    if n == 0:
        raise FormatError("trajectory file has no data rows")
    t = np.empty(n)
    states = np.empty((n, 16))
    y_a = np.empty((n, 3))
    y_w = np.empty((n, 3))
    uwb_tick = np.zeros(n, dtype=bool)
    d = np.full((n, n_d), np.nan)
    ncols = len(expected_header)
    for k, line in enumerate(lines[1:]):
        cells = line.split(",")
        if len(cells) != ncols:
            raise FormatError(f"row {k}: expected {ncols} columns, found {len(cells)}")
        try:
            t[k] = float(cells[0])
            states[k] = [float(c) for c in cells[1:17]]
            y_a[k] = [float(c) for c in cells[17:20]]
            y_w[k] = [float(c) for c in cells[20:23]]
            tick = cells[23]
            if tick not in ("0", "1"):
                raise ValueError(tick)
            uwb_tick[k] = tick == "1"
            if uwb_tick[k]:
                d[k] = [float(c) for c in cells[24:]]
            elif any(c != "" for c in cells[24:]):
                raise FormatError(f"row {k}: ranges present without uwb_tick")
        except FormatError:
            raise
        except ValueError as exc:
            raise FormatError(f"row {k}: unparseable cell ({exc})") from exc

    if n > 1:
        steps = np.diff(t)
        if np.any(np.abs(steps - meta["dt_a"]) > 1e-9):
            raise GridError("IMU timestamps are not uniform at dt_a")
    hbar = meta["dt_d"] / meta["dt_a"]
    if abs(hbar - round(hbar)) > 1e-9 or round(hbar) < 1:
        raise GridError(f"dt_d={meta['dt_d']} not an integer multiple of dt_a={meta['dt_a']}")

    return Trajectory(
        t=t,
        states=states,
        y_a=y_a,
        y_w=y_w,
        uwb_tick=uwb_tick,
        d=d,
        dt_a=float(meta["dt_a"]),
        dt_d=float(meta["dt_d"]),
        anchors=anchors,
        tags=tags,
        seed=int(meta["seed"]),
        noise=noise,
    )
