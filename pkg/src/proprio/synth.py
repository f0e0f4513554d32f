"""Synthetic gait data: ground-truth trajectories and noisy measurement logs.

The base motion is designed analytically (constant-speed paths with smooth
heading profiles), but the logged ground truth is the discrete trajectory
obtained by integrating the sampled body rates with a zero-order hold --
the exact forward model the estimator's preintegration assumes. Zero-noise
logs are therefore exactly consistent: preintegrating the clean IMU stream
reproduces the logged keyframes to machine precision, and inverse kinematics
is solved against the discrete base pose so forward kinematics of the logged
joint angles lands exactly on the commanded foot points.

Stance feet are pinned to per-phase world anchors (slip-free by
construction); swing feet follow a cycloidal arc between anchors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import UnreachableTargetError, ValidationError
from .imu import ImuNoiseParams
from .lie import Pose, exp_so3
from .robot import RobotModel, fk_chain

GAIT_OFFSETS = {
    "trot": (0.0, 0.5, 0.5, 0.0),   # FL, FR, RL, RR diagonal pairs
    "walk": (0.0, 0.5),             # biped alternating
}

_SHAPES = ("straight", "diagonal", "turn", "zig-zag")


@dataclass
class GaitSpec:
    gait: str = "trot"              # 'trot' | 'walk' | 'stand'
    stance_duration: float = 0.3
    swing_duration: float = 0.3
    step_length: float = 0.12
    step_height: float = 0.05
    base_height: float = 0.28
    shape: str = "straight"
    heading_deg: float = 45.0       # motion direction for 'diagonal' (yaw stays 0)
    turn_radius: float = 1.0
    zigzag_segments: int = 4
    zigzag_angle_deg: float = 30.0
    zigzag_blend_frac: float = 0.8  # blend window as a fraction of one segment
    duration: float = 10.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.gait not in ("trot", "walk", "stand"):
            raise ValidationError(f"gait must be trot, walk, or stand, got {self.gait!r}")
        if self.stance_duration <= 0:
            raise ValidationError("stance_duration must be > 0")
        if self.swing_duration <= 0:
            raise ValidationError("swing_duration must be > 0")
        duty = self.duty_factor
        if not 0.0 < duty < 1.0:
            raise ValidationError(f"duty_factor must be in (0, 1), got {duty}")
        if self.duration <= 0:
            raise ValidationError("duration must be > 0")
        if self.base_height <= 0:
            raise ValidationError("base_height must be > 0")
        if self.step_height < 0:
            raise ValidationError("step_height must be >= 0")
        if self.shape not in _SHAPES:
            raise ValidationError(f"shape must be one of {_SHAPES}, got {self.shape!r}")
        if self.shape == "turn" and self.turn_radius <= 0:
            raise ValidationError("turn_radius must be > 0")
        if self.shape == "zig-zag" and self.zigzag_segments < 1:
            raise ValidationError("zigzag_segments must be >= 1")

    @property
    def cycle_time(self) -> float:
        return self.stance_duration + self.swing_duration

    @property
    def duty_factor(self) -> float:
        return self.stance_duration / self.cycle_time

    @property
    def speed(self) -> float:
        if self.gait == "stand":
            return 0.0
        return self.step_length / self.cycle_time


@dataclass
class MeasurementNoise:
    """Noise injected into the synthetic measurements."""

    imu: ImuNoiseParams = field(default_factory=ImuNoiseParams)
    encoder_sigma: float = 1e-3          # rad, white noise on joint angles
    contact_flip_prob: float = 0.0
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_random_walk: bool = False

    def __post_init__(self):
        if self.encoder_sigma < 0:
            raise ValidationError("encoder_sigma must be >= 0")
        if not 0.0 <= self.contact_flip_prob < 1.0:
            raise ValidationError("contact_flip_prob must be in [0, 1)")
        self.gyro_bias = np.asarray(self.gyro_bias, dtype=float)
        self.accel_bias = np.asarray(self.accel_bias, dtype=float)

    @staticmethod
    def zero() -> "MeasurementNoise":
        return MeasurementNoise(
            imu=ImuNoiseParams(gyro_density=0.0, accel_density=0.0),
            encoder_sigma=0.0)


def _smoothstep(x):
    """Quintic smoothstep: zero first and second derivatives at both ends."""
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (6.0 * x**2 - 15.0 * x + 10.0)


def _smoothstep_d(x):
    x = np.clip(x, 0.0, 1.0)
    return 30.0 * x**2 * (x - 1.0) ** 2


class BaseCurves:
    """Analytic base motion: position, velocity, acceleration, yaw, yaw rate.

    The base stays level at constant height; yaw follows the path tangent for
    turn and zig-zag, and stays at zero for straight and diagonal (diagonal
    walks sideways-forward without turning).
    """

    def __init__(self, spec: GaitSpec):
        self.spec = spec
        self.speed = spec.speed
        self.height = spec.base_height
        shape = spec.shape
        if shape == "zig-zag":
            self._period = 2.0 * spec.duration / spec.zigzag_segments
            self._amp = np.deg2rad(spec.zigzag_angle_deg)
            self._blend = spec.zigzag_blend_frac * 0.5 * self._period
            # heading must be integrated for position; dense grid + spline
            n = max(4001, int(spec.duration * 4000) + 1)
            ts = np.linspace(0.0, spec.duration, n)
            psi = self._heading(ts)
            vx = self.speed * np.cos(psi)
            vy = self.speed * np.sin(psi)
            x = np.concatenate([[0.0], np.cumsum(0.5 * (vx[1:] + vx[:-1]) * np.diff(ts))])
            y = np.concatenate([[0.0], np.cumsum(0.5 * (vy[1:] + vy[:-1]) * np.diff(ts))])
            self._spline_x = CubicSpline(ts, x)
            self._spline_y = CubicSpline(ts, y)

    def _heading(self, t):
        """Direction of motion in the world xy plane."""
        spec = self.spec
        t = np.asarray(t, dtype=float)
        if spec.shape == "straight":
            return np.zeros_like(t)
        if spec.shape == "diagonal":
            return np.full_like(t, np.deg2rad(spec.heading_deg))
        if spec.shape == "turn":
            return (self.speed / spec.turn_radius) * t
        # zig-zag: alternating +/-A with quintic blends at segment changes
        A, P, w = self._amp, self._period, self._blend
        half = 0.5 * P
        u = np.mod(t, P)
        psi = np.where(u < half, A, -A)
        x1 = (u - (half - 0.5 * w)) / w
        in1 = (x1 >= 0.0) & (x1 <= 1.0)
        psi = np.where(in1, A - 2.0 * A * _smoothstep(x1), psi)
        x2 = (u - (P - 0.5 * w)) / w
        in2 = x2 >= 0.0
        psi = np.where(in2, -A + 2.0 * A * _smoothstep(x2), psi)
        return psi

    def _heading_rate(self, t):
        spec = self.spec
        t = np.asarray(t, dtype=float)
        if spec.shape in ("straight", "diagonal"):
            return np.zeros_like(t)
        if spec.shape == "turn":
            return np.full_like(t, self.speed / spec.turn_radius)
        A, P, w = self._amp, self._period, self._blend
        half = 0.5 * P
        u = np.mod(t, P)
        rate = np.zeros_like(t)
        x1 = (u - (half - 0.5 * w)) / w
        in1 = (x1 >= 0.0) & (x1 <= 1.0)
        rate = np.where(in1, -2.0 * A * _smoothstep_d(x1) / w, rate)
        x2 = (u - (P - 0.5 * w)) / w
        in2 = x2 >= 0.0
        rate = np.where(in2, 2.0 * A * _smoothstep_d(x2) / w, rate)
        return rate

    def position(self, t):
        spec = self.spec
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        ts = np.atleast_1d(t)
        if spec.shape == "straight":
            xy = np.stack([self.speed * ts, np.zeros_like(ts)], axis=-1)
        elif spec.shape == "diagonal":
            b = np.deg2rad(spec.heading_deg)
            xy = np.stack([self.speed * np.cos(b) * ts, self.speed * np.sin(b) * ts], axis=-1)
        elif spec.shape == "turn":
            R = spec.turn_radius
            th = (self.speed / R) * ts
            xy = np.stack([R * np.sin(th), R * (1.0 - np.cos(th))], axis=-1)
        else:
            xy = np.stack([self._spline_x(ts), self._spline_y(ts)], axis=-1)
        p = np.concatenate([xy, np.full((len(ts), 1), self.height)], axis=-1)
        return p[0] if scalar else p

    def velocity(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        ts = np.atleast_1d(t)
        psi = self._heading(ts)
        v = np.stack([self.speed * np.cos(psi), self.speed * np.sin(psi),
                      np.zeros_like(ts)], axis=-1)
        return v[0] if scalar else v

    def acceleration(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        ts = np.atleast_1d(t)
        psi = self._heading(ts)
        rate = self._heading_rate(ts)
        a = np.stack([-self.speed * rate * np.sin(psi),
                      self.speed * rate * np.cos(psi),
                      np.zeros_like(ts)], axis=-1)
        return a[0] if scalar else a

    def yaw(self, t):
        spec = self.spec
        if spec.shape in ("straight", "diagonal"):
            t = np.asarray(t, dtype=float)
            return np.zeros_like(t)
        return self._heading(t)

    def yaw_rate(self, t):
        spec = self.spec
        if spec.shape in ("straight", "diagonal"):
            t = np.asarray(t, dtype=float)
            return np.zeros_like(t)
        return self._heading_rate(t)

    def rotation(self, t: float) -> np.ndarray:
        return exp_so3(np.array([0.0, 0.0, float(self.yaw(t))]))

    def pose(self, t: float) -> Pose:
        return Pose(self.rotation(t), self.position(t))


def generate_base_trajectory(spec: GaitSpec) -> BaseCurves:
    return BaseCurves(spec)


@dataclass
class TrajectoryLog:
    """All streams of one synthetic run plus the ground truth that made them."""

    imu_times: np.ndarray          # (N,) sample k covers [t_k, t_k + dt)
    gyro: np.ndarray               # (N, 3) measured
    accel: np.ndarray              # (N, 3) measured
    sample_times: np.ndarray       # (N+1,) instantaneous sample grid
    joint_names: list
    joint_angles: np.ndarray       # (N+1, J) measured
    contact_flags: np.ndarray      # (N+1, F) bool, measured
    kf_times: np.ndarray           # (K,)
    gt_rotations: np.ndarray       # (K, 3, 3)
    gt_positions: np.ndarray       # (K, 3)
    gt_velocities: np.ndarray | None  # (K, 3); None when loaded from disk
    initial_velocity: np.ndarray
    true_gyro_bias: np.ndarray
    true_accel_bias: np.ndarray
    imu_rate: float
    keyframe_rate: float
    duration: float
    gravity: np.ndarray
    foot_positions: np.ndarray | None = None   # (N+1, F, 3) true, in-memory only
    meta: dict = field(default_factory=dict)

    @property
    def num_keyframes(self) -> int:
        return len(self.kf_times)

    @property
    def num_legs(self) -> int:
        return self.contact_flags.shape[1]

    def gt_pose(self, k: int) -> Pose:
        return Pose(self.gt_rotations[k], self.gt_positions[k])


def _leg_offsets(spec: GaitSpec, num_legs: int):
    if spec.gait == "stand":
        return None
    offsets = GAIT_OFFSETS[spec.gait]
    if len(offsets) != num_legs:
        raise ValidationError(
            f"gait {spec.gait!r} expects {len(offsets)} legs, model has {num_legs}")
    return offsets


def contact_schedule(spec: GaitSpec, num_legs: int, num_samples: int,
                     rate: float) -> np.ndarray:
    """(num_samples, num_legs) boolean stance flags on the sample grid.

    Computed in integer sample space so phase boundaries are exact.
    """
    flags = np.ones((num_samples, num_legs), dtype=bool)
    offsets = _leg_offsets(spec, num_legs)
    if offsets is None:
        return flags
    cycle_n = int(round(spec.cycle_time * rate))
    stance_n = int(round(spec.stance_duration * rate))
    if cycle_n <= 0 or stance_n <= 0 or stance_n >= cycle_n:
        raise ValidationError("stance/swing durations too short for the sample rate")
    k = np.arange(num_samples)
    for leg, off in enumerate(offsets):
        off_n = int(round(off * cycle_n))
        flags[:, leg] = ((k + cycle_n - off_n) % cycle_n) < stance_n
    return flags


def _nominal_foot_offsets(model: RobotModel) -> np.ndarray:
    """Per-leg neutral foot position in the base frame, projected to the ground."""
    out = np.zeros((model.num_legs, 2))
    for leg, chain in enumerate(model.chains):
        p = np.zeros(3)
        for j in chain.joints:
            p = p + j.M.t
        out[leg] = p[:2]
    return out


def plan_footholds(spec: GaitSpec, model: RobotModel, curves: BaseCurves,
                   rate: float, num_samples: int):
    """Per-leg stance windows (in samples) and world anchors.

    Returns a list per leg of (start_sample, end_sample, anchor_xy) covering
    the whole log, including partial windows at both ends.
    """
    offsets = _leg_offsets(spec, model.num_legs)
    nominal = _nominal_foot_offsets(model)
    plans = []
    if offsets is None:
        for leg in range(model.num_legs):
            anchor = curves.pose(0.0).transform(np.array([*nominal[leg], 0.0]))
            plans.append([(0, num_samples, np.array([anchor[0], anchor[1], 0.0]))])
        return plans

    cycle_n = int(round(spec.cycle_time * rate))
    stance_n = int(round(spec.stance_duration * rate))
    for leg, off in enumerate(offsets):
        off_n = int(round(off * cycle_n))
        windows = []
        n0 = -(off_n // cycle_n) - 2
        n = n0
        while True:
            start = n * cycle_n + off_n
            end = start + stance_n
            if start > num_samples + cycle_n:
                break
            t_mid = np.clip((start + 0.5 * stance_n) / rate, 0.0, spec.duration)
            base = curves.pose(t_mid)
            a = base.transform(np.array([*nominal[leg], 0.0]))
            windows.append((start, end, np.array([a[0], a[1], 0.0])))
            n += 1
        plans.append(windows)
    return plans


def _foot_targets(plans, spec: GaitSpec, num_samples: int, rate: float) -> np.ndarray:
    """(num_samples, num_legs, 3) commanded world foot positions."""
    out = np.zeros((num_samples, len(plans), 3))
    for leg, windows in enumerate(plans):
        for i, (start, end, anchor) in enumerate(windows):
            s0 = max(start, 0)
            s1 = min(end, num_samples)
            if s0 < s1:
                out[s0:s1, leg] = anchor
            if i + 1 < len(windows):
                nstart, _, nanchor = windows[i + 1]
                g0 = max(end, 0)
                g1 = min(nstart, num_samples)
                if g0 < g1:
                    ks = np.arange(g0, g1)
                    s = (ks - end) / float(nstart - end)
                    blend = s - np.sin(2.0 * np.pi * s) / (2.0 * np.pi)
                    xy = anchor[None, :2] + (nanchor[:2] - anchor[:2])[None, :] * blend[:, None]
                    z = spec.step_height * 0.5 * (1.0 - np.cos(2.0 * np.pi * s))
                    out[g0:g1, leg, :2] = xy
                    out[g0:g1, leg, 2] = z
    return out


def _chain_ik_params(model: RobotModel, leg: int):
    """Extract closed-form IK parameters, asserting the expected topology."""
    chain = model.chains[leg]
    if len(chain.joints) != 3:
        raise ValidationError(
            f"leg {leg}: generator needs 3-revolute chains, got {len(chain.joints)}")
    j0, j1, j2 = chain.joints
    abduction = bool(abs(j0.axis[0]) > 0.9)
    if abduction:
        # two-link solve reaches the foot point: the tail extends the calf
        if not (abs(j1.axis[1]) > 0.9 and abs(j2.axis[1]) > 0.9):
            raise ValidationError(f"leg {leg}: expected x,y,y joint axes")
        hip = j0.M.t
        d = j1.M.t[1]
        l2 = -j2.M.t[2]
        l3 = -chain.tail.t[2]
        sole = np.zeros(3)
    else:
        # two-link solve reaches the ankle; the sole tail is removed from the
        # target and restored by the leveling ankle angle
        if not all(abs(j.axis[1]) > 0.9 for j in (j0, j1, j2)):
            raise ValidationError(f"leg {leg}: expected pitch-only chain")
        hip = j0.M.t
        d = 0.0
        l2 = -j1.M.t[2]
        l3 = -j2.M.t[2]
        sole = chain.tail.t
    if l2 <= 0 or l3 <= 0:
        raise ValidationError(f"leg {leg}: expected links extending along -z")
    return abduction, hip, d, l2, l3, sole


def solve_leg_ik(model: RobotModel, leg: int, base_R: np.ndarray, base_p: np.ndarray,
                 target_w: np.ndarray, times=None) -> np.ndarray:
    """Closed-form IK for one leg, vectorized over time.

    base_R (n,3,3), base_p (n,3), target_w (n,3) -> joint angles (n,3).
    Abduction legs decouple the roll about x, then solve the planar two-link
    problem with the knee-backward branch; pitch-only (biped) legs solve the
    planar problem to the ankle and level the sole with the ankle joint.
    """
    abduction, hip, d, l2, l3, sole = _chain_ik_params(model, leg)
    u = np.einsum("nji,nj->ni", base_R, target_w - base_p) - hip[None, :] - sole[None, :]

    def fail_mask(mask, why):
        if np.any(mask):
            i = int(np.argmax(mask))
            t = float(times[i]) if times is not None else float("nan")
            raise UnreachableTargetError(t, leg, f"leg {leg} at t={t:.4f}s: {why}")

    if abduction:
        rho = np.hypot(u[:, 1], u[:, 2])
        fail_mask(rho < abs(d) + 1e-12, "lateral offset exceeds reach")
        alpha = np.arctan2(u[:, 2], u[:, 1])
        q1 = alpha + np.arccos(np.clip(d / rho, -1.0, 1.0))
        xp = u[:, 0]
        zp = -np.sqrt(np.maximum(rho**2 - d**2, 0.0))
    else:
        fail_mask(np.abs(u[:, 1]) > 1e-6, "pitch-only leg cannot reach lateral target")
        q1 = None
        xp = u[:, 0]
        zp = u[:, 2]

    r2 = xp**2 + zp**2
    r = np.sqrt(r2)
    fail_mask(r > l2 + l3 - 1e-12, "leg length exceeded")
    fail_mask(r < abs(l2 - l3) + 1e-12, "target inside minimum reach")
    cos_knee = (r2 - l2**2 - l3**2) / (2.0 * l2 * l3)
    knee = -np.arccos(np.clip(cos_knee, -1.0, 1.0))
    A = l2 + l3 * np.cos(knee)
    B = l3 * np.sin(knee)
    s_hip = (-A * xp + B * zp) / r2
    c_hip = (-B * xp - A * zp) / r2
    hip_q = np.arctan2(s_hip, c_hip)

    if abduction:
        return np.stack([q1, hip_q, knee], axis=-1)
    ankle = -(hip_q + knee)
    return np.stack([hip_q, knee, ankle], axis=-1)


def generate_leg_motion(spec: GaitSpec, model: RobotModel, curves: BaseCurves,
                        base_R: np.ndarray, base_p: np.ndarray, rate: float):
    """Joint angles, contact flags, and true foot positions on the sample grid."""
    n = base_p.shape[0]
    lateral = any(abs(c.joints[0].axis[0]) > 0.9 for c in model.chains)
    if not lateral and spec.shape != "straight" and spec.gait != "stand":
        raise ValidationError(
            "pitch-only legs support the straight shape only")

    flags = contact_schedule(spec, model.num_legs, n, rate)
    plans = plan_footholds(spec, model, curves, rate, n)
    targets = _foot_targets(plans, spec, n, rate)
    times = np.arange(n) / rate

    q = np.zeros((n, sum(len(c.joints) for c in model.chains)))
    col = 0
    for leg in range(model.num_legs):
        nq = len(model.chains[leg].joints)
        q[:, col:col + nq] = solve_leg_ik(model, leg, base_R, base_p,
                                          targets[:, leg], times)
        col += nq
    names = [j.name for c in model.chains for j in c.joints]
    return names, q, flags, targets


def clean_imu(curves: BaseCurves, times: np.ndarray, gravity: np.ndarray):
    """Noise-free body-frame gyro and specific-force samples."""
    yaw_rate = np.atleast_1d(curves.yaw_rate(times))
    gyro = np.zeros((len(times), 3))
    gyro[:, 2] = yaw_rate
    acc_w = np.atleast_1d(curves.acceleration(times)).reshape(len(times), 3)
    yaw = np.atleast_1d(curves.yaw(times))
    c, s = np.cos(yaw), np.sin(yaw)
    f = acc_w - gravity[None, :]
    accel = np.empty_like(f)
    accel[:, 0] = c * f[:, 0] + s * f[:, 1]
    accel[:, 1] = -s * f[:, 0] + c * f[:, 1]
    accel[:, 2] = f[:, 2]
    return gyro, accel


def integrate_states(curves: BaseCurves, gyro: np.ndarray, accel: np.ndarray,
                     dt: float, gravity: np.ndarray):
    """Zero-order-hold state recursion; this discrete trajectory IS the ground truth."""
    n = gyro.shape[0]
    R = np.empty((n + 1, 3, 3))
    p = np.empty((n + 1, 3))
    v = np.empty((n + 1, 3))
    R[0] = curves.rotation(0.0)
    p[0] = curves.position(0.0)
    v[0] = curves.velocity(0.0)
    for k in range(n):
        Ra = R[k] @ accel[k]
        p[k + 1] = p[k] + v[k] * dt + 0.5 * (gravity + Ra) * dt * dt
        v[k + 1] = v[k] + (gravity + Ra) * dt
        R[k + 1] = R[k] @ exp_so3(gyro[k] * dt)
    return R, p, v


def synthesize_imu(curves: BaseCurves, noise: MeasurementNoise, seed: int,
                   rate: float, duration: float):
    """Clean and measured IMU streams plus the true (possibly walking) biases."""
    n = int(round(duration * rate))
    dt = 1.0 / rate
    times = np.arange(n) * dt
    gyro_clean, accel_clean = clean_imu(curves, times, noise.imu.gravity)

    rng = np.random.default_rng(seed)
    gyro_white = rng.standard_normal((n, 3)) * (noise.imu.gyro_density / np.sqrt(dt))
    accel_white = rng.standard_normal((n, 3)) * (noise.imu.accel_density / np.sqrt(dt))
    bg = np.tile(noise.gyro_bias, (n, 1))
    ba = np.tile(noise.accel_bias, (n, 1))
    if noise.bias_random_walk:
        bg = bg + np.cumsum(rng.standard_normal((n, 3)), axis=0) * (
            noise.imu.gyro_bias_rw * np.sqrt(dt))
        ba = ba + np.cumsum(rng.standard_normal((n, 3)), axis=0) * (
            noise.imu.accel_bias_rw * np.sqrt(dt))
    gyro_meas = gyro_clean + bg + gyro_white
    accel_meas = accel_clean + ba + accel_white
    return times, gyro_clean, accel_clean, gyro_meas, accel_meas


def generate_log(spec: GaitSpec, model: RobotModel,
                 noise: MeasurementNoise | None = None,
                 imu_rate: float = 200.0, keyframe_rate: float = 50.0) -> TrajectoryLog:
    """Full synthetic log: ground truth, IMU, joint angles, and contact flags."""
    noise = noise or MeasurementNoise.zero()
    step = imu_rate / keyframe_rate
    if abs(step - round(step)) > 1e-9 or step < 1:
        raise ValidationError(
            f"keyframe rate {keyframe_rate} must divide the IMU rate {imu_rate}")
    step = int(round(step))

    curves = generate_base_trajectory(spec)
    dt = 1.0 / imu_rate
    times, gyro_clean, accel_clean, gyro_meas, accel_meas = synthesize_imu(
        curves, noise, spec.seed, imu_rate, spec.duration)
    n = len(times)
    R, p, v = integrate_states(curves, gyro_clean, accel_clean, dt, noise.imu.gravity)
    sample_times = np.arange(n + 1) * dt

    names, q_true, flags, targets = generate_leg_motion(
        spec, model, curves, R, p, imu_rate)

    rng = np.random.default_rng(spec.seed + 1)
    q_meas = q_true + rng.standard_normal(q_true.shape) * noise.encoder_sigma
    if noise.contact_flip_prob > 0.0:
        flips = rng.random(flags.shape) < noise.contact_flip_prob
        flags = flags ^ flips

    kf_idx = np.arange(0, n + 1, step)
    return TrajectoryLog(
        imu_times=times, gyro=gyro_meas, accel=accel_meas,
        sample_times=sample_times, joint_names=names, joint_angles=q_meas,
        contact_flags=flags, kf_times=sample_times[kf_idx],
        gt_rotations=R[kf_idx], gt_positions=p[kf_idx], gt_velocities=v[kf_idx],
        initial_velocity=v[0].copy(),
        true_gyro_bias=noise.gyro_bias.copy(), true_accel_bias=noise.accel_bias.copy(),
        imu_rate=imu_rate, keyframe_rate=keyframe_rate, duration=spec.duration,
        gravity=noise.imu.gravity.copy(), foot_positions=targets,
        meta={"spec": spec, "noise": noise})


def check_log_consistency(log: TrajectoryLog, model: RobotModel,
                          atol: float = 1e-6) -> float:
    """Max FK error of logged angles against logged foot positions at keyframes."""
    if log.foot_positions is None:
        raise ValidationError("log has no true foot positions")
    step = int(round(log.imu_rate / log.keyframe_rate))
    worst = 0.0
    for ki, k in enumerate(range(0, len(log.sample_times), step)):
        base = log.gt_pose(ki)
        col = 0
        for leg, chain in enumerate(model.chains):
            nq = len(chain.joints)
            foot = base * fk_chain(model, leg, log.joint_angles[k, col:col + nq])
            worst = max(worst, float(np.max(np.abs(foot.t - log.foot_positions[k, leg]))))
            col += nq
    return worst
