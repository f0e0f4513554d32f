"""Line-oriented file formats for logs, trajectories, and reports.

A trajectory log is a directory of five text files:

    imu.txt          t wx wy wz ax ay az
    joints.txt       t name:angle ...        (fixed joint ordering)
    contacts.txt     t f1 f2 ... fN          (0/1 per leg)
    groundtruth.txt  t x y z qx qy qz qw     (TUM format, keyframe rate)
    meta.txt         key=value               (spec, seed, rates, noise)

All floats are written with 17 significant digits so reruns with the same
seed are byte-identical.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.spatial.transform import Rotation as ScipyRotation

from .errors import ValidationError
from .imu import ImuNoiseParams
from .lie import Pose
from .synth import GaitSpec, MeasurementNoise, TrajectoryLog

LOG_FILES = ("imu.txt", "joints.txt", "contacts.txt", "groundtruth.txt", "meta.txt")


def _f(x: float) -> str:
    return f"{float(x):.17g}"


def _vec(v) -> str:
    return " ".join(_f(x) for x in v)


def write_tum(path: str, times: np.ndarray, poses: list[Pose]):
    with open(path, "w") as fh:
        for t, pose in zip(times, poses):
            q = ScipyRotation.from_matrix(pose.R).as_quat()  # x, y, z, w
            fh.write(f"{_f(t)} {_vec(pose.t)} {_vec(q)}\n")


def read_tum(path: str):
    times, poses = [], []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise ValidationError(f"{path}: expected 8 columns, got {len(parts)}")
            vals = [float(p) for p in parts]
            times.append(vals[0])
            R = ScipyRotation.from_quat(vals[4:8]).as_matrix()
            poses.append(Pose(R, np.array(vals[1:4])))
    if not times:
        raise ValidationError(f"{path}: empty trajectory file")
    return np.array(times), poses


def write_keyvalues(path: str, entries: dict):
    with open(path, "w") as fh:
        for key, value in entries.items():
            if isinstance(value, float):
                value = _f(value)
            elif isinstance(value, np.ndarray):
                value = _vec(value)
            fh.write(f"{key}={value}\n")


def read_keyvalues(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def write_log(log: TrajectoryLog, out_dir: str):
    """Write the five-file log directory."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "imu.txt"), "w") as fh:
        for t, w, a in zip(log.imu_times, log.gyro, log.accel):
            fh.write(f"{_f(t)} {_vec(w)} {_vec(a)}\n")
    with open(os.path.join(out_dir, "joints.txt"), "w") as fh:
        for t, q in zip(log.sample_times, log.joint_angles):
            cols = " ".join(f"{n}:{_f(v)}" for n, v in zip(log.joint_names, q))
            fh.write(f"{_f(t)} {cols}\n")
    with open(os.path.join(out_dir, "contacts.txt"), "w") as fh:
        for t, flags in zip(log.sample_times, log.contact_flags):
            fh.write(f"{_f(t)} " + " ".join("1" if f else "0" for f in flags) + "\n")
    poses = [log.gt_pose(k) for k in range(log.num_keyframes)]
    write_tum(os.path.join(out_dir, "groundtruth.txt"), log.kf_times, poses)

    meta = {
        "imu_rate": log.imu_rate,
        "keyframe_rate": log.keyframe_rate,
        "duration": log.duration,
        "gravity": log.gravity,
        "initial_velocity": log.initial_velocity,
        "true_gyro_bias": log.true_gyro_bias,
        "true_accel_bias": log.true_accel_bias,
    }
    spec = log.meta.get("spec")
    if spec is not None:
        for name in ("gait", "shape", "stance_duration", "swing_duration",
                     "step_length", "step_height", "base_height", "duration", "seed"):
            meta[f"gait.{name}"] = getattr(spec, name)
    noise = log.meta.get("noise")
    if noise is not None:
        meta["noise.gyro_density"] = noise.imu.gyro_density
        meta["noise.accel_density"] = noise.imu.accel_density
        meta["noise.encoder_sigma"] = noise.encoder_sigma
        meta["noise.contact_flip_prob"] = noise.contact_flip_prob
    write_keyvalues(os.path.join(out_dir, "meta.txt"), meta)


def read_log(log_dir: str) -> TrajectoryLog:
    """Load a log directory; ground-truth velocities are not stored on disk."""
    for name in LOG_FILES:
        if not os.path.exists(os.path.join(log_dir, name)):
            raise ValidationError(f"missing log file {os.path.join(log_dir, name)}")
    meta = read_keyvalues(os.path.join(log_dir, "meta.txt"))

    imu = np.loadtxt(os.path.join(log_dir, "imu.txt"), ndmin=2)
    if imu.shape[1] != 7:
        raise ValidationError("imu.txt must have 7 columns")

    sample_times, names, angles = [], None, []
    with open(os.path.join(log_dir, "joints.txt")) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            sample_times.append(float(parts[0]))
            row_names, row_vals = [], []
            for tok in parts[1:]:
                name, _, val = tok.partition(":")
                row_names.append(name)
                try:
                    row_vals.append(float(val))
                except ValueError as e:
                    raise ValidationError(f"joints.txt: malformed entry {tok!r}") from e
            if names is None:
                names = row_names
            elif names != row_names:
                raise ValidationError("joints.txt: inconsistent joint ordering")
            angles.append(row_vals)
    if names is None:
        raise ValidationError("joints.txt is empty")

    contacts = np.loadtxt(os.path.join(log_dir, "contacts.txt"), ndmin=2)
    kf_times, poses = read_tum(os.path.join(log_dir, "groundtruth.txt"))

    def meta_vec(key):
        return np.array([float(x) for x in meta[key].split()])

    return TrajectoryLog(
        imu_times=imu[:, 0], gyro=imu[:, 1:4], accel=imu[:, 4:7],
        sample_times=np.array(sample_times), joint_names=names,
        joint_angles=np.array(angles),
        contact_flags=contacts[:, 1:].astype(bool),
        kf_times=kf_times,
        gt_rotations=np.array([p.R for p in poses]),
        gt_positions=np.array([p.t for p in poses]),
        gt_velocities=None,
        initial_velocity=meta_vec("initial_velocity"),
        true_gyro_bias=meta_vec("true_gyro_bias"),
        true_accel_bias=meta_vec("true_accel_bias"),
        imu_rate=float(meta["imu_rate"]),
        keyframe_rate=float(meta["keyframe_rate"]),
        duration=float(meta["duration"]),
        gravity=meta_vec("gravity"),
        meta=meta)


def gait_spec_from_mapping(entries: dict) -> GaitSpec:
    """Build a GaitSpec from string key=value entries (spec files, manifests).

    Accepts either swing_duration or the convenience key duty_factor.
    """
    kwargs = {}
    floats = ("stance_duration", "swing_duration", "step_length", "step_height",
              "base_height", "heading_deg", "turn_radius", "zigzag_angle_deg",
              "zigzag_blend_frac", "duration")
    for key in floats:
        if key in entries:
            kwargs[key] = float(entries[key])
    for key in ("gait", "shape"):
        if key in entries:
            kwargs[key] = str(entries[key])
    for key in ("zigzag_segments", "seed"):
        if key in entries:
            kwargs[key] = int(entries[key])
    if "duty_factor" in entries:
        duty = float(entries["duty_factor"])
        if not 0.0 < duty < 1.0:
            raise ValidationError(f"duty_factor must be in (0, 1), got {duty}")
        stance = kwargs.get("stance_duration", 0.3)
        kwargs["swing_duration"] = stance * (1.0 - duty) / duty
    return GaitSpec(**kwargs)


def noise_from_mapping(entries: dict) -> MeasurementNoise:
    imu_kwargs = {}
    for key in ("gyro_density", "accel_density", "gyro_bias_rw", "accel_bias_rw"):
        if key in entries:
            imu_kwargs[key] = float(entries[key])
    if "gravity" in entries:
        imu_kwargs["gravity"] = np.array([float(x) for x in entries["gravity"].split()])
    kwargs = {"imu": ImuNoiseParams(**imu_kwargs)}
    for key in ("encoder_sigma", "contact_flip_prob"):
        if key in entries:
            kwargs[key] = float(entries[key])
    for key in ("gyro_bias", "accel_bias"):
        if key in entries:
            kwargs[key] = np.array([float(x) for x in entries[key].split()])
    if "bias_random_walk" in entries:
        kwargs["bias_random_walk"] = entries["bias_random_walk"].lower() in ("1", "true", "yes")
    return MeasurementNoise(**kwargs)
