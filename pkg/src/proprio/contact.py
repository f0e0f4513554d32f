"""Stance-phase segmentation and contact-point landmark factors.

A stance phase opens once ``debounce_on`` consecutive samples report contact
(backdated to the first sample of the run, so clean data is segmented with
zero lag) and closes after ``debounce_off`` consecutive off samples. Each
surviving phase owns a fresh landmark: a world point for point feet or a full
world pose for flat feet. Data association is phase identity; there is no
re-association between phases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .factor_graph import Factor, Key
from .lie import Pose, log_se3, se3_log_binary_jacobians


@dataclass
class ContactConfig:
    debounce_on: int = 2
    debounce_off: int = 2
    min_phase_keyframes: int = 2


@dataclass
class ContactPhase:
    leg: int
    start_kf: int      # first keyframe index inside the phase
    end_kf: int        # last keyframe index inside the phase (inclusive)
    landmark: int

    def keyframes(self):
        return range(self.start_kf, self.end_kf + 1)

    def __contains__(self, k: int) -> bool:
        return self.start_kf <= k <= self.end_kf


def debounce(flags: np.ndarray, on: int, off: int) -> np.ndarray:
    """Hysteresis filter over one leg's boolean contact stream."""
    out = np.zeros(len(flags), dtype=bool)
    state = False
    run_start = 0
    run = 0
    for i, f in enumerate(flags):
        if f != state:
            if run == 0:
                run_start = i
            run += 1
            if (not state and run >= on) or (state and run >= off):
                state = not state
                out[run_start:i + 1] = state
                run = 0
        else:
            run = 0
        out[i] = state
    return out


def segment_phases(sample_times: np.ndarray, flags: np.ndarray,
                   keyframe_times: np.ndarray,
                   config: ContactConfig | None = None) -> list[ContactPhase]:
    """Debounce per leg, sample the state at keyframes, and group into phases.

    Returns all phases ordered by (leg, start); landmark ids are assigned in
    that order, one fresh id per phase.
    """
    config = config or ContactConfig()
    sample_times = np.asarray(sample_times, dtype=float)
    flags = np.asarray(flags)
    if sample_times.size == 0:
        raise ValidationError("empty contact sample stream")
    if flags.ndim != 2 or flags.shape[0] != sample_times.shape[0]:
        raise ValidationError("contact flags must be (num_samples, num_legs)")

    phases = []
    landmark = 0
    # nearest sample index for each keyframe
    idx = np.searchsorted(sample_times, keyframe_times)
    idx = np.clip(idx, 0, len(sample_times) - 1)
    left = np.clip(idx - 1, 0, len(sample_times) - 1)
    use_left = np.abs(sample_times[left] - keyframe_times) < np.abs(sample_times[idx] - keyframe_times)
    idx = np.where(use_left, left, idx)

    for leg in range(flags.shape[1]):
        clean = debounce(flags[:, leg].astype(bool),
                         config.debounce_on, config.debounce_off)
        kf_state = clean[idx]
        start = None
        for k, s in enumerate(kf_state):
            if s and start is None:
                start = k
            elif not s and start is not None:
                if k - start >= config.min_phase_keyframes:
                    phases.append(ContactPhase(leg, start, k - 1, landmark))
                    landmark += 1
                start = None
        if start is not None and len(kf_state) - start >= config.min_phase_keyframes:
            phases.append(ContactPhase(leg, start, len(kf_state) - 1, landmark))
            landmark += 1
    return phases


def contact_factor_error(foot_pose: Pose, landmark, foot_type: str) -> np.ndarray:
    """Residual tying the foot frame to its phase landmark.

    Point feet constrain the world translation only; flat feet constrain the
    full pose against a landmark pose.
    """
    if foot_type == "point":
        return foot_pose.t - landmark
    if foot_type == "flat":
        return log_se3(landmark.inverse() * foot_pose)
    raise ValidationError(f"unknown foot type {foot_type!r}")


class PointContactFactor(Factor):
    """foot world position minus landmark point; 3-vector residual."""

    def __init__(self, key_foot: Key, key_point: Key, cov: np.ndarray):
        super().__init__([key_foot, key_point], cov)

    def error(self, vals):
        foot, point = vals
        return foot.t - point

    def jacobians(self, vals):
        foot, _ = vals
        Jf = np.zeros((3, 6))
        Jf[:, 3:] = np.eye(3)
        return [Jf, -np.eye(3)]


class FlatContactFactor(Factor):
    """Full-pose deviation of the foot from a landmark pose; 6-vector residual."""

    _IDENTITY = Pose.identity()

    def __init__(self, key_foot: Key, key_pose: Key, cov: np.ndarray):
        super().__init__([key_foot, key_pose], cov)

    def error(self, vals):
        foot, landmark = vals
        return log_se3(landmark.inverse() * foot)

    def jacobians(self, vals):
        foot, landmark = vals
        _, JP, JC = se3_log_binary_jacobians(self._IDENTITY, landmark, foot)
        return [JC, JP]
