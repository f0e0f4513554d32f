"""On-manifold IMU preintegration between estimator keyframes.

A ``PreintegratedImu`` accumulator folds high-rate gyro/accelerometer samples
into a relative-motion triplet (dR, dv, dp) that is independent of the
absolute start state, with a first-order covariance recursion over the error
state [d_rot, d_vel, d_pos] and Jacobians of the deltas with respect to the
gyro/accel bias at the linearization point. Gravity never enters the deltas;
it is re-added by ``predict`` and the factor residual.

Per-sample update order matters and follows the delta definitions: the
position sum uses the pre-update rotation and velocity, the velocity sum the
pre-update rotation, and the rotation is right-multiplied last.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .factor_graph import Factor, Key
from .lie import (Pose, exp_so3, log_so3, right_jacobian_inv_so3,
                  right_jacobian_so3, skew)

# variance floor applied to the preintegrated covariance when building a
# factor, so zero-noise configurations still yield a usable weight
COV_FLOOR = 1e-12


@dataclass
class ImuBias:
    gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.gyro, self.accel])

    @staticmethod
    def from_vector(v: np.ndarray) -> "ImuBias":
        return ImuBias(np.array(v[:3], dtype=float), np.array(v[3:], dtype=float))


@dataclass
class ImuNoiseParams:
    """Continuous-time white-noise and random-walk densities plus gravity."""

    gyro_density: float = 1.7e-4       # rad/s/sqrt(Hz)
    accel_density: float = 2e-3        # m/s^2/sqrt(Hz)
    gyro_bias_rw: float = 1e-5         # rad/s^2/sqrt(Hz)
    accel_bias_rw: float = 1e-4        # m/s^3/sqrt(Hz)
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def __post_init__(self):
        for name in ("gyro_density", "accel_density", "gyro_bias_rw", "accel_bias_rw"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        self.gravity = np.asarray(self.gravity, dtype=float)


class PreintegratedImu:
    """Accumulator for the relative motion between two keyframes.

    With no samples integrated it is the identity element: dR = I, dv = dp = 0,
    zero covariance and zero bias Jacobians.
    """

    def __init__(self, noise: ImuNoiseParams, bias: ImuBias | None = None):
        self.noise = noise
        self.bias_lin = bias or ImuBias()
        self.dR = np.eye(3)
        self.dv = np.zeros(3)
        self.dp = np.zeros(3)
        self.dt = 0.0
        self.cov = np.zeros((9, 9))
        self.J_r_bg = np.zeros((3, 3))
        self.J_v_bg = np.zeros((3, 3))
        self.J_v_ba = np.zeros((3, 3))
        self.J_p_bg = np.zeros((3, 3))
        self.J_p_ba = np.zeros((3, 3))

    def integrate(self, gyro: np.ndarray, accel: np.ndarray, dt: float) -> "PreintegratedImu":
        """Fold in one sample held constant over dt (zero-order hold)."""
        if dt <= 0:
            raise ValidationError(f"sample interval must be positive, got {dt}")
        w = np.asarray(gyro, float) - self.bias_lin.gyro
        a = np.asarray(accel, float) - self.bias_lin.accel
        dR_inc = exp_so3(w * dt)
        Ra = self.dR @ a
        A_skew = self.dR @ skew(a)

        # position and velocity sums use the pre-update dR/dv
        self.dp = self.dp + self.dv * dt + 0.5 * Ra * dt * dt
        self.J_p_bg = self.J_p_bg + self.J_v_bg * dt - 0.5 * A_skew @ self.J_r_bg * dt * dt
        self.J_p_ba = self.J_p_ba + self.J_v_ba * dt - 0.5 * self.dR * dt * dt

        self.dv = self.dv + Ra * dt
        self.J_v_bg = self.J_v_bg - A_skew @ self.J_r_bg * dt
        self.J_v_ba = self.J_v_ba - self.dR * dt

        # error-state transition for [d_rot, d_vel, d_pos]
        A = np.eye(9)
        A[0:3, 0:3] = dR_inc.T
        A[3:6, 0:3] = -A_skew * dt
        A[6:9, 0:3] = -0.5 * A_skew * dt * dt
        A[6:9, 3:6] = np.eye(3) * dt

        Jr = right_jacobian_so3(w * dt)
        sg2 = self.noise.gyro_density**2 / dt
        sa2 = self.noise.accel_density**2 / dt
        Bg = np.zeros((9, 3))
        Bg[0:3, :] = Jr * dt
        Ba = np.zeros((9, 3))
        Ba[3:6, :] = self.dR * dt
        Ba[6:9, :] = 0.5 * self.dR * dt * dt
        self.cov = A @ self.cov @ A.T + sg2 * (Bg @ Bg.T) + sa2 * (Ba @ Ba.T)

        self.J_r_bg = dR_inc.T @ self.J_r_bg - Jr * dt
        self.dR = self.dR @ dR_inc
        self.dt += dt
        return self

    def corrected_deltas(self, bias: ImuBias):
        """Deltas corrected to first order for the deviation from the linearization bias."""
        dbg = bias.gyro - self.bias_lin.gyro
        dba = bias.accel - self.bias_lin.accel
        dR = self.dR @ exp_so3(self.J_r_bg @ dbg)
        dv = self.dv + self.J_v_bg @ dbg + self.J_v_ba @ dba
        dp = self.dp + self.J_p_bg @ dbg + self.J_p_ba @ dba
        return dR, dv, dp

    def predict(self, pose_i: Pose, vel_i: np.ndarray, bias: ImuBias):
        """Propagate state i across the interval; inverse of the residual equations."""
        g = self.noise.gravity
        dR, dv, dp = self.corrected_deltas(bias)
        Ri, pi = pose_i.R, pose_i.t
        Rj = Ri @ dR
        vj = vel_i + g * self.dt + Ri @ dv
        pj = pi + vel_i * self.dt + 0.5 * g * self.dt**2 + Ri @ dp
        return Pose(Rj, pj), vj

    def residual(self, pose_i: Pose, vel_i: np.ndarray,
                 pose_j: Pose, vel_j: np.ndarray, bias: ImuBias) -> np.ndarray:
        """9-vector [rot, vel, pos] error of states i, j against the stored deltas."""
        g = self.noise.gravity
        dR, dv, dp = self.corrected_deltas(bias)
        Ri_T = pose_i.R.T
        r_rot = log_so3(dR.T @ (Ri_T @ pose_j.R))
        r_vel = Ri_T @ (vel_j - vel_i - g * self.dt) - dv
        r_pos = Ri_T @ (pose_j.t - pose_i.t - vel_i * self.dt - 0.5 * g * self.dt**2) - dp
        return np.concatenate([r_rot, r_vel, r_pos])


class PreintegratedImuFactor(Factor):
    """Binary motion factor over (pose_i, vel_i, pose_j, vel_j, bias).

    The covariance is the propagated 9x9 preintegration covariance with a
    small diagonal floor. Jacobians are analytic.
    """

    def __init__(self, key_pose_i: Key, key_vel_i: Key, key_pose_j: Key,
                 key_vel_j: Key, key_bias: Key, preint: PreintegratedImu):
        cov = 0.5 * (preint.cov + preint.cov.T) + COV_FLOOR * np.eye(9)
        super().__init__([key_pose_i, key_vel_i, key_pose_j, key_vel_j, key_bias], cov)
        self.preint = preint

    def error(self, vals):
        pose_i, vel_i, pose_j, vel_j, bias_vec = vals
        return self.preint.residual(pose_i, vel_i, pose_j, vel_j,
                                    ImuBias.from_vector(bias_vec))

    def jacobians(self, vals):
        pose_i, vel_i, pose_j, vel_j, bias_vec = vals
        pre = self.preint
        bias = ImuBias.from_vector(bias_vec)
        g = pre.noise.gravity
        dt = pre.dt
        Ri, Rj = pose_i.R, pose_j.R
        Ri_T = Ri.T
        dbg = bias.gyro - pre.bias_lin.gyro

        dR, _, _ = pre.corrected_deltas(bias)
        r_rot = log_so3(dR.T @ (Ri_T @ Rj))
        Jr_inv = right_jacobian_inv_so3(r_rot)
        E = exp_so3(r_rot)

        u_vel = Ri_T @ (vel_j - vel_i - g * dt)
        u_pos = Ri_T @ (pose_j.t - pose_i.t - vel_i * dt - 0.5 * g * dt**2)

        J_pose_i = np.zeros((9, 6))
        J_pose_i[0:3, 0:3] = -Jr_inv @ (Rj.T @ Ri)
        J_pose_i[3:6, 0:3] = skew(u_vel)
        J_pose_i[6:9, 0:3] = skew(u_pos)
        J_pose_i[6:9, 3:6] = -Ri_T

        J_vel_i = np.zeros((9, 3))
        J_vel_i[3:6, :] = -Ri_T
        J_vel_i[6:9, :] = -Ri_T * dt

        J_pose_j = np.zeros((9, 6))
        J_pose_j[0:3, 0:3] = Jr_inv
        J_pose_j[6:9, 3:6] = Ri_T

        J_vel_j = np.zeros((9, 3))
        J_vel_j[3:6, :] = Ri_T

        J_bias = np.zeros((9, 6))
        J_bias[0:3, 0:3] = -Jr_inv @ E.T @ right_jacobian_so3(pre.J_r_bg @ dbg) @ pre.J_r_bg
        J_bias[3:6, 0:3] = -pre.J_v_bg
        J_bias[3:6, 3:6] = -pre.J_v_ba
        J_bias[6:9, 0:3] = -pre.J_p_bg
        J_bias[6:9, 3:6] = -pre.J_p_ba
        return [J_pose_i, J_vel_i, J_pose_j, J_vel_j, J_bias]
