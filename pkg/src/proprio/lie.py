"""SO(3)/SE(3) operations used by all factors and retractions.

Conventions:
  - rotations are plain 3x3 numpy arrays (det +1, orthonormal),
  - twists are 6-vectors ordered [angular, linear],
  - pose tangents follow the same ordering: [rotation, translation].

Below ``SMALL_ANGLE`` every map switches to its series expansion to avoid
catastrophic cancellation near zero.
"""

from __future__ import annotations

import math

import numpy as np

SMALL_ANGLE = 1e-8

# angle above which log_so3 switches to quaternion-based axis extraction
_NEAR_PI = np.pi - 1e-4


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def exp_so3(w: np.ndarray) -> np.ndarray:
    """Exponential map so(3) -> SO(3) (Rodrigues)."""
    theta = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    W = skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * (W @ W)
    s, c = math.sin(theta), math.cos(theta)
    return np.eye(3) + (s / theta) * W + ((1.0 - c) / theta**2) * (W @ W)


def _quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Unit quaternion [w, x, y, z] via the trace-branching method (stable near pi)."""
    t = np.trace(R)
    if t > 0.0:
        s = np.sqrt(t + 1.0) * 2.0
        return np.array([0.25 * s,
                         (R[2, 1] - R[1, 2]) / s,
                         (R[0, 2] - R[2, 0]) / s,
                         (R[1, 0] - R[0, 1]) / s])
    i = int(np.argmax(np.diag(R)))
    if i == 0:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        return np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                         (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    if i == 1:
        s = np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2]) * 2.0
        return np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                         0.25 * s, (R[1, 2] + R[2, 1]) / s])
    s = np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2]) * 2.0
    return np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                     (R[1, 2] + R[2, 1]) / s, 0.25 * s])


def log_so3(R: np.ndarray) -> np.ndarray:
    """Logarithm map SO(3) -> so(3) as a rotation vector.

    Uses the standard form away from the singularities; near angle pi the
    axis is extracted from a quaternion, which stays well-conditioned there.
    """
    cos_theta = 0.5 * (R[0, 0] + R[1, 1] + R[2, 2] - 1.0)
    theta = math.acos(min(1.0, max(-1.0, cos_theta)))
    if theta < SMALL_ANGLE:
        return 0.5 * vee(R - R.T)
    if theta > _NEAR_PI:
        q = _quat_from_matrix(R)
        vn = np.linalg.norm(q[1:])
        angle = 2.0 * math.atan2(vn, q[0])
        return (angle / vn) * q[1:]
    return (theta / (2.0 * math.sin(theta))) * vee(R - R.T)


def right_jacobian_so3(w: np.ndarray) -> np.ndarray:
    """Right Jacobian of exp_so3: exp(w + d) ~ exp(w) exp(Jr(w) d)."""
    theta = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    W = skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * W + (W @ W) / 6.0
    t2 = theta * theta
    return (np.eye(3)
            - ((1.0 - math.cos(theta)) / t2) * W
            + ((theta - math.sin(theta)) / (t2 * theta)) * (W @ W))


def right_jacobian_inv_so3(w: np.ndarray) -> np.ndarray:
    theta = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    W = skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + (W @ W) / 12.0
    t2 = theta * theta
    coeff = 1.0 / t2 - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))
    return np.eye(3) + 0.5 * W + coeff * (W @ W)


def _se3_V(w: np.ndarray) -> np.ndarray:
    """Translation mixer of exp_se3: p = V(w) v."""
    theta = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    W = skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + (W @ W) / 6.0
    t2 = theta * theta
    return (np.eye(3)
            + ((1.0 - math.cos(theta)) / t2) * W
            + ((theta - math.sin(theta)) / (t2 * theta)) * (W @ W))


def _se3_V_inv(w: np.ndarray) -> np.ndarray:
    theta = math.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    W = skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * W + (W @ W) / 12.0
    t2 = theta * theta
    coeff = 1.0 / t2 - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))
    return np.eye(3) - 0.5 * W + coeff * (W @ W)


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Cheap Gram-Schmidt re-orthonormalization; keeps long solver runs from drifting."""
    b0 = R[:, 0]
    b0 = b0 / math.sqrt(b0 @ b0)
    b1 = R[:, 1] - (b0 @ R[:, 1]) * b0
    b1 = b1 / math.sqrt(b1 @ b1)
    b2 = np.array([b0[1] * b1[2] - b0[2] * b1[1],
                   b0[2] * b1[0] - b0[0] * b1[2],
                   b0[0] * b1[1] - b0[1] * b1[0]])
    out = np.empty((3, 3))
    out[:, 0] = b0
    out[:, 1] = b1
    out[:, 2] = b2
    return out


class Pose:
    """Rigid transform in SE(3): x_world = R @ x_local + t."""

    __slots__ = ("R", "t")

    def __init__(self, R: np.ndarray, t: np.ndarray):
        self.R = np.asarray(R, dtype=float)
        self.t = np.asarray(t, dtype=float)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def __mul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        Rt = self.R.T
        return Pose(Rt, -Rt @ self.t)

    def transform(self, p: np.ndarray) -> np.ndarray:
        return self.R @ p + self.t

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    @staticmethod
    def from_matrix(T: np.ndarray) -> "Pose":
        return Pose(np.array(T[:3, :3]), np.array(T[:3, 3]))

    def retract(self, delta: np.ndarray) -> "Pose":
        """Manifold update with tangent [d_rot, d_trans]; rotation is re-orthonormalized."""
        return Pose(orthonormalize(self.R @ exp_so3(delta[:3])), self.t + delta[3:])

    def retract_fast(self, delta: np.ndarray) -> "Pose":
        """Retraction without re-orthonormalization, for finite-difference probes."""
        return Pose(self.R @ exp_so3(delta[:3]), self.t + delta[3:])

    def copy(self) -> "Pose":
        return Pose(self.R.copy(), self.t.copy())

    def __repr__(self) -> str:
        return f"Pose(rotvec={log_so3(self.R)}, t={self.t})"


def exp_se3(xi: np.ndarray) -> Pose:
    """Exponential map se(3) -> SE(3), twist ordered [angular, linear]."""
    w, v = xi[:3], xi[3:]
    return Pose(exp_so3(w), _se3_V(w) @ v)


def log_se3(T: Pose) -> np.ndarray:
    w = log_so3(T.R)
    return np.concatenate([w, _se3_V_inv(w) @ T.t])


def adjoint_se3(T: Pose) -> np.ndarray:
    """Adjoint mapping twists between frames: exp(Ad_T xi) = T exp(xi) T^-1."""
    ad = np.zeros((6, 6))
    ad[:3, :3] = T.R
    ad[3:, :3] = skew(T.t) @ T.R
    ad[3:, 3:] = T.R
    return ad


def _dVinv_t_dw(w: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Derivative of V_inv(w) @ t with respect to w (3x3)."""
    theta2 = w @ w
    theta = math.sqrt(theta2)
    Wsq_t = w * (w @ t) - t * theta2  # [w]x [w]x t
    if theta < 1e-4:
        # c(theta) = 1/12 + theta^2/720 + ..., c'(theta)/theta -> 1/360
        c = 1.0 / 12.0 + theta2 / 720.0
        c_over = 1.0 / 360.0
    else:
        s, co = math.sin(theta), math.cos(theta)
        f = (1.0 + co) / (2.0 * theta * s)
        c = 1.0 / theta2 - f
        fp = (-s * (2.0 * theta * s) - (1.0 + co) * (2.0 * s + 2.0 * theta * co)) \
            / (2.0 * theta * s) ** 2
        c_over = (-2.0 / (theta2 * theta) - fp) / theta
    d_Wsq_t = (w @ t) * np.eye(3) + np.outer(w, t) - 2.0 * np.outer(t, w)
    return 0.5 * skew(t) + c_over * np.outer(Wsq_t, w) + c * d_Wsq_t


def se3_log_binary_jacobians(A: Pose, P: Pose, C: Pose):
    """Residual and Jacobians of r = log_se3(A * P^-1 * C).

    Jacobians are with respect to the decoupled tangents of the parent P and
    child C (rotation perturbed on the right, translation additive). This is
    the shared form of the per-joint FK factor, the lumped base-to-foot
    factor, and the flat-foot contact factor.
    """
    M = A.R @ P.R.T
    RB = M @ C.R
    tB = M @ (C.t - P.t) + A.t
    w = log_so3(RB)
    Vi = _se3_V_inv(w)
    r = np.concatenate([w, Vi @ tB])

    Jri = right_jacobian_inv_so3(w)
    D = _dVinv_t_dw(w, tB)

    JC = np.zeros((6, 6))
    JC[0:3, 0:3] = Jri
    JC[3:6, 0:3] = D @ Jri
    JC[3:6, 3:6] = Vi @ M

    u = P.R.T @ (C.t - P.t)
    Jw_P = -Jri @ (C.R.T @ P.R)
    JP = np.zeros((6, 6))
    JP[0:3, 0:3] = Jw_P
    JP[3:6, 0:3] = Vi @ (A.R @ skew(u)) + D @ Jw_P
    JP[3:6, 3:6] = -Vi @ M
    return r, JP, JC
