"""Trajectory estimation: graph assembly, initialization, and solving.

Two graph structures share the same pipeline:

  proposed  - per in-contact leg, a chain of per-joint pose factors with
              intermediate link-pose variables down to the foot, plus a
              contact factor tying the foot to its stance-phase landmark.
  baseline  - one lumped base-to-foot factor per in-contact leg with a single
              composite noise model (the classic proprioceptive-filter
              assumption recast as a factor), no intermediate link variables.

Swing legs contribute no kinematic factors: without contact anchoring their
link poses would be unconstrained. A single bias pair spans the whole
trajectory unless ``bias_chain`` links per-keyframe biases with a random walk.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .contact import (ContactConfig, ContactPhase, FlatContactFactor,
                      PointContactFactor, segment_phases)
from .errors import ValidationError
from .factor_graph import (Factor, FactorGraph, Key, LMConfig, LMReport,
                           RelativePoseFactor, Values, lm_optimize)
from .imu import ImuBias, ImuNoiseParams, PreintegratedImu, PreintegratedImuFactor
from .lie import Pose, log_se3, log_so3, right_jacobian_inv_so3
from .robot import (JointFkFactor, RobotModel, chain_composed_covariance,
                    fk_chain, fk_frames)
from .synth import TrajectoryLog


@dataclass
class EstimatorConfig:
    keyframe_rate: float = 50.0
    imu_noise: ImuNoiseParams = field(default_factory=ImuNoiseParams)
    fk_sigma_rot: float = 0.002        # rad, per-joint factor
    fk_sigma_trans: float = 0.001      # m, per-joint factor
    cp_sigma: float = 0.01             # m, contact point
    cp_sigma_rot: float = 0.05         # rad, flat-foot contact orientation
    prior_pose_sigma: float = 1e-4     # anchors the 4 gauge freedoms
    prior_vel_sigma: float = 0.1
    prior_bias_sigma: float = 0.05
    mode: str = "proposed"             # 'proposed' | 'baseline'
    contact: ContactConfig = field(default_factory=ContactConfig)
    bias_chain: bool = False
    baseline_sigma_rot: float = 0.004  # lumped base->foot factor
    baseline_sigma_trans: float = 0.003
    baseline_composed_sigma: bool = False
    lm: LMConfig = field(default_factory=LMConfig)
    # re-preintegrate at the estimated bias and re-solve when the estimate
    # moves this far from the preintegration linearization point; keeps the
    # first-order bias correction accurate for large biases
    bias_relin_threshold: float = 5e-3
    max_bias_relin: int = 2

    def __post_init__(self):
        if self.mode not in ("proposed", "baseline"):
            raise ValidationError(f"mode must be proposed or baseline, got {self.mode!r}")
        for name in ("fk_sigma_rot", "fk_sigma_trans", "cp_sigma", "cp_sigma_rot",
                     "prior_pose_sigma", "prior_vel_sigma", "prior_bias_sigma",
                     "baseline_sigma_rot", "baseline_sigma_trans"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be > 0")
        if self.keyframe_rate <= 0:
            raise ValidationError("keyframe_rate must be > 0")


@dataclass
class RobotState:
    pose: Pose
    velocity: np.ndarray
    bias: ImuBias


@dataclass
class EstimatedTrajectory:
    times: np.ndarray
    states: list[RobotState]
    landmarks: dict
    final_objective: float
    report: LMReport

    @property
    def converged(self) -> bool:
        return self.report.converged

    def poses(self) -> list[Pose]:
        return [s.pose for s in self.states]


class StatePriorFactor(Factor):
    """15-dim prior on the first state: pose, velocity, and bias together."""

    def __init__(self, key_pose: Key, key_vel: Key, key_bias: Key,
                 pose: Pose, vel: np.ndarray, bias: np.ndarray, cov: np.ndarray):
        super().__init__([key_pose, key_vel, key_bias], cov)
        self.pose = pose
        self.vel = vel
        self.bias = bias

    def error(self, vals):
        p, v, b = vals
        return np.concatenate([
            log_so3(self.pose.R.T @ p.R), p.t - self.pose.t,
            v - self.vel, b - self.bias])

    def jacobians(self, vals):
        p, _, _ = vals
        Jp = np.zeros((15, 6))
        Jp[0:3, 0:3] = right_jacobian_inv_so3(log_so3(self.pose.R.T @ p.R))
        Jp[3:6, 3:6] = np.eye(3)
        Jv = np.zeros((15, 3))
        Jv[6:9, :] = np.eye(3)
        Jb = np.zeros((15, 6))
        Jb[9:15, :] = np.eye(6)
        return [Jp, Jv, Jb]


class BiasWalkFactor(Factor):
    """Random-walk link between consecutive bias variables (bias_chain mode)."""

    def __init__(self, key_i: Key, key_j: Key, cov: np.ndarray):
        super().__init__([key_i, key_j], cov)

    def error(self, vals):
        bi, bj = vals
        return bj - bi

    def jacobians(self, vals):
        return [-np.eye(6), np.eye(6)]


def baseline_fk_factor_error(base_pose: Pose, foot_pose: Pose,
                             model: RobotModel, leg: int, angles) -> np.ndarray:
    """Lumped base-to-foot residual used by the baseline graph."""
    return log_se3(fk_chain(model, leg, angles).inverse()
                   * (base_pose.inverse() * foot_pose))


def _diag_cov(sig_rot: float, sig_trans: float) -> np.ndarray:
    return np.diag([sig_rot**2] * 3 + [sig_trans**2] * 3)


class _Problem:
    """Everything derived from one (log, model, config) triple."""

    def __init__(self, log: TrajectoryLog, model: RobotModel, config: EstimatorConfig,
                 bias_lin: ImuBias | None = None):
        self.log = log
        self.model = model
        self.config = config
        self.bias_lin = bias_lin or ImuBias()

        if log.num_keyframes < 2:
            raise ValidationError("log must contain at least two keyframes")
        if abs(log.keyframe_rate - config.keyframe_rate) > 1e-9:
            raise ValidationError(
                f"config keyframe rate {config.keyframe_rate} does not match "
                f"log keyframe rate {log.keyframe_rate}")
        if config.keyframe_rate > log.imu_rate:
            raise ValidationError("keyframe rate must not exceed the IMU rate")

        model_joints = [j.name for c in model.chains for j in c.joints]
        if model_joints != list(log.joint_names):
            raise ValidationError(
                f"joint names in log do not match model chains: "
                f"{list(log.joint_names)} vs {model_joints}")

        self.step = int(round(log.imu_rate / log.keyframe_rate))
        self.K = log.num_keyframes
        self.phases = segment_phases(log.sample_times, log.contact_flags,
                                     log.kf_times, config.contact)
        if not self.phases:
            raise ValidationError(
                "no contact phases anywhere: graph would be gauge-deficient")
        # phase lookup per (keyframe, leg)
        self.phase_at = np.full((self.K, model.num_legs), -1, dtype=int)
        for idx, ph in enumerate(self.phases):
            self.phase_at[ph.start_kf:ph.end_kf + 1, ph.leg] = idx

        # per-leg joint angle columns
        self.leg_cols = []
        col = 0
        for chain in model.chains:
            self.leg_cols.append(slice(col, col + len(chain.joints)))
            col += len(chain.joints)

        self.preints = self._preintegrate()

    def _preintegrate(self) -> list[PreintegratedImu]:
        log, cfg = self.log, self.config
        dt = 1.0 / log.imu_rate
        out = []
        for i in range(self.K - 1):
            pre = PreintegratedImu(cfg.imu_noise,
                                   ImuBias(self.bias_lin.gyro.copy(),
                                           self.bias_lin.accel.copy()))
            for s in range(i * self.step, (i + 1) * self.step):
                pre.integrate(log.gyro[s], log.accel[s], dt)
            out.append(pre)
        return out

    def angles_at(self, k: int, leg: int) -> np.ndarray:
        return self.log.joint_angles[k * self.step, self.leg_cols[leg]]

    def bias_key(self, k: int) -> Key:
        return Key("bias", k if self.config.bias_chain else 0)

    def foot_key(self, k: int, leg: int) -> Key:
        return Key("link", k, leg, len(self.model.chains[leg].joints))

    def initialize(self) -> Values:
        """Dead-reckoned linearization point from the IMU chain and measured angles."""
        log, model = self.log, self.model
        values = Values()
        pose = log.gt_pose(0)
        vel = log.initial_velocity.copy()
        bias = ImuBias()
        values.insert(Key("pose", 0), pose)
        values.insert(Key("vel", 0), vel)
        values.insert(self.bias_key(0), bias.as_vector())
        for i, pre in enumerate(self.preints):
            pose, vel = pre.predict(pose, vel, bias)
            values.insert(Key("pose", i + 1), pose)
            values.insert(Key("vel", i + 1), vel)
            if self.config.bias_chain and i + 1 <= self.K - 2:
                values.insert(self.bias_key(i + 1), bias.as_vector())

        proposed = self.config.mode == "proposed"
        for k in range(self.K):
            base = values[Key("pose", k)]
            for leg in range(model.num_legs):
                if self.phase_at[k, leg] < 0:
                    continue
                frames = fk_frames(model, leg, self.angles_at(k, leg))
                if proposed:
                    for j, frame in enumerate(frames, start=1):
                        values.insert(Key("link", k, leg, j), base * frame)
                else:
                    values.insert(self.foot_key(k, leg), base * frames[-1])

        for idx, ph in enumerate(self.phases):
            k0 = ph.start_kf
            base = values[Key("pose", k0)]
            foot = base * fk_frames(model, ph.leg, self.angles_at(k0, ph.leg))[-1]
            if model.foot_types[ph.leg] == "flat":
                values.insert(Key("point", ph.landmark), foot)
            else:
                values.insert(Key("point", ph.landmark), foot.t.copy())
        return values

    def assemble(self, include_prior: bool = True) -> FactorGraph:
        log, model, cfg = self.log, self.model, self.config
        graph = FactorGraph()
        if include_prior:
            prior_cov = np.diag([cfg.prior_pose_sigma**2] * 6
                                + [cfg.prior_vel_sigma**2] * 3
                                + [cfg.prior_bias_sigma**2] * 6)
            graph.add_factor(StatePriorFactor(
                Key("pose", 0), Key("vel", 0), self.bias_key(0),
                log.gt_pose(0), log.initial_velocity, np.zeros(6), prior_cov))

        for i, pre in enumerate(self.preints):
            graph.add_factor(PreintegratedImuFactor(
                Key("pose", i), Key("vel", i), Key("pose", i + 1), Key("vel", i + 1),
                self.bias_key(i), pre))
        if cfg.bias_chain:
            dt_kf = 1.0 / log.keyframe_rate
            walk_cov = np.diag([cfg.imu_noise.gyro_bias_rw**2 * dt_kf] * 3
                               + [cfg.imu_noise.accel_bias_rw**2 * dt_kf] * 3)
            walk_cov += 1e-18 * np.eye(6)
            for i in range(self.K - 2):
                graph.add_factor(BiasWalkFactor(self.bias_key(i), self.bias_key(i + 1),
                                                walk_cov))

        fk_cov = _diag_cov(cfg.fk_sigma_rot, cfg.fk_sigma_trans)
        lumped_cov = _diag_cov(cfg.baseline_sigma_rot, cfg.baseline_sigma_trans)
        point_cov = cfg.cp_sigma**2 * np.eye(3)
        flat_cov = _diag_cov(cfg.cp_sigma_rot, cfg.cp_sigma)
        proposed = cfg.mode == "proposed"

        for k in range(self.K):
            for leg in range(model.num_legs):
                pidx = self.phase_at[k, leg]
                if pidx < 0:
                    continue
                chain = model.chains[leg]
                q = self.angles_at(k, leg)
                if proposed:
                    parent = Key("pose", k)
                    for j, joint in enumerate(chain.joints, start=1):
                        child = Key("link", k, leg, j)
                        post = chain.tail if j == len(chain.joints) else None
                        graph.add_factor(JointFkFactor(parent, child, joint,
                                                       q[j - 1], fk_cov, post=post))
                        parent = child
                else:
                    cov = lumped_cov
                    if cfg.baseline_composed_sigma:
                        cov = chain_composed_covariance(model, leg, q, fk_cov)
                    graph.add_factor(RelativePoseFactor(
                        Key("pose", k), self.foot_key(k, leg),
                        fk_chain(model, leg, q), cov))

                lmk = Key("point", self.phases[pidx].landmark)
                foot = self.foot_key(k, leg)
                if model.foot_types[leg] == "flat":
                    graph.add_factor(FlatContactFactor(foot, lmk, flat_cov))
                else:
                    graph.add_factor(PointContactFactor(foot, lmk, point_cov))
        return graph


def build_graph(log: TrajectoryLog, model: RobotModel, config: EstimatorConfig):
    """Assemble the factor graph and its initial values."""
    problem = _Problem(log, model, config)
    return problem.assemble(), problem.initialize()


def initialize(log: TrajectoryLog, model: RobotModel, config: EstimatorConfig) -> Values:
    return _Problem(log, model, config).initialize()


def estimate(log: TrajectoryLog, model: RobotModel,
             config: EstimatorConfig | None = None) -> EstimatedTrajectory:
    """Build, initialize, and optimize; returns the keyframe-state trajectory.

    When the estimated bias moves far from the preintegration linearization
    point, the measurements are re-preintegrated at the estimate and the
    solve continues from the previous solution, so large biases do not
    suffer the first-order correction error.
    """
    config = config or EstimatorConfig()
    problem = _Problem(log, model, config)
    graph = problem.assemble()
    values, report = lm_optimize(graph, problem.initialize(), config.lm)

    for _ in range(config.max_bias_relin):
        bias = ImuBias.from_vector(values[problem.bias_key(0)])
        shift = np.linalg.norm(bias.as_vector() - problem.bias_lin.as_vector())
        if shift <= config.bias_relin_threshold:
            break
        problem = _Problem(log, model, config, bias_lin=bias)
        graph = problem.assemble()
        values, report = lm_optimize(graph, values, config.lm)

    states = []
    for k in range(problem.K):
        bias = ImuBias.from_vector(values[problem.bias_key(min(k, problem.K - 2))])
        states.append(RobotState(values[Key("pose", k)], values[Key("vel", k)], bias))
    landmarks = {ph.landmark: values[Key("point", ph.landmark)]
                 for ph in problem.phases}
    return EstimatedTrajectory(log.kf_times.copy(), states, landmarks,
                               report.final_objective, report)


def estimate_baseline(log: TrajectoryLog, model: RobotModel,
                      config: EstimatorConfig | None = None) -> EstimatedTrajectory:
    config = config or EstimatorConfig()
    return estimate(log, model, replace(config, mode="baseline"))
