"""Proprioceptive state estimation for legged robots.

Factor-graph smoothing over preintegrated IMU measurements, per-joint
forward-kinematic factors along each in-contact leg, and contact-point
landmarks, with a synthetic gait generator and APE/RPE evaluation tools.
"""

from .contact import ContactConfig, ContactPhase, segment_phases
from .errors import (GaugeDeficiencyError, GraphError, UnreachableTargetError,
                     ValidationError)
from .estimator import (EstimatedTrajectory, EstimatorConfig, RobotState,
                        build_graph, estimate, estimate_baseline, initialize)
from .factor_graph import (FactorGraph, Key, LMConfig, LMReport, Values,
                           lm_optimize, solve_normal_equations)
from .imu import ImuBias, ImuNoiseParams, PreintegratedImu
from .lie import Pose, exp_se3, exp_so3, log_se3, log_so3
from .metrics import Trajectory, align, ape, evaluate, rpe
from .robot import RobotModel, biped_model, fk_chain, parse_urdf, quadruped_model
from .synth import GaitSpec, MeasurementNoise, TrajectoryLog, generate_log

__version__ = "0.1.0"
