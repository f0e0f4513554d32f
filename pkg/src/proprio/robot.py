"""Robot kinematics from a URDF subset: links, revolute joints, per-leg chains.

Supported elements: robot/link/joint(revolute|fixed)/origin(xyz, rpy)/axis/
parent/child. Everything else (inertia, visuals, collision, limits) is
ignored and reported in the model's warning list. Prismatic and other joint
types are rejected.

Chain extraction walks base -> foot and folds every fixed joint into the
origin transform of the next revolute joint; fixed joints after the last
revolute become the chain tail, so the final chain frame is the foot frame
itself. Each revolute joint contributes the transform

    parent -> child = M * exp([axis * q, 0])

with M the accumulated origin and axis the unit rotation axis in the joint
frame (the joint's screw axis has no translational moment because the child
frame sits on the axis).
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .factor_graph import Factor, Key
from .lie import Pose, adjoint_se3, exp_so3, log_se3, se3_log_binary_jacobians


def rpy_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Fixed-axis XYZ rotation as used by URDF origins: Rz(yaw) Ry(pitch) Rx(roll)."""
    return (exp_so3(np.array([0.0, 0.0, yaw]))
            @ exp_so3(np.array([0.0, pitch, 0.0]))
            @ exp_so3(np.array([roll, 0.0, 0.0])))


@dataclass
class Joint:
    name: str
    kind: str                 # 'revolute' | 'fixed'
    parent: str
    child: str
    xyz: np.ndarray
    rpy: np.ndarray
    axis: np.ndarray | None   # unit rotation axis, None for fixed joints

    def origin(self) -> Pose:
        return Pose(rpy_matrix(*self.rpy), self.xyz)


@dataclass
class ChainJoint:
    """One revolute step of a base->foot chain after fixed-joint folding."""

    name: str
    M: Pose               # parent frame -> joint frame at q = 0
    axis: np.ndarray


@dataclass
class Chain:
    leg: int
    foot_link: str
    joints: list[ChainJoint]
    tail: Pose            # trailing fixed transform; last chain frame = foot frame

    @property
    def joint_names(self) -> list[str]:
        return [j.name for j in self.joints]


@dataclass
class RobotModel:
    name: str
    links: list[str]
    joints: list[Joint]
    chains: list[Chain]
    foot_types: list[str]  # per leg: 'point' | 'flat'
    warnings: list[str] = field(default_factory=list)

    @property
    def num_legs(self) -> int:
        return len(self.chains)


def _parse_floats(text: str, n: int, context: str) -> np.ndarray:
    parts = text.split()
    if len(parts) != n:
        raise ValidationError(f"{context}: expected {n} numbers, got {text!r}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as e:
        raise ValidationError(f"{context}: malformed number in {text!r}") from e


def parse_urdf(text: str, foot_links: list[str],
               foot_types: list[str] | str = "point") -> RobotModel:
    """Parse the URDF subset and extract one kinematic chain per foot link."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as e:
        raise ValidationError(f"malformed robot description: {e}") from e
    if root.tag != "robot":
        raise ValidationError(f"expected <robot> root element, got <{root.tag}>")

    warnings = []
    links = []
    joints = []
    for elem in root:
        if elem.tag == "link":
            name = elem.get("name")
            if name is None:
                raise ValidationError("link without a name")
            links.append(name)
            for sub in elem:
                warnings.append(f"ignored <{sub.tag}> in link {name}")
        elif elem.tag == "joint":
            name = elem.get("name")
            kind = elem.get("type")
            if name is None:
                raise ValidationError("joint without a name")
            if kind not in ("revolute", "fixed"):
                raise ValidationError(f"joint {name}: unsupported type {kind!r}")
            parent = child = None
            xyz = np.zeros(3)
            rpy = np.zeros(3)
            axis = None
            for sub in elem:
                if sub.tag == "parent":
                    parent = sub.get("link")
                elif sub.tag == "child":
                    child = sub.get("link")
                elif sub.tag == "origin":
                    if sub.get("xyz") is not None:
                        xyz = _parse_floats(sub.get("xyz"), 3, f"joint {name} origin xyz")
                    if sub.get("rpy") is not None:
                        rpy = _parse_floats(sub.get("rpy"), 3, f"joint {name} origin rpy")
                elif sub.tag == "axis":
                    axis = _parse_floats(sub.get("xyz", "1 0 0"), 3, f"joint {name} axis")
                else:
                    warnings.append(f"ignored <{sub.tag}> in joint {name}")
            if parent is None or child is None:
                raise ValidationError(f"joint {name}: missing parent or child")
            if kind == "revolute":
                if axis is None:
                    raise ValidationError(f"joint {name}: revolute joint without axis")
                norm = np.linalg.norm(axis)
                if abs(norm - 1.0) > 1e-6:
                    raise ValidationError(f"joint {name}: axis must be unit length")
                axis = axis / norm
            else:
                axis = None
            joints.append(Joint(name, kind, parent, child, xyz, rpy, axis))
        else:
            warnings.append(f"ignored top-level <{elem.tag}>")

    link_set = set(links)
    if len(link_set) != len(links):
        raise ValidationError("duplicate link names")
    parent_joint: dict[str, Joint] = {}
    for j in joints:
        if j.parent not in link_set:
            raise ValidationError(f"joint {j.name}: unknown parent link {j.parent!r}")
        if j.child not in link_set:
            raise ValidationError(f"joint {j.name}: unknown child link {j.child!r}")
        if j.child in parent_joint:
            raise ValidationError(f"link {j.child} has multiple parent joints")
        parent_joint[j.child] = j

    roots = [l for l in links if l not in parent_joint]
    if len(roots) != 1:
        raise ValidationError(f"expected a single root link, found {roots}")
    base = roots[0]

    # cycle check: walking up from any link must terminate at the base
    for link in links:
        seen = set()
        cur = link
        while cur != base:
            j = parent_joint[cur]
            if j.name in seen:
                raise ValidationError(f"kinematic cycle through joint {j.name}")
            seen.add(j.name)
            cur = j.parent

    if isinstance(foot_types, str):
        foot_types = [foot_types] * len(foot_links)
    if len(foot_types) != len(foot_links):
        raise ValidationError("foot_types must match foot_links")

    chains = []
    for leg, foot in enumerate(foot_links):
        if foot not in link_set:
            raise ValidationError(f"foot link {foot!r} not in model")
        path = []
        cur = foot
        while cur != base:
            j = parent_joint[cur]
            path.append(j)
            cur = j.parent
        path.reverse()
        elems = []
        pending = Pose.identity()
        for j in path:
            if j.kind == "fixed":
                pending = pending * j.origin()
            else:
                elems.append(ChainJoint(j.name, pending * j.origin(), j.axis))
                pending = Pose.identity()
        if not elems:
            raise ValidationError(f"chain to foot {foot!r} has no revolute joints")
        chains.append(Chain(leg, foot, elems, pending))

    return RobotModel(root.get("name", "robot"), links, joints, chains,
                      list(foot_types), warnings)


def joint_transform(joint: ChainJoint, q: float) -> Pose:
    """Parent -> child transform of a revolute joint at angle q."""
    return joint.M * Pose(exp_so3(joint.axis * q), np.zeros(3))


def fk_chain(model: RobotModel, leg: int, angles) -> Pose:
    """Base -> foot transform: ordered product of joint transforms plus the tail."""
    chain = model.chains[leg]
    q = _angles_for(chain, angles)
    T = Pose.identity()
    for joint, qi in zip(chain.joints, q):
        T = T * joint_transform(joint, qi)
    return T * chain.tail


def fk_frames(model: RobotModel, leg: int, angles) -> list[Pose]:
    """Base-relative pose of every chain variable frame; the last one is the foot."""
    chain = model.chains[leg]
    q = _angles_for(chain, angles)
    frames = []
    T = Pose.identity()
    for i, (joint, qi) in enumerate(zip(chain.joints, q)):
        T = T * joint_transform(joint, qi)
        if i == len(chain.joints) - 1:
            T = T * chain.tail
        frames.append(T)
    return frames


def _angles_for(chain: Chain, angles) -> np.ndarray:
    if isinstance(angles, dict):
        try:
            return np.array([angles[name] for name in chain.joint_names])
        except KeyError as e:
            raise ValidationError(f"missing angle for joint {e.args[0]}") from e
    q = np.asarray(angles, dtype=float)
    if q.shape[0] != len(chain.joints):
        raise ValidationError(
            f"expected {len(chain.joints)} angles for leg {chain.leg}, got {q.shape[0]}")
    return q


def fk_factor_error(parent: Pose, child: Pose, joint: ChainJoint, q_measured: float,
                    post: Pose | None = None) -> np.ndarray:
    """Residual of one parent/child link pair against the measured joint angle.

    Zero iff child == parent * joint_transform(q_measured) * post.
    """
    expected = joint_transform(joint, q_measured)
    if post is not None:
        expected = expected * post
    return log_se3(expected.inverse() * (parent.inverse() * child))


class JointFkFactor(Factor):
    """Pose factor between consecutive chain frames, measured by one encoder angle."""

    def __init__(self, key_parent: Key, key_child: Key, joint: ChainJoint,
                 q_measured: float, cov: np.ndarray, post: Pose | None = None):
        super().__init__([key_parent, key_child], cov)
        expected = joint_transform(joint, q_measured)
        if post is not None:
            expected = expected * post
        self._expected_inv = expected.inverse()

    def error(self, vals):
        parent, child = vals
        return log_se3(self._expected_inv * (parent.inverse() * child))

    def jacobians(self, vals):
        parent, child = vals
        _, JP, JC = se3_log_binary_jacobians(self._expected_inv, parent, child)
        return [JP, JC]


def chain_composed_covariance(model: RobotModel, leg: int, angles,
                              joint_cov: np.ndarray) -> np.ndarray:
    """Per-joint factor covariance propagated to a single base->foot covariance.

    Maps each joint-frame error twist into the foot frame with the adjoint of
    the remaining chain at the given configuration and sums the contributions.
    """
    chain = model.chains[leg]
    q = _angles_for(chain, angles)
    downstream = [chain.tail]
    for joint, qi in zip(reversed(chain.joints[1:]), reversed(q[1:])):
        downstream.append(joint_transform(joint, qi) * downstream[-1])
    downstream.reverse()  # downstream[j] = child_j -> foot

    total = np.zeros((6, 6))
    for j in range(len(chain.joints)):
        rest = downstream[j + 1] if j + 1 < len(downstream) else Pose.identity()
        A = adjoint_se3(rest.inverse())
        total += A @ joint_cov @ A.T
    return total


def serialize_model(model: RobotModel) -> str:
    """Canonical text form: document order, fixed field order, 17-digit floats."""
    def fmt(v):
        return " ".join(f"{x:.17g}" for x in v)

    lines = [f'<robot name="{model.name}">']
    for link in model.links:
        lines.append(f'  <link name="{link}"/>')
    for j in model.joints:
        lines.append(f'  <joint name="{j.name}" type="{j.kind}">')
        lines.append(f'    <parent link="{j.parent}"/>')
        lines.append(f'    <child link="{j.child}"/>')
        lines.append(f'    <origin xyz="{fmt(j.xyz)}" rpy="{fmt(j.rpy)}"/>')
        if j.axis is not None:
            lines.append(f'    <axis xyz="{fmt(j.axis)}"/>')
        lines.append('  </joint>')
    lines.append('</robot>')
    return "\n".join(lines) + "\n"


# --- reference robots used by the synthetic gait generator -----------------

QUADRUPED_LEG_ORDER = ("FL", "FR", "RL", "RR")


def quadruped_urdf(hip_x: float = 0.183, hip_y: float = 0.047,
                   hip_offset: float = 0.08, thigh_len: float = 0.2,
                   calf_len: float = 0.2) -> str:
    """Twelve-revolute-joint quadruped: abduction + hip pitch + knee pitch per leg.

    Topology mirrors small quadrupeds such as the A1/Go1 class: the abduction
    axis points along +x, both pitch axes along +y, and a fixed joint places
    the point foot at the calf tip.
    """
    lines = ['<robot name="quadruped">', '  <link name="base"/>']
    for name in QUADRUPED_LEG_ORDER:
        sx = 1.0 if name[0] == "F" else -1.0
        sy = 1.0 if name[1] == "L" else -1.0
        lines += [
            f'  <link name="{name}_thigh"/>',
            f'  <link name="{name}_upper"/>',
            f'  <link name="{name}_lower"/>',
            f'  <link name="{name}_foot"/>',
            f'  <joint name="{name}_abduct" type="revolute">',
            f'    <parent link="base"/>',
            f'    <child link="{name}_thigh"/>',
            f'    <origin xyz="{sx * hip_x} {sy * hip_y} 0" rpy="0 0 0"/>',
            '    <axis xyz="1 0 0"/>',
            '  </joint>',
            f'  <joint name="{name}_hip" type="revolute">',
            f'    <parent link="{name}_thigh"/>',
            f'    <child link="{name}_upper"/>',
            f'    <origin xyz="0 {sy * hip_offset} 0" rpy="0 0 0"/>',
            '    <axis xyz="0 1 0"/>',
            '  </joint>',
            f'  <joint name="{name}_knee" type="revolute">',
            f'    <parent link="{name}_upper"/>',
            f'    <child link="{name}_lower"/>',
            f'    <origin xyz="0 0 {-thigh_len}" rpy="0 0 0"/>',
            '    <axis xyz="0 1 0"/>',
            '  </joint>',
            f'  <joint name="{name}_foot_fixed" type="fixed">',
            f'    <parent link="{name}_lower"/>',
            f'    <child link="{name}_foot"/>',
            f'    <origin xyz="0 0 {-calf_len}" rpy="0 0 0"/>',
            '  </joint>',
        ]
    lines.append('</robot>')
    return "\n".join(lines) + "\n"


def quadruped_model() -> RobotModel:
    feet = [f"{name}_foot" for name in QUADRUPED_LEG_ORDER]
    return parse_urdf(quadruped_urdf(), feet, "point")


BIPED_LEG_ORDER = ("L", "R")


def biped_urdf(hip_y: float = 0.1, thigh_len: float = 0.35, shank_len: float = 0.35,
               ankle_height: float = 0.05) -> str:
    """Flat-footed biped with pitch-only legs: hip, knee, ankle about +y."""
    lines = ['<robot name="biped">', '  <link name="base"/>']
    for name in BIPED_LEG_ORDER:
        sy = 1.0 if name == "L" else -1.0
        lines += [
            f'  <link name="{name}_thigh"/>',
            f'  <link name="{name}_shank"/>',
            f'  <link name="{name}_ankle"/>',
            f'  <link name="{name}_foot"/>',
            f'  <joint name="{name}_hip" type="revolute">',
            f'    <parent link="base"/>',
            f'    <child link="{name}_thigh"/>',
            f'    <origin xyz="0 {sy * hip_y} 0" rpy="0 0 0"/>',
            '    <axis xyz="0 1 0"/>',
            '  </joint>',
            f'  <joint name="{name}_knee" type="revolute">',
            f'    <parent link="{name}_thigh"/>',
            f'    <child link="{name}_shank"/>',
            f'    <origin xyz="0 0 {-thigh_len}" rpy="0 0 0"/>',
            '    <axis xyz="0 1 0"/>',
            '  </joint>',
            f'  <joint name="{name}_ankle" type="revolute">',
            f'    <parent link="{name}_shank"/>',
            f'    <child link="{name}_ankle"/>',
            f'    <origin xyz="0 0 {-shank_len}" rpy="0 0 0"/>',
            '    <axis xyz="0 1 0"/>',
            '  </joint>',
            f'  <joint name="{name}_sole_fixed" type="fixed">',
            f'    <parent link="{name}_ankle"/>',
            f'    <child link="{name}_foot"/>',
            f'    <origin xyz="0 0 {-ankle_height}" rpy="0 0 0"/>',
            '  </joint>',
        ]
    lines.append('</robot>')
    return "\n".join(lines) + "\n"


def biped_model() -> RobotModel:
    feet = [f"{name}_foot" for name in BIPED_LEG_ORDER]
    return parse_urdf(biped_urdf(), feet, "flat")


def model_equal(a: RobotModel, b: RobotModel) -> bool:
    """Structural equality used by the serialization round-trip check."""
    if a.name != b.name or a.links != b.links or len(a.joints) != len(b.joints):
        return False
    for ja, jb in zip(a.joints, b.joints):
        if (ja.name, ja.kind, ja.parent, ja.child) != (jb.name, jb.kind, jb.parent, jb.child):
            return False
        if not (np.array_equal(ja.xyz, jb.xyz) and np.array_equal(ja.rpy, jb.rpy)):
            return False
        if (ja.axis is None) != (jb.axis is None):
            return False
        if ja.axis is not None and not np.array_equal(ja.axis, jb.axis):
            return False
    return True
