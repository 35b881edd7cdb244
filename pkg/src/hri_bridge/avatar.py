"""Avatar poses and the quaternion math shared by relay, store, and metrics.

An avatar is a 56-joint skeleton; every joint carries a position in meters
and a unit quaternion (w, x, y, z).  Rigid bodies (props, furniture) use a
single position + rotation pair.  The forward axis of any rotated frame is
local +Z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from hri_bridge.codec import Document, Int64

JOINT_COUNT = 56
UNIT_NORM_TOLERANCE = 1e-6

Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]

IDENTITY_QUAT: Quat = (1.0, 0.0, 0.0, 0.0)


class AvatarStateError(ValueError):
    """The joints array or a quaternion violates the pose invariants."""


def quat_norm(q: Quat) -> float:
    return math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])


def quat_conjugate(q: Quat) -> Quat:
    return (q[0], -q[1], -q[2], -q[3])


def quat_multiply(a: Quat, b: Quat) -> Quat:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def rotate_vector(q: Quat, v: Vec3) -> Vec3:
    w, x, y, z = q
    vx, vy, vz = v
    # q * (0, v) * conj(q), expanded
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    return (
        vx + w * tx + (y * tz - z * ty),
        vy + w * ty + (z * tx - x * tz),
        vz + w * tz + (x * ty - y * tx),
    )


def forward_axis(q: Quat) -> Vec3:
    """World direction of the local +Z axis."""
    return rotate_vector(q, (0.0, 0.0, 1.0))


def angle_between(u: Vec3, v: Vec3) -> float:
    nu = math.sqrt(u[0] ** 2 + u[1] ** 2 + u[2] ** 2)
    nv = math.sqrt(v[0] ** 2 + v[1] ** 2 + v[2] ** 2)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("zero-length vector has no direction")
    dot = (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]) / (nu * nv)
    return math.acos(max(-1.0, min(1.0, dot)))


@dataclass(frozen=True)
class JointPose:
    joint_id: int
    position: Vec3
    rotation: Quat

    def validate(self) -> "JointPose":
        if not 0 <= self.joint_id < JOINT_COUNT:
            raise AvatarStateError(f"joint_id {self.joint_id} outside [0, {JOINT_COUNT - 1}]")
        if abs(quat_norm(self.rotation) - 1.0) > UNIT_NORM_TOLERANCE:
            raise AvatarStateError(f"joint {self.joint_id} rotation is not unit length")
        return self


@dataclass(frozen=True)
class AvatarState:
    entity_id: str
    send_timestamp: int  # microseconds, sender monotonic clock
    sequence: int
    joints: tuple[JointPose, ...]

    def validate(self) -> "AvatarState":
        if len(self.joints) != JOINT_COUNT:
            raise AvatarStateError(f"expected {JOINT_COUNT} joints, got {len(self.joints)}")
        seen = set()
        for joint in self.joints:
            joint.validate()
            seen.add(joint.joint_id)
        if len(seen) != JOINT_COUNT:
            raise AvatarStateError("joint ids must cover 0..55 exactly once")
        return self

    def joint(self, joint_id: int) -> JointPose:
        for j in self.joints:
            if j.joint_id == joint_id:
                return j
        raise KeyError(joint_id)

    def to_document(self) -> Document:
        return {
            "entity_id": self.entity_id,
            "send_timestamp": Int64(self.send_timestamp),
            "sequence": Int64(self.sequence),
            "joints": [
                {
                    "joint_id": j.joint_id,
                    "position": list(j.position),
                    "rotation": list(j.rotation),
                }
                for j in self.joints
            ],
        }

    @classmethod
    def from_document(cls, doc: Mapping[str, Any]) -> "AvatarState":
        try:
            joints = tuple(
                JointPose(
                    joint_id=int(j["joint_id"]),
                    position=_vec3(j["position"]),
                    rotation=_quat(j["rotation"]),
                )
                for j in doc["joints"]
            )
            state = cls(
                entity_id=doc["entity_id"],
                send_timestamp=int(doc["send_timestamp"]),
                sequence=int(doc["sequence"]),
                joints=joints,
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise AvatarStateError(f"not an avatar state document: {exc}") from None
        return state.validate()


def _vec3(xs: Sequence[float]) -> Vec3:
    if len(xs) != 3:
        raise AvatarStateError(f"position needs 3 components, got {len(xs)}")
    return (float(xs[0]), float(xs[1]), float(xs[2]))


def _quat(xs: Sequence[float]) -> Quat:
    if len(xs) != 4:
        raise AvatarStateError(f"rotation needs 4 components, got {len(xs)}")
    return (float(xs[0]), float(xs[1]), float(xs[2]), float(xs[3]))


def rigid_pose_document(position: Vec3, rotation: Quat) -> Document:
    return {"position": [float(v) for v in position], "rotation": [float(v) for v in rotation]}


def pose_from_payload(payload: Mapping[str, Any], joint_id: int | None = None) -> tuple[Vec3, Quat]:
    """Extract (position, rotation) from a pose payload.

    Avatar-state payloads yield the requested joint (default joint 0, the
    root); rigid-body payloads yield their single pose.
    """
    if "joints" in payload:
        state = AvatarState.from_document(payload)
        return_joint = state.joint(joint_id if joint_id is not None else 0)
        return return_joint.position, return_joint.rotation
    if "position" in payload and "rotation" in payload:
        pos = _vec3(payload["position"])
        rot = _quat(payload["rotation"])
        if abs(quat_norm(rot) - 1.0) > UNIT_NORM_TOLERANCE:
            raise AvatarStateError("rigid pose rotation is not unit length")
        return pos, rot
    raise AvatarStateError("payload is neither an avatar state nor a rigid pose")


def yaw_quat(angle: float) -> Quat:
    """Rotation about the +Y axis (turns the +Z forward axis)."""
    return (math.cos(angle / 2.0), 0.0, math.sin(angle / 2.0), 0.0)


def canned_joint_poses(phase: float) -> tuple[JointPose, ...]:
    """Deterministic smooth 56-joint motion used by drivers and benchmarks."""
    joints = []
    for j in range(JOINT_COUNT):
        pos = (
            math.sin(phase + 0.11 * j),
            0.5 * math.cos(0.8 * phase + 0.2 * j),
            0.05 * j + 0.1 * math.sin(0.5 * phase),
        )
        joints.append(JointPose(joint_id=j, position=pos, rotation=yaw_quat(0.3 * phase + 0.07 * j)))
    return tuple(joints)
