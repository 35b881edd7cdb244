"""Derived sensor signals recomputed from recorded poses.

Sensors are never recorded; they are pure functions over the session file.
At every sample time (0, T, 2T, ... up to the last event time) the newest
recorded pose at or before that time is used for each involved entity
(zero-order hold).  Runs on identical input are bit-identical.

Functions:

* range/bearing: per target, distance plus azimuth and elevation of the
  target in the sensor's local frame (azimuth positive toward local +X,
  elevation toward local +Y, forward is local +Z).
* gaze angle: angle between the sensor's forward axis and the line of
  sight to the target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

from hri_bridge.avatar import (
    Quat,
    Vec3,
    angle_between,
    forward_axis,
    pose_from_payload,
    quat_conjugate,
    rotate_vector,
)
from hri_bridge.codec import Document, Int64
from hri_bridge.store import POSE, SceneEvent, SessionReader, UnknownEntity

RELATIVE_RANGE_BEARING = "relative_range_bearing"
GAZE_ANGLE_TO = "gaze_angle_to"
SENSOR_FUNCTIONS = frozenset({RELATIVE_RANGE_BEARING, GAZE_ANGLE_TO})


@dataclass(frozen=True)
class SensorSpec:
    sensor_id: str
    attached_to: str
    function: str
    targets: tuple[str, ...]
    sample_period_us: int
    joint_id: int | None = None

    def validate(self, known_entities: set[str]) -> "SensorSpec":
        if self.function not in SENSOR_FUNCTIONS:
            raise ValueError(f"unknown sensor function {self.function!r}")
        if self.sample_period_us <= 0:
            raise ValueError("sample_period_us must be positive")
        if not self.targets:
            raise ValueError("sensor needs at least one target")
        if self.function == GAZE_ANGLE_TO and len(self.targets) != 1:
            raise ValueError("gaze angle takes exactly one target")
        for entity in (self.attached_to, *self.targets):
            if entity not in known_entities:
                raise UnknownEntity(f"entity {entity!r} is not declared in the session header")
        return self


@dataclass(frozen=True)
class SensorTrace:
    sensor_id: str
    samples: tuple[tuple[int, Document], ...]
    skipped_samples: int  # sample times before the first pose of a required entity


def _range_bearing(sensor_pos: Vec3, sensor_rot: Quat, target_pos: Vec3) -> tuple[float, float, float]:
    rel = (
        target_pos[0] - sensor_pos[0],
        target_pos[1] - sensor_pos[1],
        target_pos[2] - sensor_pos[2],
    )
    rng = math.sqrt(rel[0] ** 2 + rel[1] ** 2 + rel[2] ** 2)
    local = rotate_vector(quat_conjugate(sensor_rot), rel)
    azimuth = math.atan2(local[0], local[2])
    elevation = math.atan2(local[1], math.hypot(local[0], local[2]))
    return rng, azimuth, elevation


def reproduce_sensor(reader: SessionReader, spec: SensorSpec) -> SensorTrace:
    """Recompute one sensor's time series from the recorded world state."""
    spec.validate(reader.header.entity_ids())
    events = reader.read_all()
    return reproduce_sensor_from_events(events, spec)


def reproduce_sensor_from_events(events: Iterable[SceneEvent], spec: SensorSpec) -> SensorTrace:
    events = list(events)
    if not events:
        return SensorTrace(sensor_id=spec.sensor_id, samples=(), skipped_samples=0)
    t_end = events[-1].t
    required = {spec.attached_to, *spec.targets}

    latest: dict[str, tuple[Vec3, Quat]] = {}
    samples: list[tuple[int, Document]] = []
    skipped = 0
    idx = 0
    n = len(events)
    sample_t = 0
    while sample_t <= t_end:
        while idx < n and events[idx].t <= sample_t:
            event = events[idx]
            if event.kind == POSE and event.entity_id in required:
                latest[event.entity_id] = pose_from_payload(event.payload, spec.joint_id if event.entity_id == spec.attached_to else None)
            idx += 1
        if all(entity in latest for entity in required):
            samples.append((sample_t, _sample_doc(spec, latest)))
        else:
            skipped += 1
        sample_t += spec.sample_period_us
    return SensorTrace(sensor_id=spec.sensor_id, samples=tuple(samples), skipped_samples=skipped)


def _sample_doc(spec: SensorSpec, latest: dict[str, tuple[Vec3, Quat]]) -> Document:
    sensor_pos, sensor_rot = latest[spec.attached_to]
    if spec.function == RELATIVE_RANGE_BEARING:
        readings = []
        for target in spec.targets:
            target_pos, _ = latest[target]
            rng, azimuth, elevation = _range_bearing(sensor_pos, sensor_rot, target_pos)
            readings.append(
                {"target": target, "range": rng, "azimuth": azimuth, "elevation": elevation}
            )
        return {"sensor_id": spec.sensor_id, "readings": readings}
    target = spec.targets[0]
    target_pos, _ = latest[target]
    rel = (
        target_pos[0] - sensor_pos[0],
        target_pos[1] - sensor_pos[1],
        target_pos[2] - sensor_pos[2],
    )
    angle = angle_between(forward_axis(sensor_rot), rel)
    return {"sensor_id": spec.sensor_id, "target": target, "angle": angle}


def spec_to_document(spec: SensorSpec) -> Document:
    doc: Document = {
        "sensor_id": spec.sensor_id,
        "attached_to": spec.attached_to,
        "function": spec.function,
        "targets": list(spec.targets),
        "sample_period_us": Int64(spec.sample_period_us),
    }
    if spec.joint_id is not None:
        doc["joint_id"] = spec.joint_id
    return doc
