"""Interaction metrics extracted from recorded sessions.

Four built-in metrics cover the quantities the scoring model uses: task
completion time, robot utterance count, accumulated gaze-direction change
of the avatar, and avatar trajectory length.  Further features plug into
the registry via register_feature.  All metrics are pure functions of the
event sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

from hri_bridge.avatar import Quat, Vec3, angle_between, forward_axis, pose_from_payload
from hri_bridge.store import (
    POSE,
    TASK_COMPLETE,
    TASK_MARKER,
    TASK_START,
    UTTERANCE,
    SceneEvent,
    SessionHeader,
    SessionReader,
    UnknownEntity,
)

DEFAULT_TIMEOUT_S = 300.0


class MetricError(Exception):
    pass


class NoTaskMarkers(MetricError):
    pass


class UnsupportedFeature(MetricError):
    pass


SessionLike = SessionReader | Iterable[SceneEvent]


def _as_events(session: SessionLike) -> list[SceneEvent]:
    if isinstance(session, SessionReader):
        return session.read_all()
    return list(session)


def pose_series(
    events: Iterable[SceneEvent], entity: str, joint_id: int | None = None
) -> list[tuple[int, Vec3, Quat]]:
    """(t, position, rotation) for every pose sample of one entity."""
    series = []
    for event in events:
        if event.kind == POSE and event.entity_id == entity:
            pos, rot = pose_from_payload(event.payload, joint_id)
            series.append((event.t, pos, rot))
    return series


# ---------------------------------------------------------------------------
# the four built-in metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RequiredTime:
    seconds: float
    completed: bool  # False means the timeout value was substituted


def required_time(session: SessionLike, timeout_s: float = DEFAULT_TIMEOUT_S) -> RequiredTime:
    """Seconds from the task-start marker to the first completion after it.

    A session whose task never completes yields the timeout value, flagged.
    A completion marker only *before* the start is inconsistent ordering
    and an error, not a timeout.
    """
    events = _as_events(session)
    start_t = None
    complete_ts = []
    for event in events:
        if event.kind != TASK_MARKER:
            continue
        marker = event.payload.get("marker")
        if marker == TASK_START and start_t is None:
            start_t = event.t
        elif marker == TASK_COMPLETE:
            complete_ts.append(event.t)
    if start_t is None:
        raise NoTaskMarkers("no task_start marker in session")
    after = [t for t in complete_ts if t >= start_t]
    if after:
        return RequiredTime(seconds=(after[0] - start_t) / 1e6, completed=True)
    if complete_ts:
        raise NoTaskMarkers("task_complete precedes task_start")
    return RequiredTime(seconds=timeout_s, completed=False)


def count_utterances(session: SessionLike, speaker: str) -> int:
    return sum(
        1
        for event in _as_events(session)
        if event.kind == UTTERANCE and event.payload.get("speaker") == speaker
    )


def accumulated_gaze_angle(
    session: SessionLike, entity: str, head_joint_id: int | None = None
) -> float:
    """Total angular change of the gaze direction over the session, radians.

    Gaze direction is the forward (+Z) axis of the entity's head rotation;
    each term is the angle between consecutive sample directions, in [0, pi].
    """
    series = pose_series(_as_events(session), entity, head_joint_id)
    if not series:
        raise UnknownEntity(f"no head-pose samples for {entity!r}")
    total = 0.0
    prev = forward_axis(series[0][2])
    for _, _, rot in series[1:]:
        cur = forward_axis(rot)
        total += angle_between(prev, cur)
        prev = cur
    return total


def trajectory_length(session: SessionLike, entity: str) -> float:
    """Summed Euclidean distance between consecutive root positions, meters."""
    series = pose_series(_as_events(session), entity)
    if not series:
        raise UnknownEntity(f"no position samples for {entity!r}")
    total = 0.0
    prev = series[0][1]
    for _, pos, _ in series[1:]:
        total += math.dist(prev, pos)
        prev = pos
    return total


# ---------------------------------------------------------------------------
# feature extraction
# ---------------------------------------------------------------------------

@dataclass
class FeatureConfig:
    robot_entity: str | None = None
    avatar_entity: str | None = None
    robot_speaker: str | None = None
    timeout_s: float = DEFAULT_TIMEOUT_S
    head_joint_id: int | None = None


@dataclass(frozen=True)
class FeatureVector:
    session_id: str
    values: dict[str, float]  # insertion order = requested feature order

    def validate(self) -> "FeatureVector":
        for name, value in self.values.items():
            if not math.isfinite(value):
                raise ValueError(f"feature {name!r} is not finite: {value}")
        return self


@dataclass
class FeatureContext:
    events: list[SceneEvent]
    header: SessionHeader | None
    config: FeatureConfig

    def _resolve(self, explicit: str | None, role: str) -> str:
        if explicit:
            return explicit
        if self.header is not None:
            candidates = self.header.of_role(role)
            if candidates:
                return candidates[0]
        raise MetricError(f"no {role} entity configured and none declared in the header")

    def robot(self) -> str:
        return self._resolve(self.config.robot_entity, "robot")

    def avatar(self) -> str:
        return self._resolve(self.config.avatar_entity, "avatar")

    def speaker(self) -> str:
        return self.config.robot_speaker or self.robot()


FeatureFn = Callable[[FeatureContext], float]

FEATURE_EXTRACTORS: dict[str, FeatureFn] = {
    "required_time_s": lambda ctx: required_time(ctx.events, ctx.config.timeout_s).seconds,
    "utterance_count": lambda ctx: float(count_utterances(ctx.events, ctx.speaker())),
    "gaze_angle_rad": lambda ctx: accumulated_gaze_angle(
        ctx.events, ctx.avatar(), ctx.config.head_joint_id
    ),
    "trajectory_length_m": lambda ctx: trajectory_length(ctx.events, ctx.avatar()),
}


def register_feature(name: str, fn: FeatureFn) -> None:
    FEATURE_EXTRACTORS[name] = fn


def extract_features(
    session: SessionLike,
    features: Sequence[str],
    config: FeatureConfig | None = None,
    session_id: str | None = None,
) -> FeatureVector:
    """One finite value per requested feature, in request order."""
    header = session.header if isinstance(session, SessionReader) else None
    ctx = FeatureContext(events=_as_events(session), header=header, config=config or FeatureConfig())
    values: dict[str, float] = {}
    for name in features:
        fn = FEATURE_EXTRACTORS.get(name)
        if fn is None:
            raise UnsupportedFeature(f"unknown feature {name!r}")
        values[name] = float(fn(ctx))
    if session_id is None:
        session_id = header.session_id if header is not None else ""
    return FeatureVector(session_id=session_id, values=values).validate()
