"""Communication and recording core for networked VR human-robot experiments.

Subsystems:

* ``codec``      binary + JSON document codecs with stream framing
* ``broker``     TCP pub/sub broker with one worker per topic
* ``client``     blocking bridge client used by tools and tests
* ``relay``      room-based avatar state synchronization relay
* ``store``      append-only session recording and timed replay
* ``sensors``    derived sensor signals recomputed from recorded poses
* ``metrics``    interaction metrics and the linear scoring model
* ``bench``      throughput and latency benchmark harnesses
* ``cli``        the ``hri-bridge`` command line entry point
"""

from hri_bridge.avatar import AvatarState, JointPose
from hri_bridge.broker import BrokerConfig, start_broker, topic_stats
from hri_bridge.client import BridgeClient
from hri_bridge.codec import (
    BINARY,
    JSON,
    Document,
    Int64,
    decode_document,
    decode_json,
    encode_document,
    encode_json,
    read_frame,
    write_frame,
)
from hri_bridge.metrics import FeatureVector, extract_features
from hri_bridge.regression import LinearModel, ols_fit, predict, predict_clamped
from hri_bridge.relay import LatencyReport, Relay, RelayClient, RelayServer, measure_latency
from hri_bridge.store import (
    SceneEvent,
    SessionHeader,
    SessionReader,
    SessionWriter,
    open_session,
    replay,
)

__version__ = "0.1.0"

__all__ = [
    "AvatarState",
    "BINARY",
    "BridgeClient",
    "BrokerConfig",
    "Document",
    "FeatureVector",
    "Int64",
    "JSON",
    "JointPose",
    "LatencyReport",
    "LinearModel",
    "Relay",
    "RelayClient",
    "RelayServer",
    "SceneEvent",
    "SessionHeader",
    "SessionReader",
    "SessionWriter",
    "decode_document",
    "decode_json",
    "encode_document",
    "encode_json",
    "extract_features",
    "measure_latency",
    "ols_fit",
    "open_session",
    "predict",
    "predict_clamped",
    "read_frame",
    "replay",
    "start_broker",
    "topic_stats",
    "write_frame",
    "__version__",
]
