"""Loaders and file formats for pre-extracted demonstration data.

A demo file carries everything the upstream vision stack produces for one
recording: per-frame arm-chain poses and canonical hand angles for both
sides, plus per-object keypoint tracks and a point cloud. A scene file
carries test-time object observations. All lengths are meters, all angles
radians; poses serialize as [qw,qx,qy,qz,tx,ty,tz] rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConsistencyError, DomainError, ParseError
from .se3 import Pose

SIDES = ("left", "right")
BODY_KEYS = (
    "l_shoulder", "l_elbow", "l_wrist", "l_palm",
    "r_shoulder", "r_elbow", "r_wrist", "r_palm",
)
HAND_DOF = 15


@dataclass(frozen=True)
class TraceFrame:
    body: dict[str, Pose]
    hands: dict[str, np.ndarray]


@dataclass(frozen=True)
class HumanMotionTrace:
    """Per-frame body-segment poses and hand joint angles, camera/world frame."""

    fps: float
    frames: tuple[TraceFrame, ...]

    def __len__(self) -> int:
        return len(self.frames)

    def slice(self, start: int, stop: int) -> "HumanMotionTrace":
        if not 0 <= start < stop <= len(self.frames):
            raise DomainError(f"invalid slice [{start}, {stop}) of {len(self.frames)} frames")
        return HumanMotionTrace(self.fps, self.frames[start:stop])

    def body_series(self, key: str) -> list[Pose]:
        return [f.body[key] for f in self.frames]

    def hand_series(self, side: str) -> np.ndarray:
        return np.stack([f.hands[side] for f in self.frames])


@dataclass(frozen=True)
class ObjectTrack:
    """Tracked keypoints across the demo plus the object's initial point cloud."""

    name: str
    keypoints: np.ndarray   # (T, K, 3)
    visibility: np.ndarray  # (T, K) bool
    cloud: np.ndarray       # (N, 3), at frame 0

    def __post_init__(self):
        if self.cloud.shape[0] == 0:
            raise ParseError(f"object '{self.name}': empty point cloud")

    @property
    def n_frames(self) -> int:
        return self.keypoints.shape[0]


@dataclass(frozen=True)
class SceneObservation:
    """Test-time object localization result: clouds keyed by object name."""

    objects: dict[str, np.ndarray]
    timestamp: float = 0.0

    def cloud(self, name: str) -> np.ndarray:
        return self.objects[name]


def object_centroid(cloud: np.ndarray) -> np.ndarray:
    cloud = np.asarray(cloud, dtype=float)
    if cloud.size == 0:
        raise DomainError("centroid of an empty point cloud")
    return cloud.reshape(-1, 3).mean(axis=0)


def _require(condition: bool, message: str):
    if not condition:
        raise ParseError(message)


def _finite_array(values, shape_hint: str, where: str) -> np.ndarray:
    try:
        arr = np.array(values, dtype=float)
    except (TypeError, ValueError):
        raise ParseError(f"{where}: not a numeric {shape_hint}") from None
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{where}: contains non-finite values")
    return arr


def trace_from_dict(doc: dict) -> HumanMotionTrace:
    _require("fps" in doc, "demo missing 'fps'")
    fps = doc["fps"]
    _require(isinstance(fps, (int, float)) and fps > 0, f"fps must be positive, got {fps!r}")
    raw_frames = doc.get("frames")
    _require(isinstance(raw_frames, list) and raw_frames, "demo has no frames")
    frames = []
    for i, rf in enumerate(raw_frames):
        where = f"frame {i}"
        _require(isinstance(rf, dict), f"{where}: not an object")
        body_doc = rf.get("body")
        hands_doc = rf.get("hands")
        _require(isinstance(body_doc, dict), f"{where}: missing 'body'")
        _require(isinstance(hands_doc, dict), f"{where}: missing 'hands'")
        missing = [k for k in BODY_KEYS if k not in body_doc]
        _require(not missing, f"{where}: body missing keys {missing}")
        body = {}
        for key in BODY_KEYS:
            row = _finite_array(body_doc[key], "7-vector", f"{where}.body.{key}")
            _require(row.shape == (7,), f"{where}.body.{key}: expected 7 numbers")
            body[key] = Pose.from_row7(row, frame="world")
        hands = {}
        for side in SIDES:
            _require(side in hands_doc, f"{where}: hands missing '{side}'")
            angles = _finite_array(hands_doc[side], "15-vector", f"{where}.hands.{side}")
            _require(angles.shape == (HAND_DOF,), f"{where}.hands.{side}: expected {HAND_DOF} angles")
            angles.flags.writeable = False
            hands[side] = angles
        frames.append(TraceFrame(body=body, hands=hands))
    return HumanMotionTrace(fps=float(fps), frames=tuple(frames))


def track_from_dict(doc: dict) -> ObjectTrack:
    _require(isinstance(doc, dict), "object entry is not an object")
    name = doc.get("name")
    _require(isinstance(name, str) and name, "object missing 'name'")
    where = f"object '{name}'"
    kp_doc = doc.get("keypoints")
    _require(isinstance(kp_doc, list) and kp_doc, f"{where}: missing keypoints")
    kp = _finite_array(kp_doc, "keypoint array", f"{where}.keypoints")
    _require(kp.ndim == 3 and kp.shape[2] == 4,
             f"{where}: keypoints must be (frames, points, [x,y,z,vis])")
    cloud = _finite_array(doc.get("cloud", []), "point list", f"{where}.cloud")
    _require(cloud.ndim == 2 and cloud.shape[1] == 3 and cloud.shape[0] > 0,
             f"{where}: cloud must be a non-empty list of [x,y,z]")
    keypoints = kp[:, :, :3].copy()
    visibility = kp[:, :, 3] > 0.5
    keypoints.flags.writeable = False
    visibility.flags.writeable = False
    cloud = cloud.copy()
    cloud.flags.writeable = False
    return ObjectTrack(name=name, keypoints=keypoints, visibility=visibility, cloud=cloud)


def demo_from_dict(doc: dict) -> tuple[HumanMotionTrace, list[ObjectTrack]]:
    trace = trace_from_dict(doc)
    objects_doc = doc.get("objects", [])
    _require(isinstance(objects_doc, list), "'objects' must be a list")
    tracks = [track_from_dict(od) for od in objects_doc]
    names = [t.name for t in tracks]
    if len(set(names)) != len(names):
        raise ParseError(f"duplicate object names: {names}")
    for t in tracks:
        if t.n_frames != len(trace):
            raise ConsistencyError(
                f"object '{t.name}' has {t.n_frames} keypoint frames, trace has {len(trace)}"
            )
    return trace, tracks


def load_demo(path) -> tuple[HumanMotionTrace, list[ObjectTrack]]:
    """Load and validate a demo.json file."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    return demo_from_dict(doc)


def demo_to_dict(trace: HumanMotionTrace, tracks: list[ObjectTrack]) -> dict:
    frames = []
    for f in trace.frames:
        frames.append(
            {
                "body": {k: f.body[k].to_row7() for k in BODY_KEYS},
                "hands": {s: f.hands[s].tolist() for s in SIDES},
            }
        )
    objects = []
    for t in tracks:
        kp = np.concatenate([t.keypoints, t.visibility[:, :, None].astype(float)], axis=2)
        objects.append({"name": t.name, "keypoints": kp.tolist(), "cloud": t.cloud.tolist()})
    return {"fps": trace.fps, "frames": frames, "objects": objects}


def scene_from_dict(doc: dict) -> SceneObservation:
    objects_doc = doc.get("objects")
    _require(isinstance(objects_doc, list), "scene missing 'objects' list")
    objects: dict[str, np.ndarray] = {}
    for od in objects_doc:
        name = od.get("name") if isinstance(od, dict) else None
        _require(isinstance(name, str) and name, "scene object missing 'name'")
        _require(name not in objects, f"duplicate scene object '{name}'")
        cloud = _finite_array(od.get("cloud", []), "point list", f"scene object '{name}'")
        _require(cloud.ndim == 2 and cloud.shape[1] == 3 and cloud.shape[0] > 0,
                 f"scene object '{name}': cloud must be a non-empty list of [x,y,z]")
        cloud = cloud.copy()
        cloud.flags.writeable = False
        objects[name] = cloud
    return SceneObservation(objects=objects, timestamp=float(doc.get("timestamp", 0.0)))


def load_scene(path) -> SceneObservation:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: top level must be an object")
    return scene_from_dict(doc)


def scene_to_dict(scene: SceneObservation) -> dict:
    return {
        "timestamp": scene.timestamp,
        "objects": [
            {"name": n, "cloud": c.tolist()} for n, c in scene.objects.items()
        ],
    }


def write_json(doc: dict, path) -> None:
    """Canonical JSON writer: stable key order so equal inputs give equal bytes."""
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
