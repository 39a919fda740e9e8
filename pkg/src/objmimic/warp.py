"""Object-aware trajectory warping and resampling.

A retargeted end-effector trajectory is deformed so its endpoints land on
transformed anchors: the warped start is exactly ``T_start`` applied to the
original start, the warped end exactly ``T_end`` applied to the original end.
Interior samples blend the two endpoint offsets by scalar progress along the
trajectory's net displacement, preserving the path's shape detail. When the
relational state between target and reference objects is unchanged across a
step, both anchors come from the target object; when it changes, the end
anchor comes from the reference object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import DegenerateTrajectoryError, DomainError, LocalizationError
from .ingest import object_centroid
from .se3 import Pose, _quat_from_rotvec, _quat_mul, _relative_rotvec, interpolate

if TYPE_CHECKING:
    from .ingest import SceneObservation
    from .plan import PlanStep

TARGET_ANCHORED = "target-anchored"
REFERENCE_ANCHORED = "reference-anchored"

# Below this net start-to-end displacement a trajectory counts as degenerate.
DEGENERATE_EPS = 1e-4


@dataclass(frozen=True)
class TaskSpaceTrajectory:
    """Timestamped end-effector poses for one arm."""

    side: str
    times: np.ndarray
    poses: tuple[Pose, ...]

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.shape[0] != len(self.poses):
            raise DomainError("times and poses must have equal length")
        if len(self.poses) < 2:
            raise DomainError("trajectory needs at least 2 samples")
        if not np.all(np.diff(times) > 0):
            raise DomainError("trajectory times must be strictly increasing")
        times = times.copy()
        times.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "poses", tuple(self.poses))

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def start(self) -> Pose:
        return self.poses[0]

    @property
    def end(self) -> Pose:
        return self.poses[-1]

    def translations(self) -> np.ndarray:
        return np.stack([p.translation for p in self.poses])

    def to_rows(self) -> list[list[float]]:
        return [[float(t), *p.to_row7()] for t, p in zip(self.times, self.poses)]

    @staticmethod
    def from_rows(side: str, rows) -> "TaskSpaceTrajectory":
        rows = np.asarray(rows, dtype=float)
        return TaskSpaceTrajectory(
            side=side,
            times=rows[:, 0],
            poses=tuple(Pose.from_row7(r) for r in rows[:, 1:8]),
        )


@dataclass(frozen=True)
class WarpSpec:
    """Start/end anchor transforms for one plan step."""

    t_start: Pose
    t_end: Pose
    mode: str

    def __post_init__(self):
        if self.mode not in (TARGET_ANCHORED, REFERENCE_ANCHORED):
            raise DomainError(f"unknown warp mode {self.mode!r}")

    @staticmethod
    def identity() -> "WarpSpec":
        return WarpSpec(Pose.identity(), Pose.identity(), TARGET_ANCHORED)


def _principal_yaw(cloud: np.ndarray) -> float:
    """Orientation of the planar principal axis, in [0, pi)."""
    xy = cloud[:, :2] - cloud[:, :2].mean(axis=0)
    cov = xy.T @ xy
    # leading eigenvector angle of the 2x2 covariance
    half = 0.5 * math.atan2(2.0 * cov[0, 1], cov[0, 0] - cov[1, 1])
    return half % math.pi


def estimate_object_transform(
    demo_cloud: np.ndarray, test_cloud: np.ndarray, yaw: bool = False
) -> Pose:
    """Rigid transform moving the demo-time cloud onto the test-time cloud.

    Default is the centroid shift with identity rotation, which is robust to
    partial clouds. Yaw mode additionally aligns the planar principal axes,
    rotating about the vertical through the demo centroid.
    """
    c_demo = object_centroid(demo_cloud)
    c_test = object_centroid(test_cloud)
    if not yaw:
        return Pose(np.array([1.0, 0, 0, 0]), c_test - c_demo)
    theta = _principal_yaw(np.asarray(test_cloud, float)) - _principal_yaw(
        np.asarray(demo_cloud, float)
    )
    # principal axes are heads-or-tails: wrap the difference into (-pi/2, pi/2]
    if theta > math.pi / 2:
        theta -= math.pi
    elif theta <= -math.pi / 2:
        theta += math.pi
    rot = Pose.from_axis_angle([0, 0, 1], theta)
    return Pose(rot.rotation, c_test - rot.rotate_vector(c_demo))


def compute_warp_spec(
    step: "PlanStep", scene: "SceneObservation", yaw: bool = False
) -> WarpSpec:
    """Anchor transforms for a plan step given the test-time observation."""
    if step.target not in scene.objects:
        raise LocalizationError(step.target)
    t_target = estimate_object_transform(step.target_cloud, scene.objects[step.target], yaw)
    relation_persists = step.relation == "contact" and step.contact_at_start
    if step.reference is None or relation_persists:
        return WarpSpec(t_target, t_target, TARGET_ANCHORED)
    if step.reference not in scene.objects:
        raise LocalizationError(step.reference)
    t_ref = estimate_object_transform(
        step.reference_cloud, scene.objects[step.reference], yaw
    )
    return WarpSpec(t_target, t_ref, REFERENCE_ANCHORED)


def _is_identity(p: Pose) -> bool:
    """True for transforms within 1e-12 of identity; such transforms (e.g.
    centroid-difference dust from an unmoved object) must not perturb the
    trajectory at all."""
    return (
        float(np.linalg.norm(p.rotation[1:])) < 5e-13
        and float(np.linalg.norm(p.translation)) < 1e-12
    )


def warp_trajectory(traj: TaskSpaceTrajectory, spec: WarpSpec) -> TaskSpaceTrajectory:
    """Deform a trajectory so its endpoints land on the transformed anchors.

    Interior samples keep the original shape: scalar progress s(t) along the
    net displacement blends the start and end translation offsets, and the
    endpoint rotation offsets blend geodesically on top of the original
    rotations. Degenerate trajectories (start == end) fall back to a constant
    offset, which requires equal start and end transforms.
    """
    if _is_identity(spec.t_start) and _is_identity(spec.t_end):
        return traj

    p_start, p_end = traj.start, traj.end
    warped_start = spec.t_start @ p_start
    warped_end = spec.t_end @ p_end
    d = p_end.translation - p_start.translation
    d_sq = float(np.dot(d, d))

    if math.sqrt(d_sq) <= DEGENERATE_EPS:
        gap_rot = spec.t_start.rotation_angle_to(spec.t_end)
        gap_t = spec.t_start.translation_distance_to(spec.t_end)
        if gap_rot > 1e-6 or gap_t > 1e-6:
            raise DegenerateTrajectoryError(
                "trajectory start and end coincide; warping needs distinct anchors "
                "(pure-offset fallback requires equal start/end transforms)"
            )
        # pure offset: apply the start transform's effect at every sample
        delta = warped_start.translation - p_start.translation
        poses = tuple(
            Pose(_quat_mul(spec.t_start.rotation, p.rotation), p.translation + delta,
                 p.frame, p.child)
            for p in traj.poses
        )
        return TaskSpaceTrajectory(traj.side, traj.times, poses)

    delta_start = warped_start.translation - p_start.translation
    delta_end = warped_end.translation - p_end.translation
    rot_arc = _relative_rotvec(spec.t_start.rotation, spec.t_end.rotation)

    poses = []
    for p in traj.poses:
        s = float(np.dot(p.translation - p_start.translation, d)) / d_sq
        s = min(1.0, max(0.0, s))
        if s == 0.0:
            q_off = spec.t_start.rotation
        elif s == 1.0:
            q_off = spec.t_end.rotation
        else:
            q_off = _quat_mul(spec.t_start.rotation, _quat_from_rotvec(rot_arc * s))
        poses.append(
            Pose(
                _quat_mul(q_off, p.rotation),
                p.translation + (1.0 - s) * delta_start + s * delta_end,
                p.frame,
                p.child,
            )
        )
    return TaskSpaceTrajectory(traj.side, traj.times, tuple(poses))


def resample_trajectory(traj: TaskSpaceTrajectory, rate: float) -> TaskSpaceTrajectory:
    """Resample onto a uniform grid at ``rate`` Hz spanning the same interval.

    Grid points that coincide with original sample times reproduce the
    original poses exactly.
    """
    if rate <= 0:
        raise DomainError(f"resample rate must be positive, got {rate}")
    t0 = float(traj.times[0])
    duration = float(traj.times[-1]) - t0
    n_out = int(math.floor(duration * rate + 1e-9)) + 1
    times_in = traj.times
    out_times = t0 + np.arange(n_out) / rate
    poses = []
    for t in out_times:
        k = int(np.searchsorted(times_in, t, side="right")) - 1
        k = min(max(k, 0), len(times_in) - 2)
        if t == times_in[k]:
            poses.append(traj.poses[k])
            continue
        if t == times_in[k + 1]:
            poses.append(traj.poses[k + 1])
            continue
        s = (t - times_in[k]) / (times_in[k + 1] - times_in[k])
        poses.append(interpolate(traj.poses[k], traj.poses[k + 1], float(min(1.0, max(0.0, s)))))
    return TaskSpaceTrajectory(traj.side, out_times, tuple(poses))
