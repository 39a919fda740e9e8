"""Plan-to-robot retargeting: body IK over motion segments, producing the
task-space palm trajectories that warping and execution consume.

Per frame of a plan step's motion segment, the demonstrated shoulder and
elbow orientations plus the wrist pose drive a weighted IK solve; the
robot's palm poses along the solved joint path form the step's task-space
trajectory. A degraded mode mimics embodiment-blind palm-centroid tracking:
it takes the demonstrator's fingertip-centroid path directly and drops all
orientation information, for baseline comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hands import CanonicalHandPose, canonical_fingertips
from .ik import IkSettings, solve_body_step
from .ingest import HumanMotionTrace
from .model import KinematicModel, forward_kinematics
from .plan import ReferencePlan
from .se3 import Pose
from .warp import TaskSpaceTrajectory

SIDES = ("left", "right")

# A side participates in a step when its palm moves or turns at least this much.
MOVE_POSITION_EPS = 0.02
MOVE_ROTATION_EPS = 0.2


@dataclass(frozen=True)
class RetargetedStep:
    """One plan step, mapped to the robot: per-side task-space trajectories
    plus the hand angle curves to replay."""

    index: int
    times: np.ndarray                       # demo-clock timestamps, seconds
    trajectories: dict[str, TaskSpaceTrajectory]   # moving sides only
    hand_angles: dict[str, np.ndarray]      # (n_frames, 15) per side


@dataclass(frozen=True)
class RetargetedPlan:
    plan: ReferencePlan
    steps: tuple[RetargetedStep, ...]
    degraded: bool = False


def _segment_times(plan: ReferencePlan, start: int, stop: int) -> np.ndarray:
    return np.arange(start, stop) / plan.fps


def _moving(segment: HumanMotionTrace, side: str) -> bool:
    palms = segment.body_series(f"{side[0]}_palm")
    base = palms[0]
    for p in palms[1:]:
        if (
            base.translation_distance_to(p) > MOVE_POSITION_EPS
            or base.rotation_angle_to(p) > MOVE_ROTATION_EPS
        ):
            return True
    return False


def body_retarget_segment(
    model: KinematicModel,
    segment: HumanMotionTrace,
    side: str,
    seed: np.ndarray,
    settings: IkSettings | None = None,
) -> tuple[list[Pose], np.ndarray]:
    """IK-track a motion segment with one arm; returns the robot palm poses
    and the final joint configuration (for warm-starting the next segment)."""
    prefix = side[0] + "_"
    chain_settings = settings or IkSettings()
    q = np.array(seed)
    palm_frame = prefix + "palm"
    palms = []
    for i, frame in enumerate(segment.frames):
        res = solve_body_step(
            model,
            q,
            frame.body[prefix + "shoulder"],
            frame.body[prefix + "elbow"],
            frame.body[prefix + "wrist"],
            side,
            # cold solves get the default restart budget; warm chains stay cheap
            None if i == 0 and settings is None else chain_settings,
        )
        q = np.array(res.q)
        palms.append(forward_kinematics(model, q, [palm_frame])[palm_frame])
    return palms, q


def _fingertip_centroid_path(segment: HumanMotionTrace, side: str) -> list[Pose]:
    """Embodiment-blind baseline: world-frame centroid of the demonstrator's
    fingertips, with orientation discarded (identity)."""
    prefix = side[0] + "_"
    out = []
    for frame in segment.frames:
        tips_local = canonical_fingertips(CanonicalHandPose(side, frame.hands[side]))
        tips_world = frame.body[prefix + "palm"].transform_point(tips_local)
        out.append(Pose(np.array([1.0, 0, 0, 0]), tips_world.mean(axis=0)))
    return out


def prepare_plan(
    plan: ReferencePlan,
    model: KinematicModel,
    settings: IkSettings | None = None,
    degraded: bool = False,
) -> RetargetedPlan:
    """Retarget every step's motion segment onto the robot, once per plan.

    The result is scene-independent; execution warps these trajectories per
    episode against the observed object locations.
    """
    steps = []
    seeds = {side: np.zeros(model.n_joints) for side in SIDES}
    for step in plan.steps:
        times = _segment_times(plan, step.start, step.stop)
        trajectories = {}
        hand_angles = {}
        for side in SIDES:
            hand_angles[side] = step.segment.hand_series(side)
            if not _moving(step.segment, side):
                continue
            if degraded:
                palms = _fingertip_centroid_path(step.segment, side)
            else:
                palms, seeds[side] = body_retarget_segment(
                    model, step.segment, side, seeds[side], settings
                )
            trajectories[side] = TaskSpaceTrajectory(
                side=side, times=times, poses=tuple(palms)
            )
        steps.append(
            RetargetedStep(
                index=step.index,
                times=times,
                trajectories=trajectories,
                hand_angles=hand_angles,
            )
        )
    return RetargetedPlan(plan=plan, steps=tuple(steps), degraded=degraded)
