"""Dexterous-hand mapping: canonical 15-DoF hand angles to the robot's 6-DoF
hand via fingertip-position optimization.

The canonical hand is a fixed-size planar-finger model; demonstrator hand
poses arrive as its joint angles. Retargeting minimizes the summed squared
fingertip mismatch between the robot hand and the (optionally scaled)
canonical fingertips, under joint limits, with projected gradient descent.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError, NumericError
from .model import KinematicModel, load_bundled_model

log = logging.getLogger(__name__)

_EYE3 = np.eye(3)
_EYE3.flags.writeable = False


def _cross3(a, b):
    return np.array(
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    )

FINGER_ORDER = ("thumb", "index", "middle", "ring", "pinky")
TIP_FRAMES = tuple(f"{f}_tip" for f in FINGER_ORDER)
CANONICAL_DOF = 15
ANGLE_MAX = math.pi / 2 + 0.2


@dataclass(frozen=True)
class CanonicalHandPose:
    """15 canonical hand angles: (mcp, pip, dip) flexion per finger, ordered
    thumb, index, middle, ring, pinky."""

    side: str
    angles: np.ndarray

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=float).reshape(-1)
        if angles.shape[0] != CANONICAL_DOF:
            raise DomainError(f"canonical hand pose needs {CANONICAL_DOF} angles")
        if not np.all(np.isfinite(angles)):
            raise DomainError("non-finite canonical hand angles")
        if np.any(angles < -1e-9) or np.any(angles > ANGLE_MAX + 1e-9):
            raise DomainError(
                f"canonical angles must lie in [0, {ANGLE_MAX:.3f}], got {angles}"
            )
        angles = angles.copy()
        angles.flags.writeable = False
        object.__setattr__(self, "angles", angles)


@dataclass(frozen=True)
class RobotHandPose:
    side: str
    angles: np.ndarray

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=float).reshape(-1)
        angles = angles.copy()
        angles.flags.writeable = False
        object.__setattr__(self, "angles", angles)


@dataclass(frozen=True)
class HandRetargetSettings:
    max_iterations: int = 100
    scale: float | None = None   # None: robot/canonical middle-finger ratio
    slew_limit: float = 0.3      # rad per frame, trajectory mode
    gradient_tolerance: float = 1e-10


class FingertipEvaluator:
    """Precompiled fingertip chains of a hand model: positions and position
    Jacobians without the generic tree walk."""

    def __init__(self, model: KinematicModel, tip_frames: tuple[str, ...] = TIP_FRAMES):
        self.model = model
        self.n = model.n_joints
        self.eye = np.eye(model.n_joints)
        self.chains = []
        for name in tip_frames:
            fdef = model.frame_by_name[name]
            joints = model._chain[fdef.link]
            self.chains.append(
                (
                    tuple(
                        (
                            i,
                            model._origin_rot[i],
                            model._origin_t[i],
                            model._axis_skew[i],
                            model._axis_skew2[i],
                            np.asarray(model.joints[i].axis),
                        )
                        for i in joints
                    ),
                    fdef.offset.rotation_matrix(),
                    np.asarray(fdef.offset.translation),
                )
            )

    def tips(self, q: np.ndarray) -> np.ndarray:
        return self._eval(q, with_jacobian=False)[0]

    def tips_and_jacobians(self, q: np.ndarray):
        return self._eval(q, with_jacobian=True)

    def _eval(self, q, with_jacobian):
        tips = np.empty((len(self.chains), 3))
        jacs = [] if with_jacobian else None
        for c, (joints, r_off, t_off) in enumerate(self.chains):
            r = np.eye(3)
            t = np.zeros(3)
            world = []
            for i, r_o, t_o, k, k2, axis in joints:
                r_joint = r @ r_o
                t_joint = t + r @ t_o
                angle = q[i]
                spin = _EYE3 + math.sin(angle) * k + (1.0 - math.cos(angle)) * k2
                r = r_joint @ spin
                t = t_joint
                if with_jacobian:
                    world.append((i, r_joint @ axis, t_joint))
            tip = t + r @ t_off
            tips[c] = tip
            if with_jacobian:
                jac = np.zeros((3, self.n))
                for i, omega, p_joint in world:
                    jac[:, i] = _cross3(omega, tip - p_joint)
                jacs.append(jac)
        return tips, jacs


@lru_cache(maxsize=None)
def _bundled(name: str) -> tuple[KinematicModel, FingertipEvaluator]:
    model = load_bundled_model(name)
    return model, FingertipEvaluator(model)


def canonical_hand_model() -> KinematicModel:
    return _bundled("canonical_hand")[0]


def robot_hand_model() -> KinematicModel:
    return _bundled("robot_hand")[0]


def canonical_fingertips(
    pose: CanonicalHandPose, model: KinematicModel | None = None
) -> np.ndarray:
    """Fingertip positions (5, 3) of the canonical hand in the wrist frame,
    ordered thumb, index, middle, ring, pinky."""
    if model is None:
        evaluator = _bundled("canonical_hand")[1]
    else:
        evaluator = FingertipEvaluator(model)
    return evaluator.tips(pose.angles)


def finger_length(model: KinematicModel, tip_frame: str) -> float:
    """Length of a finger: link lengths from the MCP joint to the tip."""
    fdef = model.frame_by_name[tip_frame]
    chain = model._chain[fdef.link]
    total = float(np.linalg.norm(fdef.offset.translation))
    for idx in chain[1:]:  # chain[0] is the MCP; its origin is the palm base
        total += float(np.linalg.norm(model.joints[idx].origin.translation))
    return total


@lru_cache(maxsize=None)
def default_scale(hand_model: KinematicModel, canonical_model: KinematicModel) -> float:
    """Human-to-robot size ratio: middle-finger length ratio of the models."""
    return finger_length(hand_model, "middle_tip") / finger_length(
        canonical_model, "middle_tip"
    )


def _objective(evaluator, q, targets):
    d = evaluator.tips(q) - targets
    return float((d * d).sum())


def _descend(evaluator, q0, targets, lower, upper, settings):
    """Projected Levenberg-Marquardt on the fingertip least-squares.

    Monotone: candidate steps are only accepted when the objective strictly
    decreases, and rejected steps raise the damping and retry.
    """
    q = np.clip(q0, lower, upper)
    f = _objective(evaluator, q, targets)
    if not math.isfinite(f):
        raise NumericError("non-finite hand retargeting objective")
    lam = 1e-3
    eye = evaluator.eye
    for _ in range(settings.max_iterations):
        tips, jacs = evaluator.tips_and_jacobians(q)
        jac = np.vstack(jacs)
        if not np.all(np.isfinite(jac)):
            raise NumericError("non-finite hand retargeting gradient")
        r = (tips - targets).ravel()
        g = jac.T @ r
        if float(g @ g) < settings.gradient_tolerance:
            break
        jtj = jac.T @ jac
        improved = False
        for _ in range(12):
            dq = np.linalg.solve(jtj + lam * lam * eye, -g)
            q_cand = np.clip(q + dq, lower, upper)
            f_cand = _objective(evaluator, q_cand, targets)
            if f_cand < f - 1e-16:
                q, f = q_cand, f_cand
                lam = max(1e-4, lam * 0.2)
                improved = True
                break
            lam *= 10.0
        if not improved:
            break
    return q, f


def retarget_hand(
    pose: CanonicalHandPose,
    hand_model: KinematicModel | None = None,
    settings: HandRetargetSettings | None = None,
    warm_start: np.ndarray | None = None,
) -> RobotHandPose:
    """Map one canonical hand pose onto the robot hand.

    Minimizes the summed squared distance between robot fingertips and the
    scaled canonical fingertips, within joint limits. The result never scores
    worse than the zero configuration or the warm start.
    """
    settings = settings or HandRetargetSettings()
    if hand_model is None:
        hand_model, evaluator = _bundled("robot_hand")
    else:
        evaluator = FingertipEvaluator(hand_model)
    alpha = (
        settings.scale
        if settings.scale is not None
        else default_scale(hand_model, canonical_hand_model())
    )
    targets = alpha * canonical_fingertips(pose)
    lower, upper = hand_model.lower, hand_model.upper
    zero = np.clip(np.zeros(hand_model.n_joints), lower, upper)
    start = zero if warm_start is None else np.asarray(warm_start, dtype=float)
    q, f = _descend(evaluator, start, targets, lower, upper, settings)
    if warm_start is not None:
        f_zero = _objective(evaluator, zero, targets)
        if f > f_zero:
            q, f = _descend(evaluator, zero, targets, lower, upper, settings)
    return RobotHandPose(side=pose.side, angles=q)


def retarget_hand_trajectory(
    poses: list[CanonicalHandPose],
    hand_model: KinematicModel | None = None,
    settings: HandRetargetSettings | None = None,
) -> list[RobotHandPose]:
    """Per-frame retargeting with warm starts and a per-joint slew bound.

    Jumps beyond the slew limit are clamped toward the previous frame, with a
    warning; this trades tracking error for command smoothness.
    """
    if not poses:
        raise DomainError("empty hand pose sequence")
    settings = settings or HandRetargetSettings()
    if hand_model is None:
        hand_model = _bundled("robot_hand")[0]
    out: list[RobotHandPose] = []
    prev: np.ndarray | None = None
    clamped_frames = 0
    for pose in poses:
        result = retarget_hand(pose, hand_model, settings, warm_start=prev)
        q = np.asarray(result.angles)
        if prev is not None:
            jump = q - prev
            over = np.abs(jump) > settings.slew_limit
            if over.any():
                clamped_frames += 1
                q = np.where(over, prev + np.sign(jump) * settings.slew_limit, q)
                result = RobotHandPose(side=pose.side, angles=q)
        out.append(result)
        prev = q
    if clamped_frames:
        log.warning(
            "hand retargeting slew limit engaged on %d of %d frames",
            clamped_frames, len(poses),
        )
    return out
