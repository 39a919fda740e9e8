"""Weighted multi-task differential inverse kinematics.

Damped least squares with a backtracking line search: robust near
singularities, monotone in the weighted residual, and deterministic. Each
task weights a frame's position error (meters) and orientation error (the
rotation log taking the current to the target orientation, radians); the
weights scale the residual blocks directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, TaskError
from .model import (
    KinematicModel,
    _chain_eval,
    _frame_rt,
    _jacobian_columns,
    clamp_to_limits,
)
from .se3 import Pose, _matrix_to_quat, _quat_to_rotvec

# Retargeting task weights: shoulder orientation, elbow orientation,
# wrist orientation, wrist position.
BODY_WEIGHTS = (0.04, 0.04, 0.08, 1.0)
# Trajectory-tracking weights: palm position, palm rotation.
TRACK_POSITION_WEIGHT = 1.0
TRACK_ORIENTATION_WEIGHT = 0.08

_MAX_BACKTRACKS = 10


@dataclass(frozen=True)
class IkTask:
    frame: str
    target: Pose
    position_weight: float = 0.0
    orientation_weight: float = 0.0

    def __post_init__(self):
        if self.position_weight < 0 or self.orientation_weight < 0:
            raise ValueError("task weights must be non-negative")
        if self.position_weight == 0 and self.orientation_weight == 0:
            raise ValueError("task needs at least one positive weight")


@dataclass(frozen=True)
class IkSettings:
    damping: float = 1e-3
    max_iterations: int = 200
    tolerance: float = 1e-5
    step_scale: float = 1.0
    # Deterministic extra descents from spread-out seeds, tried only when the
    # first descent stalls above tolerance. Zero keeps warm-started tracking
    # chains cheap and continuous.
    restarts: int = 0

    def __post_init__(self):
        for name in ("damping", "max_iterations", "tolerance", "step_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.restarts < 0:
            raise ValueError("restarts must be non-negative")


@dataclass(frozen=True)
class IkResult:
    q: np.ndarray
    residual: float
    iterations: int


def _rotvec_from_matrix(m: np.ndarray) -> np.ndarray:
    return _quat_to_rotvec(_matrix_to_quat(m))


class _TaskContext:
    """Targets and frame definitions resolved once per solve call."""

    def __init__(self, model, tasks):
        self.tasks = tasks
        self.defs = []
        for task in tasks:
            if task.frame not in model.frame_by_name:
                raise TaskError(f"IK task references unknown frame {task.frame!r}")
            self.defs.append(model.frame_by_name[task.frame])
        self.links = {d.link for d in self.defs}
        self.target_rot = [t.target.rotation_matrix() for t in tasks]
        self.target_t = [np.array(t.target.translation) for t in tasks]


def _residual_and_jacobian(model, q, ctx: _TaskContext, with_jacobian=True):
    rts, joint_world = _chain_eval(model, q, ctx.links)
    rows = []
    jac_rows = [] if with_jacobian else None
    for k, (task, fdef) in enumerate(zip(ctx.tasks, ctx.defs)):
        if with_jacobian:
            jac, r_f, t_f = _jacobian_columns(model, rts, joint_world, fdef)
        else:
            r_f, t_f = _frame_rt(model, rts, fdef)
        if task.position_weight > 0:
            rows.append(task.position_weight * (ctx.target_t[k] - t_f))
            if with_jacobian:
                jac_rows.append(task.position_weight * jac[0:3])
        if task.orientation_weight > 0:
            # world-frame rotation log taking current to target orientation
            err = _rotvec_from_matrix(ctx.target_rot[k] @ r_f.T)
            rows.append(task.orientation_weight * err)
            if with_jacobian:
                jac_rows.append(task.orientation_weight * jac[3:6])
    r = np.concatenate(rows)
    if with_jacobian:
        return r, np.vstack(jac_rows)
    return r, None


def solve(
    model: KinematicModel,
    seed: np.ndarray,
    tasks: list[IkTask],
    settings: IkSettings | None = None,
    active_joints: list[str] | None = None,
) -> IkResult:
    """Minimize the weighted task residual from ``seed``, respecting limits.

    Best effort: the returned residual is the achieved one, and it never
    exceeds the residual at the seed. ``active_joints`` restricts the search
    to a subset of joints (others stay at their seed values).
    """
    settings = settings or IkSettings()
    ctx = _TaskContext(model, tasks)
    if active_joints is None:
        active = np.arange(model.n_joints)
    else:
        try:
            active = np.array([model.joint_index[n] for n in active_joints])
        except KeyError as e:
            raise TaskError(f"unknown joint {e.args[0]!r}") from None

    best = _descend(model, clamp_to_limits(model, seed), ctx, active, settings)
    if best.residual > settings.tolerance and settings.restarts > 0:
        # Short scouting descents from spread-out seeds find the right basin;
        # a final full-budget descent polishes the best candidate.
        scout = IkSettings(
            damping=settings.damping,
            max_iterations=min(60, settings.max_iterations),
            tolerance=settings.tolerance,
            step_scale=settings.step_scale,
        )
        rng = np.random.default_rng(0x1C4B5EED)
        for _ in range(settings.restarts):
            q_alt = clamp_to_limits(model, seed)
            q_alt[active] = rng.uniform(model.lower[active], model.upper[active])
            cand = _descend(model, q_alt, ctx, active, scout)
            if cand.residual < best.residual:
                best = cand
            if best.residual <= settings.tolerance:
                break
        if best.residual > settings.tolerance:
            best = _descend(model, best.q.copy(), ctx, active, settings)
    best.q.flags.writeable = False
    return best


def _descend(model, q, ctx, active, settings) -> IkResult:
    r, jac = _residual_and_jacobian(model, q, ctx)
    norm = float(np.linalg.norm(r))
    lam = settings.damping
    eye = np.eye(active.size)
    iterations = 0
    for _ in range(settings.max_iterations):
        if norm <= settings.tolerance:
            break
        if not np.all(np.isfinite(jac)):
            raise NumericError("non-finite Jacobian entries")
        j_act = jac[:, active]
        jtj = j_act.T @ j_act
        jtr = j_act.T @ r
        # Damped least squares with a backtracking line search: each damping
        # level tries a few step fractions before raising the damping, so
        # accepted iterations are strictly descending and the solver neither
        # overshoots nor gets pinned at an over-damped crawl.
        improved = False
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            dq_act = np.linalg.solve(jtj + lam**2 * eye, jtr)
            for alpha in (1.0, 0.5, 0.25, 0.125):
                q_cand = q.copy()
                q_cand[active] += settings.step_scale * alpha * dq_act
                q_cand = clamp_to_limits(model, q_cand)
                r_cand, _ = _residual_and_jacobian(model, q_cand, ctx, with_jacobian=False)
                norm_cand = float(np.linalg.norm(r_cand))
                if norm_cand < norm - 1e-15:
                    gain = norm - norm_cand
                    step_size = float(np.max(np.abs(q_cand - q)))
                    q, norm = q_cand, norm_cand
                    r, jac = _residual_and_jacobian(model, q, ctx)
                    accepted = True
                    if alpha == 1.0:
                        lam = max(settings.damping, lam * 0.1)
                    # residuals floored by limits or task conflicts crawl
                    # forever; call it converged once relative progress is
                    # microscopic
                    improved = gain > max(1e-12, 1e-4 * norm) and step_size > 1e-9
                    iterations += 1
                    break
            if accepted:
                break
            lam *= 10.0
        if not improved:
            break
    return IkResult(q=q.copy(), residual=norm, iterations=iterations)


def _arm_joints(model: KinematicModel, side: str) -> list[str]:
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    prefix = side[0] + "_"
    suffixes = ("shoulder_pitch", "shoulder_roll", "shoulder_yaw", "elbow",
                "wrist_yaw", "wrist_pitch", "wrist_roll")
    return [prefix + s for s in suffixes]


def solve_body_step(
    model: KinematicModel,
    seed: np.ndarray,
    shoulder_target: Pose,
    elbow_target: Pose,
    wrist_target: Pose,
    side: str,
    settings: IkSettings | None = None,
) -> IkResult:
    """One frame of body retargeting for one arm.

    Tracks the demonstrated shoulder and elbow orientations softly and the
    wrist pose firmly, so the wrist lands accurately while the arm keeps a
    human-like posture. Defaults to a few restarts: retargeting is an offline
    per-plan computation where escaping poor basins matters more than speed.
    """
    if settings is None:
        settings = IkSettings(restarts=60)
    prefix = side[0] + "_"
    w_sh, w_el, w_wr_rot, w_wr_pos = BODY_WEIGHTS
    tasks = [
        IkTask(prefix + "shoulder", shoulder_target, orientation_weight=w_sh),
        IkTask(prefix + "elbow", elbow_target, orientation_weight=w_el),
        IkTask(prefix + "wrist", wrist_target,
               position_weight=w_wr_pos, orientation_weight=w_wr_rot),
    ]
    return solve(model, seed, tasks, settings, active_joints=_arm_joints(model, side))


def solve_hand_tracking_step(
    model: KinematicModel,
    seed: np.ndarray,
    palm_target: Pose,
    side: str,
    settings: IkSettings | None = None,
) -> IkResult:
    """One tracking step of a warped palm trajectory for one arm."""
    prefix = side[0] + "_"
    tasks = [
        IkTask(prefix + "palm", palm_target,
               position_weight=TRACK_POSITION_WEIGHT,
               orientation_weight=TRACK_ORIENTATION_WEIGHT),
    ]
    return solve(model, seed, tasks, settings, active_joints=_arm_joints(model, side))
