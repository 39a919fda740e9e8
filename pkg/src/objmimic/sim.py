"""Deterministic kinematic rollout simulator and evaluation harness.

Executes retargeted plans against randomized scenes at 40 Hz: per step it
localizes objects from the simulated state, computes warp anchors, tracks
the warped palm trajectories with IK, and replays retargeted hand motions.
A proximity-plus-closing grasp rule rigidly attaches objects to the palm;
palm pushes drive articulated objects along their axis. Success is a
parametrized predicate on the terminal state. Episodes are pure functions
of (plan, config, seed).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DegenerateTrajectoryError,
    EmptyDatasetError,
    InfeasibleLayoutError,
    LocalizationError,
)
from .hands import CanonicalHandPose, HandRetargetSettings, retarget_hand
from .ik import IkSettings, IkTask, _arm_joints, solve, solve_hand_tracking_step
from .ingest import SceneObservation, object_centroid
from .model import KinematicModel, forward_kinematics, frame_pose, load_bundled_model
from .plan import ReferencePlan
from .retarget import SIDES, RetargetedPlan
from .se3 import Pose
from .taskconfig import ArticulationSpec, PredicateSpec, TaskConfig
from .warp import compute_warp_spec, resample_trajectory, warp_trajectory

log = logging.getLogger(__name__)

CONTROL_RATE = 40.0
CLOSING_WINDOW = 5       # ticks
CLOSING_DELTA = 0.1      # rad of mean flexion change across the window
MIN_ATTACH_TIPS = 2

FAILURE_STAGES = ("localization", "ik", "grasp", "predicate")


@dataclass
class ObjectState:
    name: str
    pose: Pose
    cloud_local: np.ndarray
    articulation: ArticulationSpec | None = None
    value: float = 0.0

    def world_cloud(self) -> np.ndarray:
        cloud = self.pose.transform_point(self.cloud_local)
        if self.articulation is not None:
            cloud = cloud + self.axis_world() * self.value
        return cloud

    def centroid(self) -> np.ndarray:
        base = self.pose.transform_point(self.cloud_local.mean(axis=0))
        if self.articulation is not None:
            base = base + self.axis_world() * self.value
        return base

    def axis_world(self) -> np.ndarray:
        return self.pose.rotate_vector(self.articulation.axis)


@dataclass
class SceneState:
    objects: dict[str, ObjectState]
    attached: dict[str, tuple[str, Pose] | None] = field(
        default_factory=lambda: {s: None for s in SIDES}
    )


@dataclass(frozen=True)
class InitialStateSampler:
    """Per-object placement boxes and yaw ranges, plus the object clouds."""

    regions: dict[str, tuple[np.ndarray, np.ndarray]]
    yaw_ranges: dict[str, tuple[float, float]]
    clouds: dict[str, np.ndarray]
    articulations: dict[str, ArticulationSpec]
    min_separation: float = 0.05
    max_rejects: int = 1000


@dataclass(frozen=True)
class RolloutRecord:
    seed: int
    observations: np.ndarray    # (T, n_joints) joint positions before each command
    actions: np.ndarray         # (T, n_joints) absolute joint position targets
    snapshots: list[dict]
    success: bool


@dataclass(frozen=True)
class EpisodeReport:
    seed: int
    success: bool
    failure_stage: str | None
    wall_time: float


@dataclass(frozen=True)
class EvalSummary:
    n_episodes: int
    successes: int
    failure_histogram: dict[str, int]
    reports: tuple[EpisodeReport, ...]
    records: tuple[RolloutRecord, ...]

    @property
    def success_rate(self) -> float:
        return self.successes / self.n_episodes if self.n_episodes else 0.0


def object_clouds_from_plan(plan: ReferencePlan) -> dict[str, np.ndarray]:
    """Centered (object-frame) clouds for every object the plan mentions,
    taken from each object's earliest appearance as target or reference."""
    clouds: dict[str, np.ndarray] = {}
    for step in plan.steps:
        if step.target not in clouds:
            clouds[step.target] = step.target_cloud
        if step.reference is not None and step.reference not in clouds:
            clouds[step.reference] = step.reference_cloud
    return {name: c - c.mean(axis=0) for name, c in clouds.items()}


def make_sampler(config: TaskConfig, plan: ReferencePlan) -> InitialStateSampler:
    clouds = object_clouds_from_plan(plan)
    missing = [n for n in config.objects if n not in clouds]
    if missing:
        raise ConfigError(
            f"objects {missing} have no point cloud in the plan; cannot simulate them"
        )
    return InitialStateSampler(
        regions={n: (o.region_lo, o.region_hi) for n, o in config.objects.items()},
        yaw_ranges={n: o.yaw_range for n, o in config.objects.items()},
        clouds={n: clouds[n] for n in config.objects},
        articulations={
            n: o.articulation for n, o in config.objects.items() if o.articulation
        },
        min_separation=config.min_separation,
    )


def sample_initial_state(sampler: InitialStateSampler, seed: int) -> SceneState:
    """Rejection-sample object placements: inside their regions, pairwise
    centroid separation at least the configured minimum."""
    rng = np.random.default_rng(seed)
    names = list(sampler.regions)
    for _ in range(sampler.max_rejects):
        positions = {}
        yaws = {}
        for name in names:
            lo, hi = sampler.regions[name]
            positions[name] = rng.uniform(lo, hi)
            y0, y1 = sampler.yaw_ranges[name]
            yaws[name] = rng.uniform(y0, y1) if y1 > y0 else y0
        ok = True
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                if np.linalg.norm(positions[a] - positions[b]) < sampler.min_separation:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            objects = {}
            for name in names:
                pose = Pose.from_axis_angle([0, 0, 1], yaws[name], positions[name])
                objects[name] = ObjectState(
                    name=name,
                    pose=pose,
                    cloud_local=sampler.clouds[name],
                    articulation=sampler.articulations.get(name),
                    value=0.0,
                )
            return SceneState(objects=objects)
    raise InfeasibleLayoutError(
        f"could not place objects with separation >= {sampler.min_separation} "
        f"after {sampler.max_rejects} attempts"
    )


def observe(state: SceneState, rng: np.random.Generator, noise_sigma: float) -> SceneObservation:
    """Simulated localization: world clouds, optionally with Gaussian noise."""
    clouds = {}
    for name, obj in state.objects.items():
        cloud = obj.world_cloud()
        if noise_sigma > 0:
            cloud = cloud + rng.normal(0.0, noise_sigma, cloud.shape)
        clouds[name] = cloud
    return SceneObservation(objects=clouds)


def evaluate_predicate(pred: PredicateSpec, state: SceneState) -> bool:
    target = state.objects[pred.target]
    if pred.kind == "articulation_closed":
        if target.articulation is None:
            return False
        return target.articulation.travel - target.value <= pred.threshold
    if pred.kind == "pose_region":
        ref = state.objects[pred.reference]
        delta = target.centroid() - ref.centroid()
        if np.linalg.norm(delta[:2]) > pred.horizontal_radius:
            return False
        if not pred.z_lo <= delta[2] <= pred.z_hi:
            return False
        if pred.min_tilt > 0:
            up = target.pose.rotate_vector([0.0, 0.0, 1.0])
            tilt = math.acos(min(1.0, max(-1.0, float(up[2]))))
            if tilt < pred.min_tilt:
                return False
        return True
    ref = state.objects[pred.reference]
    ref_cloud = ref.world_cloud()
    target_cloud = target.world_cloud()
    if pred.kind == "containment":
        lo = ref_cloud.min(axis=0)
        hi = ref_cloud.max(axis=0)
        inside = np.all((target_cloud >= lo) & (target_cloud <= hi), axis=1)
        return float(inside.mean()) >= pred.fraction
    if pred.kind == "relative_placement":
        lo = ref_cloud.min(axis=0)
        hi = ref_cloud.max(axis=0)
        xy_ok = np.all((target_cloud[:, :2] >= lo[:2]) & (target_cloud[:, :2] <= hi[:2]), axis=1)
        z_ok = (target_cloud[:, 2] >= hi[2] + pred.z_lo) & (
            target_cloud[:, 2] <= hi[2] + pred.z_hi
        )
        return float((xy_ok & z_ok).mean()) >= pred.fraction
    raise ConfigError(f"unknown predicate kind {pred.kind!r}")


class SimModels:
    """Humanoid plus hand submodel, with the index bookkeeping the executor
    needs every tick."""

    def __init__(self, model: KinematicModel | None = None,
                 hand_model: KinematicModel | None = None):
        self.model = model or load_bundled_model("humanoid")
        self.hand_model = hand_model or load_bundled_model("robot_hand")
        self.hand_indices = {}
        self.flexion_rows = {}
        self.tip_frames = {}
        self.palm_frames = {}
        hand_joints = self.hand_model.joint_names
        flex_rows = [i for i, n in enumerate(hand_joints) if n.endswith("_flex")]
        for side in SIDES:
            prefix = side[0] + "_"
            try:
                self.hand_indices[side] = np.array(
                    [self.model.joint_index[prefix + n] for n in hand_joints]
                )
            except KeyError as e:
                raise ConfigError(
                    f"humanoid model lacks hand joint {e.args[0]!r}"
                ) from None
            self.flexion_rows[side] = np.array(flex_rows)
            self.tip_frames[side] = [
                f for f in self.model.frame_names
                if f.startswith(prefix) and f.endswith("_tip")
            ]
            self.palm_frames[side] = prefix + "palm"


def _interp_hand_curve(times: np.ndarray, angles: np.ndarray, out_times: np.ndarray) -> np.ndarray:
    out = np.empty((len(out_times), angles.shape[1]))
    for d in range(angles.shape[1]):
        out[:, d] = np.interp(out_times, times, angles[:, d])
    return out


def execute_plan(
    prepared: RetargetedPlan,
    state: SceneState,
    models: SimModels,
    config: TaskConfig,
    seed: int = 0,
) -> tuple[RolloutRecord, EpisodeReport]:
    """Run one episode. Failures are recorded per stage, never raised."""
    t_begin = time.perf_counter()
    model = models.model
    plan = prepared.plan
    track_settings = config.ik
    hand_settings = HandRetargetSettings()
    noise_rng = np.random.default_rng([seed, 1])

    q = np.zeros(model.n_joints)
    observations = []
    actions = []
    snapshots = []
    flex_history = {side: [] for side in SIDES}
    hand_warm = {side: None for side in SIDES}
    hand_cache = {side: None for side in SIDES}   # (canonical angles, command)
    palm_prev = {side: None for side in SIDES}
    loc_failed = False
    ik_failed = False
    closing_seen = False
    ever_attached = False
    # degraded mode drops all orientation tracking
    degraded = prepared.degraded

    for step_r, step_p in zip(prepared.steps, plan.steps):
        observation = observe(state, noise_rng, config.noise_sigma)
        try:
            spec = compute_warp_spec(step_p, observation)
        except LocalizationError as e:
            log.warning("seed %d: %s", seed, e)
            loc_failed = True
            break
        warped = {}
        try:
            for side, traj in step_r.trajectories.items():
                warped[side] = resample_trajectory(warp_trajectory(traj, spec), CONTROL_RATE)
        except DegenerateTrajectoryError as e:
            log.warning("seed %d: %s", seed, e)
            ik_failed = True
            break
        if warped:
            tick_times = next(iter(warped.values())).times
        else:
            duration = step_r.times[-1] - step_r.times[0]
            n = max(2, int(math.floor(duration * CONTROL_RATE + 1e-9)) + 1)
            tick_times = step_r.times[0] + np.arange(n) / CONTROL_RATE
        hand_curves = {
            side: _interp_hand_curve(step_r.times, step_r.hand_angles[side], tick_times)
            for side in SIDES
        }
        target_obj = state.objects[step_p.target]

        for k in range(len(tick_times)):
            prev_q = q.copy()
            palm_poses = {}
            for side in SIDES:
                if side in warped:
                    target = warped[side].poses[k]
                    if degraded:
                        res = _track_position_only(model, q, target, side, track_settings)
                    else:
                        res = solve_hand_tracking_step(model, q, target, side, track_settings)
                    q = np.array(res.q)
                    palm = frame_pose(model, q, models.palm_frames[side])
                    palm_poses[side] = palm
                    pos_err = float(np.linalg.norm(palm.translation - target.translation))
                    if pos_err > config.ik_fail_pos:
                        ik_failed = True
                # hands replay the retargeted demonstrator fingers; repeated
                # canonical poses (held grips) reuse the previous command
                target_angles = np.clip(hand_curves[side][k], 0.0, 1.77)
                cached = hand_cache[side]
                if cached is not None and np.array_equal(cached[0], target_angles):
                    angles = cached[1]
                else:
                    robot_hand = retarget_hand(
                        CanonicalHandPose(side, target_angles),
                        models.hand_model, hand_settings, warm_start=hand_warm[side],
                    )
                    angles = np.asarray(robot_hand.angles)
                    if hand_warm[side] is not None:
                        jump = angles - hand_warm[side]
                        over = np.abs(jump) > hand_settings.slew_limit
                        if over.any():
                            angles = np.where(
                                over,
                                hand_warm[side] + np.sign(jump) * hand_settings.slew_limit,
                                angles,
                            )
                    hand_cache[side] = (target_angles, angles)
                hand_warm[side] = angles
                q[models.hand_indices[side]] = angles

            observations.append(prev_q)
            actions.append(q.copy())

            # grasp rule: closing hand with enough fingertips near the target
            for side in SIDES:
                flex = float(np.mean(q[models.hand_indices[side]][models.flexion_rows[side]]))
                history = flex_history[side]
                history.append(flex)
                if len(history) <= CLOSING_WINDOW:
                    continue
                delta = flex - history[-1 - CLOSING_WINDOW]
                closing = delta > CLOSING_DELTA
                opening = delta < -CLOSING_DELTA
                if closing:
                    closing_seen = True
                holding = state.attached[side]
                if holding is not None and opening:
                    state.attached[side] = None
                elif holding is None and closing and target_obj.articulation is None:
                    tips = forward_kinematics(model, q, models.tip_frames[side])
                    tip_pos = np.stack([p.translation for p in tips.values()])
                    cloud = target_obj.world_cloud()
                    d = np.linalg.norm(tip_pos[:, None, :] - cloud[None, :, :], axis=2)
                    near = int((d.min(axis=1) < config.grasp_threshold).sum())
                    if near >= MIN_ATTACH_TIPS:
                        palm = palm_poses.get(side)
                        if palm is None:
                            palm = frame_pose(model, q, models.palm_frames[side])
                        offset = palm.inverse() @ target_obj.pose
                        state.attached[side] = (target_obj.name, offset)
                        ever_attached = True

            # carry attached objects; push articulated ones
            for side in SIDES:
                palm = palm_poses.get(side)
                holding = state.attached[side]
                if holding is not None:
                    if palm is None:
                        palm = frame_pose(model, q, models.palm_frames[side])
                    name, offset = holding
                    state.objects[name].pose = palm @ offset
                if (
                    target_obj.articulation is not None
                    and palm is not None
                    and palm_prev[side] is not None
                ):
                    gap = np.linalg.norm(
                        palm_prev[side].translation[None, :] - target_obj.world_cloud(),
                        axis=1,
                    ).min()
                    if gap < config.push_threshold:
                        delta = float(
                            np.dot(
                                palm.translation - palm_prev[side].translation,
                                target_obj.axis_world(),
                            )
                        )
                        if delta > 0:
                            target_obj.value = min(
                                target_obj.value + delta, target_obj.articulation.travel
                            )
                if palm is not None:
                    palm_prev[side] = palm

            snapshots.append(
                {
                    "objects": {
                        name: {"pose": obj.pose.to_row7(), "value": obj.value}
                        for name, obj in state.objects.items()
                    },
                    "attached": {
                        side: (state.attached[side][0] if state.attached[side] else None)
                        for side in SIDES
                    },
                }
            )

    success = (
        not loc_failed
        and evaluate_predicate(config.predicate, state)
    )
    if success:
        stage = None
    elif loc_failed:
        stage = "localization"
    elif ik_failed:
        stage = "ik"
    elif closing_seen and not ever_attached:
        stage = "grasp"
    else:
        stage = "predicate"
    record = RolloutRecord(
        seed=seed,
        observations=np.asarray(observations) if observations else np.zeros((0, model.n_joints)),
        actions=np.asarray(actions) if actions else np.zeros((0, model.n_joints)),
        snapshots=snapshots,
        success=success,
    )
    report = EpisodeReport(
        seed=seed,
        success=success,
        failure_stage=stage,
        wall_time=time.perf_counter() - t_begin,
    )
    return record, report


def _track_position_only(model, q, target, side, settings):
    prefix = side[0] + "_"
    task = IkTask(prefix + "palm", target, position_weight=1.0)
    return solve(model, q, [task], settings, active_joints=_arm_joints(model, side))


def track_plan(
    prepared: RetargetedPlan,
    scene: SceneObservation,
    models: SimModels,
    settings: IkSettings | None = None,
    rate: float = CONTROL_RATE,
) -> tuple[np.ndarray, np.ndarray, list[dict]]:
    """Joint-command trajectory for a plan against one static observation.

    No object-state simulation: warps every step against the given scene and
    tracks the result, the way the commands would stream to a robot. Returns
    (times, commands, per-step endpoint verification entries).
    """
    model = models.model
    settings = settings or IkSettings()
    hand_settings = HandRetargetSettings()
    q = np.zeros(model.n_joints)
    times_out: list[float] = []
    rows: list[np.ndarray] = []
    verification: list[dict] = []
    hand_warm = {side: None for side in SIDES}
    hand_cache: dict[str, tuple | None] = {side: None for side in SIDES}
    for step_r, step_p in zip(prepared.steps, prepared.plan.steps):
        spec = compute_warp_spec(step_p, scene)
        warped = {}
        for side, traj in step_r.trajectories.items():
            w = warp_trajectory(traj, spec)
            e_start = float(
                np.linalg.norm(w.start.translation - (spec.t_start @ traj.start).translation)
            )
            e_end = float(
                np.linalg.norm(w.end.translation - (spec.t_end @ traj.end).translation)
            )
            verification.append(
                {
                    "step": step_p.index,
                    "side": side,
                    "error": max(e_start, e_end),
                    "text": (
                        f"step {step_p.index} {side}: mode={spec.mode} "
                        f"start_err={e_start:.2e} end_err={e_end:.2e}"
                    ),
                }
            )
            warped[side] = resample_trajectory(w, rate)
        if warped:
            tick_times = next(iter(warped.values())).times
        else:
            duration = step_r.times[-1] - step_r.times[0]
            n = max(2, int(math.floor(duration * rate + 1e-9)) + 1)
            tick_times = step_r.times[0] + np.arange(n) / rate
        hand_curves = {
            side: _interp_hand_curve(step_r.times, step_r.hand_angles[side], tick_times)
            for side in SIDES
        }
        for k in range(len(tick_times)):
            for side in SIDES:
                if side in warped:
                    target = warped[side].poses[k]
                    if prepared.degraded:
                        res = _track_position_only(model, q, target, side, settings)
                    else:
                        res = solve_hand_tracking_step(model, q, target, side, settings)
                    q = np.array(res.q)
                angles_target = np.clip(hand_curves[side][k], 0.0, 1.77)
                cached = hand_cache[side]
                if cached is not None and np.array_equal(cached[0], angles_target):
                    angles = cached[1]
                else:
                    robot_hand = retarget_hand(
                        CanonicalHandPose(side, angles_target),
                        models.hand_model, hand_settings, warm_start=hand_warm[side],
                    )
                    angles = np.asarray(robot_hand.angles)
                    hand_cache[side] = (angles_target, angles)
                hand_warm[side] = angles
                q[models.hand_indices[side]] = angles
            times_out.append(float(tick_times[k]))
            rows.append(q.copy())
    return np.asarray(times_out), np.stack(rows), verification


def run_episode(
    prepared: RetargetedPlan,
    sampler: InitialStateSampler,
    models: SimModels,
    config: TaskConfig,
    seed: int,
) -> tuple[RolloutRecord, EpisodeReport]:
    state = sample_initial_state(sampler, seed)
    return execute_plan(prepared, state, models, config, seed=seed)


def _worker(args):
    prepared, sampler, config, seed = args
    models = SimModels()
    return run_episode(prepared, sampler, models, config, seed)


def evaluate(
    prepared: RetargetedPlan,
    sampler: InitialStateSampler,
    n_episodes: int,
    models: SimModels,
    config: TaskConfig,
    workers: int = 1,
) -> EvalSummary:
    """Run seeds base..base+n-1 and summarize success/failure stages."""
    if n_episodes < 1:
        raise ConfigError("need at least one episode")
    seeds = [config.seed_base + i for i in range(n_episodes)]
    if workers > 1:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(workers) as pool:
            results = pool.map(
                _worker, [(prepared, sampler, config, s) for s in seeds]
            )
    else:
        results = [run_episode(prepared, sampler, models, config, s) for s in seeds]
    records = tuple(r for r, _ in results)
    reports = tuple(r for _, r in results)
    histogram: dict[str, int] = {s: 0 for s in FAILURE_STAGES}
    for rep in reports:
        if rep.failure_stage is not None:
            histogram[rep.failure_stage] += 1
    return EvalSummary(
        n_episodes=n_episodes,
        successes=sum(r.success for r in reports),
        failure_histogram=histogram,
        reports=reports,
        records=records,
    )


def export_dataset(records, path) -> None:
    """Write successful episodes (ordered by seed) as .jsonl or .npz."""
    successes = sorted((r for r in records if r.success), key=lambda r: r.seed)
    if not successes:
        raise EmptyDatasetError("no successful episodes to export")
    path = str(path)
    if path.endswith(".npz"):
        np.savez_compressed(
            path,
            seeds=np.array([r.seed for r in successes]),
            lengths=np.array([len(r.observations) for r in successes]),
            observations=np.concatenate([r.observations for r in successes]),
            actions=np.concatenate([r.actions for r in successes]),
        )
        return
    import json

    with open(path, "w", encoding="utf-8") as f:
        for r in successes:
            f.write(
                json.dumps(
                    {
                        "seed": r.seed,
                        "obs": r.observations.tolist(),
                        "act": r.actions.tolist(),
                        "success": True,
                    },
                    sort_keys=True,
                    separators=(",", ":"),
                )
            )
            f.write("\n")


def load_dataset(path) -> list[dict]:
    """Read a dataset back; returns per-trajectory dicts with array fields."""
    path = str(path)
    if path.endswith(".npz"):
        data = np.load(path)
        out = []
        offset = 0
        for seed, length in zip(data["seeds"], data["lengths"]):
            out.append(
                {
                    "seed": int(seed),
                    "obs": data["observations"][offset:offset + length],
                    "act": data["actions"][offset:offset + length],
                    "success": True,
                }
            )
            offset += length
        return out
    import json

    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            doc = json.loads(line)
            doc["obs"] = np.asarray(doc["obs"])
            doc["act"] = np.asarray(doc["act"])
            out.append(doc)
    return out
