"""Synthetic demonstration generator.

Stands in for real recordings: produces kinematically consistent demo files
by driving the reference humanoid itself through designed palm trajectories
and reading back its body-frame poses. Object keypoint tracks follow the
palm rigidly once grasped. Three task templates ship: pick-place, pour, and
push-close.

Motion is piecewise linear at constant speed so object-speed signals are
cleanly piecewise constant; segment boundaries land where manipulation
phases change, not at interpolation artifacts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .hands import _bundled as _hand_bundle
from .ik import IkSettings, solve_hand_tracking_step
from .ingest import BODY_KEYS, HumanMotionTrace, ObjectTrack, TraceFrame, demo_to_dict
from .model import forward_kinematics, load_bundled_model
from .se3 import Pose, interpolate

TEMPLATES = ("pick-place", "pour", "push-close")

FPS = 30
TABLE_Z = -0.15

OPEN_HAND = np.full(15, 0.15)
CLOSED_HAND = np.array([0.8, 0.9, 0.7] + [1.1, 1.1, 0.9] * 4)
PUSH_HAND = np.full(15, 0.3)


def _grasp_rotation() -> Pose:
    """Palm orientation with fingers pointing straight down (the humanoid's
    home palm orientation)."""
    return Pose.from_axis_angle([0, 1, 0], math.pi / 2)


def grab_offset() -> np.ndarray:
    """Grasp center in the palm frame: mean fingertip position midway
    through hand closing."""
    ev = _hand_bundle("robot_hand")[1]
    q_mid = np.array([0.85, 0.85, 0.85, 0.85, 0.3, 0.8])
    return ev.tips(q_mid).mean(axis=0)


def _grasp_palm_pose(grab_point: np.ndarray, rotation: Pose) -> Pose:
    """Palm pose placing the grasp center at ``grab_point``."""
    return Pose(rotation.rotation, grab_point - rotation.rotate_vector(grab_offset()))


def box_cloud(half: np.ndarray, n: int = 5) -> np.ndarray:
    axes = [np.linspace(-h, h, n) for h in half]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    return grid


def cylinder_cloud(radius: float, height: float, with_floor: bool = True) -> np.ndarray:
    angles = np.linspace(0, 2 * math.pi, 24, endpoint=False)
    zs = np.linspace(-height / 2, height / 2, 5)
    wall = np.array(
        [[radius * math.cos(a), radius * math.sin(a), z] for z in zs for a in angles]
    )
    parts = [wall]
    if with_floor:
        for r in (0.0, radius / 2):
            ring = np.array(
                [[r * math.cos(a), r * math.sin(a), -height / 2] for a in angles[::3]]
            )
            parts.append(ring)
    return np.concatenate(parts)


def panel_cloud(width: float, height: float) -> np.ndarray:
    ys = np.linspace(-width / 2, width / 2, 9)
    zs = np.linspace(-height / 2, height / 2, 7)
    return np.array([[0.0, y, z] for y in ys for z in zs])


def _keypoint_indices(cloud: np.ndarray, count: int = 8) -> np.ndarray:
    stride = max(1, len(cloud) // count)
    return np.arange(0, len(cloud), stride)[:count]


@dataclass
class _ObjectScript:
    """World-frame rigid motion of one object across the demo."""

    name: str
    cloud0: np.ndarray            # world frame, at frame 0
    poses: list[Pose]             # per-frame displacement from frame 0


def _polyline(points: list[np.ndarray], n: int) -> np.ndarray:
    """Sample a polyline at n equally spaced arc lengths (constant speed
    through corners)."""
    pts = np.asarray(points, dtype=float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    total = cum[-1]
    out = np.empty((n, 3))
    for i in range(n):
        s = total * i / (n - 1) if n > 1 else 0.0
        k = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        k = max(k, 0)
        local = (s - cum[k]) / seg[k] if seg[k] > 0 else 0.0
        out[i] = (1 - local) * pts[k] + local * pts[k + 1]
    return out


def _translation_script(centers: np.ndarray) -> list[Pose]:
    """Displacement poses for an object whose center follows ``centers``
    without rotating."""
    c0 = centers[0]
    return [Pose(np.array([1.0, 0, 0, 0]), c - c0) for c in centers]


def _hand_curve(total: int, keys: list[tuple[int, np.ndarray]]) -> np.ndarray:
    """Piecewise-linear 15-dof hand angle curve from (frame, angles) keys."""
    out = np.zeros((total, 15))
    for (f0, a0), (f1, a1) in zip(keys[:-1], keys[1:]):
        for t in range(f0, min(f1, total)):
            s = (t - f0) / max(f1 - f0, 1)
            out[t] = (1 - s) * a0 + s * a1
    out[keys[-1][0]:] = keys[-1][1]
    return out


def _jitter(rng: np.random.Generator, scale: float = 0.02) -> np.ndarray:
    return np.array([rng.uniform(-scale, scale), rng.uniform(-scale, scale), 0.0])


class _DemoBuilder:
    def __init__(self):
        self.model = load_bundled_model("humanoid")
        self.home_q = np.zeros(self.model.n_joints)
        self.home_fk = forward_kinematics(self.model, self.home_q)

    def solve_chain(self, palm_targets: list[Pose]) -> list[dict[str, Pose]]:
        """Track the designed palm targets with the right arm, returning the
        per-frame body-frame poses the demo trace records."""
        q = self.home_q.copy()
        # demo fidelity needs ~0.3 mm palm accuracy, not the solver default
        cold = IkSettings(restarts=16, tolerance=3e-4)
        warm = IkSettings(tolerance=3e-4)
        fk_frames = ["l_shoulder", "l_elbow", "l_wrist", "l_palm",
                     "r_shoulder", "r_elbow", "r_wrist", "r_palm"]
        out = []
        for i, target in enumerate(palm_targets):
            res = solve_hand_tracking_step(
                self.model, q, target, "right", cold if i == 0 else warm
            )
            q = np.array(res.q)
            out.append(forward_kinematics(self.model, q, fk_frames))
        return out

    def assemble(
        self,
        fk_frames: list[dict[str, Pose]],
        right_hand: np.ndarray,
        objects: list[_ObjectScript],
    ) -> dict:
        frames = []
        left_hand = OPEN_HAND
        for t, fk in enumerate(fk_frames):
            body = {k: Pose(fk[k].rotation, fk[k].translation, frame="world") for k in BODY_KEYS}
            frames.append(
                TraceFrame(
                    body=body,
                    hands={"left": left_hand.copy(), "right": right_hand[t].copy()},
                )
            )
        trace = HumanMotionTrace(fps=float(FPS), frames=tuple(frames))
        tracks = []
        for script in objects:
            kp_idx = _keypoint_indices(script.cloud0)
            base = script.cloud0[kp_idx]
            kps = np.stack([p.transform_point(base) for p in script.poses])
            vis = np.ones(kps.shape[:2], dtype=bool)
            tracks.append(
                ObjectTrack(
                    name=script.name,
                    keypoints=kps,
                    visibility=vis,
                    cloud=script.cloud0.copy(),
                )
            )
        return demo_to_dict(trace, tracks)


def _pick_place(rng: np.random.Generator, builder: _DemoBuilder):
    total = 300
    toy_pos = np.array([0.30, -0.16, TABLE_Z + 0.03]) + _jitter(rng)
    basket_pos = np.array([0.32, 0.10, TABLE_Z + 0.05]) + _jitter(rng)
    rot = _grasp_rotation()
    grasp = _grasp_palm_pose(toy_pos, rot)
    place_toy_at = np.array([basket_pos[0], basket_pos[1], TABLE_Z + 0.035])
    place = _grasp_palm_pose(place_toy_at, rot)
    home = builder.home_fk["r_palm"].translation

    close_start, close_end = 112, 136
    reach_end, transport_start = 110, 140
    approach = _polyline(
        [home, grasp.translation + [0, 0, 0.10], grasp.translation], reach_end
    )
    hold = np.repeat(grasp.translation[None, :], transport_start - reach_end, axis=0)
    transport = _polyline(
        [
            grasp.translation,
            grasp.translation + [0, 0, 0.12],
            place.translation + [0, 0, 0.12],
            place.translation,
        ],
        total - transport_start,
    )
    palm_path = np.concatenate([approach, hold, transport])
    targets = [Pose(rot.rotation, p) for p in palm_path]
    right_hand = _hand_curve(
        total,
        [(0, OPEN_HAND), (close_start, OPEN_HAND), (close_end, CLOSED_HAND),
         (total - 1, CLOSED_HAND)],
    )
    fk_frames = builder.solve_chain(targets)
    # the toy rides the designed palm path from the transport start
    toy_centers = np.concatenate(
        [np.repeat(toy_pos[None, :], transport_start, axis=0),
         transport - transport[0] + toy_pos]
    )
    toy = _ObjectScript(
        name="toy",
        cloud0=box_cloud(np.array([0.03, 0.03, 0.03])) + toy_pos,
        poses=_translation_script(toy_centers),
    )
    basket = _ObjectScript(
        name="basket",
        cloud0=cylinder_cloud(0.07, 0.10) + basket_pos,
        poses=[Pose.identity()] * total,
    )
    doc = builder.assemble(fk_frames, right_hand, [toy, basket])
    meta = {
        "objects": {"toy": toy_pos, "basket": basket_pos},
        "predicate": {
            "kind": "containment", "target": "toy", "reference": "basket",
            "fraction": 0.5,
        },
    }
    return doc, meta


def _pour(rng: np.random.Generator, builder: _DemoBuilder):
    total = 240
    bottle_pos = np.array([0.30, -0.18, TABLE_Z + 0.07]) + _jitter(rng)
    bowl_pos = np.array([0.32, 0.02, TABLE_Z + 0.025]) + _jitter(rng)
    rot = _grasp_rotation()
    grab_rel = np.array([0, 0, 0.04])  # hold the bottle near its top
    grasp = _grasp_palm_pose(bottle_pos + grab_rel, rot)
    hover_center = np.array([bowl_pos[0], bowl_pos[1], bowl_pos[2] + 0.13])
    hover = _grasp_palm_pose(hover_center + grab_rel, rot)
    home = builder.home_fk["r_palm"].translation

    close_start, close_end = 92, 112
    reach_end, transport_start, tilt_start = 90, 115, 190
    approach = _polyline(
        [home, grasp.translation + [0, 0, 0.10], grasp.translation], reach_end
    )
    hold = np.repeat(grasp.translation[None, :], transport_start - reach_end, axis=0)
    transport = _polyline(
        [grasp.translation, grasp.translation + [0, 0, 0.14], hover.translation],
        tilt_start - transport_start,
    )
    targets = [
        Pose(rot.rotation, p) for p in np.concatenate([approach, hold, transport])
    ]
    # pour: orbit the palm about the held bottle's center so the bottle tilts
    # in place above the bowl
    tilt_total = 1.4  # rad, ~80 deg
    bottle_rotations = []
    for k in range(total - tilt_start):
        s = k / (total - tilt_start - 1)
        rot_step = Pose.from_axis_angle([1, 0, 0], tilt_total * s)
        spin = Pose(rot_step.rotation, hover_center - rot_step.rotate_vector(hover_center))
        targets.append(spin @ hover)
        bottle_rotations.append(rot_step)
    right_hand = _hand_curve(
        total,
        [(0, OPEN_HAND), (close_start, OPEN_HAND), (close_end, CLOSED_HAND),
         (total - 1, CLOSED_HAND)],
    )
    fk_frames = builder.solve_chain(targets)
    # bottle: static, carried along the designed path, then tilting in place
    bottle_centers = np.concatenate(
        [np.repeat(bottle_pos[None, :], transport_start, axis=0),
         transport - transport[0] + bottle_pos]
    )
    bottle_poses = _translation_script(bottle_centers)
    carried = bottle_poses[-1]
    for rot_step in bottle_rotations:
        # rotate about the (carried) bottle center on top of the carry offset
        center = hover_center
        spin = Pose(rot_step.rotation, center - rot_step.rotate_vector(center))
        bottle_poses.append(spin @ carried)
    bottle = _ObjectScript(
        name="bottle",
        cloud0=cylinder_cloud(0.025, 0.14, with_floor=False) + bottle_pos,
        poses=bottle_poses,
    )
    bowl = _ObjectScript(
        name="bowl",
        cloud0=cylinder_cloud(0.06, 0.05) + bowl_pos,
        poses=[Pose.identity()] * total,
    )
    doc = builder.assemble(fk_frames, right_hand, [bottle, bowl])
    meta = {
        "objects": {"bottle": bottle_pos, "bowl": bowl_pos},
        "predicate": {
            "kind": "pose_region", "target": "bottle", "reference": "bowl",
            "horizontal_radius": 0.10, "z_lo": 0.04, "z_hi": 0.30, "min_tilt": 0.9,
        },
    }
    return doc, meta


def _push_close(rng: np.random.Generator, builder: _DemoBuilder):
    total = 200
    panel_pos = np.array([0.32, -0.10, TABLE_Z + 0.07]) + _jitter(rng)
    travel = 0.10
    rot = _grasp_rotation()
    start = Pose(rot.rotation, panel_pos + [-0.03, 0.0, 0.02])
    end = Pose(rot.rotation, start.translation + [travel, 0, 0])
    path = _polyline([start.translation, end.translation], total)
    targets = [Pose(rot.rotation, p) for p in path]
    right_hand = _hand_curve(total, [(0, PUSH_HAND), (total - 1, PUSH_HAND)])
    fk_frames = builder.solve_chain(targets)
    # the panel tracks the designed along-axis push progress exactly
    progress = np.clip(path[:, 0] - path[0, 0], 0.0, travel)
    poses = [Pose(np.array([1.0, 0, 0, 0]), [p, 0, 0]) for p in progress]
    drawer = _ObjectScript(
        name="drawer",
        cloud0=panel_cloud(0.16, 0.10) + panel_pos,
        poses=poses,
    )
    doc = builder.assemble(fk_frames, right_hand, [drawer])
    meta = {
        "objects": {"drawer": panel_pos},
        "articulated": {"drawer": {"axis": [1.0, 0.0, 0.0], "travel": travel}},
        "predicate": {"kind": "articulation_closed", "target": "drawer", "threshold": 0.015},
    }
    return doc, meta


_BUILDERS = {
    "pick-place": _pick_place,
    "pour": _pour,
    "push-close": _push_close,
}


def synthesize_demo(template: str, seed: int) -> tuple[dict, dict]:
    """Generate (demo document, task metadata) for a template, deterministically
    per seed."""
    if template not in _BUILDERS:
        raise ConfigError(f"unknown demo template {template!r}; have {TEMPLATES}")
    rng = np.random.default_rng(seed)
    builder = _DemoBuilder()
    return _BUILDERS[template](rng, builder)


def scene_document(demo_doc: dict) -> dict:
    """Scene observation matching the demo's initial object locations."""
    return {
        "timestamp": 0.0,
        "objects": [
            {"name": od["name"], "cloud": od["cloud"]} for od in demo_doc["objects"]
        ],
    }


def task_config_document(template: str, meta: dict, region_halfwidth: float = 0.15) -> str:
    """task.toml text for a generated demo: placement regions centered on the
    demo locations, the template's success predicate, and default thresholds."""
    lines = [
        "[workspace]",
        "lo = [0.00, -0.55, -0.25]",
        "hi = [0.70, 0.55, 0.45]",
        "",
    ]
    articulated = meta.get("articulated", {})
    for name, pos in meta["objects"].items():
        lines += [
            f"[objects.{name}]",
            f"region_lo = [{pos[0] - region_halfwidth:.4f}, {pos[1] - region_halfwidth:.4f}, {pos[2]:.4f}]",
            f"region_hi = [{pos[0] + region_halfwidth:.4f}, {pos[1] + region_halfwidth:.4f}, {pos[2]:.4f}]",
            "yaw = [0.0, 0.0]",
        ]
        if name in articulated:
            art = articulated[name]
            axis = ", ".join(f"{v:.1f}" for v in art["axis"])
            lines += [
                f"articulated_axis = [{axis}]",
                f"articulated_travel = {art['travel']}",
            ]
        lines.append("")
    lines.append("[predicate]")
    for key, value in meta["predicate"].items():
        if isinstance(value, str):
            lines.append(f'{key} = "{value}"')
        else:
            lines.append(f"{key} = {value}")
    lines += [
        "",
        "[thresholds]",
        "contact = 0.02",
        "grasp = 0.03",
        "push = 0.05",
        "ik_fail_pos = 0.02",
        "noise_sigma = 0.0",
        "min_separation = 0.05",
        "beta = 0.0",
        "",
        "[ik]",
        "damping = 1e-3",
        "max_iterations = 200",
        "tolerance = 1e-5",
        "step_scale = 1.0",
        "",
        "[seeds]",
        "base = 0",
        "",
    ]
    return "\n".join(lines)
