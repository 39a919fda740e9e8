"""Joint-tree kinematic model: document parsing, forward kinematics, Jacobians.

Model documents are line-oriented UTF-8:

    joint <name> parent=<link> child=<link> axis=<x,y,z> origin=<7 pose numbers> limits=<lo,hi>
    frame <name> link=<link> offset=<7 pose numbers>

with ``#`` comments. Pose numbers are [qw,qx,qy,qz,tx,ty,tz]. Joints are
revolute about ``axis`` (expressed in the post-origin frame); joint ordering
and therefore configuration-vector indexing follow document order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import DimensionError, ModelError
from .se3 import Pose, _matrix_to_quat

_AXIS_TOL = 1e-9

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


@dataclass(frozen=True)
class Joint:
    name: str
    parent: str
    child: str
    axis: np.ndarray
    origin: Pose
    lo: float
    hi: float

    def __post_init__(self):
        axis = np.array(self.axis, dtype=float).reshape(3)
        axis.flags.writeable = False
        object.__setattr__(self, "axis", axis)


@dataclass(frozen=True)
class FrameDef:
    name: str
    link: str
    offset: Pose


class KinematicModel:
    """Immutable humanoid joint tree with named frames.

    The root link is the unique link that is no joint's child. Forward
    kinematics and Jacobians are pure functions of the configuration vector.
    """

    def __init__(self, joints: list[Joint], frames: list[FrameDef]):
        self.joints: tuple[Joint, ...] = tuple(joints)
        self.frames: tuple[FrameDef, ...] = tuple(frames)
        self._validate()
        self.joint_index = {j.name: i for i, j in enumerate(self.joints)}
        self.frame_by_name = {f.name: f for f in self.frames}
        self.lower = np.array([j.lo for j in self.joints])
        self.upper = np.array([j.hi for j in self.joints])
        self.lower.flags.writeable = False
        self.upper.flags.writeable = False
        # Topological joint order (root outward) and per-joint parent joint.
        self._joint_by_child = {j.child: j for j in self.joints}
        order: list[Joint] = []
        ready = {self.root}
        pending = list(self.joints)
        while pending:
            progressed = False
            remaining = []
            for j in pending:
                if j.parent in ready:
                    order.append(j)
                    ready.add(j.child)
                    progressed = True
                else:
                    remaining.append(j)
            if not progressed:
                names = ", ".join(j.name for j in remaining)
                raise ModelError(f"joints not connected to root '{self.root}': {names}")
            pending = remaining
        self._topo = tuple(order)
        # Ancestor joint indices (root -> link) for every link, for chain FK.
        self._chain: dict[str, tuple[int, ...]] = {self.root: ()}
        for j in self._topo:
            self._chain[j.child] = self._chain[j.parent] + (self.joint_index[j.name],)
        # Raw-matrix caches for the solver-facing fast path.
        self._origin_rot = [j.origin.rotation_matrix() for j in self.joints]
        self._origin_t = [np.array(j.origin.translation) for j in self.joints]
        self._axis_skew = []
        self._axis_skew2 = []
        for j in self.joints:
            k = np.array(
                [[0, -j.axis[2], j.axis[1]], [j.axis[2], 0, -j.axis[0]], [-j.axis[1], j.axis[0], 0]]
            )
            self._axis_skew.append(k)
            self._axis_skew2.append(k @ k)

    def _validate(self):
        if not self.joints:
            raise ModelError("model has no joints")
        seen = set()
        children = set()
        for j in self.joints:
            if j.name in seen:
                raise ModelError(f"joint {j.name}: duplicate joint name")
            seen.add(j.name)
            if j.child in children:
                raise ModelError(f"joint {j.name}: link '{j.child}' already has a parent")
            children.add(j.child)
            if not j.lo < j.hi:
                raise ModelError(f"joint {j.name}: limits [{j.lo}, {j.hi}] need lo < hi")
            if abs(np.linalg.norm(j.axis) - 1.0) > _AXIS_TOL:
                raise ModelError(f"joint {j.name}: axis {j.axis.tolist()} is not unit length")
        roots = {j.parent for j in self.joints} - children
        if len(roots) != 1:
            raise ModelError(f"model must have exactly one root link, found {sorted(roots)}")
        self.root: str = roots.pop()
        # Cycle check: walk up from every joint; a cycle never reaches the root.
        by_child = {j.child: j for j in self.joints}
        for j in self.joints:
            hops = 0
            link = j.parent
            while link != self.root:
                if hops > len(self.joints):
                    raise ModelError(f"joint {j.name}: cycle detected through link '{link}'")
                link = by_child[link].parent
                hops += 1
        links = children | {self.root}
        seen_frames = set()
        for f in self.frames:
            if f.name in seen_frames:
                raise ModelError(f"frame {f.name}: duplicate frame name")
            seen_frames.add(f.name)
            if f.link not in links:
                raise ModelError(f"frame {f.name}: unknown link '{f.link}'")

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def joint_names(self) -> list[str]:
        return [j.name for j in self.joints]

    @property
    def frame_names(self) -> list[str]:
        return [f.name for f in self.frames]

    def check_configuration(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.shape[0] != self.n_joints:
            raise DimensionError(
                f"configuration has {q.shape[0]} values, model has {self.n_joints} joints"
            )
        return q

    def subtree(self, root_link: str, strip_prefix: str = "") -> "KinematicModel":
        """Extract the branch rooted at ``root_link`` as a standalone model.

        Joint and frame names drop ``strip_prefix`` if they carry it, so a
        side-prefixed hand branch becomes a side-agnostic submodel.
        """
        if root_link not in self._chain:
            raise ModelError(f"unknown link '{root_link}'")
        keep_links = {root_link}
        joints = []
        for j in self._topo:
            if j.parent in keep_links:
                keep_links.add(j.child)
                joints.append(j)
        if not joints:
            raise ModelError(f"link '{root_link}' has no descendant joints")

        def strip(name: str) -> str:
            return name[len(strip_prefix):] if name.startswith(strip_prefix) else name

        sub_joints = [
            Joint(strip(j.name), strip(j.parent), strip(j.child), j.axis, j.origin, j.lo, j.hi)
            for j in joints
        ]
        sub_frames = [
            FrameDef(strip(f.name), strip(f.link), f.offset)
            for f in self.frames
            if f.link in keep_links
        ]
        return KinematicModel(sub_joints, sub_frames)


def _parse_numbers(text: str, n: int, where: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != n:
        raise ModelError(f"{where}: expected {n} comma-separated numbers, got {len(parts)}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as e:
        raise ModelError(f"{where}: {e}") from None


def load_model(document: str) -> KinematicModel:
    """Parse a model document. Raises ModelError naming the offending line."""
    joints: list[Joint] = []
    frames: list[FrameDef] = []
    for lineno, raw in enumerate(document.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        kind = tokens[0]
        if kind not in ("joint", "frame"):
            raise ModelError(f"line {lineno}: unknown entry kind '{kind}'")
        if len(tokens) < 2:
            raise ModelError(f"line {lineno}: missing name after '{kind}'")
        name = tokens[1]
        where = f"line {lineno} ({kind} {name})"
        fields = {}
        for tok in tokens[2:]:
            if "=" not in tok:
                raise ModelError(f"{where}: malformed field '{tok}'")
            key, value = tok.split("=", 1)
            fields[key] = value
        try:
            if kind == "joint":
                required = {"parent", "child", "axis", "origin", "limits"}
                missing = required - fields.keys()
                if missing:
                    raise ModelError(f"{where}: missing fields {sorted(missing)}")
                axis = _parse_numbers(fields["axis"], 3, where)
                origin = Pose.from_row7(_parse_numbers(fields["origin"], 7, where))
                limits = _parse_numbers(fields["limits"], 2, where)
                joints.append(
                    Joint(name, fields["parent"], fields["child"], axis, origin,
                          float(limits[0]), float(limits[1]))
                )
            else:
                required = {"link", "offset"}
                missing = required - fields.keys()
                if missing:
                    raise ModelError(f"{where}: missing fields {sorted(missing)}")
                offset = Pose.from_row7(_parse_numbers(fields["offset"], 7, where))
                frames.append(FrameDef(name, fields["link"], offset))
        except ModelError:
            raise
        except ValueError as e:
            raise ModelError(f"{where}: {e}") from None
    return KinematicModel(joints, frames)


def load_bundled_model(name: str) -> KinematicModel:
    """Load one of the packaged model documents (e.g. 'humanoid')."""
    text = resources.files("objmimic.data").joinpath(f"{name}.model").read_text("utf-8")
    return load_model(text)


def clamp_to_limits(model: KinematicModel, q: np.ndarray) -> np.ndarray:
    """Project a configuration into the joint-limit box. Idempotent."""
    q = model.check_configuration(q)
    return np.clip(q, model.lower, model.upper)


def _chain_eval(
    model: KinematicModel, q: np.ndarray, links: set[str] | None = None
) -> tuple[dict[str, tuple[np.ndarray, np.ndarray]], dict[int, tuple[np.ndarray, np.ndarray]]]:
    """Raw rotation-matrix chain FK, the solver-facing hot path.

    Returns link -> (R, t) in the root frame plus, for every evaluated joint,
    joint index -> (world axis, world origin) as needed by Jacobians.
    """
    rts: dict[str, tuple[np.ndarray, np.ndarray]] = {
        model.root: (np.eye(3), np.zeros(3))
    }
    if links is None:
        todo = model._topo
    else:
        needed: set[int] = set()
        for link in links:
            try:
                needed.update(model._chain[link])
            except KeyError:
                raise ModelError(f"unknown link '{link}'") from None
        todo = [j for j in model._topo if model.joint_index[j.name] in needed]
    joint_world: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for j in todo:
        i = model.joint_index[j.name]
        r_parent, t_parent = rts[j.parent]
        r_joint = r_parent @ model._origin_rot[i]
        t_joint = t_parent + r_parent @ model._origin_t[i]
        angle = q[i]
        # Rodrigues about the (unit) joint axis in the post-origin frame
        spin = (
            _EYE3
            + math.sin(angle) * model._axis_skew[i]
            + (1.0 - math.cos(angle)) * model._axis_skew2[i]
        )
        rts[j.child] = (r_joint @ spin, t_joint)
        joint_world[i] = (r_joint @ j.axis, t_joint)
    return rts, joint_world


def _link_poses(
    model: KinematicModel, q: np.ndarray, links: set[str] | None = None
) -> dict[str, Pose]:
    """Pose of each link frame in the root frame.

    When ``links`` is given, only their ancestor chains are evaluated.
    """
    rts, _ = _chain_eval(model, q, links)
    return {
        link: Pose(_matrix_to_quat(r), t) for link, (r, t) in rts.items()
    }


def frame_pose(model: KinematicModel, q: np.ndarray, frame: str) -> Pose:
    """Pose of a single named frame; cheaper than full forward kinematics."""
    q = model.check_configuration(q)
    if frame not in model.frame_by_name:
        raise ModelError(f"unknown frame {frame!r}")
    fdef = model.frame_by_name[frame]
    rts, _ = _chain_eval(model, q, {fdef.link})
    r_f, t_f = _frame_rt(model, rts, fdef)
    return Pose(_matrix_to_quat(r_f), t_f)


def forward_kinematics(
    model: KinematicModel, q: np.ndarray, frames: list[str] | None = None
) -> dict[str, Pose]:
    """Pose of every named frame (or the requested subset) in the root frame."""
    q = model.check_configuration(q)
    if frames is None:
        defs = model.frames
    else:
        try:
            defs = [model.frame_by_name[n] for n in frames]
        except KeyError as e:
            raise ModelError(f"unknown frame {e.args[0]!r}") from None
    link_poses = _link_poses(model, q, {f.link for f in defs})
    return {f.name: link_poses[f.link] @ f.offset for f in defs}


def _frame_rt(
    model: KinematicModel,
    rts: dict[str, tuple[np.ndarray, np.ndarray]],
    fdef: FrameDef,
) -> tuple[np.ndarray, np.ndarray]:
    r_link, t_link = rts[fdef.link]
    return r_link @ fdef.offset.rotation_matrix(), t_link + r_link @ fdef.offset.translation


def _jacobian_columns(
    model: KinematicModel,
    rts: dict[str, tuple[np.ndarray, np.ndarray]],
    joint_world: dict[int, tuple[np.ndarray, np.ndarray]],
    fdef: FrameDef,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Jacobian of a frame plus its (R, t), from a _chain_eval result."""
    r_f, t_f = _frame_rt(model, rts, fdef)
    jac = np.zeros((6, model.n_joints))
    for idx in model._chain[fdef.link]:
        omega, p_joint = joint_world[idx]
        jac[0:3, idx] = _cross3(omega, t_f - p_joint)
        jac[3:6, idx] = omega
    return jac, r_f, t_f


def frame_jacobian(
    model: KinematicModel, q: np.ndarray, frame: str
) -> tuple[np.ndarray, Pose]:
    """Geometric Jacobian of a named frame, 6 x n_joints.

    Rows 0:3 map joint rates to the frame origin's linear velocity, rows 3:6
    to its angular velocity, both in the root frame. Returns the frame pose
    as well since the chain FK is shared.
    """
    q = model.check_configuration(q)
    if frame not in model.frame_by_name:
        raise ModelError(f"unknown frame {frame!r}")
    fdef = model.frame_by_name[frame]
    rts, joint_world = _chain_eval(model, q, {fdef.link})
    jac, r_f, t_f = _jacobian_columns(model, rts, joint_world, fdef)
    return jac, Pose(_matrix_to_quat(r_f), t_f)
