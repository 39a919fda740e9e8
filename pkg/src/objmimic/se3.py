"""Frame-tagged rigid-body transforms on SE(3).

Rotations are unit quaternions stored as [w, x, y, z] and canonicalized to
w >= 0 so that equal rotations serialize identically. All values are
immutable after construction and safe to share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .errors import DomainError, FrameMismatchError

_NORM_TOL = 1e-9
# Below this angle the rotation log/exp switch to their Taylor expansions.
_SMALL_ANGLE = 1e-8


def _as_readonly(values, n: int) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(n)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"non-finite entries in {arr!r}")
    arr.flags.writeable = False
    return arr


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def _quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def _quat_canonical(q: np.ndarray) -> np.ndarray:
    """Resolve the double cover: w > 0, or w == 0 and first nonzero part > 0."""
    if q[0] < 0.0:
        return -q
    if q[0] == 0.0:
        for v in q[1:]:
            if v != 0.0:
                return q if v > 0.0 else -q
    return q


def _quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    # q * (0, v) * q⁻¹ expanded to avoid building intermediate quaternions
    w = q[0]
    u = q[1:]
    return v + 2.0 * np.cross(u, np.cross(u, v) + w * v)


def _quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _matrix_to_quat(m: np.ndarray) -> np.ndarray:
    # Shepperd's method: branch on the largest diagonal combination.
    t = np.trace(m)
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return q / np.linalg.norm(q)


def _quat_from_rotvec(w: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(w))
    if angle < _SMALL_ANGLE:
        # sin(a/2)/a ≈ 1/2 − a²/48
        half = 0.5 - angle * angle / 48.0
        return np.concatenate(([1.0 - angle * angle / 8.0], half * w))
    axis = w / angle
    return np.concatenate(([math.cos(angle / 2.0)], math.sin(angle / 2.0) * axis))


def _quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    q = _quat_canonical(q)
    vec_norm = float(np.linalg.norm(q[1:]))
    angle = 2.0 * math.atan2(vec_norm, q[0])
    if vec_norm < _SMALL_ANGLE:
        # a/sin(a/2) ≈ 2 + a²/12
        return q[1:] * (2.0 + angle * angle / 12.0)
    return q[1:] * (angle / vec_norm)


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]], dtype=float)


@dataclass(frozen=True)
class Twist:
    """Body-velocity-style element of se(3): rotation vector plus linear part."""

    angular: np.ndarray
    linear: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "angular", _as_readonly(self.angular, 3))
        object.__setattr__(self, "linear", _as_readonly(self.linear, 3))


@dataclass(frozen=True)
class Pose:
    """Rigid transform taking coordinates in the ``child`` frame to ``frame``.

    ``frame`` and ``child`` are optional tags; ``None`` acts as a wildcard in
    composition checks. Displacements expressed within one frame simply carry
    the same tag on both ends.
    """

    rotation: np.ndarray
    translation: np.ndarray
    frame: str | None = None
    child: str | None = None

    def __post_init__(self):
        q = np.array(self.rotation, dtype=float).reshape(4)
        if not np.all(np.isfinite(q)):
            raise DomainError("non-finite quaternion")
        norm = float(np.linalg.norm(q))
        if norm < 1e-12:
            raise DomainError("zero-norm quaternion")
        # keep normalization bit-idempotent: already-unit quaternions pass
        # through unchanged so serialization round-trips exactly
        if abs(norm - 1.0) > 1e-12:
            q = q / norm
        q = _quat_canonical(q)
        q.flags.writeable = False
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", _as_readonly(self.translation, 3))

    @staticmethod
    def identity(frame: str | None = None, child: str | None = None) -> "Pose":
        return Pose(np.array([1.0, 0, 0, 0]), np.zeros(3), frame, child)

    @staticmethod
    def from_axis_angle(
        axis,
        angle: float,
        translation=(0.0, 0.0, 0.0),
        frame: str | None = None,
        child: str | None = None,
    ) -> "Pose":
        axis = np.asarray(axis, dtype=float)
        n = np.linalg.norm(axis)
        if n < 1e-12:
            raise DomainError("zero-norm rotation axis")
        return Pose(_quat_from_rotvec(axis / n * angle), translation, frame, child)

    @staticmethod
    def from_matrix(m, frame: str | None = None, child: str | None = None) -> "Pose":
        m = np.asarray(m, dtype=float)
        return Pose(_matrix_to_quat(m[:3, :3]), m[:3, 3], frame, child)

    @staticmethod
    def from_row7(row, frame: str | None = None, child: str | None = None) -> "Pose":
        row = np.asarray(row, dtype=float).reshape(7)
        return Pose(row[:4], row[4:], frame, child)

    def to_row7(self) -> list[float]:
        """Serialize as [qw, qx, qy, qz, tx, ty, tz]."""
        return [*self.rotation.tolist(), *self.translation.tolist()]

    def rotation_matrix(self) -> np.ndarray:
        return _quat_to_matrix(self.rotation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        qi = _quat_conj(self.rotation)
        return Pose(qi, -_quat_rotate(qi, self.translation), self.child, self.frame)

    def compose(self, other: "Pose") -> "Pose":
        if (
            self.child is not None
            and other.frame is not None
            and self.child != other.frame
        ):
            raise FrameMismatchError(
                f"cannot compose: left child frame '{self.child}' != right frame '{other.frame}'"
            )
        return Pose(
            _quat_mul(self.rotation, other.rotation),
            self.translation + _quat_rotate(self.rotation, other.translation),
            self.frame,
            other.child,
        )

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def transform_point(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.ndim == 1:
            return _quat_rotate(self.rotation, p) + self.translation
        return p @ self.rotation_matrix().T + self.translation

    def rotate_vector(self, v) -> np.ndarray:
        return _quat_rotate(self.rotation, np.asarray(v, dtype=float))

    def log(self) -> Twist:
        w = _quat_to_rotvec(self.rotation)
        angle = float(np.linalg.norm(w))
        if angle < _SMALL_ANGLE:
            v_inv = np.eye(3) - 0.5 * _skew(w)
        else:
            k = _skew(w)
            coeff = 1.0 / angle**2 - (1.0 + math.cos(angle)) / (
                2.0 * angle * math.sin(angle)
            )
            v_inv = np.eye(3) - 0.5 * k + coeff * (k @ k)
        return Twist(w, v_inv @ self.translation)

    @staticmethod
    def exp(twist: Twist, frame: str | None = None, child: str | None = None) -> "Pose":
        w = twist.angular
        angle = float(np.linalg.norm(w))
        if angle < _SMALL_ANGLE:
            v = np.eye(3) + 0.5 * _skew(w)
        else:
            k = _skew(w)
            v = (
                np.eye(3)
                + (1.0 - math.cos(angle)) / angle**2 * k
                + (angle - math.sin(angle)) / angle**3 * (k @ k)
            )
        return Pose(_quat_from_rotvec(w), v @ twist.linear, frame, child)

    def rotation_angle_to(self, other: "Pose") -> float:
        """Geodesic angle between the two rotations, in [0, π]."""
        rel = _quat_mul(_quat_conj(self.rotation), other.rotation)
        return float(np.linalg.norm(_quat_to_rotvec(rel)))

    def translation_distance_to(self, other: "Pose") -> float:
        return float(np.linalg.norm(self.translation - other.translation))


def _relative_rotvec(qa: np.ndarray, qb: np.ndarray) -> np.ndarray:
    """Shortest-arc rotation vector taking qa to qb.

    At exactly π the arc direction is ambiguous; ties go to the axis whose
    (x, y, z) tuple is lexicographically largest, for determinism.
    """
    rel = _quat_canonical(_quat_mul(_quat_conj(qa), qb))
    if abs(rel[0]) < 1e-12:
        axis = rel[1:] / np.linalg.norm(rel[1:])
        if tuple(-axis) > tuple(axis):
            axis = -axis
        return axis * math.pi
    return _quat_to_rotvec(rel)


def interpolate(a: Pose, b: Pose, s: float) -> Pose:
    """Geodesic interpolation: linear in translation, shortest-arc in rotation.

    s=0 and s=1 return ``a`` and ``b`` exactly.
    """
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"interpolation parameter {s} outside [0, 1]")
    if s == 0.0:
        return a
    if s == 1.0:
        return b
    rotvec = _relative_rotvec(a.rotation, b.rotation)
    q = _quat_mul(a.rotation, _quat_from_rotvec(rotvec * s))
    t = (1.0 - s) * a.translation + s * b.translation
    return Pose(q, t, a.frame if a.frame is not None else b.frame, a.child)
