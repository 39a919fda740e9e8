"""Task configuration: workspace, placement regions, success predicate, and
simulator thresholds, loaded from a TOML document."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .ik import IkSettings

PREDICATE_KINDS = (
    "containment", "pose_region", "articulation_closed", "relative_placement",
)


@dataclass(frozen=True)
class ArticulationSpec:
    axis: np.ndarray      # object frame, unit
    travel: float         # value ranges over [0, travel]; closed at travel

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        norm = float(np.linalg.norm(axis))
        if norm < 1e-9:
            raise ConfigError("articulation axis must be non-zero")
        axis = axis / norm
        axis.flags.writeable = False
        object.__setattr__(self, "axis", axis)
        if self.travel <= 0:
            raise ConfigError("articulation travel must be positive")


@dataclass(frozen=True)
class ObjectSpec:
    name: str
    region_lo: np.ndarray
    region_hi: np.ndarray
    yaw_range: tuple[float, float] = (0.0, 0.0)
    articulation: ArticulationSpec | None = None


@dataclass(frozen=True)
class PredicateSpec:
    kind: str
    target: str
    reference: str | None = None
    fraction: float = 0.5
    horizontal_radius: float = 0.1
    z_lo: float = 0.0
    z_hi: float = 0.3
    min_tilt: float = 0.0
    threshold: float = 0.015

    def __post_init__(self):
        if self.kind not in PREDICATE_KINDS:
            raise ConfigError(f"unknown predicate kind {self.kind!r}")
        if self.kind in ("containment", "relative_placement") and not 0 < self.fraction <= 1:
            raise ConfigError("containment fraction must be in (0, 1]")


@dataclass(frozen=True)
class TaskConfig:
    workspace_lo: np.ndarray
    workspace_hi: np.ndarray
    objects: dict[str, ObjectSpec]
    predicate: PredicateSpec
    contact_threshold: float = 0.02
    grasp_threshold: float = 0.03
    push_threshold: float = 0.05
    ik_fail_pos: float = 0.02
    noise_sigma: float = 0.0
    min_separation: float = 0.05
    beta: float | None = None
    ik: IkSettings = field(default_factory=IkSettings)
    seed_base: int = 0


def _vec3(doc, key, where) -> np.ndarray:
    try:
        v = np.asarray(doc[key], dtype=float).reshape(3)
    except (KeyError, TypeError, ValueError):
        raise ConfigError(f"{where}: missing or malformed 3-vector '{key}'") from None
    v.flags.writeable = False
    return v


def parse_task_config(text: str) -> TaskConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid task config: {e}") from None

    ws = doc.get("workspace", {})
    lo = _vec3(ws, "lo", "workspace")
    hi = _vec3(ws, "hi", "workspace")

    objects = {}
    for name, od in doc.get("objects", {}).items():
        where = f"objects.{name}"
        region_lo = _vec3(od, "region_lo", where)
        region_hi = _vec3(od, "region_hi", where)
        if np.any(region_lo > region_hi):
            raise ConfigError(f"{where}: region_lo must not exceed region_hi")
        if np.any(region_lo < lo) or np.any(region_hi > hi):
            raise ConfigError(f"{where}: region extends outside the workspace")
        yaw = tuple(od.get("yaw", (0.0, 0.0)))
        articulation = None
        if "articulated_axis" in od:
            articulation = ArticulationSpec(
                axis=np.asarray(od["articulated_axis"], dtype=float),
                travel=float(od.get("articulated_travel", 0.0)),
            )
        objects[name] = ObjectSpec(
            name=name, region_lo=region_lo, region_hi=region_hi,
            yaw_range=(float(yaw[0]), float(yaw[1])), articulation=articulation,
        )
    if not objects:
        raise ConfigError("task config defines no objects")

    pd = doc.get("predicate")
    if not isinstance(pd, dict) or "kind" not in pd or "target" not in pd:
        raise ConfigError("task config needs [predicate] with 'kind' and 'target'")
    predicate = PredicateSpec(
        kind=pd["kind"],
        target=pd["target"],
        reference=pd.get("reference"),
        fraction=float(pd.get("fraction", 0.5)),
        horizontal_radius=float(pd.get("horizontal_radius", 0.1)),
        z_lo=float(pd.get("z_lo", 0.0)),
        z_hi=float(pd.get("z_hi", 0.3)),
        min_tilt=float(pd.get("min_tilt", 0.0)),
        threshold=float(pd.get("threshold", 0.015)),
    )
    if predicate.target not in objects:
        raise ConfigError(f"predicate target '{predicate.target}' not among objects")
    if predicate.reference is not None and predicate.reference not in objects:
        raise ConfigError(f"predicate reference '{predicate.reference}' not among objects")

    th = doc.get("thresholds", {})
    ik_doc = doc.get("ik", {})
    ik = IkSettings(
        damping=float(ik_doc.get("damping", 1e-3)),
        max_iterations=int(ik_doc.get("max_iterations", 200)),
        tolerance=float(ik_doc.get("tolerance", 1e-5)),
        step_scale=float(ik_doc.get("step_scale", 1.0)),
    )
    beta = float(th.get("beta", 0.0))
    return TaskConfig(
        workspace_lo=lo,
        workspace_hi=hi,
        objects=objects,
        predicate=predicate,
        contact_threshold=float(th.get("contact", 0.02)),
        grasp_threshold=float(th.get("grasp", 0.03)),
        push_threshold=float(th.get("push", 0.05)),
        ik_fail_pos=float(th.get("ik_fail_pos", 0.02)),
        noise_sigma=float(th.get("noise_sigma", 0.0)),
        min_separation=float(th.get("min_separation", 0.05)),
        beta=None if beta == 0.0 else beta,
        ik=ik,
        seed_base=int(doc.get("seeds", {}).get("base", 0)),
    )


def load_task_config(path) -> TaskConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_task_config(f.read())
