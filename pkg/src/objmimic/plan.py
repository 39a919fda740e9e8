"""Reference-plan generation: keyframe segmentation and object attribution.

A demo is segmented where the per-object keypoint speeds change regime
(penalized piecewise-constant-mean segmentation, solved exactly with a
pruned dynamic program). Each resulting step gets a target object (the one
in motion), an optional reference object (the spatial anchor it relates to,
via contact or a semantic relation), and the human-motion segment plus the
object clouds needed for warping later.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, GapError, ParseError
from .ingest import (
    HumanMotionTrace,
    ObjectTrack,
    demo_from_dict,
    demo_to_dict,
    object_centroid,
    trace_from_dict,
)

log = logging.getLogger(__name__)

RELATION_CONTACT = "contact"
RELATION_SEMANTIC = "semantic"
RELATION_NONE = "none"


@dataclass(frozen=True)
class PlanConfig:
    speed_window: int = 5
    visibility_min: float = 0.5
    beta: float | None = None      # None: scale to the signal (see default_penalty)
    min_segment: int = 10
    contact_threshold: float = 0.02


@dataclass(frozen=True)
class ProviderContext:
    """Step summary handed to semantic-relation providers."""

    step_index: int
    frame_range: tuple[int, int]
    target: str
    candidates: tuple[str, ...]
    target_displacement: float
    target_end_position: np.ndarray
    candidate_end_positions: dict[str, np.ndarray]

    def summary(self) -> str:
        return (
            f"step {self.step_index}, frames {self.frame_range[0]}..{self.frame_range[1]}: "
            f"'{self.target}' moves {self.target_displacement:.3f} m; "
            f"other objects: {', '.join(self.candidates) or 'none'}"
        )


@dataclass(frozen=True)
class PlanStep:
    index: int
    start: int
    stop: int  # frame range [start, stop)
    target: str
    reference: str | None
    relation: str
    contact_at_start: bool
    segment: HumanMotionTrace
    target_cloud: np.ndarray
    reference_cloud: np.ndarray | None

    def __post_init__(self):
        if not self.start < self.stop:
            raise DomainError(f"step {self.index}: empty frame range [{self.start}, {self.stop})")


@dataclass(frozen=True)
class ReferencePlan:
    fps: float
    object_names: tuple[str, ...]
    steps: tuple[PlanStep, ...]
    provider_failures: int = 0


def keypoint_speed_signal(
    tracks: list[ObjectTrack],
    fps: float,
    window: int = 5,
    visibility_min: float = 0.5,
) -> dict[str, np.ndarray]:
    """Per-object, per-frame mean keypoint speed, smoothed by a centered
    moving average of the given width.

    Keypoints visible in fewer than ``visibility_min`` of the frames are
    dropped from the statistics. A full window with no visible keypoints is
    an unrecoverable gap.
    """
    signals = {}
    for track in tracks:
        n = track.n_frames
        vis_frac = track.visibility.mean(axis=0)
        kept = vis_frac >= visibility_min
        if not kept.any():
            raise GapError(track.name, list(range(n)))
        kp = track.keypoints[:, kept, :]
        vis = track.visibility[:, kept]
        raw = np.full(n, np.nan)
        for t in range(1, n):
            pair = vis[t] & vis[t - 1]
            if pair.any():
                step = np.linalg.norm(kp[t, pair] - kp[t - 1, pair], axis=1)
                raw[t] = step.mean() * fps
        if n > 1 and np.isfinite(raw[1]):
            raw[0] = raw[1]
        elif n == 1:
            raw[0] = 0.0
        bad = ~np.isfinite(raw)
        if bad.any():
            run = _longest_nan_run(bad)
            if run[1] - run[0] >= window:
                raise GapError(track.name, list(range(run[0], run[1])))
            good = np.flatnonzero(~bad)
            raw = np.interp(np.arange(n), good, raw[good])
        signals[track.name] = _centered_mean(raw, window)
    return signals


def _longest_nan_run(bad: np.ndarray) -> tuple[int, int]:
    best = (0, 0)
    start = None
    for i, b in enumerate(bad):
        if b and start is None:
            start = i
        elif not b and start is not None:
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = None
    if start is not None and len(bad) - start > best[1] - best[0]:
        best = (start, len(bad))
    return best


def _centered_mean(x: np.ndarray, window: int) -> np.ndarray:
    half = window // 2
    out = np.empty_like(x)
    n = len(x)
    for t in range(n):
        lo = max(0, t - half)
        hi = min(n, t + half + 1)
        out[t] = x[lo:hi].mean()
    return out


def default_penalty(y: np.ndarray) -> float:
    """Scale the segmentation penalty to the signal's noise level.

    First differences estimate the noise floor for iid noise, but smoothing
    correlates neighboring samples and turns each regime change into a short
    ramp whose residual the diff estimate misses badly; the overall signal
    variance bounds that from above. Taking the max of the two keeps pure
    noise and near-noiseless smoothed signals both sanely penalized.
    """
    n = len(y)
    if n < 3:
        return 1e-12
    diffs = np.diff(y)
    sigma_sq = max(float(np.var(diffs)) / 2.0, 2.0 * float(np.var(y)))
    return max(0.5 * sigma_sq * math.log(n), 1e-12)


def detect_keyframes(
    signals: dict[str, np.ndarray] | np.ndarray,
    beta: float,
    min_segment: int = 10,
) -> list[int]:
    """Exact minimizer of the penalized piecewise-constant-mean L2 cost on the
    summed speed signal, via a pruned dynamic program.

    Returns interior segment-start indices, strictly increasing; 0 and the
    last frame are never included. Segments shorter than ``min_segment``
    frames are not considered.
    """
    if beta <= 0:
        raise DomainError(f"penalty must be positive, got {beta}")
    if isinstance(signals, dict):
        y = np.sum(list(signals.values()), axis=0)
    else:
        y = np.asarray(signals, dtype=float)
    n = len(y)
    m = max(1, int(min_segment))
    if n < 2 * m:
        return []
    cum = np.concatenate(([0.0], np.cumsum(y)))
    cum2 = np.concatenate(([0.0], np.cumsum(y * y)))

    def cost(s: int, t: int) -> float:
        # SSE of y[s:t] around its mean
        total = cum[t] - cum[s]
        return (cum2[t] - cum2[s]) - total * total / (t - s)

    f = np.full(n + 1, np.inf)
    f[0] = -beta
    prev = np.zeros(n + 1, dtype=int)
    # candidate previous-changepoint positions, with the time each was first
    # beaten (None while still competitive)
    cands: list[int] = [0]
    beaten: dict[int, int] = {}
    for t in range(m, n + 1):
        tau_new = t - m
        if tau_new >= m:
            cands.append(tau_new)
        best_val = math.inf
        best_tau = 0
        vals = []
        for tau in cands:
            v = f[tau] + cost(tau, t)
            vals.append(v)
            if v < best_val:
                best_val = v
                best_tau = tau
        f[t] = best_val + beta
        prev[t] = best_tau
        # PELT prune, delayed by the minimum segment length: once beaten at
        # time b, a candidate is dominated via a changepoint at b for every
        # t >= b + m (the L2 cost only improves under splitting), but may
        # still be needed before the path through b becomes feasible.
        for tau, v in zip(cands, vals):
            if v > f[t] and tau not in beaten:
                beaten[tau] = t
        cands = [tau for tau in cands if beaten.get(tau, t) + m > t]
    cps = []
    t = n
    while t > 0:
        tau = int(prev[t])
        if tau > 0:
            cps.append(tau)
        t = tau
    return sorted(cps)


def detect_keyframes_exhaustive(
    signals: dict[str, np.ndarray] | np.ndarray,
    beta: float,
    min_segment: int = 10,
) -> list[int]:
    """O(n^2) reference dynamic program, identical contract, no pruning."""
    if beta <= 0:
        raise DomainError(f"penalty must be positive, got {beta}")
    if isinstance(signals, dict):
        y = np.sum(list(signals.values()), axis=0)
    else:
        y = np.asarray(signals, dtype=float)
    n = len(y)
    m = max(1, int(min_segment))
    if n < 2 * m:
        return []
    cum = np.concatenate(([0.0], np.cumsum(y)))
    cum2 = np.concatenate(([0.0], np.cumsum(y * y)))
    f = np.full(n + 1, np.inf)
    f[0] = -beta
    prev = np.zeros(n + 1, dtype=int)
    for t in range(m, n + 1):
        best_val = math.inf
        best_tau = 0
        for tau in [0] + list(range(m, t - m + 1)):
            total = cum[t] - cum[tau]
            v = f[tau] + (cum2[t] - cum2[tau]) - total * total / (t - tau)
            if v < best_val:
                best_val = v
                best_tau = tau
        f[t] = best_val + beta
        prev[t] = best_tau
    cps = []
    t = n
    while t > 0:
        tau = int(prev[t])
        if tau > 0:
            cps.append(tau)
        t = tau
    return sorted(cps)


def _visible_centroid(track: ObjectTrack, t: int) -> np.ndarray:
    vis = track.visibility[t]
    if vis.any():
        return track.keypoints[t, vis].mean(axis=0)
    # fully occluded frame: fall back to the nearest frame with visibility
    for d in range(1, track.n_frames):
        for u in (t - d, t + d):
            if 0 <= u < track.n_frames and track.visibility[u].any():
                return track.keypoints[u, track.visibility[u]].mean(axis=0)
    raise GapError(track.name, list(range(track.n_frames)))


def track_cloud_at(track: ObjectTrack, t: int) -> np.ndarray:
    """Object cloud translated by the keypoint-centroid displacement since frame 0."""
    shift = _visible_centroid(track, t) - _visible_centroid(track, 0)
    return track.cloud + shift


def _min_cloud_distance(a: np.ndarray, b: np.ndarray) -> float:
    d = a[:, None, :] - b[None, :, :]
    return float(np.sqrt((d * d).sum(axis=2)).min())


def attribute_target(frame_range: tuple[int, int], signals: dict[str, np.ndarray]) -> str:
    """Object with maximal mean speed over the range; ties go to the
    lexicographically smallest name."""
    a, b = frame_range
    ranked = sorted(signals.items(), key=lambda kv: (-float(kv[1][a:b].mean()), kv[0]))
    return ranked[0][0]


def attribute_reference(
    frame_range: tuple[int, int],
    target: str,
    tracks: list[ObjectTrack],
    provider,
    config: PlanConfig,
    step_index: int = 0,
) -> tuple[str | None, str, bool, bool]:
    """Reference object for a step: geometric contact first, then the
    semantic provider, then none.

    Returns (reference, relation, contact_at_start, provider_failed).
    """
    by_name = {t.name: t for t in tracks}
    track = by_name[target]
    n = track.n_frames
    a, b = frame_range
    end_idx = min(b, n - 1)
    target_cloud_end = track_cloud_at(track, end_idx)
    hits = []
    for other in tracks:
        if other.name == target:
            continue
        dist = _min_cloud_distance(target_cloud_end, track_cloud_at(other, end_idx))
        if dist < config.contact_threshold:
            hits.append((dist, other.name))
    if hits:
        hits.sort()
        reference = hits[0][1]
        contact_at_start = _contact_at(track, by_name[reference], a, config)
        return reference, RELATION_CONTACT, contact_at_start, False

    candidates = tuple(t.name for t in tracks if t.name != target)
    start_pos = _visible_centroid(track, a)
    end_pos = _visible_centroid(track, end_idx)
    ctx = ProviderContext(
        step_index=step_index,
        frame_range=(a, b),
        target=target,
        candidates=candidates,
        target_displacement=float(np.linalg.norm(end_pos - start_pos)),
        target_end_position=end_pos,
        candidate_end_positions={
            name: _visible_centroid(by_name[name], end_idx) for name in candidates
        },
    )
    provider_failed = False
    reference = None
    if provider is not None and candidates:
        try:
            reference = provider.query_reference(ctx)
        except Exception as e:  # provider failure must never abort planning
            log.warning("semantic provider failed (%s); falling back to no reference", e)
            provider_failed = True
            reference = None
        if reference is not None and reference not in by_name:
            log.warning("provider returned unknown object %r; ignoring", reference)
            reference = None
    if reference is not None:
        contact_at_start = _contact_at(track, by_name[reference], a, config)
        return reference, RELATION_SEMANTIC, contact_at_start, provider_failed
    return None, RELATION_NONE, False, provider_failed


def _contact_at(track_a: ObjectTrack, track_b: ObjectTrack, t: int, config: PlanConfig) -> bool:
    return (
        _min_cloud_distance(track_cloud_at(track_a, t), track_cloud_at(track_b, t))
        < config.contact_threshold
    )


def generate_plan(
    trace: HumanMotionTrace,
    tracks: list[ObjectTrack],
    config: PlanConfig | None = None,
    provider=None,
) -> ReferencePlan:
    """Segment a demo into steps and attribute target/reference objects."""
    config = config or PlanConfig()
    if not tracks:
        raise ParseError("demo has no object tracks")
    signals = keypoint_speed_signal(
        tracks, trace.fps, config.speed_window, config.visibility_min
    )
    summed = np.sum(list(signals.values()), axis=0)
    beta = config.beta if config.beta is not None else default_penalty(summed)
    keyframes = detect_keyframes(signals, beta, config.min_segment)
    boundaries = [0, *keyframes, len(trace)]
    by_name = {t.name: t for t in tracks}
    steps = []
    failures = 0
    for i, (a, b) in enumerate(zip(boundaries[:-1], boundaries[1:])):
        target = attribute_target((a, b), signals)
        reference, relation, contact_at_start, failed = attribute_reference(
            (a, b), target, tracks, provider, config, step_index=i
        )
        failures += failed
        # warp anchors come from the last frame before the segment's motion
        # regime: a changepoint at frame a means motion happened in (a-1, a],
        # so a-1 is where the step's objects still rest. Unmoved test scenes
        # then estimate exactly-identity transforms.
        anchor = max(a - 1, 0)
        steps.append(
            PlanStep(
                index=i,
                start=a,
                stop=b,
                target=target,
                reference=reference,
                relation=relation,
                contact_at_start=contact_at_start,
                segment=trace.slice(a, b),
                target_cloud=track_cloud_at(by_name[target], anchor),
                reference_cloud=(
                    track_cloud_at(by_name[reference], anchor) if reference else None
                ),
            )
        )
    return ReferencePlan(
        fps=trace.fps,
        object_names=tuple(t.name for t in tracks),
        steps=tuple(steps),
        provider_failures=failures,
    )


def plan_to_dict(plan: ReferencePlan) -> dict:
    steps = []
    for s in plan.steps:
        motion = demo_to_dict(s.segment, [])
        steps.append(
            {
                "index": s.index,
                "range": [s.start, s.stop],
                "target": s.target,
                "reference": s.reference,
                "relation": s.relation,
                "contact_at_start": s.contact_at_start,
                "clouds": {
                    "target": s.target_cloud.tolist(),
                    "reference": (
                        s.reference_cloud.tolist() if s.reference_cloud is not None else None
                    ),
                },
                "motion": {"frames": motion["frames"]},
            }
        )
    return {
        "fps": plan.fps,
        "objects": list(plan.object_names),
        "steps": steps,
    }


def plan_from_dict(doc: dict) -> ReferencePlan:
    if not isinstance(doc, dict) or "steps" not in doc:
        raise ParseError("plan document missing 'steps'")
    fps = doc.get("fps")
    if not isinstance(fps, (int, float)) or fps <= 0:
        raise ParseError(f"plan fps must be positive, got {fps!r}")
    steps = []
    for sd in doc["steps"]:
        segment = trace_from_dict({"fps": fps, "frames": sd["motion"]["frames"]})
        clouds = sd.get("clouds", {})
        target_cloud = np.asarray(clouds.get("target"), dtype=float)
        if target_cloud.ndim != 2 or not np.all(np.isfinite(target_cloud)):
            raise ParseError(f"step {sd.get('index')}: bad target cloud")
        ref_cloud_doc = clouds.get("reference")
        reference_cloud = (
            np.asarray(ref_cloud_doc, dtype=float) if ref_cloud_doc is not None else None
        )
        steps.append(
            PlanStep(
                index=int(sd["index"]),
                start=int(sd["range"][0]),
                stop=int(sd["range"][1]),
                target=sd["target"],
                reference=sd.get("reference"),
                relation=sd.get("relation", RELATION_NONE),
                contact_at_start=bool(sd.get("contact_at_start", False)),
                segment=segment,
                target_cloud=target_cloud,
                reference_cloud=reference_cloud,
            )
        )
    return ReferencePlan(
        fps=float(fps),
        object_names=tuple(doc.get("objects", [])),
        steps=tuple(steps),
    )
