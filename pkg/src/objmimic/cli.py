"""Command-line surface: plan generation, retargeting, evaluation, demo
synthesis, and warp verification.

Exit codes: 0 success, 1 task failure (zero eval success rate), 2 input
error, 3 provider error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    ConfigError,
    ConsistencyError,
    DomainError,
    ModelError,
    ParseError,
    ProviderError,
)
from .ingest import load_demo, load_scene, write_json
from .model import load_bundled_model, load_model
from .plan import (
    PlanConfig,
    default_penalty,
    generate_plan,
    keypoint_speed_signal,
    plan_from_dict,
    plan_to_dict,
)
from .providers import make_provider
from .retarget import prepare_plan
from .sim import (
    SimModels,
    evaluate,
    export_dataset,
    make_sampler,
    track_plan,
)
from .synth import TEMPLATES, scene_document, synthesize_demo, task_config_document
from .taskconfig import load_task_config
from .warp import compute_warp_spec, warp_trajectory

log = logging.getLogger("objmimic")

EXIT_OK = 0
EXIT_TASK_FAILURE = 1
EXIT_INPUT = 2
EXIT_PROVIDER = 3

INPUT_ERRORS = (
    ParseError, ConsistencyError, ConfigError, ModelError, DomainError,
    FileNotFoundError, IsADirectoryError,
)


def _load_model_arg(path: str | None):
    if path is None:
        return load_bundled_model("humanoid")
    return load_model(Path(path).read_text("utf-8"))


def cmd_synth_demo(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc, meta = synthesize_demo(args.template, args.seed)
    write_json(doc, out_dir / "demo.json")
    write_json(scene_document(doc), out_dir / "scene.json")
    (out_dir / "task.toml").write_text(
        task_config_document(args.template, meta, args.region_halfwidth), "utf-8"
    )
    print(f"wrote demo.json, scene.json, task.toml to {out_dir}")
    return EXIT_OK


def cmd_plan(args) -> int:
    trace, tracks = load_demo(args.demo)
    provider = make_provider(args.provider, timeout=args.timeout)
    config = PlanConfig(beta=args.beta)
    plan = generate_plan(trace, tracks, config, provider)
    out = Path(args.out)
    write_json(plan_to_dict(plan), out)

    signals = keypoint_speed_signal(tracks, trace.fps)
    summed = np.sum(list(signals.values()), axis=0)
    beta = args.beta if args.beta is not None else default_penalty(summed)
    report_dir = Path(args.report_dir) if args.report_dir else out.parent
    report_dir.mkdir(parents=True, exist_ok=True)
    csv_path = report_dir / (out.stem + "_speeds.csv")
    names = sorted(signals)
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write("frame," + ",".join(names) + "\n")
        for t in range(len(summed)):
            f.write(f"{t}," + ",".join(f"{signals[n][t]:.6f}" for n in names) + "\n")

    keyframes = [s.start for s in plan.steps[1:]]
    print(f"plan: {len(plan.steps)} steps, beta={beta:.3e}, keyframes={keyframes}")
    for s in plan.steps:
        ref = f"{s.reference} ({s.relation})" if s.reference else "none"
        print(f"  step {s.index}: frames [{s.start}, {s.stop}) target={s.target} reference={ref}")
    print(f"wrote {out} and {csv_path}")
    if plan.provider_failures:
        print(
            f"note: semantic provider failed on {plan.provider_failures} step(s); "
            "fell back to no reference"
        )
        return EXIT_PROVIDER
    return EXIT_OK


def cmd_retarget(args) -> int:
    plan = plan_from_dict(json.loads(Path(args.plan).read_text("utf-8")))
    scene = load_scene(args.scene)
    model = _load_model_arg(args.model)
    prepared = prepare_plan(plan, model, degraded=args.degraded)
    models = SimModels(model=model)
    # commands are always computed at 40 Hz; higher rates interpolate them
    times, commands, verification = track_plan(prepared, scene, models)
    if args.rate != 40.0:
        n = int(np.floor((times[-1] - times[0]) * args.rate + 1e-9)) + 1
        dense_times = times[0] + np.arange(n) / args.rate
        dense = np.empty((n, commands.shape[1]))
        for j in range(commands.shape[1]):
            dense[:, j] = np.interp(dense_times, times, commands[:, j])
        times, commands = dense_times, dense
    doc = {
        "rate": args.rate,
        "joints": model.joint_names,
        "samples": [[float(t), *map(float, row)] for t, row in zip(times, commands)],
    }
    write_json(doc, args.out)
    print(f"wrote {args.out}: {len(times)} samples at {args.rate} Hz")
    if args.verify:
        worst = 0.0
        for line in verification:
            print(line["text"])
            worst = max(worst, line["error"])
        if worst > 1e-9:
            print(f"verification FAILED: worst endpoint error {worst:.3e} m")
            return EXIT_TASK_FAILURE
        print("verification passed: warp endpoints exact within 1e-9")
    return EXIT_OK


def cmd_eval(args) -> int:
    plan = plan_from_dict(json.loads(Path(args.plan).read_text("utf-8")))
    config = load_task_config(args.task)
    if args.seed is not None:
        config = dataclasses.replace(config, seed_base=args.seed)
    if args.noise_sigma is not None:
        config = dataclasses.replace(config, noise_sigma=args.noise_sigma)
    model = _load_model_arg(args.model)
    models = SimModels(model=model)
    prepared = prepare_plan(plan, model, settings=None, degraded=args.degraded)
    sampler = make_sampler(config, plan)
    summary = evaluate(prepared, sampler, args.n, models, config, workers=args.workers)
    histogram = {k: v for k, v in summary.failure_histogram.items() if v}
    print(f"episodes: {summary.n_episodes}  successes: {summary.successes}  "
          f"rate: {summary.success_rate:.3f}")
    if histogram:
        print("failures by stage: " + ", ".join(f"{k}={v}" for k, v in histogram.items()))
    if args.out:
        write_json(
            {
                "n": summary.n_episodes,
                "successes": summary.successes,
                "rate": summary.success_rate,
                "failures": summary.failure_histogram,
                "episodes": [
                    {"seed": r.seed, "success": r.success, "stage": r.failure_stage}
                    for r in summary.reports
                ],
            },
            args.out,
        )
        print(f"wrote {args.out}")
    if args.export:
        if summary.successes:
            export_dataset(summary.records, args.export)
            print(f"wrote {args.export}: {summary.successes} trajectories")
        else:
            print("no successful episodes; dataset not written")
    return EXIT_OK if summary.successes else EXIT_TASK_FAILURE


def cmd_verify(args) -> int:
    plan = plan_from_dict(json.loads(Path(args.plan).read_text("utf-8")))
    scene = load_scene(args.scene)
    model = _load_model_arg(args.model)
    prepared = prepare_plan(plan, model)
    worst = 0.0
    for step_r, step_p in zip(prepared.steps, plan.steps):
        spec = compute_warp_spec(step_p, scene)
        for side, traj in step_r.trajectories.items():
            warped = warp_trajectory(traj, spec)
            e_start = np.linalg.norm(
                warped.start.translation - (spec.t_start @ traj.start).translation
            )
            e_end = np.linalg.norm(
                warped.end.translation - (spec.t_end @ traj.end).translation
            )
            worst = max(worst, e_start, e_end)
            print(
                f"step {step_p.index} {side}: mode={spec.mode} "
                f"start_err={e_start:.2e} end_err={e_end:.2e}"
            )
    if worst > 1e-9:
        print(f"FAILED: worst endpoint error {worst:.3e} m")
        return EXIT_TASK_FAILURE
    print("all warp endpoints exact within 1e-9")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="objmimic",
        description="Object-aware retargeting of human manipulation demos onto a humanoid",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-demo", help="generate a synthetic demo, scene, and task config")
    p.add_argument("--template", choices=TEMPLATES, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--region-halfwidth", type=float, default=0.15)
    p.set_defaults(func=cmd_synth_demo)

    p = sub.add_parser("plan", help="segment a demo into a reference plan")
    p.add_argument("--demo", required=True)
    p.add_argument("--out", default="plan.json")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--provider", choices=("rules", "http", "none"), default="rules")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--report-dir", default=None)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("retarget", help="retarget a plan against a scene into joint commands")
    p.add_argument("--plan", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--out", default="trajectory.json")
    p.add_argument("--rate", type=float, default=40.0)
    p.add_argument("--verify", action="store_true")
    p.add_argument("--degraded", action="store_true",
                   help="embodiment-blind palm-centroid baseline mode")
    p.set_defaults(func=cmd_retarget)

    p = sub.add_parser("eval", help="run randomized rollout episodes")
    p.add_argument("--plan", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--export", default=None)
    p.add_argument("--noise-sigma", type=float, default=None)
    p.add_argument("--degraded", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="check warp endpoint exactness for a plan and scene")
    p.add_argument("--plan", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--model", default=None)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ProviderError as e:
        print(f"provider error: {e}", file=sys.stderr)
        return EXIT_PROVIDER
    except INPUT_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
