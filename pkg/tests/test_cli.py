import json
import threading
from pathlib import Path

import numpy as np
import pytest

from objmimic.cli import main
from objmimic.ingest import write_json
from objmimic.providers import PROVIDER_URL_ENV


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """synth-demo output for pick-place, shared across CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    rc = main(["synth-demo", "--template", "pick-place", "--seed", "7",
               "--out-dir", str(root)])
    assert rc == 0
    return root


def run_plan(workdir, out_name="plan.json", extra=()):
    out = workdir / out_name
    rc = main(["plan", "--demo", str(workdir / "demo.json"), "--out", str(out), *extra])
    return rc, out


def test_synth_demo_writes_files(workdir):
    for name in ("demo.json", "scene.json", "task.toml"):
        assert (workdir / name).exists()


def test_plan_on_fixture_two_steps(workdir, capsys):
    rc, out = run_plan(workdir)
    assert rc == 0
    doc = json.loads(out.read_text())
    assert len(doc["steps"]) == 2
    assert doc["steps"][0]["target"] == "toy"
    assert doc["steps"][1]["reference"] == "basket"
    # segmentation report artifacts
    assert (workdir / "plan_speeds.csv").exists()
    header = (workdir / "plan_speeds.csv").read_text().splitlines()[0]
    assert header == "frame,basket,toy"
    printed = capsys.readouterr().out
    assert "2 steps" in printed


def test_plan_missing_file_exit_2(tmp_path, capsys):
    rc = main(["plan", "--demo", str(tmp_path / "nope.json")])
    assert rc == 2
    assert "nope.json" in capsys.readouterr().err


def test_plan_huge_beta_single_step(workdir):
    rc, out = run_plan(workdir, "plan_beta.json", ("--beta", "1e9"))
    assert rc == 0
    doc = json.loads(out.read_text())
    assert len(doc["steps"]) == 1


def test_plan_determinism(workdir):
    _, a = run_plan(workdir, "plan_a.json")
    _, b = run_plan(workdir, "plan_b.json")
    assert a.read_bytes() == b.read_bytes()


def test_retarget_identity_scene_and_verify(workdir, capsys):
    run_plan(workdir)
    rc = main([
        "retarget", "--plan", str(workdir / "plan.json"),
        "--scene", str(workdir / "scene.json"),
        "--out", str(workdir / "traj.json"), "--verify",
    ])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "verification passed" in printed
    doc = json.loads((workdir / "traj.json").read_text())
    assert doc["rate"] == 40.0
    assert len(doc["joints"]) == 26
    assert all(len(row) == 27 for row in doc["samples"])


def test_retarget_determinism(workdir):
    run_plan(workdir)
    for name in ("t1.json", "t2.json"):
        rc = main([
            "retarget", "--plan", str(workdir / "plan.json"),
            "--scene", str(workdir / "scene.json"),
            "--out", str(workdir / name),
        ])
        assert rc == 0
    assert (workdir / "t1.json").read_bytes() == (workdir / "t2.json").read_bytes()


def test_retarget_rate_400_tenfold_samples(workdir):
    run_plan(workdir)
    rc = main([
        "retarget", "--plan", str(workdir / "plan.json"),
        "--scene", str(workdir / "scene.json"),
        "--out", str(workdir / "traj400.json"), "--rate", "400",
    ])
    assert rc == 0
    n40 = len(json.loads((workdir / "traj.json").read_text())["samples"])
    n400 = len(json.loads((workdir / "traj400.json").read_text())["samples"])
    assert 9.5 <= n400 / n40 <= 10.5


def test_verify_subcommand_shifted_scene(workdir, capsys):
    run_plan(workdir)
    scene = json.loads((workdir / "scene.json").read_text())
    for obj in scene["objects"]:
        cloud = np.asarray(obj["cloud"])
        obj["cloud"] = (cloud + [0.1, -0.05, 0.0]).tolist()
    write_json(scene, workdir / "scene_shifted.json")
    rc = main([
        "verify", "--plan", str(workdir / "plan.json"),
        "--scene", str(workdir / "scene_shifted.json"),
    ])
    assert rc == 0
    assert "exact within 1e-9" in capsys.readouterr().out


def test_eval_determinism_and_export(workdir):
    run_plan(workdir)
    args = [
        "eval", "--plan", str(workdir / "plan.json"),
        "--task", str(workdir / "task.toml"),
        "--n", "2", "--seed", "0",
    ]
    rc = main(args + ["--out", str(workdir / "s1.json"), "--export", str(workdir / "d1.jsonl")])
    assert rc == 0
    rc = main(args + ["--out", str(workdir / "s2.json"), "--export", str(workdir / "d2.jsonl")])
    assert rc == 0
    assert (workdir / "s1.json").read_bytes() == (workdir / "s2.json").read_bytes()
    assert (workdir / "d1.jsonl").read_bytes() == (workdir / "d2.jsonl").read_bytes()
    summary = json.loads((workdir / "s1.json").read_text())
    assert summary["n"] == 2
    lines = (workdir / "d1.jsonl").read_text().splitlines()
    assert len(lines) == summary["successes"]
    first = json.loads(lines[0])
    assert np.asarray(first["obs"]).shape[1] == 26


def test_eval_zero_success_exit_1(workdir, tmp_path):
    run_plan(workdir)
    # unreachable region far outside the arm workspace
    toml = (workdir / "task.toml").read_text()
    toml = toml.replace("[workspace]\nlo = [0.00, -0.55, -0.25]\nhi = [0.70, 0.55, 0.45]",
                        "[workspace]\nlo = [-9.0, -9.0, -9.0]\nhi = [9.0, 9.0, 9.0]")
    lines = []
    for line in toml.splitlines():
        if line.startswith("region_lo"):
            vals = json.loads(line.split("=", 1)[1])
            line = f"region_lo = [{vals[0] + 4.0}, {vals[1]}, {vals[2]}]"
        elif line.startswith("region_hi"):
            vals = json.loads(line.split("=", 1)[1])
            line = f"region_hi = [{vals[0] + 4.0}, {vals[1]}, {vals[2]}]"
        lines.append(line)
    bad = tmp_path / "task_far.toml"
    bad.write_text("\n".join(lines))
    rc = main([
        "eval", "--plan", str(workdir / "plan.json"), "--task", str(bad),
        "--n", "1", "--seed", "0",
    ])
    assert rc == 1


def test_bad_task_config_exit_2(workdir, tmp_path, capsys):
    bad = tmp_path / "task.toml"
    bad.write_text("not toml ][")
    run_plan(workdir)
    rc = main(["eval", "--plan", str(workdir / "plan.json"), "--task", str(bad), "--n", "1"])
    assert rc == 2


def test_plan_http_provider_without_endpoint_exit_3(workdir, monkeypatch, capsys):
    monkeypatch.delenv(PROVIDER_URL_ENV, raising=False)
    rc = main(["plan", "--demo", str(workdir / "demo.json"),
               "--out", str(workdir / "p.json"), "--provider", "http"])
    assert rc == 3


def test_plan_http_provider_timeout_falls_back_exit_3(workdir, monkeypatch, capsys):
    import http.server
    import time as _time

    class Slow(http.server.BaseHTTPRequestHandler):
        def do_POST(self):
            _time.sleep(1.0)
            self.send_response(200)
            self.end_headers()
            self.wfile.write(b"{}")

        def log_message(self, *args):
            pass

    server = http.server.HTTPServer(("127.0.0.1", 0), Slow)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    try:
        monkeypatch.setenv(PROVIDER_URL_ENV, f"http://127.0.0.1:{server.server_port}")
        out = workdir / "plan_http.json"
        rc = main(["plan", "--demo", str(workdir / "demo.json"), "--out", str(out),
                   "--provider", "http", "--timeout", "0.2"])
        # the plan is still produced with the rule-free fallback, exit code 3
        assert rc == 3
        assert out.exists()
        printed = capsys.readouterr().out
        assert "fell back" in printed
        doc = json.loads(out.read_text())
        assert len(doc["steps"]) == 2
        assert doc["steps"][0]["reference"] is None
    finally:
        server.shutdown()


def test_degraded_flag_runs(workdir):
    run_plan(workdir)
    rc = main([
        "retarget", "--plan", str(workdir / "plan.json"),
        "--scene", str(workdir / "scene.json"),
        "--out", str(workdir / "traj_degraded.json"), "--degraded",
    ])
    assert rc == 0
    a = json.loads((workdir / "traj.json").read_text())["samples"]
    b = json.loads((workdir / "traj_degraded.json").read_text())["samples"]
    assert a != b
