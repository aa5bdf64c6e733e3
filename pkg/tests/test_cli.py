import filecmp
import json
import subprocess
import sys

import pytest

from hoikit.cli import run

FAST = ["--pose-iters", "40", "--object-iters", "40", "--hoi-iters", "3"]


@pytest.fixture(scope="module")
def scene_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("scene") / "scene.json"
    assert run(["synth", "--template", "carry", "--seed", "7", "--frames", "17", "--out", str(p)]) == 0
    return p


def test_synth_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(["synth", "--seed", "7", "--out", str(a)]) == 0
    assert run(["synth", "--seed", "7", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_fit_object_outputs(tmp_path, scene_path):
    outs = []
    for k in range(2):
        t, c = tmp_path / f"t{k}.json", tmp_path / f"t{k}.csv"
        assert run(["fit-object", "--scene", str(scene_path), "--iters", "30",
                    "--out", str(t), "--trace", str(c)]) == 0
        outs.append((t.read_bytes(), c.read_bytes()))
    assert outs[0] == outs[1]
    doc = json.loads(outs[0][0])
    assert doc["config"]["iters"] == 30 and len(doc["track"]["m"]) == 14
    assert outs[0][1].decode().splitlines()[0] == "phase,iteration,loss,best_loss"


def test_fit_joint_eval_render_pipeline(tmp_path, scene_path):
    r1, r2 = tmp_path / "r1", tmp_path / "r2"
    for r in (r1, r2):
        assert run(["fit-joint", "--scene", str(scene_path), "--out", str(r)] + FAST) == 0
    cmp = filecmp.dircmp(r1, r2)
    assert not cmp.diff_files and not cmp.left_only
    for name in cmp.common_files:
        assert (r1 / name).read_bytes() == (r2 / name).read_bytes()
    report = json.loads((r1 / "report.json").read_text())
    assert report["phase"] == "hoi" and report["config"]["values"] == "cross"
    assert set(report["files"]) == {"trace", "poses", "track", "points", "hoi"}

    m1, m2 = tmp_path / "m1.csv", tmp_path / "m2.csv"
    for m in (m1, m2):
        assert run(["eval", "--scene", str(scene_path), "--run", str(r1), "--csv", str(m)]) == 0
    assert m1.read_bytes() == m2.read_bytes()
    lines = m1.read_text().splitlines()
    assert lines[0].startswith("# hoikit metrics") and len(lines) == 2 + 17
    assert lines[2].split(",")[2] == "hoi"

    p1, p2, d1 = tmp_path / "f1.ppm", tmp_path / "f2.ppm", tmp_path / "d1.pgm"
    assert run(["render", "--scene", str(scene_path), "--run", str(r1), "--frame", "5",
                "--out", str(p1), "--depth", str(d1)]) == 0
    assert run(["render", "--scene", str(scene_path), "--run", str(r1), "--frame", "5",
                "--out", str(p2)]) == 0
    assert p1.read_bytes() == p2.read_bytes() and p1.read_bytes().startswith(b"P6\n96 72\n255\n")


def test_no_hoi_tags_baseline(tmp_path, scene_path):
    r = tmp_path / "r"
    assert run(["fit-joint", "--scene", str(scene_path), "--out", str(r), "--no-hoi"] + FAST) == 0
    m = tmp_path / "m.csv"
    assert run(["eval", "--scene", str(scene_path), "--run", str(r), "--csv", str(m)]) == 0
    rows = m.read_text().splitlines()[2:]
    assert rows and all(row.split(",")[2] == "baseline" for row in rows)
    assert not (r / "hoi.json").exists()


def test_gradcheck_all(capsys):
    assert run(["gradcheck", "--suite", "all"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert [line.split()[0] for line in out] == ["chs", "lbs", "hexplane", "attention"]
    assert all(float(line.split("=")[1].split()[0]) < 1e-4 for line in out)


def test_exit_codes(tmp_path, scene_path, capsys):
    assert run([]) == 1
    assert run(["synth", "--template", "dance", "--out", "x"]) == 1
    assert run(["fit-joint", "--scene", str(scene_path), "--out", "x", "--own-values",
                "--conventional-values"]) == 1
    assert run(["render", "--scene", str(tmp_path / "missing.json"), "--frame", "0", "--out", "x"]) == 2
    assert run(["render", "--scene", str(scene_path), "--frame", "99", "--out", str(tmp_path / "x")]) == 2
    assert run(["synth", "--frames", "10", "--out", str(tmp_path / "s.json")]) == 2
    assert run(["fit-joint", "--scene", str(scene_path), "--out", str(tmp_path / "o"), "--own-values"]
               + FAST) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["eval", "--scene", str(bad), "--run", str(tmp_path), "--csv", "m.csv"]) == 2
    err = capsys.readouterr().err
    assert "error:" in err


def test_diverged_fit_exit_code(tmp_path, scene_path, monkeypatch):
    from hoikit import cli
    from hoikit.errors import DivergedLoss

    def boom(*a, **k):
        raise DivergedLoss("loss became non-finite")

    monkeypatch.setattr(cli, "fit_object_track", boom)
    assert run(["fit-object", "--scene", str(scene_path), "--out", str(tmp_path / "t.json")]) == 3


def test_console_module_entry():
    out = subprocess.run([sys.executable, "-m", "hoikit", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("hoikit ")
    out = subprocess.run([sys.executable, "-m", "hoikit", "nope"], capture_output=True, text=True)
    assert out.returncode == 1 and "invalid choice" in out.stderr
