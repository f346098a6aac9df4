import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from fgstereo.cli import main
from fgstereo.config import PipelineConfig
from fgstereo.image_io import read_pfm, write_pgm
from fgstereo.pipeline import (InputError, compare, downsample, downsample_disparity, estimate, run_dataset,
                               run_pipeline)
from synthetic import constant_shift, two_level, write_scene

FAST = PipelineConfig(segments=4, kmeans_replicates=2)
ARTIFACTS = ["disp_initial.pfm", "disp_fgs.pfm", "disp_final.pfm", "disp_initial.png", "disp_fgs.png",
             "disp_final.png", "occlusion.png", "trace.csv", "config.txt"]


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    left, right = constant_shift(n=40, shift=4, seed=3)
    gt = np.full(left.shape, 4.0, dtype=np.float32)
    return write_scene(tmp_path_factory.mktemp("data") / "Shift", left, right, 12, gt)


@pytest.fixture(scope="module")
def run_out(scene, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    rc = main(["run", "--left", str(scene / "im0.pgm"), "--right", str(scene / "im1.pgm"),
               "--calib", str(scene / "calib.txt"), "--gt", str(scene / "disp0GT.pfm"), "--out", str(out),
               "--set", "segments=4", "--set", "kmeans_replicates=2"])
    assert rc == 0
    return out


def test_run_writes_artifacts(run_out):
    for name in ARTIFACTS + ["metrics.json", "metrics.csv"] + [f"error_{s}.pfm" for s in ("initial", "fgs", "final")]:
        assert (run_out / name).is_file(), name


def test_run_recovers_shift(run_out):
    final = read_pfm(run_out / "disp_final.pfm")
    assert (final[4:-4, 4:-4] == 4).mean() >= 0.99
    rep = json.loads((run_out / "metrics.json").read_text())
    assert set(rep["scenes"][0]["stages"]) == {"initial", "fgs", "final"}


def test_trace_and_config_files(run_out):
    rows = list(csv.reader(open(run_out / "trace.csv")))
    assert rows[0] == ["iteration", "epsilon", "wall_time"] and len(rows) >= 2
    from fgstereo.config import load

    assert load(run_out / "config.txt") == FAST


def test_pfm_matches_memory(scene, tmp_path):
    res = run_pipeline(scene / "im0.pgm", scene / "im1.pgm", scene / "calib.txt", FAST, tmp_path)
    for stage, arr in (("initial", res.initial), ("fgs", res.fgs), ("final", res.final)):
        back = read_pfm(tmp_path / f"disp_{stage}.pfm")
        assert back.tobytes() == np.asarray(arr, dtype=np.float32).tobytes()


def test_self_evaluation_is_zero(scene, run_out, tmp_path):
    res = run_pipeline(scene / "im0.pgm", scene / "im1.pgm", scene / "calib.txt", FAST, tmp_path,
                       gt_path=run_out / "disp_final.pfm")
    assert res.metrics["final"].avg_err == 0.0 and res.metrics["final"].bad == 0.0


def test_repeat_runs_bit_identical(scene, tmp_path):
    for k in ("a", "b"):
        run_pipeline(scene / "im0.pgm", scene / "im1.pgm", scene / "calib.txt", FAST, tmp_path / k)
    for stage in ("initial", "fgs", "final"):
        a = (tmp_path / "a" / f"disp_{stage}.pfm").read_bytes()
        assert a == (tmp_path / "b" / f"disp_{stage}.pfm").read_bytes()


def _run_sub(scene, out, threads):
    env = dict(os.environ, NUMBA_NUM_THREADS=str(threads))
    cmd = [sys.executable, "-m", "fgstereo", "run", "--left", str(scene / "im0.pgm"),
           "--right", str(scene / "im1.pgm"), "--calib", str(scene / "calib.txt"), "--out", str(out),
           "--set", "segments=4", "--set", "kmeans_replicates=2"]
    subprocess.run(cmd, env=env, check=True, capture_output=True)


def test_thread_count_does_not_change_output(scene, tmp_path):
    _run_sub(scene, tmp_path / "t1", 1)
    _run_sub(scene, tmp_path / "t2", 2)
    for stage in ("initial", "fgs", "final"):
        a = (tmp_path / "t1" / f"disp_{stage}.pfm").read_bytes()
        assert a == (tmp_path / "t2" / f"disp_{stage}.pfm").read_bytes()


def test_backends_give_same_maps(backend):
    left, right = constant_shift(n=32, shift=3, seed=5)
    res = estimate(left, right, 8, FAST)
    assert (res.final[3:-3, 3:-3] == 3).mean() >= 0.95


def test_input_errors(scene, tmp_path):
    write_pgm(np.zeros((5, 5)), tmp_path / "small.pgm")
    with pytest.raises(InputError):
        run_pipeline(scene / "im0.pgm", tmp_path / "small.pgm", scene / "calib.txt", FAST, tmp_path / "o")
    with pytest.raises(InputError):
        run_pipeline(scene / "im0.pgm", scene / "im1.pgm", tmp_path / "nocalib.txt", FAST, tmp_path / "o")
    with pytest.raises(InputError):
        run_pipeline(scene / "im0.pgm", tmp_path / "none.pgm", scene / "calib.txt", FAST, tmp_path / "o")
    assert main(["run", "--left", str(scene / "im0.pgm"), "--right", str(tmp_path / "small.pgm"),
                 "--calib", str(scene / "calib.txt"), "--out", str(tmp_path / "o")]) == 1


def test_downsampling():
    img = np.arange(64.0).reshape(8, 8)
    np.testing.assert_allclose(downsample(img), [[13.5, 17.5], [45.5, 49.5]])
    d = np.full((9, 9), 8.0, dtype=np.float32)
    d[:4, :4] = np.inf
    out = downsample_disparity(d)
    assert out.shape == (2, 2) and not np.isfinite(out[0, 0]) and out[1, 1] == 2.0


def test_quarter_mode(tmp_path):
    left, right, gt = two_level(n=64, seed=0, d_bg=8, d_fg=12, box=(20, 44, 16, 48))
    scene = write_scene(tmp_path / "Q", left, right, 16, gt)
    res = run_pipeline(scene / "im0.pgm", scene / "im1.pgm", scene / "calib.txt",
                       FAST.with_overrides(quarter=True), tmp_path / "out", gt_path=scene / "disp0GT.pfm")
    assert res.final.shape == (16, 16)
    assert res.metrics["final"].count == 256


# ----------------------------------------------------------------- dataset

@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    for name, shift, seed in (("Teddy", 4, 1), ("Vintage", 3, 2)):
        left, right = constant_shift(n=32, shift=shift, seed=seed)
        write_scene(root / name, left, right, 10, np.full(left.shape, float(shift), dtype=np.float32))
    left, right = constant_shift(n=32, shift=2, seed=9)
    write_scene(root / "NoGT", left, right, 10)
    return root


def test_dataset_weighted_summary(dataset, tmp_path, caplog):
    s = run_dataset(dataset, FAST, tmp_path)
    assert [r.name for r in s.scenes] == ["Teddy", "Vintage"]
    assert [r.weight for r in s.scenes] == [8.0, 4.0]
    assert "NoGT" in caplog.text
    for stage, avg in s.averages.items():
        a, b = (r.stages[stage].avg_err for r in s.scenes)
        assert avg.avg_err == pytest.approx((8 * a + 4 * b) / 12, abs=1e-12)
    assert (tmp_path / "summary.json").is_file() and (tmp_path / "Teddy" / "disp_final.pfm").is_file()


def test_dataset_single_scene_equals_report(dataset, tmp_path):
    root = tmp_path / "one"
    root.mkdir()
    os.symlink(dataset / "Teddy", root / "Teddy")
    s = run_dataset(root, FAST, tmp_path / "out")
    rep = json.loads((tmp_path / "out" / "Teddy" / "metrics.json").read_text())
    for stage, m in s.averages.items():
        assert m.avg_err == rep["scenes"][0]["stages"][stage]["avg_err"]


def test_empty_dataset_is_error(tmp_path):
    with pytest.raises(InputError):
        run_dataset(tmp_path, FAST, tmp_path / "out")
    assert main(["dataset", "--root", str(tmp_path), "--out", str(tmp_path / "o")]) == 1


# ----------------------------------------------------------------- compare

def test_compare_self_is_zero(run_out, tmp_path, capsys):
    rep = str(run_out / "metrics.json")
    assert main(["compare", rep, rep]) == 0
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert rows and all(float(r["delta"]) == 0.0 for r in rows)
    text = compare([rep, rep], tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text() == text


def test_compare_disjoint_sets(run_out, tmp_path):
    data = json.loads((run_out / "metrics.json").read_text())
    data["scenes"][0]["name"] = "Other"
    other = tmp_path / "other.json"
    other.write_text(json.dumps(data))
    with pytest.raises(ValueError, match="Other"):
        compare([run_out / "metrics.json", other])
    assert main(["compare", str(run_out / "metrics.json"), str(other)]) == 1
    with pytest.raises(ValueError):
        compare([other])


def test_config_subcommand(capsys):
    assert main(["config", "--set", "segments=3"]) == 0
    assert "segments = 3" in capsys.readouterr().out
