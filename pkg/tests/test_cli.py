import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from persyn.cli import main
from persyn.image_core import RasterImage, load_image, save_image
from persyn.scale_map import load_scale_map


@pytest.fixture(scope="module")
def small_png(tmp_path_factory, brick):
    path = tmp_path_factory.mktemp("ex") / "ex.png"
    save_image(RasterImage(brick.pixels[:40, :40]), path)
    return path


FAST = ["--max-iters", "2", "--levels", "1"]


def test_synth_writes_outputs(tmp_path, small_png):
    out = tmp_path / "out.png"
    code = main(["synth", "--in", str(small_png), "--sigma", "30", "--tau", "18",
                 "--out-size", "32x24", "--seed", "7", "--out", str(out), *FAST,
                 "--report", str(tmp_path / "r.json"), "--trace", str(tmp_path / "t.jsonl"),
                 "--emit-scalemaps", str(tmp_path / "maps")])
    assert code == 0
    assert Image.open(out).size == (32, 24)
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["part1_millis"] >= 0 and rep["levels"][0]["width"] == 32
    lines = (tmp_path / "t.jsonl").read_text().splitlines()
    assert len(lines) == len(rep["levels"][0]["trace"])
    assert set(json.loads(lines[0])) == {"iter", "energy", "changed", "nn_calls", "millis"}
    assert load_scale_map(tmp_path / "maps" / "output.psm").width == 32
    assert load_scale_map(tmp_path / "maps" / "exemplar.psm").width == 40


def test_synth_byte_identical(tmp_path, small_png):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        d.mkdir()
        assert main(["synth", "--in", str(small_png), "--sigma", "30", "--tau", "18",
                     "--out-size", "24x24", "--seed", "3", "--out", str(d / "o.ppm"), *FAST,
                     "--trace", str(d / "t.jsonl"), "--report", str(d / "r.json"),
                     "--no-timing"]) == 0
        outs.append([(d / n).read_bytes() for n in ("o.ppm", "t.jsonl", "r.json")])
    assert outs[0] == outs[1]


@pytest.mark.parametrize("argv", [
    ["synth", "--sigma", "30", "--tau", "18", "--out-size", "8x8", "--out", "x.png"],
    ["synth", "--in", "a.png", "--sigma", "95", "--tau", "18", "--out-size", "8x8", "--out", "x"],
    ["synth", "--in", "a.png", "--sigma", "30", "--tau", "18", "--out-size", "8by8", "--out", "x"],
    ["synth", "--in", "a.png", "--sigma", "30", "--tau", "18", "--out-size", "8x8", "--out", "x",
     "--r", "2"],
    ["scalemap", "--size", "0x4", "--sigma", "1", "--tau", "1", "--out", "m.psm"],
    ["bench", "--in", "a.png", "--reps", "0"],
    ["frobnicate"],
    [],
])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_runtime_errors_exit_1(tmp_path, small_png, capsys):
    args = ["--sigma", "30", "--tau", "18", "--out", str(tmp_path / "o.png")]
    assert main(["synth", "--in", str(tmp_path / "nope.png"), "--out-size", "32x32", *args]) == 1
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not an image")
    assert main(["synth", "--in", str(bad), "--out-size", "32x32", *args]) == 1
    # too small for the coarse pyramid level
    assert main(["synth", "--in", str(small_png), "--out-size", "10x10", *args]) == 1
    err = capsys.readouterr().err
    assert "Traceback" not in err and err.count("persyn: error") == 3
    assert main(["bench", "--in", str(small_png), "--modes", "nope"]) == 1


def test_scalemap_preview(tmp_path):
    assert main(["scalemap", "--size", "20x10", "--sigma", "0", "--tau", "0",
                 "--out", str(tmp_path / "flat.psm")]) == 0
    flat = np.asarray(Image.open(tmp_path / "flat.png"))
    assert flat.shape == (10, 20) and np.all(flat == flat[0, 0])
    assert main(["scalemap", "--size", "64x64", "--sigma", "60", "--tau", "60",
                 "--out", str(tmp_path / "m.psm"), "--preview", str(tmp_path / "p.png")]) == 0
    m = load_scale_map(tmp_path / "m.psm")
    prev = load_image(tmp_path / "p.png").pixels[:, :, 0]
    assert prev[0, 0] == 1.0 and prev[-1, -1] == 0.0
    assert np.all(np.diff(prev[10, :]) <= 0) and np.all(np.diff(prev[:, 10]) <= 0)
    assert m.values[0, 0] == pytest.approx(2.0, rel=1e-6)


def test_bench_csv(tmp_path, small_png, capsys):
    assert main(["bench", "--in", str(small_png), "--sizes", "16x16,24x24", "--reps", "1",
                 "--levels", "1", "--max-iters", "1", "--csv", str(tmp_path / "b.csv"),
                 "--json", str(tmp_path / "b.json")]) == 0
    with open(tmp_path / "b.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 6
    assert {"size", "mode", "mean_millis", "std_millis"} <= set(rows[0])
    assert all(float(r["std_millis"]) == 0.0 for r in rows)
    assert len(json.loads((tmp_path / "b.json").read_text())["runs"]) == 6
    assert "patch+tree+pca" in capsys.readouterr().out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "persyn", "--help"], capture_output=True,
                         text=True)
    assert res.returncode == 0 and "synth" in res.stdout
