import csv
import json
import os

import numpy as np
import pytest
from PIL import Image

from salref.cli import main

TINY_CONFIG = """
resolution = 32
backbone.stage_channels = 4,4,8,8,8
model.width = 8
model.channel_reduction = 2
data.synth.enable = true
data.synth.count = 4
train.batch_size = 2
train.steps = 4
train.eval_every = 4
augment.enable = false
"""


def write_config(tmp_path, extra=""):
    path = tmp_path / "exp.cfg"
    path.write_text(TINY_CONFIG + f"train.run_dir = {tmp_path / 'run'}\n" + extra,
                    encoding="utf-8")
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("cli_train")
    config = write_config(tmp_path)
    assert main(["train", "--config", config]) == 0
    return tmp_path, config


def test_train_missing_config(tmp_path, capsys):
    rc = main(["train", "--config", str(tmp_path / "absent.cfg")])
    assert rc == 2
    assert "absent.cfg" in capsys.readouterr().err


def test_train_writes_checkpoints(trained):
    tmp_path, _ = trained
    assert (tmp_path / "run" / "best.pt").is_file()
    assert (tmp_path / "run" / "last.pt").is_file()


def test_resume_mismatched_hash(trained, tmp_path, capsys):
    _, config = trained
    other = write_config(tmp_path, extra="train.lr = 0.5\n")
    ckpt = str(os.path.join(os.path.dirname(config), "run", "last.pt"))
    rc = main(["train", "--config", other, "--resume", ckpt])
    assert rc == 2
    assert "hash" in capsys.readouterr().err


def test_infer_and_dump(trained, tmp_path):
    src, config = trained
    in_dir = tmp_path / "in"
    in_dir.mkdir()
    rng = np.random.default_rng(0)
    Image.fromarray(rng.integers(0, 255, (40, 48, 3), dtype=np.uint8)).save(
        in_dir / "sample.png")
    out_dir = tmp_path / "out"
    rc = main(["infer", "--config", config,
               "--checkpoint", str(src / "run" / "last.pt"),
               "--input", str(in_dir), "--output", str(out_dir),
               "--mode", "infer", "--dump-uncertainty"])
    assert rc == 0
    pred = Image.open(out_dir / "sample.png")
    assert pred.size == (48, 40)        # back at the original size
    assert pred.mode == "L"
    assert (out_dir / "stages" / "sample_u1.png").is_file()
    assert (out_dir / "stages" / "sample_u3.png").is_file()
    assert (out_dir / "stages" / "sample_r1.png").is_file()
    assert (out_dir / "stages" / "sample_r3.png").is_file()


def test_infer_unit_stage_factors(trained, tmp_path):
    src, config = trained
    in_dir = tmp_path / "in"
    in_dir.mkdir()
    rng = np.random.default_rng(4)
    Image.fromarray(rng.integers(0, 255, (32, 32, 3), dtype=np.uint8)).save(
        in_dir / "x.png")
    out_dir = tmp_path / "out"
    rc = main(["infer", "--config", config,
               "--checkpoint", str(src / "run" / "last.pt"),
               "--input", str(in_dir), "--output", str(out_dir),
               "--mode", "infer", "--stage-factors", "1,1,1"])
    assert rc == 0
    # single final upsample back to the source size
    assert Image.open(out_dir / "x.png").size == (32, 32)


def test_infer_empty_dir(trained, tmp_path):
    src, config = trained
    in_dir = tmp_path / "empty"
    in_dir.mkdir()
    rc = main(["infer", "--config", config,
               "--checkpoint", str(src / "run" / "last.pt"),
               "--input", str(in_dir), "--output", str(tmp_path / "out2")])
    assert rc == 0
    assert not os.listdir(tmp_path / "out2")


def test_infer_unreadable_file(trained, tmp_path):
    src, config = trained
    in_dir = tmp_path / "broken"
    in_dir.mkdir()
    (in_dir / "bad.png").write_bytes(b"not an image")
    rc = main(["infer", "--config", config,
               "--checkpoint", str(src / "run" / "last.pt"),
               "--input", str(in_dir), "--output", str(tmp_path / "out3")])
    assert rc == 1


def test_infer_arch_mismatch(trained, tmp_path, capsys):
    src, config = trained
    other = tmp_path / "wider.cfg"
    other.write_text(TINY_CONFIG.replace("model.width = 8", "model.width = 16")
                     + f"train.run_dir = {tmp_path}\n", encoding="utf-8")
    rc = main(["infer", "--config", str(other),
               "--checkpoint", str(src / "run" / "last.pt"),
               "--input", str(tmp_path), "--output", str(tmp_path / "o")])
    assert rc == 2


def eval_dirs(tmp_path, identical=True):
    pred_dir = tmp_path / "pred"
    gt_dir = tmp_path / "gt"
    pred_dir.mkdir()
    gt_dir.mkdir()
    rng = np.random.default_rng(1)
    for i in range(3):
        gt = (rng.random((16, 16)) < 0.4).astype(np.uint8) * 255
        Image.fromarray(gt).save(gt_dir / f"im{i}.png")
        pred = gt if identical else (rng.random((16, 16)) * 255).astype(np.uint8)
        Image.fromarray(pred).save(pred_dir / f"im{i}.png")
    return pred_dir, gt_dir


def test_eval_identical_pairs(tmp_path):
    pred_dir, gt_dir = eval_dirs(tmp_path)
    out = tmp_path / "report.json"
    rc = main(["eval", "--pred", str(pred_dir), "--gt", str(gt_dir),
               "--out", str(out)])
    assert rc == 0
    payload = json.loads(out.read_text())
    assert payload["aggregate"]["mae"] == 0.0
    assert abs(payload["aggregate"]["s_measure"] - 1.0) < 1e-6
    assert abs(payload["aggregate"]["weighted_f"] - 1.0) < 1e-6
    assert abs(payload["aggregate"]["e_mean"] - 1.0) < 1e-6
    # delimited + figure outputs land next to the JSON
    assert (tmp_path / "report.csv").is_file()
    assert (tmp_path / "report_curves.csv").is_file()
    assert (tmp_path / "report_pr.png").is_file()
    assert (tmp_path / "report_fm.png").is_file()


def test_eval_report_schema_golden(tmp_path):
    pred_dir, gt_dir = eval_dirs(tmp_path, identical=False)
    out = tmp_path / "report.json"
    assert main(["eval", "--pred", str(pred_dir), "--gt", str(gt_dir),
                 "--out", str(out), "--no-figures"]) == 0
    payload = json.loads(out.read_text())
    assert sorted(payload) == ["aggregate", "count", "per_image"]
    assert sorted(payload["aggregate"]) == [
        "e_adaptive", "e_max", "e_mean", "mae", "s_measure", "weighted_f"]
    assert sorted(payload["per_image"][0]) == [
        "e_adaptive", "e_max", "e_mean", "mae", "name", "s_measure", "weighted_f"]
    assert payload["count"] == 3
    with open(tmp_path / "report.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["name", "mae", "e_mean", "e_max", "e_adaptive",
                      "s_measure", "weighted_f"]


def test_eval_unpaired_files(tmp_path, capsys):
    pred_dir, gt_dir = eval_dirs(tmp_path)
    Image.fromarray(np.zeros((8, 8), np.uint8)).save(pred_dir / "extra.png")
    rc = main(["eval", "--pred", str(pred_dir), "--gt", str(gt_dir),
               "--out", str(tmp_path / "r.json"), "--no-figures"])
    assert rc == 1
    assert "extra" in capsys.readouterr().err


def test_eval_subset_restriction(tmp_path):
    pred_dir, gt_dir = eval_dirs(tmp_path)
    subset = tmp_path / "subset.txt"
    subset.write_text("im0\nim2\n", encoding="utf-8")
    out = tmp_path / "sub.json"
    rc = main(["eval", "--pred", str(pred_dir), "--gt", str(gt_dir),
               "--out", str(out), "--subset", str(subset), "--no-figures"])
    assert rc == 0
    assert json.loads(out.read_text())["count"] == 2


def test_bench_adp_synthetic(tmp_path):
    out = tmp_path / "bench.csv"
    rc = main(["bench-adp", "--synthetic", "5", "--side", "64",
               "--thresholds", "0,0.2,1", "--out", str(out), "--seed", "3"])
    assert rc == 0
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 15
    assert {r["mode"] for r in rows} == {"global", "adp", "fixed-window"}
    by_map = {}
    for r in rows:
        by_map.setdefault(r["map_id"], {})[r["mode"]] = int(r["mac_count"])
    for modes in by_map.values():
        assert modes["adp"] < modes["global"]
    assert (tmp_path / "bench.png").is_file()


def test_bench_adp_corpus_round_trip(tmp_path):
    corpus = tmp_path / "corpus"
    assert main(["synth", "--kind", "uncertainty", "--out", str(corpus),
                 "--count", "4", "--size", "32", "--seed", "5"]) == 0
    out = tmp_path / "bench.csv"
    rc = main(["bench-adp", "--corpus", str(corpus), "--thresholds", "0,0.2",
               "--out", str(out), "--no-figures"])
    assert rc == 0


def test_bench_adp_empty_corpus(tmp_path):
    empty = tmp_path / "none"
    empty.mkdir()
    rc = main(["bench-adp", "--corpus", str(empty),
               "--out", str(tmp_path / "b.csv")])
    assert rc == 2


def test_synth_images_manifest(tmp_path):
    out = tmp_path / "ds"
    assert main(["synth", "--out", str(out), "--count", "3", "--size", "24",
                 "--seed", "2"]) == 0
    from salref.data import load_manifest
    assert len(load_manifest(str(out / "manifest.tsv"))) == 3
