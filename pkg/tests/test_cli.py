import csv
import json

import numpy as np
import pytest

from dstnet.checkpoint import save_checkpoint
from dstnet.cli import main, parse_plan
from dstnet.data import synthetic_pairs, write_pairs
from dstnet.model import DSTNet, ModelConfig

TINY = ModelConfig(base_width=4, attn_window=4, c_tex=4)
TINY_OVERRIDES = ["model.base_width=4", "model.attn_window=4", "model.c_tex=4"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    return write_pairs(tmp_path_factory.mktemp("data"), synthetic_pairs(10, size=16, seed=4))


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ckpt") / "m.pt"
    save_checkpoint(path, DSTNet(TINY))
    return path


def overrides(*items):
    return [a for item in (*TINY_OVERRIDES, *items) for a in ("--override", item)]


def test_missing_root_is_usage_error(tmp_path, capsys):
    code = main(["train", "--data", str(tmp_path / "absent"), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "dataset root not found" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, dataset, capsys):
    code = main(["train", "--data", str(dataset), "--out", str(tmp_path), "--override", "train.bogus=1"])
    assert code == 2
    assert "bogus" in capsys.readouterr().err


def test_train_logs_override(tmp_path, dataset):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("train.batch = 3\ntrain.crop = 16\n")
    out = tmp_path / "run"
    code = main(["train", "--data", str(dataset), "--out", str(out), "--config", str(cfg),
                 *overrides("train.max_steps=2", "train.lr0=0.001"), "--seed", "3"])
    assert code == 0
    resolved = (out / "resolved_config.txt").read_text()
    assert "train.lr0 = 0.001" in resolved and "train.batch = 3" in resolved
    assert "train.seed = 3" in resolved
    rows = list(csv.reader(open(out / "train_log.csv")))
    assert rows[0][:4] == ["step", "epoch", "lr", "total"] and len(rows) == 3
    assert (out / "last.pt").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["steps"] == 2


def test_enhance_folder(tmp_path, dataset, checkpoint):
    outs = []
    for run in ("a", "b"):
        out = tmp_path / run
        code = main(["enhance", "--checkpoint", str(checkpoint), "--input", str(dataset / "low"),
                     "--gt", str(dataset / "high"), "--grid", "--out", str(out)])
        assert code == 0
        outs.append(out)
    names = sorted(p.name for p in (dataset / "low").iterdir())
    assert sorted(p.name for p in outs[0].glob("*.png")) == names
    assert len(list((outs[0] / "grids").iterdir())) == len(names)
    for n in names:
        assert (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()
    assert json.loads((outs[0] / "summary.json").read_text()) == {"enhanced": 10, "failed": 0}


def test_enhance_skips_undecodable(tmp_path, checkpoint):
    src = tmp_path / "in"
    src.mkdir()
    (src / "broken.png").write_bytes(b"xx")
    code = main(["enhance", "--checkpoint", str(checkpoint), "--input", str(src), "--out", str(tmp_path / "o")])
    assert code == 0
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["failed"] == 1


def test_eval_gt_against_itself(tmp_path, dataset):
    out = tmp_path / "ev"
    code = main(["eval", "--pred-dir", str(dataset / "high"), "--data", str(dataset), "--split", "all",
                 "--loe-ref", "gt", "--out", str(out)])
    assert code == 0
    agg = json.loads((out / "metrics.json").read_text())["aggregate"]
    assert agg["psnr"] == 120.0 and abs(agg["ssim"] - 1) < 1e-9 and agg["loe"] == 0.0
    header = next(csv.reader(open(out / "metrics.csv")))
    assert header == ["image", "ssim", "psnr", "lpips", "loe", "de", "eme"]


def test_eval_checkpoint_test_split(tmp_path, dataset, checkpoint):
    out = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(checkpoint), "--data", str(dataset), "--out", str(out)]) == 0
    rows = list(csv.reader(open(out / "metrics.csv")))
    assert len(rows) == 1 + 1 + 1  # header, one test image, mean


def test_eval_needs_one_source(tmp_path, dataset, checkpoint):
    assert main(["eval", "--data", str(dataset), "--out", str(tmp_path)]) == 2


def test_ablate_rows(tmp_path, dataset, checkpoint):
    plan = tmp_path / "plan.txt"
    plan.write_text("no_color: color=off\nno_tex_no_hsv: texture=off loss.hsv=off\n")
    out = tmp_path / "ab"
    code = main(["ablate", "--checkpoint", str(checkpoint), "--data", str(dataset), "--split", "all",
                 "--plan", str(plan), "--out", str(out)])
    assert code == 0
    rows = json.loads((out / "ablation.json").read_text())
    assert [r["row"] for r in rows] == ["baseline", "no_color", "no_tex_no_hsv"]
    assert rows[0]["engaged"] is False
    assert rows[1]["engaged"] and rows[1]["color"] == "off"
    assert rows[2]["loss_terms"] == "l1+ssim+exp+tv"
    assert all(np.isfinite(r["objective"]) for r in rows)


def test_parse_plan():
    rows = parse_plan(["# comment", "base:", "x: structure=off loss.tv=off"])
    assert rows[1][1]["structure"] is False and rows[1][2]["tv"] is False
    with pytest.raises(Exception):
        parse_plan(["bad: nonsense=off"])
