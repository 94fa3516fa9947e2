import csv
import json

import numpy as np
import pytest

from asymseg.cli import DEFAULT_CONFIG, main
from asymseg.volume import load_mask, load_probability, read_header, save_mask, save_probability

SMALL = {
    "data": {"dims": [24, 24, 24], "n_images": 3},
    "train": {"steps": 30, "patch_size": 16, "quota": 2, "lr_interval": 10},
    "fusion": {"patch_size": 16},
}


def _config(tmp_path, extra=None, name="cfg.json"):
    cfg = json.loads(json.dumps(SMALL))
    for k, v in (extra or {}).items():
        cfg.setdefault(k, {}).update(v) if isinstance(v, dict) else cfg.update({k: v})
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = _config(root)
    assert main(["--config", cfg, "gen-data", str(root / "data")]) == 0
    assert main(["--config", cfg, "train", str(root / "data"), str(root / "model.ckpt")]) == 0
    return root, cfg


def test_gen_data_layout_and_fractions(workspace, capsys):
    root, cfg = workspace
    assert sorted(p.name for p in (root / "data").iterdir()) == [
        "case_000", "case_001", "case_002", "resolved_config.json"]
    resolved = json.loads((root / "data" / "resolved_config.json").read_text())
    assert resolved["seed"] == 7 and resolved["data"]["dims"] == [24, 24, 24]
    assert main(["--config", cfg, "gen-data", str(root / "again")]) == 0
    assert "lesion voxels, fraction" in capsys.readouterr().out


def test_gen_data_bytes_repeat(workspace, tmp_path):
    root, cfg = workspace
    assert main(["--config", cfg, "gen-data", str(tmp_path / "d")]) == 0
    for case in ("case_000", "case_002"):
        for f in ("volume.rvol", "mask.rvol"):
            assert (tmp_path / "d" / case / f).read_bytes() == (root / "data" / case / f).read_bytes()


def test_seed_flag_changes_data(workspace, tmp_path):
    root, cfg = workspace
    assert main(["--config", cfg, "--seed", "8", "gen-data", str(tmp_path / "d")]) == 0
    assert (tmp_path / "d" / "case_000" / "mask.rvol").read_bytes() != \
        (root / "data" / "case_000" / "mask.rvol").read_bytes()
    # image 0 at seed 8 is image 1 at seed 7
    assert (tmp_path / "d" / "case_000" / "mask.rvol").read_bytes() == \
        (root / "data" / "case_001" / "mask.rvol").read_bytes()
    assert json.loads((tmp_path / "d" / "resolved_config.json").read_text())["seed"] == 8


def test_low_preset_on_64(tmp_path, capsys):
    cfg = _config(tmp_path, {"data": {"preset": "low", "dims": [64, 64, 64], "n_images": 1}})
    assert main(["--config", cfg, "gen-data", str(tmp_path / "d")]) == 0
    m, _ = load_mask(tmp_path / "d" / "case_000" / "mask.rvol")
    assert 10 <= int(m.data.sum()) < 100


def test_invalid_preset(tmp_path, capsys):
    cfg = _config(tmp_path, {"data": {"preset": "huge"}})
    assert main(["--config", cfg, "gen-data", str(tmp_path / "d")]) != 0
    err = capsys.readouterr().err
    assert "low" in err and "medium" in err and "high" in err


@pytest.mark.parametrize("bad", [{"trian": {}}, {"train": {"stepz": 3}}, {"train": {"loss": {"kind2": 1}}},
                                 {"data": {"dims": [8, 8, 8], "noise": 1}}])
def test_unknown_keys_rejected(tmp_path, capsys, bad):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    assert main(["--config", str(path), "gen-data", str(tmp_path / "d")]) != 0
    assert "unknown key" in capsys.readouterr().err
    assert not (tmp_path / "d").exists()


def test_train_outputs(workspace):
    root, _ = workspace
    assert (root / "model.ckpt").is_file()
    rows = list(csv.DictReader(open(root / "model.ckpt.log.csv")))
    assert len(rows) == 30 and list(rows[0]) == ["step", "lr", "loss"]
    resolved = json.loads((root / "model.ckpt.config.json").read_text())
    assert resolved["train"]["loss"] == {"kind": "f_beta", "beta": 1.5, "alpha": 0.25, "gamma": 2.0}


def test_train_bytes_repeat(workspace, tmp_path):
    root, cfg = workspace
    assert main(["--config", cfg, "train", str(root / "data"), str(tmp_path / "m.ckpt")]) == 0
    assert (tmp_path / "m.ckpt").read_bytes() == (root / "model.ckpt").read_bytes()
    assert (tmp_path / "m.ckpt.log.csv").read_bytes() == (root / "model.ckpt.log.csv").read_bytes()


def test_separable_train_loss_decreases(tmp_path):
    cfg = _config(tmp_path, {"data": {"noise_sigma": 0.0, "intensity_shift": [2.0, 2.0], "n_images": 2},
                             "train": {"steps": 150, "lr_decay": 1.0, "loss": {"beta": 1.5}}})
    assert main(["--config", cfg, "gen-data", str(tmp_path / "d")]) == 0
    assert main(["--config", cfg, "train", str(tmp_path / "d"), str(tmp_path / "m")]) == 0
    losses = [float(r["loss"]) for r in csv.DictReader(open(tmp_path / "m.log.csv"))]
    assert np.mean(losses[-10:]) < np.mean(losses[:10])


def test_focal_echoed(workspace, tmp_path):
    root, _ = workspace
    cfg = _config(tmp_path, {"train": {"steps": 5, "loss": {"kind": "focal", "alpha": 0.25, "gamma": 2}}})
    assert main(["--config", cfg, "train", str(root / "data"), str(tmp_path / "m")]) == 0
    loss = json.loads((tmp_path / "m.config.json").read_text())["train"]["loss"]
    assert loss["kind"] == "focal" and loss["alpha"] == 0.25 and loss["gamma"] == 2


def test_missing_mask_named(workspace, tmp_path, capsys):
    root, cfg = workspace
    case = tmp_path / "d" / "case_000"
    case.mkdir(parents=True)
    (case / "volume.rvol").write_bytes((root / "data" / "case_000" / "volume.rvol").read_bytes())
    assert main(["--config", cfg, "train", str(tmp_path / "d"), str(tmp_path / "m")]) != 0
    assert str(case / "mask.rvol") in capsys.readouterr().err
    assert not (tmp_path / "m").exists()


@pytest.mark.parametrize("mode", ["tiling", "uniform", "spline"])
def test_predict_modes(workspace, tmp_path, mode):
    root, cfg = workspace
    vol = str(root / "data" / "case_002" / "volume.rvol")
    for out in ("a", "b"):
        assert main(["--config", cfg, "predict", str(root / "model.ckpt"), vol,
                     str(tmp_path / out), "--fusion", mode]) == 0
    p, _ = load_probability(tmp_path / "a" / "probability.rvol")
    assert read_header(tmp_path / "a" / "probability.rvol")["dtype"] == "f32le"
    assert p.data.min() >= 0 and p.data.max() <= 1 and p.dims == (24, 24, 24)
    m, _ = load_mask(tmp_path / "a" / "mask.rvol")
    assert np.array_equal(m.data.astype(bool), p.data >= 0.5)
    for f in ("probability.rvol", "mask.rvol", "resolved_config.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert json.loads((tmp_path / "a" / "resolved_config.json").read_text())["fusion"]["mode"] == mode


def test_predict_channel_mismatch(workspace, tmp_path, capsys):
    root, _ = workspace
    cfg = _config(tmp_path, {"data": {"channels": 1, "intensity_shift": [1.0], "n_images": 1}})
    assert main(["--config", cfg, "gen-data", str(tmp_path / "d")]) == 0
    assert main(["--config", cfg, "predict", str(root / "model.ckpt"),
                 str(tmp_path / "d" / "case_000" / "volume.rvol"), str(tmp_path / "o")]) != 0
    assert "channels" in capsys.readouterr().err


def test_evaluate_perfect(workspace, tmp_path):
    root, cfg = workspace
    gt = str(root / "data" / "case_000" / "mask.rvol")
    assert main(["--config", cfg, "evaluate", gt, gt, str(tmp_path / "e")]) == 0
    d = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert d["dsc"] == 1.0 and d["sd_mm"] == 0.0 and d["ltpr"] == 1.0 and d["lfpr"] == 0.0 and d["vd"] == 0.0
    assert not (tmp_path / "e" / "pr_curve.csv").exists()


def test_evaluate_empty_prediction_nulls(workspace, tmp_path):
    root, cfg = workspace
    gt = root / "data" / "case_000" / "mask.rvol"
    m, spacing = load_mask(gt)
    save_mask(np.zeros(m.dims, np.uint8), tmp_path / "empty.rvol", spacing)
    assert main(["--config", cfg, "evaluate", str(tmp_path / "empty.rvol"), str(gt), str(tmp_path / "e")]) == 0
    d = json.loads((tmp_path / "e" / "metrics.json").read_text())
    assert d["dsc"] == 0.0 and d["tpr"] == 0.0 and d["ppv"] is None
    assert "null" in (tmp_path / "e" / "metrics.json").read_text()


def test_evaluate_probability_and_repeat(workspace, tmp_path):
    root, cfg = workspace
    vol = str(root / "data" / "case_002" / "volume.rvol")
    gt = str(root / "data" / "case_002" / "mask.rvol")
    assert main(["--config", cfg, "predict", str(root / "model.ckpt"), vol, str(tmp_path / "p")]) == 0
    prob = str(tmp_path / "p" / "probability.rvol")
    for out in ("e1", "e2"):
        assert main(["--config", cfg, "evaluate", prob, gt, str(tmp_path / out), "--spacing", "1", "1", "2"]) == 0
    d = json.loads((tmp_path / "e1" / "metrics.json").read_text())
    assert 0 <= d["apr"] <= 1
    assert abs(d["jaccard"] - d["dsc"] / (2 - d["dsc"])) < 1e-12
    header = (tmp_path / "e1" / "pr_curve.csv").read_text().splitlines()[0]
    assert header == "threshold,precision,recall"
    for f in ("metrics.json", "metrics.csv", "pr_curve.csv", "resolved_config.json"):
        assert (tmp_path / "e1" / f).read_bytes() == (tmp_path / "e2" / f).read_bytes()
    assert json.loads((tmp_path / "e1" / "resolved_config.json").read_text())["metrics"]["spacing"] == [1, 1, 2]


def test_evaluate_dims_mismatch(workspace, tmp_path, capsys):
    root, cfg = workspace
    save_probability(np.zeros((8, 8, 8)), tmp_path / "p.rvol")
    assert main(["--config", cfg, "evaluate", str(tmp_path / "p.rvol"),
                 str(root / "data" / "case_000" / "mask.rvol"), str(tmp_path / "e")]) != 0
    assert "mismatch" in capsys.readouterr().err


def test_sweep_single_beta_rejected(workspace, tmp_path, capsys):
    root, cfg = workspace
    assert main(["--config", cfg, "sweep-beta", str(root / "data"), str(tmp_path / "s"), "--betas", "1.5"]) != 0
    assert "two" in capsys.readouterr().err


def test_sweep_columns(workspace, tmp_path):
    root, cfg = workspace
    assert main(["--config", cfg, "sweep-beta", str(root / "data"), str(tmp_path / "s"),
                 "--betas", "1.0", "3.0"]) == 0
    lines = (tmp_path / "s" / "sweep.csv").read_text().splitlines()
    assert lines[0] == "beta,dsc,sensitivity,specificity,f2,apr"
    assert len(lines) == 3
    assert json.loads((tmp_path / "s" / "resolved_config.json").read_text())["sweep"]["betas"] == [1.0, 3.0]


def test_default_config_is_complete():
    assert set(DEFAULT_CONFIG) == {"seed", "data", "train", "fusion", "metrics", "sweep"}
    assert DEFAULT_CONFIG["train"]["loss"]["alpha"] == 0.25
