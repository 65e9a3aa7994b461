import csv

import numpy as np
import pytest
import yaml

from trajfields import cli, io, synthetic

TINY_MODEL = {"variant": "I3", "enc_channels": [4, 8], "hidden": 8, "dec_hidden": 8, "sem_channels": 4}


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    rng = np.random.default_rng(3)
    for sid in ("alpha", "beta"):
        synthetic.write_ethucy(tmp_path / f"{sid}.txt", synthetic.random_scene(rng, 3, 24))
    cfg = {
        "data": {"scenes": {sid: {"path": f"{sid}.txt"} for sid in ("alpha", "beta")},
                 "test_scene": "beta", "stride": 4},
        "model": TINY_MODEL,
        "train": {"lr": 1e-3, "batch": 4, "epochs": 1, "checkpoint_every": 0},
        "output_dir": "runs",
    }
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    monkeypatch.setenv("TRAJFIELDS_CACHE", str(tmp_path / "cache"))
    return tmp_path, path, cfg


def rewrite(path, cfg):
    path.write_text(yaml.safe_dump(cfg))


def test_prepare_twice_hits_cache(workspace, capsys):
    tmp, path, _ = workspace
    assert cli.main(["prepare", "--config", str(path)]) == 0
    assert "prepared" in capsys.readouterr().out
    assert cli.main(["prepare", "--config", str(path)]) == 0
    assert "cache hit" in capsys.readouterr().out
    (key_dir,) = (tmp / "cache").iterdir()
    assert (key_dir / "manifest.json").exists() and (key_dir / "alpha.npz").exists()


def test_prepare_lists_every_missing_file(workspace, capsys):
    tmp, path, cfg = workspace
    cfg["data"]["scenes"]["gamma"] = {"path": "gamma.txt"}
    cfg["data"]["scenes"]["delta"] = {"path": "delta.txt"}
    rewrite(path, cfg)
    assert cli.main(["prepare", "--config", str(path)]) == cli.EXIT_DATA
    err = capsys.readouterr().err
    assert "gamma.txt" in err and "delta.txt" in err


def test_corrupt_row_names_file_and_line(workspace, capsys):
    tmp, path, _ = workspace
    with open(tmp / "alpha.txt", "a") as fh:
        fh.write("999 1 x 2\n")
    n_lines = len((tmp / "alpha.txt").read_text().splitlines())
    assert cli.main(["prepare", "--config", str(path)]) == cli.EXIT_DATA
    err = capsys.readouterr().err
    assert "alpha.txt" in err and f"line {n_lines}" in err


def test_unknown_config_key_rejected(workspace, capsys):
    tmp, path, cfg = workspace
    cfg["train"]["learning_rate"] = 0.1
    rewrite(path, cfg)
    assert cli.main(["prepare", "--config", str(path)]) == cli.EXIT_CONFIG
    assert "learning_rate" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert cli.main(["prepare", "--config", str(tmp_path / "none.yaml")]) == cli.EXIT_CONFIG


def test_eval_linear_baseline_writes_rows(workspace, capsys):
    tmp, path, _ = workspace
    assert cli.main(["eval", "--config", str(path), "--baseline", "linear"]) == 0
    out = capsys.readouterr().out
    with open(tmp / "runs" / "eval" / "eval_linear.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["scene"] for r in rows] == ["alpha", "beta", "average"]
    assert "average" in out


def test_eval_oracle_fields(workspace):
    tmp, path, _ = workspace
    assert cli.main(["eval", "--config", str(path), "--oracle-fields", "--test-scene", "alpha"]) == 0
    with open(tmp / "runs" / "eval" / "eval_oracle-fields.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[-1]["ade"]) < 1 / 256


def test_eval_without_checkpoint_is_config_error(workspace):
    _, path, _ = workspace
    assert cli.main(["eval", "--config", str(path)]) == cli.EXIT_CONFIG


@pytest.fixture
def trained(workspace, capsys):
    tmp, path, cfg = workspace
    assert cli.main(["train", "--config", str(path), "--seed", "1"]) == 0
    ckpt = capsys.readouterr().out.strip().splitlines()[-1]
    return tmp, path, cfg, ckpt


def test_train_then_eval(trained, capsys):
    tmp, path, _, ckpt = trained
    assert ckpt.endswith(".safetensors") and (tmp / "runs" / "train_I3_beta" / "metrics.csv").exists()
    assert cli.main(["eval", "--config", str(path), "--checkpoint", ckpt]) == 0
    assert (tmp / "runs" / "eval" / "eval_I3.csv").exists()


def test_variant_flag_must_match_checkpoint(trained):
    _, path, _, ckpt = trained
    assert cli.main(["eval", "--config", str(path), "--checkpoint", ckpt, "--variant", "I1"]) == cli.EXIT_RUNTIME


def test_predict_rows_and_dumps(trained):
    tmp, path, _, ckpt = trained
    out = tmp / "pred"
    t0 = 10 * 8  # first frame with a full 8-step history
    args = ["predict", "--config", str(path), "--checkpoint", ckpt, "--scene", "alpha",
            "--t0", str(t0), "--out", str(out), "--dump-fields"]
    assert cli.main(args) == 0
    rows = io.read_trajectories(out / "trajectories.csv")
    assert len(rows) == 3 * 12
    assert list(rows[0]) == list(io.TRAJ_COLUMNS)
    assert len(list(out.glob("fields_t*.safetensors"))) == 12
    assert len(list(out.glob("heatmap_t*.safetensors"))) == 12
    tensors, header = io.load_fields(out / "fields_t00.safetensors")
    assert tensors["localization"].shape == (3, 64, 64) and tensors["association"].shape == (5, 64, 64)
    assert header["step"] == 0

    # same inputs, same artifacts
    first = (out / "trajectories.csv").read_bytes()
    assert cli.main(args) == 0
    assert (out / "trajectories.csv").read_bytes() == first

    viz_out = tmp / "img"
    assert cli.main(["visualize", "--input", str(out), "--out", str(viz_out)]) == 0
    assert len(list(viz_out.glob("fields_t*_loc.png"))) == 12
    assert len(list(viz_out.glob("heatmap_t*.png"))) == 12
    assert len(list(viz_out.glob("trajectories_*.png"))) == 1


def test_predict_t0_too_early(trained, capsys):
    tmp, path, _, ckpt = trained
    code = cli.main(["predict", "--config", str(path), "--checkpoint", ckpt, "--scene", "alpha",
                     "--t0", "30", "--out", str(tmp / "p")])
    assert code == cli.EXIT_DATA
    assert "history" in capsys.readouterr().err


def test_visualize_empty_input(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert cli.main(["visualize", "--input", str(tmp_path / "empty"), "--out", str(tmp_path / "o")]) == 0
    assert "nothing to visualize" in capsys.readouterr().out
    assert not (tmp_path / "o").exists()


def test_benchmark_kernels(capsys):
    assert cli.main(["benchmark", "--kernels", "--kernel-repeats", "2"]) == 0
    assert "accumulate" in capsys.readouterr().out


def test_benchmark_runtime_csv(workspace, capsys):
    tmp, path, _ = workspace
    assert cli.main(["benchmark", "--config", str(path), "--counts", "1,3", "--repeats", "30"]) == 0
    with open(tmp / "runs" / "benchmark" / "runtime.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {(r["agent_count"], r["stage"]) for r in rows} == {
        ("1", "forward"), ("1", "decode"), ("3", "forward"), ("3", "decode")}
    assert "ratio" in capsys.readouterr().out


def test_benchmark_rejects_few_repeats(workspace):
    _, path, _ = workspace
    assert cli.main(["benchmark", "--config", str(path), "--repeats", "1"]) == cli.EXIT_RUNTIME
