import csv
import json

import pytest

from neme.cli import main
from neme.core import load_dataset, write_dataset
from neme.metaeval import series_csv

from conftest import make_traj

CURVE_MF1 = (63.59, 68.51, 70.4, 68.57, 57.47, 68.06, 67.32, 71.25, 70.6, 58.25, 62.83, 66.6)
CURVE_VAL_LOSS = (0.877, 0.936, 0.927, 0.961, 0.96, 0.953, 0.966, 0.984, 0.992, 0.97, 0.985, 1.04)
CURVE_DTW = (2.83, 2.59, 2.41, 2.33, 2.29, 2.27, 2.18, 2.18, 2.16, 2.13, 2.20, 2.10)

SMALL_TRAIN = {"L": 16, "h": 8, "max_epochs": 2, "train_stride": 8, "eval_stride": 8}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--episodes", "40", "--seed", "1", "--out", str(d / "data.jsonl")]) == 0
    (d / "train.json").write_text(json.dumps(SMALL_TRAIN))
    assert main(["train", str(d / "data.jsonl"), "--config", str(d / "train.json"), "--out", str(d / "tr")]) == 0
    return d


def test_gen_outputs(workdir):
    trajs = load_dataset(workdir / "data.jsonl")
    assert len(trajs) == 40
    stats = (workdir / "data.stats.csv").read_text().splitlines()
    assert stats[0] == "class,frame_count,event_count,min_s,median_s,max_s"
    man = json.loads((workdir / "data.manifest.json").read_text())
    assert man["command"] == "gen" and man["seeds"] == 1
    assert man["config"]["episodes"] == 40


def test_gen_default_episode_count(tmp_path):
    assert main(["gen", "--out", str(tmp_path / "d.jsonl")]) == 0
    assert len(load_dataset(tmp_path / "d.jsonl")) == 700


def test_gen_seed_is_reproducible(tmp_path, workdir):
    assert main(["gen", "--episodes", "40", "--seed", "1", "--out", str(tmp_path / "again.jsonl")]) == 0
    assert (tmp_path / "again.jsonl").read_bytes() == (workdir / "data.jsonl").read_bytes()


def test_train_outputs(workdir):
    tr = workdir / "tr"
    for name in ("checkpoint.json", "history.csv", "split.json", "test.jsonl", "test_report.txt", "manifest.json"):
        assert (tr / name).exists()
    rows = list(csv.reader((tr / "history.csv").open()))
    assert rows[0] == ["epoch", "train_loss", "val_loss", "val_acc"]
    assert len(rows) == 3
    man = json.loads((tr / "manifest.json").read_text())
    assert man["config"]["train"]["L"] == 16


def test_simulate_and_eval(workdir, tmp_path, capsys):
    test_split = workdir / "tr" / "test.jsonl"
    sim = tmp_path / "sim"
    assert main(["simulate", str(test_split), "--curve", "1.0,0.5", "--seed", "3", "--out", str(sim)]) == 0
    fam = json.loads((sim / "family.json").read_text())
    assert [f["policy_name"] for f in fam] == ["policy-epoch01", "policy-epoch02"]
    assert (sim / "epoch_01.jsonl").read_bytes() == test_split.read_bytes()
    ev = tmp_path / "ev"
    code = main(["eval", str(workdir / "tr" / "checkpoint.json"), str(sim / "epoch_01.jsonl"), str(sim / "epoch_02.jsonl"),
                 "--reference", str(test_split), "--out", str(ev)])
    assert code == 0
    rep = json.loads((ev / "epoch_01.report.json").read_text())
    assert rep["mean_dtw"] == 0.0
    assert (ev / "mf1.csv").read_text().startswith("epoch,value\n1,")
    assert (ev / "dtw.csv").exists()
    out = ev / "cmp.csv"
    assert main(["compare", str(ev / "epoch_02.report.json"), str(ev / "epoch_01.report.json"), "--out", str(out)]) == 0
    assert out.read_text().startswith("rank,method,")


def test_simulate_single_spec(workdir, tmp_path):
    sim = tmp_path / "s"
    args = ["simulate", str(workdir / "tr" / "test.jsonl"), "--spec", "jitter_sigma=0.05,lag_frames=2",
            "--name", "jit", "--out", str(sim)]
    assert main(args) == 0
    fam = json.loads((sim / "family.json").read_text())
    assert fam[0]["spec"]["lag_frames"] == 2
    assert (sim / "jit.jsonl").exists()


def test_dtw_command(workdir, tmp_path, capsys):
    ref = workdir / "tr" / "test.jsonl"
    assert main(["dtw", str(ref), str(ref), "--out", str(tmp_path / "d.csv")]) == 0
    assert "grand mean normalized DTW: 0.000000" in capsys.readouterr().out
    assert (tmp_path / "d.csv").read_text().startswith("class,chunks,")


def _write_series(tmp_path):
    paths = {}
    for name, s in (("mf1", CURVE_MF1), ("val_loss", CURVE_VAL_LOSS), ("dtw", CURVE_DTW)):
        p = tmp_path / f"{name}_in.csv"
        p.write_text(series_csv(s))
        paths[name] = p
    return paths


def test_select_prints_choices(tmp_path, capsys):
    paths = _write_series(tmp_path)
    argv = ["select", *(f"{k}={v}" for k, v in paths.items()), "--out", str(tmp_path / "sel"), "--plot"]
    assert main(argv) == 0
    assert capsys.readouterr().out.strip() == "mf1→8, val_loss→1, dtw→12"
    assert json.loads((tmp_path / "sel" / "selection.json").read_text()) == {"mf1": 8, "val_loss": 1, "dtw": 12}
    svg = (tmp_path / "sel" / "selection.svg").read_text()
    assert svg.lstrip().startswith("<?xml") and "<svg" in svg


def test_select_plot_is_deterministic(tmp_path):
    paths = _write_series(tmp_path)
    for d in ("a", "b"):
        assert main(["select", *(f"{k}={v}" for k, v in paths.items()), "--out", str(tmp_path / d), "--plot"]) == 0
    assert (tmp_path / "a" / "selection.svg").read_bytes() == (tmp_path / "b" / "selection.svg").read_bytes()


def test_missing_config_exit_2(tmp_path, capsys):
    assert main(["gen", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x.jsonl")]) == 2
    assert "nope.json" in capsys.readouterr().err


def test_malformed_dataset_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"id": "a", "frames": [{"t": 0, "joints": [0], "label": "dance"}]}\n')
    assert main(["dtw", str(p), str(p)]) == 2
    assert "bad.jsonl:1" in capsys.readouterr().err


def test_bad_series_exit_2(tmp_path):
    assert main(["select", f"mf1={tmp_path / 'missing.csv'}"]) == 2
    assert main(["select", "mf1"]) == 2


def test_dimension_mismatch_exit_2(workdir, tmp_path, capsys):
    p = tmp_path / "d23.jsonl"
    write_dataset(p, [make_traj(["wave"] * 40, dim=23, id="x")])
    assert main(["eval", str(workdir / "tr" / "checkpoint.json"), str(p), "--out", str(tmp_path / "ev")]) == 2
    err = capsys.readouterr().err
    assert "23 channels" in err and "expects 24" in err


def test_divergence_exit_3(workdir, tmp_path, capsys):
    cfg = tmp_path / "t.json"
    cfg.write_text(json.dumps({**SMALL_TRAIN, "lr": 1e308, "max_epochs": 1}))
    with pytest.warns(RuntimeWarning):
        code = main(["train", str(workdir / "data.jsonl"), "--config", str(cfg), "--out", str(tmp_path / "t")])
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err


def test_unknown_train_field_exit_2(workdir, tmp_path):
    cfg = tmp_path / "t.json"
    cfg.write_text(json.dumps({"depth": 3}))
    assert main(["train", str(workdir / "data.jsonl"), "--config", str(cfg)]) == 2


def test_grid_two_configs(workdir, tmp_path):
    cfg = tmp_path / "g.json"
    cfg.write_text(json.dumps({**SMALL_TRAIN, "max_epochs": 1, "grid": {"L": [16], "h": [4, 8]}, "seeds": [0, 1, 2]}))
    assert main(["grid", str(workdir / "data.jsonl"), "--config", str(cfg), "--out", str(tmp_path / "g")]) == 0
    rows = list(csv.DictReader((tmp_path / "g" / "summary.csv").open()))
    assert [r["h"] for r in rows] == ["4", "8"]
    assert all(r["status"] == "ok" for r in rows)
    best = json.loads((tmp_path / "g" / "best_config.json").read_text())
    assert best["h"] in (4, 8)
    assert (tmp_path / "g" / "checkpoint.json").exists()
