import json
import subprocess
import sys

import numpy as np
import pytest

from sddgat.cli import main
from sddgat.data import load_csv

FAST = ["--max-epochs", "5", "--hidden-dim", "6", "--k", "4"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--n", "120", "--seed", "7", "--bearing", "35", "--out", str(root)]) == 0
    return root / "data.csv"


def manifest(d):
    return json.loads((d / "manifest.json").read_text())


class TestGenData:
    def test_byte_identical(self, tmp_path):
        for name in ("a", "b"):
            assert main(["gen-data", "--n", "500", "--seed", "7", "--bearing", "35", "--out", str(tmp_path / name)]) == 0
        assert (tmp_path / "a" / "data.csv").read_bytes() == (tmp_path / "b" / "data.csv").read_bytes()

    def test_round_trip(self, dataset):
        t = load_csv(dataset)
        assert t.n == 120
        assert manifest(dataset.parent)["config"]["n_nodes"] == 120

    def test_too_few_nodes(self, tmp_path, capsys):
        assert main(["gen-data", "--n", "5", "--out", str(tmp_path)]) == 3
        assert "n_nodes" in capsys.readouterr().err

    def test_bad_flag_type_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["gen-data", "--n", "many", "--out", str(tmp_path)])
        assert info.value.code == 2


class TestTrainEval:
    def test_outputs_and_manifest(self, dataset, tmp_path):
        out = tmp_path / "run"
        assert main(["train", "--data", str(dataset), "--task", "regression", "--seed", "1", "--out", str(out), *FAST]) == 0
        for f in ("checkpoint.json", "train_log.csv", "metrics.txt", "metrics.json", "manifest.json"):
            assert (out / f).exists()
        cfg = manifest(out)["config"]
        assert cfg["task"] == "regression" and cfg["train"]["seed"] == 1
        assert cfg["graph"]["epsilon"] is not None
        assert cfg["train"]["lr"] == 0.01

    def test_no_direction_checkpoint(self, dataset, tmp_path):
        out = tmp_path / "nd"
        assert main(["train", "--data", str(dataset), "--variant", "no_direction", "--out", str(out), *FAST]) == 0
        ck = json.loads((out / "checkpoint.json").read_text())
        shapes = {p["name"]: p["shape"] for p in ck["params"]}
        assert shapes["spatial.0.a"] == [12]

    def test_k_zero(self, dataset, tmp_path):
        assert main(["train", "--data", str(dataset), "--k", "0", "--out", str(tmp_path)]) == 3
        assert not (tmp_path / "checkpoint.json").exists()

    def test_deterministic(self, dataset, tmp_path):
        for name in ("a", "b"):
            assert main(["train", "--data", str(dataset), "--seed", "3", "--out", str(tmp_path / name), *FAST]) == 0
        for f in ("checkpoint.json", "metrics.txt", "metrics.json"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_eval_matches_train(self, dataset, tmp_path):
        run, ev, ev0 = tmp_path / "run", tmp_path / "ev", tmp_path / "ev0"
        assert main(["train", "--data", str(dataset), "--out", str(run), *FAST]) == 0
        ck = str(run / "checkpoint.json")
        assert main(["eval", "--checkpoint", ck, "--data", str(dataset), "--out", str(ev)]) == 0
        assert main(["eval", "--checkpoint", ck, "--data", str(dataset), "--noise", "0", "--out", str(ev0)]) == 0
        ref = (run / "metrics.json").read_bytes()
        assert (ev / "metrics.json").read_bytes() == ref
        assert (ev0 / "metrics.json").read_bytes() == ref

    def test_eval_perturbed_and_other_split(self, dataset, tmp_path):
        run = tmp_path / "run"
        assert main(["train", "--data", str(dataset), "--out", str(run), *FAST]) == 0
        ck = str(run / "checkpoint.json")
        assert main(["eval", "--checkpoint", ck, "--data", str(dataset), "--dropout", "0.3", "--split", "all",
                     "--out", str(tmp_path / "e")]) == 0
        assert json.loads((tmp_path / "e" / "metrics.json").read_text())["n_eval"] == 120

    def test_eval_dimension_mismatch(self, dataset, tmp_path, capsys):
        run = tmp_path / "run"
        assert main(["train", "--data", str(dataset), "--out", str(run), *FAST]) == 0
        lines = dataset.read_text().splitlines()
        # drop every 'sandy' row so one soil category disappears
        kept = [lines[0]] + [ln for ln in lines[1:] if ",sandy," not in ln]
        other = tmp_path / "other.csv"
        other.write_text("\n".join(kept) + "\n")
        code = main(["eval", "--checkpoint", str(run / "checkpoint.json"), "--data", str(other), "--out", str(tmp_path / "e")])
        err = capsys.readouterr().err
        assert code == 3
        assert "expects 7 feature columns" in err and "found 6" in err

    def test_missing_data_file(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path / "o")]) == 5

    def test_inputs_untouched(self, dataset, tmp_path):
        before = dataset.read_bytes()
        main(["train", "--data", str(dataset), "--out", str(tmp_path / "x"), *FAST])
        assert dataset.read_bytes() == before


class TestConfigFile:
    def test_flags_override_file(self, dataset, tmp_path):
        conf = tmp_path / "c.txt"
        conf.write_text("# run settings\nlr = 0.005\npatience = 7\nhidden-dim = 6\nmax_epochs = 3\nk = 4\n")
        out = tmp_path / "o"
        assert main(["train", "--data", str(dataset), "--config", str(conf), "--patience", "9", "--out", str(out)]) == 0
        cfg = manifest(out)["config"]
        assert cfg["train"]["lr"] == 0.005 and cfg["train"]["patience"] == 9 and cfg["hidden_dim"] == 6

    def test_unknown_key(self, dataset, tmp_path):
        conf = tmp_path / "c.txt"
        conf.write_text("learning_rate = 0.1\n")
        assert main(["train", "--data", str(dataset), "--config", str(conf), "--out", str(tmp_path / "o")]) == 3


class TestExperimentAndStats:
    def test_ablation(self, dataset, tmp_path):
        assert main(["experiment", "--kind", "ablation", "--data", str(dataset), "--out", str(tmp_path), *FAST]) == 0
        assert len((tmp_path / "report.csv").read_text().splitlines()) == 6
        assert manifest(tmp_path)["config"]["kind"] == "ablation"

    def test_noise(self, dataset, tmp_path):
        assert main(["experiment", "--kind", "noise", "--data", str(dataset), "--out", str(tmp_path), *FAST]) == 0
        rows = (tmp_path / "report.csv").read_text().splitlines()[1:]
        assert [r.split(",")[2] for r in rows] == ["0.01", "0.05", "0.1", "0.2"]

    def test_region(self, dataset, tmp_path):
        assert main(["experiment", "--kind", "region", "--data", str(dataset), "--out", str(tmp_path), *FAST]) == 0
        rows = [r.split(",") for r in (tmp_path / "report.csv").read_text().splitlines()[1:]]
        assert [r[2] for r in rows if r[1] == "sddgat"] == ["region=0", "region=1", "region=2", "mean"]

    def test_unknown_kind(self, dataset, tmp_path):
        with pytest.raises(SystemExit) as info:
            main(["experiment", "--kind", "bootstrap", "--data", str(dataset), "--out", str(tmp_path)])
        assert info.value.code == 2

    def test_graph_stats(self, dataset, tmp_path):
        assert main(["graph-stats", "--data", str(dataset), "--export-edges", "--out", str(tmp_path)]) == 0
        stats = json.loads((tmp_path / "graph_stats.json").read_text())
        assert stats["n_nodes"] == 120 and stats["spatial_degree_mean"] == pytest.approx(8.0, abs=0.05)
        assert (tmp_path / "edges.csv").read_text().startswith("graph,src,dst")


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "sddgat.cli", "gen-data", "--n", "20", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert (tmp_path / "manifest.json").exists()
