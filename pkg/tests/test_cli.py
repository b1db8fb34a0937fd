import json
import subprocess
import sys

import pytest

from wbclassify.bench import ExperimentConfig
from wbclassify.cli import main


@pytest.fixture
def config_file(tmp_path):
    cfg = ExperimentConfig(n_samples=1024, n_trials=10, train_trials=8, test_trials=2, compression_ratios=(0.5, 1.0),
                           snrs_db=(0.0, 9.0), solver_max_iter=1000, smooth_bins=9)
    path = tmp_path / "cfg.json"
    path.write_text(cfg.to_json())
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestPipeline:
    def test_stage_chain(self, tmp_path, config_file, capsys):
        d = tmp_path / "run"
        common = ("--config", config_file, "--out-dir", d, "--seed", 3)
        code, out, _ = run(capsys, "synth", *common, "--snr", 20)
        assert code == 0 and json.loads(out)["n_emitters"] == 4
        code, out, _ = run(capsys, "recover", *common, "--ratio", 0.75, "--solver", "omp")
        assert code == 0 and json.loads(out)["solver"] == "OMP" and json.loads(out)["measurements"] == 768
        code, out, _ = run(capsys, "features", *common)
        assert code == 0 and (d / "features.csv").exists()
        assert json.loads(out)["rows"] >= 1

        code, out, _ = run(capsys, "train", *common, "--classifier", "nbc")
        assert code == 0 and json.loads(out)["classifier"] == "nbc"
        assert json.loads((d / "model.json").read_text())["format"] == "wbclassify.nbc"
        code, out, _ = run(capsys, "eval", *common, "--features", d / "features.csv")
        assert code == 0
        assert set(json.loads(out)["rates"]) == {"BASK", "BPSK", "QPSK", "QAM32"}

    def test_train_from_csv(self, tmp_path, config_file, capsys):
        d = tmp_path / "run"
        common = ("--config", config_file, "--out-dir", d)
        paths = []
        for seed in range(3):
            run(capsys, "synth", *common, "--seed", seed, "--snr", 30)
            run(capsys, "recover", *common, "--seed", seed, "--ratio", 1.0)
            run(capsys, "features", *common, "--seed", seed)
            p = tmp_path / f"f{seed}.csv"
            p.write_bytes((d / "features.csv").read_bytes())
            paths.append(p)
        args = [x for p in paths for x in ("--features", p)]
        code, out, _ = run(capsys, "train", *common, "--classifier", "rf", *args)
        assert code == 0 and json.loads(out)["training_rows"] >= 6

    def test_synth_is_deterministic(self, tmp_path, config_file, capsys):
        for name in ("a", "b"):
            run(capsys, "synth", "--config", config_file, "--out-dir", tmp_path / name, "--seed", 9)
        assert (tmp_path / "a/received.iq").read_bytes() == (tmp_path / "b/received.iq").read_bytes()
        assert (tmp_path / "a/scene.json").read_text() == (tmp_path / "b/scene.json").read_text()

    @pytest.mark.parametrize("cmd", ["sweep-compression", "sweep-snr"])
    def test_sweeps(self, tmp_path, config_file, capsys, cmd):
        code, out, _ = run(capsys, cmd, "--config", config_file, "--out-dir", tmp_path, "--classifier", "nbc")
        assert code == 0 and json.loads(out)["points"] == 2
        axis = "compression_ratio" if cmd == "sweep-compression" else "snr_db"
        assert (tmp_path / f"{axis}_rates.csv").exists() and (tmp_path / f"{axis}_report.json").exists()


class TestErrors:
    def error(self, err):
        doc = json.loads(err)
        assert set(doc) == {"error", "message", "command"}
        return doc

    def test_unknown_subcommand(self, capsys):
        code, _, err = run(capsys, "frobnicate")
        assert code == 2 and self.error(err)["error"] == "usage"

    def test_bad_solver_choice(self, capsys, tmp_path):
        code, _, err = run(capsys, "recover", "--solver", "cvx", "--out-dir", tmp_path)
        assert code == 2 and self.error(err)["error"] == "usage"

    def test_missing_input(self, capsys, tmp_path):
        code, _, err = run(capsys, "recover", "--out-dir", tmp_path)
        doc = self.error(err)
        assert code == 1 and doc["error"] == "missing-input" and doc["command"] == "recover"

    def test_missing_config(self, capsys, tmp_path):
        code, _, err = run(capsys, "synth", "--config", tmp_path / "nope.json", "--out-dir", tmp_path)
        assert code == 1 and self.error(err)["error"] == "io"

    def test_malformed_config(self, capsys, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        code, _, err = run(capsys, "synth", "--config", p, "--out-dir", tmp_path)
        assert code == 1 and self.error(err)["error"] == "config"

    def test_invalid_config_values(self, capsys, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"n_trials": 10, "train_trials": 3, "test_trials": 3}))
        code, _, err = run(capsys, "sweep-snr", "--config", p, "--out-dir", tmp_path)
        assert code == 1 and self.error(err)["error"] == "invalid"

    def test_ratio_out_of_range(self, capsys, tmp_path, config_file):
        run(capsys, "synth", "--config", config_file, "--out-dir", tmp_path)
        code, _, err = run(capsys, "recover", "--config", config_file, "--out-dir", tmp_path, "--ratio", 0.2)
        assert code == 1 and self.error(err)["error"] == "config"

    def test_bad_jobs(self, capsys, tmp_path):
        code, _, err = run(capsys, "sweep-snr", "--jobs", 0, "--out-dir", tmp_path)
        assert code == 2 and self.error(err)["error"] == "usage"

    def test_console_script_exit_code(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "wbclassify.cli", "eval", "--out-dir", str(tmp_path)],
                              capture_output=True, text=True)
        assert proc.returncode == 1
        assert json.loads(proc.stderr)["error"] == "missing-input"
