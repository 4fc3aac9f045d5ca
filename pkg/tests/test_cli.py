"""Command-line surface: flags, file contracts, exit codes, determinism,
config resolution."""

import csv
import subprocess
import sys
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from flarecast import FlareClass
from flarecast.cli import main
from flarecast.pipeline import read_labels, write_labels

from oracles import REFERENCE_CONFUSION, pairs_from_matrix

UTC = timezone.utc


def run_cli(*args):
    return main([str(a) for a in args])


def read_metric_csv(path):
    out = {}
    for line in path.read_text().strip().splitlines()[1:]:
        key, _, value = line.partition(",")
        out[key] = value
    return out


class TestGenData:
    def test_deterministic_across_directories(self, tmp_path):
        for d in ("one", "two"):
            assert run_cli("gen-data", "--n", 200, "--seed", 7, "--out-dir", tmp_path / d) == 0
        for name in ("samples.csv", "events.csv"):
            assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()

    def test_label_frequencies_near_targets(self, tmp_path):
        assert run_cli(
            "gen-data", "--n", 1000, "--seed", 3,
            "--class-probs", "0.38,0.35,0.23,0.04", "--out-dir", tmp_path,
        ) == 0
        assert run_cli(
            "label", "--events", tmp_path / "events.csv",
            "--samples", tmp_path / "samples.csv", "--out", tmp_path / "labels.csv",
        ) == 0
        labels = read_labels(tmp_path / "labels.csv")
        freq = np.bincount([int(c) for _, c in labels], minlength=4) / len(labels)
        assert np.all(np.abs(freq - [0.38, 0.35, 0.23, 0.04]) <= 0.05)

    def test_zero_n_is_usage_error(self, tmp_path, capsys):
        assert run_cli("gen-data", "--n", 0, "--out-dir", tmp_path) == 1
        assert "usage error" in capsys.readouterr().err

    def test_bad_class_probs_is_usage_error(self, tmp_path):
        assert run_cli("gen-data", "--n", 10, "--class-probs", "0.5,0.5", "--out-dir", tmp_path) == 1

    def test_config_echo_written(self, tmp_path):
        run_cli("gen-data", "--n", 10, "--seed", 5, "--out-dir", tmp_path)
        echo = (tmp_path / "config.txt").read_text()
        assert "seed=5" in echo and "n=10" in echo


class TestLabel:
    def test_empty_events_give_all_quiet(self, tmp_path):
        run_cli("gen-data", "--n", 20, "--out-dir", tmp_path)
        (tmp_path / "none.csv").write_text("peak_time,class\n")
        run_cli(
            "label", "--events", tmp_path / "none.csv",
            "--samples", tmp_path / "samples.csv", "--out", tmp_path / "labels.csv",
        )
        assert all(c is FlareClass.O for _, c in read_labels(tmp_path / "labels.csv"))

    def test_single_event_inside_window(self, tmp_path):
        run_cli("gen-data", "--n", 3, "--seed", 1, "--out-dir", tmp_path)
        samples = (tmp_path / "samples.csv").read_text().splitlines()
        first_ts = samples[1].split(",")[1]
        t0 = datetime.fromisoformat(first_ts.replace("Z", "+00:00"))
        # a single X-class peak 63 hours after the first sample
        peak = (t0 + timedelta(hours=63)).strftime("%Y-%m-%dT%H:%M:%SZ")
        (tmp_path / "one.csv").write_text(f"peak_time,class\n{peak},X\n")
        run_cli(
            "label", "--events", tmp_path / "one.csv",
            "--samples", tmp_path / "samples.csv", "--out", tmp_path / "labels.csv",
        )
        labels = dict(read_labels(tmp_path / "labels.csv"))
        first_id = samples[1].split(",")[0]
        assert labels[first_id] is FlareClass.X

    def test_malformed_row_exits_2_naming_line(self, tmp_path, capsys):
        (tmp_path / "events.csv").write_text("peak_time,class\n2020-01-01T00:00:00Z,Q\n")
        run_cli("gen-data", "--n", 3, "--out-dir", tmp_path / "d")
        code = run_cli(
            "label", "--events", tmp_path / "events.csv",
            "--samples", tmp_path / "d" / "samples.csv", "--out", tmp_path / "labels.csv",
        )
        assert code == 2
        assert "events.csv:2" in capsys.readouterr().err


class TestEval:
    def write_pairs(self, tmp_path, pairs):
        ids = [f"s{i}" for i in range(len(pairs))]
        write_labels(tmp_path / "labels.csv", ids, [obs for obs, _ in pairs])
        write_labels(tmp_path / "preds.csv", ids, [pred for _, pred in pairs])

    def test_perfect_predictions(self, tmp_path, capsys):
        pairs = [(c, c) for c in FlareClass] * 5
        self.write_pairs(tmp_path, pairs)
        code = run_cli(
            "eval", "--preds", tmp_path / "preds.csv", "--labels", tmp_path / "labels.csv",
            "--out-dir", tmp_path / "out",
        )
        assert code == 0
        metrics = read_metric_csv(tmp_path / "out" / "report.csv")
        assert float(metrics["gmgs"]) == pytest.approx(1.0, abs=1e-12)
        assert float(metrics["tss_ge_m"]) == pytest.approx(1.0)
        assert metrics["bss_ge_m"] == "n/a"

    def test_constant_quiet_forecast_scores_zero(self, tmp_path):
        pairs = [(c, FlareClass.O) for c in FlareClass] * 3
        self.write_pairs(tmp_path, pairs)
        run_cli(
            "eval", "--preds", tmp_path / "preds.csv", "--labels", tmp_path / "labels.csv",
            "--out-dir", tmp_path / "out",
        )
        metrics = read_metric_csv(tmp_path / "out" / "report.csv")
        assert abs(float(metrics["gmgs"])) <= 1e-10
        assert float(metrics["tss_ge_m"]) == 0.0

    def test_reference_matrix_influence_ordering(self, tmp_path, capsys):
        self.write_pairs(tmp_path, pairs_from_matrix(REFERENCE_CONFUSION))
        # row-sum climatology: rare-class confusions carry the largest penalty
        run_cli(
            "eval", "--preds", tmp_path / "preds.csv", "--labels", tmp_path / "labels.csv",
            "--out-dir", tmp_path / "rows",
        )
        text = (tmp_path / "rows" / "report.txt").read_text()
        top_row = text.split("top influence", 1)[1].strip().splitlines()[1]
        assert top_row.strip().startswith("X -> C")
        # with the corpus-wide climatology the C->O confusion dominates
        run_cli(
            "eval", "--preds", tmp_path / "preds.csv", "--labels", tmp_path / "labels.csv",
            "--climatology", "0.37937154,0.34675854,0.22937676,0.04449316",
            "--out-dir", tmp_path / "corpus",
        )
        text = (tmp_path / "corpus" / "report.txt").read_text()
        lines = text.split("top influence", 1)[1].strip().splitlines()[1:3]
        assert lines[0].strip().startswith("C -> O")
        assert lines[1].strip().startswith("O -> C")

    def test_probabilistic_predictions_report_bss(self, tmp_path):
        ids = ["a", "b", "c", "d"]
        labels = [FlareClass.X, FlareClass.O, FlareClass.M, FlareClass.C]
        write_labels(tmp_path / "labels.csv", ids, labels)
        rows = ["id,p_o,p_c,p_m,p_x"]
        probs = [
            (0.05, 0.05, 0.2, 0.7),
            (0.7, 0.2, 0.05, 0.05),
            (0.1, 0.2, 0.5, 0.2),
            (0.3, 0.5, 0.1, 0.1),
        ]
        for sid, p in zip(ids, probs):
            rows.append(f"{sid},{p[0]},{p[1]},{p[2]},{p[3]}")
        (tmp_path / "preds.csv").write_text("\n".join(rows) + "\n")
        code = run_cli(
            "eval", "--preds", tmp_path / "preds.csv", "--labels", tmp_path / "labels.csv",
            "--out-dir", tmp_path / "out",
        )
        assert code == 0
        metrics = read_metric_csv(tmp_path / "out" / "report.csv")
        assert metrics["bss_ge_m"] != "n/a"
        assert float(metrics["bss_ge_m"]) > 0.0
        assert metrics["hm"] != "n/a"

    def test_id_mismatch_exits_2_listing_id(self, tmp_path, capsys):
        write_labels(tmp_path / "labels.csv", ["a", "b"], [FlareClass.O, FlareClass.C])
        write_labels(tmp_path / "preds.csv", ["a"], [FlareClass.O])
        code = run_cli(
            "eval", "--preds", tmp_path / "preds.csv", "--labels", tmp_path / "labels.csv",
            "--out-dir", tmp_path / "out",
        )
        assert code == 2
        assert "'b'" in capsys.readouterr().err


def make_training_data(tmp_path, n=240, seed=2):
    run_cli(
        "gen-data", "--n", n, "--seed", seed, "--feature-dim", 4,
        "--class-probs", "0.4,0.3,0.2,0.1", "--out-dir", tmp_path,
    )
    run_cli(
        "label", "--events", tmp_path / "events.csv",
        "--samples", tmp_path / "samples.csv", "--out", tmp_path / "labels.csv",
    )


BASE_CONFIG = """
# desk-scale run
epochs=3
warmup_epochs=1
learning_rate=0.01
batch_size=32
hidden_sizes=8,8
fold_count=1
seed=4
"""


class TestTrain:
    def test_full_warmup_zeros_influence_columns(self, tmp_path):
        make_training_data(tmp_path)
        cfg = tmp_path / "run.cfg"
        cfg.write_text(BASE_CONFIG + "warmup_epochs=3\n")
        code = run_cli(
            "train", "--config", cfg, "--data-dir", tmp_path, "--out-dir", tmp_path / "out",
        )
        assert code == 0
        with open(tmp_path / "out" / "history.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3
        assert all(float(r["ib_ce"]) == 0.0 and float(r["ib_bss"]) == 0.0 for r in rows)

    def test_identical_runs_identical_history(self, tmp_path):
        make_training_data(tmp_path)
        cfg = tmp_path / "run.cfg"
        cfg.write_text(BASE_CONFIG)
        for d in ("o1", "o2"):
            assert run_cli("train", "--config", cfg, "--data-dir", tmp_path, "--out-dir", tmp_path / d) == 0
        assert (tmp_path / "o1" / "history.csv").read_bytes() == (tmp_path / "o2" / "history.csv").read_bytes()
        assert (tmp_path / "o1" / "checkpoint.txt").read_bytes() == (tmp_path / "o2" / "checkpoint.txt").read_bytes()

    def test_outputs_and_config_echo(self, tmp_path):
        make_training_data(tmp_path)
        cfg = tmp_path / "run.cfg"
        cfg.write_text(BASE_CONFIG)
        run_cli("train", "--config", cfg, "--data-dir", tmp_path, "--out-dir", tmp_path / "out")
        out = tmp_path / "out"
        for name in ("history.csv", "checkpoint.txt", "test_report.txt", "test_report.csv", "config.txt"):
            assert (out / name).exists()
        echo = (out / "config.txt").read_text()
        assert "epochs=3" in echo and "warmup_epochs=1" in echo and "fold=0" in echo

    def test_env_and_set_overrides(self, tmp_path, monkeypatch):
        make_training_data(tmp_path)
        cfg = tmp_path / "run.cfg"
        cfg.write_text(BASE_CONFIG)
        monkeypatch.setenv("FLARE_EPOCHS", "2")
        run_cli(
            "train", "--config", cfg, "--data-dir", tmp_path,
            "--out-dir", tmp_path / "out", "--set", "seed=9",
        )
        echo = (tmp_path / "out" / "config.txt").read_text()
        assert "epochs=2" in echo  # environment beat the file
        assert "seed=9" in echo    # --set beat the file
        with open(tmp_path / "out" / "history.csv") as fh:
            assert len(list(csv.DictReader(fh))) == 2

    def test_unknown_config_key_is_usage_error(self, tmp_path, capsys):
        make_training_data(tmp_path)
        cfg = tmp_path / "run.cfg"
        cfg.write_text(BASE_CONFIG + "learning_rte=0.1\n")
        assert run_cli("train", "--config", cfg, "--data-dir", tmp_path, "--out-dir", tmp_path / "o") == 1
        assert "learning_rte" in capsys.readouterr().err

    def test_missing_data_dir_exits_2(self, tmp_path):
        assert run_cli("train", "--data-dir", tmp_path / "nope", "--out-dir", tmp_path / "o") == 2

    def test_unwritable_out_dir_exits_2(self, tmp_path, capsys):
        blocker = tmp_path / "blocker"
        blocker.write_text("")  # a file where the output directory should go
        code = run_cli("gen-data", "--n", 5, "--out-dir", blocker / "sub")
        assert code == 2
        assert "data error" in capsys.readouterr().err

    def test_divergence_exits_3(self, tmp_path, monkeypatch, capsys):
        import flarecast.cli as cli

        make_training_data(tmp_path, n=60)
        cfg = tmp_path / "run.cfg"
        cfg.write_text(BASE_CONFIG)

        def explode(*args, **kwargs):
            raise RuntimeError("diverged: non-finite gradient")

        monkeypatch.setattr(cli, "train", explode)
        code = run_cli("train", "--config", cfg, "--data-dir", tmp_path, "--out-dir", tmp_path / "o")
        assert code == 3
        assert "numerical failure" in capsys.readouterr().err

    def test_paired_loss_configs_run_end_to_end(self, tmp_path):
        make_training_data(tmp_path, n=300, seed=6)
        flare_cfg = tmp_path / "flare.cfg"
        flare_cfg.write_text(BASE_CONFIG)
        ce_cfg = tmp_path / "ce.cfg"
        ce_cfg.write_text(BASE_CONFIG + "lambda_bss=0\nuse_class_weights=false\nwarmup_epochs=3\n")
        for cfg, out in ((flare_cfg, "flare"), (ce_cfg, "ce")):
            assert run_cli("train", "--config", cfg, "--data-dir", tmp_path, "--out-dir", tmp_path / out) == 0
        flare_metrics = read_metric_csv(tmp_path / "flare" / "test_report.csv")
        ce_metrics = read_metric_csv(tmp_path / "ce" / "test_report.csv")
        assert np.isfinite(float(flare_metrics["gmgs"])) and np.isfinite(float(ce_metrics["gmgs"]))


class TestGradcheck:
    def test_default_run_passes(self, capsys):
        assert run_cli("gradcheck", "--trials", 25, "--seed", 0) == 0
        out = capsys.readouterr().out
        assert out.count("PASS") == 3 and "FAIL" not in out

    def test_deterministic_report(self, capsys):
        run_cli("gradcheck", "--trials", 1, "--seed", 0)
        first = capsys.readouterr().out
        run_cli("gradcheck", "--trials", 1, "--seed", 0)
        assert capsys.readouterr().out == first

    def test_zero_trials_is_usage_error(self):
        assert run_cli("gradcheck", "--trials", 0) == 1

    def test_corrupted_gradient_detected(self, monkeypatch, capsys):
        import flarecast.cli as cli

        real = cli.bss_grad_w
        monkeypatch.setattr(cli, "bss_grad_w", lambda s, y: real(s, y) * 1.001)
        assert run_cli("gradcheck", "--trials", 3, "--seed", 1) == 3
        assert "FAIL" in capsys.readouterr().out


class TestEntryPoint:
    def test_module_invocation(self):
        proc = subprocess.run(
            [sys.executable, "-m", "flarecast.cli", "gradcheck", "--trials", "1"],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert "PASS" in proc.stdout

    def test_unknown_flag_is_usage_error(self):
        assert run_cli("gen-data", "--n", 5, "--wat", 3) == 1
