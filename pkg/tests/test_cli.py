import json

import jsonschema
import numpy as np
import pytest

from vaecast.cli import ABLATION_HEADER, ConfigError, main, parse_config
from vaecast.data import load_csv
from vaecast.metrics import REPORT_SCHEMA
from vaecast.training import load_checkpoint

TINY_CONFIG = """
# synthetic smoke-test experiment
dataset = mackey-glass
dataset.length = 600
model.backbone = rnn
model.history_size = 16
model.horizon = 8
model.sample_size = 2
train.max_steps = 40
train.patience_steps = 40
train.batch_size = 8
train.eval_every = 20
train.val_num_samples = 20
train.seed = 3
train.runs = 2
eval.num_samples = 50
eval.num_windows = 5
eval.seed = 11
"""


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(TINY_CONFIG)
    return path


def strip_timing(log_text: str) -> str:
    lines = log_text.strip().split("\n")
    return "\n".join(",".join(line.split(",")[:-1]) for line in lines)


class TestConfigParsing:
    def test_happy_path(self, tiny_config):
        cfg = parse_config(tiny_config)
        assert cfg.dataset == "mackey-glass"
        assert cfg.history_size == 16
        assert cfg.runs == 2

    def test_missing_dataset_names_field(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("model.backbone = rnn\nmodel.history_size = 16\n"
                        "model.horizon = 8\n")
        with pytest.raises(ConfigError, match="dataset"):
            parse_config(path)

    def test_all_problems_enumerated(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("model.backbone = gru\nmodel.history_size = -1\n"
                        "bogus.key = 1\ntrain.max_steps = what\n")
        with pytest.raises(ConfigError) as err:
            parse_config(path)
        text = str(err.value)
        for fragment in ("backbone", "history_size", "bogus.key", "max_steps",
                         "dataset"):
            assert fragment in text

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "absent.cfg")


class TestGenerate:
    def test_round_trip(self, tmp_path):
        out = tmp_path / "mg.csv"
        assert main(["generate", "--length", "500", "--out", str(out)]) == 0
        series = load_csv(out)
        assert len(series) == 500
        # regenerating yields identical values
        out2 = tmp_path / "mg2.csv"
        main(["generate", "--length", "500", "--out", str(out2)])
        assert out.read_bytes() == out2.read_bytes()

    def test_benchmark_length(self, tmp_path):
        out = tmp_path / "mg.csv"
        assert main(["generate", "--length", "20000", "--out", str(out)]) == 0
        assert len(load_csv(out)) == 20000

    def test_zero_length_usage_error(self, tmp_path):
        assert main(["generate", "--length", "0",
                     "--out", str(tmp_path / "x.csv")]) == 1

    def test_unknown_kind(self, tmp_path):
        assert main(["generate", "--kind", "lorenz", "--length", "10",
                     "--out", str(tmp_path / "x.csv")]) == 1


class TestTrain:
    def test_emits_one_checkpoint_and_log_per_run(self, tmp_path, tiny_config):
        code = main(["train", "--config", str(tiny_config),
                     "--out-checkpoint", str(tmp_path / "model.ckpt"),
                     "--out-log", str(tmp_path / "train.csv")])
        assert code == 0
        for run in range(2):
            ckpt = load_checkpoint(tmp_path / f"model_run{run}.ckpt")
            assert ckpt.history_size == 16
            assert (tmp_path / f"train_run{run}.csv").exists()

    def test_rerun_reproduces_outputs(self, tmp_path, tiny_config):
        for tag in ("a", "b"):
            main(["train", "--config", str(tiny_config),
                  "--out-checkpoint", str(tmp_path / f"{tag}.ckpt"),
                  "--out-log", str(tmp_path / f"{tag}.csv")])
        for run in range(2):
            assert (tmp_path / f"a_run{run}.ckpt").read_bytes() == \
                (tmp_path / f"b_run{run}.ckpt").read_bytes()
            # deterministic apart from the wall-clock timing column
            assert strip_timing((tmp_path / f"a_run{run}.csv").read_text()) == \
                strip_timing((tmp_path / f"b_run{run}.csv").read_text())

    def test_missing_config_is_usage_error(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "absent.cfg"),
                     "--out-checkpoint", str(tmp_path / "m.ckpt"),
                     "--out-log", str(tmp_path / "l.csv")]) == 1

    def test_missing_dataset_file_is_runtime_error(self, tmp_path, tiny_config):
        text = tiny_config.read_text().replace("mackey-glass",
                                               str(tmp_path / "absent.csv"))
        cfg = tmp_path / "exp2.cfg"
        cfg.write_text(text)
        assert main(["train", "--config", str(cfg),
                     "--out-checkpoint", str(tmp_path / "m.ckpt"),
                     "--out-log", str(tmp_path / "l.csv")]) == 2


class TestEvaluate:
    @pytest.fixture()
    def trained(self, tmp_path, tiny_config):
        main(["train", "--config", str(tiny_config),
              "--out-checkpoint", str(tmp_path / "model.ckpt"),
              "--out-log", str(tmp_path / "train.csv")])
        return tiny_config, tmp_path

    def test_report_schema_and_cv(self, trained):
        tiny_config, tmp_path = trained
        out = tmp_path / "report.json"
        ckpt = str(tmp_path / "model_run0.ckpt")
        # the same checkpoint three times: identical runs, CV exactly 0
        code = main(["evaluate", "--config", str(tiny_config),
                     "--checkpoint", ckpt, "--checkpoint", ckpt,
                     "--checkpoint", ckpt, "--out", str(out)])
        assert code == 0
        payload = json.loads(out.read_text())
        jsonschema.validate(payload, REPORT_SCHEMA)
        assert payload["cv_percent"] == pytest.approx(0.0, abs=1e-12)
        assert len(payload["runs"]) == 3

    def test_two_distinct_runs(self, trained):
        tiny_config, tmp_path = trained
        out = tmp_path / "report2.json"
        code = main(["evaluate", "--config", str(tiny_config),
                     "--checkpoint", str(tmp_path / "model_run0.ckpt"),
                     "--checkpoint", str(tmp_path / "model_run1.ckpt"),
                     "--out", str(out), "--reference", "0.01"])
        assert code == 0
        payload = json.loads(out.read_text())
        jsonschema.validate(payload, REPORT_SCHEMA)
        assert payload["mean_crps"] > 0.0
        assert payload["delta_percent"] == pytest.approx(
            (payload["mean_crps"] - 0.01) / 0.01 * 100.0)

    def test_history_size_mismatch(self, trained, tmp_path):
        tiny_config, workdir = trained
        bad = tmp_path / "bad.cfg"
        bad.write_text(tiny_config.read_text().replace("history_size = 16",
                                                       "history_size = 24"))
        code = main(["evaluate", "--config", str(bad),
                     "--checkpoint", str(workdir / "model_run0.ckpt"),
                     "--out", str(workdir / "r.json")])
        assert code == 2


class TestRank:
    def _write_report(self, path, model, dataset, scores):
        payload = {"dataset": dataset, "model": model,
                   "runs": [{"mean_crps": s, "per_window": [s]} for s in scores],
                   "mean_crps": float(np.mean(scores)), "cv_percent": 0.0,
                   "per_window": [float(np.mean(scores))]}
        path.write_text(json.dumps(payload))

    def test_single_model_trivial(self, tmp_path):
        reports = tmp_path / "reports"
        reports.mkdir()
        self._write_report(reports / "m_d1.json", "only", "d1", [1.0, 1.1])
        out = tmp_path / "rank.json"
        assert main(["rank", "--reports", str(reports), "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert payload["models"] == ["only"]
        assert "warning" in payload

    def test_two_cluster_reports_give_two_bands(self, tmp_path):
        rng = np.random.default_rng(0)
        reports = tmp_path / "reports"
        reports.mkdir()
        models = ["a1", "a2", "a3", "b1", "b2", "b3"]
        for model in models:
            base = 1.0 if model.startswith("a") else 2.0
            for j in range(12):
                level = base + rng.uniform(-0.1, 0.1)
                runs = (level + rng.normal(scale=1e-3, size=3)).tolist()
                self._write_report(reports / f"{model}_d{j}.json", model,
                                   f"d{j:02d}", runs)
        out = tmp_path / "rank.json"
        assert main(["rank", "--reports", str(reports), "--out", str(out)]) == 0
        payload = json.loads(out.read_text())
        assert payload["friedman"]["rejected"] is True
        assert len(payload["bands"]) == 2
        assert sorted(payload["bands"][0]) == ["a1", "a2", "a3"]
        assert sorted(payload["bands"][1]) == ["b1", "b2", "b3"]
        # deterministic output
        out2 = tmp_path / "rank2.json"
        main(["rank", "--reports", str(reports), "--out", str(out2)])
        assert out.read_text() == out2.read_text()

    def test_ragged_matrix_rejected(self, tmp_path):
        reports = tmp_path / "reports"
        reports.mkdir()
        self._write_report(reports / "a_d1.json", "a", "d1", [1.0, 1.1])
        self._write_report(reports / "a_d2.json", "a", "d2", [1.0, 1.1])
        self._write_report(reports / "b_d1.json", "b", "d1", [2.0, 2.1])
        out = tmp_path / "rank.json"
        assert main(["rank", "--reports", str(reports), "--out", str(out)]) == 2

    def test_empty_directory(self, tmp_path):
        reports = tmp_path / "reports"
        reports.mkdir()
        assert main(["rank", "--reports", str(reports),
                     "--out", str(tmp_path / "r.json")]) == 2


class TestAblate:
    def test_csv_contract(self, tmp_path, tiny_config):
        out = tmp_path / "ablation.csv"
        code = main(["ablate", "--config", str(tiny_config), "--out", str(out),
                     "--values", "1,2"])
        assert code == 0
        lines = out.read_text().strip().split("\n")
        assert lines[0] == ABLATION_HEADER == "sample_size,mean_crps,cv_percent,ms_per_step"
        assert len(lines) == 3
        rows = [line.split(",") for line in lines[1:]]
        assert [r[0] for r in rows] == ["1", "2"]
        for row in rows:
            assert float(row[1]) > 0.0
            assert float(row[3]) > 0.0

    def test_bad_values_usage_error(self, tmp_path, tiny_config):
        assert main(["ablate", "--config", str(tiny_config),
                     "--out", str(tmp_path / "a.csv"), "--values", "2,zero"]) == 1


class TestUsage:
    def test_no_command(self):
        assert main([]) == 1

    def test_unknown_command(self):
        assert main(["frobnicate"]) == 1
