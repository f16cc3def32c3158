import json
from pathlib import Path

import pytest

from tranadapt.cli import main
from tranadapt.config import ConfigError, ExperimentConfig, OUTPUT_ENV, load_config
from tranadapt.evaluation import EvalReport


@pytest.fixture
def out_env(tmp_path, monkeypatch):
    out = tmp_path / "runs"
    monkeypatch.setenv(OUTPUT_ENV, str(out))
    return out


def write_config(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


class TestConfig:
    def test_defaults(self):
        cfg = load_config(None)
        assert cfg.train.alpha_s == 10.0 and cfg.train.alpha_t == 3.0
        assert cfg.train_config().lr_initial == pytest.approx(2e-4)

    def test_toml_round_trip(self, tmp_path):
        path = write_config(
            tmp_path,
            """
[train]
epochs = 4
lr_constant_epochs = 2
lr_decay_epochs = 2
alpha_t = 1.5

[dataset.synth]
n_per_class = 3
n_classes = 2
image_size = 32
""",
        )
        cfg = load_config(path)
        assert cfg.train.epochs == 4
        assert cfg.train.alpha_t == 1.5
        assert cfg.dataset.synth.n_per_class == 3
        tc = cfg.train_config(seed=5)
        assert tc.seed == 5 and tc.weights.alpha_t == 1.5

    def test_json_config(self, tmp_path):
        path = write_config(tmp_path, json.dumps({"io": {"seed": 9}}), name="cfg.json")
        assert load_config(path).io.seed == 9

    def test_unknown_key_rejected(self, tmp_path):
        path = write_config(tmp_path, "[train]\nlearning_rate = 0.1\n")
        with pytest.raises(ConfigError, match="learning_rate"):
            load_config(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = write_config(tmp_path, "[optimizer]\nname = 'adam'\n")
        with pytest.raises(ConfigError, match="optimizer"):
            load_config(path)

    def test_bad_value_surfaces_section(self, tmp_path):
        path = write_config(tmp_path, "[dataset.synth]\nn_classes = 1\n")
        with pytest.raises(ConfigError, match="dataset.synth"):
            load_config(path)

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="not found"):
            load_config("nowhere.toml")

    def test_unsupported_format(self, tmp_path):
        path = write_config(tmp_path, "epochs: 3", name="cfg.yaml")
        with pytest.raises(ConfigError, match="yaml"):
            load_config(path)

    def test_output_env_override(self, monkeypatch):
        monkeypatch.setenv(OUTPUT_ENV, "/tmp/elsewhere")
        assert ExperimentConfig().output_dir() == Path("/tmp/elsewhere")

    def test_echo_writes_resolved_config(self, tmp_path):
        cfg = ExperimentConfig()
        cfg.echo(tmp_path)
        data = json.loads((tmp_path / "config.json").read_text())
        assert data["train"]["alpha_s"] == 10.0


SMALL_SYNTH = """
[dataset.synth]
n_per_class = 2
n_classes = 2
image_size = 32
shift_strength = 0.5
seed = 3

[model]
num_classes = 2
width_multiplier = 0.25

[train]
batch_size = 4
epochs = 1
lr_constant_epochs = 1
lr_decay_epochs = 0
"""


@pytest.fixture
def synth_setup(tmp_path, out_env):
    cfg_path = write_config(tmp_path, SMALL_SYNTH)
    data_dir = tmp_path / "data"
    rc = main(["synth-data", "--config", cfg_path, "--output", str(data_dir)])
    assert rc == 0
    return cfg_path, str(data_dir / "manifest.jsonl")


class TestExitCodes:
    def test_unknown_flag_is_validation_error(self, capsys):
        assert main(["synth-data", "--frobnicate"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_unknown_command(self, capsys):
        assert main(["explode"]) == 1

    def test_missing_required_argument(self):
        assert main(["report"]) == 1

    def test_bad_config_path(self, out_env):
        assert main(["synth-data", "--config", "missing.toml"]) == 1

    def test_runtime_failure_is_two(self, synth_setup, tmp_path, out_env):
        cfg_path, manifest = synth_setup
        # corrupt a depth file so hha-encode fails mid-run
        data_dir = Path(manifest).parent
        victim = next(data_dir.rglob("*_depth.png"))
        victim.write_bytes(b"not a png")
        rc = main(["hha-encode", "--config", cfg_path, "--manifest", manifest])
        assert rc == 1  # unreadable file is a validation-style CliError

    def test_unexpected_failure_is_two(self, synth_setup, out_env):
        cfg_path, manifest = synth_setup
        rc = main(["eval", "--config", cfg_path, "--checkpoint", "/nonexistent/ckpt",
                   "--manifest", manifest, "--pair", "A2B", "--run-name", "x"])
        assert rc == 2  # missing checkpoint surfaces as a runtime failure

    def test_empty_pair_is_validation_error(self, synth_setup, out_env):
        cfg_path, manifest = synth_setup
        rc = main(["train", "--config", cfg_path, "--manifest", manifest, "--pair", "K2X",
                   "--run-name", "r"])
        assert rc == 1


class TestWorkflow:
    def test_synth_then_train_then_report(self, synth_setup, out_env, capsys):
        cfg_path, manifest = synth_setup
        rc = main([
            "train", "--config", cfg_path, "--manifest", manifest,
            "--pair", "A2B", "--run-name", "t0",
        ])
        assert rc == 0
        run = out_env / "train" / "t0"
        assert (run / "checkpoint" / "metadata.json").exists()
        assert (run / "config.json").exists()
        report = EvalReport.load(run / "eval_report.json")
        assert report.pair == "A2B" and report.variant == "tran_adapt"

        rc = main(["report", "--config", cfg_path, "--inputs", str(out_env / "train"),
                   "--run-name", "agg"])
        assert rc == 0
        table = (out_env / "report" / "agg" / "table.txt").read_text()
        assert "tran_adapt" in table and "A2B" in table
        assert (out_env / "report" / "agg" / "table.csv").exists()

    def test_train_baseline_variant(self, synth_setup, out_env):
        cfg_path, manifest = synth_setup
        rc = main([
            "train", "--config", cfg_path, "--manifest", manifest,
            "--pair", "A2B", "--variant", "fusion_pp", "--run-name", "b0",
        ])
        assert rc == 0
        report = EvalReport.load(out_env / "train" / "b0" / "eval_report.json")
        assert report.variant == "fusion_pp"

    def test_eval_command(self, synth_setup, out_env):
        cfg_path, manifest = synth_setup
        assert main(["train", "--config", cfg_path, "--manifest", manifest,
                     "--pair", "A2B", "--run-name", "t1"]) == 0
        ckpt = out_env / "train" / "t1" / "checkpoint"
        rc = main(["eval", "--config", cfg_path, "--checkpoint", str(ckpt),
                   "--manifest", manifest, "--pair", "A2B", "--run-name", "e1"])
        assert rc == 0
        report = EvalReport.load(out_env / "eval" / "e1" / "eval_report.json")
        assert 0.0 <= report.overall_accuracy <= 100.0

    def test_saliency_command(self, synth_setup, out_env):
        cfg_path, manifest = synth_setup
        assert main(["train", "--config", cfg_path, "--manifest", manifest,
                     "--pair", "A2B", "--run-name", "t2"]) == 0
        ckpt = out_env / "train" / "t2" / "checkpoint"
        rc = main(["saliency", "--config", cfg_path, "--checkpoint", str(ckpt),
                   "--manifest", manifest, "--index", "0", "--run-name", "s1"])
        assert rc == 0
        pngs = list((out_env / "saliency" / "s1").glob("saliency_*.png"))
        assert len(pngs) == 2

    def test_shift_probe_command(self, synth_setup, out_env):
        cfg_path, manifest = synth_setup
        rc = main(["shift-probe", "--config", cfg_path, "--manifest", manifest,
                   "--source-camera", "synthetic_a", "--target-camera", "synthetic_b",
                   "--modality", "rgb", "--run-name", "p1"])
        assert rc == 0
        data = json.loads((out_env / "shift-probe" / "p1" / "shift_report.json").read_text())
        assert set(data) == {"rgb"}
        assert "drop" in data["rgb"]

    def test_hha_encode_reference_backend(self, synth_setup, out_env):
        cfg_path, manifest = synth_setup
        rc = main(["hha-encode", "--config", cfg_path, "--manifest", manifest,
                   "--backend", "reference"])
        assert rc == 0
