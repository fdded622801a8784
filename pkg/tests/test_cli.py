import filecmp
import json
import os

import numpy as np
import pytest
import yaml

from anodec import cli
from anodec.plant import PlantConfig

TINY_CONFIG = {
    "seed": 5,
    "plant": {"trial_time": 2.0},
    "train": {"model_steps": 40, "val_every": 20, "controller_steps": 8,
              "ref_batch": 4},
    "eval": {"counts": {"steps": 1, "double_steps": 0, "splines": 1}},
}


def write_config(tmp_path, overrides=None, name="run.yaml"):
    cfg = json.loads(json.dumps(TINY_CONFIG))
    for key, val in (overrides or {}).items():
        if isinstance(val, dict):
            cfg.setdefault(key, {}).update(val)
        else:
            cfg[key] = val
    path = tmp_path / name
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def run_cli(*argv):
    return cli.main(list(argv))


class TestConfigLoading:
    def parse(self, *argv):
        return cli.load_run_config(cli.build_parser().parse_args(list(argv)))

    def test_defaults(self):
        run = self.parse("pipeline")
        assert run.setup == 1
        assert run.seed == 0
        assert run.plant == PlantConfig()
        assert run.counts == {"steps": 2, "double_steps": 2, "splines": 12}

    def test_setup2_defaults(self):
        run = self.parse("pipeline", "--setup", "2")
        assert run.plant.gravity
        assert run.plant.trial_time == 8.0
        assert run.counts == {"steps": 2, "double_steps": 2, "splines": 4}

    def test_setup2_explicit_plant_wins(self, tmp_path):
        path = write_config(tmp_path, {"setup": 2,
                                       "plant": {"trial_time": 6.0}})
        run = self.parse("pipeline", "--config", path)
        assert run.plant.trial_time == 6.0
        assert run.plant.gravity

    def test_flag_overrides_config_seed(self, tmp_path):
        path = write_config(tmp_path)
        run = self.parse("pipeline", "--config", path, "--seed", "99")
        assert run.seed == 99

    def test_train_seed_key_is_ignored(self, tmp_path):
        path = write_config(tmp_path, {"train": {"seed": 12345}})
        run = self.parse("pipeline", "--config", path)
        assert run.train.seed == 5

    def test_ci_profile_flag(self):
        full = self.parse("pipeline")
        ci = self.parse("pipeline", "--ci-profile")
        assert ci.train.model_steps < full.train.model_steps
        assert ci.train.controller_steps < full.train.controller_steps


class TestConfigErrors:
    def test_unknown_top_level_key(self, tmp_path, capsys):
        path = write_config(tmp_path, {"simulator": {"x": 1}})
        assert run_cli("pipeline", "--config", path) == 2
        assert "unknown config keys" in capsys.readouterr().err

    def test_unknown_plant_key(self, tmp_path, capsys):
        path = write_config(tmp_path, {"plant": {"warp_drive": 1}})
        assert run_cli("pipeline", "--config", path) == 2
        assert "unknown plant keys" in capsys.readouterr().err

    def test_unknown_eval_count(self, tmp_path, capsys):
        path = write_config(tmp_path, {"eval": {"counts": {"ramps": 3}}})
        assert run_cli("pipeline", "--config", path) == 2

    def test_bad_setup_value(self, tmp_path, capsys):
        path = write_config(tmp_path, {"setup": 3})
        assert run_cli("pipeline", "--config", path) == 2
        assert "setup" in capsys.readouterr().err

    def test_non_mapping_config(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text("- 1\n- 2\n")
        assert run_cli("pipeline", "--config", str(path)) == 2

    def test_missing_config_file(self, tmp_path, capsys):
        assert run_cli("pipeline", "--config", str(tmp_path / "nope.yaml")) == 2

    def test_invalid_plant_value(self, tmp_path, capsys):
        path = write_config(tmp_path, {"plant": {"pressure_tau": -1.0}})
        assert run_cli("pipeline", "--config", path) == 2
        assert "bad plant config" in capsys.readouterr().err


class TestConfigHash:
    def test_stable(self):
        args = cli.build_parser().parse_args(["pipeline"])
        a = cli.config_hash(cli.load_run_config(args))
        b = cli.config_hash(cli.load_run_config(args))
        assert a == b and len(a) == 16

    def test_sensitive_to_seed(self):
        parse = cli.build_parser().parse_args
        a = cli.config_hash(cli.load_run_config(parse(["pipeline"])))
        b = cli.config_hash(cli.load_run_config(parse(["pipeline", "--seed", "1"])))
        assert a != b


class TestStageGating:
    def test_collect_is_write_once(self, tmp_path, capsys):
        path = write_config(tmp_path)
        out = str(tmp_path / "run")
        assert run_cli("collect", "--config", path, "--out", out) == 0
        assert run_cli("collect", "--config", path, "--out", out) == 1
        assert "write-once" in capsys.readouterr().err

    def test_config_mismatch_detected(self, tmp_path, capsys):
        path = write_config(tmp_path)
        out = str(tmp_path / "run")
        assert run_cli("collect", "--config", path, "--out", out) == 0
        assert run_cli("train-model", "--config", path, "--seed", "77",
                       "--out", out) == 2
        assert "different config" in capsys.readouterr().err

    def test_missing_upstream_stage(self, tmp_path, capsys):
        path = write_config(tmp_path)
        out = str(tmp_path / "empty")
        assert run_cli("train-model", "--config", path, "--out", out) == 1
        assert "run 'collect' first" in capsys.readouterr().err
        out2 = str(tmp_path / "empty2")
        assert run_cli("train-controller", "--config", path, "--out", out2) == 1
        assert run_cli("evaluate", "--config", path, "--out", str(tmp_path / "e3")) == 1


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipe")
    path = write_config(tmp)
    out = str(tmp / "run")
    code = cli.main(["pipeline", "--config", path, "--out", out])
    return code, out, path, tmp


class TestPipeline:
    def test_exit_code_and_artifacts(self, finished_run):
        code, out, _, _ = finished_run
        assert code == 0
        for rel in ("dataset/manifest.json", "dataset/trial_00.csv",
                    "dataset/trial_05.csv", "model/model.json",
                    "model/train_curve.csv", "model/val_curve.csv",
                    "model/report.json", "controller/controller.json",
                    "controller/train_curve.csv", "controller/report.json",
                    "eval/summary.csv", "eval/summary.json",
                    "eval/manifest.json"):
            assert os.path.exists(os.path.join(out, rel)), rel

    def test_manifests_share_config_hash(self, finished_run):
        _, out, _, _ = finished_run
        hashes = set()
        for stage in ("dataset", "model", "controller", "eval"):
            with open(os.path.join(out, stage, "manifest.json")) as fh:
                hashes.add(json.load(fh)["config_hash"])
        assert len(hashes) == 1

    def test_resume_skips_completed_stages(self, finished_run):
        code, out, path, _ = finished_run
        ckpt = os.path.join(out, "model", "model.json")
        before = os.path.getmtime(ckpt)
        assert cli.main(["pipeline", "--config", path, "--out", out]) == 0
        assert os.path.getmtime(ckpt) == before

    def test_curve_csvs_parse(self, finished_run):
        _, out, _, _ = finished_run
        arr = np.genfromtxt(os.path.join(out, "model", "train_curve.csv"),
                            delimiter=",", names=True)
        assert arr["loss"].shape == (40,)
        assert np.all(np.isfinite(arr["loss"]))
        ctrl = np.genfromtxt(os.path.join(out, "controller", "train_curve.csv"),
                             delimiter=",", names=True)
        assert np.allclose(ctrl["objective"],
                           ctrl["tracking"] + ctrl["regularizer"], atol=1e-12)

    def test_eval_summary_has_both_controllers(self, finished_run):
        _, out, _, _ = finished_run
        with open(os.path.join(out, "eval", "summary.json")) as fh:
            payload = json.load(fh)
        assert payload["controllers"] == ["anodec", "pid"]
        assert not payload["partial"]
        assert len(payload["trials"]) == 4  # 2 refs x 2 controllers

    def test_byte_identical_rerun(self, finished_run, tmp_path):
        _, out, path, _ = finished_run
        out2 = str(tmp_path / "run2")
        assert cli.main(["pipeline", "--config", path, "--out", out2]) == 0
        for rel in ("model/model.json", "controller/controller.json",
                    "eval/summary.csv", "dataset/trial_00.csv"):
            assert filecmp.cmp(os.path.join(out, rel),
                               os.path.join(out2, rel), shallow=False), rel


class TestDisturbanceFlag:
    def test_adds_disturbed_records(self, finished_run, tmp_path, capsys):
        _, _, path, _ = finished_run
        out = str(tmp_path / "dist")
        code = cli.main(["pipeline", "--config", path, "--out", out,
                         "--disturbances"])
        assert code == 0
        with open(os.path.join(out, "eval", "summary.json")) as fh:
            payload = json.load(fh)
        dists = {t["distribution"] for t in payload["trials"]}
        assert "disturbed" in dists
        assert len(payload["trials"]) == 6


class TestEntryPoint:
    def test_console_script_help(self):
        import subprocess
        res = subprocess.run(["anodec", "--help"], capture_output=True, text=True)
        assert res.returncode == 0
        assert "collect" in res.stdout
