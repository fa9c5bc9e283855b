import hashlib
import json
from pathlib import Path

import pytest
import yaml

from fracspde import cli
from fracspde.config import OPTION_DEFAULTS, ExperimentConfig, load_config, validate
from fracspde.errors import AccuracyError, ConfigError

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def make_config(experiment, **overrides):
    raw = {
        "experiment": experiment,
        "params": {"beta": 0.5, "alpha": 2.0, "nu": 1.0, "d": 1},
        "seeds": {"master_seed": 7, "n_replicates": 1},
    }
    raw.update(overrides)
    return raw


def write_yaml(tmp_path, raw, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return path


def data_files(out_dir):
    return {p.name: p.read_bytes() for p in sorted(out_dir.iterdir()) if p.name != "manifest.json"}


class TestConfig:
    def test_round_trip_and_digest(self, tmp_path):
        cfg = ExperimentConfig.from_dict(make_config("moments", grid={"L": None, "n_x": 64, "n_t": 64, "T": 1.0}))
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again == cfg and again.digest() == cfg.digest()
        path = tmp_path / "c.yaml"
        path.write_text(cfg.to_yaml())
        assert load_config(path) == cfg
        moved = ExperimentConfig.from_dict({**cfg.to_dict(), "output_dir": "elsewhere"})
        assert moved.digest() == cfg.digest()
        other = ExperimentConfig.from_dict({**cfg.to_dict(), "u0": 0.5})
        assert other.digest() != cfg.digest()

    def test_defaults_filled(self):
        cfg = ExperimentConfig.from_dict(make_config("blowup"))
        assert cfg.options == OPTION_DEFAULTS["blowup"]
        assert cfg.options is not OPTION_DEFAULTS["blowup"]

    @pytest.mark.parametrize(
        "patch",
        [
            {"typo": 1},
            {"params": {"beta": 0.5, "alpha": 2.0, "gamma": 1.0}},
            {"options": {"rel_toll": 1e-3}},
            {"sigma": {"family": "affine", "a": 1.0, "c": 1.0}},
            {"sigma": {"family": "cubic"}},
            {"seeds": {"master_seed": -1}},
            {"experiment": "nonsense"},
        ],
    )
    def test_rejects(self, patch):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({**make_config("l2-scaling"), **patch})

    def test_yaml_exponent_strings(self, tmp_path):
        text = "experiment: l2-scaling\nparams: {beta: 0.5, alpha: 2}\noptions: {rel_tol: 1e-3}\n"
        path = tmp_path / "c.yaml"
        path.write_text(text)
        assert yaml.safe_load(text)["options"]["rel_tol"] == "1e-3"
        assert load_config(path).options["rel_tol"] == 1e-3

    def test_type_errors(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(make_config("l2-scaling", options={"rel_tol": True}))
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(make_config("kernel-table", options={"method": 3}))
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(make_config("picard", options={"n_iter": 2.5}))

    def test_unreadable(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.yaml")
        bad = tmp_path / "list.yaml"
        bad.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError):
            load_config(bad)


class TestValidate:
    def _violations(self, experiment, beta, alpha, d, **extra):
        raw = make_config(experiment, params={"beta": beta, "alpha": alpha, "d": d}, **extra)
        return validate(ExperimentConfig.from_dict(raw))

    def test_existence_condition(self):
        assert self._violations("l2-scaling", 0.5, 2.0, 3) == []
        v = self._violations("l2-scaling", 1.0, 2.0, 2)
        assert len(v) == 1 and v[0].field == "params.d"
        assert self._violations("l2-scaling", 0.6, 1.0, 1) == []
        assert self._violations("blowup", 0.6, 1.0, 1) == []

    def test_simulation_constraints(self):
        grid = {"L": 4.0, "n_x": 48, "n_t": 64, "T": 1.0}
        fields = {v.field for v in self._violations("simulate", 0.5, 2.0, 1, grid=grid)}
        assert "grid.n_x" in fields
        assert {v.field for v in self._violations("simulate", 0.5, 2.0, 1)} == {"grid"}
        power = {"family": "power", "c": 1.0, "epsilon": 0.5}
        grid = {"L": 4.0, "n_x": 64, "n_t": 64, "T": 1.0}
        assert self._violations("picard", 0.5, 2.0, 1, grid=grid, sigma=power)
        few = {"master_seed": 1, "n_replicates": 10}
        assert self._violations("moments", 0.5, 2.0, 1, grid=grid, seeds=few)

    def test_violation_payload(self):
        v = self._violations("l2-scaling", 1.0, 2.0, 2)[0].to_dict()
        assert set(v) == {"field", "message", "condition"}


class TestCli:
    def test_validate_command(self, tmp_path, capsys):
        ok = write_yaml(tmp_path, make_config("l2-scaling"), "ok.yaml")
        assert cli.main(["validate", "--config", str(ok)]) == 0
        bad = write_yaml(tmp_path, make_config("l2-scaling", params={"beta": 1.0, "alpha": 2.0, "d": 2}), "bad.yaml")
        capsys.readouterr()
        assert cli.main(["validate", "--config", str(bad)]) == 2
        report = json.loads(capsys.readouterr().out)
        assert report["violations"][0]["field"] == "params.d"

    def test_run_rejects_invalid(self, tmp_path, capsys):
        bad = write_yaml(tmp_path, make_config("l2-scaling", params={"beta": 1.0, "alpha": 2.0, "d": 2}))
        out = tmp_path / "out"
        assert cli.main(["l2-scaling", "--config", str(bad), "--output", str(out)]) == 2
        err = json.loads((out / "error.json").read_text())
        assert err["error"] == "config" and err["details"][0]["field"] == "params.d"
        assert json.loads(capsys.readouterr().err)["error"] == "config"

    def test_argument_errors(self, tmp_path):
        cfg = write_yaml(tmp_path, make_config("l2-scaling"))
        out = str(tmp_path / "o")
        assert cli.main(["blowup", "--config", str(cfg), "--output", out]) == 2
        assert cli.main(["l2-scaling", "--config", str(cfg), "--output", out, "--workers", "0"]) == 2
        assert cli.main(["l2-scaling", "--config", str(cfg), "--output", out, "--seed-override", "-3"]) == 2
        assert cli.main(["l2-scaling", "--config", str(tmp_path / "none.yaml"), "--output", out]) == 2

    def test_gaussian_kernel_table(self, tmp_path):
        raw = make_config("kernel-table", params={"beta": 1.0, "alpha": 2.0, "d": 1})
        out = tmp_path / "out"
        assert cli.main(["kernel-table", "--config", str(write_yaml(tmp_path, raw)), "--output", str(out)]) == 0
        lines = (out / "kernel_table.csv").read_text().splitlines()
        digest = ExperimentConfig.from_dict(raw).digest()
        assert lines[0] == f"# config_digest={digest}"
        assert lines[1] == "t,x,G,method,abs_err"
        t, x, g, method, _ = lines[2].split(",")
        assert (float(t), float(x), method) == (1.0, 0.0, "fourier")
        assert float(g) == pytest.approx(0.2820948, abs=1e-7)

    def test_manifest_checksums(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_yaml(tmp_path, make_config("l2-scaling"))
        assert cli.main(["l2-scaling", "--config", str(cfg), "--output", str(out), "--workers", "2"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "ok" and manifest["workers"] == 2
        assert {f["path"] for f in manifest["files"]} == {"l2_scaling.csv", "constants.json"}
        for f in manifest["files"]:
            data = (out / f["path"]).read_bytes()
            assert f["sha256"] == hashlib.sha256(data).hexdigest() and f["bytes"] == len(data)
        constants = json.loads((out / "constants.json").read_text())
        assert constants["config_digest"] == manifest["config_digest"]

    def test_statistical_failure_exit(self, tmp_path):
        cfg = write_yaml(tmp_path, make_config("l2-scaling", options={"rel_tol": 1e-30}))
        out = tmp_path / "out"
        assert cli.main(["l2-scaling", "--config", str(cfg), "--output", str(out)]) == 4
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"].startswith("statistical failure")

    def test_accuracy_failure_exit(self, tmp_path, monkeypatch):
        def failing(*args, **kwargs):
            raise AccuracyError("quadrature did not reach tolerance")

        monkeypatch.setattr(cli, "kernel_table", failing)
        cfg = write_yaml(tmp_path, make_config("kernel-table"))
        out = tmp_path / "out"
        assert cli.main(["kernel-table", "--config", str(cfg), "--output", str(out)]) == 3
        assert json.loads((out / "manifest.json").read_text())["status"].startswith("accuracy failure")

    def test_rerun_identical_and_seed_override(self, tmp_path):
        raw = make_config(
            "simulate",
            grid={"L": 4.0, "n_x": 32, "n_t": 32, "T": 0.5},
            sigma={"family": "affine", "a": 1.0, "b": 0.5},
            options={"output_times": [0.25, 0.5]},
        )
        cfg = write_yaml(tmp_path, raw)
        dirs = [tmp_path / name for name in ("a", "b", "c")]
        for d in dirs[:2]:
            assert cli.main(["simulate", "--config", str(cfg), "--output", str(d)]) == 0
        assert cli.main(["simulate", "--config", str(cfg), "--output", str(dirs[2]), "--seed-override", "8"]) == 0
        first, second, third = (data_files(d) for d in dirs)
        assert first == second
        assert first["trajectory.csv"] != third["trajectory.csv"]
        rows = first["trajectory.csv"].decode().splitlines()
        assert len(rows) == 2 + 2 * 32


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    cfg = load_config(path)
    assert cfg.experiment == path.stem
    assert validate(cfg) == []
