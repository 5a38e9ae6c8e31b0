import pytest
import yaml
from typer.testing import CliRunner

from fabsim.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_MISMATCH, app
from fabsim.config import dump_config, load_config


@pytest.fixture
def cli():
    return CliRunner()


@pytest.fixture
def config_file(tmp_path, small_config):
    path = tmp_path / "small.yaml"
    path.write_text(dump_config(small_config))
    return path


class TestRun:
    def test_writes_outputs(self, cli, config_file, small_config):
        args = ["run", str(config_file), "--iterations", "40", "--no-progress"]
        result = cli.invoke(app, args + ["--plot", "rel_err"])
        assert result.exit_code == 0, result.output
        out = small_config.output
        assert (out / "small.csv").exists()
        assert (out / "small.rel_err.dat").exists()
        assert load_config(out / "small.yaml").iterations == 40
        assert "small" in result.output

    def test_overrides(self, cli, config_file, tmp_path):
        out = tmp_path / "elsewhere"
        args = ["run", str(config_file), "-s", "name=other", "--output", str(out)]
        result = cli.invoke(app, args + ["--iterations", "20", "--no-progress"])
        assert result.exit_code == 0, result.output
        assert (out / "other.csv").exists()

    def test_bad_config(self, cli, config_file):
        result = cli.invoke(app, ["run", str(config_file), "-s", "lam=-1"])
        assert result.exit_code == EXIT_CONFIG
        assert "Configuration error" in result.output

    def test_missing_file(self, cli, tmp_path):
        result = cli.invoke(app, ["run", str(tmp_path / "missing.yaml")])
        assert result.exit_code == EXIT_CONFIG

    def test_diverged(self, cli, config_file):
        args = ["run", str(config_file), "--no-progress"]
        for name in ("eta_x", "eta_y", "eta_z"):
            args += ["-s", f"steps.{name}=1e6"]
        args += ["-s", "steps.penalty_scaled=false"]
        result = cli.invoke(app, args)
        assert result.exit_code == EXIT_DIVERGED


def test_sweep(cli, tmp_path, small_config):
    data = yaml.safe_load(dump_config(small_config))
    data["iterations"] = 20
    data["sweep"] = {"axes": {"lam": [5.0, 10.0]}}
    path = tmp_path / "sweep.yaml"
    path.write_text(yaml.safe_dump(data))
    result = cli.invoke(app, ["sweep", str(path), "--workers", "1", "--plot", "V_D"])
    assert result.exit_code == 0, result.output
    assert (small_config.output / "small.sweep.csv").exists()
    assert (small_config.output / "lam=5.0.V_D.dat").exists()


def test_sweep_without_section(cli, config_file):
    assert cli.invoke(app, ["sweep", str(config_file)]).exit_code == EXIT_CONFIG


class TestValidateTopology:
    def test_default(self, cli, tmp_path):
        result = cli.invoke(
            app,
            ["validate-topology", "-s", "problem.n=5", "--export-matrices", str(tmp_path)],
        )
        assert result.exit_code == 0, result.output
        assert "Topology valid" in result.output
        assert (tmp_path / "A.csv").exists() and (tmp_path / "B.csv").exists()

    def test_edgelist_round_trip(self, cli, tmp_path):
        exported = tmp_path / "g.txt"
        result = cli.invoke(app, ["validate-topology", "--export-edgelist", str(exported)])
        assert result.exit_code == 0, result.output
        result = cli.invoke(app, ["validate-topology", "--edgelist", str(exported)])
        assert result.exit_code == 0, result.output

    def test_not_strongly_connected(self, cli, tmp_path):
        path = tmp_path / "chain.txt"
        path.write_text("n 3\n0 1\n1 2\n")
        result = cli.invoke(app, ["validate-topology", "--edgelist", str(path)])
        assert result.exit_code == EXIT_CONFIG

    def test_unmet_target(self, cli):
        result = cli.invoke(app, ["validate-topology", "-s", "topology.a_min=0.9"])
        assert result.exit_code == EXIT_MISMATCH


def test_selftest(cli):
    result = cli.invoke(app, ["selftest", "--quick", "--check", "mixing"])
    assert result.exit_code == 0, result.output
    assert "PASS" in result.output


def test_selftest_unknown(cli):
    assert cli.invoke(app, ["selftest", "--check", "nope"]).exit_code == EXIT_CONFIG


def test_table1_unknown_group(cli):
    assert cli.invoke(app, ["table1", "--group", "gamma"]).exit_code == EXIT_CONFIG
