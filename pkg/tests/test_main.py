import json
import subprocess
import sys
from pathlib import Path

import pytest

from cascadekit import __version__
from cascadekit.exceptions import CascadekitError
from cascadekit.main import main
from tests import rpc_config, write_config

commands = ["run", "simulate", "cluster", "diagnose", "sample-pd", "sample-rpc", "rates"]


def test_call():
    result = subprocess.run(
        [sys.executable, "-m", "cascadekit", "--version"],
        capture_output=True,
        universal_newlines=True,
    )
    assert result.returncode == 0
    assert __version__ in result.stdout


@pytest.mark.parametrize("command", commands)
def test_help(runner, command):
    result = runner.invoke(main, args=[command, "--help"])
    assert result.exit_code == 0
    assert result.output.startswith("Usage:")


def test_missing_config(runner):
    result = runner.invoke(main, args=["run"])
    assert result.exit_code == 2
    assert "--config" in result.output


def test_run(runner):
    config = write_config(Path("config.json"), rpc_config())
    result = runner.invoke(main, args=["run", "-c", config, "-o", "out"])
    assert result.exit_code == 0, result.output
    assert result.output.endswith("3 disorders processed.\nDone! 🎉\n")
    report = json.loads(Path("out/report.json").read_text(encoding="utf-8"))
    assert report["config"]["seed"] == 11
    assert report["stages"] == ["simulate", "cluster", "diagnose"]
    assert Path("out/overlap_histogram.csv").is_file()


def test_run_seed_override(runner):
    config = write_config(Path("config.json"), rpc_config())
    args = ["simulate", "-c", config, "-o", "out", "-s", "7", "-f", "json"]
    result = runner.invoke(main, args=args)
    assert result.exit_code == 0, result.output
    report = json.loads(Path("out/report.json").read_text(encoding="utf-8"))
    assert report["config"]["seed"] == 7
    assert report["stages"] == ["simulate"]
    assert not Path("out/overlap_histogram.csv").exists()


def test_run_quiet(runner):
    config = write_config(Path("config.json"), rpc_config())
    result = runner.invoke(main, args=["diagnose", "-c", config, "-o", "out", "-q"])
    assert result.exit_code == 0
    assert result.output == ""


def test_run_verbose(runner):
    config = write_config(Path("config.json"), rpc_config())
    result = runner.invoke(main, args=["cluster", "-c", config, "-o", "out", "-v"])
    assert result.exit_code == 0
    assert "Running cluster on config.json." in result.output
    assert "Wrote 'out" in result.output


def test_run_toml_config(runner):
    Path("config.toml").write_text(
        'seed = 2\nq = [0.5]\nn_disorder = 2\nbins = 4\n\n'
        '[source]\nvariant = "rem"\nN = 4\n',
        encoding="utf-8",
    )
    result = runner.invoke(main, args=["simulate", "-c", "config.toml", "-o", "out"])
    assert result.exit_code == 0, result.output
    report = json.loads(Path("out/report.json").read_text(encoding="utf-8"))
    assert "dfm_gap" in report["diagnostics"]


def test_run_too_many_spins(runner):
    config = write_config(
        Path("config.json"),
        {"seed": 1, "q": [0.5], "source": {"variant": "rem", "N": 20}},
    )
    result = runner.invoke(main, args=["simulate", "-c", config])
    assert result.exit_code == 2
    assert "Config field 'source.N'" in result.output
    assert result.output.endswith("Done, but 1 error occurred ❌💥❌\n")


def test_run_counts_config_errors(runner):
    config = write_config(
        Path("config.json"),
        {"source": {"variant": "rem", "N": 20}, "eps": 2, "colour": 1},
    )
    result = runner.invoke(main, args=["simulate", "-c", config])
    assert result.exit_code == 2
    assert "Config field 'colour'" in result.output
    assert "Config field 'eps'" in result.output
    assert result.output.endswith("Done, but 4 errors occurred ❌💥❌\n")


def test_run_invalid_config_file(runner):
    Path("config.json").write_text("{seed", encoding="utf-8")
    result = runner.invoke(main, args=["run", "-c", "config.json"])
    assert result.exit_code == 2
    assert "Config field '<file>'" in result.output


def test_conflicting_formats(runner):
    config = write_config(Path("config.json"), rpc_config())
    result = runner.invoke(main, args=["run", "-c", config, "-f", "json", "-f", "csv"])
    assert result.exit_code == 2
    assert "conflicting values" in result.output


def test_runtime_error(runner, monkeypatch):
    def fail(*args, **kwargs):
        msg = "Search budget exhausted"
        raise CascadekitError(msg)

    monkeypatch.setattr("cascadekit.main.run", fail)
    config = write_config(Path("config.json"), rpc_config())
    result = runner.invoke(main, args=["run", "-c", config])
    assert result.exit_code == 1
    assert "Search budget exhausted" in result.output
    assert result.output.endswith("Done, but 1 error occurred ❌💥❌\n")


@pytest.mark.parametrize("explicit", [True, False])
def test_pyproject_config(runner, explicit):
    Path("pyproject.toml").write_text(
        '[tool.cascadekit]\nformat = "json"\nout = "from-pyproject"\n', encoding="utf-8"
    )
    config = write_config(Path("config.json"), rpc_config())
    args = ["simulate", "-c", config]
    if explicit:
        args += ["-p", "pyproject.toml"]
    result = runner.invoke(main, args=args)
    assert result.exit_code == 0, result.output
    assert Path("from-pyproject/report.json").is_file()
    assert not Path("from-pyproject/overlap_histogram.csv").exists()


@pytest.mark.parametrize(
    "setting", ['format = "xml"', "workers = 0", "out = 3", 'mode = "gibbs"']
)
def test_pyproject_invalid(runner, setting):
    Path("pyproject.toml").write_text(f"[tool.cascadekit]\n{setting}\n", encoding="utf-8")
    config = write_config(Path("config.json"), rpc_config())
    result = runner.invoke(main, args=["simulate", "-c", config])
    assert result.exit_code == 2


def test_sample_pd(runner):
    args = ["sample-pd", "-t", "0.5", "-K", "50", "-n", "3", "-s", "1", "-o", "out"]
    result = runner.invoke(main, args=args)
    assert result.exit_code == 0, result.output
    assert result.output.endswith("3 samples drawn.\nDone! 🎉\n")
    data = json.loads(Path("out/pd_samples.json").read_text(encoding="utf-8"))
    assert len(data["samples"]) == 3
    rows = Path("out/pd_samples.csv").read_text(encoding="utf-8").splitlines()
    assert rows[0] == "sample,rank,mass"
    assert len(rows) == 1 + 3 * 50


def test_sample_pd_is_seeded(runner):
    args = ["sample-pd", "-t", "0.3", "-K", "20", "-s", "5", "-f", "json"]
    runner.invoke(main, args=[*args, "-o", "first"])
    runner.invoke(main, args=[*args, "-o", "second"])
    first = Path("first/pd_samples.json").read_text(encoding="utf-8")
    assert first == Path("second/pd_samples.json").read_text(encoding="utf-8")


@pytest.mark.parametrize("theta", ["0", "1", "1.5"])
def test_sample_pd_invalid_theta(runner, theta):
    result = runner.invoke(main, args=["sample-pd", "-t", theta, "-s", "1"])
    assert result.exit_code == 2


def test_sample_rpc(runner):
    args = ["sample-rpc", "-z", "0.3", "-z", "0.7", "--q", "0.4", "--q", "0.8"]
    args += ["-b", "3", "-n", "2", "-s", "4", "-o", "out"]
    result = runner.invoke(main, args=args)
    assert result.exit_code == 0, result.output
    assert result.output.endswith("2 cascades drawn.\nDone! 🎉\n")
    data = json.loads(Path("out/cascades.json").read_text(encoding="utf-8"))
    assert data["params"] == {"q": [0.4, 0.8], "zeta": [0.3, 0.7]}
    assert all(sample["report"]["valid"] for sample in data["samples"])
    assert data["samples"][0]["shape"] == [3, 3]
    assert Path("out/cascades.csv").is_file()


@pytest.mark.parametrize(
    "extra",
    [
        ["-z", "0.7", "-z", "0.3", "--q", "0.4", "--q", "0.8"],
        ["-z", "0.3", "-z", "0.7", "--q", "0.4"],
        ["-z", "0.3", "-z", "0.7", "--q", "0.4", "--q", "0.8", "-b", "2", "-b", "3", "-b", "4"],
    ],
)
def test_sample_rpc_invalid(runner, extra):
    result = runner.invoke(main, args=["sample-rpc", "-s", "1", *extra])
    assert result.exit_code == 2


def test_rates_table(runner):
    result = runner.invoke(main, args=["rates", "-r", "1", "-z", "0.5", "--nu", "1"])
    assert result.exit_code == 0, result.output
    header = result.output.splitlines()[0]
    assert "K" in header.split()
    assert "alpha" in header.split()
    assert result.output.endswith("Done! 🎉\n")
    assert not Path("cascadekit-output").exists()


def test_rates_json(runner):
    args = ["rates", "-r", "1", "-z", "0.5", "--decay-c", "1", "--decay-gamma", "1"]
    args += ["-N", "1e6", "-f", "json", "-o", "out"]
    result = runner.invoke(main, args=args)
    assert result.exit_code == 0, result.output
    assert "Largest nu with N_0 <= 1e+06: 0" in result.output
    data = json.loads(Path("out/rates.json").read_text(encoding="utf-8"))
    assert data["largest_nu"] == 0
    assert [rate["nu"] for rate in data["rates"]] == [1, 2, 3]


def test_rates_csv(runner):
    args = ["rates", "-r", "2", "-z", "0.3", "-z", "0.6", "-f", "csv", "-o", "out"]
    result = runner.invoke(main, args=args)
    assert result.exit_code == 0, result.output
    rows = Path("out/rates.csv").read_text(encoding="utf-8").splitlines()
    assert rows[0].startswith("nu,")
    assert len(rows) == 4


@pytest.mark.parametrize(
    "extra",
    [
        ["--decay-c", "1"],
        ["-N", "100"],
        ["--decay-gamma", "1", "-N", "100"],
    ],
)
def test_rates_usage_errors(runner, extra):
    result = runner.invoke(main, args=["rates", "-r", "1", "-z", "0.5", *extra])
    assert result.exit_code == 2


def test_rates_invalid_zeta(runner):
    result = runner.invoke(main, args=["rates", "-r", "2", "-z", "0.5"])
    assert result.exit_code == 2
    assert "--zeta" in result.output
