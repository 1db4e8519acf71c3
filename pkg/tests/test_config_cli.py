import json
from pathlib import Path

import numpy as np
import pytest

from edlab.cli import main
from edlab.config import DEFAULTS, ConfigError, load_config, parse_config
from edlab.experiments import cmd_export_plots, cmd_run, fringe_check, resolve_threads
from edlab.core import build_grid

SMOKE = """\
[scenario]
name = gaussian
sigma0 = 1.0

[model]
epsilon = 0, 1

[grid]
points = 256
extent = 30.0

[run]
T = 0.1
dt = 1e-3
walkers = 500
record_every = 50
seed = 7
track = 4
"""

CONFIGS = sorted((Path(__file__).parent.parent / "configs").glob("*.ini"))


# ---------------------------------------------------------------- parsing


def test_defaults_fill_missing_keys():
    cfg = parse_config("[scenario]\nname = gaussian\n")
    assert cfg.points == int(DEFAULTS["grid"]["points"])
    assert cfg.epsilons == (1.0,)
    assert cfg.model_class == "quantum" and cfg.scheme == "euler"


def test_epsilon_list_and_masses():
    cfg = parse_config(SMOKE)
    assert cfg.epsilons == (0.0, 1.0)
    assert cfg.params(1.0).epsilon == 1.0 and cfg.params().epsilon == 0.0


@pytest.mark.parametrize("text, line, fragment", [
    ("[scenario]\nname = gaussian\nwidth = 2\n", 3, "unknown key"),
    ("[scenario]\nname = coherent\nsigma0 = 1\n", 3, "unknown key"),
    ("[grid]\npoints = 64\n\n[extras]\nfoo = 1\n", 4, "unknown section"),
    ("[model]\nepsilon = 1, -0.5\n", 2, "non-negative"),
    ("[run]\nscheme = rk4\n", 2, "scheme"),
    ("[run]\nsubsteps = 40\n", 2, "substeps"),
    ("[model]\nclass = classical\n", 2, "quantum or hybrid"),
    ("[grid]\npoints = lots\n", 2, "cannot parse"),
])
def test_rejections_report_line(text, line, fragment):
    with pytest.raises(ConfigError, match=fragment) as info:
        parse_config(text)
    assert info.value.line == line
    assert str(info.value).startswith(f"line {line}:")


@pytest.mark.parametrize("text", [
    "[grid]\npoints = 4\n",
    "[run]\nwalkers = 0\n",
    "[model]\nmasses = 0\n",
])
def test_domain_errors_become_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_hash_tracks_content():
    a = parse_config(SMOKE)
    assert a.config_hash() == parse_config(SMOKE + "\n# trailing comment\n").config_hash()
    assert a.config_hash() != parse_config(SMOKE.replace("sigma0 = 1.0", "sigma0 = 1.5")).config_hash()
    assert a.config_hash() != a.with_seed(8).config_hash()


@pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
def test_shipped_configs_parse(path):
    cfg = load_config(path)
    assert cfg.source == str(path)


# ---------------------------------------------------------------- threads


def test_thread_resolution(monkeypatch):
    monkeypatch.delenv("EDLAB_THREADS", raising=False)
    assert resolve_threads(None) == 1
    monkeypatch.setenv("EDLAB_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2


# ---------------------------------------------------------------- run and export


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    report = cmd_run(parse_config(SMOKE), out, threads=1)
    return out, report


def test_run_writes_artifacts(smoke_run):
    out, report = smoke_run
    assert report.passed, report.checks
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["schema"] == "edlab.run/1"
    assert manifest["records"] == 3
    assert manifest["provenance"]["seed"] == 7
    for case in manifest["cases"]:
        assert set(case["files"]) == {"trajectories.bin", "trajectories.csv", "tracked.npz", "ks.csv"}
        for name in case["files"]:
            assert (out / case["dir"] / name).is_file()
    assert len(list((out / "fields").glob("*.csv"))) == 3
    assert len(list((out / "uncertainty").glob("*.json"))) == 3
    assert (out / "conserved.csv").read_text().startswith("time,norm,hamiltonian")
    assert json.loads((out / "run.json").read_text())["experiment"] == "run"


def test_run_is_thread_count_independent(smoke_run, tmp_path):
    out, _ = smoke_run
    cmd_run(parse_config(SMOKE), tmp_path, threads=2)
    for case in ("case00", "case01"):
        assert (out / case / "trajectories.bin").read_bytes() == (tmp_path / case / "trajectories.bin").read_bytes()


def test_export_plots(smoke_run, tmp_path):
    out, _ = smoke_run
    summary = cmd_export_plots(out, tmp_path)
    assert summary["variance_monotone"]
    assert summary["fans"]["case00"]["non_crossing"]
    for name in ("rho_profiles.csv", "ks_vs_time.csv", "uncertainty_vs_time.csv", "summary.json"):
        assert (tmp_path / name).is_file()


def test_export_plots_requires_a_run(tmp_path):
    with pytest.raises(FileNotFoundError):
        cmd_export_plots(tmp_path)


# ---------------------------------------------------------------- fringes


def test_fringe_check_matches_identical_profiles():
    g = build_grid(1, 512, 20.0)
    x = g.axes[0]
    rho = np.exp(-(x**2) / 8) * (1 + np.cos(3 * x)) + 1e-3
    rho /= g.integrate(rho)
    cdf = np.cumsum(rho) / rho.sum()
    samples = np.interp(np.linspace(0, 1, 200_002)[1:-1], cdf, x)
    res = fringe_check(rho, samples[:, None], g)
    assert res["passed"] and len(res["minima"]) >= 2


# ---------------------------------------------------------------- command line


def test_cli_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "smoke.ini"
    cfg.write_text(SMOKE)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    assert "PASS  ks_below_critical" in capsys.readouterr().out
    bad = tmp_path / "bad.ini"
    bad.write_text("[scenario]\nname = gaussian\nbogus = 1\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert "line 3" in capsys.readouterr().err
    assert main(["export-plots", str(tmp_path / "nowhere")]) == 2
    assert main(["export-plots", str(tmp_path / "run")]) == 0


def test_cli_reports_failed_tolerance(tmp_path):
    # a single epsilon cannot show universality
    cfg = tmp_path / "one.ini"
    cfg.write_text(SMOKE.replace("epsilon = 0, 1", "epsilon = 1"))
    assert main(["universality", "--config", str(cfg)]) == 2
    # a caustic halt in the hybrid class is a tolerance failure
    halt = tmp_path / "halt.ini"
    halt.write_text("""\
[scenario]
name = gaussian
x0 = 1.0
sigma0 = 0.3
[potential]
kind = harmonic
[model]
class = hybrid
epsilon = 1
[grid]
points = 256
extent = 10.0
[run]
T = 1.6
dt = 1e-2
walkers = 200
record_every = 40
""")
    assert main(["run", "--config", str(halt), "--out", str(tmp_path / "halt")]) == 1


def test_cli_maxent_check(tmp_path):
    assert main(["maxent-check", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "maxent_check.json").read_text())["experiment"] == "maxent_check"
