import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from fiberpath.cli import main


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    monkeypatch.delenv("FIBERPATH_SEED", raising=False)
    monkeypatch.delenv("FIBERPATH_THREADS", raising=False)


MODESET_BODY = """
[model]
kind = "modeset"
pairs = [[0.0, 0.0, 1.0]]
phi = 1.0

[estimator]
e = 0.4
P = [0.2, 0.0, 0.1]
t_ladder = [0.25, 0.5]
beta = 0.6
f = [0.3, 0.1, 0.0]

[paths]
t = 0.5
n_steps = 32
n_paths = 2048
seed = 11

[oracle]
n_max = 6
"""


def _write(tmp_path, body, name="config.toml"):
    path = tmp_path / name
    path.write_text(body)
    return str(path)


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# configuration errors exit with code 2
# ---------------------------------------------------------------------------


def test_missing_config_flag(capsys):
    assert main(["energy"]) == 2
    assert "requires --config" in capsys.readouterr().err


def test_unreadable_config(tmp_path):
    assert main(["energy", "--config", str(tmp_path / "nope.toml")]) == 2


def test_invalid_toml(tmp_path):
    cfg = _write(tmp_path, "[model\nkind=")
    assert main(["energy", "--config", cfg]) == 2


def test_missing_section(tmp_path, capsys):
    cfg = _write(tmp_path, "[paths]\nn_steps = 8\nn_paths = 64\n")
    assert main(["energy", "--config", cfg]) == 2
    assert "estimator" in capsys.readouterr().err


def test_section_must_be_a_table(tmp_path):
    cfg = _write(tmp_path, "estimator = 5\n")
    assert main(["energy", "--config", cfg]) == 2


def test_bad_model_kind(tmp_path):
    body = MODESET_BODY.replace('kind = "modeset"', 'kind = "lattice"')
    cfg = _write(tmp_path, body)
    assert main(["energy", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_momentum_must_be_a_3_vector(tmp_path):
    body = MODESET_BODY.replace("P = [0.2, 0.0, 0.1]", "P = [0.2, 0.0]")
    cfg = _write(tmp_path, body)
    assert main(["energy", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_observable_requires_discrete_model(tmp_path, capsys):
    body = """
[model]
kind = "continuum"
cutoff = 1.0

[estimator]
e = 0.2
kind = "expN"
beta = 0.5

[paths]
t = 0.5
n_steps = 16
n_paths = 256
"""
    cfg = _write(tmp_path, body)
    assert main(["observable", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "modeset" in capsys.readouterr().err


def test_bad_env_override_is_a_config_error(tmp_path, monkeypatch):
    monkeypatch.setenv("FIBERPATH_SEED", "not-a-number")
    cfg = _write(tmp_path, MODESET_BODY)
    assert main(["energy", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_unknown_subcommand_is_a_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_version_flag():
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0


def test_console_entry_point_runs():
    out = subprocess.run([sys.executable, "-m", "fiberpath.cli", "--version"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert "fiberpath" in out.stdout


# ---------------------------------------------------------------------------
# energy runs: outputs, reproducibility, overrides
# ---------------------------------------------------------------------------


def test_energy_outputs_are_byte_reproducible(tmp_path):
    cfg = _write(tmp_path, MODESET_BODY)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["energy", "--config", cfg, "--out", str(out_a)]) == 0
    assert main(["energy", "--config", cfg, "--out", str(out_b)]) == 0
    assert (out_a / "energy.csv").read_bytes() == (out_b / "energy.csv").read_bytes()

    header, rows = _read_csv(out_a / "energy.csv")
    assert header == ["P_x", "P_y", "P_z", "e", "t1", "t2", "E_hat", "stderr",
                      "n_paths", "n_steps"]
    assert len(rows) == 1  # one adjacent ladder pair
    assert float(rows[0][6]) == pytest.approx(float(rows[0][6]))  # parses
    summary = _read_json(out_a / "summary.json")
    assert summary["command"] == "energy"
    assert summary["seed"] == 11
    assert summary["outputs"] == ["energy.csv"]
    assert np.isfinite(summary["energy"])


def test_seed_precedence_flag_over_env_over_config(tmp_path, monkeypatch):
    cfg = _write(tmp_path, MODESET_BODY)
    out_cfg = tmp_path / "from_config"
    assert main(["energy", "--config", cfg, "--out", str(out_cfg)]) == 0
    assert _read_json(out_cfg / "summary.json")["seed"] == 11

    monkeypatch.setenv("FIBERPATH_SEED", "77")
    out_env = tmp_path / "from_env"
    assert main(["energy", "--config", cfg, "--out", str(out_env)]) == 0
    assert _read_json(out_env / "summary.json")["seed"] == 77
    assert (out_env / "energy.csv").read_bytes() != (out_cfg / "energy.csv").read_bytes()

    out_flag = tmp_path / "from_flag"
    assert main(["energy", "--config", cfg, "--seed", "99",
                 "--out", str(out_flag)]) == 0
    assert _read_json(out_flag / "summary.json")["seed"] == 99


def test_thread_override_does_not_change_results(tmp_path, monkeypatch):
    cfg = _write(tmp_path, MODESET_BODY)
    out_1, out_2 = tmp_path / "serial", tmp_path / "pooled"
    assert main(["energy", "--config", cfg, "--out", str(out_1)]) == 0
    monkeypatch.setenv("FIBERPATH_THREADS", "2")
    assert main(["energy", "--config", cfg, "--out", str(out_2)]) == 0
    assert _read_json(out_2 / "summary.json")["threads"] == 2
    assert (out_1 / "energy.csv").read_bytes() == (out_2 / "energy.csv").read_bytes()


def test_energy_statistical_failure_exits_3(tmp_path, capsys):
    body = """
[estimator]
e = 0.0
P = [8.0, 0.0, 0.0]
t_ladder = [1.0, 2.0]

[paths]
n_steps = 16
n_paths = 32
n_batches = 16
seed = 0
"""
    cfg = _write(tmp_path, body)
    assert main(["energy", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "statistical failure" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# observable runs
# ---------------------------------------------------------------------------


def test_observable_exp_number_schema(tmp_path):
    body = MODESET_BODY + '\n[x]\n'  # keep base; estimator.kind added below
    body = body.replace("[estimator]", '[estimator]\nkind = "expN"')
    cfg = _write(tmp_path, body)
    out = tmp_path / "o"
    assert main(["observable", "--config", cfg, "--out", str(out)]) == 0
    header, rows = _read_csv(out / "observable.csv")
    assert header == ["beta", "P_x", "P_y", "P_z", "e", "t", "value", "stderr"]
    assert len(rows) == 1
    value = float(rows[0][6])
    assert 0.0 < value <= 1.0
    summary = _read_json(out / "summary.json")
    assert summary["value"] == value  # %.17g round-trips doubles exactly


def test_observable_weyl_schema(tmp_path):
    body = MODESET_BODY.replace("[estimator]", '[estimator]\nkind = "weyl"')
    cfg = _write(tmp_path, body)
    out = tmp_path / "o"
    assert main(["observable", "--config", cfg, "--out", str(out)]) == 0
    header, rows = _read_csv(out / "observable.csv")
    assert header == ["P_x", "P_y", "P_z", "e", "t", "value_re", "value_im", "stderr"]
    value = complex(float(rows[0][5]), float(rows[0][6]))
    assert abs(value) <= 1.0


def test_observable_unknown_kind(tmp_path):
    body = MODESET_BODY.replace("[estimator]", '[estimator]\nkind = "parity"')
    cfg = _write(tmp_path, body)
    assert main(["observable", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


# ---------------------------------------------------------------------------
# oracle comparisons and exact tasks
# ---------------------------------------------------------------------------


def test_compare_oracle_report(tmp_path):
    cfg = _write(tmp_path, MODESET_BODY)
    out = tmp_path / "o"
    assert main(["compare-oracle", "--config", cfg, "--out", str(out)]) == 0
    report = _read_json(out / "compare_oracle.json")
    names = [c["observable"] for c in report["comparisons"]]
    assert names == ["partition", "partition", "exp_number", "weyl"]
    assert report["max_sigma_deviation"] < 2.5
    for c in report["comparisons"]:
        assert c["sigma"] < 2.5
    assert report["n_max"] == 6
    summary = _read_json(out / "summary.json")
    assert summary["max_sigma_deviation"] == report["max_sigma_deviation"]


def test_oracle_spectra(tmp_path):
    body = MODESET_BODY + """
[oracle.extra]
"""
    body = body.replace("[oracle]\nn_max = 6",
                        "[oracle]\nn_max = 4\nmomenta = [[0.0, 0.0, 0.0], [0.5, 0.0, 0.0]]\n"
                        "es = [0.0, 0.4]\nn_levels = 5")
    cfg = _write(tmp_path, body)
    out = tmp_path / "o"
    assert main(["oracle", "--task", "spectra", "--config", cfg, "--out", str(out)]) == 0
    header, rows = _read_csv(out / "spectra.csv")
    assert header == ["P_x", "P_y", "P_z", "e", "level", "eigenvalue"]
    assert len(rows) == 2 * 2 * 5
    # free spectrum at P = 0 starts with the exact tower 0, 1.5, ...
    free = [float(r[5]) for r in rows[:5]]
    assert free[0] == 0.0
    assert free[1] == pytest.approx(1.5, rel=1e-12)


def test_oracle_energy_curves(tmp_path):
    body = MODESET_BODY.replace(
        "[oracle]\nn_max = 6",
        "[oracle]\nn_max = 6\nmomenta = [[0.0, 0.0, 0.0]]\ne_squares = [0.0, 0.3, 0.6]")
    cfg = _write(tmp_path, body)
    out = tmp_path / "o"
    assert main(["oracle", "--task", "energy-curves", "--config", cfg,
                 "--out", str(out)]) == 0
    header, rows = _read_csv(out / "energy_curves.csv")
    assert header == ["P_x", "P_y", "P_z", "e_square", "energy"]
    energies = [float(r[4]) for r in rows]
    assert energies[0] == 0.0
    assert energies == sorted(energies)  # nondecreasing in the coupling


def test_oracle_positivity(tmp_path):
    # t = 1: at shorter times the truncation tail crowds the strict margin
    cfg = _write(tmp_path, MODESET_BODY.replace("t = 0.5", "t = 1.0"))
    out = tmp_path / "o"
    assert main(["oracle", "--task", "positivity", "--config", cfg,
                 "--out", str(out)]) == 0
    report = _read_json(out / "positivity.json")
    assert report["passed"] and report["strict"]
    assert report["min_real"] > 0.0
    assert report["max_imag"] <= 1e-8


def test_oracle_relative_bound(tmp_path):
    body = MODESET_BODY.replace("[oracle]\nn_max = 6",
                                "[oracle]\nn_max = 4\ntrials = 100")
    cfg = _write(tmp_path, body)
    out = tmp_path / "o"
    assert main(["oracle", "--task", "relative-bound", "--config", cfg,
                 "--out", str(out)]) == 0
    report = _read_json(out / "relative_bound.json")
    assert report["violations"] == 0
    assert report["n_trials"] == 100


def test_oracle_uniqueness(tmp_path):
    body = MODESET_BODY.replace("[oracle]\nn_max = 6",
                                "[oracle]\nn_max = 6\nes = [0.2, 0.5]")
    cfg = _write(tmp_path, body)
    out = tmp_path / "o"
    assert main(["oracle", "--task", "uniqueness", "--config", cfg,
                 "--out", str(out)]) == 0
    report = _read_json(out / "uniqueness.json")
    assert report["n_max_refined"] == 8
    for entry in report["entries"]:
        assert entry["multiplicity"] == 1
        assert entry["gap"] > 0.0
        assert entry["relative_drift"] < 1e-3


# ---------------------------------------------------------------------------
# polarization checks and kernel tables
# ---------------------------------------------------------------------------


def test_check_polarization_passes(tmp_path):
    out = tmp_path / "o"
    assert main(["check-polarization", "--samples", "200", "--seed", "7",
                 "--out", str(out)]) == 0
    report = _read_json(out / "polarization_checks.json")
    assert report["passed"] is True
    assert all(v <= 1e-10 for v in report["residuals"].values())


def test_check_polarization_zero_tolerance_fails(tmp_path):
    out = tmp_path / "o"
    assert main(["check-polarization", "--samples", "50", "--seed", "7",
                 "--tolerance", "0.0", "--out", str(out)]) == 3
    report = _read_json(out / "polarization_checks.json")
    assert report["passed"] is False


def test_kernel_table_is_deterministic_and_usable(tmp_path):
    tab_a = tmp_path / "a.npz"
    tab_b = tmp_path / "b.npz"
    argv = ["kernel-table", "--cutoff", "1.0", "--tau-max", "0.5", "--r-max", "6.0",
            "--tau-step", "0.01", "--r-step", "0.05"]
    assert main(argv + ["--out", str(tab_a)]) == 0
    assert main(argv + ["--out", str(tab_b)]) == 0
    assert tab_a.read_bytes() == tab_b.read_bytes()

    body = f"""
[model]
kind = "continuum"
cutoff = 1.0
table = "{tab_a}"

[estimator]
e = 0.3
P = [0.2, 0.0, 0.0]
t_ladder = [0.25, 0.5]

[paths]
n_steps = 16
n_paths = 256
n_batches = 16
seed = 0
"""
    cfg = _write(tmp_path, body)
    out = tmp_path / "o"
    assert main(["energy", "--config", cfg, "--out", str(out)]) == 0
    summary = _read_json(out / "summary.json")
    assert np.isfinite(summary["energy"])
