"""Config parsing, command exit codes, and output-file contracts."""

from __future__ import annotations

import json
import math
import os

import pytest

from calabi_krf import ConfigError, FlowControls, evolve, make_grid, make_initial_state, parse_config
from calabi_krf.cli import LEDGER_HEADER, TRAJECTORY_HEADER, main, write_outputs
from calabi_krf.monitors import VerdictReport, evaluate_trajectory

EVOLVE_CFG = """
# contraction at desk scale
m = 1
n = 2
a0 = 1
b0 = 6
rho_min = -12
rho_max = 12
count = 385
output_every = 2000
t_end_fraction = 0.05
"""

RESOLVE_CFG = """
m = 2
n = 1
b0 = 1
mode = resolution
rho_min = -12
rho_max = 12
count = 385
output_every = 100000
t_end_fraction = 0.01
"""


def _write(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestParseConfig:
    def test_minimal_defaults(self):
        cfg = parse_config("m=1\nn=2\na0=1\nb0=6\n")
        assert cfg.mode == "standard"
        assert (cfg.rho_min, cfg.rho_max, cfg.count) == (-30.0, 30.0, 2048)
        assert (cfg.dt_max, cfg.cfl_factor) == (5e-3, 0.4)
        assert cfg.output_every == 100
        assert cfg.t_end_fraction == 0.9
        assert cfg.out == "calabi_krf"
        assert (cfg.params.m, cfg.params.n) == (1, 2)
        assert (cfg.class0.a, cfg.class0.b) == (1.0, 6.0)

    def test_perturbed_config(self):
        cfg = parse_config("m=1\nn=1\nmode=perturbed\ndelta=0.01\nb0=1\n")
        assert cfg.mode == "perturbed"
        assert (cfg.class0.a, cfg.class0.b) == (0.01, 1.0)

    def test_comments_and_blank_lines(self):
        cfg = parse_config("# header\n\nm = 1\nn = 2\na0 = 1\nb0 = 6\n# tail\n")
        assert cfg.m == 1

    def test_boundary_fraction_accepted(self):
        cfg = parse_config("m=1\nn=2\na0=1\nb0=6\nt_end_fraction=0.999\n")
        assert cfg.t_end_fraction == 0.999

    @pytest.mark.parametrize(
        "text, needle",
        [
            ("m=1\nn=2\nb0=1\nmode=resolution\n", "resolution"),
            ("m=1\nn=2\na0=1\nb0=6\nbogus=3\n", "line 5"),
            ("m=1\nn=2\na0=1\nb0=6\nm=2\n", "duplicate"),
            ("m=1\nn=2\na0=1\nb0=6\nt_end_fraction=1.0\n", "0.999"),
            ("m=1\nn=2\na0=1\nb0=6\ncount=32\n", "64"),
            ("m=1\nn=2\na0=1\n", "b0"),
            ("m=one\nn=2\na0=1\nb0=6\n", "m"),
            ("m=1\nn=2\na0=1\nb0=6\ncfl_factor=0.8\n", "0.5"),
        ],
    )
    def test_rejects_bad_documents(self, text, needle):
        with pytest.raises(ConfigError, match=needle):
            parse_config(text)

    def test_sweep_lists_parse(self):
        cfg = parse_config("m_list=1\nn_list=2\na0=1\nb0_list=1,6\n")
        assert cfg.b0_list == (1.0, 6.0)
        assert cfg.m_list == (1,)


class TestWriteOutputs:
    def test_empty_trajectory_writes_headers(self, tmp_path):
        from calabi_krf import Trajectory

        paths = write_outputs(
            Trajectory(states=(), output_every=1, ledger=()), (), str(tmp_path / "x")
        )
        assert open(paths["trajectory"]).read() == TRAJECTORY_HEADER + "\n"
        assert open(paths["ledger"]).read() == LEDGER_HEADER + "\n"
        assert json.load(open(paths["summary"])) == {"snapshots": 0}

    def test_rows_match_snapshots(self, tmp_path):
        grid = make_grid(-12.0, 12.0, 385)
        state = make_initial_state((1, 2), (1.0, 6.0), grid)
        trajectory = evaluate_trajectory(
            evolve(state, 3e-6, FlowControls(output_every=1, dt_max=1e-6))
        )
        paths = write_outputs(trajectory, trajectory.ledger, str(tmp_path / "r"))
        lines = open(paths["trajectory"]).read().splitlines()
        assert lines[0] == TRAJECTORY_HEADER
        assert len(lines) == 1 + len(trajectory.states)
        times = [float(line.split(",")[0]) for line in lines[1:]]
        assert times == sorted(times) and len(set(times)) == len(times)
        for line in lines[1:]:
            for cell in line.split(","):
                assert format(float(cell), ".12g") == cell
        ledger_lines = open(paths["ledger"]).read().splitlines()
        assert ledger_lines[0] == LEDGER_HEADER
        assert all(line.split(",")[-1] in ("0", "1") for line in ledger_lines[1:])

    def test_length_mismatch_rejected(self, tmp_path):
        grid = make_grid(-12.0, 12.0, 385)
        state = make_initial_state((1, 2), (1.0, 6.0), grid)
        trajectory = evaluate_trajectory(
            evolve(state, 2e-6, FlowControls(output_every=1, dt_max=1e-6))
        )
        with pytest.raises(ValueError, match="length"):
            write_outputs(trajectory, trajectory.ledger[:-1], str(tmp_path / "bad"))


class TestCommands:
    def test_classify_json(self, tmp_path, capsys):
        cfg = _write(tmp_path, "m=1\nn=2\na0=1\nb0=6\n")
        assert main(["classify", "--config", cfg, "--out", str(tmp_path / "c")]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["case"] == 1
        assert payload["T"] == 1.0
        assert payload["contracts_to"] == "cone Y_{1,2}"
        on_disk = json.load(open(tmp_path / "c.classify.json"))
        assert on_disk == payload

    def test_cone_check_threshold(self, tmp_path, capsys):
        cfg = _write(tmp_path, "m=2\nn=1\nb0=1\nmode=resolution\nrho_min=-16\nrho_max=16\ncount=513\n")
        assert main(["cone-check", "--config", cfg]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert math.isclose(payload["eps0"], 0.2, abs_tol=1e-3)
        assert payload["expected"] == 0.2
        by_eps = {row["epsilon"]: row["positive"] for row in payload["table"]}
        assert by_eps[0.9 / 5.0] is True
        # at 1/(m+n+2) the radial factor vanishes identically
        assert by_eps[1.0 / 5.0] is False
        assert by_eps[1.1 / 5.0] is False

    def test_evolve_writes_deterministic_outputs(self, tmp_path, capsys):
        cfg = _write(tmp_path, EVOLVE_CFG)
        assert main(["evolve", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
        assert main(["evolve", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
        capsys.readouterr()
        for name in ("trajectory.csv", "ledger.csv"):
            first = open(tmp_path / f"a.{name}", "rb").read()
            second = open(tmp_path / f"b.{name}", "rb").read()
            assert first == second
            assert first.decode().splitlines()[0] in (TRAJECTORY_HEADER, LEDGER_HEADER)
        summary = json.load(open(tmp_path / "a.summary.json"))
        assert summary["verdict"]["passed"] is True
        assert summary["regime"]["regime"] == "SmallContraction"

    def test_mode_command_mismatch(self, tmp_path, capsys):
        cfg = _write(tmp_path, RESOLVE_CFG)
        assert main(["evolve", "--config", cfg]) == 2
        assert json.loads(capsys.readouterr().err)["error"] == "config"

    def test_resolve_runs(self, tmp_path, capsys):
        cfg = _write(tmp_path, RESOLVE_CFG)
        assert main(["resolve", "--config", cfg, "--out", str(tmp_path / "r")]) == 0
        capsys.readouterr()
        assert (tmp_path / "r.trajectory.csv").exists()

    def test_config_error_exit_code(self, tmp_path, capsys):
        cfg = _write(tmp_path, "m=1\nn=2\na0=1\nb0=6\nwhat=1\n")
        assert main(["classify", "--config", cfg]) == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "config" and "line 5" in err["message"]

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["classify", "--config", str(tmp_path / "absent.cfg")]) == 2
        assert json.loads(capsys.readouterr().err)["error"] == "config"

    def test_numerical_error_exit_code(self, tmp_path, capsys):
        cfg = _write(tmp_path, "m=1\nn=2\na0=1\nb0=6\nrho_min=-0.5\nrho_max=0.5\ncount=65\n")
        assert main(["evolve", "--config", cfg, "--out", str(tmp_path / "n")]) == 3
        assert json.loads(capsys.readouterr().err)["error"] == "AnsatzError"

    def test_unwritable_output_exit_code(self, tmp_path, capsys):
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        cfg = _write(tmp_path, EVOLVE_CFG)
        code = main(["evolve", "--config", cfg, "--out", str(blocker / "sub" / "x")])
        assert code == 3
        capsys.readouterr()

    def test_verdict_failure_exit_code(self, tmp_path, capsys, monkeypatch):
        import calabi_krf.cli as cli_module

        monkeypatch.setattr(
            cli_module, "ledger_verdict", lambda *a, **k: VerdictReport(False, None, ())
        )
        cfg = _write(tmp_path, EVOLVE_CFG)
        assert main(["evolve", "--config", cfg, "--out", str(tmp_path / "v")]) == 1
        capsys.readouterr()

    def test_sweep_over_b0_list(self, tmp_path, capsys):
        text = (
            "m=1\nn=2\na0=1\nb0_list=1,6\nrho_min=-12\nrho_max=12\ncount=385\n"
            "output_every=100000\nt_end_fraction=0.05\n"
        )
        cfg = _write(tmp_path, text)
        assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["passed"] is True
        assert [row["b0"] for row in payload["tuples"]] == [1.0, 6.0]
        lines = open(tmp_path / "s.sweep.csv").read().splitlines()
        assert lines[0] == "m,n,a0,b0," + TRAJECTORY_HEADER
        assert len(lines) > 2

    def test_check_battery(self, capsys):
        assert main(["check"]) == 0
        out = capsys.readouterr().out
        assert "PASS: check battery" in out
        assert "FAIL" not in out
