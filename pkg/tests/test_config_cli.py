import math
from pathlib import Path

import pytest

from bfda import cli
from bfda.assimilation import COUPLED_COLUMNS, TRUTH_COLUMNS, RunRecord
from bfda.config import ConfigError, ExperimentConfig, parse_config, parse_text, sweep_points

SMALL = """\
grid.n = 16
physical.nu = 0.1
physical.alpha = 2.0
physical.a_tilde = 0.1
assim.eta = 10
interp.kind = fourier-lowpass
interp.h = 1.5707963267948966
forcing.amplitude = 0.01
stepper.dt = 0.05
stepper.spin_dt = 0.5
run.T_spin = 5   # short spin-up
run.T = 1
run.sample_stride = 2
"""


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL)
    return path


def _body(path):
    return "".join(line for line in open(path) if not line.startswith("#"))


def test_defaults_and_derived_values():
    cfg = ExperimentConfig()
    assert cfg["grid.n"] == 32 and cfg["assim.eta"] == 10.0
    q = cfg.assim()
    assert q.beta == cfg["physical.alpha"] and q.b_tilde == cfg["physical.a_tilde"]
    assert cfg.interpolant().c0 > 0


@pytest.mark.parametrize("text", [
    "grid.nn = 16\n",
    "grid.n = 16\ngrid.n = 32\n",
    "grid.n 16\n",
    "grid.n = sixteen\n",
    "grid.n = 15\n",
    "physical.nu = -1\n",
    "assim.eta = -2\n",
    "interp.kind = volume-average\ninterp.h = 2.0\n",
    "run.w0 = ones\n",
    "stepper.scheme = RK4\n",
    "physical.alpha = nan\n",
])
def test_bad_configs_are_rejected(text):
    with pytest.raises(ConfigError):
        parse_text(text)


def test_text_round_trip():
    cfg = parse_text(SMALL + "sweep.b_tilde = 0.101, 0.102\n")
    again = parse_text(cfg.to_text())
    assert again.values == cfg.values


def test_sweep_points_are_a_product():
    cfg = parse_text(SMALL + "sweep.b_tilde = 0.101, 0.102\nsweep.eta = 5, 10, 20\n")
    pts = sweep_points(cfg)
    assert len(pts) == 6
    assert {(p["b_tilde"], p["eta"]) for p in pts} == {(b, e) for b in (0.101, 0.102)
                                                       for e in (5.0, 10.0, 20.0)}
    with pytest.raises(ConfigError):
        sweep_points(parse_text(SMALL))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(tmp_path / "nope.cfg")
    assert cli.main(["run", str(tmp_path / "nope.cfg"), "--output", str(tmp_path)]) == 2


def test_run_writes_every_output(small_cfg, tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", str(small_cfg), "--output", str(out)]) == 0
    for name in ("run.csv", "truth.csv", "bounds.txt", "bounds.csv", "apriori.csv",
                 "summary.txt", "config.txt"):
        assert (out / name).exists(), name
    run = RunRecord.from_csv(out / "run.csv")
    truth = RunRecord.from_csv(out / "truth.csv")
    assert run.columns == COUPLED_COLUMNS and truth.columns == TRUTH_COLUMNS
    assert run["t"][-1] == pytest.approx(1.0)
    # the truth record runs through spin-up and the coupled window
    assert truth["t"][-1] == pytest.approx(6.0)
    assert run.meta["config.grid.n"] == "16"
    assert parse_config(out / "config.txt").values == parse_text(SMALL).override(
        {"run.output": str(out)}).values


def test_run_is_deterministic(small_cfg, tmp_path):
    for d in ("a", "b"):
        assert cli.main(["run", str(small_cfg), "--output", str(tmp_path / d)]) == 0
    for name in ("run.csv", "truth.csv"):
        assert _body(tmp_path / "a" / name) == _body(tmp_path / "b" / name)


def test_seed_changes_the_trajectory(small_cfg, tmp_path):
    cli.main(["run", str(small_cfg), "--output", str(tmp_path / "a")])
    cli.main(["run", str(small_cfg), "--output", str(tmp_path / "b"), "--seed", "5"])
    assert _body(tmp_path / "a" / "run.csv") != _body(tmp_path / "b" / "run.csv")


def test_zero_length_run(small_cfg, tmp_path):
    out = tmp_path / "z"
    assert cli.main(["run", str(small_cfg), "--output", str(out), "--set", "run.T=0"]) == 0
    assert len(RunRecord.from_csv(out / "run.csv")) == 1
    assert "fit = insufficient samples" in (out / "summary.txt").read_text()


def test_bad_override_exit_code(small_cfg, tmp_path):
    assert cli.main(["run", str(small_cfg), "--output", str(tmp_path),
                     "--set", "grid.m=3"]) == 2
    assert cli.main(["run", str(small_cfg), "--output", str(tmp_path),
                     "--set", "bounds.M=1e-12"]) == 2


def test_blow_up_exit_code(small_cfg, tmp_path, capsys):
    code = cli.main(["run", str(small_cfg), "--output", str(tmp_path),
                     "--set", "run.ic_amplitude=5", "--set", "stepper.spin_dt=2"])
    assert code == 3
    assert "blow-up" in capsys.readouterr().err


def test_verify_passes_and_catches_a_broken_projection(capsys):
    assert cli.main(["verify"]) == 0
    capsys.readouterr()
    assert cli.main(["verify", "--inject-fault", "leray"]) == 4
    out = capsys.readouterr().out
    assert "FAIL" in out and "leray-projection" in out.splitlines()[-1]


def test_bounds_command(small_cfg, tmp_path):
    out = tmp_path / "b"
    assert cli.main(["bounds", str(small_cfg), "--output", str(out)]) == 0
    text = (out / "bounds.txt").read_text()
    assert "M2 = " in text and "12ee2.h.holds = False" in text
    assert (out / "bounds.csv").read_text().count("\n") > 10


def test_sweep_summary_and_regression(small_cfg, tmp_path):
    out = tmp_path / "s"
    args = ["sweep", str(small_cfg), "--output", str(out), "--set", "run.T=2",
            "--set", "sweep.b_tilde=0.101, 0.102, 0.104"]
    assert cli.main(args) == 0
    rows = _body(out / "sweep_summary.csv").splitlines()
    assert rows[0].split(",") == list(cli.SUMMARY_COLUMNS)
    assert len(rows) == 4
    assert all(",ok," in r for r in rows[1:])
    for i in range(3):
        assert (out / f"point_{i:03d}.csv").exists()
    reg = _body(out / "regression.csv").splitlines()
    assert reg[1].startswith("b_tilde,all,")
    assert math.isfinite(float(reg[1].split(",")[2]))


def test_loglog_regression():
    slope, icpt, n = cli.loglog_regression([1, 2, 4, 8], [3, 6, 12, 24])
    assert slope == pytest.approx(1.0) and icpt == pytest.approx(math.log(3)) and n == 4
    assert math.isnan(cli.loglog_regression([0, 1], [1, 2])[0])


@pytest.mark.parametrize("path", sorted((Path(__file__).parent.parent / "configs").glob("*.cfg")),
                         ids=lambda p: p.name)
def test_shipped_configs_parse(path):
    cfg = parse_config(path)
    assert parse_text(cfg.to_text()).values == cfg.values
