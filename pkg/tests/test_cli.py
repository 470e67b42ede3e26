import numpy as np
import pytest

from ahharmonic.cli import DEFAULTS, load_config, main
from ahharmonic.errors import ConfigError, ResolutionError
from ahharmonic.mapio import read_csv, read_map

BASE = """
[source]
dim = 1
lattice = 6.283185307179586

[target]
dim = 1
lattice = 6.283185307179586
r_star = 10

[map]
A = 1
perturbation = {pert}
amplitude = 0.2

[grid]
n = 32
r_min = 0.025
r_max = 0.2
q = 0.85
{grid_extra}

[solver]
tol = 1e-6
max_steps = {max_steps}

[run]
delta_list = {deltas}
checkpoint_every = {ck}
"""


def config(tmp_path, name="c.ini", pert="sin", grid_extra="", max_steps=200000, deltas="0.1, 0.05", ck=0,
           text=None):
    path = tmp_path / name
    path.write_text(text if text is not None else BASE.format(
        pert=pert, grid_extra=grid_extra, max_steps=max_steps, deltas=deltas, ck=ck))
    return str(path)


def test_defaults_table():
    assert DEFAULTS["sigma"] == 0.2 and DEFAULTS["tol"] == 1e-6 and DEFAULTS["q"] == 0.85
    assert DEFAULTS["blend_fraction"] == 0.25


def test_load_config(tmp_path):
    cfg = load_config(config(tmp_path))
    assert cfg.boundary.eps == 0.2
    assert cfg.grid.r_min == pytest.approx(0.025)
    assert cfg.quad_n == 2048  # next power of two above 8 L / r_min
    assert cfg.delta_list == [0.1, 0.05]


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(config(tmp_path, deltas="0.05, 0.1"))
    with pytest.raises(ResolutionError):
        load_config(config(tmp_path, grid_extra="quad_n = 256"))
    text = BASE.format(pert="none", grid_extra="", max_steps=10, deltas="0.1", ck=0)
    with pytest.raises(ConfigError):
        load_config(config(tmp_path, text=text.replace("[target]\ndim = 1\nlattice = 6.283185307179586\n",
                                                       "[target]\ndim = 1\n")))
    with pytest.raises(ConfigError):
        load_config(config(tmp_path, text=text.replace("A = 1", "A = 0")))
    with pytest.raises(ConfigError):
        load_config(config(tmp_path, text=text.replace("dim = 1\nlattice = 6.283185307179586\n\n[target]",
                                                       "dim = 1\nlattice = 6.283185307179586\n"
                                                       "correction = linear:0.1\n\n[target]")))


def test_exit_codes(tmp_path, capsys):
    text = BASE.format(pert="none", grid_extra="", max_steps=10, deltas="0.1", ck=0)
    out = str(tmp_path / "out")
    missing = config(tmp_path, "m.ini", text=text.replace("lattice = 6.283185307179586\nr_star", "r_star"))
    assert main(["kernel-check", "--config", missing, "--out", out]) == 2
    assert main(["kernel-check", "--config", config(tmp_path, grid_extra="quad_n = 512"), "--out", out]) == 3
    assert main(["kernel-check", "--config", str(tmp_path / "nope.ini"), "--out", out]) == 2
    assert main(["solve", "--config", config(tmp_path, max_steps=5), "--out", out]) == 4
    assert "error" in capsys.readouterr().err


def test_kernel_check_csv(tmp_path):
    out = tmp_path / "out"
    assert main(["kernel-check", "--config", config(tmp_path, pert="none"), "--out", str(out)]) == 0
    meta, header, rows = read_csv(out / "kernel_check.csv")
    assert header == ["r", "I0", "I1", "I2", "C_grad", "C_lap"]
    assert meta["schema"].startswith("ahharmonic/")
    err = [abs(float(r[1]) - 1) for r in rows]
    assert err == sorted(err, reverse=True)


def test_build_approx_is_deterministic(tmp_path):
    cfg = config(tmp_path, pert="none")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["build-approx", "--config", cfg, "--out", str(a), "--seed", "3"]) == 0
    assert main(["build-approx", "--config", cfg, "--out", str(b), "--seed", "3"]) == 0
    for name in ("approx.ahhm", "tension_report.csv", "neumann.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    _, header, rows = read_csv(a / "neumann.csv")
    drho = np.array([float(r[header.index("drho_dr")]) for r in rows])
    assert np.max(np.abs(drho - 1)) < 0.02


def test_perturbed_tension_profile(tmp_path):
    out = tmp_path / "out"
    assert main(["build-approx", "--config", config(tmp_path), "--out", str(out)]) == 0
    _, header, rows = read_csv(out / "tension_report.csv")
    sup = [float(r[header.index("sup_tension_h")]) for r in rows]
    assert sup[0] > sup[len(sup) // 2] > sup[-1]


def test_resume_matches_uninterrupted(tmp_path):
    full, part, res = (tmp_path / d for d in ("full", "part", "res"))
    assert main(["solve", "--config", config(tmp_path, "a.ini"), "--out", str(full)]) == 0
    assert main(["solve", "--config", config(tmp_path, "b.ini", max_steps=150, ck=50), "--out", str(part)]) == 4
    ck = part / "checkpoint.ahhm"
    _, state = read_map(ck)
    assert state["step"] == 150
    assert main(["solve", "--config", config(tmp_path, "a.ini"), "--out", str(res), "--resume", str(ck)]) == 0
    u_full, s_full = read_map(full / "solution.ahhm")
    u_res, s_res = read_map(res / "solution.ahhm")
    assert np.max(np.abs(u_full.components - u_res.components)) <= 10 * 1e-6
    assert s_res["step"] == s_full["step"]


@pytest.mark.parametrize("cmd, files", [("exhaust", ["exhaustion.csv", "exhaustion_profiles.csv"]),
                                        ("barrier", ["barrier_certificate.csv"]),
                                        ("compare", ["comparison.csv"])])
def test_other_commands(tmp_path, cmd, files):
    out = tmp_path / "out"
    assert main([cmd, "--config", config(tmp_path), "--out", str(out)]) == 0
    for name in files:
        meta, header, rows = read_csv(out / name)
        assert rows and meta["config_hash"]
