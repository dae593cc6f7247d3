import json
import os

import numpy as np
import pytest

import chwall as cw
from chwall.cli import main
from chwall.config import (
    ConfigError,
    RunConfig,
    config_hash,
    parse_config,
    serialize_config,
)


BASE_CONFIG = """\
[grid]
mode = strip2d
Lx = 1.0
Ly = 1.0
nx = 8
ny = 8

[potential]
kind = double_well

[constants]
b = 1.0
c = 1.0
alpha = 1.0
beta = 1.0

[stepper]
dt = 1e-3
t_end = 0.02

[initial]
kind = cosine
amplitude = 0.1
mean = 0.05

[io]
output_dir = {out}
snapshot_stride = 5

[run]
seed = 7
"""


def write_config(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_config_roundtrip(tmp_path):
    path = write_config(tmp_path, BASE_CONFIG.format(out=tmp_path / "o"))
    cfg = parse_config(path)
    path2 = write_config(tmp_path, serialize_config(cfg), "run2.ini")
    cfg2 = parse_config(path2)
    assert cfg == cfg2
    assert config_hash(cfg) == config_hash(cfg2)


def test_config_defaults_and_types(tmp_path):
    path = write_config(tmp_path, "[grid]\nmode = interval1d\nLy = 2.0\nny = 12\n")
    cfg = parse_config(path)
    assert cfg.mode == "interval1d"
    assert cfg.Ly == 2.0 and cfg.ny == 12
    assert cfg.b == 1.0 and cfg.stabilization_S is None


def test_config_rejects_negative_constant(tmp_path):
    bad = BASE_CONFIG.format(out=tmp_path) + "\n[constants]\nbeta = -1.0\n"
    # configparser forbids duplicate sections; build a clean bad config instead
    bad = bad.replace("beta = 1.0", "beta = -0.5", 1).split("\n[constants]\nbeta")[0]
    path = write_config(tmp_path, bad)
    with pytest.raises(ConfigError, match="beta.*positive"):
        parse_config(path)


def test_config_rejects_unknown_key(tmp_path):
    path = write_config(
        tmp_path, BASE_CONFIG.format(out=tmp_path) + "\n[grid2]\nzz = 1\n"
    )
    with pytest.raises(ConfigError, match="unknown"):
        parse_config(path)


def test_cli_rejects_malformed_config(tmp_path, capsys):
    bad = BASE_CONFIG.format(out=tmp_path / "o").replace("beta = 1.0", "beta = -2.0")
    path = write_config(tmp_path, bad)
    rc = main(["simulate", path])
    assert rc == 2
    err = capsys.readouterr().err
    assert "beta" in err and "positive" in err


def test_cli_simulate_constant_zero(tmp_path, capsys):
    text = BASE_CONFIG.format(out=tmp_path / "out").replace(
        "kind = cosine", "kind = constant"
    ).replace("mean = 0.05", "mean = 0.0")
    rc = main(["simulate", write_config(tmp_path, text)])
    assert rc == 0
    rows = (tmp_path / "out" / "series.csv").read_text().strip().split("\n")
    header, data = rows[0], rows[1:]
    assert header.startswith("t,e_bulk,e_surf,e_total")
    etotal = [float(r.split(",")[3]) for r in data]
    assert all(abs(e - 0.25) <= 1e-12 for e in etotal)


def test_cli_simulate_artifacts_and_manifest(tmp_path):
    out = tmp_path / "out"
    rc = main(["simulate", write_config(tmp_path, BASE_CONFIG.format(out=out))])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    # every artifact file is listed with its content hash
    on_disk = set()
    for root, _, names in os.walk(out):
        for n in names:
            if n not in ("manifest.json", ".lock"):
                on_disk.add(os.path.relpath(os.path.join(root, n), out))
    assert set(manifest["artifacts"]) == on_disk
    import hashlib

    for rel, digest in manifest["artifacts"].items():
        h = hashlib.sha256((out / rel).read_bytes()).hexdigest()
        assert h == digest
    assert manifest["aborted"] is False
    assert (out / "energy.svg").exists()
    assert len(list((out / "snapshots").glob("*.csv"))) >= 2


def test_cli_determinism_bit_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        rc = main(["simulate", write_config(tmp_path, BASE_CONFIG.format(out=out),
                                            f"{name}.ini")])
        assert rc == 0
        outs.append((out / "series.csv").read_bytes())
    assert outs[0] == outs[1]


def test_cli_output_lock(tmp_path, capsys):
    out = tmp_path / "locked"
    out.mkdir()
    (out / ".lock").write_text("123")
    rc = main(["simulate", write_config(tmp_path, BASE_CONFIG.format(out=out))])
    assert rc == 2
    assert "locked" in capsys.readouterr().err


def test_cli_equilibrium_and_classification(tmp_path, capsys):
    text = BASE_CONFIG.format(out=tmp_path / "eq").replace(
        "kind = cosine", "kind = constant"
    ).replace("mean = 0.05", "mean = 0.0")
    rc = main(["equilibrium", write_config(tmp_path, text, "eq.ini")])
    assert rc == 0
    line = (tmp_path / "eq" / "classification.txt").read_text()
    assert "minimum" in line  # unit strip: zero state is a hyperbolic minimum
    assert (tmp_path / "eq" / "equilibrium.csv").exists()
    assert (tmp_path / "eq" / "equilibrium.meta").exists()


def test_cli_equilibrium_from_saved_init_converges_fast(tmp_path):
    text = BASE_CONFIG.format(out=tmp_path / "eq1").replace(
        "kind = cosine", "kind = constant"
    ).replace("mean = 0.05", "mean = 0.0")
    assert main(["equilibrium", write_config(tmp_path, text, "eq1.ini")]) == 0
    text2 = text.replace(str(tmp_path / "eq1"), str(tmp_path / "eq2"))
    rc = main([
        "equilibrium", write_config(tmp_path, text2, "eq2.ini"),
        "--init", str(tmp_path / "eq1" / "equilibrium.csv"),
    ])
    assert rc == 0
    meta = dict(
        line.split("=", 1)
        for line in (tmp_path / "eq2" / "equilibrium.meta").read_text().splitlines()
    )
    assert int(meta["newton_iters"]) <= 2


def test_cli_analyze_insufficient_is_warning_not_error(tmp_path, capsys):
    sim_out = tmp_path / "sim"
    text = BASE_CONFIG.format(out=sim_out).replace(
        "kind = cosine", "kind = constant"
    ).replace("mean = 0.05", "mean = 0.0")
    assert main(["simulate", write_config(tmp_path, text, "s.ini")]) == 0
    eq_out = tmp_path / "eq"
    assert main(["equilibrium", write_config(
        tmp_path, text.replace(str(sim_out), str(eq_out)), "e.ini")]) == 0
    rc = main(["analyze", str(sim_out), str(eq_out / "equilibrium")])
    assert rc == 0
    err = capsys.readouterr().err
    assert "warning" in err
    assert (sim_out / "analysis" / "ls_report.txt").exists()
    assert (sim_out / "analysis" / "spectral_report.txt").exists()


def test_cli_equilibrium_escapes_saddle_on_tall_strip(tmp_path):
    # zero start is a saddle on the 8x8 strip; the pipeline must not report it
    text = BASE_CONFIG.format(out=tmp_path / "eq8")
    text = text.replace("Lx = 1.0", "Lx = 8.0").replace("Ly = 1.0", "Ly = 8.0")
    text = text.replace("nx = 8", "nx = 20").replace("ny = 8", "ny = 20")
    text = text.replace("kind = cosine", "kind = constant").replace(
        "mean = 0.05", "mean = 0.0"
    )
    assert main(["equilibrium", write_config(tmp_path, text, "eq8.ini")]) == 0
    meta = dict(
        line.split("=", 1)
        for line in (tmp_path / "eq8" / "equilibrium.meta").read_text().splitlines()
    )
    assert float(meta["bulk_res"]) + float(meta["bdry_res"]) <= 1e-8
    assert float(meta["energy"]) < 0.25 * 64.0  # strictly below the zero state
    from chwall.grid import load_field

    psi = load_field(tmp_path / "eq8" / "equilibrium.csv")
    assert np.std(psi.values) > 1e-3  # nonconstant profile


def test_cli_simulate_with_reference_records_distances(tmp_path):
    eq_out = tmp_path / "eq"
    eq_text = BASE_CONFIG.format(out=eq_out).replace(
        "kind = cosine", "kind = constant"
    ).replace("mean = 0.05", "mean = 0.0")
    assert main(["equilibrium", write_config(tmp_path, eq_text, "e.ini")]) == 0
    sim_out = tmp_path / "sim"
    sim_text = BASE_CONFIG.format(out=sim_out) + (
        f"\n[reference]\npsi_path = {eq_out / 'equilibrium'}\n"
    )
    assert main(["simulate", write_config(tmp_path, sim_text, "s.ini")]) == 0
    rows = (sim_out / "diagnostics.csv").read_text().strip().split("\n")[1:]
    xd = [float(r.split(",")[3]) for r in rows]
    assert all(np.isfinite(x) for x in xd)
    assert xd[-1] < xd[0]
    assert (sim_out / "decay.svg").exists()


def test_cli_analyze_missing_artifacts(tmp_path, capsys):
    empty = tmp_path / "empty"
    empty.mkdir()
    rc = main(["analyze", str(empty), str(tmp_path / "nope")])
    assert rc == 2
    assert "missing" in capsys.readouterr().err


def test_cli_check_passes(tmp_path, capsys):
    dump = tmp_path / "A.txt"
    rc = main(["check", "--dump-operator", str(dump)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "PASS" in out
    assert dump.exists()


def test_cli_guard_abort_exit_code(tmp_path, capsys):
    # an aborting run still writes artifacts and returns the guard exit code
    text = BASE_CONFIG.format(out=tmp_path / "ab")
    text = text.replace("dt = 1e-3", "dt = 1e-3\nscheme = newton\nnewton_tol = 1e-30\nnewton_max_iter = 2\ndt_min = 5e-4")
    rc = main(["simulate", write_config(tmp_path, text, "ab.ini")])
    assert rc == 3
    assert (tmp_path / "ab" / "series.csv").exists()
    manifest = json.loads((tmp_path / "ab" / "manifest.json").read_text())
    assert manifest["aborted"] is True


def test_make_initial_kinds(tmp_path):
    from chwall.cli import make_initial

    g = cw.build_grid("strip2d", Lx=1.0, Ly=1.0, nx=8, ny=8)
    cfg = RunConfig(initial_kind="random_fourier", initial_amplitude=0.2,
                    initial_mean=0.1, initial_modes=2, seed=3)
    u = make_initial(g, cfg)
    assert abs(np.max(np.abs(u.values - 0.1)) - 0.2) <= 1e-12
    u2 = make_initial(g, cfg)
    assert np.array_equal(u.values, u2.values)  # seeded determinism
    gi = cw.build_grid("interval1d", Ly=1.0, ny=8)
    ui = make_initial(gi, RunConfig(initial_kind="random_fourier", seed=1))
    assert ui.values.shape == (8,)
