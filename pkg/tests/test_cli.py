import json

import numpy as np
import pytest

from klplate import cli
from klplate.analytic import standing_wave
from klplate.errors import ConfigurationError
from klplate.fdops import PlateParams


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def read_csv(path):
    lines = path.read_text().splitlines()
    comments = [ln for ln in lines if ln.startswith("#")]
    body = [ln for ln in lines if not ln.startswith("#")]
    header = body[0].split(",")
    return comments, header, body[1:]


def read_vtk(path):
    lines = path.read_text().splitlines()
    dims = tuple(int(v) for v in lines[4].split()[1:])
    npts = int(lines[5].split()[1])
    pts = np.array([[float(v) for v in ln.split()] for ln in lines[6:6 + npts]])
    k = 6 + npts
    assert lines[k] == f"POINT_DATA {npts}"
    assert lines[k + 1] == "SCALARS w double 1" or lines[k + 1].startswith("SCALARS ")
    vals = np.array([float(v) for v in lines[k + 3:k + 3 + npts]])
    return lines, dims, pts, vals


def small_standing(tmp_path, **extra):
    cfg = dict(cli.PRESETS["standing-wave-12"])
    cfg["mesh"] = {"kind": "rectangle", "bounds": [0, 1, 0, 1], "grid": 20}
    cfg["t_end"] = 0.05
    cfg.update(extra)
    return write_config(tmp_path, cfg)


# -- configuration ----------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(cli.PRESETS))
def test_every_preset_resolves(name):
    cfg = cli.load_config(name, cli.PRESETS[name]["experiment"])
    assert cfg["experiment"] in cli.EXPERIMENTS
    cli.validate(cfg)
    cli.build_mesh(cfg["mesh"], grid=16)


def test_every_experiment_has_a_default_preset():
    assert set(cli.DEFAULT_PRESET) == set(cli.EXPERIMENTS)


@pytest.mark.parametrize("bad", [
    {"experiment": "run", "mesh": {"kind": "rectangle", "grid": 4}, "colour": "red"},
    {"experiment": "run", "mesh": {"kind": "rectangle", "grid": 4, "spacing": 0.1}},
    {"experiment": "run", "mesh": {"kind": "hexagon", "grid": 4}},
    {"experiment": "run", "mesh": {"kind": "rectangle", "grid": 4}, "params": {"D": 1, "E": 2}},
    {"experiment": "run", "mesh": {"kind": "rectangle", "grid": 4}, "scheme": "rk4"},
    {"experiment": "run", "mesh": {"kind": "rectangle", "grid": 4}, "boundary": {"kind": "glued"}},
])
def test_schema_rejects_bad_configs(bad):
    with pytest.raises(ConfigurationError):
        cli.resolve(bad, "run")


def test_experiment_mismatch_rejected(tmp_path):
    path = write_config(tmp_path, cli.PRESETS["zero"])
    assert cli.main(["eigs", "--config", path, "--out", str(tmp_path / "o"), "--quiet"]) == 2


def test_missing_config_file_is_a_config_error(tmp_path):
    assert cli.main(["run", "--config", str(tmp_path / "nope.json"), "--quiet"]) == 2


def test_overrides():
    cfg = cli.load_config("standing-wave-12", "run")
    cfg2 = cli.apply_overrides(cfg, scheme="nb2", csf=30.0, grid=16)
    assert (cfg2["scheme"], cfg2["C_sf"], cfg2["mesh"]["grid"]) == ("nb2", 30.0, 16)
    assert cfg["scheme"] == "pc22"
    mms = cli.apply_overrides(cli.load_config("mms-square", "mms"), grid=40)
    assert mms["mms"]["levels"] == [10, 20, 40]


def test_scheme_override_drops_stability_factor():
    cfg = cli.load_config("mms-annulus", "mms")
    assert (cfg["scheme"], cfg["C_sf"]) == ("nb2", cli.MMS_CSF_NB2)
    assert cli.apply_overrides(cfg, scheme="pc22")["C_sf"] is None
    assert cli.apply_overrides(cfg, scheme="nb2")["C_sf"] == cli.MMS_CSF_NB2
    assert cli.apply_overrides(cfg, scheme="pc22", csf=0.5)["C_sf"] == 0.5


def test_grid_conventions():
    m = cli.build_mesh({"kind": "rectangle", "bounds": [0, 0.4, 0, 0.2], "h": 1 / 300})
    assert (m.n1, m.n2) == (121, 61)
    m = cli.build_mesh({"kind": "rectangle", "bounds": [-1, 1, -1, 1], "grid": 10})
    assert (m.n1, m.n2, m.h1) == (11, 11, pytest.approx(0.2))
    m = cli.build_mesh({"kind": "annulus", "radii": [0.1, 0.5], "grid": 20})
    assert (m.n1, m.n2) == (21, 80)


def test_material_params():
    cfg = cli.load_config("standing-wave-12", "run")
    p = cli.build_params(cfg["params"])
    assert p.rho_h == pytest.approx(2.7)
    assert p.D == pytest.approx(6.4527, abs=5e-5)
    assert p.nu == 0.33 and p.K0 == 0


# -- run ------------------------------------------------------------------------------


def test_zero_run_writes_zero_outputs(tmp_path):
    out = tmp_path / "o"
    assert cli.main(["run", "--config", "zero", "--out", str(out), "--quiet"]) == 0
    comments, header, rows = read_csv(out / "probes.csv")
    assert header == ["t", "w_p1", "v_p1"]
    data = np.array([[float(v) for v in r.split(",")] for r in rows])
    assert not np.any(data[:, 1:])
    _, dims, _, vals = read_vtk(out / "w_final.vtk")
    assert dims == (11, 11, 1) and not np.any(vals)


def test_outputs_embed_resolved_config(tmp_path):
    out = tmp_path / "o"
    cli.main(["run", "--config", "zero", "--out", str(out), "--quiet"])
    resolved = json.loads((out / "config.json").read_text())
    comments, _, _ = read_csv(out / "probes.csv")
    assert json.loads(comments[1].removeprefix("# config: ")) == resolved
    lines, *_ = read_vtk(out / "w_final.vtk")
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert cli.config_digest(resolved) in lines[1] and len(lines[1]) <= 256
    assert lines[2:4] == ["ASCII", "DATASET STRUCTURED_GRID"]
    assert json.loads((out / "summary.json").read_text())["config"] == resolved
    assert "dt:" in (out / "diagnostics.log").read_text()


def test_identical_runs_give_identical_csv(tmp_path):
    path = small_standing(tmp_path)
    for d in ("a", "b"):
        assert cli.main(["run", "--config", path, "--out", str(tmp_path / d), "--quiet"]) == 0
    assert (tmp_path / "a" / "probes.csv").read_bytes() == (tmp_path / "b" / "probes.csv").read_bytes()
    assert (tmp_path / "a" / "w_final.vtk").read_bytes() == (tmp_path / "b" / "w_final.vtk").read_bytes()


@pytest.mark.parametrize("scheme", ["pc22", "nb2"])
def test_standing_wave_probe_tracks_exact_solution(tmp_path, scheme):
    path = small_standing(tmp_path)
    out = tmp_path / scheme
    assert cli.main(["run", "--config", path, "--out", str(out), "--scheme", scheme, "--csf", "0.9",
                     "--quiet"]) == 0
    _, _, rows = read_csv(out / "probes.csv")
    data = np.array([[float(v) for v in r.split(",")] for r in rows])
    p = PlateParams(rho_h=2.7, D=6.4527, nu=0.33)
    exact = standing_wave(1, 2, 0.2, 0.1, data[:, 0], 1.0, 1.0, p)
    # G_20 phase error at t=0.05 is about 1.6% of the amplitude (0.4% on G_40)
    assert np.abs(data[:, 1] - exact).max() <= 0.025 * np.abs(exact).max()


def test_snapshots_every_n_steps(tmp_path):
    path = small_standing(tmp_path, outputs={"vtk_every": 5}, dt=2e-4, t_end=12 * 2e-4)
    out = tmp_path / "o"
    assert cli.main(["run", "--config", path, "--out", str(out), "--quiet"]) == 0
    assert sorted(p.name for p in out.glob("w_0*.vtk")) == ["w_0000.vtk", "w_0001.vtk", "w_0002.vtk", "w_0003.vtk"]


def test_instability_exit_code(tmp_path):
    path = small_standing(tmp_path, t_end=0.5)
    assert cli.main(["run", "--config", path, "--out", str(tmp_path / "o"), "--csf", "3", "--quiet"]) == 3


def test_annulus_vtk_closes_the_ring(tmp_path):
    cfg = {"experiment": "run", "mesh": {"kind": "annulus", "radii": [0.5, 1.0], "grid": 4},
           "params": {"D": 1.0}, "t_end": 0.001}
    out = tmp_path / "o"
    assert cli.main(["run", "--config", write_config(tmp_path, cfg), "--out", str(out), "--quiet"]) == 0
    _, dims, pts, _ = read_vtk(out / "w_final.vtk")
    assert dims == (5, 17, 1)
    pts = pts.reshape(17, 5, 3)
    np.testing.assert_allclose(pts[0], pts[-1], atol=1e-12)


# -- other experiments ---------------------------------------------------------------


def test_mms_single_level_reports_na(tmp_path):
    cfg = dict(cli.PRESETS["mms-square"], mms={"levels": [10]})
    out = tmp_path / "o"
    assert cli.main(["mms", "--config", write_config(tmp_path, cfg), "--out", str(out), "--quiet"]) == 0
    text = (out / "mms.csv").read_text()
    assert "# estimated order: n/a" in text
    assert json.loads((out / "summary.json").read_text())["summary"]["order"] == "n/a"


def test_mms_square_clamped_second_order(tmp_path):
    cfg = cli.load_config("mms-square", "mms")
    # G_10 is pre-asymptotic for the clamped square
    cfg["mms"]["levels"] = [20, 40, 80]
    rows, order = cli.mms_table(cfg, workers=1)
    assert [r[0] for r in rows] == [20, 40, 80]
    assert order == pytest.approx(2.0, abs=0.3)


def test_mms_levels_must_increase():
    cfg = cli.load_config("mms-square", "mms")
    cfg["mms"]["levels"] = [20, 10, 40]
    with pytest.raises(ConfigurationError):
        cli.mms_table(cfg, workers=1)


def test_parallel_mms_matches_serial():
    cfg = cli.load_config("mms-annulus", "mms")
    cfg["mms"]["levels"] = [6, 8]
    serial, _ = cli.mms_table(cfg, workers=1)
    parallel, _ = cli.mms_table(cfg, workers=2)
    assert serial == parallel


def test_eigs_supported_square_matches_discrete_oracle(tmp_path):
    cfg = {"experiment": "eigs", "mesh": {"kind": "rectangle", "grid": 10}, "params": {"D": 1.0},
           "boundary": {"kind": "supported"}, "eigs": {"k": 3}}
    out = tmp_path / "o"
    assert cli.main(["eigs", "--config", write_config(tmp_path, cfg), "--out", str(out), "--quiet"]) == 0
    _, header, rows = read_csv(out / "modes.csv")
    assert header == ["index", "lambda", "f"]
    lam = np.array([float(r.split(",")[1]) for r in rows])
    k = 2 * np.sin(np.arange(1, 10) * np.pi / 20) / 0.1
    ref = np.sort(((k[:, None] ** 2 + k[None, :] ** 2) ** 2).ravel())[:3]
    np.testing.assert_allclose(lam, ref, rtol=1e-8)
    assert (out / "mode_003.vtk").exists()
    _, header, rows = read_csv(out / "nodal_002.csv")
    assert header == ["line", "x", "y"] and rows
    assert read_csv(out / "nodal_001.csv")[2] == []


def test_dt_command(tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.main(["dt", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "dt: 3.41118" in text and "regime: underdamped" in text
    _, header, rows = read_csv(out / "dt.csv")
    assert header[:3] == ["scheme", "C_sf", "dt"]
    assert float(rows[0].split(",")[2]) == pytest.approx(3.4111824e-06, rel=1e-7)


def test_spectrum_of_probe_file(tmp_path):
    dt = 0.01
    t = np.arange(3000) * dt
    w = np.cos(2 * np.pi * 3.0 * t)
    probe = tmp_path / "probe.csv"
    probe.write_text("# synthetic\nt,w_p1,v_p1\n" + "\n".join(f"{a},{b},0" for a, b in zip(t, w)) + "\n")
    cfg = {"experiment": "spectrum", "mesh": {"kind": "rectangle", "grid": 4},
           "spectrum": {"input": str(probe), "pad": 8}}
    out = tmp_path / "o"
    assert cli.main(["spectrum", "--config", write_config(tmp_path, cfg), "--out", str(out), "--quiet"]) == 0
    _, header, rows = read_csv(out / "peaks.csv")
    assert header == ["frequency", "power"]
    assert float(rows[0].split(",")[0]) == pytest.approx(3.0, abs=1e-3)
    assert read_csv(out / "spectrum.csv")[1] == ["freq", "power"]


def test_chladni_rejects_zero_frequency(tmp_path):
    cfg = dict(cli.PRESETS["chladni"], chladni={"frequency_hz": 0.0})
    path = write_config(tmp_path, cfg)
    assert cli.main(["chladni", "--config", path, "--out", str(tmp_path / "o"), "--grid", "8", "--quiet"]) == 2


def test_chladni_converts_hz_to_angular(tmp_path):
    cfg = dict(cli.PRESETS["chladni"], t_end=2e-4, chladni={"k": 8, "mode": 3})
    out = tmp_path / "o"
    assert cli.main(["chladni", "--config", write_config(tmp_path, cfg), "--out", str(out), "--grid", "16",
                     "--quiet"]) == 0
    s = json.loads((out / "summary.json").read_text())["summary"]
    _, _, rows = read_csv(out / "modes.csv")
    assert s["frequency_hz"] == pytest.approx(float(rows[2].split(",")[2]))
    assert s["xi"] == pytest.approx(2 * np.pi * s["frequency_hz"])
    assert (out / "nodal_final.csv").exists() and (out / "w_final.vtk").exists()


def test_moving_clamp_resonance_at_given_frequency(tmp_path):
    cfg = dict(cli.PRESETS["resonance"], mesh={"kind": "annulus", "radii": [0.1, 0.5], "grid": 10},
               t_end=2.0, dt=0.01, drive={"frequency_hz": 2.0, "window": 0.5})
    out = tmp_path / "o"
    assert cli.main(["resonance", "--config", write_config(tmp_path, cfg), "--out", str(out), "--quiet"]) == 0
    s = json.loads((out / "summary.json").read_text())["summary"]
    assert s["drive_hz"] == 2.0 and s["growth"] > 0
    _, header, _ = read_csv(out / "probes.csv")
    assert header == ["t", "w_p1", "v_p1"]


def test_unidentifiable_mode_is_a_solver_failure(tmp_path):
    cfg = dict(cli.PRESETS["resonance"], mesh={"kind": "annulus", "radii": [0.1, 0.5], "grid": 10},
               t_end=3.0, dt=0.02, drive={"identify_hz": 1.0, "mode": 60})
    path = write_config(tmp_path, cfg)
    assert cli.main(["resonance", "--config", path, "--out", str(tmp_path / "o"), "--quiet"]) == 4


def test_forced_against_series(tmp_path):
    cfg = dict(cli.PRESETS["forced"], mesh={"kind": "rectangle", "bounds": [0, 0.4, 0, 0.2], "h": 1 / 150},
               t_end=0.3)
    out = tmp_path / "o"
    assert cli.main(["forced", "--config", write_config(tmp_path, cfg), "--out", str(out), "--quiet"]) == 0
    _, header, rows = read_csv(out / "forced.csv")
    assert header == ["t", "w_numeric", "w_series"]
    s = json.loads((out / "summary.json").read_text())["summary"]
    # spatial error dominates: 0.13 at h=0.01, 0.031 at h=1/150
    assert s["relative_error"] < 0.05


def test_forced_requires_sine_load(tmp_path):
    cfg = cli.load_config("forced", "forced")
    cfg["forcing"]["phase"] = "cos"
    with pytest.raises(ConfigurationError):
        cli.cmd_forced(cfg, tmp_path)
