"""Command-line experiment drivers.

Every subcommand reads a JSON configuration (or a named preset), validates it
against :data:`CONFIG_SCHEMA`, applies the command-line overrides and writes
its results under ``--out``.  CSV files carry the resolved configuration as
``#`` comment lines; field snapshots are legacy ASCII VTK structured grids.

Exit codes: 0 success, 2 configuration error, 3 numerical instability,
4 solver failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .analytic import SeriesTruncation, error_norms, forced_response, manufactured_solution, standing_wave_solution
from .errors import ConfigurationError, InstabilityError, SolverError
from .fdops import (BoundaryKind, BoundarySpec, Field, LocalizedSinusoid, PlateOperator, PlateParams,
                    SideCondition, ZeroForcing, harmonic_clamp)
from .mesh import Mesh, build_annulus, build_rectangle, min_physical_spacing
from .modal import Mode, degenerate_pairs, nodal_lines, solve_modes
from .spectra import envelope_period, estimate_order, find_peaks, isolated_peaks, power_spectrum
from .stability import fourier_symbol_max, stable_dt
from .stepper import Integrator, RunResult, SimulationConfig

log = logging.getLogger("klplate")

EXPERIMENTS = ("run", "mms", "eigs", "dt", "spectrum", "resonance", "beat", "chladni", "forced")
KINDS = [k.value for k in BoundaryKind]

EXIT_OK, EXIT_CONFIG, EXIT_UNSTABLE, EXIT_SOLVER = 0, 2, 3, 4

# -- schema -------------------------------------------------------------------

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_point = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}


def _obj(props, required=()):
    return {"type": "object", "additionalProperties": False, "properties": props,
            "required": list(required)}


_side = {"oneOf": [
    {"enum": KINDS},
    _obj({"kind": {"enum": KINDS},
          "motion": _obj({"amplitude": _num, "frequency_hz": {"type": "number", "minimum": 0}})},
         ["kind"]),
]}

CONFIG_SCHEMA = _obj({
    "experiment": {"enum": list(EXPERIMENTS)},
    "mesh": _obj({
        "kind": {"enum": ["rectangle", "annulus"]},
        "bounds": {"type": "array", "items": _num, "minItems": 4, "maxItems": 4},
        "radii": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
        "grid": {"type": "integer", "minimum": 2},
        "h": _pos,
        "points": {"type": "array", "items": {"type": "integer", "minimum": 3}, "minItems": 2, "maxItems": 2},
    }, ["kind"]),
    "params": _obj({
        "rho_h": _pos, "K0": _num, "T": _num, "D": _num, "K1": _num, "T1": _num, "nu": _num,
        "material": _obj({"E": _pos, "thickness": _pos, "density": _pos, "nu": _num},
                         ["E", "thickness", "density", "nu"]),
    }),
    "boundary": _obj({
        "kind": {"enum": KINDS},
        "sides": {"type": "object", "additionalProperties": _side},
        "data": {"enum": ["none", "mms"]},
        "pins": {"type": "array", "items": _point},
    }),
    "forcing": _obj({
        "kind": {"enum": ["none", "mms", "harmonic"]},
        "F0": _num, "xi": {"type": "number", "minimum": 0}, "frequency_hz": {"type": "number", "minimum": 0},
        "phase": {"enum": ["sin", "cos"]},
        "region": {"oneOf": [{"type": "null"},
                             {"type": "array", "items": _num, "minItems": 4, "maxItems": 4}]},
    }, ["kind"]),
    "initial": _obj({"kind": {"enum": ["zero", "mms", "standing_wave"]},
                     "m": {"type": "integer", "minimum": 1}, "n": {"type": "integer", "minimum": 1}},
                    ["kind"]),
    "scheme": {"enum": ["pc22", "nb2"]},
    "C_sf": {"oneOf": [{"type": "null"}, _pos]},
    "dt": {"oneOf": [{"type": "null"}, _pos]},
    "t_end": _pos,
    "probes": {"type": "array", "items": _point},
    "outputs": _obj({"probe_csv": {"type": "boolean"}, "final_vtk": {"type": "boolean"},
                     "vtk_every": {"type": "integer", "minimum": 0}}),
    "mms": _obj({"levels": {"type": "array", "items": {"type": "integer", "minimum": 2}, "minItems": 1},
                 "workers": {"type": "integer", "minimum": 0}}),
    "eigs": _obj({"k": {"type": "integer", "minimum": 1}, "pair_tolerance": _pos,
                  "nodal_lines": {"type": "boolean"}}),
    "spectrum": _obj({"pad": {"type": "integer", "minimum": 1}, "threshold": _pos, "probe": {"type": "integer", "minimum": 1},
                      "input": {"type": "string"}}),
    "drive": _obj({"frequency_hz": {"oneOf": [{"type": "null"}, _num]},
                   "identify_hz": _pos, "mode": {"type": "integer", "minimum": 1},
                   "natural_hz": {"oneOf": [{"type": "null"}, _pos]}, "window": _pos}),
    "chladni": _obj({"k": {"type": "integer", "minimum": 1},
                     "mode": {"oneOf": [{"type": "null"}, {"type": "integer", "minimum": 1}]},
                     "near_hz": {"oneOf": [{"type": "null"}, _pos]},
                     "frequency_hz": {"oneOf": [{"type": "null"}, _num]}}),
    "forced": _obj({"terms": {"type": "integer", "minimum": 1}}),
})

DEFAULTS = {
    "boundary": {"kind": "supported", "data": "none", "pins": []},
    "forcing": {"kind": "none"},
    "initial": {"kind": "zero"},
    "scheme": "pc22",
    "C_sf": None,
    "dt": None,
    "t_end": 1.0,
    "probes": [],
    "outputs": {"probe_csv": True, "final_vtk": True, "vtk_every": 0},
    "params": {"rho_h": 1.0, "K0": 0.0, "T": 0.0, "D": 0.0, "K1": 0.0, "T1": 0.0, "nu": 0.3},
    "mms": {"levels": [10, 20, 40, 80], "workers": 0},
    "eigs": {"k": 25, "pair_tolerance": 5e-3, "nodal_lines": True},
    "spectrum": {"pad": 8, "threshold": 0.1, "probe": 1},
    "drive": {"frequency_hz": None, "identify_hz": 1.0, "mode": 2,
              "natural_hz": None, "window": 5.0},
    "chladni": {"k": 30, "mode": None, "near_hz": None, "frequency_hz": None},
    "forced": {"terms": 7},
}

# -- presets ------------------------------------------------------------------

# NB2 at its default C_sf takes one step on G_10, so temporal error masks the
# spatial order on coarse grids; convergence studies use a smaller factor.
MMS_CSF_NB2 = 9.0

ALUMINIUM = {"material": {"E": 69e9, "thickness": 1e-3, "density": 2700.0, "nu": 0.33}}
MMS = {"rho_h": 1.0, "K0": 2.0, "T": 1.0, "D": 0.01, "K1": 5.0, "T1": 0.1, "nu": 0.1}
MODAL = {"rho_h": 1.0, "K0": 2.0, "T": 1.0, "D": 2.0, "nu": 0.1}
RING = {"rho_h": 1.0, "D": 0.01, "nu": 0.3}


def _standing(m, n, grid=80):
    return {"experiment": "run", "mesh": {"kind": "rectangle", "bounds": [0, 1, 0, 1], "grid": grid},
            "params": ALUMINIUM, "boundary": {"kind": "supported"},
            "initial": {"kind": "standing_wave", "m": m, "n": n}, "t_end": 1.0, "probes": [[0.2, 0.1]]}


def _ring(experiment, **drive):
    return {"experiment": experiment, "mesh": {"kind": "annulus", "radii": [0.1, 0.5], "grid": 80},
            "params": RING, "boundary": {"sides": {"inner": {"kind": "clamped", "motion": {"amplitude": 1.0}},
                                                   "outer": "free"}},
            "scheme": "nb2", "dt": 0.005, "t_end": 30.0, "probes": [[-0.2, 0.0]],
            "outputs": {"final_vtk": True}, "spectrum": {"pad": 8}, "drive": drive}


PRESETS = {
    "zero": {"experiment": "run", "mesh": {"kind": "rectangle", "grid": 10}, "params": {"D": 1.0},
             "t_end": 0.01, "probes": [[0.5, 0.5]]},
    "standing-wave-11": _standing(1, 1),
    "standing-wave-12": _standing(1, 2),
    "mms-square": {"experiment": "mms", "mesh": {"kind": "rectangle", "bounds": [-1, 1, -1, 1]},
                   "params": MMS, "boundary": {"kind": "clamped", "data": "mms"}, "forcing": {"kind": "mms"},
                   "initial": {"kind": "mms"}},
    "mms-annulus": {"experiment": "mms", "mesh": {"kind": "annulus", "radii": [0.5, 1.0]}, "params": MMS,
                    "boundary": {"kind": "supported", "data": "mms"}, "forcing": {"kind": "mms"},
                    "initial": {"kind": "mms"}, "scheme": "nb2", "C_sf": MMS_CSF_NB2},
    "eigs-square": {"experiment": "eigs", "mesh": {"kind": "rectangle", "bounds": [0, 0.25, 0, 0.25], "grid": 80},
                    "params": MODAL, "boundary": {"kind": "clamped"}, "eigs": {"k": 25}},
    "eigs-annulus": {"experiment": "eigs", "mesh": {"kind": "annulus", "radii": [0.1, 0.5], "grid": 40},
                     "params": MODAL, "boundary": {"kind": "supported"}, "eigs": {"k": 25}},
    "dt": dict(_standing(1, 2, 160), experiment="dt"),
    "spectrum": dict(_standing(1, 2), experiment="spectrum"),
    "resonance": _ring("resonance", identify_hz=1.0, mode=2),
    "beat": _ring("beat", frequency_hz=2.0, identify_hz=1.0, mode=2),
    "chladni": {"experiment": "chladni", "mesh": {"kind": "rectangle", "bounds": [0, 0.24, 0, 0.24], "grid": 160},
                "params": ALUMINIUM, "boundary": {"kind": "free", "pins": [[0.12, 0.12]]},
                "forcing": {"kind": "harmonic", "F0": 1e10, "phase": "cos", "region": [0.11, 0.13, 0.11, 0.13]},
                "scheme": "nb2", "t_end": 1.0, "chladni": {"k": 30, "near_hz": 609.7}},
    "forced": {"experiment": "forced", "mesh": {"kind": "rectangle", "bounds": [0, 0.4, 0, 0.2], "h": 1 / 300},
               "params": {"rho_h": 1.0, "D": 0.1, "nu": 0.3}, "boundary": {"kind": "supported"},
               "forcing": {"kind": "harmonic", "F0": 1000.0, "xi": 40.0, "phase": "sin", "region": None},
               "scheme": "nb2", "t_end": 1.0, "probes": [[0.2, 0.1]]},
}

DEFAULT_PRESET = {"run": "standing-wave-12", "mms": "mms-square", "eigs": "eigs-square", "dt": "dt",
                  "spectrum": "spectrum", "resonance": "resonance", "beat": "beat", "chladni": "chladni",
                  "forced": "forced"}


def validate(cfg):
    """Raise :class:`ConfigurationError` unless ``cfg`` satisfies the schema."""
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"config error at {where}: {exc.message}") from None


def resolve(cfg, experiment=None):
    """Validated copy of ``cfg`` with every default filled in."""
    cfg = copy.deepcopy(cfg)
    validate(cfg)
    if experiment is not None:
        if cfg.get("experiment", experiment) != experiment:
            raise ConfigurationError(f"config is for {cfg['experiment']!r}, not {experiment!r}")
        cfg["experiment"] = experiment
    if "experiment" not in cfg:
        raise ConfigurationError("config does not name an experiment")
    if "mesh" not in cfg:
        raise ConfigurationError("config needs a mesh")
    for key, default in DEFAULTS.items():
        if isinstance(default, dict):
            merged = copy.deepcopy(default)
            merged.update(cfg.get(key, {}))
            cfg[key] = merged
        else:
            cfg.setdefault(key, default)
    if "material" in cfg["params"]:
        # material presets fix rho_h, D and nu; the remaining coefficients default to zero
        for k in ("rho_h", "D", "nu"):
            cfg["params"].pop(k, None)
    validate(cfg)
    return cfg


def load_config(source, experiment):
    """Config from a JSON file path or preset name (``None``: default preset)."""
    if source is None:
        source = DEFAULT_PRESET[experiment]
    if source in PRESETS:
        raw = copy.deepcopy(PRESETS[source])
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigurationError(f"no config file or preset named {source!r}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    return resolve(raw, experiment)


def apply_overrides(cfg, scheme=None, csf=None, grid=None):
    cfg = copy.deepcopy(cfg)
    if scheme is not None and scheme != cfg["scheme"]:
        # stability factors are scheme specific; fall back to the new default
        cfg["scheme"] = scheme
        cfg["C_sf"] = None
    if csf is not None:
        cfg["C_sf"] = float(csf)
        cfg["dt"] = None
    if grid is not None:
        if cfg["experiment"] == "mms":
            levels = [10 * 2**j for j in range(12) if 10 * 2**j <= grid]
            cfg["mms"]["levels"] = levels or [grid]
        else:
            for k in ("h", "points"):
                cfg["mesh"].pop(k, None)
            cfg["mesh"]["grid"] = int(grid)
    validate(cfg)
    return cfg


# -- builders ----------------------------------------------------------------


def build_mesh(spec, grid=None) -> Mesh:
    """Mesh from its config block; ``grid`` overrides the resolution with ``G_N``.

    ``G_N`` has ``N`` intervals along the first rectangle axis (the second
    axis keeps the same spacing) or ``N`` radial and ``4N`` angular intervals
    on an annulus.
    """
    spec = dict(spec)
    if grid is not None:
        spec = {k: v for k, v in spec.items() if k not in ("h", "points")}
        spec["grid"] = grid
    if spec["kind"] == "rectangle":
        x0, x1, y0, y1 = spec.get("bounds", [0.0, 1.0, 0.0, 1.0])
        if "points" in spec:
            n1, n2 = spec["points"]
        elif "h" in spec:
            n1, n2 = round((x1 - x0) / spec["h"]) + 1, round((y1 - y0) / spec["h"]) + 1
        elif "grid" in spec:
            N = spec["grid"]
            n1, n2 = N + 1, round(N * (y1 - y0) / (x1 - x0)) + 1
        else:
            raise ConfigurationError("mesh needs one of grid, h or points")
        return build_rectangle(x0, x1, y0, y1, int(n1), int(n2))
    r_in, r_out = spec.get("radii", [0.5, 1.0])
    if "points" in spec:
        n1, n2 = spec["points"]
    elif "h" in spec:
        n1 = round((r_out - r_in) / spec["h"]) + 1
        n2 = 4 * (n1 - 1)
    elif "grid" in spec:
        n1, n2 = spec["grid"] + 1, 4 * spec["grid"]
    else:
        raise ConfigurationError("mesh needs one of grid, h or points")
    return build_annulus(r_in, r_out, int(n1), int(n2))


def build_params(spec) -> PlateParams:
    spec = dict(spec)
    mat = spec.pop("material", None)
    if mat is not None:
        extra = {k: spec[k] for k in ("K0", "T", "K1", "T1") if k in spec}
        return PlateParams.from_material(mat["E"], mat["thickness"], mat["density"], mat["nu"], **extra)
    return PlateParams(**spec)


def _side_kinds(cfg, m):
    b = cfg["boundary"]
    kinds = {}
    sides = b.get("sides", {})
    for s in m.sides:
        v = sides.get(s.name, b.get("kind"))
        if v is None:
            raise ConfigurationError(f"no boundary condition for side {s.name!r}")
        kinds[s.name] = v if isinstance(v, str) else v["kind"]
    unknown = set(sides) - {s.name for s in m.sides}
    if unknown:
        raise ConfigurationError(f"unknown sides {sorted(unknown)}; mesh has {[s.name for s in m.sides]}")
    return kinds


def build_bspec(cfg, m: Mesh, p: PlateParams, drive_hz=None) -> BoundarySpec:
    """Boundary specification; ``drive_hz`` overrides every prescribed edge motion."""
    b = cfg["boundary"]
    kinds = _side_kinds(cfg, m)
    pins = tuple(tuple(q) for q in b["pins"])
    if b["data"] == "mms":
        return manufactured_solution().boundary_spec(m, kinds, p.nu, pins=pins)
    sides = {}
    for name, kind in kinds.items():
        v = b.get("sides", {}).get(name)
        data = None
        if isinstance(v, dict) and "motion" in v:
            if kind != "clamped":
                raise ConfigurationError(f"edge motion needs a clamped side, {name!r} is {kind}")
            f = v["motion"].get("frequency_hz") if drive_hz is None else drive_hz
            if f is None:
                raise ConfigurationError(f"edge motion on {name!r} has no frequency")
            data = harmonic_clamp(v["motion"].get("amplitude", 1.0), 2 * np.pi * f)
        sides[name] = SideCondition(kind, data)
    return BoundarySpec(sides, pins=pins)


def build_forcing(cfg, p: PlateParams, frequency_hz=None):
    f = cfg["forcing"]
    if f["kind"] == "none":
        return ZeroForcing()
    if f["kind"] == "mms":
        return manufactured_solution().forcing(p)
    if frequency_hz is not None:
        xi = 2 * np.pi * frequency_hz
    elif "xi" in f and "frequency_hz" in f:
        raise ConfigurationError("give the forcing frequency as xi or frequency_hz, not both")
    elif "xi" in f:
        xi = f["xi"]
    elif "frequency_hz" in f:
        xi = 2 * np.pi * f["frequency_hz"]
    else:
        raise ConfigurationError("harmonic forcing needs xi or frequency_hz")
    region = f.get("region")
    return LocalizedSinusoid(f.get("F0", 1.0), xi, None if region is None else tuple(region), f.get("phase", "cos"))


def build_initial(cfg, m: Mesh, p: PlateParams):
    ic = cfg["initial"]
    if ic["kind"] == "zero":
        return None, None
    if ic["kind"] == "mms":
        sol = manufactured_solution()
        return (lambda x, y: sol(x, y, 0.0)), (lambda x, y: sol.d(0, 0, x, y, 0.0, 1))
    if m.is_annulus:
        raise ConfigurationError("standing-wave initial data needs a rectangle")
    k = m.kind
    sol = standing_wave_solution(ic.get("m", 1), ic.get("n", 1), k.x1 - k.x0, k.y1 - k.y0, p, k.x0, k.y0)
    return (lambda x, y: sol(x, y, 0.0)), None


def build_simulation(cfg, grid=None, drive_hz=None, forcing_hz=None) -> SimulationConfig:
    m = build_mesh(cfg["mesh"], grid)
    p = build_params(cfg["params"])
    w0, v0 = build_initial(cfg, m, p)
    return SimulationConfig(
        p, m, build_bspec(cfg, m, p, drive_hz), forcing=build_forcing(cfg, p, forcing_hz),
        scheme=cfg["scheme"], t_end=cfg["t_end"], C_sf=cfg["C_sf"], dt=cfg["dt"],
        probes=[tuple(q) for q in cfg["probes"]], snapshot_every=cfg["outputs"]["vtk_every"], w0=w0, v0=v0)


# -- output -------------------------------------------------------------------


def config_text(cfg):
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_digest(cfg):
    return hashlib.sha256(config_text(cfg).encode()).hexdigest()[:16]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows, cfg, footer=()):
    """CSV with the resolved config as leading ``#`` comments."""
    lines = [f"# klplate {__version__}", f"# config: {config_text(cfg)}", ",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    lines += [f"# {note}" for note in footer]
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)


def write_vtk(path, m: Mesh, values, cfg, t=0.0, name="w"):
    """Physical points of ``values`` as a legacy ASCII VTK structured grid.

    The title line records the time and a digest of the resolved config
    (legacy titles are limited to 256 characters); the annulus seam column is
    repeated so the ring closes.
    """
    sl = m.interior
    X, Y = m.x[sl], m.y[sl]
    V = np.asarray(values, dtype=float).reshape(m.shape)[sl]
    if m.is_annulus:
        X, Y, V = (np.concatenate([a, a[:, :1]], axis=1) for a in (X, Y, V))
    n1, n2 = V.shape
    # VTK runs the first index fastest
    Xf, Yf, Vf = (a.T.ravel() for a in (X, Y, V))
    out = ["# vtk DataFile Version 3.0",
           f"klplate {name} t={float(t)!r} config-sha256={config_digest(cfg)}",
           "ASCII", "DATASET STRUCTURED_GRID", f"DIMENSIONS {n1} {n2} 1", f"POINTS {Vf.size} double"]
    out += [f"{x!r} {y!r} 0.0" for x, y in zip(Xf.tolist(), Yf.tolist())]
    out += [f"POINT_DATA {Vf.size}", f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
    out += [repr(v) for v in Vf.tolist()]
    Path(path).write_text("\n".join(out) + "\n")
    return Path(path)


def write_probe_csv(path, r: RunResult, cfg):
    header = ["t"]
    for j in range(r.probe_w.shape[1]):
        header += [f"w_p{j + 1}", f"v_p{j + 1}"]
    rows = []
    for i, t in enumerate(r.times):
        row = [t]
        for j in range(r.probe_w.shape[1]):
            row += [r.probe_w[i, j], r.probe_v[i, j]]
        rows.append(row)
    return write_csv(path, header, rows, cfg)


def write_polylines(path, lines, cfg):
    rows = [(k + 1, x, y) for k, ln in enumerate(lines) for x, y in ln]
    return write_csv(path, ["line", "x", "y"], rows, cfg)


def write_diagnostics(path, diag, cfg):
    lines = [f"# klplate {__version__}", f"# config: {config_text(cfg)}"]
    for k in sorted(diag):
        v = diag[k]
        if isinstance(v, complex):
            v = f"{v.real!r}{v.imag:+}j"
        lines.append(f"{k}: {v}")
    Path(path).write_text("\n".join(lines) + "\n")


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, np.generic):
        return v.item()
    return v


def write_summary(out, summary, cfg):
    doc = {"klplate": __version__, "config": cfg, "summary": _jsonable(summary)}
    (Path(out) / "summary.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# -- experiments -----------------------------------------------------------------


def _simulate(cfg, out, prefix="", **kw):
    sim = build_simulation(cfg, **kw)
    it = Integrator(sim)
    r = it.run()
    m = sim.mesh
    if cfg["outputs"]["probe_csv"] and sim.probes:
        write_probe_csv(out / f"{prefix}probes.csv", r, cfg)
    for k, (t, w) in enumerate(r.snapshots):
        write_vtk(out / f"{prefix}w_{k:04d}.vtk", m, w, cfg, t)
    if cfg["outputs"]["final_vtk"]:
        write_vtk(out / f"{prefix}w_final.vtk", m, r.field(), cfg, r.state.t)
    write_diagnostics(out / f"{prefix}diagnostics.log", r.diagnostics, cfg)
    return sim, r


def cmd_run(cfg, out):
    sim, r = _simulate(cfg, out)
    d = r.diagnostics
    return {"dt": d["dt"], "steps": d["n_steps"], "lambda_max": d["lambda_max"], "regime": d["regime"],
            "max_abs_w": float(np.abs(r.field()[sim.mesh.interior]).max())}


def _mms_level(args):
    cfg, N = args
    sim = build_simulation(cfg, grid=N)
    it = Integrator(sim)
    r = it.run()
    e = error_norms(r.state.w, manufactured_solution(), sim.t_end, mesh=sim.mesh, grid=f"G_{N}")
    return N, sim.mesh.h1, e.max_norm, e.l2_norm, it.n_steps


def mms_table(cfg, workers=None):
    """Errors at ``t_end`` on every level, ordered by grid; order or ``None``."""
    levels = list(cfg["mms"]["levels"])
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigurationError(f"mms levels must be strictly increasing, got {levels}")
    if (cfg["boundary"]["data"], cfg["forcing"]["kind"], cfg["initial"]["kind"]) != ("mms",) * 3:
        raise ConfigurationError("mms studies need manufactured boundary data, forcing and initial data")
    workers = cfg["mms"]["workers"] if workers is None else workers
    workers = workers or os.cpu_count() or 1
    jobs = [(cfg, N) for N in levels]
    if workers <= 1 or len(jobs) == 1:
        rows = [_mms_level(j) for j in jobs]
    else:
        # largest grids first so the slowest level does not start last
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            futures = {j[1]: pool.submit(_mms_level, j) for j in sorted(jobs, key=lambda j: -j[1])}
            rows = [futures[N].result() for N in levels]
    order = None
    if len(rows) >= 3:
        order = estimate_order([r[2] for r in rows], [r[1] for r in rows])
    return rows, order


def cmd_mms(cfg, out):
    rows, order = mms_table(cfg)
    note = f"estimated order (max norm): {order!r}" if order is not None else "estimated order: n/a"
    write_csv(out / "mms.csv", ["grid", "h", "max_error", "l2_error", "steps"],
              [(f"G_{N}", h, e, l2, n) for N, h, e, l2, n in rows], cfg, footer=[note])
    return {"levels": [r[0] for r in rows], "max_errors": [r[2] for r in rows],
            "order": "n/a" if order is None else order}


def cmd_eigs(cfg, out):
    m = build_mesh(cfg["mesh"])
    p = build_params(cfg["params"])
    b = build_bspec(cfg, m, p)
    e = cfg["eigs"]
    modes = solve_modes(p, m, b, e["k"])
    write_csv(out / "modes.csv", ["index", "lambda", "f"], [(i + 1, md.lam, md.f) for i, md in enumerate(modes)], cfg)
    for i, md in enumerate(modes):
        write_vtk(out / f"mode_{i + 1:03d}.vtk", m, md.phi.values, cfg, 0.0, name="phi")
        if e["nodal_lines"]:
            write_polylines(out / f"nodal_{i + 1:03d}.csv", nodal_lines(md), cfg)
    pairs, distinct = degenerate_pairs([md.f for md in modes], e["pair_tolerance"])
    return {"frequencies": [md.f for md in modes], "pairs": pairs, "distinct": distinct}


def cmd_dt(cfg, out):
    m = build_mesh(cfg["mesh"])
    p = build_params(cfg["params"])
    sim = SimulationConfig(p, m, BoundarySpec.uniform(m, "supported"), scheme=cfg["scheme"], C_sf=cfg["C_sf"])
    h1, h2 = (min_physical_spacing(m),) * 2 if m.is_annulus else (m.h1, m.h2)
    bounds = fourier_symbol_max(p, h1, h2)
    dt = cfg["dt"] if cfg["dt"] is not None else stable_dt(p, m, sim.stability_factor)
    lam = bounds.lambda_max
    write_csv(out / "dt.csv", ["scheme", "C_sf", "dt", "lambda_re", "lambda_im", "regime"],
              [(sim.scheme, sim.stability_factor, dt, lam.real, lam.imag, bounds.regime.value)], cfg)
    return {"dt": dt, "lambda_max": lam, "regime": bounds.regime.value, "C_sf": sim.stability_factor}


def _read_probe_series(path, probe):
    with open(path) as f:
        rows = list(csv.reader(line for line in f if line.strip() and not line.startswith("#")))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    col = header.index(f"w_p{probe}")
    return body[:, 0], body[:, col]


def spectrum_of(times, series, pad):
    dt = float(times[1] - times[0])
    return power_spectrum(series, dt, pad=pad)


def _write_spectrum(out, prefix, s, peaks, cfg):
    write_csv(out / f"{prefix}spectrum.csv", ["freq", "power"], zip(s.freqs, s.power), cfg)
    write_csv(out / f"{prefix}peaks.csv", ["frequency", "power"], [(q.frequency, q.power) for q in peaks], cfg)


def cmd_spectrum(cfg, out):
    sp = cfg["spectrum"]
    if "input" in sp:
        times, w = _read_probe_series(sp["input"], sp["probe"])
    else:
        sim, r = _simulate(cfg, out)
        if sp["probe"] > r.probe_w.shape[1]:
            raise ConfigurationError(f"probe {sp['probe']} requested, {r.probe_w.shape[1]} configured")
        times, w = r.times, r.probe_w[:, sp["probe"] - 1]
    s = spectrum_of(times, w, sp["pad"])
    peaks = find_peaks(s, sp["threshold"])
    _write_spectrum(out, "", s, peaks, cfg)
    return {"peaks": [q.frequency for q in peaks], "bin_width": s.bin_width}


def identify_natural_frequencies(cfg, out=None):
    """Natural frequencies seen by the probe when the edge is driven at ``identify_hz``.

    Peaks within three resolution widths of the drive or of a stronger peak
    are discarded as leakage; what remains is sorted by frequency.
    """
    d = cfg["drive"]
    if out is not None:
        _, r = _simulate(cfg, out, prefix="identify_", drive_hz=d["identify_hz"])
    else:
        r = Integrator(build_simulation(cfg, drive_hz=d["identify_hz"])).run()
    s = spectrum_of(r.times, r.probe_w[:, 0], cfg["spectrum"]["pad"])
    peaks = isolated_peaks(find_peaks(s, 1e-6), 3 * s.resolution, exclude=[d["identify_hz"]], rel_threshold=1e-3)
    if out is not None:
        _write_spectrum(out, "identify_", s, peaks, cfg)
    return [q.frequency for q in peaks], r


def _natural_frequency(cfg, out):
    d = cfg["drive"]
    if d["natural_hz"] is not None:
        return d["natural_hz"], None
    freqs, _ = identify_natural_frequencies(cfg, out)
    if len(freqs) < d["mode"]:
        raise SolverError(f"only {len(freqs)} natural frequencies identified, mode {d['mode']} requested")
    return freqs[d["mode"] - 1], freqs


def envelope_growth(times, w, window):
    early = np.abs(w[times <= times[0] + window]).max()
    late = np.abs(w[times >= times[-1] - window]).max()
    return float(late / early) if early > 0 else np.inf


def cmd_resonance(cfg, out):
    d = cfg["drive"]
    if d["frequency_hz"] is not None:
        f, found = d["frequency_hz"], None
    else:
        f, found = _natural_frequency(cfg, out)
    _, r = _simulate(cfg, out, drive_hz=f)
    w = r.probe_w[:, 0]
    s = spectrum_of(r.times, w, cfg["spectrum"]["pad"])
    _write_spectrum(out, "", s, find_peaks(s, cfg["spectrum"]["threshold"]), cfg)
    return {"drive_hz": f, "identified_hz": found, "growth": envelope_growth(r.times, w, d["window"]),
            "dominant_hz": max(find_peaks(s, 0.5), key=lambda q: q.power).frequency}


def cmd_beat(cfg, out):
    d = cfg["drive"]
    if d["frequency_hz"] is None:
        raise ConfigurationError("beat runs need drive.frequency_hz")
    fb = d["frequency_hz"]
    fn, found = _natural_frequency(cfg, out)
    _, r = _simulate(cfg, out, drive_hz=fb)
    w = r.probe_w[:, 0]
    dt = float(r.times[1] - r.times[0])
    s = spectrum_of(r.times, w, cfg["spectrum"]["pad"])
    peaks = find_peaks(s, cfg["spectrum"]["threshold"])
    _write_spectrum(out, "", s, peaks, cfg)
    return {"drive_hz": fb, "natural_hz": fn, "identified_hz": found, "peaks": [q.frequency for q in peaks],
            "bin_width": s.bin_width, "envelope_period": envelope_period(w, dt),
            "expected_period": 1.0 / abs(fb - fn) if fb != fn else np.inf}


def cmd_chladni(cfg, out):
    c = cfg["chladni"]
    m = build_mesh(cfg["mesh"])
    p = build_params(cfg["params"])
    b = build_bspec(cfg, m, p)
    if c["frequency_hz"] is not None:
        f, index = float(c["frequency_hz"]), None
    else:
        modes = solve_modes(p, m, b, c["k"])
        top = max(abs(md.lam) for md in modes)
        elastic = [md for md in modes if abs(md.lam) > 1e-8 * top]
        write_csv(out / "modes.csv", ["index", "lambda", "f"],
                  [(i + 1, md.lam, md.f) for i, md in enumerate(elastic)], cfg)
        if c["mode"] is not None:
            if c["mode"] > len(elastic):
                raise ConfigurationError(f"mode {c['mode']} requested, {len(elastic)} elastic modes computed")
            index = c["mode"]
        elif c["near_hz"] is not None:
            index = 1 + int(np.argmin([abs(md.f - c["near_hz"]) for md in elastic]))
        else:
            index = 1
        f = elastic[index - 1].f
    if not f > 0:
        raise ConfigurationError("driving frequency must be positive: a 0 Hz load is static and "
                                 "excites no vibration")
    if cfg["forcing"]["kind"] != "harmonic":
        raise ConfigurationError("chladni runs need harmonic forcing")
    sim, r = _simulate(cfg, out, forcing_hz=f)
    fixed = tuple(n for n, sc in sim.bspec.sides.items() if sc.kind is not BoundaryKind.FREE)
    final = Mode(0.0, 0.0, Field(m, r.field()), 0.0, fixed)
    lines = nodal_lines(final)
    write_polylines(out / "nodal_final.csv", lines, cfg)
    return {"frequency_hz": f, "xi": 2 * np.pi * f, "mode": index, "nodal_lines": len(lines)}


def forced_comparison(cfg):
    """NB2 (or PC22) probe trajectory against the truncated series solution."""
    sim = build_simulation(cfg)
    m = sim.mesh
    if m.is_annulus or cfg["forcing"]["kind"] != "harmonic" or cfg["forcing"].get("region") is not None:
        raise ConfigurationError("forced runs need a rectangle under uniform harmonic load")
    if any(sc.kind is not BoundaryKind.SUPPORTED for sc in sim.bspec.sides.values()) or not sim.probes:
        raise ConfigurationError("forced runs need supported edges and a probe")
    r = Integrator(sim).run()
    k = m.kind
    terms = cfg["forced"]["terms"]
    px, py = sim.probes[0]
    frc = sim.forcing
    series = forced_response(px - k.x0, py - k.y0, r.times, frc.F0, frc.xi, SeriesTruncation(terms, terms),
                             k.x1 - k.x0, k.y1 - k.y0, sim.params)
    return r, np.asarray(series)


def cmd_forced(cfg, out):
    if cfg["forcing"].get("phase", "cos") != "sin":
        raise ConfigurationError("the series solution is for a sin(xi t) load")
    r, series = forced_comparison(cfg)
    w = r.probe_w[:, 0]
    write_csv(out / "forced.csv", ["t", "w_numeric", "w_series"], zip(r.times, w, series), cfg)
    write_diagnostics(out / "diagnostics.log", r.diagnostics, cfg)
    return {"relative_error": float(np.abs(w - series).max() / np.abs(series).max())}


COMMANDS = {"run": cmd_run, "mms": cmd_mms, "eigs": cmd_eigs, "dt": cmd_dt, "spectrum": cmd_spectrum,
            "resonance": cmd_resonance, "beat": cmd_beat, "chladni": cmd_chladni, "forced": cmd_forced}


# -- entry point -----------------------------------------------------------------


def make_parser():
    parser = argparse.ArgumentParser(prog="klplate", description="Finite-difference plate vibration experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"{name} experiment (default preset: {DEFAULT_PRESET[name]})")
        sp.add_argument("--config", help="JSON config file or preset name")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("--scheme", choices=["pc22", "nb2"])
        sp.add_argument("--csf", type=float, help="stability factor C_sf (replaces an explicit dt)")
        sp.add_argument("--grid", type=int, help="grid G_N (for mms: finest level)")
        sp.add_argument("--quiet", action="store_true", help="print nothing on success")
    return parser


def _print_summary(summary, stream):
    for k in sorted(summary):
        v = summary[k]
        if isinstance(v, list) and len(v) > 8:
            v = f"[{', '.join(_fmt(x) for x in v[:8])}, ...] ({len(v)} values)"
        print(f"{k}: {v}", file=stream)


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    try:
        cfg = load_config(args.config, args.command)
        cfg = apply_overrides(cfg, args.scheme, args.csf, args.grid)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
        t0 = time.perf_counter()
        summary = COMMANDS[args.command](cfg, out)
        write_summary(out, summary, cfg)
        if not args.quiet:
            _print_summary(summary, sys.stdout)
            print(f"wall time: {time.perf_counter() - t0:.2f} s", file=sys.stdout)
        return EXIT_OK
    except ConfigurationError as exc:
        print(f"klplate: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InstabilityError as exc:
        print(f"klplate: numerical instability: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except SolverError as exc:
        print(f"klplate: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
