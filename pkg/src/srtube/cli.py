"""Command line entry point: ``srtube <command> [config.json | --scene NAME] [--set key=value]``."""

from __future__ import annotations

import argparse
import copy
import io
import json
import math
import os
import sys
import tempfile
from importlib import resources

import jsonschema
import numpy as np

from . import contact_core as cc
from . import field_expr as fe
from . import geodesic_flow as gf
from . import steiner as st
from . import surface_geom as sg
from . import tube_volume as tv

COMMANDS = ("invariants", "curvature", "coeffs", "volume", "verify", "geodesic", "coarea")
DEFAULT_CONFIG = {"model": {"name": "heisenberg"}}


class ConfigError(ValueError):
    def __init__(self, message, pointer=""):
        super().__init__(message)
        self.pointer = pointer


def _schema():
    return json.loads(resources.files("srtube").joinpath("schema/config.schema.json").read_text())


def scene_names():
    folder = resources.files("srtube").joinpath("scenes")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def load_scene(name):
    path = resources.files("srtube").joinpath(f"scenes/{name}.json")
    if not path.is_file():
        raise ConfigError(f"unknown scene {name!r}; known: {', '.join(scene_names())}", "/scene")
    return json.loads(path.read_text())


def apply_overrides(config, assignments):
    config = copy.deepcopy(config)
    for item in assignments:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot set {key}: {part} is not an object",
                                  "/" + "/".join(parts))
        node[parts[-1]] = value
    return config


def validate(config):
    try:
        jsonschema.validate(config, _schema())
    except jsonschema.ValidationError as exc:
        pointer = "/" + "/".join(str(p) for p in exc.absolute_path)
        raise ConfigError(exc.message, pointer) from None
    for section in ("patch", "geodesic", "coarea"):
        for key, val in config.get(section, {}).items():
            ranges = val if key in ("u_range", "box") else [val] if key.endswith("_range") else []
            for i, r in enumerate(ranges):
                if not r[1] > r[0]:
                    ptr = f"/{section}/{key}" + (f"/{i}" if key in ("u_range", "box") else "")
                    raise ConfigError(f"empty range {r}", ptr)
    eps = config.get("run", {}).get("eps")
    if isinstance(eps, dict) and not eps["max"] > eps["min"] and eps["count"] > 1:
        raise ConfigError("empty eps range", "/run/eps")
    return config


# ------------------------------------------------------------ scene building

def build_model(cfg):
    m = cfg.get("model", {"name": "heisenberg"})
    name = m["name"]
    if name == "custom":
        if "frame" not in m:
            raise ConfigError("a custom model needs 'frame'", "/model")
        model = cc.custom(m["frame"], constraint=m.get("constraint"), density=m.get("density"),
                          transverse=m.get("transverse"),
                          left_invariant=m.get("left_invariant", False))
        return model
    for key in ("frame", "constraint", "transverse"):
        if key in m:
            raise ConfigError(f"'{key}' only applies to custom models", f"/model/{key}")
    model = cc.by_name(name, m.get("k", 1.0))
    if "density" in m or "left_invariant" in m:
        model = cc.ContactModel(
            model.name, model.chart_dim, model.frame, model.constraint, model.projection,
            fe.parse(m["density"]) if "density" in m else model.density,
            model.h_min, model.transverse,
            model.declared, m.get("left_invariant", model.left_invariant), model.params)
    return model


def build_surface_patch(cfg, model):
    s = cfg.get("surface")
    if s is None:
        raise ConfigError("this command needs a 'surface' section", "/surface")
    p = cfg.get("patch", {})
    kind = s["kind"]
    orient = s.get("orientation", 1)
    grid = tuple(p.get("grid", (32, 32)))
    if kind in ("rotational", "plane"):
        if model.name != "heisenberg" and model.chart_dim != 3:
            raise ConfigError("rotational surfaces need a 3-dimensional chart", "/surface/kind")
        g = [0.0] if kind == "plane" else s.get("g", [0.0])
        if "r_range" not in p:
            raise ConfigError("rotational patch needs r_range", "/patch")
        try:
            f = fe.rotational(g)
        except ValueError as exc:
            raise ConfigError(str(exc), "/surface/g") from None
        patch = sg.rotational_patch(g, p["r_range"], p.get("theta_range", (0.0, 2 * math.pi)), grid)
    elif kind == "su2_band":
        if model.name != "su2":
            raise ConfigError("su2_band needs the su2 model", "/surface/kind")
        f = fe.parse("w")
        patch = sg.su2_band_patch(p.get("z_range", (-0.5, 0.5)), p.get("phi_range", (0.0, 2 * math.pi)), grid)
    elif kind == "sl2_patch":
        if model.name != "sl2":
            raise ConfigError("sl2_patch needs the sl2 model", "/surface/kind")
        f = fe.parse("y - z")
        patch = sg.sl2_patch(p.get("x_range", (1.5, 2.5)), p.get("y_range", (-0.5, 0.5)), grid)
    else:
        if "f" not in s or "u_range" not in p:
            raise ConfigError("graph surfaces need surface.f and patch.u_range", "/surface")
        if model.chart_dim != 3:
            raise ConfigError("graph surfaces need a 3-dimensional chart", "/surface/kind")
        f = _parse(s["f"], "/surface/f")
        k = "xyz".index(s.get("solve_for", "z"))
        patch = sg.graph_patch(f, k, p["u_range"], grid, s.get("guess", 0.0))
    if "f" in s and kind != "graph":
        f = _parse(s["f"], "/surface/f")
    surface = sg.ImplicitSurface(f, orient)
    patch.validate(surface, model)
    return surface, patch


def _parse(src, pointer):
    try:
        return fe.parse(src)
    except fe.ParseError as exc:
        raise ConfigError(str(exc), pointer) from None


def eps_grid(cfg):
    eps = cfg.get("run", {}).get("eps")
    if eps is None:
        return np.array(st.DEFAULT_EPS)
    if isinstance(eps, dict):
        return np.geomspace(eps["min"], eps["max"], eps["count"])
    return np.asarray(eps, dtype=float)


# ------------------------------------------------------------------ output

def _num(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format(float(x), ".17g")


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) or math.isinf(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def render_json(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def render_csv(header, rows):
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_num(v) for v in row) + "\n")
    return buf.getvalue()


def write_output(text, path):
    """Write atomically (temp file + rename); '-' or None means stdout."""
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    folder = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=folder, prefix=".srtube-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- commands

def cmd_invariants(cfg, threads):
    model = build_model(cfg)
    run = cfg.get("run", {})
    rng = np.random.default_rng(run.get("seed", 0))
    pts = cc.sample_points(model, run.get("samples", 8), rng)
    chi, kappa = cc.metric_invariants(model, pts)
    tau = cc.torsion_matrix(model, pts)
    report = cc.bracket_selfcheck(model, pts)
    return "json", {
        "scene": cfg.get("scene", ""), "model": model.describe(), "points": pts,
        "chi": chi, "kappa": kappa, "tau": tau, "selfcheck": report.as_dict(),
    }


def cmd_curvature(cfg, threads):
    model = build_model(cfg)
    surface, patch = build_surface_patch(cfg, model)
    pts = patch.points()
    H = sg.mean_curvature(surface, model, pts)
    a3 = np.full(len(pts), np.nan) if model.has_density else sg.a3_integrand(surface, model, pts)
    K = sg.gaussian_curvature(surface, model, pts)
    eps_r = cfg.get("run", {}).get("eps_riemann", [0.1, 0.05, 0.025])
    Heps = [sg.riemannian_mean_curvature(surface, model, pts, e) for e in eps_r]
    header = ["u1", "u2", "H", "a3", "K_S"] + [f"Heps_{_num(e)}" for e in eps_r]
    rows = [list(patch.nodes[i]) + [H[i], a3[i], K[i]] + [h[i] for h in Heps] for i in range(len(pts))]
    if cfg.get("output", {}).get("format", "csv") == "csv":
        return "csv", (header, rows)
    return "json", {"scene": cfg.get("scene", ""), "columns": header, "rows": rows}


def cmd_coeffs(cfg, threads):
    model = build_model(cfg)
    surface, patch = build_surface_patch(cfg, model)
    coef = st.coefficients(surface, model, patch, with_a3=not model.has_density,
                           control=cfg.get("run", {}).get("control"))
    return "json", {"scene": cfg.get("scene", ""), "model": model.describe(),
                    "a": coef.a, "a_err": coef.err}


def _t_max_check(cfg, eps):
    t_max = cfg.get("run", {}).get("t_max", tv.T_MAX)
    if np.max(eps) > t_max:
        raise ConfigError(f"eps up to {np.max(eps)} exceeds t_max = {t_max}", "/run/eps")
    return t_max


def cmd_volume(cfg, threads):
    model = build_model(cfg)
    surface, patch = build_surface_patch(cfg, model)
    run = cfg.get("run", {})
    eps = eps_grid(cfg)
    t_max = _t_max_check(cfg, eps)
    vs = tv.volume_series(surface, model, patch, eps, t_nodes=run.get("t_nodes", tv.T_NODES),
                          step=run.get("step", gf.STEP), fd_step=run.get("fd_step", gf.FD_STEP),
                          threads=threads, t_max=t_max)
    if vs.meta["dropped_eps"]:
        sys.stderr.write(f"srtube: C <= 0 detected; t_max shrunk to {vs.meta['t_max']:.6g}, "
                         f"dropped eps {vs.meta['dropped_eps']}\n")
    if cfg.get("output", {}).get("format", "csv") == "json":
        return "json", {"eps": vs.eps, "vol": vs.vol, "quad_err": vs.quad_err, "meta": vs.meta}
    return "csv", (["eps", "vol", "quad_err"], zip(vs.eps, vs.vol, vs.quad_err))


def cmd_verify(cfg, threads):
    model = build_model(cfg)
    surface, patch = build_surface_patch(cfg, model)
    run = cfg.get("run", {})
    eps = eps_grid(cfg)
    t_max = _t_max_check(cfg, eps)
    report = st.verify(surface, model, patch, eps, tol=run.get("tol"),
                       scene=cfg.get("scene", "custom"), weighted=run.get("weighted", False),
                       control=run.get("control"), step=run.get("step", gf.STEP), threads=threads,
                       t_max=t_max)
    return "json", report.to_dict()


def cmd_geodesic(cfg, threads):
    model = build_model(cfg)
    g = cfg.get("geodesic", {})
    t_end = g.get("t_end", 0.3)
    step = cfg.get("run", {}).get("step", gf.STEP)
    if "start" in g:
        x0 = np.asarray(g["start"], dtype=float)
        if len(x0) != model.chart_dim:
            raise ConfigError(f"start needs {model.chart_dim} coordinates", "/geodesic/start")
        comps = g.get("covector", [1.0, 0.0, 0.0])
        state = gf.ExtremalState(x0, gf.ambient_covector(model, x0, comps)[0], np.asarray(comps))
    else:
        surface, patch = build_surface_patch(cfg, model)
        st0 = gf.initial_state(surface, model, patch.points()[:1])
        state = gf.ExtremalState(st0.x[0], st0.p[0], st0.h[0])
    path = gf.integrate_extremal(model, state, t_end, step)
    header = ["t"] + [f"x{i}" for i in range(model.chart_dim)] + ["h1", "h2", "h0", "two_H"]
    rows = [[path.t[i], *path.x[i], *path.h[i], path.two_H[i]] for i in range(len(path.t))]
    return "csv", (header, rows)


def cmd_coarea(cfg, threads):
    model = build_model(cfg)
    c = cfg.get("coarea")
    if c is None:
        raise ConfigError("coarea needs a 'coarea' section", "/coarea")
    lhs, rhs, rel = tv.coarea_check(model, _parse(c["phi"], "/coarea/phi"),
                                    _parse(c.get("f", "1"), "/coarea/f"), c["box"],
                                    c.get("t_range"), c.get("n", 24))
    return "json", {"lhs": lhs, "rhs": rhs, "rel_err": rel}


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


def _error(kind, message, pointer=None, code=3):
    body = {"error": kind, "message": message}
    if pointer is not None:
        body["pointer"] = pointer
    sys.stderr.write(json.dumps(body) + "\n")
    return code


def main(argv=None):
    ap = argparse.ArgumentParser(prog="srtube", description=__doc__)
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("config", nargs="?", help="JSON scene configuration")
    ap.add_argument("--scene", help=f"built-in scene ({', '.join(scene_names())})")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config field, e.g. --set run.step=5e-4")
    ap.add_argument("--out", help="output path (default: config output.path or stdout)")
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    args = ap.parse_args(argv)

    try:
        if args.config and args.scene:
            raise ConfigError("give either a config file or --scene, not both")
        if args.config:
            try:
                with open(args.config) as fh:
                    cfg = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
        elif args.scene:
            cfg = load_scene(args.scene)
        else:
            cfg = copy.deepcopy(DEFAULT_CONFIG)
        cfg = validate(apply_overrides(cfg, args.set))
        kind, payload = HANDLERS[args.command](cfg, max(1, args.threads))
    except ConfigError as exc:
        return _error("config", str(exc), exc.pointer or "/", code=2)
    except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        return _error("numerical", f"{type(exc).__name__}: {exc}")

    text = render_json(payload) if kind == "json" else render_csv(*payload)
    write_output(text, args.out or cfg.get("output", {}).get("path"))
    if args.command == "verify" and not all(p is not False for p in payload["pass"]):
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
