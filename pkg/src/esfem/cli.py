"""Command-line entry point: meshes, solves, and refinement studies driven by
an INI-style config file with strict key checking.

Exit codes: 0 success, 1 runtime failure, 2 configuration error,
3 acceptance failure (``maxreg --check``).  The output directory from the
config can be overridden with ``--out`` or the ESFEM_OUTDIR environment
variable.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
from dataclasses import replace

from . import __version__
from .errors import ConfigError, EsfemError
from .fem import DISCRETE, LIFTED, FeSpace
from .greens import (
    delta_consistency,
    delta_decay_fit,
    discrete_green,
    dyadic_report,
    green_decay_study,
    kernel_difference_l1,
)
from .meshing import write_mesh_text, write_mesh_vtk
from .studies import (
    StudyConfig,
    build_level_mesh,
    config_hash,
    convergence_study,
    emit_reports,
    inequality_suite,
    maxreg_study,
)
from .surfaces import forcing_profile, make_surface
from .timestepping import TimeGrid, solve_heat

_SCHEMA = {
    "surface": {"kind", "dimension", "params", "horizon"},
    "study": {
        "scheme", "degree", "levels", "pq", "profile", "mode",
        "dt_factor", "richardson_rtol", "seed", "kernel_difference",
        "c_star", "t_end",
    },
    "solver": {"cg_tol"},
    "output": {"directory"},
}

_REQUIRED = [("surface", "kind")]


def parse_config(path, overrides=None):
    """Read and validate the INI config; unknown sections or keys reject."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{section} (unknown section)")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{section}.{key} (unknown key)")
    for section, key in _REQUIRED:
        if not parser.has_option(section, key):
            raise ConfigError(f"{section}.{key}")

    def get(section, key, default=None, cast=str):
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            try:
                return cast(raw)
            except ValueError as exc:
                raise ConfigError(f"{section}.{key} (bad value {raw!r})") from exc
        return default

    def floats(raw):
        return tuple(float(v) for v in raw.split(",") if v.strip())

    def ints(raw):
        return tuple(int(v) for v in raw.split(",") if v.strip())

    def pq(raw):
        pairs = []
        for part in raw.split(","):
            p, q = part.split(":")
            pairs.append((float(p), float(q)))
        return tuple(pairs)

    config = StudyConfig(
        surface_kind=get("surface", "kind"),
        dimension=get("surface", "dimension", 1, int),
        surface_params=get("surface", "params", (), floats),
        horizon=get("surface", "horizon", 1.0, float),
        scheme=get("study", "scheme", "stationary"),
        degree=get("study", "degree", 1, int),
        levels=get("study", "levels", (32, 64, 128, 256), ints),
        pq_pairs=get("study", "pq", ((2.0, 2.0),), pq),
        profile=get("study", "profile", "osc-seed42"),
        mode=get("study", "mode", 1, int),
        dt_factor=get("study", "dt_factor", 0.5, float),
        richardson_rtol=get("study", "richardson_rtol", 0.01, float),
        cg_tol=get("solver", "cg_tol", 1e-12, float),
        seed=get("study", "seed", 42, int),
        workers=1,
    )
    extras = {
        "directory": get("output", "directory", "out"),
        "kernel_difference": get("study", "kernel_difference", "false").lower()
        in ("1", "true", "yes"),
        "c_star": get("study", "c_star", 16.0, float),
        "t_end": get("study", "t_end", 3.0, float),
    }
    if overrides:
        for key, value in overrides.items():
            if value is None:
                continue
            if key in extras:
                extras[key] = value
            else:
                config = replace(config, **{key: value})
    try:
        config.validate()
    except ConfigError:
        raise
    return config, extras


def _outdir(extras, args):
    out = args.out or os.environ.get("ESFEM_OUTDIR") or extras["directory"]
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(outdir, name, params, outputs):
    payload = json.dumps(params, sort_keys=True, default=str)
    manifest = {
        "artifact": "esfem",
        "version": __version__,
        "config_hash": hashlib.sha256(payload.encode()).hexdigest()[:16],
        "parameters": params,
        "outputs": sorted(outputs),
    }
    path = os.path.join(outdir, f"{name}_manifest.json")
    with open(path, "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _fmt(x):
    return format(float(x), ".17g")


def cmd_mesh(args):
    surface = make_surface(args.surface, args.dimension, args.params or (),
                           args.horizon)
    mesh = build_level_mesh(surface, args.levels, args.degree)
    if args.time:
        mesh = mesh.evolved(args.time)
    outdir = args.out or "out"
    os.makedirs(outdir, exist_ok=True)
    base = f"{args.surface}_l{args.levels}_k{args.degree}"
    outputs = []
    if args.format in ("vtk", "both"):
        path = os.path.join(outdir, base + ".vtk")
        write_mesh_vtk(mesh, path)
        outputs.append(path)
    if args.format in ("text", "both"):
        path = os.path.join(outdir, base + ".txt")
        write_mesh_text(mesh, path)
        outputs.append(path)
    params = {k: v for k, v in vars(args).items() if k != "func"}
    _write_manifest(outdir, base, params | {"command": "mesh"},
                    [os.path.basename(p) for p in outputs])
    print(f"wrote {len(outputs)} file(s) to {outdir} "
          f"({mesh.num_elements} cells, {mesh.num_nodes} nodes)")
    return 0


def cmd_solve(args):
    config, extras = parse_config(args.config, {"workers": args.workers})
    outdir = _outdir(extras, args)
    surface = config.surface()
    forcing = forcing_profile(config.profile, surface)
    outputs = []
    for level in config.levels:
        mesh = build_level_mesh(surface, level, config.degree)
        grid = TimeGrid.from_mesh(mesh, t_end=1.0, factor=config.dt_factor)
        traj = solve_heat(mesh, forcing, grid, scheme=config.scheme,
                          qnorms=(2.0,), cg_tol=config.cg_tol,
                          store_coefficients=False)
        path = os.path.join(outdir, f"solve_level{level}.csv")
        with open(path, "w", encoding="ascii") as fh:
            fh.write("t,norm_u,norm_dtu,norm_lapu,norm_f\n")
            for i, t in enumerate(traj.times):
                fh.write(",".join(_fmt(v) for v in (
                    t,
                    traj.norms("u", 2.0)[i],
                    traj.norms("udot", 2.0)[i],
                    traj.norms("lap", 2.0)[i],
                    traj.norms("fh", 2.0)[i],
                )) + "\n")
        outputs.append(path)
    _write_manifest(outdir, "solve", {"config_hash": config_hash(config)},
                    [os.path.basename(p) for p in outputs])
    print(f"wrote {len(outputs)} trajectory file(s) to {outdir}")
    return 0


def cmd_maxreg(args):
    config, extras = parse_config(args.config, {"workers": args.workers})
    outdir = _outdir(extras, args)
    report = maxreg_study(config)
    emit_reports(report, outdir, name="maxreg")
    failures = [key for key, v in report.uniformity.items() if not v["uniform"]]
    print(f"maxreg study: {len(report.rows)} rows, "
          f"{len(report.uniformity) - len(failures)}/{len(report.uniformity)} "
          "pairs h-uniform")
    if args.check and failures:
        print(f"acceptance failure: non-uniform pairs {failures}")
        return 3
    return 0


def cmd_convergence(args):
    config, extras = parse_config(args.config, {"workers": args.workers})
    outdir = _outdir(extras, args)
    report = convergence_study(config)
    path = os.path.join(outdir, "convergence.csv")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("level,h,dt,error\n")
        for r in report.rows:
            fh.write(",".join([str(r.level), _fmt(r.h), _fmt(r.dt), _fmt(r.ratio)]) + "\n")
    summary = os.path.join(outdir, "convergence_summary.txt")
    order = report.extras["observed_order"]
    with open(summary, "w", encoding="ascii") as fh:
        fh.write(f"observed_order {_fmt(order)}\n")
    _write_manifest(outdir, "convergence", {"config_hash": config_hash(config)},
                    ["convergence.csv", "convergence_summary.txt"])
    print(f"convergence study: observed order {order:.3f}")
    return 0


def cmd_greens(args):
    config, extras = parse_config(args.config, {"workers": args.workers})
    outdir = _outdir(extras, args)
    surface = config.surface()
    outputs = []
    rates = []
    for level in config.levels:
        mesh = build_level_mesh(surface, level, config.degree)
        grid = TimeGrid.from_mesh(mesh, t_end=extras["t_end"],
                                  factor=config.dt_factor)
        fit = green_decay_study(mesh, grid, cg_tol=config.cg_tol)
        rates.append(fit.rate)
        path = os.path.join(outdir, f"greens_decay_level{level}.csv")
        with open(path, "w", encoding="ascii") as fh:
            fh.write("t,envelope\n")
            for t, v in zip(fit.times, fit.values):
                fh.write(f"{_fmt(t)},{_fmt(v)}\n")
        outputs.append(path)
        # dyadic table around the first mesh node, on (0,1); only available
        # once the mesh satisfies h < 1/(4*C)
        from .errors import HTooLarge

        try:
            # diagnostic table: cap the step count, the annulus profile does
            # not need the full parabolic dt resolution
            policy = TimeGrid.from_mesh(mesh, t_end=1.0, factor=config.dt_factor)
            unit_grid = TimeGrid(1.0, min(policy.n_steps, 1000))
            x0 = mesh.nodes[0]
            traj = discrete_green(mesh, x0, unit_grid, cg_tol=config.cg_tol)
            table = dyadic_report(traj, x0, c_star=extras["c_star"])
        except HTooLarge as exc:
            table = None
            print(f"level {level}: dyadic table skipped ({exc})")
        if table is not None:
            path = os.path.join(outdir, f"greens_dyadic_level{level}.csv")
            with open(path, "w", encoding="ascii") as fh:
                fh.write("set,radius,measure,field_l2,dtfield_l2\n")
                for row in table["rows"]:
                    fh.write(",".join([row["set"], _fmt(row["radius"]),
                                       _fmt(row["measure"]), _fmt(row["field_l2"]),
                                       _fmt(row["dtfield_l2"])]) + "\n")
            outputs.append(path)
    summary = os.path.join(outdir, "greens_summary.txt")
    with open(summary, "w", encoding="ascii") as fh:
        for level, rate in zip(config.levels, rates):
            fh.write(f"level {level} decay_rate {_fmt(rate)}\n")
    outputs.append(summary)
    if extras["kernel_difference"] and len(config.levels) >= 2:
        coarse = build_level_mesh(surface, config.levels[0], config.degree)
        fine = build_level_mesh(surface, config.levels[-1], config.degree)
        grid = TimeGrid.from_mesh(fine, t_end=1.0, factor=config.dt_factor)
        result = kernel_difference_l1(coarse, fine, coarse.nodes[0], grid,
                                      cg_tol=max(config.cg_tol, 1e-11))
        path = os.path.join(outdir, "greens_kernel_difference.txt")
        with open(path, "w", encoding="ascii") as fh:
            for key, value in sorted(result.items()):
                fh.write(f"{key} {_fmt(value)}\n")
        outputs.append(path)
    _write_manifest(outdir, "greens", {"config_hash": config_hash(config)},
                    [os.path.basename(p) for p in outputs])
    print(f"greens diagnostics: decay rates {[f'{r:.4f}' for r in rates]}")
    return 0


def cmd_delta(args):
    config, extras = parse_config(args.config, {"workers": args.workers})
    outdir = _outdir(extras, args)
    surface = config.surface()
    path = os.path.join(outdir, "delta_report.csv")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("level,h,slope,r_squared,decay_length,consistency_l1,consistency_l2\n")
        for level in config.levels:
            mesh = build_level_mesh(surface, level, config.degree)
            space = FeSpace(mesh, DISCRETE)
            lifted = FeSpace(mesh, LIFTED)
            x0 = mesh.nodes[0]
            fit = delta_decay_fit(space, x0)
            cons1 = delta_consistency(space, lifted, x0, 1)
            cons2 = delta_consistency(space, lifted, x0, 2)
            fh.write(",".join([
                str(level), _fmt(mesh.h), _fmt(fit["slope"]),
                _fmt(fit["r_squared"]), _fmt(fit["decay_length"]),
                _fmt(cons1["ratio"]), _fmt(cons2["ratio"]),
            ]) + "\n")
    _write_manifest(outdir, "delta", {"config_hash": config_hash(config)},
                    ["delta_report.csv"])
    print(f"delta diagnostics written to {path}")
    return 0


def cmd_inequalities(args):
    config, extras = parse_config(args.config, {"workers": args.workers})
    outdir = _outdir(extras, args)
    result = inequality_suite(config)
    path = os.path.join(outdir, "inequalities.txt")
    with open(path, "w", encoding="ascii") as fh:
        for name, ok in sorted(result["stable"].items()):
            fh.write(f"{'PASS' if ok else 'FAIL'} {name}\n")
    _write_manifest(outdir, "inequalities", {"config_hash": config_hash(config)},
                    ["inequalities.txt"])
    print(f"inequality suite: all_stable={result['all_stable']}")
    return 0 if result["all_stable"] or not args.check else 3


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="esfem",
        description="surface finite element studies on stationary and "
                    "evolving closed surfaces",
        epilog="The output directory can be overridden with --out or the "
               "ESFEM_OUTDIR environment variable.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_mesh = sub.add_parser("mesh", help="build and export a mesh")
    p_mesh.add_argument("--surface", required=True)
    p_mesh.add_argument("--dimension", type=int, default=None)
    p_mesh.add_argument("--params", type=lambda s: tuple(float(v) for v in s.split(",")),
                        default=None)
    p_mesh.add_argument("--horizon", type=float, default=1.0)
    p_mesh.add_argument("--levels", type=int, required=True,
                        help="element count (curves) or subdivision level (spheres)")
    p_mesh.add_argument("--degree", type=int, default=1)
    p_mesh.add_argument("--time", type=float, default=0.0)
    p_mesh.add_argument("--format", choices=("vtk", "text", "both"), default="vtk")
    p_mesh.add_argument("--out", default=None)
    p_mesh.set_defaults(func=cmd_mesh)

    for name, func, help_text in (
        ("solve", cmd_solve, "time-step one scheme and dump norm trajectories"),
        ("maxreg", cmd_maxreg, "bounded-ratio refinement study"),
        ("convergence", cmd_convergence, "error convergence study"),
        ("greens", cmd_greens, "kernel decay and dyadic reports"),
        ("delta", cmd_delta, "point-source decay and consistency reports"),
        ("inequalities", cmd_inequalities, "fitted-constant inequality suite"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--check", action="store_true",
                       help="exit 3 when an acceptance criterion fails")
        p.set_defaults(func=func)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"ConfigError: {exc}", file=sys.stderr)
        return 2
    except EsfemError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
