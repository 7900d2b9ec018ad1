"""Command-line front end.

Every subcommand reads an optional JSON config (``--config``); command-line
flags override the matching JSON keys. Exit codes: 0 success, 2 config or
validation error, 3 numerical non-convergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import fsi, morph, pod, synth
from .fields import (FieldError, FieldSnapshot, PlaneSpec, SnapshotSet, StructuredGrid,
                     compute_gradient, compute_q_criterion, compute_strain_rate,
                     default_planes, load_snapshot_set, map_set, plane_image,
                     sample_plane_set, save_snapshot_set)
from .heatmap import write_pgm

log = logging.getLogger("wakepod")

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_IO = 0, 2, 3, 4

D_DEFAULT, HUB_DEFAULT = 126.0, 90.0
DEFAULT_WAKE_GRID = {
    "nx": 32, "ny": 24, "nz": 24,
    "dx": 3.5 * D_DEFAULT / 32, "dy": 2 * D_DEFAULT / 24, "dz": 2 * D_DEFAULT / 24,
    "origin": [-0.5 * D_DEFAULT, -D_DEFAULT, 0.0],
}


class ConfigError(ValueError):
    pass


# -- config handling -------------------------------------------------------------


def load_config(args: argparse.Namespace, keys: tuple[str, ...]) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            with open(path, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    for key in keys + ("out", "force", "threads"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    cfg.setdefault("force", False)
    cfg.setdefault("threads", 1)
    if int(cfg["threads"]) < 1:
        raise ConfigError("threads must be >= 1")
    return cfg


def prepare_out(cfg: dict) -> Path:
    if not cfg.get("out"):
        raise ConfigError("an output directory is required (--out or 'out' key)")
    out = Path(cfg["out"])
    if out.exists():
        if not out.is_dir():
            raise FileExistsError(f"{out} exists and is not a directory")
        if any(out.iterdir()) and not cfg.get("force"):
            raise FileExistsError(f"{out} is not empty; pass --force to overwrite")
    out.mkdir(parents=True, exist_ok=True)
    return out


def require_input(cfg: dict, key: str = "input") -> Path:
    if not cfg.get(key):
        raise ConfigError(f"missing required '{key}'")
    path = Path(cfg[key])
    if not path.exists():
        raise FileNotFoundError(f"{key} path does not exist: {path}")
    return path


def write_json(path: Path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _times(cfg: dict) -> list[float]:
    if "times" in cfg:
        return [float(t) for t in cfg["times"]]
    n = int(cfg.get("n_snapshots", 64))
    if n < 1:
        raise ConfigError("n_snapshots must be >= 1")
    dt, t0 = float(cfg.get("dt", 0.25)), float(cfg.get("t0", 0.0))
    return [t0 + k * dt for k in range(n)]


# -- synth ---------------------------------------------------------------------------


def cmd_synth(cfg: dict) -> int:
    kind = cfg.get("kind", "wake")
    times = _times(cfg)
    if kind == "wake":
        params = synth.WakeModelParams.from_dict(cfg.get("params", {}))
        grid = StructuredGrid.from_dict(cfg.get("grid", DEFAULT_WAKE_GRID))
        out = prepare_out(cfg)
        sset = synth.generate_wake_set(params, grid, times)
        meta = {"kind": "wake", "params": params.to_dict()}
    elif kind == "separable":
        spec = synth.SeparableSpec.from_dict(cfg)
        out = prepare_out(cfg)
        sset, sigma = synth.generate_separable_field(spec, times)
        meta = {"kind": "separable", "sigma": sigma.tolist()}
    else:
        raise ConfigError(f"unknown synth kind {kind!r}")
    save_snapshot_set(sset, out, overwrite=True)
    write_json(out / "synth.json", meta)
    log.info("wrote %d snapshots to %s", len(sset), out)
    return EXIT_OK


# -- pod -------------------------------------------------------------------------------


def resolve_planes(cfg: dict) -> list[PlaneSpec] | None:
    planes = cfg.get("planes", "none")
    D, hub = float(cfg.get("D", D_DEFAULT)), float(cfg.get("hub_height", HUB_DEFAULT))
    if planes in (None, "none", []):
        return None
    if planes == "all":
        return default_planes(D, hub)
    if planes == "yz":
        return default_planes(D, hub)[:5]
    if isinstance(planes, list):
        try:
            return [PlaneSpec(p["axis"], p["offset"], p.get("label", "")) for p in planes]
        except (KeyError, TypeError):
            raise ConfigError("each plane needs 'axis' and 'offset'") from None
    raise ConfigError(f"planes must be 'none', 'yz', 'all' or a list, got {planes!r}")


def _heatmap_image(grid: StructuredGrid, vec: np.ndarray) -> np.ndarray:
    snap = FieldSnapshot(grid, 1, 0.0, vec)
    if 1 in grid.counts:
        img = plane_image(snap)
    else:
        img = snap.array()[grid.nz // 2, :, :, 0]
    return np.flipud(img)


def _analyse(sset: SnapshotSet, label: str, cfg: dict, out: Path) -> dict:
    component = cfg.get("component", 0)
    m = pod.assemble_snapshot_matrix(sset, cfg.get("field"), component,
                                     bool(cfg.get("subtract_mean", False)), cfg.get("weights"))
    result = pod.decompose(m, cfg.get("method", "snapshots"))
    n_list = [int(n) for n in cfg.get("n_list", [1, 2, 3])]
    comps = sset.components if component is None else 1
    pdir = out / label
    pod.save_pod(result, pdir, sset.grid, comps, sset.times, n_list, overwrite=True)

    with open(pdir / "energy.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode_index", "sigma", "energy_fraction", "cumulative_retained",
                    "cumulative_loss"])
        for row in pod.energy_table(result):
            w.writerow([row[0]] + [repr(v) for v in row[1:]])

    if comps == 1:
        for n in range(min(3, result.rank)):
            write_pgm(pdir / f"mode_{n + 1}.pgm", _heatmap_image(sset.grid, result.modes[:, n]),
                      {"plane": label, "mode": n + 1, "sigma": float(result.singular_values[n])})
    retained = {n: pod.cumulative_energy(result, n) for n in n_list if n <= result.rank}
    return {"label": label, "rank": result.rank, "retained": retained}


def cmd_pod(cfg: dict) -> int:
    src = require_input(cfg)
    planes = resolve_planes(cfg)
    out = prepare_out(cfg)
    sset = load_snapshot_set(src)
    if planes is None:
        jobs = [("volume", sset)]
    else:
        jobs = [(p.label, sample_plane_set(sset, p)) for p in planes]
    threads = int(cfg.get("threads", 1))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            summaries = list(ex.map(lambda j: _analyse(j[1], j[0], cfg, out), jobs))
    else:
        summaries = [_analyse(s, label, cfg, out) for label, s in jobs]

    n_list = [int(n) for n in cfg.get("n_list", [1, 2, 3])]
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["plane", "rank"] + [f"retained_{n}" for n in n_list])
        for s in summaries:
            w.writerow([s["label"], s["rank"]]
                       + [repr(s["retained"][n]) if n in s["retained"] else "" for n in n_list])
    return EXIT_OK


# -- reconstruct -------------------------------------------------------------------------


def cmd_reconstruct(cfg: dict) -> int:
    pod_dir = require_input(cfg, "pod_dir")
    out = prepare_out(cfg)
    result, meta = pod.load_pod(pod_dir)
    n = int(cfg.get("n_modes", result.rank))
    approx = pod.reconstruct(result, n)
    grid, comps = meta["grid"], meta["components"]
    snaps = tuple(FieldSnapshot(grid, comps, t, approx.data[:, s])
                  for s, t in enumerate(meta["times"]))
    save_snapshot_set(SnapshotSet(grid, "reconstruction", comps, snaps), out, overwrite=True)
    report = {"n_modes": n, "rank": result.rank,
              "retained": pod.cumulative_energy(result, n)}
    if cfg.get("input"):
        ref = load_snapshot_set(require_input(cfg))
        if "plane" in cfg:
            p = cfg["plane"]
            ref = sample_plane_set(ref, PlaneSpec(p["axis"], p["offset"], p.get("label", "")))
        ref_m = pod.assemble_snapshot_matrix(ref, None, cfg.get("component", 0))
        if ref_m.data.shape != approx.data.shape:
            raise ConfigError("reference input does not match the decomposed data")
        report["relative_error"] = float(np.linalg.norm(approx.data - ref_m.data)
                                         / np.linalg.norm(ref_m.data))
    write_json(out / "report.json", report)
    return EXIT_OK


# -- derive ----------------------------------------------------------------------------------


def cmd_derive(cfg: dict) -> int:
    src = require_input(cfg)
    quantities = cfg.get("quantities", ["gradient", "strain", "q"])
    unknown = set(quantities) - {"gradient", "strain", "q"}
    if unknown:
        raise ConfigError(f"unknown quantities: {', '.join(sorted(unknown))}")
    out = prepare_out(cfg)
    sset = load_snapshot_set(src)
    grads = map_set(sset, compute_gradient, "gradient")
    summary = {}
    for name in quantities:
        if name == "gradient":
            res = grads
        elif name == "strain":
            res = map_set(grads, compute_strain_rate, "strain_rate")
        else:
            res = map_set(grads, compute_q_criterion, "q_criterion")
        save_snapshot_set(res, out / name, overwrite=True)
        summary[name] = {"min": float(min(s.data.min() for s in res)),
                         "max": float(max(s.data.max() for s in res))}
    write_json(out / "summary.json", summary)
    return EXIT_OK


# -- fsi ---------------------------------------------------------------------------------------


def cmd_fsi(cfg: dict) -> int:
    T = float(cfg.get("T", 10.0))
    problem = fsi.build_problem(cfg)
    out = prepare_out(cfg)
    error = None
    try:
        history = fsi.run_fsi(problem, T)
    except fsi.CouplingError as exc:
        history, error = exc.history, f"step {exc.step}: {exc}"
    fsi.write_history_csv(history, out / "history.csv")
    fsi.write_trace_csv(history, out / "trace.csv")
    failed = [int(k) for k in np.flatnonzero(~history.converged)]
    write_json(out / "summary.json", {
        "steps": len(history.traces),
        "all_converged": error is None and not failed,
        "failed_steps": failed,
        "max_inner_iters": int(history.inner_iters.max()),
        "error": error,
    })
    if error is not None or failed:
        log.warning("coupling did not converge (%s)", error or f"{len(failed)} step(s)")
        return EXIT_NONCONVERGED
    return EXIT_OK


# -- morph ------------------------------------------------------------------------------------------


def _morph_controls(cfg: dict, nodes: np.ndarray):
    dim = nodes.shape[-1]
    if "control_points" in cfg:
        cp = cfg["control_points"]
        if isinstance(cp, str):
            return morph.read_control_points(cp)
        return np.asarray(cp["positions"], float), np.asarray(cp["displacements"], float)
    demo = cfg.get("demo", "identity")
    if dim == 2:
        boundary = np.concatenate([nodes[0, :], nodes[-1, 1:-1], nodes[1:-1, 0], nodes[1:-1, -1],
                                   nodes[-1, :]])
    else:
        mask = np.zeros(nodes.shape[:-1], bool)
        mask[[0, -1], :, :] = mask[:, [0, -1], :] = mask[:, :, [0, -1]] = True
        boundary = nodes[mask]
    boundary = np.unique(boundary, axis=0)
    disp = np.zeros_like(boundary)
    if demo == "identity":
        pass
    elif demo == "translation":
        disp[:] = np.asarray(cfg.get("translation", [1.0] * dim), float)[:dim]
    elif demo == "sine":
        lo, hi = boundary.min(axis=0), boundary.max(axis=0)
        extent = hi - lo
        amp = float(cfg.get("amplitude_fraction", 0.01)) * extent.max()
        bottom = np.isclose(boundary[:, 1], lo[1])
        disp[bottom, 1] = amp * np.sin(np.pi * (boundary[bottom, 0] - lo[0]) / extent[0])
    else:
        raise ConfigError(f"unknown morph demo {demo!r}")
    return boundary, disp


def cmd_morph(cfg: dict) -> int:
    grid = StructuredGrid.from_dict(cfg.get("grid", {"nx": 32, "ny": 32, "nz": 1,
                                                     "dx": 1.0, "dy": 1.0, "dz": 1.0}))
    nodes = morph.grid_nodes(grid)
    positions, disps = _morph_controls(cfg, nodes)
    out = prepare_out(cfg)
    f = morph.build_rbf((positions, disps), cfg.get("kernel"))
    moved = morph.morph_grid(nodes, f)
    min_jac, inverted = morph.check_mesh_validity(nodes, moved)

    dim = nodes.shape[-1]
    # nodes are indexed [i, j(, k)]; snapshot storage wants [k, j, i]
    def as_field(arr):
        full = np.zeros(arr.shape[:-1] + (3,))
        full[..., :dim] = arr
        if dim == 2:
            full = full[:, :, None, :]
        return np.transpose(full, (2, 1, 0, 3))

    for name, arr in (("displacement", moved - nodes), ("coordinates", moved)):
        snap = FieldSnapshot.from_array(grid, as_field(arr))
        save_snapshot_set(SnapshotSet(grid, name, 3, (snap,)), out / name, overwrite=True)
    morph.write_control_points(out / "control_points.csv", positions, disps)
    cell = grid.dx * grid.dy * (grid.dz if dim == 3 else 1.0)
    write_json(out / "validity.json", {"min_jacobian": min_jac, "inverted_cells": inverted,
                                        "undeformed_cell_measure": cell,
                                        "kernel": f.kernel, "n_control_points": len(positions)})
    return EXIT_OK


# -- argument parsing ------------------------------------------------------------------------


COMMANDS = {
    "synth": (cmd_synth, "Generate a synthetic snapshot set (wake or separable field).",
              ("kind", "n_snapshots", "dt", "t0")),
    "pod": (cmd_pod, "Plane sampling + POD: pod.json, modes, energy CSV, PGM heatmaps.",
            ("input", "field", "component", "subtract_mean", "method", "n_list", "planes")),
    "reconstruct": (cmd_reconstruct, "Rebuild snapshots from a POD directory with N modes.",
                    ("pod_dir", "n_modes", "input")),
    "derive": (cmd_derive, "Velocity gradient, strain rate and Q-criterion fields.",
               ("input", "quantities")),
    "fsi": (cmd_fsi, "Run a partitioned FSI model problem; write history and trace CSV.",
            ("problem", "T")),
    "morph": (cmd_morph, "RBF-morph a structured grid and report mesh validity.",
              ("demo", "kernel", "control_points")),
}


def _add_common(p: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=default, help="JSON config file; flags override its keys")
    p.add_argument("--out", default=default, help="output directory ('out')")
    p.add_argument("--force", action="store_true", default=default,
                   help="allow writing into a non-empty output directory ('force')")
    p.add_argument("--threads", type=int, default=default,
                   help="worker threads for independent work items ('threads', default 1)")


def _add_specific(name: str, p: argparse.ArgumentParser) -> None:
    if name == "synth":
        p.add_argument("--kind", choices=["wake", "separable"], help="generator ('kind')")
        p.add_argument("--n-snapshots", dest="n_snapshots", type=int,
                       help="snapshot count when 'times' is absent (default 64)")
        p.add_argument("--dt", type=float, help="snapshot spacing in seconds (default 0.25)")
        p.add_argument("--t0", type=float, help="first snapshot time (default 0)")
    elif name == "pod":
        p.add_argument("--input", help="snapshot set directory ('input')")
        p.add_argument("--field", help="field name to decompose ('field')")
        p.add_argument("--component", type=int, help="component index ('component', default 0)")
        p.add_argument("--subtract-mean", dest="subtract_mean", action="store_true", default=None,
                       help="remove the temporal mean before decomposing ('subtract_mean')")
        p.add_argument("--method", choices=["snapshots", "svd"],
                       help="decomposition route ('method', default snapshots)")
        p.add_argument("--n-list", dest="n_list", type=lambda s: [int(v) for v in s.split(",")],
                       help="comma-separated mode counts for retained energy ('n_list')")
        p.add_argument("--planes", help="'none', 'yz' (downstream planes only) or 'all' (yz, xy and zx planes); explicit lists via config ('planes')")
    elif name == "reconstruct":
        p.add_argument("--pod-dir", dest="pod_dir", help="directory written by 'pod' for one plane")
        p.add_argument("--n-modes", dest="n_modes", type=int, help="modes to keep ('n_modes')")
        p.add_argument("--input", help="reference snapshot set for the error report ('input')")
    elif name == "derive":
        p.add_argument("--input", help="vector snapshot set directory ('input')")
        p.add_argument("--quantities", type=lambda s: s.split(","),
                       help="comma-separated subset of gradient,strain,q ('quantities')")
    elif name == "fsi":
        p.add_argument("--problem", choices=["piston", "chain"], help="model problem ('problem')")
        p.add_argument("--T", dest="T", type=float, help="end time in seconds ('T')")
    elif name == "morph":
        p.add_argument("--demo", choices=["identity", "translation", "sine"],
                       help="built-in boundary motion when no control points are given ('demo')")
        p.add_argument("--kernel", choices=["tps", "cubic"], help="RBF kernel ('kernel')")
        p.add_argument("--control-points", dest="control_points",
                       help="CSV with x,y[,z],dx,dy[,dz] ('control_points')")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wakepod", description=__doc__.splitlines()[0])
    _add_common(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text, _) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        _add_common(p, suppress=True)
        _add_specific(name, p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    fn, _, keys = COMMANDS[args.command]
    try:
        cfg = load_config(args, keys)
        return fn(cfg)
    except (ConfigError, FieldError, pod.PodError, fsi.FsiError, morph.MorphError,
            TypeError, KeyError) as exc:
        print(f"wakepod {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"wakepod {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
