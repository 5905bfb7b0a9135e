"""Command-line front end.

Subcommands: mesh, forward, reconstruct, symbols, bichar, experiment,
metrics.  Experiment configs are single JSON files; every run writes a
manifest echoing the full configuration.  Exit code 0 on success,
2 on failure (the failing stage is printed)."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _add_common(sub):
    sub.add_argument("--output-dir", default="hybridtomo_out")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--threads", type=int, default=1)


def build_parser():
    ap = argparse.ArgumentParser(
        prog="hybridtomo",
        description="Linearised hybrid impedance tomography laboratory on "
                    "the unit disc")
    sp = ap.add_subparsers(dest="command", required=True)

    m = sp.add_parser("mesh", help="generate and export a disc mesh")
    m.add_argument("--elements", type=int, default=12100)
    _add_common(m)

    f = sp.add_parser("forward", help="solve one forward problem and export "
                                      "potential, gradient magnitude and data")
    f.add_argument("--elements", type=int, default=12100)
    f.add_argument("--bc", default="x", help="boundary expression, e.g. 'x'")
    f.add_argument("--p", type=float, default=2.0)
    f.add_argument("--phantom", action="store_true",
                   help="use the rectangle phantom conductivity")
    _add_common(f)

    r = sp.add_parser("reconstruct", help="run a single reconstruction from "
                                          "a JSON config (kind forced to custom)")
    r.add_argument("config", type=Path)
    r.add_argument("--output-dir", default=None)
    r.add_argument("--threads", type=int, default=None)

    s = sp.add_parser("symbols", help="ellipticity and loss directions for "
                                      "given gradients")
    s.add_argument("--gradients", default="1,0",
                   help="semicolon-separated 2D vectors, e.g. '1,0;0,1'")
    s.add_argument("--p", type=float, default=2.0)

    b = sp.add_parser("bichar", help="trace a bicharacteristic curve")
    b.add_argument("--gradients", default="1,0")
    b.add_argument("--p", type=float, default=2.0)
    b.add_argument("--start", default="0,0")
    b.add_argument("--xi", default=None,
                   help="start covector; defaults to the first loss direction")
    b.add_argument("--mode", default="0", help="measurement index or 'normal'")
    b.add_argument("--step", type=float, default=1e-3)
    b.add_argument("--max-steps", type=int, default=1000)
    _add_common(b)

    e = sp.add_parser("experiment", help="run an experiment family")
    e.add_argument("kind", choices=("elliptic_vs_nonelliptic", "p_sweep",
                                    "wavefront_alignment", "custom"))
    e.add_argument("--config", type=Path, default=None,
                   help="JSON config; its 'kind' is overridden")
    e.add_argument("--output-dir", default=None)
    e.add_argument("--threads", type=int, default=None)
    e.add_argument("--png", action="store_true")

    g = sp.add_parser("metrics", help="recompute streak metrics from a "
                                      "finished run directory")
    g.add_argument("rundir", type=Path)
    return ap


def _parse_vectors(text):
    return [np.array([float(v) for v in chunk.split(",")])
            for chunk in text.split(";") if chunk.strip()]


def cmd_mesh(args):
    from .mesh import generate_disc_mesh
    from .vtkio import write_mesh_listing, write_vtk_mesh

    mesh = generate_disc_mesh(args.elements, args.seed)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_vtk_mesh(out / "mesh.vtk", mesh)
    write_mesh_listing(out / "mesh.txt", mesh)
    print("mesh: %d triangles, %d vertices, fingerprint %s -> %s"
          % (mesh.n_triangles, mesh.n_vertices, mesh.fingerprint, out))
    return 0


def cmd_forward(args):
    from .forward import (BoundaryCondition, compute_interior_data,
                          solve_forward_mixed)
    from .mesh import generate_disc_mesh
    from .phantom import RectPhantom, rectangle_indicator
    from .spaces import node_average_gradients
    from .vtkio import write_csv_field, write_vtk_mesh

    mesh = generate_disc_mesh(args.elements, args.seed)
    sigma = rectangle_indicator(RectPhantom()) if args.phantom else 1.0
    sol = solve_forward_mixed(sigma, BoundaryCondition(args.bc), mesh)
    H = compute_interior_data(sigma, sol.grad_tri, args.p, mesh)
    gmag = np.hypot(*node_average_gradients(mesh, sol.grad_tri).T)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_vtk_mesh(out / "forward.vtk", mesh,
                   {"potential": sol.u.coefficients,
                    "grad_magnitude": gmag,
                    "interior_data": H.coefficients})
    write_csv_field(out / "interior_data.csv", mesh, H.coefficients)
    print("forward solve done: residual %.3e -> %s"
          % (sol.diagnostics.residual, out))
    return 0


def cmd_reconstruct(args):
    from .experiments import ExperimentConfig, run_experiment

    cfg_data = json.loads(Path(args.config).read_text())
    cfg_data["kind"] = "custom"
    if args.output_dir:
        cfg_data["output_dir"] = args.output_dir
    if args.threads:
        cfg_data["threads"] = args.threads
    manifest, outdir = run_experiment(ExperimentConfig(**cfg_data))
    for name, entry in manifest["variants"].items():
        print("%s: mass fraction %.3f, peaks %s"
              % (name, entry["metrics"]["mass_fraction_inside_support"],
                 entry["metrics"]["detected_peaks_deg"]))
    print("outputs in %s" % outdir)
    return 0


def cmd_symbols(args):
    from .microlocal import is_elliptic_single, loss_directions

    grads = _parse_vectors(args.gradients)
    report = is_elliptic_single(grads, args.p)
    dirs = loss_directions(grads, args.p)
    angles = [float(np.degrees(np.arctan2(v[1], v[0]) % np.pi)) for v in dirs]
    print("p = %g: single-measurement operator %s" %
          (args.p, "elliptic" if report.elliptic else "NOT elliptic"))
    if angles:
        print("normal operator loses ellipticity along (deg): %s"
              % ", ".join("%.4f" % a for a in angles))
        print("singularities propagate along (deg): %s"
              % ", ".join("%.4f" % ((a + 90) % 180) for a in angles))
    else:
        print("normal operator elliptic (no common loss directions)")
    return 0


def cmd_bichar(args):
    from .microlocal import loss_directions, trace_bicharacteristic
    from .vtkio import write_csv_trace, write_vtk_polylines

    grads = _parse_vectors(args.gradients)
    x0 = np.array([float(v) for v in args.start.split(",")])
    if args.xi is None:
        dirs = loss_directions(grads, args.p)
        if not dirs:
            print("no loss directions at p=%g; nothing to trace" % args.p)
            return 2
        xi = dirs[0]
    else:
        xi = np.array([float(v) for v in args.xi.split(",")])
    mode = args.mode if args.mode == "normal" else int(args.mode)
    trace = trace_bicharacteristic(grads, args.p, x0, xi, mode=mode,
                                   step=args.step, max_steps=args.max_steps)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv_trace(out / "bichar.csv", trace)
    write_vtk_polylines(out / "bichar.vtk", [trace.points])
    print("trace: %d steps, stopped by %s, max symbol drift %.2e -> %s"
          % (len(trace.points) - 1, trace.terminated_reason,
             trace.max_symbol_drift(), out))
    return 0


def cmd_experiment(args):
    from .experiments import ExperimentConfig, run_experiment

    if args.config:
        data = json.loads(Path(args.config).read_text())
    else:
        data = {}
    data["kind"] = args.kind
    if args.output_dir:
        data["output_dir"] = args.output_dir
    if args.threads:
        data["threads"] = args.threads
    if args.png:
        data["png"] = True
    manifest, outdir = run_experiment(ExperimentConfig(**data))
    for name in sorted(manifest["variants"]):
        met = manifest["variants"][name]["metrics"]
        print("%-24s mass %.3f  peaks %s  predicted %s"
              % (name, met["mass_fraction_inside_support"],
                 ["%.0f" % a for a in met["detected_peaks_deg"]],
                 ["%.1f" % a for a in met["predicted_directions_deg"]]))
    print("outputs in %s" % outdir)
    return 0


def cmd_metrics(args):
    from .experiments import ExperimentConfig, mass_fraction, streak_metric
    from .fields import FemField
    from .forward import make_background
    from .mesh import generate_disc_mesh
    from .spaces import lagrange1
    from .vtkio import read_csv_field

    manifest = json.loads((args.rundir / "manifest.json").read_text())
    cfg = manifest["config"]
    mesh = generate_disc_mesh(cfg["inverse_elements"], cfg["inverse_seed"])
    ecfg = ExperimentConfig(**cfg)
    ph = ecfg.phantom_object()
    out = {}
    for name, entry in manifest["variants"].items():
        csv = args.rundir / name / "delta_sigma.csv"
        if not csv.exists():
            continue
        _, values = read_csv_field(csv)
        fld = FemField(lagrange1(mesh), values)
        from .forward import BoundaryCondition
        bcs = []
        for lbl in entry["boundary_conditions"]:
            if lbl.startswith("linear@"):
                bcs.append(BoundaryCondition.linear(float(lbl[7:-3])))
            else:
                bcs.append(BoundaryCondition(lbl))
        bg = make_background(bcs, entry["p"], mesh,
                             forward_mesh=generate_disc_mesh(
                                 cfg["forward_elements"], cfg["forward_seed"]))
        rep = streak_metric(fld, ph, background=bg,
                            dilation=cfg.get("streak_dilation", 3))
        out[name] = {"mass_fraction": mass_fraction(fld, ph),
                     "detected_peaks_deg": rep.detected_peaks,
                     "predicted_directions_deg": rep.predicted_directions}
        print("%-24s mass %.3f  peaks %s" % (name, out[name]["mass_fraction"],
                                             ["%.0f" % a for a in rep.detected_peaks]))
    with open(args.rundir / "metrics_recomputed.json", "w") as fh:
        json.dump(out, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    handlers = {"mesh": cmd_mesh, "forward": cmd_forward,
                "reconstruct": cmd_reconstruct, "symbols": cmd_symbols,
                "bichar": cmd_bichar, "experiment": cmd_experiment,
                "metrics": cmd_metrics}
    try:
        return handlers[args.command](args)
    except Exception as exc:
        from .experiments import StageError

        stage = getattr(exc, "stage", "unknown")
        print("FAILED [stage=%s]: %s" % (stage, exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
