"""End-to-end experiment driver.

A run generates the two meshes, solves the phantom and reference forward
problems on the forward mesh, projects the interior data onto the
reconstruction mesh, solves the least-squares reconstruction, and
quantifies artifact streaks against the directions predicted by the
symbol analysis.  Every parameter, seed, tolerance and residual lands in
a deterministic JSON manifest (wall times live under the "timing" key and
are excluded from reproducibility comparisons)."""

from __future__ import annotations

import json
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import assemble_form
from .fields import FemField, field_sub
from .forward import (BoundaryCondition, compute_interior_data,
                      make_background, solve_forward_mixed)
from .inverse import LinearizedProblem, solve_reconstruction
from .mesh import dilate_triangle_set, generate_disc_mesh, project_field
from .microlocal import loss_directions
from .phantom import RectPhantom, rectangle_indicator
from .spaces import lagrange1
from .vtkio import (write_csv_field, write_csv_trace, write_mesh_listing,
                    write_png_field, write_vtk_mesh, write_vtk_polylines)

EXPERIMENT_KINDS = ("elliptic_vs_nonelliptic", "p_sweep",
                    "wavefront_alignment", "custom")


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__("stage %r failed: %s" % (stage, cause))
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentConfig:
    kind: str = "custom"
    p: float = 2.0
    p_values: list = None
    orientations_deg: list = None
    boundary_conditions: list = None     # expression strings (custom kind)
    inverse_elements: int = 12100
    forward_elements: int = 12544
    inverse_seed: int = 0
    forward_seed: int = 1
    phantom: dict = None
    solver_tol: float = 1e-8
    solver_max_iter: int = 0             # 0: solver default (20 * dofs)
    tikhonov_eps: object = "auto"
    noise: float = 0.0
    noise_seed: int = 1234
    output_dir: str = "hybridtomo_out"
    threads: int = 1
    png: bool = False
    streak_dilation: int = 3

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ValueError("unknown experiment kind %r (expected one of %s)"
                             % (self.kind, ", ".join(EXPERIMENT_KINDS)))
        if self.p <= 0:
            raise ValueError("p must be positive")
        if self.p_values is None:
            self.p_values = ([1.0, 2.0] if self.kind == "elliptic_vs_nonelliptic"
                             else [1.5, 2.0, 3.0, 4.0])
        if any(p <= 0 for p in self.p_values):
            raise ValueError("all p values must be positive")
        if self.orientations_deg is None:
            self.orientations_deg = [0.0, 22.5, 45.0]
        if self.boundary_conditions is None:
            self.boundary_conditions = ["x"]
        if not self.boundary_conditions:
            raise ValueError("at least one boundary condition required")
        if min(self.inverse_elements, self.forward_elements) < 8:
            raise ValueError("meshes need at least 8 elements")
        if self.phantom is None:
            self.phantom = {}
        if self.noise < 0:
            raise ValueError("noise level must be nonnegative")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def phantom_object(self):
        ph = dict(self.phantom)
        return RectPhantom(center=tuple(ph.get("center", (0.3, 0.3))),
                           half_widths=tuple(ph.get("half_widths", (0.12, 0.08))),
                           amplitude=float(ph.get("amplitude", 0.1)),
                           background=float(ph.get("background", 1.0)))

    @staticmethod
    def from_file(path):
        with open(path) as fh:
            data = json.load(fh)
        return ExperimentConfig(**data)

    def to_dict(self):
        d = asdict(self)
        d["p_values"] = [float(v) for v in self.p_values]
        d["orientations_deg"] = [float(v) for v in self.orientations_deg]
        return d


# ----------------------------------------------------------------------
# artifact metrics
# ----------------------------------------------------------------------

@dataclass
class StreakReport:
    orientation_histogram: np.ndarray    # 180 bins, energy per degree
    detected_peaks: list                 # degrees, sorted by energy (desc)
    peak_energies: list
    predicted_directions: list           # degrees: loss directions + 90
    peak_match_errors: list              # degrees, per detected peak
    threshold: float
    artifact_energy: float


def _support_nodes(mesh, ph, dilation):
    cents = mesh.centroids()
    verts_in = ph.contains(mesh.vertices)
    touch = ph.contains(cents) | verts_in[mesh.triangles].any(axis=1)
    dil = dilate_triangle_set(mesh, touch, dilation)
    nodes = np.zeros(mesh.n_vertices, dtype=bool)
    nodes[np.unique(mesh.triangles[dil])] = True
    return nodes


def mass_fraction(delta_sigma, ph, dilation=3):
    """Share of the lumped |delta_sigma| mass inside the dilated phantom
    support."""
    mesh = delta_sigma.space.mesh
    nodes = _support_nodes(mesh, ph, dilation)
    V = lagrange1(mesh)
    lumped = np.asarray(assemble_form(V, V, "mass").sum(axis=1)).ravel()
    w = np.abs(delta_sigma.coefficients) * lumped
    total = w.sum()
    return float(w[nodes].sum() / total) if total > 0 else 1.0


def _angdist_deg(a, b):
    d = abs((a - b) % 180.0)
    return min(d, 180.0 - d)


def streak_metric(delta_sigma, ph, background=None, dilation=3,
                  n_orientations=180):
    """Angular energy profile of the artifact field.

    The artifact field is the reconstruction with the dilated phantom
    support zeroed out.  Its squared values are integrated along lines
    through each phantom corner for every orientation (1-degree bins,
    trapezoid sampling at half the mean mesh size).  Peaks are local
    maxima above mean + 2 std; predicted directions are the symbol-level
    loss directions rotated by 90 degrees (propagation is perpendicular
    to the direction in which ellipticity is lost) and always come from
    the background's gradients, never from constants."""
    mesh = delta_sigma.space.mesh
    nodes = _support_nodes(mesh, ph, dilation)
    artifact = delta_sigma.coefficients.copy()
    artifact[nodes] = 0.0

    spacing = 0.5 * mesh.h_mean()
    thetas = np.radians(np.arange(n_orientations) * (180.0 / n_orientations))
    dirs = np.column_stack([np.cos(thetas), np.sin(thetas)])
    corners = ph.corners()
    segments = []     # (corner index, theta index, t-samples, points)
    all_pts = []
    for ci, c in enumerate(corners):
        cd = dirs @ c
        disc = cd * cd - (c @ c) + 1.0
        t0 = -cd - np.sqrt(disc)
        t1 = -cd + np.sqrt(disc)
        for ti in range(n_orientations):
            n = max(int(np.ceil((t1[ti] - t0[ti]) / spacing)), 2) + 1
            ts = np.linspace(t0[ti], t1[ti], n)
            pts = c + ts[:, None] * dirs[ti]
            segments.append((ti, ts))
            all_pts.append(pts)
    flat = np.vstack(all_pts)
    tri, bary = mesh.locate_batch(flat)
    vals = np.zeros(len(flat))
    ok = tri >= 0
    loc = delta_sigma.space.dof_map[tri[ok]]
    vals[ok] = np.einsum("nk,nk->n", artifact[loc], bary[ok])
    hist = np.zeros(n_orientations)
    offset = 0
    for ti, ts in segments:
        n = len(ts)
        v2 = vals[offset:offset + n] ** 2
        dt = ts[1] - ts[0]
        hist[ti] += dt * (v2.sum() - 0.5 * (v2[0] + v2[-1]))
        offset += n

    mean = float(hist.mean())
    std = float(hist.std())
    threshold = mean + 2.0 * std
    peaks = []
    for i in range(n_orientations):
        left = hist[(i - 1) % n_orientations]
        right = hist[(i + 1) % n_orientations]
        if hist[i] > left and hist[i] >= right and hist[i] > threshold:
            peaks.append(i)
    peaks.sort(key=lambda i: -hist[i])
    bin_deg = 180.0 / n_orientations
    peak_angles = [float(i * bin_deg) for i in peaks]
    peak_energies = [float(hist[i]) for i in peaks]

    predicted = []
    if background is not None:
        dirs_loss = loss_directions(background.mean_gradients(), background.p)
        predicted = sorted((np.degrees(np.arctan2(v[1], v[0]) % np.pi) + 90.0)
                           % 180.0 for v in dirs_loss)
    match = [min((_angdist_deg(a, pd) for pd in predicted), default=float("nan"))
             for a in peak_angles]
    return StreakReport(hist, peak_angles, peak_energies,
                        [float(v) for v in predicted], match, threshold,
                        float(hist.sum()))


# ----------------------------------------------------------------------
# experiment variants
# ----------------------------------------------------------------------

def _elliptic_pair():
    return [BoundaryCondition("x"), BoundaryCondition.linear(np.pi / 4)]


def _variants(cfg):
    out = []
    if cfg.kind == "elliptic_vs_nonelliptic":
        for p in cfg.p_values:
            out.append({"name": "p%g_elliptic_J2" % p, "p": float(p),
                        "bcs": _elliptic_pair()})
            out.append({"name": "p%g_nonelliptic_J1" % p, "p": float(p),
                        "bcs": [BoundaryCondition("x")]})
    elif cfg.kind == "p_sweep":
        for p in cfg.p_values:
            out.append({"name": "p%g" % p, "p": float(p),
                        "bcs": [BoundaryCondition("x")]})
    elif cfg.kind == "wavefront_alignment":
        for theta in cfg.orientations_deg:
            out.append({"name": "theta%g" % theta, "p": float(cfg.p),
                        "bcs": [BoundaryCondition.linear(np.radians(theta))]})
    else:
        bcs = [BoundaryCondition(expr) for expr in cfg.boundary_conditions]
        out.append({"name": "run", "p": float(cfg.p), "bcs": bcs})
    return out


def _overlay_segments(ph, predicted_deg, length=2.5):
    """Straight prediction lines through each phantom corner, clipped at
    the disc by construction of the export viewer."""
    segs = []
    for c in ph.corners():
        for ang in predicted_deg:
            d = np.array([np.cos(np.radians(ang)), np.sin(np.radians(ang))])
            segs.append(np.vstack([c - length / 2 * d, c + length / 2 * d]))
    return segs


def _run_variant(cfg, variant, recon_mesh, fwd_mesh, ph, outdir):
    t_start = time.perf_counter()
    p = variant["p"]
    bcs = variant["bcs"]
    sigma_fn = rectangle_indicator(ph)
    bg = make_background(bcs, p, recon_mesh, forward_mesh=fwd_mesh)
    data_diff = []
    rng = np.random.default_rng(cfg.noise_seed)
    for k, bc in enumerate(bcs):
        sol = solve_forward_mixed(sigma_fn, bc, fwd_mesh)
        H = compute_interior_data(sigma_fn, sol.grad_tri, p, fwd_mesh)
        if cfg.noise > 0:
            noisy = H.coefficients * (1.0 + cfg.noise
                                      * rng.uniform(-1.0, 1.0, len(H.coefficients)))
            H = H.copy_with(noisy, note="noisy data")
        H_rec = project_field(fwd_mesh, H, recon_mesh)
        data_diff.append(field_sub(H_rec, bg.data_ref[k]))
    problem = LinearizedProblem(bg, data_diff, tikhonov_eps=cfg.tikhonov_eps)
    result = solve_reconstruction(problem, tol=cfg.solver_tol,
                                  max_iter=cfg.solver_max_iter or None)
    report = streak_metric(result.delta_sigma, ph, background=bg,
                           dilation=cfg.streak_dilation)
    frac = mass_fraction(result.delta_sigma, ph, dilation=cfg.streak_dilation)

    vdir = outdir / variant["name"]
    vdir.mkdir(parents=True, exist_ok=True)
    write_vtk_mesh(vdir / "delta_sigma.vtk", recon_mesh,
                   {"delta_sigma": result.delta_sigma.coefficients},
                   title="reconstruction %s" % variant["name"])
    write_csv_field(vdir / "delta_sigma.csv", recon_mesh,
                    result.delta_sigma.coefficients)
    np.savetxt(vdir / "streak_histogram.csv",
               np.column_stack([np.arange(len(report.orientation_histogram)),
                                report.orientation_histogram]),
               delimiter=",", header="angle_deg,energy", comments="")
    overlay = _overlay_segments(ph, report.predicted_directions)
    if overlay:
        write_vtk_polylines(vdir / "prediction_overlay.vtk", overlay)
    png_info = None
    if cfg.png:
        png_info = write_png_field(vdir / "delta_sigma.png", recon_mesh,
                                   result.delta_sigma.coefficients)
    entry = {
        "p": p,
        "J": len(bcs),
        "boundary_conditions": [bc.label for bc in bcs],
        "eps_used": float(result.eps_used),
        "solver_iterations": int(result.iterations),
        "solver_residual": float(result.residual_norm),
        "min_reference_gradient": float(bg.min_gradient),
        "metrics": {
            "mass_fraction_inside_support": frac,
            "detected_peaks_deg": report.detected_peaks,
            "peak_energies": report.peak_energies,
            "predicted_directions_deg": report.predicted_directions,
            "peak_match_errors_deg": report.peak_match_errors,
            "threshold": report.threshold,
            "artifact_energy": report.artifact_energy,
        },
    }
    if png_info:
        entry["png"] = png_info
    timing = {"variant_seconds": time.perf_counter() - t_start}
    return variant["name"], entry, timing


def run_experiment(cfg):
    """Run one experiment family; returns (manifest dict, output dir).

    Any stage failure removes the partial outputs and raises StageError
    naming the stage."""
    outdir = Path(cfg.output_dir)
    created = not outdir.exists()
    outdir.mkdir(parents=True, exist_ok=True)
    t_total = time.perf_counter()
    try:
        try:
            recon_mesh = generate_disc_mesh(cfg.inverse_elements, cfg.inverse_seed)
            fwd_mesh = generate_disc_mesh(cfg.forward_elements, cfg.forward_seed)
            if recon_mesh.fingerprint == fwd_mesh.fingerprint:
                raise ValueError("forward and inverse meshes are identical; "
                                 "change element counts or seeds")
            ph = cfg.phantom_object()
        except Exception as exc:
            raise StageError("setup", exc) from exc

        try:
            write_vtk_mesh(outdir / "recon_mesh.vtk", recon_mesh)
            write_mesh_listing(outdir / "recon_mesh.txt", recon_mesh)
            write_vtk_mesh(outdir / "forward_mesh.vtk", fwd_mesh)
        except Exception as exc:
            raise StageError("mesh_export", exc) from exc

        variants = _variants(cfg)
        results = {}
        timing = {}
        try:
            if cfg.threads > 1:
                with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                    futs = [pool.submit(_run_variant, cfg, v, recon_mesh,
                                        fwd_mesh, ph, outdir)
                            for v in variants]
                    for f in futs:
                        name, entry, tm = f.result()
                        results[name] = entry
                        timing[name] = tm
            else:
                for v in variants:
                    name, entry, tm = _run_variant(cfg, v, recon_mesh,
                                                   fwd_mesh, ph, outdir)
                    results[name] = entry
                    timing[name] = tm
        except StageError:
            raise
        except Exception as exc:
            raise StageError("reconstruction", exc) from exc

        manifest = {
            "version": __version__,
            "config": cfg.to_dict(),
            "meshes": {
                "inverse": {"elements": recon_mesh.n_triangles,
                            "vertices": recon_mesh.n_vertices,
                            "seed": cfg.inverse_seed,
                            "fingerprint": recon_mesh.fingerprint},
                "forward": {"elements": fwd_mesh.n_triangles,
                            "vertices": fwd_mesh.n_vertices,
                            "seed": cfg.forward_seed,
                            "fingerprint": fwd_mesh.fingerprint},
            },
            "phantom": {"center": list(ph.center),
                        "half_widths": list(ph.half_widths),
                        "amplitude": ph.amplitude,
                        "background": ph.background},
            "variants": results,
            "timing": {"total_seconds": time.perf_counter() - t_total,
                       "per_variant": timing},
        }
        with open(outdir / "manifest.json", "w") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=2, default=float)
            fh.write("\n")
        return manifest, outdir
    except StageError:
        if created:
            shutil.rmtree(outdir, ignore_errors=True)
        else:
            for child in outdir.iterdir():
                if child.is_dir():
                    shutil.rmtree(child, ignore_errors=True)
                else:
                    child.unlink(missing_ok=True)
        raise


def manifest_without_timing(manifest):
    """Manifest restricted to its reproducible part."""
    out = dict(manifest)
    out.pop("timing", None)
    return out
