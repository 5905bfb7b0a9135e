"""Export and import of meshes, fields and curves.

Formats: legacy VTK ASCII (version 2.0; UNSTRUCTURED_GRID with triangle
cells of type 5 for meshes and fields, POLYDATA lines for traces), CSV
(x, y, value rows for nodal fields; t, x, y, xi1, xi2 for traces), a plain
node/element listing, and an optional flat PNG raster of nodal fields.

All writers format floats with a fixed '%.17g' so identical inputs give
byte-identical files."""

from __future__ import annotations

import numpy as np

from .mesh import Mesh2D

_F = "%.17g"


def _fmt(*vals):
    return " ".join(_F % v for v in vals)


def write_vtk_mesh(path, mesh, point_data=None, title="hybridtomo mesh"):
    """Legacy VTK unstructured grid; point_data maps name -> nodal array."""
    lines = ["# vtk DataFile Version 2.0", title, "ASCII",
             "DATASET UNSTRUCTURED_GRID",
             "POINTS %d double" % mesh.n_vertices]
    for v in mesh.vertices:
        lines.append(_fmt(v[0], v[1], 0.0))
    n_t = mesh.n_triangles
    lines.append("CELLS %d %d" % (n_t, 4 * n_t))
    for t in mesh.triangles:
        lines.append("3 %d %d %d" % tuple(t))
    lines.append("CELL_TYPES %d" % n_t)
    lines.extend(["5"] * n_t)
    if point_data:
        lines.append("POINT_DATA %d" % mesh.n_vertices)
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            if len(values) != mesh.n_vertices:
                raise ValueError("point data %r has %d entries for %d nodes"
                                 % (name, len(values), mesh.n_vertices))
            lines.append("SCALARS %s double 1" % name)
            lines.append("LOOKUP_TABLE default")
            lines.extend(_F % v for v in values)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vtk_mesh(path):
    """Read back a legacy VTK unstructured triangle grid (type-5 cells).

    Returns (Mesh2D, point_data dict)."""
    with open(path) as fh:
        tokens = fh.read().split()
    i = 0

    def expect(word):
        nonlocal i
        while tokens[i].upper() != word:
            i += 1
        i += 1

    expect("POINTS")
    n_pts = int(tokens[i]); i += 2  # skip dtype
    pts = np.array(tokens[i:i + 3 * n_pts], dtype=float).reshape(n_pts, 3)[:, :2]
    i += 3 * n_pts
    expect("CELLS")
    n_cells = int(tokens[i]); total = int(tokens[i + 1]); i += 2
    raw = np.array(tokens[i:i + total], dtype=int)
    i += total
    tris = []
    k = 0
    while k < total:
        n = raw[k]
        if n == 3:
            tris.append(raw[k + 1:k + 4])
        k += n + 1
    expect("CELL_TYPES")
    i += n_cells
    point_data = {}
    while i < len(tokens):
        if tokens[i].upper() == "SCALARS":
            name = tokens[i + 1]
            i += 3
            if tokens[i].upper() == "LOOKUP_TABLE":
                i += 2
            point_data[name] = np.array(tokens[i:i + n_pts], dtype=float)
            i += n_pts
        else:
            i += 1
    return Mesh2D(pts, np.asarray(tris, dtype=np.int64)), point_data


def write_vtk_polylines(path, polylines, title="hybridtomo traces"):
    """POLYDATA lines; polylines is a list of (n_i, 2) point arrays."""
    polylines = [np.asarray(pl, dtype=float) for pl in polylines]
    n_pts = sum(len(pl) for pl in polylines)
    lines = ["# vtk DataFile Version 2.0", title, "ASCII", "DATASET POLYDATA",
             "POINTS %d double" % n_pts]
    for pl in polylines:
        for q in pl:
            lines.append(_fmt(q[0], q[1], 0.0))
    size = sum(len(pl) + 1 for pl in polylines)
    lines.append("LINES %d %d" % (len(polylines), size))
    offset = 0
    for pl in polylines:
        lines.append(" ".join([str(len(pl))]
                              + [str(offset + k) for k in range(len(pl))]))
        offset += len(pl)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def write_csv_field(path, mesh, values, header="x,y,value"):
    values = np.asarray(values, dtype=float)
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for (x, y), v in zip(mesh.vertices, values):
            fh.write("%s,%s,%s\n" % (_F % x, _F % y, _F % v))


def read_csv_field(path):
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    return data[:, :2], data[:, 2]


def write_csv_trace(path, trace):
    with open(path, "w") as fh:
        fh.write("t,x,y,xi1,xi2\n")
        for t, x, xi in zip(trace.t_values, trace.points, trace.covectors):
            fh.write(",".join(_F % v for v in (t, x[0], x[1], xi[0], xi[1]))
                     + "\n")


def write_mesh_listing(path, mesh):
    """Plain-text node/element listing: counts, then vertex and triangle
    rows."""
    with open(path, "w") as fh:
        fh.write("%d %d\n" % (mesh.n_vertices, mesh.n_triangles))
        for v in mesh.vertices:
            fh.write("v %s %s\n" % (_F % v[0], _F % v[1]))
        for t in mesh.triangles:
            fh.write("t %d %d %d\n" % tuple(t))


def read_mesh_listing(path):
    with open(path) as fh:
        n_v, n_t = (int(s) for s in fh.readline().split())
        verts = np.empty((n_v, 2))
        tris = np.empty((n_t, 3), dtype=np.int64)
        iv = it = 0
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts[iv] = [float(parts[1]), float(parts[2])]
                iv += 1
            elif parts[0] == "t":
                tris[it] = [int(parts[1]), int(parts[2]), int(parts[3])]
                it += 1
    return Mesh2D(verts, tris)


# fixed colormap for the optional PNG rasteriser (dark blue -> yellow)
PNG_COLORMAP_ANCHORS = [
    (0.0, (68, 1, 84)), (0.25, (59, 82, 139)), (0.5, (33, 145, 140)),
    (0.75, (94, 201, 98)), (1.0, (253, 231, 37)),
]


def write_png_field(path, mesh, values, size=512):
    """Flat per-triangle raster of a nodal field (each pixel takes the mean
    nodal value of its containing triangle); white outside the mesh.
    Requires pillow."""
    from PIL import Image

    values = np.asarray(values, dtype=float)
    tri_vals = values[mesh.triangles].mean(axis=1)
    lo, hi = float(tri_vals.min()), float(tri_vals.max())
    span = hi - lo if hi > lo else 1.0
    xs = np.linspace(-1, 1, size)
    gx, gy = np.meshgrid(xs, -xs)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    inside = np.hypot(pts[:, 0], pts[:, 1]) <= 1.0
    tri = np.full(len(pts), -1, dtype=np.int64)
    t, _ = mesh.locate_batch(pts[inside])
    tri[inside] = t
    img = np.full((size * size, 3), 255, dtype=np.uint8)
    ok = tri >= 0
    frac = (tri_vals[tri[ok]] - lo) / span
    anchors = PNG_COLORMAP_ANCHORS
    pos = np.array([a[0] for a in anchors])
    cols = np.array([a[1] for a in anchors], dtype=float)
    rgb = np.empty((ok.sum(), 3))
    for c in range(3):
        rgb[:, c] = np.interp(frac, pos, cols[:, c])
    img[ok] = np.clip(rgb, 0, 255).astype(np.uint8)
    Image.fromarray(img.reshape(size, size, 3)).save(path)
    return {"colormap_anchors": PNG_COLORMAP_ANCHORS, "value_range": [lo, hi]}
