"""Discrete function spaces on a triangulation.

Three families are provided: continuous piecewise-linear and quadratic
Lagrange spaces, and the lowest-order Raviart-Thomas space whose degree of
freedom on an edge is the total flux across it (measured along the global
edge normal, the a->b tangent rotated by -90 degrees).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import Mesh2D
from .quadrature import rule


@dataclass(frozen=True)
class SpaceDescriptor:
    kind: str
    mesh: Mesh2D
    dof_count: int
    dof_map: np.ndarray          # (n_triangles, n_local)
    boundary_dofs: np.ndarray
    signs: np.ndarray = None     # RT0 only: per-(triangle, local edge) +-1

    def __post_init__(self):
        if self.dof_map.min() < 0 or self.dof_map.max() >= self.dof_count:
            raise ValueError("dof_map index out of range")


def lagrange1(mesh):
    sp = mesh._cache.get("Lagrange1")
    if sp is None:
        sp = SpaceDescriptor("Lagrange1", mesh, mesh.n_vertices,
                             mesh.triangles,
                             np.nonzero(mesh.boundary_vertex_flags)[0])
        mesh._cache["Lagrange1"] = sp
    return sp


def lagrange2(mesh):
    sp = mesh._cache.get("Lagrange2")
    if sp is None:
        n_v = mesh.n_vertices
        dof_map = np.hstack([mesh.triangles, n_v + mesh.tri_edges])
        bdofs = np.concatenate([
            np.nonzero(mesh.boundary_vertex_flags)[0],
            n_v + np.nonzero(mesh.boundary_edge_flags)[0],
        ])
        sp = SpaceDescriptor("Lagrange2", mesh, n_v + mesh.n_edges,
                             dof_map, bdofs)
        mesh._cache["Lagrange2"] = sp
    return sp


def raviart_thomas0(mesh):
    sp = mesh._cache.get("RaviartThomas0")
    if sp is None:
        sp = SpaceDescriptor("RaviartThomas0", mesh, mesh.n_edges,
                             mesh.tri_edges,
                             np.nonzero(mesh.boundary_edge_flags)[0],
                             signs=mesh.tri_edge_signs)
        mesh._cache["RaviartThomas0"] = sp
    return sp


def space_for(mesh, kind):
    return {"Lagrange1": lagrange1, "Lagrange2": lagrange2,
            "RaviartThomas0": raviart_thomas0}[kind](mesh)


def dof_coordinates(space):
    """Physical location of each dof (vertices, plus edge midpoints for P2).

    Boundary P2 midpoints stay on the straight polygon edge; boundary data
    is therefore evaluated on the polygon, consistent with the mesh."""
    mesh = space.mesh
    if space.kind == "Lagrange1":
        return mesh.vertices
    if space.kind == "Lagrange2":
        mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]]
                      + mesh.vertices[mesh.edges[:, 1]])
        return np.vstack([mesh.vertices, mids])
    raise ValueError("dof coordinates only defined for Lagrange spaces")


# ----------------------------------------------------------------------
# per-element basis tables at quadrature points
# ----------------------------------------------------------------------

@dataclass
class ElementTables:
    """Basis values at the quadrature points of every triangle.

    val: (n_t, n_q, n_loc) for scalar spaces, (n_t, n_q, n_loc, 2) for RT0
    grad: (n_t, n_q, n_loc, 2) for scalar spaces
    div: (n_t, n_loc) for RT0 (element-wise constant)
    """
    space: SpaceDescriptor
    qpoints: np.ndarray
    qweights: np.ndarray
    weights: np.ndarray          # (n_t, n_q): quadrature weight * 2*area
    points: np.ndarray           # (n_t, n_q, 2): physical quad points
    val: np.ndarray
    grad: np.ndarray = None
    div: np.ndarray = None


def _p1_ref(qp):
    lam = np.column_stack([1 - qp[:, 0] - qp[:, 1], qp[:, 0], qp[:, 1]])
    glam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return lam, glam


def _p2_ref(qp):
    lam, glam = _p1_ref(qp)
    n_q = len(qp)
    val = np.empty((n_q, 6))
    val[:, :3] = lam * (2 * lam - 1)
    val[:, 3] = 4 * lam[:, 1] * lam[:, 2]
    val[:, 4] = 4 * lam[:, 2] * lam[:, 0]
    val[:, 5] = 4 * lam[:, 0] * lam[:, 1]
    grad = np.empty((n_q, 6, 2))
    for i in range(3):
        grad[:, i, :] = (4 * lam[:, i, None] - 1) * glam[i]
    pairs = [(1, 2), (2, 0), (0, 1)]
    for k, (i, j) in enumerate(pairs):
        grad[:, 3 + k, :] = 4 * (lam[:, i, None] * glam[j] + lam[:, j, None] * glam[i])
    return val, grad


def element_tables(mesh, kind, degree):
    """Cached basis tables for (space kind, quadrature degree)."""
    key = ("tables", kind, degree)
    tab = mesh._cache.get(key)
    if tab is not None:
        return tab
    qp, qw = rule(degree)
    n_q = len(qp)
    tris = mesh.triangles
    verts = mesh.vertices
    p0 = verts[tris[:, 0]]
    e1 = verts[tris[:, 1]] - p0
    e2 = verts[tris[:, 2]] - p0
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    areas = 0.5 * det
    weights = np.multiply.outer(2.0 * areas, qw)
    points = (p0[:, None, :] + np.multiply.outer(qp[:, 0], e1).transpose(1, 0, 2)
              + np.multiply.outer(qp[:, 1], e2).transpose(1, 0, 2))
    # inverse-transpose Jacobian rows for gradient mapping
    invT = np.empty((len(tris), 2, 2))
    invT[:, 0, 0] = e2[:, 1] / det
    invT[:, 1, 0] = -e2[:, 0] / det
    invT[:, 0, 1] = -e1[:, 1] / det
    invT[:, 1, 1] = e1[:, 0] / det

    space = space_for(mesh, kind)
    if kind == "Lagrange1":
        lam, glam = _p1_ref(qp)
        val = np.broadcast_to(lam, (len(tris), n_q, 3)).copy()
        grad = np.einsum("tab,ib->tia", invT, glam)
        grad = np.broadcast_to(grad[:, None, :, :], (len(tris), n_q, 3, 2)).copy()
        tab = ElementTables(space, qp, qw, weights, points, val, grad=grad)
    elif kind == "Lagrange2":
        rv, rg = _p2_ref(qp)
        val = np.broadcast_to(rv, (len(tris), n_q, 6)).copy()
        grad = np.einsum("tab,qib->tqia", invT, rg)
        tab = ElementTables(space, qp, qw, weights, points, val, grad=grad)
    elif kind == "RaviartThomas0":
        signs = mesh.tri_edge_signs
        corners = verts[tris]                      # (n_t, 3, 2)
        diff = points[:, :, None, :] - corners[:, None, :, :]
        scale = (signs / (2.0 * areas)[:, None])   # (n_t, 3)
        val = diff * scale[:, None, :, None]
        div = signs / areas[:, None]
        tab = ElementTables(space, qp, qw, weights, points, val, div=div)
    else:
        raise ValueError("unknown space kind %r" % kind)
    mesh._cache[key] = tab
    return tab


def rt0_interpolate(mesh, vector_fn, n_gauss=3):
    """RT0 coefficients (edge fluxes) of a smooth vector field."""
    from .quadrature import gauss_segment
    s, w = gauss_segment(n_gauss)
    a = mesh.vertices[mesh.edges[:, 0]]
    b = mesh.vertices[mesh.edges[:, 1]]
    tangent = b - a
    normal = np.column_stack([tangent[:, 1], -tangent[:, 0]])  # length |e|
    coeffs = np.zeros(mesh.n_edges)
    for si, wi in zip(s, w):
        pts = a + si * tangent
        vals = np.asarray(vector_fn(pts))
        coeffs += wi * np.einsum("ed,ed->e", vals, normal)
    return coeffs


def rt0_eval_at(mesh, coeffs, tri, points):
    """Evaluate an RT0 field with given edge coefficients at physical points
    lying in the stated triangles."""
    signs = mesh.tri_edge_signs[tri]
    areas = mesh.triangle_areas()[tri]
    corners = mesh.vertices[mesh.triangles[tri]]
    c = coeffs[mesh.tri_edges[tri]] * signs / (2.0 * areas[:, None])
    diff = points[:, None, :] - corners
    return np.einsum("ek,ekd->ed", c, diff)


def node_average_gradients(mesh, tri_vectors):
    """Area-weighted average of per-triangle vectors onto vertices."""
    areas = mesh.triangle_areas()
    inc = mesh.vertex_tri_incidence()
    wsum = inc @ areas
    out = np.empty((mesh.n_vertices, 2))
    for d in range(2):
        out[:, d] = (inc @ (areas * tri_vectors[:, d])) / wsum
    return out


def lagrange_gradient_per_tri(field):
    """Element-wise constant gradient of a P1 field, shape (n_t, 2)."""
    mesh = field.space.mesh
    tab = element_tables(mesh, "Lagrange1", 1)
    return np.einsum("tid,ti->td", tab.grad[:, 0, :, :],
                     field.coefficients[mesh.triangles])
