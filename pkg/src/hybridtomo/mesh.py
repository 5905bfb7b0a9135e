"""Conforming triangulations of the unit disc.

The generator lays vertices on concentric rings (m*k nodes on ring k, R
rings) and stitches consecutive rings with an angular merge, which gives
exactly m*R**2 triangles.  Ring rotations are drawn from a seeded RNG, so
a (target_elements, seed) pair always reproduces the same mesh, and two
different targets give structurally different meshes (used to generate
forward data on a mesh that is not the reconstruction mesh).

All boundary vertices sit exactly on the unit circle; the boundary itself
is the inscribed polygon.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

BOUNDARY_CIRCLE_TOL = 1e-12
LOCATE_TOL = 1e-10


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


class MeshError(ValueError):
    """Invalid mesh input or construction."""


class PointNotFoundError(MeshError):
    """Query point is outside the meshed polygon."""


@dataclass
class Mesh2D:
    """Immutable conforming triangulation of the unit disc.

    Attributes
    ----------
    vertices : (n_vertices, 2) float array
    triangles : (n_triangles, 3) int array
        Vertex indices, counter-clockwise (positive signed area).
    edges : (n_edges, 2) int array
        Unique edges, each stored with its lower vertex index first.
    tri_edges : (n_triangles, 3) int array
        Global edge index of the local edge opposite each local vertex.
    tri_edge_signs : (n_triangles, 3) int array
        +1 where the triangle's outward normal on that edge agrees with
        the global edge normal (rotate the a->b tangent by -90 degrees).
    edge_tris : (n_edges, 2) int array
        Triangles sharing each edge, -1 in the second slot on the boundary.
    boundary_vertex_flags, boundary_edge_flags : bool arrays
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray = field(init=False)
    tri_edges: np.ndarray = field(init=False)
    tri_edge_signs: np.ndarray = field(init=False)
    edge_tris: np.ndarray = field(init=False)
    boundary_vertex_flags: np.ndarray = field(init=False)
    boundary_edge_flags: np.ndarray = field(init=False)
    fingerprint: str = field(init=False)

    def __post_init__(self):
        verts = np.ascontiguousarray(np.asarray(self.vertices, dtype=float))
        tris = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64))
        if verts.ndim != 2 or verts.shape[1] != 2:
            raise MeshError("vertices must be an (n, 2) array")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise MeshError("triangles must be an (n, 3) array")
        # enforce CCW orientation
        p0, p1, p2 = (verts[tris[:, k]] for k in range(3))
        area2 = _cross2(p1 - p0, p2 - p0)
        flip = area2 < 0
        if np.any(flip):
            tris = tris.copy()
            tris[flip, 1], tris[flip, 2] = tris[flip, 2], tris[flip, 1]
        self.vertices = verts
        self.triangles = tris
        self._build_connectivity()
        digest = hashlib.blake2b(digest_size=12)
        digest.update(verts.tobytes())
        digest.update(tris.tobytes())
        self.fingerprint = digest.hexdigest()
        for arr in (self.vertices, self.triangles, self.edges, self.tri_edges,
                    self.tri_edge_signs, self.edge_tris,
                    self.boundary_vertex_flags, self.boundary_edge_flags):
            arr.flags.writeable = False
        self._cache = {}

    def _build_connectivity(self):
        tris = self.triangles
        n_t = len(tris)
        # local edge i is opposite local vertex i
        raw = np.stack([tris[:, [1, 2]], tris[:, [2, 0]], tris[:, [0, 1]]], axis=1)
        raw = raw.reshape(-1, 2)
        signs = np.where(raw[:, 0] < raw[:, 1], 1, -1).astype(np.int64)
        canon = np.sort(raw, axis=1)
        edges, inv, counts = np.unique(canon, axis=0, return_inverse=True,
                                       return_counts=True)
        if counts.max() > 2:
            raise MeshError("an edge is shared by more than two triangles")
        self.edges = edges
        self.tri_edges = inv.reshape(n_t, 3)
        self.tri_edge_signs = signs.reshape(n_t, 3)
        edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
        order = np.argsort(inv, kind="stable")
        tri_of_entry = np.repeat(np.arange(n_t), 3)[order]
        eids = inv[order]
        first = np.ones(len(eids), dtype=bool)
        first[1:] = eids[1:] != eids[:-1]
        edge_tris[eids[first], 0] = tri_of_entry[first]
        edge_tris[eids[~first], 1] = tri_of_entry[~first]
        self.edge_tris = edge_tris
        self.boundary_edge_flags = edge_tris[:, 1] < 0
        bflags = np.zeros(len(self.vertices), dtype=bool)
        bflags[edges[self.boundary_edge_flags].ravel()] = True
        self.boundary_vertex_flags = bflags

    # ------------------------------------------------------------------
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    def triangle_areas(self):
        p0, p1, p2 = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * _cross2(p1 - p0, p2 - p0)

    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    def edge_lengths(self):
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def h_max(self):
        return float(self.edge_lengths().max())

    def h_mean(self):
        return float(self.edge_lengths().mean())

    def validate(self):
        """Check all structural invariants; raises MeshError on failure."""
        areas = self.triangle_areas()
        if not np.all(areas > 0):
            raise MeshError("triangle with non-positive signed area")
        on_circle = np.abs(np.hypot(*self.vertices[self.boundary_vertex_flags].T) - 1.0)
        if on_circle.size and on_circle.max() > BOUNDARY_CIRCLE_TOL:
            raise MeshError("boundary vertex off the unit circle by %.3e"
                            % on_circle.max())
        interior = ~self.boundary_edge_flags
        if np.any(self.edge_tris[interior, 1] < 0):
            raise MeshError("interior edge with a single triangle")
        rows = self.edges[:, 0]
        cols = self.edges[:, 1]
        n_v = self.n_vertices
        adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n_v, n_v))
        n_comp, _ = connected_components(adj, directed=False)
        if n_comp != 1:
            raise MeshError("mesh is not connected (%d components)" % n_comp)
        return True

    # -- point location -------------------------------------------------
    def _locator(self):
        loc = self._cache.get("locator")
        if loc is None:
            loc = _Locator(self)
            self._cache["locator"] = loc
        return loc

    def locate_batch(self, points, tol=LOCATE_TOL):
        """Containing triangle and barycentric coordinates for many points.

        Returns (tri_index, bary) where tri_index is -1 for points outside
        the meshed polygon.  Ties on shared edges resolve to the lowest
        triangle index.
        """
        return self._locator().locate(np.atleast_2d(np.asarray(points, float)), tol)

    def vertex_tri_incidence(self):
        inc = self._cache.get("vertex_tri")
        if inc is None:
            n_t = self.n_triangles
            rows = self.triangles.ravel()
            cols = np.repeat(np.arange(n_t), 3)
            inc = csr_matrix((np.ones(3 * n_t, dtype=np.int8), (rows, cols)),
                             shape=(self.n_vertices, n_t))
            self._cache["vertex_tri"] = inc
        return inc


class _Locator:
    """KD-tree point location with escalating candidate sets."""

    def __init__(self, mesh):
        self.mesh = mesh
        verts = mesh.vertices
        tris = mesh.triangles
        self.p0 = verts[tris[:, 0]]
        e1 = verts[tris[:, 1]] - self.p0
        e2 = verts[tris[:, 2]] - self.p0
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        # rows of the inverse affine map, for barycentric coordinates
        self.inv = np.empty((len(tris), 2, 2))
        self.inv[:, 0, 0] = e2[:, 1] / det
        self.inv[:, 0, 1] = -e2[:, 0] / det
        self.inv[:, 1, 0] = -e1[:, 1] / det
        self.inv[:, 1, 1] = e1[:, 0] / det
        self.tree = cKDTree(mesh.centroids())
        self.ball_radius = 3.0 * mesh.h_max()
        btris = np.nonzero(mesh.boundary_edge_flags[mesh.tri_edges].any(axis=1))[0]
        self.boundary_tris = btris
        self.boundary_tree = cKDTree(mesh.centroids()[btris])

    def _bary(self, pts, cand):
        d = pts - self.p0[cand]
        lam12 = np.einsum("...ij,...j->...i", self.inv[cand], d)
        lam0 = 1.0 - lam12.sum(axis=-1)
        return np.concatenate([lam0[..., None], lam12], axis=-1)

    def _try_candidates(self, pts, cand, tol):
        """cand: (n, k) candidate triangles. Lowest containing index per point."""
        bary = self._bary(pts[:, None, :], cand)
        ok = bary.min(axis=-1) >= -tol
        # prefer the lowest triangle index among containing candidates
        masked = np.where(ok, cand, np.iinfo(np.int64).max)
        pick = masked.argmin(axis=1)
        found = ok.any(axis=1)
        tri = np.where(found, cand[np.arange(len(pts)), pick], -1)
        bar = bary[np.arange(len(pts)), pick]
        return tri, bar, found

    def locate(self, pts, tol):
        n = len(pts)
        tri = np.full(n, -1, dtype=np.int64)
        bary = np.zeros((n, 3))
        outside = np.hypot(pts[:, 0], pts[:, 1]) > 1.0 + 1e-10
        todo = np.nonzero(~outside)[0]
        for k in (8, 64):
            if todo.size == 0:
                break
            kk = min(k, self.mesh.n_triangles)
            _, cand = self.tree.query(pts[todo], k=kk)
            cand = np.atleast_2d(cand)
            if cand.shape[0] != len(todo):
                cand = cand.reshape(len(todo), -1)
            t, b, found = self._try_candidates(pts[todo], cand, tol)
            hit = todo[found]
            tri[hit] = t[found]
            bary[hit] = b[found]
            todo = todo[~found]
            if kk == self.mesh.n_triangles:
                todo = np.array([], dtype=np.int64)
        # remaining points: exhaustive test inside a geometric ball
        for i in todo:
            cand = self.tree.query_ball_point(pts[i], self.ball_radius)
            if not cand:
                continue
            cand = np.sort(np.asarray(cand, dtype=np.int64))
            b = self._bary(pts[i][None, :], cand[None, :])[0]
            ok = b.min(axis=-1) >= -tol
            if ok.any():
                j = np.nonzero(ok)[0][0]
                tri[i] = cand[j]
                bary[i] = b[j]
        np.clip(bary, 0.0, None, out=bary)
        s = bary.sum(axis=1)
        good = tri >= 0
        bary[good] /= s[good, None]
        return tri, bary

    def nearest_boundary(self, pts):
        """Nearest boundary triangle with (unclamped) barycentric
        coordinates: linear extrapolation, exact for affine fields."""
        _, idx = self.boundary_tree.query(pts)
        cand = self.boundary_tris[np.atleast_1d(idx)]
        bary = self._bary(pts, cand)
        return cand, bary


def locate_point(mesh, x, tol=LOCATE_TOL):
    """Triangle index and barycentric coordinates of a single point.

    Raises PointNotFoundError when the point lies outside the meshed
    polygon (or outside the unit disc beyond a 1e-10 tolerance).
    """
    tri, bary = mesh.locate_batch(np.asarray(x, float)[None, :], tol)
    if tri[0] < 0:
        raise PointNotFoundError("point %s is outside the meshed domain"
                                 % (tuple(np.asarray(x, float)),))
    return int(tri[0]), bary[0]


# ----------------------------------------------------------------------
# generation
# ----------------------------------------------------------------------

def _choose_layout(target_elements):
    """Pick (m, rings) with m*rings**2 closest to the target count."""
    best = None
    for m in range(4, 17):
        r0 = max(1, int(round(np.sqrt(target_elements / m))))
        for r in (r0 - 1, r0, r0 + 1):
            if r < 1:
                continue
            err = abs(m * r * r - target_elements)
            key = (err, m, r)
            if best is None or key < best:
                best = key
    _, m, r = best
    return m, r


def generate_disc_mesh(target_elements, seed=0):
    """Triangulate the unit disc with close to `target_elements` triangles.

    The element count always lands within 15% of the target (exactly on it
    for counts of the form m*R**2, 4 <= m <= 16).  The same
    (target_elements, seed) pair reproduces the identical mesh.
    """
    target_elements = int(target_elements)
    if target_elements < 8:
        raise MeshError("target_elements must be at least 8, got %d"
                        % target_elements)
    m, rings = _choose_layout(target_elements)
    count = m * rings * rings
    if abs(count - target_elements) > 0.15 * target_elements:
        raise MeshError("no ring layout within 15%% of %d elements"
                        % target_elements)
    rng = np.random.default_rng(seed)
    base_rot = rng.uniform(0.0, 2.0 * np.pi)

    verts = [np.zeros((1, 2))]
    ring_angles = [np.zeros(1)]
    for k in range(1, rings + 1):
        n_k = m * k
        offset = rng.uniform(0.0, 1.0)
        ang = np.sort(np.mod(base_rot + 2.0 * np.pi * (np.arange(n_k) + offset) / n_k,
                             2.0 * np.pi))
        r = k / rings
        ring = np.column_stack([r * np.cos(ang), r * np.sin(ang)])
        if k == rings:
            # boundary ring must sit exactly on the unit circle
            ring = np.column_stack([np.cos(ang), np.sin(ang)])
        verts.append(ring)
        ring_angles.append(ang)
    starts = np.cumsum([0] + [len(v) for v in verts[:-1]])
    vertices = np.vstack(verts)

    tris = []
    # central fan
    n1 = m
    s1 = starts[1]
    for i in range(n1):
        tris.append((0, s1 + i, s1 + (i + 1) % n1))
    # stitched annuli
    for k in range(1, rings):
        a = ring_angles[k]
        b = ring_angles[k + 1]
        ia0 = starts[k]
        ib0 = starts[k + 1]
        n_a = len(a)
        n_b = len(b)
        j0 = int(np.argmin(np.abs(np.mod(b - a[0] + np.pi, 2 * np.pi) - np.pi)))
        db0 = np.mod(b[j0] - a[0] + np.pi, 2 * np.pi) - np.pi

        def ang_a(t):
            return a[t % n_a] + 2 * np.pi * (t // n_a)

        def ang_b(t):
            q, rr = divmod(j0 + t, n_b)
            return a[0] + db0 + (b[rr] + 2 * np.pi * q - b[j0])

        ia = ib = 0
        while ia < n_a or ib < n_b:
            cur_a = ia0 + (ia % n_a)
            cur_b = ib0 + ((j0 + ib) % n_b)
            take_a = ib >= n_b or (ia < n_a and ang_a(ia + 1) <= ang_b(ib + 1))
            if take_a:
                tris.append((cur_a, cur_b, ia0 + ((ia + 1) % n_a)))
                ia += 1
            else:
                tris.append((cur_a, cur_b, ib0 + ((j0 + ib + 1) % n_b)))
                ib += 1

    mesh = Mesh2D(vertices, np.asarray(tris, dtype=np.int64))
    mesh.validate()
    return mesh


def refine_uniform(mesh):
    """Midpoint refinement: 4x the triangles, boundary midpoints snapped
    back onto the unit circle."""
    n_v = mesh.n_vertices
    mids = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    bnd = mesh.boundary_edge_flags
    norms = np.hypot(mids[bnd, 0], mids[bnd, 1])
    mids[bnd] /= norms[:, None]
    vertices = np.vstack([mesh.vertices, mids])
    t = mesh.triangles
    me = n_v + mesh.tri_edges  # midpoint vertex of the edge opposite local i
    quads = np.concatenate([
        np.stack([t[:, 0], me[:, 2], me[:, 1]], axis=1),
        np.stack([t[:, 1], me[:, 0], me[:, 2]], axis=1),
        np.stack([t[:, 2], me[:, 1], me[:, 0]], axis=1),
        np.stack([me[:, 0], me[:, 1], me[:, 2]], axis=1),
    ])
    return Mesh2D(vertices, quads)


# ----------------------------------------------------------------------
# field transfer
# ----------------------------------------------------------------------

def project_field(src_mesh, src_field, dst_mesh, return_info=False):
    """Nodal interpolation of a scalar Lagrange field onto another mesh.

    Destination nodes outside the source polygon (normal near the circular
    boundary, where the two inscribed polygons differ) fall back to the
    nearest boundary triangle; the count is recorded in the returned
    field's provenance note.
    """
    from .fields import FemField, Provenance
    from .spaces import lagrange1

    space = src_field.space
    if space.kind not in ("Lagrange1", "Lagrange2"):
        raise MeshError("project_field expects a scalar Lagrange field")
    if space.mesh is not src_mesh:
        raise MeshError("src_field does not live on src_mesh")
    pts = dst_mesh.vertices
    tri, bary = src_mesh.locate_batch(pts)
    missing = np.nonzero(tri < 0)[0]
    if missing.size:
        loc = src_mesh._locator()
        ftri, fbary = loc.nearest_boundary(pts[missing])
        tri = tri.copy()
        bary = bary.copy()
        tri[missing] = ftri
        bary[missing] = fbary
    values = _eval_lagrange(src_field, tri, bary)
    note = "projected from %s" % src_mesh.fingerprint
    if missing.size:
        note += "; %d boundary-fallback nodes" % missing.size
    out = FemField(lagrange1(dst_mesh), values,
                   provenance=Provenance(mesh_fingerprint=dst_mesh.fingerprint,
                                         sources=src_field.provenance.sources,
                                         note=note))
    if return_info:
        return out, {"fallback_nodes": missing}
    return out


def _eval_lagrange(fld, tri, bary):
    space = fld.space
    t = space.mesh.triangles[tri]
    if space.kind == "Lagrange1":
        return np.einsum("nk,nk->n", fld.coefficients[t], bary)
    # quadratic: vertex and edge-midpoint shape functions
    lam = bary
    e = space.mesh.tri_edges[tri]
    vv = fld.coefficients[t]
    ee = fld.coefficients[space.mesh.n_vertices + e]
    val = (vv * lam * (2 * lam - 1)).sum(axis=1)
    val += 4 * (ee[:, 0] * lam[:, 1] * lam[:, 2]
                + ee[:, 1] * lam[:, 2] * lam[:, 0]
                + ee[:, 2] * lam[:, 0] * lam[:, 1])
    return val


def dilate_triangle_set(mesh, tri_mask, rings):
    """Grow a triangle set by `rings` layers of vertex-adjacent triangles."""
    inc = mesh.vertex_tri_incidence()
    mask = np.asarray(tri_mask, dtype=bool).copy()
    for _ in range(rings):
        vmask = (inc @ mask.astype(np.int8)) > 0
        mask = (inc.T @ vmask.astype(np.int8)) > 0
    return mask
