"""Sparse Galerkin assembly.

Every bilinear form used in the package reduces to a weighted product of
per-element basis evaluations, so a single vectorised scatter
(`product_matrix`) does all the work.  Coefficients may be constants,
nodal Lagrange fields, per-triangle arrays, or callables evaluated at the
physical quadrature points; non-polynomial weights are integrated by the
same fixed rule (a documented variational crime).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.io import mmwrite

from .fields import FemField
from .quadrature import DEFAULT_DEGREE
from .spaces import SpaceDescriptor, element_tables

FORM_TAGS = ("mass", "weighted_mass", "stiffness", "div_pairing",
             "gradient_pairing", "data_pairing")


class AssemblyError(ValueError):
    pass


@dataclass
class SparseSystem:
    """A sparse operator with right-hand side and a declared symmetry class.

    symmetry_flag is one of "SPD", "symmetric-indefinite", "general"; the
    declared symmetry is verified on construction.
    """

    matrix: csr_matrix
    rhs: np.ndarray
    symmetry_flag: str = "general"
    constrained: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n, m = self.matrix.shape
        if n != m or len(self.rhs) != n:
            raise AssemblyError("matrix/rhs dimension mismatch")
        if self.symmetry_flag != "general":
            skew = abs(self.matrix - self.matrix.T)
            scale = max(abs(self.matrix).max(), 1e-300)
            if skew.nnz and skew.max() > 1e-10 * scale:
                raise AssemblyError(
                    "system declared %s but max |K - K^T| = %.3e (rel %.3e)"
                    % (self.symmetry_flag, skew.max(), skew.max() / scale))

    @property
    def n(self):
        return self.matrix.shape[0]

    def export_matrix_market(self, path):
        mmwrite(str(path), self.matrix.tocoo())


def coefficient_at_qp(mesh, coefficient, tab):
    """Coefficient values at every quadrature point, shape (n_t, n_q)."""
    n_t, n_q = tab.weights.shape
    if coefficient is None:
        return np.ones((n_t, n_q))
    if np.isscalar(coefficient):
        return np.full((n_t, n_q), float(coefficient))
    if isinstance(coefficient, FemField):
        if coefficient.space.mesh is not mesh:
            raise AssemblyError("coefficient field lives on a different mesh")
        ctab = element_tables(mesh, coefficient.space.kind, _deg(tab))
        loc = coefficient.coefficients[coefficient.space.dof_map]
        return np.einsum("tqi,ti->tq", ctab.val, loc)
    if callable(coefficient):
        flat = tab.points.reshape(-1, 2)
        return np.asarray(coefficient(flat), dtype=float).reshape(n_t, n_q)
    arr = np.asarray(coefficient, dtype=float)
    if arr.shape == (n_t,):
        return np.broadcast_to(arr[:, None], (n_t, n_q)).copy()
    if arr.shape == (n_t, n_q):
        return arr
    raise AssemblyError("unsupported coefficient of type %r" % type(coefficient))


def _deg(tab):
    # recover the quadrature degree a table was built with
    return {1: 1, 3: 2, 6: 4, 7: 5}[len(tab.qpoints)]


def product_matrix(row_dof, col_dof, row_eval, col_eval, weights,
                   n_rows, n_cols):
    """Assemble sum_q w[e,q] * row_eval[e,q,i](.) col_eval[e,q,j] into CSR.

    Evaluations are (n_t, n_q, n_loc) scalars or (n_t, n_q, n_loc, 2)
    vectors (contracted over the last axis)."""
    if row_eval.ndim == 4:
        loc = np.einsum("tq,tqid,tqjd->tij", weights, row_eval, col_eval)
    else:
        loc = np.einsum("tq,tqi,tqj->tij", weights, row_eval, col_eval)
    n_t, n_r, n_c = loc.shape
    rows = np.repeat(row_dof, n_c, axis=1).ravel()
    cols = np.tile(col_dof, (1, n_r)).ravel()
    return coo_matrix((loc.ravel(), (rows, cols)), shape=(n_rows, n_cols)).tocsr()


def product_vector(row_dof, row_eval, scalar_eval, weights, n_rows):
    """Assemble the functional sum_q w[e,q] * row_eval[e,q,i] * f[e,q]."""
    loc = np.einsum("tq,tqi,tq->ti", weights, row_eval, scalar_eval)
    out = np.zeros(n_rows)
    np.add.at(out, row_dof.ravel(), loc.ravel())
    return out


def _scalar_tables(space, degree):
    if space.kind not in ("Lagrange1", "Lagrange2"):
        raise AssemblyError("expected a scalar Lagrange space, got %s" % space.kind)
    return element_tables(space.mesh, space.kind, degree)


def assemble_form(space_row, space_col, form, coefficient=None,
                  quad_degree=DEFAULT_DEGREE):
    """Galerkin matrix of a named bilinear form.

    Forms
    -----
    mass            (u, v); scalar-scalar or RT0-RT0 (vector dot)
    weighted_mass   (c u, v) with c strictly positive
    stiffness       (c grad u, grad v), c strictly positive
    div_pairing     (div w, v): RT0 trial, Lagrange test
    gradient_pairing (b . grad u, v) with a per-triangle vector weight b
    data_pairing    (c u, v), c arbitrary sign (interior-data weights)
    """
    if form not in FORM_TAGS:
        raise AssemblyError("unknown form %r" % form)
    if space_row.mesh is not space_col.mesh:
        raise AssemblyError("row and column spaces live on different meshes")
    mesh = space_row.mesh
    if form in ("mass", "weighted_mass", "data_pairing"):
        rt = element_tables(mesh, space_row.kind, quad_degree)
        ct = element_tables(mesh, space_col.kind, quad_degree)
        if (space_row.kind == "RaviartThomas0") != (space_col.kind == "RaviartThomas0"):
            raise AssemblyError("mass form needs both spaces scalar or both RT0")
        c = coefficient_at_qp(mesh, coefficient, rt)
        if form == "weighted_mass" and c.min() <= 0:
            raise AssemblyError("weighted_mass requires a strictly positive weight")
        return product_matrix(space_row.dof_map, space_col.dof_map,
                              rt.val, ct.val * _expand(c, ct.val.ndim),
                              rt.weights, space_row.dof_count, space_col.dof_count)
    if form == "stiffness":
        rt = _scalar_tables(space_row, quad_degree)
        ct = _scalar_tables(space_col, quad_degree)
        c = coefficient_at_qp(mesh, coefficient, rt)
        if c.min() <= 0:
            raise AssemblyError("stiffness requires a strictly positive coefficient")
        return product_matrix(space_row.dof_map, space_col.dof_map,
                              rt.grad, ct.grad * c[:, :, None, None],
                              rt.weights, space_row.dof_count, space_col.dof_count)
    if form == "div_pairing":
        if space_col.kind != "RaviartThomas0":
            raise AssemblyError("div_pairing expects the RT0 space as columns")
        rt = _scalar_tables(space_row, quad_degree)
        ct = element_tables(mesh, "RaviartThomas0", quad_degree)
        n_q = rt.val.shape[1]
        div = np.broadcast_to(ct.div[:, None, :],
                              (mesh.n_triangles, n_q, 3)).copy()
        return product_matrix(space_row.dof_map, space_col.dof_map,
                              rt.val, div, rt.weights,
                              space_row.dof_count, space_col.dof_count)
    # gradient_pairing: rows test by value, columns by b . grad
    rt = _scalar_tables(space_row, quad_degree)
    ct = _scalar_tables(space_col, quad_degree)
    b = np.asarray(coefficient, dtype=float)
    if b.shape != (mesh.n_triangles, 2):
        raise AssemblyError("gradient_pairing weight must be (n_triangles, 2)")
    bgrad = np.einsum("tqid,td->tqi", ct.grad, b)
    return product_matrix(space_row.dof_map, space_col.dof_map,
                          rt.val, bgrad, rt.weights,
                          space_row.dof_count, space_col.dof_count)


def _expand(c, ndim):
    return c[:, :, None] if ndim == 3 else c[:, :, None, None]


def assemble_functional(space_row, scalar_eval, quad_degree=DEFAULT_DEGREE,
                        mode="value", vector_weight=None):
    """Right-hand-side vector (f, v) or (f, b . grad v)."""
    tab = _scalar_tables(space_row, quad_degree)
    f = coefficient_at_qp(space_row.mesh, scalar_eval, tab)
    if mode == "value":
        rows = tab.val
    elif mode == "grad_dot":
        b = np.asarray(vector_weight, dtype=float)
        rows = np.einsum("tqid,td->tqi", tab.grad, b)
    else:
        raise AssemblyError("unknown functional mode %r" % mode)
    return product_vector(space_row.dof_map, rows, f, tab.weights,
                          space_row.dof_count)


def apply_dirichlet(system, space, boundary_values, dofs=None):
    """Eliminate Dirichlet dofs symmetrically.

    Column entries move to the right-hand side, constrained rows become the
    identity with the prescribed value.  Constraining a dof twice with a
    different value is an error."""
    if dofs is None:
        dofs = space.boundary_dofs
    dofs = np.asarray(dofs, dtype=np.int64)
    if isinstance(boundary_values, FemField):
        values = boundary_values.coefficients[dofs]
    elif np.isscalar(boundary_values):
        values = np.full(len(dofs), float(boundary_values))
    else:
        values = np.asarray(boundary_values, dtype=float)
        if len(values) != len(dofs):
            raise AssemblyError("one boundary value per constrained dof required")
    constrained = dict(system.constrained)
    for d, v in zip(dofs.tolist(), values.tolist()):
        if d in constrained and abs(constrained[d] - v) > 1e-12:
            raise AssemblyError("dof %d constrained twice with conflicting values"
                                % d)
        constrained[d] = v
    K = system.matrix.tocsr()
    n = K.shape[0]
    rhs = system.rhs.copy()
    xfix = np.zeros(n)
    xfix[dofs] = values
    rhs -= K @ xfix
    keep = np.ones(n)
    keep[dofs] = 0.0
    from scipy.sparse import diags
    P = diags(keep)
    D = diags(1.0 - keep)
    K = (P @ K @ P + D).tocsr()
    K.eliminate_zeros()
    rhs[dofs] = values
    return SparseSystem(K, rhs, system.symmetry_flag, constrained,
                        dict(system.meta))
