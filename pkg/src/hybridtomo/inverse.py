"""First-order least-squares formulation of the linearised inverse problem.

The linearised equations for a perturbation s := delta_sigma about the
reference state are, per measurement j,

    div(s grad(u_j)) + div(sigma_ref grad(du_j)) = 0
    |grad u_j|^p s + p sigma_ref (grad u_j . grad du_j) / |grad u_j|^(2-p)
        = H_j - H_ref_j,

with du_j = 0 on the boundary.  Writing shat for a copy of s and what_j
for grad(du_j) turns this into a first-order system in
(s, du_1..du_J, shat, what_1..what_J); its least-squares Galerkin matrix

    (A1 shat + A2 what, ...) + (s - shat, ...) + (grad du_j - what_j, ...)

is symmetric positive (semi)definite and is solved with preconditioned
conjugate gradients.  An optional Tikhonov term eps*(s, s) floors the
spectrum in the non-elliptic configurations.

Reference gradients are carried as element-wise constant vectors, so
their element-interior divergence vanishes by construction; all weights
(|grad u|^p etc.) are evaluated at quadrature points."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix

from .assembly import (SparseSystem, assemble_form, coefficient_at_qp,
                       product_matrix, product_vector)
from .fields import FemField, Provenance
from .forward import BackgroundState, solve_forward_primal
from .quadrature import DEFAULT_DEGREE
from .solvers import SolverError, solve_dense, solve_spd
from .spaces import (element_tables, lagrange1, lagrange_gradient_per_tri,
                     node_average_gradients, raviart_thomas0)

GRADIENT_FLOOR = 1e-12


class InverseCrimeError(RuntimeError):
    """Data handed to the reconstruction originates on the reconstruction
    mesh itself."""


class InverseError(ValueError):
    pass


@dataclass
class LinearizedProblem:
    background: BackgroundState
    data_diff: list              # FemFields H_j - H_ref_j on the recon mesh
    tikhonov_eps: float = 0.0    # or "auto": 1e-8 * max diagonal entry
    allow_same_mesh_data: bool = False
    quad_degree: int = DEFAULT_DEGREE

    def __post_init__(self):
        if len(self.data_diff) != self.background.J:
            raise InverseError("need one data field per measurement (J=%d)"
                               % self.background.J)
        mesh = self.background.mesh
        for d in self.data_diff:
            if d.space.mesh is not mesh:
                raise InverseError("data field lives on a different mesh")

    @property
    def p(self):
        return self.background.p

    @property
    def J(self):
        return self.background.J


@dataclass
class BlockLayout:
    """Dof offsets of the compound least-squares vector."""

    n_v: int
    n_e: int
    J: int

    @property
    def size(self):
        return (2 + self.J) * self.n_v + self.J * self.n_e

    def delta_sigma(self):
        return slice(0, self.n_v)

    def delta_u(self, j):
        return slice((1 + j) * self.n_v, (2 + j) * self.n_v)

    def sigma_copy(self):
        return slice((1 + self.J) * self.n_v, (2 + self.J) * self.n_v)

    def flux(self, j):
        base = (2 + self.J) * self.n_v
        return slice(base + j * self.n_e, base + (j + 1) * self.n_e)


@dataclass
class ReconstructionResult:
    delta_sigma: FemField
    delta_u: list
    fluxes: list
    sigma_copy: FemField
    residual_norm: float
    iterations: int
    eps_used: float
    diagnostics: object = None

    def __post_init__(self):
        if not np.isfinite(self.residual_norm):
            raise InverseError("non-finite residual norm")


def _check_provenance(problem):
    mesh = problem.background.mesh
    if problem.allow_same_mesh_data:
        return
    for k, d in enumerate(problem.data_diff):
        if mesh.fingerprint in d.provenance.sources:
            raise InverseCrimeError(
                "data field %d was generated on the reconstruction mesh "
                "(fingerprint %s); regenerate it on a separate forward mesh "
                "or set allow_same_mesh_data=True" % (k, mesh.fingerprint))


def assemble_ls_system(problem):
    """Assemble the least-squares Galerkin matrix and right-hand side.

    Returns a SparseSystem flagged SPD with the homogeneous Dirichlet
    condition on the du_j blocks already eliminated; the block layout is
    stored in system.meta["layout"]."""
    _check_provenance(problem)
    bg = problem.background
    mesh = bg.mesh
    V = lagrange1(mesh)
    W = raviart_thomas0(mesh)
    layout = BlockLayout(V.dof_count, W.dof_count, bg.J)
    deg = problem.quad_degree
    p1 = element_tables(mesh, "Lagrange1", deg)
    rt = element_tables(mesh, "RaviartThomas0", deg)
    n_t, n_q = p1.weights.shape
    N = layout.size

    sigma_qp = coefficient_at_qp(mesh, bg.sigma_ref, p1)
    grad_sigma = lagrange_gradient_per_tri(bg.sigma_ref)

    blocks = {}

    def add(rs, cs, mat):
        key = (rs.start, cs.start)
        blocks[key] = blocks.get(key, 0) + mat

    def lift(row_slice, col_slice, mat):
        mat = mat.tocoo()
        return csr_matrix((mat.data,
                           (mat.row + row_slice.start, mat.col + col_slice.start)),
                          shape=(N, N))

    mass_vv = assemble_form(V, V, "mass", quad_degree=deg)
    stiff_vv = assemble_form(V, V, "stiffness", coefficient=1.0, quad_degree=deg)
    mass_ww = assemble_form(W, W, "mass", quad_degree=deg)
    # (grad du, what) pairing between P1 gradients and RT0 values
    grad_P1 = np.broadcast_to(p1.grad, (n_t, n_q, 3, 2))
    cross_vw = product_matrix(V.dof_map, W.dof_map, np.ascontiguousarray(grad_P1),
                              rt.val, p1.weights, V.dof_count, W.dof_count)

    sc = layout.sigma_copy()
    ds = layout.delta_sigma()
    # coupling (s - shat, s' - shat')
    add(ds, ds, mass_vv)
    add(ds, sc, -mass_vv)
    add(sc, sc, mass_vv)
    rhs = np.zeros(N)

    for j in range(bg.J):
        g = np.asarray(bg.gradients[j], dtype=float)
        mag = np.hypot(g[:, 0], g[:, 1])
        if mag.min() <= GRADIENT_FLOOR:
            raise InverseError("reference gradient %d vanishes on triangle %d"
                               % (j, int(np.argmin(mag))))
        w1 = mag ** bg.p                                  # |grad u|^p
        w2 = bg.p * sigma_qp / (mag ** (2.0 - bg.p))[:, None]

        # balance-row evaluations: grad(shat).g + grad(sigma_ref).what
        #                          + sigma_ref div(what)
        e1_shat = np.einsum("tqid,td->tqi", grad_P1, g)
        e1_what = (np.einsum("td,tqkd->tqk", grad_sigma, rt.val)
                   + sigma_qp[:, :, None] * rt.div[:, None, :])
        # data-row evaluations: w1 * shat + w2 * (g . what)
        e2_shat = w1[:, None, None] * p1.val
        e2_what = w2[:, :, None] * np.einsum("td,tqkd->tqk", g, rt.val)

        fx = layout.flux(j)
        du = layout.delta_u(j)
        add(sc, sc, product_matrix(V.dof_map, V.dof_map, e1_shat, e1_shat,
                                   p1.weights, V.dof_count, V.dof_count))
        add(sc, sc, product_matrix(V.dof_map, V.dof_map, e2_shat, e2_shat,
                                   p1.weights, V.dof_count, V.dof_count))
        cross = (product_matrix(V.dof_map, W.dof_map, e1_shat, e1_what,
                                p1.weights, V.dof_count, W.dof_count)
                 + product_matrix(V.dof_map, W.dof_map, e2_shat, e2_what,
                                  p1.weights, V.dof_count, W.dof_count))
        add(sc, fx, cross)
        add(fx, fx, product_matrix(W.dof_map, W.dof_map, e1_what, e1_what,
                                   p1.weights, W.dof_count, W.dof_count))
        add(fx, fx, product_matrix(W.dof_map, W.dof_map, e2_what, e2_what,
                                   p1.weights, W.dof_count, W.dof_count))
        # coupling (grad du - what, grad du' - what')
        add(du, du, stiff_vv)
        add(du, fx, -cross_vw)
        add(fx, fx, mass_ww)

        # right-hand side: (data, data-row(test))
        dH = problem.data_diff[j]
        dH_qp = coefficient_at_qp(mesh, dH, p1)
        rhs[sc] += product_vector(V.dof_map, e2_shat, dH_qp, p1.weights,
                                  V.dof_count)
        rhs[fx] += product_vector(W.dof_map, e2_what, dH_qp, p1.weights,
                                  W.dof_count)

    K = None
    for (r0, c0), mat in blocks.items():
        rs = slice(r0, r0 + mat.shape[0])
        cs = slice(c0, c0 + mat.shape[1])
        term = lift(rs, cs, mat)
        if r0 != c0:
            term = term + term.T
        K = term if K is None else K + term

    eps = problem.tikhonov_eps
    if eps == "auto":
        eps = 1e-8 * float(K.diagonal().max())
    eps = float(eps)
    if eps < 0:
        raise InverseError("tikhonov_eps must be nonnegative")
    if eps > 0:
        K = K + lift(ds, ds, eps * mass_vv)

    system = SparseSystem(K.tocsr(), rhs, "SPD",
                          meta={"layout": layout, "eps_used": eps})
    # homogeneous Dirichlet condition on every du_j block
    from .assembly import apply_dirichlet
    for j in range(bg.J):
        dofs = layout.delta_u(j).start + V.boundary_dofs
        system = apply_dirichlet(system, V, np.zeros(len(V.boundary_dofs)),
                                 dofs=dofs)
    system.meta["layout"] = layout
    system.meta["eps_used"] = eps
    return system


def solve_reconstruction(problem, tol=1e-10, max_iter=None, method="pcg"):
    """Assemble and solve the least-squares system; the reconstructed
    perturbation is the leading block of the solution vector."""
    system = assemble_ls_system(problem)
    layout = system.meta["layout"]
    if method == "dense":
        x = solve_dense(system)
        diag = None
        iterations, residual = 0, float(
            np.linalg.norm(system.matrix @ x - system.rhs)
            / max(np.linalg.norm(system.rhs), 1e-300))
    else:
        x, diag = solve_spd(system, tol=tol, max_iter=max_iter)
        if not diag.converged:
            raise SolverError("reconstruction solve failed: %s" % diag.message)
        iterations, residual = diag.iterations, diag.residual
    mesh = problem.background.mesh
    V = lagrange1(mesh)
    W = raviart_thomas0(mesh)
    prov = Provenance(mesh.fingerprint, note="least-squares reconstruction")
    delta_sigma = FemField(V, x[layout.delta_sigma()], prov)
    delta_u = [FemField(V, x[layout.delta_u(j)], prov)
               for j in range(problem.J)]
    fluxes = [FemField(W, x[layout.flux(j)], prov) for j in range(problem.J)]
    sigma_copy = FemField(V, x[layout.sigma_copy()], prov)
    return ReconstructionResult(delta_sigma, delta_u, fluxes, sigma_copy,
                                residual, iterations,
                                system.meta["eps_used"], diag)


def apply_linearised_forward(background, delta_sigma, tol=1e-12):
    """Differential of the interior-data map at the reference state.

    For each measurement solves div(sigma_ref grad du) =
    -div(delta_sigma grad u_ref) with du = 0 on the boundary (primal P1
    Galerkin) and evaluates

        dH = delta_sigma |g|^p + p sigma_ref (g . grad du) / |g|^(2-p)

    at the nodes, with g the node-averaged reference gradient.  This is
    the manufactured-data oracle and the finite-difference reference."""
    mesh = background.mesh
    V = lagrange1(mesh)
    if delta_sigma.space.mesh is not mesh:
        raise InverseError("delta_sigma must live on the background mesh")
    deg = DEFAULT_DEGREE
    p1 = element_tables(mesh, "Lagrange1", deg)
    K = assemble_form(V, V, "stiffness", coefficient=background.sigma_ref,
                      quad_degree=deg)
    ds_qp = coefficient_at_qp(mesh, delta_sigma, p1)
    sig_node = background.sigma_ref.coefficients
    p = background.p
    out = []
    from .assembly import apply_dirichlet
    for j in range(background.J):
        g = np.asarray(background.gradients[j], dtype=float)
        # weak rhs: -(delta_sigma grad(u_ref), grad(phi))
        rows = np.einsum("tqid,td->tqi", p1.grad, g)
        rhs = -product_vector(V.dof_map, rows, ds_qp, p1.weights, V.dof_count)
        system = SparseSystem(K.copy(), rhs, "SPD")
        system = apply_dirichlet(system, V, 0.0)
        du, diag = solve_spd(system, tol=tol)
        if not diag.converged:
            raise SolverError("linearised solve %d failed: %s" % (j, diag.message))
        g_node = node_average_gradients(mesh, g)
        mag = np.hypot(g_node[:, 0], g_node[:, 1])
        if mag.min() <= GRADIENT_FLOOR:
            raise InverseError("node-averaged reference gradient vanishes")
        du_field = FemField(V, du)
        gdu = node_average_gradients(mesh, lagrange_gradient_per_tri(du_field))
        dH = (delta_sigma.coefficients * mag ** p
              + p * sig_node * np.einsum("nd,nd->n", g_node, gdu)
              / mag ** (2.0 - p))
        out.append(FemField(V, dH, Provenance(mesh.fingerprint,
                                              note="linearised data j=%d" % j)))
    return out


def ls_functional_value(system, x):
    """Quadratic part of the least-squares energy: x'Kx - 2 rhs'x.

    The energy at the minimiser never exceeds the energy of the zero
    vector (which corresponds to value 0)."""
    return float(x @ (system.matrix @ x) - 2.0 * (system.rhs @ x))
