"""Function spaces, quadrature, assembly and solvers."""

import numpy as np
import pytest
from scipy.sparse import identity

from hybridtomo.assembly import (AssemblyError, SparseSystem, apply_dirichlet,
                                 assemble_form)
from hybridtomo.fields import FemField
from hybridtomo.mesh import generate_disc_mesh
from hybridtomo.quadrature import rule
from hybridtomo.solvers import SolverError, solve_dense, solve_saddle, solve_spd
from hybridtomo.spaces import (element_tables, lagrange1, lagrange2,
                               raviart_thomas0, rt0_interpolate)


@pytest.fixture(scope="module")
def disc():
    return generate_disc_mesh(500, seed=0)


# ---------------------------------------------------------------- quadrature

def _monomial_integral(a, b):
    # over the reference triangle x, y >= 0, x + y <= 1
    from math import factorial
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@pytest.mark.parametrize("degree", [1, 2, 4, 5])
def test_quadrature_exactness(degree):
    pts, w = rule(degree)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            approx = (w * pts[:, 0] ** a * pts[:, 1] ** b).sum()
            assert approx == pytest.approx(_monomial_integral(a, b), abs=1e-15)


# ---------------------------------------------------------------- spaces

def test_dof_counts(disc):
    assert lagrange1(disc).dof_count == disc.n_vertices
    assert lagrange2(disc).dof_count == disc.n_vertices + disc.n_edges
    assert raviart_thomas0(disc).dof_count == disc.n_edges


def test_rt0_signs_opposite_across_interior_edges(disc):
    # the two triangles sharing an edge must see opposite orientations
    sign_sum = np.zeros(disc.n_edges)
    np.add.at(sign_sum, disc.tri_edges.ravel(), disc.tri_edge_signs.ravel())
    interior = ~disc.boundary_edge_flags
    assert np.all(sign_sum[interior] == 0)
    assert np.all(np.abs(sign_sum[~interior]) == 1)


def test_rt0_interpolation_of_constant_is_divergence_free(disc):
    const = np.array([0.4, -1.1])
    coeffs = rt0_interpolate(disc, lambda pts: np.tile(const, (len(pts), 1)))
    tab = element_tables(disc, "RaviartThomas0", 2)
    div = np.einsum("tk,tk->t", tab.div, coeffs[disc.tri_edges])
    assert np.abs(div).max() < 1e-12


def test_rt0_interpolation_reproduces_member_field(disc):
    # w = (x, y) lies in the RT0 space; interpolation then evaluation at
    # centroids must reproduce it
    coeffs = rt0_interpolate(disc, lambda pts: pts)
    from hybridtomo.spaces import rt0_eval_at
    cents = disc.centroids()
    vals = rt0_eval_at(disc, coeffs, np.arange(disc.n_triangles), cents)
    assert np.abs(vals - cents).max() < 1e-12


# ---------------------------------------------------------------- assembly

def test_mass_matrix_integrates_area():
    mesh = generate_disc_mesh(48400, seed=0)
    V = lagrange1(mesh)
    M = assemble_form(V, V, "mass")
    ones = np.ones(V.dof_count)
    assert abs(ones @ (M @ ones) - np.pi) < 1e-3


def test_stiffness_annihilates_constants(disc):
    V = lagrange1(disc)
    K = assemble_form(V, V, "stiffness", coefficient=1.0)
    assert np.abs(K @ np.ones(V.dof_count)).max() < 1e-12


def test_div_pairing_against_integration_by_parts(disc):
    # (div w, phi) = -(w, grad phi) for phi vanishing on the boundary
    V = lagrange1(disc)
    W = raviart_thomas0(disc)
    D = assemble_form(V, W, "div_pairing")
    w = rt0_interpolate(disc, lambda pts: pts)     # div = 2
    phi = np.ones(V.dof_count)
    phi[V.boundary_dofs] = 0.0
    lhs = phi @ (D @ w)
    # right side via quadrature of the analytic integrand -grad(phi).w
    tab = element_tables(disc, "Lagrange1", 4)
    gphi = np.einsum("tqid,ti->tqd", tab.grad, phi[V.dof_map])
    wq = tab.points  # w(x) = x for this interpolant
    rhs = -(tab.weights * np.einsum("tqd,tqd->tq", gphi, wq)).sum()
    assert lhs == pytest.approx(rhs, abs=1e-10)


def test_mass_matrix_symmetric_positive_definite():
    mesh = generate_disc_mesh(64, seed=0)
    V = lagrange1(mesh)
    assert V.dof_count <= 200
    M = assemble_form(V, V, "mass").toarray()
    assert np.abs(M - M.T).max() < 1e-12
    assert np.linalg.eigvalsh(M).min() > 0


def test_declared_symmetry_verified(disc):
    V = lagrange1(disc)
    K = assemble_form(V, V, "stiffness", coefficient=1.0).tolil()
    K[0, 1] += 1.0
    with pytest.raises(AssemblyError):
        SparseSystem(K.tocsr(), np.zeros(V.dof_count), "SPD")


def test_negative_conductivity_rejected(disc):
    V = lagrange1(disc)
    with pytest.raises(AssemblyError):
        assemble_form(V, V, "stiffness", coefficient=-1.0)
    with pytest.raises(AssemblyError):
        assemble_form(V, V, "weighted_mass",
                      coefficient=lambda pts: pts[:, 0])


def test_matrix_market_export(tmp_path, disc):
    V = lagrange1(disc)
    M = assemble_form(V, V, "mass")
    system = SparseSystem(M, np.zeros(V.dof_count), "SPD")
    path = tmp_path / "mass.mtx"
    system.export_matrix_market(path)
    from scipy.io import mmread
    back = mmread(path).tocsr()
    assert abs(back - M).max() < 1e-15


# ---------------------------------------------------------------- dirichlet

def test_dirichlet_homogeneous_keeps_rhs(disc):
    V = lagrange1(disc)
    K = assemble_form(V, V, "stiffness", coefficient=1.0)
    rhs = np.ones(V.dof_count)
    sys0 = SparseSystem(K, rhs, "SPD")
    sys1 = apply_dirichlet(sys0, V, 0.0)
    free = np.setdiff1d(np.arange(V.dof_count), V.boundary_dofs)
    assert np.array_equal(sys1.rhs[free], rhs[free])
    assert np.all(sys1.rhs[V.boundary_dofs] == 0.0)


def test_dirichlet_all_dofs_gives_identity(disc):
    V = lagrange1(disc)
    K = assemble_form(V, V, "mass")
    sys0 = SparseSystem(K, np.zeros(V.dof_count), "SPD")
    values = np.arange(V.dof_count, dtype=float)
    sys1 = apply_dirichlet(sys0, V, values, dofs=np.arange(V.dof_count))
    x, diag = solve_spd(sys1, tol=1e-14)
    assert diag.converged
    assert np.abs(x - values).max() < 1e-10


def test_dirichlet_conflicting_values_rejected(disc):
    V = lagrange1(disc)
    K = assemble_form(V, V, "mass")
    sys0 = SparseSystem(K, np.zeros(V.dof_count), "SPD")
    sys1 = apply_dirichlet(sys0, V, 1.0, dofs=V.boundary_dofs[:2])
    with pytest.raises(AssemblyError):
        apply_dirichlet(sys1, V, 2.0, dofs=V.boundary_dofs[:1])


# ---------------------------------------------------------------- solvers

def test_identity_solved_in_one_iteration():
    b = np.array([1.0, -2.0, 3.0])
    system = SparseSystem(identity(3, format="csr"), b, "SPD")
    x, diag = solve_spd(system)
    assert np.array_equal(x, b)
    assert diag.iterations == 1


def test_zero_rhs_gives_zero():
    system = SparseSystem(identity(4, format="csr"), np.zeros(4), "SPD")
    x, diag = solve_spd(system)
    assert not x.any()
    assert diag.converged


def test_laplace_harmonic_oracle(disc):
    V = lagrange1(disc)
    K = assemble_form(V, V, "stiffness", coefficient=1.0)
    system = SparseSystem(K, np.zeros(V.dof_count), "SPD")
    system = apply_dirichlet(system, V,
                             disc.vertices[V.boundary_dofs, 0])
    x, diag = solve_spd(system, tol=1e-12)
    assert diag.converged
    assert np.abs(x - disc.vertices[:, 0]).max() < 1e-8
    # Galerkin orthogonality at the solver tolerance
    assert np.abs(system.matrix @ x - system.rhs).max() \
        <= 1e-12 * np.linalg.norm(system.rhs) * 10


def test_saddle_2x2():
    from scipy.sparse import csr_matrix
    K = csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    system = SparseSystem(K, np.ones(2), "symmetric-indefinite")
    x, diag = solve_saddle(system)
    assert diag.converged
    assert np.abs(x - 1.0).max() < 1e-12


def test_singular_saddle_reported():
    from scipy.sparse import csr_matrix
    K = csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))  # rank 1
    system = SparseSystem(K, np.array([1.0, 0.0]), "symmetric-indefinite")
    try:
        x, diag = solve_saddle(system)
        assert not diag.converged
    except SolverError:
        pass


def test_nonconvergence_is_reported_not_silent(disc):
    V = lagrange1(disc)
    K = assemble_form(V, V, "stiffness", coefficient=1.0)
    system = SparseSystem(K, np.zeros(V.dof_count), "SPD")
    system = apply_dirichlet(system, V, disc.vertices[V.boundary_dofs, 0])
    x, diag = solve_spd(system, tol=1e-14, max_iter=2)
    assert not diag.converged
    assert diag.residual > 0
    assert diag.message


def test_dense_oracle_matches_cg(disc):
    V = lagrange1(disc)
    K = assemble_form(V, V, "stiffness", coefficient=1.0)
    system = SparseSystem(K, np.zeros(V.dof_count), "SPD")
    system = apply_dirichlet(system, V, disc.vertices[V.boundary_dofs, 1])
    x_cg, _ = solve_spd(system, tol=1e-13)
    x_dense = solve_dense(system)
    assert np.abs(x_cg - x_dense).max() < 1e-9
