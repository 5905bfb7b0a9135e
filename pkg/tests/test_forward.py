import numpy as np
import pytest

from hybridtomo.fields import FemField
from hybridtomo.forward import (BoundaryCondition, BoundaryConditionError,
                                compute_interior_data, harmonic_extension,
                                make_background, solve_forward_mixed,
                                solve_forward_primal)
from hybridtomo.mesh import generate_disc_mesh
from hybridtomo.microlocal import loss_directions
from hybridtomo.phantom import RectPhantom, rectangle_indicator
from hybridtomo.spaces import dof_coordinates, element_tables, lagrange1


@pytest.fixture(scope="module")
def disc():
    return generate_disc_mesh(2916, seed=0)


def l2_error(mesh, field, exact_fn, degree=5):
    tab = element_tables(mesh, field.space.kind, degree)
    uh = np.einsum("tqi,ti->tq", tab.val, field.coefficients[field.space.dof_map])
    ue = exact_fn(tab.points.reshape(-1, 2)).reshape(uh.shape)
    return float(np.sqrt((tab.weights * (uh - ue) ** 2).sum()))


# ------------------------------------------------------------- harmonic lift

def test_lift_coordinate_functions():
    ext = harmonic_extension(BoundaryCondition("x"))
    pts = np.array([[0.3, -0.4], [0.0, 0.9]])
    assert np.allclose(ext.value(pts), pts[:, 0])
    assert np.allclose(ext.gradient(pts), [[1, 0], [1, 0]])

    ext = harmonic_extension(BoundaryCondition("x+y"))
    assert np.allclose(ext.value(pts), pts.sum(axis=1))
    assert np.allclose(ext.gradient(pts), 1.0)


def test_lift_second_harmonic():
    ext = harmonic_extension(BoundaryCondition("x^2-y^2"))
    pts = np.array([[0.5, 0.2]])
    assert np.allclose(ext.value(pts), [0.21])
    assert np.allclose(ext.gradient(pts), [[1.0, -0.4]])


def test_lift_parses_coefficients():
    ext = harmonic_extension(BoundaryCondition("0.5*x - 2*y"))
    pts = np.array([[1.0, 1.0]])
    assert np.allclose(ext.value(pts), [-1.5])


def test_nonharmonic_callable_rejected():
    bc = BoundaryCondition(value_fn=lambda pts: pts[:, 0] ** 2,
                           grad_fn=lambda pts: np.column_stack(
                               [2 * pts[:, 0], 0 * pts[:, 1]]),
                           label="x^2")
    with pytest.raises(BoundaryConditionError):
        harmonic_extension(bc)


def test_harmonic_callable_accepted():
    bc = BoundaryCondition(
        value_fn=lambda pts: np.exp(pts[:, 0]) * np.cos(pts[:, 1]),
        grad_fn=lambda pts: np.column_stack(
            [np.exp(pts[:, 0]) * np.cos(pts[:, 1]),
             -np.exp(pts[:, 0]) * np.sin(pts[:, 1])]),
        label="exp")
    ext = harmonic_extension(bc)
    assert ext.value(np.array([[0.0, 0.0]])) == pytest.approx(1.0)


# ------------------------------------------------------------- mixed solver

def test_mixed_affine_exact(disc):
    sol = solve_forward_mixed(1.0, BoundaryCondition("x"), disc)
    assert np.abs(sol.u.coefficients - disc.vertices[:, 0]).max() < 1e-8
    assert np.abs(sol.grad_tri - [1.0, 0.0]).max() < 1e-8


def test_mixed_flux_conservation_reference(disc):
    sol = solve_forward_mixed(1.0, BoundaryCondition("x"), disc)
    tab = element_tables(disc, "RaviartThomas0", 2)
    div = np.einsum("tk,tk->t", tab.div, sol.flux.coefficients[disc.tri_edges])
    total = (div * disc.triangle_areas()).sum()
    assert abs(total) < 1e-8


def test_mixed_rt0_gradient_representation(disc):
    sol = solve_forward_mixed(1.0, BoundaryCondition("x"), disc,
                              with_rt0_gradient=True)
    from hybridtomo.spaces import rt0_eval_at
    cents = disc.centroids()
    vals = rt0_eval_at(disc, sol.grad_rt0.coefficients,
                       np.arange(disc.n_triangles), cents)
    assert np.abs(vals - [1.0, 0.0]).max() < 1e-8


def test_mixed_convergence_rate():
    errs = []
    for target in (2916, 11664, 46656):
        mesh = generate_disc_mesh(target, seed=0)
        sol = solve_forward_mixed(1.0, BoundaryCondition("x^2-y^2"), mesh)
        errs.append(l2_error(mesh, sol.u,
                             lambda p: p[:, 0] ** 2 - p[:, 1] ** 2))
    rates = [np.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(rates) >= 1.8


# ------------------------------------------------------------- primal solver

def test_primal_affine_exact(disc):
    sol = solve_forward_primal(1.0, BoundaryCondition("y"), disc)
    coords = dof_coordinates(sol.u.space)
    assert np.abs(sol.u.coefficients - coords[:, 1]).max() < 1e-8


def test_primal_quadratic_in_p2_space(disc):
    # quadratic harmonics lie in the P2 space, so the solve reproduces them
    # to solver precision (a sharper statement than any convergence rate)
    sol = solve_forward_primal(1.0, BoundaryCondition("2xy"), disc, degree=2)
    coords = dof_coordinates(sol.u.space)
    exact = 2 * coords[:, 0] * coords[:, 1]
    assert np.abs(sol.u.coefficients - exact).max() < 1e-8


def test_primal_p1_convergence_rate():
    errs = []
    for target in (2916, 11664):
        mesh = generate_disc_mesh(target, seed=0)
        sol = solve_forward_primal(1.0, BoundaryCondition("2xy"), mesh,
                                   degree=1)
        errs.append(l2_error(mesh, sol.u, lambda p: 2 * p[:, 0] * p[:, 1]))
    assert np.log2(errs[0] / errs[1]) >= 1.8


def test_constant_conductivity_divides_out(disc):
    sol = solve_forward_primal(2.0, BoundaryCondition("x"), disc)
    coords = dof_coordinates(sol.u.space)
    assert np.abs(sol.u.coefficients - coords[:, 0]).max() < 1e-8


def test_cross_solver_agreement_smooth(disc):
    sigma = FemField(lagrange1(disc), 1.0 + 0.3 * np.exp(
        -((disc.vertices[:, 0] - 0.2) ** 2 + disc.vertices[:, 1] ** 2) / 0.3))
    bc = BoundaryCondition("x")
    mixed = solve_forward_mixed(sigma, bc, disc)
    primal = solve_forward_primal(sigma, bc, disc, degree=2)
    diff = l2_error(disc, mixed.u, lambda pts: _eval_p2(primal.u, disc, pts))
    norm = l2_error(disc, mixed.u, lambda pts: np.zeros(len(pts)))
    h = disc.h_max()
    assert diff <= 10 * h ** 2 * norm


def _eval_p2(field, mesh, pts):
    tri, bary = mesh.locate_batch(pts)
    tri = np.where(tri < 0, 0, tri)
    from hybridtomo.mesh import _eval_lagrange
    return _eval_lagrange(field, tri, bary)


def test_cross_solver_agreement_phantom(disc):
    # discontinuous coefficient: the two discretisations agree to the
    # discretisation-error level (measured, not assumed)
    sigma = rectangle_indicator(RectPhantom())
    bc = BoundaryCondition("x")
    mixed = solve_forward_mixed(sigma, bc, disc)
    primal = solve_forward_primal(sigma, bc, disc, degree=2)
    diff = l2_error(disc, mixed.u, lambda pts: _eval_p2(primal.u, disc, pts))
    assert diff < 5e-4


# ------------------------------------------------------------- interior data

def test_interior_data_constant_gradient(disc):
    g = np.tile([1.0, 0.0], (disc.n_triangles, 1))
    for p in (1.0, 2.0):
        H = compute_interior_data(1.0, g, p, disc)
        assert np.abs(H.coefficients - 1.0).max() < 1e-12


def test_interior_data_scaling(disc):
    g = np.tile([2.0, 0.0], (disc.n_triangles, 1))
    H = compute_interior_data(1.5, g, 2.0, disc)
    assert np.abs(H.coefficients - 6.0).max() < 1e-12


def test_interior_data_rejects_bad_exponent(disc):
    g = np.tile([1.0, 0.0], (disc.n_triangles, 1))
    with pytest.raises(ValueError):
        compute_interior_data(1.0, g, 0.0, disc)


# ------------------------------------------------------------- background

def test_background_single_measurement(disc):
    bg = make_background([BoundaryCondition("x")], 2.0, disc)
    assert bg.J == 1
    assert np.abs(bg.gradients[0] - [1.0, 0.0]).max() < 1e-8
    assert np.abs(bg.data_ref[0].coefficients - 1.0).max() < 1e-8
    assert bg.forward_fingerprint != disc.fingerprint


def test_background_two_measurements_45_deg(disc):
    bcs = [BoundaryCondition("x"), BoundaryCondition.linear(np.pi / 4)]
    bg = make_background(bcs, 2.0, disc)
    g0 = bg.gradients[0].mean(axis=0)
    g1 = bg.gradients[1].mean(axis=0)
    ang = np.degrees(np.arccos(np.clip(g0 @ g1, -1, 1)))
    assert abs(ang - 45.0) < 1e-6
    # this pair makes the least-squares operator elliptic at p=2
    assert loss_directions([g0, g1], 2.0) == []


def test_background_xy_pair_not_elliptic(disc):
    bcs = [BoundaryCondition("x"), BoundaryCondition("y")]
    bg = make_background(bcs, 2.0, disc)
    dirs = loss_directions([g.mean(axis=0) for g in bg.gradients], 2.0)
    angles = sorted(np.degrees(np.arctan2(v[1], v[0]) % np.pi) for v in dirs)
    assert np.allclose(angles, [45.0, 135.0], atol=1e-6)


def test_background_data_positivity(disc):
    bg = make_background([BoundaryCondition("x")], 0.7, disc)
    assert bg.data_ref[0].coefficients.min() >= 0
