import numpy as np
import pytest

from hybridtomo.fields import FemField
from hybridtomo.mesh import (Mesh2D, MeshError, PointNotFoundError,
                             dilate_triangle_set, generate_disc_mesh,
                             locate_point, project_field, refine_uniform)
from hybridtomo.spaces import lagrange1


@pytest.fixture(scope="module")
def disc3k():
    return generate_disc_mesh(2916, seed=0)


def test_rejects_tiny_target():
    with pytest.raises(MeshError):
        generate_disc_mesh(7)


def test_element_count_within_tolerance():
    for target in (8, 23, 150, 4000, 48400):
        mesh = generate_disc_mesh(target, seed=0)
        assert abs(mesh.n_triangles - target) <= 0.15 * target
        mesh.validate()


def test_paper_sized_meshes_differ():
    a = generate_disc_mesh(48400, seed=0)
    b = generate_disc_mesh(49284, seed=1)
    assert a.n_triangles == 48400
    assert b.n_triangles == 49284
    assert a.fingerprint != b.fingerprint


def test_deterministic_for_fixed_seed():
    a = generate_disc_mesh(512, seed=3)
    b = generate_disc_mesh(512, seed=3)
    assert a.fingerprint == b.fingerprint
    c = generate_disc_mesh(512, seed=4)
    assert a.fingerprint != c.fingerprint


def test_boundary_vertices_on_circle(disc3k):
    r = np.hypot(*disc3k.vertices[disc3k.boundary_vertex_flags].T)
    assert np.abs(r - 1.0).max() < 1e-12


def test_edge_sharing_counts(disc3k):
    interior = ~disc3k.boundary_edge_flags
    assert np.all(disc3k.edge_tris[interior, 1] >= 0)
    assert np.all(disc3k.edge_tris[disc3k.boundary_edge_flags, 1] == -1)


def test_area_sum_converges_to_pi():
    mesh = generate_disc_mesh(48400, seed=0)
    assert abs(mesh.triangle_areas().sum() - np.pi) < 1e-3


def test_locate_origin(disc3k):
    tri, bary = locate_point(disc3k, (0.0, 0.0))
    assert tri >= 0
    assert abs(bary.sum() - 1.0) < 1e-12


def test_locate_centroids_roundtrip(disc3k):
    cents = disc3k.centroids()
    tri, bary = disc3k.locate_batch(cents)
    assert np.array_equal(tri, np.arange(disc3k.n_triangles))
    assert np.abs(bary - 1.0 / 3.0).max() < 1e-12


def test_locate_outside_raises(disc3k):
    with pytest.raises(PointNotFoundError):
        locate_point(disc3k, (2.0, 0.0))


def test_refine_quadruples_and_keeps_invariants(disc3k):
    fine = refine_uniform(disc3k)
    assert fine.n_triangles == 4 * disc3k.n_triangles
    fine.validate()


def test_project_affine_exact():
    src = generate_disc_mesh(900, seed=0)
    dst = generate_disc_mesh(1100, seed=1)
    f = FemField(lagrange1(src), src.vertices[:, 0])
    g = project_field(src, f, dst)
    assert np.abs(g.coefficients - dst.vertices[:, 0]).max() < 1e-12


def test_project_constant_exact():
    src = generate_disc_mesh(900, seed=0)
    dst = generate_disc_mesh(1100, seed=1)
    f = FemField(lagrange1(src), np.ones(src.n_vertices))
    g = project_field(src, f, dst)
    assert np.abs(g.coefficients - 1.0).max() < 1e-12


def test_project_quadratic_48k():
    src = generate_disc_mesh(48400, seed=0)
    dst = generate_disc_mesh(49284, seed=1)
    vals = src.vertices[:, 0] ** 2 - src.vertices[:, 1] ** 2
    g = project_field(src, FemField(lagrange1(src), vals), dst)
    exact = dst.vertices[:, 0] ** 2 - dst.vertices[:, 1] ** 2
    assert np.abs(g.coefficients - exact).max() < 1e-3


def test_projection_provenance_tracks_source():
    src = generate_disc_mesh(900, seed=0)
    dst = generate_disc_mesh(1100, seed=1)
    f = FemField(lagrange1(src), np.zeros(src.n_vertices))
    g = project_field(src, f, dst)
    assert src.fingerprint in g.provenance.sources
    assert dst.fingerprint not in g.provenance.sources


def test_dilation_grows_monotonically(disc3k):
    seed_mask = np.zeros(disc3k.n_triangles, dtype=bool)
    seed_mask[0] = True
    prev = 1
    for rings in (1, 2, 3):
        mask = dilate_triangle_set(disc3k, seed_mask, rings)
        assert mask.sum() > prev
        prev = mask.sum()


def test_nonmanifold_edge_rejected():
    verts = np.array([[0, 0], [1, 0], [0, 1], [1, 1], [-1, 1.0]])
    tris = np.array([[0, 1, 2], [1, 3, 2], [0, 2, 4], [0, 1, 4]])
    # edge (0,1) or (0,2) shared by too many triangles after the extra one
    tris = np.vstack([tris, [0, 2, 1]])
    with pytest.raises(MeshError):
        Mesh2D(verts, tris)
