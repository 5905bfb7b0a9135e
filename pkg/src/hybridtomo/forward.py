"""Conductivity forward problem on the unit disc.

Solves div(sigma grad u) = 0 with Dirichlet data, in two discretisations:

* a mixed first-order form (continuous P1 potential with homogeneous
  Dirichlet constraint plus an RT0 flux), the production path;
* a standard primal Galerkin solve (P1 or P2), used for cross-validation.

Dirichlet data enters through a closed-form harmonic lift whose gradient
is evaluated analytically, so the right-hand side never differentiates
anything numerically.  The module also evaluates the interior data
sigma * |grad u|**p and builds the reference state (potentials, gradients
and reference data projected across the two-mesh protocol)."""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import bmat, csr_matrix

from .assembly import (AssemblyError, SparseSystem, apply_dirichlet,
                       assemble_form, coefficient_at_qp)
from .fields import FemField, Provenance
from .mesh import Mesh2D, generate_disc_mesh, project_field
from .quadrature import DEFAULT_DEGREE, gauss_segment
from .solvers import SolverError, solve_saddle, solve_spd
from .spaces import (dof_coordinates, element_tables, lagrange1, lagrange2,
                     node_average_gradients, raviart_thomas0, rt0_eval_at)


class BoundaryConditionError(ValueError):
    pass


# ----------------------------------------------------------------------
# harmonic lifts
# ----------------------------------------------------------------------

_TERM_ALIASES = {
    "1": (0, "re"), "x": (1, "re"), "y": (1, "im"),
    "x^2-y^2": (2, "re"), "x**2-y**2": (2, "re"),
    "2xy": (2, "im"), "2*x*y": (2, "im"),
}
_HARMONIC_RE = re.compile(r"^(re|im)(\d+)$")


def _harmonic_term(name):
    name = name.replace(" ", "")
    if name in _TERM_ALIASES:
        return _TERM_ALIASES[name]
    m = _HARMONIC_RE.match(name)
    if m:
        return int(m.group(2)), m.group(1)
    raise BoundaryConditionError("unknown harmonic term %r" % name)


def _zpow(pts, k):
    z = pts[..., 0] + 1j * pts[..., 1]
    return z ** k


@dataclass
class HarmonicExtension:
    """Closed-form harmonic function with an analytic gradient.

    Terms are (coeff, degree, "re"/"im") picking Re/Im of (x + iy)**k."""

    terms: tuple
    label: str = ""

    def value(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape[:-1])
        for c, k, part in self.terms:
            zk = _zpow(pts, k)
            out += c * (zk.real if part == "re" else zk.imag)
        return out

    def gradient(self, pts):
        pts = np.asarray(pts, dtype=float)
        out = np.zeros(pts.shape)
        for c, k, part in self.terms:
            if k == 0:
                continue
            zk1 = _zpow(pts, k - 1)
            if part == "re":
                out[..., 0] += c * k * zk1.real
                out[..., 1] += -c * k * zk1.imag
            else:
                out[..., 0] += c * k * zk1.imag
                out[..., 1] += c * k * zk1.real
        return out


@dataclass
class CallableHarmonic:
    value_fn: object
    grad_fn: object
    label: str = "custom"

    def value(self, pts):
        return np.asarray(self.value_fn(np.asarray(pts, dtype=float)), dtype=float)

    def gradient(self, pts):
        return np.asarray(self.grad_fn(np.asarray(pts, dtype=float)), dtype=float)


@dataclass
class BoundaryCondition:
    """Scalar Dirichlet datum on the unit circle.

    Built from a linear combination of harmonic polynomial terms
    ("x", "y", "1", "x^2-y^2", "2xy", "re<k>", "im<k>"), either as an
    expression string or a {term: coeff} dict, or from a pair of callables
    declared harmonic (value and gradient)."""

    expression: str = ""
    terms: dict = None
    value_fn: object = None
    grad_fn: object = None
    label: str = ""

    def __post_init__(self):
        if not self.label:
            self.label = self.expression or "custom"

    @staticmethod
    def linear(angle_rad, label=None):
        """f = cos(a) x + sin(a) y: unit reference gradient at angle a."""
        c, s = np.cos(angle_rad), np.sin(angle_rad)
        return BoundaryCondition(terms={"x": float(c), "y": float(s)},
                                 label=label or ("linear@%.6grad" % angle_rad))


def _split_terms(expr):
    """Split on +/- while keeping 'x^2-y^2' style terms and exponents whole."""
    chunks, buf = [], ""
    for i, ch in enumerate(expr):
        if ch in "+-" and buf and expr[i - 1] not in "*^(eE":
            if buf.endswith(("x^2", "x**2")):
                buf += ch
                continue
            chunks.append(buf)
            buf = ch if ch == "-" else ""
        else:
            buf += ch
    if buf:
        chunks.append(buf)
    return chunks


def _parse_expression(expr):
    expr = expr.replace(" ", "")
    if not expr:
        raise BoundaryConditionError("empty boundary expression")
    out = {}
    for chunk in _split_terms(expr):
        sign = 1.0
        if chunk.startswith("-"):
            sign, chunk = -1.0, chunk[1:]
        elif chunk.startswith("+"):
            chunk = chunk[1:]
        try:
            _harmonic_term(chunk)
            out[chunk] = out.get(chunk, 0.0) + sign
            continue
        except BoundaryConditionError:
            pass
        try:
            out["1"] = out.get("1", 0.0) + sign * float(chunk)
            continue
        except ValueError:
            pass
        m = re.match(r"^(\d+\.?\d*(?:[eE][+-]?\d+)?)\*?(.+)$", chunk)
        if not m:
            raise BoundaryConditionError("cannot parse term %r" % chunk)
        coeff, name = float(m.group(1)), m.group(2)
        _harmonic_term(name)
        out[name] = out.get(name, 0.0) + sign * coeff
    return out


def harmonic_extension(bc, check_points=200, tol=1e-5):
    """Harmonic lift of a boundary condition, with analytic gradient.

    Catalog terms are harmonic by construction.  Declared-harmonic
    callables are verified with a sampled finite-difference Laplacian and
    rejected when it does not vanish."""
    if bc.value_fn is not None:
        if bc.grad_fn is None:
            raise BoundaryConditionError("callable boundary data needs a gradient")
        ext = CallableHarmonic(bc.value_fn, bc.grad_fn, bc.label)
        rng = np.random.default_rng(7)
        r = np.sqrt(rng.uniform(0.0, 0.8, check_points))
        th = rng.uniform(0, 2 * np.pi, check_points)
        pts = np.column_stack([r * np.cos(th), r * np.sin(th)])
        h = 1e-4
        lap = (ext.value(pts + [h, 0]) + ext.value(pts - [h, 0])
               + ext.value(pts + [0, h]) + ext.value(pts - [0, h])
               - 4 * ext.value(pts)) / h ** 2
        scale = max(np.abs(ext.value(pts)).max(), 1.0)
        if np.abs(lap).max() > tol * scale / h:
            raise BoundaryConditionError(
                "declared-harmonic form fails the Laplacian check "
                "(max |lap| = %.3e)" % np.abs(lap).max())
        return ext
    terms = bc.terms if bc.terms is not None else _parse_expression(bc.expression)
    tup = tuple((float(c), *_harmonic_term(name)) for name, c in terms.items()
                if c != 0.0)
    if not tup:
        tup = ((0.0, 0, "re"),)
    return HarmonicExtension(tup, bc.label)


# ----------------------------------------------------------------------
# forward solves
# ----------------------------------------------------------------------

@dataclass
class ForwardSolution:
    u: FemField                  # potential (P1 for mixed, P1/P2 for primal)
    grad_tri: np.ndarray         # (n_t, 2) element-wise gradient of u
    flux: FemField = None        # RT0 field w = sigma grad(u - F), mixed only
    grad_rt0: FemField = None    # RT0 interpolant of grad u (on request)
    diagnostics: object = None


def _sigma_qp(mesh, sigma, tab):
    vals = coefficient_at_qp(mesh, sigma, tab)
    if vals.min() <= 0:
        raise AssemblyError("conductivity must be strictly positive")
    return vals


def _bary_in_triangles(mesh, pts, tri):
    loc = mesh._locator()
    return loc._bary(pts[:, None, :], tri[:, None])[:, 0, :]


def _sigma_on_edges(mesh, sigma, pts, tri):
    if np.isscalar(sigma):
        return np.full(len(pts), float(sigma))
    if isinstance(sigma, FemField):
        bary = _bary_in_triangles(mesh, pts, tri)
        return np.einsum("ek,ek->e", sigma.coefficients[mesh.triangles[tri]], bary)
    if callable(sigma):
        return np.asarray(sigma(pts), dtype=float)
    return np.asarray(sigma, float)[tri]


def solve_forward_mixed(sigma, bc, mesh, quad_degree=DEFAULT_DEGREE,
                        tol=1e-10, method="direct", with_rt0_gradient=False):
    """Mixed solve: v in P1 with v = 0 on the boundary, w in RT0, from

      (sigma^-1 w, psi) + (v, div psi) + (div w, phi) = (sigma grad F, grad phi)

    for all (phi, psi).  Returns u = v + I_h(F) and the element gradients
    grad u = sigma^-1 w + grad F (the analytic lift gradient)."""
    V = lagrange1(mesh)
    W = raviart_thomas0(mesh)
    tab = element_tables(mesh, "Lagrange1", quad_degree)
    sig_qp = _sigma_qp(mesh, sigma, tab)
    ext = harmonic_extension(bc)

    C = assemble_form(W, W, "data_pairing", coefficient=1.0 / sig_qp,
                      quad_degree=quad_degree)
    B = assemble_form(V, W, "div_pairing", quad_degree=quad_degree)
    K = bmat([[C, B.T], [B, None]], format="csr")

    grad_F = ext.gradient(tab.points.reshape(-1, 2)).reshape(tab.points.shape)
    rhs_loc = np.einsum("tq,tqid,tqd->ti", tab.weights, tab.grad,
                        sig_qp[:, :, None] * grad_F)
    f_v = np.zeros(V.dof_count)
    np.add.at(f_v, V.dof_map.ravel(), rhs_loc.ravel())
    rhs = np.concatenate([np.zeros(W.dof_count), f_v])

    system = SparseSystem(csr_matrix(K), rhs, "symmetric-indefinite")
    vdofs = W.dof_count + V.boundary_dofs
    system = apply_dirichlet(system, V, np.zeros(len(V.boundary_dofs)), dofs=vdofs)
    x, diag = solve_saddle(system, tol=tol, method=method)
    if not diag.converged:
        raise SolverError("mixed forward solve failed: %s" % diag.message)
    w = x[:W.dof_count]
    v = x[W.dof_count:]

    u = FemField(V, v + ext.value(mesh.vertices),
                 Provenance(mesh.fingerprint, note="mixed forward (%s)" % bc.label))
    cents = mesh.centroids()
    w_c = rt0_eval_at(mesh, w, np.arange(mesh.n_triangles), cents)
    sig_c = coefficient_at_qp(mesh, sigma, element_tables(mesh, "Lagrange1", 1))[:, 0]
    grad_tri = w_c / sig_c[:, None] + ext.gradient(cents)
    flux = FemField(W, w, Provenance(mesh.fingerprint, note="mixed flux"))

    grad_rt0 = None
    if with_rt0_gradient:
        # edge fluxes of sigma^-1 w + grad F; the normal component is
        # single-valued, so one adjacent triangle per edge suffices
        s, gw = gauss_segment(3)
        a = mesh.vertices[mesh.edges[:, 0]]
        t_vec = mesh.vertices[mesh.edges[:, 1]] - a
        normal = np.column_stack([t_vec[:, 1], -t_vec[:, 0]])
        tri = mesh.edge_tris[:, 0]
        coeffs = np.zeros(mesh.n_edges)
        for si, wi in zip(s, gw):
            pts = a + si * t_vec
            gu = rt0_eval_at(mesh, w, tri, pts)
            gu /= _sigma_on_edges(mesh, sigma, pts, tri)[:, None]
            gu += ext.gradient(pts)
            coeffs += wi * np.einsum("ed,ed->e", gu, normal)
        grad_rt0 = FemField(W, coeffs,
                            Provenance(mesh.fingerprint, note="grad u (RT0)"))
    return ForwardSolution(u, grad_tri, flux=flux, grad_rt0=grad_rt0,
                           diagnostics=diag)


def solve_forward_primal(sigma, bc, mesh, degree=2, quad_degree=DEFAULT_DEGREE,
                         tol=1e-12):
    """Primal Galerkin solve of div(sigma grad u) = 0 with the Dirichlet
    data interpolated at the boundary dofs."""
    space = lagrange2(mesh) if degree == 2 else lagrange1(mesh)
    tab = element_tables(mesh, space.kind, quad_degree)
    _sigma_qp(mesh, sigma, tab)
    K = assemble_form(space, space, "stiffness", coefficient=sigma,
                      quad_degree=quad_degree)
    ext = harmonic_extension(bc)
    system = SparseSystem(K, np.zeros(space.dof_count), "SPD")
    bvals = ext.value(dof_coordinates(space)[space.boundary_dofs])
    system = apply_dirichlet(system, space, bvals)
    x, diag = solve_spd(system, tol=tol)
    if not diag.converged:
        raise SolverError("primal forward solve failed: %s" % diag.message)
    u = FemField(space, x, Provenance(mesh.fingerprint,
                                      note="primal forward (%s)" % bc.label))
    gt = element_tables(mesh, space.kind, 1)
    grad_tri = np.einsum("tqid,ti->td", gt.grad, x[space.dof_map])
    return ForwardSolution(u, grad_tri, diagnostics=diag)


# ----------------------------------------------------------------------
# interior data
# ----------------------------------------------------------------------

def compute_interior_data(sigma, grad_tri, p, mesh, check_nonvanishing=False,
                          sources=None):
    """H = sigma |grad u|**p at the P1 nodes.

    Element gradients are averaged to the nodes with area weights before
    taking the magnitude; sigma is evaluated at the nodes.  Vanishing
    gradients only raise when `check_nonvanishing` is set."""
    if p <= 0:
        raise ValueError("exponent p must be positive")
    g_node = node_average_gradients(mesh, np.asarray(grad_tri, float))
    mag = np.hypot(g_node[:, 0], g_node[:, 1])
    if check_nonvanishing and mag.min() <= 0:
        raise ValueError("reference gradient vanishes at node %d"
                         % int(np.argmin(mag)))
    if np.isscalar(sigma):
        sig_n = np.full(mesh.n_vertices, float(sigma))
    elif isinstance(sigma, FemField):
        sig_n = sigma.coefficients[:mesh.n_vertices]
    elif callable(sigma):
        sig_n = np.asarray(sigma(mesh.vertices), dtype=float)
    else:
        sig_n = np.asarray(sigma, dtype=float)
    prov = Provenance(mesh.fingerprint,
                      frozenset(sources) if sources else frozenset())
    return FemField(lagrange1(mesh), sig_n * mag ** p, prov)


# ----------------------------------------------------------------------
# reference (background) state
# ----------------------------------------------------------------------

@dataclass
class BackgroundState:
    """Reference conductivity, per-measurement reference gradients and
    reference interior data, all living on the reconstruction mesh."""

    mesh: Mesh2D
    sigma_ref: FemField
    potentials: list
    gradients: list              # per measurement: (n_t, 2) element vectors
    data_ref: list
    p: float
    min_gradient: float = field(default=0.0)
    forward_fingerprint: str = ""

    @property
    def J(self):
        return len(self.gradients)

    def __post_init__(self):
        if self.sigma_ref.coefficients.min() <= 0:
            raise ValueError("reference conductivity must be strictly positive")
        if self.p <= 0:
            raise ValueError("exponent p must be positive")
        mags = [np.hypot(g[:, 0], g[:, 1]).min() for g in self.gradients]
        self.min_gradient = float(min(mags)) if mags else 0.0
        for H in self.data_ref:
            if H.coefficients.min() < -1e-13:
                raise ValueError("reference interior data must be nonnegative")

    def mean_gradients(self):
        """Area-weighted mean reference gradient per measurement."""
        areas = self.mesh.triangle_areas()
        return [np.average(g, axis=0, weights=areas) for g in self.gradients]


def make_background(bcs, p, mesh, forward_mesh=None, sigma_ref=1.0,
                    forward_seed=1, solver="mixed", tol=1e-10,
                    require_nonvanishing=True):
    """Reference solves on a separate forward mesh, projected onto `mesh`.

    The forward mesh defaults to a freshly generated one with a slightly
    larger element count, so reference data never originates on the
    reconstruction mesh."""
    if forward_mesh is None:
        target = int(round(mesh.n_triangles * 1.02)) + 8
        forward_mesh = generate_disc_mesh(target, seed=forward_seed)
    sig_fwd = _sigma_field(forward_mesh, sigma_ref)
    sig_rec = _sigma_field(mesh, sigma_ref)
    potentials, gradients, data_ref = [], [], []
    for bc in bcs:
        if solver == "mixed":
            sol = solve_forward_mixed(sig_fwd, bc, forward_mesh, tol=tol)
        else:
            sol = solve_forward_primal(sig_fwd, bc, forward_mesh, degree=1,
                                       tol=tol)
        H = compute_interior_data(sig_fwd, sol.grad_tri, p, forward_mesh,
                                  check_nonvanishing=require_nonvanishing)
        potentials.append(project_field(forward_mesh, sol.u, mesh))
        data_ref.append(project_field(forward_mesh, H, mesh))
        g_rec = _project_tri_vectors(forward_mesh, sol.grad_tri, mesh)
        mag = np.hypot(g_rec[:, 0], g_rec[:, 1])
        if require_nonvanishing and mag.min() <= 1e-12:
            raise ValueError("projected reference gradient vanishes on triangle %d"
                             % int(np.argmin(mag)))
        gradients.append(g_rec)
    return BackgroundState(mesh, sig_rec, potentials, gradients, data_ref,
                           float(p), forward_fingerprint=forward_mesh.fingerprint)


def _sigma_field(mesh, sigma_ref):
    if isinstance(sigma_ref, FemField):
        return sigma_ref
    if np.isscalar(sigma_ref):
        vals = np.full(mesh.n_vertices, float(sigma_ref))
    else:
        vals = np.asarray(sigma_ref(mesh.vertices), dtype=float)
    return FemField(lagrange1(mesh), vals)


def _project_tri_vectors(src_mesh, tri_vectors, dst_mesh):
    """Element vectors on the destination mesh, looked up at centroids."""
    cents = dst_mesh.centroids()
    tri, _ = src_mesh.locate_batch(cents)
    if np.any(tri < 0):
        loc = src_mesh._locator()
        missing = np.nonzero(tri < 0)[0]
        ftri, _ = loc.nearest_boundary(cents[missing])
        tri = tri.copy()
        tri[missing] = ftri
    return np.asarray(tri_vectors, float)[tri]
