"""Symbol-level analysis of the linearised interior-data operators.

For a measurement with reference gradient g = grad(u_ref) the linearised
data operator has the order-zero principal symbol

    s(x, xi) = |g|^p * (1 - p * (g . xi)^2 / (|g|^2 |xi|^2)),

so it is elliptic everywhere exactly when p < 1.  For p >= 1 the symbol
vanishes on the cone of directions at angle arccos(1/sqrt(p)) to g; the
least-squares (normal) combination of several measurements loses
ellipticity only where those cones intersect.  Singularities can then
propagate along the spatial projections of the Hamiltonian flow of the
symbol, which run perpendicular to the vanishing directions.  This module
evaluates the symbols, decides ellipticity, intersects the cones
analytically, and integrates the Hamiltonian system with classical RK4.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spaces import node_average_gradients

ANGULAR_GRID = 721          # ellipticity scan resolution over [0, pi)
CONE_TOL = 1e-9             # angular tolerance for analytic cone intersection


class MicrolocalError(ValueError):
    pass


@dataclass
class SymbolQuery:
    """A cotangent point with the local reference gradients."""

    x: np.ndarray
    xi: np.ndarray
    gradients: list
    p: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.xi = np.asarray(self.xi, dtype=float)
        self.gradients = [np.asarray(g, dtype=float) for g in self.gradients]
        if np.hypot(*self.xi) == 0.0:
            raise MicrolocalError("xi must be nonzero")
        if self.p <= 0:
            raise MicrolocalError("p must be positive")


def _symbol(g, xi, p):
    gg = g[..., 0] ** 2 + g[..., 1] ** 2
    xx = xi[..., 0] ** 2 + xi[..., 1] ** 2
    dot = g[..., 0] * xi[..., 0] + g[..., 1] * xi[..., 1]
    return gg ** (p / 2.0) * (1.0 - p * dot * dot / (gg * xx))


def principal_symbol(q, j=0):
    """Principal symbol of measurement j at the query point (degree-zero
    homogeneous in xi)."""
    g = q.gradients[j]
    if np.hypot(*g) == 0.0:
        raise MicrolocalError("zero reference gradient in symbol query")
    return float(_symbol(g, q.xi, q.p))


def symbol_xi_gradient(q, j=0):
    """d/dxi of the principal symbol (used by the principal-type check and
    the Hamiltonian flow)."""
    g = np.asarray(q.gradients[j], float)
    xi = q.xi
    p = q.p
    gg = g @ g
    xx = xi @ xi
    dot = g @ xi
    return gg ** (p / 2.0) * (-2.0 * p) * (dot / (gg * xx)) * (g - (dot / xx) * xi)


def normal_symbol(q):
    """Principal symbol of the least-squares (normal) operator:
    sum_j |g_j|^(2p) (1 - p cos^2(g_j, xi))^2."""
    mags = [np.hypot(*g) for g in q.gradients]
    if max(mags) == 0.0:
        raise MicrolocalError("all reference gradients vanish")
    total = 0.0
    for g, mag in zip(q.gradients, mags):
        if mag == 0.0:
            continue
        total += _symbol(g, q.xi, q.p) ** 2
    return float(total)


# ----------------------------------------------------------------------
# ellipticity
# ----------------------------------------------------------------------

@dataclass
class EllipticityReport:
    elliptic: bool
    p: float
    min_symbol: np.ndarray       # per point: min |symbol| over the scan grid
    worst_angle: np.ndarray      # per point: argmin direction (radians)
    pointwise_elliptic: np.ndarray

    def __bool__(self):
        return self.elliptic


def is_elliptic_single(gradients, p, n_angles=ANGULAR_GRID):
    """Ellipticity verdict for a single-measurement operator.

    The symbol's range over directions is [|g|^p (1-p), |g|^p], so the
    operator is elliptic iff p < 1 (gradient nonzero).  A uniform angular
    scan (n_angles over [0, pi)) is evaluated alongside as a numerical
    witness and returned in the report."""
    if p <= 0:
        raise MicrolocalError("p must be positive")
    g = np.atleast_2d(np.asarray(gradients, dtype=float))
    mags = np.hypot(g[:, 0], g[:, 1])
    if mags.min() == 0.0:
        raise MicrolocalError("zero reference gradient")
    theta = np.arange(n_angles) * np.pi / n_angles
    xi = np.column_stack([np.cos(theta), np.sin(theta)])
    vals = _symbol(g[:, None, :], xi[None, :, :], p)
    amin = np.abs(vals).argmin(axis=1)
    min_sym = np.abs(vals)[np.arange(len(g)), amin]
    pointwise = np.full(len(g), p < 1.0)
    return EllipticityReport(bool(p < 1.0), float(p), min_sym, theta[amin],
                             pointwise)


def loss_angles(p):
    """Angles (radians, in [0, pi)) between xi and the reference gradient
    at which the single-measurement symbol vanishes: arccos(p**-0.5)."""
    if p < 1.0:
        return []
    alpha = float(np.arccos(1.0 / np.sqrt(p)))
    out = {alpha % np.pi, (-alpha) % np.pi}
    return sorted(out)


def loss_directions(gradients, p):
    """Unit covectors (as directions in [0, pi)) where the normal-operator
    symbol vanishes: the analytic intersection of the per-measurement
    cones.  Empty when p < 1 or when the cones are disjoint."""
    if p <= 0:
        raise MicrolocalError("p must be positive")
    gradients = [np.asarray(g, dtype=float) for g in gradients]
    for g in gradients:
        if np.hypot(*g) == 0.0:
            raise MicrolocalError("zero reference gradient")
    if p < 1.0:
        return []
    alpha = float(np.arccos(1.0 / np.sqrt(p)))
    cones = []
    for g in gradients:
        phi = float(np.arctan2(g[1], g[0]))
        cones.append({(phi + alpha) % np.pi, (phi - alpha) % np.pi})
    common = []
    for cand in sorted(cones[0]):
        ok = True
        for other in cones[1:]:
            if min(_angdist_pi(cand, t) for t in other) > CONE_TOL:
                ok = False
                break
        if ok and all(_angdist_pi(cand, c) > CONE_TOL for c in common):
            common.append(cand)
    return [np.array([np.cos(t), np.sin(t)]) for t in sorted(common)]


def _angdist_pi(a, b):
    d = abs((a - b) % np.pi)
    return min(d, np.pi - d)


# ----------------------------------------------------------------------
# principal type
# ----------------------------------------------------------------------

@dataclass
class PrincipalTypeReport:
    p: float
    is_principal_type: bool
    characteristic_points: int
    min_xi_gradient: float
    details: list


def real_principal_type_check(gradients, p, sample_points=None):
    """Check |d(symbol)/dxi| > 0 on sampled characteristic points.

    For p > 1 the gradient stays bounded away from zero; at p = 1 the
    vanishing direction is parallel to the reference gradient and the
    xi-derivative vanishes with it (the known breakdown).  For p < 1 there
    are no characteristic points and the check is vacuous."""
    gradients = [np.asarray(g, dtype=float) for g in gradients]
    if sample_points is None:
        sample_points = [np.zeros(2)]
    details = []
    n_char = 0
    min_grad = np.inf
    for g in gradients:
        for x in sample_points:
            for ang in loss_angles(p):
                phi = np.arctan2(g[1], g[0])
                for theta in ((phi + ang) % np.pi, (phi - ang) % np.pi):
                    xi = np.array([np.cos(theta), np.sin(theta)])
                    q = SymbolQuery(x, xi, [g], p)
                    norm = float(np.linalg.norm(symbol_xi_gradient(q)))
                    n_char += 1
                    min_grad = min(min_grad, norm)
                    details.append({"x": tuple(np.asarray(x, float)),
                                    "angle": float(theta), "grad_norm": norm})
    if n_char == 0:
        return PrincipalTypeReport(p, True, 0, np.inf, details)
    return PrincipalTypeReport(p, min_grad > 1e-10, n_char, float(min_grad),
                               details)


# ----------------------------------------------------------------------
# gradient fields (backgrounds for bicharacteristic tracing)
# ----------------------------------------------------------------------

class ConstantGradient:
    """Spatially constant reference gradient."""

    def __init__(self, vec):
        self.vec = np.asarray(vec, dtype=float)

    def value(self, x):
        return self.vec

    def jacobian(self, x):
        return np.zeros((2, 2))


class CallableGradient:
    """Closed-form gradient field; jacobian by central differences unless
    an analytic one is supplied."""

    def __init__(self, fn, jac=None, fd_step=1e-6):
        self.fn = fn
        self.jac = jac
        self.fd_step = fd_step

    def value(self, x):
        return np.asarray(self.fn(np.asarray(x, float)), dtype=float)

    def jacobian(self, x):
        if self.jac is not None:
            return np.asarray(self.jac(np.asarray(x, float)), dtype=float)
        h = self.fd_step
        ex, ey = np.array([h, 0.0]), np.array([0.0, h])
        dx = (self.value(x + ex) - self.value(x - ex)) / (2 * h)
        dy = (self.value(x + ey) - self.value(x - ey)) / (2 * h)
        return np.column_stack([dx, dy])


class MeshGradient:
    """Reference gradient from a finite-element background: node-averaged
    element vectors interpolated linearly, jacobian by central differences
    at the 2h scale (best effort; the visualised cases use constant
    backgrounds where the x-derivative vanishes anyway)."""

    def __init__(self, mesh, tri_vectors):
        self.mesh = mesh
        self.nodal = node_average_gradients(mesh, np.asarray(tri_vectors, float))
        self.fd_step = mesh.h_mean()

    def value(self, x):
        pts = np.asarray(x, float)[None, :]
        tri, bary = self.mesh.locate_batch(pts)
        if tri[0] < 0:
            loc = self.mesh._locator()
            tri, bary = loc.nearest_boundary(pts)
        return np.einsum("kd,k->d", self.nodal[self.mesh.triangles[tri[0]]],
                         bary[0])

    def jacobian(self, x):
        h = self.fd_step
        ex, ey = np.array([h, 0.0]), np.array([0.0, h])
        dx = (self.value(x + ex) - self.value(x - ex)) / (2 * h)
        dy = (self.value(x + ey) - self.value(x - ey)) / (2 * h)
        return np.column_stack([dx, dy])


def as_gradient_field(g):
    if hasattr(g, "value") and hasattr(g, "jacobian"):
        return g
    if callable(g):
        return CallableGradient(g)
    return ConstantGradient(g)


def _as_field_list(gradients):
    """One field, a plain (2,) vector, an (n, 2) stack, or a list of any."""
    if hasattr(gradients, "value") or callable(gradients):
        return [as_gradient_field(gradients)]
    arr = np.asarray(gradients, dtype=float) if not any(
        callable(g) or hasattr(g, "value") for g in gradients) else None
    if arr is not None and arr.ndim == 1 and arr.shape == (2,):
        return [ConstantGradient(arr)]
    if arr is not None and arr.ndim == 2 and arr.shape[1] == 2:
        return [ConstantGradient(row) for row in arr]
    return [as_gradient_field(g) for g in gradients]


# ----------------------------------------------------------------------
# bicharacteristics
# ----------------------------------------------------------------------

@dataclass
class Bicharacteristic:
    points: np.ndarray           # (n, 2) spatial samples x(t)
    covectors: np.ndarray        # (n, 2) unit xi(t)
    t_values: np.ndarray
    terminated_reason: str
    symbol_values: np.ndarray
    perp_defect: np.ndarray      # |dx/dt . xi| per accepted step (xi unit)

    def max_symbol_drift(self):
        return float(np.abs(self.symbol_values).max())


class _SingleHamiltonian:
    """H(x, xi) = principal symbol of one measurement."""

    def __init__(self, gradient_field, p):
        self.field = as_gradient_field(gradient_field)
        self.p = p

    def value(self, x, xi):
        return float(_symbol(self.field.value(x), xi, self.p))

    def d_xi(self, x, xi):
        q = SymbolQuery(x, xi, [self.field.value(x)], self.p)
        return symbol_xi_gradient(q)

    def d_x(self, x, xi):
        J = self.field.jacobian(x)
        if not J.any():
            return np.zeros(2)
        g = self.field.value(x)
        p = self.p
        gg = g @ g
        xx = xi @ xi
        dot = g @ xi
        # chain rule through g(x): d/dg of |g|^p (1 - p (g.xi)^2/(|g|^2 xx))
        dsym_dg = (p * gg ** (p / 2 - 1) * (1 - p * dot * dot / (gg * xx)) * g
                   + gg ** (p / 2.0) * (-p) * (2 * dot * xi * gg - dot * dot * 2 * g)
                   / (gg * gg * xx))
        return J.T @ dsym_dg

    def project_to_characteristic(self, x, xi):
        g = self.field.value(x)
        angles = loss_angles(self.p)
        if not angles:
            return None
        phi = np.arctan2(g[1], g[0])
        cur = np.arctan2(xi[1], xi[0])
        cands = []
        for a in angles:
            for t in (phi + a, phi - a):
                cands.extend([t, t + np.pi])
        best = min(cands, key=lambda t: abs((cur - t + np.pi) % (2 * np.pi) - np.pi))
        return np.array([np.cos(best), np.sin(best)])


class _NormalHamiltonian:
    """First-order factor of the normal-operator symbol near a loss
    direction: H(x, xi) = xi . v_perp(x), with v(x) the common cone
    direction closest to xi.  The squared symbol itself has a vanishing
    xi-gradient on its zero set, so the flow is taken on the factor, which
    shares the characteristic set and carries the propagation."""

    def __init__(self, gradient_fields, p):
        self.fields = [as_gradient_field(g) for g in gradient_fields]
        self.p = p

    def _loss_direction_near(self, x, xi):
        dirs = loss_directions([f.value(x) for f in self.fields], self.p)
        if not dirs:
            return None
        cur = np.arctan2(xi[1], xi[0]) % np.pi
        best = min(dirs, key=lambda v: _angdist_pi(np.arctan2(v[1], v[0]), cur))
        # orient along xi
        if best @ xi < 0:
            best = -best
        return best

    def value(self, x, xi):
        v = self._loss_direction_near(x, xi)
        if v is None:
            return np.inf
        vperp = np.array([-v[1], v[0]])
        return float(xi @ vperp)

    def d_xi(self, x, xi):
        v = self._loss_direction_near(x, xi)
        vperp = np.array([-v[1], v[0]])
        return vperp

    def d_x(self, x, xi, h=1e-6):
        vals = []
        for e in (np.array([h, 0.0]), np.array([0.0, h])):
            vals.append((self.value(x + e, xi) - self.value(x - e, xi)) / (2 * h))
        return np.asarray(vals)

    def project_to_characteristic(self, x, xi):
        v = self._loss_direction_near(x, xi)
        return v


def trace_bicharacteristic(gradients, p, x0, xi0, mode=0, step=1e-3,
                           max_steps=1000, domain_radius=1.0,
                           project_start=True, drift_tol=1e-6):
    """Integrate dx/dt = dH/dxi, dxi/dt = -dH/dx with RK4.

    `mode` selects the Hamiltonian: a measurement index traces that
    measurement's symbol; "normal" traces the first-order factor of the
    least-squares symbol.  xi is renormalised to unit length after each
    step (legitimate for degree-zero symbols).  The trace stops on leaving
    the disc, after max_steps, or when |H| drifts beyond `drift_tol`."""
    fields = _as_field_list(gradients)
    if mode == "normal":
        ham = _NormalHamiltonian(fields, p)
    else:
        ham = _SingleHamiltonian(fields[int(mode)], p)
    x = np.asarray(x0, dtype=float).copy()
    xi = np.asarray(xi0, dtype=float).copy()
    xi /= np.linalg.norm(xi)
    if project_start:
        proj = ham.project_to_characteristic(x, xi)
        if proj is None:
            raise MicrolocalError("no characteristic directions (p < 1?)")
        xi = proj
    if abs(ham.value(x, xi)) > 1e-10:
        raise MicrolocalError("start point is not on the characteristic set "
                              "(symbol = %.3e)" % ham.value(x, xi))

    def rhs(state):
        xs, xis = state[:2], state[2:]
        return np.concatenate([ham.d_xi(xs, xis), -ham.d_x(xs, xis)])

    pts = [x.copy()]
    cov = [xi.copy()]
    ts = [0.0]
    sym = [ham.value(x, xi)]
    perp = [0.0]
    reason = "max_steps"
    state = np.concatenate([x, xi])
    for n in range(max_steps):
        k1 = rhs(state)
        k2 = rhs(state + 0.5 * step * k1)
        k3 = rhs(state + 0.5 * step * k2)
        k4 = rhs(state + step * k3)
        state = state + (step / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        state[2:] /= np.linalg.norm(state[2:])
        x_n, xi_n = state[:2], state[2:]
        vel = ham.d_xi(x_n, xi_n)
        defect = abs(vel @ xi_n)
        s_val = ham.value(x_n, xi_n)
        if np.linalg.norm(x_n) > domain_radius:
            reason = "left_domain"
            break
        if abs(s_val) > drift_tol:
            reason = "symbol_drift"
            break
        pts.append(x_n.copy())
        cov.append(xi_n.copy())
        ts.append((n + 1) * step)
        sym.append(s_val)
        perp.append(defect)
    return Bicharacteristic(np.asarray(pts), np.asarray(cov), np.asarray(ts),
                            reason, np.asarray(sym), np.asarray(perp))
