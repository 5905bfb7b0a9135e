"""Linear solvers: Jacobi-preconditioned conjugate gradients for SPD
systems, sparse LU (or MINRES) for symmetric-indefinite saddle systems,
and a dense fallback used by small-instance test oracles.

Non-convergence is never silent: solvers always return diagnostics with
the final relative residual, and callers decide whether to raise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import splu, minres


class SolverError(RuntimeError):
    pass


@dataclass
class SolveDiagnostics:
    converged: bool
    iterations: int
    residual: float
    method: str
    message: str = ""


def solve_spd(system, tol=1e-10, max_iter=None):
    """Conjugate gradients with a diagonal (Jacobi) preconditioner.

    Returns (x, diagnostics); diagnostics.converged is False when the
    relative residual target was not met within max_iter."""
    if system.symmetry_flag != "SPD":
        raise SolverError("solve_spd requires an SPD-flagged system")
    K = system.matrix
    b = system.rhs
    n = K.shape[0]
    if max_iter is None:
        max_iter = 20 * n
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveDiagnostics(True, 0, 0.0, "pcg")
    diag = K.diagonal()
    if diag.min() <= 0:
        raise SolverError("non-positive diagonal entry in SPD system")
    inv_diag = 1.0 / diag
    x = np.zeros(n)
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    it = 0
    res = np.linalg.norm(r) / bnorm
    while res > tol and it < max_iter:
        Kp = K @ p
        alpha = rz / (p @ Kp)
        x += alpha * p
        r -= alpha * Kp
        it += 1
        res = np.linalg.norm(r) / bnorm
        if res <= tol:
            break
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    ok = res <= tol
    msg = "" if ok else "pcg stalled at residual %.3e after %d iterations" % (res, it)
    return x, SolveDiagnostics(ok, it, float(res), "pcg", msg)


def solve_saddle(system, tol=1e-10, max_iter=None, method="direct"):
    """Symmetric-indefinite solve by sparse LU (default) or MINRES.

    A singular system is reported through diagnostics (or SolverError when
    the factorisation itself fails), never returned silently."""
    if system.symmetry_flag not in ("symmetric-indefinite", "SPD"):
        raise SolverError("solve_saddle requires a symmetric system")
    K = system.matrix.tocsc()
    b = system.rhs
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(K.shape[0]), SolveDiagnostics(True, 0, 0.0, method)
    if method == "direct":
        try:
            x = splu(K).solve(b)
        except RuntimeError as exc:
            raise SolverError("sparse factorization failed: %s" % exc) from exc
        if not np.all(np.isfinite(x)):
            return (np.zeros_like(b),
                    SolveDiagnostics(False, 1, np.inf, "direct",
                                     "non-finite solution (singular system)"))
        res = np.linalg.norm(K @ x - b) / bnorm
        ok = res <= max(tol, 1e-9)
        msg = "" if ok else "direct solve residual %.3e (system singular?)" % res
        return x, SolveDiagnostics(ok, 1, float(res), "direct", msg)
    if max_iter is None:
        max_iter = 20 * K.shape[0]
    x, info = minres(K, b, rtol=tol, maxiter=max_iter)
    res = np.linalg.norm(K @ x - b) / bnorm
    ok = info == 0 and res <= 10 * tol
    msg = "" if ok else "minres info=%d residual %.3e" % (info, res)
    return x, SolveDiagnostics(ok, max_iter if info > 0 else -1, float(res),
                               "minres", msg)


def solve_dense(system):
    """Dense oracle for systems under a few thousand dofs."""
    n = system.matrix.shape[0]
    if n > 3000:
        raise SolverError("dense fallback limited to 3000 dofs, got %d" % n)
    K = system.matrix.toarray()
    return np.linalg.solve(K, system.rhs)
