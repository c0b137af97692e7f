"""Zero-mean constrained linear solves, the generalized eigenproblem,
and the quadrature consistency error.

On a closed surface both operators have exactly the constants in their
kernel, so the discrete problems are posed on the zero-mean subspace
{ U : m^T U = 0 } with m_j the integral of basis function j (= M 1).
The conjugate-gradient solver keeps its iterates orthogonal to the
kernel by re-projection every step and shifts the final iterate to the
zero-mean representative.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ClusterStagnation, NoConvergence, SingularSystem

_KERNEL_EPS = 1e-300


@dataclass
class ConstrainedSystem:
    """Stiffness S (PSD, kernel = constants), load B, and the mean
    vector m with m_j = integral of basis j (i.e. M 1)."""

    S: sp.spmatrix
    B: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        total = float(self.m.sum())
        if not np.isfinite(total) or abs(total) <= _KERNEL_EPS:
            raise SingularSystem("mean vector does not see the constant kernel")


@dataclass
class SolverTelemetry:
    """Iteration/residual history of one solve."""

    iterations: int = 0
    residuals: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual"])
            for i, r in enumerate(self.residuals):
                w.writerow([i, f"{r:.17g}"])


def _project_constants(v):
    # orthogonal projection onto {1}^perp, the range of S
    v -= v.sum() / v.size
    return v


def solve_zero_mean(system: ConstrainedSystem, tol: float = 1e-10,
                    max_iter: int | None = None, jacobi: bool = True,
                    x0: np.ndarray | None = None,
                    telemetry: SolverTelemetry | None = None) -> np.ndarray:
    """Solve S U = B on the zero-mean subspace by projected CG.

    Returns U with m^T U = 0 and ||S U - P B|| <= tol ||P B||, where P
    removes the component of B incompatible with the kernel.  ``x0``
    warm-starts the iteration (it is projected first).
    """
    s, b, m = system.S, system.B, system.m
    n = b.shape[0]
    mt1 = float(m.sum())

    # compatible right-hand side: remove the kernel-incompatible part,
    # then the roundoff component along the kernel itself
    bhat = b - m * (b.sum() / mt1)
    bhat = _project_constants(bhat.astype(float, copy=True))
    norm_b = float(np.linalg.norm(bhat))
    if norm_b == 0.0:
        return np.zeros(n)

    diag = s.diagonal().astype(float)
    if jacobi:
        if diag.min() <= 0.0:
            raise SingularSystem("nonpositive diagonal; Jacobi preconditioner unusable")
        inv_diag = 1.0 / diag
    else:
        inv_diag = np.ones(n)

    if max_iter is None:
        max_iter = 10 * n

    if x0 is not None:
        x = _project_constants(np.array(x0, dtype=float))
        r = bhat - (s @ x)
        _project_constants(r)
    else:
        x = np.zeros(n)
        r = bhat.copy()
    z = _project_constants(inv_diag * r)
    p = z.copy()
    rz = float(r @ z)
    converged = False
    for it in range(max_iter + 1):
        res = float(np.linalg.norm(r))
        if telemetry is not None:
            telemetry.iterations = it
            telemetry.residuals.append(res)
        if res <= tol * norm_b:
            converged = True
            break
        if it == max_iter:
            break
        q = s @ p
        pq = float(p @ q)
        if pq <= 0.0:
            raise SingularSystem("search direction with nonpositive curvature")
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        _project_constants(r)
        z = _project_constants(inv_diag * r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    if not converged:
        raise NoConvergence(f"CG: residual {res:.3e} > {tol:.1e} * {norm_b:.3e} "
                            f"after {max_iter} iterations")
    # shift to the zero-mean representative (S-invariant)
    x -= (float(m @ x) / mt1)
    return x


@dataclass
class EigenResult:
    """Ascending nonzero eigenvalues with M-orthonormal, mean-free
    eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray


def eigen_solve(S, M, k: int, tol: float = 1e-8, max_outer: int = 400,
                seed: int = 0) -> EigenResult:
    """k smallest nonzero eigenpairs of S U = lambda M U.

    Inverse vector iteration with projection: every iterate is pushed
    back into the zero-mean subspace, the inner systems are solved by
    the projected CG at 1e-2 * tol, and candidate vectors are deflated
    by M-orthogonalization.  Near-degenerate clusters stall the
    single-vector rate, so the iteration runs on a small block and
    Rayleigh-Ritz rotations inside the block separate the cluster; a
    :class:`ClusterStagnation` warning reports gaps below tolerance.
    """
    n = M.shape[0]
    m = np.asarray(M @ np.ones(n)).ravel()
    mt1 = float(m.sum())
    if abs(mt1) <= _KERNEL_EPS:
        raise SingularSystem("mass matrix does not see the constant kernel")
    rng = np.random.default_rng(seed)
    bsize = min(k + 2, n - 1)

    def m_orth(x, basis):
        x = x - (float(m @ x) / mt1)          # remove the constant
        for j in range(basis.shape[1]):
            u = basis[:, j]
            x = x - u * float(u @ (M @ x))
        nrm = float(np.sqrt(x @ (M @ x)))
        if nrm <= 0.0:
            raise SingularSystem("deflation produced the zero vector")
        return x / nrm

    X = np.empty((n, bsize))
    basis0 = np.empty((n, 0))
    for j in range(bsize):
        X[:, j] = m_orth(rng.standard_normal(n), X[:, :j])

    inner_tol = 1e-2 * tol
    lam = np.zeros(bsize)
    res = np.full(bsize, np.inf)
    warned = False
    for _ in range(max_outer):
        for j in range(bsize):
            if res[j] <= tol:
                continue
            rhs = np.asarray(M @ X[:, j]).ravel()
            sysm = ConstrainedSystem(S=S, B=rhs, m=m)
            y = solve_zero_mean(sysm, tol=inner_tol)
            X[:, j] = m_orth(y, X[:, :j])
        # Rayleigh-Ritz in the block: resolves clusters exactly in span(X)
        sx = np.column_stack([np.asarray(S @ X[:, j]).ravel() for j in range(bsize)])
        mx = np.column_stack([np.asarray(M @ X[:, j]).ravel() for j in range(bsize)])
        a = X.T @ sx
        b = X.T @ mx
        w, v = np.linalg.eigh((a + a.T) / 2.0)
        del b  # X is M-orthonormal by construction
        X = X @ v
        lam = w
        sx = sx @ v
        mx = mx @ v
        for j in range(bsize):
            num = np.linalg.norm(sx[:, j] - lam[j] * mx[:, j])
            den = np.linalg.norm(sx[:, j])
            res[j] = num / den if den > 0 else np.inf
        gaps = np.abs(np.diff(lam[:k + 1])) if bsize > k else np.abs(np.diff(lam))
        if not warned and gaps.size and np.any(gaps < tol * np.abs(lam[:gaps.size] + 1e-300)):
            warnings.warn("eigenvalue gap below tolerance; continuing with "
                          "block deflation", ClusterStagnation)
            warned = True
        if np.all(res[:k] <= tol):
            order = np.argsort(lam[:k])
            return EigenResult(eigenvalues=lam[order],
                               eigenvectors=X[:, order],
                               residuals=res[order])
    raise NoConvergence(f"inverse iteration: residuals {res[:k]} above {tol:.1e} "
                        f"after {max_outer} sweeps")


def consistency_error(mesh, problem: str, exact_rule, approx_rule, f,
                      tol: float = 1e-10):
    """Strang-type consistency of an inexact quadrature rule.

    Solves the problem with the exact (reference) rule, forms the
    residual functional of the approximate bilinear form on that
    solution, solves the auxiliary zero-mean problem and returns the
    energy norm sqrt(a(z, z)) -- the value of the consistency supremum
    at its optimizer.
    """
    from .assembly import assemble, assemble_midedge, assemble_rhs

    kind = "laplace" if problem == "laplace" else "bilaplace"
    s_exact = assemble(mesh, kind, exact_rule)
    mass = assemble(mesh, "mass", exact_rule)
    mvec = np.asarray(mass @ np.ones(mesh.n_vertices)).ravel()
    b_exact = assemble_rhs(mesh, exact_rule, f)
    u = solve_zero_mean(ConstrainedSystem(S=s_exact, B=b_exact, m=mvec), tol=tol)

    if approx_rule == "midedge-lookup":
        s_approx = assemble_midedge(mesh, kind)
    else:
        s_approx = assemble(mesh, kind, approx_rule)
    rhs_z = np.asarray(s_exact @ u - s_approx @ u).ravel()
    z = solve_zero_mean(ConstrainedSystem(S=s_exact, B=rhs_z, m=mvec), tol=tol)
    return float(np.sqrt(max(z @ (s_exact @ z), 0.0)))
