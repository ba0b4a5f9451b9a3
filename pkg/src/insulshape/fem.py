"""P1 finite elements for the nonlocal Robin problem and related spectra.

The Euler-Lagrange system of the insulation energy on a fixed domain is

    ∫ ∇u·∇φ + (1/m) (∫_∂Ω u)(∫_∂Ω φ) = ∫ f φ,

i.e. ``(K + σ b bᵀ) U = F`` with ``σ = 1/m``.  The rank-one term is applied
matrix-free inside conjugate gradients; ``K`` alone is singular, the sum is
positive definite.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg
from scipy import sparse

from .errors import DimensionMismatch, IncompatibleData, NoConvergence, NonDescent
from .geometry import BoundaryField, Mesh

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_EIG_TOL = 1e-8


# ---------------------------------------------------------------------------
# Assembly
# ---------------------------------------------------------------------------


def _basis_gradients(mesh: Mesh):
    p = mesh.vertices[mesh.triangles]
    area = mesh.triangle_areas()
    # ∇φ_i = J (p_{i+2} - p_{i+1}) / (2A) with J the 90° rotation
    grads = np.empty((len(area), 3, 2))
    for i in range(3):
        e = p[:, (i + 2) % 3] - p[:, (i + 1) % 3]
        grads[:, i, 0] = -e[:, 1]
        grads[:, i, 1] = e[:, 0]
    grads /= (2 * area)[:, None, None]
    return grads, area


def stiffness_matrix(mesh: Mesh) -> sparse.csr_matrix:
    grads, area = _basis_gradients(mesh)
    local = np.einsum("tik,tjk->tij", grads, grads) * area[:, None, None]
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_vertices
    K = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    return K


def mass_matrix(mesh: Mesh) -> sparse.csr_matrix:
    area = mesh.triangle_areas()
    local = (np.ones((3, 3)) + np.eye(3))[None] * (area / 12.0)[:, None, None]
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_vertices
    M = sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    M.sum_duplicates()
    return M


def boundary_vector(mesh: Mesh) -> np.ndarray:
    """b_i = ∫_∂Ω φ_i ds (exact for P1, equals the trapezoid weights)."""
    b = np.zeros(mesh.n_vertices)
    np.add.at(b, mesh.boundary, mesh.boundary_weights())
    return b


def nodal_f(mesh: Mesh, f_spec) -> np.ndarray:
    if np.isscalar(f_spec):
        return np.full(mesh.n_vertices, float(f_spec))
    f = np.asarray(f_spec, dtype=float)
    if f.shape != (mesh.n_vertices,):
        raise DimensionMismatch(f"f has {f.size} values for {mesh.n_vertices} vertices")
    return f


def load_vector(mesh: Mesh, f_spec, M=None) -> np.ndarray:
    M = mass_matrix(mesh) if M is None else M
    return M @ nodal_f(mesh, f_spec)


@dataclass(frozen=True, eq=False)
class RankOneSystem:
    mesh: Mesh
    K: sparse.csr_matrix
    b: np.ndarray
    sigma: float
    F: np.ndarray
    m: float
    f_spec: object = 1.0

    def apply(self, x):
        return self.K @ x + self.sigma * np.dot(self.b, x) * self.b

    def diagonal(self):
        return self.K.diagonal() + self.sigma * self.b**2


def assemble(mesh: Mesh, m: float, f_spec=1.0) -> RankOneSystem:
    if not m > 0:
        raise ValueError("insulation mass m must be positive")
    K = stiffness_matrix(mesh)
    F = load_vector(mesh, f_spec)
    return RankOneSystem(mesh, K, boundary_vector(mesh), 1.0 / m, F, float(m), f_spec)


# ---------------------------------------------------------------------------
# Conjugate gradients
# ---------------------------------------------------------------------------


def pcg(apply_op: Callable, rhs: np.ndarray, diag=None, tol=DEFAULT_TOL, x0=None, maxiter=None):
    """Jacobi-preconditioned CG.  Returns ``(x, iterations, relative_residual)``.

    Stops when ``‖rhs - A x‖ <= tol ‖rhs‖``; raises :class:`NoConvergence` otherwise.
    """
    n = rhs.size
    maxiter = 10 * n if maxiter is None else maxiter
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return np.zeros(n), 0, 0.0
    inv_d = 1.0 / diag if diag is not None else np.ones(n)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = rhs - apply_op(x) if x0 is not None else rhs.copy()
    z = inv_d * r
    p = z.copy()
    rz = np.dot(r, z)
    for it in range(1, maxiter + 1):
        q = apply_op(p)
        pq = np.dot(p, q)
        if pq <= 0:
            raise NoConvergence("operator is not positive definite on the Krylov space")
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        rel = np.linalg.norm(r) / bnorm
        if rel <= tol:
            return x, it, rel
        z = inv_d * r
        rz_new = np.dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NoConvergence(f"CG did not reach {tol:.1e} in {maxiter} iterations (residual {rel:.2e})")


# ---------------------------------------------------------------------------
# Solutions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FemSolution:
    mesh: Mesh
    nodal: np.ndarray
    grad: np.ndarray
    trace: BoundaryField
    normal_derivative: float
    residual: float
    iterations: int
    history: dict = field(default_factory=dict)

    @property
    def boundary_integral(self) -> float:
        return self.trace.integral()


def triangle_gradients(mesh: Mesh, U) -> np.ndarray:
    grads, _ = _basis_gradients(mesh)
    return np.einsum("tik,ti->tk", grads, np.asarray(U)[mesh.triangles])


def recovered_normal_derivative(mesh: Mesh, U) -> np.ndarray:
    """Area-averaged vertex gradient dotted with the boundary normal (O(h))."""
    g = triangle_gradients(mesh, U)
    area = mesh.triangle_areas()
    acc = np.zeros((mesh.n_vertices, 2))
    wsum = np.zeros(mesh.n_vertices)
    for i in range(3):
        np.add.at(acc, mesh.triangles[:, i], g * area[:, None])
        np.add.at(wsum, mesh.triangles[:, i], area)
    vg = acc[mesh.boundary] / wsum[mesh.boundary][:, None]
    return np.sum(vg * mesh.boundary_normals, axis=1)


def _solution(mesh, U, m, residual, iterations, history=None, absolute=False):
    trace = mesh.trace(U)
    bint = float(np.dot(np.abs(trace.values) if absolute else trace.values, trace.weights))
    return FemSolution(
        mesh=mesh,
        nodal=U,
        grad=triangle_gradients(mesh, U),
        trace=trace,
        normal_derivative=-bint / m if m else 0.0,
        residual=residual,
        iterations=iterations,
        history=history or {},
    )


def solve_insulation_linear(sys: RankOneSystem, tol=DEFAULT_TOL, x0=None) -> FemSolution:
    if not 1e-14 < tol < 1e-4:
        raise ValueError("tol must lie in (1e-14, 1e-4)")
    U, its, rel = pcg(sys.apply, sys.F, sys.diagonal(), tol=tol, x0=x0)
    bU = float(np.dot(sys.b, U))
    expected = sys.m * np.sum(sys.F) / np.sum(sys.b)
    # constant test function: bᵀU = m ΣF / Σb holds for any converged solve
    if abs(bU - expected) > 1e-8 * max(abs(expected), 1e-300) + 10 * tol * np.linalg.norm(U) * np.sqrt(U.size):
        raise NoConvergence(f"conservation identity violated: {bU} vs {expected}")
    return _solution(sys.mesh, U, sys.m, rel, its)


def solve_insulation_eps(
    mesh: Mesh,
    m: float,
    f_spec=1.0,
    eps_schedule=(1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6),
    tol=DEFAULT_TOL,
    max_newton=200,
) -> FemSolution:
    """Minimize the ε-regularized energy by damped Newton with continuation in ε.

    The boundary term is ``(1/2m) (Σ w_i sqrt(u_i² + ε²))²``.  Each ε warm-starts
    from the previous minimizer.  The minimal regularized energies are returned
    in ``history['energies']``.
    """
    eps_schedule = [float(e) for e in eps_schedule]
    if any(b >= a for a, b in zip(eps_schedule, eps_schedule[1:])) or eps_schedule[-1] > 1e-6:
        raise ValueError("eps_schedule must decrease and end at or below 1e-6")
    sys = assemble(mesh, m, f_spec)
    K, F = sys.K, sys.F
    bidx = mesh.boundary
    w = mesh.boundary_weights()
    Kdiag = K.diagonal()
    fnorm = np.linalg.norm(F)
    U = solve_insulation_linear(sys, tol=min(1e-8, max(tol, 1e-13))).nodal

    def energy(V, eps):
        S = np.dot(w, np.sqrt(V[bidx] ** 2 + eps * eps))
        return 0.5 * V @ (K @ V) + S * S / (2 * m) - F @ V

    def gradient(V, eps):
        ub = V[bidx]
        q = np.sqrt(ub * ub + eps * eps)
        S = np.dot(w, q)
        a = np.zeros_like(V)
        a[bidx] = w * ub / q
        d2 = np.zeros_like(V)
        d2[bidx] = (S / m) * w * eps * eps / q**3
        return K @ V + (S / m) * a - F, a, d2

    energies, newton_its, total_cg = [], [], 0
    rel = np.inf
    for eps in eps_schedule:
        E = energy(U, eps)
        grad, a, d2 = gradient(U, eps)
        for it in range(max_newton):
            rel = np.linalg.norm(grad) / fnorm
            if rel <= tol:
                break

            def hess(x, a=a, d2=d2):
                return K @ x + np.dot(a, x) * a / m + d2 * x

            step, cg_its, _ = pcg(hess, -grad, Kdiag + a * a / m + d2, tol=min(1e-2, max(rel, 1e-12)))
            total_cg += cg_its
            slope = np.dot(grad, step)
            if slope >= 0:
                raise NonDescent("Newton direction is not a descent direction")
            # below this the energy difference is rounding noise
            noise = 1e-13 * (abs(E) + 1.0)
            t = 1.0
            while True:
                trial = U + t * step
                E_trial = energy(trial, eps)
                g_trial = gradient(trial, eps)
                if E_trial <= E + 1e-4 * t * slope:
                    break
                if abs(E_trial - E) <= noise and np.linalg.norm(g_trial[0]) < np.linalg.norm(grad):
                    break
                t *= 0.5
                if t < 1e-12:
                    raise NonDescent(f"line search failed at eps={eps:.1e} (gradient {rel:.2e})")
            U, E = trial, E_trial
            grad, a, d2 = g_trial
        else:
            raise NoConvergence(f"Newton did not converge at eps={eps:.1e} (gradient {rel:.2e})")
        energies.append(E)
        newton_its.append(it)
        logger.debug("eps=%.1e energy=%.12f newton=%d", eps, E, it)
    # discrete contact set and the flux gap there; reported, not asserted
    eps = eps_schedule[-1]
    contact = np.abs(U[bidx]) < eps
    flux_gap = recovered_normal_derivative(mesh, U) + np.dot(w, np.abs(U[bidx])) / m
    history = {
        "eps": eps_schedule,
        "energies": energies,
        "newton_iterations": newton_its,
        "contact_measure": float(np.dot(w, contact)),
        "contact_flux_gap": flux_gap[contact],
    }
    return _solution(mesh, U, m, rel, total_cg, history, absolute=True)


def solve_harmonic_neumann(mesh: Mesh, g, tol=DEFAULT_TOL) -> FemSolution:
    """Solve -Δv = 0, ∂v/∂ν = g with zero boundary mean of v."""
    gvals = g.values if isinstance(g, BoundaryField) else np.asarray(g, dtype=float)
    w = mesh.boundary_weights()
    if gvals.shape != w.shape:
        raise DimensionMismatch("boundary data does not match the boundary loop(s)")
    total = float(np.dot(w, gvals))
    perimeter = float(np.sum(w))
    scale = np.sqrt(np.dot(w, gvals * gvals) / perimeter) if perimeter else 0.0
    if abs(total) > 1e-8 * max(scale, np.max(np.abs(gvals), initial=0.0)) * perimeter:
        raise IncompatibleData(f"∫ g ds = {total:.3e} must vanish for a Neumann problem")
    if scale == 0.0:
        U = np.zeros(mesh.n_vertices)
        return _solution(mesh, U, 0.0, 0.0, 0)
    G = np.zeros(mesh.n_vertices)
    np.add.at(G, mesh.boundary, w * (gvals - total / perimeter))
    K = stiffness_matrix(mesh)
    b = boundary_vector(mesh)
    # with 1ᵀG = 0 the rank-one term forces bᵀv = 0, the boundary-mean gauge
    V, its, rel = pcg(lambda x: K @ x + np.dot(b, x) * b, G, K.diagonal() + b * b, tol=tol)
    V -= np.dot(b, V) / np.sum(b)
    return _solution(mesh, V, 0.0, rel, its)


# ---------------------------------------------------------------------------
# Spectral quantities
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EigenResult:
    value: float
    vector: np.ndarray
    residual: float
    iterations: int = 0
    signed_surrogate: bool = False


def _block_inverse_iteration(A, B, solve, deflate, block=4, tol=DEFAULT_EIG_TOL, maxit=200, seed=0):
    """Smallest eigenpair of ``A x = λ B x`` on the complement of the deflated space.

    ``solve(r)`` applies the (pseudo-)inverse of ``A``; ``deflate(X)`` projects
    columns onto the admissible subspace.
    """
    n = A.shape[0]
    rng = np.random.Generator(np.random.Philox(seed))
    X = deflate(rng.standard_normal((n, block)))
    Y = X
    for it in range(1, maxit + 1):
        Y = np.column_stack([solve(B @ X[:, j], Y[:, j] if it > 1 else None) for j in range(block)])
        Y = deflate(Y)
        Q, _ = np.linalg.qr(Y)
        Ar = Q.T @ (A @ Q)
        Br = Q.T @ (B @ Q)
        vals, vecs = scipy.linalg.eigh(0.5 * (Ar + Ar.T), 0.5 * (Br + Br.T))
        X = Q @ vecs
        x = X[:, 0]
        res = np.linalg.norm(A @ x - vals[0] * (B @ x)) / np.linalg.norm(x)
        if res <= tol:
            return EigenResult(float(vals[0]), x / np.sqrt(x @ (B @ x)), float(res), it)
        Y = X
    raise NoConvergence(f"inverse iteration stalled at residual {res:.2e}")


def stekloff_min(mesh: Mesh, tol=DEFAULT_EIG_TOL) -> EigenResult:
    """Smallest nonzero Steklov eigenvalue: K x = λ M_∂ x, constants deflated."""
    K = stiffness_matrix(mesh)
    b = boundary_vector(mesh)
    Mb = sparse.diags(b).tocsr()
    diag = K.diagonal() + b * b
    op = lambda x: K @ x + np.dot(b, x) * b

    def solve(r, x0):
        r = r - b * (np.sum(r) / np.sum(b))
        return pcg(op, r, diag, tol=1e-13, x0=x0)[0]

    def deflate(X):
        return X - np.outer(np.ones(len(b)), (b @ X) / np.sum(b))

    return _block_inverse_iteration(K, Mb, solve, deflate, tol=tol)


def neumann_poincare_constant(mesh: Mesh, tol=DEFAULT_EIG_TOL) -> float:
    return 1.0 / neumann_eigen(mesh, tol).value


def neumann_eigen(mesh: Mesh, tol=DEFAULT_EIG_TOL) -> EigenResult:
    """Smallest nonzero eigenvalue of K x = μ M x (zero-mean functions)."""
    K = stiffness_matrix(mesh)
    M = mass_matrix(mesh)
    b = boundary_vector(mesh)
    m1 = M @ np.ones(mesh.n_vertices)
    diag = K.diagonal() + b * b
    op = lambda x: K @ x + np.dot(b, x) * b

    def solve(r, x0):
        r = r - b * (np.sum(r) / np.sum(b))
        y = pcg(op, r, diag, tol=1e-13, x0=x0)[0]
        return y

    def deflate(X):
        return X - np.outer(np.ones(len(b)), (m1 @ X) / np.sum(m1))

    return _block_inverse_iteration(K, M, solve, deflate, tol=tol)


def robust_poincare_eigen(mesh: Mesh, tol=DEFAULT_EIG_TOL) -> EigenResult:
    """Smallest eigenvalue of (K + b bᵀ) x = λ M x.

    Signed surrogate of the inequality with (∫|u|)²: it uses (∫u)², whose
    optimal constant bounds the absolute-value form from the safe side.
    """
    K = stiffness_matrix(mesh)
    M = mass_matrix(mesh)
    b = boundary_vector(mesh)
    op = lambda x: K @ x + np.dot(b, x) * b
    diag = K.diagonal() + b * b

    class _Op:
        shape = K.shape

        def __matmul__(self, X):
            X = np.asarray(X)
            if X.ndim == 1:
                return op(X)
            return K @ X + np.outer(b, b @ X)

    res = _block_inverse_iteration(
        _Op(), M, lambda r, x0: pcg(op, r, diag, tol=1e-13, x0=x0)[0], lambda X: X, tol=tol
    )
    if not res.value > 0:
        raise NoConvergence("K + b bᵀ is not positive definite")
    return EigenResult(res.value, res.vector, res.residual, res.iterations, signed_surrogate=True)


def robust_poincare_constant(mesh: Mesh, tol=DEFAULT_EIG_TOL) -> float:
    return 1.0 / robust_poincare_eigen(mesh, tol).value
