"""Insulation energy, optimal insulator density and closed-form oracles."""

from __future__ import annotations

from dataclasses import dataclass
from math import gamma, log, pi
from typing import Callable

import numpy as np

from . import fem
from .errors import DimensionMismatch, MassOutOfRange, ZeroTrace
from .geometry import BoundaryField, Mesh

ANNULUS_MASS_BOUND = 3 * pi - 4 * pi * log(2.0)


@dataclass(frozen=True)
class EnergyBreakdown:
    dirichlet: float
    boundary: float
    load: float
    total: float

    @classmethod
    def from_terms(cls, dirichlet, boundary, load):
        return cls(float(dirichlet), float(boundary), float(load), float(dirichlet + boundary - load))

    def as_dict(self):
        return {"dirichlet": self.dirichlet, "boundary": self.boundary, "load": self.load, "total": self.total}


def _check_nodal(mesh, U):
    U = np.asarray(U, dtype=float)
    if U.shape != (mesh.n_vertices,):
        raise DimensionMismatch(f"{U.size} nodal values for {mesh.n_vertices} vertices")
    return U


def energy(mesh: Mesh, U, m: float, f_spec=1.0, K=None, M=None) -> EnergyBreakdown:
    """J_m(U) = ½∫|∇U|² + (1/2m)(∫_∂Ω |U|)² - ∫ f U for a P1 field.

    ``K`` and ``M`` may be passed to skip reassembly.
    """
    U = _check_nodal(mesh, U)
    K = fem.stiffness_matrix(mesh) if K is None else K
    M = fem.mass_matrix(mesh) if M is None else M
    S = float(np.dot(mesh.boundary_weights(), np.abs(U[mesh.boundary])))
    F = M @ fem.nodal_f(mesh, f_spec)
    return EnergyBreakdown.from_terms(0.5 * U @ (K @ U), S * S / (2.0 * m), F @ U)


@dataclass(frozen=True, eq=False)
class MaterialDistribution:
    h: BoundaryField
    mass: float

    def to_csv(self, arclength) -> str:
        lines = ["arclength,h"]
        lines += [f"{s:.17g},{v:.17g}" for s, v in zip(arclength, self.h.values)]
        return "\n".join(lines) + "\n"


def optimal_h(trace: BoundaryField, m: float) -> MaterialDistribution:
    """Density h = m |u| / ∫|u| minimizing the layer term at fixed total mass."""
    a = np.abs(trace.values)
    total = float(np.dot(trace.weights, a))
    if not total > 0:
        raise ZeroTrace("∫|u| ds vanishes; the optimal density is undefined")
    return MaterialDistribution(BoundaryField(m * a / total, trace.weights), float(m))


def limit_energy(mesh: Mesh, U, dist: MaterialDistribution, f_spec=1.0) -> EnergyBreakdown:
    """½∫|∇U|² + ½∫_∂Ω U²/h - ∫ f U with trapezoid quadrature on the boundary.

    Nodes with h = 0 contribute nothing where U = 0 and make the energy
    infinite otherwise.
    """
    U = _check_nodal(mesh, U)
    K = fem.stiffness_matrix(mesh)
    F = fem.load_vector(mesh, f_spec)
    ub = U[mesh.boundary]
    hv = dist.h.values
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(ub == 0.0, 0.0, ub * ub / hv)
    boundary = 0.5 * float(np.dot(dist.h.weights, q))
    return EnergyBreakdown.from_terms(0.5 * U @ (K @ U), boundary, F @ U)


@dataclass(frozen=True, eq=False)
class AnalyticSolution:
    kind: str
    params: dict
    u: Callable
    grad: Callable

    def at_vertices(self, mesh: Mesh) -> np.ndarray:
        return self.u(mesh.vertices)


def unit_ball_volume(n: int) -> float:
    return pi ** (n / 2) / gamma(n / 2 + 1)


def analytic_ball(n: int, R: float, m: float) -> AnalyticSolution:
    """Minimizer on B_R for f = 1: (R² - |x|²)/(2n) + m/(n² ω_n R^{n-2})."""
    if n < 2 or not R > 0 or not m > 0:
        raise ValueError("need n >= 2, R > 0, m > 0")
    const = m / (n * n * unit_ball_volume(n) * R ** (n - 2))

    def u(x):
        x = np.asarray(x, dtype=float)
        return (R * R - np.sum(x * x, axis=-1)) / (2 * n) + const

    def grad(x):
        return -np.asarray(x, dtype=float) / n

    return AnalyticSolution("ball", {"n": n, "R": R, "m": m, "boundary_value": const}, u, grad)


def ball_energy(R: float, m: float) -> float:
    """Closed-form J_m for n = 2, f = 1: dirichlet πR⁴/16, boundary m/8, load πR⁴/8 + m/4."""
    return -pi * R**4 / 16 - m / 8


def annulus_coefficients(m: float):
    den = 2 * m + 4 * pi * log(2.0)
    return (m + 3 * pi) / den, (2 * m - (m - pi) * log(2.0)) / den


def analytic_annulus(m: float) -> AnalyticSolution:
    """Minimizer on 1 < |x| < 2 for f = 1 whose trace vanishes on |x| = 2."""
    if not 0 < m < ANNULUS_MASS_BOUND:
        raise MassOutOfRange(f"m={m} outside (0, 3π - 4π ln 2) = (0, {ANNULUS_MASS_BOUND:.6f})")
    c1, c2 = annulus_coefficients(m)

    def u(x):
        r2 = np.sum(np.asarray(x, dtype=float) ** 2, axis=-1)
        return -r2 / 4 + 0.5 * c1 * np.log(r2) + c2

    def grad(x):
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1, keepdims=True)
        return x * (-0.5 + c1 / r2)

    return AnalyticSolution("annulus", {"m": m, "c1": c1, "c2": c2}, u, grad)


def el_residual(mesh: Mesh, U, m: float, f_spec=1.0):
    """Residuals of the discrete Euler-Lagrange system.

    Returns ``(interior_norm, boundary_norm)`` where the first is the relative
    algebraic residual and the second compares the recovered normal
    derivative with the nonlocal boundary value.
    """
    U = _check_nodal(mesh, U)
    sys = fem.assemble(mesh, m, f_spec)
    interior = np.linalg.norm(sys.apply(U) - sys.F) / np.linalg.norm(sys.F)
    dn = fem.recovered_normal_derivative(mesh, U)
    boundary = np.max(np.abs(dn + np.dot(sys.b, U) / m))
    return float(interior), float(boundary)
