"""Shape derivative, volume-preserving gradient flow and second variation.

Normal velocities ζ are functions of the polar angle on the boundary of a
:class:`StarBoundary`.  A normal displacement ``t ζ`` becomes the radial
displacement ``t ζ |γ'| / r`` which is projected onto Fourier modes, so every
perturbed domain is again a star shape.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from math import pi
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import energy as en
from . import fem
from .errors import (
    IncompatibleData,
    MeshQualityFailure,
    NegativeTrace,
    StallDetected,
    UnsupportedDimension,
)
from .geometry import (
    BoundaryField,
    Mesh,
    StarBoundary,
    fourier_fit,
    rescale_to_volume,
    triangulate,
)

logger = logging.getLogger(__name__)

DEFAULT_H = 0.02
FIT_GRID = 1024
FIT_MODES = 96
MODE_CAP = 64


# ---------------------------------------------------------------------------
# Modal velocity fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModalField:
    """ζ(θ) = Σ a_k cos kθ + b_k sin kθ about the shape center (constant term a_0)."""

    modes: tuple = ()  # (k, a, b)
    a0: float = 0.0

    @classmethod
    def cos(cls, k, amplitude=1.0):
        return cls(((k, amplitude, 0.0),)) if k > 0 else cls((), amplitude)

    @classmethod
    def sin(cls, k, amplitude=1.0):
        return cls(((k, 0.0, amplitude),))

    @classmethod
    def parse(cls, text: str) -> "ModalField":
        """Parse ``cos2``, ``sin3``, ``0.5*cos2+0.1*sin4`` style specs."""
        modes = {}
        a0 = 0.0
        for term in text.replace(" ", "").replace("-", "+-").split("+"):
            if not term:
                continue
            amp, _, name = term.rpartition("*")
            amp = float(amp) if amp not in ("", "-") else (-1.0 if amp == "-" else 1.0)
            if name.startswith("-"):
                amp, name = -amp, name[1:]
            kind, k = name[:3], int(name[3:])
            if kind not in ("cos", "sin"):
                raise ValueError(f"bad modal term {term!r}")
            if k == 0:
                a0 += amp if kind == "cos" else 0.0
                continue
            a, b = modes.get(k, (0.0, 0.0))
            modes[k] = (a + amp, b) if kind == "cos" else (a, b + amp)
        return cls(tuple((k, a, b) for k, (a, b) in sorted(modes.items())), a0)

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.full(theta.shape, self.a0)
        for k, a, b in self.modes:
            out = out + a * np.cos(k * theta) + b * np.sin(k * theta)
        return out

    def derivative(self, theta):
        theta = np.asarray(theta, dtype=float)
        out = np.zeros(theta.shape)
        for k, a, b in self.modes:
            out = out + k * (-a * np.sin(k * theta) + b * np.cos(k * theta))
        return out


def _theta_grid(n=FIT_GRID):
    return np.linspace(0.0, 2 * pi, n, endpoint=False)


def zero_mean_shift(sb: StarBoundary, zeta) -> float:
    """Arclength mean of ζ on ∂Ω, so that ζ - mean has ∫ ds = 0."""
    theta = _theta_grid()
    s = sb.speed(theta)
    return float(np.sum(zeta(theta) * s) / np.sum(s))


def normal_update(sb: StarBoundary, zeta, t: float, kmax=FIT_MODES) -> StarBoundary:
    """Star shape whose radius is r + t ζ |γ'| / r, projected onto ``kmax`` modes."""
    theta = _theta_grid(max(FIT_GRID, 4 * kmax))
    r, dr, _ = sb.radius(theta)
    r_new = r + t * zeta(theta) * np.sqrt(r * r + dr * dr) / r
    c0, a, b = _fft_coefficients(r_new, kmax)
    return StarBoundary.from_coefficients(c0, np.r_[0.0, a], np.r_[0.0, b], center=sb.center, tol=1e-15)


def _fft_coefficients(values, kmax):
    n = values.size
    c = np.fft.rfft(values) / n
    c0 = c[0].real
    a = 2 * c[1 : kmax + 1].real
    b = -2 * c[1 : kmax + 1].imag
    return c0, a, b


# ---------------------------------------------------------------------------
# Shape gradient
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ShapeGradient:
    density: BoundaryField
    mean: float
    defect: float
    velocity: BoundaryField
    theta: np.ndarray = field(repr=False, default=None)

    def pairing(self, zeta_values) -> float:
        """∫ (g - ḡ) ζ ds with trapezoid weights."""
        w = self.density.weights
        return float(np.dot(w, (self.density.values - self.mean) * zeta_values))


def tangential_derivative(mesh: Mesh, values) -> np.ndarray:
    """Arclength derivative along each loop, second order on nonuniform spacing."""
    out = np.empty(len(values))
    start = 0
    for loop in mesh.loops:
        n = len(loop)
        u = values[start : start + n]
        p = mesh.vertices[loop]
        hp = np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1)  # to next
        hm = np.roll(hp, 1)  # from previous
        up, um = np.roll(u, -1), np.roll(u, 1)
        out[start : start + n] = (hm * hm * (up - u) + hp * hp * (u - um)) / (hm * hp * (hm + hp))
        start += n
    return out


def shape_gradient(
    mesh: Mesh, sol: fem.FemSolution, sb: StarBoundary, m: float, f_spec=1.0, u_sign: float = -1.0
) -> ShapeGradient:
    """Boundary density g of the shape derivative dJ = ∫ g ζ ds.

    g = ½|∇_τ u|² - ½(∂_ν u)² - f u - (∂_ν u) u H, with ∂_ν u the nonlocal
    boundary constant and H the analytic curvature of ``sb``.  ``u_sign=+1``
    flips the sign of the f u term and exists only as a negative control.
    """
    trace = sol.trace
    u = trace.values
    if np.min(u) < -1e-12 * max(np.max(np.abs(u)), 1e-300):
        raise NegativeTrace("trace changes sign; use the ε-regularized path (no gradient there)")
    dn = -np.dot(trace.weights, u) / m
    pts = mesh.vertices[mesh.boundary]
    theta = sb.polar_angle(pts)
    H = sb.curvature(theta)
    f = fem.nodal_f(mesh, f_spec)[mesh.boundary]
    ut = tangential_derivative(mesh, u)
    g = 0.5 * ut * ut - 0.5 * dn * dn + u_sign * f * u - dn * u * H
    density = BoundaryField(g, trace.weights)
    mean = density.mean()
    zeta = -(g - mean)
    zeta = zeta - np.dot(trace.weights, zeta) / np.sum(trace.weights)
    return ShapeGradient(density, float(mean), float(np.max(g) - np.min(g)), BoundaryField(zeta, trace.weights), theta)


def solve_shape(sb: StarBoundary, m: float, h=DEFAULT_H, layout=None, f_spec=1.0, tol=1e-12):
    """Mesh ``sb`` (reusing ``layout`` if given), solve, and return (mesh, solution, energy)."""
    mesh = triangulate(sb, h, layout=layout)
    sys = fem.assemble(mesh, m, f_spec)
    sol = fem.solve_insulation_linear(sys, tol=tol)
    return mesh, sol, en.energy(mesh, sol.nodal, m, f_spec, K=sys.K)


@dataclass(frozen=True)
class FDResult:
    value: float  # Richardson-extrapolated central difference
    coarse: float  # central difference at dt
    fine: float  # central difference at dt/2
    dt: float
    zeta_mean: float  # arclength mean removed from ζ

    @property
    def richardson_gap(self) -> float:
        return abs(self.fine - self.coarse)


def _perturbed_energy(sb, zeta, t, m, h, layout, V0):
    shape = rescale_to_volume(normal_update(sb, zeta, t), V0)
    return solve_shape(shape, m, h, layout=layout)[2].total


def fd_shape_derivative(sb: StarBoundary, zeta, m: float, dt=1e-3, h=DEFAULT_H, layout=None) -> FDResult:
    """Central difference of t ↦ J_m(u_{Ω(t)}, Ω(t)) along a normal flow.

    ζ is shifted to zero arclength mean so the flow preserves area to first
    order; the exact rescaling to the initial area then only acts at second
    order.  All meshes share one topology.
    """
    if isinstance(zeta, str):
        zeta = ModalField.parse(zeta)
    V0 = sb.area()
    shift = zero_mean_shift(sb, zeta)
    z = lambda th: zeta(th) - shift
    if layout is None:
        layout = triangulate(sb, h).layout
    vals = {}
    for t in (-dt, -dt / 2, dt / 2, dt):
        vals[t] = _perturbed_energy(sb, z, t, m, h, layout, V0)
    coarse = (vals[dt] - vals[-dt]) / (2 * dt)
    fine = (vals[dt / 2] - vals[-dt / 2]) / dt
    return FDResult((4 * fine - coarse) / 3, coarse, fine, dt, shift)


def pairing_for(sb: StarBoundary, zeta, m: float, h=DEFAULT_H, layout=None, u_sign=-1.0):
    """∫(g-ḡ)ζ ds for the zero-mean shift of ``zeta`` on ``sb``."""
    if isinstance(zeta, str):
        zeta = ModalField.parse(zeta)
    mesh, sol, _ = solve_shape(sb, m, h, layout=layout)
    grad = shape_gradient(mesh, sol, sb, m, u_sign=u_sign)
    zv = zeta(grad.theta) - zero_mean_shift(sb, zeta)
    return grad.pairing(zv), grad


# ---------------------------------------------------------------------------
# Gradient flow
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FlowState:
    step: int
    shape: StarBoundary
    energy: en.EnergyBreakdown
    defect: float
    tau: float
    dist_to_ball: float
    area: float = 0.0
    perimeter: float = 0.0
    mesh: Optional[Mesh] = field(default=None, repr=False)
    gradient: Optional[ShapeGradient] = field(default=None, repr=False)

    def csv_row(self):
        e = self.energy
        vals = [self.tau, e.total, e.dirichlet, e.boundary, e.load, self.defect, self.area, self.perimeter, self.dist_to_ball]
        return f"{self.step}," + ",".join(f"{v:.17g}" for v in vals)


FLOW_CSV_HEADER = "step,tau,J_total,J_dirichlet,J_boundary,J_load,defect,area,perimeter,dist_to_ball"


def dist_to_ball(sb: StarBoundary, n=4096) -> float:
    """Hausdorff distance between ∂Ω and the circle of equal area about the centroid."""
    theta = _theta_grid(n)
    pts = sb.point(theta)
    c = sb.centroid()
    R = np.sqrt(sb.area() / pi)
    d1 = np.max(np.abs(np.linalg.norm(pts - c, axis=1) - R))
    circle = c + R * np.column_stack([np.cos(theta), np.sin(theta)])
    dense = sb.point(_theta_grid(8 * n))
    d2 = np.max(cKDTree(dense).query(circle)[0])
    return float(max(d1, d2))


def _state(step, sb, mesh, sol, m, tau, f_spec=1.0):
    grad = shape_gradient(mesh, sol, sb, m, f_spec)
    e = en.energy(mesh, sol.nodal, m, f_spec)
    return FlowState(step, sb, e, grad.defect, tau, dist_to_ball(sb), sb.area(), sb.perimeter(), mesh, grad)


def initial_state(sb: StarBoundary, m: float, V0: float, h=DEFAULT_H, f_spec=1.0) -> FlowState:
    sb = rescale_to_volume(sb, V0)
    mesh, sol, _ = solve_shape(sb, m, h)
    return _state(0, sb, mesh, sol, m, 0.0, f_spec)


def flow_step(state: FlowState, m: float, tau0: float, kmax: int, V0: Optional[float] = None, h=None) -> FlowState:
    """One backtracking step of volume-preserving shape-gradient descent.

    The radial displacement τ ζ |γ'|/r is fitted by modes ≤ ``kmax`` at the
    boundary vertices, the shape rescaled to ``V0``, and τ halved until the
    energy decreases.
    """
    sb = state.shape
    V0 = sb.area() if V0 is None else V0
    mesh = state.mesh
    layout = mesh.layout
    h = mesh.h_target if h is None else h
    if kmax <= 0:
        return replace(state, step=state.step + 1, tau=0.0)
    theta = state.gradient.theta
    r, dr, _ = sb.radius(theta)
    radial = state.gradient.velocity.values * np.sqrt(r * r + dr * dr) / r
    c0, a, b = fourier_fit(theta, radial, kmax, weights=state.gradient.velocity.weights)
    ca, cb = sb.coefficient_arrays(kmax)
    target = state.energy.total
    remeshed = False
    tau = tau0
    while tau >= 1e-8 * tau0:
        cand = StarBoundary.from_coefficients(
            ca[0] + tau * c0, ca + tau * np.r_[0.0, a], cb + tau * np.r_[0.0, b], center=sb.center
        )
        try:
            cand = rescale_to_volume(cand, V0)
        except ValueError:
            tau *= 0.5
            continue
        try:
            new_mesh, sol, e = solve_shape(cand, m, h, layout=layout)
        except MeshQualityFailure:
            if remeshed:
                tau *= 0.5
                continue
            # the fixed topology no longer fits: re-mesh the current shape once
            layout = triangulate(sb, h).layout
            _, _, e_here = solve_shape(sb, m, h, layout=layout)
            target = min(target, e_here.total)
            remeshed = True
            logger.info("step %d: mesh layout rebuilt", state.step + 1)
            continue
        if e.total < target:
            return _state(state.step + 1, cand, new_mesh, sol, m, tau)
        tau *= 0.5
    raise StallDetected(f"no energy decrease down to tau={tau:.2e}", trajectory=[state])


def run_flow(
    sb0: StarBoundary,
    m: float,
    V0: float,
    max_steps=100,
    defect_tol=1e-3,
    tau0=1.0,
    h=DEFAULT_H,
    kmax=None,
    log=None,
):
    """Iterate :func:`flow_step` until the defect drops below ``defect_tol``.

    The Fourier cap is twice the initial maximal mode (at most 64); the mesh
    topology of the initial shape is kept for the whole trajectory.
    """
    state = initial_state(sb0, m, V0, h)
    kmax = min(MODE_CAP, 2 * sb0.max_order) if kmax is None else kmax
    trajectory = [state]
    if log is not None:
        log.write(FLOW_CSV_HEADER + "\n" + state.csv_row() + "\n")
    tau = tau0
    while state.defect >= defect_tol and state.step < max_steps and kmax > 0:
        t0 = time.perf_counter()
        try:
            state = flow_step(state, m, tau, kmax, V0, h)
        except StallDetected as exc:
            raise StallDetected(str(exc), trajectory=trajectory) from exc
        # let an accepted full step grow back towards tau0
        tau = min(tau0, 2 * state.tau)
        trajectory.append(state)
        if log is not None:
            log.write(state.csv_row() + "\n")
        logger.info(
            "step %d tau=%.3g J=%.10f defect=%.3e dist=%.3e (%.2fs)",
            state.step, state.tau, state.energy.total, state.defect, state.dist_to_ball, time.perf_counter() - t0,
        )
    return trajectory


# ---------------------------------------------------------------------------
# Second variation at the ball
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModalStability:
    R: float
    m: float
    n: int
    per_mode: tuple  # (k, Q_k)
    total: float
    quadrature: tuple = ()  # (k, Q_k) from FEM quadrature, n = 2 only

    @property
    def all_nonnegative(self) -> bool:
        return all(q >= -1e-10 for _, q in self.per_mode)


def q_closed_form(k: int, R: float, m: float) -> float:
    """d²J/dt² for ζ = cos kθ on the disk (n = 2, f = 1)."""
    if k < 1:
        raise ValueError("mode order must be at least 1")
    return (pi * R * R / 4) * (1 - 1 / k) + m * (k * k - 1) / 8


def second_variation_terms(n, R, m, int_zeta2, int_vzeta, int_grad_zeta2):
    """(R/n²)∫ζ² - (1/n)∫vζ + m/(n³ ω_n R^{n-3}) ∫(|∇_τ ζ|² - (n-1)ζ²/R²)."""
    w = en.unit_ball_volume(n)
    return (
        R / n**2 * int_zeta2
        - int_vzeta / n
        + m / (n**3 * w * R ** (n - 3)) * (int_grad_zeta2 - (n - 1) / R**2 * int_zeta2)
    )


def modal_integrals(k: int, R: float):
    """Exact ∫ζ², ∫vζ, ∫|∇_τ ζ|² on ∂B_R for ζ = cos kθ and ∂_ν v = ζ/2."""
    return pi * R, pi * R * R / (2 * k), pi * k * k / R


def quadrature_q(mesh: Mesh, k: int, R: float, m: float) -> float:
    """Q_k with v from the FEM Neumann solve and trapezoid boundary integrals."""
    pts = mesh.vertices[mesh.boundary]
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    zeta = np.cos(k * theta)
    w = mesh.boundary_weights()
    zeta = zeta - np.dot(w, zeta) / np.sum(w)
    v = fem.solve_harmonic_neumann(mesh, zeta / 2.0, tol=1e-12).trace.values
    zt = tangential_derivative(mesh, zeta)
    return second_variation_terms(2, R, m, np.dot(w, zeta**2), np.dot(w, v * zeta), np.dot(w, zt**2))


def second_variation_ball(
    n: int, R: float, m: float, modes: Sequence, quadrature=False, h=DEFAULT_H, v_integrals=None
) -> ModalStability:
    """Second variation of J_m at B_R for ζ = Σ amplitude·cos kθ.

    For n = 2 the modal closed form is used; ``quadrature=True`` adds the
    FEM recomputation.  For n ≠ 2 the caller supplies ``v_integrals``
    mapping k to (∫ζ², ∫vζ, ∫|∇_τ ζ|²).
    """
    modes = [(int(k), float(a)) for k, a in modes]
    if any(k < 1 for k, _ in modes):
        raise ValueError("mode orders must be at least 1")
    if n == 2:
        per = tuple((k, q_closed_form(k, R, m)) for k, _ in modes)
    else:
        if v_integrals is None:
            raise UnsupportedDimension("n != 2 needs caller-supplied modal integrals")
        per = tuple((k, second_variation_terms(n, R, m, *v_integrals[k])) for k, _ in modes)
    total = sum(a * a * q for (_, a), (_, q) in zip(modes, per))
    quad = ()
    if quadrature:
        if n != 2:
            raise UnsupportedDimension("quadrature path is implemented for n = 2 only")
        mesh = triangulate(StarBoundary.circle(R), h)
        quad = tuple((k, quadrature_q(mesh, k, R, m)) for k, _ in modes)
    return ModalStability(R, m, n, per, float(total), quad)


def second_variation_fd(R: float, m: float, zeta, dt=0.01, h=DEFAULT_H, layout=None) -> float:
    """(J(dt) - 2J(0) + J(-dt))/dt² along the area-preserving normal flow of B_R."""
    if isinstance(zeta, str):
        zeta = ModalField.parse(zeta)
    sb = StarBoundary.circle(R)
    V0 = sb.area()
    shift = zero_mean_shift(sb, zeta)
    z = lambda th: zeta(th) - shift
    layout = triangulate(sb, h).layout if layout is None else layout
    J0 = solve_shape(sb, m, h, layout=layout)[2].total
    Jp = _perturbed_energy(sb, z, dt, m, h, layout, V0)
    Jm = _perturbed_energy(sb, z, -dt, m, h, layout, V0)
    return (Jp - 2 * J0 + Jm) / dt**2


@dataclass(frozen=True)
class SteklovReport:
    left: float
    right: float

    @property
    def ratio(self) -> float:
        return self.left / self.right

    @property
    def holds(self) -> bool:
        return self.left <= 1.01 * self.right


def steklov_inequality_check(mesh: Mesh, zeta: BoundaryField, n: int = 2) -> SteklovReport:
    """Both sides of (1/n)∫ζ v ≤ (R/n²)∫ζ² with ∂_ν v = ζ/n, R = |∂Ω|/(2π)."""
    if n != 2:
        raise UnsupportedDimension("meshes are two-dimensional")
    w = zeta.weights
    if abs(np.dot(w, zeta.values)) > 1e-8 * np.sqrt(np.dot(w, zeta.values**2) * np.sum(w)) * 10:
        raise IncompatibleData("ζ must have zero boundary mean")
    z = zeta.values - np.dot(w, zeta.values) / np.sum(w)
    v = fem.solve_harmonic_neumann(mesh, z / n, tol=1e-12).trace.values
    R = np.sum(w) / (2 * pi)
    return SteklovReport(float(np.dot(w, z * v) / n), float(R / n**2 * np.dot(w, z * z)))
