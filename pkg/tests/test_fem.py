import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from insulshape import fem
from insulshape.energy import analytic_annulus, analytic_ball, energy
from insulshape.errors import DimensionMismatch, IncompatibleData, NoConvergence
from insulshape.geometry import StarBoundary, triangulate

from shapes import DISK, ELLIPSE, GATE_A, TRIANGLE


class TestAssembly:
    def test_stiffness_symmetric(self, disk_mesh):
        K = fem.stiffness_matrix(disk_mesh)
        assert abs(K - K.T).max() <= 1e-12 * abs(K).max()
        assert K.shape == (disk_mesh.n_vertices,) * 2

    def test_constants_in_kernel(self, disk_mesh):
        K = fem.stiffness_matrix(disk_mesh)
        assert np.linalg.norm(K @ np.ones(K.shape[0])) <= 1e-12 * abs(K).max() * np.sqrt(K.shape[0])

    def test_load_and_boundary_sums(self, disk_mesh):
        sys = fem.assemble(disk_mesh, 1.0, 1.0)
        assert abs(sys.F.sum() - np.pi) < 2e-3
        assert abs(sys.b.sum() - 2 * np.pi) < 2e-3
        assert sys.b.sum() == pytest.approx(disk_mesh.boundary_weights().sum(), rel=1e-12)

    def test_nodal_f_size_checked(self, disk_mesh):
        with pytest.raises(DimensionMismatch):
            fem.assemble(disk_mesh, 1.0, np.ones(3))

    def test_mass_must_be_positive(self, disk_mesh):
        with pytest.raises(ValueError):
            fem.assemble(disk_mesh, 0.0)


class TestLinearSolve:
    def test_ball_solution(self, disk_mesh, disk_solution):
        exact = analytic_ball(2, 1.0, 1.0).at_vertices(disk_mesh)
        assert np.max(np.abs(disk_solution.nodal - exact)) <= 1e-3
        assert disk_solution.trace.values.mean() == pytest.approx(1 / (4 * np.pi), abs=1e-3)

    def test_conservation(self, disk_mesh, disk_solution):
        bU = np.dot(fem.boundary_vector(disk_mesh), disk_solution.nodal)
        F = fem.load_vector(disk_mesh, 1.0)
        assert bU == pytest.approx(F.sum() / fem.boundary_vector(disk_mesh).sum(), rel=1e-8)
        assert abs(bU - 0.5) < 1e-4

    def test_large_mass(self, disk_mesh):
        m = 4 * np.pi
        sol = fem.solve_insulation_linear(fem.assemble(disk_mesh, m))
        assert np.allclose(sol.trace.values, 1.0, atol=2e-3)

    def test_residual_and_trace(self, disk_mesh, disk_solution):
        assert disk_solution.residual <= 1e-10
        assert np.array_equal(disk_solution.trace.values, disk_solution.nodal[disk_mesh.boundary])

    def test_rotational_symmetry(self, disk_solution):
        t = disk_solution.trace.values
        assert t.std() <= 1e-3 * t.mean()

    def test_tolerance_range(self, disk_mesh):
        with pytest.raises(ValueError):
            fem.solve_insulation_linear(fem.assemble(disk_mesh, 1.0), tol=1e-3)

    def test_pcg_reports_failure(self, disk_mesh):
        sys = fem.assemble(disk_mesh, 1.0)
        with pytest.raises(NoConvergence):
            fem.pcg(sys.apply, sys.F, sys.diagonal(), tol=1e-12, maxiter=3)

    def test_recovered_flux_close_to_bc(self, disk_mesh, disk_solution):
        dn = fem.recovered_normal_derivative(disk_mesh, disk_solution.nodal)
        assert np.max(np.abs(dn - disk_solution.normal_derivative)) < 0.05


class TestEpsPath:
    def test_annulus_matches_example(self, annulus_mesh_05, annulus_eps):
        exact = analytic_annulus(0.5).at_vertices(annulus_mesh_05)
        assert np.max(np.abs(annulus_eps.nodal - exact)) <= 2e-3

    def test_annulus_traces(self, annulus_mesh_05, annulus_eps):
        outer, inner = annulus_mesh_05.loops
        assert np.max(np.abs(annulus_eps.nodal[outer])) <= 2e-3
        assert np.allclose(annulus_eps.nodal[inner], 0.041546, atol=2e-3)

    def test_energies_monotone_in_eps(self, annulus_eps):
        E = annulus_eps.history["energies"]
        assert all(b <= a + 1e-12 for a, b in zip(E, E[1:]))

    def test_contact_set_reported(self, annulus_eps):
        assert annulus_eps.history["contact_measure"] >= 0.0

    def test_agrees_with_linear_on_disk(self, disk_mesh, disk_solution):
        sol = fem.solve_insulation_eps(disk_mesh, 1.0, 1.0)
        assert np.max(np.abs(sol.nodal - disk_solution.nodal)) <= 1e-4

    def test_rejects_bad_schedule(self, disk_mesh):
        with pytest.raises(ValueError):
            fem.solve_insulation_eps(disk_mesh, 1.0, eps_schedule=(1e-3, 1e-2))


class TestHarmonicNeumann:
    def test_cos2_amplitude(self, disk_mesh):
        th = np.arctan2(*disk_mesh.vertices[disk_mesh.boundary].T[::-1])
        v = fem.solve_harmonic_neumann(disk_mesh, disk_mesh.boundary_field(np.cos(2 * th) / 2))
        amp = 2 * np.dot(disk_mesh.boundary_weights(), v.trace.values * np.cos(2 * th)) / (2 * np.pi)
        assert amp == pytest.approx(0.25, abs=2e-3)

    def test_zero_data(self, disk_mesh):
        v = fem.solve_harmonic_neumann(disk_mesh, disk_mesh.boundary_field(np.zeros(len(disk_mesh.boundary))))
        assert np.max(np.abs(v.nodal)) == 0.0

    def test_incompatible(self, disk_mesh):
        with pytest.raises(IncompatibleData):
            fem.solve_harmonic_neumann(disk_mesh, disk_mesh.boundary_field(np.ones(len(disk_mesh.boundary))))


class TestSpectra:
    @pytest.mark.parametrize("R", [1.0, 2.0])
    def test_stekloff_disk(self, R):
        mesh = triangulate(StarBoundary.circle(R), 0.02 * R)
        assert fem.stekloff_min(mesh).value == pytest.approx(1 / R, rel=1e-2)

    def test_stekloff_scaling(self):
        a = fem.stekloff_min(triangulate(TRIANGLE, 0.03)).value
        b = fem.stekloff_min(triangulate(TRIANGLE.scaled(2.0), 0.06)).value
        assert b == pytest.approx(a / 2, rel=1e-2)

    def test_neumann_disk_scaling(self):
        c1 = fem.neumann_poincare_constant(triangulate(DISK, 0.03))
        c2 = fem.neumann_poincare_constant(triangulate(StarBoundary.circle(2.0), 0.06))
        assert c1 == pytest.approx(1 / 1.841184**2, rel=2e-2)
        assert c2 == pytest.approx(4 * c1, rel=2e-2)

    def test_robust_grows_with_R(self):
        c1 = fem.robust_poincare_constant(triangulate(DISK, 0.04))
        c2 = fem.robust_poincare_constant(triangulate(StarBoundary.circle(2.0), 0.08))
        assert 0 < c1 < c2

    def test_robust_absolute_quotient(self):
        mesh = triangulate(ELLIPSE, 0.04)
        res = fem.robust_poincare_eigen(mesh)
        x = res.vector
        K, M, b = fem.stiffness_matrix(mesh), fem.mass_matrix(mesh), fem.boundary_vector(mesh)
        q_abs = (x @ (K @ x) + np.dot(b, np.abs(x)) ** 2) / (x @ (M @ x))
        assert res.signed_surrogate
        assert q_abs >= res.value * (1 - 1e-10)


@settings(max_examples=10, deadline=None)
@given(m=st.floats(0.1, 20.0), c=st.floats(0.5, 3.0))
def test_conservation_identity_property(m, c):
    mesh = _gate_mesh()
    sys = fem.assemble(mesh, m, c)
    sol = fem.solve_insulation_linear(sys)
    assert np.dot(sys.b, sol.nodal) == pytest.approx(m * sys.F.sum() / sys.b.sum(), rel=1e-8)


_CACHE = {}


def _gate_mesh():
    if "mesh" not in _CACHE:
        _CACHE["mesh"] = triangulate(GATE_A, 0.05)
    return _CACHE["mesh"]


def test_minimality_random_perturbations(disk_mesh, disk_solution):
    """100 sign-indefinite perturbations never lower the energy."""
    rng = np.random.Generator(np.random.Philox(7))
    K = fem.stiffness_matrix(disk_mesh)
    M = fem.mass_matrix(disk_mesh)
    J0 = energy(disk_mesh, disk_solution.nodal, 1.0, K=K, M=M).total
    for scale in np.geomspace(1e-4, 1.0, 100):
        w = scale * rng.standard_normal(disk_mesh.n_vertices)
        assert J0 <= energy(disk_mesh, disk_solution.nodal + w, 1.0, K=K, M=M).total + 1e-14
