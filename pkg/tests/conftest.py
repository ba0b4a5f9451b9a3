import pytest

from insulshape import fem
from insulshape.geometry import annulus_mesh, triangulate

from shapes import DISK


@pytest.fixture(scope="session")
def disk_mesh():
    return triangulate(DISK, 0.02)


@pytest.fixture(scope="session")
def disk_solution(disk_mesh):
    return fem.solve_insulation_linear(fem.assemble(disk_mesh, 1.0, 1.0))


@pytest.fixture(scope="session")
def annulus_mesh_05():
    return annulus_mesh(1.0, 2.0, 0.05)


@pytest.fixture(scope="session")
def annulus_eps(annulus_mesh_05):
    return fem.solve_insulation_eps(annulus_mesh_05, 0.5, 1.0)
