"""Shared test shapes."""

from insulshape.geometry import StarBoundary

DISK = StarBoundary.circle(1.0)
ELLIPSE = StarBoundary(a0=1.0, modes=((2, 0.1, 0.0),))
TRIANGLE = StarBoundary(a0=1.0, modes=((3, 0.08, 0.0),))
# generic non-disk stars for the gradient gate
GATE_A = StarBoundary(
    a0=1.0, modes=((2, 0.06, 0.03), (3, 0.03, -0.02), (4, -0.015, 0.02), (5, 0.01, 0.012), (6, 0.008, -0.006))
)
GATE_B = StarBoundary(a0=1.0, modes=((2, 0.1, 0.03), (3, 0.02, 0.03), (5, -0.01, 0.01)))
