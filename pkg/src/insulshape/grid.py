"""Rasterized domains on a uniform grid with a signed distance field.

Cell ``(iy, ix)`` has center ``origin + ((ix + ½) hg, (iy + ½) hg)``.  The
occupancy is a point-in-domain test at cell centers.  The signed distance
(negative inside) is the Euclidean distance from each center to a dense
polyline of the boundary, signed by occupancy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import FrameMismatch, ParseError, ResolutionTooCoarse
from .geometry import Mesh, StarBoundary, _points_in_polygon


@dataclass(frozen=True, eq=False)
class GridDomain:
    origin: tuple
    spacing: float
    occupancy: np.ndarray  # bool, shape (ny, nx)
    signed_distance: np.ndarray = field(repr=False, default=None)

    @property
    def shape(self):
        return self.occupancy.shape

    def centers(self):
        ny, nx = self.shape
        x = self.origin[0] + (np.arange(nx) + 0.5) * self.spacing
        y = self.origin[1] + (np.arange(ny) + 0.5) * self.spacing
        return np.meshgrid(x, y)

    def cell_index(self, points):
        """Nearest cell ``(iy, ix)`` of each point; -1 where outside the frame."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        ix = np.floor((p[:, 0] - self.origin[0]) / self.spacing).astype(np.int64)
        iy = np.floor((p[:, 1] - self.origin[1]) / self.spacing).astype(np.int64)
        ny, nx = self.shape
        out = (ix < 0) | (ix >= nx) | (iy < 0) | (iy >= ny)
        ix[out] = -1
        iy[out] = -1
        return iy, ix

    def area(self) -> float:
        return float(np.count_nonzero(self.occupancy)) * self.spacing**2

    @property
    def diameter(self) -> float:
        """Diagonal of the bounding box of the occupied cells."""
        iy, ix = np.nonzero(self.occupancy)
        if iy.size == 0:
            return 0.0
        return float(np.hypot(ix.max() - ix.min() + 1, iy.max() - iy.min() + 1) * self.spacing)

    def same_frame(self, other: "GridDomain") -> bool:
        return (
            self.shape == other.shape
            and np.isclose(self.spacing, other.spacing, rtol=1e-12, atol=0.0)
            and np.allclose(self.origin, other.origin, rtol=0.0, atol=1e-9 * self.spacing)
        )

    def complement(self) -> "GridDomain":
        sd = None if self.signed_distance is None else -self.signed_distance
        return GridDomain(self.origin, self.spacing, ~self.occupancy, sd)


# ---------------------------------------------------------------------------
# Shape specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ImplicitShape:
    """Domain {phi < 0} with bounding box ``(xmin, ymin, xmax, ymax)``."""

    name: str
    phi: Callable
    bbox: tuple


def dumbbell(neck=0.025, radius=1.0, offset=1.2) -> ImplicitShape:
    """Two disks centered at (±offset, 0) joined by the strip |y| ≤ neck, |x| ≤ offset."""

    def phi(x, y):
        d1 = np.hypot(x - offset, y) - radius
        d2 = np.hypot(x + offset, y) - radius
        strip = np.maximum(np.abs(y) - neck, np.abs(x) - offset)
        return np.minimum(np.minimum(d1, d2), strip)

    r = radius
    return ImplicitShape(f"dumbbell(neck={neck})", phi, (-offset - r, -r, offset + r, r))


def square(side=2.0, center=(0.0, 0.0)) -> ImplicitShape:
    cx, cy = center
    a = side / 2

    def phi(x, y):
        return np.maximum(np.abs(x - cx), np.abs(y - cy)) - a

    return ImplicitShape(f"square({side})", phi, (cx - a, cy - a, cx + a, cy + a))


def annulus(r_in=1.0, r_out=2.0) -> ImplicitShape:
    def phi(x, y):
        r = np.hypot(x, y)
        return np.maximum(r - r_out, r_in - r)

    return ImplicitShape(f"annulus({r_in},{r_out})", phi, (-r_out, -r_out, r_out, r_out))


def rough_star(a0=1.0, orders=(4, 8, 16, 32, 64), scale=0.4) -> StarBoundary:
    """Star shape with modes a_k = scale / k at the given orders."""
    return StarBoundary(a0=a0, modes=tuple((k, scale / k, 0.0) for k in orders))


def parse_shape_spec(text: str):
    """``disk:R``, ``square:side``, ``annulus:r_in,r_out``, ``dumbbell:neck``, ``rough_star``."""
    name, _, args = text.partition(":")
    vals = [float(v) for v in args.split(",") if v] if args else []
    if name == "disk":
        return StarBoundary.circle(vals[0] if vals else 1.0)
    if name == "square":
        return square(*(vals or [2.0]))
    if name == "annulus":
        return annulus(*(vals or [1.0, 2.0]))
    if name == "dumbbell":
        return dumbbell(*(vals or [0.025]))
    if name == "rough_star":
        return rough_star()
    raise ValueError(f"unknown shape spec {text!r}")


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------


def _bbox(shape) -> tuple:
    if isinstance(shape, StarBoundary):
        p = shape.point(np.linspace(0, 2 * np.pi, 4096, endpoint=False))
    elif isinstance(shape, Mesh):
        p = shape.vertices
    elif isinstance(shape, ImplicitShape):
        return shape.bbox
    else:
        raise TypeError(f"cannot rasterize {type(shape).__name__}")
    return (p[:, 0].min(), p[:, 1].min(), p[:, 0].max(), p[:, 1].max())


def _inside(shape, X, Y):
    pts = np.column_stack([X.ravel(), Y.ravel()])
    if isinstance(shape, StarBoundary):
        inside = shape.contains(pts)
    elif isinstance(shape, Mesh):
        inside = _points_in_polygon(pts, shape.vertices[shape.loops[0]])
        for loop in shape.loops[1:]:
            inside ^= _points_in_polygon(pts, shape.vertices[loop])
    else:
        inside = shape.phi(pts[:, 0], pts[:, 1]) < 0
    return inside.reshape(X.shape)


def _densify(loop_pts, step):
    q = np.roll(loop_pts, -1, axis=0)
    seg = np.linalg.norm(q - loop_pts, axis=1)
    out = []
    for p0, p1, L in zip(loop_pts, q, seg):
        k = max(1, int(np.ceil(L / step)))
        t = np.arange(k)[:, None] / k
        out.append(p0 + t * (p1 - p0))
    return np.vstack(out)


def _boundary_polyline(shape, gd_origin, hg, X, Y, occ):
    step = hg / 4
    if isinstance(shape, StarBoundary):
        n = int(np.ceil(shape.perimeter() / step))
        return shape.point(np.linspace(0, 2 * np.pi, max(n, 64), endpoint=False))
    if isinstance(shape, Mesh):
        return np.vstack([_densify(shape.vertices[l], step) for l in shape.loops])
    from skimage import measure

    if isinstance(shape, ImplicitShape):
        field_ = shape.phi(X, Y)
        level = 0.0
    else:
        field_ = occ.astype(float)
        level = 0.5
    pieces = []
    for c in measure.find_contours(np.pad(field_, 1, mode="edge"), level):
        # contour coordinates are (row, col) in padded index space
        xy = np.column_stack([gd_origin[0] + (c[:, 1] - 0.5) * hg, gd_origin[1] + (c[:, 0] - 0.5) * hg])
        pieces.append(_densify(xy, step))
    return np.vstack(pieces) if pieces else np.zeros((0, 2))


def rasterize(shape, hg: float, margin: Optional[float] = None, frame=None) -> GridDomain:
    """Rasterize a StarBoundary, Mesh, ImplicitShape or boolean bitmap.

    ``frame=(origin, (ny, nx))`` fixes the grid (for comparing domains); by
    default the bounding box is padded by ``margin`` (a quarter of the
    diameter plus two cells).  A bitmap is taken with ``hg`` as its spacing
    and origin (0, 0) unless ``frame`` is given.
    """
    if isinstance(shape, np.ndarray):
        occ = np.asarray(shape, dtype=bool)
        origin = (0.0, 0.0) if frame is None else tuple(frame[0])
        gd = GridDomain(origin, float(hg), occ)
        X, Y = gd.centers()
        diam = gd.diameter
        if not hg < diam / 16:
            raise ResolutionTooCoarse(f"hg={hg} not below diam/16={diam / 16}")
        poly = _boundary_polyline(None, origin, hg, X, Y, occ)
        return GridDomain(origin, float(hg), occ, _signed(poly, X, Y, occ))
    xmin, ymin, xmax, ymax = _bbox(shape)
    diam = float(np.hypot(xmax - xmin, ymax - ymin))
    if not hg < diam / 16:
        raise ResolutionTooCoarse(f"hg={hg} not below diam/16={diam / 16}")
    if frame is None:
        pad = diam / 4 + 2 * hg if margin is None else margin
        # origins on the lattice hg·Z keep scaled rasterizations exactly similar
        ox = np.floor((xmin - pad) / hg) * hg
        oy = np.floor((ymin - pad) / hg) * hg
        nx = int(np.ceil((xmax + pad - ox) / hg))
        ny = int(np.ceil((ymax + pad - oy) / hg))
        origin = (float(ox), float(oy))
    else:
        origin, (ny, nx) = tuple(frame[0]), frame[1]
    gd = GridDomain(origin, float(hg), np.zeros((ny, nx), dtype=bool))
    X, Y = gd.centers()
    occ = _inside(shape, X, Y)
    poly = _boundary_polyline(shape, origin, hg, X, Y, occ)
    return GridDomain(origin, float(hg), occ, _signed(poly, X, Y, occ))


def _signed(poly, X, Y, occ):
    if len(poly) == 0:
        return np.full(occ.shape, np.inf)
    d = cKDTree(poly).query(np.column_stack([X.ravel(), Y.ravel()]))[0].reshape(occ.shape)
    return np.where(occ, -d, d)


# ---------------------------------------------------------------------------
# Set distances
# ---------------------------------------------------------------------------


def _check_frame(A: GridDomain, B: GridDomain):
    if not A.same_frame(B):
        raise FrameMismatch("grid domains live on different frames")


def hausdorff_distance(A: GridDomain, B: GridDomain) -> float:
    """Symmetric Hausdorff distance between the occupied cell sets."""
    _check_frame(A, B)
    if not A.occupancy.any() or not B.occupancy.any():
        return 0.0 if A.occupancy.any() == B.occupancy.any() else float("inf")
    dB = ndimage.distance_transform_edt(~B.occupancy)
    dA = ndimage.distance_transform_edt(~A.occupancy)
    return float(max(dB[A.occupancy].max(), dA[B.occupancy].max()) * A.spacing)


def symmetric_difference_area(A: GridDomain, B: GridDomain) -> float:
    _check_frame(A, B)
    return float(np.count_nonzero(A.occupancy ^ B.occupancy)) * A.spacing**2


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------


def format_grid(gd: GridDomain) -> str:
    """``grid 1`` text format; the first bitmap row is the bottom row (iy = 0)."""
    ny, nx = gd.shape
    lines = ["grid 1", f"origin {gd.origin[0]:.17g} {gd.origin[1]:.17g}", f"spacing {gd.spacing:.17g}", f"dims {nx} {ny}"]
    lines += ["".join("1" if v else "0" for v in row) for row in gd.occupancy]
    return "\n".join(lines) + "\n"


def parse_grid(text: str) -> GridDomain:
    lines = text.splitlines()

    def expect(i, key, count):
        if i >= len(lines):
            raise ParseError(f"missing '{key}' line", i + 1)
        parts = lines[i].split()
        if not parts or parts[0] != key or len(parts) != count + 1:
            raise ParseError(f"expected '{key}' with {count} values", i + 1)
        return parts[1:]

    if not lines or lines[0].strip() != "grid 1":
        raise ParseError("missing 'grid 1' header", 1)
    try:
        ox, oy = map(float, expect(1, "origin", 2))
        (hg,) = map(float, expect(2, "spacing", 1))
        nx, ny = map(int, expect(3, "dims", 2))
    except ValueError as exc:
        raise ParseError(f"bad number: {exc}", 0) from None
    rows = lines[4 : 4 + ny]
    if len(rows) != ny:
        raise ParseError(f"expected {ny} bitmap rows, found {len(rows)}", len(lines))
    occ = np.zeros((ny, nx), dtype=bool)
    for i, row in enumerate(rows):
        row = row.strip()
        if len(row) != nx or set(row) - {"0", "1"}:
            raise ParseError(f"bitmap row must have {nx} characters 0/1", 5 + i)
        occ[i] = np.frombuffer(row.encode(), dtype=np.uint8) == ord("1")
    gd = GridDomain((ox, oy), hg, occ)
    X, Y = gd.centers()
    return GridDomain((ox, oy), hg, occ, _signed(_boundary_polyline(None, (ox, oy), hg, X, Y, occ), X, Y, occ))
