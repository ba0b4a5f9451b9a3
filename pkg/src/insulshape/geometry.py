"""Star-shaped domains, P1 triangulations and basic geometric quantities.

A :class:`StarBoundary` is the canonical shape: a finite Fourier series for
the radius about a fixed center.  Meshes are polar-structured: concentric
homothetic copies of the boundary curve zipped together and relaxed by a
few Laplacian sweeps.  The connectivity depends only on a
:class:`MeshLayout` (ring and vertex counts), so a layout can be reused to
mesh a smoothly perturbed shape with identical topology.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import sparse

from .errors import MeshQualityFailure, ParseError

THETA_GRID = 4096
MIN_ANGLE_DEG = 20.0


# ---------------------------------------------------------------------------
# Star-shaped boundaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StarBoundary:
    """Radius function ``r(θ) = a0 + Σ a_k cos kθ + b_k sin kθ`` about ``center``."""

    center: tuple = (0.0, 0.0)
    a0: float = 1.0
    modes: tuple = ()

    def __post_init__(self):
        modes = tuple(sorted((int(k), float(a), float(b)) for k, a, b in self.modes))
        ks = [k for k, _, _ in modes]
        if any(k < 1 for k in ks):
            raise ValueError("mode orders must be positive integers")
        if len(set(ks)) != len(ks):
            raise ValueError(f"duplicate mode orders in {ks}")
        object.__setattr__(self, "modes", modes)
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(self, "a0", float(self.a0))
        theta = np.linspace(0.0, 2 * np.pi, THETA_GRID, endpoint=False)
        if np.min(self.radius(theta)[0]) <= 0.0:
            raise ValueError("radius function is not positive on the theta grid")

    @classmethod
    def circle(cls, radius=1.0, center=(0.0, 0.0)):
        return cls(center=center, a0=radius, modes=())

    @classmethod
    def from_coefficients(cls, a0, cos=None, sin=None, center=(0.0, 0.0), tol=0.0):
        """Build from dense coefficient arrays indexed by mode order (index 0 ignored)."""
        cos = np.zeros(1) if cos is None else np.asarray(cos, dtype=float)
        sin = np.zeros(1) if sin is None else np.asarray(sin, dtype=float)
        kmax = max(len(cos), len(sin)) - 1
        modes = []
        for k in range(1, kmax + 1):
            a = cos[k] if k < len(cos) else 0.0
            b = sin[k] if k < len(sin) else 0.0
            if abs(a) > tol or abs(b) > tol:
                modes.append((k, a, b))
        return cls(center=center, a0=a0, modes=tuple(modes))

    @property
    def max_order(self) -> int:
        return max((k for k, _, _ in self.modes), default=0)

    def coefficient_arrays(self, kmax=None):
        kmax = self.max_order if kmax is None else kmax
        a = np.zeros(kmax + 1)
        b = np.zeros(kmax + 1)
        a[0] = self.a0
        for k, ak, bk in self.modes:
            if k <= kmax:
                a[k], b[k] = ak, bk
        return a, b

    def radius(self, theta):
        """Return ``(r, r', r'')`` at ``theta`` (scalar or array)."""
        theta = np.asarray(theta, dtype=float)
        r = np.full(theta.shape, self.a0)
        dr = np.zeros(theta.shape)
        d2r = np.zeros(theta.shape)
        for k, a, b in self.modes:
            c = np.cos(k * theta)
            s = np.sin(k * theta)
            r = r + a * c + b * s
            dr = dr + k * (-a * s + b * c)
            d2r = d2r - k * k * (a * c + b * s)
        return r, dr, d2r

    def curvature(self, theta):
        r, dr, d2r = self.radius(theta)
        return (r * r + 2 * dr * dr - r * d2r) / (r * r + dr * dr) ** 1.5

    def point(self, theta):
        theta = np.asarray(theta, dtype=float)
        r = self.radius(theta)[0]
        return np.stack(
            [self.center[0] + r * np.cos(theta), self.center[1] + r * np.sin(theta)], axis=-1
        )

    def speed(self, theta):
        r, dr, _ = self.radius(theta)
        return np.sqrt(r * r + dr * dr)

    def area(self) -> float:
        # (1/2)∫ r² dθ, exact from the coefficients
        return float(np.pi * (self.a0**2 + 0.5 * sum(a * a + b * b for _, a, b in self.modes)))

    def perimeter(self, n=THETA_GRID) -> float:
        theta = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        return float(np.mean(self.speed(theta)) * 2 * np.pi)

    def centroid(self, n=THETA_GRID):
        theta = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        r = self.radius(theta)[0]
        w = 2 * np.pi / n
        mx = np.sum(r**3 * np.cos(theta)) * w / 3
        my = np.sum(r**3 * np.sin(theta)) * w / 3
        a = self.area()
        return np.array([self.center[0] + mx / a, self.center[1] + my / a])

    def polar_angle(self, points):
        points = np.asarray(points, dtype=float)
        return np.arctan2(points[..., 1] - self.center[1], points[..., 0] - self.center[0])

    def scaled(self, lam: float) -> "StarBoundary":
        return StarBoundary(
            center=self.center,
            a0=lam * self.a0,
            modes=tuple((k, lam * a, lam * b) for k, a, b in self.modes),
        )

    def rotated(self, phi: float) -> "StarBoundary":
        """Shape rotated by ``phi`` about its center: r_new(θ) = r(θ - φ)."""
        modes = []
        for k, a, b in self.modes:
            c, s = np.cos(k * phi), np.sin(k * phi)
            modes.append((k, a * c - b * s, a * s + b * c))
        return StarBoundary(center=self.center, a0=self.a0, modes=tuple(modes))

    def contains(self, points):
        points = np.asarray(points, dtype=float)
        dx = points[..., 0] - self.center[0]
        dy = points[..., 1] - self.center[1]
        return np.hypot(dx, dy) < self.radius(np.arctan2(dy, dx))[0]


def eval_radius(sb: StarBoundary, theta):
    return sb.radius(theta)


def curvature(sb: StarBoundary, theta):
    return sb.curvature(theta)


def rescale_to_volume(sb: StarBoundary, V0: float) -> StarBoundary:
    if V0 <= 0:
        raise ValueError("target area must be positive")
    lam = np.sqrt(V0 / sb.area())
    if lam == 1.0:
        return sb
    return sb.scaled(lam)


def fourier_fit(theta, values, kmax, weights=None):
    """Least-squares trigonometric fit; returns ``(c0, a[1..kmax], b[1..kmax])``."""
    theta = np.asarray(theta, dtype=float)
    k = np.arange(1, kmax + 1)
    basis = np.hstack(
        [np.ones((theta.size, 1)), np.cos(np.outer(theta, k)), np.sin(np.outer(theta, k))]
    )
    if weights is not None:
        sw = np.sqrt(np.asarray(weights, dtype=float))
        coef = np.linalg.lstsq(basis * sw[:, None], values * sw, rcond=None)[0]
    else:
        coef = np.linalg.lstsq(basis, values, rcond=None)[0]
    return coef[0], coef[1 : kmax + 1], coef[kmax + 1 :]


class ArclengthMap:
    """Maps arclength fractions of the boundary curve to polar angles.

    The speed ``|γ'(θ)|`` is expanded in a Fourier series so the map is a smooth
    function of the shape coefficients (needed for finite differences over shapes).
    """

    def __init__(self, sb: StarBoundary, n=THETA_GRID, tol=1e-15):
        theta = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        spd = sb.speed(theta)
        coef = np.fft.rfft(spd) / n
        self.c0 = coef[0].real
        ck = 2 * coef[1 : n // 2]
        keep = np.nonzero(np.abs(ck) > tol * self.c0)[0]
        kmax = keep.max() + 1 if keep.size else 0
        self.k = np.arange(1, kmax + 1)
        self.alpha = ck[:kmax].real
        self.beta = -ck[:kmax].imag
        self.length = 2 * np.pi * self.c0

    def arclength(self, theta):
        kt = np.outer(theta, self.k)
        s = self.c0 * theta + (np.sin(kt) @ (self.alpha / self.k)) - ((np.cos(kt) - 1) @ (self.beta / self.k))
        spd = self.c0 + np.cos(kt) @ self.alpha + np.sin(kt) @ self.beta
        return s, spd

    def theta_of_fraction(self, frac, iters=30):
        target = np.asarray(frac, dtype=float) * self.length
        theta = target / self.c0
        for _ in range(iters):
            s, spd = self.arclength(theta)
            step = (s - target) / spd
            theta = theta - step
            if np.max(np.abs(step)) < 1e-15:
                break
        return theta


# ---------------------------------------------------------------------------
# Meshes
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class BoundaryField:
    values: np.ndarray
    weights: np.ndarray

    def integral(self) -> float:
        return float(np.dot(self.values, self.weights))

    def mean(self) -> float:
        return self.integral() / float(np.sum(self.weights))


@dataclass(frozen=True, eq=False)
class Mesh:
    """P1 triangulation with positively oriented boundary loop(s)."""

    vertices: np.ndarray
    triangles: np.ndarray
    loops: tuple
    h_target: float
    boundary_normals: np.ndarray = field(default=None)
    layout: object = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.ascontiguousarray(self.vertices, dtype=float))
        object.__setattr__(self, "triangles", np.ascontiguousarray(self.triangles, dtype=np.int64))
        object.__setattr__(self, "loops", tuple(np.asarray(l, dtype=np.int64) for l in self.loops))
        if self.boundary_normals is None:
            object.__setattr__(self, "boundary_normals", self._vertex_normals())

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def boundary(self) -> np.ndarray:
        return np.concatenate(self.loops)

    def boundary_edges(self) -> np.ndarray:
        return np.vstack([np.column_stack([l, np.roll(l, -1)]) for l in self.loops])

    def boundary_weights(self) -> np.ndarray:
        """Trapezoid (lumped) arclength weight per boundary vertex, loop order."""
        out = []
        for l in self.loops:
            p = self.vertices[l]
            seg = np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1)
            out.append(0.5 * (seg + np.roll(seg, 1)))
        return np.concatenate(out)

    def boundary_field(self, values) -> BoundaryField:
        values = np.asarray(values, dtype=float)
        if values.shape != (len(self.boundary),):
            raise ValueError("boundary field length does not match the boundary loop(s)")
        return BoundaryField(values, self.boundary_weights())

    def trace(self, nodal) -> BoundaryField:
        return self.boundary_field(np.asarray(nodal)[self.boundary])

    def triangle_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def min_angle(self) -> float:
        return float(np.min(_triangle_min_angles(self.vertices, self.triangles)))

    def _vertex_normals(self) -> np.ndarray:
        out = []
        for l in self.loops:
            p = self.vertices[l]
            t = np.roll(p, -1, axis=0) - p
            # domain on the left of a positively oriented loop
            en = np.column_stack([t[:, 1], -t[:, 0]])
            vn = en + np.roll(en, 1, axis=0)
            out.append(vn / np.linalg.norm(vn, axis=1)[:, None])
        return np.vstack(out)

    def validate(self, min_angle=MIN_ANGLE_DEG) -> None:
        """Raise :class:`MeshQualityFailure` if any Mesh invariant is violated."""
        if np.any(self.triangle_areas() <= 0):
            raise MeshQualityFailure("non-positive triangle area")
        tri = self.triangles
        edges = np.sort(np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise MeshQualityFailure("edge shared by more than two triangles")
        bedges = np.sort(self.boundary_edges(), axis=1)
        if len(bedges) != int(np.sum(counts == 1)):
            raise MeshQualityFailure("boundary loops do not match the mesh boundary edges")
        single = {tuple(e) for e in np.unique(edges, axis=0)[counts == 1]}
        if any(tuple(e) not in single for e in bedges):
            raise MeshQualityFailure("boundary loop edge is not a mesh boundary edge")
        ang = self.min_angle()
        if ang < min_angle:
            raise MeshQualityFailure(f"minimum angle {ang:.2f} deg below {min_angle} deg")


@dataclass(frozen=True, eq=False)
class MeshLayout:
    """Combinatorial part of a polar ring mesh; reusable across nearby shapes."""

    ring_rho: np.ndarray  # relative radius of each ring, ring 0 is the center point
    ring_frac: tuple  # arclength fractions of the vertices on each ring
    triangles: np.ndarray
    smoothing: sparse.csr_matrix  # relaxation operator on interior vertices
    n_smooth: int
    h: float

    @property
    def n_boundary(self) -> int:
        return len(self.ring_frac[-1])


def _zip_rings(ia, fa, ib, fb):
    """Triangulate the band between ring A (inner) and ring B (outer).

    Works purely on arclength fractions, so the result never depends on geometry.
    """
    na, nb = len(ia), len(ib)
    # unwrap B so that its start is the vertex closest to A's first vertex
    d = (fb - fa[0] + 0.5) % 1.0 - 0.5
    j0 = int(np.argmin(np.abs(d)))
    ib_order = np.roll(ib, -j0)
    fb_order = np.roll(fb, -j0)
    posb = fa[0] + d[j0] + ((fb_order - fb_order[0]) % 1.0)
    posb = np.append(posb, posb[0] + 1.0)
    posa = fa[0] + ((fa - fa[0]) % 1.0)
    posa = np.append(posa, posa[0] + 1.0)
    tris = []
    i = j = 0
    while i < na or j < nb:
        a_cur = ia[i % na]
        b_cur = ib_order[j % nb]
        adv_a = j >= nb or (i < na and posa[i + 1] <= posb[j + 1])
        if adv_a:
            tris.append((a_cur, b_cur, ia[(i + 1) % na]))
            i += 1
        else:
            tris.append((a_cur, b_cur, ib_order[(j + 1) % nb]))
            j += 1
    return tris


def _ring_fractions(n, stagger):
    return (np.arange(n) + 0.5 * stagger) / n % 1.0


def _smoothing_operator(n_vertices, triangles, interior):
    tri = triangles
    rows = np.concatenate([tri[:, 0], tri[:, 1], tri[:, 2], tri[:, 1], tri[:, 2], tri[:, 0]])
    cols = np.concatenate([tri[:, 1], tri[:, 2], tri[:, 0], tri[:, 0], tri[:, 1], tri[:, 2]])
    adj = sparse.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n_vertices,) * 2).tocsr()
    adj.data[:] = 1.0
    deg = np.asarray(adj.sum(axis=1)).ravel()
    avg = sparse.diags(1.0 / deg) @ adj
    keep = np.zeros(n_vertices)
    keep[interior] = 1.0
    # x <- x + ω (avg x - x) on interior vertices, boundary vertices fixed
    omega = 0.5
    mask = sparse.diags(keep)
    return (sparse.identity(n_vertices) + omega * mask @ (avg - sparse.identity(n_vertices))).tocsr()


def make_layout(sb: StarBoundary, h: float, n_smooth=12) -> MeshLayout:
    perimeter = sb.perimeter()
    nb = max(12, int(round(perimeter / h)))
    mean_radius = perimeter / (2 * np.pi)
    n_rings = max(2, int(round(mean_radius / (h * np.sqrt(3) / 2))))
    rho = np.arange(n_rings + 1) / n_rings
    fracs = [np.zeros(1)]
    for j in range(1, n_rings + 1):
        n = nb if j == n_rings else max(6, int(round(nb * rho[j])))
        fracs.append(_ring_fractions(n, j % 2))
    return _layout_from_rings(rho, fracs, h, n_smooth, center=True)


def _layout_from_rings(rho, fracs, h, n_smooth, center):
    offsets = np.cumsum([0] + [len(f) for f in fracs])
    tris = []
    start = 1 if center else 0
    if center:
        ring1 = np.arange(offsets[1], offsets[2])
        for i in range(len(ring1)):
            tris.append((0, ring1[i], ring1[(i + 1) % len(ring1)]))
    for j in range(start, len(fracs) - 1):
        ia = np.arange(offsets[j], offsets[j + 1])
        ib = np.arange(offsets[j + 1], offsets[j + 2])
        if j == 0 and center:
            continue
        tris.extend(_zip_rings(ia, fracs[j], ib, fracs[j + 1]))
    triangles = np.array(tris, dtype=np.int64)
    n_vertices = int(offsets[-1])
    boundary = np.arange(offsets[-2], offsets[-1])
    interior = np.setdiff1d(np.arange(n_vertices), boundary)
    if not center:
        interior = np.setdiff1d(interior, np.arange(offsets[0], offsets[1]))
    op = _smoothing_operator(n_vertices, triangles, interior)
    return MeshLayout(np.asarray(rho), tuple(fracs), triangles, op, n_smooth, h)


def _smooth(layout, points):
    for _ in range(layout.n_smooth):
        points = layout.smoothing @ points
    return points


@dataclass(frozen=True, eq=False)
class LatticeLayout:
    """Connectivity of a mapped-lattice mesh.

    Interior vertices are an equilateral lattice on the unit disk carried to
    the shape by ``x -> c + x (a0 + χ(|x|) (r(θ) - a0))`` with the blend
    χ(ρ) = ρ²(3 - 2ρ).  Since χ'(1) = 0 the map is homothetic near the
    boundary, so band gaps follow r(θ) when a layout is reused.  Away from
    the boundary band neighbouring triangles form near-parallelograms,
    which keeps the nodal P1 error free of the logarithmic factor that seams
    of a ring mesh introduce.
    """

    reference: np.ndarray  # interior lattice points in unit-disk coordinates
    boundary_frac: np.ndarray  # arclength fractions of the boundary vertices
    triangles: np.ndarray
    smoothing: sparse.csr_matrix  # relaxation of the boundary band only
    n_smooth: int
    h: float

    @property
    def n_boundary(self) -> int:
        return len(self.boundary_frac)


LATTICE_BAND = 0.45  # minimum normal gap between lattice and boundary, in units of h
LATTICE_BAND_WIDTH = 2.5  # relaxed band depth, in lattice spacings
LATTICE_PRUNE_ANGLE = 25.0
LATTICE_PRUNE_PASSES = 3


def _triangle_min_angles(points, tri):
    p = points[tri]
    out = []
    for i in range(3):
        u = p[:, (i + 1) % 3] - p[:, i]
        v = p[:, (i + 2) % 3] - p[:, i]
        c = np.sum(u * v, axis=1) / (np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
        out.append(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))
    return np.min(out, axis=0)


def _blend(rho):
    return rho * rho * (3.0 - 2.0 * rho)


def _lattice_points(sb, h, reference, boundary_frac):
    rho = np.hypot(reference[:, 0], reference[:, 1])
    theta = np.arctan2(reference[:, 1], reference[:, 0])
    scale = sb.a0 + _blend(rho) * (sb.radius(theta)[0] - sb.a0)
    inner = np.asarray(sb.center) + reference * scale[:, None]
    outer = sb.point(ArclengthMap(sb).theta_of_fraction(boundary_frac))
    return np.vstack([inner, outer])


def _points_in_polygon(points, poly):
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    q = np.roll(poly, -1, axis=0)
    for (x0, y0), (x1, y1) in zip(poly, q):
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < xc)
    return inside


def make_lattice_layout(sb: StarBoundary, h: float, n_smooth=10) -> LatticeLayout:
    from scipy.spatial import Delaunay

    nb = max(12, int(round(sb.perimeter() / h)))
    frac = np.arange(nb) / nb
    hr = h / sb.a0
    n = int(np.ceil(1.2 / hr))
    i, j = np.meshgrid(np.arange(-n, n + 1), np.arange(-n, n + 1))
    ref = np.column_stack([((i + 0.5 * (j % 2)) * hr).ravel(), (j * hr * np.sqrt(3) / 2).ravel()])
    rho = np.hypot(ref[:, 0], ref[:, 1])
    ref, rho = ref[rho < 1.0], rho[rho < 1.0]
    r, dr, _ = sb.radius(np.arctan2(ref[:, 1], ref[:, 0]))
    scale = sb.a0 + _blend(rho) * (r - sb.a0)
    gap = (r - rho * scale) * r / np.sqrt(r * r + dr * dr)
    keep = gap >= LATTICE_BAND * h
    ref, rho = ref[keep], rho[keep]
    for attempt in range(LATTICE_PRUNE_PASSES + 1):
        pts = _lattice_points(sb, h, ref, frac)
        tri = Delaunay(pts).simplices.astype(np.int64)
        tri = tri[_points_in_polygon(pts[tri].mean(axis=1), pts[len(ref):])]
        e1 = pts[tri[:, 1]] - pts[tri[:, 0]]
        e2 = pts[tri[:, 2]] - pts[tri[:, 0]]
        flip = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0] < 0
        tri[flip] = tri[flip][:, [0, 2, 1]]
        band = np.nonzero(rho > 1.0 - LATTICE_BAND_WIDTH * hr)[0]
        op = _smoothing_operator(len(pts), tri, band)
        relaxed = pts
        for _ in range(n_smooth):
            relaxed = op @ relaxed
        # drop band vertices of poorly shaped triangles and retriangulate
        bad = tri[_triangle_min_angles(relaxed, tri) < LATTICE_PRUNE_ANGLE]
        drop = np.intersect1d(bad.ravel(), band)
        if drop.size == 0 or attempt == LATTICE_PRUNE_PASSES:
            break
        keep = np.setdiff1d(np.arange(len(ref)), drop)
        ref, rho = ref[keep], rho[keep]
    return LatticeLayout(ref, frac, tri, op, n_smooth, h)


def triangulate(
    sb: StarBoundary, h: float, layout=None, check=True, method: str = "lattice"
) -> Mesh:
    """Mesh ``sb`` with nominal spacing ``h``.

    ``method`` is ``"lattice"`` (mapped equilateral lattice, the default) or
    ``"rings"`` (polar rings zipped together and relaxed).  If the lattice mesh
    misses the angle bound the ring mesher is tried.  Passing the ``layout`` of
    a previous mesh reuses its topology, which keeps discrete energies smooth
    under small shape perturbations.
    """
    if layout is None:
        if not h < sb.a0 / 4:
            raise MeshQualityFailure(f"h={h} too coarse for mean radius {sb.a0} (need h < a0/4)")
        if method not in ("lattice", "rings"):
            raise ValueError(f"unknown meshing method {method!r}")
        if method == "lattice":
            try:
                return triangulate(sb, h, make_lattice_layout(sb, h), check=True)
            except MeshQualityFailure:
                pass
        layout = make_layout(sb, h)
    if isinstance(layout, LatticeLayout):
        points = _smooth(layout, _lattice_points(sb, h, layout.reference, layout.boundary_frac))
    else:
        amap = ArclengthMap(sb)
        c = np.asarray(sb.center)
        pts = [c[None, :]]
        for j in range(1, len(layout.ring_frac)):
            theta = amap.theta_of_fraction(layout.ring_frac[j])
            r = sb.radius(theta)[0]
            pts.append(c + layout.ring_rho[j] * r[:, None] * np.column_stack([np.cos(theta), np.sin(theta)]))
        points = _smooth(layout, np.vstack(pts))
    nb = layout.n_boundary
    loop = np.arange(len(points) - nb, len(points))
    mesh = Mesh(points, layout.triangles, (loop,), layout.h, layout=layout)
    if check:
        mesh.validate()
    return mesh


def annulus_mesh(r_in: float, r_out: float, h: float, n_smooth=12) -> Mesh:
    """Two-loop mesh of ``r_in < |x| < r_out``; inner loop runs clockwise."""
    if not (0 < r_in < r_out) or not h < (r_out - r_in) / 2:
        raise MeshQualityFailure("invalid annulus radii or spacing")
    n_rings = max(2, int(round((r_out - r_in) / (h * np.sqrt(3) / 2))))
    radii = np.linspace(r_in, r_out, n_rings + 1)
    fracs = [_ring_fractions(max(6, int(round(2 * np.pi * r / h))), j % 2) for j, r in enumerate(radii)]
    offsets = np.cumsum([0] + [len(f) for f in fracs])
    tris = []
    for j in range(n_rings):
        ia = np.arange(offsets[j], offsets[j + 1])
        ib = np.arange(offsets[j + 1], offsets[j + 2])
        tris.extend(_zip_rings(ia, fracs[j], ib, fracs[j + 1]))
    triangles = np.array(tris, dtype=np.int64)
    pts = np.vstack(
        [r * np.column_stack([np.cos(2 * np.pi * f), np.sin(2 * np.pi * f)]) for r, f in zip(radii, fracs)]
    )
    n = len(pts)
    inner = np.arange(offsets[0], offsets[1])
    outer = np.arange(offsets[-2], offsets[-1])
    interior = np.setdiff1d(np.arange(n), np.concatenate([inner, outer]))
    op = _smoothing_operator(n, triangles, interior)
    layout = MeshLayout(radii / r_out, tuple(fracs), triangles, op, n_smooth, h)
    pts = _smooth(layout, pts)
    mesh = Mesh(pts, triangles, (outer, inner[::-1]), h, layout=layout)
    mesh.validate()
    return mesh


def square_mesh(side: float, h: float, origin=(0.0, 0.0)) -> Mesh:
    """Structured mesh of a square with alternating diagonals (criss-cross free)."""
    n = max(2, int(np.ceil(side / h)))
    t = np.linspace(0.0, side, n + 1)
    X, Y = np.meshgrid(t + origin[0], t + origin[1])
    pts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    tris = []
    for i in range(n):
        for j in range(n):
            a, b, c, d = idx[i, j], idx[i, j + 1], idx[i + 1, j + 1], idx[i + 1, j]
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    loop = np.concatenate([idx[0, :-1], idx[:-1, -1], idx[-1, :0:-1], idx[:0:-1, 0]])
    mesh = Mesh(pts, np.array(tris, dtype=np.int64), (loop,), side / n)
    mesh.validate()
    return mesh


def refine(mesh: Mesh, project: Optional[Callable] = None) -> Mesh:
    """Uniform red refinement: each triangle splits into four similar ones.

    ``project`` maps new boundary midpoints (array ``(k, 2)``) onto the curved
    boundary; a :class:`StarBoundary` may be passed directly.  Nested meshes
    give a clean h² rate, unlike independently generated ones whose seams move.
    """
    if isinstance(project, StarBoundary):
        sb = project
        project = lambda p: sb.point(sb.polar_angle(p))
    tri = mesh.triangles
    edges = np.sort(np.vstack([tri[:, [1, 2]], tri[:, [2, 0]], tri[:, [0, 1]]]), axis=1)
    uniq, inv = np.unique(edges, axis=0, return_inverse=True)
    inv = inv.ravel()
    nv = mesh.n_vertices
    mid = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])
    edge_id = {(int(a), int(b)): i for i, (a, b) in enumerate(uniq)}
    loops = []
    for loop in mesh.loops:
        nxt = np.roll(loop, -1)
        ids = np.array([edge_id[(min(a, b), max(a, b))] for a, b in zip(loop, nxt)])
        if project is not None:
            mid[ids] = project(mid[ids])
        new = np.empty(2 * len(loop), dtype=np.int64)
        new[0::2] = loop
        new[1::2] = nv + ids
        loops.append(new)
    nt = len(tri)
    m0, m1, m2 = (nv + inv[k * nt:(k + 1) * nt] for k in range(3))
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    children = np.vstack([
        np.column_stack([a, m2, m1]),
        np.column_stack([m2, b, m0]),
        np.column_stack([m1, m0, c]),
        np.column_stack([m0, m1, m2]),
    ])
    out = Mesh(np.vstack([mesh.vertices, mid]), children, tuple(loops), mesh.h_target / 2)
    out.validate()
    return out


@dataclass(frozen=True, eq=False)
class DomainMetrics:
    area: float
    perimeter: float
    curvature: BoundaryField


def discrete_curvature(mesh: Mesh) -> np.ndarray:
    """Turning angle per unit arclength at each boundary vertex."""
    out = []
    for l in mesh.loops:
        p = mesh.vertices[l]
        t_out = np.roll(p, -1, axis=0) - p
        t_in = p - np.roll(p, 1, axis=0)
        turn = np.arctan2(
            t_in[:, 0] * t_out[:, 1] - t_in[:, 1] * t_out[:, 0], np.sum(t_in * t_out, axis=1)
        )
        w = 0.5 * (np.linalg.norm(t_out, axis=1) + np.linalg.norm(t_in, axis=1))
        out.append(turn / w)
    return np.concatenate(out)


def metrics(mesh: Mesh, sb: Optional[StarBoundary] = None) -> DomainMetrics:
    area = float(np.sum(mesh.triangle_areas()))
    e = mesh.boundary_edges()
    perimeter = float(np.sum(np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1)))
    if sb is not None:
        h_vals = sb.curvature(sb.polar_angle(mesh.vertices[mesh.boundary]))
    else:
        h_vals = discrete_curvature(mesh)
    return DomainMetrics(area, perimeter, mesh.boundary_field(h_vals))


# ---------------------------------------------------------------------------
# Text formats
# ---------------------------------------------------------------------------


def _tokens(text):
    for n, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped:
            yield n, stripped


def format_star(sb: StarBoundary) -> str:
    lines = ["starshape 1", f"center {sb.center[0]!r} {sb.center[1]!r}", f"a0 {sb.a0!r}"]
    lines += [f"mode {k} {a!r} {b!r}" for k, a, b in sb.modes]
    return "\n".join(lines) + "\n"


def parse_star(text: str) -> StarBoundary:
    lines = list(_tokens(text))
    if not lines or lines[0][1].split() != ["starshape", "1"]:
        raise ParseError("expected header 'starshape 1'", lines[0][0] if lines else 1)
    center, a0, modes = (0.0, 0.0), None, []
    for n, line in lines[1:]:
        if line.startswith("#"):
            continue
        parts = line.split()
        try:
            if parts[0] == "center" and len(parts) == 3:
                center = (float(parts[1]), float(parts[2]))
            elif parts[0] == "a0" and len(parts) == 2:
                a0 = float(parts[1])
            elif parts[0] == "mode" and len(parts) == 4:
                modes.append((int(parts[1]), float(parts[2]), float(parts[3])))
            else:
                raise ParseError(f"unrecognized line {line!r}", n)
        except ValueError as exc:
            raise ParseError(str(exc), n) from None
    if a0 is None:
        raise ParseError("missing 'a0' line", lines[-1][0])
    try:
        return StarBoundary(center=center, a0=a0, modes=tuple(modes))
    except ValueError as exc:
        raise ParseError(str(exc)) from None


def format_mesh(mesh: Mesh) -> str:
    nb = sum(len(l) for l in mesh.loops)
    out = ["insulmesh 1", f"{mesh.n_vertices} {len(mesh.triangles)} {nb}"]
    out += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    out += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    for n, l in enumerate(mesh.loops):
        if n:
            out.append("#loop")
        out += [str(i) for i in l.tolist()]
    return "\n".join(out) + "\n"


def parse_mesh(text: str) -> Mesh:
    lines = list(_tokens(text))
    if not lines or lines[0][1].split() != ["insulmesh", "1"]:
        raise ParseError("expected header 'insulmesh 1'", lines[0][0] if lines else 1)
    try:
        nv, nt, nb = (int(v) for v in lines[1][1].split())
    except (IndexError, ValueError):
        raise ParseError("expected 'nv nt nb'", lines[1][0] if len(lines) > 1 else 2) from None
    body = lines[2:]
    if len(body) < nv + nt + nb:
        raise ParseError("file truncated", lines[-1][0])
    try:
        verts = np.array([[float(v) for v in body[i][1].split()] for i in range(nv)])
        tris = np.array([[int(v) for v in body[nv + i][1].split()] for i in range(nt)])
    except ValueError as exc:
        raise ParseError(str(exc)) from None
    if verts.shape != (nv, 2) or tris.shape != (nt, 3):
        raise ParseError("malformed vertex or triangle block")
    loops, cur, seen = [], [], 0
    for n, line in body[nv + nt :]:
        if line == "#loop":
            loops.append(cur)
            cur = []
            continue
        try:
            cur.append(int(line))
        except ValueError:
            raise ParseError(f"bad boundary index {line!r}", n) from None
        seen += 1
    loops.append(cur)
    if seen != nb:
        raise ParseError(f"expected {nb} boundary indices, found {seen}")
    if tris.min() < 0 or tris.max() >= nv:
        raise ParseError("triangle index out of range")
    lens = [np.linalg.norm(verts[np.roll(l, -1)] - verts[l], axis=1).mean() for l in map(np.array, loops)]
    mesh = Mesh(verts, tris, tuple(loops), float(np.mean(lens)))
    mesh.validate()
    return mesh
