"""Grid diagnostics for rough domains.

Tube-volume porosity exponents, a stratified Monte Carlo estimate of the
fractional perimeter, and path-search certificates of M-uniformity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph

from .errors import BracketInvalid, DisconnectedDomain, InsufficientRange
from .grid import GridDomain

PASS_THRESHOLD = 0.99


def tube_volume(gd: GridDomain, r: float) -> float:
    """Area of {x : d(x, ∂Ω) < r} by cell count."""
    return float(np.count_nonzero(np.abs(gd.signed_distance) < r)) * gd.spacing**2


@dataclass(frozen=True, eq=False)
class ScalingFit:
    radii: np.ndarray
    tube_volumes: np.ndarray
    delta_fit: float
    C_fit: float
    r_squared: float

    def as_dict(self):
        return {
            "radii": self.radii.tolist(),
            "tube_volumes": self.tube_volumes.tolist(),
            "delta_fit": self.delta_fit,
            "C_fit": self.C_fit,
            "r_squared": self.r_squared,
        }


def porosity_exponent(gd: GridDomain, r_min: float, r_max: float) -> ScalingFit:
    """Fit |(∂Ω)^r| ≈ C r^δ over the radii r_min·2^j ≤ r_max."""
    hg, diam = gd.spacing, gd.diameter
    if not (4 * hg <= r_min * (1 + 1e-12) and r_min < r_max and r_max <= diam / 4 * (1 + 1e-12)):
        raise ValueError(f"need 4hg={4 * hg:g} <= r_min < r_max <= diam/4={diam / 4:g}")
    n = int(np.floor(np.log2(r_max / r_min) + 1e-9)) + 1
    if n < 4:
        raise InsufficientRange(f"only {n} dyadic radii in [{r_min:g}, {r_max:g}]")
    radii = r_min * 2.0 ** np.arange(n)
    vols = np.array([tube_volume(gd, r) for r in radii])
    x, y = np.log(radii), np.log(vols)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return ScalingFit(radii, vols, float(slope), float(np.exp(icpt)), float(r2))


# ---------------------------------------------------------------------------
# Fractional perimeter
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FractionalPerimeter:
    estimate: float
    stderr: float
    bias_bound: float
    strata: int

    def __iter__(self):
        return iter((self.estimate, self.stderr))


def _strata(hg, diag):
    n = max(1, int(np.ceil(np.log2(diag / hg))))
    return hg * 2.0 ** np.arange(n)


def fractional_perimeter(gd: GridDomain, s: float, n_samples: int = 10**6, seed: int = 0, chunk: int = 2**16):
    """Monte Carlo estimate of ∬_{B×B} |χ(x) - χ(y)| / |x - y|^{2+s} over the frame B.

    Writing y = x + ρ e^{iφ}, the integral is 2π|B| E_x,φ ∫ |χ(x)-χ(y)| ρ^{-1-s} dρ.
    The ρ range [hg, diag(B)) is split into dyadic strata [a, 2a); in each,
    ρ is drawn with density ∝ ρ^{-1-s} so the estimator carries the exact
    stratum weight a^{-s}(1 - 2^{-s})/s.  Each stratum gets its own
    generator spawned from ``seed``, so results are bit-reproducible.
    Points y leaving the frame count as outside both sets (contribution 0).
    """
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    hg = gd.spacing
    ny, nx = gd.shape
    W, H = nx * hg, ny * hg
    lows = _strata(hg, np.hypot(W, H))
    per = max(1, n_samples // len(lows))
    occ = gd.occupancy
    total, var = 0.0, 0.0
    scale = 2 * np.pi * W * H
    for a, ss in zip(lows, np.random.SeedSequence(seed).spawn(len(lows))):
        rng = np.random.Generator(np.random.Philox(ss))
        weight = a ** (-s) * (1 - 2.0 ** (-s)) / s
        hits, done = 0, 0
        while done < per:
            k = min(chunk, per - done)
            x = rng.random((k, 2)) * (W, H)
            u = rng.random(k)
            # inverse CDF of ρ^{-1-s} on [a, 2a)
            rho = a * (1 - u * (1 - 2.0 ** (-s))) ** (-1 / s)
            phi = rng.random(k) * 2 * np.pi
            y = x + rho[:, None] * np.column_stack([np.cos(phi), np.sin(phi)])
            ix0 = np.minimum((x[:, 0] / hg).astype(np.int64), nx - 1)
            iy0 = np.minimum((x[:, 1] / hg).astype(np.int64), ny - 1)
            jx = np.floor(y[:, 0] / hg).astype(np.int64)
            jy = np.floor(y[:, 1] / hg).astype(np.int64)
            inb = (jx >= 0) & (jx < nx) & (jy >= 0) & (jy < ny)
            cy = np.zeros(k, dtype=bool)
            cy[inb] = occ[jy[inb], jx[inb]]
            cx = occ[iy0, ix0]
            # outside the frame neither χ_Ω nor χ_{B∖Ω} is one
            diff = inb & (cx != cy)
            hits += int(np.count_nonzero(diff))
            done += k
        p = hits / per
        total += scale * weight * p
        var += (scale * weight) ** 2 * p * (1 - p) / per
    # ρ < hg only matters for x within hg of ∂Ω, where ∫_t^hg ρ^{-1-s} dρ ≤ t^{-s}/s
    bias = 2 * np.pi * tube_volume(gd, hg) * hg ** (-s) / (s * (1 - s))
    return FractionalPerimeter(float(total), float(np.sqrt(var)), float(bias), len(lows))


# ---------------------------------------------------------------------------
# M-uniformity
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class UniformityReport:
    M: float
    pairs_tested: int
    pass_fraction: float
    worst_pair: Optional[tuple]
    certificates: Optional[List] = field(default=None, repr=False)
    passed: Optional[np.ndarray] = field(default=None, repr=False)
    pairs: Optional[np.ndarray] = field(default=None, repr=False)
    resolution: float = 0.0
    seed: int = 0

    @property
    def passes(self) -> bool:
        return self.pass_fraction >= PASS_THRESHOLD

    def as_dict(self):
        wp = None
        if self.worst_pair is not None:
            x1, x2, L, c = self.worst_pair
            wp = {"x1": list(map(float, x1)), "x2": list(map(float, x2)), "path_length": L, "clearance_ratio": c}
        return {
            "M": self.M,
            "pairs_tested": self.pairs_tested,
            "pass_fraction": self.pass_fraction,
            "worst_pair": wp,
            "failures_are_evidence_at_resolution": self.resolution,
            "seed": self.seed,
        }


class _InsideGraph:
    """8-connected graph on the occupied cells with octile edge lengths."""

    def __init__(self, gd: GridDomain):
        occ = gd.occupancy
        ny, nx = occ.shape
        self.gd = gd
        self.index = -np.ones(occ.shape, dtype=np.int64)
        iy, ix = np.nonzero(occ)
        self.cells = np.column_stack([iy, ix])
        self.index[iy, ix] = np.arange(iy.size)
        X, Y = gd.centers()
        self.xy = np.column_stack([X[iy, ix], Y[iy, ix]])
        self.clearance = np.abs(gd.signed_distance[iy, ix])
        rows, cols, w = [], [], []
        for dy, dx in ((0, 1), (1, 0), (1, 1), (1, -1)):
            y2, x2 = iy + dy, ix + dx
            ok = (y2 >= 0) & (y2 < ny) & (x2 >= 0) & (x2 < nx)
            ok[ok] &= occ[y2[ok], x2[ok]]
            a = self.index[iy[ok], ix[ok]]
            b = self.index[y2[ok], x2[ok]]
            rows += [a, b]
            cols += [b, a]
            w += [np.full(2 * a.size, np.hypot(dx, dy) * gd.spacing)]
        n = iy.size
        self.A = sparse.csr_matrix((np.concatenate(w), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))

    def shortest(self, i, j, mask, limit=np.inf):
        keep = np.flatnonzero(mask)
        local = -np.ones(mask.size, dtype=np.int64)
        local[keep] = np.arange(keep.size)
        sub = self.A[keep][:, keep]
        dist, pred = csgraph.dijkstra(sub, indices=local[i], return_predecessors=True, limit=limit)
        L = dist[local[j]]
        if not np.isfinite(L):
            return np.inf, None
        path = [local[j]]
        while path[-1] != local[i]:
            path.append(pred[path[-1]])
        return float(L), keep[np.array(path[::-1])]

    def clearance_ratio(self, path, i, j):
        """min over interior path nodes of clearance / min(|p-x1|, |p-x2|)."""
        p = self.xy[path]
        near = np.minimum(np.linalg.norm(p - self.xy[i], axis=1), np.linalg.norm(p - self.xy[j], axis=1))
        with np.errstate(divide="ignore"):
            r = np.where(near > 0, self.clearance[path] / np.where(near > 0, near, 1.0), np.inf)
        return float(r.min())


def _require_connected(gd):
    _, n = ndimage.label(gd.occupancy, structure=np.ones((3, 3)))
    if n != 1:
        raise DisconnectedDomain(f"occupancy has {n} 8-connected components")


def _sample_pairs(n_cells, pair_samples, seed):
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    pairs = []
    while len(pairs) < pair_samples:
        i, j = rng.integers(0, n_cells, size=2)
        if i != j:
            pairs.append((int(i), int(j)))
    return np.array(pairs, dtype=np.int64)


def admissible(graph: _InsideGraph, i, j, M):
    d = float(np.linalg.norm(graph.xy[i] - graph.xy[j]))
    slack = 1 + 4 * graph.gd.spacing / d
    Mp = M * slack
    near = np.minimum(np.linalg.norm(graph.xy - graph.xy[i], axis=1), np.linalg.norm(graph.xy - graph.xy[j], axis=1))
    return graph.clearance >= near / Mp, M * d * slack, d


def verify_certificate(graph: _InsideGraph, path, M) -> bool:
    """Check a stored path against the admissibility and length rules at M."""
    i, j = path[0], path[-1]
    mask, bound, _ = admissible(graph, i, j, M)
    steps = np.linalg.norm(np.diff(graph.xy[path], axis=0), axis=1)
    return bool(mask[path].all() and steps.sum() <= bound * (1 + 1e-12))


def m_uniform_check(gd: GridDomain, M: float, pair_samples: int = 200, seed: int = 0, keep_certificates=False, graph=None):
    """Path-search test of the M-uniform conditions on sampled interior pairs.

    A passing pair comes with an explicit admissible path.  A failing pair is
    evidence at resolution ``hg`` only.
    """
    if not M > 1:
        raise ValueError("M must exceed 1")
    _require_connected(gd)
    graph = _InsideGraph(gd) if graph is None else graph
    pairs = _sample_pairs(len(graph.xy), pair_samples, seed)
    passed = np.zeros(len(pairs), dtype=bool)
    certs = [] if keep_certificates else None
    worst, worst_key = None, None
    for k, (i, j) in enumerate(pairs):
        mask, bound, d = admissible(graph, i, j, M)
        L, path = graph.shortest(i, j, mask, limit=bound * (1 + 1e-12))
        passed[k] = path is not None
        if keep_certificates:
            certs.append(path)
        if path is None:
            # evidence: the unconstrained geodesic and its clearance ratio
            L, path = graph.shortest(i, j, np.ones(len(graph.xy), dtype=bool))
            key = (1, d)
        else:
            key = (0, L / bound)
        if worst_key is None or key > worst_key:
            worst_key = key
            worst = (graph.xy[i], graph.xy[j], L, graph.clearance_ratio(path, i, j))
    return UniformityReport(
        float(M), len(pairs), float(passed.mean()), worst, certs, passed, pairs, gd.spacing, seed
    )


def min_uniformity(gd: GridDomain, M_lo: float, M_hi: float, pair_samples: int = 200, seed: int = 0, factor=1.1):
    """Smallest tested M, within ``factor``, at which the pass fraction reaches 0.99."""
    graph = _InsideGraph(gd)

    def ok(M):
        return m_uniform_check(gd, M, pair_samples, seed, graph=graph).passes

    if ok(M_lo):
        raise BracketInvalid(f"check already passes at M_lo={M_lo}")
    if not ok(M_hi):
        raise BracketInvalid(f"check fails at M_hi={M_hi}")
    lo, hi = M_lo, M_hi
    while hi / lo > factor:
        mid = np.sqrt(lo * hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return float(hi)
