"""Triangle-mesh geometry kernels: exact closest-point queries, generalized
winding numbers, area-uniform surface sampling, and mesh health checks.

All routines are pure numpy over immutable (vertices, faces) arrays and are
chunked internally with fixed tile sizes so results do not depend on how
callers partition their queries.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError

_PAIR_TILE = 262144          # (point, face) pairs handled per vectorized tile
_WINDING_TILE = 4_000_000    # same, for solid-angle accumulation


def face_corners(vertices: np.ndarray, faces: np.ndarray):
    tri = vertices[faces]
    return tri[:, 0], tri[:, 1], tri[:, 2]


def face_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    v0, v1, v2 = face_corners(vertices, faces)
    return 0.5 * np.linalg.norm(np.cross(v1 - v0, v2 - v0), axis=1)


def face_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    v0, v1, v2 = face_corners(vertices, faces)
    n = np.cross(v1 - v0, v2 - v0)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    return n / np.maximum(norm, 1e-300)


def vertex_normals(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals, unit length."""
    v0, v1, v2 = face_corners(vertices, faces)
    fn = np.cross(v1 - v0, v2 - v0)  # length 2*area weights the average
    vn = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(vn, faces[:, k], fn)
    norm = np.linalg.norm(vn, axis=1, keepdims=True)
    return vn / np.maximum(norm, 1e-300)


def euler_characteristic(vertices: np.ndarray, faces: np.ndarray) -> int:
    edges = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
    n_edges = len(np.unique(edges, axis=0))
    return len(vertices) - n_edges + len(faces)


def closed_manifold_errors(faces: np.ndarray) -> int:
    """Count undirected edges not shared by exactly two opposite-winding faces."""
    directed = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    keys = directed[:, 0].astype(np.int64) * (directed.max() + 1) + directed[:, 1]
    rev = directed[:, 1].astype(np.int64) * (directed.max() + 1) + directed[:, 0]
    keys_sorted = np.sort(keys)
    # every directed edge must appear exactly once, and its reverse exactly once
    dup = np.count_nonzero(keys_sorted[1:] == keys_sorted[:-1])
    missing = np.count_nonzero(~np.isin(keys, rev))
    return dup + missing


# -- exact point-triangle distance ----------------------------------------------------


def _closest_point_pairs(p: np.ndarray, b: np.ndarray, e0: np.ndarray, e1: np.ndarray):
    """Closest point on triangle (b, b+e0, b+e1) for each row pair.

    Region-walk of the quadratic |b + s*e0 + t*e1 - p|^2 over the (s, t)
    simplex. Returns (dist, s, t, closest). Degenerate triangles must be
    filtered by the caller.
    """
    d = b - p
    a_ = np.einsum("ij,ij->i", e0, e0)
    b_ = np.einsum("ij,ij->i", e0, e1)
    c_ = np.einsum("ij,ij->i", e1, e1)
    d_ = np.einsum("ij,ij->i", e0, d)
    e_ = np.einsum("ij,ij->i", e1, d)

    det = np.maximum(a_ * c_ - b_ * b_, 1e-300)
    s = b_ * e_ - c_ * d_
    t = b_ * d_ - a_ * e_

    a_safe = np.maximum(a_, 1e-300)
    c_safe = np.maximum(c_, 1e-300)
    denom = np.maximum(a_ - 2.0 * b_ + c_, 1e-300)

    s_div = np.clip(s / det, 0.0, 1.0)
    t_div = np.clip(t / det, 0.0, 1.0)
    s_edge_a = np.clip(-d_ / a_safe, 0.0, 1.0)    # on edge t=0
    t_edge_c = np.clip(-e_ / c_safe, 0.0, 1.0)    # on edge s=0

    inside = s + t <= det

    # region 4 (s<0, t<0): nearest of the two axis edges
    r4_s = np.where(d_ < 0, s_edge_a, 0.0)
    r4_t = np.where(d_ < 0, 0.0, t_edge_c)
    # region 2 (s<0, beyond diagonal)
    tmp0, tmp1 = b_ + d_, c_ + e_
    r2_on_diag = tmp1 > tmp0
    r2_s = np.where(r2_on_diag, np.clip((tmp1 - tmp0) / denom, 0.0, 1.0), 0.0)
    r2_t = np.where(r2_on_diag, 1.0 - r2_s, t_edge_c)
    # region 6 (t<0, beyond diagonal)
    tmp0b, tmp1b = b_ + e_, a_ + d_
    r6_on_diag = tmp1b > tmp0b
    r6_t = np.where(r6_on_diag, np.clip((tmp1b - tmp0b) / denom, 0.0, 1.0), 0.0)
    r6_s = np.where(r6_on_diag, 1.0 - r6_t, s_edge_a)
    # region 1 (diagonal edge)
    r1_s = np.clip((c_ + e_ - b_ - d_) / denom, 0.0, 1.0)
    r1_t = 1.0 - r1_s

    s_in = np.where(s < 0, np.where(t < 0, r4_s, 0.0), np.where(t < 0, s_edge_a, s_div))
    t_in = np.where(s < 0, np.where(t < 0, r4_t, t_edge_c), np.where(t < 0, 0.0, t_div))
    s_out = np.where(s < 0, r2_s, np.where(t < 0, r6_s, r1_s))
    t_out = np.where(s < 0, r2_t, np.where(t < 0, r6_t, r1_t))

    s = np.where(inside, s_in, s_out)
    t = np.where(inside, t_in, t_out)
    closest = b + s[:, None] * e0 + t[:, None] * e1
    dist = np.linalg.norm(closest - p, axis=1)
    return dist, s, t, closest


class MeshQuery:
    """Accelerated exact nearest-face queries against a fixed triangle mesh.

    A KDTree over face centroids proposes candidates; a radius sweep bounded
    by the candidate distance plus the largest face circumradius guarantees
    the exact minimum is among the faces tested.
    """

    def __init__(self, vertices: np.ndarray, faces: np.ndarray):
        if len(faces) == 0:
            raise ConfigError("mesh has no faces")
        self.vertices = np.asarray(vertices, dtype=np.float64)
        self.faces = np.asarray(faces, dtype=np.int64)
        v0, v1, v2 = face_corners(self.vertices, self.faces)
        self._b = v0
        self._e0 = v1 - v0
        self._e1 = v2 - v0
        self._centroids = (v0 + v1 + v2) / 3.0
        self._radius = np.sqrt(np.maximum.reduce([
            np.einsum("ij,ij->i", v0 - self._centroids, v0 - self._centroids),
            np.einsum("ij,ij->i", v1 - self._centroids, v1 - self._centroids),
            np.einsum("ij,ij->i", v2 - self._centroids, v2 - self._centroids),
        ]))
        self._rmax = float(self._radius.max())
        self._tree = cKDTree(self._centroids)

    def nearest(self, points: np.ndarray):
        """Exact nearest face per point: (face_idx, bary (N,3), dist, closest)."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n = len(points)
        k = min(8, len(self.faces))
        _, probe = self._tree.query(points, k=k)
        probe = probe.reshape(n, k)
        d_ub = np.full(n, np.inf)
        for j in range(k):
            idx = probe[:, j]
            dist, _, _, _ = _closest_point_pairs(
                points, self._b[idx], self._e0[idx], self._e1[idx])
            d_ub = np.minimum(d_ub, dist)

        radius = d_ub + self._rmax + 1e-12
        balls = self._tree.query_ball_point(points, radius)
        counts = np.fromiter((len(b) for b in balls), dtype=np.int64, count=n)
        flat_faces = np.concatenate([np.asarray(b, dtype=np.int64) for b in balls]) \
            if counts.sum() else np.zeros(0, dtype=np.int64)
        flat_pts = np.repeat(np.arange(n), counts)

        best_d = np.full(n, np.inf)
        best_f = np.zeros(n, dtype=np.int64)
        best_s = np.zeros(n)
        best_t = np.zeros(n)
        best_c = np.zeros((n, 3))
        for lo in range(0, len(flat_pts), _PAIR_TILE):
            sl = slice(lo, lo + _PAIR_TILE)
            pi, fi = flat_pts[sl], flat_faces[sl]
            dist, s, t, closest = _closest_point_pairs(
                points[pi], self._b[fi], self._e0[fi], self._e1[fi])
            # ties resolved toward the lowest face index, matching brute force
            order = np.lexsort((fi, dist, pi))
            pi_o, fi_o = pi[order], fi[order]
            first = np.ones(len(pi_o), dtype=bool)
            first[1:] = pi_o[1:] != pi_o[:-1]
            cand_p = pi_o[first]
            better = dist[order][first] < best_d[cand_p] - 1e-15
            upd = cand_p[better]
            src = order[first][better]
            best_d[upd] = dist[src]
            best_f[upd] = fi[src]
            best_s[upd] = s[src]
            best_t[upd] = t[src]
            best_c[upd] = closest[src]
        bary = np.stack([1.0 - best_s - best_t, best_s, best_t], axis=1)
        return best_f, bary, best_d, best_c

    def distances(self, points: np.ndarray) -> np.ndarray:
        return self.nearest(points)[2]


def brute_force_nearest(points: np.ndarray, vertices: np.ndarray, faces: np.ndarray):
    """Exhaustive nearest-face oracle: all (point, face) pairs, lowest index wins ties."""
    points = np.atleast_2d(points)
    v0, v1, v2 = face_corners(vertices, faces)
    b, e0, e1 = v0, v1 - v0, v2 - v0
    n, f = len(points), len(faces)
    best_d = np.full(n, np.inf)
    best_f = np.zeros(n, dtype=np.int64)
    best_bary = np.zeros((n, 3))
    rows = max(1, _PAIR_TILE // max(f, 1))
    for lo in range(0, n, rows):
        pts = points[lo:lo + rows]
        m = len(pts)
        pp = np.repeat(pts, f, axis=0)
        fidx = np.tile(np.arange(f), m)
        dist, s, t, _ = _closest_point_pairs(pp, b[fidx], e0[fidx], e1[fidx])
        dist = dist.reshape(m, f)
        amin = dist.argmin(axis=1)
        best_d[lo:lo + rows] = dist[np.arange(m), amin]
        best_f[lo:lo + rows] = amin
        srows = s.reshape(m, f)[np.arange(m), amin]
        trows = t.reshape(m, f)[np.arange(m), amin]
        best_bary[lo:lo + rows] = np.stack([1.0 - srows - trows, srows, trows], axis=1)
    return best_f, best_bary, best_d


# -- generalized winding number --------------------------------------------------------


def winding_numbers(points: np.ndarray, vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Sum of signed solid angles over all faces, divided by 4*pi.

    Close to 1 inside a closed, consistently oriented mesh and 0 outside;
    overlapping closed components add up, so `w > 0.5` classifies the union.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    v0, v1, v2 = face_corners(vertices, faces)
    n = len(points)
    f = len(faces)
    rows = max(1, _WINDING_TILE // max(f, 1))
    w = np.zeros(n)
    for lo in range(0, n, rows):
        p = points[lo:lo + rows]
        a = v0[None, :, :] - p[:, None, :]
        b = v1[None, :, :] - p[:, None, :]
        c = v2[None, :, :] - p[:, None, :]
        la = np.sqrt(np.einsum("nfk,nfk->nf", a, a))
        lb = np.sqrt(np.einsum("nfk,nfk->nf", b, b))
        lc = np.sqrt(np.einsum("nfk,nfk->nf", c, c))
        numer = np.einsum("nfk,nfk->nf", a, np.cross(b, c))
        denom = (la * lb * lc + np.einsum("nfk,nfk->nf", a, b) * lc
                 + np.einsum("nfk,nfk->nf", b, c) * la
                 + np.einsum("nfk,nfk->nf", c, a) * lb)
        w[lo:lo + rows] = 2.0 * np.arctan2(numer, denom).sum(axis=1)
    return w / (4.0 * np.pi)


# -- surface sampling -------------------------------------------------------------------


def sample_surface(vertices: np.ndarray, faces: np.ndarray, n: int,
                   rng: np.random.Generator):
    """Area-uniform surface samples: (points, face_idx, face unit normals).

    Faces are drawn by inverting the cumulative area distribution; positions
    use the square-root barycentric warp, uniform within each triangle.
    """
    areas = face_areas(vertices, faces)
    cdf = np.cumsum(areas)
    if cdf[-1] <= 0:
        raise ConfigError("mesh has zero total area")
    cdf = cdf / cdf[-1]
    fidx = np.searchsorted(cdf, rng.random(n), side="right").clip(0, len(faces) - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    u = 1.0 - r1
    v = r1 * (1.0 - r2)
    w = r1 * r2
    v0, v1, v2 = face_corners(vertices, faces)
    pts = (u[:, None] * v0[fidx] + v[:, None] * v1[fidx] + w[:, None] * v2[fidx])
    return pts, fidx, face_normals(vertices, faces)[fidx]


# -- grid sign by safe-edge flood fill ----------------------------------------------------


def grid_inside_mask(res: int, unsigned: np.ndarray, seed_sign_fn) -> np.ndarray:
    """Classify each node of a corner-aligned res^3 grid over [-0.5, 0.5]^3.

    `unsigned` is the (res, res, res) exact distance-to-surface field. A grid
    edge whose endpoints both lie further than half the edge length from the
    surface cannot cross it, so the sign is constant along that edge; signs
    propagate by flood fill over such edges, and `seed_sign_fn(points) ->
    bool array` (a winding-number test) is consulted once per connected
    component plus once for every node left unresolved near the surface.
    Returns a boolean inside-mask.
    """
    h = 1.0 / (res - 1)
    safe = unsigned > (0.5 * h + 1e-12)
    inside = np.zeros((res, res, res), dtype=bool)
    resolved = ~safe  # near-surface nodes: resolved individually at the end
    axes = np.linspace(-0.5, 0.5, res)

    def node_point(flat_idx):
        i, j, k = np.unravel_index(flat_idx, (res, res, res))
        return np.stack([axes[i], axes[j], axes[k]], axis=-1)

    while True:
        unresolved = ~resolved
        if not unresolved.any():
            break
        seed_flat = int(np.flatnonzero(unresolved.reshape(-1))[0])
        seed_inside = bool(seed_sign_fn(node_point(seed_flat).reshape(1, 3))[0])
        component = np.zeros((res, res, res), dtype=bool)
        component.reshape(-1)[seed_flat] = True
        frontier = component
        while frontier.any():
            grown = component.copy()
            for axis in range(3):
                for shift in (1, -1):
                    moved = np.roll(frontier & safe, shift, axis=axis)
                    # roll wraps around; mask the wrapped slab
                    sl = [slice(None)] * 3
                    sl[axis] = 0 if shift == 1 else res - 1
                    moved[tuple(sl)] = False
                    grown |= moved & safe
            frontier = grown & ~component
            component = grown
        inside |= component & np.full_like(component, seed_inside)
        resolved |= component

    shell = ~safe
    if shell.any():
        flat = np.flatnonzero(shell.reshape(-1))
        inside.reshape(-1)[flat] = seed_sign_fn(node_point(flat))
    return inside
