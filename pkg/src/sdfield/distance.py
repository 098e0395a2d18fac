"""Exact distance and inside/outside queries against triangle meshes.

Distance magnitudes come from the closest-point-on-triangle kernel (Ericson's
region classification, vectorized over point/triangle pairs). Sign comes from
the generalized winding number (solid-angle sum, van Oosterom-Strackee), with
inside meaning winding > 0.5; queries whose winding lands within 0.1 of the
0.5 threshold fall back to a majority vote of axis-ray crossing parities and
are flagged uncertain.

Distance queries prune faces with a centroid KD-tree: the k nearest centroids
are checked exactly, and the result is provably exact whenever it does not
exceed the k-th centroid distance minus the largest centroid-to-corner spread;
points failing that certificate retry with a larger k, ending at brute force.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .errors import InvalidMesh
from .mesh import TriangleMesh

# Faces thinner than this are skipped in the winding-number accumulation.
DEGENERATE_AREA = 1e-12
# |winding - 0.5| below this margin triggers the ray-parity fallback.
WINDING_MARGIN = 0.1
# Point x face pairs per kernel call; keeps temporaries cache-resident.
_CHUNK_PAIRS = 150_000

_RAY_DIRECTIONS = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])


def _closest_point_segment(p, a, b):
    ab = b - a
    denom = (ab * ab).sum(axis=-1)
    t = ((p - a) * ab).sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(denom > 0.0, t / denom, 0.0)
    t = np.clip(t, 0.0, 1.0)
    return a + t[..., None] * ab


def closest_point_on_triangle(p, a, b, c):
    """Closest point of the closed triangle abc to p; all args broadcastable (..., 3).

    Degenerate triangles (collinear or repeated corners) resolve to the nearest
    point of the three boundary segments.
    """
    p, a, b, c = np.broadcast_arrays(
        *(np.asarray(x, dtype=np.float64) for x in (p, a, b, c))
    )
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = p - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = p - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = d1 / (d1 - d3)
        w_ac = d2 / (d2 - d6)
        w_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom

    result = a + ab * v_in[..., None] + ac * w_in[..., None]

    taken = np.zeros(p.shape[:-1], dtype=bool)

    def claim(cond, value):
        nonlocal result, taken
        m = cond & ~taken
        result = np.where(m[..., None], value, result)
        taken |= m

    claim((d1 <= 0) & (d2 <= 0), a)  # vertex a
    claim((d3 >= 0) & (d4 <= d3), b)  # vertex b
    claim((d6 >= 0) & (d5 <= d6), c)  # vertex c
    claim((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + ab * np.nan_to_num(v_ab)[..., None])
    claim((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + ac * np.nan_to_num(w_ac)[..., None])
    claim(
        (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),
        b + (c - b) * np.nan_to_num(w_bc)[..., None],
    )

    bad = ~np.isfinite(result).all(axis=-1)
    if bad.any():
        # Degenerate triangle: nearest of the three boundary segments.
        cand = np.stack(
            [
                _closest_point_segment(p[bad], a[bad], b[bad]),
                _closest_point_segment(p[bad], b[bad], c[bad]),
                _closest_point_segment(p[bad], c[bad], a[bad]),
            ]
        )
        d = ((cand - p[bad]) ** 2).sum(-1)
        result[bad] = cand[d.argmin(axis=0), np.arange(int(bad.sum()))]
    return result


def point_triangle_distance(p, a, b, c) -> float:
    """Euclidean distance from point p to the closed triangle abc."""
    q = closest_point_on_triangle(p, a, b, c)
    return float(np.linalg.norm(np.asarray(p, dtype=np.float64) - q))


def _solid_angle_sums(points, a, b, c):
    """Sum over faces of the signed solid angle seen from each point; (N,)."""
    av = a[None, :, :] - points[:, None, :]
    bv = b[None, :, :] - points[:, None, :]
    cv = c[None, :, :] - points[:, None, :]
    la = np.sqrt((av * av).sum(-1))
    lb = np.sqrt((bv * bv).sum(-1))
    lc = np.sqrt((cv * cv).sum(-1))
    num = (av * np.cross(bv, cv)).sum(-1)
    den = la * lb * lc
    den += (av * bv).sum(-1) * lc
    den += (bv * cv).sum(-1) * la
    den += (cv * av).sum(-1) * lb
    return np.arctan2(num, den).sum(axis=1) * 2.0


def _ray_hits(origins, direction, a, b, c, eps=1e-12):
    """Count Moller-Trumbore crossings of each ray origin + t*direction, t > 0."""
    d = direction[None, None, :]
    e1 = (b - a)[None, :, :]
    e2 = (c - a)[None, :, :]
    pvec = np.cross(d, e2)
    det = (e1 * pvec).sum(-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_det = 1.0 / det
    tvec = origins[:, None, :] - a[None, :, :]
    u = (tvec * pvec).sum(-1) * inv_det
    qvec = np.cross(tvec, e1)
    v = (qvec * d).sum(-1) * inv_det
    t = (e2 * qvec).sum(-1) * inv_det
    hit = (
        (np.abs(det) > eps)
        & (u >= 0.0)
        & (v >= 0.0)
        & (u + v <= 1.0)
        & (t > 1e-9)
    )
    return hit.sum(axis=1)


def _point_chunks(n_points, n_faces):
    step = max(1, _CHUNK_PAIRS // max(n_faces, 1))
    return [(s, min(s + step, n_points)) for s in range(0, n_points, step)]


class MeshSdf:
    """Signed-distance queries on a fixed mesh, with centroid-KNN pruning.

    Immutable once constructed; all query methods are pure and thread-safe.
    """

    def __init__(self, mesh: TriangleMesh):
        if mesh.n_faces < 1:
            raise InvalidMesh("signed distance needs at least one face")
        self.mesh = mesh
        self._a, self._b, self._c = mesh.triangle_corners()
        self._areas = mesh.face_areas()
        self._winding_faces = self._areas >= DEGENERATE_AREA
        self._centroids = (self._a + self._b + self._c) / 3.0
        # A face whose centroid is at distance D can still contain a surface
        # point up to max_spread closer, bounding how far pruning may cut.
        spread = np.maximum(
            np.linalg.norm(self._a - self._centroids, axis=1),
            np.maximum(
                np.linalg.norm(self._b - self._centroids, axis=1),
                np.linalg.norm(self._c - self._centroids, axis=1),
            ),
        )
        self._max_spread = float(spread.max())
        self._tree = cKDTree(self._centroids)

    # ---------------- unsigned distance ----------------

    def _distance_to_faces(self, points, face_idx):
        """Min distance from points[i] to the faces in face_idx[i]; (N,)."""
        q = closest_point_on_triangle(
            points[:, None, :],
            self._a[face_idx],
            self._b[face_idx],
            self._c[face_idx],
        )
        delta = points[:, None, :] - q
        return np.sqrt((delta * delta).sum(-1)).min(axis=1)

    def _brute_distance(self, points):
        n_faces = self.mesh.n_faces
        out = np.empty(len(points))
        all_faces = np.arange(n_faces)
        for s, e in _point_chunks(len(points), n_faces):
            idx = np.broadcast_to(all_faces, (e - s, n_faces))
            out[s:e] = self._distance_to_faces(points[s:e], idx)
        return out

    def unsigned_distance(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n_faces = self.mesh.n_faces
        out = np.full(len(points), np.inf)
        pending = np.arange(len(points))
        k = 8
        while len(pending):
            if k >= n_faces:
                out[pending] = self._brute_distance(points[pending])
                break
            sub = points[pending]
            kth_dist = np.empty(len(sub))
            d = np.empty(len(sub))
            for s, e in _point_chunks(len(sub), k):
                cd, fi = self._tree.query(sub[s:e], k=k)
                kth_dist[s:e] = cd[:, -1]
                d[s:e] = self._distance_to_faces(sub[s:e], fi)
            certain = d <= kth_dist - self._max_spread
            out[pending[certain]] = d[certain]
            pending = pending[~certain]
            k *= 4
        return out

    # ---------------- sign ----------------

    def winding_number(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        a = self._a[self._winding_faces]
        b = self._b[self._winding_faces]
        c = self._c[self._winding_faces]
        w = np.empty(len(points))
        if len(a) == 0:
            w[:] = 0.0
            return w
        for s, e in _point_chunks(len(points), len(a)):
            w[s:e] = _solid_angle_sums(points[s:e], a, b, c)
        return w / (4.0 * np.pi)

    def ray_parity_inside(self, points) -> np.ndarray:
        """Majority vote of crossing parities along the three +axis rays."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        votes = np.zeros(len(points), dtype=np.int64)
        for d in _RAY_DIRECTIONS:
            for s, e in _point_chunks(len(points), self.mesh.n_faces):
                votes[s:e] += _ray_hits(points[s:e], d, self._a, self._b, self._c) % 2
        return votes >= 2

    def contains(self, points, return_uncertain=False):
        """Inside mask from winding numbers with the ray-parity fallback."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        w = self.winding_number(points)
        inside = w > 0.5
        uncertain = np.abs(w - 0.5) < WINDING_MARGIN
        if uncertain.any():
            inside[uncertain] = self.ray_parity_inside(points[uncertain])
        if return_uncertain:
            return inside, uncertain
        return inside

    # ---------------- signed distance ----------------

    def signed_distance(self, points, return_uncertain=False):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        d = self.unsigned_distance(points)
        inside, uncertain = self.contains(points, return_uncertain=True)
        s = np.where(inside, -d, d)
        if return_uncertain:
            return s, uncertain
        return s


def signed_distance(mesh: TriangleMesh, p) -> float:
    """One-off signed distance from p to the mesh surface (negative inside).

    Builds the acceleration structure on every call; use MeshSdf for batches.
    """
    return float(MeshSdf(mesh).signed_distance(np.asarray(p, dtype=np.float64))[0])
