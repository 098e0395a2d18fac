"""Numba-compiled inner loops for mesh distance and winding queries.

Optional: when numba is unavailable HAVE_NUMBA is False and callers fall back
to the vectorized numpy implementations in distance.py. The scalar code
follows the same operation order as the numpy kernels, so both paths agree to
float rounding.
"""

from __future__ import annotations

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False


if HAVE_NUMBA:

    @numba.njit(cache=True, inline="always")
    def _sq_dist_point_triangle(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
        """Squared point-triangle distance; regions checked A,B,C,AB,AC,BC."""
        abx, aby, abz = bx - ax, by - ay, bz - az
        acx, acy, acz = cx - ax, cy - ay, cz - az
        apx, apy, apz = px - ax, py - ay, pz - az
        d1 = abx * apx + aby * apy + abz * apz
        d2 = acx * apx + acy * apy + acz * apz
        bpx, bpy, bpz = px - bx, py - by, pz - bz
        d3 = abx * bpx + aby * bpy + abz * bpz
        d4 = acx * bpx + acy * bpy + acz * bpz
        cpx, cpy, cpz = px - cx, py - cy, pz - cz
        d5 = abx * cpx + aby * cpy + abz * cpz
        d6 = acx * cpx + acy * cpy + acz * cpz

        if d1 <= 0.0 and d2 <= 0.0:
            qx, qy, qz = ax, ay, az
        elif d3 >= 0.0 and d4 <= d3:
            qx, qy, qz = bx, by, bz
        elif d6 >= 0.0 and d5 <= d6:
            qx, qy, qz = cx, cy, cz
        else:
            vc = d1 * d4 - d3 * d2
            vb = d5 * d2 - d1 * d6
            va = d3 * d6 - d5 * d4
            if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0 and d1 - d3 > 0.0:
                v = d1 / (d1 - d3)
                qx, qy, qz = ax + v * abx, ay + v * aby, az + v * abz
            elif vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0 and d2 - d6 > 0.0:
                w = d2 / (d2 - d6)
                qx, qy, qz = ax + w * acx, ay + w * acy, az + w * acz
            elif (
                va <= 0.0
                and d4 - d3 >= 0.0
                and d5 - d6 >= 0.0
                and (d4 - d3) + (d5 - d6) > 0.0
            ):
                w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
                qx = bx + w * (cx - bx)
                qy = by + w * (cy - by)
                qz = bz + w * (cz - bz)
            else:
                denom = va + vb + vc
                if denom != 0.0:
                    v = vb / denom
                    w = vc / denom
                    qx = ax + abx * v + acx * w
                    qy = ay + aby * v + acy * w
                    qz = az + abz * v + acz * w
                else:
                    # Degenerate triangle: nearest point of the three edges.
                    best = np.inf
                    qx = ax
                    qy = ay
                    qz = az
                    for e in range(3):
                        if e == 0:
                            ex, ey, ez, fx, fy, fz = ax, ay, az, bx, by, bz
                        elif e == 1:
                            ex, ey, ez, fx, fy, fz = bx, by, bz, cx, cy, cz
                        else:
                            ex, ey, ez, fx, fy, fz = cx, cy, cz, ax, ay, az
                        ux, uy, uz = fx - ex, fy - ey, fz - ez
                        uu = ux * ux + uy * uy + uz * uz
                        t = 0.0
                        if uu > 0.0:
                            t = ((px - ex) * ux + (py - ey) * uy + (pz - ez) * uz) / uu
                            t = min(max(t, 0.0), 1.0)
                        sx, sy, sz = ex + t * ux, ey + t * uy, ez + t * uz
                        dd = (px - sx) ** 2 + (py - sy) ** 2 + (pz - sz) ** 2
                        if dd < best:
                            best = dd
                            qx, qy, qz = sx, sy, sz
        return (px - qx) ** 2 + (py - qy) ** 2 + (pz - qz) ** 2

    @numba.njit(cache=True)
    def min_distance_candidates(points, a, b, c, face_idx, out):
        n, k = face_idx.shape
        for i in range(n):
            px, py, pz = points[i, 0], points[i, 1], points[i, 2]
            best = np.inf
            for j in range(k):
                f = face_idx[i, j]
                d = _sq_dist_point_triangle(
                    px, py, pz,
                    a[f, 0], a[f, 1], a[f, 2],
                    b[f, 0], b[f, 1], b[f, 2],
                    c[f, 0], c[f, 1], c[f, 2],
                )
                if d < best:
                    best = d
            out[i] = np.sqrt(best)

    @numba.njit(cache=True)
    def min_distance_all(points, a, b, c, out):
        n = len(points)
        nf = len(a)
        for i in range(n):
            px, py, pz = points[i, 0], points[i, 1], points[i, 2]
            best = np.inf
            for f in range(nf):
                d = _sq_dist_point_triangle(
                    px, py, pz,
                    a[f, 0], a[f, 1], a[f, 2],
                    b[f, 0], b[f, 1], b[f, 2],
                    c[f, 0], c[f, 1], c[f, 2],
                )
                if d < best:
                    best = d
            out[i] = np.sqrt(best)

    @numba.njit(cache=True)
    def solid_angle_sums(points, a, b, c, out):
        n = len(points)
        nf = len(a)
        for i in range(n):
            px, py, pz = points[i, 0], points[i, 1], points[i, 2]
            acc = 0.0
            for f in range(nf):
                avx, avy, avz = a[f, 0] - px, a[f, 1] - py, a[f, 2] - pz
                bvx, bvy, bvz = b[f, 0] - px, b[f, 1] - py, b[f, 2] - pz
                cvx, cvy, cvz = c[f, 0] - px, c[f, 1] - py, c[f, 2] - pz
                la = np.sqrt(avx * avx + avy * avy + avz * avz)
                lb = np.sqrt(bvx * bvx + bvy * bvy + bvz * bvz)
                lc = np.sqrt(cvx * cvx + cvy * cvy + cvz * cvz)
                crx = bvy * cvz - bvz * cvy
                cry = bvz * cvx - bvx * cvz
                crz = bvx * cvy - bvy * cvx
                num = avx * crx + avy * cry + avz * crz
                den = (
                    la * lb * lc
                    + (avx * bvx + avy * bvy + avz * bvz) * lc
                    + (bvx * cvx + bvy * cvy + bvz * cvz) * la
                    + (cvx * avx + cvy * avy + cvz * avz) * lb
                )
                acc += np.arctan2(num, den)
            out[i] = 2.0 * acc
