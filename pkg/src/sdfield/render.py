"""Depth rendering by sphere tracing a trilinearly interpolated SDF grid."""

from __future__ import annotations

import numpy as np

from .camera import CameraPose, Intrinsics
from .errors import InvalidPose
from .grid import SdfGrid
from .image import Image

_MAX_STEPS = 192
_BISECTIONS = 40
# Conservative step fraction: trilinear interpolation is not a strict lower
# bound on the true distance between lattice points.
_STEP_SCALE = 0.9


def _ray_box_range(origins, dirs, lo, hi):
    """Entry/exit parameters of rays against an axis-aligned box (slab test)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    t0 = (lo - origins) * inv
    t1 = (hi - origins) * inv
    tmin = np.nanmax(np.minimum(t0, t1), axis=1)
    tmax = np.nanmin(np.maximum(t0, t1), axis=1)
    return tmin, tmax


def render_depth_image(
    grid: SdfGrid, pose: CameraPose, intr: Intrinsics, width: int, height: int
) -> Image:
    """Per-pixel positive camera-space depth of the field's zero level set.

    Rays march through the grid's bounding box stepping by the interpolated
    field value; a sign change is refined by bisection. Pixels whose rays
    miss the box or never cross the surface are 0.
    """
    center = pose.camera_center()
    if ((center >= grid.bbox_min) & (center <= grid.bbox_max)).all():
        raise InvalidPose("camera center lies inside the grid bounding box")

    ys, xs = np.mgrid[0:height, 0:width]
    dirs_cam = np.stack(
        [
            (xs.ravel() - intr.cx) / intr.focal,
            (ys.ravel() - intr.cy) / intr.focal,
            np.ones(width * height),
        ],
        axis=1,
    )
    dirs_cam /= np.linalg.norm(dirs_cam, axis=1, keepdims=True)
    dirs_world = dirs_cam @ pose.R  # R^T applied to each row
    origins = np.broadcast_to(center, dirs_world.shape)

    t_enter, t_exit = _ray_box_range(origins, dirs_world, grid.bbox_min, grid.bbox_max)
    eps = 1e-9 * max(1.0, float(np.abs(grid.extent).max()))
    active = (t_exit > np.maximum(t_enter, 0.0) + eps) & np.isfinite(t_enter)

    t = np.where(active, np.maximum(t_enter, 0.0) + eps, 0.0)
    t_lo = t.copy()
    hit = np.zeros(len(t), dtype=bool)
    min_step = 1e-4 * grid.cell_diagonal

    for _ in range(_MAX_STEPS):
        if not active.any():
            break
        p = center + t[active, None] * dirs_world[active]
        s = grid.trilinear(p)
        crossed = s <= 0.0
        idx = np.flatnonzero(active)
        hit[idx[crossed]] = True
        active[idx[crossed]] = False
        adv = idx[~crossed]
        t_lo[adv] = t[adv]
        t[adv] = t[adv] + np.maximum(s[~crossed] * _STEP_SCALE, min_step)
        out = adv[t[adv] > t_exit[adv]]
        active[out] = False

    # Refine hits: bisect between the last positive sample and the crossing.
    if hit.any():
        lo = t_lo[hit]
        hi = t[hit]
        d = dirs_world[hit]
        for _ in range(_BISECTIONS):
            mid = 0.5 * (lo + hi)
            s = grid.trilinear(center + mid[:, None] * d)
            below = s <= 0.0
            hi = np.where(below, mid, hi)
            lo = np.where(below, lo, mid)
        t[hit] = 0.5 * (lo + hi)

    depth = np.zeros(width * height)
    if hit.any():
        p_hit = center + t[hit, None] * dirs_world[hit]
        depth[hit] = (p_hit @ pose.R.T + pose.t)[:, 2]
    return Image(depth.reshape(height, width))
