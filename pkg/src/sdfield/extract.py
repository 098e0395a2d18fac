"""Dense field evaluation of a trained model and marching-cubes extraction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._mc_tables import EDGE_TABLE, TRI_TABLE
from .camera import CameraPose, Intrinsics
from .encoder import FeatureMapStack, encode_image, local_features
from .errors import InvalidResolution
from .grid import UNIT_BBOX, SdfGrid
from .image import Image
from .mesh import TriangleMesh
from .parallel import map_chunks, resolve_threads
from .regressor import SdfModel, forward_batch, project_with_clamp

WELD_EPS = 1e-7

_EDGE_TABLE = np.array(EDGE_TABLE, dtype=np.int64)
_TRI_TABLE = np.array(TRI_TABLE, dtype=np.int64)


@dataclass(frozen=True)
class IsoSurfaceConfig:
    resolution: int = 64
    iso_value: float = 0.0
    bbox: tuple = UNIT_BBOX

    def __post_init__(self):
        if self.resolution < 2:
            raise InvalidResolution(f"resolution must be >= 2, got {self.resolution}")


def evaluate_field(
    model: SdfModel,
    stack: FeatureMapStack,
    pose: CameraPose,
    intr: Intrinsics,
    cfg: IsoSurfaceConfig,
    threads=None,
    return_failures: bool = False,
):
    """Model predictions on the dense lattice, as an SdfGrid.

    Lattice points that project to non-positive camera depth are clamped to a
    tiny depth and counted as failures instead of aborting the evaluation.
    For binary models the stored field is the inside logit, whose zero level
    set is the 0.5-probability surface.
    """
    res = (cfg.resolution,) * 3
    lo, hi = (np.asarray(b, dtype=np.float64) for b in cfg.bbox)
    grid = SdfGrid(res, lo, hi, np.zeros(cfg.resolution**3, dtype=np.float32))
    points = grid.lattice_points()
    gfeat = stack.global_vec

    values = np.empty(grid.n_points, dtype=np.float32)
    failures = np.zeros(grid.n_points, dtype=bool)

    def kernel(start, stop):
        pts = points[start:stop]
        qs, failed = project_with_clamp(pose, intr, pts)
        failures[start:stop] = failed
        lfeat = local_features(stack, qs)
        return forward_batch(model, gfeat, lfeat, pts)[0].astype(np.float32)

    map_chunks(kernel, grid.n_points, chunk=8192, out=values, threads=resolve_threads(threads))
    out = SdfGrid(res, lo, hi, values)
    if return_failures:
        return out, failures
    return out


def marching_cubes(grid: SdfGrid, iso: float = 0.0) -> TriangleMesh:
    """Triangulate the iso level set of the grid.

    A lattice value exactly equal to iso counts as inside. Vertices are
    created once per crossed lattice edge at the linear-interpolation
    crossing, then welded within 1e-7; triangles are emitted in cell order
    (x-fastest) with outward orientation (normals toward larger values).
    """
    vg = grid.value_grid().astype(np.float64)
    rx, ry, rz = grid.resolution
    inside = vg <= iso

    sx, sy, sz = grid.spacing
    lo = grid.bbox_min

    def edge_vertices(axis):
        sl0 = [slice(None)] * 3
        sl1 = [slice(None)] * 3
        sl0[axis] = slice(None, -1)
        sl1[axis] = slice(1, None)
        v0 = vg[tuple(sl0)]
        v1 = vg[tuple(sl1)]
        cross = inside[tuple(sl0)] != inside[tuple(sl1)]
        ids = -np.ones(v0.shape, dtype=np.int64)
        ii, jj, kk = np.nonzero(cross)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (iso - v0[ii, jj, kk]) / (v1[ii, jj, kk] - v0[ii, jj, kk])
        t = np.nan_to_num(t, nan=0.5)
        base = np.stack([ii, jj, kk], axis=1).astype(np.float64)
        pos = lo + base * np.array([sx, sy, sz])
        step = np.zeros(3)
        step[axis] = (sx, sy, sz)[axis]
        pos = pos + t[:, None] * step
        return ids, (ii, jj, kk), pos

    ex_id, ex_idx, ex_pos = edge_vertices(0)
    ey_id, ey_idx, ey_pos = edge_vertices(1)
    ez_id, ez_idx, ez_pos = edge_vertices(2)
    counts = [len(ex_pos), len(ey_pos), len(ez_pos)]
    ex_id[ex_idx] = np.arange(counts[0])
    ey_id[ey_idx] = counts[0] + np.arange(counts[1])
    ez_id[ez_idx] = counts[0] + counts[1] + np.arange(counts[2])
    verts = (
        np.concatenate([ex_pos, ey_pos, ez_pos])
        if sum(counts)
        else np.zeros((0, 3))
    )

    # Cube configuration per cell: bit k set when corner k is inside.
    cell_inside = [
        inside[:-1, :-1, :-1], inside[1:, :-1, :-1],
        inside[1:, 1:, :-1], inside[:-1, 1:, :-1],
        inside[:-1, :-1, 1:], inside[1:, :-1, 1:],
        inside[1:, 1:, 1:], inside[:-1, 1:, 1:],
    ]
    config = np.zeros((rx - 1, ry - 1, rz - 1), dtype=np.int64)
    for bit, corner in enumerate(cell_inside):
        config |= corner.astype(np.int64) << bit

    ci, cj, ck = np.nonzero((config != 0) & (config != 255))
    if len(ci) == 0:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    order = np.argsort(ci + (rx - 1) * (cj + (ry - 1) * ck), kind="stable")
    ci, cj, ck = ci[order], cj[order], ck[order]

    cell_edges = np.stack(
        [
            ex_id[ci, cj, ck],
            ey_id[ci + 1, cj, ck],
            ex_id[ci, cj + 1, ck],
            ey_id[ci, cj, ck],
            ex_id[ci, cj, ck + 1],
            ey_id[ci + 1, cj, ck + 1],
            ex_id[ci, cj + 1, ck + 1],
            ey_id[ci, cj, ck + 1],
            ez_id[ci, cj, ck],
            ez_id[ci + 1, cj, ck],
            ez_id[ci + 1, cj + 1, ck],
            ez_id[ci, cj + 1, ck],
        ],
        axis=1,
    )

    tri_rows = _TRI_TABLE[config[ci, cj, ck]][:, :15].reshape(-1, 5, 3)
    valid = tri_rows[:, :, 0] >= 0
    cell_rows, tri_slots = np.nonzero(valid)
    edge_triples = tri_rows[cell_rows, tri_slots]  # (m, 3) edge indices
    # Reversed winding so normals point toward larger field values (outward).
    faces = cell_edges[cell_rows[:, None], edge_triples[:, ::-1]]

    # Weld coincident vertices (notably iso-on-lattice duplicates).
    keys = np.round(verts / WELD_EPS).astype(np.int64)
    uniq, remap = np.unique(keys, axis=0, return_inverse=True)
    welded = np.zeros((len(uniq), 3))
    welded[remap] = verts
    faces = remap[faces]
    ok = (
        (faces[:, 0] != faces[:, 1])
        & (faces[:, 1] != faces[:, 2])
        & (faces[:, 0] != faces[:, 2])
    )
    return TriangleMesh(welded, faces[ok])


def reconstruct(
    model: SdfModel,
    image: Image,
    pose: CameraPose,
    intr: Intrinsics,
    cfg: IsoSurfaceConfig,
    threads=None,
) -> TriangleMesh:
    """Encode the image, evaluate the dense field and extract the iso-surface."""
    stack = encode_image(image, model.encoder)
    grid = evaluate_field(model, stack, pose, intr, cfg, threads=threads)
    return marching_cubes(grid, cfg.iso_value)
