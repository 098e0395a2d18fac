"""Evaluation metrics: Chamfer distance, Earth Mover's distance, voxel IoU.

Conventions: Chamfer is the sum of the two directional means of *squared*
nearest-neighbor distances. EMD is the mean Euclidean distance under the
optimal perfect matching, solved exactly with the Hungarian solver up to a
size cap; beyond the cap an explicit approximate mode runs greedy matching
and reports a suboptimality bound. IoU voxelizes both meshes on a shared
grid by inside-testing voxel centers.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .distance import MeshSdf
from .errors import (
    CorrespondenceMismatch,
    DegenerateMesh,
    EmptyCloud,
    InvalidResolution,
    TooLarge,
    UnreliableOccupancy,
)
from .mesh import TriangleMesh

EMD_EXACT_CAP = 512


def sample_surface_points(mesh: TriangleMesh, n: int, seed: int = 0) -> np.ndarray:
    """n surface points: faces drawn with probability proportional to area,
    positions uniform in each triangle. Deterministic for a given seed."""
    if mesh.n_faces < 1:
        raise DegenerateMesh("mesh has no faces")
    if n < 1:
        raise DegenerateMesh(f"need n >= 1, got {n}")
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise DegenerateMesh("mesh has zero total area")
    rng = np.random.default_rng(seed)
    face_idx = rng.choice(mesh.n_faces, size=n, p=areas / total)
    a, b, c = (corner[face_idx] for corner in mesh.triangle_corners())
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    return a + u[:, None] * (b - a) + v[:, None] * (c - a)


def _check_cloud(x, name):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.size == 0:
        raise EmptyCloud(f"{name} cloud is empty")
    return x


def chamfer(a, b) -> float:
    """Sum of directional means of squared nearest-neighbor distances."""
    a = _check_cloud(a, "first")
    b = _check_cloud(b, "second")
    d_ab = cKDTree(b).query(a)[0]
    d_ba = cKDTree(a).query(b)[0]
    return float((d_ab**2).mean() + (d_ba**2).mean())


def emd_greedy(a, b):
    """Greedy perfect matching: (mean distance, suboptimality ratio bound).

    Pairs are matched smallest distance first. The reported bound divides the
    greedy value by a matching lower bound (the larger directional mean
    nearest-neighbor distance), so value/bound <= optimum <= value.
    """
    a = _check_cloud(a, "first")
    b = _check_cloud(b, "second")
    n = len(a)
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    order = np.argsort(d, axis=None, kind="stable")
    used_a = np.zeros(n, dtype=bool)
    used_b = np.zeros(n, dtype=bool)
    total = 0.0
    matched = 0
    for flat in order:
        i, j = divmod(int(flat), n)
        if used_a[i] or used_b[j]:
            continue
        used_a[i] = True
        used_b[j] = True
        total += d[i, j]
        matched += 1
        if matched == n:
            break
    value = total / n
    lower = max(d.min(axis=1).mean(), d.min(axis=0).mean())
    ratio = value / lower if lower > 0 else 1.0
    return value, ratio


def emd(a, b, cap: int = EMD_EXACT_CAP, approximate: bool = False) -> float:
    """Minimum mean pairwise distance over perfect matchings of equal clouds.

    Solved exactly (optimal assignment) up to `cap` points; larger inputs
    raise TooLarge unless approximate=True requests greedy matching.
    """
    a = _check_cloud(a, "first")
    b = _check_cloud(b, "second")
    if len(a) != len(b):
        raise CorrespondenceMismatch(f"cloud sizes differ: {len(a)} vs {len(b)}")
    if len(a) > cap:
        if not approximate:
            raise TooLarge(
                f"{len(a)} points exceeds the exact-solver cap {cap}; raise the "
                "cap or request the approximate mode explicitly"
            )
        return emd_greedy(a, b)[0]
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(d)
    return float(d[rows, cols].mean())


def voxel_iou(
    mesh_a: TriangleMesh,
    mesh_b: TriangleMesh,
    resolution: int = 32,
    uncertain_tolerance: float = 0.01,
) -> float:
    """Intersection over union of voxel-center occupancies on a shared grid.

    The grid covers the union of both bounding boxes; occupancy is the
    inside test of each voxel center. If more than `uncertain_tolerance` of
    the inside tests were sign-uncertain an UnreliableOccupancy warning is
    issued. Two empty occupancies give IoU 1.
    """
    if resolution < 2:
        raise InvalidResolution(f"resolution must be >= 2, got {resolution}")
    lo_a, hi_a = mesh_a.bounds()
    lo_b, hi_b = mesh_b.bounds()
    lo = np.minimum(lo_a, lo_b)
    hi = np.maximum(hi_a, hi_b)
    extent = np.where(hi - lo > 0, hi - lo, 1e-9)

    axes = [lo[k] + (np.arange(resolution) + 0.5) * extent[k] / resolution for k in range(3)]
    xs, ys, zs = np.meshgrid(*axes, indexing="ij")
    centers = np.stack([xs.ravel(), ys.ravel(), zs.ravel()], axis=1)

    occ = []
    uncertain_total = 0
    for m in (mesh_a, mesh_b):
        inside, uncertain = MeshSdf(m).contains(centers, return_uncertain=True)
        occ.append(inside)
        uncertain_total += int(uncertain.sum())
    if uncertain_total > uncertain_tolerance * 2 * len(centers):
        warnings.warn(
            f"{uncertain_total} of {2 * len(centers)} voxel inside-tests were "
            "sign-uncertain; IoU may be unreliable",
            UnreliableOccupancy,
        )
    union = (occ[0] | occ[1]).sum()
    if union == 0:
        return 1.0
    return float((occ[0] & occ[1]).sum() / union)


@dataclass
class MetricReport:
    """Evaluation summary; emd is None when it was skipped (see notes)."""

    cd: float
    emd: float | None
    iou: float
    n_points: int
    notes: str = ""

    def lines(self) -> list[str]:
        emd_text = repr(self.emd) if self.emd is not None else "nan"
        out = [
            f"cd={self.cd!r}",
            f"emd={emd_text}",
            f"iou={self.iou!r}",
            f"n_points={self.n_points}",
        ]
        if self.notes:
            out.append(f"notes={self.notes}")
        return out

    def table(self) -> str:
        """One row in the reporting scale: CD x0.001, EMD x100, IoU %."""
        cd_s = f"{self.cd * 1000:.2f}"
        emd_s = f"{self.emd * 100:.2f}" if self.emd is not None else "n/a"
        return (
            "metric      CD(x0.001)  EMD(x100)  IoU(%)\n"
            f"value       {cd_s:>10}  {emd_s:>9}  {self.iou * 100:>6.1f}"
        )


def evaluate_meshes(
    mesh_a: TriangleMesh,
    mesh_b: TriangleMesh,
    n_points: int = 2048,
    seed: int = 0,
    iou_resolution: int = 32,
    emd_cap: int = EMD_EXACT_CAP,
    emd_approximate: bool = False,
) -> MetricReport:
    """Sample both surfaces and compute the full metric suite."""
    pa = sample_surface_points(mesh_a, n_points, seed)
    pb = sample_surface_points(mesh_b, n_points, seed + 1)
    cd = chamfer(pa, pb)
    notes = ""
    try:
        if len(pa) > emd_cap and emd_approximate:
            emd_value, ratio = emd_greedy(pa, pb)
            notes = f"emd is greedy-approximate, suboptimality ratio <= {ratio:.3f}"
        else:
            emd_value = emd(pa, pb, cap=emd_cap)
    except TooLarge as exc:
        emd_value = None
        notes = f"emd skipped: {exc}"
    iou = voxel_iou(mesh_a, mesh_b, iou_resolution)
    return MetricReport(cd=cd, emd=emd_value, iou=iou, n_points=n_points, notes=notes)


def save_report(path, report: MetricReport) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(report.lines()) + "\n")
