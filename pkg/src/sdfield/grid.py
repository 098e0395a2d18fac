"""Regular signed-distance grids: construction, sampling and persistence.

Lattice convention: grid point (i, j, k) sits at
bbox_min + (i, j, k) * extent / (resolution - 1), endpoints included, and the
flat value array is x-fastest (index = i + rx * (j + ry * k)). Values are
stored as float32, which is also the on-disk precision of the SDFG format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .distance import MeshSdf
from .errors import InvalidCount, InvalidResolution, ParseError, ValidationError
from .mesh import TriangleMesh
from .parallel import map_chunks, resolve_threads

SDFG_MAGIC = b"SDFG"
SDFG_VERSION = 1

UNIT_BBOX = (np.array([-0.5, -0.5, -0.5]), np.array([0.5, 0.5, 0.5]))


@dataclass(frozen=True)
class SdfGrid:
    """Signed distances sampled on a regular lattice over a bounding box."""

    resolution: tuple[int, int, int]
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    values: np.ndarray  # flat float32, x-fastest

    def __post_init__(self):
        res = tuple(int(r) for r in self.resolution)
        if len(res) != 3 or min(res) < 2:
            raise InvalidResolution(f"resolution must be >= 2 per axis, got {res}")
        lo = np.asarray(self.bbox_min, dtype=np.float64)
        hi = np.asarray(self.bbox_max, dtype=np.float64)
        if (hi <= lo).any():
            raise ValidationError("bbox is degenerate")
        v = np.ascontiguousarray(np.asarray(self.values, dtype=np.float32)).ravel()
        if v.size != res[0] * res[1] * res[2]:
            raise ValidationError(
                f"value count {v.size} does not match resolution {res}"
            )
        object.__setattr__(self, "resolution", res)
        object.__setattr__(self, "bbox_min", lo)
        object.__setattr__(self, "bbox_max", hi)
        object.__setattr__(self, "values", v)

    @property
    def n_points(self) -> int:
        rx, ry, rz = self.resolution
        return rx * ry * rz

    @property
    def extent(self) -> np.ndarray:
        return self.bbox_max - self.bbox_min

    @property
    def spacing(self) -> np.ndarray:
        """Lattice step per axis."""
        res = np.array(self.resolution, dtype=np.float64)
        return self.extent / (res - 1.0)

    @property
    def cell_diagonal(self) -> float:
        return float(np.linalg.norm(self.spacing))

    def lattice_points(self, flat_index=None) -> np.ndarray:
        """World positions of lattice points (all, or the given flat indices)."""
        rx, ry, _ = self.resolution
        idx = (
            np.arange(self.n_points)
            if flat_index is None
            else np.atleast_1d(np.asarray(flat_index, dtype=np.int64))
        )
        i = idx % rx
        j = (idx // rx) % ry
        k = idx // (rx * ry)
        ijk = np.stack([i, j, k], axis=1).astype(np.float64)
        return self.bbox_min + ijk * self.spacing

    def value_grid(self) -> np.ndarray:
        """Values reshaped to (rx, ry, rz), indexable as [i, j, k]."""
        rx, ry, rz = self.resolution
        return self.values.reshape(rz, ry, rx).transpose(2, 1, 0)

    def trilinear(self, points) -> np.ndarray:
        """Trilinearly interpolated field values; points outside are clamped."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        res = np.array(self.resolution)
        g = (pts - self.bbox_min) / self.spacing
        g = np.clip(g, 0.0, res - 1.0)
        i0 = np.minimum(g.astype(np.int64), res - 2)
        f = g - i0
        vg = self.value_grid()
        out = np.zeros(len(pts))
        for di in (0, 1):
            for dj in (0, 1):
                for dk in (0, 1):
                    w = (
                        (f[:, 0] if di else 1.0 - f[:, 0])
                        * (f[:, 1] if dj else 1.0 - f[:, 1])
                        * (f[:, 2] if dk else 1.0 - f[:, 2])
                    )
                    out += w * vg[i0[:, 0] + di, i0[:, 1] + dj, i0[:, 2] + dk]
        return out


def build_sdf_grid(
    mesh: TriangleMesh,
    resolution,
    bbox=UNIT_BBOX,
    parallel: bool = False,
    threads=None,
) -> SdfGrid:
    """Evaluate the mesh's signed distance at every lattice point.

    The parallel path partitions the lattice into fixed chunks evaluated by
    the same kernel, so its output is bit-identical to the serial one.
    """
    if np.isscalar(resolution):
        resolution = (int(resolution),) * 3
    res = tuple(int(r) for r in resolution)
    if min(res) < 2:
        raise InvalidResolution(f"resolution must be >= 2 per axis, got {res}")
    lo, hi = (np.asarray(b, dtype=np.float64) for b in bbox)

    grid = SdfGrid(res, lo, hi, np.zeros(res[0] * res[1] * res[2], dtype=np.float32))
    field = MeshSdf(mesh)
    points = grid.lattice_points()
    values = np.empty(grid.n_points, dtype=np.float32)

    def kernel(start, stop):
        return field.signed_distance(points[start:stop]).astype(np.float32)

    n_workers = resolve_threads(threads) if parallel else 1
    map_chunks(kernel, grid.n_points, chunk=8192, out=values, threads=n_workers)
    return SdfGrid(res, lo, hi, values)


# ---------------- training-point sampling ----------------


@dataclass(frozen=True)
class PointSample:
    """A 3D query point with its ground-truth signed distance."""

    p: np.ndarray
    s: float


def samples_to_arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    pts = np.array([s.p for s in samples], dtype=np.float64).reshape(-1, 3)
    vals = np.array([s.s for s in samples], dtype=np.float64)
    return pts, vals


def sample_training_points(
    grid: SdfGrid, n: int, sigma: float = 0.1, seed: int = 0
) -> list[PointSample]:
    """Draw n lattice points without replacement, weighted by exp(-s^2/(2 sigma^2)).

    Uses Gumbel top-k keys, which realizes exact sequential weighted sampling
    without replacement and is deterministic for a given seed.
    """
    if n < 1:
        raise InvalidCount(f"need n >= 1, got {n}")
    if n > grid.n_points:
        raise InvalidCount(f"n={n} exceeds lattice size {grid.n_points}")
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    s = grid.values.astype(np.float64)
    # Shift by the minimum squared value so the weights never all underflow.
    s2 = s * s
    log_w = -(s2 - s2.min()) / (2.0 * sigma * sigma)
    rng = np.random.default_rng(seed)
    gumbel = -np.log(-np.log(rng.random(grid.n_points)))
    chosen = np.argsort(log_w + gumbel)[::-1][:n]
    pts = grid.lattice_points(chosen)
    return [PointSample(p=pts[i], s=float(s[chosen[i]])) for i in range(n)]


# ---------------- persistence ----------------


def save_sdf_grid(path, grid: SdfGrid) -> None:
    """Write the SDFG binary format (little-endian, float32 values, x-fastest)."""
    rx, ry, rz = grid.resolution
    with open(path, "wb") as fh:
        fh.write(SDFG_MAGIC)
        fh.write(struct.pack("<I", SDFG_VERSION))
        fh.write(struct.pack("<III", rx, ry, rz))
        fh.write(
            struct.pack(
                "<6f",
                *(float(x) for x in grid.bbox_min),
                *(float(x) for x in grid.bbox_max),
            )
        )
        fh.write(grid.values.astype("<f4").tobytes())


def load_sdf_grid(path) -> SdfGrid:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SDFG_MAGIC:
            raise ParseError(f"bad magic {magic!r}, expected {SDFG_MAGIC!r}", path)
        (version,) = struct.unpack("<I", fh.read(4))
        if version != SDFG_VERSION:
            raise ParseError(f"unsupported SDFG version {version}", path)
        rx, ry, rz = struct.unpack("<III", fh.read(12))
        bbox = struct.unpack("<6f", fh.read(24))
        n = rx * ry * rz
        raw = fh.read(4 * n)
        if len(raw) != 4 * n:
            raise ParseError("truncated SDFG value block", path)
        values = np.frombuffer(raw, dtype="<f4").copy()
    return SdfGrid((rx, ry, rz), np.array(bbox[:3]), np.array(bbox[3:]), values)


def save_point_samples(path, samples) -> None:
    """One `x y z s` quadruple per line, full-precision text."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(f"{s.p[0]!r} {s.p[1]!r} {s.p[2]!r} {s.s!r}\n")


def load_point_samples(path) -> list[PointSample]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 4:
                raise ParseError("expected `x y z s`", path, lineno)
            try:
                x, y, z, s = (float(v) for v in parts)
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno)
            out.append(PointSample(p=np.array([x, y, z]), s=s))
    return out
