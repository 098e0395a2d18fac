"""Indexed triangle meshes, unit-cube normalization and OBJ/PLY I/O."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidMesh, ParseError


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle surface.

    vertices: (V, 3) float64 positions in model units.
    faces:    (F, 3) int64 vertex indices.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64))
        if v.ndim != 2 or v.shape[1] != 3:
            raise InvalidMesh(f"vertices must be (V, 3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise InvalidMesh(f"faces must be (F, 3), got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise InvalidMesh("face index out of range")
        if f.size and (
            (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        ).any():
            raise InvalidMesh("face references the same vertex twice")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if not len(self.vertices):
            raise InvalidMesh("empty mesh has no bounds")
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def triangle_corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """The three (F, 3) corner arrays."""
        v, f = self.vertices, self.faces
        return v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]

    def face_areas(self) -> np.ndarray:
        a, b, c = self.triangle_corners()
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def is_edge_manifold_closed(self) -> bool:
        """True when every undirected edge is shared by exactly two faces."""
        f = self.faces
        edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        edges = np.sort(edges, axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(len(edges)) and bool((counts == 2).all())


@dataclass(frozen=True)
class NormalizationRecord:
    """Uniform transform applied by normalize_mesh: v_norm = (v - offset) * scale."""

    scale: float
    offset: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.offset) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + self.offset


def normalize_mesh(
    mesh: TriangleMesh, margin: float = 0.05
) -> tuple[TriangleMesh, NormalizationRecord]:
    """Center a mesh on its bounding-box center and scale it into the unit cube.

    The longest bounding-box edge of the result equals 1 - 2*margin, so with the
    default margin every vertex lands strictly inside [-0.5, 0.5]^3.
    """
    if mesh.n_faces < 1:
        raise InvalidMesh("cannot normalize a mesh with no faces")
    if not (0.0 <= margin < 0.5):
        raise InvalidMesh(f"margin must be in [0, 0.5), got {margin}")
    lo, hi = mesh.bounds()
    longest = float((hi - lo).max())
    if longest <= 0.0:
        raise InvalidMesh("mesh has zero extent in every axis")
    offset = (lo + hi) / 2.0
    scale = (1.0 - 2.0 * margin) / longest
    record = NormalizationRecord(scale=scale, offset=offset)
    return TriangleMesh(record.apply(mesh.vertices), mesh.faces.copy()), record


def load_obj(path) -> TriangleMesh:
    """Read the OBJ subset: `v x y z` and `f i j k` (1-based), ignore the rest.

    Negative face indices follow the OBJ convention of counting from the end;
    `f` entries may carry `/vt/vn` suffixes which are dropped.
    """
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts:
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ParseError("vertex line needs 3 coordinates", path, lineno)
                try:
                    vertices.append([float(x) for x in parts[1:4]])
                except ValueError as exc:
                    raise ParseError(f"bad vertex coordinate: {exc}", path, lineno)
            elif tag == "f":
                if len(parts) < 4:
                    raise ParseError("face line needs 3 indices", path, lineno)
                idx = []
                for token in parts[1:4]:
                    head = token.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise ParseError(f"bad face index {token!r}", path, lineno)
                    if i == 0:
                        raise ParseError("face index 0 is invalid in OBJ", path, lineno)
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                faces.append(idx)
            # all other line types (vn, vt, o, g, usemtl, comments, ...) ignored
    if not vertices:
        raise ParseError("no vertices found", path)
    try:
        return TriangleMesh(np.array(vertices), np.array(faces).reshape(-1, 3))
    except InvalidMesh as exc:
        raise ParseError(str(exc), path)


def save_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]!r} {v[1]!r} {v[2]!r}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def load_ply(path) -> TriangleMesh:
    """Read an ascii PLY. Uses the first three vertex properties as x, y, z;
    polygon faces are fan-triangulated."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("not a PLY file (missing 'ply' magic)", path, 1)
    n_vert = n_face = None
    elements: list[tuple[str, int]] = []
    body_start = None
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise ParseError("only ascii PLY is supported", path, lineno)
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2])))
            if parts[1] == "vertex":
                n_vert = int(parts[2])
            elif parts[1] == "face":
                n_face = int(parts[2])
        elif parts[0] == "end_header":
            body_start = lineno
            break
    if body_start is None or n_vert is None or n_face is None:
        raise ParseError("incomplete PLY header", path)

    data = [ln.split() for ln in lines[body_start:] if ln.split()]
    cursor = 0
    vertices = np.empty((0, 3))
    faces: list[list[int]] = []
    for name, count in elements:
        rows = data[cursor : cursor + count]
        if len(rows) < count:
            raise ParseError(f"element '{name}' truncated", path)
        if name == "vertex":
            vertices = np.array([[float(r[0]), float(r[1]), float(r[2])] for r in rows])
        elif name == "face":
            for r in rows:
                k = int(r[0])
                poly = [int(x) for x in r[1 : 1 + k]]
                for j in range(1, k - 1):
                    faces.append([poly[0], poly[j], poly[j + 1]])
        cursor += count
    try:
        return TriangleMesh(vertices, np.array(faces, dtype=np.int64).reshape(-1, 3))
    except InvalidMesh as exc:
        raise ParseError(str(exc), path)


def load_mesh(path) -> TriangleMesh:
    """Dispatch on extension: .ply goes to the PLY reader, everything else OBJ."""
    if str(path).lower().endswith(".ply"):
        return load_ply(path)
    return load_obj(path)
