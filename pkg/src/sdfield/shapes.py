"""Watertight test shapes: box, icosphere, torus, and a torus with a bump."""

from __future__ import annotations

import numpy as np

from .mesh import TriangleMesh

# Unit-cube corners and the 12 outward-facing triangles.
_BOX_CORNERS = np.array(
    [
        [0, 0, 0],
        [1, 0, 0],
        [1, 1, 0],
        [0, 1, 0],
        [0, 0, 1],
        [1, 0, 1],
        [1, 1, 1],
        [0, 1, 1],
    ],
    dtype=np.float64,
)
_BOX_FACES = np.array(
    [
        [0, 2, 1], [0, 3, 2],  # z = 0
        [4, 5, 6], [4, 6, 7],  # z = 1
        [0, 1, 5], [0, 5, 4],  # y = 0
        [3, 7, 6], [3, 6, 2],  # y = 1
        [0, 4, 7], [0, 7, 3],  # x = 0
        [1, 2, 6], [1, 6, 5],  # x = 1
    ],
    dtype=np.int64,
)


def box_mesh(lo=(-0.5, -0.5, -0.5), hi=(0.5, 0.5, 0.5)) -> TriangleMesh:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    return TriangleMesh(lo + _BOX_CORNERS * (hi - lo), _BOX_FACES.copy())


def icosphere(radius: float = 0.4, subdivisions: int = 3) -> TriangleMesh:
    """Icosahedron subdivided `subdivisions` times, vertices projected to radius."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ],
        dtype=np.float64,
    )
    faces = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    for _ in range(subdivisions):
        verts_list = list(verts)
        midpoint: dict[tuple[int, int], int] = {}

        def mid(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            if key not in midpoint:
                m = verts_list[i] + verts_list[j]
                m /= np.linalg.norm(m)
                midpoint[key] = len(verts_list)
                verts_list.append(m)
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.array(verts_list)
        faces = np.array(new_faces, dtype=np.int64)
    return TriangleMesh(verts * radius, faces)


def icosphere_facet_deviation(radius: float, subdivisions: int) -> float:
    """Max distance between the faceted sphere surface and the true sphere.

    The worst point of a spherical-cap facet is the triangle centroid; its
    distance from the origin understates the radius by radius * (1 - cos of
    the deviation), computed here exactly from the generated mesh.
    """
    m = icosphere(radius, subdivisions)
    a, b, c = m.triangle_corners()
    centroid_norm = np.linalg.norm((a + b + c) / 3.0, axis=1)
    return float((radius - centroid_norm).max())


def torus_mesh(
    major_radius: float = 0.3,
    minor_radius: float = 0.12,
    n_major: int = 48,
    n_minor: int = 24,
) -> TriangleMesh:
    """Axis-aligned torus around z, watertight via index wrap-around."""
    u = 2.0 * np.pi * np.arange(n_major) / n_major
    v = 2.0 * np.pi * np.arange(n_minor) / n_minor
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ring = major_radius + minor_radius * np.cos(vv)
    verts = np.stack(
        [ring * np.cos(uu), ring * np.sin(uu), minor_radius * np.sin(vv)], axis=-1
    ).reshape(-1, 3)

    faces = []
    for i in range(n_major):
        i2 = (i + 1) % n_major
        for j in range(n_minor):
            j2 = (j + 1) % n_minor
            a = i * n_minor + j
            b = i2 * n_minor + j
            c = i2 * n_minor + j2
            d = i * n_minor + j2
            faces += [[a, b, c], [a, c, d]]
    return TriangleMesh(verts, np.array(faces, dtype=np.int64))


def bumpy_torus_mesh(
    major_radius: float = 0.3,
    minor_radius: float = 0.12,
    bump_height: float = 0.09,
    bump_sigma: float = 0.1,
    n_major: int = 64,
    n_minor: int = 32,
) -> TriangleMesh:
    """Torus with a localized Gaussian bump on its outer equator at +x.

    The bump displaces vertices along the tube normal, so the mesh stays
    watertight; it produces a concentrated detail in depth renders.
    """
    base = torus_mesh(major_radius, minor_radius, n_major, n_minor)
    verts = base.vertices.copy()
    # Tube normal: direction from the ring's spine to the vertex.
    spine_dir = verts.copy()
    spine_dir[:, 2] = 0.0
    spine_norm = np.linalg.norm(spine_dir, axis=1, keepdims=True)
    spine = spine_dir / np.maximum(spine_norm, 1e-12) * major_radius
    normal = verts - spine
    normal /= np.maximum(np.linalg.norm(normal, axis=1, keepdims=True), 1e-12)

    anchor = np.array([major_radius + minor_radius, 0.0, 0.0])
    d2 = ((verts - anchor) ** 2).sum(axis=1)
    verts += normal * (bump_height * np.exp(-d2 / (2.0 * bump_sigma**2)))[:, None]
    return TriangleMesh(verts, base.faces.copy())
