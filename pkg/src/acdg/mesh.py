"""Triangulations of rectangles with the face topology needed by IPDG terms.

Faces are stored as flat arrays for vectorised assembly. An interior face is
owned by the incident element with the smaller index; its normal points from
the owner into the neighbour. Boundary faces have ``neighbor == -1`` and an
outward normal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np


@dataclass(frozen=True)
class Face:
    vertices: tuple[int, int]
    kind: str  # "interior" | "boundary"
    owner: int
    neighbor: int  # -1 on the boundary
    normal: np.ndarray
    length: float


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation with element/face connectivity.

    Attributes
    ----------
    vertices : (nv, 2) float array
    elements : (ne, 3) int array, counterclockwise vertex indices
    face_vertices : (nf, 2) int array
    face_owner, face_neighbor : (nf,) int arrays (neighbor -1 on boundary)
    face_normal : (nf, 2) unit normals, owner -> neighbor
    face_length : (nf,) edge lengths h_e
    element_faces : (ne, 3) face index of local edge i (opposite vertex i)
    """

    vertices: np.ndarray
    elements: np.ndarray
    face_vertices: np.ndarray
    face_owner: np.ndarray
    face_neighbor: np.ndarray
    face_normal: np.ndarray
    face_length: np.ndarray
    element_faces: np.ndarray
    grid: tuple | None = field(default=None)  # (x0, x1, y0, y1, n) for structured meshes

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_faces(self) -> int:
        return len(self.face_vertices)

    @property
    def element_areas(self) -> np.ndarray:
        p = self.vertices[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def element_diameters(self) -> np.ndarray:
        p = self.vertices[self.elements]
        edges = np.stack([p[:, 1] - p[:, 2], p[:, 2] - p[:, 0], p[:, 0] - p[:, 1]], axis=1)
        return np.linalg.norm(edges, axis=2).max(axis=1)

    @property
    def mesh_size(self) -> float:
        return float(self.element_diameters.max())

    @property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.elements].mean(axis=1)

    @property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_neighbor >= 0)

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_neighbor < 0)

    @property
    def faces(self) -> list[Face]:
        return list(self.iter_faces())

    def iter_faces(self) -> Iterator[Face]:
        for f in range(self.n_faces):
            nb = int(self.face_neighbor[f])
            yield Face(
                vertices=(int(self.face_vertices[f, 0]), int(self.face_vertices[f, 1])),
                kind="interior" if nb >= 0 else "boundary",
                owner=int(self.face_owner[f]),
                neighbor=nb,
                normal=self.face_normal[f].copy(),
                length=float(self.face_length[f]),
            )

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Index of the element containing each point (structured meshes only).

        Points on a shared edge are assigned to one of the incident elements.
        """
        if self.grid is None:
            raise NotImplementedError("point location needs a structured mesh")
        x0, x1, y0, y1, n = self.grid
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        s = (pts[:, 0] - x0) / (x1 - x0) * n
        t = (pts[:, 1] - y0) / (y1 - y0) * n
        i = np.clip(np.floor(s).astype(int), 0, n - 1)
        j = np.clip(np.floor(t).astype(int), 0, n - 1)
        upper = (t - j) > (s - i)
        return 2 * (j * n + i) + upper.astype(int)


def face_partition(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Split face indices into (interior, boundary)."""
    return mesh.interior_faces, mesh.boundary_faces


def from_elements(vertices: np.ndarray, elements: np.ndarray, grid=None) -> Mesh:
    """Build face topology for an arbitrary conforming triangulation."""
    vertices = np.asarray(vertices, dtype=float)
    elements = np.asarray(elements, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise ValueError("vertices must have shape (nv, 2)")
    if elements.ndim != 2 or elements.shape[1] != 3:
        raise ValueError("elements must have shape (ne, 3)")

    p = vertices[elements]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area2 = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    if np.any(area2 <= 0):
        raise ValueError("elements must be counterclockwise with positive area")

    ne = len(elements)
    # local edge i is opposite local vertex i
    local = np.array([[1, 2], [2, 0], [0, 1]])
    edges = elements[:, local]  # (ne, 3, 2)
    keys = np.sort(edges, axis=2).reshape(-1, 2)
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        raise ValueError("non-manifold mesh: an edge is shared by more than two elements")

    nf = len(uniq)
    owner = np.full(nf, -1, dtype=np.int64)
    neighbor = np.full(nf, -1, dtype=np.int64)
    owner_edge = np.zeros(nf, dtype=np.int64)
    elem_of = np.repeat(np.arange(ne), 3)
    # entries come in element order, so the first visit is the smaller label
    for slot, f in enumerate(inverse):
        if owner[f] < 0:
            owner[f] = elem_of[slot]
            owner_edge[f] = slot
        else:
            neighbor[f] = elem_of[slot]

    flat_edges = edges.reshape(-1, 2)
    fv = flat_edges[owner_edge]
    tangent = vertices[fv[:, 1]] - vertices[fv[:, 0]]
    length = np.linalg.norm(tangent, axis=1)
    # counterclockwise traversal: outward normal is the tangent rotated by -90 degrees
    normal = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1) / length[:, None]

    return Mesh(
        vertices=vertices,
        elements=elements,
        face_vertices=fv,
        face_owner=owner,
        face_neighbor=neighbor,
        face_normal=normal,
        face_length=length,
        element_faces=inverse.reshape(ne, 3),
        grid=grid,
    )


def build_square_mesh(domain=(-1.0, 1.0, -1.0, 1.0), n: int = 10) -> Mesh:
    """Structured triangulation of ``[x0, x1] x [y0, y1]`` with ``n`` cells per side.

    Each cell is cut along its lower-left to upper-right diagonal. Elements are
    numbered cell by cell (row-major), lower triangle first.
    """
    x0, x1, y0, y1 = map(float, domain)
    if int(n) != n or n < 1:
        raise ValueError(f"need at least one subdivision per side, got n={n}")
    n = int(n)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate rectangle {domain}")

    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    j, i = np.divmod(np.arange(n * n), n)
    v00 = j * (n + 1) + i
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    elements = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return from_elements(vertices, elements, grid=(x0, x1, y0, y1, n))


def write_vtk(mesh: Mesh, path, point_data: dict | None = None, cell_data: dict | None = None) -> None:
    """Legacy ASCII VTK unstructured grid with triangle cells."""
    lines = ["# vtk DataFile Version 3.0", "acdg mesh", "ASCII", "DATASET UNSTRUCTURED_GRID"]
    nv = len(mesh.vertices)
    lines.append(f"POINTS {nv} double")
    lines.extend(f"{x:.17g} {y:.17g} 0" for x, y in mesh.vertices)
    ne = mesh.n_elements
    lines.append(f"CELLS {ne} {4 * ne}")
    lines.extend(f"3 {a} {b} {c}" for a, b, c in mesh.elements)
    lines.append(f"CELL_TYPES {ne}")
    lines.extend(["5"] * ne)
    if point_data:
        lines.append(f"POINT_DATA {nv}")
        for name, values in point_data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines.extend(f"{v:.17g}" for v in np.asarray(values))
    if cell_data:
        lines.append(f"CELL_DATA {ne}")
        for name, values in cell_data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines.extend(f"{v:.17g}" for v in np.asarray(values))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
