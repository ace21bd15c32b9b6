"""Post-processing of DG solutions.

Conforming reconstruction by nodal averaging, linear-in-time interpolation,
zero level-set extraction by marching triangles, distance to mean-curvature
flow references and space-time error norms against a fine reference run.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import ipdg
from .dg_space import DgField, DgSpace
from .mesh import Mesh
from .reference import lagrange_nodes

ZERO_TIE_BREAK = 1e-14

# local edge i is opposite vertex i; the r = 2 midpoint node on it joins the other two
_EDGE_ENDS = np.array([[1, 2], [0, 2], [0, 1]])


@dataclass(eq=False)
class ConformingField:
    """Continuous piecewise P_r function stored by nodal values.

    Nodes are the mesh vertices, followed for r = 2 by one midpoint per face.
    """

    mesh: Mesh
    degree: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (n_conforming_nodes(self.mesh, self.degree),):
            raise ValueError("nodal vector does not match the mesh")

    @property
    def vertex_values(self) -> np.ndarray:
        return self.values[: len(self.mesh.vertices)]

    @property
    def nodes(self) -> np.ndarray:
        return conforming_nodes(self.mesh, self.degree)

    def element_values(self) -> np.ndarray:
        """(ne, 3) vertex values, or (ne, 6) with local midpoints appended for r = 2."""
        return self.values[element_node_map(self.mesh, self.degree)]

    def to_dg(self, space: DgSpace) -> DgField:
        """The same function expressed in the modal basis of ``space`` (exact)."""
        if space.mesh is not self.mesh or space.degree < self.degree:
            raise ValueError("target space cannot represent this field")
        nodes = lagrange_nodes(self.degree)
        vander = space.basis.values(nodes)
        if space.degree == self.degree:
            coeffs = np.linalg.solve(vander, self.element_values().T).T
            return DgField(space, coeffs.ravel())
        # P1 into P2: evaluate at the P2 nodes first
        lin = self.element_values()
        mids = 0.5 * (lin[:, _EDGE_ENDS[:, 0]] + lin[:, _EDGE_ENDS[:, 1]])
        vals = np.concatenate([lin, mids], axis=1)
        coeffs = np.linalg.solve(space.basis.values(lagrange_nodes(2)), vals.T).T
        return DgField(space, coeffs.ravel())

    def __neg__(self):
        return ConformingField(self.mesh, self.degree, -self.values)


def n_conforming_nodes(mesh: Mesh, degree: int) -> int:
    return len(mesh.vertices) + (mesh.n_faces if degree == 2 else 0)


def conforming_nodes(mesh: Mesh, degree: int) -> np.ndarray:
    if degree == 1:
        return mesh.vertices
    mids = mesh.vertices[mesh.face_vertices].mean(axis=1)
    return np.vstack([mesh.vertices, mids])


def element_node_map(mesh: Mesh, degree: int) -> np.ndarray:
    if degree == 1:
        return mesh.elements
    if degree != 2:
        raise ValueError(f"supported degrees are 1 and 2, got {degree}")
    return np.hstack([mesh.elements, len(mesh.vertices) + mesh.element_faces])


def node_average(u: DgField) -> ConformingField:
    """Average, at each conforming node, the values of all incident elements."""
    space = u.space
    mesh = space.mesh
    nodes = lagrange_nodes(space.degree)
    local = u.blocks @ space.basis.values(nodes).T  # (ne, nn)
    emap = element_node_map(mesh, space.degree)
    total = np.zeros(n_conforming_nodes(mesh, space.degree))
    count = np.zeros_like(total)
    np.add.at(total, emap, local)
    np.add.at(count, emap, 1.0)
    return ConformingField(mesh, space.degree, total / count)


def time_interpolant(before: ConformingField, after: ConformingField, t_before: float,
                     t_after: float, t: float) -> ConformingField:
    """Linear interpolation in time between two reconstructions."""
    if before.mesh is not after.mesh or before.degree != after.degree:
        raise ValueError("fields live on different meshes")
    if not t_after > t_before:
        raise ValueError("need t_before < t_after")
    if t < t_before or t > t_after:
        raise ValueError(f"t = {t} outside [{t_before}, {t_after}]")
    theta = (t - t_before) / (t_after - t_before)
    if theta == 0.0:
        return ConformingField(before.mesh, before.degree, before.values.copy())
    if theta == 1.0:
        return ConformingField(after.mesh, after.degree, after.values.copy())
    return ConformingField(before.mesh, before.degree, (1 - theta) * before.values + theta * after.values)


# -- level sets -------------------------------------------------------------------


@dataclass
class LevelSetCurve:
    """Zero level set as an unordered collection of straight segments."""

    segments: np.ndarray  # (ns, 2, 2)
    t: float = 0.0

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=float).reshape(-1, 2, 2)

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def empty(self) -> bool:
        return len(self.segments) == 0

    @property
    def length(self) -> float:
        return float(np.sum(np.linalg.norm(self.segments[:, 1] - self.segments[:, 0], axis=1)))

    def sample_points(self) -> np.ndarray:
        """Segment endpoints followed by midpoints."""
        s = self.segments
        return np.vstack([s[:, 0], s[:, 1], s.mean(axis=1)])

    def mean_radius(self, center=(0.0, 0.0)) -> float:
        """Length-weighted mean distance of the curve from ``center``."""
        if self.empty:
            raise ValueError("empty curve has no radius")
        mids = self.segments.mean(axis=1) - np.asarray(center)
        w = np.linalg.norm(self.segments[:, 1] - self.segments[:, 0], axis=1)
        return float(np.sum(w * np.linalg.norm(mids, axis=1)) / np.sum(w))

    def translated(self, shift) -> "LevelSetCurve":
        return LevelSetCurve(self.segments + np.asarray(shift, dtype=float), self.t)

    def to_csv(self, path) -> None:
        write_curves_csv([self], path)

    def to_vtk(self, path) -> None:
        """Legacy ASCII VTK polydata with one line cell per segment."""
        pts = self.segments.reshape(-1, 2)
        ns = len(self.segments)
        lines = ["# vtk DataFile Version 3.0", f"zero level set t={self.t!r}", "ASCII", "DATASET POLYDATA",
                 f"POINTS {len(pts)} double"]
        lines.extend(f"{x:.17g} {y:.17g} 0" for x, y in pts)
        lines.append(f"LINES {ns} {3 * ns}")
        lines.extend(f"2 {2 * i} {2 * i + 1}" for i in range(ns))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def write_curves_csv(curves: Sequence[LevelSetCurve], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "segment_id", "x1", "y1", "x2", "y2"])
        for c in curves:
            for i, ((x1, y1), (x2, y2)) in enumerate(c.segments):
                w.writerow([repr(c.t), i, repr(x1), repr(y1), repr(x2), repr(y2)])


def _linear_triangles(f: ConformingField) -> tuple[np.ndarray, np.ndarray]:
    """Triangles (node indices) on which f is contoured as a linear function."""
    nodes = f.nodes
    emap = element_node_map(f.mesh, f.degree)
    if f.degree == 1:
        return nodes, emap
    v0, v1, v2, m0, m1, m2 = emap.T  # m_i is the midpoint opposite vertex i
    tris = np.concatenate([
        np.column_stack([v0, m2, m1]),
        np.column_stack([m2, v1, m0]),
        np.column_stack([m1, m0, v2]),
        np.column_stack([m0, m1, m2]),
    ])
    return nodes, tris


def extract_zero_level_set(f: ConformingField, t: float = 0.0) -> LevelSetCurve:
    """Marching triangles on the nodal values of ``f``.

    Exact zeros are moved to +1e-14 times the sup norm so that every crossing
    lies strictly inside an edge.
    """
    nodes, tris = _linear_triangles(f)
    vals = f.values.copy()
    sup = np.max(np.abs(vals)) if len(vals) else 0.0
    vals[vals == 0.0] = ZERO_TIE_BREAK * sup if sup > 0 else 1.0
    tv = vals[tris]
    pos = tv > 0
    npos = pos.sum(axis=1)
    mixed = (npos == 1) | (npos == 2)
    tris, tv, pos = tris[mixed], tv[mixed], pos[mixed]
    # the odd vertex is the one whose sign differs from the other two
    odd = np.where(pos.sum(axis=1) == 1, np.argmax(pos, axis=1), np.argmin(pos, axis=1))
    rows = np.arange(len(tris))
    a, b, c = odd, (odd + 1) % 3, (odd + 2) % 3

    def crossing(i, j):
        fi, fj = tv[rows, i], tv[rows, j]
        s = fi / (fi - fj)
        pi, pj = nodes[tris[rows, i]], nodes[tris[rows, j]]
        return pi + s[:, None] * (pj - pi)

    segs = np.stack([crossing(a, b), crossing(a, c)], axis=1)
    return LevelSetCurve(segs, t)


# -- reference interfaces -------------------------------------------------------------


@dataclass
class McfReference:
    """Reference interface Gamma_t for the one-sided distance.

    ``kind='circle'`` is a circle of radius r(t) = sqrt(r0^2 - 2t) shrinking by
    mean curvature; ``kind='points'`` is a fixed sampled curve.
    """

    kind: str = "circle"
    r0: float = 0.5
    center: tuple[float, float] = (0.0, 0.0)
    points: np.ndarray | None = None
    _tree: cKDTree | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.kind == "circle":
            if not self.r0 > 0:
                raise ValueError("radius must be positive")
        elif self.kind == "points":
            if self.points is None or len(self.points) == 0:
                raise ValueError("a point-set reference needs points")
            self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
            self._tree = cKDTree(self.points)
        else:
            raise ValueError(f"unknown reference kind {self.kind!r}")

    @classmethod
    def circle(cls, r0: float, center=(0.0, 0.0)) -> "McfReference":
        return cls("circle", r0, tuple(center))

    @classmethod
    def from_points(cls, points) -> "McfReference":
        return cls("points", points=points)

    @property
    def extinction_time(self) -> float:
        return self.r0**2 / 2 if self.kind == "circle" else math.inf

    def radius(self, t: float) -> float:
        if self.kind != "circle":
            raise TypeError("only the circle reference has a radius")
        if t < 0 or t >= self.extinction_time:
            raise ValueError(f"t = {t} outside [0, {self.extinction_time})")
        return math.sqrt(self.r0**2 - 2.0 * t)

    def distance(self, points: np.ndarray, t: float = 0.0) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "circle":
            return np.abs(np.linalg.norm(points - np.asarray(self.center), axis=1) - self.radius(t))
        return self._tree.query(points)[0]


@dataclass(frozen=True)
class InterfaceDistance:
    t: float
    distance: float  # nan when extinct
    extinct: bool = False


def interface_distance(curve: LevelSetCurve, ref: McfReference, t: float | None = None) -> InterfaceDistance:
    """sup over the curve samples of the distance to the reference interface."""
    t = curve.t if t is None else t
    if curve.empty:
        return InterfaceDistance(t, math.nan, True)
    return InterfaceDistance(t, float(np.max(ref.distance(curve.sample_points(), t))))


# -- error norms against a fine reference --------------------------------------------------


def parent_map(coarse: Mesh, fine: Mesh) -> np.ndarray:
    """Coarse element containing each fine element; raises if the meshes are not nested."""
    parents = coarse.locate(fine.centroids)
    p = coarse.vertices[coarse.elements[parents]]  # (nf, 3, 2)
    q = fine.vertices[fine.elements]
    T = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    ref = np.linalg.solve(T[:, None], (q - p[:, :1])[..., None])[..., 0]
    bary = np.concatenate([1 - ref.sum(-1, keepdims=True), ref], axis=-1)
    if np.any(bary < -1e-10):
        raise ValueError("meshes are not nested")
    return parents


def prolongate(u: DgField, fine_space: DgSpace, parents: np.ndarray | None = None) -> DgField:
    """Exact representation of ``u`` on a nested refinement."""
    if fine_space.degree < u.space.degree:
        raise ValueError("fine space has lower degree")
    if parents is None:
        parents = parent_map(u.space.mesh, fine_space.mesh)
    x = fine_space.quad_points
    ne, nq, _ = x.shape
    vals = u.evaluate_physical(x.reshape(-1, 2), np.repeat(parents, nq)).reshape(ne, nq)
    return DgField(fine_space, fine_space.load(vals) / fine_space.mass_diagonal)


@dataclass(frozen=True)
class ErrorNorms:
    linf_l2: float
    l2_h1: float
    l2_per_step: tuple[float, ...] = ()
    dg_per_step: tuple[float, ...] = ()


class ErrorMeasure:
    """L2 and 1,DG norms of (coarse field - fine field) on the coarse mesh.

    The coarse field is prolongated exactly, so both integrals are evaluated
    on the fine mesh without approximation. The jump term runs over fine faces
    lying on the coarse skeleton, weighted by the coarse face length.
    """

    def __init__(self, coarse: DgSpace, fine: DgSpace, penalty=None):
        self.coarse, self.fine = coarse, fine
        self.same = coarse is fine
        if self.same:
            self.parents = np.arange(coarse.mesh.n_elements)
        else:
            self.parents = parent_map(coarse.mesh, fine.mesh)
        fm = fine.mesh
        interior = fm.interior_faces
        skeleton = interior[self.parents[fm.face_owner[interior]] != self.parents[fm.face_neighbor[interior]]]
        self.skeleton = skeleton
        # coarse face length of each skeleton face
        ratio = coarse.mesh.mesh_size / fine.mesh.mesh_size
        sigma = ipdg.default_penalty(coarse.degree) if penalty is None else float(penalty)
        self.jump_weight = sigma / (fm.face_length[skeleton] * ratio)

    def error(self, u: DgField, ref: DgField) -> DgField:
        if u.space is not self.coarse or ref.space is not self.fine:
            raise ValueError("fields do not live on the measure's spaces")
        return (u if self.same else prolongate(u, self.fine, self.parents)) - ref

    def norms(self, u: DgField, ref: DgField) -> tuple[float, float]:
        e = self.error(u, ref)
        plus, minus = e.face_traces()
        jump = (plus - minus)[self.skeleton]
        j = np.sum(self.jump_weight * np.sum(self.fine.face_weights[self.skeleton] * jump**2, axis=1))
        return e.l2_norm(), float(np.sqrt(e.h1_seminorm() ** 2 + j))


def error_norms(numeric: Sequence[DgField], reference: Sequence[DgField], k: float,
                penalty=None) -> ErrorNorms:
    """max_m ||e^m|| and (k sum_{m>=1} ||e^m||_{1,DG}^2)^(1/2) for e^m = u^m - u_ref(t_m)."""
    if len(numeric) != len(reference) or not numeric:
        raise ValueError("trajectories must be non-empty and on the same time grid")
    measure = ErrorMeasure(numeric[0].space, reference[0].space, penalty)
    l2, dg = zip(*(measure.norms(u, r) for u, r in zip(numeric, reference)))
    return ErrorNorms(max(l2), math.sqrt(k * sum(d * d for d in dg[1:])), tuple(l2), tuple(dg))
