"""Broken polynomial spaces on triangulations.

Every element carries its own copy of an orthonormal modal basis, so the
global mass matrix is diagonal. Geometric data at element and face quadrature
points is precomputed once and shared by all assembly routines.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mesh import Mesh
from .reference import ModalBasis, lagrange_nodes, line_quadrature, triangle_quadrature


class DgSpace:
    """Discontinuous P_r space on ``mesh``.

    Element quadrature is exact to degree 3r+1 and face quadrature to 2r+1.
    Dofs of element K occupy ``slice(K * nb, (K + 1) * nb)``.
    """

    def __init__(self, mesh: Mesh, degree: int = 1):
        if degree not in (1, 2):
            raise ValueError(f"supported degrees are 1 and 2, got {degree}")
        self.mesh = mesh
        self.degree = degree
        self.basis = ModalBasis(degree)
        self.dofs_per_element = self.basis.n
        self.total_dofs = mesh.n_elements * self.dofs_per_element

        self.ref_points, self.ref_weights = triangle_quadrature(3 * degree + 1)
        self.face_ref_points, self.face_ref_weights = line_quadrature(2 * degree + 1)

        p = mesh.vertices[mesh.elements]
        self.origin = p[:, 0]
        self.jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # columns
        self.det = np.linalg.det(self.jac)
        self.inv_jac = np.linalg.inv(self.jac)

        # element quadrature
        self.phi = self.basis.values(self.ref_points)  # (nq, nb)
        ref_grads = self.basis.grads(self.ref_points)  # (nq, nb, 2)
        self.grad_phi = np.einsum("eji,qbj->eqbi", self.inv_jac, ref_grads)
        self.weights = self.det[:, None] * self.ref_weights[None, :]
        self.quad_points = self.origin[:, None, :] + np.einsum(
            "eij,qj->eqi", self.jac, self.ref_points
        )

        # face quadrature, traces from owner (+) and neighbour (-)
        fv = mesh.vertices[mesh.face_vertices]
        s = self.face_ref_points
        self.face_points = (1.0 - s)[None, :, None] * fv[:, None, 0] + s[None, :, None] * fv[:, None, 1]
        self.face_weights = mesh.face_length[:, None] * self.face_ref_weights[None, :]
        self.interior = mesh.interior_faces
        self.boundary = mesh.boundary_faces
        owner = mesh.face_owner
        nbr = np.where(mesh.face_neighbor >= 0, mesh.face_neighbor, mesh.face_owner)
        self.face_phi_plus, self.face_grad_plus = self._traces(owner, self.face_points)
        self.face_phi_minus, self.face_grad_minus = self._traces(nbr, self.face_points)

    # -- geometry helpers ------------------------------------------------

    def _affine(self, elements: np.ndarray, ndim: int):
        org, jac, inv = self.origin[elements], self.jac[elements], self.inv_jac[elements]
        for _ in range(ndim - 1 - elements.ndim):
            org, jac, inv = org[..., None, :], jac[..., None, :, :], inv[..., None, :, :]
        return org, jac, inv

    def to_reference(self, elements: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Reference coordinates of physical ``points`` inside ``elements``."""
        elements = np.asarray(elements)
        org, _, inv = self._affine(elements, points.ndim)
        return np.einsum("...ij,...j->...i", inv, points - org)

    def to_physical(self, elements: np.ndarray, ref_points: np.ndarray) -> np.ndarray:
        elements = np.asarray(elements)
        org, jac, _ = self._affine(elements, ref_points.ndim)
        return org + np.einsum("...ij,...j->...i", jac, ref_points)

    def _traces(self, elements: np.ndarray, points: np.ndarray):
        ref = self.to_reference(elements, points)
        vals = self.basis.values(ref)
        grads = np.einsum("fji,fqbj->fqbi", self.inv_jac[elements], self.basis.grads(ref))
        return vals, grads

    def dofs(self, element: int) -> slice:
        nb = self.dofs_per_element
        return slice(element * nb, (element + 1) * nb)

    @property
    def dof_map(self) -> np.ndarray:
        return np.arange(self.total_dofs).reshape(self.mesh.n_elements, self.dofs_per_element)

    @property
    def mass_diagonal(self) -> np.ndarray:
        return np.repeat(self.det, self.dofs_per_element)

    def constant(self, value: float = 1.0) -> "DgField":
        c = np.zeros((self.mesh.n_elements, self.dofs_per_element))
        c[:, 0] = value / self.basis.values(np.zeros(2))[0]
        return DgField(self, c.ravel())

    def zeros(self) -> "DgField":
        return DgField(self, np.zeros(self.total_dofs))

    # -- integration of callables ----------------------------------------

    def integrate(self, values_at_quad: np.ndarray) -> float:
        return float(np.sum(self.weights * values_at_quad))

    def integrate_elements(self, values_at_quad: np.ndarray) -> np.ndarray:
        return np.sum(self.weights * values_at_quad, axis=1)

    def load(self, values_at_quad: np.ndarray) -> np.ndarray:
        """Vector (g, phi_i) for g given at element quadrature points."""
        return np.einsum("eq,qb->eb", self.weights * values_at_quad, self.phi).ravel()


@dataclass(eq=False)
class DgField:
    """One function of a :class:`DgSpace`, stored as its coefficient vector."""

    space: DgSpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.total_dofs,):
            raise ValueError(
                f"coefficient vector has shape {self.coeffs.shape}, "
                f"space needs ({self.space.total_dofs},)"
            )

    @property
    def blocks(self) -> np.ndarray:
        return self.coeffs.reshape(self.space.mesh.n_elements, self.space.dofs_per_element)

    def copy(self) -> "DgField":
        return DgField(self.space, self.coeffs.copy())

    def _other(self, other):
        if isinstance(other, DgField):
            if other.space is not self.space:
                raise ValueError("fields live on different spaces")
            return other.coeffs
        return NotImplemented

    def __add__(self, other):
        c = self._other(other)
        return NotImplemented if c is NotImplemented else DgField(self.space, self.coeffs + c)

    def __sub__(self, other):
        c = self._other(other)
        return NotImplemented if c is NotImplemented else DgField(self.space, self.coeffs - c)

    def __mul__(self, a: float):
        return DgField(self.space, a * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self):
        return DgField(self.space, -self.coeffs)

    # -- evaluation -------------------------------------------------------

    def evaluate(self, element: int, point) -> float:
        """Value at reference coordinates ``point`` of ``element``."""
        ne = self.space.mesh.n_elements
        if not 0 <= element < ne:
            raise IndexError(f"element {element} out of range [0, {ne})")
        return float(self.space.basis.values(np.asarray(point, dtype=float)) @ self.blocks[element])

    def evaluate_physical(self, points: np.ndarray, elements: np.ndarray | None = None) -> np.ndarray:
        """Values at physical points; ``elements`` defaults to mesh point location."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if elements is None:
            elements = self.space.mesh.locate(points)
        ref = self.space.to_reference(np.asarray(elements), points)
        vals = self.space.basis.values(ref)
        return np.einsum("pb,pb->p", vals, self.blocks[elements])

    def at_quadrature(self) -> np.ndarray:
        return self.blocks @ self.space.phi.T  # (ne, nq)

    def grad_at_quadrature(self) -> np.ndarray:
        return np.einsum("eqbi,eb->eqi", self.space.grad_phi, self.blocks)

    def face_traces(self) -> tuple[np.ndarray, np.ndarray]:
        """Traces (plus, minus) at face quadrature points, shape (nf, nqf) each.

        On boundary faces both entries hold the owner trace.
        """
        mesh = self.space.mesh
        nbr = np.where(mesh.face_neighbor >= 0, mesh.face_neighbor, mesh.face_owner)
        plus = np.einsum("fqb,fb->fq", self.space.face_phi_plus, self.blocks[mesh.face_owner])
        minus = np.einsum("fqb,fb->fq", self.space.face_phi_minus, self.blocks[nbr])
        return plus, minus

    def face_normal_derivatives(self) -> tuple[np.ndarray, np.ndarray]:
        mesh = self.space.mesh
        nbr = np.where(mesh.face_neighbor >= 0, mesh.face_neighbor, mesh.face_owner)
        n = mesh.face_normal
        gp = np.einsum("fqbi,fb,fi->fq", self.space.face_grad_plus, self.blocks[mesh.face_owner], n)
        gm = np.einsum("fqbi,fb,fi->fq", self.space.face_grad_minus, self.blocks[nbr], n)
        return gp, gm

    def jumps(self) -> np.ndarray:
        """[u] at face quadrature points (owner minus neighbour; the trace on the boundary)."""
        plus, minus = self.face_traces()
        jump = plus - minus
        b = self.space.boundary
        jump[b] = plus[b]
        return jump

    # -- norms --------------------------------------------------------------

    def l2_norm(self) -> float:
        return float(np.sqrt(np.dot(self.space.mass_diagonal * self.coeffs, self.coeffs)))

    def inner(self, other: "DgField") -> float:
        return float(np.dot(self.space.mass_diagonal * self.coeffs, self._other(other)))

    def h1_seminorm(self) -> float:
        g = self.grad_at_quadrature()
        return float(np.sqrt(np.sum(self.space.weights * np.sum(g * g, axis=-1))))

    def integral(self) -> float:
        return self.space.integrate(self.at_quadrature())


def jump_and_average(field: DgField, face: int, s: float) -> tuple[float, float]:
    """Jump and average of ``field`` at parameter ``s`` in [0, 1] along ``face``."""
    mesh = field.space.mesh
    a, b = mesh.vertices[mesh.face_vertices[face]]
    x = ((1.0 - s) * a + s * b)[None, :]
    owner = mesh.face_owner[face]
    vp = field.evaluate_physical(x, np.array([owner]))[0]
    nbr = mesh.face_neighbor[face]
    if nbr < 0:
        return vp, vp
    vm = field.evaluate_physical(x, np.array([nbr]))[0]
    return vp - vm, 0.5 * (vp + vm)


def interpolate(space: DgSpace, f: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> DgField:
    """Element-local nodal interpolant of ``f(x1, x2)`` (vectorised callable)."""
    nodes = lagrange_nodes(space.degree)
    ne = space.mesh.n_elements
    phys = space.to_physical(np.arange(ne), np.broadcast_to(nodes, (ne,) + nodes.shape))
    vals = np.asarray(f(phys[..., 0], phys[..., 1]), dtype=float)
    vals = np.broadcast_to(vals, phys.shape[:-1])
    if not np.all(np.isfinite(vals)):
        raise ValueError("interpolated function is not finite at every node")
    vander = space.basis.values(nodes)  # (nn, nb)
    coeffs = np.linalg.solve(vander, vals.T).T
    return DgField(space, coeffs.ravel())


def l2_project(space: DgSpace, f: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> DgField:
    """Element-wise L2 projection of ``f`` using the element quadrature."""
    x = space.quad_points
    vals = np.broadcast_to(np.asarray(f(x[..., 0], x[..., 1]), dtype=float), x.shape[:-1])
    return DgField(space, space.load(vals) / space.mass_diagonal)
