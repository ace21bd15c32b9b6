"""Interior penalty forms, mesh-dependent energies and the DG elliptic projection.

The bilinear form is

    a_h(u, v) = (grad u, grad v)_T - <{d_n u}, [v]>_EI + lam <[u], {d_n v}>_EI + j_h(u, v),
    j_h(u, v) = sum_e sigma_e / h_e <[u], [v]>_e,

with every face sum over interior faces only (homogeneous Neumann data is
natural). Matrices are stored row = test function, column = trial function.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dg_space import DgField, DgSpace

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Iterative linear solve did not reach its tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(eq=False)
class AssembledForm:
    matrix: sp.csr_matrix
    lam: int | None
    penalty: np.ndarray | None  # sigma_e per face
    diag_blocks: np.ndarray  # (ne, nb, nb) element blocks of ``matrix``

    def __matmul__(self, x):
        return self.matrix @ x

    @property
    def shape(self):
        return self.matrix.shape


def default_penalty(degree: int) -> float:
    return 10.0 * degree**2


def resolve_penalty(space: DgSpace, penalty=None) -> np.ndarray:
    """Per-face penalty array; scalars are broadcast, ``None`` gives 10 r^2."""
    if penalty is None:
        penalty = default_penalty(space.degree)
    sigma = np.broadcast_to(np.asarray(penalty, dtype=float), (space.mesh.n_faces,)).copy()
    if np.any(sigma[space.interior] <= 0):
        raise ValueError("penalty must be positive on every interior face")
    return sigma


# -- assembly ----------------------------------------------------------------


def _volume_stiffness(space: DgSpace) -> np.ndarray:
    return np.einsum("eq,eqai,eqbi->eab", space.weights, space.grad_phi, space.grad_phi)


def _face_blocks(space: DgSpace, lam: float, sigma: np.ndarray, consistency: float = 1.0):
    """Blocks {(s, t): (F, nb, nb)} on interior faces, s = test side, t = trial side."""
    F = space.interior
    n = space.mesh.face_normal[F]
    w = space.face_weights[F]
    pen = sigma[F] / space.mesh.face_length[F]
    phi = {1: space.face_phi_plus[F], -1: space.face_phi_minus[F]}
    dn = {
        1: np.einsum("fqbi,fi->fqb", space.face_grad_plus[F], n),
        -1: np.einsum("fqbi,fi->fqb", space.face_grad_minus[F], n),
    }
    blocks = {}
    for s in (1, -1):
        for t in (1, -1):
            # -<{d_n u},[v]>: u on side t, v on side s
            b = -0.5 * consistency * s * np.einsum("fq,fqa,fqb->fab", w, phi[s], dn[t])
            b += 0.5 * lam * t * np.einsum("fq,fqa,fqb->fab", w, dn[s], phi[t])
            b += s * t * np.einsum("f,fq,fqa,fqb->fab", pen, w, phi[s], phi[t])
            blocks[s, t] = b
    return blocks


def _assemble(space: DgSpace, volume: np.ndarray, faces: dict) -> tuple[sp.csr_matrix, np.ndarray]:
    mesh = space.mesh
    dm = space.dof_map
    nb = space.dofs_per_element
    F = space.interior
    side = {1: mesh.face_owner[F], -1: mesh.face_neighbor[F]}

    rows = [np.repeat(dm, nb, axis=1).ravel()]
    cols = [np.tile(dm, (1, nb)).ravel()]
    data = [volume.ravel()]
    diag = volume.copy()
    for (s, t), b in faces.items():
        rs, ct = dm[side[s]], dm[side[t]]
        rows.append(np.repeat(rs, nb, axis=1).ravel())
        cols.append(np.tile(ct, (1, nb)).ravel())
        data.append(b.ravel())
        if s == t:
            np.add.at(diag, side[s], b)
    N = space.total_dofs
    A = sp.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    ).tocsr()
    A.sum_duplicates()
    return A, diag


def assemble_a_h(space: DgSpace, lam: int = -1, penalty=None) -> AssembledForm:
    """Assemble a_h for ``lam`` in {-1, 0, +1}."""
    if lam not in (-1, 0, 1):
        raise ValueError(f"lam must be -1, 0 or +1, got {lam}")
    sigma = resolve_penalty(space, penalty)
    A, diag = _assemble(space, _volume_stiffness(space), _face_blocks(space, lam, sigma))
    return AssembledForm(A, lam, sigma, diag)


def assemble_dg_norm(space: DgSpace, penalty=None) -> AssembledForm:
    """Matrix of (grad u, grad v)_T + j_h(u, v), the inner product of the 1,DG norm."""
    sigma = resolve_penalty(space, penalty)
    A, diag = _assemble(space, _volume_stiffness(space), _face_blocks(space, 0.0, sigma, consistency=0.0))
    return AssembledForm(A, None, sigma, diag)


def assemble_mass(space: DgSpace) -> AssembledForm:
    """Diagonal mass matrix of the orthonormal modal basis."""
    d = space.mass_diagonal
    nb = space.dofs_per_element
    blocks = space.det[:, None, None] * np.eye(nb)[None]
    return AssembledForm(sp.diags(d).tocsr(), None, None, blocks)


def block_diagonal(blocks: np.ndarray) -> sp.csr_matrix:
    ne, nb, _ = blocks.shape
    return sp.bsr_matrix((blocks, np.arange(ne), np.arange(ne + 1)), shape=(ne * nb, ne * nb)).tocsr()


def write_matrix_market(form, path) -> None:
    """Coordinate-format dump of an assembled form (or a bare sparse matrix)."""
    scipy.io.mmwrite(str(path), form.matrix if isinstance(form, AssembledForm) else form)


# -- energies ----------------------------------------------------------------


def double_well(u):
    return 0.25 * (u * u - 1.0) ** 2


def convex_part(u):
    """F_c^+ of the splitting F = F_c^+ - F_c^-."""
    return 0.25 * (u**4 + 1.0)


def concave_part(u):
    """F_c^- of the splitting F = F_c^+ - F_c^-."""
    return 0.5 * u * u


def jump_penalty(u: DgField, penalty=None) -> float:
    space = u.space
    sigma = resolve_penalty(space, penalty)
    F = space.interior
    plus, minus = u.face_traces()
    jump = (plus - minus)[F]
    return float(np.sum(sigma[F] / space.mesh.face_length[F] * np.sum(space.face_weights[F] * jump**2, axis=1)))


def energy_phi(u: DgField, penalty=None) -> float:
    """Phi^h(u) = 1/2 |grad u|^2 - <{d_n u}, [u]> + 1/2 j_h(u, u)."""
    space = u.space
    F = space.interior
    plus, minus = u.face_traces()
    gp, gm = u.face_normal_derivatives()
    consistency = np.sum(space.face_weights[F] * 0.5 * (gp + gm)[F] * (plus - minus)[F])
    return 0.5 * u.h1_seminorm() ** 2 - float(consistency) + 0.5 * jump_penalty(u, penalty)


def potential(u: DgField, F: Callable = double_well) -> float:
    """(F(u), 1)_T by element quadrature."""
    return u.space.integrate(F(u.at_quadrature()))


def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")


def energy_J(u: DgField, eps: float, penalty=None) -> float:
    _check_eps(eps)
    return energy_phi(u, penalty) + potential(u, double_well) / eps**2


def energy_I(u: DgField, eps: float, penalty=None) -> float:
    _check_eps(eps)
    return energy_phi(u, penalty) + potential(u, convex_part) / eps**2


def dg_norm(u: DgField, penalty=None) -> float:
    """||u||_{1,DG} = (|grad u|^2 + j_h(u, u))^(1/2)."""
    return float(np.sqrt(u.h1_seminorm() ** 2 + jump_penalty(u, penalty)))


# -- linear algebra ------------------------------------------------------------


def block_jacobi(blocks: np.ndarray) -> spla.LinearOperator:
    inv = np.linalg.inv(blocks)
    ne, nb, _ = blocks.shape

    def apply(x):
        return np.einsum("eab,eb->ea", inv, x.reshape(ne, nb)).ravel()

    return spla.LinearOperator((ne * nb, ne * nb), matvec=apply, dtype=float)


def solve_spd(A, b: np.ndarray, blocks: np.ndarray, x0=None, rtol: float = 1e-10, maxiter: int | None = None) -> np.ndarray:
    """Block-Jacobi preconditioned CG; raises :class:`SolverError` on failure."""
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    maxiter = maxiter or max(1000, 100 * int(np.sqrt(len(b))))
    counter = [0]

    def count(_):
        counter[0] += 1

    x, info = spla.cg(A, b, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=block_jacobi(blocks), callback=count)
    res = np.linalg.norm(b - A @ x) / bnorm
    if info != 0 and res > 10 * rtol:
        raise SolverError("conjugate gradients did not converge", res, counter[0])
    return x


# -- elliptic projection -------------------------------------------------------


def _fd_gradient(f, x1, x2, step=1e-6):
    g1 = (f(x1 + step, x2) - f(x1 - step, x2)) / (2 * step)
    g2 = (f(x1, x2 + step) - f(x1, x2 - step)) / (2 * step)
    return np.stack([g1, g2], axis=-1)


def projection_rhs(space: DgSpace, v, form: AssembledForm, grad: Callable | None = None) -> np.ndarray:
    """Vector a_h(v, phi_i) + (v, phi_i).

    ``v`` is a :class:`DgField` or a smooth vectorised callable ``v(x1, x2)``;
    for callables the jumps vanish and ``grad`` (or central differences)
    supplies the gradient.
    """
    if isinstance(v, DgField):
        return form.matrix @ v.coeffs + space.mass_diagonal * v.coeffs
    x = space.quad_points
    vals = np.broadcast_to(np.asarray(v(x[..., 0], x[..., 1]), dtype=float), x.shape[:-1])
    g = grad(x[..., 0], x[..., 1]) if grad else _fd_gradient(v, x[..., 0], x[..., 1])
    rhs = space.load(vals)
    rhs += np.einsum("eq,eqi,eqbi->eb", space.weights, g, space.grad_phi).ravel()

    mesh = space.mesh
    F = space.interior
    xf = space.face_points[F]
    gf = grad(xf[..., 0], xf[..., 1]) if grad else _fd_gradient(v, xf[..., 0], xf[..., 1])
    dn = np.einsum("fqi,fi->fq", gf, mesh.face_normal[F]) * space.face_weights[F]
    # -<d_n v, [phi]>: + on owner, - on neighbour
    out = rhs.reshape(mesh.n_elements, -1)
    np.add.at(out, mesh.face_owner[F], -np.einsum("fq,fqb->fb", dn, space.face_phi_plus[F]))
    np.add.at(out, mesh.face_neighbor[F], np.einsum("fq,fqb->fb", dn, space.face_phi_minus[F]))
    return out.ravel()


def elliptic_projection(space: DgSpace, v, lam: int = -1, penalty=None, form: AssembledForm | None = None,
                        grad: Callable | None = None, rtol: float = 1e-12) -> DgField:
    """P_r^h v: solves a_h(v - p, w) + (v - p, w) = 0 for all w in V_h."""
    if form is None:
        form = assemble_a_h(space, lam, penalty)
    if form.lam != -1:
        raise ValueError("elliptic projection uses the symmetric form (lam = -1)")
    rhs = projection_rhs(space, v, form, grad)
    system = form.matrix + sp.diags(space.mass_diagonal)
    blocks = form.diag_blocks + space.det[:, None, None] * np.eye(space.dofs_per_element)
    p = solve_spd(system, rhs, blocks, rtol=rtol)
    res = np.linalg.norm(system @ p - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if res > 1e-10:
        raise SolverError("elliptic projection residual too large", res, -1)
    return DgField(space, p)
