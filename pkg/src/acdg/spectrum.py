"""Smallest Rayleigh quotient of the linearised Allen-Cahn operator.

    lambda_h = inf_psi [a_h(psi, psi) + eps^-2 (f'(w) psi, psi)] / ||psi||^2,

with f'(u) = 3u^2 - 1 and w a background field (typically the elliptic
projection of an interface profile).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import ipdg
from .dg_space import DgField, DgSpace

log = logging.getLogger(__name__)


class SpectrumError(RuntimeError):
    def __init__(self, message: str, estimate: float, residual: float):
        super().__init__(f"{message}: best estimate {estimate:.10g}, residual {residual:.3e}")
        self.estimate = estimate
        self.residual = residual


@dataclass(eq=False)
class LinearizedOperator(ipdg.AssembledForm):
    lower_bound: float = -np.inf  # valid when a_h is positive semidefinite


def linearized_operator(space: DgSpace, background: DgField, eps: float, lam: int = -1,
                        penalty=None, form: ipdg.AssembledForm | None = None) -> LinearizedOperator:
    """Matrix of a_h(psi, phi) + eps^-2 (f'(background) psi, phi)."""
    if lam != -1:
        raise ValueError("the linearised operator is assembled with the symmetric form (lam = -1)")
    if not eps > 0:
        raise ValueError("eps must be positive")
    if form is None:
        form = ipdg.assemble_a_h(space, lam, penalty)
    fprime = 3.0 * background.at_quadrature() ** 2 - 1.0
    D = np.einsum("eq,qa,qb->eab", space.weights * fprime, space.phi, space.phi) / eps**2
    matrix = (form.matrix + ipdg.block_diagonal(D)).tocsr()
    return LinearizedOperator(matrix, lam, form.penalty, form.diag_blocks + D, float(fprime.min()) / eps**2)


def gershgorin_lower_bound(A: sp.spmatrix, mass: np.ndarray) -> float:
    """Lower bound on the spectrum of the pencil (A, diag(mass))."""
    s = 1.0 / np.sqrt(mass)
    S = sp.diags(s) @ A @ sp.diags(s)
    diag = S.diagonal()
    off = np.asarray(abs(S).sum(axis=1)).ravel() - np.abs(diag)
    return float(np.min(diag - off))


def _element_blocks(A: sp.spmatrix, nb: int) -> np.ndarray:
    n = A.shape[0]
    ne = n // nb
    dm = np.arange(n).reshape(ne, nb)
    rows = np.repeat(dm, nb, axis=1).ravel()
    cols = np.tile(dm, (1, nb)).ravel()
    return np.asarray(A.tocsr()[rows, cols]).reshape(ne, nb, nb)


def smallest_rayleigh(A, mass, lower_bound: float | None = None, tol: float = 1e-8,
                      maxiter: int = 5000, seed: int = 0, x0: np.ndarray | None = None,
                      nb: int | None = None) -> tuple[float, np.ndarray, float]:
    """Smallest eigenpair of A psi = lambda M psi by shifted inverse iteration.

    ``mass`` is the diagonal of M (or a form whose matrix is diagonal). The
    shift sits just below ``lower_bound`` (Gershgorin bound if omitted) so the
    shifted matrix stays SPD and each inverse step is a preconditioned CG solve.
    Returns (lambda, psi with psi^T M psi = 1, residual) where the residual is
    ||M^-1/2 (A - lambda M) psi|| / ||M^1/2 psi||.
    """
    if isinstance(A, ipdg.AssembledForm):
        blocks, lb_hint, A = A.diag_blocks, getattr(A, "lower_bound", None), A.matrix
    else:
        blocks, lb_hint = None, None
    if isinstance(mass, ipdg.AssembledForm):
        mass = mass.matrix.diagonal()
    mass = np.asarray(mass, dtype=float)
    A = sp.csr_matrix(A)
    n = A.shape[0]
    if blocks is None:
        blocks = _element_blocks(A, nb or 1)
    nb = blocks.shape[1]

    gersh = gershgorin_lower_bound(A, mass)
    lb = lower_bound if lower_bound is not None else (lb_hint if lb_hint is not None and np.isfinite(lb_hint) else gersh)
    lb = max(lb, gersh)

    def shifted(lb):
        shift = lb - 1e-2 * max(1.0, abs(lb))
        Ms = sp.diags(mass)
        return shift, (A - shift * Ms).tocsr(), blocks - shift * mass.reshape(-1, nb)[:, :, None] * np.eye(nb)[None]

    shift, S, S_blocks = shifted(lb)

    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n) if x0 is None else np.asarray(x0, dtype=float).copy()
    x /= np.sqrt(x @ (mass * x))
    theta, res = np.inf, np.inf
    for it in range(maxiter):
        guess = x / (theta - shift) if np.isfinite(theta) else None
        y = ipdg.solve_spd(S, mass * x, S_blocks, x0=guess, rtol=1e-11)
        yMy = y @ (mass * y)
        if y @ (S @ y) <= 0 and shift > gersh:
            log.warning("shift %.6g is not below the spectrum; falling back to the Gershgorin bound", shift)
            shift, S, S_blocks = shifted(gersh)
            continue
        x = y / np.sqrt(yMy)
        Ax = A @ x
        theta = float(x @ Ax)
        r = Ax - theta * mass * x
        res = float(np.sqrt(r @ (r / mass)))
        if res <= tol:
            return theta, x, res
    raise SpectrumError("inverse iteration hit its iteration cap", theta, res)


def rayleigh_quotient(A, mass: np.ndarray, psi: np.ndarray) -> float:
    A = A.matrix if isinstance(A, ipdg.AssembledForm) else A
    return float(psi @ (A @ psi)) / float(psi @ (mass * psi))


@dataclass
class SpectrumReport:
    profile: str
    eps: float
    rows: list[tuple[float, float, float]] = field(default_factory=list)  # (h, lambda, residual)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([r[1] for r in self.rows])

    @property
    def lower_bound(self) -> float:
        """Empirical -c0: the smallest lambda over the sweep."""
        return float(self.lambdas.min())

    @property
    def spread(self) -> float:
        lam = self.lambdas
        return float(lam.max() - lam.min())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["profile", "eps", "h", "lambda_dg", "residual"])
            for h, lam, res in self.rows:
                w.writerow([self.profile, repr(self.eps), repr(h), repr(lam), repr(res)])


def sweep(background, eps: float, ns, degree: int = 1, penalty=None, profile: str = "custom",
          domain=(-1.0, 1.0, -1.0, 1.0), tol: float = 1e-8) -> SpectrumReport:
    """lambda_h on a sequence of meshes.

    ``background(space, form)`` returns the background field on each mesh.
    """
    from .mesh import build_square_mesh

    report = SpectrumReport(profile, eps)
    for n in ns:
        space = DgSpace(build_square_mesh(domain, n), degree)
        form = ipdg.assemble_a_h(space, -1, penalty)
        op = linearized_operator(space, background(space, form), eps, form=form)
        lam, _, res = smallest_rayleigh(op, space.mass_diagonal, tol=tol)
        report.rows.append((space.mesh.mesh_size, lam, res))
        log.info("spectrum n=%d h=%.4g lambda=%.8g residual=%.2e", n, space.mesh.mesh_size, lam, res)
    return report
