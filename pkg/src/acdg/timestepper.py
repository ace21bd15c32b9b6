"""Modified Crank-Nicolson IPDG time stepping for the Allen-Cahn equation.

One step solves, for u = u^{m+1} given u^m,

    M (u - u^m) / k + A (u + u^m) / 2 + eps^-2 N(u, u^m) = 0,

where N is the quadrature load vector of the secant nonlinearity
f(a, b) = (F(a) - F(b)) / (a - b). The system is the gradient of the
convex-splitting functional ``merit``, which is used as a line-search merit
function for Newton's method while k < 2 eps^2.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse.linalg as spla

from . import ipdg
from .dg_space import DgField, DgSpace, interpolate

log = logging.getLogger(__name__)


def secant_nonlinearity(a, b):
    """f^{m+1}(a, b) = 1/4 (a^3 + a^2 b + a b^2 + b^3) - (a + b) / 2."""
    return 0.25 * (a**3 + a * a * b + a * b * b + b**3) - 0.5 * (a + b)


def secant_derivative(a, b):
    """Partial derivative of the secant nonlinearity in its first argument."""
    return 0.25 * (3 * a * a + 2 * a * b + b * b) - 0.5


def convex_secant_antiderivative(a, b):
    """F_+(a, b): antiderivative in ``a`` of (F_c^+(a) - F_c^+(b)) / (a - b)."""
    return a**4 / 16 + a**3 * b / 12 + a * a * b * b / 8 + a * b**3 / 4


class NewtonError(RuntimeError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(f"{message}; residual history {['%.3e' % r for r in history]}")
        self.history = history


class RunError(RuntimeError):
    """A step failed; ``trace`` and ``field`` hold the state reached so far."""

    def __init__(self, message: str, trace: "EnergyTrace", field: DgField, step: int):
        super().__init__(f"step {step}: {message}")
        self.trace = trace
        self.field = field
        self.step = step


@dataclass
class SchemeConfig:
    eps: float
    k: float
    T: float
    degree: int = 1
    lam: int = -1
    penalty: float | None = None
    newton_tol: float = 1e-10
    newton_atol: float = 1e-12
    newton_max_iter: int = 25
    init: str = "interpolant"  # or "elliptic-projection"
    linear_rtol: float = 1e-12

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not self.k > 0:
            raise ValueError(f"time step must be positive, got {self.k}")
        if not self.T >= self.k * (1 - 1e-12):
            raise ValueError(f"final time {self.T} is shorter than one step {self.k}")
        if self.init not in ("interpolant", "elliptic-projection"):
            raise ValueError(f"unknown initial data mode {self.init!r}")
        if self.penalty is None:
            self.penalty = ipdg.default_penalty(self.degree)
        if not self.unique:
            warnings.warn(
                f"k={self.k:g} >= 2 eps^2={2 * self.eps**2:g}: step solutions may not be unique",
                stacklevel=2,
            )

    @property
    def unique(self) -> bool:
        """Whether k < 2 eps^2, the regime in which each step has a unique solution."""
        return self.k < 2 * self.eps**2

    @property
    def n_steps(self) -> int:
        return max(1, math.ceil(self.T / self.k - 1e-9))


@dataclass
class EnergyRecord:
    step: int
    time: float
    phi: float
    potential: float
    J: float
    I: float
    dissipation: float  # d_t J, nan at step 0


@dataclass
class EnergyTrace:
    eps: float
    records: list[EnergyRecord] = field(default_factory=list)

    def append(self, step: int, time: float, phi: float, potential: float, I_val: float) -> EnergyRecord:
        J = phi + potential / self.eps**2
        if self.records:
            prev = self.records[-1]
            diss = (J - prev.J) / (time - prev.time)
        else:
            diss = float("nan")
        rec = EnergyRecord(step, time, phi, potential, J, I_val, diss)
        self.records.append(rec)
        return rec

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def J(self) -> np.ndarray:
        return self.column("J")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "time", "phi", "potential", "J", "I", "dissipation"])
            for r in self.records:
                w.writerow([r.step, repr(r.time), repr(r.phi), repr(r.potential), repr(r.J), repr(r.I), repr(r.dissipation)])


@dataclass
class StepResult:
    field: DgField
    iterations: int
    residual: float
    history: list[float]
    mass_change: float  # (u^{m+1} - u^m, 1)
    reaction: float  # (f^{m+1}, 1)
    energy: EnergyRecord | None = None


@dataclass
class RunResult:
    final: DgField
    trace: EnergyTrace
    snapshots: dict[float, DgField]
    steps: list[StepResult]
    shortened_last_step: bool = False


class Stepper:
    """Owns the assembled forms of one (space, config) pair."""

    def __init__(self, space: DgSpace, config: SchemeConfig, form: ipdg.AssembledForm | None = None):
        if space.degree != config.degree:
            raise ValueError("space degree does not match config")
        self.space = space
        self.config = config
        self.form = form if form is not None else ipdg.assemble_a_h(space, config.lam, config.penalty)
        self.A = self.form.matrix
        self.mass = space.mass_diagonal
        self._one = space.constant(1.0).coeffs

    # -- pieces of the nonlinear system ---------------------------------------

    def _quad(self, c: np.ndarray) -> np.ndarray:
        return c.reshape(self.space.mesh.n_elements, -1) @ self.space.phi.T

    def nonlinear_load(self, u: np.ndarray, um: np.ndarray) -> np.ndarray:
        return self.space.load(secant_nonlinearity(self._quad(u), self._quad(um)))

    def residual(self, u: np.ndarray, um: np.ndarray, k: float | None = None) -> np.ndarray:
        k = k or self.config.k
        eps2 = self.config.eps**2
        return self.mass * (u - um) / k + 0.5 * (self.A @ (u + um)) + self.nonlinear_load(u, um) / eps2

    def jacobian(self, u: np.ndarray, um: np.ndarray, k: float | None = None):
        """Linear operator and element blocks of dR/du."""
        k = k or self.config.k
        sp_ = self.space
        eps2 = self.config.eps**2
        g = secant_derivative(self._quad(u), self._quad(um))
        D = np.einsum("eq,qa,qb->eab", sp_.weights * g, sp_.phi, sp_.phi) / eps2
        D += sp_.det[:, None, None] * np.eye(sp_.dofs_per_element)[None] / k
        ne, nb, _ = D.shape

        def matvec(x):
            return 0.5 * (self.A @ x) + np.einsum("eab,eb->ea", D, x.reshape(ne, nb)).ravel()

        op = spla.LinearOperator((ne * nb, ne * nb), matvec=matvec, dtype=float)
        return op, D + 0.5 * self.form.diag_blocks

    def merit(self, u: np.ndarray, um: np.ndarray, k: float | None = None) -> float:
        """Convex-splitting functional whose gradient is :meth:`residual`.

        Requires the symmetric form (lam = -1); convex when k < 2 eps^2.
        """
        k = k or self.config.k
        eps2 = self.config.eps**2
        Au = self.A @ u
        Mu = self.mass * u
        Fp = self.space.integrate(convex_secant_antiderivative(self._quad(u), self._quad(um)))
        return float(
            0.25 * u @ Au
            + Fp / eps2
            + (0.5 / k - 0.25 / eps2) * (u @ Mu)
            + 0.5 * (um @ Au)
            - (0.5 / eps2 + 1.0 / k) * (um @ Mu)
        )

    # -- one step ---------------------------------------------------------------

    def step(self, um: DgField, k: float | None = None, guess: np.ndarray | None = None) -> StepResult:
        cfg = self.config
        k = k or cfg.k
        u_old = um.coeffs
        u = (u_old if guess is None else np.asarray(guess, dtype=float)).copy()
        safeguard = cfg.lam == -1 and k < 2 * cfg.eps**2

        R = self.residual(u, u_old, k)
        r0 = float(np.linalg.norm(R))
        history = [r0]
        target = max(cfg.newton_tol * r0, cfg.newton_atol)
        J_cur = self.merit(u, u_old, k) if safeguard else None
        it = 0
        while history[-1] > target:
            if it >= cfg.newton_max_iter:
                raise NewtonError(f"Newton did not converge in {it} iterations", history)
            it += 1
            op, blocks = self.jacobian(u, u_old, k)
            delta = ipdg.solve_spd(op, -R, blocks, rtol=cfg.linear_rtol) if safeguard else _solve_general(op, -R, blocks, cfg.linear_rtol)
            alpha = 1.0
            for _ in range(40):
                trial = u + alpha * delta
                R_trial = self.residual(trial, u_old, k)
                r_trial = float(np.linalg.norm(R_trial))
                if safeguard:
                    J_trial = self.merit(trial, u_old, k)
                    slack = 1e-13 * (abs(J_cur) + 1.0)
                    if J_trial <= J_cur + slack or r_trial <= target:
                        J_cur = J_trial
                        break
                elif r_trial < history[-1] or r_trial <= target:
                    break
                alpha *= 0.5
            else:
                raise NewtonError("line search failed to decrease the merit function", history)
            u, R = trial, R_trial
            history.append(r_trial)

        reaction = self.space.integrate(secant_nonlinearity(self._quad(u), self._quad(u_old)))
        mass_change = float(self._one @ (self.mass * (u - u_old)))
        return StepResult(DgField(self.space, u), it, history[-1], history, mass_change, reaction)

    # -- trajectories -------------------------------------------------------------

    def initial_field(self, u0) -> DgField:
        if isinstance(u0, DgField):
            return u0.copy()
        if self.config.init == "elliptic-projection":
            return ipdg.elliptic_projection(self.space, u0, form=self.form if self.form.lam == -1 else None,
                                            penalty=self.config.penalty)
        return interpolate(self.space, u0)

    def energy_record(self, trace: EnergyTrace, m: int, t: float, u: DgField) -> EnergyRecord:
        phi = ipdg.energy_phi(u, self.config.penalty)
        uq = u.at_quadrature()
        pot = self.space.integrate(ipdg.double_well(uq))
        pot_c = self.space.integrate(ipdg.convex_part(uq))
        return trace.append(m, t, phi, pot, phi + pot_c / self.config.eps**2)

    def run(self, u0, snapshots: Sequence[float] = (), callback: Callable | None = None,
            keep_steps: bool = False) -> RunResult:
        """Advance from ``u0`` to ``config.T``.

        ``snapshots`` are returned as copies, linearly interpolated in time when
        they fall between steps. ``callback(m, t, field)`` runs after every step,
        including m = 0.
        """
        cfg = self.config
        u = self.initial_field(u0)
        n = cfg.n_steps
        shortened = abs(n * cfg.k - cfg.T) > 1e-9 * cfg.T
        if shortened:
            log.warning("T/k = %g is not an integer; the last step is shortened", cfg.T / cfg.k)
        trace = EnergyTrace(cfg.eps)
        self.energy_record(trace, 0, 0.0, u)
        wanted = sorted(float(s) for s in snapshots)
        for s in wanted:
            if s < -1e-12 or s > cfg.T * (1 + 1e-12):
                raise ValueError(f"snapshot time {s} outside [0, {cfg.T}]")
        snaps: dict[float, DgField] = {}
        tol = 1e-9 * max(cfg.T, cfg.k)
        for s in wanted:
            if abs(s) <= tol:
                snaps[s] = u.copy()
        if callback:
            callback(0, 0.0, u)

        steps = []
        t = 0.0
        for m in range(n):
            k = cfg.k if m < n - 1 else cfg.T - (n - 1) * cfg.k
            try:
                res = self.step(u, k)
            except (NewtonError, ipdg.SolverError) as exc:
                raise RunError(str(exc), trace, u, m + 1) from exc
            t_new = cfg.T if m == n - 1 else (m + 1) * cfg.k
            res.energy = self.energy_record(trace, m + 1, t_new, res.field)
            for s in wanted:
                if s not in snaps and s <= t_new + tol:
                    theta = min(1.0, max(0.0, (s - t) / (t_new - t)))
                    snaps[s] = DgField(self.space, (1 - theta) * u.coeffs + theta * res.field.coeffs)
            u, t = res.field, t_new
            if keep_steps:
                steps.append(res)
            if callback:
                callback(m + 1, t, u)
        return RunResult(u, trace, snaps, steps, shortened)


def _solve_general(op, b, blocks, rtol):
    """Step equation outside the convex regime: the Jacobian may be indefinite."""
    precond = ipdg.block_jacobi(blocks)
    x, info = spla.gmres(op, b, rtol=rtol, atol=0.0, restart=100, maxiter=200, M=precond)
    if info != 0:
        res = np.linalg.norm(b - op @ x) / max(np.linalg.norm(b), 1e-300)
        if res > 1e3 * rtol:
            raise ipdg.SolverError("GMRES did not converge", res, -1)
    return x


def convex_splitting_energy(candidate: DgField, previous: DgField, config: SchemeConfig,
                            form: ipdg.AssembledForm | None = None) -> float:
    """Value of the convex-splitting functional at ``candidate`` given ``previous``."""
    if not config.unique:
        warnings.warn("k >= 2 eps^2: the splitting functional is not convex", stacklevel=2)
    return Stepper(candidate.space, config, form).merit(candidate.coeffs, previous.coeffs)


def run(u0, space: DgSpace, config: SchemeConfig, snapshots: Sequence[float] = (), **kwargs) -> RunResult:
    return Stepper(space, config).run(u0, snapshots, **kwargs)
