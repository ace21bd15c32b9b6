"""Experiment orchestration: single runs, convergence tables, energy checks,
spectrum sweeps and shrinking-circle interface tracking.

Runs are described by small frozen dataclasses so they can be shipped to
worker processes; results come back as plain arrays.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ipdg, postprocess, spectrum, testcases
from .dg_space import DgField, DgSpace
from .mesh import build_square_mesh, write_vtk
from .timestepper import RunError, SchemeConfig, Stepper

log = logging.getLogger(__name__)

DOMAIN = (-1.0, 1.0, -1.0, 1.0)
TESTS = ("test1", "test2", "circle", "manufactured")


@dataclass(frozen=True)
class RunSpec:
    test: str
    n: int
    k: float
    eps: float
    T: float
    degree: int = 1
    lam: int = -1
    penalty: float | None = None
    init: str = "interpolant"
    newton_tol: float = 1e-10
    r0: float = 0.5
    symmetrized: bool = False

    def __post_init__(self):
        if self.test not in TESTS:
            raise ValueError(f"unknown test {self.test!r}; choose from {', '.join(TESTS)}")

    def space(self) -> DgSpace:
        return DgSpace(build_square_mesh(DOMAIN, self.n), self.degree)

    def config(self) -> SchemeConfig:
        return SchemeConfig(self.eps, self.k, self.T, self.degree, self.lam, self.penalty,
                            newton_tol=self.newton_tol, init=self.init)

    def initial_data(self):
        return testcases.initial_data(self.test, self.eps, self.r0, self.symmetrized)


@dataclass
class RunOutcome:
    spec: RunSpec
    captured: dict[int, np.ndarray] = field(default_factory=dict)  # step -> coefficients
    energy: list[tuple] = field(default_factory=list)
    max_newton: int = 0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def execute(run: RunSpec, capture_every: Sequence[int] = (1,)) -> RunOutcome:
    """Run ``run`` and keep the coefficients of every step divisible by one of ``capture_every``."""
    out = RunOutcome(run)
    space = run.space()
    stepper = Stepper(space, run.config())

    def keep(m, t, u):
        if any(m % c == 0 for c in capture_every):
            out.captured[m] = u.coeffs.copy()

    try:
        res = stepper.run(run.initial_data(), callback=keep, keep_steps=True)
    except RunError as exc:
        out.error = f"{type(exc.__cause__).__name__ if exc.__cause__ else 'RunError'}: {exc}"
        out.energy = [astuple_record(r) for r in exc.trace.records]
        return out
    out.energy = [astuple_record(r) for r in res.trace.records]
    out.max_newton = max((s.iterations for s in res.steps), default=0)
    return out


def astuple_record(r) -> tuple:
    return (r.step, r.time, r.phi, r.potential, r.J, r.I, r.dissipation)


def _map(func, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(*it) for it in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        futures = [pool.submit(func, *it) for it in items]
        return [f.result() for f in futures]


def coupled_k(n: int, coupling: float) -> float:
    h = build_square_mesh(DOMAIN, n).mesh_size
    return coupling * h * h


def _steps(T: float, k: float) -> int:
    m = round(T / k)
    if m < 1 or abs(m * k - T) > 1e-9 * T:
        raise ValueError(f"T = {T} is not a multiple of k = {k}")
    return m


# -- convergence tables -------------------------------------------------------------


@dataclass
class ConvergenceRow:
    n: int
    h: float
    k: float
    linf_l2: float = math.nan
    l2_h1: float = math.nan
    linf_l2_order: float = math.nan
    l2_h1_order: float = math.nan
    valid: bool = True
    note: str = ""


@dataclass
class ConvergenceTable:
    test: str
    eps: float
    reference_n: int
    reference_k: float
    rows: list[ConvergenceRow]

    def fill_orders(self) -> None:
        for prev, row in zip(self.rows, self.rows[1:]):
            if prev.valid and row.valid:
                scale = math.log(prev.h / row.h)
                row.linf_l2_order = math.log(prev.linf_l2 / row.linf_l2) / scale
                row.l2_h1_order = math.log(prev.l2_h1 / row.l2_h1) / scale

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["h", "Linf_L2_error", "Linf_L2_order", "L2_H1_error", "L2_H1_order", "n", "k", "valid", "note"])
            for r in self.rows:
                w.writerow([repr(r.h), _fmt(r.linf_l2), _fmt(r.linf_l2_order), _fmt(r.l2_h1), _fmt(r.l2_h1_order),
                            r.n, repr(r.k), int(r.valid), r.note])


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else repr(x)


def convergence_study(base: RunSpec, ns: Sequence[int], ks: Sequence[float] | None = None,
                      coupling: float = 0.25, refine: int = 2, k_refine: int = 4,
                      workers: int = 1) -> ConvergenceTable:
    """Self-convergence against the same scheme on a finer mesh and smaller step.

    The reference uses n_ref = refine * max(ns) and k_ref = k_finest / k_refine.
    A failed run marks its row invalid without aborting the table.
    """
    ns = list(ns)
    if len(ns) < 3:
        raise ValueError("a convergence study needs at least three meshes")
    ks = list(ks) if ks is not None else [coupled_k(n, coupling) for n in ns]
    if len(ks) != len(ns):
        raise ValueError("need one time step per mesh")
    n_ref = refine * max(ns)
    k_ref = ks[ns.index(max(ns))] / k_refine
    ratios = []
    for k in ks:
        r = round(k / k_ref)
        if abs(r * k_ref - k) > 1e-9 * k:
            raise ValueError(f"k = {k} is not a multiple of the reference step {k_ref}")
        ratios.append(r)
        _steps(base.T, k)
    _steps(base.T, k_ref)

    runs = [(replace(base, n=n, k=k), (1,)) for n, k in zip(ns, ks)]
    runs.append((replace(base, n=n_ref, k=k_ref), tuple(sorted(set(ratios)))))
    outcomes = _map(execute, runs, workers)
    ref_out = outcomes[-1]

    table = ConvergenceTable(base.test, base.eps, n_ref, k_ref, [])
    ref_space = replace(base, n=n_ref).space()
    for (run, _), out, ratio in zip(runs[:-1], outcomes[:-1], ratios):
        space = run.space()
        row = ConvergenceRow(run.n, space.mesh.mesh_size, run.k)
        if not out.ok or not ref_out.ok:
            row.valid = False
            row.note = out.error or f"reference failed: {ref_out.error}"
        else:
            M = _steps(run.T, run.k)
            numeric = [DgField(space, out.captured[m]) for m in range(M + 1)]
            reference = [DgField(ref_space, ref_out.captured[m * ratio]) for m in range(M + 1)]
            norms = postprocess.error_norms(numeric, reference, run.k, run.penalty)
            row.linf_l2, row.l2_h1 = norms.linf_l2, norms.l2_h1
        table.rows.append(row)
    table.fill_orders()
    return table


# -- energy ---------------------------------------------------------------------------


@dataclass
class EnergyCheck:
    n: int
    k: float
    max_increase: float  # max_m (J^{m+1} - J^m) / (1 + |J^m|)
    max_newton: int
    records: list[tuple]
    error: str | None = None

    @property
    def decreasing(self) -> bool:
        return self.error is None and self.max_increase <= 1e-10


def energy_study(base: RunSpec, ns: Sequence[int], ks: Sequence[float], workers: int = 1) -> list[EnergyCheck]:
    runs = [(replace(base, n=n, k=k), (10**12,)) for n in ns for k in ks]
    checks = []
    for (run, _), out in zip(runs, _map(execute, runs, workers)):
        J = np.array([r[4] for r in out.energy])
        rel = np.diff(J) / (1.0 + np.abs(J[:-1])) if len(J) > 1 else np.array([-np.inf])
        checks.append(EnergyCheck(run.n, run.k, float(rel.max()), out.max_newton, out.energy, out.error))
    return checks


ENERGY_COLUMNS = ["step", "time", "phi", "potential", "J", "I", "dissipation"]


def write_energy_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ENERGY_COLUMNS)
        for r in records:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])


# -- spectrum -------------------------------------------------------------------------


def spectrum_study(test: str, eps: float, ns: Sequence[int], degree: int = 1, penalty=None, r0: float = 0.5,
                   symmetrized: bool = False) -> spectrum.SpectrumReport:
    """lambda_h with the elliptic projection of the initial profile as background."""
    u0 = testcases.initial_data(test, eps, r0, symmetrized)

    def background(space, form):
        return ipdg.elliptic_projection(space, u0, form=form)

    return spectrum.sweep(background, eps, ns, degree, penalty, profile=test, domain=DOMAIN)


# -- shrinking circle ---------------------------------------------------------------------


@dataclass
class InterfaceRow:
    eps: float
    t: float
    exact_radius: float
    measured_radius: float
    sup_distance: float
    extinct: bool


def interface_study(base: RunSpec, eps_values: Sequence[float], times: Sequence[float],
                    out_dir: Path | None = None) -> list[InterfaceRow]:
    """Track the zero level set of a shrinking circle against r(t) = sqrt(r0^2 - 2t)."""
    ref = postprocess.McfReference.circle(base.r0)
    rows = []
    for eps in eps_values:
        run = replace(base, test="circle", eps=eps, T=max(times))
        space = run.space()
        result = Stepper(space, run.config()).run(run.initial_data(), snapshots=times)
        curves = []
        for t in sorted(result.snapshots):
            curve = postprocess.extract_zero_level_set(postprocess.node_average(result.snapshots[t]), t)
            curves.append(curve)
            d = postprocess.interface_distance(curve, ref, t)
            exact = ref.radius(t) if t < ref.extinction_time else 0.0
            rows.append(InterfaceRow(eps, t, exact, math.nan if curve.empty else curve.mean_radius(),
                                     d.distance, d.extinct))
        if out_dir is not None:
            postprocess.write_curves_csv(curves, out_dir / f"levelset_eps{eps:g}.csv")
            for i, c in enumerate(curves):
                c.to_vtk(out_dir / f"levelset_eps{eps:g}_{i:03d}.vtk")
    return rows


def write_interface_csv(rows: Sequence[InterfaceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["eps", "t", "exact_radius", "measured_radius", "sup_distance", "extinct"])
        for r in rows:
            w.writerow([repr(r.eps), repr(r.t), repr(r.exact_radius), _fmt(r.measured_radius),
                        _fmt(r.sup_distance), int(r.extinct)])


# -- snapshots ----------------------------------------------------------------------------


def write_snapshot_vtk(u: DgField, path) -> None:
    """Vertex values of the nodal average and element means."""
    avg = postprocess.node_average(u)
    means = u.space.integrate_elements(u.at_quadrature()) / u.space.mesh.element_areas
    write_vtk(u.space.mesh, path, point_data={"u": avg.vertex_values}, cell_data={"u_mean": means})


# -- manifests ----------------------------------------------------------------------------


def write_manifest(path, entries: dict) -> None:
    with open(path, "w") as fh:
        for key, value in entries.items():
            fh.write(f"{key}={_manifest_value(value)}\n")


def _manifest_value(v) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(_manifest_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def read_key_values(path) -> dict[str, str]:
    """Flat key=value file; blank lines and lines starting with '#' are ignored."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def run_spec_entries(run: RunSpec) -> dict:
    return {f.name: getattr(run, f.name) for f in fields(run)}
