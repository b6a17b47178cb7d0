"""Energy drift, constraint audits, flow-map symplecticity and convergence order."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .core import IndexOneSystem, PhaseState, canonical_matrix, finite_difference_jacobian, manifold_multipliers
from .errors import IndexOneError
from .integrators import (
    ButcherTableau,
    SolverConfig,
    Trajectory,
    gauss_tableau,
    integrate,
    make_stepper,
    place_on_manifold,
)
from .vakonomic import velocity

FLOW_FD_STEP = 1e-6


# ---------------------------------------------------------------- energy


def energy_error_series(system: IndexOneSystem, traj: Trajectory) -> np.ndarray:
    """``H(z_i) - H(z_0)`` for every stored state."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    H = np.array([system.hamiltonian(z) for z in traj.states])
    return H - H[0]


@dataclass
class EnergyReport:
    max_abs: float
    first_half_max: float
    second_half_max: float
    bounded: bool
    series: list = field(default_factory=list, repr=False)

    def to_dict(self, include_series: bool = True) -> dict:
        out = asdict(self)
        if not include_series:
            out.pop("series")
        return out


def energy_report(system: IndexOneSystem, traj: Trajectory, growth_factor: float = 2.0) -> EnergyReport:
    """Split ``|dH|`` at the midpoint of the run.

    ``bounded`` means the second-half maximum is at most ``growth_factor``
    times the first-half maximum, which excludes linear drift.
    """
    dH = energy_error_series(system, traj)
    a = np.abs(dH)
    half = len(a) // 2
    first = float(a[: half + 1].max())
    second = float(a[half:].max())
    return EnergyReport(
        max_abs=float(a.max()),
        first_half_max=first,
        second_half_max=second,
        bounded=bool(second <= growth_factor * first) if first > 0 else bool(second == 0.0),
        series=dH.tolist(),
    )


# ---------------------------------------------------------------- symplecticity


def symplecticity_defect(A) -> float:
    """Infinity norm (max row sum) of ``A^T J A - J`` for the canonical ``J``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if A.shape[0] % 2:
        raise ValueError(f"symplecticity defect needs an even dimension, got {A.shape[0]}")
    J = canonical_matrix(A.shape[0] // 2)
    return float(np.linalg.norm(A.T @ J @ A - J, ord=np.inf))


def _flow(system, z0, tableau, config, n_steps):
    stepper = make_stepper(system, tableau, config)
    z = z0
    for _ in range(n_steps):
        z = stepper.step(z)
    return z


def flow_map_jacobian(
    system: IndexOneSystem,
    z0,
    tableau: ButcherTableau,
    config: SolverConfig,
    n_steps: int,
    h: float = FLOW_FD_STEP,
) -> np.ndarray:
    """Central-difference Jacobian of ``(q0, p0) -> (q_n, p_n)``.

    Multipliers are re-solved at every perturbed start, so the map lives on
    the constraint manifold.  The perturbation of component ``j`` is
    ``h * max(1, |z_j|)``.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    d = system.dims
    z0 = place_on_manifold(system, z0, config)
    size = 2 * d.n
    if n_steps == 0:
        return np.eye(size)
    if d.l:
        raise ValueError("flow_map_jacobian handles systems without holonomic constraints; use holonomic_flow_jacobian")

    def start(qp):
        z = z0.copy()
        z[d.qp] = qp
        if d.k:
            z[d.lam] = manifold_multipliers(system, qp[: d.n], qp[d.n :], z0[d.lam], tol=config.newton_tol, fd_step=config.fd_step)
        return z

    base = z0[d.qp]
    A = np.empty((size, size))
    for j in range(size):
        step = h * max(1.0, abs(base[j]))
        cols = []
        for sign in (1.0, -1.0):
            qp = base.copy()
            qp[j] += sign * step
            try:
                zn = _flow(system, start(qp), tableau, config, n_steps)
            except IndexOneError as exc:
                name = ("q" if j < d.n else "p") + f"[{j % d.n}]"
                exc.args = (f"flow map failed under perturbation of {name} ({'+' if sign > 0 else '-'}): {exc}",)
                exc.component = name
                raise
            cols.append(zn[d.qp])
        A[:, j] = (cols[0] - cols[1]) / (2.0 * step)
    return A


def holonomic_flow_jacobian(system, z0, config: SolverConfig, n_steps: int, h: float = FLOW_FD_STEP):
    """RATTLE flow derivative along the tangent space of the constraint manifold.

    The manifold is ``h(q) = 0`` together with its hidden constraint
    ``grad_h(q) qdot = 0``.  Returns ``(A, B)`` where the columns of ``B`` are
    an orthonormal tangent basis at the start and ``A = D(flow) B``; the map
    is symplectic on the manifold iff ``A^T J A = B^T J B``.
    """
    d = system.dims
    z0 = np.asarray(z0.to_vector() if isinstance(z0, PhaseState) else z0, dtype=float)
    stepper = make_stepper(system, gauss_tableau(1), config)

    def constraint_map(qp):
        q, p = qp[: d.n], qp[d.n :]
        qdot = system.gradient(np.concatenate([q, p, np.zeros(d.k + d.l)]))[d.p]
        return np.concatenate([system.holonomic_values(q), system.holonomic_jacobian(q) @ qdot])

    C = finite_difference_jacobian(constraint_map, z0[d.qp], 1e-7)
    B = np.linalg.svd(C)[2][2 * d.l :].T
    A = np.empty((2 * d.n, B.shape[1]))
    for j in range(B.shape[1]):
        cols = []
        for sign in (1.0, -1.0):
            w = z0.copy()
            w[d.qp] += sign * h * B[:, j]
            for _ in range(n_steps):
                w = stepper.step(w)
            cols.append(w[d.qp])
        A[:, j] = (cols[0] - cols[1]) / (2.0 * h)
    return A, B


@dataclass
class SymplecticityReport:
    n_steps: int
    fd_step: float
    defect: float
    column_scale: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def symplecticity_report(
    system: IndexOneSystem,
    z0,
    tableau: ButcherTableau,
    config: SolverConfig,
    n_steps: int,
    h: float = FLOW_FD_STEP,
) -> SymplecticityReport:
    """Flow-map defect plus the per-column perturbation sizes used.

    For systems with holonomic constraints the defect is measured on the
    tangent space of the constraint manifold.
    """
    d = system.dims
    if d.l:
        A, B = holonomic_flow_jacobian(system, z0, config, n_steps, h)
        J = canonical_matrix(d.n)
        defect = float(np.linalg.norm(A.T @ J @ A - B.T @ J @ B, ord=np.inf))
        return SymplecticityReport(n_steps, h, defect, [h] * B.shape[1])
    A = flow_map_jacobian(system, z0, tableau, config, n_steps, h)
    base = place_on_manifold(system, z0, config)[d.qp]
    scales = [h * max(1.0, abs(v)) for v in base]
    return SymplecticityReport(n_steps, h, symplecticity_defect(A), scales)


# ---------------------------------------------------------------- convergence


def fit_order(dts: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of ``log(error)`` against ``log(dt)``."""
    dts = np.asarray(dts, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if dts.size < 2 or dts.size != errors.size:
        raise ValueError("need at least two (dt, error) pairs to fit an order")
    if not (np.all(errors > 0) and np.all(np.isfinite(errors)) and np.all(dts > 0)):
        raise ValueError("step sizes and errors must be positive and finite")
    x, y = np.log(dts), np.log(errors)
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


@dataclass
class ConvergenceReport:
    dts: list
    errors: list
    order: Optional[float]
    reference_dt: Optional[float] = None
    failures: list = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return not self.failures

    def table(self) -> list:
        return [{"dt": dt, "error": e} for dt, e in zip(self.dts, self.errors)]

    def to_dict(self) -> dict:
        out = {"dts": list(self.dts), "errors": list(self.errors), "order": self.order}
        if self.reference_dt is not None:
            out["reference_dt"] = self.reference_dt
        if self.failures:
            out["failures"] = list(self.failures)
        return out


def _final_qp(system, traj_or_state) -> np.ndarray:
    d = system.dims
    if isinstance(traj_or_state, Trajectory):
        return traj_or_state.final[d.qp]
    if isinstance(traj_or_state, PhaseState):
        return traj_or_state.to_vector()[d.qp]
    z = np.asarray(traj_or_state, dtype=float)
    return z[d.qp] if z.shape == (d.m,) else z


def validate_dts(dts: Sequence[float]) -> list:
    dts = [float(x) for x in dts]
    if len(dts) < 3:
        raise ValueError("a convergence study needs at least 3 step sizes")
    if any(not dt > 0 for dt in dts):
        raise ValueError("step sizes must be positive")
    if len(set(dts)) != len(dts):
        raise ValueError("step sizes must be distinct")
    return dts


def estimate_order(
    system: IndexOneSystem,
    z0,
    t_end: float,
    tableau: ButcherTableau,
    dts: Sequence[float],
    reference: Union[None, Trajectory, PhaseState, np.ndarray, SolverConfig] = None,
    newton_tol: float = 1e-12,
) -> ConvergenceReport:
    """Error at ``t_end`` for each ``dt`` against a fine reference, and the fitted order.

    Without an explicit reference, Gauss s=3 (or RATTLE for holonomic
    systems) at ``min(dts) / 20`` supplies it.  Runs that fail are listed in
    ``failures`` and left out of the fit.
    """
    dts = validate_dts(dts)
    ref_dt = None
    if reference is None or isinstance(reference, SolverConfig):
        cfg = reference or SolverConfig(min(dts) / 20.0, newton_tol=newton_tol)
        ref_dt = cfg.dt
        ref_tab = tableau if system.dims.l else gauss_tableau(3)
        try:
            reference = integrate(system, z0, t_end, ref_tab, cfg, land_on_end=True)
        except IndexOneError as exc:
            return ConvergenceReport([], [], None, ref_dt, [{"dt": ref_dt, "error": f"reference run failed: {exc}"}])
    target = _final_qp(system, reference)

    errors, used, failures = [], [], []
    for dt in dts:
        try:
            traj = integrate(system, z0, t_end, tableau, SolverConfig(dt, newton_tol=newton_tol), land_on_end=True)
        except IndexOneError as exc:
            failures.append({"dt": dt, "error": str(exc)})
            continue
        e = float(np.max(np.abs(traj.final[system.dims.qp] - target)))
        if not math.isfinite(e):
            failures.append({"dt": dt, "error": "non-finite error"})
            continue
        used.append(dt)
        errors.append(e)
    order = fit_order(used, errors) if len(used) >= 2 and min(errors) > 0 else None
    return ConvergenceReport(used, errors, order, ref_dt, failures)


# ---------------------------------------------------------------- constraints


@dataclass
class ConstraintReport:
    endpoint_max: float
    stage_max: float
    endpoint_series: list = field(default_factory=list, repr=False)
    holonomic_max: Optional[float] = None
    hidden_max: Optional[float] = None

    def to_dict(self, include_series: bool = False) -> dict:
        out = {"endpoint_max": self.endpoint_max, "stage_max": self.stage_max}
        if self.holonomic_max is not None:
            out["holonomic_max"] = self.holonomic_max
            out["hidden_max"] = self.hidden_max
        if include_series:
            out["endpoint_series"] = list(self.endpoint_series)
        return out


def constraint_audit(system: IndexOneSystem, traj: Trajectory, problem=None) -> ConstraintReport:
    """Recompute ``max_i |g_i(q) . qdot|`` at every stored state.

    ``qdot`` comes from ``H_p`` of ``system``, or from the velocity map of
    ``problem`` when given.  Holonomic systems also report ``max |h(q)|`` and
    the hidden constraint ``grad_h(q) qdot``.
    """
    d = system.dims
    endpoint = np.zeros(len(traj))
    holo = hidden = None
    if d.l:
        holo = np.zeros(len(traj))
        hidden = np.zeros(len(traj))
    for i, z in enumerate(traj.states):
        q, p, lam = z[d.q], z[d.p], z[d.lam]
        if problem is not None:
            qdot = velocity(problem, q, p, lam)
            g = problem.G(q) if problem.k else np.zeros((0, d.n))
        else:
            qdot = system.gradient(z)[d.p]
            g = None
        if d.k:
            endpoint[i] = float(np.max(np.abs(g @ qdot))) if g is not None else float(np.max(np.abs(system.constraint_residual(z))))
        if d.l:
            holo[i] = float(np.max(np.abs(system.holonomic_values(q))))
            hidden[i] = float(np.max(np.abs(system.holonomic_jacobian(q) @ qdot)))
    stage = traj.stage_residual
    return ConstraintReport(
        endpoint_max=float(endpoint.max()) if len(endpoint) else 0.0,
        stage_max=float(np.max(stage)) if len(stage) else 0.0,
        endpoint_series=endpoint.tolist(),
        holonomic_max=None if holo is None else float(holo.max()),
        hidden_max=None if hidden is None else float(hidden.max()),
    )
