"""Symplectic Runge-Kutta steppers for index-1 systems, and RATTLE.

A Runge-Kutta method applied to ``J z' = grad H(z)`` in Darboux coordinates
gives, for each stage ``Z_i = (Q_i, P_i, Lam_i)``,

    Q_i = q0 + dt sum_j a_ij H_p(Z_j)
    P_i = p0 - dt sum_j a_ij H_q(Z_j)
    0   = H_lam(Z_i)

(the last line because ``A`` is invertible for the Gauss methods).  All
stages are solved together by Newton's method.  The update row for ``lam``
is vacuous, so the endpoint multiplier is obtained from ``H_lam = 0``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .core import (
    IndexOneSystem,
    LUFactor,
    PhaseState,
    finite_difference_jacobian,
    manifold_multipliers,
    system_hessian,
)
from .errors import (
    IndexOneError,
    IndexViolationError,
    ProjectionError,
    SingularMatrixError,
    StepFailureError,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ButcherTableau:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    name: str = "custom"

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        c = np.array(self.c, dtype=float).reshape(-1)
        s = b.size
        if A.shape != (s, s) or c.size != s:
            raise ValueError(f"inconsistent tableau shapes A{A.shape}, b({b.size}), c({c.size})")
        for arr in (A, b, c):
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def s(self) -> int:
        return self.b.size


def symplecticity_residual(tableau: ButcherTableau) -> float:
    """``max_ij |b_i b_j - b_j a_ji - b_i a_ij|``; zero for symplectic methods."""
    A, b = tableau.A, tableau.b
    M = np.outer(b, b) - b[None, :] * A.T - b[:, None] * A
    return float(np.max(np.abs(M)))


def gauss_tableau(s: int) -> ButcherTableau:
    """Gauss-Legendre collocation with ``s`` stages (order ``2s``)."""
    if s == 1:
        return ButcherTableau([[0.5]], [1.0], [0.5], name="midpoint")
    if s == 2:
        r = math.sqrt(3.0) / 6.0
        return ButcherTableau(
            [[0.25, 0.25 - r], [0.25 + r, 0.25]],
            [0.5, 0.5],
            [0.5 - r, 0.5 + r],
            name="gauss2",
        )
    if s == 3:
        r = math.sqrt(15.0)
        return ButcherTableau(
            [
                [5 / 36, 2 / 9 - r / 15, 5 / 36 - r / 30],
                [5 / 36 + r / 24, 2 / 9, 5 / 36 - r / 24],
                [5 / 36 + r / 30, 2 / 9 + r / 15, 5 / 36],
            ],
            [5 / 18, 4 / 9, 5 / 18],
            [0.5 - r / 10, 0.5, 0.5 + r / 10],
            name="gauss3",
        )
    raise ValueError(f"Gauss tableau with {s} stages is not supported (use 1, 2 or 3)")


def explicit_euler_tableau() -> ButcherTableau:
    """Non-symplectic control method."""
    return ButcherTableau([[0.0]], [1.0], [0.0], name="explicit-euler")


TABLEAUX = {
    "midpoint": lambda: gauss_tableau(1),
    "gauss2": lambda: gauss_tableau(2),
    "gauss3": lambda: gauss_tableau(3),
    "explicit-euler": explicit_euler_tableau,
}


def tableau_by_name(name: str) -> ButcherTableau:
    try:
        return TABLEAUX[name]()
    except KeyError:
        raise ValueError(f"unknown tableau {name!r}; choose from {sorted(TABLEAUX)}") from None


@dataclass(frozen=True)
class SolverConfig:
    """Fixed-step solver settings.

    ``jacobian_mode`` is ``"analytic"`` (use ``system.hessian`` when it is
    provided, else finite differences) or ``"finite-difference"``.  With
    ``reuse_jacobian`` the Newton matrix is kept across iterations of one
    step and refreshed only when the residual contracts by less than 10x.
    """

    dt: float
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    jacobian_mode: str = "analytic"
    fd_step: float = 1e-6
    reuse_jacobian: bool = True

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be at least 1")
        if self.jacobian_mode not in ("analytic", "finite-difference"):
            raise ValueError(f"unknown jacobian_mode {self.jacobian_mode!r}")
        if not self.fd_step > 0:
            raise ValueError("fd_step must be positive")


@dataclass
class StepStats:
    iterations: int = 0
    stage_residual: float = 0.0
    jacobians: int = 0


class RungeKuttaStepper:
    """Newton solver for the coupled stage equations of one RK step.

    The instance keeps the last Newton matrix (reused across steps while the
    iteration contracts well) and per-step statistics, so it should not be
    shared between threads.
    """

    def __init__(self, system: IndexOneSystem, tableau: ButcherTableau, config: SolverConfig):
        if system.dims.l:
            raise ValueError(
                "Runge-Kutta stepping of holonomic multipliers is not convergent; use RattleStepper"
            )
        self.system = system
        self.tableau = tableau
        self.config = config
        self.stats = StepStats()
        self._lu = None
        self.predict = True
        self.refresh = 0.1

    def _stage_gradients(self, X):
        return [self.system.gradient(Zi) for Zi in X]

    def _residual(self, X, grads, q0, p0):
        d = self.system.dims
        A, dt = self.tableau.A, self.config.dt
        Hq = np.array([g[d.q] for g in grads])
        Hp = np.array([g[d.p] for g in grads])
        R = np.empty_like(X)
        R[:, d.q] = X[:, d.q] - q0 - dt * (A @ Hp)
        R[:, d.p] = X[:, d.p] - p0 + dt * (A @ Hq)
        R[:, d.lam] = np.array([g[d.lam] for g in grads])
        return R

    def _jacobian(self, X):
        d = self.system.dims
        s, m = X.shape
        A, dt = self.tableau.A, self.config.dt
        analytic = self.config.jacobian_mode == "analytic"
        hess = [system_hessian(self.system, Zj, self.config.fd_step, analytic) for Zj in X]
        J = np.zeros((s * m, s * m))
        for i in range(s):
            ri = slice(i * m, (i + 1) * m)
            for j in range(s):
                cj = slice(j * m, (j + 1) * m)
                blk = np.zeros((m, m))
                blk[d.q] = -dt * A[i, j] * hess[j][d.p]
                blk[d.p] = dt * A[i, j] * hess[j][d.q]
                if i == j:
                    blk[d.q, d.q] += np.eye(d.n)
                    blk[d.p, d.p] += np.eye(d.n)
                    blk[d.lam] = hess[j][d.lam]
                J[ri, cj] = blk
        try:
            return LUFactor(J)
        except SingularMatrixError as exc:
            raise IndexViolationError("stage Jacobian is singular; is the system index 1 here?", pivot=exc.pivot) from exc

    def step(self, z0: np.ndarray) -> np.ndarray:
        sysm, cfg = self.system, self.config
        d = sysm.dims
        z0 = np.asarray(z0, dtype=float)
        q0, p0 = z0[d.q], z0[d.p]
        lam0 = manifold_multipliers(sysm, q0, p0, z0[d.lam], tol=cfg.newton_tol, fd_step=cfg.fd_step)
        z0 = np.concatenate([q0, p0, lam0])
        X = np.tile(z0, (self.tableau.s, 1))
        grads = self._stage_gradients(X)
        R = self._residual(X, grads, q0, p0)
        rnorm = float(np.max(np.abs(R)))
        if self.predict:
            # explicit Euler guess for the stages, kept only if it helps
            g0 = grads[0]
            Xp = X.copy()
            Xp[:, d.q] += cfg.dt * np.outer(self.tableau.c, g0[d.p])
            Xp[:, d.p] -= cfg.dt * np.outer(self.tableau.c, g0[d.q])
            gp = self._stage_gradients(Xp)
            Rp = self._residual(Xp, gp, q0, p0)
            rp = float(np.max(np.abs(Rp)))
            if rp < rnorm:
                X, grads, R, rnorm = Xp, gp, Rp, rp

        # residual floor grows with the size of the state
        tol = cfg.newton_tol * max(1.0, float(np.max(np.abs(z0))))
        lu = self._lu if cfg.reuse_jacobian else None
        stats = StepStats()
        polished = False
        while True:
            if not np.isfinite(rnorm):
                raise StepFailureError("stage residual became non-finite", residual=rnorm)
            if rnorm <= tol and (polished or rnorm == 0.0):
                break
            if stats.iterations >= cfg.newton_max_iter:
                if rnorm <= tol:
                    break
                raise StepFailureError(
                    f"Newton iteration did not converge in {cfg.newton_max_iter} iterations "
                    f"(residual {rnorm:.3e})",
                    residual=rnorm,
                )
            fresh = lu is None
            if fresh:
                lu = self._jacobian(X)
                stats.jacobians += 1
            dX = lu.solve(R.reshape(-1)).reshape(X.shape)
            Xn = X - dX
            gn = self._stage_gradients(Xn)
            Rn = self._residual(Xn, gn, q0, p0)
            rn = float(np.max(np.abs(Rn)))
            stats.iterations += 1
            if rnorm <= tol:
                # extra iteration past tolerance so the step map is smooth to round-off
                polished = True
                if rn > rnorm:
                    break
            elif not rn < rnorm:
                if not fresh:
                    # stale matrix made things worse: retry from X with a new one
                    lu = None
                    continue
                # damped Newton: backtrack along the full step
                alpha = 1.0
                while not rn < rnorm and alpha > 1e-3:
                    alpha *= 0.5
                    Xn = X - alpha * dX
                    gn = self._stage_gradients(Xn)
                    Rn = self._residual(Xn, gn, q0, p0)
                    rn = float(np.max(np.abs(Rn)))
                if not rn < rnorm:
                    if rnorm <= 10.0 * tol:
                        break
                    raise StepFailureError(
                        f"Newton iteration stalled at residual {rnorm:.3e}; reduce dt", residual=rnorm
                    )
            if not cfg.reuse_jacobian or rn > self.refresh * rnorm:
                lu = None
            X, grads, R, rnorm = Xn, gn, Rn, rn
        self._lu = lu

        A_b, dt = self.tableau.b, cfg.dt
        Hq = np.array([g[d.q] for g in grads])
        Hp = np.array([g[d.p] for g in grads])
        q1 = q0 + dt * (A_b @ Hp)
        p1 = p0 - dt * (A_b @ Hq)
        lam1 = manifold_multipliers(sysm, q1, p1, X[-1, d.lam], tol=cfg.newton_tol, fd_step=cfg.fd_step)
        stats.stage_residual = float(np.max(np.abs(R[:, d.lam]))) if d.k else 0.0
        self.stats = stats
        return np.concatenate([q1, p1, lam1])


class RattleStepper:
    """RATTLE for holonomic constraints with a midpoint inner step.

    One step is: impulse ``p0+ = p0 - grad_h(q0)^T mu`` with ``mu`` chosen so
    the inner step lands on ``h(q1) = 0``; the implicit midpoint rule on the
    index-1 system with Hamiltonian ``H(q, p, lam, 0)``; and a closing impulse
    ``p1 = p1- - grad_h(q1)^T nu`` enforcing ``grad_h(q1) . qdot(q1, p1) = 0``.
    """

    def __init__(self, system, config: SolverConfig):
        if system.dims.l == 0:
            raise ValueError("RATTLE needs at least one holonomic constraint")
        self.system = system
        self.config = config
        self.inner = system.without_holonomic()
        self.inner_stepper = RungeKuttaStepper(self.inner, gauss_tableau(1), config)
        self.stats = StepStats()

    def _inner_step(self, q0, p0):
        inner = self.inner
        lam = manifold_multipliers(inner, q0, p0, tol=self.config.newton_tol, fd_step=self.config.fd_step)
        z1 = self.inner_stepper.step(inner.pack(q0, p0, lam))
        st = self.inner_stepper.stats
        self.stats.iterations += st.iterations
        self.stats.stage_residual = max(self.stats.stage_residual, st.stage_residual)
        return z1

    def _velocity(self, q, p):
        d = self.inner.dims
        lam = manifold_multipliers(self.inner, q, p, tol=self.config.newton_tol, fd_step=self.config.fd_step)
        return self.inner.gradient(self.inner.pack(q, p, lam))[d.p]

    def _solve(self, F, x0, what):
        """Chord-Newton solve of ``F(x) = 0`` with a forward-difference Jacobian."""
        cfg = self.config
        x = np.array(x0, dtype=float)
        r = F(x)
        rnorm = float(np.max(np.abs(r)))
        lu = None
        polished = False
        for _ in range(cfg.newton_max_iter):
            if rnorm <= cfg.newton_tol and (polished or rnorm == 0.0):
                return x
            if lu is None:
                eps = cfg.fd_step * max(1.0, float(np.max(np.abs(x))))
                cols = []
                for i in range(x.size):
                    e = np.zeros_like(x)
                    e[i] = eps
                    cols.append((F(x + e) - r) / eps)
                try:
                    lu = LUFactor(np.column_stack(cols))
                except SingularMatrixError as exc:
                    raise ProjectionError(f"{what}: constraint Jacobian lost rank (pivot {exc.pivot:.3e})") from exc
            xn = x - lu.solve(r)
            rn_vec = F(xn)
            rn = float(np.max(np.abs(rn_vec)))
            if rnorm <= cfg.newton_tol:
                polished = True
                if rn > rnorm:
                    return x
            if rn > 0.1 * rnorm:
                lu = None
            x, r, rnorm = xn, rn_vec, rn
        if rnorm <= cfg.newton_tol:
            return x
        raise ProjectionError(f"{what}: Newton did not converge (residual {rnorm:.3e})")

    def step(self, z0: np.ndarray) -> np.ndarray:
        sysm, cfg = self.system, self.config
        d, di = sysm.dims, self.inner.dims
        z0 = np.asarray(z0, dtype=float)
        q0, p0 = z0[d.q], z0[d.p]
        self.stats = StepStats()
        grad_h0 = sysm.holonomic_jacobian(q0)

        last = {}

        def landing(mu):
            z1 = self._inner_step(q0, p0 - grad_h0.T @ mu)
            last["z1"], last["mu"] = z1, mu
            return sysm.holonomic_values(z1[di.q])

        try:
            mu = self._solve(landing, np.zeros(d.l), "position projection")
        except IndexOneError as exc:
            if isinstance(exc, ProjectionError):
                raise
            raise ProjectionError(f"position projection failed: {exc}") from exc
        z1 = last["z1"] if last["mu"] is mu else self._inner_step(q0, p0 - grad_h0.T @ mu)
        q1, p1m = z1[di.q], z1[di.p]

        grad_h1 = sysm.holonomic_jacobian(q1)
        nu = self._solve(
            lambda nu_: grad_h1 @ self._velocity(q1, p1m - grad_h1.T @ nu_),
            np.zeros(d.l),
            "momentum projection",
        )
        p1 = p1m - grad_h1.T @ nu
        lam1 = manifold_multipliers(self.inner, q1, p1, tol=cfg.newton_tol, fd_step=cfg.fd_step)
        lam_h1 = (mu + nu) / cfg.dt
        return np.concatenate([q1, p1, lam1, lam_h1])


def make_stepper(system: IndexOneSystem, tableau: ButcherTableau, config: SolverConfig):
    """RATTLE for systems with holonomic multipliers, plain Runge-Kutta otherwise."""
    if system.dims.l:
        if tableau.s != 1 or tableau.A[0, 0] != 0.5 or tableau.b[0] != 1.0:
            raise ValueError("holonomic systems are integrated by RATTLE with the midpoint inner step only")
        return RattleStepper(system, config)
    return RungeKuttaStepper(system, tableau, config)


def _as_vector(system, z0) -> np.ndarray:
    if isinstance(z0, PhaseState):
        z0.check_dims(system.dims)
        return z0.to_vector()
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (system.dims.m,):
        raise ValueError(f"expected state of length {system.dims.m}, got shape {z0.shape}")
    return z0


def srk_step(system: IndexOneSystem, z0: Union[PhaseState, np.ndarray], tableau: ButcherTableau, config: SolverConfig) -> PhaseState:
    """Advance one step of a Runge-Kutta method on an index-1 system."""
    z1 = RungeKuttaStepper(system, tableau, config).step(_as_vector(system, z0))
    return PhaseState.from_vector(system.dims, z1)


def rattle_step(system, z0: Union[PhaseState, np.ndarray], config: SolverConfig) -> PhaseState:
    """Advance one RATTLE step of a system with holonomic constraints."""
    z1 = RattleStepper(system, config).step(_as_vector(system, z0))
    return PhaseState.from_vector(system.dims, z1)


@dataclass
class Trajectory:
    """Uniformly sampled numerical solution with per-step diagnostics.

    ``states`` has one row per time; per-step arrays have the same length,
    with entry 0 describing the initial state.
    """

    dims: object
    times: np.ndarray
    states: np.ndarray
    energy: np.ndarray
    endpoint_residual: np.ndarray
    stage_residual: np.ndarray
    newton_iters: np.ndarray
    holonomic_residual: Optional[np.ndarray] = None
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.times)

    def state(self, i: int) -> PhaseState:
        return PhaseState.from_vector(self.dims, self.states[i])

    @property
    def q(self) -> np.ndarray:
        return self.states[:, self.dims.q]

    @property
    def p(self) -> np.ndarray:
        return self.states[:, self.dims.p]

    @property
    def lam(self) -> np.ndarray:
        return self.states[:, self.dims.lam]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def place_on_manifold(system: IndexOneSystem, z0, config: SolverConfig, warn: Optional[list] = None) -> np.ndarray:
    """Replace ``lam`` by the solution of ``H_lam = 0`` at ``(q0, p0)``."""
    d = system.dims
    z = _as_vector(system, z0).copy()
    if d.k:
        lam = manifold_multipliers(system, z[d.q], z[d.p], z[d.lam], tol=config.newton_tol, fd_step=config.fd_step)
        gap = float(np.max(np.abs(lam - z[d.lam])))
        if gap > 1e-10:
            msg = f"initial multipliers replaced by constraint solution (changed by {gap:.3e})"
            log.warning(msg)
            if warn is not None:
                warn.append(msg)
        z[d.lam] = lam
    return z


def step_count(t_end: float, dt: float) -> int:
    return max(1, int(math.ceil(t_end / dt - 1e-9)))


def integrate(
    system: IndexOneSystem,
    z0,
    t_end: float,
    tableau: ButcherTableau,
    config: SolverConfig,
    land_on_end: bool = False,
) -> Trajectory:
    """Integrate with fixed step ``config.dt`` for ``ceil(t_end / dt)`` steps.

    With ``land_on_end`` the last step is shortened so the final time is
    exactly ``t_end`` when ``dt`` does not divide it.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    d = system.dims
    notes: list = []
    z = place_on_manifold(system, z0, config, notes)
    stepper = make_stepper(system, tableau, config)
    N = step_count(t_end, config.dt)
    last_dt = config.dt
    if land_on_end:
        last_dt = t_end - (N - 1) * config.dt
        if abs(last_dt - config.dt) <= 1e-12 * config.dt:
            last_dt = config.dt

    states = np.empty((N + 1, d.m))
    energy = np.empty(N + 1)
    endpoint = np.empty(N + 1)
    stage = np.zeros(N + 1)
    iters = np.zeros(N + 1, dtype=int)
    holo = np.empty(N + 1) if d.l else None

    def record(i, zi):
        states[i] = zi
        energy[i] = system.hamiltonian(zi)
        endpoint[i] = float(np.max(np.abs(system.constraint_residual(zi)))) if d.k else 0.0
        if holo is not None:
            holo[i] = float(np.max(np.abs(system.holonomic_values(zi[d.q]))))

    record(0, z)
    for i in range(1, N + 1):
        if i == N and last_dt != config.dt:
            stepper = make_stepper(system, tableau, replace(config, dt=last_dt))
        try:
            z = stepper.step(z)
        except IndexOneError as exc:
            exc.args = (f"step {i} (t={(i - 1) * config.dt:.6g}): {exc}",)
            exc.step = i
            raise
        record(i, z)
        iters[i] = stepper.stats.iterations
        stage[i] = stepper.stats.stage_residual
    times = config.dt * np.arange(N + 1)
    times[-1] = (N - 1) * config.dt + last_dt
    return Trajectory(d, times, states, energy, endpoint, stage, iters, holo, notes)
