"""Hamiltonian form of velocity-constrained variational problems.

For the action ``int 1/2 qdot^T M qdot - V(q) dt`` subject to velocity
constraints ``g_i(q) . qdot = 0`` (and optionally holonomic constraints
``h_i(q) = 0``), the Legendre transform ``p = M qdot - sum lam_i g_i(q)``
turns the Euler-Lagrange equations into ``J z' = grad H(z)`` with

    H(q, p, lam, lam_h) = 1/2 u^T M^{-1} u + V(q) + sum lam_h_i h_i(q),
    u = p + sum lam_i g_i(q).

The multipliers ``lam`` solve the linear system ``G M^{-1} G^T lam =
-G M^{-1} p`` whose matrix is nonsingular whenever the ``g_i`` are
independent, so the resulting system has index 1.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .core import (
    DEFAULT_FD_STEP,
    DarbouxDims,
    IndexOneSystem,
    finite_difference_jacobian,
    solve_dense_linear,
)
from .errors import RankDeficiencyError, SingularMatrixError

VectorField = Callable[[np.ndarray], np.ndarray]
ScalarField = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class VakonomicProblem:
    """Data of a constrained variational problem with quadratic kinetic energy.

    Parameters
    ----------
    mass : array_like
        Symmetric nonsingular ``n x n`` mass matrix.
    potential, potential_grad : callable, optional
        ``V(q)`` and its gradient.  Both default to zero.
    constraints : sequence of callable
        Velocity-constraint fields ``g_i(q) -> R^n``.
    constraint_jacobians : sequence of callable, optional
        ``Dg_i(q)`` with entries ``d g_i[a] / d q[b]``.  Finite differences
        of ``g_i`` are used when omitted.
    holonomic, holonomic_grads : sequence of callable
        Position constraints ``h_i(q)`` and their gradients.
    multipliers : callable, optional
        Closed-form ``lam~(q, p)``; replaces the generic linear solve.
    coordinate_names : sequence of str, optional
        Labels for ``q`` used in output files.
    """

    mass: np.ndarray
    potential: Optional[ScalarField] = None
    potential_grad: Optional[VectorField] = None
    constraints: Sequence[VectorField] = ()
    constraint_jacobians: Optional[Sequence[VectorField]] = None
    holonomic: Sequence[ScalarField] = ()
    holonomic_grads: Sequence[VectorField] = ()
    multipliers: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    coordinate_names: Optional[Sequence[str]] = None
    name: str = "vakonomic"

    def __post_init__(self):
        M = np.array(self.mass, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
            raise ValueError(f"mass matrix must be square, got shape {M.shape}")
        if np.max(np.abs(M - M.T)) > 1e-14:
            raise ValueError("mass matrix is not symmetric")
        M.setflags(write=False)
        object.__setattr__(self, "mass", M)
        object.__setattr__(self, "constraints", tuple(self.constraints))
        object.__setattr__(self, "holonomic", tuple(self.holonomic))
        object.__setattr__(self, "holonomic_grads", tuple(self.holonomic_grads))
        if self.constraint_jacobians is not None:
            object.__setattr__(self, "constraint_jacobians", tuple(self.constraint_jacobians))
            if len(self.constraint_jacobians) != len(self.constraints):
                raise ValueError("need one Jacobian per velocity constraint")
        if len(self.holonomic_grads) != len(self.holonomic):
            raise ValueError("need one gradient per holonomic constraint")
        if (self.potential is None) != (self.potential_grad is None):
            raise ValueError("potential and potential_grad must be given together")
        if self.coordinate_names is not None and len(self.coordinate_names) != M.shape[0]:
            raise ValueError("coordinate_names must have one entry per coordinate")
        # factorize once; M^{-1} is never formed
        try:
            c, _ = scipy.linalg.cho_factor(M, lower=False)
            potrs = scipy.linalg.get_lapack_funcs("potrs", (c,))
            factor = ("cholesky", c, potrs)
        except np.linalg.LinAlgError:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                lu, piv = scipy.linalg.lu_factor(M)
            if np.min(np.abs(np.diag(lu))) <= 1e-14 * np.linalg.norm(M, np.inf):
                raise ValueError("mass matrix is singular") from None
            factor = ("lu", (lu, piv), None)
        object.__setattr__(self, "_factor", factor)

    @property
    def n(self) -> int:
        return self.mass.shape[0]

    @property
    def k(self) -> int:
        return len(self.constraints)

    @property
    def l(self) -> int:
        return len(self.holonomic)

    @property
    def dims(self) -> DarbouxDims:
        return DarbouxDims(self.n, self.k, self.l)

    def mass_solve(self, v: np.ndarray) -> np.ndarray:
        """``M^{-1} v`` for a vector or a matrix of columns."""
        kind, f, potrs = self._factor
        if kind == "cholesky":
            x, info = potrs(f, v, lower=0)
            return x
        return scipy.linalg.lu_solve(f, v, check_finite=False)

    def V(self, q) -> float:
        return 0.0 if self.potential is None else float(self.potential(q))

    def grad_V(self, q) -> np.ndarray:
        if self.potential_grad is None:
            return np.zeros(self.n)
        return np.asarray(self.potential_grad(q), dtype=float)

    def G(self, q) -> np.ndarray:
        """``k x n`` matrix whose rows are ``g_i(q)``."""
        if not self.constraints:
            return np.zeros((0, self.n))
        return np.array([np.asarray(g(q), dtype=float) for g in self.constraints])

    def Dg(self, q) -> list:
        if self.constraint_jacobians is not None:
            return [np.asarray(D(q), dtype=float) for D in self.constraint_jacobians]
        return [finite_difference_jacobian(g, q, DEFAULT_FD_STEP) for g in self.constraints]

    def h(self, q) -> np.ndarray:
        return np.array([float(hi(q)) for hi in self.holonomic])

    def grad_h(self, q) -> np.ndarray:
        """``l x n`` matrix whose rows are the holonomic constraint gradients."""
        if not self.holonomic:
            return np.zeros((0, self.n))
        return np.array([np.asarray(dh(q), dtype=float) for dh in self.holonomic_grads])

    def check_rank(self, q, tol: float = 1e-10) -> float:
        """Smallest singular value of ``G(q)``; raises if below ``tol``."""
        if self.k == 0:
            return np.inf
        smin = float(np.linalg.svd(self.G(q), compute_uv=False).min())
        if smin < tol:
            raise RankDeficiencyError(f"velocity constraints are dependent at q={q} (sigma_min={smin:.3e})")
        return smin

    def without_holonomic(self) -> "VakonomicProblem":
        return dataclasses.replace(self, holonomic=(), holonomic_grads=())


def _check(problem: VakonomicProblem, **vectors):
    for name, (v, size) in vectors.items():
        if np.shape(v) != (size,):
            raise ValueError(f"{name} must have shape ({size},), got {np.shape(v)}")


def velocity(problem: VakonomicProblem, q, p, lam) -> np.ndarray:
    """``qdot = M^{-1} (p + sum lam_i g_i(q))``."""
    q, p, lam = (np.asarray(a, dtype=float) for a in (q, p, lam))
    _check(problem, q=(q, problem.n), p=(p, problem.n), lam=(lam, problem.k))
    return problem.mass_solve(p + problem.G(q).T @ lam)


def legendre(problem: VakonomicProblem, q, qdot, lam) -> np.ndarray:
    """``p = M qdot - sum lam_i g_i(q)``."""
    q, qdot, lam = (np.asarray(a, dtype=float) for a in (q, qdot, lam))
    _check(problem, q=(q, problem.n), qdot=(qdot, problem.n), lam=(lam, problem.k))
    return problem.mass @ qdot - problem.G(q).T @ lam


def solve_multipliers(problem: VakonomicProblem, q, p) -> np.ndarray:
    """Solve ``(G M^{-1} G^T) lam = -G M^{-1} p``."""
    q, p = np.asarray(q, dtype=float), np.asarray(p, dtype=float)
    _check(problem, q=(q, problem.n), p=(p, problem.n))
    if problem.k == 0:
        return np.zeros(0)
    G = problem.G(q)
    MinvGT = problem.mass_solve(G.T)
    try:
        return solve_dense_linear(G @ MinvGT, -G @ problem.mass_solve(p))
    except SingularMatrixError as exc:
        raise RankDeficiencyError(f"G M^-1 G^T is singular at q={q} (pivot {exc.pivot:.3e})") from exc


def constraint_velocity_residual(problem: VakonomicProblem, q, p, lam) -> np.ndarray:
    """``(g_i(q) . qdot)_i`` with ``qdot`` from :func:`velocity`."""
    return problem.G(np.asarray(q, dtype=float)) @ velocity(problem, q, p, lam)


class VakonomicSystem(IndexOneSystem):
    """Index-1 generalized Hamiltonian system built from a :class:`VakonomicProblem`."""

    def __init__(self, problem: VakonomicProblem):
        self.problem = problem
        self.dims = problem.dims
        self._inner = VakonomicSystem(problem.without_holonomic()) if problem.l else self

    def _split(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dims.m,):
            raise ValueError(f"expected state of length {self.dims.m}, got shape {z.shape}")
        d = self.dims
        return z[d.q], z[d.p], z[d.lam], z[d.lam_h]

    def hamiltonian(self, z) -> float:
        q, p, lam, lam_h = self._split(z)
        pr = self.problem
        u = p + pr.G(q).T @ lam
        H = 0.5 * u @ pr.mass_solve(u) + pr.V(q)
        if pr.l:
            H += lam_h @ pr.h(q)
        return float(H)

    def gradient(self, z) -> np.ndarray:
        q, p, lam, lam_h = self._split(z)
        pr = self.problem
        G = pr.G(q)
        qdot = pr.mass_solve(p + G.T @ lam)
        Hq = pr.grad_V(q)
        if pr.k:
            for lam_i, D in zip(lam, pr.Dg(q)):
                Hq = Hq + lam_i * (D.T @ qdot)
        if pr.l:
            Hq = Hq + pr.grad_h(q).T @ lam_h
        return np.concatenate([Hq, qdot, G @ qdot, pr.h(q)])

    def hessian(self, z) -> np.ndarray:
        """Second derivatives of ``H``.

        Columns for ``p``, ``lam`` and ``lam_h`` are exact; the ``q`` columns
        need second derivatives of ``g``, ``V`` and ``h`` and are taken by
        central differences of the gradient.
        """
        q, p, lam, lam_h = self._split(z)
        pr, d = self.problem, self.dims
        n, k = d.n, d.k
        Hzz = np.zeros((d.m, d.m))
        G = pr.G(q)
        Minv = pr.mass_solve(np.eye(n))
        qdot = Minv @ (p + G.T @ lam)
        Dg = pr.Dg(q) if k else []
        S = sum((lam_i * D.T for lam_i, D in zip(lam, Dg)), np.zeros((n, n)))
        Hzz[d.q, d.p] = S @ Minv
        Hzz[d.p, d.p] = Minv
        Hzz[d.lam, d.p] = G @ Minv
        if k:
            MinvGT = Minv @ G.T
            Hzz[d.q, d.lam] = np.column_stack([D.T @ qdot for D in Dg]) + S @ MinvGT
            Hzz[d.p, d.lam] = MinvGT
            Hzz[d.lam, d.lam] = G @ MinvGT
        if d.l:
            Hzz[d.q, d.lam_h] = pr.grad_h(q).T
        zz = np.array(z, dtype=float)
        h = DEFAULT_FD_STEP
        for i in range(n):
            zz[i] = z[i] + h
            gp = self.gradient(zz)
            zz[i] = z[i] - h
            gm = self.gradient(zz)
            zz[i] = z[i]
            Hzz[:, i] = (gp - gm) / (2 * h)
        return Hzz

    def multipliers(self, q, p) -> np.ndarray:
        if self.problem.multipliers is not None:
            return np.asarray(self.problem.multipliers(q, p), dtype=float).reshape(-1)
        return solve_multipliers(self.problem, q, p)

    def velocity(self, z) -> np.ndarray:
        q, p, lam, _ = self._split(z)
        return velocity(self.problem, q, p, lam)

    def holonomic_values(self, q) -> np.ndarray:
        return self.problem.h(q)

    def holonomic_jacobian(self, q) -> np.ndarray:
        return self.problem.grad_h(q)

    def without_holonomic(self) -> "VakonomicSystem":
        """The system with Hamiltonian ``H(q, p, lam, 0)`` and no ``lam_h`` block."""
        return self._inner


def build_system(problem: VakonomicProblem) -> VakonomicSystem:
    return VakonomicSystem(problem)
