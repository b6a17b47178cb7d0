"""Phase-space data model and the generalized Hamiltonian system contract.

States live in Darboux coordinates ``z = (q, p, lam, lam_h)`` where the
structure matrix is the canonical symplectic matrix on ``(q, p)`` and zero
on the multiplier blocks.  Systems are immutable; every evaluation is a pure
function of ``(system, z)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .errors import EvaluationError, IndexViolationError, SingularMatrixError

DEFAULT_FD_STEP = 1e-6


@dataclass(frozen=True)
class DarbouxDims:
    """Block sizes of a Darboux state vector.

    Attributes
    ----------
    n : int
        Number of configuration coordinates.
    k : int
        Number of velocity-constraint multipliers.
    l : int
        Number of holonomic multipliers.
    """

    n: int
    k: int = 0
    l: int = 0

    def __post_init__(self):
        if self.n < 1 or self.k < 0 or self.l < 0:
            raise ValueError(f"invalid Darboux dimensions n={self.n}, k={self.k}, l={self.l}")

    @property
    def m(self) -> int:
        return 2 * self.n + self.k + self.l

    @property
    def q(self) -> slice:
        return slice(0, self.n)

    @property
    def p(self) -> slice:
        return slice(self.n, 2 * self.n)

    @property
    def lam(self) -> slice:
        return slice(2 * self.n, 2 * self.n + self.k)

    @property
    def lam_h(self) -> slice:
        return slice(2 * self.n + self.k, self.m)

    @property
    def qp(self) -> slice:
        return slice(0, 2 * self.n)


@dataclass(frozen=True)
class PhaseState:
    """A point ``z = (q, p, lam, lam_h)`` in Darboux coordinates."""

    q: np.ndarray
    p: np.ndarray
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lam_h: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for name in ("q", "p", "lam", "lam_h"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.q.size != self.p.size:
            raise ValueError(f"q has length {self.q.size} but p has length {self.p.size}")

    @property
    def dims(self) -> DarbouxDims:
        return DarbouxDims(self.q.size, self.lam.size, self.lam_h.size)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.p, self.lam, self.lam_h])

    @classmethod
    def from_vector(cls, dims: DarbouxDims, z) -> "PhaseState":
        z = np.asarray(z, dtype=float)
        if z.shape != (dims.m,):
            raise ValueError(f"expected state vector of length {dims.m}, got shape {z.shape}")
        return cls(z[dims.q], z[dims.p], z[dims.lam], z[dims.lam_h])

    def check_dims(self, dims: DarbouxDims) -> None:
        if self.dims != dims:
            raise ValueError(f"state has dimensions {self.dims}, system expects {dims}")


@dataclass(frozen=True)
class StructureMatrix:
    """Constant antisymmetric structure matrix in Darboux block form.

    Only the canonical ``(q, p)`` block is nonzero, so products are formed
    blockwise; :meth:`dense` materializes the matrix for checks.
    """

    dims: DarbouxDims

    def apply(self, v: np.ndarray) -> np.ndarray:
        d = self.dims
        out = np.zeros_like(v, dtype=float)
        out[d.q] = -v[d.p]
        out[d.p] = v[d.q]
        return out

    def dense(self) -> np.ndarray:
        d = self.dims
        J = np.zeros((d.m, d.m))
        J[d.q, d.p] = -np.eye(d.n)
        J[d.p, d.q] = np.eye(d.n)
        return J


def canonical_matrix(n: int) -> np.ndarray:
    """The ``2n x 2n`` matrix ``[[0, -I], [I, 0]]``."""
    return StructureMatrix(DarbouxDims(n)).dense()


class IndexOneSystem:
    """Evaluation contract for ``J z' = grad H(z)`` in Darboux coordinates.

    Subclasses provide :meth:`hamiltonian` and :meth:`gradient`.  They may
    override :meth:`hessian` (second derivatives used by the Newton solver)
    and :meth:`multipliers` (closed-form solution of ``H_lam = 0``); when
    these return ``None`` the integrators fall back to finite differences
    and Newton iteration respectively.
    """

    dims: DarbouxDims

    def hamiltonian(self, z: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, z: np.ndarray) -> Optional[np.ndarray]:
        return None

    def multipliers(self, q: np.ndarray, p: np.ndarray) -> Optional[np.ndarray]:
        return None

    @property
    def structure(self) -> StructureMatrix:
        return StructureMatrix(self.dims)

    def pack(self, q, p, lam=(), lam_h=()) -> np.ndarray:
        d = self.dims
        lam = np.zeros(d.k) if len(lam) == 0 and d.k else lam
        lam_h = np.zeros(d.l) if len(lam_h) == 0 and d.l else lam_h
        return PhaseState(q, p, lam, lam_h).to_vector()

    def constraint_residual(self, z: np.ndarray) -> np.ndarray:
        """``H_lam(z)``; zero exactly on the constraint manifold."""
        return self.gradient(z)[self.dims.lam]

    def on_manifold(self, z: np.ndarray, tol: float = 1e-10) -> bool:
        r = self.constraint_residual(z)
        return r.size == 0 or float(np.max(np.abs(r))) <= tol


class HamiltonianSystem(IndexOneSystem):
    """Index-1 system assembled from user-supplied callables.

    This is the entry point for Lagrangians and constraints that are not of
    the quadratic/linear form handled by :mod:`indexone.vakonomic`: the
    caller provides ``H`` and ``grad H`` directly on ``z = (q, p, lam)``.
    """

    def __init__(
        self,
        dims: DarbouxDims,
        hamiltonian: Callable[[np.ndarray], float],
        gradient: Callable[[np.ndarray], np.ndarray],
        hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        multipliers: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None,
    ):
        self.dims = dims
        self._h = hamiltonian
        self._grad = gradient
        self._hess = hessian
        self._mult = multipliers

    def hamiltonian(self, z):
        return float(self._h(np.asarray(z, dtype=float)))

    def gradient(self, z):
        return np.asarray(self._grad(np.asarray(z, dtype=float)), dtype=float)

    def hessian(self, z):
        if self._hess is None:
            return None
        return np.asarray(self._hess(np.asarray(z, dtype=float)), dtype=float)

    def multipliers(self, q, p):
        if self._mult is None:
            return None
        return np.asarray(self._mult(q, p), dtype=float).reshape(-1)


def finite_difference_gradient(f: Callable[[np.ndarray], float], z, h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Central-difference gradient of a scalar field."""
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    z = np.asarray(z, dtype=float)
    g = np.empty(z.size)
    e = np.zeros(z.size)
    for i in range(z.size):
        e[i] = h
        fp, fm = f(z + e), f(z - e)
        e[i] = 0.0
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"non-finite function value when perturbing component {i}", component=i)
        g[i] = (fp - fm) / (2 * h)
    return g


def finite_difference_jacobian(F: Callable[[np.ndarray], np.ndarray], z, h: float = DEFAULT_FD_STEP) -> np.ndarray:
    """Central-difference Jacobian ``dF/dz`` of a vector field."""
    if h <= 0:
        raise ValueError("finite-difference step must be positive")
    z = np.asarray(z, dtype=float)
    cols = []
    e = np.zeros(z.size)
    for i in range(z.size):
        e[i] = h
        fp, fm = np.asarray(F(z + e), dtype=float), np.asarray(F(z - e), dtype=float)
        e[i] = 0.0
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise EvaluationError(f"non-finite function value when perturbing component {i}", component=i)
        cols.append((fp - fm) / (2 * h))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def system_hessian(system: IndexOneSystem, z: np.ndarray, h: float = DEFAULT_FD_STEP, analytic: bool = True) -> np.ndarray:
    """Second derivatives of ``H``: analytic when offered, else differences of the gradient."""
    if analytic:
        H = system.hessian(z)
        if H is not None:
            return H
    return finite_difference_jacobian(system.gradient, z, h)


class LUFactor:
    """Partially pivoted LU factorization that refuses near-singular matrices."""

    def __init__(self, A):
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {A.shape}")
        self.shape = A.shape
        if A.size == 0:
            self._lu = None
            return
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
        pivot = float(np.min(np.abs(np.diag(lu))))
        scale = float(np.linalg.norm(A, np.inf))
        if pivot < 1e-14 * scale or scale == 0.0:
            raise SingularMatrixError(pivot)
        self._lu = (lu, piv)

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if self._lu is None:
            return rhs.copy()
        return scipy.linalg.lu_solve(self._lu, rhs, check_finite=False)


def solve_dense_linear(A, rhs) -> np.ndarray:
    """Solve ``A x = rhs`` by LU with partial pivoting.

    Raises
    ------
    SingularMatrixError
        If the smallest pivot is below ``1e-14 * ||A||_inf``.
    """
    return LUFactor(A).solve(rhs)


def solve_multipliers_newton(
    system: IndexOneSystem,
    q: np.ndarray,
    p: np.ndarray,
    lam0: Optional[np.ndarray] = None,
    tol: float = 1e-12,
    max_iter: int = 50,
    fd_step: float = DEFAULT_FD_STEP,
) -> np.ndarray:
    """Solve ``H_lam(q, p, lam) = 0`` for ``lam`` by Newton iteration.

    Any holonomic multipliers are held at zero.
    """
    d = system.dims
    if d.k == 0:
        return np.zeros(0)
    lam = np.zeros(d.k) if lam0 is None else np.array(lam0, dtype=float)
    z = np.concatenate([q, p, lam, np.zeros(d.l)])

    def residual(lam_):
        z[d.lam] = lam_
        return system.gradient(z)[d.lam]

    r = residual(lam)
    for _ in range(max_iter):
        if np.max(np.abs(r)) <= tol:
            # one polishing step keeps the solution smooth in (q, p)
            J = finite_difference_jacobian(residual, lam, fd_step)
            try:
                cand = lam - solve_dense_linear(J, r)
            except SingularMatrixError as exc:
                raise IndexViolationError("H_lam_lam is singular", pivot=exc.pivot) from exc
            rc = residual(cand)
            return cand if np.max(np.abs(rc)) <= np.max(np.abs(r)) else lam
        J = finite_difference_jacobian(residual, lam, fd_step)
        try:
            lam = lam - solve_dense_linear(J, r)
        except SingularMatrixError as exc:
            raise IndexViolationError("H_lam_lam is singular", pivot=exc.pivot) from exc
        r = residual(lam)
    if np.max(np.abs(r)) <= tol:
        return lam
    raise IndexViolationError(f"multiplier solve did not converge, residual {np.max(np.abs(r)):.3e}")


def manifold_multipliers(system: IndexOneSystem, q, p, lam0=None, tol: float = 1e-12, fd_step: float = DEFAULT_FD_STEP) -> np.ndarray:
    """The constraint-manifold multipliers ``lam~(q, p)``."""
    lam = system.multipliers(np.asarray(q, dtype=float), np.asarray(p, dtype=float))
    if lam is not None:
        return lam
    return solve_multipliers_newton(system, np.asarray(q, float), np.asarray(p, float), lam0, tol=tol, fd_step=fd_step)


def index_one_certificate(system: IndexOneSystem, z: np.ndarray, h: float = DEFAULT_FD_STEP) -> float:
    """Smallest singular value of ``dH_lam/dlam`` (finite differences)."""
    d = system.dims
    if d.k == 0:
        return np.inf
    z = np.array(z, dtype=float)

    def hl(lam):
        zz = z.copy()
        zz[d.lam] = lam
        return system.gradient(zz)[d.lam]

    J = finite_difference_jacobian(hl, z[d.lam], h)
    return float(np.linalg.svd(J, compute_uv=False).min())
