"""Benchmark problems: the two-wheeled vehicle, the Heisenberg problem, and a
particle on a circle for RATTLE."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import PhaseState
from .errors import IndexViolationError
from .vakonomic import VakonomicProblem, build_system, legendre, solve_multipliers


@dataclass(frozen=True)
class VehicleParams:
    """Wheelbase ``L``, inertias ``alpha`` (for theta) and ``beta`` (for phi),
    and the potential: ``"zero"`` or ``"cosine-bowl"`` (``V = -cos r``)."""

    L: float = 0.3
    alpha: float = 1.0
    beta: float = 1.0
    potential: str = "zero"

    def __post_init__(self):
        if not (self.L > 0 and self.alpha > 0 and self.beta > 0):
            raise ValueError("vehicle parameters L, alpha, beta must be positive")
        if self.potential not in ("zero", "cosine-bowl"):
            raise ValueError(f"unknown vehicle potential {self.potential!r}")


@dataclass(frozen=True)
class NamedState:
    label: str
    state: PhaseState
    note: str = ""


def vehicle_problem(params: VehicleParams = VehicleParams()) -> VakonomicProblem:
    """Front wheel at ``(x, y)`` with heading ``phi``; body angle ``theta``.

    ``q = (x, y, theta, phi)``.  Constraints: front wheel rolls along ``phi``
    and the back wheel along ``theta``.
    """
    L = params.L

    def g1(q):
        phi = q[3]
        return np.array([math.sin(phi), -math.cos(phi), 0.0, 0.0])

    def Dg1(q):
        phi = q[3]
        D = np.zeros((4, 4))
        D[0, 3] = math.cos(phi)
        D[1, 3] = math.sin(phi)
        return D

    def g2(q):
        th = q[2]
        return np.array([math.sin(th), -math.cos(th), L, 0.0])

    def Dg2(q):
        th = q[2]
        D = np.zeros((4, 4))
        D[0, 2] = math.cos(th)
        D[1, 2] = math.sin(th)
        return D

    V = gradV = None
    if params.potential == "cosine-bowl":
        # r = distance of the vehicle midpoint from the origin
        def _mid(q):
            x, y, th = q[0], q[1], q[2]
            return x - 0.5 * L * math.cos(th), y - 0.5 * L * math.sin(th)

        def V(q):
            mx, my = _mid(q)
            return -math.cos(math.hypot(mx, my))

        def gradV(q):
            th = q[2]
            mx, my = _mid(q)
            r = math.hypot(mx, my)
            sinc = math.sin(r) / r if r > 1e-8 else 1.0 - r * r / 6.0
            dth = 0.5 * L * (mx * math.sin(th) - my * math.cos(th))
            return sinc * np.array([mx, my, dth, 0.0])

    return VakonomicProblem(
        mass=np.diag([1.0, 1.0, params.alpha, params.beta]),
        potential=V,
        potential_grad=gradV,
        constraints=(g1, g2),
        constraint_jacobians=(Dg1, Dg2),
        coordinate_names=("x", "y", "theta", "phi"),
        name="vehicle",
    )


def vehicle_midpoint(q, params: VehicleParams) -> np.ndarray:
    """Vehicle midpoint ``(x - L/2 cos theta, y - L/2 sin theta)``."""
    q = np.asarray(q, dtype=float)
    return np.stack([q[..., 0] - 0.5 * params.L * np.cos(q[..., 2]), q[..., 1] - 0.5 * params.L * np.sin(q[..., 2])], axis=-1)


def _require_on_manifold(problem, state: PhaseState, tol=1e-10):
    if problem.k:
        res = problem.G(state.q) @ problem.mass_solve(state.p + problem.G(state.q).T @ state.lam)
        if np.max(np.abs(res)) > tol:
            raise IndexViolationError(f"named state is off the constraint manifold (residual {np.max(np.abs(res)):.3e})")


def vehicle_named_state(kind: str, params: VehicleParams = VehicleParams(), a: float = 1.0) -> NamedState:
    """Relative equilibria of the free vehicle and a state for the potential bowl.

    ``straight``: unit speed along x with ``theta = phi = 0``.
    ``circular``: front wheel on a circle of radius ``L`` about the origin,
    ``theta = a t``, ``phi = a t + pi/2``.  Constant momenta require the
    multipliers ``(0, -a L)``, which give ``p = (0, 0, alpha a + a L^2, beta a)``.
    ``bowl``: a generic state trapped in the ``-cos r`` potential.
    """
    problem = vehicle_problem(params)
    if kind == "straight":
        q = np.zeros(4)
        p = np.array([1.0, 0.0, 0.0, 0.0])
        lam = solve_multipliers(problem, q, p)
        note = "straight-line relative equilibrium"
    elif kind == "circular":
        c = a * params.L
        q = np.array([params.L, 0.0, 0.0, 0.5 * math.pi])
        qdot = np.array([0.0, c, a, a])
        lam = np.array([0.0, -c])
        p = legendre(problem, q, qdot, lam)
        # the multiplier solve must return the same lam for this (q, p)
        lam = solve_multipliers(problem, q, p)
        note = "circular relative equilibrium about the origin"
    elif kind == "bowl":
        q = np.array([0.5, 0.2, 0.4, 1.1])
        G = problem.G(q)
        # admissible velocity: M-orthogonal projection of a trial direction onto ker G
        trial = np.array([0.3, 0.15, 0.25, 0.2])
        Minv_GT = problem.mass_solve(G.T)
        qdot = trial - Minv_GT @ np.linalg.solve(G @ Minv_GT, G @ trial)
        lam = np.zeros(2)
        p = legendre(problem, q, qdot, lam)
        lam = solve_multipliers(problem, q, p)
        note = "generic bounded motion in the -cos r bowl"
    else:
        raise ValueError(f"unknown vehicle state {kind!r}")
    state = PhaseState(q, p, lam)
    _require_on_manifold(problem, state)
    return NamedState(f"vehicle-{kind}", state, note)


def heisenberg_problem(
    potential: Optional[Callable] = None, potential_grad: Optional[Callable] = None
) -> VakonomicProblem:
    """Unit-mass particle in R^3 with ``g(q) = (-y, x, 1)``."""

    def g(q):
        return np.array([-q[1], q[0], 1.0])

    def Dg(q):
        return np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])

    def multiplier(q, p):
        gq = g(q)
        return np.array([-(gq @ p) / (gq @ gq)])

    return VakonomicProblem(
        mass=np.eye(3),
        potential=potential,
        potential_grad=potential_grad,
        constraints=(g,),
        constraint_jacobians=(Dg,),
        multipliers=multiplier,
        coordinate_names=("x", "y", "z"),
        name="heisenberg",
    )


def heisenberg_named_state() -> NamedState:
    """``q = 0``, ``qdot = (0.1, 0.3, 0)``, ``lam = 1``, so ``p = (0.1, 0.3, -1)``."""
    problem = heisenberg_problem()
    q = np.zeros(3)
    lam = np.array([1.0])
    p = legendre(problem, q, np.array([0.1, 0.3, 0.0]), lam)
    state = PhaseState(q, p, lam)
    _require_on_manifold(problem, state, 1e-12)
    return NamedState("heisenberg-demo", state, "p_z = -1 follows from the Legendre transform with lam = 1")


def particle_on_circle_problem(gravity: float = 0.0) -> VakonomicProblem:
    """Unit mass in the plane with ``h(q) = |q|^2 - 1`` and ``V = gravity * y``."""
    V = gradV = None
    if gravity:
        def V(q):
            return gravity * q[1]

        def gradV(q):
            return np.array([0.0, gravity])

    return VakonomicProblem(
        mass=np.eye(2),
        potential=V,
        potential_grad=gradV,
        holonomic=(lambda q: q @ q - 1.0,),
        holonomic_grads=(lambda q: 2.0 * np.asarray(q),),
        coordinate_names=("x", "y"),
        name="particle-on-circle",
    )


def particle_on_circle_state(omega: float = 1.0, angle: float = 0.0) -> NamedState:
    q = np.array([math.cos(angle), math.sin(angle)])
    p = omega * np.array([-math.sin(angle), math.cos(angle)])
    return NamedState("circle", PhaseState(q, p, np.zeros(0), np.zeros(1)), "uniform rotation")


def _vehicle_params(params) -> VehicleParams:
    kw = {k: v for k, v in (params or {}).items() if k != "a"}
    return VehicleParams(**kw)


PROBLEMS = {
    "vehicle": lambda params=None: vehicle_problem(_vehicle_params(params)),
    "heisenberg": lambda params=None: heisenberg_problem(),
    "particle-on-circle": lambda params=None: particle_on_circle_problem(**(params or {})),
}


def named_state(problem: str, label: str, params=None) -> NamedState:
    if problem == "vehicle":
        return vehicle_named_state(label, _vehicle_params(params), (params or {}).get("a", 1.0))
    if problem == "heisenberg":
        if label != "demo":
            raise ValueError(f"unknown heisenberg state {label!r}")
        return heisenberg_named_state()
    if problem == "particle-on-circle":
        if label != "rotation":
            raise ValueError(f"unknown particle-on-circle state {label!r}")
        return particle_on_circle_state()
    raise ValueError(f"unknown problem {problem!r}")


def build_named_system(problem: str, params=None):
    if problem not in PROBLEMS:
        raise ValueError(f"unknown problem {problem!r}; choose from {sorted(PROBLEMS)}")
    return build_system(PROBLEMS[problem](params))
