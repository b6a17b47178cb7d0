import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from indexone.core import finite_difference_gradient
from indexone.errors import RankDeficiencyError
from indexone.problems import VehicleParams, heisenberg_problem, vehicle_problem
from indexone.vakonomic import (
    VakonomicProblem,
    build_system,
    constraint_velocity_residual,
    legendre,
    solve_multipliers,
    velocity,
)

vals = st.floats(-2, 2, allow_nan=False)
vec3 = arrays(float, 3, elements=vals)
vec4 = arrays(float, 4, elements=vals)
vec2 = arrays(float, 2, elements=vals)

HEIS = heisenberg_problem()
VEH = vehicle_problem()
BOWL = vehicle_problem(VehicleParams(potential="cosine-bowl", alpha=1.3, beta=0.7))


# --- construction


def test_mass_must_be_symmetric_and_square():
    with pytest.raises(ValueError):
        VakonomicProblem(mass=np.array([[1.0, 0.1], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        VakonomicProblem(mass=np.ones((2, 3)))
    with pytest.raises(ValueError):
        VakonomicProblem(mass=np.zeros((2, 2)))


def test_indefinite_mass_uses_lu():
    pr = VakonomicProblem(mass=np.diag([2.0, -1.0]))
    assert np.allclose(pr.mass_solve(np.array([2.0, 3.0])), [1.0, -3.0], rtol=0, atol=1e-15)


def test_mismatched_callables_rejected():
    with pytest.raises(ValueError):
        VakonomicProblem(mass=np.eye(2), potential=lambda q: 0.0)
    with pytest.raises(ValueError):
        VakonomicProblem(mass=np.eye(2), holonomic=(lambda q: q[0],))
    with pytest.raises(ValueError):
        VakonomicProblem(mass=np.eye(2), constraints=(lambda q: q,), constraint_jacobians=())
    with pytest.raises(ValueError):
        VakonomicProblem(mass=np.eye(2), coordinate_names=("x",))


def test_rank_check():
    assert VEH.check_rank(np.zeros(4)) > 1e-10
    dup = VakonomicProblem(mass=np.eye(2), constraints=(lambda q: np.array([1.0, 0.0]), lambda q: np.array([2.0, 0.0])))
    with pytest.raises(RankDeficiencyError):
        dup.check_rank(np.zeros(2))
    with pytest.raises(RankDeficiencyError):
        solve_multipliers(dup, np.zeros(2), np.array([1.0, 1.0]))


def test_dimension_errors():
    with pytest.raises(ValueError):
        velocity(HEIS, np.zeros(2), np.zeros(3), np.zeros(1))
    with pytest.raises(ValueError):
        legendre(HEIS, np.zeros(3), np.zeros(3), np.zeros(2))
    with pytest.raises(ValueError):
        build_system(HEIS).gradient(np.zeros(6))


# --- build_system examples


def test_heisenberg_constraint_component():
    system = build_system(HEIS)
    z = np.array([0, 0, 0, 0.1, 0.3, -1, 1.0])
    grad = system.gradient(z)
    # at the origin g = (0, 0, 1), so H_lam = p_z + lam
    assert grad[-1] == pytest.approx(-1 + 1, abs=1e-15)
    assert system.dims.m == 7


def test_free_particle_limit():
    system = build_system(VakonomicProblem(mass=np.eye(3)))
    z = np.array([0.4, 0.1, -2, 1.0, -2.0, 0.5])
    assert system.hamiltonian(z) == pytest.approx(0.5 * (1 + 4 + 0.25), abs=1e-15)
    assert np.array_equal(system.gradient(z), np.concatenate([np.zeros(3), z[3:]]))


def test_vehicle_straight_energy():
    system = build_system(VEH)
    assert system.hamiltonian(np.array([0, 0, 0, 0, 1, 0, 0, 0, 0, 0.0])) == pytest.approx(0.5, abs=1e-15)


def test_missing_jacobians_fall_back_to_differences():
    pr = VakonomicProblem(mass=np.eye(3), constraints=(lambda q: np.array([-q[1], q[0], 1.0]),))
    system = build_system(pr)
    ref = build_system(HEIS)
    z = np.array([0.3, -0.2, 0.1, 0.4, 0.5, -0.6, 0.2])
    assert np.max(np.abs(system.gradient(z) - ref.gradient(z))) <= 1e-9


# --- multipliers


def test_multiplier_examples():
    assert solve_multipliers(HEIS, np.zeros(3), np.array([0.1, 0.3, -1.0])) == pytest.approx([1.0], abs=1e-15)
    assert np.array_equal(solve_multipliers(VEH, np.zeros(4), np.array([1.0, 0, 0, 0])), [0.0, 0.0])
    assert np.array_equal(solve_multipliers(BOWL, np.array([0.3, 1, 2, 3.0]), np.zeros(4)), [0.0, 0.0])


@pytest.mark.parametrize("problem", [HEIS, VEH, BOWL], ids=["heisenberg", "vehicle", "vehicle-bowl"])
def test_multipliers_zero_constraint_rows(problem):
    rng = np.random.default_rng(3)
    for _ in range(100):
        q = rng.uniform(-2, 2, problem.n)
        p = rng.normal(size=problem.n)
        lam = solve_multipliers(problem, q, p)
        res = constraint_velocity_residual(problem, q, p, lam)
        assert np.max(np.abs(res)) <= 1e-12 * (1 + np.linalg.norm(p))


@given(vec3, vec3)
def test_heisenberg_analytic_multiplier_agrees(q, p):
    g = np.array([-q[1], q[0], 1.0])
    lam = solve_multipliers(HEIS, q, p)
    assert lam[0] == pytest.approx(-(g @ p) / (g @ g), abs=1e-13)
    assert build_system(HEIS).multipliers(q, p) == pytest.approx(lam, abs=1e-13)


# --- Legendre transform and velocity map


def test_heisenberg_legendre_and_velocity():
    p = legendre(HEIS, np.zeros(3), np.array([0.1, 0.3, 0.0]), np.array([1.0]))
    assert np.allclose(p, [0.1, 0.3, -1.0], rtol=0, atol=1e-16)
    qdot = velocity(HEIS, np.zeros(3), p, np.array([1.0]))
    assert np.allclose(qdot, [0.1, 0.3, 0.0], rtol=0, atol=1e-16)


@given(vec4, vec4)
def test_zero_multiplier_legendre_is_mass(q, qdot):
    assert np.allclose(legendre(BOWL, q, qdot, np.zeros(2)), BOWL.mass @ qdot, rtol=0, atol=1e-15)
    assert np.allclose(velocity(HEIS, q[:3], qdot[:3], np.zeros(1)), qdot[:3], rtol=0, atol=0)


def test_vehicle_circular_momenta():
    a, L = 1.0, 0.3
    q = np.array([L, 0, 0, math.pi / 2])
    qdot = np.array([0, a * L, a, a])
    p = legendre(VEH, q, qdot, np.array([0.0, -a * L]))
    assert p[2:] == pytest.approx([a * (1 + L * L), a], abs=1e-15)
    assert solve_multipliers(VEH, q, p) == pytest.approx([0.0, -a * L], abs=1e-15)


@given(vec4, vec4, vec2)
def test_legendre_velocity_roundtrip(q, qdot, lam):
    p = legendre(BOWL, q, qdot, lam)
    back = velocity(BOWL, q, p, lam)
    assert np.max(np.abs(back - qdot)) <= 1e-13 * (1 + np.max(np.abs(qdot)) + np.max(np.abs(lam)))


@given(vec4, vec4, vec2)
def test_energy_identity(q, qdot, lam):
    system = build_system(BOWL)
    p = legendre(BOWL, q, qdot, lam)
    H = system.hamiltonian(np.concatenate([q, p, lam]))
    assert H == pytest.approx(0.5 * qdot @ BOWL.mass @ qdot + BOWL.V(q), abs=1e-12)


def test_constraint_residual_examples():
    res = constraint_velocity_residual(HEIS, np.zeros(3), np.array([0.1, 0.3, -1.0]), np.zeros(1))
    assert res == pytest.approx([-1.0], abs=1e-16)
    assert np.array_equal(constraint_velocity_residual(VEH, np.zeros(4), np.array([1.0, 0, 0, 0]), np.zeros(2)), [0.0, 0.0])


@given(vec3, vec3)
def test_residual_equals_h_lambda(q, p):
    system = build_system(HEIS)
    lam = np.array([0.37])
    z = np.concatenate([q, p, lam])
    assert np.max(np.abs(constraint_velocity_residual(HEIS, q, p, lam) - system.constraint_residual(z))) <= 1e-15


@pytest.mark.parametrize("problem", [HEIS, BOWL], ids=["heisenberg", "vehicle-bowl"])
def test_eliminated_hamiltonian_gradient(problem):
    # d/d(q,p) of H(q, p, lam~(q, p)) equals (H_q, H_p) at lam~
    system = build_system(problem)
    n = problem.n
    rng = np.random.default_rng(4)

    def reduced(qp):
        q, p = qp[:n], qp[n:]
        return system.hamiltonian(np.concatenate([q, p, solve_multipliers(problem, q, p)]))

    for _ in range(10):
        qp = rng.uniform(-1, 1, 2 * n)
        lam = solve_multipliers(problem, qp[:n], qp[n:])
        full = system.gradient(np.concatenate([qp, lam]))[: 2 * n]
        assert np.max(np.abs(finite_difference_gradient(reduced, qp) - full)) <= 1e-6


def test_holonomic_terms():
    pr = VakonomicProblem(
        mass=np.eye(2),
        holonomic=(lambda q: q @ q - 1.0,),
        holonomic_grads=(lambda q: 2.0 * q,),
    )
    system = build_system(pr)
    z = np.array([0.6, 0.8, 0.1, -0.2, 0.5])
    assert system.dims.l == 1
    assert system.hamiltonian(z) == pytest.approx(0.5 * 0.05, abs=1e-15)
    assert system.gradient(z)[:2] == pytest.approx([0.6, 0.8], abs=1e-15)
    assert system.without_holonomic().dims.l == 0
