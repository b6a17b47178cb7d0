import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from indexone.core import (
    DarbouxDims,
    HamiltonianSystem,
    LUFactor,
    PhaseState,
    StructureMatrix,
    canonical_matrix,
    finite_difference_gradient,
    finite_difference_jacobian,
    index_one_certificate,
    manifold_multipliers,
    solve_dense_linear,
    solve_multipliers_newton,
)
from indexone.errors import EvaluationError, IndexViolationError, SingularMatrixError
from indexone.problems import (
    heisenberg_named_state,
    heisenberg_problem,
    particle_on_circle_problem,
    vehicle_problem,
    VehicleParams,
)
from indexone.vakonomic import build_system

finite = st.floats(-3, 3, allow_nan=False)


# --- dimensions and states


def test_dims_blocks():
    d = DarbouxDims(4, 2, 1)
    assert d.m == 11
    assert (d.q, d.p, d.lam, d.lam_h) == (slice(0, 4), slice(4, 8), slice(8, 10), slice(10, 11))


@pytest.mark.parametrize("n,k,l", [(0, 0, 0), (1, -1, 0), (2, 0, -1)])
def test_dims_reject_invalid(n, k, l):
    with pytest.raises(ValueError):
        DarbouxDims(n, k, l)


@given(st.integers(1, 6), st.integers(0, 4), st.integers(0, 3))
def test_dims_total(n, k, l):
    assert DarbouxDims(n, k, l).m == 2 * n + k + l


def test_state_roundtrip_and_immutability():
    s = PhaseState([1, 2], [3, 4], [5], [6])
    d = s.dims
    assert d == DarbouxDims(2, 1, 1)
    assert np.array_equal(PhaseState.from_vector(d, s.to_vector()).to_vector(), s.to_vector())
    with pytest.raises(ValueError):
        s.q[0] = 9.0


def test_state_length_mismatch():
    with pytest.raises(ValueError):
        PhaseState([1, 2], [3])
    with pytest.raises(ValueError):
        PhaseState.from_vector(DarbouxDims(2), np.zeros(5))
    with pytest.raises(ValueError):
        PhaseState([1.0], [2.0]).check_dims(DarbouxDims(1, 1))


# --- structure matrix


@given(st.integers(1, 5), st.integers(0, 3), st.integers(0, 2))
def test_structure_matrix_properties(n, k, l):
    J = StructureMatrix(DarbouxDims(n, k, l)).dense()
    assert np.max(np.abs(J + J.T)) == 0.0
    assert np.linalg.matrix_rank(J) == 2 * n
    assert np.array_equal(J[: 2 * n, : 2 * n], canonical_matrix(n))


@given(arrays(float, 7, elements=finite))
def test_structure_apply_matches_dense(v):
    S = StructureMatrix(DarbouxDims(3, 1))
    assert np.array_equal(S.apply(v), S.dense() @ v)


def test_canonical_matrix_block():
    assert np.array_equal(canonical_matrix(1), np.array([[0.0, -1.0], [1.0, 0.0]]))


# --- finite differences


def test_fd_gradient_quadratic():
    g = finite_difference_gradient(lambda z: z[0] ** 2, np.array([3.0]), 1e-5)
    assert abs(g[0] - 6.0) <= 1e-9


@given(arrays(float, 4, elements=finite))
def test_fd_gradient_constant_is_zero(z):
    assert np.array_equal(finite_difference_gradient(lambda _: 2.5, z), np.zeros(4))


def test_fd_gradient_matches_heisenberg_gradient():
    system = build_system(heisenberg_problem())
    z = np.array([0, 0, 0, 0.1, 0.3, -1, 1.0])
    assert np.max(np.abs(finite_difference_gradient(system.hamiltonian, z) - system.gradient(z))) <= 1e-8


def test_fd_gradient_names_bad_component():
    def f(z):
        return np.inf if z[2] > 0.5 else 0.0

    with pytest.raises(EvaluationError) as err:
        finite_difference_gradient(f, np.array([0.0, 0.0, 0.5]), 1e-3)
    assert err.value.component == 2
    with pytest.raises(ValueError):
        finite_difference_gradient(f, np.zeros(1), 0.0)


def test_fd_jacobian_linear_map():
    A = np.array([[1.0, 2.0], [3.0, -4.0], [0.5, 0.0]])
    J = finite_difference_jacobian(lambda z: A @ z, np.array([0.3, -0.2]))
    assert np.max(np.abs(J - A)) <= 1e-9


def test_fd_jacobian_non_finite():
    with pytest.raises(EvaluationError):
        finite_difference_jacobian(lambda z: np.array([np.nan]), np.zeros(1))


# --- linear solves


def test_solve_identity_and_diagonal():
    assert np.array_equal(solve_dense_linear(np.eye(2), [1.0, 2.0]), [1.0, 2.0])
    assert np.allclose(solve_dense_linear([[2.0, 0.0], [0.0, 4.0]], [2.0, 8.0]), [1.0, 2.0], atol=0, rtol=1e-15)


def test_solve_singular_reports_pivot():
    with pytest.raises(SingularMatrixError) as err:
        solve_dense_linear([[1.0, 1.0], [1.0, 1.0]], [1.0, 0.0])
    assert err.value.pivot < 1e-14
    with pytest.raises(SingularMatrixError):
        solve_dense_linear(np.zeros((2, 2)), [0.0, 0.0])


def test_solve_rejects_non_square():
    with pytest.raises(ValueError):
        LUFactor(np.zeros((2, 3)))


@given(
    arrays(float, (4, 4), elements=st.floats(-1, 1, allow_nan=False)),
    arrays(float, 4, elements=st.floats(-10, 10, allow_nan=False)),
)
def test_solve_residual_bound(B, rhs):
    A = B + 5.0 * np.eye(4)  # diagonally dominant, well conditioned
    x = solve_dense_linear(A, rhs)
    assert np.max(np.abs(A @ x - rhs)) <= 1e-12 * (1 + np.max(np.abs(rhs)))


# --- generic systems and multipliers


def _generic_constrained():
    """Hand-written index-1 system: H = |p + lam g|^2 / 2 with g = (1, q0)."""
    dims = DarbouxDims(2, 1)

    def H(z):
        q, p, lam = z[:2], z[2:4], z[4]
        u = p + lam * np.array([1.0, q[0]])
        return 0.5 * u @ u

    def grad(z):
        q, p, lam = z[:2], z[2:4], z[4]
        g = np.array([1.0, q[0]])
        u = p + lam * g
        return np.array([lam * u[1], 0.0, u[0], u[1], g @ u])

    return HamiltonianSystem(dims, H, grad)


def test_newton_multipliers_match_closed_form():
    system = _generic_constrained()
    q, p = np.array([0.7, 0.0]), np.array([0.2, -0.4])
    g = np.array([1.0, 0.7])
    lam = solve_multipliers_newton(system, q, p)
    assert abs(lam[0] + (g @ p) / (g @ g)) <= 1e-14
    assert np.array_equal(manifold_multipliers(system, q, p), lam)


def test_generic_gradient_consistent():
    system = _generic_constrained()
    rng = np.random.default_rng(0)
    for _ in range(20):
        z = rng.normal(size=5)
        assert np.max(np.abs(finite_difference_gradient(system.hamiltonian, z) - system.gradient(z))) <= 1e-8


def test_index_violation_detected():
    # H_lam does not depend on lam: the index-1 assumption fails
    dims = DarbouxDims(1, 1)
    system = HamiltonianSystem(dims, lambda z: 0.5 * z[1] ** 2 + z[2] * z[0], lambda z: np.array([z[2], z[1], z[0]]))
    with pytest.raises(IndexViolationError):
        solve_multipliers_newton(system, np.array([1.0]), np.array([0.0]))
    assert index_one_certificate(system, np.array([1.0, 0.0, 0.0])) < 1e-8


def test_on_manifold_predicate():
    system = build_system(heisenberg_problem())
    z = heisenberg_named_state().state.to_vector()
    assert system.on_manifold(z)
    z[-1] = 0.0
    assert not system.on_manifold(z)


def _random_states(system, rng, count):
    d = system.dims
    for _ in range(count):
        q = rng.uniform(-1.5, 1.5, d.n)
        if d.l:
            q /= np.linalg.norm(q)
        z = np.concatenate([q, rng.normal(size=d.n), rng.normal(size=d.k), rng.normal(size=d.l)])
        yield z


@pytest.mark.parametrize(
    "problem",
    [
        heisenberg_problem(),
        vehicle_problem(),
        vehicle_problem(VehicleParams(potential="cosine-bowl")),
        particle_on_circle_problem(gravity=1.0),
    ],
    ids=["heisenberg", "vehicle", "vehicle-bowl", "circle"],
)
def test_gradient_consistency_random_states(problem):
    system = build_system(problem)
    rng = np.random.default_rng(1)
    for z in _random_states(system, rng, 100):
        grad = system.gradient(z)
        fd = finite_difference_gradient(system.hamiltonian, z, 1e-6)
        assert np.max(np.abs(grad - fd)) <= 1e-6 * (1 + np.max(np.abs(grad)))


@pytest.mark.parametrize("problem", [heisenberg_problem(), vehicle_problem()], ids=["heisenberg", "vehicle"])
def test_analytic_hessian_matches_fd(problem):
    system = build_system(problem)
    rng = np.random.default_rng(2)
    for z in _random_states(system, rng, 10):
        fd = finite_difference_jacobian(system.gradient, z)
        assert np.max(np.abs(system.hessian(z) - fd)) <= 1e-7 * (1 + np.max(np.abs(fd)))
