from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pwflow import arith
from pwflow.game import GameMatrix, P, Q, best_response, hamiltonian_value, solve_nash
from pwflow.geometry import (ProjectionError, SymplecticForm, build_projections,
                             hamiltonian_vector_field, project_to_level_set,
                             verify_symplectic_identity)

F = Fraction


def _random_invertible(rng, n, cond_max=1e6):
    while True:
        A = rng.uniform(-1, 1, (n, n))
        if np.linalg.cond(A) <= cond_max and abs(np.ones(n) @ np.linalg.solve(A, np.ones(n))) > 1e-6:
            return A


def test_identity_projections_center():
    pr = build_projections(SymplecticForm(arith.eye(3, True)))
    v = arith.as_array([1, 2, 6], True)
    assert list(pr.P_p @ v) == [-2, -1, 3]
    assert list(pr.P_q @ v) == [-2, -1, 3]


def test_projection_kills_kernel_direction(B_exact):
    pr = build_projections(SymplecticForm(B_exact.entries))
    d = arith.solve(B_exact.entries, arith.ones(3, True))
    assert all(v == 0 for v in pr.P_q @ d)


def test_projections_idempotent(rng):
    A = _random_invertible(rng, 3)
    pr = build_projections(SymplecticForm(A))
    for Pm in (pr.P_p, pr.P_q):
        assert np.max(np.abs(Pm @ Pm - Pm)) <= 1e-12
        assert np.max(np.abs(np.ones(3) @ Pm)) <= 1e-12


def test_identity_exact_for_identity_and_B(B_exact, B_float):
    assert verify_symplectic_identity(SymplecticForm(arith.eye(3, True))) == 0
    assert verify_symplectic_identity(SymplecticForm(B_exact.entries)) == 0
    assert verify_symplectic_identity(SymplecticForm(B_float.entries)) <= 1e-12


@given(st.integers(0, 10 ** 6))
def test_identity_random_4x4(seed):
    A = _random_invertible(np.random.default_rng(seed), 4)
    assert verify_symplectic_identity(SymplecticForm(A)) <= 1e-10


def test_singular_form_rejected():
    with pytest.raises(ProjectionError):
        SymplecticForm(np.array([[1.0, 2.0], [2.0, 4.0]]))


def test_vector_field_lemma_A_equals_M(B_exact, rng):
    eq = solve_nash(B_exact)
    form = SymplecticForm(B_exact.entries)
    for _ in range(10):
        w = rng.integers(1, 50, size=6)
        p = arith.as_array([F(int(v), int(w[:3].sum())) for v in w[:3]], True)
        q = arith.as_array([F(int(v), int(w[3:].sum())) for v in w[3:]], True)
        vels = hamiltonian_vector_field(B_exact, form, p, q)
        i = best_response(B_exact, q, P).support
        j = best_response(B_exact, p, Q).support
        if len(i) == 1 and len(j) == 1:
            assert len(vels) == 1
            vp, vq = vels[0]
            assert list(vp) == list(arith.unit(3, i[0] - 1, True) - eq.p_bar)
            assert list(vq) == list(arith.unit(3, j[0] - 1, True) - eq.q_bar)
        for vp, vq in vels:
            assert sum(vp) == 0 and sum(vq) == 0


def test_projection_identity_2x2():
    I2 = GameMatrix([[1, 0], [0, 1]])
    eq = solve_nash(I2, check=False)
    pt = project_to_level_set(I2, eq, [1, 0], [1, 0], F(1, 2))
    assert list(pt.p) == [F(3, 4), F(1, 4)] and list(pt.q) == [F(3, 4), F(1, 4)]


def test_projection_fixes_level_set(B_exact):
    eq = solve_nash(B_exact)
    p = arith.as_array([F(1, 2), F(1, 4), F(1, 4)], True)
    q = arith.as_array([F(1, 5), F(2, 5), F(2, 5)], True)
    h = hamiltonian_value(B_exact, p, q)
    pt = project_to_level_set(B_exact, eq, p, q, h)
    assert list(pt.p) == list(p) and list(pt.q) == list(q)


def test_projection_undefined_at_equilibrium(B_exact):
    eq = solve_nash(B_exact)
    with pytest.raises(ProjectionError):
        project_to_level_set(B_exact, eq, eq.p_bar, eq.q_bar, F(1, 10))


@given(st.integers(0, 10 ** 6), st.floats(0.01, 0.3))
def test_projection_lands_on_level(seed, rho):
    from pwflow.game import shapley_matrix
    B = shapley_matrix(exact=False)
    eq = solve_nash(B, check=False)
    r = np.random.default_rng(seed)
    p, q = r.dirichlet(np.ones(3)), r.dirichlet(np.ones(3))
    pt = project_to_level_set(B, eq, p, q, rho, require_simplex=False)
    assert abs(hamiltonian_value(B, pt.p, pt.q) - rho) <= 1e-12
