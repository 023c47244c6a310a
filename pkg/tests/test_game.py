import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pwflow import arith
from pwflow.game import (GameError, GameMatrix, P, Q, SimplexPoint, best_response,
                         brute_force_value, check_transversality, hamiltonian_value,
                         random_transversal_game, shapley_matrix, solve_completely_mixed,
                         solve_nash)

I2 = GameMatrix([[1, 0], [0, 1]])
F = Fraction


# -- arithmetic helpers ---------------------------------------------------------

def test_exact_solve_is_rational():
    a = arith.as_array([[2, 1], [1, 3]], True)
    x = arith.solve(a, arith.as_array([1, 2], True))
    assert list(x) == [F(1, 5), F(3, 5)]


def test_singular_solve_raises():
    a = arith.as_array([[1, 2], [2, 4]], True)
    with pytest.raises(arith.SingularMatrixError):
        arith.solve(a, arith.as_array([1, 1], True))


# -- matrices and best responses ------------------------------------------------

def test_matrix_validation():
    with pytest.raises(GameError):
        GameMatrix([[1, 2, 3]])
    with pytest.raises(GameError):
        GameMatrix([[1.0, np.nan], [0.0, 1.0]])


def test_json_roundtrip_exact(B_exact):
    again = GameMatrix.from_json(B_exact.to_json())
    assert again == B_exact and again.exact


def test_simplex_point_rejects_bad_vectors():
    with pytest.raises(GameError):
        SimplexPoint(np.array([0.7, 0.7]), P)
    SimplexPoint(np.array([F(1, 3), F(2, 3)], dtype=object), Q)


def test_best_response_single_valued():
    assert best_response(I2, np.array([0.6, 0.4]), P).support == (1,)


def test_best_response_tie():
    assert best_response(I2, [F(1, 2), F(1, 2)], P).support == (1, 2)


def test_best_response_full_tie_at_B_center(B_exact):
    third = [F(1, 3)] * 3
    assert best_response(B_exact, third, P).support == (1, 2, 3)


def test_hamiltonian_values(B_exact):
    assert hamiltonian_value(I2, [F(1, 2)] * 2, [F(1, 2)] * 2) == 0
    assert hamiltonian_value(I2, [1, 0], [1, 0]) == 1
    assert hamiltonian_value(B_exact, [F(1, 3)] * 3, [F(1, 3)] * 3) == 0


@given(st.lists(st.floats(0.01, 1), min_size=3, max_size=3),
       st.lists(st.floats(0.01, 1), min_size=3, max_size=3))
def test_hamiltonian_nonnegative(a, b):
    B = shapley_matrix(exact=False)
    p, q = np.array(a) / sum(a), np.array(b) / sum(b)
    assert hamiltonian_value(B, p, q) >= -1e-15


# -- transversality -------------------------------------------------------------

def test_identity_fails_transversality():
    rep = check_transversality(GameMatrix(np.eye(3, dtype=int).tolist()))
    assert not rep.assumption1_ok and rep.failing_minors


def test_B_is_transversal(B_exact):
    rep = check_transversality(B_exact)
    assert rep.assumption1_ok and rep.assumption2_ok


def test_B_determinant(B_exact):
    beta = F(618, 1000)
    assert arith.det(B_exact.entries) == 1 + beta ** 3


def test_random_continuous_matrices_are_transversal(rng):
    for _ in range(20):
        rep = check_transversality(GameMatrix(rng.uniform(-1, 1, (3, 3))))
        assert rep.assumption1_ok and rep.assumption2_ok


# -- equilibria -----------------------------------------------------------------

def test_B_equilibrium(B_exact):
    eq = solve_nash(B_exact)
    beta = F(618, 1000)
    assert list(eq.p_bar) == [F(1, 3)] * 3 and list(eq.q_bar) == [F(1, 3)] * 3
    assert eq.mu == (1 + beta) / 3
    assert eq.completely_mixed and eq.support_p == (1, 2, 3)


def test_identity_equilibrium():
    eq = solve_nash(I2, check=False)
    assert list(eq.p_bar) == [F(1, 2)] * 2 and list(eq.q_bar) == [F(1, 2)] * 2


def test_diag_2_1_equilibrium():
    M = GameMatrix([[2, 0], [0, 1]])
    eq = solve_nash(M)
    assert list(eq.p_bar) == [F(1, 3), F(2, 3)]
    assert list(eq.q_bar) == [F(1, 3), F(2, 3)]
    assert eq.value == F(2, 3)
    assert abs(brute_force_value(M) - 2 / 3) <= 1e-2


def test_dominant_row_pure_equilibrium():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        eq = solve_nash(GameMatrix([[3, 2], [1, 0]]))
    assert list(eq.p_bar) == [1, 0] and list(eq.q_bar) == [0, 1]
    assert eq.value == 2 and not eq.completely_mixed


def test_completely_mixed_agrees_with_enumeration(B_exact):
    a = solve_completely_mixed(B_exact)
    b = solve_nash(B_exact)
    assert list(a.p_bar) == list(b.p_bar) and a.lam == b.lam


def test_hand_solved_game_value():
    # [[3, -1], [-2, 1]]: p = (3/7, 4/7), q = (2/7, 5/7), value 1/7
    eq = solve_nash(GameMatrix([[3, -1], [-2, 1]]))
    assert list(eq.p_bar) == [F(3, 7), F(4, 7)]
    assert list(eq.q_bar) == [F(2, 7), F(5, 7)]
    assert eq.value == F(1, 7)


@given(st.integers(0, 10 ** 6))
def test_equilibrium_conditions_hold(seed):
    M = random_transversal_game(np.random.default_rng(seed), 3, exact=True, denominator=13)
    eq = solve_nash(M, check=False)
    a = M.entries
    assert all(v >= eq.lam for v in eq.p_bar @ a)
    assert all(v <= eq.mu for v in a @ eq.q_bar)
    assert eq.lam == eq.mu


@given(st.integers(0, 10 ** 6))
def test_brute_force_value_on_2x2(seed):
    M = random_transversal_game(np.random.default_rng(seed), 2)
    eq = solve_nash(M, check=False)
    assert abs(brute_force_value(M) - float(eq.value)) <= 1e-2
