import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from twoparty_lab.minimax import GAP_TOL, solve_zero_sum


def test_matching_pennies():
    game = solve_zero_sum([[1, -1], [-1, 1]])
    assert game.value == pytest.approx(0.0, abs=1e-10)
    assert np.allclose(game.row_strategy, [0.5, 0.5])
    assert np.allclose(game.col_strategy, [0.5, 0.5])
    assert game.gap <= GAP_TOL


def test_rock_paper_scissors_is_uniform():
    payoff = np.array([[0, -1, 1], [1, 0, -1], [-1, 1, 0]])
    game = solve_zero_sum(payoff)
    assert game.value == pytest.approx(0.0, abs=1e-10)
    assert np.allclose(game.col_strategy, np.full(3, 1 / 3))


def test_dominant_column_is_pure():
    payoff = np.array([[3, 1], [4, 2]])
    game = solve_zero_sum(payoff)
    # the maximiser picks column 0 and the minimiser row 0
    assert game.value == pytest.approx(3.0)
    assert np.allclose(game.col_strategy, [1, 0])
    assert np.allclose(game.row_strategy, [1, 0])


def test_single_entry_and_validation():
    assert solve_zero_sum([[0.7]]).value == pytest.approx(0.7)
    with pytest.raises(ValueError):
        solve_zero_sum([[np.nan]])
    with pytest.raises(ValueError):
        solve_zero_sum(np.zeros((0, 2)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-2, 1, allow_nan=False)))
def test_strategies_certify_the_value(payoff):
    game = solve_zero_sum(payoff)
    assert game.gap <= GAP_TOL
    assert np.all(game.col_strategy >= 0) and game.col_strategy.sum() == pytest.approx(1.0)
    assert np.min(payoff @ game.col_strategy) >= game.value - 1e-8
    assert np.max(game.row_strategy @ payoff) <= game.value + 1e-8
    pure_lower = np.max(np.min(payoff, axis=0))
    pure_upper = np.min(np.max(payoff, axis=1))
    assert pure_lower - 1e-9 <= game.value <= pure_upper + 1e-9


def test_to_dict_has_gap():
    d = solve_zero_sum([[1, 0], [0, 1]]).to_dict()
    assert d["value"] == pytest.approx(0.5)
    assert d["duality_gap"] <= GAP_TOL
