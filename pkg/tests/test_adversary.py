import numpy as np
import pytest
from hypothesis import given, strategies as st

from samdp.adversary import (
    DualConvergenceError,
    dual_adversary,
    epsilon_worst_adversary,
    hard_worst_adversary,
    kl_soft_adversary,
    kl_soft_value,
    policy_entropy,
    state_obs_value,
)
from samdp.core import PerturbationMap, check_adversary_policy
from samdp.divergence import Divergence
from samdp.harness.checks import _soft_objective, grid_minimizer, simplex_grid

KL = Divergence.kl()


def row_map(k):
    return PerturbationMap.uniform([tuple(range(k))] + [(s,) for s in range(1, k)])


def rows(values):
    return st.lists(st.floats(-5, 5), min_size=values, max_size=values).map(np.array)


def test_state_obs_value_cases():
    pm = PerturbationMap.uniform([(0, 1), (1, 0)])
    q = np.array([[1.0, 2.0], [3.0, 4.0]])
    det = np.array([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(state_obs_value(q, det, pm), [[2.0, 1.0], [3.0, 4.0]])
    uni = np.full((2, 2), 0.5)
    v = state_obs_value(np.zeros((2, 2)), uni, pm, alpha_ent=1.0)
    np.testing.assert_allclose(v, np.log(2))


def test_state_obs_value_matches_summation():
    rng = np.random.default_rng(0)
    pm = PerturbationMap.uniform([(0, 1, 2), (1, 2), (2, 0, 1)])
    q = rng.normal(size=(3, 3))
    pi = rng.dirichlet(np.ones(3), size=3)
    v = state_obs_value(q, pi, pm, 0.7)
    for s, nb in enumerate(pm.neighbors):
        for j, o in enumerate(nb):
            h = -sum(x * np.log(x) for x in pi[o])
            assert v[s, j] == pytest.approx(sum(pi[o, a] * q[s, a] for a in range(3)) + 0.7 * h, abs=1e-12)
    assert np.all(v[1, 2:] == 0)
    np.testing.assert_allclose(policy_entropy(np.array([[1.0, 0.0]])), [0.0])


def test_kl_hand_row_and_grid():
    pm = row_map(3)
    v = np.zeros((3, 3))
    v[0] = [0, 1, 2]
    nu = kl_soft_adversary(v, pm, 1.0)[0]
    np.testing.assert_allclose(nu, [0.66524, 0.24473, 0.09003], atol=1e-5)
    g = grid_minimizer(v[0], pm.prior[0], 1.0, KL, simplex_grid(1e-3))
    assert 0.5 * np.abs(g - nu).sum() < 2e-3


def test_kl_constant_rows_and_infinite_temperature():
    rng = np.random.default_rng(1)
    pm = PerturbationMap([(0, 1, 2), (1, 0), (2,)], [(0.2, 0.3, 0.5), (0.6, 0.4), (1.0,)])
    v = np.full((3, 3), 4.0)
    np.testing.assert_allclose(kl_soft_adversary(v, pm, 0.3), pm.prior, atol=1e-15)
    v = rng.normal(size=(3, 3)) * 10
    assert np.abs(kl_soft_adversary(v, pm, 1e12) - pm.prior).sum(axis=1).max() / 2 < 1e-9


def test_kl_alpha_zero_routes_to_hard():
    v = np.array([[3.0, 1.0, 2.0]])
    pm = PerturbationMap.uniform([(0, 1, 2)] + [(1,), (2,)])
    v = np.vstack([v, np.zeros((2, 3))])
    np.testing.assert_array_equal(kl_soft_adversary(v, pm, 0.0), hard_worst_adversary(v, pm))


def test_kl_value_is_min_of_objective():
    rng = np.random.default_rng(2)
    pm = row_map(4)
    v = rng.uniform(size=(4, 4))
    nu = kl_soft_adversary(v, pm, 0.7)
    val = kl_soft_value(v, pm, 0.7)
    assert val[0] == pytest.approx(_soft_objective(nu[0], v[0], pm.prior[0], 0.7, KL), abs=1e-12)


@given(v=rows(4), a=st.floats(0.05, 5), c=st.floats(-100, 100))
def test_kl_shift_invariance_and_validity(v, a, c):
    pm = row_map(4)
    V = np.tile(v, (4, 1))
    nu = kl_soft_adversary(V, pm, a)
    check_adversary_policy(nu, pm)
    assert np.abs(nu.sum(axis=1) - 1).max() < 1e-12
    np.testing.assert_allclose(kl_soft_adversary(V + c, pm, a), nu, atol=1e-12)


@given(v=rows(4))
def test_kl_sharpens_as_temperature_drops(v):
    pm = row_map(4)
    V = np.tile(v, (4, 1))
    j = int(np.argmin(v))
    mass = [kl_soft_adversary(V, pm, a)[0, j] for a in np.logspace(1, -2, 25)]
    assert all(b >= a - 1e-12 for a, b in zip(mass, mass[1:]))


def test_dual_hand_row_against_grid():
    pm = row_map(3)
    v = np.zeros((3, 3))
    v[0] = [0, 1, 2]
    spec = Divergence.alpha_family(0.5)
    nu = dual_adversary(v, pm, 1.0, spec)[0]
    g = grid_minimizer(v[0], pm.prior[0], 1.0, spec, simplex_grid(1e-3))
    assert 0.5 * np.abs(g - nu).sum() < 2e-3


def test_dual_near_one_matches_kl():
    rng = np.random.default_rng(3)
    pm = PerturbationMap([(s, (s + 1) % 6, (s + 2) % 6) for s in range(6)], [tuple(rng.dirichlet(np.ones(3))) for _ in range(6)])
    for _ in range(10):
        v = rng.uniform(-2, 2, size=(6, 3))
        a = float(rng.uniform(0.3, 3.0))
        diff = dual_adversary(v, pm, a, Divergence.alpha_family(1 - 1e-6)) - kl_soft_adversary(v, pm, a)
        assert 0.5 * np.abs(diff).sum(axis=1).max() < 1e-5


@pytest.mark.parametrize("alpha", [-1.0, 0.0, 0.5, 0.9])
def test_dual_constant_rows_return_prior(alpha):
    pm = PerturbationMap([(0, 1, 2), (1, 0), (2,)], [(0.2, 0.3, 0.5), (0.6, 0.4), (1.0,)])
    nu = dual_adversary(np.full((3, 3), -1.5), pm, 0.8, Divergence.alpha_family(alpha))
    assert np.abs(nu - pm.prior).max() < 1e-9


def test_dual_rejects_kl_spec():
    with pytest.raises(ValueError):
        dual_adversary(np.zeros((1, 1)), PerturbationMap.identity(1), 1.0, KL)


def test_dual_convergence_error_reports_row():
    err = DualConvergenceError(3, 1e-3)
    assert err.row == 3 and "row 3" in str(err)


def test_epsilon_worst_hand_row():
    pm = row_map(4)
    v = np.zeros((4, 4))
    v[0] = [5, 4, 1, 3]
    nu = epsilon_worst_adversary(v, pm, 0.5)[0]
    np.testing.assert_allclose(nu, [0.125, 0.125, 0.625, 0.125])
    assert nu.sum() == 1.0


@given(v=rows(4), k=st.floats(0, 1))
def test_epsilon_worst_limits(v, k):
    pm = row_map(4)
    V = np.tile(v, (4, 1))
    np.testing.assert_allclose(epsilon_worst_adversary(V, pm, 0.0)[0], 0.25)
    np.testing.assert_array_equal(epsilon_worst_adversary(V, pm, 1.0), hard_worst_adversary(V, pm))
    nu = epsilon_worst_adversary(V, pm, k)
    check_adversary_policy(nu, pm)


def test_hard_worst_ties_pick_lowest_index():
    pm = row_map(3)
    v = np.zeros((3, 3))
    v[0] = [3, 1, 2]
    assert hard_worst_adversary(v, pm)[0].tolist() == [0, 1, 0]
    v[0] = [1, 1, 2]
    assert hard_worst_adversary(v, pm)[0].tolist() == [1, 0, 0]


def test_padding_never_wins():
    pm = PerturbationMap.uniform([(0, 1, 2), (1,), (2,)])
    v = np.array([[1.0, 2.0, 3.0], [5.0, -100.0, -100.0], [0.0, -100.0, -100.0]])
    for nu in (hard_worst_adversary(v, pm), epsilon_worst_adversary(v, pm, 0.5), kl_soft_adversary(v, pm, 1.0)):
        check_adversary_policy(nu, pm)
    nu = dual_adversary(v, pm, 1.0, Divergence.alpha_family(0.5))
    check_adversary_policy(nu, pm)
