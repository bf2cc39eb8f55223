import numpy as np
import pytest
from hypothesis import given, strategies as st

from samdp.adversary import kl_soft_adversary, policy_entropy, state_obs_value
from samdp.attacks import attack_uniform
from samdp.core import PerturbationMap, SoftParams, TabularSaMdp, identity_adversary
from samdp.divergence import Divergence
from samdp.envs import generate_random
from samdp.evaluation import (
    FixedPointReport,
    OperatorConfig,
    contraction_probe,
    discounted_visitation,
    fixed_point,
    joint_entropy,
    joint_value,
    monte_carlo_return,
    policy_q,
    soft_opt_bellman_adversary,
    soft_worst_bellman_agent,
    soft_worst_value,
    symmetry_check,
)

from conftest import single_state_mdp

KL_PARAMS = SoftParams(alpha_ent=0.3, alpha_attk=2.0)


def rand_pi(m, seed=0):
    return np.random.default_rng(seed).dirichlet(np.ones(m.n_actions), size=m.n_states)


def test_single_state_backups():
    m = single_state_mdp()
    pi = np.ones((1, 1))
    p = SoftParams(alpha_ent=0.0)
    assert soft_worst_bellman_agent(np.array([[10.0]]), m, pi, p)[0, 0] == pytest.approx(10.0)
    assert soft_opt_bellman_adversary(np.array([[-10.0]]), m, pi, p)[0, 0] == pytest.approx(-10.0)


def test_infinite_temperature_matches_prior_backup():
    m = generate_random(1, 5, 3, 3, 0.9)
    q = np.random.default_rng(0).normal(size=(5, 3))
    pi = rand_pi(m)
    big = soft_worst_bellman_agent(q, m, pi, SoftParams(alpha_ent=0.2, alpha_attk=1e12), "kl")
    prior = soft_worst_bellman_agent(q, m, pi, SoftParams(alpha_ent=0.2), "prior")
    np.testing.assert_allclose(big, prior, atol=1e-6)


def test_eps_kappa_one_equals_hard():
    m = generate_random(2, 5, 3, 3, 0.9)
    q = np.random.default_rng(1).normal(size=(5, 3))
    pi = rand_pi(m)
    a = soft_worst_bellman_agent(q, m, pi, SoftParams(alpha_ent=0.1, kappa_worst=1.0), "eps")
    b = soft_worst_bellman_agent(q, m, pi, SoftParams(alpha_ent=0.1), "hard")
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("solver,params", [
    ("kl", KL_PARAMS),
    ("eps", SoftParams(alpha_ent=0.2, kappa_worst=0.4)),
    ("hard", SoftParams()),
    ("prior", SoftParams(alpha_ent=0.5)),
    ("alpha", SoftParams(alpha_ent=0.1, alpha_attk=0.7, divergence=Divergence.alpha_family(0.5))),
])
def test_adversary_operator_mirrors_agent_operator(solver, params):
    m = generate_random(3, 5, 3, 3, 0.85)
    rng = np.random.default_rng(2)
    q = rng.normal(size=(5, 3))
    pi = rand_pi(m, 3)
    pm = m.perturbation
    qa = -pm.from_dense(q @ pi.T)
    lhs = soft_opt_bellman_adversary(qa, m, pi, params, solver)
    rhs = -pm.from_dense(soft_worst_bellman_agent(q, m, pi, params, solver) @ pi.T)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


def test_zero_reward_prior_fixed_point_is_zero():
    m = generate_random(4, 4, 2, 2, 0.9)
    m0 = TabularSaMdp(m.transition, np.zeros((4, 2)), 0.9, m.initial_dist, m.perturbation)
    op = OperatorConfig(m0, rand_pi(m0), SoftParams(), "prior", "adversary")
    qa, rep = fixed_point(op.zeros(), op)
    assert rep.converged and np.all(qa == 0)


def test_fixed_point_rate_uniqueness_and_idempotence():
    m = generate_random(5, 6, 3, 3, 0.8)
    op = OperatorConfig(m, rand_pi(m), KL_PARAMS, "kl", "agent")
    q, rep = fixed_point(op.zeros(), op)
    init_gap = op.norm(op(op.zeros()) - op.zeros())
    bound = np.log(1e-10 / init_gap) / np.log(m.gamma) + 5
    assert rep.converged and rep.iterations <= bound and rep.final_residual < 1e-10
    q2, _ = fixed_point(np.random.default_rng(0).normal(size=q.shape) * 30, op)
    np.testing.assert_allclose(q, q2, atol=1e-8)
    _, rep3 = fixed_point(q, op)
    assert rep3.iterations == 1 and rep3.final_residual < 1e-10


def test_fixed_point_reports_nonconvergence():
    m = generate_random(5, 6, 3, 3, 0.99)
    op = OperatorConfig(m, rand_pi(m), KL_PARAMS, "kl", "agent")
    _, rep = fixed_point(op.zeros(), op, max_iters=5)
    assert isinstance(rep, FixedPointReport) and not rep.converged and rep.iterations == 5


@pytest.mark.parametrize("solver,kappa", [("kl", 1.0), ("eps", 0.5), ("hard", 1.0), ("prior", 1.0)])
@pytest.mark.parametrize("side", ["agent", "adversary"])
def test_contraction_on_six_state_mdp(solver, kappa, side):
    m = generate_random(6, 6, 3, 3, 0.9)
    op = OperatorConfig(m, rand_pi(m), SoftParams(alpha_ent=0.2, alpha_attk=0.8, kappa_worst=kappa), solver, side)
    ratio = contraction_probe(op, 100, seed=1)
    assert ratio <= m.gamma + 1e-9
    # constant shifts attain gamma exactly
    assert ratio >= m.gamma - 1e-9


def test_inflated_discount_is_detected():
    m = generate_random(6, 6, 3, 3, 0.9)
    op = OperatorConfig(m, rand_pi(m), KL_PARAMS, "kl", "agent", gamma=0.9 * 1.02)
    assert contraction_probe(op, 20, seed=0) > m.gamma + 1e-3


def test_contraction_probe_needs_pairs():
    m = single_state_mdp()
    with pytest.raises(ValueError):
        contraction_probe(OperatorConfig(m, np.ones((1, 1)), SoftParams(), "kl"), 0, 0)


def test_symmetry_cases():
    m = generate_random(7, 5, 3, 3, 0.9)
    pi = rand_pi(m)
    assert symmetry_check(m, pi, KL_PARAMS, "kl") < 1e-6
    assert symmetry_check(m, pi, SoftParams(alpha_ent=0.3, kappa_worst=1.0), "eps") < 1e-6
    m0 = TabularSaMdp(m.transition, np.zeros((5, 3)), 0.9, m.initial_dist, m.perturbation)
    assert symmetry_check(m0, pi, SoftParams(alpha_attk=2.0), "kl") < 1e-12


def test_pessimism_ordering():
    m = generate_random(8, 6, 3, 4, 0.9)
    rng = np.random.default_rng(4)
    pi = rand_pi(m)
    pm = m.perturbation
    for _ in range(20):
        v = state_obs_value(rng.normal(size=(6, 3)) * 3, pi, pm, 0.2)
        kl = [soft_worst_value(v, pm, SoftParams(alpha_attk=a), "kl")[0] for a in np.logspace(1, -2, 15)]
        assert all(np.all(b <= a + 1e-12) for a, b in zip(kl, kl[1:]))
        hard = soft_worst_value(v, pm, SoftParams(), "hard")[0]
        prior = soft_worst_value(v, pm, SoftParams(), "prior")[0]
        for kappa in np.linspace(0, 1, 6):
            eps = soft_worst_value(v, pm, SoftParams(kappa_worst=kappa), "eps")[0]
            assert np.all(hard <= eps + 1e-12) and np.all(eps <= prior + 1e-12)


def test_entropy_decomposition():
    rng = np.random.default_rng(5)
    pi = rng.dirichlet(np.ones(3), size=4)
    nbrs = (0, 2, 3)
    for _ in range(20):
        nu = rng.dirichlet(np.ones(3))
        h_nu = -np.sum(nu * np.log(nu))
        split = h_nu + nu @ policy_entropy(pi)[list(nbrs)]
        assert joint_entropy(nu, pi, nbrs) == pytest.approx(split, abs=1e-12)


def test_joint_value_cases():
    V, J = joint_value(single_state_mdp(), np.ones((1, 1)), np.ones((1, 1)))
    assert V[0] == pytest.approx(10.0) and J == pytest.approx(10.0)
    m = generate_random(9, 5, 2, 3, 0.9)
    pi = rand_pi(m)
    V, _ = joint_value(m, pi, identity_adversary(m.perturbation))
    P = np.einsum("sa,sat->st", pi, m.transition)
    r = (pi * m.reward).sum(axis=1)
    # truncated series oracle
    ref, Pk = np.zeros(5), np.eye(5)
    for t in range(400):
        ref += 0.9**t * Pk @ r
        Pk = Pk @ P
    np.testing.assert_allclose(V, ref, atol=1e-10)


def test_joint_value_matches_rollouts():
    m = generate_random(10, 5, 3, 3, 0.8)
    pi = rand_pi(m)
    nu = attack_uniform(m.perturbation)
    J = joint_value(m, pi, nu)[1]
    mc, se = monte_carlo_return(m, pi, nu, 1_000_000, seed=0)
    assert abs(mc - J) < 3 * se
    # rollouts are deterministic per seed
    assert monte_carlo_return(m, pi, nu, 10_000, seed=4) == monte_carlo_return(m, pi, nu, 10_000, seed=4)


def test_behavior_mixing_zero_runs_clean():
    m = generate_random(11, 4, 2, 3, 0.7)
    pi = rand_pi(m)
    J_clean = joint_value(m, pi, identity_adversary(m.perturbation))[1]
    mc, se = monte_carlo_return(m, pi, attack_uniform(m.perturbation), 400_000, seed=1, adv_ratio=0.0)
    assert abs(mc - J_clean) < 4 * se


def test_visitation_cases():
    np.testing.assert_allclose(discounted_visitation(single_state_mdp(), np.ones((1, 1)), np.ones((1, 1))), [1.0])
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 1] = 1.0
    m = TabularSaMdp(P, np.zeros((2, 1)), 0.5, np.array([1.0, 0.0]), PerturbationMap.identity(2))
    rho = discounted_visitation(m, np.ones((2, 1)), np.ones((2, 1)))
    np.testing.assert_allclose(rho, [0.5, 0.5], atol=1e-15)


@given(seed=st.integers(0, 5000))
def test_visitation_is_distribution(seed):
    m = generate_random(seed, 5, 3, 3, 0.9)
    rho = discounted_visitation(m, rand_pi(m, seed), attack_uniform(m.perturbation))
    assert np.all(rho >= 0) and abs(rho.sum() - 1) < 1e-9


def test_extracted_adversary_reproduces_fixed_point_value():
    m = generate_random(12, 5, 3, 3, 0.9)
    pi = rand_pi(m)
    p = SoftParams(alpha_ent=0.0, alpha_attk=0.5)
    op = OperatorConfig(m, pi, p, "hard", "agent")
    q, _ = fixed_point(op.zeros(), op)
    nu = kl_soft_adversary(state_obs_value(q, pi, m.perturbation), m.perturbation, 0.0)
    V_fp = soft_worst_value(state_obs_value(q, pi, m.perturbation), m.perturbation, p, "hard")[0]
    np.testing.assert_allclose(joint_value(m, pi, nu)[0], V_fp, atol=1e-8)


def test_policy_q_matches_soft_backup():
    m = generate_random(13, 4, 3, 2, 0.9)
    pi = rand_pi(m)
    nu = attack_uniform(m.perturbation)
    Q, V = policy_q(m, pi, nu, 0.4)
    v = state_obs_value(Q, pi, m.perturbation, 0.4)
    np.testing.assert_allclose((nu * v).sum(axis=1), V, atol=1e-10)
