"""Test-time attacks on a frozen agent policy, evaluated exactly."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .adversary import hard_worst_adversary, state_obs_value
from .core import PerturbationMap, TabularSaMdp, identity_adversary
from .evaluation import FixedPointError, adversary_cost, joint_value, policy_q
from .improvement import _kl_rows


def attack_uniform(perturb: PerturbationMap) -> np.ndarray:
    return np.where(perturb.mask, 1.0 / perturb.counts[:, None], 0.0)


def attack_mad(pi: np.ndarray, perturb: PerturbationMap) -> np.ndarray:
    """Point mass on the observation maximizing ``KL(pi(.|s) || pi(.|s~))``."""
    kl = _kl_rows(np.asarray(pi, dtype=float), perturb)
    nu = np.zeros(perturb.index.shape)
    nu[np.arange(perturb.n_states), np.argmax(kl, axis=1)] = 1.0
    return nu


def attack_min_v(pi: np.ndarray, q_clean: np.ndarray, perturb: PerturbationMap, alpha_ent: float = 0.0) -> np.ndarray:
    """Greedy one-step attack: minimize the policy's value at the shown observation."""
    return hard_worst_adversary(state_obs_value(q_clean, pi, perturb, alpha_ent), perturb)


def attack_optimal(mdp: TabularSaMdp, pi: np.ndarray, tol: float = 1e-10, max_iters: int = 100_000) -> np.ndarray:
    """Exact worst-case deterministic adversary against a frozen ``pi``.

    The adversary's MDP has actions = neighbor slots, reward ``c(s, s~)``
    and transitions ``F o pi``. Value iteration to ``tol`` seeds a policy
    iteration loop so the returned policy is exactly optimal.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    pm = mdp.perturbation
    pi = np.asarray(pi, dtype=float)
    n = mdp.n_states
    cost = np.where(pm.mask, adversary_cost(mdp, pi), -np.inf)
    # P_adv[s, k, s'] = sum_a pi(a | o_k) F(s' | s, a)
    P_adv = np.einsum("ska,sat->skt", pi[pm.index], mdp.transition)
    g = mdp.gamma
    V = np.zeros(n)
    for _ in range(max_iters):
        V_new = np.max(cost + g * (P_adv @ V), axis=1)
        done = np.max(np.abs(V_new - V)) < tol
        V = V_new
        if done:
            break
    else:
        raise FixedPointError("adversary value iteration did not converge")
    choice = np.argmax(cost + g * (P_adv @ V), axis=1)
    rows = np.arange(n)
    for _ in range(n * pm.max_k + 1):
        P = P_adv[rows, choice]
        V = np.linalg.solve(np.eye(n) - g * P, cost[rows, choice])
        Qk = cost + g * (P_adv @ V)
        best = Qk.max(axis=1)
        # switch only on a strict gain so the loop terminates
        improve = best > Qk[rows, choice] + 1e-12 * max(1.0, np.max(np.abs(V)))
        if not improve.any():
            break
        choice = np.where(improve, np.argmax(Qk, axis=1), choice)
    nu = np.zeros(pm.index.shape)
    nu[rows, choice] = 1.0
    return nu


def evaluate_under_attack(mdp: TabularSaMdp, pi: np.ndarray, nu: np.ndarray) -> tuple[float, np.ndarray]:
    V, J = joint_value(mdp, pi, nu)
    return J, V


AttackFn = Callable[[TabularSaMdp, np.ndarray, float], np.ndarray]


def _uniform(mdp, pi, alpha_ent):
    return attack_uniform(mdp.perturbation)


def _mad(mdp, pi, alpha_ent):
    return attack_mad(pi, mdp.perturbation)


def _min_v(mdp, pi, alpha_ent):
    q_clean, _ = policy_q(mdp, pi, identity_adversary(mdp.perturbation), alpha_ent)
    return attack_min_v(pi, q_clean, mdp.perturbation, alpha_ent)


def _optimal(mdp, pi, alpha_ent):
    return attack_optimal(mdp, pi)


ATTACKS: dict[str, AttackFn] = {
    "uniform": _uniform,
    "mad": _mad,
    "min_v": _min_v,
    "optimal": _optimal,
}


def run_attacks(mdp: TabularSaMdp, pi: np.ndarray, names, alpha_ent: float = 0.0) -> dict[str, float]:
    """Attacked ``J`` per attack name, plus ``"clean"``."""
    out = {"clean": joint_value(mdp, pi, identity_adversary(mdp.perturbation))[1]}
    for name in names:
        if name not in ATTACKS:
            raise KeyError(f"unknown attack {name!r}; known: {sorted(ATTACKS)}")
        out[name] = evaluate_under_attack(mdp, pi, ATTACKS[name](mdp, pi, alpha_ent))[0]
    return out
