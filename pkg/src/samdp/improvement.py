"""Maximum-entropy policy improvement against a fixed adversary."""

from __future__ import annotations

import numpy as np
from scipy.special import softmax

from .core import PerturbationMap, SoftParams, TabularSaMdp
from .evaluation import policy_q


def observation_weights(perturb: PerturbationMap, nu_fix: np.ndarray, state_weights: np.ndarray | None = None) -> np.ndarray:
    """Posterior ``w(s | s~)`` as an ``(n_obs, n_states)`` matrix.

    ``w(s | s~) ∝ weight(s) nu(s~ | s)``, uniform ``weight`` by default. An
    observation no state emits falls back to the states whose neighbor
    lists contain it (always including itself).
    """
    joint = perturb.to_dense(nu_fix)
    if state_weights is not None:
        joint = joint * np.asarray(state_weights, dtype=float)[:, None]
    col = joint.sum(axis=0)
    member = perturb.to_dense(perturb.mask.astype(float))
    joint = np.where(col[None, :] > 0, joint, member)
    return (joint / joint.sum(axis=0, keepdims=True)).T


def greedy_policy(qbar: np.ndarray) -> np.ndarray:
    pi = np.zeros_like(qbar, dtype=float)
    pi[np.arange(qbar.shape[0]), np.argmax(qbar, axis=1)] = 1.0
    return pi


def soft_policy_improvement(q: np.ndarray, perturb: PerturbationMap, nu_fix: np.ndarray, alpha_ent: float, state_weights: np.ndarray | None = None) -> np.ndarray:
    """``pi_new(.|s~) ∝ exp(qbar(s~, .) / alpha_ent)``, ``qbar = w @ q``.

    ``alpha_ent == 0`` gives the greedy policy, lowest action index on ties.
    """
    qbar = observation_weights(perturb, nu_fix, state_weights) @ np.asarray(q, dtype=float)
    if alpha_ent == 0:
        return greedy_policy(qbar)
    return softmax(qbar / alpha_ent, axis=1)


def _kl_rows(pi: np.ndarray, perturb: PerturbationMap) -> np.ndarray:
    """``KL(pi(.|s) || pi(.|o))`` for every neighbor ``o`` of ``s``, padded."""
    ref = pi[:, None, :]
    other = pi[perturb.index]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(ref > 0, ref * (np.log(np.where(ref > 0, ref, 1.0)) - np.log(other)), 0.0)
    kl = terms.sum(axis=2)
    return np.where(perturb.mask, np.maximum(kl, 0.0), -np.inf)


def robust_regularizer(pi: np.ndarray, perturb: PerturbationMap) -> tuple[np.ndarray, float]:
    """Per-state ``max_{s~} KL(pi(.|s) || pi(.|s~))`` and its mean.

    A support mismatch yields ``inf`` for that state rather than an error.
    """
    per_state = _kl_rows(np.asarray(pi, dtype=float), perturb).max(axis=1)
    return per_state, float(per_state.mean())


def regularized_policy_improvement(
    q: np.ndarray,
    perturb: PerturbationMap,
    nu_fix: np.ndarray,
    alpha_ent: float,
    coeff: float,
    steps: int = 200,
    lr: float = 0.1,
) -> np.ndarray:
    """Soft improvement minus ``coeff`` times the robust regularizer.

    Starts at the unregularized solution and runs exponentiated-gradient
    ascent on ``sum_o [E_pi qbar + alpha_ent H] - coeff sum_s max KL``,
    using the subgradient at the maximizing neighbor. A step is kept only
    if it does not lower the objective; otherwise the step size is halved.
    """
    pi = soft_policy_improvement(q, perturb, nu_fix, alpha_ent)
    if coeff == 0:
        return pi
    qbar = observation_weights(perturb, nu_fix) @ np.asarray(q, dtype=float)
    rows = np.arange(perturb.n_states)
    floor = 1e-12

    def objective(p):
        ent = -(p * np.log(p)).sum()
        return float((p * qbar).sum() + alpha_ent * ent - coeff * _kl_rows(p, perturb).max(axis=1).sum())

    # keep every row interior so the ratio in the gradient stays finite
    pi = np.maximum(pi, floor)
    pi /= pi.sum(axis=1, keepdims=True)
    best = objective(pi)
    for _ in range(steps):
        logp = np.log(pi)
        grad = qbar - alpha_ent * (logp + 1.0)
        o = perturb.index[rows, np.argmax(_kl_rows(pi, perturb), axis=1)]
        active = o != rows
        s_act, o_act = rows[active], o[active]
        grad[s_act] -= coeff * (logp[s_act] - logp[o_act] + 1.0)
        np.add.at(grad, o_act, coeff * pi[s_act] / pi[o_act])
        grad -= grad.mean(axis=1, keepdims=True)
        while lr > 1e-12:
            cand = np.maximum(softmax(logp + lr * grad, axis=1), floor)
            cand /= cand.sum(axis=1, keepdims=True)
            val = objective(cand)
            if val >= best:
                pi, best = cand, val
                break
            lr *= 0.5
        else:
            break
    return pi


def improvement_audit(mdp: TabularSaMdp, nu_fix: np.ndarray, pi_old: np.ndarray, pi_new: np.ndarray, params: SoftParams) -> float:
    """``min_{s,a} Q^{pi_new}_nu - Q^{pi_old}_nu`` under the fixed adversary."""
    q_old, _ = policy_q(mdp, pi_old, nu_fix, params.alpha_ent)
    q_new, _ = policy_q(mdp, pi_new, nu_fix, params.alpha_ent)
    return float(np.min(q_new - q_old))
