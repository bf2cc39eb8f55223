"""Soft Bellman operators for agent and adversary, fixed points and exact oracles.

Solvers name the inner adversary used by both operators:

``kl``     closed-form softmin ``-a log sum p exp(-v/a)``
``alpha``  dual-form alpha-divergence adversary, value substituted explicitly
``eps``    epsilon-worst mixture, value ``E_nu[v]``
``hard``   point mass on the minimizer, value ``min v``
``prior``  the prior itself, value ``E_p[v]``

The entropy term of the joint chain ``nu`` then ``pi`` is split as
``H(nu) + E_nu[H(pi(.|s~))]``; only the second part enters ``v``, the KL
branch absorbs ``H(nu)`` into the divergence penalty, and the
hard-constrained solvers (``eps``, ``hard``) carry no penalty at all.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .adversary import (
    dual_adversary,
    epsilon_worst_adversary,
    hard_worst_adversary,
    kl_soft_adversary,
    kl_soft_value,
    policy_entropy,
    state_obs_value,
)
from .core import PerturbationMap, SoftParams, TabularSaMdp
from .divergence import divergence_rows

SOLVERS = ("kl", "alpha", "eps", "hard", "prior")


class FixedPointError(RuntimeError):
    pass


def soft_worst_value(v: np.ndarray, perturb: PerturbationMap, params: SoftParams, solver: str) -> tuple[np.ndarray, np.ndarray]:
    """Inner minimization per state: returns ``(V, nu)``."""
    mask = perturb.mask
    if solver == "kl":
        if params.alpha_attk == 0:
            return soft_worst_value(v, perturb, params, "hard")
        return kl_soft_value(v, perturb, params.alpha_attk), kl_soft_adversary(v, perturb, params.alpha_attk)
    if solver == "alpha":
        nu = dual_adversary(v, perturb, params.alpha_attk, params.divergence)
        penalty = divergence_rows(nu, perturb.prior, mask, params.divergence) if params.alpha_attk else 0.0
        return (nu * np.where(mask, v, 0.0)).sum(axis=1) + params.alpha_attk * penalty, nu
    if solver == "eps":
        nu = epsilon_worst_adversary(v, perturb, params.kappa_worst)
    elif solver == "hard":
        nu = hard_worst_adversary(v, perturb)
    elif solver == "prior":
        nu = np.array(perturb.prior)
    else:
        raise ValueError(f"unknown solver {solver!r}; expected one of {SOLVERS}")
    return (nu * np.where(mask, v, 0.0)).sum(axis=1), nu


def soft_worst_bellman_agent(q: np.ndarray, mdp: TabularSaMdp, pi: np.ndarray, params: SoftParams, solver: str = "kl", gamma: float | None = None) -> np.ndarray:
    """``(T Q)(s, a) = r(s, a) + gamma E_F[min_nu V(s')]``.

    ``gamma`` overrides ``mdp.gamma`` and exists for fault injection only.
    """
    g = mdp.gamma if gamma is None else gamma
    v = state_obs_value(q, pi, mdp.perturbation, params.alpha_ent)
    V, _ = soft_worst_value(v, mdp.perturbation, params, solver)
    return mdp.reward + g * (mdp.transition @ V)


def adversary_cost(mdp: TabularSaMdp, pi: np.ndarray) -> np.ndarray:
    """``c(s, s~) = E_{pi(.|s~)}[-r(s, a)]`` in the padded neighbor layout."""
    return -mdp.perturbation.from_dense(mdp.reward @ np.asarray(pi).T)


def adversary_value(qa: np.ndarray, mdp: TabularSaMdp, pi: np.ndarray, params: SoftParams, solver: str) -> tuple[np.ndarray, np.ndarray]:
    """``max_nu E_nu[qa] - alpha_ent E_nu H(pi) - alpha_attk D_f(nu || p)``."""
    pm = mdp.perturbation
    h = pm.from_dense(np.broadcast_to(policy_entropy(pi), (pm.n_states, pm.n_states)))
    u = np.where(pm.mask, -np.asarray(qa) + params.alpha_ent * h, 0.0)
    V, nu = soft_worst_value(u, pm, params, solver)
    return -V, nu


def soft_opt_bellman_adversary(qa: np.ndarray, mdp: TabularSaMdp, pi: np.ndarray, params: SoftParams, solver: str = "kl", gamma: float | None = None) -> np.ndarray:
    """``(T Qa)(s, s~) = c(s, s~) + gamma E_{F o pi}[max_nu V_adv(s')]``."""
    g = mdp.gamma if gamma is None else gamma
    Vadv, _ = adversary_value(qa, mdp, pi, params, solver)
    nxt = (mdp.transition @ Vadv) @ np.asarray(pi).T
    return np.where(mdp.perturbation.mask, adversary_cost(mdp, pi) + g * mdp.perturbation.from_dense(nxt), 0.0)


@dataclass(frozen=True)
class OperatorConfig:
    """One of the two soft operators, bound to a model, policy and solver."""

    mdp: TabularSaMdp
    pi: np.ndarray
    params: SoftParams
    solver: str = "kl"
    side: str = "agent"
    gamma: float | None = None

    def __call__(self, q: np.ndarray) -> np.ndarray:
        if self.side == "agent":
            return soft_worst_bellman_agent(q, self.mdp, self.pi, self.params, self.solver, self.gamma)
        if self.side == "adversary":
            return soft_opt_bellman_adversary(q, self.mdp, self.pi, self.params, self.solver, self.gamma)
        raise ValueError(f"unknown operator side {self.side!r}")

    def zeros(self) -> np.ndarray:
        if self.side == "agent":
            return np.zeros((self.mdp.n_states, self.mdp.n_actions))
        return np.zeros(self.mdp.perturbation.index.shape)

    def norm(self, x: np.ndarray) -> float:
        if self.side == "adversary":
            x = np.where(self.mdp.perturbation.mask, x, 0.0)
        return float(np.max(np.abs(x)))


@dataclass(frozen=True)
class FixedPointReport:
    iterations: int
    final_residual: float
    converged: bool


def fixed_point(q0: np.ndarray, op, tol: float = 1e-10, max_iters: int = 10_000) -> tuple[np.ndarray, FixedPointReport]:
    """Iterate ``q <- op(q)`` until the sup-norm step is below ``tol``."""
    if tol <= 0 or max_iters <= 0:
        raise ValueError("tol and max_iters must be positive")
    norm = getattr(op, "norm", lambda x: float(np.max(np.abs(x))))
    q = np.asarray(q0, dtype=float)
    resid = np.inf
    for it in range(1, max_iters + 1):
        q_new = op(q)
        resid = norm(q_new - q)
        q = q_new
        if resid < tol:
            return q, FixedPointReport(it, resid, True)
    return q, FixedPointReport(max_iters, resid, False)


def contraction_probe(op: OperatorConfig, n_pairs: int, seed: int, scale: float = 50.0) -> float:
    """Largest observed ``|TQ1 - TQ2| / |Q1 - Q2|`` over seeded random pairs.

    Odd-numbered pairs are constant shifts ``Q2 = Q1 + c``, for which a
    soft operator attains the ratio ``gamma`` exactly; this makes the probe
    sensitive to an inflated discount.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    shape = op.zeros().shape
    worst = 0.0
    done = 0
    while done < n_pairs:
        q1 = rng.uniform(-scale, scale, shape)
        q2 = rng.uniform(-scale, scale, shape)
        if done % 2 == 1:
            q2 = q1 + rng.uniform(-scale, scale)
        if op.side == "adversary":
            q1 = np.where(op.mdp.perturbation.mask, q1, 0.0)
            q2 = np.where(op.mdp.perturbation.mask, q2, 0.0)
        den = op.norm(q1 - q2)
        if den == 0:
            continue
        worst = max(worst, op.norm(op(q1) - op(q2)) / den)
        done += 1
    return worst


def symmetry_check(mdp: TabularSaMdp, pi: np.ndarray, params: SoftParams, solver: str = "kl", tol: float = 1e-10, max_iters: int = 10_000) -> float:
    """``max_s |V_agent(s) + V_adv(s)|`` at the two fixed points."""
    agent = OperatorConfig(mdp, pi, params, solver, "agent")
    adv = OperatorConfig(mdp, pi, params, solver, "adversary")
    q, rep_q = fixed_point(agent.zeros(), agent, tol, max_iters)
    qa, rep_a = fixed_point(adv.zeros(), adv, tol, max_iters)
    if not (rep_q.converged and rep_a.converged):
        raise FixedPointError(f"fixed point did not converge (agent {rep_q}, adversary {rep_a})")
    v = state_obs_value(q, pi, mdp.perturbation, params.alpha_ent)
    v_agent, _ = soft_worst_value(v, mdp.perturbation, params, solver)
    v_adv, _ = adversary_value(qa, mdp, pi, params, solver)
    return float(np.max(np.abs(v_agent + v_adv)))


# ---------------------------------------------------------------------------
# exact evaluation of a fixed (pi, nu) pair


def effective_policy(pi: np.ndarray, nu: np.ndarray, perturb: PerturbationMap) -> np.ndarray:
    """State-conditioned action distribution of the chain ``nu`` then ``pi``."""
    return perturb.to_dense(nu) @ np.asarray(pi)


def _chain(mdp: TabularSaMdp, pi: np.ndarray, nu: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    eff = effective_policy(pi, nu, mdp.perturbation)
    P = np.einsum("sa,sat->st", eff, mdp.transition)
    r = (eff * mdp.reward).sum(axis=1)
    return eff, P, r


def _solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        x = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise FixedPointError("singular evaluation system") from exc
    resid = np.max(np.abs(A @ x - b))
    if not resid < 1e-10 * max(1.0, np.max(np.abs(b)), np.max(np.abs(x))):
        raise FixedPointError(f"linear solve residual {resid:.3e}")
    return x


def joint_value(mdp: TabularSaMdp, pi: np.ndarray, nu: np.ndarray) -> tuple[np.ndarray, float]:
    """Exact ``V`` and ``J = <d0, V>`` of the extrinsic return under ``nu o pi``."""
    _, P, r = _chain(mdp, pi, nu)
    V = _solve(np.eye(mdp.n_states) - mdp.gamma * P, r)
    return V, float(mdp.initial_dist @ V)


def discounted_visitation(mdp: TabularSaMdp, pi: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """``(1 - gamma) sum_t gamma^t Pr(s_t = s)`` from the initial distribution."""
    _, P, _ = _chain(mdp, pi, nu)
    rho = _solve(np.eye(mdp.n_states) - mdp.gamma * P.T, (1.0 - mdp.gamma) * mdp.initial_dist)
    return np.clip(rho, 0.0, None)


def policy_q(mdp: TabularSaMdp, pi: np.ndarray, nu: np.ndarray, alpha_ent: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Soft ``Q`` and ``V`` of ``pi`` under a fixed adversary, no inner minimization.

    ``V(s) = sum_o nu(o|s) [E_{pi(.|o)} Q(s, .) + alpha_ent H(pi(.|o))]``.
    """
    _, P, r = _chain(mdp, pi, nu)
    h = mdp.perturbation.to_dense(nu) @ policy_entropy(pi)
    V = _solve(np.eye(mdp.n_states) - mdp.gamma * P, r + alpha_ent * h)
    Q = mdp.reward + mdp.gamma * (mdp.transition @ V)
    return Q, V


def joint_entropy(nu_row: np.ndarray, pi: np.ndarray, neighbors) -> float:
    """Brute-force entropy of ``(s~, a)`` drawn as ``s~ ~ nu``, ``a ~ pi(.|s~)``."""
    total = 0.0
    for k, o in enumerate(neighbors):
        for a in range(pi.shape[1]):
            p = nu_row[k] * pi[o, a]
            if p > 0:
                total -= p * np.log(p)
    return total


def _sample(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])[:, None] * cdf[:, -1:]
    return np.minimum((u >= cdf).sum(axis=1), probs.shape[1] - 1)


def monte_carlo_return(mdp: TabularSaMdp, pi: np.ndarray, nu: np.ndarray, n_steps: int = 1_000_000, seed: int = 0, adv_ratio: float = 1.0) -> tuple[float, float]:
    """Seeded rollout estimate of ``J`` and its standard error.

    With probability ``adv_ratio`` each step's observation is drawn from
    ``nu``; otherwise the agent sees the true state. Episodes are truncated
    where the discounted tail is below ``1e-9`` of the reward scale.
    """
    rng = np.random.default_rng(seed)
    g = mdp.gamma
    horizon = int(np.ceil(np.log(1e-9 * (1.0 - g)) / np.log(g)))
    n_ep = max(2, n_steps // horizon)
    dense_nu = mdp.perturbation.to_dense(nu)
    pi = np.asarray(pi)
    s = _sample(rng, np.broadcast_to(mdp.initial_dist, (n_ep, mdp.n_states)))
    ret = np.zeros(n_ep)
    disc = 1.0
    for _ in range(horizon):
        obs = _sample(rng, dense_nu[s])
        if adv_ratio < 1.0:
            obs = np.where(rng.random(n_ep) < adv_ratio, obs, s)
        a = _sample(rng, pi[obs])
        ret += disc * mdp.reward[s, a]
        s = _sample(rng, mdp.transition[s, a])
        disc *= g
    return float(ret.mean()), float(ret.std(ddof=1) / np.sqrt(n_ep))
