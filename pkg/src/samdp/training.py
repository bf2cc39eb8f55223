"""Exact-DP training loops: VALT variants, ATLA, and the clean soft-VI baseline."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp, softmax

from .adversary import dual_adversary, epsilon_worst_adversary, hard_worst_adversary, kl_soft_adversary, state_obs_value
from .attacks import attack_optimal
from .core import SoftParams, TabularSaMdp, identity_adversary, uniform_policy
from .evaluation import discounted_visitation, joint_value, monte_carlo_return, policy_q, soft_worst_bellman_agent
from .improvement import regularized_policy_improvement, robust_regularizer, soft_policy_improvement

log = logging.getLogger(__name__)

EARLY_STOP_TV = 1e-9


@dataclass(frozen=True)
class Schedule:
    """``constant`` keeps the base value; ``linear``/``geometric`` hit ``end`` at round ``rounds - 1``."""

    kind: str = "constant"
    start: float = 0.0
    end: float = 0.0
    rounds: int = 1

    def __post_init__(self):
        if self.kind not in ("constant", "linear", "geometric"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.rounds < 1:
            raise ValueError("schedule rounds must be >= 1")
        if self.kind == "geometric" and (self.start <= 0 or self.end <= 0):
            raise ValueError("geometric schedule endpoints must be positive")

    def value(self, k: int, base: float) -> float:
        if self.kind == "constant":
            return base
        if k >= self.rounds - 1:
            return self.end
        if k <= 0:
            return self.start
        t = k / (self.rounds - 1)
        if self.kind == "linear":
            return self.start + (self.end - self.start) * t
        return self.start * (self.end / self.start) ** t


@dataclass(frozen=True)
class TrainConfig:
    solver: str = "kl"
    params: SoftParams = field(default_factory=SoftParams)
    eval_sweeps_per_round: int = 50
    improvement_rounds: int = 50
    kappa_schedule: Schedule = field(default_factory=Schedule)
    alpha_attk_schedule: Schedule = field(default_factory=Schedule)
    regularizer_coeff: float = 0.0
    behavior_adv_ratio: float = 1.0
    monte_carlo_steps: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.solver not in ("kl", "alpha", "eps", "hard"):
            raise ValueError(f"unknown VALT solver {self.solver!r}")
        if self.eval_sweeps_per_round < 1 or self.improvement_rounds < 1:
            raise ValueError("eval_sweeps_per_round and improvement_rounds must be >= 1")
        if self.regularizer_coeff < 0:
            raise ValueError("regularizer_coeff must be >= 0")
        if not 0.0 <= self.behavior_adv_ratio <= 1.0:
            raise ValueError("behavior_adv_ratio must lie in [0, 1]")

    def params_at(self, k: int) -> SoftParams:
        p = self.params
        return replace(
            p,
            alpha_attk=self.alpha_attk_schedule.value(k, p.alpha_attk),
            kappa_worst=self.kappa_schedule.value(k, p.kappa_worst),
        )


@dataclass
class TrainResult:
    pi: np.ndarray
    q: np.ndarray
    nu: np.ndarray
    history: list[dict] = field(default_factory=list)
    converged: bool = False


def policy_tv(a: np.ndarray, b: np.ndarray) -> float:
    """Largest per-row total variation distance."""
    return float(0.5 * np.max(np.abs(np.asarray(a) - np.asarray(b)).sum(axis=1)))


def extract_adversary(q: np.ndarray, mdp: TabularSaMdp, pi: np.ndarray, params: SoftParams, solver: str) -> np.ndarray:
    v = state_obs_value(q, pi, mdp.perturbation, params.alpha_ent)
    if solver == "kl":
        return kl_soft_adversary(v, mdp.perturbation, params.alpha_attk)
    if solver == "alpha":
        return dual_adversary(v, mdp.perturbation, params.alpha_attk, params.divergence)
    if solver == "eps":
        return epsilon_worst_adversary(v, mdp.perturbation, params.kappa_worst)
    return hard_worst_adversary(v, mdp.perturbation)


def _round_record(mdp: TabularSaMdp, pi: np.ndarray, k: int, **extra) -> dict:
    clean = joint_value(mdp, pi, identity_adversary(mdp.perturbation))[1]
    worst = joint_value(mdp, pi, attack_optimal(mdp, pi))[1]
    return {"round": k, "clean_J": clean, "worst_J": worst, **extra}


def valt_train(mdp: TabularSaMdp, cfg: TrainConfig) -> TrainResult:
    """Virtual alternative training: the adversary is read off the agent's Q.

    Each round runs ``eval_sweeps_per_round`` soft-worst Bellman sweeps,
    extracts the adversary from the current Q, then improves the policy
    against that fixed adversary.
    """
    n, a = mdp.n_states, mdp.n_actions
    pi = uniform_policy(n, a)
    q = np.zeros((n, a))
    nu = identity_adversary(mdp.perturbation)
    history: list[dict] = []
    converged = False
    for k in range(cfg.improvement_rounds):
        params = cfg.params_at(k)
        resid = np.inf
        try:
            for _ in range(cfg.eval_sweeps_per_round):
                q_new = soft_worst_bellman_agent(q, mdp, pi, params, cfg.solver)
                resid = float(np.max(np.abs(q_new - q)))
                q = q_new
            nu = extract_adversary(q, mdp, pi, params, cfg.solver)
        except (ValueError, RuntimeError) as exc:
            raise RuntimeError(f"round {k}: {exc}") from exc
        if cfg.regularizer_coeff > 0:
            pi_new = regularized_policy_improvement(q, mdp.perturbation, nu, params.alpha_ent, cfg.regularizer_coeff)
        else:
            pi_new = soft_policy_improvement(q, mdp.perturbation, nu, params.alpha_ent)
        change = policy_tv(pi_new, pi)
        pi = pi_new
        extra = {
            "alpha_attk": params.alpha_attk,
            "kappa_worst": params.kappa_worst,
            "residual": resid,
            "regularizer": robust_regularizer(pi, mdp.perturbation)[1],
            "policy_change": change,
        }
        if cfg.monte_carlo_steps > 0:
            mc, se = monte_carlo_return(mdp, pi, nu, cfg.monte_carlo_steps, cfg.seed + k, cfg.behavior_adv_ratio)
            extra.update(behavior_J=mc, behavior_J_se=se)
        history.append(_round_record(mdp, pi, k, **extra))
        log.debug("valt round %d: %s", k, history[-1])
        if change < EARLY_STOP_TV:
            converged = True
            break
    return TrainResult(pi, q, nu, history, converged)


def valt_soft_variational_fit(
    q: np.ndarray,
    pi: np.ndarray,
    perturb,
    params: SoftParams,
    steps: int,
    reset_period: int = 0,
) -> np.ndarray:
    """Fit a logits table to the soft adversary by mirror descent.

    Per state the loss is ``E_nu[v / alpha_attk] + KL(nu || p)`` (the
    ``alpha_attk log nu + V`` loss divided by ``alpha_attk``). One
    exponentiated-gradient step with step size 0.5 reads
    ``log nu <- 0.5 log nu + 0.5 (log p - v / alpha_attk)``, so the distance
    to the closed-form minimizer halves every step. When ``reset_period`` is
    positive the table is reset to uniform after every ``reset_period``-th
    step.

    Args:
        q: Agent Q table.
        pi: Agent policy.
        perturb: Perturbation map supplying neighbors and prior.
        params: Uses ``alpha_attk`` and ``alpha_ent``.
        steps: Number of mirror-descent steps.
        reset_period: Reset interval, 0 for none.

    Returns:
        Padded adversary table.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if params.alpha_attk <= 0:
        raise ValueError("the variational fit needs alpha_attk > 0")
    v = state_obs_value(q, pi, perturb, params.alpha_ent)
    mask = perturb.mask
    with np.errstate(divide="ignore"):
        target = np.where(mask, np.log(np.where(mask, perturb.prior, 1.0)) - v / params.alpha_attk, -np.inf)
    uniform = np.where(mask, 0.0, -np.inf)
    logits = uniform.copy()
    step = 0.5
    for k in range(1, steps + 1):
        logits = np.where(mask, (1.0 - step) * logits + step * target, -np.inf)
        logits -= logits.max(axis=1, keepdims=True)
        if reset_period > 0 and k % reset_period == 0:
            logits = uniform.copy()
    return softmax(logits, axis=1)


def soft_value_iteration(mdp: TabularSaMdp, alpha_ent: float, tol: float = 1e-10, max_iters: int = 100_000) -> tuple[np.ndarray, np.ndarray]:
    """Max-entropy value iteration on the unperturbed model; returns ``(q, pi)``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iters):
        V = alpha_ent * logsumexp(q / alpha_ent, axis=1) if alpha_ent > 0 else q.max(axis=1)
        q_new = mdp.reward + mdp.gamma * (mdp.transition @ V)
        done = np.max(np.abs(q_new - q)) < tol
        q = q_new
        if done:
            break
    if alpha_ent > 0:
        pi = softmax(q / alpha_ent, axis=1)
    else:
        pi = np.zeros_like(q)
        pi[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
    return q, pi


def vanilla_soft_vi(mdp: TabularSaMdp, alpha_ent: float, tol: float = 1e-10) -> TrainResult:
    q, pi = soft_value_iteration(mdp, alpha_ent, tol)
    nu = identity_adversary(mdp.perturbation)
    return TrainResult(pi, q, nu, [_round_record(mdp, pi, 0)], True)


def agent_best_response(mdp: TabularSaMdp, nu: np.ndarray, alpha_ent: float, pi_start: np.ndarray, max_iters: int = 200) -> np.ndarray:
    """Policy iteration for the agent against a fixed adversary.

    Improvement aggregates Q over true states with weights
    ``rho(s) nu(s~|s)`` (discounted visitation). With an injective
    deterministic adversary this is exact soft policy iteration. Otherwise
    the result is accepted only if it does not lower ``J[nu, .]``; a
    backtracking mix with ``pi_start`` is tried before giving up.
    """
    pm = mdp.perturbation
    pi = np.asarray(pi_start, dtype=float)
    for _ in range(max_iters):
        q, _ = policy_q(mdp, pi, nu, alpha_ent)
        rho = discounted_visitation(mdp, pi, nu)
        pi_new = soft_policy_improvement(q, pm, nu, alpha_ent, state_weights=rho + 1e-12)
        if policy_tv(pi_new, pi) < 1e-12:
            pi = pi_new
            break
        pi = pi_new
    base = joint_value(mdp, pi_start, nu)[1]
    if joint_value(mdp, pi, nu)[1] >= base:
        return pi
    step = 1.0
    for _ in range(40):
        step *= 0.5
        mix = (1.0 - step) * pi_start + step * pi
        if joint_value(mdp, mix, nu)[1] >= base:
            return mix
    return np.array(pi_start)


def atla_train(mdp: TabularSaMdp, params: SoftParams, outer_rounds: int, tol: float = 1e-10) -> TrainResult:
    """Alternating exact best responses of adversary and agent.

    Each history record holds ``J`` before the round, after the adversary
    step and after the agent step. Cycling is reported, not an error.
    """
    if outer_rounds < 1:
        raise ValueError("outer_rounds must be >= 1")
    pm = mdp.perturbation
    pi = uniform_policy(mdp.n_states, mdp.n_actions)
    nu = identity_adversary(pm)
    history: list[dict] = []
    converged = False
    J_prev = joint_value(mdp, pi, nu)[1]
    for k in range(outer_rounds):
        nu_new = attack_optimal(mdp, pi, tol)
        J_adv = joint_value(mdp, pi, nu_new)[1]
        pi_new = agent_best_response(mdp, nu_new, params.alpha_ent, pi)
        J_agent = joint_value(mdp, pi_new, nu_new)[1]
        stable = policy_tv(pi_new, pi) < EARLY_STOP_TV and np.array_equal(nu_new, nu)
        history.append({"round": k, "J_before": J_prev, "J_after_adversary": J_adv, "J_after_agent": J_agent, "stable": stable})
        pi, nu, J_prev = pi_new, nu_new, J_agent
        if stable:
            converged = True
            break
    q, _ = policy_q(mdp, pi, nu, params.alpha_ent)
    return TrainResult(pi, q, nu, history, converged)


def equilibrium_gap(mdp: TabularSaMdp, pi: np.ndarray, nu: np.ndarray, params: SoftParams | None = None) -> tuple[float, float]:
    """Exploitability of each player in extrinsic return ``J``.

    The adversary gap uses the exact adversary DP. The agent gap uses
    hard policy iteration against fixed ``nu``; it is exact when ``nu``
    reveals the state injectively and a lower bound otherwise.
    """
    J = joint_value(mdp, pi, nu)[1]
    best_pi = agent_best_response(mdp, nu, 0.0, pi)
    agent_gap = joint_value(mdp, best_pi, nu)[1] - J
    worst_nu = attack_optimal(mdp, pi)
    adversary_gap = J - joint_value(mdp, pi, worst_nu)[1]
    return max(agent_gap, 0.0), max(adversary_gap, 0.0)
