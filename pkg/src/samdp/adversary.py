"""Soft-constrained adversaries derived from the agent's values.

Every solver takes a padded state-observation value table ``v`` of shape
``(n_states, max_k)`` (see :mod:`samdp.core`) and returns an adversary
policy in the same layout. The adversary minimizes, row by row,

    E_nu[v] + alpha_attk * D_f(nu || prior)

over distributions supported on the neighbor list.
"""

from __future__ import annotations

import numpy as np

from .core import PerturbationMap
from .divergence import Divergence, conjugate_derivative

DUAL_TOL = 1e-10
DUAL_MAX_ITERS = 200


class DualConvergenceError(RuntimeError):
    def __init__(self, row: int, residual: float):
        self.row = row
        self.residual = residual
        super().__init__(f"lambda bisection did not converge on row {row} (residual {residual:.3e})")


def policy_entropy(pi: np.ndarray) -> np.ndarray:
    """Row-wise Shannon entropy in nats with ``0 log 0 = 0``."""
    pi = np.asarray(pi, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pi > 0, pi * np.log(np.where(pi > 0, pi, 1.0)), 0.0)
    return -terms.sum(axis=1)


def state_obs_value(q: np.ndarray, pi: np.ndarray, perturb: PerturbationMap, alpha_ent: float = 0.0) -> np.ndarray:
    """``v(s, s~) = sum_a pi(a|s~) q(s, a) + alpha_ent * H(pi(.|s~))``.

    Returns the padded ``(n_states, max_k)`` table; padded slots are 0.
    """
    q = np.asarray(q, dtype=float)
    pi = np.asarray(pi, dtype=float)
    # full[s, o] = E_{pi(.|o)} q(s, .)
    full = q @ pi.T
    if alpha_ent:
        full = full + alpha_ent * policy_entropy(pi)[None, :]
    return perturb.from_dense(full)


def _masked(v: np.ndarray, perturb: PerturbationMap, fill: float) -> np.ndarray:
    return np.where(perturb.mask, np.asarray(v, dtype=float), fill)


def _argmin_rows(v: np.ndarray, perturb: PerturbationMap) -> np.ndarray:
    # np.argmin returns the first minimizer, i.e. the lowest neighbor index
    return np.argmin(_masked(v, perturb, np.inf), axis=1)


def hard_worst_adversary(v: np.ndarray, perturb: PerturbationMap) -> np.ndarray:
    nu = np.zeros(perturb.index.shape)
    nu[np.arange(perturb.n_states), _argmin_rows(v, perturb)] = 1.0
    return nu


def epsilon_worst_adversary(v: np.ndarray, perturb: PerturbationMap, kappa_worst: float) -> np.ndarray:
    """Atom of mass ``kappa_worst`` on the worst observation plus a uniform remainder."""
    if not 0.0 <= kappa_worst <= 1.0:
        raise ValueError("kappa_worst must lie in [0, 1]")
    m = perturb.counts
    flat = (1.0 - kappa_worst) / m
    nu = np.where(perturb.mask, flat[:, None], 0.0)
    rows = np.arange(perturb.n_states)
    worst = _argmin_rows(v, perturb)
    # the atom takes the complement so each row sums to 1 without drift
    nu[rows, worst] = 0.0
    nu[rows, worst] = 1.0 - nu.sum(axis=1)
    return nu


def kl_soft_adversary(v: np.ndarray, perturb: PerturbationMap, alpha_attk: float) -> np.ndarray:
    """Boltzmann reweighting of the prior: ``nu ∝ p exp(-v / alpha_attk)``."""
    if alpha_attk == 0:
        return hard_worst_adversary(v, perturb)
    if alpha_attk < 0:
        raise ValueError("alpha_attk must be positive")
    with np.errstate(divide="ignore"):
        logits = np.where(perturb.mask, np.log(np.where(perturb.mask, perturb.prior, 1.0)) - _masked(v, perturb, 0.0) / alpha_attk, -np.inf)
    logits = logits - logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return w / w.sum(axis=1, keepdims=True)


def kl_soft_value(v: np.ndarray, perturb: PerturbationMap, alpha_attk: float) -> np.ndarray:
    """Closed-form ``min_nu E_nu[v] + alpha_attk KL(nu || p)`` per row."""
    if alpha_attk == 0:
        return _masked(v, perturb, np.inf).min(axis=1)
    # shift by the row min d >= 0, so sum p exp(-d/a) >= p(argmin) and
    # log1p/expm1 keep full precision even when a >> d
    lo = _masked(v, perturb, np.inf).min(axis=1)
    d = _masked(v, perturb, 0.0) - lo[:, None]
    s = np.where(perturb.mask, perturb.prior * np.expm1(-d / alpha_attk), 0.0).sum(axis=1)
    return lo - alpha_attk * np.log1p(s)


def dual_adversary(v: np.ndarray, perturb: PerturbationMap, alpha_attk: float, spec: Divergence) -> np.ndarray:
    """Alpha-divergence adversary ``nu = p (f*)'((-v - lambda) / alpha_attk)``.

    ``lambda`` is found per row by bisection so the row sums to one. The
    lower end of the bracket is where the worst observation leaves the
    domain of ``(f*)'``; the upper end starts at ``max(-v)`` and is widened
    geometrically if needed. All rows are bisected together.
    """
    if spec.kind != "alpha" or spec.alpha >= 1:
        raise ValueError("dual_adversary needs an alpha-divergence with alpha < 1")
    if alpha_attk == 0:
        return hard_worst_adversary(v, perturb)
    mask, p = perturb.mask, perturb.prior
    a = spec.alpha
    neg_v = _masked(-np.asarray(v, dtype=float), perturb, -np.inf)
    top = neg_v.max(axis=1)
    width = alpha_attk / (1.0 - a)
    lo = top - width
    # masked slots sit at y = 0, which is in the domain; p = 0 removes them
    neg_v0 = np.where(mask, neg_v, 0.0)

    def mass(lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        y = np.where(mask, (neg_v0 - lam[:, None]) / alpha_attk, 0.0)
        w = p * conjugate_derivative(y, spec)
        return w, w.sum(axis=1)

    hi = lo + width
    step = width
    for _ in range(DUAL_MAX_ITERS):
        _, g = mass(hi)
        if np.all(g <= 1.0):
            break
        step = step * 2.0
        hi = np.where(g > 1.0, lo + step, hi)

    with np.errstate(over="ignore"):
        lam = 0.5 * (lo + hi)
        for _ in range(DUAL_MAX_ITERS):
            lam = 0.5 * (lo + hi)
            w, g = mass(lam)
            resid = np.abs(g - 1.0)
            if np.all(resid <= DUAL_TOL):
                break
            over = g > 1.0
            lo = np.where(over, lam, lo)
            hi = np.where(over, hi, lam)
        else:
            w, g = mass(lam)
            resid = np.abs(g - 1.0)
            if np.any(resid > DUAL_TOL):
                row = int(np.argmax(resid))
                raise DualConvergenceError(row, float(resid[row]))
    return w / g[:, None]
