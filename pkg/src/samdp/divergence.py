"""f-divergences of the alpha family, their derivatives and conjugates.

KL is ``f(x) = x log x``; its conjugate derivative is ``exp(y - 1)``.
The alpha family is

    f_a(x) = ((x**a - 1) - a (x - 1)) / (a (a - 1)),

with closed-form limits at ``a = 1`` (``x log x - x + 1``, forward KL) and
``a = 0`` (``x - 1 - log x``, reverse KL). Its conjugate derivative is
``(f_a*)'(y) = (1 + (a - 1) y) ** (1 / (a - 1))`` on ``(1 - a) y < 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ZERO_TOL = 1e-12


class SupportError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class Divergence:
    """f-divergence selector: ``kind`` is ``"kl"`` or ``"alpha"``."""

    kind: str = "kl"
    alpha: float = 1.0

    def __post_init__(self):
        if self.kind not in ("kl", "alpha"):
            raise ValueError(f"unknown divergence kind {self.kind!r}")

    @classmethod
    def kl(cls) -> "Divergence":
        return cls("kl")

    @classmethod
    def alpha_family(cls, alpha: float) -> "Divergence":
        return cls("alpha", float(alpha))


def f_value(x, spec: Divergence):
    """Generator ``f(x)`` for ``x >= 0``; may be ``inf`` at 0 for alpha <= 0."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if spec.kind == "kl":
            return np.where(x > 0, x * np.log(np.where(x > 0, x, 1.0)), 0.0)
        a = spec.alpha
        logx = np.log(np.where(x > 0, x, 1.0))
        if a == 1.0:
            return np.where(x > 0, x * logx - x + 1.0, 1.0)
        if a == 0.0:
            return np.where(x > 0, x - 1.0 - logx, np.inf)
        at_zero = 1.0 / a if a > 0 else np.inf
        val = (np.expm1(a * logx) - a * (x - 1.0)) / (a * (a - 1.0))
        return np.where(x > 0, val, at_zero)


def f_prime(x, spec: Divergence):
    x = np.asarray(x, dtype=float)
    if spec.kind == "kl":
        return np.log(x) + 1.0
    a = spec.alpha
    if a == 1.0:
        return np.log(x)
    if a == 0.0:
        return 1.0 - 1.0 / x
    return np.expm1((a - 1.0) * np.log(x)) / (a - 1.0)


def conjugate_derivative(y, spec: Divergence):
    """``(f*)'(y)``, the inverse of ``f'``.

    Raises:
        DomainError: alpha branch with ``(1 - alpha) * y >= 1``.
    """
    y = np.asarray(y, dtype=float)
    if spec.kind == "kl":
        return np.exp(y - 1.0)
    a = spec.alpha
    if a == 1.0:
        return np.exp(y)
    t = (a - 1.0) * y
    if np.any(t <= -1.0):
        raise DomainError(f"(1 - alpha) * y >= 1 for alpha={a}")
    if a == 0.0:
        return 1.0 / (1.0 + t)
    return np.exp(np.log1p(t) / (a - 1.0))


def f_divergence(nu, p, spec: Divergence) -> float:
    """``D_f(nu || p) = sum_i p_i f(nu_i / p_i)`` over the support of ``p``."""
    nu = np.asarray(nu, dtype=float)
    p = np.asarray(p, dtype=float)
    off = p <= 0
    if np.any(nu[off] > ZERO_TOL):
        raise SupportError("nu places mass where the prior is zero")
    on = ~off
    ratio = nu[on] / p[on]
    val = float(np.sum(p[on] * f_value(ratio, spec)))
    # f(1) = 0 exactly, but the sum of rounding terms need not be
    if np.all(np.abs(ratio - 1.0) <= ZERO_TOL):
        return 0.0
    return max(val, 0.0)


def divergence_rows(nu: np.ndarray, p: np.ndarray, mask: np.ndarray, spec: Divergence) -> np.ndarray:
    """Row-wise ``D_f`` for padded ``(n, k)`` arrays; masked slots are skipped."""
    nu = np.asarray(nu, dtype=float)
    p = np.where(mask, p, 1.0)
    terms = np.where(mask, p * f_value(np.where(mask, nu, 1.0) / p, spec), 0.0)
    return np.maximum(terms.sum(axis=1), 0.0)
