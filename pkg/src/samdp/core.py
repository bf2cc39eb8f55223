"""Finite state-adversarial MDP data model, validation and text serialization.

Conventions used throughout the package:

* observations are states, so an agent policy is an ``(n_states, n_actions)``
  array indexed by the *observed* state;
* every state ``s`` owns an ordered neighbor list of observations the
  adversary may show; index 0 of that list is always ``s`` itself, and all
  tie-breaks ("lowest neighbor index") refer to this order;
* per-neighbor quantities (adversary probabilities, adversary Q values,
  state-observation values) are stored as padded ``(n_states, max_k)``
  arrays aligned with :attr:`PerturbationMap.index`; padded slots are
  masked out and hold zeros.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .divergence import Divergence

PROB_TOL = 1e-9


class ModelFormatError(ValueError):
    """Raised when a serialized model cannot be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PerturbationMap:
    """Per-state neighbor lists of admissible observations, with a prior."""

    neighbors: tuple[tuple[int, ...], ...]
    prior_rows: tuple[tuple[float, ...], ...]
    index: np.ndarray = field(init=False, repr=False)
    mask: np.ndarray = field(init=False, repr=False)
    prior: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        nbrs = tuple(tuple(int(x) for x in row) for row in self.neighbors)
        priors = tuple(tuple(float(x) for x in row) for row in self.prior_rows)
        if len(nbrs) != len(priors):
            raise ValueError("neighbors and prior_rows differ in length")
        for s, (nb, pr) in enumerate(zip(nbrs, priors)):
            if len(nb) != len(pr):
                raise ValueError(f"state {s}: prior length {len(pr)} != neighbor count {len(nb)}")
        object.__setattr__(self, "neighbors", nbrs)
        object.__setattr__(self, "prior_rows", priors)
        n = len(nbrs)
        k = max((len(nb) for nb in nbrs), default=1) or 1
        index = np.zeros((n, k), dtype=np.int64)
        mask = np.zeros((n, k), dtype=bool)
        prior = np.zeros((n, k))
        for s, (nb, pr) in enumerate(zip(nbrs, priors)):
            index[s, :] = s
            index[s, : len(nb)] = nb
            mask[s, : len(nb)] = True
            prior[s, : len(nb)] = pr
        object.__setattr__(self, "index", _frozen(index))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "prior", _frozen(prior))

    @classmethod
    def uniform(cls, neighbors: Sequence[Sequence[int]]) -> "PerturbationMap":
        rows = [tuple(nb) for nb in neighbors]
        return cls(tuple(rows), tuple(tuple([1.0 / len(nb)] * len(nb)) if nb else () for nb in rows))

    @classmethod
    def identity(cls, n_states: int) -> "PerturbationMap":
        return cls.uniform([(s,) for s in range(n_states)])

    @property
    def n_states(self) -> int:
        return len(self.neighbors)

    @property
    def max_k(self) -> int:
        return self.index.shape[1]

    @property
    def counts(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    def to_dense(self, padded: np.ndarray) -> np.ndarray:
        """Scatter a padded per-neighbor array into an ``(n, n)`` matrix."""
        n = self.n_states
        out = np.zeros((n, n))
        rows = np.repeat(np.arange(n), self.max_k).reshape(n, -1)
        np.add.at(out, (rows[self.mask], self.index[self.mask]), np.asarray(padded)[self.mask])
        return out

    def from_dense(self, dense: np.ndarray) -> np.ndarray:
        """Gather an ``(n, n)`` matrix into the padded neighbor layout."""
        rows = np.arange(self.n_states)[:, None]
        return np.where(self.mask, np.asarray(dense)[rows, self.index], 0.0)

    def __eq__(self, other):
        if not isinstance(other, PerturbationMap):
            return NotImplemented
        return self.neighbors == other.neighbors and self.prior_rows == other.prior_rows

    def __hash__(self):
        return hash((self.neighbors, self.prior_rows))


@dataclass(frozen=True, eq=False)
class TabularSaMdp:
    """Finite SA-MDP. Rewards are ``r(s, a)``; ``transition[s, a, s']``."""

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    initial_dist: np.ndarray
    perturbation: PerturbationMap
    name: str = "mdp"

    def __post_init__(self):
        object.__setattr__(self, "transition", _frozen(np.asarray(self.transition, dtype=float)))
        object.__setattr__(self, "reward", _frozen(np.asarray(self.reward, dtype=float)))
        object.__setattr__(self, "initial_dist", _frozen(np.asarray(self.initial_dist, dtype=float)))
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def with_perturbation(self, perturbation: PerturbationMap) -> "TabularSaMdp":
        return TabularSaMdp(self.transition, self.reward, self.gamma, self.initial_dist, perturbation, self.name)

    def with_gamma(self, gamma: float) -> "TabularSaMdp":
        return TabularSaMdp(self.transition, self.reward, gamma, self.initial_dist, self.perturbation, self.name)

    def __eq__(self, other):
        if not isinstance(other, TabularSaMdp):
            return NotImplemented
        return (
            self.gamma == other.gamma
            and self.perturbation == other.perturbation
            and np.array_equal(self.transition, other.transition)
            and np.array_equal(self.reward, other.reward)
            and np.array_equal(self.initial_dist, other.initial_dist)
        )

    __hash__ = None


@dataclass(frozen=True)
class SoftParams:
    """Coefficients shared by every soft operator.

    ``alpha_attk == 0`` is accepted and means the hard-worst limit.
    """

    alpha_ent: float = 0.0
    alpha_attk: float = 1.0
    divergence: Divergence = field(default_factory=Divergence.kl)
    kappa_worst: float = 1.0

    def __post_init__(self):
        if self.alpha_ent < 0:
            raise ValueError("alpha_ent must be >= 0")
        if self.alpha_attk < 0:
            raise ValueError("alpha_attk must be >= 0")
        if not 0.0 <= self.kappa_worst <= 1.0:
            raise ValueError("kappa_worst must lie in [0, 1]")
        if self.divergence.kind == "alpha" and self.divergence.alpha >= 1:
            raise ValueError("alpha-divergence solvers require alpha < 1")


# ---------------------------------------------------------------------------
# validation


def validate(mdp: TabularSaMdp) -> list[str]:
    """Return a list of invariant violations; empty means valid."""
    out: list[str] = []
    P, R = mdp.transition, mdp.reward
    if P.ndim != 3 or P.shape[0] != P.shape[2]:
        return [f"transition must have shape (S, A, S), got {P.shape}"]
    n, a = P.shape[:2]
    if R.shape != (n, a):
        out.append(f"reward shape {R.shape} != ({n}, {a})")
    elif not np.all(np.isfinite(R)):
        out.append("rewards must be finite")
    if not 0.0 < mdp.gamma < 1.0:
        out.append(f"gamma {mdp.gamma} not in (0, 1)")
    for s in range(n):
        for act in range(a):
            row = P[s, act]
            if np.any(row < 0) or abs(row.sum() - 1.0) > PROB_TOL:
                out.append(f"transition row (s={s}, a={act}) is not a distribution (sum={row.sum():.12g})")
    d0 = mdp.initial_dist
    if d0.shape != (n,) or np.any(d0 < 0) or abs(d0.sum() - 1.0) > PROB_TOL:
        out.append("initial_dist is not a distribution over states")
    pm = mdp.perturbation
    if pm.n_states != n:
        out.append(f"perturbation covers {pm.n_states} states, model has {n}")
        return out
    for s, (nb, pr) in enumerate(zip(pm.neighbors, pm.prior_rows)):
        if not nb:
            out.append(f"neighbor list of state {s} is empty")
            continue
        if s not in nb:
            out.append(f"neighbor list of state {s} does not contain {s}")
        elif nb[0] != s:
            out.append(f"neighbor list of state {s} does not start with {s}")
        if len(set(nb)) != len(nb):
            out.append(f"neighbor list of state {s} has duplicates")
        if any(not 0 <= x < n for x in nb):
            out.append(f"neighbor list of state {s} references unknown states")
        p = np.asarray(pr)
        if np.any(p <= 0) or abs(p.sum() - 1.0) > PROB_TOL:
            out.append(f"prior of state {s} must be positive on its neighbors and sum to 1")
    return out


def check_agent_policy(pi: np.ndarray, n_states: int, n_actions: int) -> None:
    pi = np.asarray(pi)
    if pi.shape != (n_states, n_actions):
        raise ValueError(f"agent policy shape {pi.shape} != ({n_states}, {n_actions})")
    if np.any(pi < 0) or np.max(np.abs(pi.sum(axis=1) - 1.0)) > PROB_TOL:
        raise ValueError("agent policy rows must be distributions")


def check_adversary_policy(nu: np.ndarray, perturb: PerturbationMap) -> None:
    nu = np.asarray(nu)
    if nu.shape != perturb.index.shape:
        raise ValueError(f"adversary policy shape {nu.shape} != {perturb.index.shape}")
    if np.any(nu < 0) or np.any(nu[~perturb.mask] != 0):
        raise ValueError("adversary policy must be nonnegative and supported on neighbors")
    if np.max(np.abs(nu.sum(axis=1) - 1.0)) > PROB_TOL:
        raise ValueError("adversary policy rows must sum to 1")


def identity_adversary(perturb: PerturbationMap) -> np.ndarray:
    """Adversary that always reveals the true state (neighbor index 0)."""
    nu = np.zeros(perturb.index.shape)
    nu[:, 0] = 1.0
    return nu


def uniform_policy(n_states: int, n_actions: int) -> np.ndarray:
    return np.full((n_states, n_actions), 1.0 / n_actions)


# ---------------------------------------------------------------------------
# text serialization
#
# The format is line based; '#' starts a comment. Sections appear in order:
#
#   samdp 1
#   name <token>
#   n_states <int>
#   n_actions <int>
#   gamma <float>
#   initial <p_0> ... <p_{S-1}>
#   [transition]           one line per (s, a):  s a : p_0 ... p_{S-1}
#   [reward]               one line per s:       s : r_0 ... r_{A-1}
#   [neighbors]            one line per s:       s : n_0 ... n_{k-1}
#   [prior]                one line per s:       s : p_0 ... p_{k-1}
#
# Floats are written with 17 significant digits so parsing is exact.


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dumps(mdp: TabularSaMdp) -> str:
    n, a = mdp.n_states, mdp.n_actions
    lines = [
        "samdp 1",
        f"name {mdp.name}",
        f"n_states {n}",
        f"n_actions {a}",
        f"gamma {_fmt(mdp.gamma)}",
        "initial " + " ".join(_fmt(x) for x in mdp.initial_dist),
        "[transition]",
    ]
    for s in range(n):
        for act in range(a):
            lines.append(f"{s} {act} : " + " ".join(_fmt(x) for x in mdp.transition[s, act]))
    lines.append("[reward]")
    for s in range(n):
        lines.append(f"{s} : " + " ".join(_fmt(x) for x in mdp.reward[s]))
    lines.append("[neighbors]")
    for s, nb in enumerate(mdp.perturbation.neighbors):
        lines.append(f"{s} : " + " ".join(str(x) for x in nb))
    lines.append("[prior]")
    for s, pr in enumerate(mdp.perturbation.prior_rows):
        lines.append(f"{s} : " + " ".join(_fmt(x) for x in pr))
    return "\n".join(lines) + "\n"


def loads(text: str) -> TabularSaMdp:
    header: dict[str, tuple[int, list[str]]] = {}
    sections: dict[str, list[tuple[int, list[str], list[str]]]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in ("transition", "reward", "neighbors", "prior"):
                raise ModelFormatError(f"unknown section [{current}]", lineno)
            sections[current] = []
            continue
        if current is None:
            key, *vals = line.split()
            header[key] = (lineno, vals)
            continue
        if ":" not in line:
            raise ModelFormatError(f"expected 'index : values' in [{current}]", lineno)
        left, right = line.split(":", 1)
        sections[current].append((lineno, left.split(), right.split()))

    def head(key: str, cast):
        if key not in header:
            raise ModelFormatError(f"missing header key '{key}'")
        lineno, vals = header[key]
        try:
            return cast(vals[0]) if cast is not list else vals
        except (ValueError, IndexError):
            raise ModelFormatError(f"bad value for '{key}'", lineno) from None

    if head("samdp", str) != "1":
        raise ModelFormatError("unsupported format version", header["samdp"][0])
    name = header["name"][1][0] if header.get("name", (0, []))[1] else "mdp"
    n, a = head("n_states", int), head("n_actions", int)
    gamma = head("gamma", float)

    def floats(lineno: int, vals: list[str], count: int | None) -> list[float]:
        try:
            out = [float(v) for v in vals]
        except ValueError:
            raise ModelFormatError("non-numeric value", lineno) from None
        if count is not None and len(out) != count:
            raise ModelFormatError(f"expected {count} values, got {len(out)}", lineno)
        return out

    init_line, init_vals = header.get("initial", (None, None))
    if init_vals is None:
        raise ModelFormatError("missing header key 'initial'")
    initial = floats(init_line, init_vals, n)

    for sec in ("transition", "reward", "neighbors", "prior"):
        if sec not in sections:
            raise ModelFormatError(f"missing section [{sec}]")
    P = np.full((n, a, n), np.nan)
    for lineno, left, right in sections["transition"]:
        try:
            s, act = (int(x) for x in left)
        except ValueError:
            raise ModelFormatError("transition rows are keyed by 's a'", lineno) from None
        if not (0 <= s < n and 0 <= act < a):
            raise ModelFormatError(f"transition key ({s}, {act}) out of range", lineno)
        P[s, act] = floats(lineno, right, n)
    if np.isnan(P).any():
        raise ModelFormatError("transition section incomplete")

    def per_state(sec: str, count: int | None, cast=float) -> list[list]:
        rows: list = [None] * n
        for lineno, left, right in sections[sec]:
            try:
                (s,) = (int(x) for x in left)
            except ValueError:
                raise ModelFormatError(f"[{sec}] rows are keyed by a state index", lineno) from None
            if not 0 <= s < n:
                raise ModelFormatError(f"state {s} out of range", lineno)
            if cast is int:
                try:
                    rows[s] = [int(v) for v in right]
                except ValueError:
                    raise ModelFormatError("neighbor indices must be integers", lineno) from None
            else:
                rows[s] = floats(lineno, right, count)
        if any(r is None for r in rows):
            raise ModelFormatError(f"section [{sec}] incomplete")
        return rows

    R = np.array(per_state("reward", a))
    nbrs = per_state("neighbors", None, int)
    prior = per_state("prior", None)
    try:
        pm = PerturbationMap(tuple(map(tuple, nbrs)), tuple(map(tuple, prior)))
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None
    return TabularSaMdp(P, R, gamma, np.array(initial), pm, name)


def save(mdp: TabularSaMdp, path: str | Path) -> None:
    Path(path).write_text(dumps(mdp))


def load(path: str | Path) -> TabularSaMdp:
    return loads(Path(path).read_text())
