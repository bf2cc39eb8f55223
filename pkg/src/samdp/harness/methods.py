"""Named training methods and their default settings."""

from __future__ import annotations

from ..core import SoftParams
from ..divergence import Divergence
from ..training import Schedule, TrainConfig

METHOD_KINDS = ("vanilla", "valt-kl", "valt-alpha", "valt-eps", "atla")

ALPHA_ENT = 0.01
ALPHA_ATTK = 0.3
ROUNDS = 60
SWEEPS = 50

# keys a [method.*] section may set, with their parsers
METHOD_KEYS = {
    "kind": str,
    "alpha_ent": float,
    "alpha_attk": float,
    "kappa_worst": float,
    "divergence_alpha": float,
    "eval_sweeps_per_round": int,
    "improvement_rounds": int,
    "kappa_schedule": str,
    "alpha_attk_schedule": str,
    "regularizer_coeff": float,
    "behavior_adv_ratio": float,
    "monte_carlo_steps": int,
    "outer_rounds": int,
}


def parse_schedule(text: str) -> Schedule:
    """``constant`` | ``linear START END ROUNDS`` | ``geometric START END ROUNDS``."""
    parts = text.split()
    if not parts:
        raise ValueError("empty schedule")
    if parts[0] == "constant" and len(parts) == 1:
        return Schedule()
    if parts[0] in ("linear", "geometric") and len(parts) == 4:
        return Schedule(parts[0], float(parts[1]), float(parts[2]), int(parts[3]))
    raise ValueError(f"bad schedule {text!r}; expected 'constant', 'linear a b n' or 'geometric a b n'")


def method_config(kind: str, **overrides) -> TrainConfig:
    """TrainConfig for a VALT ``kind`` with defaults, then ``overrides``.

    ``valt-eps`` defaults to a linear kappa schedule from 0 to 1 over the
    first half of training unless ``kappa_worst`` is given, in which case
    kappa stays constant.
    """
    if kind not in ("valt-kl", "valt-alpha", "valt-eps"):
        raise ValueError(f"{kind!r} is not a VALT method")
    solver = kind.split("-")[1]
    rounds = int(overrides.get("improvement_rounds", ROUNDS))
    eps_ramp = kind == "valt-eps" and "kappa_worst" not in overrides
    kappa_default = "linear 0 1 %d" % max(1, rounds // 2) if eps_ramp else "constant"
    divergence = Divergence.alpha_family(float(overrides.get("divergence_alpha", 0.5))) if solver == "alpha" else Divergence.kl()
    params = SoftParams(
        alpha_ent=float(overrides.get("alpha_ent", ALPHA_ENT)),
        alpha_attk=float(overrides.get("alpha_attk", ALPHA_ATTK)),
        divergence=divergence,
        kappa_worst=float(overrides.get("kappa_worst", 1.0)),
    )
    return TrainConfig(
        solver=solver,
        params=params,
        eval_sweeps_per_round=int(overrides.get("eval_sweeps_per_round", SWEEPS)),
        improvement_rounds=rounds,
        kappa_schedule=parse_schedule(overrides.get("kappa_schedule", kappa_default)),
        alpha_attk_schedule=parse_schedule(overrides.get("alpha_attk_schedule", "constant")),
        regularizer_coeff=float(overrides.get("regularizer_coeff", 0.0)),
        behavior_adv_ratio=float(overrides.get("behavior_adv_ratio", 1.0)),
        monte_carlo_steps=int(overrides.get("monte_carlo_steps", 0)),
        seed=int(overrides.get("seed", 0)),
    )
