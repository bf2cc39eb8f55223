"""Experiment configuration: a flat INI schema read with :mod:`configparser`.

Example::

    [experiment]
    name = fog-demo
    methods = vanilla, valt-kl
    attacks = uniform, mad, optimal
    seeds = 0, 1

    [environment]
    generator = fog_bridges        ; fog_bridges | random | file
    fog_level = 1.0
    gamma = 0.9

    [method.valt-kl]
    alpha_attk = 0.3

    [sweep]                        ; only read by ``sweep``
    alpha_attk = 0.5, 2, 8

A method name is its kind unless its section sets ``kind``. ``random``
environments take ``n_states``, ``n_actions``, ``neighborhood_size``,
``gamma`` and an optional ``seed``; without one the run seed is used.
``file`` environments take ``path``.
"""

from __future__ import annotations

import configparser
import itertools
import re
from dataclasses import dataclass, field
from pathlib import Path

from ..core import TabularSaMdp, load
from ..envs import generate_fog_bridges, generate_random
from .methods import METHOD_KEYS, METHOD_KINDS
from ..attacks import ATTACKS

SWEEP_KEYS = ("alpha_attk", "kappa_worst", "alpha_ent", "fog_level")
ENV_KEYS = {
    "fog_bridges": {"generator": str, "fog_level": float, "gamma": float},
    "random": {"generator": str, "n_states": int, "n_actions": int, "neighborhood_size": int, "gamma": float, "seed": int, "concentration": float},
    "file": {"generator": str, "path": str},
}


class ConfigError(ValueError):
    """Config problem; the message names the key and, when known, the line."""


@dataclass(frozen=True)
class MethodSpec:
    name: str
    kind: str
    options: dict = field(default_factory=dict)


@dataclass
class ExperimentConfig:
    name: str
    environment: dict
    methods: list[MethodSpec]
    attacks: list[str]
    seeds: list[int]
    sweep: dict = field(default_factory=dict)
    out: str | None = None
    source: str = ""
    base_dir: Path = field(default_factory=Path)

    def build_env(self, seed: int, fog_level: float | None = None) -> TabularSaMdp:
        env = dict(self.environment)
        gen = env.get("generator", "fog_bridges")
        if gen == "fog_bridges":
            level = fog_level if fog_level is not None else env.get("fog_level", 1.0)
            return generate_fog_bridges(level, env.get("gamma", 0.9))
        if fog_level is not None:
            raise ConfigError("sweep key 'fog_level' needs generator = fog_bridges")
        if gen == "random":
            return generate_random(
                env.get("seed", seed), env["n_states"], env["n_actions"], env["neighborhood_size"], env.get("gamma", 0.9), env.get("concentration", 1.0)
            )
        path = Path(env["path"])
        return load(path if path.is_absolute() else self.base_dir / path)

    def env_id(self, seed: int, fog_level: float | None = None) -> str:
        return self.build_env(seed, fog_level).name


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    """1-based line of ``[section]`` (or of ``key`` inside it) in ``text``."""
    current = None
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.fullmatch(r"\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if key is not None and current == section and re.match(rf"{re.escape(key)}\s*[=:]", line):
            return no
    return None


def _where(text: str, section: str, key: str | None = None) -> str:
    no = _line_of(text, section, key)
    return f" (line {no})" if no else ""


def _split(value: str) -> list[str]:
    return [x.strip() for x in value.split(",") if x.strip()]


def _typed(text: str, section: str, key: str, value: str, kind):
    try:
        return kind(value)
    except ValueError:
        raise ConfigError(f"[{section}] {key} = {value!r}: expected {kind.__name__}{_where(text, section, key)}") from None


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from None

    for sec in cp.sections():
        if sec not in ("experiment", "environment", "sweep") and not sec.startswith("method."):
            raise ConfigError(f"unknown section [{sec}]{_where(text, sec)}")
    if not cp.has_section("experiment"):
        raise ConfigError("missing section [experiment]")
    exp = cp["experiment"]
    for key in exp:
        if key not in ("name", "methods", "attacks", "seeds", "out"):
            raise ConfigError(f"unknown key [experiment] {key}{_where(text, 'experiment', key)}")
    for key in ("methods", "attacks", "seeds"):
        if key not in exp or not _split(exp[key]):
            raise ConfigError(f"[experiment] {key} must be a nonempty list{_where(text, 'experiment', key)}")

    names = _split(exp["methods"])
    if len(set(names)) != len(names):
        raise ConfigError(f"[experiment] methods: duplicate method names{_where(text, 'experiment', 'methods')}")
    methods = []
    for name in names:
        sec = f"method.{name}"
        opts = {}
        if cp.has_section(sec):
            for key, value in cp[sec].items():
                if key not in METHOD_KEYS:
                    raise ConfigError(f"unknown key [{sec}] {key}{_where(text, sec, key)}")
                opts[key] = _typed(text, sec, key, value, METHOD_KEYS[key])
        kind = opts.pop("kind", name)
        if kind not in METHOD_KINDS:
            where = _where(text, sec, "kind") if cp.has_section(sec) else _where(text, "experiment", "methods")
            raise ConfigError(f"method {name!r}: unknown kind {kind!r}; expected one of {list(METHOD_KINDS)}{where}")
        methods.append(MethodSpec(name, kind, opts))
    for sec in cp.sections():
        if sec.startswith("method.") and sec[len("method."):] not in names:
            raise ConfigError(f"[{sec}] is not listed in [experiment] methods{_where(text, sec)}")

    attacks = _split(exp["attacks"])
    for a in attacks:
        if a not in ATTACKS:
            raise ConfigError(f"[experiment] attacks: unknown attack {a!r}; expected {sorted(ATTACKS)}{_where(text, 'experiment', 'attacks')}")
    seeds = [_typed(text, "experiment", "seeds", s, int) for s in _split(exp["seeds"])]

    env: dict = {}
    if cp.has_section("environment"):
        sec = cp["environment"]
        gen = sec.get("generator", "fog_bridges")
        if gen not in ENV_KEYS:
            raise ConfigError(f"[environment] generator: unknown {gen!r}; expected {sorted(ENV_KEYS)}{_where(text, 'environment', 'generator')}")
        for key, value in sec.items():
            if key not in ENV_KEYS[gen]:
                raise ConfigError(f"unknown key [environment] {key} for generator {gen}{_where(text, 'environment', key)}")
            env[key] = _typed(text, "environment", key, value, ENV_KEYS[gen][key])
        need = {"random": ("n_states", "n_actions", "neighborhood_size"), "file": ("path",)}.get(gen, ())
        for key in need:
            if key not in env:
                raise ConfigError(f"[environment] {key} is required for generator {gen}{_where(text, 'environment')}")
    env.setdefault("generator", "fog_bridges")

    sweep: dict = {}
    if cp.has_section("sweep"):
        for key, value in cp["sweep"].items():
            if key not in SWEEP_KEYS:
                raise ConfigError(f"unknown key [sweep] {key}; expected {list(SWEEP_KEYS)}{_where(text, 'sweep', key)}")
            sweep[key] = [_typed(text, "sweep", key, v, float) for v in _split(value)]

    return ExperimentConfig(
        name=exp.get("name", "experiment"),
        environment=env,
        methods=methods,
        attacks=attacks,
        seeds=seeds,
        sweep=sweep,
        out=exp.get("out"),
        source=text,
        base_dir=base_dir or Path("."),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), path.parent)


def grid_points(cfg: ExperimentConfig) -> list[dict]:
    """Cross product of the sweep axes in declaration order."""
    if not cfg.sweep:
        raise ConfigError("sweep needs a nonempty [sweep] section")
    for key, values in cfg.sweep.items():
        if not values:
            raise ConfigError(f"[sweep] {key} is an empty grid{_where(cfg.source, 'sweep', key)}")
    keys = list(cfg.sweep)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(cfg.sweep[k] for k in keys))]


def grid_size(cfg: ExperimentConfig) -> int:
    n = 1
    for values in cfg.sweep.values():
        n *= len(values)
    return n
