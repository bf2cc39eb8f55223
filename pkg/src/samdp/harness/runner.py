"""Train, evaluate and sweep tasks with per-task output directories.

Layout under the output directory::

    runs/[<grid point>/]<method>/seed-<k>/
        model.samdp  pi.txt  q.txt  nu.txt  history.csv  method.ini  config.ini
    results.csv  summary.md            (evaluate)
    sweep.csv    sweep.md  sweep.svg   (sweep; the SVG needs matplotlib)
    timings.csv                        (wall-clock seconds, not deterministic)
"""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..attacks import run_attacks
from ..core import TabularSaMdp, load, save
from ..training import TrainResult, atla_train, valt_train, vanilla_soft_vi
from ..core import SoftParams
from .config import ConfigError, ExperimentConfig, MethodSpec, grid_points, grid_size
from .methods import ALPHA_ENT, method_config
from .results import ResultRow, markdown_summary, rows_for_run, write_csv, write_timings

log = logging.getLogger(__name__)

GRID_LIMIT = 10_000


class ArtifactError(OSError):
    """A trained artifact is missing or unreadable."""


def _grid_tag(grid: tuple) -> str:
    return ",".join(f"{k}={v:g}" for k, v in grid)


def run_dir(out: Path, method: str, seed: int, grid: tuple = ()) -> Path:
    base = out / "runs"
    if grid:
        base = base / _grid_tag(grid)
    return base / method / f"seed-{seed}"


def method_options(spec: MethodSpec, grid: tuple = ()) -> dict:
    opts = dict(spec.options)
    for key, value in grid:
        if key != "fog_level":
            opts[key] = value
    return opts


def train_method(mdp: TabularSaMdp, spec: MethodSpec, seed: int, grid: tuple = ()) -> TrainResult:
    opts = method_options(spec, grid)
    if spec.kind == "vanilla":
        return vanilla_soft_vi(mdp, opts.get("alpha_ent", ALPHA_ENT))
    if spec.kind == "atla":
        return atla_train(mdp, SoftParams(alpha_ent=opts.get("alpha_ent", ALPHA_ENT)), int(opts.get("outer_rounds", 10)))
    opts.pop("outer_rounds", None)
    return valt_train(mdp, method_config(spec.kind, seed=seed, **opts))


def _history_csv(history: list[dict]) -> str:
    keys: list[str] = []
    for h in history:
        keys += [k for k in h if k not in keys]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for h in history:
        w.writerow(["%.17g" % h[k] if isinstance(h.get(k), float) else h.get(k, "") for k in keys])
    return buf.getvalue()


def _env(cfg: ExperimentConfig, seed: int, grid: tuple) -> TabularSaMdp:
    fog = dict(grid).get("fog_level")
    try:
        return cfg.build_env(seed, fog)
    except (OSError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[environment]: {exc}") from None


def train_task(cfg: ExperimentConfig, spec: MethodSpec, seed: int, out: Path, grid: tuple = ()) -> tuple[str, float]:
    t = time.perf_counter()
    mdp = _env(cfg, seed, grid)
    res = train_method(mdp, spec, seed, grid)
    d = run_dir(out, spec.name, seed, grid)
    d.mkdir(parents=True, exist_ok=True)
    save(mdp, d / "model.samdp")
    for name, arr in (("pi", res.pi), ("q", res.q), ("nu", res.nu)):
        np.savetxt(d / f"{name}.txt", arr, fmt="%.17g")
    (d / "history.csv").write_text(_history_csv(res.history))
    opts = method_options(spec, grid)
    lines = ["[method]", f"name = {spec.name}", f"kind = {spec.kind}", f"seed = {seed}", f"converged = {res.converged}"]
    lines += [f"{k} = {v}" for k, v in sorted(opts.items())]
    (d / "method.ini").write_text("\n".join(lines) + "\n")
    (d / "config.ini").write_text(cfg.source)
    return str(d.relative_to(out)), time.perf_counter() - t


def evaluate_task(cfg: ExperimentConfig, spec: MethodSpec, seed: int, out: Path, grid: tuple = ()) -> list[ResultRow]:
    d = run_dir(out, spec.name, seed, grid)
    try:
        mdp = load(d / "model.samdp")
        pi = np.loadtxt(d / "pi.txt", ndmin=2)
        with open(d / "history.csv") as fh:
            rounds = max(0, sum(1 for _ in fh) - 1)
    except OSError as exc:
        raise ArtifactError(f"missing artifact for method {spec.name!r} seed {seed}: {exc}") from None
    ae = method_options(spec, grid).get("alpha_ent", ALPHA_ENT)
    attacked = run_attacks(mdp, pi, cfg.attacks, ae)
    return rows_for_run(mdp.name, spec.name, seed, attacked, rounds, grid)


def _map(fn, tasks, jobs: int):
    if jobs <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*tasks)))


def run_train(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> list[str]:
    tasks = [(cfg, spec, seed, out) for spec in cfg.methods for seed in cfg.seeds]
    done = _map(train_task, tasks, jobs)
    write_timings(out / "timings.csv", done)
    return [d for d, _ in done]


def run_evaluate(cfg: ExperimentConfig, out: Path, jobs: int = 1) -> list[ResultRow]:
    tasks = [(cfg, spec, seed, out) for spec in cfg.methods for seed in cfg.seeds]
    rows = [r for batch in _map(evaluate_task, tasks, jobs) for r in batch]
    write_csv(out / "results.csv", rows)
    (out / "summary.md").write_text(markdown_summary(rows, f"{cfg.name}: attacked returns"))
    return rows


def sweep_task(cfg: ExperimentConfig, spec: MethodSpec, seed: int, out: Path, grid: tuple) -> tuple[list[ResultRow], tuple[str, float]]:
    timing = train_task(cfg, spec, seed, out, grid)
    return evaluate_task(cfg, spec, seed, out, grid), timing


def run_sweep(cfg: ExperimentConfig, out: Path, jobs: int = 1, force: bool = False, plot: bool = False) -> list[ResultRow]:
    n = grid_size(cfg) if cfg.sweep else 0
    if n > GRID_LIMIT and not force:
        raise ConfigError(f"sweep grid has {n} points (> {GRID_LIMIT}); pass --force-grid to run it")
    points = [tuple(p.items()) for p in grid_points(cfg)]
    tasks = [(cfg, spec, seed, out, g) for g in points for spec in cfg.methods for seed in cfg.seeds]
    results = _map(sweep_task, tasks, jobs)
    rows = [r for batch, _ in results for r in batch]
    write_csv(out / "sweep.csv", rows)
    (out / "sweep.md").write_text(markdown_summary(rows, f"{cfg.name}: sweep"))
    write_timings(out / "timings.csv", [t for _, t in results])
    if plot:
        plot_sweep(rows, out / "sweep.svg")
    return rows


def plot_sweep(rows: list[ResultRow], path: Path) -> bool:
    """Worst-case J against the first grid axis, one line per method.

    Other axes are averaged out. Returns False when matplotlib is
    unavailable.
    """
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib not installed; skipping %s", path)
        return False
    axis = rows[0].grid[0][0]
    series: dict[str, dict[float, list[float]]] = {}
    for r in rows:
        if r.attack == "worst":
            series.setdefault(r.method, {}).setdefault(r.grid[0][1], []).append(r.worst_J)
    plt.rcParams["svg.hashsalt"] = "samdp"
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for method, pts in series.items():
        xs = sorted(pts)
        ax.plot(xs, [np.mean(pts[x]) for x in xs], marker="o", label=method)
    ax.set_xlabel(axis)
    ax.set_ylabel("worst-case J")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return True
