"""Result rows, CSV persistence and the markdown summary.

CSV columns, in frozen order (sweep files prepend one ``grid_<axis>``
column per grid axis)::

    env_id, method, attack, seed, clean_J, attacked_J, worst_J, training_rounds

There is one row per (method, attack, seed) followed by one aggregate row
per (method, seed) whose ``attack`` is ``worst`` and whose ``attacked_J``
equals ``worst_J``. Floats are written with 17 significant digits so a
reload is exact. Wall-clock times live in a separate ``timings.csv`` so
result files stay byte-deterministic.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

COLUMNS = ("env_id", "method", "attack", "seed", "clean_J", "attacked_J", "worst_J", "training_rounds")
WORST = "worst"


@dataclass(frozen=True)
class ResultRow:
    env_id: str
    method: str
    attack: str
    seed: int
    clean_J: float
    attacked_J: float
    worst_J: float
    training_rounds: int
    grid: tuple = ()  # (axis, value) pairs of a sweep point

    def group(self) -> tuple:
        return self.grid + (self.env_id, self.method, self.seed)


def rows_for_run(env_id: str, method: str, seed: int, attacked: dict[str, float], rounds: int, grid: tuple = ()) -> list[ResultRow]:
    """Rows for one trained policy; ``attacked`` maps attack names and ``clean`` to J."""
    names = [a for a in attacked if a != "clean"]
    worst = min(attacked[a] for a in names)
    clean = attacked["clean"]
    rows = [ResultRow(env_id, method, a, seed, clean, attacked[a], worst, rounds, grid) for a in names]
    rows.append(ResultRow(env_id, method, WORST, seed, clean, worst, worst, rounds, grid))
    return rows


def check_worst_consistency(rows) -> None:
    """Raise if a group's ``worst_J`` differs from the min over its attack rows."""
    groups: dict[tuple, list[ResultRow]] = {}
    for r in rows:
        groups.setdefault(r.group(), []).append(r)
    for key, grp in groups.items():
        attacked = [r.attacked_J for r in grp if r.attack != WORST]
        if not attacked:
            raise ValueError(f"group {key} has no attack rows")
        lo = min(attacked)
        for r in grp:
            if r.worst_J != lo or (r.attack == WORST and r.attacked_J != lo):
                raise ValueError(f"worst-column mismatch in group {key}: {r.worst_J!r} != {lo!r}")


def _fmt(x) -> str:
    return "%.17g" % x if isinstance(x, float) else str(x)


def write_csv(path: str | Path, rows: list[ResultRow]) -> None:
    check_worst_consistency(rows)
    axes = [a for a, _ in rows[0].grid] if rows else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"grid_{a}" for a in axes] + list(COLUMNS))
    for r in rows:
        w.writerow([_fmt(float(v)) for _, v in r.grid] + [_fmt(getattr(r, c)) for c in COLUMNS])
    Path(path).write_text(buf.getvalue())


def read_csv(path: str | Path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        axes = [h[len("grid_"):] for h in header if h.startswith("grid_")]
        if tuple(header[len(axes):]) != COLUMNS:
            raise ValueError(f"{path}: unexpected columns {header}")
        rows = []
        for rec in reader:
            kw = dict(zip(COLUMNS, rec[len(axes):]))
            rows.append(
                ResultRow(
                    kw["env_id"],
                    kw["method"],
                    kw["attack"],
                    int(kw["seed"]),
                    float(kw["clean_J"]),
                    float(kw["attacked_J"]),
                    float(kw["worst_J"]),
                    int(kw["training_rounds"]),
                    tuple((a, float(v)) for a, v in zip(axes, rec)),
                )
            )
    return rows


def markdown_summary(rows: list[ResultRow], title: str) -> str:
    """Methods x attacks table of means over seeds, ``worst`` (rowwise min) last.

    Table rows keep first-appearance order of (grid point, env, method);
    attack columns keep first-appearance order.
    """
    axes = [a for a, _ in rows[0].grid] if rows else []
    attacks: list[str] = []
    cells: dict[tuple, dict] = {}
    for r in rows:
        if r.attack == WORST:
            continue
        if r.attack not in attacks:
            attacks.append(r.attack)
        c = cells.setdefault(r.grid + (r.env_id, r.method), {"clean": {}, "attacked": {}})
        c["clean"][r.seed] = r.clean_J
        c["attacked"].setdefault(r.attack, []).append(r.attacked_J)
    head = axes + ["env", "method", "clean"] + attacks + [WORST]
    out = [f"# {title}", "", "| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for key, c in cells.items():
        means = {a: sum(v) / len(v) for a, v in c["attacked"].items()}
        clean = sum(c["clean"].values()) / len(c["clean"])
        worst = min(means.values())
        vals = ["%g" % v for _, v in key[: len(axes)]] + list(key[len(axes):])
        vals += ["%.4f" % clean] + [("%.4f" % means[a]) if a in means else "" for a in attacks] + ["%.4f" % worst]
        out.append("| " + " | ".join(vals) + " |")
    seeds = sorted({r.seed for r in rows})
    out += ["", f"Means over seeds {seeds}; `{WORST}` is the lowest attacked mean in each row.", ""]
    return "\n".join(out)


def write_timings(path: str | Path, records: list[tuple[str, float]]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["task", "wall_seconds"])
    for name, sec in records:
        w.writerow([name, "%.3f" % sec])
    Path(path).write_text(buf.getvalue())
