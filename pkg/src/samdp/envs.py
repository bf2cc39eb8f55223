"""Deterministic environment generators.

Fog bridges layout (row 0 at the top)::

        0 1 2 3 4 5 6 7 8
    0   . . . . . . . . .
    1   . . . . . . . . .
    2   . ~ ~ ~ ~ ~ ~ ~ .
    3   . ~ ~ = = = ~ ~ .
    4   . ~ ~ = ~ = ~ ~ .
    5   S = = = ~ = = = G
    6   ~ ~ ~ ~ ~ ~ ~ ~ ~

``S`` start, ``G`` goal, ``.`` ground, ``~`` valley, ``=`` narrow bridge.
States are cells in row-major order (``s = 9 * row + col``). Actions are
``up, right, down, left``; moves are deterministic and bumping into the
border leaves the agent in place. Entering ``G`` pays ``+1``, entering a
valley cell pays ``-1``; both are absorbing with zero reward afterwards.

The narrow bridge is the 11-cell path from ``(5,1)`` to ``(5,7)`` over the
bump; the shortest clean route (12 moves) uses it. The long route over
the two-row-wide bridge in rows 0-1 takes 16 moves.

Fog: at ``fog_level`` f the ``ceil(f * 11)`` bridge cells nearest the
middle of the path are fogged. A fogged cell's neighbor list is itself,
then its 4-adjacent valley cells (the fall-side observations), then its
4-adjacent bridge cells, each group in up/right/down/left order. All
other states see themselves only. The prior is uniform.
"""

from __future__ import annotations

import math

import numpy as np

from .core import PerturbationMap, TabularSaMdp

FOG_MAP = (
    ".........",
    ".........",
    ".~~~~~~~.",
    ".~~===~~.",
    ".~~=~=~~.",
    "S===~===G",
    "~~~~~~~~~",
)
BRIDGE_PATH = ((5, 1), (5, 2), (5, 3), (4, 3), (3, 3), (3, 4), (3, 5), (4, 5), (5, 5), (5, 6), (5, 7))
MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))
ACTION_NAMES = ("up", "right", "down", "left")


def generate_random(seed: int, n_states: int, n_actions: int, neighborhood_size: int, gamma: float, concentration: float = 1.0) -> TabularSaMdp:
    """Random SA-MDP: Dirichlet transitions, ``U[-1, 1]`` rewards, random neighbors."""
    if n_states < 1 or n_actions < 1:
        raise ValueError("n_states and n_actions must be positive")
    if not 1 <= neighborhood_size <= n_states:
        raise ValueError("neighborhood_size must lie in [1, n_states]")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    R = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    neighbors = []
    for s in range(n_states):
        others = np.delete(np.arange(n_states), s)
        pick = rng.choice(others, size=neighborhood_size - 1, replace=False)
        neighbors.append((s, *sorted(int(x) for x in pick)))
    d0 = np.full(n_states, 1.0 / n_states)
    return TabularSaMdp(P, R, gamma, d0, PerturbationMap.uniform(neighbors), name=f"random-{seed}")


def cell_state(row: int, col: int) -> int:
    return row * len(FOG_MAP[0]) + col


def state_cell(s: int) -> tuple[int, int]:
    return divmod(s, len(FOG_MAP[0]))


def fogged_cells(fog_level: float) -> list[tuple[int, int]]:
    n = len(BRIDGE_PATH)
    k = min(n, math.ceil(max(0.0, min(1.0, fog_level)) * n - 1e-12))
    mid = (n - 1) / 2.0
    order = sorted(range(n), key=lambda i: (abs(i - mid), i))
    return [BRIDGE_PATH[i] for i in sorted(order[:k])]


def generate_fog_bridges(fog_level: float = 1.0, gamma: float = 0.9) -> TabularSaMdp:
    rows, cols = len(FOG_MAP), len(FOG_MAP[0])
    n = rows * cols
    P = np.zeros((n, 4, n))
    R = np.zeros((n, 4))
    d0 = np.zeros(n)
    for r in range(rows):
        for c in range(cols):
            s = cell_state(r, c)
            tile = FOG_MAP[r][c]
            if tile == "S":
                d0[s] = 1.0
            for a, (dr, dc) in enumerate(MOVES):
                if tile in "~G":
                    P[s, a, s] = 1.0
                    continue
                r2, c2 = r + dr, c + dc
                if not (0 <= r2 < rows and 0 <= c2 < cols):
                    r2, c2 = r, c
                P[s, a, cell_state(r2, c2)] = 1.0
                R[s, a] = {"G": 1.0, "~": -1.0}.get(FOG_MAP[r2][c2], 0.0)
    bridge = set(BRIDGE_PATH)
    neighbors = [[s] for s in range(n)]
    for r, c in fogged_cells(fog_level):
        adj = [(r + dr, c + dc) for dr, dc in MOVES if 0 <= r + dr < rows and 0 <= c + dc < cols]
        valley = [cell_state(*x) for x in adj if FOG_MAP[x[0]][x[1]] == "~"]
        path = [cell_state(*x) for x in adj if x in bridge]
        neighbors[cell_state(r, c)] += valley + path
    return TabularSaMdp(P, R, gamma, d0, PerturbationMap.uniform(neighbors), name=f"fog_bridges-{fog_level:g}")
