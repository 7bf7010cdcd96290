"""Cliff-walking grid builder.

The grid is 6 columns by 4 rows with row 0 at the bottom.  State index is
``row * width + col``.  Start is (0, 0), goal is (5, 0) and the cliff
occupies (1..4, 0).  Actions are UP=0, RIGHT=1, DOWN=2, LEFT=3.

Several details of the environment are not pinned down by its informal
description, so they are exposed as ``CliffConfig`` knobs:

``wind``
    ``"target"``: with probability p the intended target is replaced by a
    one-cell slide from that target in a uniformly chosen compass direction.
    ``"current"``: with probability p the agent instead slides one cell from
    its current cell in a uniformly chosen compass direction.
``cliff``
    ``"reset"``: cliff cells are ordinary states whose every action leads to
    the start.  ``"terminal"``: entering a cliff cell ends the episode.
    ``"traversable"``: cliff cells only carry the penalty.
``reward_on``
    ``"leave"``: the reward is that of the cell acted from.  ``"enter"``: the
    reward is that of the cell entered.
``goal``
    ``"absorbing"``: zero-reward self-loop.  ``"terminal"``: zero-reward
    self-loop whose value is pinned at 0 (no regularization is charged).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .mdp import ContractError, TabularMDP

__all__ = [
    "UP", "RIGHT", "DOWN", "LEFT", "ACTION_NAMES", "MOVES",
    "CliffConfig", "PRESETS", "preset", "build_cliff",
    "state_index", "state_coords", "shortest_path_length",
]

UP, RIGHT, DOWN, LEFT = 0, 1, 2, 3
ACTION_NAMES = ("up", "right", "down", "left")
MOVES = ((0, 1), (1, 0), (0, -1), (-1, 0))

WIDTH, HEIGHT = 6, 4
WIND_MODES = ("target", "current")
CLIFF_MODES = ("reset", "terminal", "traversable")
REWARD_MODES = ("leave", "enter")
GOAL_MODES = ("absorbing", "terminal")


@dataclass(frozen=True)
class CliffConfig:
    wind_prob: float = 0.0
    width: int = WIDTH
    height: int = HEIGHT
    step_reward: float = -1.0
    cliff_reward: float = -100.0
    goal_reward: float = 0.0
    discount: float = 0.9
    wind: str = "target"
    cliff: str = "reset"
    reward_on: str = "leave"
    goal: str = "absorbing"

    def __post_init__(self):
        p = float(self.wind_prob)
        if not 0.0 <= p <= 1.0:
            raise ContractError(f"wind_prob must lie in [0, 1], got {self.wind_prob}")
        if (self.width, self.height) != (WIDTH, HEIGHT):
            raise ContractError("the cliff grid is fixed to 6 x 4")
        for name, allowed in (("wind", WIND_MODES), ("cliff", CLIFF_MODES),
                              ("reward_on", REWARD_MODES), ("goal", GOAL_MODES)):
            if getattr(self, name) not in allowed:
                raise ContractError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if self.cliff == "terminal" and self.reward_on == "leave":
            raise ContractError("terminal cliff cells need reward_on='enter' to carry the penalty")

    def with_wind(self, p: float) -> "CliffConfig":
        return replace(self, wind_prob=p)


PRESETS = {
    "classic": CliffConfig(),
    "table1": CliffConfig(wind="current", cliff="terminal", reward_on="enter", goal="terminal"),
    "table2": CliffConfig(wind="current", cliff="traversable", reward_on="enter", goal="absorbing"),
}


def preset(name: str, wind_prob: float = 0.0) -> CliffConfig:
    try:
        return PRESETS[name].with_wind(wind_prob)
    except KeyError:
        raise ContractError(f"unknown cliff preset {name!r}; choose from {sorted(PRESETS)}") from None


def state_index(col: int, row: int, width: int = WIDTH) -> int:
    return row * width + col


def state_coords(s: int, width: int = WIDTH) -> tuple[int, int]:
    return s % width, s // width


def _clip(col: int, row: int, cfg: CliffConfig) -> tuple[int, int]:
    return min(max(col, 0), cfg.width - 1), min(max(row, 0), cfg.height - 1)


def _outcomes(cfg: CliffConfig, col: int, row: int, move) -> list:
    """(probability, (col, row)) pairs for one action before cliff handling."""
    p = cfg.wind_prob
    target = _clip(col + move[0], row + move[1], cfg)
    out = [(1.0 - p, target)]
    if p > 0:
        base = target if cfg.wind == "target" else (col, row)
        out += [(p / 4, _clip(base[0] + dc, base[1] + dr, cfg)) for dc, dr in MOVES]
    return out


def build_cliff(config: CliffConfig | None = None) -> TabularMDP:
    """Build the 24-state, 4-action cliff-walking MDP."""
    cfg = config or CliffConfig()
    W, H = cfg.width, cfg.height
    S, A = W * H, len(MOVES)
    start = state_index(0, 0, W)
    goal = state_index(W - 1, 0, W)
    cliff = [state_index(c, 0, W) for c in range(1, W - 1)]
    is_cliff = np.zeros(S, dtype=bool)
    is_cliff[cliff] = True

    cell_reward = np.full(S, cfg.step_reward)
    cell_reward[cliff] = cfg.cliff_reward
    cell_reward[goal] = cfg.goal_reward

    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    terminal = np.zeros(S, dtype=bool)
    if cfg.goal == "terminal":
        terminal[goal] = True
    if cfg.cliff == "terminal":
        terminal[cliff] = True

    for s in range(S):
        col, row = state_coords(s, W)
        for a, move in enumerate(MOVES):
            if s == goal or terminal[s]:
                P[s, a, s] = 1.0
                continue
            if cfg.cliff == "reset" and is_cliff[s]:
                P[s, a, start] = 1.0
                if cfg.reward_on == "leave":
                    R[s, a] = cell_reward[s]
                else:
                    R[s, a] = cell_reward[start]
                continue
            for q, (c2, r2) in _outcomes(cfg, col, row, move):
                if q == 0.0:
                    continue
                s2 = state_index(c2, r2, W)
                P[s, a, s2] += q
                R[s, a] += q * (cell_reward[s] if cfg.reward_on == "leave" else cell_reward[s2])

    layout = {
        "width": W,
        "height": H,
        "start": start,
        "goal": goal,
        "cliff": cliff,
        "actions": list(ACTION_NAMES),
    }
    return TabularMDP(P, R, cfg.discount, terminal=terminal, layout=layout)


def shortest_path_length(config: CliffConfig | None = None) -> int:
    """Breadth-first search length from start to goal avoiding the cliff row."""
    cfg = config or CliffConfig()
    W, H = cfg.width, cfg.height
    start, goal = (0, 0), (W - 1, 0)
    blocked = {(c, 0) for c in range(1, W - 1)}
    frontier, seen, depth = [start], {start}, 0
    while frontier:
        if goal in frontier:
            return depth
        nxt = []
        for col, row in frontier:
            for dc, dr in MOVES:
                cell = _clip(col + dc, row + dr, cfg)
                if cell not in seen and cell not in blocked:
                    seen.add(cell)
                    nxt.append(cell)
        frontier, depth = nxt, depth + 1
    raise RuntimeError("goal unreachable")
