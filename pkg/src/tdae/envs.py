"""Pixel gridworld scenarios plus tabular diagnostics.

All scenarios share a 4-action interface (up, down, left, right), render
3-channel pixel observations in [0,1] with one pixel per cell, and split
episode ends into `terminated` (the task ended) and `truncated` (timeout).
Per-episode layouts are drawn from a counter-based stream seeded by
(run_seed, phase, worker_index, episode_index), so trajectories depend only
on those four integers and the action sequence, never on scheduling.

Scenario rules:
  kitem      k distinct-colored items in an open room; collecting them in the
             fixed palette order pays +0.5 each (wrong item -0.25 and it
             stays); the final item adds a +1 completion bonus and ends the
             episode. Egocentric view.
  labyrinth  recursive-backtracking maze, full-grid view, -0.01 per step,
             +1 at the goal (terminal).
  twocolor   an indicator cell shows red or green for the first
             indicator_visible_steps steps, then turns neutral gray. Items of
             both colors sit in the room; collecting one matching the
             indicator pays +1, mismatched -1, removed either way; the
             episode ends when none remain. Egocentric view, so the color
             must be remembered: the observation is non-Markov after the
             indicator goes dark.
  constobs   constant observation, zero reward, truncation only. Diagnostic
             for GVF fixed points.
  chain      tabular MRP: one-hot observation, transitions by the matrix P,
             reward r[s] on leaving s, terminal states from a mask. Actions
             are ignored. Diagnostic with analytically known values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# palette (RGB in [0,1])
FLOOR = np.array([0.0, 0.0, 0.0])
WALL = np.array([0.3, 0.3, 0.3])
AGENT = np.array([1.0, 1.0, 1.0])
GOAL = np.array([0.0, 1.0, 0.0])
NEUTRAL = np.array([0.5, 0.5, 0.5])
ITEM_COLORS = (
    np.array([1.0, 0.0, 0.0]),   # red
    np.array([1.0, 1.0, 0.0]),   # yellow
    np.array([0.0, 0.0, 1.0]),   # blue
    np.array([1.0, 0.0, 1.0]),   # magenta
    np.array([0.0, 1.0, 1.0]),   # cyan
    np.array([1.0, 0.5, 0.0]),   # orange
)
TWOCOLOR = (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]))  # red, green

# action deltas: up, down, left, right (row, col)
DELTAS = ((-1, 0), (1, 0), (0, -1), (0, 1))
N_ACTIONS = 4


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    terminated: bool
    truncated: bool


@dataclass
class ScenarioConfig:
    kind: str
    grid_size: int = 9
    view: str = "ego"                 # "ego" | "full"
    view_radius: int = 2
    timeout: int = 0                  # 0 -> kind default
    k: int = 2                        # kitem
    items_per_color: int = 2          # twocolor
    indicator_visible_steps: int = 15
    x: float = 0.6                    # constobs
    chain_p: list = field(default_factory=list)
    chain_r: list = field(default_factory=list)
    chain_terminal: list = field(default_factory=list)
    chain_start: int = 0

    _DEFAULT_TIMEOUT = {"kitem": 200, "twocolor": 200, "labyrinth": 250, "constobs": 64, "chain": 64}

    def __post_init__(self):
        kinds = ("kitem", "labyrinth", "twocolor", "constobs", "chain")
        if self.kind not in kinds:
            raise ValueError(f"unknown scenario kind '{self.kind}' (one of {kinds})")
        if self.timeout == 0:
            self.timeout = self._DEFAULT_TIMEOUT[self.kind]
        if self.timeout < 1:
            raise ValueError("timeout must be >= 1")
        if self.kind == "labyrinth":
            if self.grid_size % 2 == 0 or self.grid_size < 5:
                raise ValueError("labyrinth grid_size must be odd and >= 5")
            self.view = "full"
        if self.view == "ego" and 2 * self.view_radius + 1 > self.grid_size:
            raise ValueError("view window exceeds grid size")
        if self.kind == "chain":
            n = len(self.chain_p)
            if n == 0 or len(self.chain_r) != n or len(self.chain_terminal) != n:
                raise ValueError("chain needs square chain_p with matching chain_r and chain_terminal")
            p = np.asarray(self.chain_p, dtype=np.float64)
            if p.shape != (n, n) or np.any(p < 0) or not np.allclose(p.sum(axis=1), 1.0, atol=1e-9):
                raise ValueError("chain_p must be a row-stochastic square matrix")
            if self.chain_terminal[self.chain_start]:
                raise ValueError("chain start state cannot be terminal")

    @property
    def obs_shape(self) -> tuple:
        if self.kind == "chain":
            return (len(self.chain_p), 1, 1)
        if self.view == "full":
            return (3, self.grid_size, self.grid_size)
        side = 2 * self.view_radius + 1
        return (3, side, side)

    @property
    def d(self) -> int:
        c, h, w = self.obs_shape
        return c * h * w


def analytic_values(p, r, terminal, gamma: float) -> np.ndarray:
    """Exact state values of a tabular MRP: v = (I - gamma*P)^-1 r with
    terminal rows of P and r zeroed (a terminal state is worth 0)."""
    p = np.asarray(p, dtype=np.float64).copy()
    r = np.asarray(r, dtype=np.float64).copy()
    term = np.asarray(terminal, dtype=bool)
    p[term] = 0.0
    r[term] = 0.0
    n = len(r)
    return np.linalg.solve(np.eye(n) - gamma * p, r)


class Env:
    """Base: seeding, step bookkeeping, timeout handling."""

    def __init__(self, cfg: ScenarioConfig, run_seed: int, phase: int, worker: int):
        self.cfg = cfg
        self.run_seed = int(run_seed)
        self.phase = int(phase)
        self.worker = int(worker)
        self.episode_index = 0
        self.steps = 0
        self._done = True

    @property
    def obs_shape(self):
        return self.cfg.obs_shape

    def reset(self) -> np.ndarray:
        rng = np.random.default_rng(
            np.random.SeedSequence([self.run_seed, self.phase, self.worker, self.episode_index]))
        self.episode_index += 1
        self.steps = 0
        self._done = False
        self._reset_impl(rng)
        return self._render()

    def step(self, action: int) -> StepResult:
        if self._done:
            raise RuntimeError(f"step() on a finished episode (worker {self.worker}); call reset()")
        if not 0 <= int(action) < N_ACTIONS:
            raise ValueError(f"action {action} out of range")
        reward, terminated = self._step_impl(int(action))
        self.steps += 1
        truncated = not terminated and self.steps >= self.cfg.timeout
        self._done = terminated or truncated
        return StepResult(self._render(), float(reward), terminated, truncated)

    # hooks
    def _reset_impl(self, rng):
        raise NotImplementedError

    def _step_impl(self, action):
        raise NotImplementedError

    def _render(self) -> np.ndarray:
        raise NotImplementedError


class _GridEnv(Env):
    """Shared grid mechanics: border walls, movement, pixel rendering."""

    walls: np.ndarray
    pos: tuple

    def _init_walls(self):
        g = self.cfg.grid_size
        self.walls = np.zeros((g, g), dtype=bool)
        self.walls[0, :] = self.walls[-1, :] = True
        self.walls[:, 0] = self.walls[:, -1] = True

    def _free_cells(self, exclude=()):
        g = self.cfg.grid_size
        ex = set(exclude)
        return [(r, c) for r in range(g) for c in range(g)
                if not self.walls[r, c] and (r, c) not in ex]

    def _move(self, action) -> bool:
        dr, dc = DELTAS[action]
        nr, nc = self.pos[0] + dr, self.pos[1] + dc
        if self.walls[nr, nc]:
            return False
        self.pos = (nr, nc)
        return True

    def _paint(self) -> np.ndarray:
        """[G,G,3] board image before the agent overlay."""
        g = self.cfg.grid_size
        img = np.zeros((g, g, 3))
        img[self.walls] = WALL
        return img

    def _render(self) -> np.ndarray:
        img = self._paint()
        img[self.pos] = AGENT
        if self.cfg.view == "full":
            return np.ascontiguousarray(img.transpose(2, 0, 1))
        rad = self.cfg.view_radius
        side = 2 * rad + 1
        g = self.cfg.grid_size
        view = np.empty((side, side, 3))
        view[:] = WALL  # out-of-bounds reads as wall
        r0, c0 = self.pos[0] - rad, self.pos[1] - rad
        rs, re = max(r0, 0), min(r0 + side, g)
        cs, ce = max(c0, 0), min(c0 + side, g)
        view[rs - r0:re - r0, cs - c0:ce - c0] = img[rs:re, cs:ce]
        return np.ascontiguousarray(view.transpose(2, 0, 1))


class KItemEnv(_GridEnv):
    def _reset_impl(self, rng):
        cfg = self.cfg
        if cfg.k < 1 or cfg.k > len(ITEM_COLORS):
            raise ValueError(f"kitem supports 1..{len(ITEM_COLORS)} items, got k={cfg.k}")
        self._init_walls()
        free = self._free_cells()
        if cfg.k + 1 > len(free):
            raise ValueError(f"kitem: {cfg.k} items + agent exceed {len(free)} free cells")
        picks = rng.choice(len(free), size=cfg.k + 1, replace=False)
        self.items = {free[picks[i]]: i for i in range(cfg.k)}  # cell -> color index
        self.pos = free[picks[cfg.k]]
        self.next_item = 0

    def _step_impl(self, action):
        moved = self._move(action)
        reward, terminated = 0.0, False
        if moved and self.pos in self.items:
            idx = self.items[self.pos]
            if idx == self.next_item:
                reward = 0.5
                del self.items[self.pos]
                self.next_item += 1
                if self.next_item == self.cfg.k:
                    reward += 1.0   # completion bonus
                    terminated = True
            else:
                reward = -0.25      # wrong item stays put
        return reward, terminated

    def _paint(self):
        img = super()._paint()
        for cell, idx in self.items.items():
            img[cell] = ITEM_COLORS[idx]
        return img


class LabyrinthEnv(_GridEnv):
    def _reset_impl(self, rng):
        g = self.cfg.grid_size
        self.walls = np.ones((g, g), dtype=bool)
        # recursive backtracking over the odd-coordinate cell lattice
        cells = [(r, c) for r in range(1, g, 2) for c in range(1, g, 2)]
        start = cells[int(rng.integers(len(cells)))]
        self.walls[start] = False
        stack = [start]
        while stack:
            r, c = stack[-1]
            options = []
            for dr, dc in ((-2, 0), (2, 0), (0, -2), (0, 2)):
                nr, nc = r + dr, c + dc
                if 1 <= nr < g - 1 and 1 <= nc < g - 1 and self.walls[nr, nc]:
                    options.append((nr, nc))
            if not options:
                stack.pop()
                continue
            nr, nc = options[int(rng.integers(len(options)))]
            self.walls[(r + nr) // 2, (c + nc) // 2] = False
            self.walls[nr, nc] = False
            stack.append((nr, nc))
        picks = rng.choice(len(cells), size=2, replace=False)
        self.pos = cells[picks[0]]
        self.goal = cells[picks[1]]

    def _step_impl(self, action):
        self._move(action)
        if self.pos == self.goal:
            return 0.99, True    # +1 goal, -0.01 step cost
        return -0.01, False

    def _paint(self):
        img = super()._paint()
        img[self.goal] = GOAL
        return img


class TwoColorEnv(_GridEnv):
    INDICATOR_CELL = (1, 1)

    def _reset_impl(self, rng):
        cfg = self.cfg
        self._init_walls()
        self.walls[self.INDICATOR_CELL] = True   # fixture: blocks movement
        free = self._free_cells()
        count = 2 * cfg.items_per_color
        if count + 1 > len(free):
            raise ValueError(f"twocolor: {count} items + agent exceed {len(free)} free cells")
        picks = rng.choice(len(free), size=count + 1, replace=False)
        self.items = {free[picks[i]]: i % 2 for i in range(count)}  # cell -> 0 red / 1 green
        self.pos = free[picks[count]]
        self.indicator = int(rng.integers(2))

    def _step_impl(self, action):
        moved = self._move(action)
        reward, terminated = 0.0, False
        if moved and self.pos in self.items:
            color = self.items.pop(self.pos)
            reward = 1.0 if color == self.indicator else -1.0
            if not self.items:
                terminated = True
        return reward, terminated

    def _paint(self):
        img = super()._paint()
        visible = self.steps < self.cfg.indicator_visible_steps
        img[self.INDICATOR_CELL] = TWOCOLOR[self.indicator] if visible else NEUTRAL
        for cell, color in self.items.items():
            img[cell] = TWOCOLOR[color]
        return img


class ConstObsEnv(Env):
    """Constant observation, zero reward, never terminates (truncates)."""

    def _reset_impl(self, rng):
        side = 2 * self.cfg.view_radius + 1
        self._obs = np.full((3, side, side), float(self.cfg.x))

    def _step_impl(self, action):
        return 0.0, False

    def _render(self):
        return self._obs.copy()


class ChainEnv(Env):
    """Tabular MRP with one-hot observations; actions ignored."""

    def _reset_impl(self, rng):
        self._rng = rng
        self._p = np.asarray(self.cfg.chain_p, dtype=np.float64)
        self._r = np.asarray(self.cfg.chain_r, dtype=np.float64)
        self._terminal = np.asarray(self.cfg.chain_terminal, dtype=bool)
        self.state = int(self.cfg.chain_start)

    def _step_impl(self, action):
        reward = float(self._r[self.state])
        row = self._p[self.state]
        self.state = int(self._rng.choice(len(row), p=row))
        return reward, bool(self._terminal[self.state])

    def _render(self):
        n = len(self.cfg.chain_p)
        obs = np.zeros((n, 1, 1))
        obs[self.state, 0, 0] = 1.0
        return obs


_ENV_KINDS = {
    "kitem": KItemEnv,
    "labyrinth": LabyrinthEnv,
    "twocolor": TwoColorEnv,
    "constobs": ConstObsEnv,
    "chain": ChainEnv,
}

# RNG stream phases; evaluation and tracing never perturb training streams.
PHASE_TRAIN = 0
PHASE_EVAL = 1
PHASE_TRACE = 2


def make_env(cfg: ScenarioConfig, run_seed: int, phase: int, worker: int) -> Env:
    return _ENV_KINDS[cfg.kind](cfg, run_seed, phase, worker)
