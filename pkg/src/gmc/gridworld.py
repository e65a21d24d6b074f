"""Fully observable DoorKey gridworld following MiniGrid's semantics.

Layout, action set, tile encoding and the sparse reward
``1 - 0.9 * steps / max_steps`` mirror ``MiniGrid-DoorKey-NxN``.  Dynamics
are a pure function of a small :class:`AgentState` over a static layout,
which the BFS planner reuses.

The optional door-noise condition adds a fourth observation channel that is
filled with iid Gaussian noise whenever the agent stands on the door or an
orthogonally adjacent tile, and is zero otherwise.  It never touches the
first three channels, the dynamics or the reward.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

# MiniGrid index tables
OBJECT_TO_IDX = {"unseen": 0, "empty": 1, "wall": 2, "floor": 3, "door": 4,
                 "key": 5, "ball": 6, "box": 7, "goal": 8, "lava": 9, "agent": 10}
COLOR_TO_IDX = {"red": 0, "green": 1, "blue": 2, "purple": 3, "yellow": 4, "grey": 5}
DOOR_OPEN, DOOR_CLOSED, DOOR_LOCKED = 0, 1, 2

LEFT, RIGHT, FORWARD, PICKUP, DROP, TOGGLE, DONE = range(7)
N_ACTIONS = 7
ACTION_NAMES = ("left", "right", "forward", "pickup", "drop", "toggle", "done")
DIR_TO_VEC = ((1, 0), (0, 1), (-1, 0), (0, -1))  # right, down, left, up

# divisor per channel so the first three channels land in [0, 1]
CHANNEL_SCALE = np.array([10.0, 5.0, 3.0])


class EpisodeDoneError(RuntimeError):
    pass


class AgentState(NamedTuple):
    x: int
    y: int
    dir: int
    key: tuple[int, int] | None  # None while carried
    door: int


@dataclass(frozen=True)
class Layout:
    size: int
    walls: np.ndarray  # (size, size) bool, indexed [x, y]
    door: tuple[int, int]
    goal: tuple[int, int]


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


def transition(layout: Layout, s: AgentState, action: int) -> tuple[AgentState, bool]:
    """Apply one action; returns ``(next_state, reached_goal)``."""
    if action == LEFT:
        return s._replace(dir=(s.dir - 1) % 4), False
    if action == RIGHT:
        return s._replace(dir=(s.dir + 1) % 4), False
    dx, dy = DIR_TO_VEC[s.dir]
    fwd = (s.x + dx, s.y + dy)
    if action == FORWARD:
        if layout.walls[fwd] or fwd == s.key:
            return s, False
        if fwd == layout.door and s.door != DOOR_OPEN:
            return s, False
        return s._replace(x=fwd[0], y=fwd[1]), fwd == layout.goal
    if action == PICKUP:
        if s.key is not None and fwd == s.key:
            return s._replace(key=None), False
        return s, False
    if action == DROP:
        free = not (layout.walls[fwd] or fwd in (layout.door, layout.goal))
        if s.key is None and free:
            return s._replace(key=fwd), False
        return s, False
    if action == TOGGLE:
        if fwd != layout.door:
            return s, False
        if s.door == DOOR_LOCKED:
            return (s._replace(door=DOOR_OPEN), False) if s.key is None else (s, False)
        return s._replace(door=DOOR_CLOSED if s.door == DOOR_OPEN else DOOR_OPEN), False
    if action == DONE:
        return s, False
    raise IndexError(f"action {action} outside [0, {N_ACTIONS})")


def generate_layout(size: int, rng: np.random.Generator) -> tuple[Layout, AgentState]:
    """Outer walls, a vertical wall with a locked door, key and agent on the left."""
    walls = np.zeros((size, size), dtype=bool)
    walls[0, :] = walls[-1, :] = walls[:, 0] = walls[:, -1] = True
    goal = (size - 2, size - 2)
    split = int(rng.integers(2, size - 2))
    walls[split, :] = True
    door = (split, int(rng.integers(1, size - 2)))
    walls[door] = False
    left_cells = [(x, y) for x in range(1, split) for y in range(1, size - 1)]
    i, j = rng.choice(len(left_cells), size=2, replace=False)
    agent, key = left_cells[i], left_cells[j]
    state = AgentState(agent[0], agent[1], int(rng.integers(0, 4)), key, DOOR_LOCKED)
    return Layout(size, walls, door, goal), state


def encode(layout: Layout, s: AgentState) -> np.ndarray:
    """(size, size, 3) integer grid: object type, color, state."""
    n = layout.size
    grid = np.zeros((n, n, 3), dtype=np.int64)
    grid[..., 0] = OBJECT_TO_IDX["empty"]
    grid[layout.walls] = (OBJECT_TO_IDX["wall"], COLOR_TO_IDX["grey"], 0)
    grid[layout.goal] = (OBJECT_TO_IDX["goal"], COLOR_TO_IDX["green"], 0)
    grid[layout.door] = (OBJECT_TO_IDX["door"], COLOR_TO_IDX["yellow"], s.door)
    if s.key is not None:
        grid[s.key] = (OBJECT_TO_IDX["key"], COLOR_TO_IDX["yellow"], 0)
    grid[s.x, s.y] = (OBJECT_TO_IDX["agent"], COLOR_TO_IDX["red"], s.dir)
    return grid


def near_door(agent_pos, door_pos) -> bool:
    return abs(agent_pos[0] - door_pos[0]) + abs(agent_pos[1] - door_pos[1]) <= 1


def apply_door_noise(obs: np.ndarray, agent_pos, door_pos, rng: np.random.Generator,
                     enabled: bool = True, std: float = 1.0) -> np.ndarray:
    """Return ``obs`` with its 4th channel refilled (noise near the door, else 0)."""
    out = np.array(obs, dtype=np.float64, copy=True)
    if enabled and near_door(agent_pos, door_pos):
        out[..., 3] = std * rng.standard_normal(out.shape[:2])
    else:
        out[..., 3] = 0.0
    return out


class DoorKeyEnv:
    def __init__(self, size: int = 8, max_steps: int | None = None,
                 door_noise: bool = False, noise_std: float = 1.0, seed=None):
        if size < 5:
            raise ValueError("DoorKey needs size >= 5")
        self.size = size
        self.max_steps = max_steps if max_steps is not None else 10 * size * size
        self.door_noise = door_noise
        self.noise_std = noise_std
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        layout_seed, noise_seed = ss.spawn(2)
        self.rng = np.random.default_rng(layout_seed)
        self.noise_rng = np.random.default_rng(noise_seed)
        self.layout: Layout | None = None
        self.state: AgentState | None = None
        self.steps = 0
        self.done = True
        self.trace: list[dict] | None = None

    @property
    def obs_shape(self) -> tuple[int, int, int]:
        return (self.size, self.size, 4)

    def reset(self, seed=None) -> np.ndarray:
        if seed is not None:
            layout_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
            self.rng = np.random.default_rng(layout_seed)
            self.noise_rng = np.random.default_rng(noise_seed)
        self.layout, self.state = generate_layout(self.size, self.rng)
        self.steps = 0
        self.done = False
        return self.observation()

    def encode(self) -> np.ndarray:
        return encode(self.layout, self.state)

    def observation(self) -> np.ndarray:
        obs = np.zeros(self.obs_shape)
        obs[..., :3] = self.encode() / CHANNEL_SCALE
        return apply_door_noise(obs, (self.state.x, self.state.y), self.layout.door,
                                self.noise_rng, self.door_noise, self.noise_std)

    def step(self, action: int) -> StepResult:
        if self.done:
            raise EpisodeDoneError("step() after the episode ended; call reset()")
        self.state, reached = transition(self.layout, self.state, int(action))
        self.steps += 1
        reward = 0.0
        if reached:
            reward = 1.0 - 0.9 * self.steps / self.max_steps
        self.done = reached or self.steps >= self.max_steps
        if self.trace is not None:
            self.trace.append({"step": self.steps, "action": ACTION_NAMES[int(action)],
                               "x": self.state.x, "y": self.state.y, "dir": self.state.dir,
                               "carrying": int(self.state.key is None),
                               "door": self.state.door, "reward": reward})
        return StepResult(self.observation(), reward, self.done,
                          {"steps": self.steps, "success": reached})

    def dump_trace(self, path) -> None:
        """Write the recorded trajectory (enable with ``env.trace = []``)."""
        rows = self.trace or []
        with Path(path).open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["step", "action", "x", "y", "dir",
                                               "carrying", "door", "reward"],
                               lineterminator="\n")
            w.writeheader()
            w.writerows(rows)


def plan(layout: Layout, start: AgentState) -> list[int] | None:
    """Shortest action sequence reaching the goal (BFS), or None."""
    parent: dict[AgentState, tuple[AgentState, int] | None] = {start: None}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        for a in (LEFT, RIGHT, FORWARD, PICKUP, TOGGLE):
            nxt, reached = transition(layout, s, a)
            if reached:
                actions = [a]
                while parent[s] is not None:
                    s, prev_a = parent[s]
                    actions.append(prev_a)
                return actions[::-1]
            if nxt not in parent:
                parent[nxt] = (s, a)
                queue.append(nxt)
    return None


class VecDoorKey:
    """A batch of independent DoorKey environments with automatic reset."""

    def __init__(self, n: int, size: int = 8, max_steps: int | None = None,
                 door_noise: bool = False, noise_std: float = 1.0, seed: int = 0):
        seeds = np.random.SeedSequence(seed).spawn(n)
        self.envs = [DoorKeyEnv(size, max_steps, door_noise, noise_std, s) for s in seeds]
        self.obs_dim = size * size * 4

    def reset(self) -> np.ndarray:
        return np.stack([e.reset().ravel() for e in self.envs])

    def step(self, actions):
        """Returns (next_obs, rewards, dones, final_obs).

        ``next_obs`` is the first observation of a fresh episode where an
        episode ended; the observation that ended it is in ``final_obs``.
        """
        n = len(self.envs)
        obs = np.empty((n, self.obs_dim))
        final = np.empty((n, self.obs_dim))
        rewards = np.zeros(n)
        dones = np.zeros(n, dtype=bool)
        for i, (env, a) in enumerate(zip(self.envs, actions)):
            r = env.step(int(a))
            final[i] = r.observation.ravel()
            rewards[i], dones[i] = r.reward, r.done
            obs[i] = env.reset().ravel() if r.done else final[i]
        return obs, rewards, dones, final
