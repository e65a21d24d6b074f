"""Stateless task-selection environment over grouped image classes.

Classes are partitioned into groups A={0}, B={1,2}, C={3,4,5}, D={6..9}.

* Curriculum: the actor picks a class; every image carries a label drawn once,
  at construction, uniformly from its own group.
* Noise: the actor picks a group; each draw gets a fresh uniform label from
  that group, so the label noise of a group is ``1 - 1/|group|``.

Episodes emit no extrinsic reward.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .datasets import N_CLASSES, LabeledSet

GROUPS: tuple[tuple[int, ...], ...] = ((0,), (1, 2), (3, 4, 5), (6, 7, 8, 9))
CLASS_TO_GROUP = np.array([g for g, members in enumerate(GROUPS) for _ in members])
GROUP_NAMES = ("A", "B", "C", "D")


class Mode(str, Enum):
    CURRICULUM = "curriculum"
    NOISE = "noise"


class ActionSpace(str, Enum):
    PER_CLASS = "per_class"
    PER_GROUP = "per_group"

    @property
    def n(self) -> int:
        return N_CLASSES if self is ActionSpace.PER_CLASS else len(GROUPS)


def default_action_space(mode: Mode) -> ActionSpace:
    return ActionSpace.PER_CLASS if mode is Mode.CURRICULUM else ActionSpace.PER_GROUP


def noise_level(group: int) -> float:
    return 1.0 - 1.0 / len(GROUPS[group])


@dataclass
class EpisodeOutcome:
    image: np.ndarray
    label: int
    group: int
    action: int


@dataclass
class EpisodeBatch:
    images: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    actions: np.ndarray
    sample_ids: np.ndarray


class BanditEnv:
    def __init__(self, data: LabeledSet, mode: Mode | str, seed: int = 0,
                 action_space: ActionSpace | str | None = None):
        self.data = data
        self.mode = Mode(mode)
        self.action_space = (default_action_space(self.mode) if action_space is None
                             else ActionSpace(action_space))
        if self.action_space is not default_action_space(self.mode):
            raise ValueError(f"{self.mode.value} mode requires the "
                             f"{default_action_space(self.mode).value} action space")
        self.rng = np.random.default_rng(seed)
        self.groups_of_sample = CLASS_TO_GROUP[data.labels]
        by_class = data.indices_by_class()
        if self.action_space is ActionSpace.PER_CLASS:
            self._pools = by_class
        else:
            self._pools = [np.concatenate([by_class[c] for c in members])
                           for members in GROUPS]
        if any(len(p) == 0 for p in self._pools):
            raise ValueError("every class must have at least one image")
        self.scramble = None
        if self.mode is Mode.CURRICULUM:
            scramble_rng = np.random.default_rng([seed, 1])
            self.scramble = np.empty(len(data), dtype=np.int64)
            for members in GROUPS:
                idx = np.flatnonzero(np.isin(data.labels, members))
                self.scramble[idx] = scramble_rng.choice(members, size=len(idx))

    @property
    def n_actions(self) -> int:
        return self.action_space.n

    def step(self, action: int) -> EpisodeOutcome:
        b = self.step_batch(np.array([action]))
        return EpisodeOutcome(b.images[0], int(b.labels[0]), int(b.groups[0]), int(action))

    def step_batch(self, actions) -> EpisodeBatch:
        actions = np.asarray(actions, dtype=np.int64)
        if actions.size and (actions.min() < 0 or actions.max() >= self.n_actions):
            raise IndexError(f"action outside [0, {self.n_actions})")
        ids = np.empty(len(actions), dtype=np.int64)
        for a in np.unique(actions):
            sel = np.flatnonzero(actions == a)
            ids[sel] = self.rng.choice(self._pools[a], size=len(sel))
        groups = self.groups_of_sample[ids]
        if self.mode is Mode.CURRICULUM:
            labels = self.scramble[ids]
        else:
            labels = np.empty(len(ids), dtype=np.int64)
            for g, members in enumerate(GROUPS):
                sel = np.flatnonzero(groups == g)
                labels[sel] = self.rng.choice(members, size=len(sel))
        return EpisodeBatch(self.data.images[ids], labels, groups, actions, ids)

    def eval_set(self, per_arm: int, seed: int = 0):
        """Balanced evaluation set: ``per_arm`` images per class or group.

        Returns ``(images, targets, groups)`` where ``targets`` is a (n, 10)
        label distribution: one-hot scrambled labels in Curriculum mode, the
        uniform distribution over the group in Noise mode (the expected loss
        under fresh label draws).
        """
        rng = np.random.default_rng([seed, 2])
        ids = np.concatenate([
            rng.choice(pool, size=per_arm, replace=len(pool) < per_arm)
            for pool in self._pools])
        groups = self.groups_of_sample[ids]
        targets = np.zeros((len(ids), N_CLASSES))
        if self.mode is Mode.CURRICULUM:
            targets[np.arange(len(ids)), self.scramble[ids]] = 1.0
        else:
            for g, members in enumerate(GROUPS):
                rows = np.flatnonzero(groups == g)
                targets[np.ix_(rows, list(members))] = 1.0 / len(members)
        return self.data.images[ids], targets, groups
