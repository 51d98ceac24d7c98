"""Offline transition data for one task, stored as flat row arrays."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class TaskDataset:
    """Transitions ``(state, action, reward, next_state)`` of one task.

    Rows are grouped by trajectory: all rows sharing a ``traj`` label are
    contiguous and ordered by ``t``. ``task_id`` 0 is the target task.
    """

    task_id: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    traj: np.ndarray
    t: np.ndarray
    n_actions: int = 2
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states.reshape(-1, 1) if states.size else states.reshape(0, 1)
        n = states.shape[0]
        next_states = np.asarray(self.next_states, dtype=float).reshape(n, states.shape[1])
        actions = np.asarray(self.actions, dtype=np.int64).reshape(n)
        rewards = np.asarray(self.rewards, dtype=float).reshape(n)
        traj = np.asarray(self.traj, dtype=np.int64).reshape(n)
        t = np.asarray(self.t, dtype=np.int64).reshape(n)
        if n and (actions.min() < 0 or actions.max() >= self.n_actions):
            raise ValidationError("action index out of range for task %d" % self.task_id)
        for name, value in (("states", states), ("actions", actions), ("rewards", rewards),
                            ("next_states", next_states), ("traj", traj), ("t", t)):
            object.__setattr__(self, name, value)
            value.setflags(write=False)

    @classmethod
    def empty(cls, task_id=0, dim=1, n_actions=2):
        return cls(task_id, np.zeros((0, dim)), np.zeros(0, np.int64), np.zeros(0),
                   np.zeros((0, dim)), np.zeros(0, np.int64), np.zeros(0, np.int64),
                   n_actions=n_actions)

    def __len__(self):
        return self.states.shape[0]

    @property
    def dim(self):
        return self.states.shape[1]

    @property
    def trajectory_labels(self):
        """Unique trajectory labels in storage order."""
        if len(self) == 0:
            return np.zeros(0, np.int64)
        starts = np.flatnonzero(np.r_[True, self.traj[1:] != self.traj[:-1]])
        return self.traj[starts]

    @property
    def n_trajectories(self):
        return len(self.trajectory_labels)

    def trajectory_rows(self):
        """List of row-index arrays, one per trajectory, in storage order."""
        if len(self) == 0:
            return []
        bounds = np.flatnonzero(np.r_[True, self.traj[1:] != self.traj[:-1], True])
        return [np.arange(a, b) for a, b in zip(bounds[:-1], bounds[1:])]

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return TaskDataset(self.task_id, self.states[rows], self.actions[rows],
                           self.rewards[rows], self.next_states[rows], self.traj[rows],
                           self.t[rows], n_actions=self.n_actions, meta=dict(self.meta))

    def with_task_id(self, task_id):
        return TaskDataset(task_id, self.states, self.actions, self.rewards,
                           self.next_states, self.traj, self.t,
                           n_actions=self.n_actions, meta=dict(self.meta))

    def equals(self, other):
        """Exact (bitwise) equality of every stored array."""
        if not isinstance(other, TaskDataset):
            return False
        if (self.task_id, self.n_actions) != (other.task_id, other.n_actions):
            return False
        return all(a.shape == b.shape and a.tobytes() == b.tobytes()
                   for a, b in zip(self._arrays(), other._arrays()))

    def _arrays(self):
        return (self.states, self.actions, self.rewards, self.next_states, self.traj, self.t)


def concat_trajectories(task_id, chunks, dim, n_actions):
    """Build a dataset from per-trajectory tuples of row arrays."""
    if not chunks:
        return TaskDataset.empty(task_id, dim, n_actions)
    cols = list(zip(*chunks))
    return TaskDataset(task_id, np.concatenate(cols[0]), np.concatenate(cols[1]),
                       np.concatenate(cols[2]), np.concatenate(cols[3]),
                       np.concatenate(cols[4]), np.concatenate(cols[5]),
                       n_actions=n_actions)
