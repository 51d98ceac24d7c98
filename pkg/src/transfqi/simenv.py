"""Synthetic linear-Gaussian environment with quadratic rewards, and CSV
ingestion of offline transitions.

The raw state evolves as x' = 3/4 diag(a, -a, a) x + eps with a in {-1, +1}
and the reward is a * x'Cx + noise. Estimators only ever see tanh(x).
Action index 0 is a = -1 and index 1 is a = +1.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .dataset import TaskDataset
from .errors import ValidationError
from .sieve import squash_state

ACTION_VALUES = np.array([-1.0, 1.0])


@dataclass(frozen=True, eq=False)
class QuadEnvSpec:
    c_matrix: np.ndarray
    gamma: float = 0.9
    dim: int = 3
    dyn_scale: float = 0.75
    state_noise_sd: float = 0.5
    reward_noise_sd: float = 0.5

    def __post_init__(self):
        C = np.array(self.c_matrix, dtype=float)
        if C.shape != (self.dim, self.dim) or not np.all(np.isfinite(C)):
            raise ValidationError("c_matrix must be a finite %dx%d matrix" % (self.dim, self.dim))
        if self.state_noise_sd < 0 or self.reward_noise_sd < 0:
            raise ValidationError("noise standard deviations must be nonnegative")
        C.setflags(write=False)
        object.__setattr__(self, "c_matrix", C)

    n_actions = 2

    @property
    def signs(self):
        s = np.ones(self.dim)
        s[1::2] = -1.0
        return s

    def mean_reward(self, x_raw, a_idx):
        x = np.asarray(x_raw, dtype=float)
        return ACTION_VALUES[a_idx] * np.einsum("...i,ij,...j->...", x, self.c_matrix, x)

    # --- environment protocol used by Monte-Carlo rollouts ---------------
    def observe(self, x_raw):
        return squash_state(x_raw)

    def step(self, x_raw, a_idx, rng):
        x = np.asarray(x_raw, dtype=float)
        a_idx = np.asarray(a_idx, dtype=np.int64)
        r = self.mean_reward(x, a_idx)
        if self.reward_noise_sd > 0:
            r = r + self.reward_noise_sd * rng.standard_normal(r.shape)
        x_next = self.dyn_scale * ACTION_VALUES[a_idx][..., None] * self.signs * x
        if self.state_noise_sd > 0:
            x_next = x_next + self.state_noise_sd * rng.standard_normal(x.shape)
        return r, x_next

    def sample_initial(self, n, rng):
        return rng.standard_normal((n, self.dim))

    def to_dict(self):
        return {"c_matrix": self.c_matrix.tolist(), "gamma": self.gamma, "dim": self.dim,
                "dyn_scale": self.dyn_scale, "state_noise_sd": self.state_noise_sd,
                "reward_noise_sd": self.reward_noise_sd}

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


@dataclass(frozen=True)
class SourcePerturbation:
    sigma_c: float
    seed: int

    def __post_init__(self):
        if not self.sigma_c >= 0:
            raise ValidationError("sigma_c must be nonnegative")


def make_target_spec(seed, gamma=0.9, **overrides):
    """C has N(0, 1) diagonal and N(0, 1/4) off-diagonal entries."""
    rng = np.random.default_rng(seed)
    C = 0.5 * rng.standard_normal((3, 3))
    C[np.diag_indices(3)] = rng.standard_normal(3)
    return QuadEnvSpec(C, gamma=gamma, **overrides)


def make_source_spec(target, pert):
    """Copy of ``target`` with C + C_delta, C_delta entries i.i.d. N(0, sigma_c^2)."""
    if pert.sigma_c == 0:
        return replace(target)
    rng = np.random.default_rng(pert.seed)
    C_delta = pert.sigma_c * rng.standard_normal(target.c_matrix.shape)
    return replace(target, c_matrix=target.c_matrix + C_delta)


def simulate_raw(spec, n_traj, horizon, seed, x0=None, actions=None):
    """Raw-chain rollouts under the uniform behaviour policy.

    Returns (x [n, T+1, d], a_idx [n, T], r [n, T]).
    """
    rng = np.random.default_rng(seed)
    x = spec.sample_initial(n_traj, rng) if x0 is None else np.array(x0, dtype=float)
    xs, acts, rews = [x], [], []
    for t in range(horizon):
        a = rng.integers(0, 2, size=n_traj) if actions is None else np.asarray(actions)[:, t]
        r, x = spec.step(x, a, rng)
        xs.append(x); acts.append(a); rews.append(r)
    return np.stack(xs, axis=1), np.stack(acts, axis=1), np.stack(rews, axis=1)


def simulate_task(spec, n_traj, horizon=5, seed=0, task_id=0):
    """Offline dataset of ``n_traj`` trajectories; states are tanh-squashed."""
    if n_traj < 0:
        raise ValidationError("n_traj must be >= 0")
    if n_traj == 0:
        return TaskDataset.empty(task_id, spec.dim, 2)
    x, a, r = simulate_raw(spec, n_traj, horizon, seed)
    obs = squash_state(x)
    d = spec.dim
    return TaskDataset(task_id, obs[:, :-1].reshape(-1, d), a.reshape(-1), r.reshape(-1),
                       obs[:, 1:].reshape(-1, d), np.repeat(np.arange(n_traj), horizon),
                       np.tile(np.arange(horizon), n_traj), n_actions=2)


# --- CSV --------------------------------------------------------------------

def csv_header(dim):
    return (["task_id", "traj_id", "t"] + ["s_%d" % (i + 1) for i in range(dim)]
            + ["action", "reward"] + ["sp_%d" % (i + 1) for i in range(dim)])


def write_transitions_csv(datasets, path):
    """Write one or more task datasets to a single transition CSV."""
    if isinstance(datasets, TaskDataset):
        datasets = [datasets]
    dims = {d.dim for d in datasets}
    if len(dims) != 1:
        raise ValidationError("all tasks must share one state dimension")
    dim = dims.pop()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(csv_header(dim))
        for d in datasets:
            for i in range(len(d)):
                w.writerow([d.task_id, int(d.traj[i]), int(d.t[i])]
                           + [repr(float(v)) for v in d.states[i]]
                           + [int(d.actions[i]), repr(float(d.rewards[i]))]
                           + [repr(float(v)) for v in d.next_states[i]])


def read_transitions_csv(path, n_actions=None):
    """Parse a transition CSV into one dataset per task id (sorted by id)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError("%s: missing header" % path) from None
        dim = (len(header) - 5) // 2
        if dim < 1 or [h.strip() for h in header] != csv_header(dim):
            raise ValidationError("%s: header does not match task_id,traj_id,t,s_1..s_d,"
                                  "action,reward,sp_1..sp_d" % path)
        rows = {}
        prev = {}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError("%s:%d: expected %d fields, got %d"
                                      % (path, line_no, len(header), len(row)))
            try:
                task, traj, t = int(row[0]), int(row[1]), int(row[2])
                s = [float(v) for v in row[3:3 + dim]]
                action = int(row[3 + dim])
                reward = float(row[4 + dim])
                sp = [float(v) for v in row[5 + dim:]]
            except ValueError as exc:
                raise ValidationError("%s:%d: %s" % (path, line_no, exc)) from None
            if action < 0 or (n_actions is not None and action >= n_actions):
                raise ValidationError("%s:%d: invalid action %d" % (path, line_no, action))
            if not np.all(np.isfinite(s + sp + [reward])):
                raise ValidationError("%s:%d: non-finite value" % (path, line_no))
            last = prev.get(task)
            if last is not None and last[0] == traj:
                if t != last[1] + 1:
                    raise ValidationError("%s:%d: trajectory %d jumps from t=%d to t=%d"
                                          % (path, line_no, traj, last[1], t))
            elif t != 0:
                raise ValidationError("%s:%d: trajectory %d starts at t=%d, expected 0"
                                      % (path, line_no, traj, t))
            prev[task] = (traj, t)
            rows.setdefault(task, []).append((traj, t, s, action, reward, sp))
    out = []
    for task in sorted(rows):
        traj, t, s, a, r, sp = zip(*rows[task])
        m = n_actions if n_actions is not None else max(2, max(a) + 1)
        out.append(TaskDataset(task, np.array(s), np.array(a), np.array(r), np.array(sp),
                               np.array(traj), np.array(t), n_actions=m))
    return out


def load_transitions_csv(path, task_id=None, n_actions=2, dim=None):
    """Load a single task from a transition CSV.

    With ``task_id=None`` the file must hold exactly one task (or none, in
    which case an empty dataset of ``dim`` state coordinates is returned).
    """
    tasks = read_transitions_csv(path, n_actions=n_actions)
    if not tasks:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
        dim = dim or max((len(header) - 5) // 2, 1)
        return TaskDataset.empty(0 if task_id is None else task_id, dim, n_actions)
    if task_id is None:
        if len(tasks) != 1:
            raise ValidationError("%s holds tasks %s; pass task_id"
                                  % (path, [d.task_id for d in tasks]))
        return tasks[0]
    for d in tasks:
        if d.task_id == task_id:
            return d
    raise ValidationError("%s has no task %d" % (path, task_id))
