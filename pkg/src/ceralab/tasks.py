"""Synthetic tasks for adapter experiments.

Two task families:

* logistic-map trajectories, rendered at 4 decimal places over a fixed
  digit vocabulary, for next-token training and the state-collapse probe;
* a nonlinear-teacher regression task whose target is the student's frozen
  map plus a small SiLU network residual. Because no linear weight-level
  update can realize the residual, ridge least squares on the residual
  gives a provable floor for every linear adapter, while a gated adapter
  can go below it.

`logistic_map` iterates the pure map in full precision; `logistic_map_table`
rounds each iterate to display precision before the next step, which is how
a worked 4-decimal example computes (the two diverge at the fourth step).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, NumericsError, ShapeError
from .tensor import RngState

VOCAB = "0123456789.,"
VOCAB_SIZE = len(VOCAB)
_CHAR_TO_ID = {ch: i for i, ch in enumerate(VOCAB)}


def logistic_map(r: float, x0: float, n: int) -> np.ndarray:
    """x0 followed by n iterates of x -> r x (1 - x)."""
    if not 0.0 <= r <= 4.0:
        raise DomainError(f"growth rate must be in [0, 4], got {r}")
    if not 0.0 <= x0 <= 1.0:
        raise DomainError(f"x0 must be in [0, 1], got {x0}")
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}")
    traj = np.empty(n + 1)
    traj[0] = x0
    for i in range(n):
        traj[i + 1] = r * traj[i] * (1.0 - traj[i])
    return traj


def logistic_map_table(r: float, x0: float, n: int,
                       decimals: int = 4) -> np.ndarray:
    """Trajectory as written out step by step at fixed display precision.

    Each iterate is rounded to `decimals` places before feeding the next
    step, exactly as a worked example printed at 4 decimals computes it.
    This also makes the displayed next value a function of the displayed
    prefix, which is what the next-token task needs.
    """
    if not 0.0 <= r <= 4.0:
        raise DomainError(f"growth rate must be in [0, 4], got {r}")
    if not 0.0 <= x0 <= 1.0:
        raise DomainError(f"x0 must be in [0, 1], got {x0}")
    if n < 0:
        raise DomainError(f"n must be >= 0, got {n}")
    traj = np.empty(n + 1)
    traj[0] = round(x0, decimals)
    for i in range(n):
        traj[i + 1] = round(r * traj[i] * (1.0 - traj[i]), decimals)
    return traj


def render_trajectory(values) -> str:
    return ",".join(format(v, ".4f") for v in values)


def tokenize_trajectory(values) -> np.ndarray:
    return np.array([_CHAR_TO_ID[ch] for ch in render_trajectory(values)],
                    dtype=np.int64)


def detokenize_trajectory(ids) -> list[float]:
    text = "".join(VOCAB[i] for i in np.asarray(ids, dtype=np.int64))
    return [float(part) for part in text.split(",") if part]


def detect_state_collapse(values, min_run: int = 3) -> tuple[bool, float | None]:
    """Flag any value repeating `min_run`+ consecutive steps at display precision."""
    shown = [format(v, ".4f") for v in values]
    run = 1
    for prev, cur in zip(shown, shown[1:]):
        run = run + 1 if cur == prev else 1
        if run >= min_run:
            return True, float(cur)
    return False, None


@dataclass
class Dataset:
    """One split of a task; generation is pure in (task parameters, seed)."""

    inputs: np.ndarray
    targets: np.ndarray
    split: str
    task_id: str
    seed: int

    def __len__(self) -> int:
        return len(self.inputs)

    def to_csv(self, path) -> None:
        if self.inputs.dtype.kind not in "fc":
            raise ShapeError("csv export is for regression datasets")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{i}" for i in range(self.inputs.shape[1])]
                            + [f"y{i}" for i in range(self.targets.shape[1])])
            for x, y in zip(self.inputs, self.targets):
                writer.writerow([repr(float(v)) for v in x]
                                + [repr(float(v)) for v in y])

    @classmethod
    def from_csv(cls, path, split: str, task_id: str, seed: int) -> "Dataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            n_in = sum(1 for h in header if h.startswith("x"))
            rows = [[float(v) for v in row] for row in reader]
        arr = np.asarray(rows)
        return cls(arr[:, :n_in], arr[:, n_in:], split, task_id, seed)

    def to_lines(self, path) -> None:
        if self.inputs.dtype.kind not in "iu":
            raise ShapeError("line export is for token datasets")
        with open(path, "w") as fh:
            for x, y in zip(self.inputs, self.targets):
                full = np.concatenate([x[:1], y])
                fh.write("".join(VOCAB[i] for i in full) + "\n")


def trajectory_sequences(r_range=(2.8, 4.0), x0_range=(0.05, 0.95),
                         n_steps: int = 8, count: int = 64,
                         seed: int = 0) -> tuple[Dataset, Dataset]:
    """Tokenized logistic trajectories with next-token targets, 80/20 split."""
    lo_r, hi_r = r_range
    lo_x, hi_x = x0_range
    if not (0.0 <= lo_r <= hi_r <= 4.0 and 0.0 <= lo_x <= hi_x <= 1.0):
        raise DomainError("parameter ranges must stay inside the map's domain")
    rng = RngState(seed, 100)
    seqs = []
    for _ in range(count):
        r = rng.uniform(lo_r, hi_r, ())
        x0 = rng.uniform(lo_x, hi_x, ())
        seqs.append(tokenize_trajectory(
            logistic_map_table(float(r), float(x0), n_steps)))
    seqs = np.stack(seqs)
    order = rng.permutation(count)
    n_test = max(1, count // 5)
    test_idx = np.sort(order[:n_test])
    train_idx = np.sort(order[n_test:])

    def split_of(idx, name):
        chunk = seqs[idx]
        return Dataset(inputs=chunk[:, :-1], targets=chunk[:, 1:],
                       split=name, task_id="logistic_trajectories", seed=seed)

    return split_of(train_idx, "train"), split_of(test_idx, "test")


def _silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


@dataclass
class Teacher:
    """Fixed random one-hidden-layer SiLU network; T(0) = 0."""

    u: np.ndarray  # hidden x in_dim
    v: np.ndarray  # out_dim x hidden

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return _silu(np.asarray(x) @ self.u.T) @ self.v.T


def nonlinear_teacher(seed: int, in_dim: int, out_dim: int,
                      hidden: int = 32, preact_scale: float = 1.5) -> Teacher:
    """Teacher whose residual is provably non-affine (SiLU curvature).

    `preact_scale` sets the hidden pre-activation standard deviation for
    unit-variance inputs, keeping the network well inside SiLU's curved
    regime rather than its asymptotically linear tails.
    """
    if min(in_dim, out_dim, hidden) < 1:
        raise DomainError("teacher dims must be >= 1")
    rng = RngState(seed, 200)
    u = rng.normal((hidden, in_dim), scale=preact_scale / np.sqrt(in_dim))
    v = rng.normal((out_dim, hidden), scale=1.0 / np.sqrt(hidden))
    return Teacher(u=u, v=v)


@dataclass
class TeacherTask:
    """Regression datasets plus the residuals the floor oracle needs.

    Targets are frozen(X) + scale * teacher(X); the residual arrays hold
    exactly the scaled teacher part, so `linear_floor` can regress them on
    the raw inputs.
    """

    train: Dataset
    test: Dataset
    residual_train: np.ndarray
    residual_test: np.ndarray
    teacher_scale: float


def make_teacher_task(frozen_fn: Callable[[np.ndarray], np.ndarray],
                      teacher: Teacher, in_dim: int, n_train: int = 512,
                      n_test: int = 512, seed: int = 0,
                      residual_share: float = 0.25) -> TeacherTask:
    """Sample standard-normal inputs and blend the teacher residual in.

    The residual is rescaled so it carries `residual_share` of the total
    target variance, keeping both adapter families in a sensitive regime.
    """
    if not 0.0 < residual_share < 1.0:
        raise DomainError("residual share must be in (0, 1)")
    rng = RngState(seed, 300)
    x_all = rng.normal((n_train + n_test, in_dim))
    frozen = frozen_fn(x_all)
    raw_residual = teacher(x_all)
    var_frozen = float(frozen.var())
    var_res = float(raw_residual.var())
    if var_res == 0.0:
        scale = 0.0
    else:
        scale = float(np.sqrt(residual_share * var_frozen
                              / ((1.0 - residual_share) * var_res)))
    residual = scale * raw_residual
    targets = frozen + residual
    order = rng.permutation(n_train + n_test)
    tr, te = np.sort(order[:n_train]), np.sort(order[n_train:])

    def ds(idx, name):
        return Dataset(inputs=x_all[idx], targets=targets[idx], split=name,
                       task_id="nonlinear_teacher", seed=seed)

    return TeacherTask(train=ds(tr, "train"), test=ds(te, "test"),
                       residual_train=residual[tr], residual_test=residual[te],
                       teacher_scale=scale)


def linear_floor_xr(x_train: np.ndarray, r_train: np.ndarray,
                    x_test: np.ndarray, r_test: np.ndarray,
                    ridge: float = 1e-9) -> float:
    """Test MSE of the train-optimal linear map fitting residuals on inputs.

    Solves min_L ||R - X L^T||^2 by ridge-stabilized normal equations; the
    result lower-bounds (to train/test noise) the test MSE of any adapter
    whose contribution is linear in the input, at any rank.
    """
    gram = x_train.T @ x_train + ridge * np.eye(x_train.shape[1])
    try:
        lt = np.linalg.solve(gram, x_train.T @ r_train)
    except np.linalg.LinAlgError as exc:
        raise NumericsError(f"normal equations singular beyond ridge rescue: {exc}")
    return float(np.mean((r_test - x_test @ lt) ** 2))


def linear_floor(task: TeacherTask, ridge: float = 1e-9) -> float:
    return linear_floor_xr(task.train.inputs, task.residual_train,
                           task.test.inputs, task.residual_test, ridge)
