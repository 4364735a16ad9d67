"""Adapter-only training: AdamW with decoupled decay, cosine schedule,
loss/metric evaluation, and eval-mode throughput measurement.

Only the injected adapters' tensors are ever updated; the backbone stays
bit-identical (checksum-verifiable) across a run.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .errors import ConfigError, DomainError, ShapeError, TrainingDiverged
from .model import FrozenBackbone, forward, lm_logits, merged_copy
from .tasks import Dataset
from .tensor import RngState, Tensor, backward, zero_grads


@dataclass
class TrainConfig:
    lr_max: float = 3e-3
    lr_min: float = 3e-5
    steps: int = 5000
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    grad_clip: float | None = 1.0

    def __post_init__(self):
        if not self.lr_max >= self.lr_min >= 0.0:
            raise ConfigError("need lr_max >= lr_min >= 0")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("betas must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainReport:
    loss_curve: list[float]
    final_train_loss: float
    test_metric: float
    wallclock_seconds: float
    tokens_per_second: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainReport":
        return cls(**json.loads(text))


def write_loss_csv(report: TrainReport, cfg: TrainConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write("step,lr,loss\n")
        for t, loss in enumerate(report.loss_curve):
            fh.write(f"{t},{repr(cosine_lr(t, cfg))},{repr(loss)}\n")


def cosine_lr(t: int, cfg: TrainConfig) -> float:
    """lr_min + 0.5 (lr_max - lr_min) (1 + cos(pi t / steps))."""
    if not 0 <= t <= cfg.steps:
        raise DomainError(f"step {t} outside [0, {cfg.steps}]")
    if cfg.steps == 0:
        return cfg.lr_max
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (
        1.0 + np.cos(np.pi * t / cfg.steps))


@dataclass
class AdamWState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0


def adamw_state(params: list[Tensor]) -> AdamWState:
    return AdamWState(m=[np.zeros_like(p.data) for p in params],
                      v=[np.zeros_like(p.data) for p in params])


def adamw_step(params: list[Tensor], grads: list[np.ndarray],
               state: AdamWState, lr: float, cfg: TrainConfig) -> None:
    """One bias-corrected update; weight decay is decoupled (applied to the
    parameter before the moment step, scaled by lr alone)."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads, and state must align")
    state.t += 1
    bc1 = 1.0 - cfg.beta1 ** state.t
    bc2 = 1.0 - cfg.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.data.shape != g.shape:
            raise ShapeError(f"grad shape {g.shape} != param shape {p.data.shape}")
        if cfg.weight_decay:
            p.data *= 1.0 - lr * cfg.weight_decay
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def clip_global_norm(grads: list[np.ndarray], clip: float | None) -> float:
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if clip is not None and norm > clip > 0.0:
        scale = clip / norm
        for g in grads:
            g *= scale
    return norm


def _batch_loss(backbone: FrozenBackbone, train: Dataset, idx: np.ndarray,
                mode: str, rng: RngState | None) -> Tensor:
    if backbone.cfg.mode == "regressor":
        out = forward(backbone, Tensor(train.inputs[idx]), mode=mode, rng=rng)
        return T.mse(out, train.targets[idx])
    total = None
    for i in idx:
        logits = lm_logits(backbone, train.inputs[i], mode=mode, rng=rng)
        ce = T.cross_entropy_rows(logits, train.targets[i])
        total = ce if total is None else total + ce
    return total * (1.0 / len(idx))


def evaluate(backbone: FrozenBackbone, test: Dataset) -> float:
    """Test MSE (regressor) or hold-out perplexity (language model)."""
    if backbone.cfg.mode == "regressor":
        out = forward(backbone, Tensor(test.inputs), mode="eval")
        return float(np.mean((out.data - test.targets) ** 2))
    return perplexity(backbone, test)


def perplexity(backbone: FrozenBackbone, dataset: Dataset) -> float:
    """exp of the mean token-level cross-entropy (natural log)."""
    if backbone.cfg.mode != "language_model":
        raise ConfigError("perplexity needs a language model")
    if len(dataset) == 0:
        raise DomainError("empty split")
    total, count = 0.0, 0
    for i in range(len(dataset)):
        logits = lm_logits(backbone, dataset.inputs[i], mode="eval")
        ce = T.cross_entropy_rows(logits, dataset.targets[i])
        n = len(dataset.targets[i])
        total += ce.item() * n
        count += n
    return float(np.exp(total / count))


def _tokens_in_batch(backbone: FrozenBackbone, train: Dataset,
                     batch_size: int) -> int:
    if backbone.cfg.mode == "regressor":
        return batch_size
    return batch_size * train.inputs.shape[1]


def train_adapter(backbone: FrozenBackbone, adapters, train: Dataset,
                  test: Dataset, cfg: TrainConfig) -> TrainReport:
    """Run the adapter-only loop; deterministic given cfg.seed.

    Dropout is active only in train mode; a non-finite loss aborts with a
    diagnostic rather than silently continuing.
    """
    params = [p for ad in adapters for p in ad.params]
    if not params:
        raise ConfigError("no adapter parameters to train")
    opt = adamw_state(params)
    batch_rng = RngState(cfg.seed).child(1)
    drop_rng = RngState(cfg.seed).child(2)
    n_train = len(train)
    curve: list[float] = []
    started = time.perf_counter()
    for t in range(cfg.steps):
        idx = batch_rng.integers(0, n_train, cfg.batch_size)
        loss = _batch_loss(backbone, train, idx, "train", drop_rng)
        loss_value = loss.item()
        if not np.isfinite(loss_value):
            raise TrainingDiverged(
                f"non-finite loss {loss_value} at step {t} (lr={cosine_lr(t, cfg):.3g})")
        zero_grads(params)
        backward(loss)
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                 for p in params]
        clip_global_norm(grads, cfg.grad_clip)
        adamw_step(params, grads, opt, cosine_lr(t, cfg), cfg)
        curve.append(loss_value)
    wallclock = time.perf_counter() - started
    if curve:
        final_train = curve[-1]
    else:
        idx = np.arange(min(n_train, cfg.batch_size))
        final_train = _batch_loss(backbone, train, idx, "eval", None).item()
    tokens = cfg.steps * _tokens_in_batch(backbone, train, cfg.batch_size)
    return TrainReport(
        loss_curve=curve,
        final_train_loss=final_train,
        test_metric=evaluate(backbone, test),
        wallclock_seconds=wallclock,
        tokens_per_second=tokens / wallclock if wallclock > 0 and tokens else 0.0,
    )


@dataclass
class ThroughputReport:
    tokens_per_second: float
    median_seconds: float
    relative_latency: float
    coefficient_of_variation: float
    baseline: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _bare_copy(backbone: FrozenBackbone) -> FrozenBackbone:
    return FrozenBackbone(backbone.cfg, backbone.tok_emb, backbone.pos_emb,
                          backbone.layers, backbone.ln_f_g, backbone.ln_f_b,
                          backbone.head)


def _median_forward_seconds(backbone: FrozenBackbone, batch,
                            repetitions: int) -> tuple[float, float]:
    times = []
    for _ in range(repetitions):
        start = time.perf_counter()
        forward(backbone, batch, mode="eval")
        times.append(time.perf_counter() - start)
    arr = np.asarray(times)
    cv = float(arr.std() / arr.mean()) if arr.mean() > 0 else 0.0
    return float(np.median(arr)), cv


def measure_throughput(backbone: FrozenBackbone, batch,
                       repetitions: int = 9) -> ThroughputReport:
    """Median eval-forward timing vs. a merged-linear baseline.

    Linear adapters are folded for the baseline; for non-mergeable kinds the
    baseline is the bare backbone, which costs the same as any merged model.
    Numbers are hardware-dependent: they are reported, never asserted.
    """
    from .errors import NotMergeableError

    try:
        base = merged_copy(backbone)
        base_label = "merged"
    except NotMergeableError:
        base = _bare_copy(backbone)
        base_label = "bare-backbone (merged-equivalent cost)"
    median, cv = _median_forward_seconds(backbone, batch, repetitions)
    base_median, _ = _median_forward_seconds(base, batch, repetitions)
    if backbone.cfg.mode == "regressor":
        tokens = np.asarray(batch).shape[0]
    else:
        tokens = sum(len(seq) for seq in batch)
    return ThroughputReport(
        tokens_per_second=tokens / median if median > 0 else 0.0,
        median_seconds=median,
        relative_latency=median / base_median if base_median > 0 else 1.0,
        coefficient_of_variation=cv,
        baseline=base_label,
    )
