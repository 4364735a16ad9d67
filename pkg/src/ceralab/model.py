"""Tiny frozen decoder with weight-level adapter injection.

Two operating modes share one weight set:

* ``language_model``: standard causally-masked pre-norm blocks over a fixed
  numeric vocabulary; logits come back as a (batch, seq, vocab) tensor.
* ``regressor``: one block applied to plain feature vectors, with the
  attention and FFN branches reading the raw input in parallel and no layer
  norm. Every adapter then contributes additively through purely linear
  downstream maps, which is what makes the least-squares bound of the
  teacher task exact. A single position attends only to itself, so the
  softmax is identically one and the query path drops out; regression
  experiments therefore target Wv.

The value projection is allowed to be rectangular (v_out_dim < d_model),
mirroring grouped-query-style asymmetry, and Wo folds it back.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .adapters import Adapter
from .errors import ConfigError, DomainError, ShapeError
from .tensor import RngState, Tensor

INJECTION_TARGETS = ("Wq", "Wv", "attn_block")


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    d_head: int = 16
    n_layers: int = 2
    vocab_size: int = 32        # regression output width in regressor mode
    max_seq_len: int = 64
    v_out_dim: int = 32
    mode: str = "language_model"

    def __post_init__(self):
        dims = (self.d_model, self.n_heads, self.d_head, self.n_layers,
                self.vocab_size, self.max_seq_len, self.v_out_dim)
        if any(d < 1 for d in dims):
            raise ConfigError("all model dimensions must be >= 1")
        if self.mode not in ("language_model", "regressor"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.v_out_dim % self.n_heads != 0:
            raise ConfigError("v_out_dim must be divisible by n_heads")
        if self.mode == "regressor" and self.n_layers != 1:
            raise ConfigError("regressor mode uses exactly one block")

    @property
    def qk_dim(self) -> int:
        return self.n_heads * self.d_head

    @property
    def d_ff(self) -> int:
        return 4 * self.d_model

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)


_LAYER_TENSORS = ("Wq", "Wk", "Wv", "Wo", "W1", "W2",
                  "ln1_g", "ln1_b", "ln2_g", "ln2_b")


class FrozenBackbone:
    """Frozen weights plus the registry of injected adapters."""

    def __init__(self, cfg: ModelConfig, tok_emb, pos_emb, layers,
                 ln_f_g, ln_f_b, head):
        self.cfg = cfg
        self.tok_emb = tok_emb
        self.pos_emb = pos_emb
        self.layers = layers
        self.ln_f_g = ln_f_g
        self.ln_f_b = ln_f_b
        self.head = head
        self.adapters: dict[tuple[int, str], Adapter] = {}

    def frozen_tensors(self) -> list[tuple[str, Tensor]]:
        named = [("tok_emb", self.tok_emb), ("pos_emb", self.pos_emb)]
        for i, layer in enumerate(self.layers):
            named.extend((f"layer{i}.{k}", layer[k]) for k in _LAYER_TENSORS)
        named.extend([("ln_f_g", self.ln_f_g), ("ln_f_b", self.ln_f_b),
                      ("head", self.head)])
        return named

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name, t in self.frozen_tensors():
            h.update(name.encode())
            h.update(t.data.tobytes())
        return h.hexdigest()

    def adapter_params(self) -> list[Tensor]:
        out = []
        for key in sorted(self.adapters):
            out.extend(self.adapters[key].params)
        return out

    def trainable_param_count(self) -> int:
        return sum(p.size for p in self.adapter_params())


def _uniform_matrix(rng: RngState, d: int, k: int) -> Tensor:
    bound = 1.0 / np.sqrt(k)
    return Tensor(rng.uniform(-bound, bound, (d, k)))


def build_model(cfg: ModelConfig, seed: int) -> FrozenBackbone:
    """Deterministic scaled-uniform init; every tensor stays frozen."""
    rng = RngState(seed, 0)
    tok_emb = _uniform_matrix(rng, cfg.vocab_size, cfg.d_model)
    pos_emb = _uniform_matrix(rng, cfg.max_seq_len, cfg.d_model)
    layers = []
    for _ in range(cfg.n_layers):
        layers.append({
            "Wq": _uniform_matrix(rng, cfg.qk_dim, cfg.d_model),
            "Wk": _uniform_matrix(rng, cfg.qk_dim, cfg.d_model),
            "Wv": _uniform_matrix(rng, cfg.v_out_dim, cfg.d_model),
            "Wo": _uniform_matrix(rng, cfg.d_model, cfg.v_out_dim),
            "W1": _uniform_matrix(rng, cfg.d_ff, cfg.d_model),
            "W2": _uniform_matrix(rng, cfg.d_model, cfg.d_ff),
            "ln1_g": Tensor(np.ones(cfg.d_model)),
            "ln1_b": Tensor(np.zeros(cfg.d_model)),
            "ln2_g": Tensor(np.ones(cfg.d_model)),
            "ln2_b": Tensor(np.zeros(cfg.d_model)),
        })
    ln_f_g = Tensor(np.ones(cfg.d_model))
    ln_f_b = Tensor(np.zeros(cfg.d_model))
    head = _uniform_matrix(rng, cfg.vocab_size, cfg.d_model)
    return FrozenBackbone(cfg, tok_emb, pos_emb, layers, ln_f_g, ln_f_b, head)


def adapter_shape(cfg: ModelConfig, target: str) -> tuple[int, int]:
    """(d, k) of the matrix an adapter at `target` wraps."""
    if target == "Wq":
        return cfg.qk_dim, cfg.d_model
    if target == "Wv":
        return cfg.v_out_dim, cfg.d_model
    if target == "attn_block":
        return cfg.d_model, cfg.d_model
    raise ConfigError(f"unknown injection target {target!r}")


def inject(backbone: FrozenBackbone, layer_index: int, target: str,
           adapter: Adapter) -> None:
    """Route one projection (or the whole attention block) through `adapter`."""
    if not 0 <= layer_index < backbone.cfg.n_layers:
        raise ConfigError(f"layer index {layer_index} out of range")
    if target not in INJECTION_TARGETS:
        raise ConfigError(f"unknown injection target {target!r}")
    if (layer_index, target) in backbone.adapters:
        raise ConfigError(f"adapter already injected at layer {layer_index}, {target}")
    weight_level = target in ("Wq", "Wv")
    if weight_level != (adapter.cfg.kind in ("lora", "cera")):
        raise ConfigError(
            f"kind {adapter.cfg.kind!r} cannot be injected at target {target!r}")
    d, k = adapter_shape(backbone.cfg, target)
    if adapter.state.w_up.shape != (adapter.cfg.r, k) or \
            adapter.state.w_down.shape != (d, adapter.cfg.r):
        raise ConfigError(
            f"adapter state shaped {adapter.state.w_up.shape}/{adapter.state.w_down.shape} "
            f"does not fit target {target!r} needing ({adapter.cfg.r},{k})/({d},{adapter.cfg.r})")
    backbone.adapters[(layer_index, target)] = adapter


def _proj(backbone: FrozenBackbone, layer: int, target: str, x_rows: Tensor,
          mode: str, rng: RngState | None, trace: dict | None) -> Tensor:
    w0 = backbone.layers[layer][target]
    adapter = backbone.adapters.get((layer, target))
    base = T.linear(x_rows, w0)
    if adapter is None:
        return base
    latent_sink, delta_sink = _sinks(trace, (layer, target))
    delta = adapter.delta_rows(x_rows, mode, rng, latent_sink=latent_sink)
    if delta_sink is not None:
        delta_sink.append(delta.data.copy())
    return base + delta


def _sinks(trace: dict | None, key) -> tuple[list | None, list | None]:
    if trace is None:
        return None, None
    latent = trace.setdefault("latents", {}).setdefault(key, [])
    delta = trace.setdefault("deltas", {}).setdefault(key, [])
    return latent, delta


def _module_delta(backbone: FrozenBackbone, layer: int, block_in: Tensor,
                  attn_out: Tensor, mode: str, rng: RngState | None,
                  trace: dict | None) -> Tensor:
    adapter = backbone.adapters.get((layer, "attn_block"))
    if adapter is None:
        return attn_out
    latent_sink, delta_sink = _sinks(trace, (layer, "attn_block"))
    delta = adapter.delta_rows(block_in, mode, rng, latent_sink=latent_sink)
    if delta_sink is not None:
        delta_sink.append(delta.data.copy())
    return attn_out + delta


def _causal_mask(s: int) -> Tensor:
    mask = np.triu(np.full((s, s), -1e30), k=1)
    return Tensor(mask)


def _lm_block(backbone: FrozenBackbone, layer: int, x: Tensor, mode: str,
              rng: RngState | None, trace: dict | None) -> Tensor:
    cfg = backbone.cfg
    ws = backbone.layers[layer]
    s = x.shape[0]
    xn = T.layer_norm(x, ws["ln1_g"], ws["ln1_b"])
    q = _proj(backbone, layer, "Wq", xn, mode, rng, trace)
    k = T.linear(xn, ws["Wk"])
    v = _proj(backbone, layer, "Wv", xn, mode, rng, trace)
    mask = _causal_mask(s)
    head_outs = []
    dv = cfg.v_out_dim // cfg.n_heads
    for h in range(cfg.n_heads):
        qh = T.slice_cols(q, h * cfg.d_head, (h + 1) * cfg.d_head)
        kh = T.slice_cols(k, h * cfg.d_head, (h + 1) * cfg.d_head)
        vh = T.slice_cols(v, h * dv, (h + 1) * dv)
        scores = T.matmul(qh, T.transpose(kh)) * (1.0 / np.sqrt(cfg.d_head)) + mask
        attn = T.softmax_rows(scores)
        if trace is not None:
            trace.setdefault("attention", []).append(attn.data.copy())
        head_outs.append(T.matmul(attn, vh))
    attn_out = T.linear(T.concat_cols(head_outs), ws["Wo"])
    attn_out = _module_delta(backbone, layer, xn, attn_out, mode, rng, trace)
    x = x + attn_out
    xn2 = T.layer_norm(x, ws["ln2_g"], ws["ln2_b"])
    ff = T.linear(T.silu(T.linear(xn2, ws["W1"])), ws["W2"])
    return x + ff


def lm_logits(backbone: FrozenBackbone, tokens, mode: str = "eval",
              rng: RngState | None = None, trace: dict | None = None) -> Tensor:
    """Logits (seq x vocab) for one token sequence."""
    cfg = backbone.cfg
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError(f"expected one token sequence, got shape {ids.shape}")
    if ids.size > cfg.max_seq_len:
        raise DomainError(f"sequence length {ids.size} exceeds max {cfg.max_seq_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise DomainError("token id outside the vocabulary")
    x = Tensor(backbone.tok_emb.data[ids] + backbone.pos_emb.data[:ids.size])
    for layer in range(cfg.n_layers):
        x = _lm_block(backbone, layer, x, mode, rng, trace)
    xf = T.layer_norm(x, backbone.ln_f_g, backbone.ln_f_b)
    return T.linear(xf, backbone.head)


def regressor_output(backbone: FrozenBackbone, features, mode: str = "eval",
                     rng: RngState | None = None,
                     trace: dict | None = None) -> Tensor:
    """Regression head over parallel attention/FFN branches (see module doc)."""
    cfg = backbone.cfg
    x = features if isinstance(features, Tensor) else Tensor(features)
    if x.ndim != 2 or x.shape[1] != cfg.d_model:
        raise ShapeError(f"features must be (n, {cfg.d_model}), got {x.shape}")
    ws = backbone.layers[0]
    v = _proj(backbone, 0, "Wv", x, mode, rng, trace)
    attn_out = T.linear(v, ws["Wo"])
    attn_out = _module_delta(backbone, 0, x, attn_out, mode, rng, trace)
    ff = T.linear(T.silu(T.linear(x, ws["W1"])), ws["W2"])
    y = x + attn_out + ff
    return T.linear(y, backbone.head)


def forward(backbone: FrozenBackbone, inputs, mode: str = "eval",
            rng: RngState | None = None, trace: dict | None = None) -> Tensor:
    """Dispatch on the configured mode.

    Language model: `inputs` is a batch of equal-length token sequences;
    returns a (batch, seq, vocab) tensor. Regressor: `inputs` is a feature
    matrix; returns (n, vocab_size) outputs.
    """
    if backbone.cfg.mode == "regressor":
        return regressor_output(backbone, inputs, mode, rng, trace)
    batch = [np.asarray(seq, dtype=np.int64) for seq in inputs]
    if not batch:
        return Tensor(np.zeros((0, 0, backbone.cfg.vocab_size)))
    if any(seq.size != batch[0].size for seq in batch):
        raise ShapeError("batched sequences must share one length")
    return T.stack([lm_logits(backbone, seq, mode, rng, trace) for seq in batch])


def collect_latents(backbone: FrozenBackbone, inputs, which: str = "latent_H"):
    """Stack per-token adapter latents (H) or output contributions (D).

    Runs in eval mode (dropout off). Rows from every injected adapter are
    concatenated; mixed output widths are rejected for D.
    """
    if which not in ("latent_H", "output_delta_D"):
        raise ConfigError(f"unknown collection {which!r}")
    if not backbone.adapters:
        raise ConfigError("no adapter injected; nothing to collect")
    trace: dict = {}
    forward(backbone, inputs, mode="eval", rng=None, trace=trace)
    source = trace.get("latents" if which == "latent_H" else "deltas", {})
    blocks = []
    for key in sorted(source):
        blocks.extend(source[key])
    if not blocks:
        raise ConfigError("forward pass produced no adapter activations")
    widths = {b.shape[1] for b in blocks}
    if len(widths) != 1:
        raise ShapeError(f"cannot stack contributions of mixed widths {sorted(widths)}")
    return Tensor(np.concatenate(blocks, axis=0))


def merged_copy(backbone: FrozenBackbone) -> FrozenBackbone:
    """New backbone with every linear adapter folded into its weight.

    Raises NotMergeableError if any injected adapter is non-linear.
    """
    from .adapters import merge_linear
    from .errors import NotMergeableError

    if any(target == "attn_block" for _, target in backbone.adapters):
        raise NotMergeableError("module-level adapters cannot fold into one matrix")
    layers = []
    for i, layer in enumerate(backbone.layers):
        copied = dict(layer)
        for target in ("Wq", "Wv"):
            adapter = backbone.adapters.get((i, target))
            if adapter is not None:
                copied[target] = merge_linear(layer[target], adapter.state, adapter.cfg)
        layers.append(copied)
    return FrozenBackbone(backbone.cfg, backbone.tok_emb, backbone.pos_emb, layers,
                          backbone.ln_f_g, backbone.ln_f_b, backbone.head)


def save_checkpoint(backbone: FrozenBackbone, path) -> None:
    """Header line (config + tensor index as JSON) then raw float64 blobs."""
    named = backbone.frozen_tensors()
    header = {
        "model_config": backbone.cfg.to_dict(),
        "tensors": [[name, list(t.shape)] for name, t in named],
    }
    payload = b"".join(t.data.astype("<f8").tobytes() for _, t in named)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)


def load_checkpoint(path) -> FrozenBackbone:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    header = json.loads(header_line.decode("utf-8"))
    cfg = ModelConfig.from_dict(header["model_config"])
    tensors = {}
    offset = 0
    for name, shape in header["tensors"]:
        n = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=n, offset=offset).reshape(shape)
        tensors[name] = Tensor(arr.copy())
        offset += n * 8
    layers = []
    for i in range(cfg.n_layers):
        layers.append({k: tensors[f"layer{i}.{k}"] for k in _LAYER_TENSORS})
    return FrozenBackbone(cfg, tensors["tok_emb"], tensors["pos_emb"], layers,
                          tensors["ln_f_g"], tensors["ln_f_b"], tensors["head"])
