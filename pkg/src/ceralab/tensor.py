"""Dense float64 tensors with tape-based reverse-mode autodiff.

Deliberately small: 2-d matrix algebra, elementwise activations, dropout,
reductions, and the few structural ops a tiny transformer needs. Values are
row-major numpy arrays; the tape is the implicit graph of parent links, torn
down after each backward pass.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, NumericsError, ShapeError

_DEBUG_CHECKS = False


def debug_checks(enabled: bool) -> None:
    """Toggle eager NaN/Inf detection after every op (off by default)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = enabled


class RngState:
    """Deterministic random stream addressed by (seed, stream id).

    Streams are PCG64 generators keyed by SeedSequence spawn paths, so the
    same (seed, stream path) replays the identical draw sequence on every
    platform, and children derived via `child` never alias each other.
    """

    def __init__(self, seed: int, stream_id: int = 0,
                 _path: tuple[int, ...] | None = None):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._path = _path if _path is not None else (self.stream_id,)
        self._gen = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=self.seed, spawn_key=self._path)))

    def child(self, stream_id: int) -> "RngState":
        return RngState(self.seed, stream_id,
                        _path=self._path + (int(stream_id),))

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=shape)

    def integers(self, low: int, high: int, shape) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def keep_mask(self, shape, keep_prob: float) -> np.ndarray:
        return (self._gen.random(size=shape) < keep_prob).astype(np.float64)

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, path={self._path})"


class Tensor:
    """A dense float64 array plus an optional gradient buffer.

    Ops on tensors record parent links and a backward closure when any
    input requires grad; `backward` on a scalar result replays them.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple["Tensor", ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # operator sugar, thin wrappers over the module-level ops
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return powi(self, p)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _wrap(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _node(data: np.ndarray, parents: Sequence[Tensor],
          bwd: Callable[[np.ndarray], None], op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    rg = any(p.requires_grad for p in parents)
    out.requires_grad = rg
    out._parents = tuple(parents) if rg else ()
    out._backward = bwd if rg else None
    if _DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite values produced by op '{op}'")
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def zero_grads(params: Sequence[Tensor]) -> None:
    for p in params:
        p.zero_grad()


def backward(loss: Tensor) -> None:
    """Populate grads of every requires_grad tensor reachable from `loss`.

    The loss must be scalar (size 1). The tape is cleared afterwards:
    interior nodes drop their parent links and closures.
    """
    if loss.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    # iterative topological sort; graphs can be long-chained
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    if loss.requires_grad:
        loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
        node._parents = ()
        node._backward = None


# ---------------------------------------------------------------------------
# arithmetic


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-d tensors."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} x {b.shape} do not agree")
    data = a.data @ b.data

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _node(data, (a, b), bwd, "matmul")


def linear(x: Tensor, w: Tensor) -> Tensor:
    """Rows-times-weight product: x (n,k) @ w (d,k).T -> (n,d)."""
    x, w = _wrap(x), _wrap(w)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear shapes {x.shape} x {w.shape}.T do not agree")
    data = x.data @ w.data.T

    def bwd(g):
        _accum(x, g @ w.data)
        _accum(w, g.T @ x.data)

    return _node(data, (x, w), bwd, "linear")


def _broadcast_bwd(t: Tensor, g: np.ndarray) -> np.ndarray:
    if t.shape == g.shape:
        return g
    # row-vector or scalar broadcast against a 2-d grad
    extra = g.ndim - t.ndim
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    for ax, n in enumerate(t.shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(t.shape)


def add(a: Tensor, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add shapes {a.shape} + {b.shape}") from exc

    def bwd(g):
        _accum(a, _broadcast_bwd(a, g))
        _accum(b, _broadcast_bwd(b, g))

    return _node(data, (a, b), bwd, "add")


def sub(a: Tensor, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data - b.data
    except ValueError as exc:
        raise ShapeError(f"sub shapes {a.shape} - {b.shape}") from exc

    def bwd(g):
        _accum(a, _broadcast_bwd(a, g))
        _accum(b, _broadcast_bwd(b, -g))

    return _node(data, (a, b), bwd, "sub")


def mul(a: Tensor, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul shapes {a.shape} * {b.shape}") from exc

    def bwd(g):
        _accum(a, _broadcast_bwd(a, g * b.data))
        _accum(b, _broadcast_bwd(b, g * a.data))

    return _node(data, (a, b), bwd, "mul")


def neg(a: Tensor) -> Tensor:
    a = _wrap(a)

    def bwd(g):
        _accum(a, -g)

    return _node(-a.data, (a,), bwd, "neg")


def powi(a: Tensor, p: float) -> Tensor:
    a = _wrap(a)
    data = a.data ** p

    def bwd(g):
        _accum(a, g * p * a.data ** (p - 1))

    return _node(data, (a,), bwd, "pow")


def square(a: Tensor) -> Tensor:
    return powi(a, 2.0)


# ---------------------------------------------------------------------------
# activations


def silu(x: Tensor) -> Tensor:
    """Elementwise x * sigmoid(x)."""
    x = _wrap(x)
    sig = 1.0 / (1.0 + np.exp(-x.data))
    data = x.data * sig

    def bwd(g):
        _accum(x, g * sig * (1.0 + x.data * (1.0 - sig)))

    return _node(data, (x,), bwd, "silu")


def relu(x: Tensor) -> Tensor:
    x = _wrap(x)
    data = np.maximum(x.data, 0.0)

    def bwd(g):
        _accum(x, g * (x.data > 0.0))

    return _node(data, (x,), bwd, "relu")


def identity(x: Tensor) -> Tensor:
    x = _wrap(x)

    def bwd(g):
        _accum(x, g)

    return _node(x.data, (x,), bwd, "identity")


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "identity": identity,
    "relu": relu,
    "silu": silu,
}


def dropout(x: Tensor, p: float, mode: str, style: str = "elementwise",
            rng: RngState | None = None) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-p); eval mode is identity.

    `elementwise` masks single entries; `channel` masks whole latent
    columns, one Bernoulli draw per column shared across the batch rows.
    """
    x = _wrap(x)
    if not 0.0 <= p < 1.0:
        raise DomainError(f"dropout probability must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise DomainError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if style not in ("elementwise", "channel"):
        raise DomainError(f"dropout style must be 'elementwise' or 'channel', got {style!r}")
    if mode == "eval" or p == 0.0:
        return identity(x)
    if rng is None:
        raise DomainError("train-mode dropout with p > 0 requires an RngState")
    keep = 1.0 - p
    if style == "elementwise":
        mask_shape = x.shape
    else:
        mask_shape = (1, x.shape[-1]) if x.ndim == 2 else (x.shape[-1],)
    mask = rng.keep_mask(mask_shape, keep) / keep
    data = x.data * mask

    def bwd(g):
        _accum(x, g * mask)

    return _node(data, (x,), bwd, "dropout")


# ---------------------------------------------------------------------------
# reductions


def tsum(x: Tensor) -> Tensor:
    x = _wrap(x)
    data = np.asarray(x.data.sum())

    def bwd(g):
        _accum(x, np.broadcast_to(g, x.shape).copy())

    return _node(data, (x,), bwd, "sum")


def tmean(x: Tensor) -> Tensor:
    x = _wrap(x)
    n = x.size
    data = np.asarray(x.data.mean())

    def bwd(g):
        _accum(x, np.broadcast_to(g / n, x.shape).copy())

    return _node(data, (x,), bwd, "mean")


def mse(pred: Tensor, target) -> Tensor:
    """Mean over all elements of squared error against a constant target."""
    return tmean(square(sub(pred, _wrap(target))))


# ---------------------------------------------------------------------------
# structural ops


def transpose(x: Tensor) -> Tensor:
    x = _wrap(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a 2-d tensor, got {x.shape}")

    def bwd(g):
        _accum(x, g.T)

    return _node(np.ascontiguousarray(x.data.T), (x,), bwd, "transpose")


def reshape(x: Tensor, shape) -> Tensor:
    x = _wrap(x)
    shape = tuple(shape)
    data = x.data.reshape(shape)

    def bwd(g):
        _accum(x, g.reshape(x.shape))

    return _node(data, (x,), bwd, "reshape")


def slice_cols(x: Tensor, j0: int, j1: int) -> Tensor:
    x = _wrap(x)
    if x.ndim != 2 or not 0 <= j0 < j1 <= x.shape[1]:
        raise ShapeError(f"slice_cols [{j0}:{j1}] invalid for shape {x.shape}")
    data = np.ascontiguousarray(x.data[:, j0:j1])

    def bwd(g):
        full = np.zeros_like(x.data)
        full[:, j0:j1] = g
        _accum(x, full)

    return _node(data, (x,), bwd, "slice_cols")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [_wrap(p) for p in parts]
    if not parts or any(p.ndim != 2 or p.shape[0] != parts[0].shape[0] for p in parts):
        raise ShapeError("concat_cols expects 2-d tensors with equal row counts")
    widths = [p.shape[1] for p in parts]
    data = np.concatenate([p.data for p in parts], axis=1)

    def bwd(g):
        j = 0
        for p, w in zip(parts, widths):
            _accum(p, g[:, j:j + w])
            j += w

    return _node(data, tuple(parts), bwd, "concat_cols")


def stack(parts: Sequence[Tensor]) -> Tensor:
    """Stack same-shape 2-d tensors into one (len, rows, cols) tensor."""
    parts = [_wrap(p) for p in parts]
    if not parts or any(p.shape != parts[0].shape for p in parts):
        raise ShapeError("stack expects same-shape tensors")
    data = np.stack([p.data for p in parts])

    def bwd(g):
        for i, p in enumerate(parts):
            _accum(p, g[i])

    return _node(data, tuple(parts), bwd, "stack")


# ---------------------------------------------------------------------------
# normalization / attention / loss


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-d tensor (numerically stabilized)."""
    x = _wrap(x)
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-d tensor, got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        _accum(x, y * (g - dot))

    return _node(y, (x,), bwd, "softmax_rows")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization with per-feature gain and bias."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    if x.ndim != 2:
        raise ShapeError(f"layer_norm expects a 2-d tensor, got {x.shape}")
    d = x.shape[1]
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def bwd(g):
        dxhat = g * gain.data
        dvar = (dxhat * xc).sum(axis=1, keepdims=True) * (-0.5) * inv ** 3
        dmu = -(dxhat * inv).sum(axis=1, keepdims=True)
        _accum(x, dxhat * inv + dvar * 2.0 * xc / d + dmu / d)
        _accum(gain, (g * xhat).sum(axis=0))
        _accum(bias, g.sum(axis=0))

    return _node(data, (x, gain, bias), bwd, "layer_norm")


def cross_entropy_rows(logits: Tensor, targets) -> Tensor:
    """Mean token-level cross-entropy (natural log) of 2-d logits."""
    logits = _wrap(logits)
    t = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or t.ndim != 1 or t.shape[0] != logits.shape[0]:
        raise ShapeError(f"cross_entropy shapes {logits.shape} vs targets {t.shape}")
    if t.min() < 0 or t.max() >= logits.shape[1]:
        raise DomainError("target id outside the vocabulary")
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    data = np.asarray(-logp[np.arange(n), t].mean())

    def bwd(g):
        p = np.exp(logp)
        p[np.arange(n), t] -= 1.0
        _accum(logits, g * p / n)

    return _node(data, (logits,), bwd, "cross_entropy")


# ---------------------------------------------------------------------------
# verification


def finite_difference_check(f: Callable[[Tensor], Tensor], x: Tensor,
                            step: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    The error at each coordinate is |analytic - numeric| / max(1, |analytic|);
    `f` must be deterministic and return a scalar tensor.
    """
    if step <= 0:
        raise DomainError(f"step must be positive, got {step}")
    probe = Tensor(x.data.copy(), requires_grad=True)
    loss = f(probe)
    backward(loss)
    analytic = np.zeros_like(probe.data) if probe.grad is None else probe.grad.copy()
    flat = probe.data.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(probe).item()
        flat[i] = orig - step
        lo = f(probe).item()
        flat[i] = orig
        numeric = (hi - lo) / (2.0 * step)
        a = analytic.reshape(-1)[i]
        err = abs(a - numeric) / max(1.0, abs(a))
        worst = max(worst, err)
    return worst
