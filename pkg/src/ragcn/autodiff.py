"""Tape-based reverse-mode differentiation over numpy arrays.

Primitives record a backward closure on the currently active tape (a context
manager); `backward(tape, loss)` walks the records in exact reverse execution
order and accumulates gradients into every `requires_grad` tensor. With no
active tape all operations are pure forward evaluation, which is what
inference uses.

Feature tensors are [C, T, V] or batched [C, N, T, V] (channel-major: with
channels outermost every joint/channel mixing step is a single GEMM over
contiguous views, which is what keeps a 10-layer forward/backward usable on
one CPU core). Ops accept either form and preserve it. Everything is plain
numpy: float32 for training, float64 in gradient-check tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import (
    BadLabel, ConfigError, NotScalar, NumericalError, ShapeMismatch, TapeReuse,
)


class Tensor:
    """A numpy array plus gradient storage."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


# fn(upstream_grad) -> iterable of (input tensor, gradient contribution)
BackwardFn = Callable[[np.ndarray], Iterable[tuple["Tensor", np.ndarray]]]

_ACTIVE_TAPES: list["Tape"] = []


class Tape:
    """Execution-ordered record of primitive applications."""

    def __init__(self):
        self._entries: list[tuple[Tensor, BackwardFn]] = []
        self._consumed = False

    def record(self, out: Tensor, fn: BackwardFn) -> None:
        self._entries.append((out, fn))

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.pop()

    def __len__(self) -> int:
        return len(self._entries)


def active_tape() -> Optional[Tape]:
    return _ACTIVE_TAPES[-1] if _ACTIVE_TAPES else None


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate gradients of everything the scalar `loss` depends on."""
    if loss.data.size != 1:
        raise NotScalar(f"loss has shape {loss.data.shape}")
    if tape._consumed:
        raise TapeReuse("tape already walked backward")
    tape._consumed = True
    out_ids = {id(out) for out, _ in tape._entries}
    if id(loss) not in out_ids:
        raise ValueError("loss was not produced on this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for out, fn in reversed(tape._entries):
        g = grads.pop(id(out), None)
        if g is None:
            continue  # this output does not feed the loss
        if out.requires_grad and out.grad is not None:
            out.grad = out.grad + g
        for tensor, contrib in fn(g):
            if not tensor.requires_grad and id(tensor) not in out_ids:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib
            if id(tensor) not in out_ids:
                leaves[key] = tensor
    for key, tensor in leaves.items():
        if tensor.requires_grad:
            if tensor.grad is None:
                tensor.grad = np.zeros_like(tensor.data)
            tensor.grad = tensor.grad + grads[key]


def _maybe_record(out: Tensor, requires: bool, fn: BackwardFn) -> Tensor:
    tape = active_tape()
    out.requires_grad = requires
    if tape is not None and requires:
        tape.record(out, fn)
    return out


def _feature_axes(x: np.ndarray) -> tuple[bool, np.ndarray]:
    """Normalize a [C,T,V] array to [C,1,T,V]; report whether it was 3D."""
    if x.ndim == 3:
        return True, x[:, None]
    if x.ndim == 4:
        return False, x
    raise ShapeMismatch(f"expected [C,T,V] or [C,N,T,V], got {x.shape}")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of equal-shape tensors (residuals, loss terms)."""
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"add: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data)
    return _maybe_record(out, a.requires_grad or b.requires_grad,
                         lambda g: ((a, g), (b, g)))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(x.data.reshape(shape))
    orig = x.data.shape
    return _maybe_record(out, x.requires_grad,
                         lambda g: ((x, g.reshape(orig)),))


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """y = x @ w + b with x: [N,K], w: [K,M], b: [M]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ShapeMismatch(
            f"linear expects 2D x, 2D w, 1D b; got {x.data.shape}, "
            f"{w.data.shape}, {b.data.shape}"
        )
    if x.data.shape[1] != w.data.shape[0] or w.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(
            f"linear: x {x.data.shape} @ w {w.data.shape} + b {b.data.shape}"
        )
    out = Tensor(x.data @ w.data + b.data)

    def backward_fn(g):
        return ((x, g @ w.data.T), (w, x.data.T @ g), (b, g.sum(axis=0)))

    return _maybe_record(out, x.requires_grad or w.requires_grad or b.requires_grad,
                         backward_fn)


def channel_mix(x: Tensor, w: Tensor) -> Tensor:
    """1x1 convolution over the channel axis: [C, .., T, V] x [C2, C]."""
    was3d, xd = _feature_axes(x.data)
    if w.data.ndim != 2 or w.data.shape[1] != xd.shape[0]:
        raise ShapeMismatch(f"channel_mix: x {x.data.shape}, w {w.data.shape}")
    xd = np.ascontiguousarray(xd)
    x2 = xd.reshape(xd.shape[0], -1)
    y = (w.data @ x2).reshape((w.data.shape[0],) + xd.shape[1:])
    out = Tensor(y[:, 0] if was3d else y)

    def backward_fn(g):
        g2 = np.ascontiguousarray(g).reshape(w.data.shape[0], -1)
        dw = g2 @ x2.T
        dx = (w.data.T @ g2).reshape(xd.shape)
        return ((x, dx[:, 0] if was3d else dx), (w, dw))

    return _maybe_record(out, x.requires_grad or w.requires_grad, backward_fn)


def joint_mix(x: Tensor, adj: np.ndarray, m: Tensor) -> Tensor:
    """Mix joints by the fixed matrix `adj` scaled elementwise by learnable
    `m`: out[.., v] = sum_u x[.., u] * (adj*m)[u, v]."""
    v = x.data.shape[-1]
    if adj.shape != (v, v) or m.data.shape != (v, v):
        raise ShapeMismatch(
            f"joint_mix: x {x.data.shape}, adj {adj.shape}, m {m.data.shape}"
        )
    mix = (adj * m.data).astype(x.data.dtype, copy=False)
    xd = np.ascontiguousarray(x.data)
    x2 = xd.reshape(-1, v)
    out = Tensor((x2 @ mix).reshape(xd.shape))

    def backward_fn(g):
        g2 = np.ascontiguousarray(g).reshape(-1, v)
        dx = (g2 @ mix.T).reshape(xd.shape)
        dm = adj * (x2.T @ g2)
        return ((x, dx), (m, dm))

    return _maybe_record(out, x.requires_grad or m.requires_grad, backward_fn)


def channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-channel bias to a [C, .., T, V] tensor."""
    was3d, xd = _feature_axes(x.data)
    if b.data.ndim != 1 or b.data.shape[0] != xd.shape[0]:
        raise ShapeMismatch(f"channel_bias: x {x.data.shape}, b {b.data.shape}")
    y = xd + b.data[:, None, None, None]
    out = Tensor(y[:, 0] if was3d else y)

    def backward_fn(g):
        g4 = g[:, None] if was3d else g
        return ((x, g), (b, g4.sum(axis=(1, 2, 3))))

    return _maybe_record(out, x.requires_grad or b.requires_grad, backward_fn)


def conv_time(x: Tensor, kernel: Tensor, stride: int, pad: int) -> Tensor:
    """1 x L convolution along the frame axis, independent per joint.

    x: [C, .., T, V], kernel: [C2, C, L]; output frames
    T' = (T + 2*pad - L) // stride + 1.
    """
    was3d, xd = _feature_axes(x.data)
    c2, c, win = kernel.data.shape
    if c != xd.shape[0]:
        raise ShapeMismatch(
            f"conv_time: x channels {xd.shape[0]} != kernel input {c}"
        )
    if win % 2 != 1:
        raise ShapeMismatch(f"conv_time: window {win} must be odd")
    if pad not in (0, (win - 1) // 2):
        raise ShapeMismatch(f"conv_time: pad {pad} for window {win}")
    if stride not in (1, 2):
        raise ShapeMismatch(f"conv_time: stride {stride} not in {{1,2}}")
    if pad:
        xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (0, 0)))
    else:
        xp = np.ascontiguousarray(xd)
    n, t_in, v = xd.shape[1], xd.shape[2], xd.shape[3]
    t_out = (t_in + 2 * pad - win) // stride + 1
    # im2col over the window taps, then one GEMM
    cols = np.empty((c, win, n, t_out, v), dtype=xp.dtype)
    for l in range(win):
        cols[:, l] = xp[:, :, l:l + stride * t_out:stride, :]
    cols2 = cols.reshape(c * win, n * t_out * v)
    k2 = kernel.data.reshape(c2, c * win)
    y = (k2 @ cols2).reshape(c2, n, t_out, v)
    out = Tensor(y[:, 0] if was3d else y)

    def backward_fn(g):
        g2 = np.ascontiguousarray(g).reshape(c2, n * t_out * v)
        dk = (g2 @ cols2.T).reshape(c2, c, win)
        dcols = (k2.T @ g2).reshape(c, win, n, t_out, v)
        dxp = np.zeros_like(xp)
        for l in range(win):
            dxp[:, :, l:l + stride * t_out:stride, :] += dcols[:, l]
        dx = dxp[:, :, pad:pad + t_in, :] if pad else dxp
        return ((x, dx[:, 0] if was3d else dx), (kernel, dk))

    return _maybe_record(out, x.requires_grad or kernel.requires_grad,
                         backward_fn)


@dataclass
class RunningStats:
    """Exponential-moving batch statistics for one BatchNorm."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, dtype=np.float32) -> "RunningStats":
        return cls(mean=np.zeros(channels, dtype=dtype),
                   var=np.ones(channels, dtype=dtype))


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, stats: RunningStats,
               mode: str) -> Tensor:
    """Per-channel normalization; the channel axis is axis 0.

    Train mode uses (and folds into the running estimates) the statistics of
    the current tensor pooled over every non-channel axis; eval mode uses the
    running estimates.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"batch_norm mode {mode!r}")
    if x.data.ndim < 2:
        raise ShapeMismatch("batch_norm needs a channel axis plus pooled axes")
    c = x.data.shape[0]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeMismatch(f"batch_norm: {c} channels, gamma {gamma.data.shape}")
    axes = tuple(range(1, x.data.ndim))
    bshape = (c,) + (1,) * (x.data.ndim - 1)
    gm, bt = gamma.data.reshape(bshape), beta.data.reshape(bshape)
    if mode == "train":
        mu = x.data.mean(axis=axes, keepdims=True)
        var = x.data.var(axis=axes, keepdims=True)
        stats.mean = ((1 - stats.momentum) * stats.mean
                      + stats.momentum * mu.reshape(c))
        stats.var = ((1 - stats.momentum) * stats.var
                     + stats.momentum * var.reshape(c))
        inv = 1.0 / np.sqrt(var + stats.eps)
        xhat = (x.data - mu) * inv
    else:
        inv = (1.0 / np.sqrt(stats.var + stats.eps)).reshape(bshape)
        xhat = (x.data - stats.mean.reshape(bshape)) * inv
    out = Tensor(gm * xhat + bt)
    m = x.data.size // c

    def backward_train(g):
        dxhat = g * gm
        s1 = dxhat.sum(axis=axes, keepdims=True)
        s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
        dx = inv / m * (m * dxhat - s1 - xhat * s2)
        return ((x, dx),
                (gamma, (g * xhat).sum(axis=axes)),
                (beta, g.sum(axis=axes)))

    def backward_eval(g):
        return ((x, g * gm * inv),
                (gamma, (g * xhat).sum(axis=axes)),
                (beta, g.sum(axis=axes)))

    fn = backward_train if mode == "train" else backward_eval
    return _maybe_record(
        out, x.requires_grad or gamma.requires_grad or beta.requires_grad, fn)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))
    mask = x.data > 0  # subgradient 0 at the kink
    return _maybe_record(out, x.requires_grad,
                         lambda g: ((x, g * mask),))


def dropout(x: Tensor, p: float, mode: str, seed=0) -> Tensor:
    """Inverted dropout: zero with probability p, scale survivors 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout p={p} outside [0, 1)")
    if mode == "eval" or p == 0.0:
        return x
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    keep = rng.random(x.data.shape, dtype=np.float32) >= p
    scale = x.data.dtype.type(1.0 / (1.0 - p))
    factor = keep * scale
    out = Tensor(x.data * factor)
    return _maybe_record(out, x.requires_grad,
                         lambda g: ((x, g * factor),))


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over frames and joints: [C, T, V] -> [C], batched -> [N, C]."""
    was3d, xd = _feature_axes(x.data)
    c, n, t, v = xd.shape
    y = xd.mean(axis=(2, 3))  # [C, N]
    out = Tensor(y[:, 0] if was3d else np.ascontiguousarray(y.T))

    def backward_fn(g):
        gcn = g[:, None] if was3d else g.T
        dx = np.broadcast_to(gcn[:, :, None, None] / (t * v), xd.shape)
        return ((x, dx[:, 0] if was3d else dx),)

    return _maybe_record(out, x.requires_grad, backward_fn)


def softmax_cross_entropy(logits: Tensor, label) -> Tensor:
    """Mean cross-entropy from logits; [C] + int or [N,C] + int array."""
    z = logits.data
    if z.ndim == 1:
        labels = np.array([label], dtype=np.int64)
        z2 = z[None]
    elif z.ndim == 2:
        labels = np.asarray(label, dtype=np.int64)
        z2 = z
        if labels.shape != (z.shape[0],):
            raise ShapeMismatch(
                f"labels {labels.shape} for logits {z.shape}")
    else:
        raise ShapeMismatch(f"logits must be 1D or 2D, got {z.shape}")
    c = z2.shape[1]
    if c < 2:
        raise ShapeMismatch("need at least 2 classes")
    if labels.min() < 0 or labels.max() >= c:
        raise BadLabel(f"labels outside [0, {c})")
    n = z2.shape[0]
    shifted = z2 - z2.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    losses = lse - shifted[np.arange(n), labels]
    out = Tensor(np.asarray(losses.mean(), dtype=z.dtype))
    prob = np.exp(shifted - lse[:, None])

    def backward_fn(g):
        d = prob.copy()
        d[np.arange(n), labels] -= 1.0
        d *= g / n
        return ((logits, d[0] if z.ndim == 1 else d),)

    return _maybe_record(out, logits.requires_grad, backward_fn)


def scale(x: Tensor, alpha: float) -> Tensor:
    """Multiply by a python constant."""
    out = Tensor(x.data * x.data.dtype.type(alpha))
    return _maybe_record(out, x.requires_grad,
                         lambda g: ((x, g * alpha),))


def square(x: Tensor) -> Tensor:
    out = Tensor(x.data * x.data)
    return _maybe_record(out, x.requires_grad,
                         lambda g: ((x, 2.0 * g * x.data),))


def total_sum(x: Tensor) -> Tensor:
    """Sum of all elements to a scalar."""
    out = Tensor(np.asarray(x.data.sum(), dtype=x.data.dtype))
    shape = x.data.shape
    return _maybe_record(out, x.requires_grad,
                         lambda g: ((x, np.broadcast_to(g, shape)),))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along one axis; backward splits the gradient."""
    if not parts:
        raise ShapeMismatch("concat of nothing")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        moved = np.moveaxis(g, axis, 0)
        outs = []
        for p, a, b in zip(parts, offsets[:-1], offsets[1:]):
            outs.append((p, np.moveaxis(moved[a:b], 0, axis)))
        return outs

    return _maybe_record(out, any(p.requires_grad for p in parts), backward_fn)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptimState:
    """SGD with momentum and decoupled-from-nothing classic weight decay."""

    lr: float
    momentum: float = 0.9
    weight_decay: float = 1e-4
    buffers: dict[int, np.ndarray] = field(default_factory=dict)


def sgd_step(params: Sequence[Tensor], state: OptimState) -> Sequence[Tensor]:
    """In-place update: g += wd*p; buf = mom*buf + g; p -= lr*buf."""
    for i, p in enumerate(params):
        if p.grad is None or p.grad.shape != p.data.shape:
            raise ShapeMismatch(f"param {i}: grad missing or wrong shape")
        g = p.grad + state.weight_decay * p.data
        buf = state.buffers.get(i)
        buf = g if buf is None else state.momentum * buf + g
        state.buffers[i] = buf
        p.data = p.data - state.lr * buf
    return params


def zero_grad(params: Sequence[Tensor]) -> None:
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        else:
            p.grad.fill(0)


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def analytic_gradient(f: Callable[[Tensor], Tensor], x: Tensor) -> np.ndarray:
    """Gradient of the scalar f(x) at x via one taped backward pass."""
    zero_grad([x])
    x.requires_grad = True
    with Tape() as tape:
        loss = f(x)
        backward(tape, loss)
    return x.grad.copy()


def finite_diff_gradient(f: Callable[[Tensor], Tensor], x: Tensor,
                         step: float) -> np.ndarray:
    """Central-difference gradient of f at x, coordinate by coordinate."""
    base = x.data.copy()
    x.data = np.ascontiguousarray(x.data)
    flat = x.data.reshape(-1)  # view onto x.data, mutated in place below
    numeric = np.zeros(flat.size, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = float(f(x).data)
        flat[i] = orig - step
        lo = float(f(x).data)
        flat[i] = orig
        numeric[i] = (hi - lo) / (2.0 * step)
    x.data = base
    return numeric.reshape(base.shape)


def finite_diff_check(f: Callable[[Tensor], Tensor], x: Tensor,
                      step: float = 1e-4,
                      exclude: Optional[np.ndarray] = None) -> float:
    """Max relative error between backward() and central differences on x.

    Per-coordinate error is |ad - fd| / max(1, |ad|, |fd|); coordinates where
    `exclude` is True (e.g. at kinks) are skipped. `f` must be a pure
    function of x.data.
    """
    analytic = analytic_gradient(f, x).ravel()
    numeric = finite_diff_gradient(f, x, step).ravel()
    keep = np.ones(analytic.size, dtype=bool)
    if exclude is not None:
        keep = ~np.asarray(exclude, dtype=bool).ravel()
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    err = np.abs(analytic - numeric) / denom
    return float(err[keep].max()) if keep.any() else 0.0


def assert_finite(arr: np.ndarray, context: str = "") -> None:
    if not np.isfinite(arr).all():
        raise NumericalError(f"non-finite values detected {context}".strip())
