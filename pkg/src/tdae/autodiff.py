"""Reverse-mode automatic differentiation over dense numpy arrays.

The model is a tape: while a tape is active (see `tape()`), every primitive
that touches a differentiable input appends one node to it. Topological order
is append order by construction, so the backward pass is a single reverse
sweep that visits each node exactly once. A graph is consumed by `backward`;
reusing it is an error. With no tape active the same primitives run as plain
numpy, which is the inference path.

Only scalar broadcasting is supported for binary ops; anything fancier must
be materialized by the caller. This keeps gradient rules trivial to audit.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

__all__ = [
    "Tensor", "Graph", "tape", "no_record", "backward", "matmul", "conv2d",
    "add", "sub", "mul", "relu", "sigmoid", "tanh", "square", "log", "exp",
    "clamp", "reduce_sum", "reduce_mean", "softmax_logprob", "policy_entropy",
    "add_bias", "add_chan_bias", "reshape", "slice_rows", "concat_rows",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense array plus an optional handle into the active graph.

    `requires_grad` marks leaves (parameters). Interior results carry a
    `node` instead. Constants have neither and are invisible to backward.
    """

    __slots__ = ("data", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.type not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Constant view of this tensor's values; shares the buffer."""
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # Small arithmetic sugar; each delegates to the recorded primitive.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)


class _Node:
    __slots__ = ("out", "inputs", "back")

    def __init__(self, out, inputs, back):
        self.out = out
        self.inputs = inputs
        self.back = back


class Graph:
    """Append-only tape of recorded primitives; single use."""

    __slots__ = ("nodes", "consumed")

    def __init__(self):
        self.nodes = []
        self.consumed = False

    def __len__(self):
        return len(self.nodes)


_graph: Graph | None = None


@contextmanager
def tape():
    """Activate a fresh graph for the duration of the block.

    Nesting is not supported: there is exactly one learner context.
    """
    global _graph
    if _graph is not None:
        raise RuntimeError("a tape is already active; nested recording is not supported")
    g = Graph()
    _graph = g
    try:
        yield g
    finally:
        _graph = None


@contextmanager
def no_record():
    """Suspend recording inside an active tape (for bootstrap targets)."""
    global _graph
    prev = _graph
    _graph = None
    try:
        yield
    finally:
        _graph = prev


def _tracked(t) -> bool:
    return isinstance(t, Tensor) and (t.requires_grad or t.node is not None)


def _record(out: Tensor, inputs, back) -> Tensor:
    g = _graph
    if g is not None and any(_tracked(t) for t in inputs):
        if g.consumed:
            raise RuntimeError("graph already consumed by backward; open a new tape")
        node = _Node(out, tuple(t for t in inputs if isinstance(t, Tensor)), back)
        out.node = node
        g.nodes.append(node)
    return out


def backward(loss: Tensor, params=None):
    """Reverse sweep from a scalar loss; returns a map Tensor -> gradient.

    Must run while the tape that recorded `loss` is still active. The result
    covers every requires_grad leaf reached from `loss`. If `params` is
    given, the map is restricted to exactly those tensors, with zero
    gradients filled in for parameters the loss does not touch. The graph is
    consumed: a second backward without a new forward raises.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        raise RuntimeError("loss is detached from any graph (no tape active during the forward?)")
    g = _graph
    if g is None:
        raise RuntimeError("no active tape; backward must run inside the tape() block")
    if g.consumed:
        raise RuntimeError("graph already consumed by a previous backward")
    if loss.node is not g.nodes[-1] and loss.node not in g.nodes:
        raise RuntimeError("loss does not belong to the active graph")

    acc: dict[Tensor, np.ndarray] = {loss: np.ones(loss.shape, dtype=loss.dtype)}
    for node in reversed(g.nodes):
        gout = acc.pop(node.out, None)
        if gout is None:
            continue
        for t, gin in zip(node.inputs, node.back(gout)):
            if gin is None or not _tracked(t):
                continue
            prev = acc.get(t)
            if prev is None:
                acc[t] = gin
            else:
                prev += gin

    g.consumed = True
    g.nodes.clear()

    leaf_grads = {t: v for t, v in acc.items() if t.requires_grad and t.node is None}
    if params is None:
        return leaf_grads
    out = {}
    for p in params:
        got = leaf_grads.get(p)
        out[p] = got if got is not None else np.zeros(p.shape, dtype=p.dtype)
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _scalar(x, dtype):
    # Python-float constants stay weak so float32 tensors do not promote.
    return float(x)


def _check_binary(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape} (scalar broadcast only)")
    if a.dtype != b.dtype:
        raise ValueError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}")


# ---------------------------------------------------------------------------
# binary arithmetic


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a  # scalar + tensor
    if isinstance(b, Tensor):
        _check_binary(a, b, "add")
        out = Tensor(a.data + b.data)
        return _record(out, (a, b), lambda g: (g, g))
    s = _scalar(b, a.dtype)
    out = Tensor(a.data + s)
    return _record(out, (a,), lambda g: (g,))


def sub(a, b) -> Tensor:
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        _check_binary(a, b, "sub")
        out = Tensor(a.data - b.data)
        return _record(out, (a, b), lambda g: (g, -g))
    if isinstance(a, Tensor):
        out = Tensor(a.data - _scalar(b, a.dtype))
        return _record(out, (a,), lambda g: (g,))
    out = Tensor(_scalar(a, b.dtype) - b.data)
    return _record(out, (b,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if isinstance(b, Tensor):
        _check_binary(a, b, "mul")
        out = Tensor(a.data * b.data)
        bd, ad = b.data, a.data
        return _record(out, (a, b), lambda g: (g * bd, g * ad))
    s = _scalar(b, a.dtype)
    out = Tensor(a.data * s)
    return _record(out, (a,), lambda g: (g * s,))


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.maximum(x.data, 0))
    xd = x.data
    return _record(out, (x,), lambda g: (g * (xd > 0),))


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    # Two-branch form: never exponentiates a large positive argument.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    y = _sigmoid_stable(x.data)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * (y * (1.0 - y)),))


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.data)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * (1.0 - y * y),))


def square(x) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data * x.data)
    xd = x.data
    return _record(out, (x,), lambda g: (g * (2.0 * xd),))


def log(x) -> Tensor:
    x = _as_tensor(x)
    if np.any(x.data <= 0):
        raise ValueError("log: non-positive input (clamping exists only inside softmax_logprob)")
    out = Tensor(np.log(x.data))
    xd = x.data
    return _record(out, (x,), lambda g: (g / xd,))


def exp(x) -> Tensor:
    x = _as_tensor(x)
    y = np.exp(x.data)
    out = Tensor(y)
    return _record(out, (x,), lambda g: (g * y,))


def clamp(x, lo: float, hi: float) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.clip(x.data, lo, hi))
    xd = x.data
    return _record(out, (x,), lambda g: (g * ((xd >= lo) & (xd <= hi)),))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul: expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions disagree, {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise ValueError(f"matmul: dtype mismatch {a.dtype} vs {b.dtype}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data
    return _record(out, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def add_bias(x, b) -> Tensor:
    """x[B,F] + b[F], broadcast over rows."""
    x, b = _as_tensor(x), _as_tensor(b)
    if x.ndim != 2 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ValueError(f"add_bias: incompatible shapes {x.shape} and {b.shape}")
    out = Tensor(x.data + b.data)
    return _record(out, (x, b), lambda g: (g, g.sum(axis=0)))


def add_chan_bias(x, b) -> Tensor:
    """x[B,C,H,W] + b[C], broadcast over batch and space."""
    x, b = _as_tensor(x), _as_tensor(b)
    if x.ndim != 4 or b.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ValueError(f"add_chan_bias: incompatible shapes {x.shape} and {b.shape}")
    out = Tensor(x.data + b.data[None, :, None, None])
    return _record(out, (x, b), lambda g: (g, g.sum(axis=(0, 2, 3))))


def conv2d(x, k, stride: int = 1) -> Tensor:
    """Valid-padding cross-correlation.

    x is [C_in,H,W] or [B,C_in,H,W]; k is [C_out,C_in,kh,kw]. No kernel flip.
    """
    x, k = _as_tensor(x), _as_tensor(k)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or k.ndim != 4:
        raise ValueError(f"conv2d: expects [B,C,H,W] and [Cout,Cin,kh,kw], got {x.shape} and {k.shape}")
    B, cin, H, W = xd.shape
    cout, cin_k, kh, kw = k.shape
    if cin != cin_k:
        raise ValueError(f"conv2d: channel mismatch, input {cin} vs kernel {cin_k}")
    if kh > H or kw > W:
        raise ValueError(f"conv2d: kernel {kh}x{kw} larger than input {H}x{W}")
    if stride < 1:
        raise ValueError("conv2d: stride must be >= 1")
    if x.dtype != k.dtype:
        raise ValueError(f"conv2d: dtype mismatch {x.dtype} vs {k.dtype}")
    ho = (H - kh) // stride + 1
    wo = (W - kw) // stride + 1

    win = np.lib.stride_tricks.sliding_window_view(xd, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]                       # [B,Cin,ho,wo,kh,kw]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * ho * wo, cin * kh * kw)
    kmat = k.data.reshape(cout, cin * kh * kw).T
    y = (cols @ kmat).reshape(B, ho, wo, cout).transpose(0, 3, 1, 2)
    out = Tensor(np.ascontiguousarray(y[0] if squeeze else y))

    kd = k.data

    def back(g):
        gm = (g[None] if squeeze else g).transpose(0, 2, 3, 1).reshape(B * ho * wo, cout)
        dk = (cols.T @ gm).T.reshape(cout, cin, kh, kw)
        gcols = (gm @ kmat.T).reshape(B, ho, wo, cin, kh, kw).transpose(0, 3, 1, 2, 4, 5)
        dx = np.zeros_like(xd)
        # Overlapping windows: scatter-add one kernel offset at a time.
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, :, :, i, j]
        return (dx[0] if squeeze else dx, dk)

    return _record(out, (x, k), back)


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    shape = tuple(shape)
    out = Tensor(x.data.reshape(shape))
    in_shape = x.data.shape
    return _record(out, (x,), lambda g: (g.reshape(in_shape),))


def slice_rows(x, start: int, stop: int) -> Tensor:
    """Contiguous row slice of a 2-d tensor."""
    x = _as_tensor(x)
    if x.ndim != 2:
        raise ValueError(f"slice_rows: expects 2-d input, got {x.shape}")
    if not (0 <= start <= stop <= x.shape[0]):
        raise ValueError(f"slice_rows: range [{start}:{stop}] out of bounds for {x.shape[0]} rows")
    out = Tensor(x.data[start:stop])
    in_shape, dt = x.data.shape, x.dtype

    def back(g):
        dx = np.zeros(in_shape, dtype=dt)
        dx[start:stop] = g
        return (dx,)

    return _record(out, (x,), back)


def concat_rows(parts) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat_rows: empty input")
    if any(p.ndim != 2 for p in parts):
        raise ValueError("concat_rows: expects 2-d parts")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    sizes = [p.shape[0] for p in parts]

    def back(g):
        grads, off = [], 0
        for s in sizes:
            grads.append(g[off:off + s])
            off += s
        return tuple(grads)

    return _record(out, tuple(parts), back)


# ---------------------------------------------------------------------------
# reductions


def reduce_sum(x, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    if axis is not None and not (-x.ndim <= axis < x.ndim):
        raise ValueError(f"reduce_sum: axis {axis} out of range for rank {x.ndim}")
    out = Tensor(x.data.sum(axis=axis))
    in_shape, dt = x.data.shape, x.dtype

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, in_shape).astype(dt, copy=True),)
        return (np.broadcast_to(np.expand_dims(g, axis), in_shape).astype(dt, copy=True),)

    return _record(out, (x,), back)


def reduce_mean(x, axis: int | None = None) -> Tensor:
    x = _as_tensor(x)
    if axis is not None and not (-x.ndim <= axis < x.ndim):
        raise ValueError(f"reduce_mean: axis {axis} out of range for rank {x.ndim}")
    count = x.data.size if axis is None else x.data.shape[axis]
    out = Tensor(x.data.mean(axis=axis))
    in_shape, dt = x.data.shape, x.dtype

    def back(g):
        scale = 1.0 / count
        if axis is None:
            return (np.broadcast_to(g * scale, in_shape).astype(dt, copy=True),)
        return (np.broadcast_to(np.expand_dims(g * scale, axis), in_shape).astype(dt, copy=True),)

    return _record(out, (x,), back)


# ---------------------------------------------------------------------------
# policy-head primitives


def _softmax_parts(logits: np.ndarray):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = np.maximum(e.sum(axis=-1, keepdims=True), 1e-12)  # the one sanctioned clamp
    return z - np.log(s), e / s


def softmax_logprob(logits, action) -> Tensor:
    """log softmax(logits)[action], numerically stable.

    1-d logits with an int action give a scalar; [B,|A|] logits with an int
    array of length B give a [B] tensor of per-row log-probabilities.
    """
    logits = _as_tensor(logits)
    if logits.ndim == 1:
        if logits.shape[0] < 2:
            raise ValueError("softmax_logprob: need at least 2 actions")
        a = int(action)
        if not 0 <= a < logits.shape[0]:
            raise IndexError(f"softmax_logprob: action {a} out of range for {logits.shape[0]} actions")
        lp, p = _softmax_parts(logits.data)
        out = Tensor(lp[a].copy())

        def back1(g):
            d = -p * g
            d[a] += g
            return (d,)

        return _record(out, (logits,), back1)

    if logits.ndim != 2:
        raise ValueError(f"softmax_logprob: expects 1-d or 2-d logits, got {logits.shape}")
    if logits.shape[1] < 2:
        raise ValueError("softmax_logprob: need at least 2 actions")
    acts = np.asarray(action)
    if acts.shape != (logits.shape[0],):
        raise ValueError(f"softmax_logprob: actions shape {acts.shape} does not match batch {logits.shape[0]}")
    if acts.min() < 0 or acts.max() >= logits.shape[1]:
        raise IndexError("softmax_logprob: action index out of range")
    lp, p = _softmax_parts(logits.data)
    rows = np.arange(logits.shape[0])
    out = Tensor(lp[rows, acts].copy())

    def back(g):
        d = -p * g[:, None]
        d[rows, acts] += g
        return (d,)

    return _record(out, (logits,), back)


def policy_entropy(logits) -> Tensor:
    """Shannon entropy of softmax(logits); [B,|A|] -> [B], 1-d -> scalar.

    Recorded as a primitive with the analytic jacobian
    dH/dl_j = -p_j (log p_j + H); cheaper than composing it on the tape.
    """
    logits = _as_tensor(logits)
    squeeze = logits.ndim == 1
    ld = logits.data[None] if squeeze else logits.data
    if ld.ndim != 2:
        raise ValueError(f"policy_entropy: expects 1-d or 2-d logits, got {logits.shape}")
    lp, p = _softmax_parts(ld)
    h = -(p * lp).sum(axis=-1)
    out = Tensor(h[0].copy() if squeeze else h)

    def back(g):
        gm = np.asarray(g).reshape(-1, 1)
        d = -p * (lp + h[:, None]) * gm
        return (d[0] if squeeze else d,)

    return _record(out, (logits,), back)


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Plain-numpy softmax for action sampling; not recorded."""
    _, p = _softmax_parts(np.asarray(logits))
    return p
