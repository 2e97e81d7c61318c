"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything in the network stack is built from the primitives in this module.
Each operation returns a new :class:`Tensor` that remembers its parents
together with a local gradient rule; :func:`backward` walks the resulting
tape once, in reverse topological order, and returns a gradient for every
reachable leaf that asked for one.  :func:`grad_check` provides the
independent central-difference oracle used throughout the test suite.

The tape is rebuilt on every forward pass and is never shared between
threads.  All payloads are 64-bit; gradient checking at step 1e-5 is not
meaningful in single precision.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray
GradRule = Callable[[Array], Array]


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class Tensor:
    """A float64 ndarray plus reverse-mode bookkeeping.

    ``parents`` holds ``(parent, rule)`` pairs where ``rule`` maps the
    gradient at this node to the gradient contribution for that parent.
    Leaf tensors (no parents) with ``requires_grad=True`` are what
    :func:`backward` reports on.
    """

    __slots__ = ("data", "requires_grad", "parents", "name")

    def __init__(self, data, requires_grad: bool = False,
                 parents: Sequence[tuple["Tensor", GradRule]] = (),
                 name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.parents = tuple(parents)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad}{tag})"

    # -- operator sugar -------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape / reduction methods --------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes) -> "Tensor":
        return transpose(self, axes)

    def swap_last(self) -> "Tensor":
        axes = list(range(self.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return transpose(self, tuple(axes))

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return total(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    """Create a leaf tensor, rejecting non-finite payloads."""
    t = Tensor(data, requires_grad=requires_grad, name=name)
    if t.data.size and not np.all(np.isfinite(t.data)):
        raise ValueError("tensor payload contains NaN or Inf")
    return t


_GRAD_ENABLED = True


class no_grad:
    """Context manager that stops ops from recording tape edges."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._saved = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._saved
        return False


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: Array, parents: Iterable[tuple[Tensor, GradRule]]) -> Tensor:
    if _GRAD_ENABLED:
        parents = tuple(parents)
        if any(p.requires_grad for p, _ in parents):
            return Tensor(data, requires_grad=True, parents=parents)
    # nothing upstream wants gradients: drop the tape edges entirely
    return Tensor(data)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Reduce a broadcast gradient back to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data + b.data
    return _make(out, [(a, lambda g: _unbroadcast(g, a.data.shape)),
                       (b, lambda g: _unbroadcast(g, b.data.shape))])


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data - b.data
    return _make(out, [(a, lambda g: _unbroadcast(g, a.data.shape)),
                       (b, lambda g: _unbroadcast(-g, b.data.shape))])


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data * b.data
    return _make(out, [(a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
                       (b, lambda g: _unbroadcast(g * a.data, b.data.shape))])


def sqrt(a) -> Tensor:
    a = _lift(a)
    if np.any(a.data < 0.0):
        raise ValueError("sqrt of negative value")
    out = np.sqrt(a.data)
    return _make(out, [(a, lambda g: g * (0.5 / out))])


def tanh(a) -> Tensor:
    a = _lift(a)
    out = np.tanh(a.data)
    return _make(out, [(a, lambda g: g * (1.0 - out * out))])


def sigmoid(a) -> Tensor:
    a = _lift(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, [(a, lambda g: g * out * (1.0 - out))])


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    if slope < 0.0:
        raise ValueError("leaky_relu slope must be nonnegative")
    a = _lift(a)
    x = a.data
    out = np.where(x > 0.0, x, x * slope)

    def grad(g: Array) -> Array:
        # for slope >= 0 the input sign is recoverable from the output sign
        return np.where(out > 0.0, g, g * slope)

    return _make(out, [(a, grad)])


def relu(a) -> Tensor:
    return leaky_relu(a, 0.0)


# ---------------------------------------------------------------------------
# linear algebra and shape
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    k, n = b.shape[-2], b.shape[-1]
    flat = b.ndim == 2 and a.ndim > 2   # collapse leading axes into one gemm
    if flat:
        out = (a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (n,))
    else:
        out = np.matmul(a.data, b.data)

    def grad_a(g: Array) -> Array:
        if flat:
            return (g.reshape(-1, n) @ b.data.T).reshape(a.data.shape)
        return _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)

    def grad_b(g: Array) -> Array:
        if flat:
            return a.data.reshape(-1, k).T @ g.reshape(-1, n)
        return _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)

    return _make(out, [(a, grad_a), (b, grad_b)])


def affine(x, w, b) -> Tensor:
    """Fused ``x @ w + b`` for a 2-d weight and 1-d bias (the hot path)."""
    x, w, b = _lift(x), _lift(w), _lift(b)
    if w.ndim != 2 or b.shape != (w.shape[-1],):
        raise ShapeError(f"affine wants (k, n) weight and (n,) bias, got {w.shape}, {b.shape}")
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"affine inner dimensions differ: {x.shape} @ {w.shape}")
    k, n = w.shape
    out = x.data.reshape(-1, k) @ w.data
    out += b.data
    out = out.reshape(x.shape[:-1] + (n,))

    def grad_x(g: Array) -> Array:
        return (g.reshape(-1, n) @ w.data.T).reshape(x.data.shape)

    def grad_w(g: Array) -> Array:
        return x.data.reshape(-1, k).T @ g.reshape(-1, n)

    def grad_b(g: Array) -> Array:
        return g.reshape(-1, n).sum(axis=0)

    return _make(out, [(x, grad_x), (w, grad_w), (b, grad_b)])


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _lift(a)
    out = a.data.reshape(shape)
    return _make(out, [(a, lambda g: g.reshape(a.data.shape))])


def transpose(a, axes: tuple[int, ...]) -> Tensor:
    a = _lift(a)
    inverse = np.argsort(axes)
    out = np.transpose(a.data, axes)
    return _make(out, [(a, lambda g: np.transpose(g, inverse))])


def concat_last(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    parts = [_lift(p) for p in parts]
    if not parts:
        raise ShapeError("concat_last of zero tensors")
    lead = parts[0].shape[:-1]
    if any(p.shape[:-1] != lead for p in parts):
        raise ShapeError("concat_last operands disagree on leading shape")
    out = np.concatenate([p.data for p in parts], axis=-1)
    edges = []
    offset = 0
    for p in parts:
        width = p.shape[-1]
        lo, hi = offset, offset + width
        edges.append((p, lambda g, lo=lo, hi=hi: g[..., lo:hi]))
        offset = hi
    return _make(out, edges)


def take_rows(a, indices) -> Tensor:
    """Select rows along the first axis (scatter-add on the way back)."""
    a = _lift(a)
    idx = np.asarray(indices, dtype=np.intp)
    out = a.data[idx]

    def grad(g: Array) -> Array:
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return full

    return _make(out, [(a, grad)])


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = _lift(a)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    out = a.data[sl]

    def grad(g: Array) -> Array:
        full = np.zeros_like(a.data)
        full[sl] = g
        return full

    return _make(out, [(a, grad)])


# ---------------------------------------------------------------------------
# reductions and normalisation
# ---------------------------------------------------------------------------

def _axis_count(shape: tuple[int, ...], axis) -> int:
    if axis is None:
        return int(np.prod(shape)) if shape else 1
    return shape[axis]


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    n = _axis_count(a.shape, axis)
    if n == 0:
        raise ShapeError("mean over an empty axis")
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def grad(g: Array) -> Array:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g / n, a.data.shape).copy()

    return _make(out, [(a, grad)])


def total(a, axis=None, keepdims: bool = False) -> Tensor:
    """Sum over an axis (or everything)."""
    a = _lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad(g: Array) -> Array:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.data.shape).copy()

    return _make(out, [(a, grad)])


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then affine."""
    a, gain, bias = _lift(a), _lift(gain), _lift(bias)
    d = a.shape[-1]
    if d == 0:
        raise ShapeError("layer_norm over empty last axis")
    mu = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = gain.data * xhat + bias.data

    def grad_a(g: Array) -> Array:
        gx = g * gain.data
        term = gx - gx.mean(axis=-1, keepdims=True) \
            - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        return term * inv

    def grad_gain(g: Array) -> Array:
        return _unbroadcast(g * xhat, gain.data.shape)

    def grad_bias(g: Array) -> Array:
        return _unbroadcast(g, bias.data.shape)

    return _make(out, [(a, grad_a), (gain, grad_gain), (bias, grad_bias)])


def softmax_rows(a) -> Tensor:
    """Row-wise softmax over the last axis, stabilised by max subtraction."""
    a = _lift(a)
    if a.ndim < 2:
        raise ShapeError(f"softmax_rows expects a matrix, got shape {a.shape}")
    if a.size == 0 or a.shape[-1] == 0:
        raise ShapeError("softmax_rows over an empty row dimension")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def grad(g: Array) -> Array:
        dot = (g * out).sum(axis=-1, keepdims=True)
        return (g - dot) * out

    return _make(out, [(a, grad)])


def scaled_dot_attention(q, k, v) -> Tensor:
    """softmax(Q Kᵀ / sqrt(d)) V with the softmax over keys.

    Leading axes broadcast, so one call serves single queries and batched
    multi-head layouts alike.  Outputs are convex combinations of the rows
    of ``v``.
    """
    q, k, v = _lift(q), _lift(k), _lift(v)
    if q.ndim < 2 or k.ndim < 2 or v.ndim < 2:
        raise ShapeError("attention operands must be at least 2-d")
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query/key width mismatch: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key/value row mismatch: {k.shape} vs {v.shape}")
    if k.shape[-2] < 1:
        raise ShapeError("attention needs at least one key")
    scale = 1.0 / np.sqrt(q.shape[-1])
    one_query = q.shape[-2] == 1
    # with a single query row, batched tiny gemms lose badly to broadcasting
    if one_query:
        scores = (q.data * k.data).sum(axis=-1)[..., None, :] * scale
    else:
        scores = np.matmul(q.data, np.swapaxes(k.data, -1, -2)) * scale
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    weights = e / e.sum(axis=-1, keepdims=True)
    if one_query:
        out = (np.swapaxes(weights, -1, -2) * v.data).sum(axis=-2)[..., None, :]
    else:
        out = np.matmul(weights, v.data)

    def _dscores(g: Array) -> Array:
        if one_query:
            dw = (g * v.data).sum(axis=-1)[..., None, :]
        else:
            dw = np.matmul(g, np.swapaxes(v.data, -1, -2))
        dot = (dw * weights).sum(axis=-1, keepdims=True)
        return (dw - dot) * weights

    def grad_q(g: Array) -> Array:
        ds = _dscores(g)
        if one_query:
            gq = (np.swapaxes(ds, -1, -2) * k.data).sum(axis=-2)[..., None, :] * scale
        else:
            gq = np.matmul(ds, k.data) * scale
        return _unbroadcast(gq, q.data.shape)

    def grad_k(g: Array) -> Array:
        ds = _dscores(g)
        if one_query:
            gk = np.swapaxes(ds, -1, -2) * (q.data * scale)
        else:
            gk = np.matmul(np.swapaxes(ds, -1, -2), q.data) * scale
        return _unbroadcast(gk, k.data.shape)

    def grad_v(g: Array) -> Array:
        if one_query:
            gv = np.swapaxes(weights, -1, -2) * g
        else:
            gv = np.matmul(np.swapaxes(weights, -1, -2), g)
        return _unbroadcast(gv, v.data.shape)

    return _make(out, [(q, grad_q), (k, grad_k), (v, grad_v)])


def attention_weights(q, k) -> Array:
    """Eval-only attention row weights (for invariant checks)."""
    q, k = _lift(q), _lift(k)
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = np.matmul(q.data, np.swapaxes(k.data, -1, -2)) * scale
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def dropout(a, rate: float, rng: np.random.Generator | None = None,
            training: bool = False) -> Tensor:
    """Inverted dropout; the eval-mode result is the input object itself."""
    a = _lift(a)
    if not training or rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("training-mode dropout needs an RNG")
    mask = (rng.random(a.shape) >= rate).astype(np.float64)
    mask *= 1.0 / (1.0 - rate)
    return _make(a.data * mask, [(a, lambda g: g * mask)])


def neighbor_mean(h, slots: Array, degree: Array) -> Tensor:
    """Mean over graph neighbours via fixed slot order.

    ``h`` is ``(..., N, d)``; ``slots`` is ``(N, S)`` of source indices with
    ``N`` as the padding index; ``degree`` is the in-degree per node.  The
    slot layout fixes the float accumulation order, which is what makes the
    aggregation bitwise equivariant under node relabelling (a dense matmul
    is not).  The edge set must be symmetric: the backward pass reuses the
    same slots for the transposed propagation.
    """
    h = _lift(h)
    n, width = slots.shape
    if h.shape[-2] != n:
        raise ShapeError(f"feature rows {h.shape[-2]} != node count {n}")
    safe_deg = np.maximum(degree, 1).astype(np.float64)
    flat_slots = slots.reshape(-1)

    def run(x: Array) -> Array:
        pad_shape = x.shape[:-2] + (1,) + x.shape[-1:]
        xp = np.concatenate([x, np.zeros(pad_shape)], axis=-2)
        gathered = xp[..., flat_slots, :]
        stacked = gathered.reshape(x.shape[:-2] + (n, width, x.shape[-1]))
        # fixed pairwise grouping over the slot axis keeps the accumulation
        # order a function of slot layout only
        return stacked.sum(axis=-2)

    out = run(h.data) / safe_deg[:, None]

    def grad(g: Array) -> Array:
        return run(g / safe_deg[:, None])

    return _make(out, [(h, grad)])


# ---------------------------------------------------------------------------
# backward pass and the finite-difference oracle
# ---------------------------------------------------------------------------

def backward(root: Tensor) -> dict[Tensor, Array]:
    """Gradients of a scalar root with respect to every requires_grad leaf.

    Each call re-derives gradients from scratch; nothing accumulates across
    calls, so repeated invocations return identical maps.
    """
    if not isinstance(root, Tensor):
        raise TypeError("backward expects a Tensor root")
    if root.data.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.shape}")

    order: list[Tensor] = []
    discovered: set[int] = set()
    stack: list[tuple[Tensor, Iterable]] = [(root, iter(root.parents))]
    discovered.add(id(root))
    while stack:
        node, it = stack[-1]
        advanced = False
        for parent, _ in it:
            if id(parent) not in discovered:
                discovered.add(id(parent))
                stack.append((parent, iter(parent.parents)))
                advanced = True
                break
        if not advanced:
            stack.pop()
            order.append(node)

    grads: dict[int, Array] = {id(root): np.ones_like(root.data)}
    leaves: dict[Tensor, Array] = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            if node.requires_grad:
                leaves[node] = g
            continue
        for parent, rule in node.parents:
            if not parent.requires_grad:
                continue
            contribution = rule(g)
            held = grads.get(id(parent))
            grads[id(parent)] = contribution if held is None else held + contribution
    return leaves


def grad_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-5,
               max_coords: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between tape gradients and central differences.

    Error metric per coordinate: ``|analytic - numeric| / max(1, |analytic|,
    |numeric|)``.  ``max_coords`` caps how many coordinates are probed
    (sampled without replacement); the default probes all of them.
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    probe = tensor(base.copy(), requires_grad=True)
    out = f(probe)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    analytic = backward(out).get(probe)
    flat_a = (np.zeros_like(base) if analytic is None else analytic).reshape(-1)

    flat = base.reshape(-1)
    coords = np.arange(flat.size)
    if max_coords is not None and flat.size > max_coords:
        picker = rng if rng is not None else np.random.default_rng(0)
        coords = picker.choice(flat.size, size=max_coords, replace=False)
    worst = 0.0
    for i in coords:
        up, down = flat.copy(), flat.copy()
        up[i] += step
        down[i] -= step
        fp = f(Tensor(up.reshape(base.shape)))
        fm = f(Tensor(down.reshape(base.shape)))
        numeric = (float(fp.data) - float(fm.data)) / (2.0 * step)
        err = abs(flat_a[i] - numeric) / max(1.0, abs(flat_a[i]), abs(numeric))
        if err > worst:
            worst = err
    return worst
