"""Small dense-tensor engine with reverse-mode automatic differentiation.

Values are float64 numpy arrays. Every operation returns a new ``Tensor`` that
remembers its parents and a closure mapping the output gradient to parent
gradients. ``backward`` orders the graph topologically (the tape) and replays
the closures in reverse.

Broadcasting follows numpy, and gradients are summed back to the input shape.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
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

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("multiply", a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("divide", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return _make(out, (a, b), backward)


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(ad**exponent, (a,), lambda g: (g * exponent * ad ** (exponent - 1),))


def maximum(a, b) -> Tensor:
    """Elementwise max. Ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("maximum", a, b)
    pick_a = a.data >= b.data

    def backward(g):
        return _unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)

    return _make(np.where(pick_a, a.data, b.data), (a, b), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / out,))


def abs(a) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,))


def atan2(y, x) -> Tensor:
    y, x = as_tensor(y), as_tensor(x)
    _broadcast_shape("atan2", y, x)
    yd, xd = y.data, x.data
    r2 = xd * xd + yd * yd

    def backward(g):
        return _unbroadcast(g * xd / r2, yd.shape), _unbroadcast(-g * yd / r2, xd.shape)

    return _make(np.arctan2(yd, xd), (y, x), backward)


def cos(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(np.cos(ad), (a,), lambda g: (-g * np.sin(ad),))


def sin(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _make(np.sin(ad), (a,), lambda g: (g * np.cos(ad),))


# ---------------------------------------------------------------------------
# reductions and linear algebra


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def max(a, axis: int, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Max reduction along ``axis``. The gradient goes to the first maximiser."""
    a = as_tensor(a)
    idx = np.argmax(a.data, axis=axis)
    idx_k = np.expand_dims(idx, axis)
    out = np.take_along_axis(a.data, idx_k, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def backward(g):
        grad = np.zeros(a.shape)
        gk = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(grad, idx_k, gk, axis=axis)
        return (grad,)

    return _make(out, (a,), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        ga = g @ np.swapaxes(bd, -1, -2) if bd.ndim > 1 else np.multiply.outer(g, bd)
        gb = np.swapaxes(ad, -1, -2) @ g if bd.ndim > 1 else ad.T @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), backward)


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: incompatible shapes {ts[0].shape} and {t.shape} on axis {axis}")
    splits = np.cumsum([t.shape[ax] for t in ts])[:-1]
    return _make(np.concatenate([t.data for t in ts], axis=ax), ts, lambda g: tuple(np.split(g, splits, axis=ax)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise ShapeError(f"stack: incompatible shapes {ts[0].shape} and {t.shape}")
    n = len(ts)
    return _make(
        np.stack([t.data for t in ts], axis=axis),
        ts,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
    )


def take(a, index) -> Tensor:
    """Basic or advanced indexing (slicing, integer arrays). Repeated indices accumulate."""
    a = as_tensor(a)
    shape = a.shape
    basic = all(isinstance(i, (int, slice)) or i is None or i is Ellipsis for i in (index if isinstance(index, tuple) else (index,)))

    def backward(g):
        grad = np.zeros(shape)
        if basic:
            grad[index] = g
        else:
            np.add.at(grad, index, g)
        return (grad,)

    return _make(a.data[index], (a,), backward)


def gather_rows(a, idx: np.ndarray) -> Tensor:
    """``a[idx]`` along axis 0 with a fast scatter-add backward."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    n = a.shape[0]

    def backward(g):
        return (segment_sum_np(g, idx, n),)

    return _make(a.data[idx], (a,), backward)


def segment_sum(a, seg: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``num_segments`` buckets given by ``seg``."""
    a = as_tensor(a)
    seg = np.asarray(seg, dtype=np.intp)
    if seg.shape[0] != a.shape[0]:
        raise ShapeError(f"segment_sum: {a.shape} rows vs {seg.shape} segment ids")
    return _make(segment_sum_np(a.data, seg, num_segments), (a,), lambda g: (g[seg],))


def segment_sum_np(x: np.ndarray, seg: np.ndarray, num_segments: int) -> np.ndarray:
    flat = x.reshape(x.shape[0], -1)
    if flat.shape[1] <= 4:
        out = np.zeros((num_segments, flat.shape[1]))
        for c in range(flat.shape[1]):
            out[:, c] = np.bincount(seg, weights=flat[:, c], minlength=num_segments)
    else:
        # one-hot product beats add.at for wide rows
        onehot = np.zeros((num_segments, x.shape[0]))
        onehot[seg, np.arange(x.shape[0])] = 1.0
        out = onehot @ flat
    return out.reshape((num_segments,) + x.shape[1:])


def cumsum(a, axis: int) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _make(np.cumsum(a.data, axis=axis), (a,), backward)


def argsort_desc(a, axis: int = -1) -> np.ndarray:
    """Indices sorting ``a`` in descending order, ties broken by original index.

    Not differentiable; returns a plain integer array.
    """
    data = a.data if isinstance(a, Tensor) else np.asarray(a)
    return np.argsort(-data, axis=axis, kind="stable")


def custom(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    """Record an operation whose backward rule is supplied by the caller."""
    return _make(np.asarray(data, dtype=DTYPE), [as_tensor(p) for p in parents], backward)


def detach(a) -> Tensor:
    return Tensor(as_tensor(a).data.copy())


# ---------------------------------------------------------------------------
# tape and backward


class Tape:
    """Topologically ordered record of the operations reaching ``root``."""

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n._backward is None]


def backward(loss: Tensor, seed: np.ndarray | None = None) -> Tape:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    ``loss`` must be scalar unless an explicit ``seed`` cotangent is given.
    Gradients add onto any existing ``.grad``.
    """
    if seed is None:
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        seed = np.ones(loss.shape)
    elif np.shape(seed) != loss.shape:
        raise ShapeError(f"backward seed shape {np.shape(seed)} vs output {loss.shape}")
    tape = Tape(loss)
    if not loss.requires_grad:
        return tape
    grads: dict[int, np.ndarray] = {id(loss): np.asarray(seed, dtype=DTYPE)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    return tape


def grad(fn: Callable[..., Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    """Evaluate ``fn()`` and return gradients for ``params`` without touching their ``.grad``."""
    saved = [p.grad for p in params]
    for p in params:
        p.grad = None
    backward(fn())
    out = [np.zeros(p.shape) if p.grad is None else p.grad for p in params]
    for p, s in zip(params, saved):
        p.grad = s
    return out


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    eps: float = 1e-12,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest relative error between backward() and central differences.

    ``f`` must be deterministic and read the current values of ``params``.
    Coordinates where both derivative estimates are below 1e-12 are skipped.
    With ``max_coords`` only a random subset of coordinates per parameter
    is probed.
    """
    analytic = grad(f, params)
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        coords: Iterable[int] = range(flat.size)
        if max_coords is not None and flat.size > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            fp = f().item()
            flat[i] = orig - step
            fm = f().item()
            flat[i] = orig
            num = (fp - fm) / (2 * step)
            an = ga.reshape(-1)[i]
            if math.fabs(an) < 1e-12 and math.fabs(num) < 1e-12:
                continue
            worst = np.maximum(worst, math.fabs(an - num) / (math.fabs(an) + math.fabs(num) + eps))
    return float(worst)


# ---------------------------------------------------------------------------
# initialisation and checkpoints


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


CHECKPOINT_MAGIC = "socialcvae-params 1"


def write_params(path, params: dict[str, Tensor], header: dict[str, str] | None = None) -> None:
    """Write parameters as text.

    Layout::

        socialcvae-params 1
        @key<TAB>value           (zero or more header lines)
        name<TAB>d0,d1<TAB>v v v (one line per tensor, values in row-major order)

    Values use ``repr`` so they round-trip exactly and bytes are stable.
    """
    lines = [CHECKPOINT_MAGIC]
    for k, v in (header or {}).items():
        lines.append(f"@{k}\t{v}")
    for name, t in params.items():
        dims = ",".join(str(d) for d in t.shape)
        vals = " ".join(repr(float(x)) for x in t.data.reshape(-1))
        lines.append(f"{name}\t{dims}\t{vals}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_params(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a parameter file (expected '{CHECKPOINT_MAGIC}' header)")
    header: dict[str, str] = {}
    params: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if line.startswith("@"):
            key, _, value = line[1:].partition("\t")
            header[key] = value
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected name, shape, values")
        name, dims, vals = parts
        shape = tuple(int(d) for d in dims.split(",")) if dims else ()
        arr = np.array([float(v) for v in vals.split()], dtype=DTYPE)
        if arr.size != int(np.prod(shape)):
            raise ValueError(f"{path}:{lineno}: {name} has {arr.size} values for shape {shape}")
        params[name] = arr.reshape(shape)
    return params, header
