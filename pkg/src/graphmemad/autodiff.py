"""Dense reverse-mode differentiation on top of numpy.

Every op returns a new :class:`Tensor` that remembers its parents and a closure
that pushes the upstream gradient back to them. ``Tensor.backward`` walks the
recorded graph in reverse topological order. Only float64 is used.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np
import scipy.sparse as sp

from .errors import BackwardError, NumericError, ShapeError

LN_EPS = 1e-5
CHECKPOINT_VERSION = 1


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_consumed", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad and not _parents else None
        self._parents = _parents
        self._backward: Callable[[np.ndarray], None] | None = None
        self._consumed = False
        self.op = _op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        The recorded graph is released afterwards, so calling this twice on the
        same loss raises :class:`BackwardError`. Build a fresh forward pass
        instead.
        """
        if self._consumed:
            raise BackwardError("backward() called twice on the same graph; rebuild the forward pass")
        if self.data.size != 1:
            raise BackwardError(f"backward() needs a scalar loss, got shape {self.shape}")
        self._consumed = True
        if not self.requires_grad:
            return

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.grad is not None:
                    node.grad += g
                continue
            for parent, pg in node._backward(g):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
            node._parents = ()
            node._backward = None
            node.requires_grad = False

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def _topological_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=parents if needs else (), _op=op)
    if needs:
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- primitives


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _make(a.data + b.data, (a, b), backward, "add")


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: ((a, -g),), "neg")


def sub(a, b) -> Tensor:
    return add(a, neg(_as_tensor(b)))


def multiply(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_shape("multiply", a, b)

    def backward(g):
        return (
            (a, _unbroadcast(g * b.data, a.shape) if a.requires_grad else None),
            (b, _unbroadcast(g * a.data, b.shape) if b.requires_grad else None),
        )

    return _make(a.data * b.data, (a, b), backward, "multiply")


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        return (
            (a, g @ b.data.T if a.requires_grad else None),
            (b, a.data.T @ g if b.requires_grad else None),
        )

    return _make(a.data @ b.data, (a, b), backward, "matmul")


def spmm(matrix: sp.spmatrix, b: Tensor) -> Tensor:
    """Constant sparse matrix times a dense tensor."""
    if matrix.shape[1] != b.shape[0]:
        raise ShapeError(f"spmm: incompatible shapes {matrix.shape} and {b.shape}")
    mt = matrix.T.tocsr()
    return _make(np.asarray(matrix @ b.data), (b,), lambda g: ((b, np.asarray(mt @ g)),), "spmm")


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d tensor, got shape {a.shape}")
    return _make(a.data.T, (a,), lambda g: ((a, g.T),), "transpose")


def concat(tensors: Iterable[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    ts = tuple(_as_tensor(t) for t in tensors)
    lead = {t.shape[:-1] for t in ts}
    if len(lead) != 1:
        raise ShapeError(f"concat: leading shapes differ: {[t.shape for t in ts]}")
    widths = np.cumsum([0] + [t.shape[-1] for t in ts])

    def backward(g):
        return tuple((t, g[..., widths[i]:widths[i + 1]]) for i, t in enumerate(ts))

    return _make(np.concatenate([t.data for t in ts], axis=-1), ts, backward, "concat")


def row_softmax(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return ((a, y * (g - (g * y).sum(axis=-1, keepdims=True))),)

    return _make(y, (a,), backward, "row_softmax")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split evaluation keeps exp from overflowing on either tail
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return _make(y, (a,), lambda g: ((a, g * y * (1.0 - y)),), "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: ((a, g * mask),), "relu")


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: ((a, g * y),), "exp")


def sqrt(a: Tensor, eps: float = 0.0) -> Tensor:
    """sqrt(a + eps); ``eps`` keeps the derivative finite at zero."""
    y = np.sqrt(a.data + eps)
    return _make(y, (a,), lambda g: ((a, g * 0.5 / y),), "sqrt")


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: ((a, 2.0 * a.data * g),), "square")


def sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return ((a, np.broadcast_to(g, shape).copy()),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward, "sum")


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return multiply(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def layer_norm(a: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize over the last axis (no affine part; apply gain/bias separately)."""
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    y = xc * inv

    def backward(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return ((a, inv * (g - gm - y * gym)),)

    return _make(y, (a,), backward, "layer_norm")


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Scale each row to unit L2 norm. All-zero rows stay zero (and get zero gradient)."""
    norms = np.sqrt((a.data * a.data).sum(axis=-1, keepdims=True))
    zero = norms == 0.0
    safe = np.where(zero, 1.0, norms)
    y = np.where(zero, 0.0, a.data / safe)

    def backward(g):
        proj = (g * y).sum(axis=-1, keepdims=True)
        return ((a, np.where(zero, 0.0, (g - y * proj) / safe)),)

    return _make(y, (a,), backward, "l2_normalize_rows")


def detach(a: Tensor) -> Tensor:
    return Tensor(a.data.copy())


# ---------------------------------------------------------------- parameters


class ParamRegistry:
    """Named trainable tensors in insertion order."""

    def __init__(self, rng: np.random.Generator | None = None):
        self._params: dict[str, Tensor] = {}
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def register(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def weight(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        bound = 1.0 / np.sqrt(fan_in)
        return self.register(name, self.rng.uniform(-bound, bound, size=(fan_in, fan_out)))

    def zeros(self, name: str, *shape: int) -> Tensor:
        return self.register(name, np.zeros(shape))

    def ones(self, name: str, *shape: int) -> Tensor:
        return self.register(name, np.ones(shape))

    def zero_grad(self):
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def num_parameters(self) -> int:
        return int(np.sum([t.data.size for t in self._params.values()]))

    def state(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]):
        for k, t in self._params.items():
            if state[k].shape != t.shape:
                raise ShapeError(f"checkpoint entry {k!r} has shape {state[k].shape}, expected {t.shape}")
            t.data = np.array(state[k], dtype=np.float64)


class Adam:
    def __init__(self, registry: ParamRegistry, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.registry = registry
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in registry.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in registry.items()}

    def step(self):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.registry.items():
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.data -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# ---------------------------------------------------------------- gradient checking


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: tuple[str, tuple[int, ...]] | None
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def gradient_check(f: Callable[[], Tensor], registry: ParamRegistry, h: float = 1e-5,
                   tol: float = 1e-4, n_samples: int | None = None,
                   seed: int = 0) -> GradCheckResult:
    """Compare backward() against central differences.

    ``f`` rebuilds the scalar loss from the registry's current values. With
    ``n_samples`` set, that many coordinates are drawn uniformly over all
    parameters; otherwise every coordinate is checked. The error per
    coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step size h={h} outside [1e-7, 1e-3]")
    registry.zero_grad()
    f().backward()
    analytic = {k: p.grad.copy() for k, p in registry.items()}

    coords = [(k, idx) for k, p in registry.items() for idx in np.ndindex(p.shape)]
    if n_samples is not None and n_samples < len(coords):
        pick = np.random.default_rng(seed).choice(len(coords), size=n_samples, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    worst, worst_err = None, 0.0
    for name, idx in coords:
        p = registry[name]
        orig = p.data[idx]
        p.data[idx] = orig + h
        up = f().item()
        p.data[idx] = orig - h
        down = f().item()
        p.data[idx] = orig
        numeric = (up - down) / (2.0 * h)
        a = analytic[name][idx]
        if not (np.isfinite(numeric) and np.isfinite(a)):
            raise NumericError(f"non-finite gradient at {name}{list(idx)}: analytic={a}, numeric={numeric}")
        err = abs(a - numeric) / max(1.0, abs(numeric))
        if err > worst_err or worst is None:
            worst, worst_err = (name, idx), err
    return GradCheckResult(worst_err, worst, len(coords), tol)


# ---------------------------------------------------------------- checkpoints


def save_checkpoint(path, registry: ParamRegistry, extra: dict[str, np.ndarray] | None = None,
                    meta: str = "") -> None:
    """Write parameters (and any extra arrays, e.g. memory items) to an ``.npz`` file.

    Keys are ``param/<name>`` and ``extra/<name>``; values are stored as raw
    float64 so the round trip is bit-exact.
    """
    arrays = {f"param/{k}": t.data for k, t in registry.items()}
    for k, v in (extra or {}).items():
        arrays[f"extra/{k}"] = np.asarray(v)
    arrays["__version__"] = np.array(CHECKPOINT_VERSION)
    arrays["__meta__"] = np.array(meta)
    arrays["__order__"] = np.array(list(registry), dtype=str)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray], str]:
    """Return ``(params, extras, meta)`` from a file written by :func:`save_checkpoint`."""
    with np.load(path, allow_pickle=False) as z:
        version = int(z["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        order = [str(s) for s in z["__order__"]] if z["__order__"].size else []
        params = {k: z[f"param/{k}"].copy() for k in order}
        extras = {k[len("extra/"):]: z[k].copy() for k in z.files if k.startswith("extra/")}
        meta = str(z["__meta__"])
    return params, extras, meta
