"""Dense reverse-mode differentiation over float64 numpy arrays.

Every value is a matrix, or a stack of equally-shaped matrices along leading
axes (one per sample of a per-home batch). "Row-wise" operations act on the
last axis; matrix operations act on the last two.

Each primitive computes its forward value eagerly and, when any input needs
a gradient, records the inputs plus a closure mapping the output gradient to
input gradients. ``backward`` walks that record in reverse topological order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

LOG_EPS = 1e-12


class ShapeError(ValueError):
    pass


class NumericalError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "op")

    def __init__(self, value, requires_grad: bool = False, parents=(), backward_fn=None, op: str = "const"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = parents
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return hadamard(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Parameter(Tensor):
    """A named leaf whose gradient is collected by ``backward``."""

    __slots__ = ("name", "trainable")

    def __init__(self, name: str, value, trainable: bool = True):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=trainable, op="param")
        self.name = name
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finite(out: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"non-finite output in {op}")
    return out


def _node(out: np.ndarray, op: str, parents: Sequence[Tensor], backward_fn) -> Tensor:
    _finite(out, op)
    if any(p.requires_grad for p in parents):
        return Tensor(out, requires_grad=True, parents=tuple(parents), backward_fn=backward_fn, op=op)
    return Tensor(out, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- primitives --------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim < 2 or b.value.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.value, b.value)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        return (
            _unbroadcast(np.matmul(g, _swap(b.value)), a.shape),
            _unbroadcast(np.matmul(_swap(a.value), g), b.shape),
        )

    return _node(out, "matmul", (a, b), backward)


def transpose(x) -> Tensor:
    x = as_tensor(x)
    return _node(_swap(x.value).copy(), "transpose", (x,), lambda g: (_swap(g),))


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None
    return _node(out.copy(), "reshape", (x,), lambda g: (g.reshape(x.shape),))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _node(
        a.value + b.value, "add", (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def subtract(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "subtract")
    return _node(
        a.value - b.value, "subtract", (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _node(x.value * c, "scale", (x,), lambda g: (g * c,))


def hadamard(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "hadamard")
    return _node(
        a.value * b.value, "hadamard", (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.value > 0
    return _node(np.where(mask, x.value, 0.0), "relu", (x,), lambda g: (g * mask,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.value)
    return _node(y, "tanh", (x,), lambda g: (g * (1.0 - y * y),))


def row_softmax(x) -> Tensor:
    x = as_tensor(x)
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _node(y, "row_softmax", (x,), backward)


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        y = np.exp(x.value)
    return _node(y, "exp", (x,), lambda g: (g * y,))


def log(x, eps: float = LOG_EPS) -> Tensor:
    """Natural log of ``x + eps``."""
    x = as_tensor(x)
    shifted = x.value + eps
    if np.any(shifted <= 0):
        raise NumericalError("log: argument not positive")
    return _node(np.log(shifted), "log", (x,), lambda g: (g / shifted,))


def xlogx(x) -> Tensor:
    """Entrywise ``x * log(x)`` with ``0 * log 0 = 0``; for entropies of probability rows."""
    x = as_tensor(x)
    if np.any(x.value < 0):
        raise NumericalError("xlogx: negative argument")
    pos = x.value > 0
    logs = np.log(np.where(pos, x.value, 1.0))
    out = np.where(pos, x.value * logs, 0.0)
    return _node(out, "xlogx", (x,), lambda g: (g * (np.log(x.value + LOG_EPS) + 1.0),))


def row_sum(x) -> Tensor:
    x = as_tensor(x)
    return _node(
        x.value.sum(axis=-1, keepdims=True), "row_sum", (x,),
        lambda g: (np.broadcast_to(g, x.shape).copy(),),
    )


def frobenius_norm_sq(x) -> Tensor:
    """Squared Frobenius norm of each matrix; shape ``(..., 1, 1)``."""
    x = as_tensor(x)
    out = (x.value * x.value).sum(axis=(-2, -1), keepdims=True)
    return _node(out, "frobenius_norm_sq", (x,), lambda g: (2.0 * g * x.value,))


def frobenius_norm(x) -> Tensor:
    """Frobenius norm of each matrix; gradient taken as 0 where the norm is 0."""
    x = as_tensor(x)
    norm = np.sqrt((x.value * x.value).sum(axis=(-2, -1), keepdims=True))
    safe = np.where(norm > 0, norm, 1.0)

    def backward(g):
        return (np.where(norm > 0, g * x.value / safe, 0.0),)

    return _node(norm, "frobenius_norm", (x,), backward)


def mean(x) -> Tensor:
    """Mean over every entry; shape ``(1, 1)``."""
    x = as_tensor(x)
    n = x.value.size
    return _node(
        np.array([[x.value.mean()]]), "mean", (x,),
        lambda g: (np.full(x.shape, g.item() / n),),
    )


# -- reverse pass ------------------------------------------------------------


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    Gradients add onto whatever the leaves already hold, so a second call
    without ``zero_grad`` doubles them.
    """
    if loss.value.size != 1 or loss.value.ndim != 2:
        raise ShapeError(f"backward: loss must be 1x1, got {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# -- finite-difference checking ---------------------------------------------


@dataclass
class EntryError:
    param: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    error: float


@dataclass
class GradCheckReport:
    tol: float
    per_param: dict[str, float] = field(default_factory=dict)
    worst: EntryError | None = None
    checked: int = 0

    @property
    def passed(self) -> bool:
        return self.worst is None or self.worst.error <= self.tol

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        if self.worst is None:
            return f"{status} (no entries)"
        w = self.worst
        return (
            f"{status} max_rel_err={w.error:.3e} at {w.param}{list(w.index)} "
            f"(analytic={w.analytic:.6e}, numeric={w.numeric:.6e}) over {self.checked} entries"
        )


def grad_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    h: float = 1e-5,
    tol: float = 1e-4,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare ``backward`` against central differences of ``f``.

    ``f`` recomputes the scalar loss from the current parameter values. The
    error per entry is ``|ad - fd| / max(1, |ad|, |fd|)``. ``max_entries``
    caps the number of entries checked per parameter (sampled with ``rng``).
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step h={h} outside [1e-7, 1e-3]")
    zero_grad(params)
    backward(f())
    analytic = {p.name: (np.zeros(p.shape) if p.grad is None else p.grad.copy()) for p in params}
    zero_grad(params)

    report = GradCheckReport(tol=tol)
    rng = rng or np.random.default_rng(0)
    for p in params:
        flat = p.value.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        ga = analytic[p.name].reshape(-1)
        worst_here = 0.0
        for i in indices:
            orig = flat[i]
            flat[i] = orig + h
            up = f().value.item()
            flat[i] = orig - h
            down = f().value.item()
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            err = abs(ga[i] - fd) / max(1.0, abs(ga[i]), abs(fd))
            report.checked += 1
            worst_here = max(worst_here, err)
            if report.worst is None or err > report.worst.error:
                idx = tuple(int(k) for k in np.unravel_index(i, p.shape))
                report.worst = EntryError(p.name, idx, float(ga[i]), float(fd), float(err))
        report.per_param[p.name] = worst_here
    return report
