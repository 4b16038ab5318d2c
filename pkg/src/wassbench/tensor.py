"""Small reverse-mode autodiff engine over float64 numpy arrays.

Backward rules are themselves written with :class:`Tensor` operations, so a
gradient computed with ``create_graph=True`` is again differentiable.  That is
all the gradient penalty needs (derivative of a gradient norm with respect to
the network weights); no general Hessian machinery is provided.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "NonFiniteError",
    "ShapeError",
    "ZeroNormError",
    "as_tensor",
    "no_grad",
    "grad",
    "eval_and_grad",
    "grad_of_gradnorm",
    "finite_diff_check",
    "exp",
    "log",
    "sqrt",
    "relu",
    "norm",
    "logsumexp",
    "pairwise_distance",
]


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class ShapeError(ValueError):
    pass


class ZeroNormError(ArithmeticError):
    """Gradient of a Euclidean norm requested at the origin."""


_mode = threading.local()


def _grad_enabled() -> bool:
    return getattr(_mode, "enabled", True)


@contextmanager
def no_grad():
    prev = _grad_enabled()
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = prev


@contextmanager
def _set_grad_enabled(flag: bool):
    prev = _grad_enabled()
    _mode.enabled = flag
    try:
        yield
    finally:
        _mode.enabled = prev


def _check(data: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by '{op}'")
    return data


class Tensor:
    """A node in the computation graph.

    Leaves are created directly; interior nodes remember their parents and a
    closure mapping the output cotangent to one cotangent per parent.
    """

    __slots__ = ("data", "requires_grad", "_parents", "_backward", "_op", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = _check(arr, "leaf")
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Tensor], Sequence[Tensor | None]] | None = None
        self._op = "leaf"
        self.name = name

    @classmethod
    def _make(cls, data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> "Tensor":
        out = cls.__new__(cls)
        out.data = _check(np.asarray(data, dtype=np.float64), op)
        out._op = op
        out.name = None
        if _grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
            "add",
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other) -> "Tensor":
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)),
            "sub",
        )

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) - self

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(
            a.data * b.data,
            (a, b),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
            "mul",
        )

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other
        if np.any(b.data == 0):
            raise NonFiniteError("division by zero in 'div'")
        return Tensor._make(
            a.data / b.data,
            (a, b),
            lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)),
            "div",
        )

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) / self

    def __pow__(self, k: float) -> "Tensor":
        if isinstance(k, Tensor):
            raise TypeError("only constant exponents are supported")
        a = self
        if k == 2:
            return a.square()
        return Tensor._make(a.data**k, (a,), lambda g: (g * k * a ** (k - 1),), "pow")

    def square(self) -> "Tensor":
        a = self
        return Tensor._make(a.data * a.data, (a,), lambda g: (2.0 * g * a,), "square")

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
        return Tensor._make(a.data @ b.data, (a, b), lambda g: (g @ b.T, a.T @ g), "matmul")

    # -- shape ops ----------------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),), "reshape")

    def transpose(self) -> "Tensor":
        if self.ndim != 2:
            raise ShapeError("transpose expects a matrix")
        return Tensor._make(self.data.T, (self,), lambda g: (g.transpose(),), "transpose")

    # -- reductions ---------------------------------------------------------
    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = g.reshape(_keepdims_shape(shape, axis))
            return (g * Tensor(np.ones(shape)),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), back, "sum")

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return _extremum(self, axis, keepdims, np.argmax, "max")

    def min(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return _extremum(self, axis, keepdims, np.argmin, "min")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _keepdims_shape(shape: tuple[int, ...], axis: int) -> tuple[int, ...]:
    axis = axis % len(shape)
    return tuple(1 if i == axis else s for i, s in enumerate(shape))


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    for _ in range(extra):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _extremum(a: Tensor, axis, keepdims, argfn, op) -> Tensor:
    # the selected index is held fixed; ties go to the lowest index
    data = a.data
    if axis is None:
        idx = argfn(data)
        mask = np.zeros(data.size)
        mask[idx] = 1.0
        mask = mask.reshape(data.shape)
        out = data.reshape(-1)[idx]
    else:
        idx = argfn(data, axis=axis)
        mask = np.zeros_like(data)
        np.put_along_axis(mask, np.expand_dims(idx, axis), 1.0, axis=axis)
        out = np.take_along_axis(data, np.expand_dims(idx, axis), axis=axis)
        if not keepdims:
            out = np.squeeze(out, axis=axis)
    shape = a.shape
    m = Tensor(mask)

    def back(g):
        if axis is None:
            return (g * m,)
        if not keepdims:
            g = g.reshape(_keepdims_shape(shape, axis))
        return (g * m,)

    return Tensor._make(out, (a,), back, op)


# -- elementwise functions ---------------------------------------------------
def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out_box: list[Tensor] = []
    out = Tensor._make(np.exp(a.data), (a,), lambda g: (g * out_box[0],), "exp")
    out_box.append(out)
    return out


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise NonFiniteError("log of non-positive value")
    return Tensor._make(np.log(a.data), (a,), lambda g: (g / a,), "log")


def sqrt(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out_box: list[Tensor] = []

    def back(g):
        if np.any(out_box[0].data == 0):
            raise ZeroNormError("sqrt is not differentiable at 0")
        return (g * 0.5 / out_box[0],)

    out = Tensor._make(np.sqrt(a.data), (a,), back, "sqrt")
    out_box.append(out)
    return out


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    mask = Tensor((a.data > 0).astype(np.float64))
    return Tensor._make(a.data * mask.data, (a,), lambda g: (g * mask,), "relu")


def norm(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Euclidean norm along ``axis``; its gradient at the origin is an error."""
    a = as_tensor(a)
    out_box: list[Tensor] = []
    shape = a.shape

    def back(g):
        n = out_box[0]
        if np.any(n.data == 0):
            raise ZeroNormError("gradient of the Euclidean norm at the zero vector")
        if axis is not None and not keepdims:
            g = g.reshape(_keepdims_shape(shape, axis))
            n = n.reshape(_keepdims_shape(shape, axis))
        return (g * a / n,)

    out = Tensor._make(
        np.sqrt(np.sum(a.data * a.data, axis=axis, keepdims=keepdims)), (a,), back, "norm"
    )
    out_box.append(out)
    return out


def logsumexp(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shift = np.max(a.data, axis=axis, keepdims=True)
    s = Tensor(shift)
    out = log(exp(a - s).sum(axis=axis, keepdims=True)) + s
    if axis is None:
        return out.reshape(())
    if not keepdims:
        out = out.reshape(tuple(d for i, d in enumerate(out.shape) if i != axis % a.ndim))
    return out


def pairwise_distance(x: Tensor, y: Tensor) -> Tensor:
    """Matrix of Euclidean distances ``D[i, j] = |x_i - y_j|``."""
    x, y = as_tensor(x), as_tensor(y)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise ShapeError(f"pairwise_distance shape mismatch: {x.shape} vs {y.shape}")
    n, d = x.shape
    m = y.shape[0]
    diff = x.reshape(n, 1, d) - y.reshape(1, m, d)
    return norm(diff, axis=2)


# -- differentiation ---------------------------------------------------------
def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def grad(
    output: Tensor,
    inputs: Sequence[Tensor],
    create_graph: bool = False,
    seed: Tensor | None = None,
) -> list[Tensor]:
    """Gradients of scalar ``output`` with respect to each tensor in ``inputs``.

    Cotangents live in a dictionary local to this call, so concurrent calls on
    the same graph never share accumulation buffers.  Inputs the output does
    not depend on receive zeros.
    """
    if seed is None:
        if output.data.size != 1:
            raise ShapeError(f"grad needs a scalar output, got shape {output.shape}")
        seed = Tensor(np.ones(output.shape))
    cot: dict[int, Tensor] = {id(output): seed}
    with _set_grad_enabled(create_graph):
        for node in reversed(_toposort(output)):
            g = cot.pop(id(node), None)
            if node._backward is None:
                if g is not None:
                    cot[id(node)] = g  # keep for leaves
                continue
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                cot[key] = cot[key] + pg if key in cot else pg
    out = []
    for t in inputs:
        g = cot.get(id(t))
        out.append(g if g is not None else Tensor(np.zeros(t.shape)))
    return out


def _leaves(inputs: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in inputs.items()}


def eval_and_grad(
    fn: Callable[[dict[str, Tensor]], Tensor],
    inputs: Mapping[str, np.ndarray],
    wanted: Iterable[str],
) -> tuple[float, dict[str, np.ndarray]]:
    """Evaluate ``fn`` on named arrays and differentiate with respect to ``wanted``."""
    wanted = list(wanted)
    missing = [w for w in wanted if w not in inputs]
    if missing:
        raise KeyError(f"unbound leaves: {missing}")
    leaves = _leaves(inputs)
    out = fn(leaves)
    if out.data.size != 1:
        raise ShapeError(f"objective must be scalar, got shape {out.shape}")
    grads = grad(out, [leaves[w] for w in wanted])
    for w, g in zip(wanted, grads):
        if g.shape != leaves[w].shape:
            raise ShapeError(f"gradient shape {g.shape} does not match leaf {w!r} {leaves[w].shape}")
    return float(out.data), {w: g.data for w, g in zip(wanted, grads)}


def grad_of_gradnorm(
    fn: Callable[[dict[str, Tensor], Tensor], Tensor],
    point: np.ndarray,
    params: Mapping[str, np.ndarray],
) -> tuple[float, dict[str, np.ndarray]]:
    """Penalty ``(1 - |grad_x fn(x)|)**2`` at ``point`` and its parameter gradient.

    ``fn(params, x)`` must return a scalar.  The inner gradient is built as a
    graph and differentiated again (graph-of-graph).
    """
    leaves = _leaves(params)
    x = Tensor(point, requires_grad=True, name="x")
    (gx,) = grad(fn(leaves, x), [x], create_graph=True)
    pen = (1.0 - norm(gx)).square()
    names = list(params)
    grads = grad(pen, [leaves[n] for n in names])
    return float(pen.data), {n: g.data for n, g in zip(names, grads)}


def finite_diff_check(
    fn: Callable[[dict[str, Tensor]], Tensor],
    inputs: Mapping[str, np.ndarray],
    leaf: str,
    step: float = 1e-5,
) -> float:
    """Worst relative deviation between reverse-mode and central-difference gradients."""
    if step <= 0:
        raise ValueError("step must be positive")
    _, grads = eval_and_grad(fn, inputs, [leaf])
    analytic = grads[leaf]
    base = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    flat = base[leaf].reshape(-1)
    numeric = np.empty(flat.size)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = float(fn({k: Tensor(v) for k, v in base.items()}).data)
            flat[i] = orig - step
            fm = float(fn({k: Tensor(v) for k, v in base.items()}).data)
            flat[i] = orig
            numeric[i] = (fp - fm) / (2 * step)
    a = analytic.reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0
