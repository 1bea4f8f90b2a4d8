"""Define-by-run reverse-mode autodiff over float64 numpy arrays.

A :class:`Graph` records every operation applied through it; :func:`backward`
walks the record in reverse and accumulates gradients into leaf tensors. The
op set covers what the policy LSTM, the projection heads and the small
convolutional encoder need. Optimizers (Adam for the policy, SGD with
momentum for the encoder and probe) update parameters in place.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import AugPolicyError, ShapeError, _ensure

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[float]]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_origin")

    def __init__(self, data: ArrayLike, *, requires_grad: bool = False, name: Optional[str] = None) -> None:
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._origin: Optional[int] = None

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool, origin: Optional[int]) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(array, dtype=np.float64)
        out.grad = None
        out.requires_grad = requires_grad
        out.name = None
        out._origin = origin
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        _ensure(self.size == 1, f"item() needs a single element, tensor has shape {list(self.shape)}", error=ShapeError)
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}{label}, requires_grad={self.requires_grad})"


def parameter(data: ArrayLike, name: Optional[str] = None) -> Tensor:
    """Create a trainable leaf tensor."""
    return Tensor(data, requires_grad=True, name=name)


def as_tensor(value: ArrayLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


@dataclass
class Node:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


# ---------------------------------------------------------------------------
# Op registry: each rule maps input arrays to (output, backward)
# ---------------------------------------------------------------------------

_OPS: Dict[str, Callable[..., Tuple[np.ndarray, BackwardFn]]] = {}


def _op(name: str):
    def decorator(func):
        _OPS[name] = func
        return func
    return decorator


def _shape_error(op: str, *shapes: Tuple[int, ...], rule: str) -> ShapeError:
    return ShapeError(
        f"{op}: incompatible shapes " + " and ".join(str(list(s)) for s in shapes),
        hint=rule,
        context={"op": op, "shapes": [list(s) for s in shapes]},
    )


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: np.ndarray, b: np.ndarray) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_error(op, a.shape, b.shape, rule="operands must broadcast elementwise") from None


def _normalize_axes(axis: Union[None, int, Sequence[int]], ndim: int) -> Optional[Tuple[int, ...]]:
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(a % ndim for a in axes)


@_op("matmul")
def _matmul(a: np.ndarray, b: np.ndarray):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a.shape, b.shape, rule="expects [m,k] @ [k,n]")
    out = a @ b

    def backward(g):
        return g @ b.T, a.T @ g

    return out, backward


@_op("add")
def _add(a, b):
    _broadcast_shape("add", a, b)
    return a + b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


@_op("sub")
def _sub(a, b):
    _broadcast_shape("sub", a, b)
    return a - b, lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


@_op("mul")
def _mul(a, b):
    _broadcast_shape("mul", a, b)
    return a * b, lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


@_op("div")
def _div(a, b):
    _broadcast_shape("div", a, b)

    def backward(g):
        return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)

    return a / b, backward


@_op("neg")
def _neg(x):
    return -x, lambda g: (-g,)


@_op("exp")
def _exp(x):
    out = np.exp(x)
    return out, lambda g: (g * out,)


@_op("log")
def _log(x):
    return np.log(x), lambda g: (g / x,)


@_op("sqrt")
def _sqrt(x):
    out = np.sqrt(x)
    return out, lambda g: (g / (2.0 * out),)


@_op("tanh")
def _tanh(x):
    out = np.tanh(x)
    return out, lambda g: (g * (1.0 - out * out),)


@_op("sigmoid")
def _sigmoid(x):
    out = 0.5 * (1.0 + np.tanh(0.5 * x))
    return out, lambda g: (g * out * (1.0 - out),)


@_op("relu")
def _relu(x):
    mask = x > 0
    return np.where(mask, x, 0.0), lambda g: (g * mask,)


@_op("softmax")
def _softmax(x, axis: int = -1):
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return out, backward


@_op("log_softmax")
def _log_softmax(x, axis: int = -1):
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return out, backward


@_op("sum")
def _sum(x, axis=None, keepdims: bool = False):
    axes = _normalize_axes(axis, x.ndim)
    out = x.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return np.asarray(out), backward


@_op("mean")
def _mean(x, axis=None, keepdims: bool = False):
    axes = _normalize_axes(axis, x.ndim)
    count = x.size if axes is None else int(np.prod([x.shape[a] for a in axes]))
    out, sum_backward = _sum(x, axis=axes, keepdims=keepdims)
    return out / count, lambda g: (sum_backward(g)[0] / count,)


@_op("concat")
def _concat(*xs, axis: int = 0):
    try:
        out = np.concatenate(xs, axis=axis)
    except ValueError:
        raise _shape_error("concat", *(x.shape for x in xs), rule=f"all dims except axis {axis} must match") from None
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return out, lambda g: tuple(np.split(g, sizes, axis=axis))


@_op("reshape")
def _reshape(x, shape: Sequence[int] = ()):
    try:
        out = x.reshape(tuple(shape))
    except ValueError:
        raise _shape_error("reshape", x.shape, tuple(shape), rule="element count must be preserved") from None
    return out, lambda g: (g.reshape(x.shape),)


@_op("transpose")
def _transpose(x, axes: Optional[Sequence[int]] = None):
    order = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    if sorted(order) != list(range(x.ndim)):
        raise _shape_error("transpose", x.shape, order, rule="axes must be a permutation of the input dims")
    inverse = tuple(np.argsort(order))
    return x.transpose(order), lambda g: (g.transpose(inverse),)


@_op("slice")
def _slice(x, index=()):
    out = x[index]

    def backward(g):
        gx = np.zeros_like(x)
        np.add.at(gx, index, g)
        return (gx,)

    return np.array(out), backward


@_op("gather")
def _gather(x, indices=None, axis: int = -1):
    """Pick one entry per row along ``axis`` (e.g. log-probabilities of chosen actions)."""
    idx = np.asarray(indices, dtype=np.int64)
    if x.ndim != 2 or idx.shape != (x.shape[0],):
        raise _shape_error("gather", x.shape, idx.shape, rule="expects x [B,K] and indices [B]")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
        raise _shape_error("gather", x.shape, idx.shape, rule=f"indices must lie in [0, {x.shape[1]})")
    rows = np.arange(x.shape[0])
    out = x[rows, idx]

    def backward(g):
        gx = np.zeros_like(x)
        gx[rows, idx] = g
        return (gx,)

    return out, backward


@_op("minimum")
def _minimum(a, b):
    _broadcast_shape("minimum", a, b)
    take_a = a <= b

    def backward(g):
        return _unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)

    return np.minimum(a, b), backward


@_op("clip")
def _clip(x, low: float = -np.inf, high: float = np.inf):
    inside = (x >= low) & (x <= high)
    return np.clip(x, low, high), lambda g: (g * inside,)


@_op("im2col")
def _im2col(x, kernel: int = 3, padding: int = 0):
    if x.ndim != 4:
        raise _shape_error("im2col", x.shape, rule="expects [N,C,H,W]")
    n, c, h, w = x.shape
    oh, ow = h + 2 * padding - kernel + 1, w + 2 * padding - kernel + 1
    if oh < 1 or ow < 1:
        raise _shape_error("im2col", x.shape, (kernel, kernel), rule="kernel larger than padded input")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kernel * kernel)

    def backward(g):
        d = g.reshape(n, oh, ow, c, kernel, kernel).transpose(0, 3, 1, 2, 4, 5)
        dxp = np.zeros_like(xp)
        for i in range(kernel):
            for j in range(kernel):
                dxp[:, :, i:i + oh, j:j + ow] += d[..., i, j]
        return (dxp[:, :, padding:padding + h, padding:padding + w],)

    return np.ascontiguousarray(cols), backward


@_op("maxpool2d")
def _maxpool2d(x):
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise _shape_error("maxpool2d", x.shape, rule="expects [N,C,H,W] with even H and W")
    n, c, h, w = x.shape
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    choice = windows.argmax(axis=-1)[..., None]
    out = np.take_along_axis(windows, choice, axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros_like(windows)
        np.put_along_axis(gw, choice, g[..., None], axis=-1)
        gx = gw.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (gx,)

    return out, backward


def _conv2d(graph: "Graph", x: ArrayLike, weight: ArrayLike, bias: ArrayLike, padding: int = 1) -> Tensor:
    """Stride-1 convolution as im2col followed by a matmul."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if weight.data.ndim != 4 or x.data.ndim != 4 or weight.shape[1] != x.shape[1] or weight.shape[2] != weight.shape[3]:
        raise _shape_error("conv2d", x.shape, weight.shape, rule="expects x [N,C,H,W] and square weight [F,C,k,k]")
    n, _, h, w = x.shape
    filters, _, k, _ = weight.shape
    oh, ow = h + 2 * padding - k + 1, w + 2 * padding - k + 1
    cols = graph.apply("im2col", x, kernel=k, padding=padding)
    kernel_matrix = graph.transpose(graph.reshape(weight, (filters, -1)))
    out = graph.add(graph.matmul(cols, kernel_matrix), bias)
    return graph.transpose(graph.reshape(out, (n, oh, ow, filters)), (0, 3, 1, 2))


_COMPOSITES: Dict[str, Callable[..., Tensor]] = {"conv2d": _conv2d}


class Graph:
    """Record of operations for one forward pass.

    ``Graph(record=False)`` evaluates without keeping nodes, for inference.
    """

    def __init__(self, record: bool = True) -> None:
        self.record = record
        self.nodes: List[Node] = []

    def apply(self, op: str, *inputs: ArrayLike, **attrs) -> Tensor:
        composite = _COMPOSITES.get(op)
        if composite is not None:
            return composite(self, *inputs, **attrs)
        try:
            rule = _OPS[op]
        except KeyError:
            raise AugPolicyError(
                f"Unknown operation {op!r}",
                hint=f"Known operations: {sorted(set(_OPS) | set(_COMPOSITES))}",
            ) from None
        tensors = tuple(as_tensor(t) for t in inputs)
        data, backward_fn = rule(*(t.data for t in tensors), **attrs)
        tracked = self.record and any(t.requires_grad for t in tensors)
        out = Tensor._wrap(data, tracked, id(self) if tracked else None)
        if tracked:
            self.nodes.append(Node(op, tensors, out, backward_fn))
        return out

    # named wrappers
    def matmul(self, a, b): return self.apply("matmul", a, b)
    def add(self, a, b): return self.apply("add", a, b)
    def sub(self, a, b): return self.apply("sub", a, b)
    def mul(self, a, b): return self.apply("mul", a, b)
    def div(self, a, b): return self.apply("div", a, b)
    def neg(self, x): return self.apply("neg", x)
    def exp(self, x): return self.apply("exp", x)
    def log(self, x): return self.apply("log", x)
    def sqrt(self, x): return self.apply("sqrt", x)
    def tanh(self, x): return self.apply("tanh", x)
    def sigmoid(self, x): return self.apply("sigmoid", x)
    def relu(self, x): return self.apply("relu", x)
    def softmax(self, x, axis=-1): return self.apply("softmax", x, axis=axis)
    def log_softmax(self, x, axis=-1): return self.apply("log_softmax", x, axis=axis)
    def sum(self, x, axis=None, keepdims=False): return self.apply("sum", x, axis=axis, keepdims=keepdims)
    def mean(self, x, axis=None, keepdims=False): return self.apply("mean", x, axis=axis, keepdims=keepdims)
    def concat(self, xs, axis=0): return self.apply("concat", *xs, axis=axis)
    def reshape(self, x, shape): return self.apply("reshape", x, shape=shape)
    def transpose(self, x, axes=None): return self.apply("transpose", x, axes=axes)
    def slice(self, x, index): return self.apply("slice", x, index=index)
    def gather(self, x, indices): return self.apply("gather", x, indices=indices)
    def minimum(self, a, b): return self.apply("minimum", a, b)
    def clip(self, x, low, high): return self.apply("clip", x, low=low, high=high)
    def maxpool2d(self, x): return self.apply("maxpool2d", x)
    def conv2d(self, x, weight, bias, padding=1): return self.apply("conv2d", x, weight, bias, padding=padding)


def forward_op(graph: Graph, op: str, *inputs: ArrayLike, **attrs) -> Tensor:
    """Apply ``op`` to ``inputs`` and record it on ``graph``."""
    return graph.apply(op, *inputs, **attrs)


def backward(graph: Graph, loss: Tensor, params: Iterable[Tensor] = ()) -> None:
    """Accumulate d(loss)/d(leaf) into the ``grad`` of every reachable leaf.

    Tensors listed in ``params`` that the loss does not reach end up with a
    zero gradient.
    """

    if loss.size != 1:
        raise ShapeError(
            f"backward needs a scalar loss, got shape {list(loss.shape)}",
            hint="Reduce the loss with sum or mean first.",
        )
    _ensure(
        loss._origin in (None, id(graph)),
        "loss was produced by a different graph",
        error=ShapeError,
    )
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: Dict[int, Tensor] = {}
    if loss.requires_grad and loss._origin is None:
        leaves[id(loss)] = loss

    for node in reversed(graph.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for tensor, contribution in zip(node.inputs, node.backward(g)):
            if contribution is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + contribution
            else:
                grads[key] = np.array(contribution, dtype=np.float64)
            if tensor._origin is None:
                leaves[key] = tensor

    for key, tensor in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        g = g.reshape(tensor.shape)
        tensor.grad = g if tensor.grad is None else tensor.grad + g

    for p in params:
        if p.grad is None:
            p.zero_grad()


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

def _require_grads(params: Mapping[str, Tensor], optimizer: str) -> None:
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise AugPolicyError(
            f"{optimizer} step called before gradients were populated",
            hint="Run backward() on the loss before stepping the optimizer.",
            context={"missing": missing[:10]},
        )


@dataclass
class AdamState:
    """First/second moment accumulators for a fixed set of named parameters."""

    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, params: Mapping[str, Tensor], lr: float = 5e-5, **kwargs) -> "AdamState":
        return cls(
            lr=lr,
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
            **kwargs,
        )


def adam_step(state: AdamState, params: Mapping[str, Tensor]) -> None:
    """Apply one bias-corrected Adam update in place, then zero the gradients."""

    _require_grads(params, "Adam")
    for name, p in params.items():
        _ensure(
            name in state.m and state.m[name].shape == p.shape,
            f"Adam accumulator for {name!r} does not match parameter shape {list(p.shape)}",
            error=ShapeError,
        )
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = p.grad
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.zero_grad()


@dataclass
class SgdState:
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    step: int = 0
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(state: SgdState, params: Mapping[str, Tensor], lr: Optional[float] = None) -> None:
    """SGD with momentum and L2 weight decay; ``lr`` overrides the state's rate for scheduling."""

    _require_grads(params, "SGD")
    rate = state.lr if lr is None else lr
    state.step += 1
    for name, p in params.items():
        g = p.grad + state.weight_decay * p.data if state.weight_decay else p.grad
        buf = state.velocity.get(name)
        buf = g.copy() if buf is None else state.momentum * buf + g
        state.velocity[name] = buf
        p.data -= rate * buf
        p.zero_grad()


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def orthogonal(rows: int, cols: int, rng: np.random.Generator, gain: float = 1.0) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def uniform(shape: Tuple[int, ...], scale: float, rng: np.random.Generator) -> np.ndarray:
    if scale == 0.0:
        return np.zeros(shape)
    return rng.uniform(-scale, scale, size=shape)


def he_normal(shape: Tuple[int, ...], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckEntry:
    name: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    """Outcome of :func:`finite_diff_check`."""

    tol: float
    per_param: Dict[str, float] = field(default_factory=dict)
    checked: int = 0
    skipped: int = 0
    worst: Optional[GradCheckEntry] = None

    @property
    def max_rel_error(self) -> float:
        return max(self.per_param.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def failures(self) -> List[str]:
        return [name for name, err in self.per_param.items() if err >= self.tol]


def finite_diff_check(
    f: Callable[[Graph], Tensor],
    params: Union[Mapping[str, Tensor], Sequence[Tensor]],
    *,
    h: float = 1e-5,
    tol: float = 1e-4,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    skip_kinks: bool = False,
    floor: float = 1e-4,
) -> GradCheckReport:
    """Compare autodiff gradients of ``f`` against central differences.

    ``f`` builds its loss on the graph it is handed. Relative error is
    ``|a - n| / max(|a|, |n|, floor)``. With ``skip_kinks`` a failing entry whose
    one-sided slopes also disagree by more than the tolerance is counted as
    skipped, since a ReLU or max-pool switch sits inside the step.
    """

    named = dict(params) if isinstance(params, Mapping) else {f"p{i}": p for i, p in enumerate(params)}
    rng = rng or np.random.default_rng(0)

    for p in named.values():
        p.grad = None
    graph = Graph()
    loss = f(graph)
    base = loss.item()
    backward(graph, loss, named.values())
    analytic = {name: p.grad.copy() for name, p in named.items()}
    for p in named.values():
        p.grad = None

    def evaluate() -> float:
        return f(Graph(record=False)).item()

    report = GradCheckReport(tol=tol)
    for name, p in named.items():
        p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        positions = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            positions = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        worst = 0.0
        for pos in positions:
            original = flat[pos]
            flat[pos] = original + h
            f_plus = evaluate()
            flat[pos] = original - h
            f_minus = evaluate()
            flat[pos] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[name].reshape(-1)[pos])
            denom = max(abs(a), abs(numeric), floor)
            err = abs(a - numeric) / denom
            if skip_kinks and err >= tol:
                disagreement = abs((f_plus - base) / h - (base - f_minus) / h)
                if disagreement > tol * denom:
                    report.skipped += 1
                    continue
            report.checked += 1
            if err > worst:
                worst = err
            if report.worst is None or err > report.worst.rel_error:
                index = tuple(int(i) for i in np.unravel_index(pos, p.shape))
                report.worst = GradCheckEntry(name, index, a, numeric, err)
        report.per_param[name] = worst
    return report
