"""Reverse-mode automatic differentiation over small dense float64 tensors.

Every trainable module in the package is built from the primitives registered
here.  A primitive is a pair of functions: ``forward(*values, **attrs)`` and
``backward(node, upstream)`` returning one gradient per input (``None`` for
inputs that do not need one).  Keeping the rules in a plain registry lets
tests swap a rule out and check that :func:`grad_check` notices.
"""
from __future__ import annotations

import itertools
import zlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError

DTYPE = np.float64
# creation order is a topological order of any graph
_SEQ = itertools.count()


class Node:
    """A value in the computation graph plus the recipe that produced it."""

    __slots__ = ("value", "grad", "op", "inputs", "attrs", "requires_grad", "name", "seq")

    def __init__(self, value, op="const", inputs=(), attrs=None, requires_grad=False, name=None):
        self.seq = next(_SEQ)
        self.value = value
        self.grad = None
        self.op = op
        self.inputs = inputs
        self.attrs = attrs
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        label = self.name or self.op
        return f"Node({label}, shape={self.value.shape})"


class Parameter(Node):
    """A trainable leaf with its ADAM moment estimates."""

    __slots__ = ("adam_m", "adam_v", "step_count", "frozen")

    def __init__(self, value, name=None, frozen=False):
        value = np.array(value, dtype=DTYPE)
        super().__init__(value, op="param", requires_grad=not frozen, name=name)
        self.grad = np.zeros_like(value)
        self.adam_m = np.zeros_like(value)
        self.adam_v = np.zeros_like(value)
        self.step_count = 0
        self.frozen = frozen

    def zero_grad(self):
        self.grad.fill(0.0)

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.value.shape})"


def constant(value) -> Node:
    return Node(np.asarray(value, dtype=DTYPE))


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


# ---------------------------------------------------------------------------
# primitive registry

@dataclass
class Primitive:
    forward: Callable
    backward: Callable
    check: Callable | None = None


PRIMITIVES: dict[str, Primitive] = {}


def register(name, forward, backward, check=None):
    PRIMITIVES[name] = Primitive(forward, backward, check)


def _dim_error(op, *shapes):
    shown = ", ".join(str(tuple(s)) for s in shapes)
    return DimensionError(f"{op}: incompatible shapes {shown}")


def _check_matvec(w, x):
    if w.ndim != 2 or x.ndim != 1 or w.shape[1] != x.shape[0]:
        raise _dim_error("matvec", w.shape, x.shape)


def _check_same(op):
    def check(a, b):
        if a.shape != b.shape:
            raise _dim_error(op, a.shape, b.shape)
    return check


def _check_vector(op):
    def check(x):
        if x.ndim != 1:
            raise _dim_error(op, x.shape)
    return check


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


register(
    "matvec",
    lambda w, x: w @ x,
    lambda n, g: (np.outer(g, n.inputs[1].value), n.inputs[0].value.T @ g),
    _check_matvec,
)
register("add", lambda a, b: a + b, lambda n, g: (g, g), _check_same("add"))
register("sub", lambda a, b: a - b, lambda n, g: (g, -g), _check_same("sub"))
register(
    "hadamard",
    lambda a, b: a * b,
    lambda n, g: (g * n.inputs[1].value, g * n.inputs[0].value),
    _check_same("hadamard"),
)
register("neg", lambda a: -a, lambda n, g: (-g,))
register("scale", lambda a, factor: a * factor, lambda n, g: (g * n.attrs["factor"],))
register("exp", np.exp, lambda n, g: (g * n.value,))
register("sigmoid", _sigmoid, lambda n, g: (g * n.value * (1.0 - n.value),))
register("tanh", np.tanh, lambda n, g: (g * (1.0 - n.value * n.value),))
register("sum", lambda a: np.asarray(a.sum()), lambda n, g: (np.full(n.inputs[0].value.shape, g),))


def _clip_backward(n, g):
    x = n.inputs[0].value
    inside = (x > n.attrs["lo"]) & (x < n.attrs["hi"])
    return (g * inside,)


register("clip", lambda a, lo, hi: np.clip(a, lo, hi), _clip_backward)


def _concat_forward(*xs):
    return np.concatenate(xs)


def _concat_check(*xs):
    for x in xs:
        if x.ndim != 1:
            raise _dim_error("concat", *(y.shape for y in xs))


def _concat_backward(n, g):
    out = []
    start = 0
    for inp in n.inputs:
        stop = start + inp.value.shape[0]
        out.append(g[start:stop])
        start = stop
    return tuple(out)


register("concat", _concat_forward, _concat_backward, _concat_check)


def _slice_check(x, start, stop):
    if x.ndim != 1 or not (0 <= start < stop <= x.shape[0]):
        raise DimensionError(f"slice: cannot take [{start}:{stop}] of shape {tuple(x.shape)}")


def _slice_backward(n, g):
    x = n.inputs[0].value
    full = np.zeros_like(x)
    full[n.attrs["start"]:n.attrs["stop"]] = g
    return (full,)


register("slice", lambda x, start, stop: x[start:stop], _slice_backward, _slice_check)


def _pick_check(x, index):
    if x.ndim != 1 or not (0 <= index < x.shape[0]):
        raise DimensionError(f"pick: index {index} outside shape {tuple(x.shape)}")


def _pick_backward(n, g):
    full = np.zeros_like(n.inputs[0].value)
    full[n.attrs["index"]] = g
    return (full,)


register("pick", lambda x, index: np.asarray(x[index]), _pick_backward, _pick_check)


def _row_check(m, index):
    if m.ndim != 2 or not (0 <= index < m.shape[0]):
        raise DimensionError(f"row: index {index} outside shape {tuple(m.shape)}")


def _row_backward(n, g):
    full = np.zeros_like(n.inputs[0].value)
    full[n.attrs["index"]] = g
    return (full,)


register("row", lambda m, index: m[index], _row_backward, _row_check)


def _log_softmax(x):
    shifted = x - x.max()
    return shifted - np.log(np.exp(shifted).sum())


def _log_softmax_backward(n, g):
    return (g - np.exp(n.value) * g.sum(),)


register("log_softmax", _log_softmax, _log_softmax_backward, _check_vector("log_softmax"))


# ---------------------------------------------------------------------------
# graph construction

def apply_primitive(op: str, inputs: Sequence, **attrs) -> Node:
    """Evaluate primitive ``op`` on ``inputs`` and record it for backward."""
    return _apply(op, tuple(_as_node(x) for x in inputs), attrs)


def _apply(op, nodes, attrs):
    prim = PRIMITIVES[op]
    values = [x.value for x in nodes]
    if prim.check is not None:
        prim.check(*values, **attrs)
    value = prim.forward(*values, **attrs)
    for x in nodes:
        if x.requires_grad:
            return Node(value, op, nodes, attrs, True)
    return Node(value)


_NO_ATTRS: dict = {}


def matvec(w, x):
    return _apply("matvec", (w, x), _NO_ATTRS)


def add(a, b):
    return _apply("add", (a, b), _NO_ATTRS)


def sub(a, b):
    return _apply("sub", (a, b), _NO_ATTRS)


def hadamard(a, b):
    return _apply("hadamard", (a, b), _NO_ATTRS)


def neg(a):
    return _apply("neg", (a,), _NO_ATTRS)


def scale(a, factor: float):
    return _apply("scale", (a,), {"factor": float(factor)})


def exp(a):
    return _apply("exp", (a,), _NO_ATTRS)


def sigmoid(a):
    return _apply("sigmoid", (a,), _NO_ATTRS)


def tanh(a):
    return _apply("tanh", (a,), _NO_ATTRS)


def total(a):
    return _apply("sum", (a,), _NO_ATTRS)


def clip(a, lo: float, hi: float):
    return _apply("clip", (a,), {"lo": lo, "hi": hi})


def concat(xs):
    return _apply("concat", tuple(xs), _NO_ATTRS)


def slice_(x, start: int, stop: int):
    return _apply("slice", (x,), {"start": start, "stop": stop})


def pick(x, index: int):
    return _apply("pick", (x,), {"index": int(index)})


def row(m, index: int):
    return _apply("row", (m,), {"index": int(index)})


def log_softmax(x):
    return _apply("log_softmax", (x,), _NO_ATTRS)


def add_all(terms: Iterable) -> Node:
    terms = list(terms)
    if not terms:
        return constant(0.0)
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out


# ---------------------------------------------------------------------------
# backward pass

def _topological_order(root: Node) -> list[Node]:
    seen = {id(root)}
    reachable = [root]
    stack = [root]
    while stack:
        node = stack.pop()
        for parent in node.inputs:
            if parent.requires_grad and id(parent) not in seen:
                seen.add(id(parent))
                reachable.append(parent)
                stack.append(parent)
    reachable.sort(key=lambda n: n.seq)
    return reachable


def backward(root: Node) -> None:
    """Accumulate d(root)/d(parameter) into every reachable parameter's grad."""
    if root.value.size != 1 or root.value.ndim > 1:
        raise ContractError(f"backward needs a scalar root, got shape {tuple(root.value.shape)}")
    if not root.requires_grad:
        return
    order = _topological_order(root)
    for node in order:
        if node.op != "param":
            node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.op == "param" or node.grad is None:
            continue
        grads = PRIMITIVES[node.op].backward(node, node.grad)
        for parent, g in zip(node.inputs, grads):
            if not parent.requires_grad or g is None:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=DTYPE)
            else:
                parent.grad += g


# ---------------------------------------------------------------------------
# gradient checking

@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    tol: float
    passed: bool
    worst: str | None = None
    details: dict[str, tuple[float, float]] = field(default_factory=dict)

    def failing(self) -> list[str]:
        return [name for name, err in self.max_rel_error.items() if err > self.tol]


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(f: Callable[[], Node], params: Sequence[Parameter], eps: float = 1e-5,
               tol: float = 1e-4, floor: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` must rebuild its graph from the current parameter values on every
    call.  Relative errors use ``max(|a|, |n|, floor)`` as denominator so
    gradients that are zero on both sides count as exact.
    """
    if eps <= 0 or tol <= 0:
        raise ContractError("grad_check needs eps > 0 and tol > 0")
    for p in params:
        p.zero_grad()
    root = f()
    if not np.isfinite(root.value).all():
        raise NumericError("grad_check: objective is not finite at the base point")
    backward(root)
    report = {}
    details = {}
    for i, p in enumerate(params):
        name = p.name or f"param[{i}]"
        analytic = p.grad.copy()
        if not np.isfinite(analytic).all():
            raise NumericError(f"grad_check: non-finite analytic gradient for {name}")
        worst = 0.0
        worst_pair = (0.0, 0.0)
        flat = p.value.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = float(f().value)
            flat[k] = orig - eps
            down = float(f().value)
            flat[k] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"grad_check: non-finite objective while perturbing {name}")
            numeric = (up - down) / (2.0 * eps)
            a = float(analytic.reshape(-1)[k])
            err = relative_error(a, numeric, floor)
            if err > worst:
                worst = err
                worst_pair = (a, numeric)
        report[name] = worst
        details[name] = worst_pair
    for p in params:
        p.zero_grad()
    worst_name = max(report, key=report.get) if report else None
    passed = all(err <= tol for err in report.values())
    return GradCheckReport(report, tol, passed, worst_name, details)


# ---------------------------------------------------------------------------
# optimisation

def adam_step(params: Sequence[Parameter], lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected ADAM update, then zero every gradient.

    All gradients are checked before anything is touched, so a non-finite
    gradient leaves every parameter unchanged.
    """
    for p in params:
        if not np.isfinite(p.grad).all():
            raise NumericError(f"adam_step: non-finite gradient in {p.name or 'unnamed parameter'}")
    for p in params:
        if p.frozen:
            p.zero_grad()
            continue
        p.step_count += 1
        t = p.step_count
        g = p.grad
        p.adam_m *= beta1
        p.adam_m += (1.0 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1.0 - beta2) * g * g
        m_hat = p.adam_m / (1.0 - beta1 ** t)
        v_hat = p.adam_v / (1.0 - beta2 ** t)
        p.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.zero_grad()


def derive_seed(seed: int, name: str) -> np.random.SeedSequence:
    """Independent, reproducible stream for the parameter called ``name``."""
    return np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])


def init_params(shape, seed, fan_in: int | None = None, name: str | None = None,
                frozen: bool = False) -> Parameter:
    """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)].

    ``fan_in`` defaults to the last axis length, i.e. the input width of a
    ``(out, in)`` weight matrix.
    """
    shape = tuple(int(s) for s in (shape if isinstance(shape, (tuple, list)) else (shape,)))
    if not shape or any(s <= 0 for s in shape):
        raise ContractError(f"init_params: every dimension must be positive, got {shape}")
    fan_in = shape[-1] if fan_in is None else fan_in
    if fan_in <= 0:
        raise ContractError(f"init_params: fan_in must be positive, got {fan_in}")
    bound = 1.0 / np.sqrt(fan_in)
    rng = np.random.default_rng(seed)
    return Parameter(rng.uniform(-bound, bound, size=shape), name=name, frozen=frozen)
