"""Reverse-mode automatic differentiation over dense numpy arrays.

Every piece of model math goes through :func:`apply_primitive`.  While a
:class:`Tape` is active, each application is recorded (op kind, input node
ids, output node id, attributes), so :func:`backprop` can walk the tape
backwards and return exact gradients for every watched leaf.  Without an
active tape the same primitives behave as plain functions, which is what
the decoders use at inference time.

Training math is float64 throughout; checkpoints narrow values to float32
on disk (see ``checkpoint``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "TapeEntry",
    "ParameterStore",
    "ShapeMismatch",
    "UnknownPrimitive",
    "NonFiniteValue",
    "apply_primitive",
    "register_primitive",
    "backprop",
    "adam_update",
    "gradient_check",
    "concat",
    "conv1d",
    "dropout",
    "embedding",
    "log",
    "pick",
    "reshape",
    "sigmoid",
    "slice_axis",
    "softmax",
    "stack",
    "tsum",
    "tanh",
    "transpose",
]


class ShapeMismatch(ValueError):
    """Input shapes violate a primitive's contract."""


class UnknownPrimitive(ValueError):
    """No primitive is registered under the requested id."""


class NonFiniteValue(ArithmeticError):
    """A function value probed during gradient checking was NaN or infinite."""


class Tensor:
    """Dense row-major float64 array.

    Tensors are treated as immutable values: primitives always allocate new
    outputs, so tensors are safe to share between tapes and threads.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)

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
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return apply_primitive("add", (self, other))

    def __mul__(self, other: "Tensor") -> "Tensor":
        return apply_primitive("mul", (self, other))

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return apply_primitive("matmul", (self, other))

    def __neg__(self) -> "Tensor":
        return apply_primitive("scale", (self,), alpha=-1.0)

    def scaled(self, alpha: float) -> "Tensor":
        return apply_primitive("scale", (self,), alpha=float(alpha))


@dataclass
class TapeEntry:
    """One recorded primitive application."""

    kind: str
    inputs: tuple[int, ...]
    output: int
    attrs: dict


_ACTIVE: Optional["Tape"] = None


class Tape:
    """Ordered record of primitive applications for one forward pass.

    Entries are appended in execution order, so every input node id of
    entry ``k`` was produced by an earlier entry or is a leaf.  A tape has
    a single writer: one training step owns one tape.
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []
        self.values: list[np.ndarray] = []
        self._node_of: dict[int, int] = {}
        self._tensors: list[Tensor] = []  # keeps id() keys alive
        self._watched: dict[str, int] = {}
        self._prev: Optional[Tape] = None

    def __enter__(self) -> "Tape":
        global _ACTIVE
        self._prev = _ACTIVE
        _ACTIVE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE
        _ACTIVE = self._prev
        self._prev = None

    def _bind(self, tensor: Tensor) -> int:
        node = self._node_of.get(id(tensor))
        if node is None:
            node = len(self.values)
            self.values.append(tensor.data)
            self._node_of[id(tensor)] = node
            self._tensors.append(tensor)
        return node

    def node_of(self, tensor: Tensor) -> Optional[int]:
        return self._node_of.get(id(tensor))

    def watch(self, name: str, tensor: Tensor) -> None:
        """Register a named leaf whose gradient backprop should report."""
        self._watched[name] = self._bind(tensor)

    @property
    def watched(self) -> dict[str, int]:
        return dict(self._watched)

    def replay(self) -> bool:
        """Recompute every entry from its recorded inputs.

        Returns True when each recomputed output is bit-identical to the
        recorded one (the tape-consistency invariant).
        """
        for entry in self.entries:
            prim = _PRIMITIVES[entry.kind]
            out = prim.forward([self.values[i] for i in entry.inputs], entry.attrs)
            if not np.array_equal(out, self.values[entry.output]):
                return False
        return True


@dataclass(frozen=True)
class Primitive:
    forward: Callable[[list, dict], np.ndarray]
    backward: Callable[[np.ndarray, list, np.ndarray, dict], list]


_PRIMITIVES: dict[str, Primitive] = {}


def register_primitive(kind: str, forward, backward) -> None:
    """Register (or override) a primitive. Exposed so tests can install
    deliberately broken backward rules."""
    _PRIMITIVES[kind] = Primitive(forward, backward)


def apply_primitive(kind: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """Apply a registered primitive, recording it on the active tape."""
    prim = _PRIMITIVES.get(kind)
    if prim is None:
        raise UnknownPrimitive(f"unknown primitive id: {kind!r}")
    out = Tensor(prim.forward([t.data for t in inputs], attrs))
    tape = _ACTIVE
    if tape is not None:
        in_nodes = tuple(tape._bind(t) for t in inputs)
        out_node = tape._bind(out)
        tape.entries.append(TapeEntry(kind, in_nodes, out_node, attrs))
    return out


def backprop(tape: Tape, loss: Tensor) -> dict[str, Tensor]:
    """Gradient of a scalar tape output with respect to every watched leaf.

    Leaves not reachable from the loss get zero gradients.
    """
    node = tape.node_of(loss) if isinstance(loss, Tensor) else loss
    if node is None or not isinstance(node, int) or not 0 <= node < len(tape.values):
        raise ValueError("loss node is not on the tape")
    if tape.values[node].size != 1:
        raise ValueError(f"loss node must be scalar, got shape {tape.values[node].shape}")

    grads: dict[int, np.ndarray] = {node: np.ones_like(tape.values[node])}
    for entry in reversed(tape.entries):
        g = grads.pop(entry.output, None)
        if g is None:
            continue
        prim = _PRIMITIVES[entry.kind]
        ins = [tape.values[i] for i in entry.inputs]
        for node_id, gi in zip(entry.inputs, prim.backward(g, ins, tape.values[entry.output], entry.attrs)):
            if gi is None:
                continue
            acc = grads.get(node_id)
            grads[node_id] = gi if acc is None else acc + gi

    out: dict[str, Tensor] = {}
    for name, node_id in tape._watched.items():
        g = grads.get(node_id)
        out[name] = Tensor(np.zeros_like(tape.values[node_id])) if g is None else Tensor(g)
    return out


# ---------------------------------------------------------------------------
# primitive definitions


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gd, sd) in enumerate(zip(g.shape, shape)) if sd == 1 and gd != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _add_fwd(d, a):
    try:
        return d[0] + d[1]
    except ValueError:
        raise ShapeMismatch(
            f"add: shapes {d[0].shape} and {d[1].shape} do not broadcast") from None


def _add_bwd(g, d, out, a):
    return [_unbroadcast(g, d[0].shape), _unbroadcast(g, d[1].shape)]


def _mul_fwd(d, a):
    try:
        return d[0] * d[1]
    except ValueError:
        raise ShapeMismatch(
            f"mul: shapes {d[0].shape} and {d[1].shape} do not broadcast") from None


def _mul_bwd(g, d, out, a):
    x, y = d
    return [_unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)]


def _scale_fwd(d, a):
    return d[0] * a["alpha"]


def _scale_bwd(g, d, out, a):
    return [g * a["alpha"]]


def _matmul_fwd(d, a):
    x, w = d
    if x.ndim == 0 or w.ndim == 0 or w.ndim > 2:
        raise ShapeMismatch(f"matmul: unsupported operand ranks {x.shape} @ {w.shape}")
    if x.shape[-1] != w.shape[0]:
        raise ShapeMismatch(f"matmul: inner dimensions differ, {x.shape} @ {w.shape}")
    return x @ w


def _matmul_bwd(g, d, out, a):
    x, w = d
    if w.ndim == 2:
        dx = g @ w.T
        if x.ndim == 1:
            dw = np.outer(x, g)
        else:
            k = x.shape[-1]
            dw = x.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
    else:
        if x.ndim == 1:
            dx = g * w
            dw = g * x
        else:
            dx = g[..., None] * w
            dw = x.reshape(-1, x.shape[-1]).T @ g.reshape(-1)
    return [dx, dw]


def _transpose_fwd(d, a):
    x = d[0]
    if x.ndim < 2:
        raise ShapeMismatch(f"transpose: needs rank >= 2, got {x.shape}")
    return np.swapaxes(x, -1, -2)


def _transpose_bwd(g, d, out, a):
    return [np.swapaxes(g, -1, -2)]


def _reshape_fwd(d, a):
    return d[0].reshape(a["shape"])


def _reshape_bwd(g, d, out, a):
    return [g.reshape(d[0].shape)]


def _tanh_fwd(d, a):
    return np.tanh(d[0])


def _tanh_bwd(g, d, out, a):
    return [g * (1.0 - out * out)]


def _sigmoid_fwd(d, a):
    # tanh identity: overflow-free and cheaper than guarding exp
    return 0.5 * np.tanh(0.5 * d[0]) + 0.5


def _sigmoid_bwd(g, d, out, a):
    return [g * out * (1.0 - out)]


def _softmax_fwd(d, a):
    x = d[0]
    if x.ndim == 0:
        raise ShapeMismatch("softmax: needs at least one axis")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_bwd(g, d, out, a):
    inner = (g * out).sum(axis=-1, keepdims=True)
    return [out * (g - inner)]


def _log_fwd(d, a):
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.log(d[0])


def _log_bwd(g, d, out, a):
    return [g / d[0]]


def _sum_fwd(d, a):
    return np.asarray(d[0].sum(axis=a.get("axis")))


def _sum_bwd(g, d, out, a):
    axis = a.get("axis")
    x = d[0]
    if axis is None:
        return [np.broadcast_to(g.reshape(()), x.shape)]
    return [np.broadcast_to(np.expand_dims(g, axis), x.shape)]


def _concat_fwd(d, a):
    if not d:
        raise ShapeMismatch("concat: needs at least one input")
    lead = d[0].shape[:-1]
    for x in d:
        if x.shape[:-1] != lead:
            raise ShapeMismatch(f"concat: leading shapes differ, {d[0].shape} vs {x.shape}")
    return np.concatenate(d, axis=-1)


def _concat_bwd(g, d, out, a):
    grads = []
    pos = 0
    for x in d:
        w = x.shape[-1]
        grads.append(g[..., pos:pos + w])
        pos += w
    return grads


def _stack_fwd(d, a):
    shape = d[0].shape
    for x in d:
        if x.shape != shape:
            raise ShapeMismatch(f"stack: shapes differ, {shape} vs {x.shape}")
    return np.stack(d, axis=0)


def _stack_bwd(g, d, out, a):
    return [g[i] for i in range(len(d))]


def _slice_fwd(d, a):
    x = d[0]
    axis, start, stop = a["axis"], a["start"], a["stop"]
    if not -x.ndim <= axis < x.ndim:
        raise ShapeMismatch(f"slice: axis {axis} out of range for shape {x.shape}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    return x[tuple(index)]


def _slice_bwd(g, d, out, a):
    x = d[0]
    axis, start, stop = a["axis"], a["start"], a["stop"]
    dx = np.zeros_like(x)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    dx[tuple(index)] = g
    return [dx]


def _conv1d_fwd(d, a):
    signal, filt = d
    if filt.ndim != 1:
        raise ShapeMismatch(f"conv1d: filter must be one-dimensional, got {filt.shape}")
    if filt.shape[0] % 2 != 1:
        raise ShapeMismatch(f"conv1d: filter length must be odd, got {filt.shape[0]}")
    k = filt.shape[0]
    half = (k - 1) // 2
    pad = [(0, 0)] * (signal.ndim - 1) + [(half, half)]
    padded = np.pad(signal, pad)
    windows = np.lib.stride_tricks.sliding_window_view(padded, k, axis=-1)
    return windows @ filt[::-1]


def _conv1d_bwd(g, d, out, a):
    signal, filt = d
    k = filt.shape[0]
    half = (k - 1) // 2
    flipped = filt[::-1]
    n = signal.shape[-1]
    dpad = np.zeros(signal.shape[:-1] + (n + 2 * half,))
    for j in range(k):
        dpad[..., j:j + n] += g * flipped[j]
    dsignal = dpad[..., half:half + n]
    pad = [(0, 0)] * (signal.ndim - 1) + [(half, half)]
    windows = np.lib.stride_tricks.sliding_window_view(np.pad(signal, pad), k, axis=-1)
    dflipped = np.tensordot(g, windows, axes=(tuple(range(g.ndim)), tuple(range(g.ndim))))
    return [dsignal, dflipped[::-1]]


def _embedding_fwd(d, a):
    table = d[0]
    ids = np.asarray(a["ids"])
    if table.ndim != 2:
        raise ShapeMismatch(f"embedding-lookup: table must be 2-d, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[1]):
        raise ShapeMismatch(
            f"embedding-lookup: token id out of range for table with {table.shape[1]} columns"
        )
    return table[:, ids].T


def _embedding_bwd(g, d, out, a):
    table = d[0]
    ids = np.asarray(a["ids"])
    dt = np.zeros_like(table)
    np.add.at(dt.T, ids, g)
    return [dt]


def _dropout_fwd(d, a):
    x = d[0]
    mask = a["mask"]
    if mask.shape != x.shape:
        raise ShapeMismatch(f"dropout: mask shape {mask.shape} != input shape {x.shape}")
    return x * mask


def _dropout_bwd(g, d, out, a):
    return [g * a["mask"]]


def _pick_fwd(d, a):
    x = d[0]
    ids = np.asarray(a["ids"])
    if x.ndim != 2 or ids.ndim != 1 or ids.shape[0] != x.shape[0]:
        raise ShapeMismatch(f"pick: expected ({ids.shape[0]}, V) input, got {x.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= x.shape[1]):
        raise ShapeMismatch(f"pick: column id out of range for shape {x.shape}")
    return x[np.arange(x.shape[0]), ids]


def _pick_bwd(g, d, out, a):
    x = d[0]
    ids = np.asarray(a["ids"])
    dx = np.zeros_like(x)
    dx[np.arange(x.shape[0]), ids] = g
    return [dx]


register_primitive("add", _add_fwd, _add_bwd)
register_primitive("mul", _mul_fwd, _mul_bwd)
register_primitive("scale", _scale_fwd, _scale_bwd)
register_primitive("matmul", _matmul_fwd, _matmul_bwd)
register_primitive("transpose", _transpose_fwd, _transpose_bwd)
register_primitive("reshape", _reshape_fwd, _reshape_bwd)
register_primitive("tanh", _tanh_fwd, _tanh_bwd)
register_primitive("sigmoid", _sigmoid_fwd, _sigmoid_bwd)
register_primitive("softmax", _softmax_fwd, _softmax_bwd)
register_primitive("log", _log_fwd, _log_bwd)
register_primitive("sum", _sum_fwd, _sum_bwd)
register_primitive("concat", _concat_fwd, _concat_bwd)
register_primitive("stack", _stack_fwd, _stack_bwd)
register_primitive("slice", _slice_fwd, _slice_bwd)
register_primitive("conv1d", _conv1d_fwd, _conv1d_bwd)
register_primitive("embedding", _embedding_fwd, _embedding_bwd)
register_primitive("dropout", _dropout_fwd, _dropout_bwd)
register_primitive("pick", _pick_fwd, _pick_bwd)


# thin wrappers so model code reads naturally


def tanh(x: Tensor) -> Tensor:
    return apply_primitive("tanh", (x,))


def sigmoid(x: Tensor) -> Tensor:
    return apply_primitive("sigmoid", (x,))


def softmax(x: Tensor) -> Tensor:
    return apply_primitive("softmax", (x,))


def log(x: Tensor) -> Tensor:
    return apply_primitive("log", (x,))


def tsum(x: Tensor, axis: Optional[int] = None) -> Tensor:
    return apply_primitive("sum", (x,), axis=axis)


def concat(parts: Sequence[Tensor]) -> Tensor:
    return apply_primitive("concat", tuple(parts))


def stack(parts: Sequence[Tensor]) -> Tensor:
    return apply_primitive("stack", tuple(parts))


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    return apply_primitive("slice", (x,), axis=axis, start=start, stop=stop)


def transpose(x: Tensor) -> Tensor:
    return apply_primitive("transpose", (x,))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return apply_primitive("reshape", (x,), shape=tuple(shape))


def conv1d(signal: Tensor, filt: Tensor) -> Tensor:
    return apply_primitive("conv1d", (signal, filt))


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    return apply_primitive("embedding", (table,), ids=np.asarray(ids, dtype=np.intp))


def dropout(x: Tensor, mask: np.ndarray) -> Tensor:
    return apply_primitive("dropout", (x,), mask=mask)


def pick(x: Tensor, ids: np.ndarray) -> Tensor:
    return apply_primitive("pick", (x,), ids=np.asarray(ids, dtype=np.intp))


# ---------------------------------------------------------------------------
# parameters and the Adam rule


class ParameterStore:
    """Named trainable tensors plus their Adam moment buffers.

    The unit of checkpointing: values, both moments and the global step
    counter round-trip through checkpoint files.  Updates replace arrays
    rather than mutating them, so tensors handed out earlier stay valid.
    """

    def __init__(self):
        self._values: dict[str, np.ndarray] = {}
        self._m1: dict[str, np.ndarray] = {}
        self._m2: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> None:
        if name in self._values:
            raise ValueError(f"parameter {name!r} already exists")
        arr = np.array(value, dtype=np.float64)
        self._values[name] = arr
        self._m1[name] = np.zeros_like(arr)
        self._m2[name] = np.zeros_like(arr)

    def __contains__(self, name: str) -> bool:
        return name in self._values

    def names(self) -> list[str]:
        return list(self._values)

    def value(self, name: str) -> np.ndarray:
        return self._values[name]

    def set_value(self, name: str, value: np.ndarray) -> None:
        if value.shape != self._values[name].shape:
            raise ShapeMismatch(f"parameter {name!r}: shape {value.shape} != {self._values[name].shape}")
        self._values[name] = np.asarray(value, dtype=np.float64)

    def moments(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        return self._m1[name], self._m2[name]

    def set_moments(self, name: str, m1: np.ndarray, m2: np.ndarray) -> None:
        self._m1[name] = np.asarray(m1, dtype=np.float64)
        self._m2[name] = np.asarray(m2, dtype=np.float64)

    def as_tensors(self) -> dict[str, Tensor]:
        return {name: Tensor(arr) for name, arr in self._values.items()}

    def watch(self, tape: Tape) -> dict[str, Tensor]:
        tensors = self.as_tensors()
        for name, t in tensors.items():
            tape.watch(name, t)
        return tensors


def adam_update(
    store: ParameterStore,
    grads: dict,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParameterStore:
    """One Adam step with bias correction. Parameters without a gradient
    entry are untouched; the step counter advances by exactly one."""
    for name, grad in grads.items():
        if name not in store:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        g = grad.data if isinstance(grad, Tensor) else np.asarray(grad, dtype=np.float64)
        if g.shape != store._values[name].shape:
            raise ShapeMismatch(
                f"adam: gradient shape {g.shape} != parameter shape "
                f"{store._values[name].shape} for {name!r}"
            )
    store.step += 1
    c1 = 1.0 - beta1 ** store.step
    c2 = 1.0 - beta2 ** store.step
    for name, grad in grads.items():
        g = grad.data if isinstance(grad, Tensor) else np.asarray(grad, dtype=np.float64)
        m = beta1 * store._m1[name] + (1.0 - beta1) * g
        v = beta2 * store._m2[name] + (1.0 - beta2) * (g * g)
        store._m1[name] = m
        store._m2[name] = v
        store._values[name] = store._values[name] - learning_rate * (m / c1) / (np.sqrt(v / c2) + eps)
    return store


def gradient_check(f, point: dict, epsilon: float = 1e-5) -> float:
    """Max relative error between tape gradients of ``f`` and central
    differences over every coordinate of ``point``.

    ``f`` maps a dict of named Tensors to a scalar Tensor and must be
    evaluable at every +/- epsilon perturbation.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    work = {name: np.array(t.data if isinstance(t, Tensor) else t, dtype=np.float64)
            for name, t in point.items()}

    tape = Tape()
    with tape:
        tensors = {}
        for name, arr in work.items():
            t = Tensor(arr.copy())
            tape.watch(name, t)
            tensors[name] = t
        loss = f(tensors)
    if not np.isfinite(loss.data).all():
        raise NonFiniteValue("function value is not finite at the evaluation point")
    analytic = backprop(tape, loss)

    def evaluate() -> float:
        out = f({name: Tensor(arr) for name, arr in work.items()})
        val = float(out.data.reshape(()))
        if not np.isfinite(val):
            raise NonFiniteValue("function value is not finite at a probe point")
        return val

    max_err = 0.0
    for name, arr in work.items():
        grad = analytic[name].data
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + epsilon
            fp = evaluate()
            flat[i] = orig - epsilon
            fm = evaluate()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * epsilon)
            err = abs(gflat[i] - numeric) / max(1e-8, abs(gflat[i]) + abs(numeric))
            if err > max_err:
                max_err = err
    return max_err
