"""Dense float64 tensors with reverse-mode automatic differentiation.

All training math runs in 64-bit precision on top of numpy arrays. The
differentiation machinery is a Wengert list: a ``Tape`` records every
operation whose inputs require gradients, in creation order (which is
automatically topological), and ``backward`` replays it once in reverse.

Shape discipline is deliberately strict: the only broadcasting allowed
anywhere is adding a rank-1 bias over the last dimension. Everything else
must match exactly, which keeps each gradient rule a couple of lines and
makes the finite-difference checks unambiguous.
"""

from __future__ import annotations

import math
import threading

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "RankError",
    "DegenerateMaskError",
    "TapeConsumedError",
    "add",
    "mul",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "embedding_lookup",
    "softmax_rows",
    "layer_norm",
    "gelu",
    "dropout",
    "cross_entropy_masked",
    "sum_all",
    "backward",
    "zero_grads",
]


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class RankError(ValueError):
    """Operand rank is wrong, e.g. backward on a non-scalar."""


class DegenerateMaskError(ValueError):
    """A loss mask selects no positions."""


class TapeConsumedError(RuntimeError):
    """backward() was called a second time on the same tape."""


_STATE = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_STATE, "tape", None)


class Tape:
    """Ordered record of differentiable operations.

    Used as a context manager around a forward computation. Nodes are
    appended in creation order, so the list is topologically sorted by
    construction and the backward pass is a single reverse sweep that
    visits each node exactly once. A tape supports one backward pass;
    calling backward twice on the same tape raises TapeConsumedError.
    Gradient *accumulation* across tapes is intentional: leaf ``.grad``
    arrays sum until ``zero_grads`` resets them.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise RuntimeError("tapes do not nest; close the active tape first")
        _STATE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _STATE.tape = None
        return False


class _Node:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


class Tensor:
    """A dense n-dimensional float64 value with an optional gradient."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        # asarray keeps 0-d scalars 0-d (ascontiguousarray would promote them)
        self.data = np.asarray(data, dtype=np.float64, order="C")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # sugar used by the model code; the module-level functions are the API
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = _active_tape()
    if tape is not None and not tape.consumed and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append(_Node(inputs, out, backward_fn))
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    """a + b for identical shapes, or a + bias where bias is rank-1 over the
    last dimension of a. No other broadcasting."""
    if a.shape == b.shape:
        out = Tensor(a.data + b.data)

        def bwd(g):
            return g, g

    elif b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        out = Tensor(a.data + b.data)
        lead = tuple(range(a.ndim - 1))

        def bwd(g):
            return g, g.sum(axis=lead) if lead else g

    else:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    return _record(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes must match exactly, got {a.shape} and {b.shape}")
    out = Tensor(a.data * b.data)

    def bwd(g):
        return g * b.data, g * a.data

    return _record(out, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c)

    def bwd(g):
        return (g * c,)

    return _record(out, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. Rank 2 x rank 2, or rank 3 x rank 3 with an equal
    leading (batch) dimension; inner dimensions must agree."""
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    elif a.ndim == 3 and b.ndim == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise ShapeError(f"matmul: incompatible batched shapes {a.shape} @ {b.shape}")
    else:
        raise ShapeError(f"matmul: expected rank 2x2 or 3x3, got {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        ga = g @ b.data.swapaxes(-1, -2)
        gb = a.data.swapaxes(-1, -2) @ g
        return ga, gb

    return _record(out, (a, b), bwd)


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    perm = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    out = Tensor(np.transpose(a.data, perm))
    inv = np.argsort(perm)

    def bwd(g):
        return (np.transpose(g, inv),)

    return _record(out, (a,), bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if math.prod(shape) != a.data.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}")
    out = Tensor(a.data.reshape(shape))
    src = a.shape

    def bwd(g):
        return (g.reshape(src),)

    return _record(out, (a,), bwd)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of a [V x d] table; backward scatter-adds into the table."""
    idx = np.asarray(ids, dtype=np.int64)
    if idx.ndim != 1:
        raise RankError(f"embedding_lookup: ids must be rank 1, got shape {idx.shape}")
    out = Tensor(table.data[idx])

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record(out, (table,), bwd)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())

    def bwd(g):
        return (np.full_like(a.data, float(g)),)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# neural-net ops


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last dimension, computed with max-subtraction so a
    constant shift of a row leaves the result bit-identical."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)

    def bwd(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _record(out, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-vector normalization over the last dimension, then affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}"
        )
    if eps <= 0:
        raise ValueError(f"layer_norm: eps must be positive, got {eps}")
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x.data - mu) * inv
    out = Tensor(y * gain.data + bias.data)
    lead = tuple(range(x.ndim - 1))

    def bwd(g):
        gy = g * gain.data
        # d/dx of (x - mu) * inv with mu, var both functions of x
        gx = inv * (gy - gy.mean(axis=-1, keepdims=True) - y * (gy * y).mean(axis=-1, keepdims=True))
        ggain = (g * y).sum(axis=lead) if lead else g * y
        gbias = g.sum(axis=lead) if lead else g
        return gx, ggain, gbias

    return _record(out, (x, gain, bias), bwd)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out = Tensor(0.5 * x.data * (1.0 + t))

    def bwd(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t**2) * du),)

    return _record(out, (x,), bwd)


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: keep with probability 1-rate and rescale. The mask
    is drawn from the caller's generator so training stays seed-deterministic."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout: rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.data * keep)

    def bwd(g):
        return (g * keep,)

    return _record(out, (x,), bwd)


def cross_entropy_masked(logits: Tensor, targets, mask) -> Tensor:
    """Mean negative log-likelihood of the target ids over masked rows.

    logits is [L x V]; targets and mask are length-L. Rows where the mask is
    false contribute nothing, to the value or to the gradient.
    """
    if logits.ndim != 2:
        raise RankError(f"cross_entropy_masked: logits must be rank 2, got {logits.shape}")
    tgt = np.asarray(targets, dtype=np.int64)
    msk = np.asarray(mask, dtype=bool)
    L, V = logits.shape
    if tgt.shape != (L,) or msk.shape != (L,):
        raise ShapeError(
            f"cross_entropy_masked: targets/mask must have shape ({L},), "
            f"got {tgt.shape} and {msk.shape}"
        )
    if tgt.min(initial=0) < 0 or tgt.max(initial=0) >= V:
        raise ValueError(f"cross_entropy_masked: target ids must lie in [0, {V})")
    n = int(msk.sum())
    if n == 0:
        raise DegenerateMaskError("cross_entropy_masked: mask selects no positions")

    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    rows = np.arange(L)
    out = Tensor(-(logp[rows, tgt] * msk).sum() / n)

    def bwd(g):
        soft = np.exp(logp)
        gl = soft.copy()
        gl[rows, tgt] -= 1.0
        gl *= msk[:, None]
        return (gl * (float(g) / n),)

    return _record(out, (logits,), bwd)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad tensor reachable from loss.

    The loss must be a scalar produced through taped operations. Each tape
    is consumed by exactly one backward pass; gradients from successive
    tapes accumulate (sum) into leaves until zero_grads resets them.
    """
    if loss.data.shape != ():
        raise RankError(f"backward: loss must be a scalar, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise ValueError("backward: loss was not produced through taped operations")
    if tape.consumed:
        raise TapeConsumedError("backward: this tape has already been consumed")
    tape.consumed = True

    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(tape.nodes):
        og = node.output.grad
        if og is None:
            continue
        for inp, g in zip(node.inputs, node.backward_fn(og)):
            if g is None or not inp.requires_grad:
                continue
            _accumulate(inp, g)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
