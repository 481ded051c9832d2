"""Reverse-mode autodiff over flat float64 tensors.

Tensors store row-major array('d') buffers and ops dispatch to the kernel
backend. Every op that sees a grad-requiring input while recording is on
registers a backward closure; backward() replays them in reverse topological
order and accumulates dLoss/dLeaf into the .grad of grad-requiring leaves.
Ops never record when no input requires grad, so anything downstream of
detach() gets an exactly-zero (absent) gradient by construction rather than
a numerically small one.

Supported shapes are scalars (), vectors (n,) and matrices (m, n). The only
broadcast is add_bias; everything else is same-shape elementwise, matmul, or
a reduction. That is all the model needs and it keeps the kernels honest.
"""

from __future__ import annotations

from array import array
from typing import Iterable, Sequence

from ..errors import ContractError, GraphError, ShapeError
from .backend import K

# probabilities below this are clamped inside log(); keeps CE losses finite
LOG_FLOOR = 1e-12

_GRAD_ENABLED = True


class no_grad:
    """Context manager that pauses graph recording (evaluation paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def _zeros_buf(n: int) -> array:
    return array("d", bytes(8 * n))


class Tensor:
    __slots__ = ("shape", "values", "requires_grad", "grad", "_parents", "_bw")

    def __init__(self, shape: Sequence[int], values=None, requires_grad: bool = False):
        shape = tuple(int(s) for s in shape)
        size = 1
        for s in shape:
            if s < 0:
                raise ShapeError(f"negative dimension in shape {shape}")
            size *= s
        if values is None:
            values = _zeros_buf(size)
        elif not (isinstance(values, array) and values.typecode == "d"):
            values = array("d", values)
        if len(values) != size:
            raise ShapeError(f"shape {shape} needs {size} values, got {len(values)}")
        self.shape = shape
        self.values = values
        self.requires_grad = requires_grad
        self.grad = None
        self._parents: tuple = ()
        self._bw = None

    @property
    def size(self) -> int:
        return len(self.values)

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return self.values[0]

    def tolist(self):
        if self.shape == ():
            return self.values[0]
        if len(self.shape) == 1:
            return list(self.values)
        m, n = self.shape
        return [list(self.values[i * n:(i + 1) * n]) for i in range(m)]

    def detach(self) -> "Tensor":
        """Constant view sharing this tensor's storage; never records grads."""
        t = Tensor.__new__(Tensor)
        t.shape = self.shape
        t.values = self.values
        t.requires_grad = False
        t.grad = None
        t._parents = ()
        t._bw = None
        return t

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad: bool = False) -> Tensor:
    """Build a scalar, vector, or matrix tensor from (nested) Python numbers."""
    if isinstance(data, (int, float)):
        return Tensor((), array("d", (float(data),)), requires_grad)
    rows = list(data)
    if rows and isinstance(rows[0], (list, tuple, array)):
        m = len(rows)
        n = len(rows[0])
        flat = array("d")
        for row in rows:
            if len(row) != n:
                raise ShapeError("ragged rows in tensor()")
            flat.extend(float(v) for v in row)
        return Tensor((m, n), flat, requires_grad)
    return Tensor((len(rows),), array("d", (float(v) for v in rows)), requires_grad)


def zeros(shape: Sequence[int], requires_grad: bool = False) -> Tensor:
    return Tensor(shape, None, requires_grad)


def full(shape: Sequence[int], value: float, requires_grad: bool = False) -> Tensor:
    t = Tensor(shape, None, requires_grad)
    for i in range(t.size):
        t.values[i] = value
    return t


def _record(out: Tensor, parents: tuple, bw) -> None:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._bw = bw


def _acc(bufs: dict, t: Tensor) -> array:
    b = bufs.get(id(t))
    if b is None:
        b = _zeros_buf(t.size)
        bufs[id(t)] = b
    return b


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op} needs equal shapes, got {a.shape} and {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    m, k = a.shape
    k2, n = b.shape
    if k != k2:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = Tensor((m, n))
    K.matmul_nn(a.values, b.values, out.values, m, k, n)

    def bw(g, bufs):
        if a.requires_grad:
            K.matmul_nt(g, b.values, _acc(bufs, a), m, n, k)
        if b.requires_grad:
            K.matmul_tn(a.values, g, _acc(bufs, b), m, k, n)

    _record(out, (a, b), bw)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    out = Tensor(a.shape)
    K.ew_add(a.values, b.values, out.values, out.size)

    def bw(g, bufs):
        if a.requires_grad:
            K.axpy(1.0, g, _acc(bufs, a), len(g))
        if b.requires_grad:
            K.axpy(1.0, g, _acc(bufs, b), len(g))

    _record(out, (a, b), bw)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    out = Tensor(a.shape)
    K.ew_sub(a.values, b.values, out.values, out.size)

    def bw(g, bufs):
        if a.requires_grad:
            K.axpy(1.0, g, _acc(bufs, a), len(g))
        if b.requires_grad:
            K.axpy(-1.0, g, _acc(bufs, b), len(g))

    _record(out, (a, b), bw)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    out = Tensor(a.shape)
    K.ew_mul(a.values, b.values, out.values, out.size)

    def bw(g, bufs):
        if a.requires_grad:
            K.madd(g, b.values, _acc(bufs, a), len(g))
        if b.requires_grad:
            K.madd(g, a.values, _acc(bufs, b), len(g))

    _record(out, (a, b), bw)
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(a.shape)
    K.ew_neg(a.values, out.values, out.size)

    def bw(g, bufs):
        if a.requires_grad:
            K.axpy(-1.0, g, _acc(bufs, a), len(g))

    _record(out, (a,), bw)
    return out


def rsub(c: float, a: Tensor) -> Tensor:
    """c - a, with c a plain float (used for 1 - D(x) terms)."""
    out = Tensor(a.shape)
    K.rsub_scalar(float(c), a.values, out.values, out.size)

    def bw(g, bufs):
        if a.requires_grad:
            K.axpy(-1.0, g, _acc(bufs, a), len(g))

    _record(out, (a,), bw)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.shape)
    K.scale(a.values, c, out.values, out.size)

    def bw(g, bufs):
        if a.requires_grad:
            K.axpy(c, g, _acc(bufs, a), len(g))

    _record(out, (a,), bw)
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(a.shape)
    K.relu_fwd(a.values, out.values, out.size)
    x = a.values

    def bw(g, bufs):
        if a.requires_grad:
            K.relu_bwd(x, g, _acc(bufs, a), len(g))

    _record(out, (a,), bw)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = Tensor(a.shape)
    K.sigmoid_fwd(a.values, out.values, out.size)
    y = out.values

    def bw(g, bufs):
        if a.requires_grad:
            K.sigmoid_bwd(y, g, _acc(bufs, a), len(g))

    _record(out, (a,), bw)
    return out


def log(a: Tensor) -> Tensor:
    """Natural log with inputs clamped to LOG_FLOOR from below."""
    out = Tensor(a.shape)
    K.log_fwd(a.values, out.values, out.size, LOG_FLOOR)
    x = a.values

    def bw(g, bufs):
        if a.requires_grad:
            K.log_bwd(x, g, _acc(bufs, a), len(g), LOG_FLOOR)

    _record(out, (a,), bw)
    return out


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis (rows of a matrix, or a whole vector)."""
    if len(a.shape) == 1:
        m, n = 1, a.shape[0]
    elif len(a.shape) == 2:
        m, n = a.shape
    else:
        raise ShapeError(f"softmax needs a vector or matrix, got shape {a.shape}")
    if n == 0:
        raise ShapeError("softmax over an empty axis")
    out = Tensor(a.shape)
    K.softmax_rows(a.values, out.values, m, n)
    y = out.values

    def bw(g, bufs):
        if a.requires_grad:
            K.softmax_rows_bwd(y, g, _acc(bufs, a), m, n)

    _record(out, (a,), bw)
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """x[m,n] + b[n] broadcast over rows; the only broadcast in the kit."""
    if len(x.shape) != 2 or len(b.shape) != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias needs (m,n)+(n,), got {x.shape} and {b.shape}")
    m, n = x.shape
    out = Tensor((m, n))
    K.add_bias(x.values, b.values, out.values, m, n)

    def bw(g, bufs):
        if x.requires_grad:
            K.axpy(1.0, g, _acc(bufs, x), m * n)
        if b.requires_grad:
            K.col_sum_acc(g, _acc(bufs, b), m, n)

    _record(out, (x, b), bw)
    return out


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    """Contiguous column window x[:, start:stop]."""
    if len(x.shape) != 2:
        raise ShapeError(f"slice_cols needs a matrix, got shape {x.shape}")
    m, n = x.shape
    if not (0 <= start < stop <= n):
        raise ShapeError(f"slice_cols window [{start}:{stop}] invalid for {n} columns")
    width = stop - start
    out = Tensor((m, width))
    K.copy_cols(x.values, out.values, m, n, start, width)

    def bw(g, bufs):
        if x.requires_grad:
            K.copy_cols_acc(g, _acc(bufs, x), m, n, start, width)

    _record(out, (x,), bw)
    return out


def pick(x: Tensor, idx: Iterable[int]) -> Tensor:
    """Gather one column per row: out[i] = x[i, idx[i]]."""
    if len(x.shape) != 2:
        raise ShapeError(f"pick needs a matrix, got shape {x.shape}")
    m, n = x.shape
    ii = array("q", (int(v) for v in idx))
    if len(ii) != m:
        raise ShapeError(f"pick got {len(ii)} indices for {m} rows")
    for v in ii:
        if v < 0 or v >= n:
            raise ContractError(f"pick index {v} out of range for {n} columns")
    out = Tensor((m,))
    K.pick(x.values, ii, out.values, m, n)

    def bw(g, bufs):
        if x.requires_grad:
            K.pick_acc(g, ii, _acc(bufs, x), m, n)

    _record(out, (x,), bw)
    return out


def sum_all(a: Tensor) -> Tensor:
    """Sum of every element, as a scalar tensor."""
    out = Tensor(())
    out.values[0] = K.sum_all(a.values, a.size)
    n = a.size

    def bw(g, bufs):
        if a.requires_grad:
            K.add_scalar_acc(g[0], _acc(bufs, a), n)

    _record(out, (a,), bw)
    return out


def mean_all(a: Tensor) -> Tensor:
    if a.size == 0:
        raise ShapeError("mean of an empty tensor")
    return scale(sum_all(a), 1.0 / a.size)


def backward(loss: Tensor) -> None:
    """Accumulate dLoss/dLeaf into .grad of every grad-requiring leaf.

    Gradients add onto whatever .grad already holds, so two backward passes
    from the same parameters sum; call zero_grad between steps.
    """
    if loss.shape != ():
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any grad-requiring tensor")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    bufs: dict[int, array] = {id(loss): array("d", (1.0,))}
    for node in reversed(topo):
        if node._bw is None:
            continue
        g = bufs.get(id(node))
        if g is not None:
            node._bw(g, bufs)

    for node in topo:
        if node._bw is None and node.requires_grad:
            g = bufs.get(id(node))
            if g is not None:
                if node.grad is None:
                    node.grad = _zeros_buf(node.size)
                K.axpy(1.0, g, node.grad, node.size)
