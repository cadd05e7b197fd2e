"""Reverse-mode automatic differentiation over dense 2-D float64 arrays.

A ``Tape`` owns an append-only list of ``TensorNode`` objects. Node ids are
dense and assigned in creation order, so insertion order is already a valid
topological order and the backward pass is a single reverse sweep over the
nodes reachable from the loss root. Ops compute forward values eagerly and
stash whatever the matching backward rule needs in ``backward_payload``.

Everything is a 2-D float64 matrix; scalars are 1x1. There is no general
broadcasting, the only shape-bending op is ``add_bias`` (a 1xC row added to
every row of an RxC matrix). Shape mismatches raise immediately instead of
silently broadcasting.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = ["Tape", "TensorNode", "concat_cols"]


def _as_matrix(values, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Coerce scalars / vectors / matrices to a C-contiguous 2-D float64 array."""
    arr = np.asarray(values, dtype=np.float64)
    if shape is not None:
        rows, cols = shape
        if arr.size != rows * cols:
            raise ValueError(
                f"expected {rows * cols} values for shape {shape}, got {arr.size}"
            )
        arr = arr.reshape(rows, cols)
    elif arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ValueError(f"expected at most 2 dimensions, got {arr.ndim}")
    return np.ascontiguousarray(arr)


class TensorNode:
    """One entry on the tape: forward values plus the gradient accumulator.

    The gradient buffer is allocated lazily the first time backward reaches
    the node; reading ``grad`` before that returns (and keeps) zeros.
    """

    __slots__ = ("id", "tape", "values", "_grad", "op_tag", "parents", "backward_payload")

    def __init__(self, nid, tape, values, op_tag, parents, payload=None):
        self.id = nid
        self.tape = tape
        self.values = values
        self._grad = None
        self.op_tag = op_tag
        self.parents = parents
        self.backward_payload = payload

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def item(self) -> float:
        if self.values.shape != (1, 1):
            raise ValueError(f"item() requires a 1x1 node, got shape {self.shape}")
        return float(self.values[0, 0])

    def __repr__(self) -> str:
        return f"TensorNode(id={self.id}, op={self.op_tag!r}, shape={self.shape})"

    # ---- elementwise arithmetic (nodes and python scalars) ----

    def __add__(self, other):
        if isinstance(other, TensorNode):
            return self.tape._binary("add", self, other)
        return self.tape._unary("add_scalar", self, self.values + float(other), float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, TensorNode):
            return self.tape._binary("sub", self, other)
        return self.__add__(-float(other))

    def __mul__(self, other):
        if isinstance(other, TensorNode):
            return self.tape._binary("mul", self, other)
        c = float(other)
        return self.tape._unary("scale", self, self.values * c, c)

    __rmul__ = __mul__

    def __neg__(self):
        return self.__mul__(-1.0)

    def matmul(self, other: "TensorNode") -> "TensorNode":
        return self.tape.matmul(self, other)

    __matmul__ = matmul

    # ---- unary math ----

    def square(self) -> "TensorNode":
        return self.tape._unary("square", self, np.square(self.values))

    def exp(self) -> "TensorNode":
        return self.tape._unary("exp", self, np.exp(self.values))

    def log(self) -> "TensorNode":
        if not (self.values > 0.0).all():
            raise ValueError("log requires strictly positive input")
        return self.tape._unary("log", self, np.log(self.values))

    def tanh(self) -> "TensorNode":
        return self.tape._unary("tanh", self, np.tanh(self.values))

    def sin(self) -> "TensorNode":
        return self.tape._unary("sin", self, np.sin(self.values))

    def cos(self) -> "TensorNode":
        return self.tape._unary("cos", self, np.cos(self.values))

    def elu(self) -> "TensorNode":
        # ELU with alpha = 1: x for x > 0, exp(x) - 1 otherwise. expm1 runs on
        # the clipped negatives only so large positive entries cannot overflow.
        v = self.values
        out = np.where(v > 0.0, v, np.expm1(np.minimum(v, 0.0)))
        return self.tape._unary("elu", self, out)

    def clamp(self, lo: float, hi: float) -> "TensorNode":
        # Hard clamp; gradient passes through wherever the input is inside [lo, hi].
        if not lo < hi:
            raise ValueError(f"clamp needs lo < hi, got [{lo}, {hi}]")
        out = np.clip(self.values, lo, hi)
        return self.tape._unary("clamp", self, out, (lo, hi))

    def softmax_rows(self) -> "TensorNode":
        # Per-row softmax with max subtraction for overflow safety.
        shifted = self.values - self.values.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=1, keepdims=True)
        return self.tape._unary("softmax_rows", self, out)

    # ---- reductions ----

    def sum(self) -> "TensorNode":
        return self.tape._unary("sum", self, np.array([[self.values.sum()]]))

    def mean(self) -> "TensorNode":
        return self.tape._unary("mean", self, np.array([[self.values.mean()]]))

    def sum_rows(self) -> "TensorNode":
        return self.tape._unary("sum_rows", self, self.values.sum(axis=1, keepdims=True))

    # ---- structural ----

    def add_bias(self, bias: "TensorNode") -> "TensorNode":
        if bias.shape != (1, self.cols):
            raise ValueError(f"bias must be (1, {self.cols}), got {bias.shape}")
        out = self.values + bias.values
        return self.tape._emit(out, "add_bias", (self.id, bias.id))

    def reshape(self, rows: int, cols: int) -> "TensorNode":
        if rows * cols != self.values.size:
            raise ValueError(f"cannot reshape {self.shape} to ({rows}, {cols})")
        out = self.values.reshape(rows, cols).copy()
        return self.tape._unary("reshape", self, out)

    def split_cols(self, widths: Sequence[int]) -> list["TensorNode"]:
        if sum(widths) != self.cols or any(w <= 0 for w in widths):
            raise ValueError(f"split widths {widths} do not partition {self.cols} columns")
        pieces = []
        start = 0
        for w in widths:
            piece = self.values[:, start:start + w].copy()
            pieces.append(self.tape._unary("split_cols", self, piece, (start, start + w)))
            start += w
        return pieces

    def stop_gradient(self) -> "TensorNode":
        return self.tape._emit(self.values.copy(), "stop_gradient", (self.id,))

    def straight_through(self, forward_values) -> "TensorNode":
        """Fix the forward values while keeping this node's gradient path.

        The result behaves like ``self + stop_gradient(forward_values - self)``:
        the upstream gradient flows to ``self`` unchanged.
        """
        out = _as_matrix(forward_values)
        if out.shape != self.shape:
            raise ValueError(f"forward values shape {out.shape} != node shape {self.shape}")
        return self.tape._unary("straight_through", self, out)


class Tape:
    """Append-only computation record; also the factory for leaf nodes."""

    def __init__(self):
        self.nodes: list[TensorNode] = []
        self.parameter_ids: set[int] = set()

    # ---- node creation ----

    def _emit(self, values, op_tag, parents, payload=None) -> TensorNode:
        node = TensorNode(len(self.nodes), self, values, op_tag, parents, payload)
        self.nodes.append(node)
        return node

    def _unary(self, op_tag, x, values, payload=None) -> TensorNode:
        return self._emit(values, op_tag, (x.id,), payload)

    def _binary(self, op_tag, a, b) -> TensorNode:
        if a.shape != b.shape:
            raise ValueError(f"{op_tag}: shape mismatch {a.shape} vs {b.shape}")
        if op_tag == "add":
            out = a.values + b.values
        elif op_tag == "sub":
            out = a.values - b.values
        else:
            out = a.values * b.values
        return self._emit(out, op_tag, (a.id, b.id))

    def parameter(self, shape: tuple[int, int], init_values) -> TensorNode:
        """A trainable leaf. Values are copied, so later external mutation of
        the source array cannot change an already-recorded forward pass."""
        node = self._emit(_as_matrix(init_values, shape).copy(), "parameter", ())
        self.parameter_ids.add(node.id)
        return node

    def constant(self, values, shape: tuple[int, int] | None = None) -> TensorNode:
        """A non-trainable leaf (inputs, noise draws, fixed coefficients)."""
        return self._emit(_as_matrix(values, shape).copy(), "constant", ())

    def matmul(self, a: TensorNode, b: TensorNode) -> TensorNode:
        if a.cols != b.rows:
            raise ValueError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
        return self._emit(a.values @ b.values, "matmul", (a.id, b.id))

    # ---- backward ----

    def zero_grads(self) -> None:
        for node in self.nodes:
            node._grad = None

    def backward(self, root: TensorNode) -> None:
        """Accumulate d(root)/d(node) into every node reachable from ``root``.

        ``root`` must be 1x1. The sweep assumes the reachable subgraph has
        zero (or unallocated) gradients: each rule propagates a node's full
        accumulated buffer, so running backward twice without ``zero_grads``
        compounds earlier contributions instead of adding an independent
        pass. Nodes not reachable from the root keep whatever they had.
        """
        if root.tape is not self:
            raise ValueError("root node belongs to a different tape")
        if root.shape != (1, 1):
            raise ValueError(f"backward root must be 1x1, got {root.shape}")

        nodes = self.nodes
        reachable = np.zeros(len(nodes), dtype=bool)
        stack = [root.id]
        while stack:
            nid = stack.pop()
            if reachable[nid]:
                continue
            reachable[nid] = True
            stack.extend(nodes[nid].parents)

        root.grad[0, 0] += 1.0
        for nid in range(root.id, -1, -1):
            if not reachable[nid]:
                continue
            node = nodes[nid]
            if node._grad is None:
                # reachable through parent links only (e.g. behind a
                # stop_gradient): nothing arrived, nothing to propagate
                continue
            rule = _BACKWARD.get(node.op_tag)
            if rule is not None:
                rule(node, nodes)


def concat_cols(parts: Sequence[TensorNode]) -> TensorNode:
    """Column-wise concatenation of same-height nodes."""
    if not parts:
        raise ValueError("concat_cols needs at least one node")
    rows = parts[0].rows
    if any(p.rows != rows for p in parts):
        raise ValueError("concat_cols: row counts differ")
    tape = parts[0].tape
    out = np.concatenate([p.values for p in parts], axis=1)
    widths = tuple(p.cols for p in parts)
    return tape._emit(out, "concat_cols", tuple(p.id for p in parts), widths)


# ---- backward rules, keyed by op_tag -------------------------------------
# Each rule reads node._grad (upstream, materialized by the caller) and
# accumulates into parent grads. Leaves ("parameter", "constant") and
# "stop_gradient" have no rule on purpose. ``_acc`` lazily allocates the
# parent buffer: ``own=True`` promises ``delta`` is a fresh temporary the
# parent may keep.


def _acc(parent, delta, own=False):
    if parent._grad is None:
        parent._grad = delta if own else delta.copy()
    else:
        parent._grad += delta


def _bw_matmul(node, nodes):
    a, b = nodes[node.parents[0]], nodes[node.parents[1]]
    g = node._grad
    _acc(a, g @ b.values.T, own=True)
    _acc(b, a.values.T @ g, own=True)


def _bw_add(node, nodes):
    _acc(nodes[node.parents[0]], node._grad)
    _acc(nodes[node.parents[1]], node._grad)


def _bw_sub(node, nodes):
    _acc(nodes[node.parents[0]], node._grad)
    b = nodes[node.parents[1]]
    if b._grad is None:
        b._grad = -node._grad
    else:
        b._grad -= node._grad


def _bw_mul(node, nodes):
    a, b = nodes[node.parents[0]], nodes[node.parents[1]]
    _acc(a, node._grad * b.values, own=True)
    _acc(b, node._grad * a.values, own=True)


def _bw_add_bias(node, nodes):
    x, bias = nodes[node.parents[0]], nodes[node.parents[1]]
    _acc(x, node._grad)
    _acc(bias, node._grad.sum(axis=0, keepdims=True), own=True)


def _bw_scale(node, nodes):
    _acc(nodes[node.parents[0]], node.backward_payload * node._grad, own=True)


def _bw_add_scalar(node, nodes):
    _acc(nodes[node.parents[0]], node._grad)


def _bw_square(node, nodes):
    x = nodes[node.parents[0]]
    _acc(x, 2.0 * x.values * node._grad, own=True)


def _bw_exp(node, nodes):
    _acc(nodes[node.parents[0]], node.values * node._grad, own=True)


def _bw_log(node, nodes):
    x = nodes[node.parents[0]]
    _acc(x, node._grad / x.values, own=True)


def _bw_tanh(node, nodes):
    _acc(nodes[node.parents[0]], (1.0 - np.square(node.values)) * node._grad, own=True)


def _bw_sin(node, nodes):
    x = nodes[node.parents[0]]
    _acc(x, np.cos(x.values) * node._grad, own=True)


def _bw_cos(node, nodes):
    x = nodes[node.parents[0]]
    _acc(x, -np.sin(x.values) * node._grad, own=True)


def _bw_elu(node, nodes):
    x = nodes[node.parents[0]]
    # derivative: 1 for x > 0, exp(x) = out + 1 otherwise
    _acc(x, np.where(x.values > 0.0, 1.0, node.values + 1.0) * node._grad, own=True)


def _bw_clamp(node, nodes):
    x = nodes[node.parents[0]]
    lo, hi = node.backward_payload
    inside = (x.values >= lo) & (x.values <= hi)
    _acc(x, np.where(inside, node._grad, 0.0), own=True)


def _bw_softmax_rows(node, nodes):
    s = node.values
    g = node._grad
    dot = (g * s).sum(axis=1, keepdims=True)
    _acc(nodes[node.parents[0]], s * (g - dot), own=True)


def _bw_sum(node, nodes):
    x = nodes[node.parents[0]]
    if x._grad is None:
        x._grad = np.full_like(x.values, node._grad[0, 0])
    else:
        x._grad += node._grad[0, 0]


def _bw_mean(node, nodes):
    x = nodes[node.parents[0]]
    delta = node._grad[0, 0] / x.values.size
    if x._grad is None:
        x._grad = np.full_like(x.values, delta)
    else:
        x._grad += delta


def _bw_sum_rows(node, nodes):
    x = nodes[node.parents[0]]
    if x._grad is None:
        x._grad = np.broadcast_to(node._grad, x.values.shape).copy()
    else:
        x._grad += node._grad


def _bw_reshape(node, nodes):
    x = nodes[node.parents[0]]
    _acc(x, node._grad.reshape(x.values.shape), own=False)


def _bw_split_cols(node, nodes):
    start, stop = node.backward_payload
    nodes[node.parents[0]].grad[:, start:stop] += node._grad


def _bw_concat_cols(node, nodes):
    start = 0
    g = node.grad
    for pid, width in zip(node.parents, node.backward_payload):
        _acc(nodes[pid], g[:, start:start + width])
        start += width


def _bw_straight_through(node, nodes):
    _acc(nodes[node.parents[0]], node._grad)


_BACKWARD: dict[str, Callable] = {
    "matmul": _bw_matmul,
    "add": _bw_add,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "add_bias": _bw_add_bias,
    "scale": _bw_scale,
    "add_scalar": _bw_add_scalar,
    "square": _bw_square,
    "exp": _bw_exp,
    "log": _bw_log,
    "tanh": _bw_tanh,
    "sin": _bw_sin,
    "cos": _bw_cos,
    "elu": _bw_elu,
    "clamp": _bw_clamp,
    "softmax_rows": _bw_softmax_rows,
    "sum": _bw_sum,
    "mean": _bw_mean,
    "sum_rows": _bw_sum_rows,
    "reshape": _bw_reshape,
    "split_cols": _bw_split_cols,
    "concat_cols": _bw_concat_cols,
    "straight_through": _bw_straight_through,
}
