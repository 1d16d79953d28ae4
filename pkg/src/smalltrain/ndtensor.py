"""Dense float64 tensors with reverse-mode automatic differentiation.

The op set is exactly what a small image classifier needs: matmul,
add_bias, conv2d (stride 1, same zero padding), max_pool_2x2,
global_avg_pool, relu, sigmoid and a mean binary cross-entropy loss.
Ops are recorded on a :class:`Graph` tape in execution order, which is
topological by construction; :func:`backward` replays the tape in
reverse and accumulates gradients into every tensor that asked for them.

Everything is float64. At desk scale speed is irrelevant and the
finite-difference gradient checks need the precision.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BCE_EPS = 1e-12


class ShapeError(ValueError):
    """Raised when op inputs have incompatible shapes."""


class Tensor:
    """A dense n-d float64 array with an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def copy(self) -> "Tensor":
        t = Tensor(self.data.copy(), requires_grad=self.requires_grad)
        return t

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Node:
    """One recorded op: kind, input tensors, output tensor and its vjp."""

    __slots__ = ("op", "inputs", "output", "vjp")

    def __init__(self, op: str, inputs: Sequence[Tensor], output: Tensor,
                 vjp: Callable[[np.ndarray, Sequence[bool]], Sequence[Optional[np.ndarray]]]):
        self.op = op
        self.inputs = tuple(inputs)
        self.output = output
        self.vjp = vjp


class Graph:
    """Tape of ops. Calling an op method runs the forward pass and records
    the node; nodes end up in topological order because recording follows
    execution."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._produced: set[int] = set()

    def _record(self, op, inputs, out_data, vjp) -> Tensor:
        out = Tensor(out_data)
        self.nodes.append(Node(op, inputs, out, vjp))
        self._produced.add(id(out))
        return out

    def produced(self, t: Tensor) -> bool:
        return id(t) in self._produced

    # -- ops ---------------------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
        out = a.data @ b.data

        def vjp(g, needs):
            da = g @ b.data.T if needs[0] else None
            db = a.data.T @ g if needs[1] else None
            return da, db

        return self._record("matmul", (a, b), out, vjp)

    def add_bias(self, x: Tensor, b: Tensor) -> Tensor:
        """Add a 1-d bias: to the last axis of a 2-d input, or to the
        channel axis (axis 1) of a 4-d feature map."""
        if b.data.ndim != 1:
            raise ShapeError(f"add_bias: bias must be 1-d, got {b.shape}")
        if x.data.ndim == 2:
            if x.shape[1] != b.shape[0]:
                raise ShapeError(f"add_bias: input {x.shape} vs bias {b.shape}")
            out = x.data + b.data
            axes = (0,)
        elif x.data.ndim == 4:
            if x.shape[1] != b.shape[0]:
                raise ShapeError(f"add_bias: input {x.shape} vs bias {b.shape}")
            out = x.data + b.data[None, :, None, None]
            axes = (0, 2, 3)
        else:
            raise ShapeError(f"add_bias: input must be 2-d or 4-d, got {x.shape}")

        def vjp(g, needs):
            dx = g if needs[0] else None
            db = g.sum(axis=axes) if needs[1] else None
            return dx, db

        return self._record("add_bias", (x, b), out, vjp)

    def conv2d(self, x: Tensor, w: Tensor) -> Tensor:
        """2-d convolution, stride 1, zero padding that preserves the
        spatial shape. x is (B, Cin, H, W); w is (Cout, Cin, k, k), k odd."""
        if x.data.ndim != 4 or w.data.ndim != 4:
            raise ShapeError(f"conv2d: need 4-d input and kernel, got {x.shape}, {w.shape}")
        bsz, cin, h, wd = x.shape
        cout, cin_w, kh, kw = w.shape
        if cin != cin_w:
            raise ShapeError(f"conv2d: input channels {x.shape} vs kernel {w.shape}")
        if kh != kw or kh % 2 == 0:
            raise ShapeError(f"conv2d: kernel must be square with odd size, got {w.shape}")
        p = kh // 2
        xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (B,Cin,H,W,k,k)
        col = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(bsz * h * wd, cin * kh * kw)
        wmat = w.data.reshape(cout, -1)
        out = (col @ wmat.T).reshape(bsz, h, wd, cout).transpose(0, 3, 1, 2)

        def vjp(g, needs):
            g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(bsz * h * wd, cout)
            dw = (g2.T @ col).reshape(w.shape) if needs[1] else None
            dx = None
            if needs[0]:
                dcol = (g2 @ wmat).reshape(bsz, h, wd, cin, kh, kw)
                dxp = np.zeros_like(xp)
                for ki in range(kh):
                    for kj in range(kw):
                        dxp[:, :, ki:ki + h, kj:kj + wd] += dcol[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
                dx = dxp[:, :, p:p + h, p:p + wd]
            return dx, dw

        return self._record("conv2d", (x, w), out, vjp)

    def max_pool_2x2(self, x: Tensor) -> Tensor:
        """2x2 max pooling with stride 2. Odd trailing rows/columns are
        dropped (floor semantics), so even inputs halve exactly."""
        if x.data.ndim != 4:
            raise ShapeError(f"max_pool_2x2: need 4-d input, got {x.shape}")
        bsz, c, h, wd = x.shape
        h2, w2 = h // 2, wd // 2
        if h2 < 1 or w2 < 1:
            raise ShapeError(f"max_pool_2x2: spatial dims too small in {x.shape}")
        t = x.data[:, :, :2 * h2, :2 * w2].reshape(bsz, c, h2, 2, w2, 2)
        t = t.transpose(0, 1, 2, 4, 3, 5).reshape(bsz, c, h2, w2, 4)
        idx = t.argmax(axis=-1)
        out = np.take_along_axis(t, idx[..., None], axis=-1)[..., 0]

        def vjp(g, needs):
            if not needs[0]:
                return (None,)
            dt = np.zeros((bsz, c, h2, w2, 4))
            np.put_along_axis(dt, idx[..., None], g[..., None], axis=-1)
            dx = np.zeros_like(x.data)
            dx[:, :, :2 * h2, :2 * w2] = (
                dt.reshape(bsz, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(bsz, c, 2 * h2, 2 * w2)
            )
            return (dx,)

        return self._record("max_pool_2x2", (x,), out, vjp)

    def global_avg_pool(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4:
            raise ShapeError(f"global_avg_pool: need 4-d input, got {x.shape}")
        bsz, c, h, wd = x.shape
        out = x.data.mean(axis=(2, 3))

        def vjp(g, needs):
            if not needs[0]:
                return (None,)
            dx = np.broadcast_to(g[:, :, None, None] / (h * wd), x.shape).copy()
            return (dx,)

        return self._record("global_avg_pool", (x,), out, vjp)

    def relu(self, x: Tensor) -> Tensor:
        out = np.maximum(x.data, 0.0)

        def vjp(g, needs):
            if not needs[0]:
                return (None,)
            return (g * (x.data > 0.0),)

        return self._record("relu", (x,), out, vjp)

    def sigmoid(self, x: Tensor) -> Tensor:
        d = x.data
        out = np.empty_like(d)
        pos = d >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
        ez = np.exp(d[~pos])
        out[~pos] = ez / (1.0 + ez)

        def vjp(g, needs):
            if not needs[0]:
                return (None,)
            return (g * out * (1.0 - out),)

        return self._record("sigmoid", (x,), out, vjp)

    def bce_loss(self, pred: Tensor, target: Tensor) -> Tensor:
        """Mean binary cross entropy over every element (batch x labels).

        Predictions are clamped to [1e-12, 1 - 1e-12] before the logs so a
        saturated sigmoid cannot produce -inf. Targets must be 0 or 1.
        """
        if pred.shape != target.shape:
            raise ShapeError(f"bce_loss: prediction {pred.shape} vs target {target.shape}")
        t = target.data
        if not np.isin(t, (0.0, 1.0)).all():
            raise ValueError("bce_loss: targets must be 0 or 1")
        pc = np.clip(pred.data, BCE_EPS, 1.0 - BCE_EPS)
        n = pc.size
        out = -(t * np.log(pc) + (1.0 - t) * np.log1p(-pc)).sum() / n

        def vjp(g, needs):
            dp = None
            if needs[0]:
                inside = (pred.data >= BCE_EPS) & (pred.data <= 1.0 - BCE_EPS)
                dp = g * inside * (pc - t) / (pc * (1.0 - pc)) / n
            dt = None
            if needs[1]:
                dt = g * (np.log1p(-pc) - np.log(pc)) / n
            return dp, dt

        return self._record("bce_loss", (pred, target), np.float64(out), vjp)


def backward(graph: Graph, loss: Tensor) -> None:
    """Populate ``grad`` for every requires_grad tensor reachable from
    ``loss``. Repeated calls without zeroing accumulate."""
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not graph.produced(loss):
        raise ValueError("backward: loss is not an output of this graph")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    tensors: dict[int, Tensor] = {}
    for node in reversed(graph.nodes):
        gout = grads.pop(id(node.output), None)
        if gout is None:
            continue
        if node.output.requires_grad:
            if node.output.grad is None:
                node.output.grad = gout.reshape(node.output.data.shape).copy()
            else:
                node.output.grad += gout.reshape(node.output.data.shape)
        needs = tuple(t.requires_grad or graph.produced(t) for t in node.inputs)
        gins = node.vjp(gout, needs)
        for t, gin in zip(node.inputs, gins):
            if gin is None:
                continue
            if id(t) in grads:
                grads[id(t)] += gin
            else:
                grads[id(t)] = np.array(gin, dtype=np.float64, copy=True)
                tensors[id(t)] = t

    for tid, t in tensors.items():
        if not t.requires_grad or tid not in grads:
            continue
        g = grads[tid].reshape(t.data.shape)
        if t.grad is None:
            t.grad = g.copy()
        else:
            t.grad += g
