"""Minimal dense tensor engine with tape-based reverse-mode differentiation.

Everything is double precision and eager: each operation computes its
forward value immediately and appends a record to the owning tape. A
backward pass walks the records in reverse, so records are in topological
order by construction. The op set is intentionally small, just what a
token-based attention receiver needs, plus a fused binary-cross-entropy
loss head.

Sign and shape conventions:
  * tensors are 1 to 3 dimensional, row-major float64
  * matmul operands are 2-D
  * softmax / layer_norm act per row
  * relu subgradient at 0 is 0
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes for the requested op."""


class Tensor:
    """Value produced by (or fed into) a tape.

    `node` is the index of the record that produced this value; leaves get
    their own records so every tensor on a tape has one.
    """

    __slots__ = ("values", "node")

    def __init__(self, values: np.ndarray, node: int | None = None):
        self.values = values
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape}, node={self.node})"


def _as_f64(values) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim > 3:
        raise ShapeMismatchError(f"tensors are limited to 3 dims, got {arr.ndim}")
    return arr


class Tape:
    """Ordered list of operation records plus gradient slots.

    A tape is single threaded. Leaves may be reused by any number of
    downstream ops (parameters shared across tokens and blocks), and
    gradients accumulate by summation, in record order, which makes the
    backward pass deterministic.
    """

    def __init__(self):
        # each record: (parent node ids, backward callable or None for leaves)
        self._parents: list[tuple[int, ...]] = []
        self._backs: list[Callable | None] = []
        self._values: list[np.ndarray] = []

    # ------------------------------------------------------------------
    # node plumbing

    def leaf(self, values) -> Tensor:
        arr = _as_f64(values)
        if not np.all(np.isfinite(arr)):
            raise ValueError("leaf values must be finite")
        return self._push(arr, (), None)

    def _push(self, values: np.ndarray, parents: tuple[int, ...],
              back: Callable | None) -> Tensor:
        node = len(self._values)
        self._values.append(values)
        self._parents.append(parents)
        self._backs.append(back)
        return Tensor(values, node)

    def __len__(self) -> int:
        return len(self._values)

    # ------------------------------------------------------------------
    # ops

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        av, bv = a.values, b.values
        if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
            raise ShapeMismatchError(
                f"matmul needs [N,K]x[K,M], got {av.shape} x {bv.shape}")
        out = av @ bv

        def back(g, acc):
            acc[a.node] += g @ bv.T
            acc[b.node] += av.T @ g

        return self._push(out, (a.node, b.node), back)

    def transpose(self, a: Tensor) -> Tensor:
        if a.values.ndim != 2:
            raise ShapeMismatchError("transpose expects a 2-D tensor")
        out = np.ascontiguousarray(a.values.T)

        def back(g, acc):
            acc[a.node] += g.T

        return self._push(out, (a.node,), back)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        self._check_same_shape("add", a, b)
        out = a.values + b.values

        def back(g, acc):
            acc[a.node] += g
            acc[b.node] += g

        return self._push(out, (a.node, b.node), back)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        self._check_same_shape("sub", a, b)
        out = a.values - b.values

        def back(g, acc):
            acc[a.node] += g
            acc[b.node] -= g

        return self._push(out, (a.node, b.node), back)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        self._check_same_shape("mul", a, b)
        av, bv = a.values, b.values
        out = av * bv

        def back(g, acc):
            acc[a.node] += g * bv
            acc[b.node] += g * av

        return self._push(out, (a.node, b.node), back)

    def scale(self, a: Tensor, factor: float) -> Tensor:
        factor = float(factor)
        out = a.values * factor

        def back(g, acc):
            acc[a.node] += g * factor

        return self._push(out, (a.node,), back)

    def add_row(self, a: Tensor, bias: Tensor) -> Tensor:
        """Add a length-M vector to every row of an [N, M] tensor."""
        av, bv = a.values, bias.values
        if av.ndim != 2 or bv.ndim != 1 or av.shape[1] != bv.shape[0]:
            raise ShapeMismatchError(
                f"add_row needs [N,M] + [M], got {av.shape} + {bv.shape}")
        out = av + bv[None, :]

        def back(g, acc):
            acc[a.node] += g
            acc[bias.node] += g.sum(axis=0)

        return self._push(out, (a.node, bias.node), back)

    def relu(self, a: Tensor) -> Tensor:
        av = a.values
        out = np.maximum(av, 0.0)
        mask = av > 0.0

        def back(g, acc):
            acc[a.node] += g * mask

        return self._push(out, (a.node,), back)

    def sigmoid(self, a: Tensor) -> Tensor:
        # expit via tanh to avoid overflow for large negative inputs
        out = 0.5 * (1.0 + np.tanh(0.5 * a.values))

        def back(g, acc):
            acc[a.node] += g * out * (1.0 - out)

        return self._push(out, (a.node,), back)

    def elementwise(self, a: Tensor, kind: str, other: Tensor | None = None,
                    factor: float | None = None) -> Tensor:
        """Dispatch by name; binary kinds take `other`, scale takes `factor`."""
        if kind == "add":
            return self.add(a, self._req(other, kind))
        if kind == "sub":
            return self.sub(a, self._req(other, kind))
        if kind == "scale":
            if factor is None:
                raise ValueError("scale needs a factor")
            return self.scale(a, factor)
        if kind == "relu":
            return self.relu(a)
        if kind == "sigmoid":
            return self.sigmoid(a)
        raise ValueError(f"unknown elementwise kind: {kind!r}")

    @staticmethod
    def _req(other, kind):
        if other is None:
            raise ShapeMismatchError(f"elementwise {kind!r} needs two operands")
        return other

    def softmax_rows(self, a: Tensor) -> Tensor:
        """Row-wise softmax, stabilized by subtracting each row maximum."""
        av = a.values
        if av.ndim != 2:
            raise ShapeMismatchError("softmax_rows expects a 2-D tensor")
        shifted = av - av.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        out = e / e.sum(axis=1, keepdims=True)

        def back(g, acc):
            dot = (g * out).sum(axis=1, keepdims=True)
            acc[a.node] += out * (g - dot)

        return self._push(out, (a.node,), back)

    def layer_norm(self, a: Tensor, gain: Tensor, bias: Tensor,
                   eps: float = 1e-5) -> Tensor:
        """Per-row normalization to mean 0 / variance 1, then affine."""
        if eps <= 0:
            raise ValueError("eps must be positive")
        av, gv, bv = a.values, gain.values, bias.values
        if av.ndim != 2 or gv.shape != (av.shape[1],) or bv.shape != (av.shape[1],):
            raise ShapeMismatchError(
                f"layer_norm needs [N,M] with [M] gain/bias, got "
                f"{av.shape}, {gv.shape}, {bv.shape}")
        mu = av.mean(axis=1, keepdims=True)
        centered = av - mu
        var = (centered * centered).mean(axis=1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std
        out = xhat * gv[None, :] + bv[None, :]
        m = av.shape[1]

        def back(g, acc):
            acc[gain.node] += (g * xhat).sum(axis=0)
            acc[bias.node] += g.sum(axis=0)
            gh = g * gv[None, :]
            acc[a.node] += inv_std * (
                gh
                - gh.mean(axis=1, keepdims=True)
                - xhat * (gh * xhat).mean(axis=1, keepdims=True)
            )

        return self._push(out, (a.node, gain.node, bias.node), back)

    def concat_cols(self, parts: Sequence[Tensor]) -> Tensor:
        """Concatenate [N, M_i] tensors along columns."""
        if not parts:
            raise ShapeMismatchError("concat_cols needs at least one part")
        rows = parts[0].values.shape[0]
        for p in parts:
            if p.values.ndim != 2 or p.values.shape[0] != rows:
                raise ShapeMismatchError("concat_cols parts must share row count")
        out = np.concatenate([p.values for p in parts], axis=1)
        widths = [p.values.shape[1] for p in parts]
        nodes = tuple(p.node for p in parts)

        def back(g, acc):
            start = 0
            for node, w in zip(nodes, widths):
                acc[node] += g[:, start:start + w]
                start += w

        return self._push(out, nodes, back)

    def sum(self, a: Tensor) -> Tensor:
        """Sum all entries into a scalar (shape [1]) tensor."""
        out = np.array([a.values.sum()])
        shape = a.values.shape

        def back(g, acc):
            acc[a.node] += np.full(shape, g[0])

        return self._push(out, (a.node,), back)

    def bce_mean(self, llrs: Tensor, targets: np.ndarray,
                 mask: np.ndarray | None = None) -> Tensor:
        """Mean binary cross entropy of LLRs against 0/1 targets.

        Uses the sign convention LLR >= 0 <=> bit 0, i.e. P(bit=1) =
        sigmoid(-LLR), and the softplus identity for stability:
        loss = b * softplus(L) + (1 - b) * softplus(-L).
        `mask` selects which entries enter the mean (all by default).
        """
        lv = llrs.values
        b = np.asarray(targets, dtype=np.float64)
        if b.shape != lv.shape:
            raise ShapeMismatchError(
                f"targets shape {b.shape} != llrs shape {lv.shape}")
        if mask is None:
            m = np.ones_like(lv)
        else:
            m = np.asarray(mask, dtype=np.float64)
            if m.shape != lv.shape:
                raise ShapeMismatchError(
                    f"mask shape {m.shape} != llrs shape {lv.shape}")
        count = m.sum()
        if count <= 0:
            raise ValueError("bce_mean mask selects no entries")
        sp_pos = np.logaddexp(0.0, lv)    # softplus(L)
        sp_neg = np.logaddexp(0.0, -lv)   # softplus(-L)
        loss = (m * (b * sp_pos + (1.0 - b) * sp_neg)).sum() / count
        out = np.array([loss])
        sig = 0.5 * (1.0 + np.tanh(0.5 * lv))  # sigmoid(L)

        def back(g, acc):
            acc[llrs.node] += g[0] * m * (b * sig - (1.0 - b) * (1.0 - sig)) / count

        return self._push(out, (llrs.node,), back)

    # ------------------------------------------------------------------
    # backward

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Gradients of a scalar loss w.r.t. every node that reaches it.

        Returns a map from node id to gradient array (same shape as the
        node's value). Visits each record exactly once, in reverse order.
        """
        if loss.node is None or loss.values.shape != (1,):
            raise ValueError("loss must be a scalar (shape [1]) tape tensor")
        acc: dict[int, np.ndarray] = {
            loss.node: np.ones(1)
        }
        for node in range(loss.node, -1, -1):
            if node not in acc:
                continue
            back = self._backs[node]
            if back is None:
                continue
            g = acc[node]
            for parent in self._parents[node]:
                if parent not in acc:
                    acc[parent] = np.zeros_like(self._values[parent])
            back(g, acc)
        return acc

    @staticmethod
    def _check_same_shape(opname, a, b):
        if a.values.shape != b.values.shape:
            raise ShapeMismatchError(
                f"{opname} needs equal shapes, got {a.values.shape} "
                f"and {b.values.shape}")


def grad_check(build: Callable, inputs: Sequence[np.ndarray],
               step: float = 1e-5, probes: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Compare analytic gradients against central finite differences.

    `build(tape, *tensors)` must construct a scalar loss from fresh leaf
    tensors. Each scalar entry of each input is perturbed by +-step and the
    quotient (f(x+h) - f(x-h)) / 2h is compared against the tape gradient.
    With `probes` set, only that many randomly chosen entries per input are
    checked, which is how large parameter sets stay affordable.

    Returns the worst relative error, with denominator
    max(|analytic|, |numeric|, 1e-8).

    Relu kinks are not special-cased here; probe points must keep
    preactivations away from 0 relative to `step` for the comparison to be
    meaningful.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    arrays = [np.array(x, dtype=np.float64) for x in inputs]

    tape = Tape()
    tensors = [tape.leaf(x) for x in arrays]
    loss = build(tape, *tensors)
    grads = tape.backward(loss)

    def run(mod_arrays) -> float:
        t = Tape()
        ts = [t.leaf(x) for x in mod_arrays]
        return float(build(t, *ts).values[0])

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for i, arr in enumerate(arrays):
        tensor = tensors[i]
        analytic = grads.get(tensor.node)
        if analytic is None:
            analytic = np.zeros_like(arr)
        flat_n = arr.size
        if probes is None or probes >= flat_n:
            idxs = range(flat_n)
        else:
            idxs = rng.choice(flat_n, size=probes, replace=False)
        for flat in idxs:
            idx = np.unravel_index(flat, arr.shape)
            saved = arr[idx]
            arr[idx] = saved + step
            f_plus = run(arrays)
            arr[idx] = saved - step
            f_minus = run(arrays)
            arr[idx] = saved
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic[idx])
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
    return worst


def xavier_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    """Xavier/Glorot uniform init for a [rows, cols] projection."""
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))
