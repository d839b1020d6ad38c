"""Reverse-mode automatic differentiation over dense numpy tensors.

Ops are recorded on a tape (`Graph`); `Graph.backward` replays the tape in
reverse topological order, visiting each node exactly once. The op set is
deliberately minimal: exactly what the dialogue-act CNN and the
encoder/attention-decoder need, plus the batched variants that make
desk-scale training fast. No general broadcasting, no GPU, no fusion.

Dtype discipline: float32 for training, float64 for gradient checking.
Every op preserves the dtype of its inputs.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Raised when op input shapes are incompatible."""


class GraphError(RuntimeError):
    """Raised when the graph is used outside its contract (e.g. non-scalar loss)."""


class Tensor:
    """A dense row-major array plus autodiff bookkeeping.

    Tensors are immutable once written by an op; `grad` is populated by
    `Graph.backward` for leaf tensors with ``requires_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


class _Node:
    """One tape record: op kind, inputs, output, and the backward rule."""

    __slots__ = ("kind", "inputs", "out", "bwd")

    def __init__(self, kind, inputs, out, bwd):
        self.kind = kind
        self.inputs = inputs
        self.out = out
        self.bwd = bwd


def _as2d(name: str, t: Tensor) -> None:
    if t.data.ndim != 2:
        raise ShapeError(f"{name} expects a 2-d tensor, got shape {t.shape}")


class Graph:
    """Tape of op records built during a forward pass.

    With ``record=False`` the graph computes forward values only (inference
    mode); nothing is taped and backward is unavailable.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self._tape: list[_Node] = []
        self._op_outputs: set[int] = set()

    # ------------------------------------------------------------------
    # tape plumbing

    def _emit(self, kind: str, inputs: tuple[Tensor, ...], out_data: np.ndarray, bwd) -> Tensor:
        out = Tensor(out_data)
        if self.record and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            self._tape.append(_Node(kind, inputs, out, bwd))
            self._op_outputs.add(id(out))
        return out

    def backward(self, loss: Tensor, params: list[Tensor] | None = None) -> list[np.ndarray] | None:
        """Accumulate gradients of a scalar loss back through the tape.

        Populates ``t.grad`` on every leaf tensor with ``requires_grad`` that
        lies on a path to the loss. When ``params`` is given, returns their
        gradients in order, substituting zeros for parameters off every path.
        """
        if not self.record:
            raise GraphError("backward on a non-recording graph")
        if loss.data.ndim != 0:
            raise GraphError(f"loss must be a scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.data.dtype)}
        for node in reversed(self._tape):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.bwd(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                acc = grads.get(id(t))
                grads[id(t)] = gi if acc is None else acc + gi
        # only leaves keep a .grad; op outputs are transient
        leafs: dict[int, np.ndarray] = {
            k: v for k, v in grads.items() if k not in self._op_outputs
        }
        seen: set[int] = set()
        for node in self._tape:
            for t in node.inputs:
                if t.requires_grad and id(t) not in self._op_outputs and id(t) not in seen:
                    seen.add(id(t))
                    t.grad = leafs.get(id(t), np.zeros_like(t.data))
        if params is not None:
            return [
                leafs.get(id(p), np.zeros_like(p.data)) for p in params
            ]
        return None

    # ------------------------------------------------------------------
    # arithmetic

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        _as2d("matmul lhs", a)
        _as2d("matmul rhs", b)
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner dims differ: {a.shape} x {b.shape}")
        ad, bd = a.data, b.data
        out = ad @ bd

        def bwd(g):
            return g @ bd.T, ad.T @ g

        return self._emit("matmul", (a, b), out, bwd)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise add; also `[..., D] + [D]` bias broadcast."""
        ad, bd = a.data, b.data
        if ad.shape == bd.shape:
            def bwd(g):
                return g, g
        elif bd.ndim == 1 and ad.ndim >= 1 and ad.shape[-1] == bd.shape[0]:
            axes = tuple(range(ad.ndim - 1))

            def bwd(g):
                return g, g.sum(axis=axes)
        else:
            raise ShapeError(f"add shapes incompatible: {ad.shape} + {bd.shape}")
        return self._emit("add", (a, b), ad + bd, bwd)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape != b.shape:
            raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
        ad, bd = a.data, b.data

        def bwd(g):
            return g * bd, g * ad

        return self._emit("mul", (a, b), ad * bd, bwd)

    def scale(self, x: Tensor, c: float) -> Tensor:
        def bwd(g):
            return (g * c,)

        return self._emit("scale", (x,), x.data * c, bwd)

    def sum(self, x: Tensor) -> Tensor:
        xd = x.data

        def bwd(g):
            return (np.full_like(xd, g),)

        return self._emit("sum", (x,), xd.sum(), bwd)

    def mean(self, x: Tensor) -> Tensor:
        return self.scale(self.sum(x), 1.0 / x.data.size)

    # ------------------------------------------------------------------
    # activations

    def sigmoid(self, x: Tensor) -> Tensor:
        out = expit(x.data)

        def bwd(g):
            return (g * out * (1.0 - out),)

        return self._emit("sigmoid", (x,), out, bwd)

    def tanh(self, x: Tensor) -> Tensor:
        out = np.tanh(x.data)

        def bwd(g):
            return (g * (1.0 - out * out),)

        return self._emit("tanh", (x,), out, bwd)

    def relu(self, x: Tensor) -> Tensor:
        xd = x.data
        out = np.maximum(xd, 0.0)

        def bwd(g):
            return (g * (xd > 0),)

        return self._emit("relu", (x,), out, bwd)

    def activation(self, x: Tensor, kind: str) -> Tensor:
        try:
            return {"sigmoid": self.sigmoid, "tanh": self.tanh, "relu": self.relu}[kind](x)
        except KeyError:
            raise ValueError(f"unknown activation kind {kind!r}") from None

    # ------------------------------------------------------------------
    # shape ops

    def concat(self, parts: list[Tensor], axis: int) -> Tensor:
        if not parts:
            raise ShapeError("concat of zero tensors")
        datas = [p.data for p in parts]
        out = np.concatenate(datas, axis=axis)
        sizes = [d.shape[axis] for d in datas]
        offsets = np.cumsum([0] + sizes)

        def bwd(g):
            return tuple(
                np.ascontiguousarray(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis))
                for i in range(len(datas))
            )

        return self._emit("concat", tuple(parts), out, bwd)

    def slice_cols(self, x: Tensor, start: int, stop: int) -> Tensor:
        _as2d("slice_cols", x)
        xd = x.data
        out = np.ascontiguousarray(xd[:, start:stop])

        def bwd(g):
            full = np.zeros_like(xd)
            full[:, start:stop] = g
            return (full,)

        return self._emit("slice_cols", (x,), out, bwd)

    def gather_rows(self, table: Tensor, indices: np.ndarray) -> Tensor:
        """Row lookup (emb[V, E] indexed by int ids); scatter-add on backward."""
        _as2d("gather_rows table", table)
        idx = np.asarray(indices)
        td = table.data
        out = td[idx]

        def bwd(g):
            grad = np.zeros_like(td)
            np.add.at(grad, idx.reshape(-1), g.reshape(-1, td.shape[1]))
            return (grad,)

        return self._emit("gather_rows", (table,), out, bwd)

    def stack_steps(self, steps: list[Tensor]) -> Tensor:
        """Stack T tensors of shape [B, D] into [B, T, D]."""
        out = np.stack([s.data for s in steps], axis=1)

        def bwd(g):
            return tuple(np.ascontiguousarray(g[:, t, :]) for t in range(len(steps)))

        return self._emit("stack_steps", tuple(steps), out, bwd)

    def where_rows(self, cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
        """Per-row select: rows with cond take `a`, others `b`. cond is data, not a Tensor."""
        if a.shape != b.shape:
            raise ShapeError(f"where_rows shapes differ: {a.shape} vs {b.shape}")
        c = np.asarray(cond, dtype=bool)[:, None]
        out = np.where(c, a.data, b.data)

        def bwd(g):
            return g * c, g * ~c

        return self._emit("where_rows", (a, b), out, bwd)

    def dropout(self, x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
        """Inverted dropout; identity when p == 0."""
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {p}")
        if p == 0.0:
            return x
        mask = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
        out = x.data * mask

        def bwd(g):
            return (g * mask,)

        return self._emit("dropout", (x,), out, bwd)

    # ------------------------------------------------------------------
    # network-specific ops

    def conv1d_valid(self, x: Tensor, filters: Tensor, bias: Tensor | None = None) -> Tensor:
        """Valid 1-d convolution over time, stride 1.

        x: [L, E] or batched [B, L, E]; filters: [W, E, F]; out: [(L-W+1), F]
        (batched: [B, L-W+1, F]). Output position t, filter f is the window
        dot product plus bias.
        """
        if filters.data.ndim != 3:
            raise ShapeError(f"filters must be [W, E, F], got {filters.shape}")
        W, E, F = filters.shape
        xd = x.data
        batched = xd.ndim == 3
        if not batched and xd.ndim != 2:
            raise ShapeError(f"input must be [L, E] or [B, L, E], got {xd.shape}")
        L = xd.shape[-2]
        if xd.shape[-1] != E:
            raise ShapeError(f"embedding dims differ: input {xd.shape} vs filters {filters.shape}")
        if L < W:
            raise ShapeError(f"window length {W} exceeds sequence length {L}; pad the input first")
        Lout = L - W + 1
        f2d = filters.data.reshape(W * E, F)
        # im2col: [*, Lout, W*E] patches, row-major over (window pos, embed dim)
        win = np.lib.stride_tricks.sliding_window_view(xd, W, axis=xd.ndim - 2)
        patches = np.ascontiguousarray(np.moveaxis(win, -1, -2)).reshape(
            (xd.shape[0], Lout, W * E) if batched else (Lout, W * E)
        )
        out = patches @ f2d
        if bias is not None:
            if bias.shape != (F,):
                raise ShapeError(f"bias must be [{F}], got {bias.shape}")
            out = out + bias.data

        def bwd(g):
            if batched:
                d_f2d = np.einsum("blk,blf->kf", patches, g)
            else:
                d_f2d = patches.T @ g
            d_patches = g @ f2d.T
            dx = np.zeros_like(xd)
            dp = d_patches.reshape(g.shape[:-1] + (W, E))
            for w in range(W):
                if batched:
                    dx[:, w : w + Lout, :] += dp[:, :, w, :]
                else:
                    dx[w : w + Lout, :] += dp[:, w, :]
            d_bias = None
            if bias is not None:
                d_bias = g.sum(axis=tuple(range(g.ndim - 1)))
            return (dx, d_f2d.reshape(W, E, F), d_bias)

        inputs = (x, filters) if bias is None else (x, filters, bias)
        return self._emit("conv1d_valid", inputs, out, bwd)

    def max_over_time(self, x: Tensor) -> Tensor:
        """Columnwise max over the time axis: [T, F] -> [F] or [B, T, F] -> [B, F].

        Backward routes the gradient to the first maximal index of each column.
        """
        xd = x.data
        if xd.ndim == 2:
            idx = np.argmax(xd, axis=0)  # first occurrence on ties
            cols = np.arange(xd.shape[1])
            out = xd[idx, cols]

            def bwd(g):
                dx = np.zeros_like(xd)
                dx[idx, cols] = g
                return (dx,)

        elif xd.ndim == 3:
            idx = np.argmax(xd, axis=1)
            out = np.take_along_axis(xd, idx[:, None, :], axis=1)[:, 0, :]

            def bwd(g):
                dx = np.zeros_like(xd)
                np.put_along_axis(dx, idx[:, None, :], g[:, None, :], axis=1)
                return (dx,)

        else:
            raise ShapeError(f"max_over_time expects [T, F] or [B, T, F], got {xd.shape}")
        return self._emit("max_over_time", (x,), out, bwd)

    def softmax_cross_entropy(self, logits: Tensor, target: int) -> Tensor:
        """Stabilized -log softmax(logits)[target] for a single logit vector."""
        zd = logits.data
        if zd.ndim != 1:
            raise ShapeError(f"logits must be 1-d, got {zd.shape}")
        if not 0 <= target < zd.shape[0]:
            raise IndexError(f"target {target} out of range for {zd.shape[0]} classes")
        z = zd - zd.max()
        lse = np.log(np.exp(z).sum())
        p = np.exp(z - lse)
        out = np.asarray(lse - z[target], dtype=zd.dtype)

        def bwd(g):
            d = p.copy()
            d[target] -= 1.0
            return (g * d,)

        return self._emit("softmax_cross_entropy", (logits,), out, bwd)

    def cross_entropy_rowsum(
        self, logits: Tensor, targets: np.ndarray, mask: np.ndarray | None = None
    ) -> Tensor:
        """Sum of per-row cross-entropies over unmasked rows. logits [N, C]."""
        zd = logits.data
        _as2d("cross_entropy_rowsum logits", logits)
        t = np.asarray(targets)
        if t.shape != (zd.shape[0],):
            raise ShapeError(f"targets shape {t.shape} does not match logits {zd.shape}")
        if t.min() < 0 or t.max() >= zd.shape[1]:
            raise IndexError(f"target out of range for {zd.shape[1]} classes")
        m = np.ones(zd.shape[0], dtype=zd.dtype) if mask is None else np.asarray(mask, dtype=zd.dtype)
        z = zd - zd.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
        rows = np.arange(zd.shape[0])
        ce = (lse[:, 0] - z[rows, t]) * m
        out = np.asarray(ce.sum(), dtype=zd.dtype)
        p = np.exp(z - lse)

        def bwd(g):
            d = p.copy()
            d[rows, t] -= 1.0
            return (g * d * m[:, None],)

        return self._emit("cross_entropy_rowsum", (logits,), out, bwd)

    def masked_softmax(self, scores: Tensor, mask: np.ndarray) -> Tensor:
        """Row softmax over positions where mask is true; masked entries get weight 0."""
        sd = scores.data
        _as2d("masked_softmax scores", scores)
        m = np.asarray(mask, dtype=bool)
        if m.shape != sd.shape:
            raise ShapeError(f"mask shape {m.shape} does not match scores {sd.shape}")
        if not m.any(axis=1).all():
            raise ShapeError("masked_softmax: some row has no unmasked position")
        neg = np.where(m, sd, -np.inf)
        z = neg - neg.max(axis=1, keepdims=True)
        e = np.where(m, np.exp(z), 0.0).astype(sd.dtype)
        out = e / e.sum(axis=1, keepdims=True)

        def bwd(g):
            dot = (g * out).sum(axis=1, keepdims=True)
            return (out * (g - dot),)

        return self._emit("masked_softmax", (scores,), out, bwd)

    def attend_scores(self, query: Tensor, keys: Tensor) -> Tensor:
        """Per-timestep dot products: query [B, D] x keys [B, T, D] -> [B, T]."""
        qd, kd = query.data, keys.data
        if qd.ndim != 2 or kd.ndim != 3 or qd.shape[0] != kd.shape[0] or qd.shape[1] != kd.shape[2]:
            raise ShapeError(f"attend_scores shapes incompatible: {qd.shape} vs {kd.shape}")
        out = np.einsum("bd,btd->bt", qd, kd)

        def bwd(g):
            return np.einsum("bt,btd->bd", g, kd), np.einsum("bt,bd->btd", g, qd)

        return self._emit("attend_scores", (query, keys), out, bwd)

    def attend_mix(self, weights: Tensor, keys: Tensor) -> Tensor:
        """Convex mix of keys: weights [B, T] x keys [B, T, D] -> [B, D]."""
        wd, kd = weights.data, keys.data
        if wd.ndim != 2 or kd.ndim != 3 or wd.shape != kd.shape[:2]:
            raise ShapeError(f"attend_mix shapes incompatible: {wd.shape} vs {kd.shape}")
        out = np.einsum("bt,btd->bd", wd, kd)

        def bwd(g):
            return np.einsum("bd,btd->bt", g, kd), np.einsum("bt,bd->btd", wd, g)

        return self._emit("attend_mix", (weights, keys), out, bwd)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain stabilized softmax on data (no tape); row-wise for 2-d input."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Stabilized log-softmax on data in float64 (decode-time scoring)."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
