"""Minimal dense tensor kernels with reverse-mode gradients.

Double precision throughout, up to 3 dims, row major. Every op records a
backward closure; ``backward()`` on a scalar loss walks the graph in
reverse topological order. The contract (checked by the test suite, not
at runtime): analytic gradients match central finite differences at step
1e-6 with relative error below 1e-4 for every composite the models build.
Kernels are plain numpy, so identical inputs give bit-identical outputs
on a single thread.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ShapeError(f"tensors are limited to 3 dims, got shape {arr.shape}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data)


def _tracked(*parents: Tensor) -> bool:
    return any(p.requires_grad for p in parents)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _tracked(*parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * s)

    return _make(a.data * s, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return _make(a.data * mask, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D or batched 3-D matrix product (numpy matmul semantics).

    The (batch, r, k) x (k, p) forward stays per-slice: every slice is an
    identical fixed-shape GEMM call, so a row's result cannot depend on
    what else is in the batch (BLAS results vary with the M dimension).
    The backward pass has no such contract and uses flattened GEMMs.
    """
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dims: {a.data.shape} x {b.data.shape}")
    if a.data.ndim == 3 and b.data.ndim == 2:
        bsz, r, k = a.data.shape
        data = np.matmul(a.data, b.data)

        def backward(g):
            p = g.shape[-1]
            g2 = np.ascontiguousarray(g).reshape(bsz * r, p)
            if a.requires_grad:
                a._accumulate((g2 @ b.data.T).reshape(a.data.shape))
            if b.requires_grad:
                b._accumulate(a.data.reshape(bsz * r, k).T @ g2)

        return _make(data, (a, b), backward)
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), backward)


def rowwise_matmul(a: Tensor, b: Tensor) -> Tensor:
    """(rows, k) x (k, p) where each row is computed in its own
    fixed-shape GEMM call, independent of the number of rows."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"rowwise_matmul needs 2-dim inputs: {a.data.shape} x {b.data.shape}")
    rows = a.data.shape[0]
    out3 = matmul(reshape(a, (rows, 1, a.data.shape[1])), b)
    return reshape(out3, (rows, b.data.shape[1]))


def transpose_last2(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(np.swapaxes(g, -1, -2))

    return _make(np.swapaxes(a.data, -1, -2), (a,), backward)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax over the last axis, max-shifted for stability."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if a.requires_grad:
            inner = (g * s).sum(axis=-1, keepdims=True)
            a._accumulate(s * (g - inner))

    return _make(s, (a,), backward)


def layer_norm(x: Tensor, ln_scale: Tensor, ln_bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization over the last axis with population variance."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    data = xhat * ln_scale.data + ln_bias.data

    def backward(g):
        if ln_scale.requires_grad:
            axes = tuple(range(g.ndim - 1))
            ln_scale._accumulate((g * xhat).sum(axis=axes))
        if ln_bias.requires_grad:
            axes = tuple(range(g.ndim - 1))
            ln_bias._accumulate(g.sum(axis=axes))
        if x.requires_grad:
            gx_hat = g * ln_scale.data
            m1 = gx_hat.mean(axis=-1, keepdims=True)
            m2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv_std * (gx_hat - m1 - xhat * m2))

    return _make(data, (x, ln_scale, ln_bias), backward)


def concat_last(parts: list[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    data = np.concatenate([p.data for p in parts], axis=-1)
    widths = [p.data.shape[-1] for p in parts]

    def backward(g):
        offset = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                p._accumulate(g[..., offset : offset + w])
            offset += w

    return _make(data, tuple(parts), backward)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), backward)


def take_hop(a: Tensor, k: int) -> Tensor:
    """Select hop row k: (b, K+1, d) -> (b, d), or (K+1, d) -> (1, d)."""
    if a.data.ndim == 3:
        data = a.data[:, k, :]

        def backward(g):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                full[:, k, :] = g
                a._accumulate(full)

    elif a.data.ndim == 2:
        data = a.data[k : k + 1, :]

        def backward(g):
            if a.requires_grad:
                full = np.zeros_like(a.data)
                full[k : k + 1, :] = g
                a._accumulate(full)

    else:
        raise ShapeError(f"take_hop needs 2- or 3-dim input, got {a.data.shape}")
    return _make(data, (a,), backward)


def take_col(a: Tensor, k: int) -> Tensor:
    """Select column k of a 2-D tensor, keeping dims: (b, c) -> (b, 1)."""
    if a.data.ndim != 2:
        raise ShapeError(f"take_col needs a 2-dim input, got {a.data.shape}")
    data = a.data[:, k : k + 1]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, k : k + 1] = g
            a._accumulate(full)

    return _make(data, (a,), backward)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Pick a[i, idx[i]] for every row i: (r, c), (r,) -> (r,)."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(a.data.shape[0])
    data = a.data[rows, idx]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, (rows, idx), g)
            a._accumulate(full)

    return _make(data, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, float(g)))

    return _make(np.asarray(a.data.sum()), (a,), backward)


def spmm(adj_csr, adj_t_csr, x: Tensor) -> Tensor:
    """Sparse (CSR) by dense product with a constant matrix."""
    data = adj_csr @ x.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(adj_t_csr @ g)

    return _make(data, (x,), backward)


def gradients(loss: Tensor, named_params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Backprop from a scalar loss; returns gradient copies per name."""
    for p in named_params.values():
        p.zero_grad()
    loss.backward()
    return {
        name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
        for name, p in named_params.items()
    }
