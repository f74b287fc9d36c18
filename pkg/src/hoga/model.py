"""Hop-attention network, baselines, parameter init, and checkpoints.

Per node, the model sees only that node's stack of hop features H with
shape (K+1, d) after the input projection. One gated self-attention
layer computes

    Q = H Wq,  Km = H Wk,  U = H Wu,  V = H Wv
    S = row_softmax(Q Km^T)
    H_hat = ReLU(LayerNorm(U * (S V)))        (* is elementwise)

so H_hat[k] = sum_j S[k, j] (H[k] Wu) * (H[j] Wv): second-order
interactions across hops. The readout weighs hops 1..K with

    c_k = softmax_k(alpha^T [H_hat[0] || H_hat[k]])
    y   = H_hat[0] + sum_k c_k H_hat[k]

(hop 0 enters unweighted and is excluded from the softmax index set).
Batches stack nodes on the leading axis; no op mixes rows, so each
node's output is independent of every other row in the batch.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from hoga.graph import NormalizedAdjacency
from hoga import tensor as T
from hoga.tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dim: int
    hops: int
    num_classes: int = 4
    num_layers: int = 1
    head: str = "classifier"  # or "regressor"
    scaled_scores: bool = False  # optional 1/sqrt(d) inside the score softmax
    layer_norm_eps: float = 1e-5

    @property
    def out_dim(self) -> int:
        return self.num_classes if self.head == "classifier" else 1


@dataclass(frozen=True)
class AttentionReport:
    """Per-node hop readout scores c_1..c_K, plus the self-attention rows
    per layer when requested. Each c row and each S row sums to 1."""

    hop_scores: np.ndarray  # (b, K)
    self_attention: np.ndarray | None = None  # (L, b, K+1, K+1)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return T.parameter(rng.uniform(-bound, bound, size=shape))


@dataclass
class AttentionLayerParams:
    w_u: Tensor
    w_v: Tensor
    w_q: Tensor
    w_k: Tensor
    ln_scale: Tensor
    ln_bias: Tensor


@dataclass
class HogaParams:
    w_in: Tensor
    layers: list[AttentionLayerParams]
    alpha: Tensor  # (2d, 1), zero-initialized: first-step readout is uniform
    head_w: Tensor
    head_b: Tensor

    def named(self) -> list[tuple[str, Tensor]]:
        out = [("w_in", self.w_in)]
        for i, layer in enumerate(self.layers):
            for f in ("w_u", "w_v", "w_q", "w_k", "ln_scale", "ln_bias"):
                out.append((f"layer{i}.{f}", getattr(layer, f)))
        out += [("alpha", self.alpha), ("head_w", self.head_w), ("head_b", self.head_b)]
        return out


def init_hoga_params(config: ModelConfig, seed: int) -> HogaParams:
    rng = np.random.default_rng(seed)
    d0, d = config.input_dim, config.hidden_dim
    layers = []
    for _ in range(config.num_layers):
        layers.append(
            AttentionLayerParams(
                w_u=_glorot(rng, d, d, (d, d)),
                w_v=_glorot(rng, d, d, (d, d)),
                w_q=_glorot(rng, d, d, (d, d)),
                w_k=_glorot(rng, d, d, (d, d)),
                ln_scale=T.parameter(np.ones(d)),
                ln_bias=T.parameter(np.zeros(d)),
            )
        )
    return HogaParams(
        w_in=_glorot(rng, d0, d, (d0, d)),
        layers=layers,
        alpha=T.parameter(np.zeros((2 * d, 1))),
        head_w=_glorot(rng, d, config.out_dim, (d, config.out_dim)),
        head_b=T.parameter(np.zeros(config.out_dim)),
    )


def gated_self_attention(
    h: Tensor,
    layer: AttentionLayerParams,
    config: ModelConfig,
    collect: list | None = None,
    disable_norm_relu: bool = False,
) -> Tensor:
    """One gated self-attention layer over (b, K+1, d) or a single (K+1, d).

    ``disable_norm_relu`` is a test hook exposing the raw gate U * (S V).
    """
    q = T.matmul(h, layer.w_q)
    km = T.matmul(h, layer.w_k)
    u = T.matmul(h, layer.w_u)
    v = T.matmul(h, layer.w_v)
    scores = T.matmul(q, T.transpose_last2(km))
    if config.scaled_scores:
        scores = T.scale(scores, 1.0 / np.sqrt(config.hidden_dim))
    s = T.softmax_rows(scores)
    if collect is not None:
        collect.append(s.data.copy())
    gated = T.mul(u, T.matmul(s, v))
    if disable_norm_relu:
        return gated
    return T.relu(T.layer_norm(gated, layer.ln_scale, layer.ln_bias, config.layer_norm_eps))


def attentive_readout(hhat: Tensor, alpha: Tensor) -> tuple[Tensor, Tensor]:
    """Collapse (b, K+1, d) to (b, d); returns (y, c) with c of shape (b, K).

    K = 0 has no hops to weigh; y is hop 0 and c is empty (documented
    deviation, the score denominator is undefined there).
    """
    k_hops = hhat.data.shape[-2] - 1
    h0 = T.take_hop(hhat, 0)
    if k_hops == 0:
        return h0, Tensor(np.zeros((h0.data.shape[0], 0)))
    cols = []
    hks = []
    for k in range(1, k_hops + 1):
        hk = T.take_hop(hhat, k)
        hks.append(hk)
        cols.append(T.rowwise_matmul(T.concat_last([h0, hk]), alpha))
    c = T.softmax_rows(T.concat_last(cols))
    y = h0
    for k, hk in enumerate(hks):
        y = T.add(y, T.mul(T.take_col(c, k), hk))
    return y, c


def hoga_forward(
    batch,
    params: HogaParams,
    config: ModelConfig,
    want_attention: bool = False,
    disable_norm_relu: bool = False,
) -> tuple[Tensor, AttentionReport]:
    """Full forward pass on a (b, K+1, d0) batch of hop stacks."""
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.data.ndim != 3 or x.data.shape[2] != config.input_dim:
        raise T.ShapeError(f"batch shape {x.data.shape} does not match d0={config.input_dim}")
    h = T.matmul(x, params.w_in)
    collect: list | None = [] if want_attention else None
    for layer in params.layers:
        h = gated_self_attention(h, layer, config, collect, disable_norm_relu)
    y, c = attentive_readout(h, params.alpha)
    out = T.add(T.rowwise_matmul(y, params.head_w), params.head_b)
    report = AttentionReport(
        hop_scores=c.data.copy(),
        self_attention=np.stack(collect) if want_attention else None,
    )
    return out, report


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


@dataclass
class GcnParams:
    weights: list[Tensor]
    biases: list[Tensor]
    head_w: Tensor
    head_b: Tensor

    def named(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out += [(f"conv{i}.w", w), (f"conv{i}.b", b)]
        out += [("head_w", self.head_w), ("head_b", self.head_b)]
        return out


def init_gcn_params(config: ModelConfig, seed: int) -> GcnParams:
    rng = np.random.default_rng(seed)
    dims = [config.input_dim] + [config.hidden_dim] * config.num_layers
    weights, biases = [], []
    for din, dout in zip(dims[:-1], dims[1:]):
        weights.append(_glorot(rng, din, dout, (din, dout)))
        biases.append(T.parameter(np.zeros(dout)))
    return GcnParams(
        weights=weights,
        biases=biases,
        head_w=_glorot(rng, config.hidden_dim, config.out_dim, (config.hidden_dim, config.out_dim)),
        head_b=T.parameter(np.zeros(config.out_dim)),
    )


def gcn_forward(adj: NormalizedAdjacency, x, params: GcnParams) -> Tensor:
    """Message-passing baseline: x <- ReLU(Â x W + b) per layer, then head.

    Aggregation is the normalized-sum over neighbors encoded in Â; the
    update is the linear+ReLU map.
    """
    h = x if isinstance(x, Tensor) else Tensor(x)
    at = adj.transposed()
    for w, b in zip(params.weights, params.biases):
        h = T.relu(T.add(T.matmul(T.spmm(adj.matrix, at, h), w), b))
    return T.add(T.matmul(h, params.head_w), params.head_b)


@dataclass
class HopMlpParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    head_w: Tensor
    head_b: Tensor

    def named(self) -> list[tuple[str, Tensor]]:
        return [
            ("w1", self.w1),
            ("b1", self.b1),
            ("w2", self.w2),
            ("b2", self.b2),
            ("head_w", self.head_w),
            ("head_b", self.head_b),
        ]


def init_hop_mlp_params(config: ModelConfig, seed: int) -> HopMlpParams:
    rng = np.random.default_rng(seed)
    flat = config.input_dim * (config.hops + 1)
    d = config.hidden_dim
    return HopMlpParams(
        w1=_glorot(rng, flat, d, (flat, d)),
        b1=T.parameter(np.zeros(d)),
        w2=_glorot(rng, d, d, (d, d)),
        b2=T.parameter(np.zeros(d)),
        head_w=_glorot(rng, d, config.out_dim, (d, config.out_dim)),
        head_b=T.parameter(np.zeros(config.out_dim)),
    )


def hop_mlp_forward(batch, params: HopMlpParams) -> Tensor:
    """SIGN-style baseline: concatenate hop rows, 2-layer ReLU MLP, head."""
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.data.ndim == 3:
        b, k1, d0 = x.data.shape
        x = T.reshape(x, (b, k1 * d0))
    h = T.relu(T.add(T.matmul(x, params.w1), params.b1))
    h = T.relu(T.add(T.matmul(h, params.w2), params.b2))
    return T.add(T.matmul(h, params.head_w), params.head_b)


# ---------------------------------------------------------------------------
# Parameter flattening and checkpoints
# ---------------------------------------------------------------------------

PARAM_INITS = {
    "hoga": init_hoga_params,
    "hop_mlp": init_hop_mlp_params,
    "gcn": init_gcn_params,
}

FORWARD_KINDS = ("hoga", "hop_mlp", "gcn")

CHECKPOINT_VERSION = 1


def flatten_params(params) -> np.ndarray:
    return np.concatenate([t.data.ravel() for _, t in params.named()])


def load_flat_params(params, vec: np.ndarray) -> None:
    """Write a flat vector back into the parameter tensors, in place."""
    offset = 0
    for _, t in params.named():
        size = t.data.size
        t.data[...] = vec[offset : offset + size].reshape(t.data.shape)
        offset += size
    if offset != vec.size:
        raise T.ShapeError(f"flat vector has {vec.size} entries, params need {offset}")


def num_params(params) -> int:
    return sum(t.data.size for _, t in params.named())


def save_checkpoint(path, kind: str, config: ModelConfig, seed: int, params) -> None:
    """JSON header (config, seed, shapes, version) + float64 LE blob."""
    header = {
        "version": CHECKPOINT_VERSION,
        "model": kind,
        "config": asdict(config),
        "seed": seed,
        "params": [[name, list(t.data.shape)] for name, t in params.named()],
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = np.ascontiguousarray(flatten_params(params), dtype="<f8").tobytes()
    Path(path).write_bytes(struct.pack("<I", len(head)) + head + blob)


@dataclass(frozen=True)
class Checkpoint:
    kind: str
    config: ModelConfig
    seed: int
    params: object


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    (hlen,) = struct.unpack_from("<I", raw)
    header = json.loads(raw[4 : 4 + hlen].decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header.get('version')}")
    kind = header["model"]
    config = ModelConfig(**header["config"])
    params = PARAM_INITS[kind](config, header["seed"])
    expect = [[name, list(t.data.shape)] for name, t in params.named()]
    if expect != header["params"]:
        raise ValueError("checkpoint parameter shapes do not match its config")
    vec = np.frombuffer(raw, dtype="<f8", offset=4 + hlen)
    load_flat_params(params, np.ascontiguousarray(vec))
    return Checkpoint(kind, config, header["seed"], params)
