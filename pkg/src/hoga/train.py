"""Losses, Adam, data-parallel node training, evaluation, scaling bench.

Because every node's representation depends only on its own hop stack,
a batch can be split across stateless worker processes that share the
read-only hop tensor (fork, copy-on-write). Per step the coordinator
broadcasts the flat parameter vector, workers return partial loss and
gradient sums over their shard, and the coordinator reduces them in
fixed worker order before a single Adam update. Gradients are averaged
over the batch (not summed), so the step size is batch-size invariant.
With workers=1 everything runs in-process and is bit-reproducible for a
fixed seed; other worker counts differ only by float reassociation in
the reduction.

BLAS pools are pinned to one thread for the whole run (threadpoolctl):
determinism, and the scaling bench must measure worker scaling rather
than BLAS scaling.
"""

from __future__ import annotations

import multiprocessing as mp
import time
from dataclasses import dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from hoga import model as M
from hoga import tensor as T
from hoga.graph import NodeFeatures, NormalizedAdjacency
from hoga.hopfeat import HopTensor
from hoga.tensor import Tensor


class NumericError(RuntimeError):
    """Non-finite loss or gradient; training aborts with a diagnostic."""


TASK_NODE_CLASS4 = "node_class4"
TASK_GRAPH_REGRESS = "graph_regress"


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainConfig:
    task: str = TASK_NODE_CLASS4
    model: str = "hoga"  # hoga | hop_mlp (gcn trains full-batch, see train_gcn)
    hops: int | None = None  # default 8 for functional reasoning, 5 for regression
    hidden_dim: int = 256
    learning_rate: float = 1e-4
    epochs: int = 300
    batch_size: int = 512
    workers: int = 1
    seed: int = 0
    attention_layers: int = 1
    num_classes: int = 4
    class_weighting: bool = True  # inverse-frequency weights (Plain dominates)
    scaled_scores: bool = False
    adam: AdamConfig = field(default_factory=AdamConfig)

    def __post_init__(self):
        if self.hops is None:
            self.hops = 8 if self.task == TASK_NODE_CLASS4 else 5

    def model_config(self, input_dim: int) -> M.ModelConfig:
        return M.ModelConfig(
            input_dim=input_dim,
            hidden_dim=self.hidden_dim,
            hops=self.hops,
            num_classes=self.num_classes,
            num_layers=self.attention_layers,
            head="classifier" if self.task == TASK_NODE_CLASS4 else "regressor",
            scaled_scores=self.scaled_scores,
        )


@dataclass
class NodeDataset:
    """Hop-feature rows plus node-aligned targets (class ids or reals)."""

    features: np.ndarray  # (n, K+1, d0)
    labels: np.ndarray  # (n,)

    @classmethod
    def from_hop_tensor(cls, t: HopTensor, labels: np.ndarray) -> "NodeDataset":
        labels = np.asarray(labels)
        if labels.shape[0] != t.num_nodes:
            raise ValueError(
                f"{labels.shape[0]} labels for {t.num_nodes} nodes"
            )
        return cls(t.data, labels)

    @property
    def num_nodes(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class Metrics:
    overall_accuracy: float | None
    per_class_accuracy: tuple | None
    mape_value: float | None
    loss_curve: tuple


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    accuracy: float | None


@dataclass
class TrainResult:
    params: object
    model_config: M.ModelConfig
    history: list[EpochStats]
    class_weights: np.ndarray | None
    train_seconds: float  # epoch loop only; excludes worker pool startup

    @property
    def loss_curve(self) -> list[float]:
        return [h.loss for h in self.history]


# ---------------------------------------------------------------------------
# Losses and metrics
# ---------------------------------------------------------------------------


def cross_entropy_parts(
    logits: Tensor, targets: np.ndarray, class_weights: np.ndarray | None = None
) -> tuple[Tensor, float]:
    """Weighted-sum form: (sum_i w_i * nll_i, sum_i w_i).

    The mean loss is the ratio; keeping the parts separate lets shards be
    reduced exactly across workers.
    """
    targets = np.asarray(targets, dtype=np.int64)
    c = logits.data.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise ValueError(f"target class outside 0..{c - 1}")
    probs = T.softmax_rows(logits)
    picked = T.gather_rows(probs, targets)
    nll = T.scale(T.log(picked), -1.0)
    if class_weights is not None:
        w = np.asarray(class_weights, dtype=np.float64)[targets]
        loss_sum = T.sum_all(T.mul(nll, Tensor(w)))
        weight_sum = float(w.sum())
    else:
        loss_sum = T.sum_all(nll)
        weight_sum = float(targets.shape[0])
    return loss_sum, weight_sum


def cross_entropy(
    logits: Tensor, targets: np.ndarray, class_weights: np.ndarray | None = None
) -> Tensor:
    """Mean over the batch of -log softmax(logits)[target], optionally
    weighted per class."""
    loss_sum, weight_sum = cross_entropy_parts(logits, targets, class_weights)
    return T.scale(loss_sum, 1.0 / weight_sum)


def squared_error_parts(pred: Tensor, targets: np.ndarray) -> tuple[Tensor, float]:
    targets = np.asarray(targets, dtype=np.float64).reshape(-1, 1)
    diff = T.add(pred, Tensor(-targets))
    return T.sum_all(T.mul(diff, diff)), float(targets.shape[0])


def mape(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean absolute percentage error: (1/g) sum |(y - yhat) / y| * 100."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if np.any(truth == 0):
        raise ValueError("MAPE undefined: ground-truth value is zero")
    return float(np.mean(np.abs((truth - pred) / truth)) * 100.0)


def inverse_frequency_weights(labels: np.ndarray, num_classes: int) -> np.ndarray:
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes)
    present = counts > 0
    w = np.zeros(num_classes, dtype=np.float64)
    w[present] = counts.sum() / (present.sum() * counts[present])
    return w


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class Adam:
    """Standard Adam with bias correction; state carries m, v, t."""

    def __init__(self, tensors: list[Tensor], lr: float, config: AdamConfig = AdamConfig()):
        self.tensors = tensors
        self.lr = lr
        self.beta1, self.beta2, self.eps = config.beta1, config.beta2, config.eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in tensors]
        self.v = [np.zeros_like(p.data) for p in tensors]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.tensors):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter {i} at step {self.t}")
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * (g * g)
            mhat = self.m[i] / (1 - b1**self.t)
            vhat = self.v[i] / (1 - b2**self.t)
            p.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


# ---------------------------------------------------------------------------
# Shard computation (single code path for in-process and worker execution)
# ---------------------------------------------------------------------------


def _forward(kind: str, params, mcfg: M.ModelConfig, batch: np.ndarray) -> Tensor:
    if kind == "hoga":
        out, _ = M.hoga_forward(batch, params, mcfg)
        return out
    if kind == "hop_mlp":
        return M.hop_mlp_forward(batch, params)
    raise ValueError(f"unknown sharded model kind {kind!r}")


def _shard_stats(
    kind: str,
    params,
    mcfg: M.ModelConfig,
    task: str,
    feats: np.ndarray,
    labels: np.ndarray,
    idx: np.ndarray,
    class_weights: np.ndarray | None,
) -> tuple[float, float, np.ndarray, int]:
    """Forward+backward over one shard; returns unnormalized sums."""
    for _, t in params.named():
        t.zero_grad()
    out = _forward(kind, params, mcfg, feats[idx])
    y = labels[idx]
    if task == TASK_NODE_CLASS4:
        loss_sum, weight_sum = cross_entropy_parts(out, y, class_weights)
        correct = int((out.data.argmax(axis=1) == y).sum()) if idx.size else 0
    else:
        loss_sum, weight_sum = squared_error_parts(out, y)
        correct = 0
    loss_sum.backward()
    grads = np.concatenate(
        [
            (t.grad if t.grad is not None else np.zeros_like(t.data)).ravel()
            for _, t in params.named()
        ]
    )
    return float(loss_sum.data), weight_sum, grads, correct


def _worker_main(conn, kind, mcfg, task, feats, labels, class_weights):
    threadpool_limits(limits=1)
    params = M.PARAM_INITS[kind](mcfg, seed=0)
    try:
        while True:
            msg = conn.recv()
            if msg is None:
                break
            if msg == "ping":
                conn.send("pong")
                continue
            vec, idx = msg
            M.load_flat_params(params, vec)
            conn.send(_shard_stats(kind, params, mcfg, task, feats, labels, idx, class_weights))
    except (EOFError, KeyboardInterrupt):
        pass
    finally:
        conn.close()


class WorkerPool:
    """Stateless fork workers over the read-only dataset; the coordinator
    is the only synchronization point and reduces in fixed worker order."""

    def __init__(self, kind, mcfg, task, feats, labels, class_weights, n_workers: int):
        ctx = mp.get_context("fork")
        self.conns = []
        self.procs = []
        for _ in range(n_workers):
            parent, child = ctx.Pipe()
            proc = ctx.Process(
                target=_worker_main,
                args=(child, kind, mcfg, task, feats, labels, class_weights),
                daemon=True,
            )
            proc.start()
            child.close()
            self.conns.append(parent)
            self.procs.append(proc)

    def ping(self) -> None:
        for conn in self.conns:
            conn.send("ping")
        for conn in self.conns:
            if conn.recv() != "pong":
                raise RuntimeError("worker handshake failed")

    def step(self, vec: np.ndarray, shards: list[np.ndarray]) -> list[tuple]:
        for conn, idx in zip(self.conns, shards):
            conn.send((vec, idx))
        try:
            return [conn.recv() for conn in self.conns]
        except EOFError as exc:
            raise RuntimeError("training worker died") from exc

    def close(self) -> None:
        for conn in self.conns:
            try:
                conn.send(None)
            except (BrokenPipeError, OSError):
                pass
        for proc in self.procs:
            proc.join(timeout=10)
        for conn in self.conns:
            conn.close()


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


def train(data: NodeDataset, config: TrainConfig) -> TrainResult:
    """Mini-batch training with seeded shuffles and fixed-order reduction."""
    n = data.num_nodes
    if n == 0:
        raise ValueError("empty dataset")
    feats = data.features
    labels = data.labels
    if config.hops != feats.shape[1] - 1:
        raise ValueError(
            f"config expects K={config.hops}, hop tensor has K={feats.shape[1] - 1}"
        )
    mcfg = config.model_config(feats.shape[2])
    if config.task == TASK_NODE_CLASS4:
        labels = np.asarray(labels, dtype=np.int64)
        class_weights = (
            inverse_frequency_weights(labels, config.num_classes)
            if config.class_weighting
            else None
        )
    else:
        labels = np.asarray(labels, dtype=np.float64)
        class_weights = None

    params = M.PARAM_INITS[config.model](mcfg, config.seed)
    named = params.named()
    tensors = [t for _, t in named]
    adam = Adam(tensors, config.learning_rate, config.adam)
    rng = np.random.default_rng(config.seed)
    pool = None
    history: list[EpochStats] = []
    try:
        with threadpool_limits(limits=1):
            if config.workers > 1:
                pool = WorkerPool(
                    config.model, mcfg, config.task, feats, labels, class_weights, config.workers
                )
                pool.ping()
            started = time.perf_counter()
            for epoch in range(config.epochs):
                order = rng.permutation(n)
                ep_loss, ep_weight, ep_correct = 0.0, 0.0, 0
                for start in range(0, n, config.batch_size):
                    batch_idx = order[start : start + config.batch_size]
                    shards = np.array_split(batch_idx, config.workers)
                    if pool is not None:
                        results = pool.step(M.flatten_params(params), shards)
                    else:
                        results = [
                            _shard_stats(
                                config.model, params, mcfg, config.task,
                                feats, labels, shards[0], class_weights,
                            )
                        ]
                    loss_sum = 0.0
                    weight_sum = 0.0
                    grad = None
                    for ls, ws, gv, corr in results:  # fixed worker order
                        loss_sum += ls
                        weight_sum += ws
                        grad = gv if grad is None else grad + gv
                        ep_correct += corr
                    if not np.isfinite(loss_sum):
                        raise NumericError(f"non-finite loss at epoch {epoch}")
                    grad /= weight_sum
                    offset = 0
                    for t in tensors:
                        size = t.data.size
                        t.grad = grad[offset : offset + size].reshape(t.data.shape)
                        offset += size
                    adam.step()
                    ep_loss += loss_sum
                    ep_weight += weight_sum
                acc = ep_correct / n if config.task == TASK_NODE_CLASS4 else None
                history.append(EpochStats(epoch, ep_loss / ep_weight, acc))
            train_seconds = time.perf_counter() - started
    finally:
        if pool is not None:
            pool.close()
    return TrainResult(params, mcfg, history, class_weights, train_seconds)


def train_gcn(
    adj: NormalizedAdjacency,
    feats: NodeFeatures,
    labels: np.ndarray,
    config: TrainConfig,
    conv_layers: int = 5,
) -> TrainResult:
    """Full-batch baseline training (topology-coupled, not shardable)."""
    labels = np.asarray(labels, dtype=np.int64)
    mcfg = M.ModelConfig(
        input_dim=feats.dim,
        hidden_dim=config.hidden_dim,
        hops=0,
        num_classes=config.num_classes,
        num_layers=conv_layers,
        head="classifier" if config.task == TASK_NODE_CLASS4 else "regressor",
    )
    class_weights = (
        inverse_frequency_weights(labels, config.num_classes)
        if config.class_weighting and config.task == TASK_NODE_CLASS4
        else None
    )
    params = M.init_gcn_params(mcfg, config.seed)
    tensors = [t for _, t in params.named()]
    adam = Adam(tensors, config.learning_rate, config.adam)
    x = np.asarray(feats.matrix, dtype=np.float64)
    history: list[EpochStats] = []
    with threadpool_limits(limits=1):
        started = time.perf_counter()
        for epoch in range(config.epochs):
            for t in tensors:
                t.zero_grad()
            out = M.gcn_forward(adj, x, params)
            loss = cross_entropy(out, labels, class_weights)
            if not np.isfinite(loss.data):
                raise NumericError(f"non-finite GCN loss at epoch {epoch}")
            loss.backward()
            adam.step()
            acc = float((out.data.argmax(axis=1) == labels).mean())
            history.append(EpochStats(epoch, float(loss.data), acc))
        train_seconds = time.perf_counter() - started
    return TrainResult(params, mcfg, history, class_weights, train_seconds)


# ---------------------------------------------------------------------------
# Evaluation and attention export
# ---------------------------------------------------------------------------


def predict(params, mcfg: M.ModelConfig, kind: str, feats: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Deterministic chunked inference; returns logits or scalar preds."""
    outs = []
    for start in range(0, feats.shape[0], chunk):
        outs.append(_forward(kind, params, mcfg, feats[start : start + chunk]).data)
    return np.concatenate(outs) if outs else np.zeros((0, mcfg.out_dim))


def evaluate(params, mcfg: M.ModelConfig, kind: str, data: NodeDataset, task: str,
             loss_curve: tuple = ()) -> Metrics:
    if task == TASK_NODE_CLASS4:
        if mcfg.head != "classifier":
            raise ValueError("classification metrics need a classifier head")
        pred = predict(params, mcfg, kind, data.features).argmax(axis=1)
        labels = np.asarray(data.labels, dtype=np.int64)
        per_class = []
        for c in range(mcfg.num_classes):
            sel = labels == c
            per_class.append(float((pred[sel] == c).mean()) if sel.any() else float("nan"))
        return Metrics(
            overall_accuracy=float((pred == labels).mean()),
            per_class_accuracy=tuple(per_class),
            mape_value=None,
            loss_curve=tuple(loss_curve),
        )
    if mcfg.head != "regressor":
        raise ValueError("regression metrics need a regressor head")
    pred = predict(params, mcfg, kind, data.features)[:, 0]
    return Metrics(
        overall_accuracy=None,
        per_class_accuracy=None,
        mape_value=mape(pred, data.labels),
        loss_curve=tuple(loss_curve),
    )


def evaluate_gcn(params, mcfg: M.ModelConfig, adj: NormalizedAdjacency,
                 feats: NodeFeatures, labels: np.ndarray) -> Metrics:
    out = M.gcn_forward(adj, np.asarray(feats.matrix, dtype=np.float64), params)
    pred = out.data.argmax(axis=1)
    labels = np.asarray(labels, dtype=np.int64)
    per_class = []
    for c in range(mcfg.num_classes):
        sel = labels == c
        per_class.append(float((pred[sel] == c).mean()) if sel.any() else float("nan"))
    return Metrics(float((pred == labels).mean()), tuple(per_class), None, ())


def attention_scores(params: M.HogaParams, mcfg: M.ModelConfig, feats: np.ndarray,
                     chunk: int = 4096) -> np.ndarray:
    """Hop readout scores c_1..c_K for every node, shape (n, K)."""
    out = []
    for start in range(0, feats.shape[0], chunk):
        _, report = M.hoga_forward(feats[start : start + chunk], params, mcfg)
        out.append(report.hop_scores)
    return np.concatenate(out)


def sample_per_class(
    labels: np.ndarray, per_class: int, seed: int, num_classes: int = 4
) -> tuple[np.ndarray, list[int]]:
    """Seeded sample of up to ``per_class`` node ids per class.

    Returns (selected ids, list of classes that had fewer members than
    requested). Selection order is class-major, ascending node id.
    """
    rng = np.random.default_rng(seed)
    chosen: list[np.ndarray] = []
    short: list[int] = []
    for c in range(num_classes):
        ids = np.flatnonzero(np.asarray(labels) == c)
        if ids.size < per_class:
            short.append(c)
            take = ids
        else:
            take = rng.choice(ids, size=per_class, replace=False)
        chosen.append(np.sort(take))
    return np.concatenate(chosen), short


# ---------------------------------------------------------------------------
# Scaling benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchRow:
    workers: int
    seconds: float
    epochs_per_sec: float
    speedup: float
    final_loss: float


def bench_scaling(data: NodeDataset, config: TrainConfig, worker_counts: list[int]) -> list[BenchRow]:
    """Identical total work per worker count; wall time covers the epoch
    loop only (pool startup excluded via a handshake warmup)."""
    rows: list[BenchRow] = []
    base = None
    for w in worker_counts:
        cfg = replace(config, workers=w)
        result = train(data, cfg)
        secs = result.train_seconds
        eps = cfg.epochs / secs
        if base is None:
            base = eps
        rows.append(BenchRow(w, secs, eps, eps / base, result.history[-1].loss))
    return rows
