"""Circuit graph data model, parsers, and normalized sparse adjacency.

Two on-disk formats are supported (full grammar in docs/formats.md):

Edge list::

    # comment
    src dst [complemented]

  One directed edge per line, ids are nonnegative integers, the optional
  third column is 0 or 1 (default 0). Node count is max id + 1. Node kinds
  are not stored; they are inferred on parse: in-degree 0 -> PrimaryInput,
  in-degree 2 -> AndGate, in-degree 1 with out-degree 0 -> PrimaryOutput,
  anything else -> Plain. This inference is exact for generator output.

ASCII AIGER (``aag``), combinational subset only (no latches)::

    aag M I L O A
    <I input literals> <O output literals> <A and lines: lhs rhs0 rhs1>

  Variable v (1..M) maps to node v-1; output j becomes node M+j. Edge
  complement flags are taken from literal parity. Constant literals 0/1
  are rejected.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import IO, Iterable

import numpy as np
from scipy import sparse


class GraphFormatError(ValueError):
    """A circuit file violates the documented grammar or graph invariants."""


class NodeKind(IntEnum):
    PRIMARY_INPUT = 0
    PRIMARY_OUTPUT = 1
    AND_GATE = 2
    PLAIN = 3


class AdjacencyMode(Enum):
    SYMMETRIC_UNDIRECTED = "sym"
    DIRECTED_FANIN = "fanin"


@dataclass(frozen=True, eq=False)
class CircuitGraph:
    """Directed AIG/netlist with per-edge complement flags and CSR adjacency.

    Node ids are contiguous 0..n-1. ``edge_src/edge_dst/edge_complemented``
    keep the deterministic construction order (file order for parsed
    graphs). ``csr`` is the directed adjacency A with A[src, dst] = 1.
    Instances are immutable and safe to share across threads and forked
    workers.
    """

    num_nodes: int
    node_kind: np.ndarray
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_complemented: np.ndarray
    csr: sparse.csr_matrix = field(repr=False)

    @property
    def num_edges(self) -> int:
        return int(self.edge_src.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, CircuitGraph):
            return NotImplemented
        return (
            self.num_nodes == other.num_nodes
            and np.array_equal(self.node_kind, other.node_kind)
            and np.array_equal(self.edge_src, other.edge_src)
            and np.array_equal(self.edge_dst, other.edge_dst)
            and np.array_equal(self.edge_complemented, other.edge_complemented)
        )

    def nodes_of_kind(self, kind: NodeKind) -> np.ndarray:
        return np.flatnonzero(self.node_kind == int(kind))

    def fanin_edges(self, node: int) -> list[tuple[int, bool]]:
        """(src, complemented) pairs of edges into ``node``, in edge order."""
        sel = np.flatnonzero(self.edge_dst == node)
        return [
            (int(self.edge_src[i]), bool(self.edge_complemented[i])) for i in sel
        ]


def build_graph(
    num_nodes: int,
    node_kind: Iterable[int],
    edges: Iterable[tuple[int, int, int]],
) -> CircuitGraph:
    """Validate and assemble a CircuitGraph from raw parts.

    Rejects out-of-range ids, self-loops and duplicate (src, dst) pairs.
    """
    kind = np.asarray(list(node_kind), dtype=np.int8)
    if kind.shape[0] != num_nodes:
        raise GraphFormatError(
            f"node kind array has {kind.shape[0]} entries, expected {num_nodes}"
        )
    edge_list = list(edges)
    m = len(edge_list)
    src = np.zeros(m, dtype=np.int64)
    dst = np.zeros(m, dtype=np.int64)
    compl = np.zeros(m, dtype=np.int8)
    seen: set[tuple[int, int]] = set()
    for i, (s, d, c) in enumerate(edge_list):
        if not (0 <= s < num_nodes and 0 <= d < num_nodes):
            raise GraphFormatError(f"edge ({s}, {d}) references node outside 0..{num_nodes - 1}")
        if s == d:
            raise GraphFormatError(f"self-loop on node {s}")
        if (s, d) in seen:
            raise GraphFormatError(f"duplicate edge ({s}, {d})")
        seen.add((s, d))
        src[i], dst[i], compl[i] = s, d, c
    adj = sparse.csr_matrix(
        (np.ones(m, dtype=np.float64), (src, dst)), shape=(num_nodes, num_nodes)
    )
    for arr in (kind, src, dst, compl):
        arr.setflags(write=False)
    return CircuitGraph(num_nodes, kind, src, dst, compl, adj)


def _infer_kinds(num_nodes: int, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    indeg = np.bincount(dst, minlength=num_nodes)
    outdeg = np.bincount(src, minlength=num_nodes)
    kind = np.full(num_nodes, int(NodeKind.PLAIN), dtype=np.int8)
    kind[indeg == 0] = int(NodeKind.PRIMARY_INPUT)
    kind[indeg == 2] = int(NodeKind.AND_GATE)
    kind[(indeg == 1) & (outdeg == 0)] = int(NodeKind.PRIMARY_OUTPUT)
    return kind


def _lines(text: str | IO[str]) -> list[str]:
    if hasattr(text, "read"):
        text = text.read()
    return text.splitlines()


def parse_edge_list(text: str | IO[str]) -> CircuitGraph:
    """Parse the whitespace-separated ``src dst [complemented]`` format."""
    triples: list[tuple[int, int, int]] = []
    seen: set[tuple[int, int]] = set()
    max_id = -1
    for lineno, raw in enumerate(_lines(text), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise GraphFormatError(f"line {lineno}: expected 'src dst [c]', got {raw!r}")
        try:
            s, d = int(parts[0]), int(parts[1])
            c = int(parts[2]) if len(parts) == 3 else 0
        except ValueError:
            raise GraphFormatError(f"line {lineno}: non-integer field in {raw!r}") from None
        if s < 0 or d < 0:
            raise GraphFormatError(f"line {lineno}: negative node id in {raw!r}")
        if c not in (0, 1):
            raise GraphFormatError(f"line {lineno}: complement flag must be 0 or 1, got {c}")
        if s == d:
            raise GraphFormatError(f"line {lineno}: self-loop on node {s}")
        if (s, d) in seen:
            raise GraphFormatError(f"line {lineno}: duplicate edge ({s}, {d})")
        seen.add((s, d))
        triples.append((s, d, c))
        max_id = max(max_id, s, d)
    n = max_id + 1
    if n == 0:
        raise GraphFormatError("empty edge list")
    src = np.array([t[0] for t in triples], dtype=np.int64)
    dst = np.array([t[1] for t in triples], dtype=np.int64)
    return build_graph(n, _infer_kinds(n, src, dst), triples)


def serialize_edge_list(g: CircuitGraph) -> str:
    out = ["# edge list: src dst complemented"]
    for s, d, c in zip(g.edge_src, g.edge_dst, g.edge_complemented):
        out.append(f"{s} {d} {c}")
    return "\n".join(out) + "\n"


def parse_aiger_ascii(text: str | IO[str]) -> CircuitGraph:
    """Parse the combinational ASCII AIGER (``aag``) subset."""
    lines = [ln.strip() for ln in _lines(text)]
    if not lines or not lines[0].startswith("aag"):
        raise GraphFormatError("missing 'aag' header")
    header = lines[0].split()
    if len(header) != 6:
        raise GraphFormatError(f"malformed header {lines[0]!r}")
    try:
        m, i, l, o, a = (int(tok) for tok in header[1:])
    except ValueError:
        raise GraphFormatError(f"malformed header {lines[0]!r}") from None
    if l != 0:
        raise GraphFormatError(f"latches are not supported (L={l})")
    body = lines[1:]
    if len(body) < i + o + a:
        raise GraphFormatError(
            f"body has {len(body)} lines, header promises {i + o + a}"
        )

    def lit_node(lit: int, lineno: int) -> tuple[int, int]:
        if lit in (0, 1):
            raise GraphFormatError(f"line {lineno}: constant literal {lit} not supported")
        var, neg = divmod(lit, 2)
        if var > m:
            raise GraphFormatError(f"line {lineno}: literal {lit} out of range (M={m})")
        return var - 1, neg

    kind = np.full(m + o, int(NodeKind.PLAIN), dtype=np.int8)
    defined = np.zeros(m, dtype=bool)
    pos = 1
    for _ in range(i):
        lit = _parse_ints(body[pos - 1], 1, pos)[0]
        node, neg = lit_node(lit, pos)
        if neg:
            raise GraphFormatError(f"line {pos}: input literal {lit} must be uncomplemented")
        if defined[node]:
            raise GraphFormatError(f"line {pos}: variable {node + 1} defined twice")
        defined[node] = True
        kind[node] = int(NodeKind.PRIMARY_INPUT)
        pos += 1
    out_lits = []
    for _ in range(o):
        out_lits.append((_parse_ints(body[pos - 1], 1, pos)[0], pos))
        pos += 1
    edges: list[tuple[int, int, int]] = []
    for _ in range(a):
        lhs, rhs0, rhs1 = _parse_ints(body[pos - 1], 3, pos)
        node, neg = lit_node(lhs, pos)
        if neg:
            raise GraphFormatError(f"line {pos}: AND lhs {lhs} must be even")
        if defined[node]:
            raise GraphFormatError(f"line {pos}: variable {node + 1} defined twice")
        defined[node] = True
        kind[node] = int(NodeKind.AND_GATE)
        for rhs in (rhs0, rhs1):
            s, neg = lit_node(rhs, pos)
            edges.append((s, node, neg))
        pos += 1
    if not defined.all():
        undef = int(np.flatnonzero(~defined)[0]) + 1
        raise GraphFormatError(f"variable {undef} is never defined (header mismatch)")
    for j, (lit, at) in enumerate(out_lits):
        s, neg = lit_node(lit, at)
        kind[m + j] = int(NodeKind.PRIMARY_OUTPUT)
        edges.append((s, m + j, neg))
    return build_graph(m + o, kind, edges)


def _parse_ints(line: str, count: int, lineno: int) -> list[int]:
    parts = line.split()
    if len(parts) != count:
        raise GraphFormatError(f"line {lineno + 1}: expected {count} integers, got {line!r}")
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise GraphFormatError(f"line {lineno + 1}: non-integer field in {line!r}") from None


def serialize_aiger_ascii(g: CircuitGraph) -> str:
    """Emit ``aag`` text. Requires the node layout produced by the parser and
    the circuit generator: inputs and AND gates first, outputs last."""
    po = g.nodes_of_kind(NodeKind.PRIMARY_OUTPUT)
    pi = g.nodes_of_kind(NodeKind.PRIMARY_INPUT)
    ands = g.nodes_of_kind(NodeKind.AND_GATE)
    m = g.num_nodes - po.shape[0]
    if po.shape[0] and po.min() != m:
        raise GraphFormatError("AIGER serialization needs outputs numbered last")
    if pi.shape[0] + ands.shape[0] != m:
        raise GraphFormatError("graph contains Plain nodes; not an AIG")
    fanins: dict[int, list[tuple[int, bool]]] = {int(n): [] for n in np.concatenate([ands, po])}
    for s, d, c in zip(g.edge_src, g.edge_dst, g.edge_complemented):
        if int(d) in fanins:
            fanins[int(d)].append((int(s), bool(c)))
    lines = [f"aag {m} {pi.shape[0]} 0 {po.shape[0]} {ands.shape[0]}"]
    lines += [f"{2 * (int(v) + 1)}" for v in pi]
    for node in po:
        (src, c), = fanins[int(node)]
        lines.append(f"{2 * (src + 1) + int(c)}")
    for node in ands:
        fi = fanins[int(node)]
        if len(fi) != 2:
            raise GraphFormatError(f"AND node {int(node)} has {len(fi)} fan-ins, expected 2")
        lits = [2 * (src + 1) + int(c) for src, c in fi]
        lines.append(f"{2 * (int(node) + 1)} {lits[0]} {lits[1]}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """Normalized adjacency in CSR, double precision.

    Symmetric mode stores D^(-1/2) (A sym A^T) D^(-1/2) over the
    symmetrized, direction- and complement-blind edge set; fan-in mode
    stores D_in^(-1) A^T so row i averages over the fan-ins of node i.
    Rows of zero-degree nodes are all-zero.
    """

    matrix: sparse.csr_matrix = field(compare=False)
    mode: AdjacencyMode = AdjacencyMode.SYMMETRIC_UNDIRECTED

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[0]

    _transpose_cache: list = field(default_factory=list, repr=False, compare=False)

    def transposed(self) -> sparse.csr_matrix:
        if not self._transpose_cache:
            self._transpose_cache.append(self.matrix.T.tocsr())
        return self._transpose_cache[0]


def normalize_adjacency(
    g: CircuitGraph,
    mode: AdjacencyMode = AdjacencyMode.SYMMETRIC_UNDIRECTED,
    add_self_loops: bool = False,
) -> NormalizedAdjacency:
    """Build the normalized adjacency for hop-feature propagation.

    ``add_self_loops`` (A+I before normalization) is an ablation flag; the
    default keeps self information out of Â because hop 0 is stored
    separately in the hop tensor.
    """
    n = g.num_nodes
    a = sparse.csr_matrix(
        (np.ones(g.num_edges, dtype=np.float64), (g.edge_src, g.edge_dst)),
        shape=(n, n),
    )
    if mode is AdjacencyMode.SYMMETRIC_UNDIRECTED:
        b = a.maximum(a.T).tocsr()
        if add_self_loops:
            b = (b + sparse.eye(n, format="csr")).tocsr()
        b.data[:] = 1.0
        deg = np.asarray(b.sum(axis=1)).ravel()
        with np.errstate(divide="ignore"):
            dinv = np.where(deg > 0, 1.0 / np.sqrt(deg), 0.0)
        coo = b.tocoo()
        vals = dinv[coo.row] * dinv[coo.col]
        out = sparse.csr_matrix((vals, (coo.row, coo.col)), shape=(n, n))
    elif mode is AdjacencyMode.DIRECTED_FANIN:
        at = a.T.tocsr()
        if add_self_loops:
            at = (at + sparse.eye(n, format="csr")).tocsr()
        at.data[:] = 1.0
        indeg = np.asarray(at.sum(axis=1)).ravel()
        with np.errstate(divide="ignore"):
            scale = np.where(indeg > 0, 1.0 / indeg, 0.0)
        coo = at.tocoo()
        out = sparse.csr_matrix((scale[coo.row] * coo.data, (coo.row, coo.col)), shape=(n, n))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    out.sort_indices()
    return NormalizedAdjacency(out, mode)


FEATURE_SCHEMA = (
    "kind_pi",
    "kind_po",
    "kind_and",
    "kind_plain",
    "compl_fanin_0",
    "compl_fanin_1",
    "compl_fanin_2",
)


@dataclass(frozen=True)
class NodeFeatures:
    """Initial per-node feature matrix X (n x d0) with named columns."""

    matrix: np.ndarray
    schema: tuple[str, ...] = FEATURE_SCHEMA

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def build_node_features(g: CircuitGraph) -> NodeFeatures:
    """One-hot node kind (4 cols) plus one-hot complemented-fan-in count
    clamped to {0, 1, 2} (3 cols); d0 = 7."""
    n = g.num_nodes
    x = np.zeros((n, 7), dtype=np.float64)
    x[np.arange(n), np.asarray(g.node_kind, dtype=np.int64)] = 1.0
    compl_in = np.bincount(
        g.edge_dst[g.edge_complemented != 0], minlength=n
    )
    np.minimum(compl_in, 2, out=compl_in)
    x[np.arange(n), 4 + compl_in] = 1.0
    x.setflags(write=False)
    return NodeFeatures(x)


def graph_checksum(g: CircuitGraph) -> int:
    """64-bit content checksum over node kinds and the ordered edge list."""
    h = hashlib.sha256()
    h.update(np.int64(g.num_nodes).tobytes())
    h.update(np.ascontiguousarray(g.node_kind).tobytes())
    h.update(np.ascontiguousarray(g.edge_src).tobytes())
    h.update(np.ascontiguousarray(g.edge_dst).tobytes())
    h.update(np.ascontiguousarray(g.edge_complemented).tobytes())
    return int.from_bytes(h.digest()[:8], "little")


def relabel(g: CircuitGraph, perm: np.ndarray) -> CircuitGraph:
    """Relabel nodes by permutation: old id i becomes perm[i]."""
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(g.num_nodes)):
        raise ValueError("perm must be a permutation of 0..n-1")
    kind = np.empty_like(g.node_kind)
    kind[perm] = g.node_kind
    edges = [
        (int(perm[s]), int(perm[d]), int(c))
        for s, d, c in zip(g.edge_src, g.edge_dst, g.edge_complemented)
    ]
    return build_graph(g.num_nodes, kind, edges)


def topological_order(g: CircuitGraph) -> np.ndarray:
    """Kahn topological order of nodes; raises on combinational cycles."""
    indeg = np.bincount(g.edge_dst, minlength=g.num_nodes).astype(np.int64)
    succ_ptr = np.zeros(g.num_nodes + 1, dtype=np.int64)
    np.add.at(succ_ptr[1:], g.edge_src, 1)
    np.cumsum(succ_ptr, out=succ_ptr)
    succ = g.edge_dst[np.argsort(g.edge_src, kind="stable")]
    order = np.empty(g.num_nodes, dtype=np.int64)
    ready = sorted(np.flatnonzero(indeg == 0).tolist())
    head = 0
    for i in range(g.num_nodes):
        if head >= len(ready):
            raise GraphFormatError("combinational cycle detected")
        node = ready[head]
        head += 1
        order[i] = node
        for j in range(succ_ptr[node], succ_ptr[node + 1]):
            d = succ[j]
            indeg[d] -= 1
            if indeg[d] == 0:
                ready.append(int(d))
    return order
