"""Carry-save array multiplier AIGs with ground-truth functional labels.

Gates are built from literals (2*node_id + negation, AIGER style). The
full adder is fixed to the canonical shared-XOR 9-AND form::

        x ---+--[XOR2]--x1--+--[XOR2]----- sum        XOR2(p, q) is 3 ANDs:
        y ---+       |      |                            n1 = ~p & ~q
                     |  z --+                            n2 =  p &  q
        x & y = c1   |                                   root = ~n1 & ~n2
        x1 & z = c2  +------+
        croot = ~c1 & ~c2      carry out = ~croot

    sum root   -> label Xor     (realizes parity of the adder inputs)
    croot      -> label Maj     (realizes NOT(majority); the complement
                                 rides on the carry's fan-out edge)
    x1         -> label Shared  (XOR root reused by both the sum cone and
                                 the carry cone)

The half adder reuses the XOR2's inner AND as its carry::

    sum = XOR2(x, y) root -> Xor;  carry = n2 = x & y -> Maj (= MAJ(x, y, 0))

Because carries travel between adders as negated literals, the recorded
cut of each labeled root keeps the leaf polarities seen at construction
time; verify_labels resimulates every cone from the graph alone and
compares against the exact expected table (XOR/MAJ of polarity-adjusted
leaves, with the root's output phase).
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from hoga.graph import (
    CircuitGraph,
    GraphFormatError,
    NodeKind,
    build_graph,
    graph_checksum,
    serialize_aiger_ascii,
    serialize_edge_list,
    topological_order,
)


class CircuitError(ValueError):
    """Simulation or cut extraction failed on a malformed circuit."""


class Label(IntEnum):
    MAJ = 0
    XOR = 1
    SHARED = 2
    PLAIN = 3


LABEL_NAMES = {Label.MAJ: "maj", Label.XOR: "xor", Label.SHARED: "shared", Label.PLAIN: "plain"}
NAME_TO_LABEL = {v: k for k, v in LABEL_NAMES.items()}

MAX_CONE_NODES = 64


@dataclass(frozen=True)
class CutFunction:
    """Truth table of the fan-in cone between ``leaves`` and ``root``.

    Bit p of ``truth_table`` is the root's value when leaf j carries bit j
    of p. Complemented edges inside the cone are applied; the root's own
    fan-out polarity is not (it belongs to the consumer edge).
    """

    root: int
    leaves: tuple[int, ...]
    truth_table: int


@dataclass(frozen=True)
class AdderRecord:
    """Construction-time record of one half/full adder."""

    kind: str  # "full" | "half"
    leaves: tuple[int, ...]
    leaf_neg: tuple[int, ...]
    sum_root: int
    carry_root: int
    shared_root: int | None


@dataclass(frozen=True)
class LabelMismatch:
    node: int
    label: Label
    reason: str


@dataclass(frozen=True, eq=False)
class LabeledCircuit:
    graph: CircuitGraph
    labels: np.ndarray
    bitwidth: int
    output_map: tuple[int, ...]
    adders: tuple[AdderRecord, ...]


class _AigBuilder:
    def __init__(self):
        self.kinds: list[int] = []
        self.edges: list[tuple[int, int, int]] = []

    def pi(self) -> int:
        self.kinds.append(int(NodeKind.PRIMARY_INPUT))
        return 2 * (len(self.kinds) - 1)

    def and2(self, a: int, b: int) -> int:
        if a // 2 == b // 2:
            raise CircuitError("AND gate with both fan-ins from one node")
        self.kinds.append(int(NodeKind.AND_GATE))
        node = len(self.kinds) - 1
        self.edges.append((a // 2, node, a & 1))
        self.edges.append((b // 2, node, b & 1))
        return 2 * node

    def po(self, lit: int) -> int:
        self.kinds.append(int(NodeKind.PRIMARY_OUTPUT))
        node = len(self.kinds) - 1
        self.edges.append((lit // 2, node, lit & 1))
        return node

    def finish(self) -> CircuitGraph:
        return build_graph(len(self.kinds), self.kinds, self.edges)


def _xor2(b: _AigBuilder, p: int, q: int) -> tuple[int, int]:
    """3-AND XOR; returns (root literal, inner AND literal p&q)."""
    n1 = b.and2(p ^ 1, q ^ 1)
    n2 = b.and2(p, q)
    root = b.and2(n1 ^ 1, n2 ^ 1)
    return root, n2


def gen_csa_multiplier(bitwidth: int) -> LabeledCircuit:
    """Unmapped AIG of a w x w carry-save array multiplier.

    Partial products are plain ANDs; columns are compressed with full
    adders in FIFO order (array schedule) and the remaining two rails go
    through a ripple carry-propagate pass. Everything is deterministic:
    same bitwidth, same graph.
    """
    if not (1 <= bitwidth <= 1024):
        raise ValueError(f"bitwidth must be in 1..1024, got {bitwidth}")
    w = bitwidth
    b = _AigBuilder()
    a_bits = [b.pi() for _ in range(w)]
    b_bits = [b.pi() for _ in range(w)]
    cols: list[deque[int]] = [deque() for _ in range(2 * w + 1)]
    for i in range(w):
        for j in range(w):
            cols[i + j].append(b.and2(a_bits[i], b_bits[j]))

    labels: dict[int, Label] = {}
    adders: list[AdderRecord] = []

    def full_adder(x: int, y: int, z: int) -> tuple[int, int]:
        x1, _ = _xor2(b, x, y)
        s, _ = _xor2(b, x1, z)
        c1 = b.and2(x, y)
        c2 = b.and2(x1, z)
        croot = b.and2(c1 ^ 1, c2 ^ 1)
        labels[s // 2] = Label.XOR
        labels[croot // 2] = Label.MAJ
        labels[x1 // 2] = Label.SHARED
        adders.append(
            AdderRecord(
                "full",
                (x // 2, y // 2, z // 2),
                (x & 1, y & 1, z & 1),
                s // 2,
                croot // 2,
                x1 // 2,
            )
        )
        return s, croot ^ 1

    def half_adder(x: int, y: int) -> tuple[int, int]:
        s, n2 = _xor2(b, x, y)
        labels[s // 2] = Label.XOR
        labels[n2 // 2] = Label.MAJ
        adders.append(
            AdderRecord("half", (x // 2, y // 2), (x & 1, y & 1), s // 2, n2 // 2, None)
        )
        return s, n2

    # Carry-save compression: reduce every column to <= 2 pending bits.
    for k in range(2 * w):
        while len(cols[k]) >= 3:
            s, c = full_adder(cols[k].popleft(), cols[k].popleft(), cols[k].popleft())
            cols[k].append(s)
            cols[k + 1].append(c)

    # Final ripple carry-propagate pass, low to high weight.
    product: list[int] = []
    carry: int | None = None
    for k in range(2 * w + 1):
        bits = list(cols[k])
        if carry is not None:
            bits.append(carry)
            carry = None
        if not bits:
            continue
        if len(bits) == 1:
            product.append(bits[0])
        elif len(bits) == 2:
            s, carry = half_adder(bits[0], bits[1])
            product.append(s)
        else:
            s, carry = full_adder(bits[0], bits[1], bits[2])
            product.append(s)
    if carry is not None:
        product.append(carry)

    output_map = tuple(b.po(lit) for lit in product)
    g = b.finish()
    label_arr = np.full(g.num_nodes, int(Label.PLAIN), dtype=np.int8)
    for node, lab in labels.items():
        label_arr[node] = int(lab)
    label_arr.setflags(write=False)
    return LabeledCircuit(g, label_arr, w, output_map, tuple(adders))


def _fanin_table(g: CircuitGraph) -> tuple[list[list[int]], list[list[int]]]:
    srcs: list[list[int]] = [[] for _ in range(g.num_nodes)]
    negs: list[list[int]] = [[] for _ in range(g.num_nodes)]
    for s, d, c in zip(g.edge_src, g.edge_dst, g.edge_complemented):
        srcs[d].append(int(s))
        negs[d].append(int(c))
    return srcs, negs


def simulate(g: CircuitGraph, inputs: np.ndarray) -> np.ndarray:
    """Evaluate an AIG on one assignment (n_pi,) or a batch (P, n_pi).

    Input column j drives the j-th primary input in node-id order; the
    result column j is the j-th primary output in node-id order. AND
    nodes take the conjunction of their fan-ins with per-edge complements
    applied; output nodes forward their single driver.
    """
    order = topological_order(g)
    srcs, negs = _fanin_table(g)
    inp = np.atleast_2d(np.asarray(inputs, dtype=np.uint8))
    single = np.asarray(inputs).ndim == 1
    pis = g.nodes_of_kind(NodeKind.PRIMARY_INPUT)
    pos = g.nodes_of_kind(NodeKind.PRIMARY_OUTPUT)
    if inp.shape[1] != pis.shape[0]:
        raise CircuitError(
            f"assignment covers {inp.shape[1]} inputs, circuit has {pis.shape[0]}"
        )
    vals = np.zeros((g.num_nodes, inp.shape[0]), dtype=np.uint8)
    pi_col = {int(node): j for j, node in enumerate(pis)}
    for node in order:
        node = int(node)
        kind = g.node_kind[node]
        if kind == int(NodeKind.PRIMARY_INPUT):
            vals[node] = inp[:, pi_col[node]]
        elif kind == int(NodeKind.AND_GATE):
            if len(srcs[node]) != 2:
                raise CircuitError(f"AND node {node} has {len(srcs[node])} fan-ins")
            f0 = vals[srcs[node][0]] ^ negs[node][0]
            f1 = vals[srcs[node][1]] ^ negs[node][1]
            vals[node] = f0 & f1
        elif kind == int(NodeKind.PRIMARY_OUTPUT):
            if len(srcs[node]) != 1:
                raise CircuitError(f"output node {node} has {len(srcs[node])} drivers")
            vals[node] = vals[srcs[node][0]] ^ negs[node][0]
        else:
            raise CircuitError(f"cannot simulate Plain node {node}")
    out = vals[pos].T
    return out[0] if single else out


def _cone_table(
    g: CircuitGraph,
    srcs: list[list[int]],
    negs: list[list[int]],
    topo_pos: dict[int, int],
    root: int,
    leaves: tuple[int, ...],
) -> CutFunction:
    if len(leaves) > 10:
        raise CircuitError(f"cut of node {root} has {len(leaves)} leaves, limit is 10")
    cone: set[int] = set()
    stack = [int(root)]
    leaf_set = set(leaves)
    while stack:
        node = stack.pop()
        if node in leaf_set or node in cone:
            continue
        if not srcs[node]:
            raise CircuitError(f"cut leaves unreachable: hit source node {node}")
        cone.add(node)
        if len(cone) > MAX_CONE_NODES:
            raise CircuitError(f"cone of node {root} exceeds {MAX_CONE_NODES} nodes")
        stack.extend(srcs[node])
    ordered = sorted(cone, key=topo_pos.__getitem__)
    k = len(leaves)
    pats = np.arange(2 ** k, dtype=np.int64)
    vals: dict[int, np.ndarray] = {
        leaf: ((pats >> j) & 1).astype(np.uint8) for j, leaf in enumerate(leaves)
    }
    for node in ordered:
        if g.node_kind[node] != int(NodeKind.AND_GATE):
            raise CircuitError(f"cone of node {root} contains non-AND node {node}")
        f0 = vals[srcs[node][0]] ^ negs[node][0]
        f1 = vals[srcs[node][1]] ^ negs[node][1]
        vals[node] = f0 & f1
    table = sum(int(v) << p for p, v in enumerate(vals[int(root)]))
    return CutFunction(int(root), leaves, table)


def cut_function(g: CircuitGraph, root: int, leaves: tuple[int, ...]) -> CutFunction:
    """Exhaustively simulate the cone between ``leaves`` and ``root``."""
    leaves = tuple(int(x) for x in leaves)
    srcs, negs = _fanin_table(g)
    topo_pos = {int(n): i for i, n in enumerate(topological_order(g))}
    return _cone_table(g, srcs, negs, topo_pos, root, leaves)


def _expected_tables(rec: AdderRecord) -> dict[int, tuple[int, Label]]:
    """Map root node -> (expected truth table, expected label)."""
    k = len(rec.leaves)
    size = 2 ** k
    parity = 0
    maj = 0
    for p in range(size):
        bits = [((p >> j) & 1) ^ rec.leaf_neg[j] for j in range(k)]
        if sum(bits) % 2 == 1:
            parity |= 1 << p
        if k == 3 and sum(bits) >= 2:
            maj |= 1 << p
        if k == 2 and all(bits):
            maj |= 1 << p
    out: dict[int, tuple[int, Label]] = {rec.sum_root: (parity, Label.XOR)}
    mask = (1 << size) - 1
    if rec.kind == "full":
        out[rec.carry_root] = (maj ^ mask, Label.MAJ)  # croot = NOT(MAJ)
        out[rec.shared_root] = (-1, Label.SHARED)  # table checked on its own cut
    else:
        out[rec.carry_root] = (maj, Label.MAJ)
    return out


def _cone_nodes(g: CircuitGraph, srcs: list[list[int]], root: int, leaves: set[int]) -> set[int]:
    cone: set[int] = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if node in leaves or node in cone:
            continue
        cone.add(node)
        stack.extend(srcs[node])
    return cone


def verify_labels(c: LabeledCircuit) -> list[LabelMismatch]:
    """Independent check of every non-Plain label against cone truth tables.

    Empty result means: every recorded sum root realizes parity of its
    polarity-adjusted adder inputs, every carry root realizes (the output
    phase of) majority, every shared root realizes XOR on its own 2-leaf
    cut and lies inside both the sum and the carry cones, and no other
    node carries a non-Plain label.
    """
    g = c.graph
    mismatches: list[LabelMismatch] = []
    expected_label = np.full(g.num_nodes, int(Label.PLAIN), dtype=np.int8)
    srcs, negs = _fanin_table(g)
    topo_pos = {int(n): i for i, n in enumerate(topological_order(g))}

    for rec in c.adders:
        leaf_set = set(rec.leaves)
        for root, (table, lab) in _expected_tables(rec).items():
            expected_label[root] = int(lab)
            if lab is Label.SHARED:
                xor_cut = _cone_table(g, srcs, negs, topo_pos, root, rec.leaves[:2])
                exp = 0
                for p in range(4):
                    bits = [((p >> j) & 1) ^ rec.leaf_neg[j] for j in range(2)]
                    if sum(bits) % 2 == 1:
                        exp |= 1 << p
                if xor_cut.truth_table != exp:
                    mismatches.append(
                        LabelMismatch(root, lab, f"shared root table {xor_cut.truth_table:#x} != XOR {exp:#x}")
                    )
                sum_cone = _cone_nodes(g, srcs, rec.sum_root, leaf_set)
                carry_cone = _cone_nodes(g, srcs, rec.carry_root, leaf_set)
                if root not in sum_cone or root not in carry_cone:
                    mismatches.append(
                        LabelMismatch(root, lab, "shared root not inside both sum and carry cones")
                    )
                continue
            cut = _cone_table(g, srcs, negs, topo_pos, root, rec.leaves)
            if cut.truth_table != table:
                mismatches.append(
                    LabelMismatch(
                        root,
                        lab,
                        f"cone table {cut.truth_table:#x} != expected {table:#x} on leaves {rec.leaves}",
                    )
                )

    for node in range(g.num_nodes):
        have = Label(int(c.labels[node]))
        want = Label(int(expected_label[node]))
        if have is not Label.PLAIN and g.node_kind[node] != int(NodeKind.AND_GATE):
            mismatches.append(LabelMismatch(node, have, "non-Plain label on a non-AND node"))
        elif have is not want:
            mismatches.append(
                LabelMismatch(node, have, f"label {LABEL_NAMES[have]}, construction says {LABEL_NAMES[want]}")
            )
    return mismatches


def int_to_bits(value: int, width: int) -> np.ndarray:
    """Little-endian bit vector of ``value``."""
    return ((value >> np.arange(width)) & 1).astype(np.uint8)


def bits_to_int(bits: np.ndarray) -> int:
    return int(np.bitwise_or.reduce(bits.astype(np.int64) << np.arange(bits.shape[0], dtype=np.int64)))


def multiply_via_simulation(c: LabeledCircuit, a: int, b: int) -> int:
    """Drive the multiplier AIG with integer operands; returns the product."""
    w = c.bitwidth
    assignment = np.concatenate([int_to_bits(a, w), int_to_bits(b, w)])
    return bits_to_int(simulate(c.graph, assignment))


def write_labels_csv(c: LabeledCircuit) -> str:
    lines = ["node_id,label"]
    lines += [f"{i},{LABEL_NAMES[Label(int(lab))]}" for i, lab in enumerate(c.labels)]
    return "\n".join(lines) + "\n"


def read_labels_csv(text: str) -> np.ndarray:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "node_id,label":
        raise GraphFormatError("labels CSV must start with 'node_id,label'")
    pairs = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 2 or parts[1] not in NAME_TO_LABEL:
            raise GraphFormatError(f"labels CSV line {lineno}: bad row {line!r}")
        pairs.append((int(parts[0]), int(NAME_TO_LABEL[parts[1]])))
    n = max(p[0] for p in pairs) + 1
    out = np.full(n, -1, dtype=np.int8)
    for node, lab in pairs:
        out[node] = lab
    if (out < 0).any():
        raise GraphFormatError("labels CSV does not cover all node ids")
    return out


GENERATOR_VERSION = 1


def write_circuit_bundle(c: LabeledCircuit, outdir: str | Path, stem: str | None = None) -> dict:
    """Emit edge list, ASCII AIGER, labels CSV and a manifest; returns paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = stem or f"csa{c.bitwidth}"
    paths = {
        "edges": outdir / f"{stem}.edges",
        "aiger": outdir / f"{stem}.aag",
        "labels": outdir / f"{stem}_labels.csv",
        "manifest": outdir / f"{stem}_manifest.json",
    }
    paths["edges"].write_text(serialize_edge_list(c.graph))
    paths["aiger"].write_text(serialize_aiger_ascii(c.graph))
    paths["labels"].write_text(write_labels_csv(c))
    counts = {LABEL_NAMES[Label(k)]: int((c.labels == k).sum()) for k in range(4)}
    manifest = {
        "kind": "csa_multiplier",
        "bitwidth": c.bitwidth,
        "num_nodes": c.graph.num_nodes,
        "num_edges": c.graph.num_edges,
        "label_counts": counts,
        "output_map": list(c.output_map),
        "graph_checksum": graph_checksum(c.graph),
        "generator_version": GENERATOR_VERSION,
    }
    paths["manifest"].write_text(json.dumps(manifest, indent=2) + "\n")
    return {k: str(v) for k, v in paths.items()}
