"""Hop-wise gated graph attention for circuit representation learning.

The pipeline has two phases: hop features are precomputed once from the
normalized circuit adjacency (sparse, double precision), then a gated
self-attention model consumes each node's hop stack independently, which
makes training embarrassingly parallel over nodes.
"""

__version__ = "0.1.0"

from hoga.graph import (
    AdjacencyMode,
    CircuitGraph,
    GraphFormatError,
    NodeFeatures,
    NodeKind,
    NormalizedAdjacency,
    build_node_features,
    graph_checksum,
    normalize_adjacency,
    parse_aiger_ascii,
    parse_edge_list,
    serialize_aiger_ascii,
    serialize_edge_list,
)
from hoga.circuits import (
    CutFunction,
    Label,
    LabeledCircuit,
    cut_function,
    gen_csa_multiplier,
    simulate,
    verify_labels,
)
from hoga.hopfeat import (
    HopTensor,
    generate_hop_features,
    load_hop_tensor,
    save_hop_tensor,
    shard_hop_tensor,
)

__all__ = [
    "AdjacencyMode",
    "CircuitGraph",
    "CutFunction",
    "GraphFormatError",
    "HopTensor",
    "Label",
    "LabeledCircuit",
    "NodeFeatures",
    "NodeKind",
    "NormalizedAdjacency",
    "build_node_features",
    "cut_function",
    "gen_csa_multiplier",
    "generate_hop_features",
    "graph_checksum",
    "load_hop_tensor",
    "normalize_adjacency",
    "parse_aiger_ascii",
    "parse_edge_list",
    "save_hop_tensor",
    "serialize_aiger_ascii",
    "serialize_edge_list",
    "shard_hop_tensor",
    "simulate",
    "verify_labels",
]
