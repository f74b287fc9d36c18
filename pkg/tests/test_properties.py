"""Property-based tests over generated graphs and tensors."""

import numpy as np
from hypothesis import given, settings, strategies as st

from hoga import model as M
from hoga import tensor as T
from hoga.graph import (
    AdjacencyMode,
    build_graph,
    build_node_features,
    normalize_adjacency,
    parse_edge_list,
    relabel,
    serialize_edge_list,
)
from hoga.hopfeat import generate_hop_features, shard_hop_tensor
from hoga.tensor import Tensor


@st.composite
def dags(draw, max_nodes=12):
    """Random DAG as (n, edge list); edges go from lower to higher id."""
    n = draw(st.integers(min_value=2, max_value=max_nodes))
    pairs = [(s, d) for d in range(1, n) for s in range(d)]
    chosen = draw(st.lists(st.sampled_from(pairs), min_size=1, max_size=len(pairs), unique=True))
    compl = draw(st.lists(st.booleans(), min_size=len(chosen), max_size=len(chosen)))
    return n, [(s, d, int(c)) for (s, d), c in zip(chosen, compl)]


def graph_of(n, edges):
    return build_graph(n, [3] * n, edges)


@given(dags())
@settings(max_examples=60, deadline=None)
def test_edge_list_round_trip(dag):
    n, edges = dag
    g = graph_of(n, edges)
    back = parse_edge_list(serialize_edge_list(g))
    assert back.num_edges == g.num_edges
    assert np.array_equal(back.edge_src, g.edge_src)
    assert np.array_equal(back.edge_dst, g.edge_dst)
    assert np.array_equal(back.edge_complemented, g.edge_complemented)


@given(dags(), st.randoms(use_true_random=False))
@settings(max_examples=40, deadline=None)
def test_normalization_permutation_property(dag, pyrand):
    n, edges = dag
    g = graph_of(n, edges)
    perm = list(range(n))
    pyrand.shuffle(perm)
    perm = np.array(perm)
    a = normalize_adjacency(g).matrix.toarray()
    b = normalize_adjacency(relabel(g, perm)).matrix.toarray()
    assert np.array_equal(b[np.ix_(perm, perm)], a)


@given(dags())
@settings(max_examples=40, deadline=None)
def test_fanin_rows_stochastic(dag):
    n, edges = dag
    g = graph_of(n, edges)
    m = normalize_adjacency(g, AdjacencyMode.DIRECTED_FANIN).matrix
    sums = np.asarray(m.sum(axis=1)).ravel()
    indeg = np.bincount(g.edge_dst, minlength=n)
    assert np.allclose(sums[indeg > 0], 1.0)
    assert np.all(sums[indeg == 0] == 0.0)


@given(dags(), st.integers(min_value=1, max_value=4))
@settings(max_examples=30, deadline=None)
def test_shard_partition_reassembles(dag, parts):
    n, edges = dag
    g = graph_of(n, edges)
    t = generate_hop_features(normalize_adjacency(g), build_node_features(g), 2)
    ids = np.arange(n)
    shards = [shard_hop_tensor(t, s) for s in np.array_split(ids, parts)]
    rebuilt = np.concatenate([s.data for s in shards])
    assert np.array_equal(rebuilt, t.data)


@given(
    st.integers(min_value=1, max_value=6),
    st.integers(min_value=1, max_value=5),
    st.integers(min_value=0, max_value=2**32 - 1),
)
@settings(max_examples=40, deadline=None)
def test_readout_scores_sum_to_one(k_hops, d, seed):
    rng = np.random.default_rng(seed)
    hhat = rng.standard_normal((3, k_hops + 1, d)) * rng.uniform(0.1, 50)
    alpha = rng.standard_normal((2 * d, 1))
    _, c = M.attentive_readout(Tensor(hhat), Tensor(alpha))
    assert np.allclose(c.data.sum(axis=1), 1.0, atol=1e-6)


@given(st.integers(min_value=0, max_value=2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_softmax_rows_sum_to_one_large_magnitudes(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1e6, 1e6, size=(5, 7))
    s = T.softmax_rows(Tensor(x)).data
    assert np.all(np.isfinite(s))
    assert np.allclose(s.sum(axis=1), 1.0, atol=1e-12)
