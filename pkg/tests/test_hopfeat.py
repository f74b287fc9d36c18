"""Hop-feature generation against the dense matrix-power oracle."""

import numpy as np
import pytest

from hoga.circuits import gen_csa_multiplier
from hoga.graph import (
    FEATURE_SCHEMA,
    AdjacencyMode,
    NodeFeatures,
    build_node_features,
    graph_checksum,
    normalize_adjacency,
    parse_edge_list,
)
from hoga.hopfeat import (
    HopTensorIOError,
    generate_hop_features,
    load_hop_tensor,
    save_hop_tensor,
    shard_hop_tensor,
)
from tests.test_graph import random_dag


def dense_hop_oracle(adj_dense: np.ndarray, x: np.ndarray, hops: int) -> np.ndarray:
    """Â^k X per hop with explicit dense matrix powers."""
    out = [x]
    for k in range(1, hops + 1):
        out.append(np.linalg.matrix_power(adj_dense, k) @ x)
    return np.stack(out, axis=1)


class TestGenerate:
    def test_two_node_path_swap(self):
        g = parse_edge_list("0 1")
        x = NodeFeatures(np.array([[1.0], [0.0]]), ("f",))
        t = generate_hop_features(normalize_adjacency(g), x, 1)
        np.testing.assert_array_equal(t.data[:, 1, :], [[0.0], [1.0]])

    def test_isolated_node_zero_hops(self):
        g = parse_edge_list("0 1\n3 4")  # node 2 isolated
        x = build_node_features(g)
        t = generate_hop_features(normalize_adjacency(g), x, 3)
        np.testing.assert_array_equal(t.data[2, 0, :], x.matrix[2])
        np.testing.assert_array_equal(t.data[2, 1:, :], 0.0)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(0)
        g = random_dag(rng, 12)
        x = NodeFeatures(rng.standard_normal((12, 4)), tuple("abcd"))
        for mode in AdjacencyMode:
            adj = normalize_adjacency(g, mode)
            t = generate_hop_features(adj, x, 4)
            want = dense_hop_oracle(adj.matrix.toarray(), x.matrix, 4)
            np.testing.assert_allclose(t.data, want, atol=1e-10)

    def test_hop_zero_is_input_exactly(self):
        rng = np.random.default_rng(1)
        g = random_dag(rng, 9)
        x = NodeFeatures(rng.standard_normal((9, 5)), tuple("abcde"))
        t = generate_hop_features(normalize_adjacency(g), x, 2)
        assert np.array_equal(t.data[:, 0, :], x.matrix)

    def test_linearity_in_features(self):
        rng = np.random.default_rng(2)
        g = random_dag(rng, 10)
        adj = normalize_adjacency(g)
        x1 = rng.standard_normal((10, 3))
        x2 = rng.standard_normal((10, 3))
        a, b = 2.5, -1.25
        t1 = generate_hop_features(adj, NodeFeatures(x1, ("a", "b", "c")), 3)
        t2 = generate_hop_features(adj, NodeFeatures(x2, ("a", "b", "c")), 3)
        t12 = generate_hop_features(adj, NodeFeatures(a * x1 + b * x2, ("a", "b", "c")), 3)
        np.testing.assert_allclose(t12.data, a * t1.data + b * t2.data, atol=1e-9)

    def test_input_not_modified(self):
        rng = np.random.default_rng(3)
        g = random_dag(rng, 8)
        x = rng.standard_normal((8, 3))
        keep = x.copy()
        generate_hop_features(normalize_adjacency(g), NodeFeatures(x, ("a", "b", "c")), 3)
        np.testing.assert_array_equal(x, keep)

    def test_validation_errors(self):
        g = parse_edge_list("0 1")
        x = build_node_features(g)
        with pytest.raises(ValueError, match="hop count"):
            generate_hop_features(normalize_adjacency(g), x, 0)
        g3 = parse_edge_list("0 1\n1 2")
        with pytest.raises(ValueError, match="nodes"):
            generate_hop_features(normalize_adjacency(g3), x, 2)


class TestShard:
    def test_identity_shard(self):
        rng = np.random.default_rng(4)
        g = random_dag(rng, 7)
        t = generate_hop_features(normalize_adjacency(g), build_node_features(g), 2)
        s = shard_hop_tensor(t, np.arange(7))
        np.testing.assert_array_equal(s.data, t.data)

    def test_single_row_gather(self):
        rng = np.random.default_rng(5)
        g = random_dag(rng, 5)
        t = generate_hop_features(normalize_adjacency(g), build_node_features(g), 3)
        s = shard_hop_tensor(t, [3])
        assert s.data.shape == (1, 4, 7)
        np.testing.assert_array_equal(s.data[0], t.data[3])

    def test_partition_reassembles(self):
        rng = np.random.default_rng(6)
        g = random_dag(rng, 11)
        t = generate_hop_features(normalize_adjacency(g), build_node_features(g), 2)
        ids = rng.permutation(11)
        parts = [shard_hop_tensor(t, shard) for shard in np.array_split(ids, 3)]
        rebuilt = np.concatenate([p.data for p in parts])
        order = np.concatenate([shard for shard in np.array_split(ids, 3)])
        np.testing.assert_array_equal(rebuilt[np.argsort(order)], t.data)

    def test_out_of_range(self):
        g = parse_edge_list("0 1")
        t = generate_hop_features(normalize_adjacency(g), build_node_features(g), 1)
        with pytest.raises(IndexError):
            shard_hop_tensor(t, [2])


class TestPersist:
    def make_tensor(self, w=4, k=3):
        c = gen_csa_multiplier(w)
        adj = normalize_adjacency(c.graph)
        x = build_node_features(c.graph)
        return generate_hop_features(adj, x, k, graph_checksum(c.graph))

    def test_round_trip_bit_identical(self, tmp_path):
        t = self.make_tensor()
        path = tmp_path / "t.hopt"
        save_hop_tensor(t, path)
        back = load_hop_tensor(path)
        assert np.array_equal(back.data, t.data)
        assert back.graph_checksum == t.graph_checksum

    def test_checksum_mismatch(self, tmp_path):
        t = self.make_tensor()
        path = tmp_path / "t.hopt"
        save_hop_tensor(t, path)
        with pytest.raises(HopTensorIOError, match="checksum"):
            load_hop_tensor(path, expect_checksum=t.graph_checksum + 1)
        load_hop_tensor(path, expect_checksum=t.graph_checksum)

    def test_truncated_file(self, tmp_path):
        t = self.make_tensor()
        path = tmp_path / "t.hopt"
        save_hop_tensor(t, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 9])
        with pytest.raises(HopTensorIOError, match="bytes"):
            load_hop_tensor(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "t.hopt"
        path.write_bytes(b"NOPE" + bytes(60))
        with pytest.raises(HopTensorIOError, match="magic"):
            load_hop_tensor(path)

    def test_eight_bit_file_size_formula(self, tmp_path):
        """size = 32-byte header + 8 * n * (K+1) * d0."""
        c = gen_csa_multiplier(8)
        adj = normalize_adjacency(c.graph)
        x = build_node_features(c.graph)
        t = generate_hop_features(adj, x, 8, graph_checksum(c.graph))
        path = tmp_path / "t8.hopt"
        save_hop_tensor(t, path)
        n = c.graph.num_nodes
        assert path.stat().st_size == 32 + 8 * n * 9 * 7

    def test_rerun_bytes_identical(self, tmp_path):
        t = self.make_tensor()
        p1, p2 = tmp_path / "a.hopt", tmp_path / "b.hopt"
        save_hop_tensor(t, p1)
        save_hop_tensor(self.make_tensor(), p2)
        assert p1.read_bytes() == p2.read_bytes()


@pytest.mark.slow
def test_precompute_cost_linear_in_edges():
    """Doubling the edge count must not much more than double the
    propagation time (sparse-by-dense cost is proportional to nnz)."""
    import time

    from hoga.graph import NormalizedAdjacency, AdjacencyMode
    from scipy import sparse

    rng = np.random.default_rng(0)
    n, k = 30_000, 6
    x = NodeFeatures(rng.standard_normal((n, 7)), FEATURE_SCHEMA)
    times = {}
    for m in (8 * n, 16 * n):
        rows = rng.integers(0, n, size=m)
        cols = rng.integers(0, n, size=m)
        mat = sparse.csr_matrix((np.full(m, 1.0 / 16), (rows, cols)), shape=(n, n))
        adj = NormalizedAdjacency(mat, AdjacencyMode.SYMMETRIC_UNDIRECTED)
        best = float("inf")
        for _ in range(3):
            t0 = time.perf_counter()
            generate_hop_features(adj, x, k)
            best = min(best, time.perf_counter() - t0)
        times[m] = best
    ratio = times[16 * n] / times[8 * n]
    assert ratio <= 2.5, f"edge-doubling time ratio {ratio:.2f}"
