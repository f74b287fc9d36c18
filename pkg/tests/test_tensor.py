"""Kernel oracles and the gradient contract (finite differences)."""

import numpy as np
import pytest

from hoga import tensor as T
from hoga.tensor import ShapeError, Tensor


def finite_difference(f, x0: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar function, entry by entry."""
    g = np.zeros_like(x0)
    flat = x0.ravel()
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += step
        xm[i] -= step
        g.ravel()[i] = (f(xp.reshape(x0.shape)) - f(xm.reshape(x0.shape))) / (2 * step)
    return g


def assert_grad_close(analytic: np.ndarray, fd: np.ndarray, tol: float = 1e-4):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-8)
    rel = np.abs(analytic - fd) / denom
    assert rel.max() < tol, f"max relative error {rel.max():.3e}"


class TestForwardOracles:
    def test_matmul_identity(self):
        m = Tensor(np.arange(4.0).reshape(2, 2))
        out = T.matmul(Tensor(np.eye(2)), m)
        np.testing.assert_array_equal(out.data, m.data)

    def test_matmul_hand_example(self):
        out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
        np.testing.assert_array_equal(out.data, [[17.0], [39.0]])

    def test_matmul_against_triple_loop(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((7, 5))
        b = rng.standard_normal((5, 3))
        want = np.zeros((7, 3))
        for i in range(7):
            for j in range(3):
                for k in range(5):
                    want[i, j] += a[i, k] * b[k, j]
        got = T.matmul(Tensor(a), Tensor(b)).data
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_matmul_batched_matches_per_slice(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((4, 3, 5))
        b = rng.standard_normal((5, 2))
        got = T.matmul(Tensor(a), Tensor(b)).data
        for i in range(4):
            np.testing.assert_allclose(got[i], a[i] @ b, atol=1e-12)

    def test_matmul_shape_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_softmax_symmetry(self):
        out = T.softmax_rows(Tensor([[0.0, 0.0]]))
        np.testing.assert_array_equal(out.data, [[0.5, 0.5]])

    def test_softmax_large_values_no_overflow(self):
        out = T.softmax_rows(Tensor([[1000.0, 1000.0]]))
        np.testing.assert_array_equal(out.data, [[0.5, 0.5]])
        assert np.all(np.isfinite(out.data))

    def test_softmax_matches_direct_formula(self):
        x = np.array([[1.0, 2.0, 3.0]])
        want = np.exp(x) / np.exp(x).sum()
        np.testing.assert_allclose(T.softmax_rows(Tensor(x)).data, want, atol=1e-15)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-1e6, 1e6, size=(20, 9))
        s = T.softmax_rows(Tensor(x)).data
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)

    def test_layer_norm_constant_row(self):
        out = T.layer_norm(Tensor([[3.0, 3.0, 3.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_layer_norm_unit_variance_row(self):
        out = T.layer_norm(
            Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-300
        )
        np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-9)

    def test_layer_norm_row_stats(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 8)) * 3 + 1
        out = T.layer_norm(Tensor(x), Tensor(np.ones(8)), Tensor(np.zeros(8)), eps=1e-5).data
        np.testing.assert_allclose(out.mean(axis=1), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.var(axis=1), 1.0, atol=1e-4)

    def test_relu(self):
        out = T.relu(Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_mul_identity(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((3, 4))
        out = T.mul(Tensor(x), Tensor(np.ones((3, 4))))
        np.testing.assert_array_equal(out.data, x)

    def test_concat_length(self):
        out = T.concat_last([Tensor(np.ones((2, 3))), Tensor(np.zeros((2, 5)))])
        assert out.data.shape == (2, 8)

    def test_ndim_limit(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 2, 2, 2)))

    def test_deterministic_kernels(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal((6, 9, 16))
        b = rng.standard_normal((16, 16))
        one = T.matmul(Tensor(a), Tensor(b)).data
        two = T.matmul(Tensor(a.copy()), Tensor(b.copy())).data
        assert np.array_equal(one, two)


class TestGradients:
    def test_sum_of_squares(self):
        x = T.parameter([1.0, 2.0])
        loss = T.sum_all(T.mul(x, x))
        loss.backward()
        np.testing.assert_allclose(x.grad, [2.0, 4.0], atol=1e-12)

    def test_softmax_sum_is_constant(self):
        x = T.parameter(np.random.default_rng(0).standard_normal((3, 5)))
        loss = T.sum_all(T.softmax_rows(x))
        loss.backward()
        np.testing.assert_allclose(x.grad, 0.0, atol=1e-12)

    def test_non_scalar_loss_rejected(self):
        x = T.parameter(np.ones((2, 2)))
        with pytest.raises(ShapeError, match="scalar"):
            T.mul(x, x).backward()

    def test_grad_accumulates_across_uses(self):
        x = T.parameter([2.0])
        loss = T.sum_all(T.add(T.mul(x, x), x))  # x^2 + x
        loss.backward()
        np.testing.assert_allclose(x.grad, [5.0], atol=1e-12)

    @pytest.mark.parametrize(
        "name",
        [
            "matmul2d", "matmul_batched", "add_broadcast", "mul_broadcast",
            "relu", "log", "softmax", "layer_norm", "concat", "reshape",
            "take_hop", "take_col", "gather", "transpose", "scale",
        ],
    )
    def test_per_op_contract(self, name):
        """Finite-difference sweep over each primitive, composed into a
        scalar through a fixed quadratic so gradients are nontrivial."""
        rng = np.random.default_rng(hash(name) % 2**32)
        x0 = rng.standard_normal((3, 4, 5)) if name in ("matmul_batched", "take_hop", "softmax", "layer_norm") else rng.standard_normal((4, 6))
        mixer = rng.standard_normal(1000)

        def build(xt: Tensor) -> Tensor:
            if name == "matmul2d":
                w = Tensor(np.random.default_rng(0).standard_normal((6, 3)))
                return T.matmul(xt, w)
            if name == "matmul_batched":
                w = Tensor(np.random.default_rng(0).standard_normal((5, 2)))
                return T.matmul(xt, w)
            if name == "add_broadcast":
                return T.add(xt, Tensor(np.random.default_rng(0).standard_normal(6)))
            if name == "mul_broadcast":
                return T.mul(xt, Tensor(np.random.default_rng(0).standard_normal((4, 1))))
            if name == "relu":
                return T.relu(xt)
            if name == "log":
                return T.log(T.add(T.mul(xt, xt), Tensor(np.ones(xt.data.shape))))
            if name == "softmax":
                return T.softmax_rows(xt)
            if name == "layer_norm":
                sc = Tensor(np.random.default_rng(0).standard_normal(5))
                bi = Tensor(np.random.default_rng(1).standard_normal(5))
                return T.layer_norm(xt, sc, bi)
            if name == "concat":
                return T.concat_last([xt, T.mul(xt, xt)])
            if name == "reshape":
                return T.reshape(xt, (2, 12))
            if name == "take_hop":
                return T.take_hop(xt, 2)
            if name == "take_col":
                return T.take_col(xt, 3)
            if name == "gather":
                idx = np.random.default_rng(2).integers(0, 6, size=4)
                return T.gather_rows(xt, idx)
            if name == "transpose":
                return T.transpose_last2(xt)
            if name == "scale":
                return T.scale(xt, -2.5)
            raise AssertionError(name)

        def scalar(x: np.ndarray) -> float:
            out = build(Tensor(x))
            m = Tensor(mixer[: out.data.size].reshape(out.data.shape))
            return float(T.sum_all(T.mul(out, m)).data)

        xt = T.parameter(x0)
        out = build(xt)
        m = Tensor(mixer[: out.data.size].reshape(out.data.shape))
        T.sum_all(T.mul(out, m)).backward()
        fd = finite_difference(scalar, x0)
        assert_grad_close(xt.grad, fd)

    def test_layer_norm_param_grads(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((3, 5))
        mixer = rng.standard_normal((3, 5))
        sc0 = rng.standard_normal(5)
        bi0 = rng.standard_normal(5)

        def loss_of(sc, bi):
            out = T.layer_norm(Tensor(x), Tensor(sc), Tensor(bi))
            return float(T.sum_all(T.mul(out, Tensor(mixer))).data)

        sc = T.parameter(sc0)
        bi = T.parameter(bi0)
        T.sum_all(T.mul(T.layer_norm(Tensor(x), sc, bi), Tensor(mixer))).backward()
        assert_grad_close(sc.grad, finite_difference(lambda v: loss_of(v, bi0), sc0))
        assert_grad_close(bi.grad, finite_difference(lambda v: loss_of(sc0, v), bi0))

    def test_spmm_grad(self):
        from scipy import sparse

        rng = np.random.default_rng(10)
        a = sparse.random(6, 6, density=0.4, random_state=1, format="csr")
        at = a.T.tocsr()
        x0 = rng.standard_normal((6, 3))
        mixer = rng.standard_normal((6, 3))

        def loss_of(x):
            out = T.spmm(a, at, Tensor(x))
            return float(T.sum_all(T.mul(out, Tensor(mixer))).data)

        xt = T.parameter(x0)
        T.sum_all(T.mul(T.spmm(a, at, xt), Tensor(mixer))).backward()
        assert_grad_close(xt.grad, finite_difference(loss_of, x0))

    def test_gradients_helper(self):
        x = T.parameter([3.0])
        y = T.parameter([4.0])
        grads = T.gradients(T.sum_all(T.mul(x, y)), {"x": x, "y": y})
        np.testing.assert_allclose(grads["x"], [4.0])
        np.testing.assert_allclose(grads["y"], [3.0])
