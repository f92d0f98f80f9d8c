import math

import numpy as np
import pytest

from csclog import tensor as T


def _rng(seed=0):
    return np.random.default_rng(seed)


def _params_from(rng, *shapes):
    return [T.Parameter(f"p{i}", rng.standard_normal(s)) for i, s in enumerate(shapes)]


class TestPrimitives:
    def test_finite_check_on_construction(self):
        with pytest.raises(ValueError):
            T.Tensor([1.0, float("nan")])
        with pytest.raises(ValueError):
            T.Tensor([float("inf")])

    def test_add_broadcast_bias(self):
        x = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = T.Parameter("b", [[10.0, 20.0]])
        out = T.add(x, b)
        assert np.allclose(out.data, [[11.0, 22.0], [13.0, 24.0]])
        T.tsum(out).backward()
        assert np.allclose(b.grad, [[2.0, 2.0]])

    def test_matmul_affine_example(self):
        x = T.Tensor([[1.0, 2.0]])
        W = T.Tensor([[1.0], [1.0]])
        b = T.Tensor([[0.5]])
        out = T.add(T.matmul(x, W), b)
        assert np.allclose(out.data, [[3.5]])

    def test_softmax_symmetry(self):
        out = T.softmax(T.Tensor([[0.0, 0.0]]))
        assert np.allclose(out.data, [[0.5, 0.5]])

    def test_softmax_distribution_contract(self):
        rng = _rng(7)
        for _ in range(20):
            x = T.Tensor(rng.standard_normal((1, 9)) * 10)
            p = T.softmax(x).data
            assert abs(p.sum() - 1.0) < 1e-12
            assert np.all(p > 0.0) and np.all(p < 1.0)

    def test_softmax_large_logits_stable(self):
        p = T.softmax(T.Tensor([[1000.0, 0.0]])).data
        assert np.isfinite(p).all()
        assert abs(p.sum() - 1.0) < 1e-12

    def test_cross_entropy_analytic(self):
        val = T.cross_entropy(T.Tensor([0.5, 0.5]), 0).item()
        assert math.isclose(val, math.log(2.0), rel_tol=1e-12)

    def test_cross_entropy_certain_prediction(self):
        assert T.cross_entropy(T.Tensor([0.0, 1.0]), 1).item() == 0.0

    def test_cross_entropy_one_hot_form(self):
        a = T.cross_entropy(T.Tensor([0.25, 0.75]), np.array([1.0, 0.0])).item()
        b = T.cross_entropy(T.Tensor([0.25, 0.75]), 0).item()
        assert a == b

    def test_cross_entropy_rejects_non_distribution(self):
        with pytest.raises(ValueError):
            T.cross_entropy(T.Tensor([0.9, 0.9]), 0)

    def test_cross_entropy_rejects_bad_index(self):
        with pytest.raises(ValueError):
            T.cross_entropy(T.Tensor([0.5, 0.5]), 5)


class TestMlp:
    def test_zero_weights_relu_is_zero(self):
        W = T.Parameter("W", np.zeros((3, 2)))
        b = T.Parameter("b", np.zeros((1, 2)))
        out = T.mlp_apply([(W, b, "relu")], T.Tensor([[1.0, -2.0, 3.0]]))
        assert np.allclose(out.data, 0.0)

    def test_identity_layer_passthrough(self):
        W = T.Parameter("W", np.eye(3))
        b = T.Parameter("b", np.zeros((1, 3)))
        x = T.Tensor([[1.0, -2.0, 3.0]])
        out = T.mlp_apply([(W, b, "identity")], x)
        assert np.allclose(out.data, x.data)

    def test_shape_mismatch_raises(self):
        W = T.Parameter("W", np.zeros((4, 2)))
        b = T.Parameter("b", np.zeros((1, 2)))
        with pytest.raises(ValueError):
            T.mlp_apply([(W, b, "relu")], T.Tensor([[1.0, 2.0]]))


class TestLstm:
    @staticmethod
    def _cells(rng, d, h, layers=2, scale=1.0):
        cells = []
        for layer in range(layers):
            in_dim = d if layer == 0 else h
            cells.append(
                {
                    "Wx": T.Parameter(f"l{layer}.Wx", scale * rng.standard_normal((in_dim, 4 * h))),
                    "Wh": T.Parameter(f"l{layer}.Wh", scale * rng.standard_normal((h, 4 * h))),
                    "b": T.Parameter(f"l{layer}.b", scale * rng.standard_normal((1, 4 * h))),
                }
            )
        return cells

    def test_zero_parameters_give_zero_state(self):
        cells = self._cells(_rng(0), 3, 4, scale=0.0)
        out = T.lstm_apply(cells, T.Tensor(_rng(1).standard_normal((5, 3))), hidden=4)
        assert np.allclose(out.data, 0.0)

    def test_empty_input_gives_zero_vector(self):
        cells = self._cells(_rng(0), 3, 4)
        out = T.lstm_apply(cells, T.Tensor(np.zeros((0, 3))), hidden=4)
        assert out.data.shape == (1, 4)
        assert np.allclose(out.data, 0.0)

    def test_width_mismatch_raises(self):
        cells = self._cells(_rng(0), 3, 4)
        with pytest.raises(ValueError):
            T.lstm_apply(cells, T.Tensor(np.zeros((2, 5))), hidden=4)

    def test_gradient_matches_finite_differences(self):
        rng = _rng(3)
        cells = self._cells(rng, 4, 3, layers=1, scale=0.4)
        X = T.Tensor(rng.standard_normal((3, 4)))
        probe = rng.standard_normal((3, 1))

        def f():
            return T.matmul(T.lstm_apply(cells, X, hidden=3), T.Tensor(probe))

        params = [t for c in cells for t in c.values()]
        report = T.grad_check(f, params)
        assert report.max_rel_error < 1e-3, report

    def test_two_layer_gradient(self):
        rng = _rng(4)
        cells = self._cells(rng, 3, 2, layers=2, scale=0.5)
        X = T.Tensor(rng.standard_normal((4, 3)))
        probe = rng.standard_normal((2, 1))

        def f():
            return T.matmul(T.lstm_apply(cells, X, hidden=2), T.Tensor(probe))

        params = [t for c in cells for t in c.values()]
        assert T.grad_check(f, params).max_rel_error < 1e-3


class TestGcn:
    def test_no_edges_identity_weight_is_identity(self):
        X = T.Tensor(_rng(0).standard_normal((4, 3)))
        W = T.Parameter("W", np.eye(3))
        A = T.Tensor(np.zeros((4, 4)))
        out = T.gcn_layer(W, X, A)
        assert np.allclose(out.data, X.data)

    def test_single_node(self):
        X = T.Tensor([[1.0, 2.0]])
        W = T.Parameter("W", [[2.0, 0.0], [0.0, 3.0]])
        out = T.gcn_layer(W, X, T.Tensor([[0.0]]))
        assert np.allclose(out.data, [[2.0, 6.0]])

    def test_matches_dense_oracle(self):
        # Direct dense normalized propagation, written independently.
        rng = _rng(5)
        n, d = 3, 4
        A = rng.random((n, n))
        np.fill_diagonal(A, 0.0)
        X = rng.standard_normal((n, d))
        W = rng.standard_normal((d, d))

        a_hat = A + np.eye(n)
        deg = a_hat.sum(axis=1)
        d_half = np.diag(deg**-0.5)
        expected = d_half @ a_hat @ d_half @ X @ W

        out = T.gcn_layer(T.Parameter("W", W), T.Tensor(X), T.Tensor(A))
        assert np.allclose(out.data, expected, atol=1e-9)

    def test_non_square_adjacency_raises(self):
        with pytest.raises(ValueError):
            T.gcn_layer(T.Parameter("W", np.eye(2)), T.Tensor(np.zeros((2, 2))), T.Tensor(np.zeros((2, 3))))

    def test_gradient_through_adjacency(self):
        rng = _rng(6)
        n, d = 3, 2
        W = T.Parameter("W", rng.standard_normal((d, d)))
        raw = T.Parameter("edges", rng.random((n * (n - 1), 1)))
        pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
        X = T.Tensor(rng.standard_normal((n, d)))
        probe = rng.standard_normal((d, 1))

        def f():
            A = T.edge_matrix(T.sigmoid(raw), pairs, n)
            out = T.relu(T.gcn_layer(W, X, A))
            return T.tsum(T.matmul(out, T.Tensor(probe)))

        assert T.grad_check(f, [W, raw]).max_rel_error < 1e-3


class TestConvScalar:
    def test_zero_kernel_zero_bias(self):
        k = T.Parameter("k", np.zeros((4, 1)))
        b = T.Parameter("kb", np.zeros((1, 1)))
        out = T.conv_scalar(k, b, T.Tensor(_rng(0).standard_normal((1, 4))))
        assert out.item() == 0.0

    def test_one_hot_kernel_selects_position(self):
        k = np.zeros((4, 1))
        k[2, 0] = 1.0
        x = np.array([[5.0, 6.0, 7.0, 8.0]])
        out = T.conv_scalar(T.Parameter("k", k), T.Parameter("kb", [[0.25]]), T.Tensor(x))
        assert out.item() == 7.25

    def test_length_mismatch_raises(self):
        with pytest.raises(ValueError):
            T.conv_scalar(T.Parameter("k", np.zeros((3, 1))), T.Parameter("kb", [[0.0]]), T.Tensor(np.zeros((1, 4))))

    def test_gradient(self):
        rng = _rng(7)
        k = T.Parameter("k", rng.standard_normal((5, 1)))
        b = T.Parameter("kb", rng.standard_normal((1, 1)))
        x = T.Tensor(rng.standard_normal((1, 5)))

        def f():
            return T.conv_scalar(k, b, x)

        assert T.grad_check(f, [k, b]).max_rel_error < 1e-3


class TestAdam:
    def test_first_step_magnitude(self):
        p = T.Parameter("p", np.array([1.0]))
        opt = T.Adam([p], lr=0.001, weight_decay=0.0)
        p.grad = np.array([2.0])
        opt.step()
        assert np.allclose(p.data, 0.999, atol=1e-6)

    def test_zero_gradient_no_motion(self):
        p = T.Parameter("p", np.array([1.5]))
        opt = T.Adam([p], lr=0.01, weight_decay=0.0)
        p.grad = np.zeros(1)
        opt.step()
        assert p.data[0] == 1.5

    def test_weight_decay_shrinks_parameters(self):
        p = T.Parameter("p", np.array([1.0]))
        opt = T.Adam([p], lr=0.1, weight_decay=0.5)
        p.grad = np.zeros(1)
        opt.step()
        assert np.allclose(p.data, 0.95)

    def test_identical_trajectories(self):
        def run():
            rng = _rng(11)
            p = T.Parameter("p", np.array([0.3, -0.7]))
            opt = T.Adam([p], lr=0.01)
            for _ in range(25):
                p.grad = rng.standard_normal(2)
                opt.step()
            return p.data.copy()

        assert np.array_equal(run(), run())

    def test_non_finite_gradient_rejected(self):
        p = T.Parameter("p", np.array([1.0]))
        opt = T.Adam([p], lr=0.01)
        p.grad = np.array([float("nan")])
        with pytest.raises(ValueError):
            opt.step()


class TestDropout:
    def test_rate_zero_identity(self):
        x = T.Tensor([[1.0, 2.0]])
        assert T.dropout(x, 0.0, _rng(0), training=True) is x

    def test_inference_identity(self):
        x = T.Tensor([[1.0, 2.0]])
        assert T.dropout(x, 0.9, None, training=False) is x

    def test_mean_preserved_at_scale(self):
        # Law of large numbers: inverted scaling keeps the expectation at 1.
        x = T.Tensor(np.ones((1, 10000)))
        out = T.dropout(x, 0.5, _rng(42), training=True)
        assert abs(out.data.mean() - 1.0) < 0.05

    def test_invalid_rate(self):
        with pytest.raises(ValueError):
            T.dropout(T.Tensor([1.0]), 1.0, _rng(0), training=True)

    def test_gradient_with_fixed_mask(self):
        rng_seed = 99
        x = T.Parameter("x", _rng(1).standard_normal((2, 6)) + 3.0)
        probe = _rng(2).standard_normal((6, 1))

        def f():
            out = T.dropout(x, 0.4, np.random.default_rng(rng_seed), training=True)
            return T.tsum(T.matmul(out, T.Tensor(probe)))

        assert T.grad_check(f, [x]).max_rel_error < 1e-3


class TestGradCheckHarness:
    def test_linear_function_exact(self):
        w = T.Parameter("w", np.array([[2.0], [3.0]]))
        x = T.Tensor([[1.0, 4.0]])

        def f():
            return T.matmul(x, w)

        report = T.grad_check(f, [w])
        assert report.max_rel_error < 1e-9

    def test_detects_corrupted_gradient(self):
        w = T.Parameter("w", np.array([[2.0]]))
        x = T.Tensor([[3.0]])

        calls = {"n": 0}

        def f():
            calls["n"] += 1
            out = T.matmul(x, w)
            if calls["n"] == 1:  # corrupt only the analytic pass
                real = out._backward

                def bad(g):
                    real(g * 7.0)

                out._backward = bad
            return out

        report = T.grad_check(f, [w])
        assert report.max_rel_error > 1e-3

    @pytest.mark.parametrize(
        "name",
        ["add", "mul", "matmul", "relu", "sigmoid", "tanh", "exp", "log", "softmax",
         "concat", "narrow", "gather", "edge_matrix", "mean", "pow", "cross_entropy"],
    )
    def test_every_op_gradient(self, name):
        rng = _rng(abs(hash(name)) % 2**32)
        a = T.Parameter("a", rng.standard_normal((3, 4)) + 2.5)  # positive, off relu kink
        b = T.Parameter("b", rng.standard_normal((3, 4)) + 2.5)
        probe = T.Tensor(rng.standard_normal((3, 4)))
        probe_wide = T.Tensor(rng.standard_normal((3, 8)))
        probe_slim = T.Tensor(rng.standard_normal((3, 2)))
        probe_sq = T.Tensor(rng.standard_normal((4, 4)))

        ops = {
            "add": lambda: T.tsum(T.mul(T.add(a, b), probe)),
            "mul": lambda: T.tsum(T.mul(T.mul(a, b), probe)),
            "matmul": lambda: T.tsum(T.matmul(a, T.reshape(b, (4, 3)))),
            "relu": lambda: T.tsum(T.mul(T.relu(a), probe)),
            "sigmoid": lambda: T.tsum(T.mul(T.sigmoid(a), probe)),
            "tanh": lambda: T.tsum(T.mul(T.tanh(a), probe)),
            "exp": lambda: T.tsum(T.mul(T.exp(T.mul(a, T.Tensor(0.3))), probe)),
            "log": lambda: T.tsum(T.mul(T.log(a), probe)),
            "softmax": lambda: T.tsum(T.mul(T.softmax(a), probe)),
            "concat": lambda: T.tsum(T.mul(T.concat([a, b], axis=1), probe_wide)),
            "narrow": lambda: T.tsum(T.mul(T.narrow(a, 1, 1, 3), probe_slim)),
            "gather": lambda: T.tsum(T.mul(T.gather_rows(a, [0, 2, 2]), probe)),
            "edge_matrix": lambda: T.tsum(
                T.mul(
                    T.edge_matrix(T.reshape(b, (12, 1)),
                                  [(i, j) for i in range(4) for j in range(4) if i != j], 4),
                    probe_sq,
                )
            ),
            "mean": lambda: T.mean(T.mul(a, b)),
            "pow": lambda: T.tsum(T.mul(T.pow_const(a, -0.5), probe)),
            "cross_entropy": lambda: T.cross_entropy(T.softmax(T.reshape(a, (1, 12))), 5),
        }
        report = T.grad_check(ops[name], [a, b])
        assert report.max_rel_error < 1e-3, (name, report)
