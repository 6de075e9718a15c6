import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from moef import numerics as nm
from moef.errors import ContractError, DimensionError
from moef.numerics.gradcheck import numerical_gradient, relative_error


def _check_grad(build, *shapes, seed=0, tol=1e-6, positive=False):
    """Compare reverse-mode grads of sum(build(*leaves) * w) against central differences."""
    rng = np.random.default_rng(seed)
    leaves = []
    for shape in shapes:
        data = rng.uniform(0.1, 2.0, shape) if positive else rng.normal(size=shape)
        leaves.append(nm.Tensor(data, requires_grad=True))
    out = build(*leaves)
    weights = rng.normal(size=out.shape)
    loss = nm.tensor_sum(out * weights)
    nm.backward(loss)

    def f():
        with nm.no_grad():
            return float(np.sum(build(*leaves).data * weights))

    for leaf in leaves:
        numeric = numerical_gradient(f, leaf.data)
        assert relative_error(leaf.grad, numeric) < tol


class TestMatmul:
    def test_identity(self):
        a = nm.Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(nm.matmul(a, np.eye(2)).data, [[1, 2], [3, 4]])

    def test_hand_product(self):
        out = nm.matmul(nm.Tensor([[1.0, 2.0]]), nm.Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_gradient_5x7_7x3(self):
        _check_grad(nm.matmul, (5, 7), (7, 3))

    def test_batched_gradient(self):
        _check_grad(nm.matmul, (2, 3, 4, 5), (2, 3, 5, 2), seed=1)
        _check_grad(nm.matmul, (3, 4, 5), (5, 2), seed=2)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            nm.matmul(nm.Tensor(np.ones((2, 3))), nm.Tensor(np.ones((2, 3))))


class TestElementwise:
    def test_spot_values(self):
        assert nm.elementwise("sigmoid", nm.Tensor(0.0)).item() == 0.5
        assert nm.elementwise("log1p", nm.Tensor(0.0)).item() == 0.0

    @pytest.mark.parametrize("op", ["sigmoid", "tanh", "log1p"])
    def test_unary_gradients(self, op):
        _check_grad(lambda x: nm.elementwise(op, x), (4, 6), positive=(op == "log1p"))

    def test_relu_gradient_away_from_kink(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(5, 5))
        x[np.abs(x) < 1e-3] = 0.5
        leaf = nm.Tensor(x, requires_grad=True)
        nm.backward(nm.tensor_sum(nm.relu(leaf)))
        np.testing.assert_array_equal(leaf.grad, (x > 0).astype(float))

    @pytest.mark.parametrize("op", ["add", "mul", "sub"])
    def test_binary_gradients(self, op):
        _check_grad(lambda a, b: nm.elementwise(op, a, b), (3, 4), (3, 4))

    def test_broadcasting_gradients(self):
        _check_grad(lambda a, b: a * b + b, (4, 3), (3,), seed=5)
        _check_grad(lambda a, b: a / b, (2, 3), (2, 1), seed=6, positive=True)

    def test_binary_shape_mismatch(self):
        with pytest.raises(DimensionError):
            nm.elementwise("add", nm.Tensor(np.ones(3)), nm.Tensor(np.ones(4)))
        with pytest.raises(DimensionError):
            nm.add(nm.Tensor(np.ones((2, 3))), nm.Tensor(np.ones((3, 2))))

    def test_ranges(self):
        # float64 saturates tanh to exactly +-1 beyond |x| ~ 19
        s = nm.sigmoid(nm.Tensor(np.linspace(-30, 30, 101))).data
        t = nm.tanh(nm.Tensor(np.linspace(-15, 15, 101))).data
        assert np.all((s > 0) & (s < 1))
        assert np.all((t > -1) & (t < 1))

    @pytest.mark.parametrize(
        "build,shapes",
        [
            (lambda x: nm.exp(x), [(3, 3)]),
            (lambda x: nm.tensor_sum(x, axis=1, keepdims=True), [(3, 4)]),
            (lambda x: nm.mean(x, axis=0), [(3, 4)]),
            (lambda x: nm.reshape(x, (6, 2)), [(3, 4)]),
            (lambda x: nm.transpose(x, (2, 0, 1)), [(2, 3, 4)]),
            (lambda a, b: nm.concat([a, b], axis=1), [(2, 3), (2, 5)]),
            (lambda a, b: nm.stack([a, b], axis=1), [(2, 3), (2, 3)]),
            (lambda x: x[1:, ::2], [(4, 6)]),
            (lambda x: x[np.array([0, 2, 2])], [(4, 3)]),
            (lambda x: nm.softmax(x, axis=-1), [(3, 5)]),
            (lambda x: nm.softmax(x, axis=0), [(3, 5)]),
        ],
    )
    def test_structural_gradients(self, build, shapes):
        _check_grad(build, *shapes, seed=7)

    def test_log_and_sqrt_gradients(self):
        _check_grad(lambda x: nm.log(x) + nm.sqrt(x), (3, 3), positive=True)

    def test_masked_softmax_gradient(self):
        mask = np.array([[True, False, True, True], [False, False, True, False]])
        _check_grad(lambda x: nm.softmax(x, axis=-1, mask=mask), (2, 4), seed=8)

    def test_layer_norm_gradient(self):
        ln = nm.LayerNorm(5)
        _check_grad(lambda x: ln(x), (3, 5), seed=9)

    def test_embedding_gradient_is_row_sparse(self):
        table = nm.Tensor(np.arange(12.0).reshape(6, 2), requires_grad=True)
        idx = np.array([[1, 4], [1, 0]])
        nm.backward(nm.tensor_sum(nm.embedding(table, idx)))
        expected = np.zeros((6, 2))
        expected[1] = 2
        expected[4] = 1
        expected[0] = 1
        np.testing.assert_array_equal(table.grad, expected)
        np.testing.assert_array_equal(table.grad_rows, [0, 1, 4])


class TestSoftmax:
    def test_spot_values(self):
        np.testing.assert_allclose(nm.softmax(nm.Tensor([0.0, 0.0])).data, [0.5, 0.5], atol=1e-15)
        np.testing.assert_allclose(nm.softmax(nm.Tensor([math.log(2), 0.0])).data, [2 / 3, 1 / 3], atol=1e-15)

    def test_empty_axis_rejected(self):
        with pytest.raises(DimensionError):
            nm.softmax(nm.Tensor(np.zeros((3, 0))), axis=-1)

    def test_fully_masked_row_is_zero(self):
        out = nm.softmax(nm.Tensor(np.ones((2, 3))), mask=np.array([[False] * 3, [True, False, True]]))
        np.testing.assert_array_equal(out.data[0], 0.0)
        np.testing.assert_allclose(out.data[1], [0.5, 0, 0.5])

    @settings(max_examples=200, deadline=None)
    @given(
        arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)), elements=st.floats(-50, 50)),
        st.floats(-100, 100),
    )
    def test_rows_sum_to_one_and_shift_invariant(self, x, c):
        y = nm.softmax(nm.Tensor(x), axis=-1).data
        assert np.all(y > 0)
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12, rtol=0)
        shifted = nm.softmax(nm.Tensor(x + c), axis=-1).data
        assert np.max(np.abs(shifted - y)) < 1e-12


class TestBackward:
    def test_sum_gives_ones(self):
        x = nm.Tensor(np.zeros((2, 3, 4)), requires_grad=True)
        nm.backward(nm.tensor_sum(x))
        np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))

    def test_hand_derived_sigmoid(self):
        w = nm.Tensor(0.7, requires_grad=True)
        x = nm.Tensor(-1.3, requires_grad=True)
        nm.backward(nm.sigmoid(w * x))
        s = 1 / (1 + math.exp(0.7 * 1.3))
        assert w.grad == pytest.approx(s * (1 - s) * -1.3, rel=1e-14)
        assert x.grad == pytest.approx(s * (1 - s) * 0.7, rel=1e-14)

    def test_reused_leaf_accumulates_within_one_pass(self):
        x = nm.Tensor(3.0, requires_grad=True)
        nm.backward(x * x + x)
        assert x.grad == 7.0

    def test_non_scalar_loss_rejected(self):
        x = nm.Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ContractError):
            nm.backward(x * 2.0)

    def test_second_backward_without_reset_is_an_error(self):
        x = nm.Tensor(np.ones(3), requires_grad=True)
        nm.backward(nm.tensor_sum(x * x))
        with pytest.raises(nm.GradientStateError):
            nm.backward(nm.tensor_sum(x * x))
        x.zero_grad()
        nm.backward(nm.tensor_sum(x * x))
        np.testing.assert_array_equal(x.grad, [2, 2, 2])

    def test_tape_is_in_recorded_order(self):
        x = nm.Tensor(np.ones(2), requires_grad=True)
        y = nm.tanh(x)
        z = nm.tensor_sum(y * x)
        tape = nm.computation_tape(z)
        assert [n._seq for n in tape] == sorted(n._seq for n in tape)
        assert tape[0] is x and tape[-1] is z

    def test_no_grad_records_nothing(self):
        x = nm.Tensor(np.ones(2), requires_grad=True)
        with nm.no_grad():
            y = nm.tanh(x)
        assert not y.requires_grad

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(11)
            a = nm.Tensor(rng.normal(size=(6, 5)), requires_grad=True)
            b = nm.Tensor(rng.normal(size=(5, 4)), requires_grad=True)
            loss = nm.tensor_sum(nm.softmax(nm.tanh(a @ b), axis=-1) * rng.normal(size=(6, 4)))
            nm.backward(loss)
            return loss.data.tobytes(), a.grad.tobytes(), b.grad.tobytes()

        assert run() == run()


class TestAdagrad:
    def test_two_steps_hand_arithmetic(self):
        state = nm.AdagradState(learning_rate=0.01, epsilon=0.0)
        p = {"w": np.zeros(1)}
        nm.adagrad_step(p, {"w": np.ones(1)}, state)
        assert p["w"][0] == pytest.approx(-0.01, abs=1e-15)
        nm.adagrad_step(p, {"w": np.ones(1)}, state)
        assert p["w"][0] == pytest.approx(-0.01 - 0.01 / math.sqrt(2), abs=1e-15)
        assert p["w"][0] == pytest.approx(-0.0170711, abs=1e-7)

    def test_zero_gradient_changes_nothing(self):
        state = nm.AdagradState()
        p = {"w": np.array([0.3, -0.2])}
        nm.adagrad_step(p, {"w": np.zeros(2)}, state)
        np.testing.assert_array_equal(p["w"], [0.3, -0.2])
        np.testing.assert_array_equal(state.accumulators["w"], [0.0, 0.0])

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            nm.adagrad_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, nm.AdagradState())

    def test_default_epsilon(self):
        assert nm.AdagradState().epsilon == 1e-8

    def test_row_sparse_update_matches_dense(self):
        rng = np.random.default_rng(0)
        dense_p = {"t": rng.normal(size=(10, 3))}
        sparse_p = {"t": dense_p["t"].copy()}
        dense_s, sparse_s = nm.AdagradState(), nm.AdagradState()
        for _ in range(3):
            g = np.zeros((10, 3))
            rows = np.unique(rng.integers(0, 10, 4))
            g[rows] = rng.normal(size=(len(rows), 3))
            nm.adagrad_step(dense_p, {"t": g}, dense_s)
            nm.adagrad_step(sparse_p, {"t": g}, sparse_s, rows={"t": rows})
        assert dense_p["t"].tobytes() == sparse_p["t"].tobytes()

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (5, 4), elements=st.floats(-10, 10)), st.integers(1, 5))
    def test_accumulators_monotone(self, g, steps):
        state = nm.AdagradState()
        p = {"w": np.zeros((5, 4))}
        prev = np.zeros((5, 4))
        for k in range(steps):
            nm.adagrad_step(p, {"w": g * (k + 1)}, state)
            acc = state.accumulators["w"]
            assert np.all(acc >= prev) and np.all(acc >= 0)
            prev = acc.copy()
