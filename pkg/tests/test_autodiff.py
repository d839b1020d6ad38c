"""Autodiff op contracts: spec'd examples, finite-difference oracles, and
structural invariants of the tape."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxchat.autodiff import Graph, GraphError, ShapeError, Tensor, softmax
from ctxchat.gradcheck import gradient_check
from ctxchat.optim import AdamState, adam_step, clip_global_norm

from helpers import op_fd_cases, run_op_fd_suite


def _t(data, grad=True, name=None):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad, name=name)


class TestMatmul:
    def test_identity(self):
        g = Graph()
        out = g.matmul(_t(np.eye(2)), _t([[1.0, 2.0], [3.0, 4.0]]))
        np.testing.assert_array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])

    def test_hand_arithmetic(self):
        g = Graph()
        out = g.matmul(_t([[1.0, 2.0]]), _t([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.data, [[11.0]])

    def test_shape_mismatch_names_both_shapes(self):
        g = Graph()
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            g.matmul(_t(np.ones((2, 3))), _t(np.ones((2, 3))))

    def test_grad_vs_finite_difference(self):
        rng = np.random.Generator(np.random.PCG64(1))
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True, name="a")
        b = Tensor(rng.normal(size=(4, 2)), requires_grad=True, name="b")
        rep = gradient_check(lambda g: g.sum(g.tanh(g.matmul(a, b))), [a, b], 1e-4)
        assert rep.ok, rep.failures()


class TestConv1d:
    def test_output_length(self):
        g = Graph()
        out = g.conv1d_valid(_t(np.ones((25, 2))), _t(np.ones((3, 2, 4))))
        assert out.shape == (23, 4)

    def test_zero_input_broadcasts_bias(self):
        g = Graph()
        bias = _t([0.5, -1.0])
        out = g.conv1d_valid(_t(np.zeros((6, 3))), _t(np.zeros((2, 3, 2))), bias)
        np.testing.assert_array_equal(out.data, np.tile([0.5, -1.0], (5, 1)))

    def test_hand_computed_sliding_products(self):
        # input [1,2,4,7], single filter [1,-1], zero bias:
        # (1-2, 2-4, 4-7) = (-1, -2, -3)
        g = Graph()
        x = _t(np.array([[1.0], [2.0], [4.0], [7.0]]))
        f = _t(np.array([1.0, -1.0]).reshape(2, 1, 1))
        out = g.conv1d_valid(x, f)
        np.testing.assert_allclose(out.data[:, 0], [-1.0, -2.0, -3.0])

    def test_window_longer_than_input(self):
        g = Graph()
        with pytest.raises(ShapeError, match="pad"):
            g.conv1d_valid(_t(np.ones((2, 3))), _t(np.ones((4, 3, 1))))

    def test_length_formula_all_windows(self):
        # L-W+1 for every 1 <= W <= L <= 64 (sampled grid to keep it quick)
        g = Graph(record=False)
        for L in range(1, 65, 3):
            for W in range(1, L + 1, 2):
                out = g.conv1d_valid(
                    Tensor(np.zeros((L, 1), dtype=np.float32)),
                    Tensor(np.zeros((W, 1, 1), dtype=np.float32)),
                )
                assert out.shape == (L - W + 1, 1), (L, W)


class TestMaxOverTime:
    def test_single_row(self):
        g = Graph()
        out = g.max_over_time(_t([[1.0, 5.0, -2.0]]))
        np.testing.assert_array_equal(out.data, [1.0, 5.0, -2.0])

    def test_columnwise(self):
        g = Graph()
        out = g.max_over_time(_t([[1.0, 5.0], [3.0, 2.0]]))
        np.testing.assert_array_equal(out.data, [3.0, 5.0])

    def test_tie_gradient_goes_to_first_row(self):
        g = Graph()
        x = _t([[2.0], [2.0]])
        loss = g.sum(g.max_over_time(x))
        g.backward(loss)
        np.testing.assert_array_equal(x.grad, [[1.0], [0.0]])


class TestActivations:
    def test_sigmoid_zero(self):
        assert Graph().sigmoid(_t([0.0])).data[0] == 0.5

    def test_tanh_zero(self):
        assert Graph().tanh(_t([0.0])).data[0] == 0.0

    def test_relu_negative_value_and_gradient(self):
        g = Graph()
        x = _t([-3.0])
        loss = g.sum(g.relu(x))
        assert loss.item() == 0.0
        g.backward(loss)
        np.testing.assert_array_equal(x.grad, [0.0])

    def test_no_overflow_on_extreme_inputs(self):
        g = Graph(record=False)
        x = Tensor(np.array([-1000.0, 1000.0], dtype=np.float32))
        for kind in ("sigmoid", "tanh", "relu"):
            out = g.activation(x, kind)
            assert np.isfinite(out.data).all()


class TestSoftmaxCrossEntropy:
    def test_uniform_logits_gives_log_c(self):
        g = Graph()
        loss = g.softmax_cross_entropy(_t(np.zeros(10)), 3)
        assert loss.item() == pytest.approx(np.log(10.0), rel=1e-9)

    def test_stabilized_no_overflow(self):
        g = Graph()
        loss = g.softmax_cross_entropy(_t([1000.0, 0.0]), 0)
        assert np.isfinite(loss.item())
        assert loss.item() == pytest.approx(0.0, abs=1e-6)

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            Graph().softmax_cross_entropy(_t([0.0, 1.0]), 2)

    def test_gradient_is_probs_minus_onehot(self):
        rng = np.random.Generator(np.random.PCG64(2))
        z = Tensor(rng.normal(size=7), requires_grad=True, name="z")
        g = Graph()
        loss = g.softmax_cross_entropy(z, 4)
        g.backward(loss)
        expect = softmax(z.data).copy()
        expect[4] -= 1.0
        np.testing.assert_allclose(z.grad, expect, atol=1e-12)
        rep = gradient_check(lambda g2: g2.softmax_cross_entropy(z, 4), [z], 1e-4)
        assert rep.ok

    @given(st.integers(min_value=0, max_value=2**31 - 1), st.floats(-50, 50))
    @settings(max_examples=40, deadline=None)
    def test_softmax_shift_invariance_and_normalization(self, seed, shift):
        rng = np.random.Generator(np.random.PCG64(seed))
        z = rng.normal(size=8)
        p = softmax(z)
        assert ((p > 0) & (p < 1)).all()
        assert abs(p.sum() - 1.0) < 1e-6
        np.testing.assert_allclose(softmax(z + shift), p, atol=1e-6)


class TestBackward:
    def test_sum_gives_ones(self):
        g = Graph()
        w = _t(np.ones((2, 3)))
        g.backward(g.sum(w))
        np.testing.assert_array_equal(w.grad, np.ones((2, 3)))

    def test_unused_parameter_gets_zero(self):
        g = Graph()
        used = _t([1.0, 2.0], name="used")
        unused = _t([5.0], name="unused")
        grads = g.backward(g.sum(used), [used, unused])
        np.testing.assert_array_equal(grads[1], [0.0])

    def test_non_scalar_loss_rejected(self):
        g = Graph()
        w = _t([1.0, 2.0])
        with pytest.raises(GraphError, match="scalar"):
            g.backward(g.tanh(w))

    def test_backward_twice_on_rebuilt_graph_is_bitwise_identical(self):
        def run():
            rng = np.random.Generator(np.random.PCG64(9))
            x = Tensor(rng.normal(size=(4, 3)).astype(np.float32), requires_grad=True)
            w = Tensor(rng.normal(size=(3, 2)).astype(np.float32), requires_grad=True)
            g = Graph()
            loss = g.mean(g.sigmoid(g.matmul(g.tanh(x), w)))
            g.backward(loss)
            return x.grad.tobytes(), w.grad.tobytes()

        assert run() == run()

    def test_reused_tensor_accumulates(self):
        g = Graph()
        x = _t([3.0])
        loss = g.sum(g.mul(x, x))  # d/dx x^2 = 2x
        g.backward(loss)
        np.testing.assert_allclose(x.grad, [6.0])


class TestAdam:
    def test_zero_gradient_is_noop(self):
        w = _t([[1.0, -2.0]])
        state = AdamState([w], lr=0.1)
        before = w.data.copy()
        adam_step([w], [np.zeros_like(w.data)], state)
        np.testing.assert_array_equal(w.data, before)
        assert state.step_count == 1

    def test_first_step_magnitude_is_lr(self):
        w = _t([10.0])
        state = AdamState([w], lr=1e-2)
        adam_step([w], [np.array([0.5])], state)
        # bias correction makes the first update lr * g/|g|
        assert abs(abs(10.0 - w.data[0]) - 1e-2) < 1e-6

    def test_quadratic_bowl_converges(self):
        # f(w) = ||w||^2, grad = 2w; 200 steps at lr 1e-2
        rng = np.random.Generator(np.random.PCG64(3))
        w = Tensor(rng.normal(size=5) * 0.5, requires_grad=True)
        state = AdamState([w], lr=1e-2)
        for _ in range(200):
            adam_step([w], [2.0 * w.data], state)
        assert np.linalg.norm(w.data) < 1e-3

    def test_shape_mismatch_rejected(self):
        w = _t([1.0, 2.0])
        state = AdamState([w])
        with pytest.raises(ShapeError):
            adam_step([w], [np.zeros(3)], state)

    def test_clip_global_norm(self):
        grads = [np.array([3.0]), np.array([4.0])]  # norm 5
        clipped = clip_global_norm(grads, 1.0)
        total = np.sqrt(sum(float((g * g).sum()) for g in clipped))
        assert total == pytest.approx(1.0)
        same = clip_global_norm(grads, 10.0)
        assert same[0] is grads[0]


class TestGradientCheckHarness:
    def test_linear_model_is_exact(self):
        rng = np.random.Generator(np.random.PCG64(4))
        w = Tensor(rng.normal(size=(3, 2)), requires_grad=True, name="w")
        x = Tensor(rng.normal(size=(2, 3)))
        rep = gradient_check(lambda g: g.sum(g.matmul(x, w)), [w], 1e-7)
        assert rep.ok and rep.worst < 1e-7

    def test_report_lists_failures(self):
        # a closure whose "gradient" the tape gets right but we check against
        # a perturbed parameter copy to force a visible failure entry
        w = _t([1.0], name="w")

        def closure(g):
            return g.sum(g.mul(w, w))

        rep = gradient_check(closure, [w], tolerance=1e-30)
        assert not rep.ok and rep.failures()[0].name == "w"


class TestOpFdSuite:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_every_op_case_passes(self, seed):
        for name, params, closure in op_fd_cases(seed):
            rep = gradient_check(closure, params, 1e-4)
            assert rep.ok, f"{name}: worst rel err {rep.worst}"

    def test_ten_seed_sweep(self):
        failures, worst = run_op_fd_suite(range(10))
        assert not failures, failures
        assert worst < 1e-4
