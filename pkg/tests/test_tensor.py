"""Tensor ops: hand-checked forward values, FD-checked gradients,
graph semantics (shared subexpressions, accumulation, determinism)."""

import math

import numpy as np
import pytest
from oracles import assert_grads_close, fd_gradient

from setrisk.errors import ShapeError
from setrisk.rng import stream
from setrisk.tensor import Tensor, concat


def scalarize(out, cot):
    """Project an op output onto a fixed cotangent so the loss is scalar."""
    return (out * Tensor(cot)).sum()


class TestForwardValues:
    def test_matmul_hand_example(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[0.0], [1.0]])
        np.testing.assert_array_equal((a @ b).data, [[2.0], [4.0]])

    def test_softmax_rows_hand_example(self):
        x = Tensor([[0.0, math.log(3.0)]])
        y = x.softmax_rows(scale=1.0)
        np.testing.assert_allclose(y.data, [[0.25, 0.75]], atol=1e-12)

    def test_softmax_scale_matches_manual(self):
        x = Tensor([[1.0, 2.0, 3.0]])
        y = x.softmax_rows(scale=0.5)
        e = np.exp(0.5 * np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(y.data, (e / e.sum())[None, :], atol=1e-12)

    def test_layer_norm_hand_example(self):
        x = Tensor([[1.0, 3.0]])
        y = x.layer_norm(Tensor([1.0, 1.0]), Tensor([0.0, 0.0]), eps=1e-12)
        np.testing.assert_allclose(y.data, [[-1.0, 1.0]], atol=1e-5)

    def test_activation_point_values(self):
        x = Tensor([0.0, 1.0, -2.0])
        np.testing.assert_allclose(x.relu().data, [0.0, 1.0, 0.0])
        np.testing.assert_allclose(x.sigmoid().data[0], 0.5)
        np.testing.assert_allclose(x.softplus().data[0], math.log(2.0))
        np.testing.assert_allclose(x.gelu().data[1], 0.8413447460685429, atol=1e-12)

    def test_mean_and_sum(self):
        x = Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(x.mean(axis=0).data, [2.0, 3.0])
        assert x.sum().item() == 10.0
        assert x.mean().item() == 2.5

    def test_concat_feature_axis(self):
        a = Tensor([[1.0, 2.0]])
        b = Tensor([[3.0]])
        np.testing.assert_array_equal(concat([a, b], axis=-1).data, [[1.0, 2.0, 3.0]])

    def test_transpose_and_reshape(self):
        x = Tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        np.testing.assert_array_equal(x.transpose().data, x.data.T)
        np.testing.assert_array_equal(x.reshape((3, 2)).data, x.data.reshape(3, 2))

    def test_softmax_rows_sum_to_one(self):
        rng = stream(11, "softmax-prop")
        for _ in range(20):
            x = Tensor(rng.normal(size=(5, 7)) * 10.0)
            y = x.softmax_rows(scale=1.0 / math.sqrt(7)).data
            np.testing.assert_allclose(y.sum(axis=-1), np.ones(5), atol=1e-9)
            assert np.all(y > 0.0) and np.all(y < 1.0)

    def test_finite_outputs_on_extreme_inputs(self):
        x = Tensor(np.array([[-1e4, 0.0, 1e4]]))
        for y in (x.softmax_rows(), x.sigmoid(), x.softplus(), x.gelu(),
                  x.layer_norm(Tensor(np.ones(3)), Tensor(np.zeros(3)))):
            assert np.all(np.isfinite(y.data))


def _rand(rng, shape):
    return rng.normal(size=shape)


# Each case builds leaves and a scalar-valued graph over them.
GRAD_CASES = []


def grad_case(name):
    def wrap(fn):
        GRAD_CASES.append(pytest.param(fn, id=name))
        return fn
    return wrap


@grad_case("add_same_shape")
def _(rng):
    a, b = Tensor(_rand(rng, (3, 4)), True), Tensor(_rand(rng, (3, 4)), True)
    cot = _rand(rng, (3, 4))
    return [a, b], lambda: scalarize(a + b, cot)


@grad_case("add_bias_broadcast")
def _(rng):
    a, b = Tensor(_rand(rng, (3, 4)), True), Tensor(_rand(rng, (4,)), True)
    cot = _rand(rng, (3, 4))
    return [a, b], lambda: scalarize(a + b, cot)


@grad_case("add_bias_broadcast_3d")
def _(rng):
    a, b = Tensor(_rand(rng, (2, 3, 4)), True), Tensor(_rand(rng, (4,)), True)
    cot = _rand(rng, (2, 3, 4))
    return [a, b], lambda: scalarize(a + b, cot)


@grad_case("scalar_ops")
def _(rng):
    a = Tensor(_rand(rng, (3, 4)), True)
    cot = _rand(rng, (3, 4))
    return [a], lambda: scalarize(2.5 * a - (a / 4.0) + 1.0 - a, cot)


@grad_case("mul_elementwise")
def _(rng):
    a, b = Tensor(_rand(rng, (3, 4)), True), Tensor(_rand(rng, (3, 4)), True)
    cot = _rand(rng, (3, 4))
    return [a, b], lambda: scalarize(a * b, cot)


@grad_case("matmul_2d")
def _(rng):
    a, b = Tensor(_rand(rng, (3, 4)), True), Tensor(_rand(rng, (4, 2)), True)
    cot = _rand(rng, (3, 2))
    return [a, b], lambda: scalarize(a @ b, cot)


@grad_case("matmul_3d_batched")
def _(rng):
    a, b = Tensor(_rand(rng, (2, 3, 4)), True), Tensor(_rand(rng, (2, 4, 5)), True)
    cot = _rand(rng, (2, 3, 5))
    return [a, b], lambda: scalarize(a @ b, cot)


@grad_case("transpose_2d")
def _(rng):
    a = Tensor(_rand(rng, (3, 4)), True)
    cot = _rand(rng, (4, 3))
    return [a], lambda: scalarize(a.transpose(), cot)


@grad_case("transpose_3d")
def _(rng):
    a = Tensor(_rand(rng, (2, 3, 4)), True)
    cot = _rand(rng, (3, 2, 4))
    return [a], lambda: scalarize(a.transpose((1, 0, 2)), cot)


@grad_case("reshape")
def _(rng):
    a = Tensor(_rand(rng, (3, 4)), True)
    cot = _rand(rng, (2, 6))
    return [a], lambda: scalarize(a.reshape((2, 6)), cot)


@grad_case("concat")
def _(rng):
    a, b = Tensor(_rand(rng, (3, 2)), True), Tensor(_rand(rng, (3, 5)), True)
    cot = _rand(rng, (3, 7))
    return [a, b], lambda: scalarize(concat([a, b], axis=-1), cot)


@grad_case("sum")
def _(rng):
    a = Tensor(_rand(rng, (3, 4)), True)
    return [a], lambda: a.sum()


@grad_case("mean_all")
def _(rng):
    a = Tensor(_rand(rng, (3, 4)), True)
    return [a], lambda: a.mean()


@grad_case("mean_axis0")
def _(rng):
    a = Tensor(_rand(rng, (5, 4)), True)
    cot = _rand(rng, (4,))
    return [a], lambda: scalarize(a.mean(axis=0), cot)


@grad_case("relu")
def _(rng):
    a = Tensor(_rand(rng, (3, 4)), True)
    cot = _rand(rng, (3, 4))
    return [a], lambda: scalarize(a.relu(), cot)


@grad_case("gelu")
def _(rng):
    a = Tensor(_rand(rng, (3, 4)), True)
    cot = _rand(rng, (3, 4))
    return [a], lambda: scalarize(a.gelu(), cot)


@grad_case("sigmoid")
def _(rng):
    a = Tensor(_rand(rng, (3, 4)), True)
    cot = _rand(rng, (3, 4))
    return [a], lambda: scalarize(a.sigmoid(), cot)


@grad_case("softplus")
def _(rng):
    a = Tensor(_rand(rng, (3, 4)), True)
    cot = _rand(rng, (3, 4))
    return [a], lambda: scalarize(a.softplus(), cot)


@grad_case("softmax_rows")
def _(rng):
    a = Tensor(_rand(rng, (3, 4)), True)
    cot = _rand(rng, (3, 4))
    return [a], lambda: scalarize(a.softmax_rows(scale=0.7), cot)


@grad_case("softmax_rows_3d")
def _(rng):
    a = Tensor(_rand(rng, (2, 3, 3)), True)
    cot = _rand(rng, (2, 3, 3))
    return [a], lambda: scalarize(a.softmax_rows(scale=1.0 / math.sqrt(3)), cot)


@grad_case("layer_norm")
def _(rng):
    a = Tensor(_rand(rng, (3, 4)), True)
    g = Tensor(_rand(rng, (4,)), True)
    b = Tensor(_rand(rng, (4,)), True)
    cot = _rand(rng, (3, 4))
    return [a, g, b], lambda: scalarize(a.layer_norm(g, b), cot)


@grad_case("dropout")
def _(rng):
    a = Tensor(_rand(rng, (4, 4)), True)
    cot = _rand(rng, (4, 4))
    seed = int(rng.integers(1 << 30))
    return [a], lambda: scalarize(a.dropout(0.5, stream(seed, "drop")), cot)


class TestGradients:
    @pytest.mark.parametrize("case", GRAD_CASES)
    def test_matches_central_differences(self, case):
        for trial in range(10):
            rng = stream(137, "fd", case.__name__, trial)
            leaves, f = case(rng)
            out = f()
            out.backward()
            for leaf in leaves:
                fd = fd_gradient(lambda: f().item(), leaf.data)
                assert_grads_close(leaf.grad, fd)


class TestGraphSemantics:
    def test_shared_subexpression_sums_paths(self):
        # e = (2x)·(3x): de/dx enumerated per path is d·2 + c·3 = 12x.
        x = Tensor(1.7, True)
        c = x * 2.0
        d = x * 3.0
        e = c * d
        e.backward()
        per_path = d.data * 2.0 + c.data * 3.0
        np.testing.assert_allclose(x.grad, per_path)
        np.testing.assert_allclose(x.grad, 12.0 * 1.7)

    def test_square_via_shared_operand(self):
        # y = x·x + x: paths give x + x + 1 = 2x + 1.
        x = Tensor(0.3, True)
        y = x * x + x
        y.backward()
        np.testing.assert_allclose(x.grad, 2.0 * 0.3 + 1.0)

    def test_repeated_backward_accumulates(self):
        x = Tensor([1.0, 2.0], True)
        (x * x).sum().backward()
        first = x.grad.copy()
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, 2.0 * first)

    def test_grad_reset_by_assignment(self):
        x = Tensor([1.0, 2.0], True)
        (x * x).sum().backward()
        x.grad = None
        (x * 3.0).sum().backward()
        np.testing.assert_allclose(x.grad, [3.0, 3.0])

    def test_backward_requires_scalar(self):
        x = Tensor([[1.0, 2.0]], True)
        with pytest.raises(ShapeError, match="scalar"):
            (x * 2.0).backward()

    def test_no_grad_paths_are_pruned(self):
        x = Tensor([1.0, 2.0], requires_grad=False)
        y = (x * x).sum()
        assert not y.requires_grad
        y.backward()
        assert x.grad is None

    def test_determinism_bit_identical(self):
        def run():
            rng = stream(5, "det")
            a = Tensor(rng.normal(size=(6, 6)), True)
            b = Tensor(rng.normal(size=(6, 6)), True)
            out = ((a @ b).softmax_rows(0.5).layer_norm(
                Tensor(np.ones(6)), Tensor(np.zeros(6))).gelu()).sum()
            out.backward()
            return out.item(), a.grad.copy(), b.grad.copy()

        v1, ga1, gb1 = run()
        v2, ga2, gb2 = run()
        assert v1 == v2
        assert np.array_equal(ga1, ga2) and np.array_equal(gb1, gb2)


class TestShapeErrors:
    def test_matmul_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(3, 4\).*\(3, 2\)"):
            Tensor(np.ones((3, 4))) @ Tensor(np.ones((3, 2)))

    def test_add_mismatch(self):
        with pytest.raises(ShapeError, match=r"\(2, 2\).*\(3,\)"):
            Tensor(np.ones((2, 2))) + Tensor(np.ones(3))

    def test_mul_mismatch(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 2))) * Tensor(np.ones((2, 3)))

    def test_layer_norm_width_mismatch(self):
        with pytest.raises(ShapeError, match="feature width"):
            Tensor(np.ones((2, 4))).layer_norm(Tensor(np.ones(3)), Tensor(np.zeros(3)))

    def test_softmax_scale_must_be_positive(self):
        with pytest.raises(ShapeError, match="positive"):
            Tensor(np.ones((2, 2))).softmax_rows(scale=0.0)


class TestRngStreams:
    def test_same_key_same_draws(self):
        a = stream(42, "x", 1).normal(size=5)
        b = stream(42, "x", 1).normal(size=5)
        assert np.array_equal(a, b)

    def test_different_labels_differ(self):
        a = stream(42, "x", 1).normal(size=5)
        b = stream(42, "x", 2).normal(size=5)
        assert not np.array_equal(a, b)

    def test_streams_independent_of_creation_order(self):
        r1 = stream(7, "a")
        _ = r1.normal(size=3)
        a_then = stream(7, "b").normal(size=4)
        b_only = stream(7, "b").normal(size=4)
        assert np.array_equal(a_then, b_only)
