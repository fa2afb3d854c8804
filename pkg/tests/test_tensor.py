import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from adsd.errors import ShapeError, UsageError
from adsd.tensor import Tape, Tensor, backward, default_dtype, get_default_dtype, no_grad


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def test_sum_gradient_is_ones():
    x = leaf(np.random.default_rng(0).standard_normal((3, 4)))
    backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_square_gradient_is_twice_input():
    x = leaf(np.random.default_rng(1).standard_normal((2, 5)))
    backward((x * x).sum())
    np.testing.assert_array_equal(x.grad, 2 * x.data)


def test_shared_subexpression_accumulates():
    x = leaf([1.0, 2.0, 3.0])
    y = x * 3.0
    backward((y + y * y).sum())
    np.testing.assert_allclose(x.grad, 3.0 + 18.0 * x.data)


def test_scalar_arithmetic_and_mean():
    x = leaf([2.0, 4.0])
    loss = ((1.0 - x) / 2.0 - 1.0).mean()
    assert loss.item() == pytest.approx(((1 - 2) / 2 - 1 + (1 - 4) / 2 - 1) / 2)
    backward(loss)
    np.testing.assert_allclose(x.grad, [-0.25, -0.25])


def test_backward_rejects_non_scalar():
    x = leaf([1.0, 2.0])
    with pytest.raises(UsageError):
        backward(x * 2.0)


def test_tape_is_consumed():
    x = leaf([1.0, 2.0])
    loss = (x * x).sum()
    backward(loss)
    with pytest.raises(UsageError):
        backward(loss)


def test_tape_topological_order():
    x = leaf([1.0])
    a = x * 2.0
    b = a + x
    loss = (a * b).sum()
    nodes = Tape.from_root(loss).nodes
    pos = {id(t): i for i, t in enumerate(nodes)}
    for t in nodes:
        if t._node is not None:
            for inp in t._node.inputs:
                if inp._node is not None:      # leaves are not recorded
                    assert pos[id(inp)] < pos[id(t)]
    assert len({id(t) for t in nodes}) == len(nodes)


def test_no_grad_builds_no_graph():
    x = leaf([1.0])
    with no_grad():
        y = x * 2.0
    assert y._node is None and not y.requires_grad


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        leaf([1.0, 2.0]) + leaf([1.0, 2.0, 3.0])


def test_default_dtype_context():
    assert get_default_dtype() == np.float32
    with default_dtype(np.float64):
        assert Tensor([1, 2]).dtype == np.float64
    assert Tensor([1, 2]).dtype == np.float32


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e3, 1e3)))
def test_linear_combination_gradient(a):
    x = leaf(a)
    backward((x * 3.0 - x * 0.5 + 2.0).sum())
    np.testing.assert_allclose(x.grad, np.full(a.shape, 2.5))
    assert x.grad.shape == x.data.shape
