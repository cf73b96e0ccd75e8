import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gffmgan import autograd as ag
from gffmgan.autograd import Tensor, no_grad

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def numeric_grad(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + eps
        fp = f(x)
        x[i] = old - eps
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


@pytest.mark.parametrize(
    "op",
    [
        lambda t: ag.exp(t).sum(),
        lambda t: ag.sigmoid(t).sum(),
        lambda t: ag.tanh(t).sum(),
        lambda t: ag.softplus(t).sum(),
        lambda t: (t * t * 3.0 - t).mean(),
        lambda t: (ag.reciprocal(t * t + 1.0)).sum(),
        lambda t: (t[1:, ::2] * 2.0).sum(),
        lambda t: (t @ t.T).sum(),
        lambda t: ag.concat([t, t * 2.0], axis=0).sum(),
        lambda t: ag.take_rows(t, np.array([0, 2, 0])).sum(),
        lambda t: ag.transpose(t).reshape(-1).sum(),
    ],
)
def test_ops_match_finite_differences(op, rng):
    x = rng.standard_normal((3, 4))
    t = Tensor(x.copy(), requires_grad=True)
    op(t).backward()
    num = numeric_grad(lambda a: float(op(Tensor(a)).data), x.copy())
    np.testing.assert_allclose(t.grad, num, rtol=1e-6, atol=1e-8)


def test_broadcast_gradients_are_reduced():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.arange(3.0), requires_grad=True)
    (a * b).sum().backward()
    np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])
    np.testing.assert_array_equal(a.grad, np.tile(np.arange(3.0), (2, 1)))


def test_shared_subexpression_accumulates():
    x = Tensor(np.array(3.0), requires_grad=True)
    y = x * x
    (y + y).backward()
    assert x.grad == pytest.approx(12.0)


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad and y._parents == ()


def test_backward_requires_scalar_or_seed():
    x = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_float32_graph_stays_float32():
    x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    y = (1.0 - x) * 0.5 + 2.0
    assert y.dtype == np.float32
    y.sum().backward()
    assert x.grad.dtype == np.float32


@given(arrays(np.float64, (5,), elements=st.floats(-700, 700)))
def test_sigmoid_and_softplus_are_finite_everywhere(x):
    s = ag.sigmoid(Tensor(x)).data
    assert np.all((s >= 0) & (s <= 1))
    assert np.all(np.isfinite(ag.softplus(Tensor(x)).data))


@given(arrays(np.float64, (4,), elements=finite), arrays(np.float64, (4,), elements=finite))
def test_addition_commutes_in_value_and_gradient(a, b):
    ta, tb = Tensor(a, True), Tensor(b, True)
    (ta + tb).sum().backward()
    np.testing.assert_array_equal(ta.grad, np.ones(4))
    np.testing.assert_array_equal(tb.grad, np.ones(4))
