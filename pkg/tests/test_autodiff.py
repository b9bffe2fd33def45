import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from giin import autodiff as ad
from giin.autodiff import Tensor
from giin.errors import DimensionError, DomainError

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def leaf(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


# ------------------------------------------------------------------ affine

def test_affine_selects_column():
    out = ad.affine(Tensor([1.0, 0.0]), Tensor([[2.0, 3.0], [4.0, 5.0]]), Tensor([1.0, 1.0]))
    np.testing.assert_array_equal(out.data, [3.0, 5.0])


def test_affine_zero_input_returns_bias():
    rng = np.random.default_rng(0)
    out = ad.affine(Tensor([0.0, 0.0]), Tensor(rng.normal(size=(2, 2))), Tensor([7.0, -2.0]))
    np.testing.assert_array_equal(out.data, [7.0, -2.0])


def test_affine_shape_mismatch_names_shapes():
    with pytest.raises(DimensionError, match=r"\(3,\).*\(2, 2\)"):
        ad.affine(Tensor(np.ones(3)), Tensor(np.ones((2, 2))), Tensor(np.ones(2)))


@pytest.mark.parametrize("which", ["x", "W", "b"])
def test_affine_gradients_seed_42(which):
    rng = np.random.default_rng(42)
    vals = {"x": rng.normal(size=5), "W": rng.normal(size=(5, 5)), "b": rng.normal(size=5)}
    w_out = rng.normal(size=5)

    def fn(t):
        args = {k: (t if k == which else Tensor(v)) for k, v in vals.items()}
        return ad.total(ad.mul(ad.affine(args["x"], args["W"], args["b"]), w_out))

    assert ad.grad_check(fn, vals[which]) < 1e-6


def test_affine_backward_rule_by_hand():
    x, W, b = leaf([1.0, 2.0]), leaf([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]), leaf([0.0, 0.0, 0.0])
    g = np.array([1.0, -1.0, 2.0])
    ad.total(ad.mul(ad.affine(x, W, b), g)).backward()
    np.testing.assert_allclose(W.grad, np.outer(g, x.data))
    np.testing.assert_allclose(x.grad, W.data.T @ g)
    np.testing.assert_allclose(b.grad, g)


# ----------------------------------------------------------------- softmax

def test_softmax_examples():
    np.testing.assert_allclose(ad.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)
    big = ad.softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(big)) and big[0] == pytest.approx(1.0) and big[1] < 1e-300
    np.testing.assert_allclose(ad.softmax(Tensor([1.0, 2.0, 3.0])).data,
                               [0.09003057, 0.24472847, 0.66524096], atol=1e-8)


def test_softmax_empty_is_domain_error():
    with pytest.raises(DomainError):
        ad.softmax(Tensor(np.zeros(0)))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 10_000), elements=st.floats(-700, 700)))
def test_softmax_sums_to_one(v):
    out = ad.softmax(Tensor(v)).data
    assert abs(out.sum() - 1.0) < 1e-12
    assert np.all((out >= 0) & (out <= 1))


def test_softmax_mask_zeroes_excluded_entries():
    mask = np.array([True, False, True])
    out = ad.softmax(Tensor([5.0, 100.0, 5.0]), mask=mask).data
    np.testing.assert_allclose(out, [0.5, 0.0, 0.5])


# ------------------------------------------------------------- activations

def test_leaky_relu_examples():
    out = ad.leaky_relu(Tensor([5.0, -1.0, 0.0])).data
    np.testing.assert_allclose(out, [5.0, -0.2, 0.0])


def test_leaky_relu_grad_at_zero_uses_slope():
    x = leaf([0.0])
    ad.total(ad.leaky_relu(x)).backward()
    assert x.grad[0] == pytest.approx(0.2)


def test_leaky_relu_rejects_negative_slope():
    with pytest.raises(DomainError):
        ad.leaky_relu(Tensor([1.0]), slope=-0.1)


def test_elu_examples():
    out = ad.elu(Tensor([2.0, 0.0, -1.0])).data
    np.testing.assert_allclose(out, [2.0, 0.0, np.exp(-1) - 1])
    assert out[2] == pytest.approx(-0.6321206, abs=1e-7)


def test_elu_grad_at_zero_uses_exp_branch():
    x = leaf([0.0])
    ad.total(ad.elu(x)).backward()
    assert x.grad[0] == 1.0


# ------------------------------------------------------------------ concat

def test_concat_examples():
    np.testing.assert_array_equal(ad.concat([Tensor([1.0, 2.0]), Tensor([3.0])]).data, [1, 2, 3])
    t = Tensor([4.0])
    assert ad.concat([t]) is t
    with pytest.raises(DomainError):
        ad.concat([])


def test_concat_grad_is_ones():
    a = np.array([0.3, -1.2, 2.0])
    b = Tensor(np.array([5.0, 6.0]))
    assert ad.grad_check(lambda t: ad.total(ad.concat([t, b])), a) < 1e-9
    x = leaf(a)
    ad.total(ad.concat([x, b])).backward()
    np.testing.assert_array_equal(x.grad, np.ones(3))


# ----------------------------------------------------------- cross entropy

def test_cross_entropy_examples():
    assert ad.cross_entropy(Tensor([0.0, 0.0]), 0).item() == pytest.approx(np.log(2), abs=1e-12)
    assert ad.cross_entropy(Tensor([100.0, 0.0]), 0).item() == pytest.approx(0.0, abs=1e-40)
    assert ad.cross_entropy(Tensor([1.0, 2.0, 3.0]), 2).item() == pytest.approx(0.40760596, abs=1e-8)


def test_cross_entropy_out_of_range():
    with pytest.raises(IndexError):
        ad.cross_entropy(Tensor([1.0, 2.0]), 2)
    with pytest.raises(IndexError):
        ad.cross_entropy(Tensor([1.0, 2.0]), -1)


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    x = leaf([0.5, -1.0, 2.0])
    ad.cross_entropy(x, 1).backward()
    p = ad.softmax(Tensor(x.data)).data
    np.testing.assert_allclose(x.grad, p - np.eye(3)[1], atol=1e-15)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(2, 12), elements=finite), st.data())
def test_cross_entropy_nonnegative(logits, data):
    t = data.draw(st.integers(0, logits.size - 1))
    assert ad.cross_entropy(Tensor(logits), t).item() >= 0.0


def test_softmax_cross_entropy_composite_gradcheck():
    rng = np.random.default_rng(3)
    assert ad.grad_check(lambda t: ad.cross_entropy(t, 1), rng.normal(size=4)) < 1e-6


# ---------------------------------------------------------------- backward

def test_backward_seed_gradient():
    x = leaf(3.0)
    x.backward()
    assert x.grad == 1.0


def test_backward_accumulates_shared_branches():
    x = leaf([1.0, -2.0, 0.5])
    ad.total(ad.concat([x, x])).backward()
    np.testing.assert_array_equal(x.grad, 2 * np.ones(3))


def test_backward_non_scalar_is_shape_error():
    with pytest.raises(DimensionError):
        ad.elu(leaf([1.0, 2.0])).backward()


def test_shared_subgraph_equals_two_copies():
    rng = np.random.default_rng(5)
    v, W = rng.normal(size=4), rng.normal(size=(3, 4))

    def branch(x):
        return ad.elu(ad.einsum("ij,j->i", Tensor(W), x))

    x = leaf(v)
    h = branch(x)
    ad.total(ad.mul(h, h)).backward()
    shared = x.grad.copy()
    y1, y2 = leaf(v), leaf(v)
    ad.total(ad.mul(branch(y1), branch(y2))).backward()
    np.testing.assert_allclose(shared, y1.grad + y2.grad, rtol=1e-13)


def test_backward_visits_each_node_once():
    # a diamond of depth 30 would blow up exponentially if nodes were revisited
    x = leaf([1.0])
    h = x
    for _ in range(30):
        h = ad.add(ad.scale(h, 0.5), ad.scale(h, 0.5))
    h = ad.total(h)
    h.backward()
    assert x.grad[0] == pytest.approx(1.0)


def test_grad_check_quadratic_exact():
    assert ad.grad_check(lambda t: ad.total(ad.mul(t, t)), np.array([1.0, 2.0])) < 1e-9


def test_relative_error_floor():
    assert ad.relative_error(0.0, 0.0) == 0.0
    assert ad.relative_error(1e-10, 0.0) == pytest.approx(1e-2)
    assert ad.relative_error(1.0, 1.0 + 1e-6) == pytest.approx(1e-6, rel=1e-3)


# ----------------------------------------------- every primitive, randomised

def _primitive_cases(rng):
    W = rng.normal(size=(3, 4))
    w2 = rng.normal(size=(2, 3))
    mask = rng.random((2, 3)) < 0.7
    mask[:, 0] = True

    def away(shape):
        x = rng.normal(size=shape)
        return np.where(np.abs(x) < 1e-3, 0.5, x)

    return {
        "affine": (lambda t: ad.total(ad.mul(ad.affine(t, Tensor(W), Tensor(w2[0])), w2[1])),
                   rng.normal(size=(5, 4))),
        "add": (lambda t: ad.total(ad.mul(ad.add(t, Tensor(W[0])), ad.add(t, t))), rng.normal(size=(2, 4))),
        "mul": (lambda t: ad.total(ad.mul(ad.mul(t, t), Tensor(W[:2]))), rng.normal(size=(2, 4))),
        "softmax": (lambda t: ad.total(ad.mul(ad.softmax(t, mask=mask), w2)), rng.normal(size=(2, 3))),
        "leaky_relu": (lambda t: ad.total(ad.mul(ad.leaky_relu(t), w2)), away((2, 3))),
        "elu": (lambda t: ad.total(ad.mul(ad.elu(t), w2)), away((2, 3))),
        "cross_entropy": (lambda t: ad.mean(ad.cross_entropy(t, np.array([2, 0]))), rng.normal(size=(2, 3))),
        "stack": (lambda t: ad.total(ad.mul(ad.stack([t, ad.elu(t)], axis=0), W[:2, :3])),
                  rng.normal(size=3)),
        "getitem": (lambda t: ad.total(ad.mul(t[:, ::2], w2[:, :2])), rng.normal(size=(2, 3))),
        "reshape": (lambda t: ad.total(ad.mul(ad.reshape(t, (3, 2)), w2.T)), rng.normal(size=(2, 3))),
        "mean": (lambda t: ad.total(ad.mul(ad.mean(t, axis=1), w2[:, 0])), rng.normal(size=(2, 3))),
        "einsum": (lambda t: ad.total(ad.mul(ad.einsum("bij,kj->bik", t, Tensor(W)), 1.0)),
                   rng.normal(size=(2, 3, 4))),
    }


@pytest.mark.parametrize("seed", range(3))
@pytest.mark.parametrize("op", sorted(_primitive_cases(np.random.default_rng(0))))
def test_primitive_gradients(op, seed):
    fn, x = _primitive_cases(np.random.default_rng(seed))[op]
    assert ad.grad_check(fn, x) < 1e-6


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)))
def test_ops_keep_finite(x):
    t = Tensor(x)
    for out in (ad.elu(t), ad.leaky_relu(t), ad.softmax(t), ad.cross_entropy(t, np.array([0, 1, 3]))):
        assert np.all(np.isfinite(out.data))


def test_broadcast_add_unbroadcasts_grad():
    a, b = leaf(np.ones((2, 3))), leaf(np.ones(3))
    ad.total(ad.add(a, b)).backward()
    assert b.grad.shape == (3,)
    np.testing.assert_array_equal(b.grad, [2.0, 2.0, 2.0])
