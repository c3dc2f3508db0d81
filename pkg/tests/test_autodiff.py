import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdmvae import autodiff as ad
from sdmvae.autodiff import ContractError, DimensionError, DomainError, Tensor, backward

from conftest import analytic_grad, numeric_grad, rel_err


def test_matmul_identity_and_values():
    X = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(ad.matmul(Tensor(np.eye(2)), Tensor(X)).data, X)
    assert ad.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).item() == 11.0


def test_matmul_shape_error_reports_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_gradient_matches_finite_differences(rng):
    A = rng.standard_normal((3, 4))
    B = Tensor(rng.standard_normal((4, 2)))
    g = analytic_grad(lambda a: ad.reduce_sum(ad.matmul(a, B)), A)
    num = numeric_grad(lambda a: (a @ B.data).sum(), A)
    assert rel_err(g, num) < 1e-6


def test_elementwise_examples():
    assert ad.tanh(Tensor(0.0)).item() == 0.0
    assert abs(ad.log(ad.exp(Tensor(1.5))).item() - 1.5) < 1e-12
    x = 0.3
    g = analytic_grad(ad.tanh, np.array([[x]]))
    assert abs(g[0, 0] - (1 - np.tanh(x) ** 2)) < 1e-12
    assert abs(g[0, 0] - numeric_grad(lambda v: np.tanh(v).sum(), np.array([[x]]))[0, 0]) < 1e-8


def test_elementwise_dispatch():
    a, b = Tensor([[1.0, 2.0]]), Tensor([[3.0, 4.0]])
    assert np.array_equal(ad.elementwise("mul", a, b).data, [[3.0, 8.0]])
    assert np.array_equal(ad.elementwise("square", a).data, [[1.0, 4.0]])
    with pytest.raises(ContractError):
        ad.elementwise("cube", a)


@pytest.mark.parametrize("op, value", [("log", 0.0), ("log", -1.0), ("sqrt", 0.0)])
def test_domain_errors_name_op_and_index(op, value):
    x = Tensor([[1.0, 2.0], [3.0, value]])
    with pytest.raises(DomainError, match=rf"{op}.*\(1, 1\)"):
        ad.elementwise(op, x)


def test_div_by_zero():
    with pytest.raises(DomainError, match="div"):
        ad.div(Tensor([[1.0, 1.0]]), Tensor([[1.0, 0.0]]))


def test_shape_mismatch_rejected():
    with pytest.raises(DimensionError):
        ad.mul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_bias_row_broadcast_gradient(rng):
    X = Tensor(rng.standard_normal((4, 3)))
    b = rng.standard_normal((1, 3))
    g = analytic_grad(lambda t: ad.reduce_sum(ad.square(ad.add(X, t))), b)
    num = numeric_grad(lambda v: ((X.data + v) ** 2).sum(), b)
    assert rel_err(g, num) < 1e-8


def test_reduce_sum():
    x = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert ad.reduce_sum(x, "all").item() == 10.0
    assert np.array_equal(ad.reduce_sum(x, "rows").data, [[4.0, 6.0]])
    assert np.array_equal(ad.reduce_sum(x, "cols").data, [[3.0], [7.0]])
    for axis in ("rows", "cols", "all"):
        assert not ad.reduce_sum(Tensor(np.zeros((3, 2))), axis).data.any()


def test_reduce_sum_square_gradient():
    x = np.array([[0.1, -0.7, 2.0]])
    g = analytic_grad(lambda t: ad.reduce_sum(ad.square(t)), x)
    assert np.allclose(g, 2 * x, atol=1e-12)
    assert rel_err(g, numeric_grad(lambda v: (v**2).sum(), x)) < 1e-8


def test_backward_contracts():
    W = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        backward(ad.mul(W, 2.0))
    loss = ad.add(ad.reduce_sum(ad.mul(W, 0.0)), 3.0)
    backward(loss)
    assert not W.grad.any()


def test_backward_sum_Wx_and_accumulation():
    x = Tensor([[1.0], [2.0], [3.0]])
    W = Tensor(np.ones((2, 3)), requires_grad=True)
    loss = ad.reduce_sum(ad.matmul(W, x))
    backward(loss)
    expected = np.tile(x.data.T, (2, 1))
    assert np.array_equal(W.grad, expected)
    backward(loss)
    assert np.array_equal(W.grad, 2 * expected)
    ad.zero_grad([W])
    assert W.grad is None


def test_tape_is_topological():
    a = Tensor([[1.0]], requires_grad=True)
    b = ad.mul(a, a)
    c = ad.add(b, a)
    d = ad.tanh(ad.mul(c, b))
    tape = ad.build_tape(d)
    pos = {id(n): i for i, n in enumerate(tape)}
    assert len(pos) == len(tape)
    for node in tape:
        for p in node._parents:
            if p.requires_grad:
                assert pos[id(p)] < pos[id(node)]


def test_shared_subexpression_gradient():
    # d/da of (a^2 + a) * a^2 = 4a^3 + 3a^2
    a = Tensor([[0.7]], requires_grad=True)
    b = ad.mul(a, a)
    backward(ad.mul(ad.add(b, a), b))
    assert abs(a.grad[0, 0] - (4 * 0.7**3 + 3 * 0.7**2)) < 1e-12


def _composition(x, W, op_index):
    """Random-ish scalar composition exercising every differentiable op."""
    h = ad.tanh(ad.add(ad.matmul(x, ad.transpose(W)), 0.1))
    pos = ad.add(ad.exp(h), ad.square(h))
    branch = [ad.log(pos), ad.sqrt(pos), ad.div(h, pos), ad.sub(ad.mul(h, pos), h)][op_index % 4]
    return ad.reduce_sum(ad.mul(ad.reduce_sum(branch, "rows"), 0.5))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_random_compositions_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((3, 4)))
    W = rng.standard_normal((2, 4))
    op = seed % 4
    g = analytic_grad(lambda t: _composition(x, t, op), W)
    num = numeric_grad(lambda v: _composition(x, Tensor(v), op).item(), W)
    assert rel_err(g, num) < 1e-4


def test_forward_and_gradients_are_deterministic(rng):
    x = Tensor(rng.standard_normal((3, 4)))
    W0 = rng.standard_normal((2, 4))
    outs, grads = [], []
    for _ in range(2):
        W = Tensor(W0, requires_grad=True)
        loss = _composition(x, W, 1)
        backward(loss)
        outs.append(loss.data.tobytes())
        grads.append(W.grad.tobytes())
    assert outs[0] == outs[1] and grads[0] == grads[1]


def test_tensor_is_immutable():
    t = Tensor([[1.0, 2.0]])
    with pytest.raises(ValueError):
        t.data[0, 0] = 5.0
    with pytest.raises(DimensionError):
        t.assign(np.zeros((2, 2)))
