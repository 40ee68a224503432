"""Engine-level gradient checks: closed forms plus central finite differences."""

import numpy as np
import pytest

from ricshield import autodiff as ad
from ricshield.autodiff import Tensor


def fd_check(build, tensors, rel_tol=1e-4, h=1e-5, samples=6, seed=0):
    """Central finite differences on randomly sampled coordinates of each tensor."""
    loss = build()
    for t in tensors:
        t.zero_grad()
    loss.backward()
    grads = {id(t): (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
             for t in tensors}
    gen = np.random.default_rng(seed)
    worst = 0.0
    for t in tensors:
        for _ in range(min(samples, t.data.size)):
            i = gen.integers(t.data.size)
            old = t.data.flat[i]
            t.data.flat[i] = old + h
            with ad.no_grad():
                up = build().item()
            t.data.flat[i] = old - h
            with ad.no_grad():
                down = build().item()
            t.data.flat[i] = old
            numeric = (up - down) / (2 * h)
            analytic = grads[id(t)].flat[i]
            rel = abs(numeric - analytic) / max(1e-8, abs(numeric), abs(analytic))
            worst = max(worst, rel)
    assert worst < rel_tol, f"finite-difference mismatch: {worst}"
    return worst


def test_backward_of_sum_is_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    ad.reduce_sum(x).backward()
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_of_sum_of_squares_is_2x():
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    ad.reduce_sum(ad.mul(x, x)).backward()
    assert np.allclose(x.grad, 2 * x.data)


def test_gradient_accumulates_over_reuse():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = ad.add(ad.mul(x, x), x)  # x^2 + x -> dy/dx = 2x + 1
    y.backward()
    assert np.allclose(x.grad, [5.0])


def test_disconnected_parameter_keeps_zero_gradient():
    x = Tensor(np.ones(3), requires_grad=True)
    unused = Tensor(np.ones(3), requires_grad=True)
    ad.reduce_sum(x).backward()
    assert unused.grad is None  # treated as zero by the optimizer


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        ad.mul(x, 2.0).backward()


def test_no_grad_suppresses_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with ad.no_grad():
        y = ad.mul(x, 3.0)
    assert y._parents == () and not y.requires_grad


def test_graph_freed_after_backward():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ad.mul(x, 2.0)
    z = ad.reduce_sum(y)
    z.backward()
    assert y._parents == () and y._backward is None


def test_check_finite_mode_raises():
    ad.set_check_finite(True)
    try:
        with pytest.raises(FloatingPointError):
            ad.log(Tensor(np.array([0.0]), requires_grad=True))
    finally:
        ad.set_check_finite(False)


def test_broadcast_add_and_mul_grads():
    gen = np.random.default_rng(1)
    a = Tensor(gen.normal(size=(4, 5)), requires_grad=True)
    b = Tensor(gen.normal(size=(5,)), requires_grad=True)
    c = Tensor(gen.normal(size=(4, 1)), requires_grad=True)
    fd_check(lambda: ad.reduce_sum(ad.mul(ad.add(a, b), c)), [a, b, c])


def test_matmul_grads_2d_and_batched():
    gen = np.random.default_rng(2)
    a = Tensor(gen.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(gen.normal(size=(4, 2)), requires_grad=True)
    fd_check(lambda: ad.reduce_sum(ad.matmul(a, b)), [a, b])
    c = Tensor(gen.normal(size=(2, 3, 4)), requires_grad=True)
    d = Tensor(gen.normal(size=(4, 5)), requires_grad=True)
    fd_check(lambda: ad.reduce_sum(ad.mul(ad.matmul(c, d), ad.matmul(c, d))), [c, d])
    e = Tensor(gen.normal(size=(2, 4, 3)), requires_grad=True)
    fd_check(lambda: ad.reduce_sum(ad.matmul(c, e)), [c, e])


@pytest.mark.parametrize("op", [ad.exp, ad.gelu,
                                lambda t: ad.log(ad.add(ad.mul(t, t), 1.0)),
                                lambda t: ad.power(ad.add(ad.mul(t, t), 0.5), -0.5),
                                lambda t: ad.softmax(t, axis=-1),
                                lambda t: ad.maximum(t, 0.1)])
def test_elementwise_op_gradients(op):
    gen = np.random.default_rng(3)
    x = Tensor(gen.normal(size=(3, 7)) * 0.8 + 0.3, requires_grad=True)
    w = Tensor(gen.normal(size=(3, 7)), requires_grad=True)
    fd_check(lambda: ad.reduce_sum(ad.mul(op(x), w)), [x, w])


def test_shape_op_gradients():
    gen = np.random.default_rng(4)
    x = Tensor(gen.normal(size=(2, 3, 4)), requires_grad=True)
    w = Tensor(gen.normal(size=(4, 3, 2)), requires_grad=True)
    fd_check(lambda: ad.reduce_sum(ad.mul(ad.transpose(x, (2, 1, 0)), w)), [x, w])
    fd_check(lambda: ad.reduce_sum(ad.mul(ad.reshape(x, (6, 4)),
                                          ad.reshape(w, (6, 4)))), [x, w])
    y = Tensor(gen.normal(size=(2, 3, 4)), requires_grad=True)
    wc = Tensor(gen.normal(size=(2, 6, 4)))
    fd_check(lambda: ad.reduce_sum(ad.mul(ad.concat([x, y], axis=1), wc)), [x, y])
    we = Tensor(gen.normal(size=(2, 5, 3, 4)))
    fd_check(lambda: ad.reduce_sum(ad.mul(ad.expand(ad.reshape(x, (2, 1, 3, 4)),
                                                    (2, 5, 3, 4)), we)), [x])


def test_take_gradients_basic_and_advanced():
    gen = np.random.default_rng(5)
    x = Tensor(gen.normal(size=(5, 4)), requires_grad=True)
    fd_check(lambda: ad.reduce_sum(ad.take(x, (slice(None), 2))), [x])
    idx = np.array([0, 0, 3, 1])  # repeated rows exercise scatter-add
    w = Tensor(gen.normal(size=(4, 4)), requires_grad=True)
    fd_check(lambda: ad.reduce_sum(ad.mul(ad.take(x, idx), w)), [x, w])


def test_mean_gradients_with_axes():
    gen = np.random.default_rng(6)
    x = Tensor(gen.normal(size=(3, 4, 5)), requires_grad=True)
    w = Tensor(gen.normal(size=(3, 5)), requires_grad=True)
    fd_check(lambda: ad.reduce_sum(ad.mul(ad.reduce_mean(x, axis=1), w)), [x, w])
    fd_check(lambda: ad.reduce_mean(ad.mul(x, x)), [x])


def test_softmax_rows_sum_to_one_and_positive():
    gen = np.random.default_rng(7)
    y = ad.softmax(Tensor(gen.normal(size=(50, 9)) * 20), axis=-1)
    assert np.all(np.abs(y.data.sum(axis=-1) - 1.0) < 1e-12)
    assert np.all(y.data > 0)
