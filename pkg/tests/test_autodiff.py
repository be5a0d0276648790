import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qpinn import autodiff as ad
from qpinn.autodiff import DiffScalar, Tape, seed_spatial


def _along_x(x0):
    """DiffScalar for the scalar function f(x) = x, seeded in direction 0."""
    x0 = np.asarray(x0, dtype=float)
    grad = np.zeros((3,) + x0.shape)
    grad[0] = 1.0
    return DiffScalar(x0, grad, np.zeros((3,) + x0.shape))


def _fd1(f, x, h=1e-5):
    return (f(x + h) - f(x - h)) / (2 * h)


def _fd2(f, x, h=1e-4):
    return (f(x + h) - 2 * f(x) + f(x - h)) / h**2


def test_seed_spatial_unit_gradients():
    s = seed_spatial([1.0, 2.0, 3.0])
    x = s[0]
    assert x.value == 1.0
    np.testing.assert_array_equal(x.grad, [1.0, 0.0, 0.0])
    np.testing.assert_array_equal(x.hess, [0.0, 0.0, 0.0])
    z = seed_spatial(np.zeros(3))
    np.testing.assert_array_equal(z.value, 0.0)
    np.testing.assert_array_equal(z.grad, np.eye(3))


def test_seed_spatial_rejects_nonfinite():
    with pytest.raises(ValueError):
        seed_spatial([np.nan, 0.0, 0.0])
    with pytest.raises(ValueError):
        seed_spatial([1.0, 2.0])


def test_product_of_seeded_coordinates():
    s = seed_spatial([2.0, 3.0, 0.0])
    p = s[0] * s[1]
    assert p.value == 6.0
    np.testing.assert_array_equal(p.grad, [3.0, 2.0, 0.0])
    # mixed partial is not carried; pure second derivatives of xy vanish
    np.testing.assert_array_equal(p.hess, [0.0, 0.0, 0.0])


def test_silu_at_zero():
    y = ad.silu(_along_x(0.0))
    assert y.value == 0.0
    assert y.grad[0] == pytest.approx(0.5, abs=1e-15)


def test_silu_matches_finite_differences_at_three():
    f = lambda x: x / (1.0 + np.exp(-x))
    y = ad.silu(_along_x(3.0))
    assert abs(y.grad[0] - _fd1(f, 3.0)) / abs(_fd1(f, 3.0)) < 1e-6
    assert abs(y.hess[0] - _fd2(f, 3.0)) / abs(_fd2(f, 3.0)) < 1e-4


PRIMITIVES = {
    "exp": (ad.exp, np.exp),
    "sin": (ad.sin, np.sin),
    "cos": (ad.cos, np.cos),
    "tanh": (ad.tanh, np.tanh),
    "sigmoid": (ad.sigmoid, lambda x: 1.0 / (1.0 + np.exp(-x))),
    "silu": (ad.silu, lambda x: x / (1.0 + np.exp(-x))),
    "square": (ad.square, lambda x: x * x),
    "affine": (lambda x: 2.5 * x - 1.25, lambda x: 2.5 * x - 1.25),
    "mul": (lambda x: x * ad.sin(x), lambda x: x * np.sin(x)),
    "div": (lambda x: ad.sin(x) / (x * x + 1.0), lambda x: np.sin(x) / (x * x + 1.0)),
    "add": (lambda x: ad.exp(x * 0.3) + ad.cos(x), lambda x: np.exp(0.3 * x) + np.cos(x)),
}


def _rel(a, b, floor=1e-8):
    return np.abs(a - b) / np.maximum(np.abs(b), floor)


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_derivatives_match_fd(name):
    jet_fn, np_fn = PRIMITIVES[name]
    x = np.random.default_rng(7).uniform(-5, 5, size=100)
    y = jet_fn(_along_x(x))
    d1, d2 = _fd1(np_fn, x), _fd2(np_fn, x)
    # relative error with an absolute floor where the derivative itself is ~0
    assert np.all(_rel(y.grad[0], d1, floor=1e-2) <= 1e-6), name
    assert np.all(_rel(y.hess[0], d2, floor=1e-1) <= 1e-4), name


def test_constant_has_zero_derivatives():
    c = DiffScalar.constant(np.array([1.5, -2.0]))
    y = ad.exp(c) * 3.0 + 1.0
    np.testing.assert_array_equal(y.grad, 0.0)
    np.testing.assert_array_equal(y.hess, 0.0)


@given(a=st.floats(-3, 3), b=st.floats(-3, 3), x0=st.floats(-2, 2))
@settings(max_examples=50, deadline=None)
def test_linearity(a, b, x0):
    x = _along_x(x0)
    f, g = ad.sin(x), ad.exp(x)
    combo = f * a + g * b
    assert combo.grad[0] == pytest.approx(a * f.grad[0] + b * g.grad[0], rel=1e-14, abs=1e-14)
    assert combo.hess[0] == pytest.approx(a * f.hess[0] + b * g.hess[0], rel=1e-14, abs=1e-14)


# -- reverse mode -------------------------------------------------------------


def test_backward_square():
    tape = Tape()
    theta = tape.param(3.0)
    loss = theta * theta
    np.testing.assert_allclose(tape.backward(loss), [6.0])


def test_backward_independent_parameter_is_zero():
    tape = Tape()
    a, b = tape.param([1.0, 2.0]), tape.param(5.0)
    loss = (a * a).sum()
    g = tape.backward(loss)
    assert g[2] == 0.0
    np.testing.assert_allclose(g[:2], [2.0, 4.0])


def test_backward_rejects_bad_loss():
    tape, other = Tape(), Tape()
    v = tape.param([1.0, 2.0])
    with pytest.raises(ValueError):
        tape.backward(v * 2.0)  # not scalar
    w = other.param(1.0)
    with pytest.raises(ValueError):
        tape.backward(w * 2.0)  # recorded elsewhere


def test_tape_reusable_after_reset():
    tape = Tape()
    t = tape.param(2.0)
    tape.backward(t * t)
    tape.reset()
    assert tape.nodes == [] and tape.params == []
    t = tape.param(4.0)
    np.testing.assert_allclose(tape.backward(t * t * t), [48.0])


def _mlp_loss(flat, shapes, x):
    arrays, pos = [], 0
    for shape in shapes:
        n = int(np.prod(shape))
        arrays.append(flat[pos : pos + n].reshape(shape))
        pos += n
    w1, b1, w2, b2 = arrays
    h = ad.tanh(x @ w1.T + b1)
    out = h @ w2.T + b2
    return (out * out).sum()


def test_two_layer_mlp_gradient_matches_fd():
    rng = np.random.default_rng(0)
    shapes = [(5, 3), (5,), (2, 5), (2,)]
    flat = rng.normal(size=sum(int(np.prod(s)) for s in shapes))
    x = rng.normal(size=(4, 3))
    tape = Tape()
    params, pos = [], 0
    for shape in shapes:
        n = int(np.prod(shape))
        params.append(tape.param(flat[pos : pos + n].reshape(shape)))
        pos += n
    w1, b1, w2, b2 = params
    h = ad.tanh(x @ w1.T + b1)
    out = h @ w2.T + b2
    g = tape.backward((out * out).sum())
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = 1e-5
        fd = (_mlp_loss(flat + e, shapes, x) - _mlp_loss(flat - e, shapes, x)) / 2e-5
        assert abs(g[i] - fd) <= 1e-6 * max(1.0, abs(fd))


def test_reverse_through_forward_mode_payloads():
    # d/dw of (d^2/dx^2 sin(w x))^2 at a point, checked by FD over w
    def value(w, x0=0.7):
        y = ad.sin(_along_x(x0) * w)
        return float(ad.value_of(y.hess[0])) ** 2

    tape = Tape()
    w = tape.param(1.3)
    y = ad.sin(_along_x(0.7) * w)
    loss = y.hess[0] * y.hess[0]
    g = tape.backward(loss)[0]
    fd = (value(1.3 + 1e-6) - value(1.3 - 1e-6)) / 2e-6
    assert g == pytest.approx(fd, rel=1e-7)


def test_concatenate_and_take_last_gradients():
    tape = Tape()
    a = tape.param([1.0, 2.0])
    b = tape.param([3.0])
    c = ad.concatenate([a, b * 2.0], axis=-1)
    d = ad.take_last(c, [2, 0])
    loss = (d * np.array([1.0, 10.0])).sum()
    np.testing.assert_allclose(tape.backward(loss), [10.0, 0.0, 2.0])
