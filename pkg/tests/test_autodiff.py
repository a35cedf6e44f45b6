import numpy as np
import pytest
import scipy.sparse as sp

from mambamir.autodiff import (GradCheckError, Tape, Tensor, backward, default_dtype, grad_check,
                               no_grad, ops)
from mambamir.losses import charbonnier

from oracles import central_diff


@pytest.fixture(autouse=True)
def f64():
    with default_dtype(np.float64):
        yield


def leaf(shape, seed=0, scale=1.0, positive=False):
    rng = np.random.default_rng(seed)
    data = rng.uniform(0.2, 1.5, shape) if positive else rng.standard_normal(shape) * scale
    return Tensor(data, requires_grad=True)


def test_silu_zero():
    assert ops.silu(Tensor([0.0])).data[0] == 0.0


def test_layernorm_constant_is_zero():
    out = ops.layernorm(Tensor(np.full((2, 5), 3.7)))
    assert np.array_equal(out.data, np.zeros((2, 5)))


def test_depthwise_conv_shape():
    x = Tensor(np.ones((1, 8, 8, 4)))
    w = Tensor(np.ones((3, 3, 1, 4)))
    assert ops.conv2d(x, w, padding=1, groups=4).shape == (1, 8, 8, 4)


def test_sum_of_squares_grad():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(ops.sum(ops.square(x)))
    assert np.array_equal(x.grad, [2.0, 4.0])


def test_product_rule():
    a, b = leaf((3,), 1), leaf((3,), 2)
    backward(ops.sum(ops.mul(a, b)))
    assert np.allclose(a.grad, b.data) and np.allclose(b.grad, a.data)


def test_charbonnier_matches_finite_differences():
    rng = np.random.default_rng(3)
    target = rng.standard_normal((1, 4, 4))
    x = Tensor(rng.standard_normal((1, 4, 4)), requires_grad=True)
    backward(charbonnier(x, target))
    numeric = central_diff(lambda v: np.sqrt(np.sum((v - target) ** 2) + 1e-18), x.data)
    err = np.abs(x.grad - numeric) / np.maximum(1.0, np.abs(numeric))
    assert err.max() < 1e-3


def test_backward_rejects_nonscalar():
    x = leaf((3,))
    with pytest.raises(ValueError, match="scalar"):
        backward(ops.mul(x, 2.0))


def test_repeated_backward_accumulates():
    x = leaf((4,))
    backward(ops.sum(x))
    backward(ops.sum(x))
    assert np.array_equal(x.grad, np.full(4, 2.0))


def test_backward_is_linear():
    x = leaf((5,), 4)
    f1 = lambda: ops.sum(ops.exp(x))
    f2 = lambda: ops.sum(ops.silu(ops.square(x)))
    backward(f1())
    g1 = x.grad.copy()
    x.zero_grad()
    backward(f2())
    g2 = x.grad.copy()
    x.zero_grad()
    backward(ops.add(f1(), f2()))
    assert np.max(np.abs(x.grad - (g1 + g2))) <= 1e-12


def test_tape_topological_and_unique():
    x = leaf((3,))
    y = ops.mul(x, x)
    z = ops.add(y, ops.exp(y))
    root = ops.sum(ops.mul(z, y))
    tape = Tape.from_root(root)
    position = {id(t): i for i, t in enumerate(tape.outputs)}
    assert len(position) == len(tape.outputs)
    for out in tape.outputs:
        for parent in out._node.inputs:
            if parent._node is not None:
                assert position[id(parent)] < position[id(out)]


def test_no_grad_records_nothing():
    x = leaf((3,))
    with no_grad():
        y = ops.exp(x)
    assert y._node is None and not y.requires_grad


def test_shape_mismatch_names_shapes():
    with pytest.raises(ValueError, match=r"\(2, 3\).*\(4,\)"):
        ops.add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))


def test_fft2_unitary():
    x = np.random.default_rng(0).standard_normal((8, 16, 2))
    y = ops.fft2(Tensor(x)).data
    assert abs(np.linalg.norm(y) - np.linalg.norm(x)) <= 1e-5 * np.linalg.norm(x)


def test_fft2_rejects_non_power_of_two():
    with pytest.raises(ValueError, match="power of two"):
        ops.fft2(Tensor(np.ones((6, 8, 2))))


def test_default_precision_is_32_bit():
    with default_dtype(np.float32):
        assert Tensor([1.0]).dtype == np.float32


def test_grad_check_constant_gradient():
    res = grad_check(lambda x: ops.sum(x), leaf((3, 4)))
    assert res.max_rel_error < 1e-9


def test_grad_check_step_bounds():
    with pytest.raises(ValueError):
        grad_check(lambda x: ops.sum(x), leaf((2,)), step=1e-3)


def test_grad_check_reports_nonfinite_coordinate():
    x = Tensor(np.array([1.0, 1e-6, 2.0]), requires_grad=True)
    with pytest.raises(GradCheckError) as info, np.errstate(invalid="ignore"):
        grad_check(lambda t: ops.sum(ops.log(t)), x, step=1e-5)
    assert info.value.index == (1,)


def test_grad_check_rejects_float32():
    x = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
    with pytest.raises(ValueError, match="64-bit"):
        grad_check(lambda t: ops.sum(t), x)


# Every primitive with a backward rule, on small random 64-bit inputs.
PRIMITIVES = {
    "add": (lambda a, b: ops.add(a, b), [(3, 4), (4,)]),
    "sub": (lambda a, b: ops.sub(a, b), [(3, 4), (3, 1)]),
    "mul": (lambda a, b: ops.mul(a, b), [(2, 3), (2, 3)]),
    "div": (lambda a, b: ops.div(a, b), [(2, 3), "pos(2, 3)"]),
    "neg": (lambda a: ops.neg(a), [(3,)]),
    "sigmoid": (lambda a: ops.sigmoid(a), [(4,)]),
    "silu": (lambda a: ops.silu(a), [(4,)]),
    "softplus": (lambda a: ops.softplus(ops.mul(a, 15.0)), [(6,)]),
    "exp": (lambda a: ops.exp(a), [(4,)]),
    "log": (lambda a: ops.log(a), ["pos(4,)"]),
    "sqrt": (lambda a: ops.sqrt(a), ["pos(4,)"]),
    "abs": (lambda a: ops.abs(a), ["pos(4,)"]),
    "square": (lambda a: ops.square(a), [(4,)]),
    "sum": (lambda a: ops.sum(a, axis=1, keepdims=True), [(3, 4)]),
    "mean": (lambda a: ops.mean(a, axis=(0, 2)), [(2, 3, 4)]),
    "matmul": (lambda a, b: ops.matmul(a, b), [(2, 3, 4), (4, 5)]),
    "conv2d": (lambda x, w: ops.conv2d(x, w, padding=1), [(1, 5, 5, 2), (3, 3, 2, 3)]),
    "conv2d_stride": (lambda x, w: ops.conv2d(x, w, stride=2, padding=1), [(1, 6, 6, 2), (3, 3, 2, 2)]),
    "conv2d_groups": (lambda x, w: ops.conv2d(x, w, padding=1, groups=2), [(1, 4, 4, 4), (3, 3, 2, 4)]),
    "conv2d_depthwise": (lambda x, w: ops.conv2d(x, w, padding=1, groups=3), [(2, 4, 4, 3), (3, 3, 1, 3)]),
    "layernorm": (lambda a: ops.layernorm(a), [(3, 5)]),
    "reshape": (lambda a: ops.reshape(a, (6, 2)), [(3, 4)]),
    "permute": (lambda a: ops.permute(a, (2, 0, 1)), [(2, 3, 4)]),
    "getitem": (lambda a: ops.getitem(a, (slice(1, 3), 0)), [(4, 3)]),
    "concat": (lambda a, b: ops.concat([a, b], axis=1), [(2, 3), (2, 2)]),
    "take": (lambda a: ops.take(a, np.array([2, 0, 2, 1, 2]), axis=1), [(2, 3, 2)]),
    "pixel_shuffle": (lambda a: ops.pixel_shuffle(a, 2), [(1, 2, 3, 8)]),
    "fft2": (lambda a: ops.fft2(a), [(2, 4, 2)]),
    "ifft2": (lambda a: ops.ifft2(a), [(4, 2, 2)]),
    "linear_map": (lambda a: ops.linear_map(
        a, sp.random(5, 6, density=0.5, random_state=0, format="csr"), (5,)), [(2, 2, 3)]),
    "linear_recurrence": (lambda a, b: ops.linear_recurrence(ops.sigmoid(a), b), [(2, 5, 3), (2, 5, 3)]),
    "maximum_const": (lambda a: ops.maximum_const(a, 0.05), [(6,)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_grad_check(name):
    fn, shapes = PRIMITIVES[name]
    xs = []
    for i, s in enumerate(shapes):
        if isinstance(s, str):
            xs.append(leaf(eval(s[3:]), seed=i + 10, positive=True))
        else:
            xs.append(leaf(s, seed=i + 10))
    # a fixed random cotangent makes every output coordinate matter
    w = np.random.default_rng(99).standard_normal(fn(*xs).shape)
    res = grad_check(lambda *t: ops.sum(ops.mul(fn(*t), w)), xs)
    assert res.max_rel_error < 1e-3, (name, res.worst_index)
