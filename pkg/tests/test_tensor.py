import zlib

import numpy as np
import pytest

from geoseg.tensor import (Linear, Parameter, ShapeError, Tensor, adamw_step, affine, concat,
                           cross_entropy, gather, layer_norm, load_checkpoint, make_rng, max_axis,
                           mul, no_grad, relu, reshape, save_checkpoint, segment_max,
                           segment_mean, softmax, sub, tmean, tsum, add)
from gradcheck import max_relative_error

TOL = 1e-4


def leaf(rng, shape, lo=-1.0, hi=1.0):
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def weighted(out, w):
    return tsum(mul(out, Tensor(w)))


def run_check(build, tensors, rng):
    out = build()
    w = rng.normal(size=out.shape)
    return max_relative_error(lambda: weighted(build(), w), tensors)


def shapes(rng, count=20):
    for _ in range(count):
        yield int(rng.integers(1, 5)), int(rng.integers(1, 5))


# one builder per catalog op; each returns (closure, leaves)


def case_affine(rng, n, c):
    x, W, b = leaf(rng, (n, c)), leaf(rng, (c, c + 1)), leaf(rng, (c + 1,))
    return (lambda: affine(x, W, b)), [x, W, b]


def case_relu(rng, n, c):
    x = Tensor(rng.choice([-1, 1], (n, c)) * rng.uniform(0.1, 1, (n, c)), requires_grad=True)
    return (lambda: relu(x)), [x]


def case_add(rng, n, c):
    a, b = leaf(rng, (n, c)), leaf(rng, (c,))
    return (lambda: add(a, b)), [a, b]


def case_sub(rng, n, c):
    a, b = leaf(rng, (n, 1, c)), leaf(rng, (n, 3, c))
    return (lambda: sub(a, b)), [a, b]


def case_mul(rng, n, c):
    a, b = leaf(rng, (n, c)), leaf(rng, (n, c))
    return (lambda: mul(a, b)), [a, b]


def case_concat(rng, n, c):
    a, b = leaf(rng, (n, c)), leaf(rng, (n, 2))
    return (lambda: concat([a, b], axis=1)), [a, b]


def case_softmax(rng, n, c):
    x = leaf(rng, (n, 3, c), -2, 2)
    return (lambda: softmax(x, axis=1)), [x]


def case_gather(rng, n, c):
    x = leaf(rng, (n, c))
    idx = rng.integers(0, n, (n + 2, 3))
    return (lambda: gather(x, idx)), [x]


def case_segment_max(rng, n, c):
    m = n + 3
    x = Tensor(rng.permutation(m * c).reshape(m, c) * 0.1, requires_grad=True)  # no ties
    seg = np.r_[np.arange(n), rng.integers(0, n, 3)]
    return (lambda: segment_max(x, seg, n)), [x]


def case_segment_mean(rng, n, c):
    x = leaf(rng, (n + 3, c))
    seg = np.r_[np.arange(n), rng.integers(0, n, 3)]
    return (lambda: segment_mean(x, seg, n)), [x]


def case_sum(rng, n, c):
    x = leaf(rng, (n, 2, c))
    return (lambda: tsum(x, axis=1)), [x]


def case_mean(rng, n, c):
    x = leaf(rng, (n, c))
    return (lambda: tmean(x)), [x]


def case_cross_entropy(rng, n, c):
    x = leaf(rng, (n, c + 1), -2, 2)
    t = rng.integers(0, c + 1, n)
    return (lambda: cross_entropy(x, t)), [x]


def case_soft_cross_entropy(rng, n, c):
    x = leaf(rng, (n, c + 1), -2, 2)
    w = rng.random((n, c + 1))
    w /= w.sum(axis=1, keepdims=True)
    return (lambda: cross_entropy(x, w)), [x]


def case_layer_norm(rng, n, c):
    x, g, b = leaf(rng, (n, c + 1)), leaf(rng, (c + 1,)), leaf(rng, (c + 1,))
    return (lambda: layer_norm(x, g, b)), [x, g, b]


def case_reshape(rng, n, c):
    x = leaf(rng, (n, c))
    return (lambda: reshape(x, (c, n))), [x]


def case_max_axis(rng, n, c):
    x = Tensor(rng.permutation(n * 3 * c).reshape(n, 3, c) * 0.1, requires_grad=True)
    return (lambda: max_axis(x)), [x]


CASES = [case_affine, case_relu, case_add, case_sub, case_mul, case_concat, case_softmax,
         case_gather, case_segment_max, case_segment_mean, case_sum, case_mean,
         case_cross_entropy, case_soft_cross_entropy, case_layer_norm, case_reshape, case_max_axis]


@pytest.mark.parametrize("case", CASES, ids=lambda f: f.__name__[5:])
def test_gradient_matches_finite_differences(case):
    rng = np.random.default_rng(zlib.crc32(case.__name__.encode()))
    worst = 0.0
    for n, c in shapes(rng):
        build, leaves = case(rng, n, c)
        worst = max(worst, run_check(build, leaves, rng))
    assert worst <= TOL


# ---------------------------------------------------------------- values


def test_identity_affine():
    x = Tensor(np.random.default_rng(0).normal(size=(4, 3)))
    assert np.array_equal(affine(x, Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x.data)


def test_singleton_softmax():
    assert np.array_equal(softmax(Tensor(np.array([[[3.0, -7.0]]])), axis=1).data, [[[1.0, 1.0]]])


def test_softmax_rows_sum_to_one():
    x = Tensor(np.random.default_rng(1).normal(scale=30, size=(50, 7, 4)))
    assert np.allclose(softmax(x, axis=1).data.sum(axis=1), 1.0, atol=1e-6)


def test_segment_mean_example():
    out = segment_mean(Tensor([[2.0], [4.0], [10.0]]), [0, 0, 1])
    assert out.data.ravel().tolist() == [3.0, 10.0]


def test_gradient_of_hadamard_sum():
    rng = np.random.default_rng(2)
    x, y = Tensor(rng.normal(size=(3, 4)), requires_grad=True), Tensor(rng.normal(size=(3, 4)))
    tsum(mul(x, y)).backward()
    assert np.array_equal(x.grad, y.data)


def test_segment_max_routes_to_argmax():
    x = Tensor(np.array([[5.0], [2.0]]), requires_grad=True)
    tsum(segment_max(x, [0, 0])).backward()
    assert x.grad.ravel().tolist() == [1.0, 0.0]


def test_segment_max_tie_goes_to_lowest_index():
    x = Tensor(np.array([[1.0], [5.0], [5.0]]), requires_grad=True)
    tsum(segment_max(x, [0, 0, 0])).backward()
    assert x.grad.ravel().tolist() == [0.0, 1.0, 0.0]


def test_gather_scatter_adds():
    x = Tensor(np.zeros((3, 2)), requires_grad=True)
    tsum(gather(x, np.array([0, 0, 2, 0]))).backward()
    assert x.grad[:, 0].tolist() == [3.0, 0.0, 1.0]


def test_cross_entropy_uniform_two_class():
    ce = cross_entropy(Tensor(np.zeros((1, 2))), np.array([1]))
    assert float(ce.data) == pytest.approx(np.log(2))


def test_shape_errors_name_the_op():
    with pytest.raises(ShapeError, match="affine"):
        affine(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    with pytest.raises(ShapeError, match="concat"):
        concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3)))], axis=1)
    with pytest.raises(ShapeError, match="add"):
        add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))
    with pytest.raises(ShapeError, match="segment_max"):
        segment_max(Tensor(np.zeros((2, 3))), [0, 5, 1], 2)


def test_non_scalar_backward_rejected():
    with pytest.raises(ValueError):
        Tensor(np.ones(3), requires_grad=True).backward()


def test_no_grad_records_nothing():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with no_grad():
        y = mul(x, x)
    assert not y.requires_grad and y._parents == ()


def test_gradients_accumulate_over_reuse():
    x = Tensor(np.array([[2.0]]), requires_grad=True)
    tsum(add(mul(x, x), x)).backward()
    assert x.grad.item() == 5.0


def test_evaluation_is_deterministic():
    def build(seed):
        lin = Linear(make_rng(seed), 4, 3)
        x = Tensor(np.linspace(-1, 1, 20).reshape(5, 4))
        return softmax(relu(lin(x)), axis=1).data

    assert np.array_equal(build(7), build(7))
    assert not np.array_equal(build(7), build(8))


def test_glorot_bounds():
    lin = Linear(make_rng(0), 30, 10)
    bound = np.sqrt(6 / 40)
    assert np.abs(lin.weight.data).max() <= bound and np.all(lin.bias.data == 0)


# ---------------------------------------------------------------- optimizer


def test_adamw_zero_gradient_zero_decay():
    p = Parameter(np.array([1.0, -2.0]))
    adamw_step([p], [np.zeros(2)], lr=0.1, weight_decay=0.0)
    assert p.data.tolist() == [1.0, -2.0]


def test_adamw_decoupled_decay():
    p = Parameter(np.array([1.0, -2.0]))
    adamw_step([p], [np.zeros(2)], lr=0.1, weight_decay=0.5)
    assert np.allclose(p.data, np.array([1.0, -2.0]) * (1 - 0.1 * 0.5))


def test_adamw_rejects_nonpositive_lr():
    with pytest.raises(ValueError):
        adamw_step([Parameter(np.zeros(1))], [np.zeros(1)], lr=0.0)


def test_adamw_quadratic_descends():
    p = Parameter(np.array([3.0]))
    xs = []
    for _ in range(100):
        p.grad = None
        tsum(mul(p, p)).backward()
        adamw_step([p], lr=0.05, weight_decay=0.0)
        xs.append(abs(p.data[0]))
    # monotone once the first moment has warmed up
    assert all(b < a for a, b in zip(xs[5:], xs[6:]))
    assert xs[-1] < 0.1 * 3.0


def test_adamw_bias_correction_first_step():
    # the first Adam step moves each coordinate by about lr
    p = Parameter(np.array([1.0, 1.0]))
    adamw_step([p], [np.array([0.3, -1e-3])], lr=0.01, weight_decay=0.0)
    assert np.allclose(p.data, [0.99, 1.01], atol=1e-6)


# ---------------------------------------------------------------- checkpoint


def test_checkpoint_round_trip(tmp_path):
    arrays = {"a.weight": np.arange(6.0).reshape(2, 3), "b": np.array([np.pi])}
    save_checkpoint(tmp_path / "x.ckpt", arrays, {"epoch": 3})
    back, meta = load_checkpoint(tmp_path / "x.ckpt")
    assert meta == {"epoch": 3}
    assert all(np.array_equal(back[k], v) for k, v in arrays.items())


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad")


def test_checkpoint_truncated(tmp_path):
    save_checkpoint(tmp_path / "x.ckpt", {"a": np.zeros(10)})
    data = (tmp_path / "x.ckpt").read_bytes()
    (tmp_path / "x.ckpt").write_bytes(data[:30])
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.ckpt")
