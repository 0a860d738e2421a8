import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sarmp import tensor as T
from sarmp.tensor import ShapeError, Tape, Tensor, gradient_check

from conftest import numeric_grad, rel_err


def grad_of(fn, *arrays):
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*leaves)
    tape.backward(out)
    return [x.grad if x.grad is not None else np.zeros_like(x.data) for x in leaves]


def test_sigmoid_at_zero():
    assert T.sigmoid(Tensor(0.0)).data == 0.5


def test_mean_axis():
    np.testing.assert_array_equal(T.mean_axis(Tensor([[1, 3], [5, 7]]), 0).data, [3, 5])


def test_neg_sq_dist_self_is_zero():
    x = Tensor(np.random.default_rng(0).normal(size=(4, 5)))
    np.testing.assert_array_equal(T.neg_sq_dist(x, x).data, np.zeros(4))


def test_backward_sigmoid():
    (g,) = grad_of(lambda w: T.sum_all(T.sigmoid(w)), np.zeros(1))
    assert g[0] == 0.25


def test_backward_square():
    (g,) = grad_of(lambda x: T.sum_all(T.mul(x, x)), np.array([1.0, 2.0]))
    np.testing.assert_array_equal(g, [2.0, 4.0])


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeError, match="neg_sq_dist"):
        T.neg_sq_dist(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
    with pytest.raises(ShapeError, match="add"):
        T.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_nonscalar_root_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = T.scale(x, 2.0)
    with pytest.raises(ShapeError):
        tape.backward(y)


def test_unused_leaf_gets_zero_gradient():
    x = Tensor(np.ones(3), requires_grad=True)
    unused = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        y = T.sum_all(x)
    tape.backward(y)
    assert unused.grad is None
    np.testing.assert_array_equal(x.grad, np.ones(3))


def test_second_backward_rejected():
    x = Tensor(np.ones(3), requires_grad=True)
    with Tape() as tape:
        y = T.sum_all(T.mul(x, x))
    tape.backward(y)
    with pytest.raises(RuntimeError):
        tape.backward(y)


def test_no_recording_without_requires_grad():
    with Tape() as tape:
        T.add(Tensor(np.ones(2)), Tensor(np.ones(2)))
    assert tape.nodes == []


def test_debug_flags_nonfinite_from_finite_inputs():
    with np.errstate(over="ignore"), pytest.raises(FloatingPointError, match="exp"):
        T.exp(Tensor([1000.0]))


# ---------------------------------------------------------------- gradient_check

def test_gradient_check_l2():
    x = np.random.default_rng(1).uniform(-1, 1, size=7)
    assert gradient_check(lambda t: T.sum_all(T.mul(t, t)), x, 1e-5) < 1e-8


def test_gradient_check_constant():
    assert gradient_check(lambda t: T.sum_all(Tensor(np.ones(3))), np.zeros(3)) == 0.0


def test_mlp_three_layers_vs_finite_differences():
    rng = np.random.default_rng(3)
    dims = [5, 8, 6, 4]
    ws = [rng.uniform(-1, 1, size=(a, b)) for a, b in zip(dims, dims[1:])]
    bs = [rng.uniform(-1, 1, size=b) for b in dims[1:]]
    x = rng.uniform(-1, 1, size=(3, 5))

    def forward(*params):
        h = Tensor(x)
        for i in range(3):
            h = T.add(T.matmul(h, params[i]), params[3 + i])
            h = T.sigmoid(h) if i < 2 else h
        return T.sum_all(T.mul(h, h))

    grads = grad_of(forward, *ws, *bs)
    for i, arr in enumerate(ws + bs):
        def f(a, i=i):
            ps = [Tensor(p) for p in ws + bs]
            ps[i] = Tensor(a)
            return float(forward(*ps).data)
        assert rel_err(grads[i], numeric_grad(f, arr)) < 1e-6


# ---------------------------------------------------------------- per-op JVP property

vec = st.integers(min_value=1, max_value=8)


def _check(fn, *arrays, tol=1e-6):
    grads = grad_of(fn, *arrays)
    for i, a in enumerate(arrays):
        def f(v, i=i):
            xs = [Tensor(x) for x in arrays]
            xs[i] = Tensor(v)
            return float(fn(*xs).data)
        num = numeric_grad(f, a)
        assert rel_err(grads[i], num) < tol or np.abs(grads[i] - num).max() < 1e-9


@settings(max_examples=15, deadline=None)
@given(n=vec, m=vec, k=vec, seed=st.integers(0, 10_000))
def test_primitive_jacobians(n, m, k, seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(-1, 1, size=(n, m))
    B = rng.uniform(-1, 1, size=(m, k))
    C = rng.uniform(-1, 1, size=(n, m))
    w = rng.uniform(-1, 1, size=(n, m))
    wk = rng.uniform(-1, 1, size=(n, k))
    wn = rng.uniform(-1, 1, size=n)
    W = Tensor(w)

    def proj(t, weights=W):
        return T.sum_all(T.mul(t, weights))

    _check(lambda a, b: proj(T.matmul(a, b), Tensor(wk)), A, B)
    _check(lambda a, c: proj(T.add(a, c)), A, C)
    _check(lambda a, c: proj(T.mul(a, c)), A, C)
    _check(lambda a: proj(T.scale(a, -1.7)), A)
    _check(lambda a, c: proj(T.slice_axis(T.concat([a, c], axis=1), 1, 0, m)), A, C)
    _check(lambda a: T.sum_all(T.mul(T.mean_axis(a, 1), Tensor(wn))), A)
    _check(lambda a: proj(T.softmax_axis(a, 1)), A)
    _check(lambda a: proj(T.sigmoid(a)), A)
    _check(lambda a: proj(T.log_sigmoid(a)), A)
    _check(lambda a: proj(T.exp(a)), A)
    _check(lambda a: proj(T.standardize(a, 0)), A)
    _check(lambda a: proj(T.standardize(a, 1, eps=1e-3)), A)
    _check(lambda a, c: T.sum_all(T.mul(T.neg_sq_dist(a, c), Tensor(wn))), A, C)
    idx = rng.integers(0, n, size=n + 2)
    wg = Tensor(rng.uniform(-1, 1, (n + 2, m)))
    _check(lambda a: T.sum_all(T.mul(T.gather_rows(a, idx), wg)), A)
    cols = rng.integers(0, n, size=(n, k + 1))
    wd = Tensor(rng.uniform(-1, 1, (n, k + 1)))
    _check(lambda a, c: T.sum_all(T.mul(T.gather_dot(a, c, cols), wd)), A, C)
    seg = rng.integers(0, 3, size=n)
    ws = Tensor(rng.uniform(-1, 1, (3, m)))
    _check(lambda a: T.sum_all(T.mul(T.segment_mean(a, seg, 3), ws)), A)
    # relu is not differentiable at 0; random points avoid it almost surely
    _check(lambda a: proj(T.relu(a)), A)


def test_bias_broadcast_gradient():
    x = np.random.default_rng(0).normal(size=(4, 3))
    b = np.random.default_rng(1).normal(size=3)
    gx, gb = grad_of(lambda a, c: T.sum_all(T.add(a, c)), x, b)
    np.testing.assert_array_equal(gb, [4.0, 4.0, 4.0])


def test_gather_mean_matches_naive_loop():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(6, 4))
    idx = rng.integers(0, 6, size=9)
    seg = rng.integers(0, 4, size=9)
    out = T.gather_mean(Tensor(a), idx, seg, 5).data
    for s in range(5):
        rows = [a[i] for i, g in zip(idx, seg) if g == s]
        expect = np.mean(rows, axis=0) if rows else np.zeros(4)
        np.testing.assert_allclose(out[s], expect, rtol=0, atol=1e-12)


def test_determinism_bit_identical():
    rng = np.random.default_rng(5)
    a, b = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
    fn = lambda x, y: T.sum_all(T.sigmoid(T.matmul(x, y)))  # noqa: E731
    g1, g2 = grad_of(fn, a, b), grad_of(fn, a, b)
    for x, y in zip(g1, g2):
        assert np.array_equal(x, y)


def test_standardize_moments():
    x = np.random.default_rng(0).normal(3.0, 2.0, size=(50, 4))
    y = T.standardize(Tensor(x), 0, eps=0.0).data
    np.testing.assert_allclose(y.mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(y.std(0), 1, atol=1e-12)
    # a constant column maps to zeros, not NaN
    assert not T.standardize(Tensor(np.ones((3, 2))), 0).data.any()


def test_gather_dot_matches_explicit_gather():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(6, 3))
    cols = np.array([[0, 5, 5], [1, 1, 1], [2, 3, 4], [5, 0, 2]])
    expect = np.einsum("id,ijd->ij", a, b[cols])
    np.testing.assert_allclose(T.gather_dot(Tensor(a), Tensor(b), cols).data, expect, rtol=1e-14)
    with pytest.raises(T.ShapeError, match="gather_dot"):
        T.gather_dot(Tensor(a), Tensor(b), cols[:2])
    with pytest.raises(T.ShapeError, match="gather_dot"):
        T.gather_dot(Tensor(a), Tensor(b), cols + 1)
