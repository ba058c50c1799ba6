import zlib

import numpy as np
import pytest

from taem import autodiff as ad
from taem.autodiff import (
    NondeterministicError,
    NonFiniteError,
    ShapeMismatchError,
    Tensor,
    build_tape,
    grad_check,
)


def numeric_grad(f, x0, eps=1e-6):
    """Test-local central differences, independent of grad_check."""
    x0 = np.asarray(x0, dtype=np.float64)
    g = np.zeros_like(x0)
    flat = x0.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x0)
        flat[i] = orig - eps
        lo = f(x0)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * eps)
    return g


def test_matmul_identity():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 5))
    out = ad.matmul(Tensor(np.eye(3)), Tensor(x))
    np.testing.assert_array_equal(out.data, x)


def test_mse_gradient_hand_and_finite_difference():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = ad.mse(x, np.array([0.0, 0.0]))
    assert loss.item() == pytest.approx(2.5)  # (1 + 4) / 2
    loss.backward()
    np.testing.assert_allclose(x.grad, [1.0, 2.0])
    num = numeric_grad(lambda v: float(np.mean(v**2)), np.array([1.0, 2.0]))
    np.testing.assert_allclose(x.grad, num, atol=1e-8)


def test_stop_gradient_blocks_path():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    loss = ad.mse(ad.stop_gradient(x), np.array([0.0, 0.0]))
    loss.backward()
    assert x.grad is None or not x.grad.any()


def test_stop_gradient_passes_value_forward():
    x = Tensor(np.array([3.0, -1.0]))
    np.testing.assert_array_equal(ad.stop_gradient(x).data, x.data)


class TestGradCheckOp:
    def test_sum_of_squares(self):
        def f(p):
            return ad.sum_all(ad.mul(p["x"], p["x"]))

        x = Tensor(np.array([3.0]), requires_grad=True)
        assert grad_check(f, {"x": x}) < 1e-9
        # analytic gradient itself is 2x = 6
        y = Tensor(np.array([3.0]), requires_grad=True)
        loss = ad.sum_all(ad.mul(y, y))
        loss.backward()
        np.testing.assert_allclose(y.grad, [6.0])

    def test_tanh_matmul_mse(self):
        rng = np.random.default_rng(1)
        w = Tensor(rng.standard_normal((4, 4)) * 0.5, requires_grad=True)
        x = rng.standard_normal((4, 4))
        t = rng.standard_normal((4, 4))

        def f(p):
            return ad.mse(ad.tanh(ad.matmul(Tensor(x), p["w"])), t)

        assert grad_check(f, {"w": w}, epsilon=1e-4) < 1e-6

    def test_constant_function(self):
        def f(p):
            return ad.mul(ad.sum_all(ad.stop_gradient(p["x"])), 1.0)

        assert grad_check(f, {"x": Tensor(np.ones(3), requires_grad=True)}) == 0.0

    def test_epsilon_validation(self):
        with pytest.raises(ValueError):
            grad_check(lambda p: ad.sum_all(p["x"]), {"x": Tensor(np.ones(2))}, epsilon=0.5)

    def test_nondeterministic_f_rejected(self):
        rng = np.random.default_rng(2)

        def f(p):
            return ad.sum_all(ad.mul(p["x"], Tensor(rng.standard_normal(3))))

        with pytest.raises(NondeterministicError):
            grad_check(f, {"x": Tensor(np.ones(3), requires_grad=True)})


@pytest.mark.parametrize(
    "name,builder",
    [
        ("matmul", lambda p, c: ad.matmul(p, Tensor(c["b"]))),
        ("add", lambda p, c: ad.add(p, Tensor(c["same"]))),
        ("add_bias", lambda p, c: ad.add(p, Tensor(c["bias"]))),
        ("mul", lambda p, c: ad.mul(p, Tensor(c["same"]))),
        ("mul_scalar", lambda p, c: ad.mul(p, -1.7)),
        ("tanh", lambda p, c: ad.tanh(p)),
        ("relu", lambda p, c: ad.relu(ad.add(p, Tensor(c["same"])))),
        ("softmax", lambda p, c: ad.softmax(p)),
        ("log_softmax", lambda p, c: ad.log_softmax(p)),
        ("exp", lambda p, c: ad.exp(p)),
        ("log", lambda p, c: ad.log(ad.exp(p))),
        ("layer_norm", lambda p, c: ad.layer_norm(p, Tensor(c["gain"]), Tensor(c["bias"]))),
        ("conv1d", lambda p, c: ad.conv1d(p, Tensor(c["w"]), Tensor(c["cb"]), stride=2, padding=1)),
        ("take_rows", lambda p, c: ad.take_rows(p, np.array([0, 2, 2, 1]))),
        ("transpose", lambda p, c: ad.transpose(p)),
        ("concat", lambda p, c: ad.concat([p, ad.mul(p, 2.0)], axis=1)),
        ("slice_rows", lambda p, c: ad.slice_rows(p, 1, 3)),
        ("slice_cols", lambda p, c: ad.slice_cols(p, 0, 2)),
        ("l2_normalize_rows", lambda p, c: ad.l2_normalize_rows(p)),
        ("sum_all", lambda p, c: p),
    ],
)
def test_primitive_gradients(name, builder):
    """Every primitive beats 1e-6 relative error against central differences."""
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    x = rng.standard_normal((4, 5)) * 0.7
    consts = {
        "b": rng.standard_normal((5, 3)),
        "same": rng.standard_normal((4, 5)) * 0.5 + 0.1,
        "bias": rng.standard_normal(5),
        "gain": rng.standard_normal(5) + 1.5,
        "w": rng.standard_normal((3, 5, 4)) * 0.4,
        "cb": rng.standard_normal(4) * 0.2,
    }

    weights = {}

    def f(p):
        out = builder(p["x"], consts)
        if out.shape == ():
            return out
        if out.shape not in weights:
            # +-{1,2} cotangent: keeps every gradient entry O(1) so the
            # relative-error denominator never sits on roundoff noise
            w = np.random.default_rng(7).choice([-2.0, -1.0, 1.0, 2.0], out.shape)
            weights[out.shape] = w
        return ad.sum_all(ad.mul(out, Tensor(weights[out.shape])))

    assert grad_check(f, {"x": Tensor(x, requires_grad=True)}, epsilon=1e-4) < 1e-6


class TestShapeErrors:
    def test_matmul_names_both_shapes(self):
        with pytest.raises(ShapeMismatchError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_add_rejects_general_broadcast(self):
        with pytest.raises(ShapeMismatchError):
            ad.add(Tensor(np.ones((4, 5))), Tensor(np.ones((4, 1))))

    def test_bias_add_over_last_axis_works(self):
        out = ad.add(Tensor(np.zeros((2, 3))), Tensor(np.array([1.0, 2.0, 3.0])))
        np.testing.assert_array_equal(out.data, [[1, 2, 3], [1, 2, 3]])

    def test_mul_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            ad.mul(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 3))))

    def test_mixed_dtype_rejected(self):
        with pytest.raises(TypeError):
            ad.add(
                Tensor(np.ones(3, dtype=np.float32)),
                Tensor(np.ones(3, dtype=np.float64)),
            )


def test_nonfinite_names_primitive():
    with pytest.raises(NonFiniteError, match="log"):
        ad.log(Tensor(np.array([-1.0])))


def test_backward_requires_scalar_root():
    with pytest.raises(ShapeMismatchError):
        ad.tanh(Tensor(np.ones(3), requires_grad=True)).backward()


def test_tape_topological_and_single_visit():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    a = ad.tanh(x)
    b = ad.mul(a, a)  # diamond: a reused
    c = ad.add(b, a)
    loss = ad.sum_all(c)
    tape = build_tape(loss)
    assert len(tape) == len({id(t) for t in tape})  # visited once
    position = {id(t): i for i, t in enumerate(tape)}
    for node in tape:
        for parent in node._parents:
            assert position[id(parent)] < position[id(node)]
    # gradient through the diamond: d/dx sum(tanh(x)^2 + tanh(x))
    loss.backward()
    expected = (2 * np.tanh(1.0) + 1) * (1 - np.tanh(1.0) ** 2)
    np.testing.assert_allclose(x.grad, np.full((2, 2), expected), rtol=1e-12)


def test_forward_backward_bit_identical():
    def run():
        rng = np.random.default_rng(42)
        x = Tensor(rng.standard_normal((6, 6)), requires_grad=True)
        y = ad.layer_norm(
            ad.softmax(ad.matmul(x, Tensor(rng.standard_normal((6, 6))))),
            Tensor(np.ones(6)),
            Tensor(np.zeros(6)),
        )
        loss = ad.mse(y, np.zeros((6, 6)))
        loss.backward()
        return loss.data.tobytes(), x.grad.tobytes()

    assert run() == run()


def test_grad_accumulates_across_uses():
    x = Tensor(np.array([2.0]), requires_grad=True)
    loss = ad.sum_all(ad.add(ad.mul(x, 3.0), ad.mul(x, 4.0)))
    loss.backward()
    np.testing.assert_allclose(x.grad, [7.0])
