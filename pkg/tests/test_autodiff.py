import io

import numpy as np
import pytest
from fdcheck import assert_grad_close

from intnav import nn


def _t(rng, shape):
    return nn.Tensor(rng.standard_normal(shape), requires_grad=True)


def test_relu_values():
    assert nn.relu(nn.Tensor([-1.0])).data[0] == 0.0
    assert nn.relu(nn.Tensor([2.0])).data[0] == 2.0


def test_mse_of_identical_inputs_is_zero():
    x = np.arange(6.0).reshape(2, 3)
    assert float(nn.mse(nn.Tensor(x), nn.Tensor(x.copy())).data) == 0.0


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 1, 5, 7))
    w = np.ones((1, 1, 1, 1))
    b = np.zeros(1)
    y = nn.conv2d(nn.Tensor(x), nn.Tensor(w), nn.Tensor(b))
    np.testing.assert_array_equal(y.data, x)


def test_sum_of_squares_grad_is_2w():
    rng = np.random.default_rng(1)
    w = _t(rng, (4, 3))
    loss = nn.mse(w, np.zeros((4, 3)))
    nn.backward(loss)
    np.testing.assert_allclose(w.grad, 2.0 * w.data, rtol=1e-14)


def test_detached_constant_gets_no_grad():
    rng = np.random.default_rng(2)
    w = _t(rng, (3,))
    c = w.detach()
    loss = nn.mse(nn.add(w, c), np.zeros(3))
    nn.backward(loss)
    assert w.grad is not None
    assert c.grad is None


def test_backward_rejects_nonscalar():
    rng = np.random.default_rng(3)
    w = _t(rng, (2, 2))
    with pytest.raises(ValueError, match="scalar"):
        nn.backward(nn.add(w, w))


def test_shape_mismatch_messages_include_both_shapes():
    a = nn.Tensor(np.zeros((2, 3)))
    b = nn.Tensor(np.zeros((4, 5)))
    with pytest.raises(nn.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        nn.matmul(a, b)
    with pytest.raises(nn.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        nn.mse(a, b)
    with pytest.raises(nn.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        nn.add(a, b)


@pytest.mark.parametrize(
    "name",
    ["matmul", "conv2d", "add", "relu", "tanh", "sigmoid", "concat", "cumsum", "mse",
     "mul", "reshape", "expand_steps"],
)
def test_op_gradients_match_finite_differences(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    if name == "matmul":
        a, b = _t(rng, (4, 5)), _t(rng, (5, 3))
        target = rng.standard_normal((4, 3))
        fn = lambda: nn.mse(nn.matmul(a, b), target)
        params = [a, b]
    elif name == "conv2d":
        x, w, b = _t(rng, (2, 2, 6, 7)), _t(rng, (3, 2, 3, 3)), _t(rng, (3,))
        target = rng.standard_normal((2, 3, 2, 3))
        fn = lambda: nn.mse(nn.conv2d(x, w, b, stride=2, pad=0), target)
        params = [x, w, b]
    elif name == "add":
        a, b = _t(rng, (3, 4)), _t(rng, (4,))  # broadcast bias
        target = rng.standard_normal((3, 4))
        fn = lambda: nn.mse(nn.add(a, b), target)
        params = [a, b]
    elif name == "mul":
        a, b = _t(rng, (3, 4)), _t(rng, (3, 4))
        target = rng.standard_normal((3, 4))
        fn = lambda: nn.mse(nn.mul(a, b), target)
        params = [a, b]
    elif name in ("relu", "tanh", "sigmoid"):
        op = getattr(nn, name)
        x = _t(rng, (4, 5))
        x.data += np.sign(x.data) * 0.05  # keep relu inputs off the kink
        target = rng.standard_normal((4, 5))
        fn = lambda: nn.mse(op(x), target)
        params = [x]
    elif name == "concat":
        a, b = _t(rng, (3, 2)), _t(rng, (3, 4))
        target = rng.standard_normal((3, 6))
        fn = lambda: nn.mse(nn.concat([a, b], axis=1), target)
        params = [a, b]
    elif name == "cumsum":
        x = _t(rng, (3, 5, 2))
        target = rng.standard_normal((3, 5, 2))
        fn = lambda: nn.mse(nn.cumulative_sum(x, axis=1), target)
        params = [x]
    elif name == "reshape":
        x = _t(rng, (4, 6))
        target = rng.standard_normal((2, 12))
        fn = lambda: nn.mse(nn.reshape(x, (2, 12)), target)
        params = [x]
    elif name == "expand_steps":
        x = _t(rng, (3, 4))
        target = rng.standard_normal((3, 5, 4))
        fn = lambda: nn.mse(nn.expand_steps(x, 5), target)
        params = [x]
    else:  # mse w.r.t. prediction
        x = _t(rng, (4, 3))
        target = rng.standard_normal((4, 3))
        fn = lambda: nn.mse(x, target)
        params = [x]
    for p in params:
        assert_grad_close(fn, p)


def test_cumsum_backward_is_reversed_cumsum_exactly():
    rng = np.random.default_rng(4)
    x = _t(rng, (2, 7))
    y = nn.cumulative_sum(x, axis=1)
    loss = nn.mse(y, np.zeros_like(y.data))
    nn.backward(loss)
    upstream = 2.0 * y.data  # mse gradient with zero target, exact in floats
    expected = np.flip(np.cumsum(np.flip(upstream, axis=1), axis=1), axis=1)
    np.testing.assert_array_equal(x.grad, expected)


def test_no_grad_suppresses_tape():
    rng = np.random.default_rng(5)
    w = _t(rng, (3,))
    with nn.no_grad():
        y = nn.relu(w)
    assert not y.requires_grad
    assert y._backward is None


def test_grad_accumulates_when_tensor_used_twice():
    w = nn.Tensor(np.array([2.0]), requires_grad=True)
    loss = nn.mse(nn.add(w, w), np.array([0.0]))  # (2w)^2 -> d/dw = 8w
    nn.backward(loss)
    np.testing.assert_allclose(w.grad, [16.0])


# ---------------------------------------------------------------------------
# Adam

def test_adam_config_validation():
    with pytest.raises(ValueError):
        nn.AdamConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        nn.AdamConfig(grad_clip_norm=-1.0)


def test_adam_zero_grads_no_decay_leaves_params():
    w = nn.Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = nn.Adam([w], nn.AdamConfig(weight_decay=0.0))
    w.grad = np.zeros(2)
    before = w.data.copy()
    opt.step()
    np.testing.assert_array_equal(w.data, before)


def test_grad_clip_scales_by_half():
    w = nn.Tensor(np.zeros(4), requires_grad=True)
    w.grad = np.full(4, 10.0)  # norm 20
    total = nn.clip_grad_norm([w], 10.0)
    assert total == pytest.approx(20.0)
    np.testing.assert_allclose(w.grad, np.full(4, 5.0))


def test_adam_quadratic_monotone_decrease():
    # step size small enough that Adam approaches without overshooting
    p = nn.Tensor(np.array([5.0]), requires_grad=True)
    opt = nn.Adam([p], nn.AdamConfig(learning_rate=0.02, weight_decay=0.0))
    prev = float("inf")
    for _ in range(100):
        opt.zero_grad()
        loss = nn.mse(p, np.array([1.0]))
        nn.backward(loss)
        opt.step()
        val = float(loss.data)
        assert val < prev
        prev = val


def test_adam_rejects_nan_grads():
    w = nn.Tensor(np.array([1.0]), requires_grad=True)
    opt = nn.Adam([w], nn.AdamConfig())
    w.grad = np.array([float("nan")])
    with pytest.raises(FloatingPointError, match="non-finite"):
        opt.step()


def test_adam_weight_decay_is_decoupled():
    # with zero grads, one step shrinks params by exactly lr * wd * p
    w = nn.Tensor(np.array([2.0]), requires_grad=True)
    cfg = nn.AdamConfig(learning_rate=0.1, weight_decay=0.5)
    opt = nn.Adam([w], cfg)
    w.grad = np.zeros(1)
    opt.step()
    np.testing.assert_allclose(w.data, [2.0 - 0.1 * 0.5 * 2.0])


def test_training_is_bit_deterministic():
    def run():
        rng = np.random.default_rng(7)
        w = nn.Tensor(rng.standard_normal((6, 4)), requires_grad=True)
        b = nn.Tensor(np.zeros(4), requires_grad=True)
        opt = nn.Adam([w, b], nn.AdamConfig(learning_rate=1e-3))
        x = rng.standard_normal((8, 6))
        y = rng.standard_normal((8, 4))
        for _ in range(50):
            opt.zero_grad()
            loss = nn.mse(nn.tanh(nn.add(nn.matmul(nn.Tensor(x), w), b)), y)
            nn.backward(loss)
            opt.step()
        return w.data.copy(), b.data.copy()

    w1, b1 = run()
    w2, b2 = run()
    np.testing.assert_array_equal(w1, w2)
    np.testing.assert_array_equal(b1, b2)


# ---------------------------------------------------------------------------
# checkpoint payloads

def test_tensor_roundtrip():
    rng = np.random.default_rng(8)
    tensors = {
        "w": rng.standard_normal((3, 4)),
        "b": rng.standard_normal(4),
        "scalar": np.array(2.5),
    }
    buf = io.BytesIO()
    nn.write_tensors(buf, tensors)
    buf.seek(0)
    out = nn.read_tensors(buf)
    assert set(out) == set(tensors)
    for k in tensors:
        np.testing.assert_array_equal(out[k], np.asarray(tensors[k], dtype=np.float64))


def test_tensor_read_rejects_bad_magic():
    with pytest.raises(nn.CheckpointError, match="magic"):
        nn.read_tensors(io.BytesIO(b"NOTMAGIC" + b"\x00" * 16))


def test_tensor_read_rejects_truncation():
    buf = io.BytesIO()
    nn.write_tensors(buf, {"w": np.ones((4, 4))})
    raw = buf.getvalue()[:-8]
    with pytest.raises(nn.CheckpointError, match="truncated"):
        nn.read_tensors(io.BytesIO(raw))
