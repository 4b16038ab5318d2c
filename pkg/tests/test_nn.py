import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wassbench import nn
from wassbench.tensor import ShapeError, eval_and_grad


def test_parameter_count():
    net = nn.mlp_init([784, 128, 128, 1], 7)
    assert net.n_params() == 784 * 128 + 128 + 128 * 128 + 128 + 128 * 1 + 1


def test_same_seed_bit_identical():
    a, b = nn.mlp_init([5, 16, 1], 3), nn.mlp_init([5, 16, 1], 3)
    assert a.checksum() == b.checksum()
    assert nn.mlp_init([5, 16, 1], 4).checksum() != a.checksum()


def test_init_bounds_and_zero_biases():
    net = nn.mlp_init([50, 20, 1], 0)
    assert np.all(np.abs(net.params["W0"]) <= np.sqrt(6 / 50))
    assert not net.params["b0"].any()


def test_invalid_widths():
    with pytest.raises(ValueError):
        nn.mlp_init([], 0)
    with pytest.raises(ValueError):
        nn.mlp_init([3], 0)


def test_two_dimensional_gaussian_inputs():
    net = nn.discriminator(2, 0)
    assert net.widths == (2, 128, 128, 1)
    out = nn.forward(net, np.random.default_rng(0).standard_normal((64, 2)))
    assert out.shape == (64,)


def test_zero_weights_give_zero_output():
    net = nn.mlp_init([3, 8, 1], 0)
    for v in net.params.values():
        v[...] = 0.0
    assert not nn.forward(net, np.ones((4, 3))).data.any()


def test_hand_linear_layer():
    net = nn.MLP((2, 2), {"W0": np.array([[1.0, 2.0], [3.0, 4.0]]), "b0": np.array([0.5, -1.0])})
    x = np.array([[1.0, 1.0], [2.0, -1.0]])
    # rows: [1+3+.5, 2+4-1], [2-3+.5, 4-4-1]
    np.testing.assert_array_equal(nn.forward(net, x).data, [[4.5, 5.0], [-0.5, -1.0]])


def test_forward_shape_mismatch():
    with pytest.raises(ShapeError):
        nn.forward(nn.mlp_init([3, 4, 1], 0), np.ones((2, 2)))


def test_generator_dimension_check():
    assert nn.generator(2, 2, 0).widths == (2, 128, 128, 2)
    with pytest.raises(ValueError):
        nn.generator(3, 2, 0)


def test_adam_zero_gradient_is_identity():
    p = {"w": np.array([1.0, -2.0])}
    st_ = nn.make_optimizer("adam", 1e-3)
    nn.optimizer_step(p, {"w": np.zeros(2)}, st_)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    assert st_.step == 1


def test_adam_beta1_zero_first_moment_is_current_gradient():
    p = {"w": np.zeros(3)}
    st_ = nn.make_optimizer("adam", 1e-3, betas=(0.0, 0.9))
    for g in ([1.0, 2.0, 3.0], [-4.0, 0.5, 0.0]):
        nn.optimizer_step(p, {"w": np.array(g)}, st_)
        np.testing.assert_array_equal(st_.m["w"], g)


def test_rmsprop_on_negative_square_shrinks_monotonically():
    w = {"w": np.array(1.0)}
    st_ = nn.make_optimizer("rmsprop", 0.1)
    v, prev = 0.0, 1.0
    for _ in range(30):
        g = -2.0 * w["w"]
        # hand recurrence
        v = 0.99 * v + 0.01 * float(g) ** 2
        expected = float(w["w"]) + 0.1 * float(g) / (np.sqrt(v) + 1e-8)
        nn.optimizer_step(w, {"w": np.array(g)}, st_)
        assert float(w["w"]) == pytest.approx(expected, abs=1e-15)
    # monotone while the step is smaller than |w|; check the first few steps
    w = {"w": np.array(1.0)}
    st_ = nn.make_optimizer("rmsprop", 0.1)
    for _ in range(5):
        nn.optimizer_step(w, {"w": -2.0 * w["w"]}, st_)
        assert abs(float(w["w"])) < prev
        prev = abs(float(w["w"]))


def test_optimizer_shape_mismatch():
    with pytest.raises(ShapeError):
        nn.optimizer_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, nn.make_optimizer("adam", 1e-3))


def test_optimizer_rejects_bad_config():
    with pytest.raises(ValueError):
        nn.make_optimizer("sgd", 0.1)
    with pytest.raises(ValueError):
        nn.make_optimizer("adam", 0.0)


def test_ascent_convention():
    # maximizing -(w-3)^2 from 0 moves w toward 3
    p = {"w": np.array([0.0])}
    st_ = nn.make_optimizer("adam", 0.05, betas=(0.0, 0.9))
    for _ in range(200):
        _, g = eval_and_grad(lambda t: -((t["w"] - 3.0) ** 2).sum(), p, ["w"])
        nn.optimizer_step(p, g, st_)
    assert abs(p["w"][0] - 3.0) < 0.1


def test_clip_idempotent_and_bounded():
    net = nn.mlp_init([4, 8, 1], 1)
    nn.clip_weights(net, 0.01)
    c1 = net.checksum()
    nn.clip_weights(net, 0.01)
    assert net.checksum() == c1
    assert max(np.abs(v).max() for v in net.params.values()) <= 0.01


def test_clip_biases_flag():
    net = nn.mlp_init([2, 3, 1], 0)
    net.params["b0"][:] = 5.0
    nn.clip_weights(net, 0.01, clip_biases=False)
    assert np.all(net.params["b0"] == 5.0)
    nn.clip_weights(net, 0.01)
    assert np.all(net.params["b0"] == 0.01)


def test_clip_rejects_nonpositive():
    with pytest.raises(ValueError):
        nn.clip_weights(nn.mlp_init([2, 1], 0), 0.0)


def test_lipschitz_bound_after_clipping():
    net = nn.clip_weights(nn.mlp_init([3, 16, 16, 1], 2), 0.01)
    L = nn.lipschitz_bound(net)
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((200, 3)), rng.standard_normal((200, 3))
    fx, fy = nn.forward(net, x).data, nn.forward(net, y).data
    assert np.all(np.abs(fx - fy) <= L * np.linalg.norm(x - y, axis=1) + 1e-15)


@settings(max_examples=30, deadline=None)
@given(c=st.floats(0.01, 10.0), seed=st.integers(0, 100))
def test_positive_homogeneity_without_biases(c, seed):
    net = nn.mlp_init([3, 8, 8, 1], seed)
    x = np.random.default_rng(seed).standard_normal((5, 3))
    np.testing.assert_allclose(nn.forward(net, c * x).data, c * nn.forward(net, x).data, rtol=1e-12, atol=1e-12)


def test_checkpoint_round_trip(tmp_path):
    net = nn.mlp_init([5, 7, 1], 9)
    path = tmp_path / "d.ckpt"
    nn.save_checkpoint(net, path)
    back = nn.load_checkpoint(path)
    assert back.widths == net.widths
    assert back.checksum() == net.checksum()


def test_checkpoint_truncated(tmp_path):
    net = nn.mlp_init([5, 7, 1], 9)
    path = tmp_path / "d.ckpt"
    nn.save_checkpoint(net, path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        nn.load_checkpoint(path)
