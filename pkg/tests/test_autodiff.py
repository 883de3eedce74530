"""Tensor engine: forward oracles, gradient fidelity, Adam, init, checkpoints."""
import numpy as np
import pytest

from latentflow.autodiff import (Tensor, tensor, concat, minimum, conv2d_valid,
                                 grad_check, fc, conv, RELU, TANH, FLATTEN,
                                 conv_out_size, conv_chain_sizes, apply_sequence,
                                 init_sequence, init_layer_params, ParamStore,
                                 adam_step, grads_from_leaves, save_checkpoint,
                                 load_checkpoint)
from latentflow.errors import ConfigError, DataError, NumericError, ShapeError


# ---------------------------------------------------------------- forward

def test_conv_shape_rule():
    assert conv_out_size(60) == 29
    assert conv_chain_sizes(60) == [29, 14, 6, 2]
    assert conv_chain_sizes(24) == [11, 5, 2]


def test_conv_single_window_ones():
    # 4x4 ones, 3x3 ones kernel, stride 2 -> one valid window, sum = 9
    x = Tensor(np.ones((1, 1, 4, 4)))
    w = Tensor(np.ones((1, 1, 3, 3)))
    b = Tensor(np.zeros(1))
    y = conv2d_valid(x, w, b)
    assert y.shape == (1, 1, 1, 1)
    assert y.data[0, 0, 0, 0] == 9.0


def test_conv_window_arithmetic():
    # top-left window of arange(16): 0+1+2+4+5+6+8+9+10 = 45
    x = Tensor(np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4))
    w = Tensor(np.ones((1, 1, 3, 3)))
    b = Tensor(np.array([0.5]))
    y = conv2d_valid(x, w, b)
    assert y.data[0, 0, 0, 0] == 45.5


def test_conv_stride_window_placement():
    # 5x5 input -> 2x2 output, windows anchored at rows/cols {0, 2}
    x = np.zeros((1, 1, 5, 5))
    x[0, 0, 2, 2] = 1.0  # shared corner of all four windows
    y = conv2d_valid(Tensor(x), Tensor(np.ones((1, 1, 3, 3))), Tensor(np.zeros(1)))
    assert y.shape == (1, 1, 2, 2)
    assert np.all(y.data == 1.0)


def test_fc_forward_arithmetic():
    x = Tensor(np.array([[1.0, 2.0]]))
    w = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    b = Tensor(np.array([0.5, -0.5]))
    y = x @ w + b
    assert np.allclose(y.data, [[7.5, 9.5]])


def test_concat_and_flatten():
    a = Tensor(np.ones((2, 3)))
    b = Tensor(np.zeros((2, 2)))
    c = concat([a, b])
    assert c.shape == (2, 5)
    x = Tensor(np.arange(8.0).reshape(2, 2, 2))
    assert x.flatten_batch().shape == (2, 4)


def test_shape_errors():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        conv2d_valid(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 1, 3, 3))),
                     Tensor(np.zeros(1)))
    with pytest.raises(ShapeError):
        concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3)))])
    with pytest.raises(ShapeError):
        Tensor(np.ones(3), requires_grad=True).sum(axis=0)  # fine
        Tensor(np.ones(3)).backward()  # non-scalar root


def test_nonfinite_rejected():
    with pytest.raises(NumericError):
        tensor([1.0, np.inf])


def test_forward_bitwise_deterministic():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 2, 9, 9)).astype(np.float32)
    w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
    b = rng.normal(size=3).astype(np.float32)
    y1 = conv2d_valid(Tensor(x), Tensor(w), Tensor(b)).data
    y2 = conv2d_valid(Tensor(x), Tensor(w), Tensor(b)).data
    assert y1.tobytes() == y2.tobytes()


def test_no_tape_without_grad():
    y = Tensor(np.ones(3)) * 2.0 + 1.0
    assert y._parents == () and y._bw is None


# ---------------------------------------------------------------- backward

def test_second_backward_rederives():
    w = Tensor(np.array([2.0, -1.0]), requires_grad=True)
    loss = (w * w).sum()
    loss.backward()
    g1 = w.grad.copy()
    loss.backward()
    assert np.array_equal(g1, w.grad)


def _rand(rng, *shape):
    return rng.normal(size=shape)


def test_grad_fc_relu_tanh_flatten():
    rng = np.random.default_rng(1)
    x = _rand(rng, 3, 4)

    def build(p):
        h = (Tensor(x) @ p["w1"] + p["b1"]).relu()
        h = (h @ p["w2"] + p["b2"]).tanh()
        return (h * h).sum()

    err = grad_check(build, {"w1": _rand(rng, 4, 5), "b1": _rand(rng, 5),
                             "w2": _rand(rng, 5, 2), "b2": _rand(rng, 2)})
    assert err < 1e-4


def test_grad_conv():
    rng = np.random.default_rng(2)
    x = _rand(rng, 2, 2, 7, 7)

    def build(p):
        y = conv2d_valid(Tensor(x), p["w"], p["b"])
        return (y * y).sum()

    err = grad_check(build, {"w": _rand(rng, 3, 2, 3, 3) * 0.4, "b": _rand(rng, 3) * 0.4})
    assert err < 1e-4


def test_grad_conv_wrt_input():
    rng = np.random.default_rng(3)
    w = _rand(rng, 2, 1, 3, 3) * 0.5
    b = _rand(rng, 2) * 0.5

    def build(p):
        y = conv2d_valid(p["x"], Tensor(w), Tensor(b))
        return (y ** 2).sum()

    err = grad_check(build, {"x": _rand(rng, 1, 1, 6, 6)})
    assert err < 1e-4


def test_grad_concat_flatten():
    rng = np.random.default_rng(4)

    def build(p):
        cat = concat([p["a"].flatten_batch(), p["b"]])
        return (cat.tanh() * cat).mean()

    err = grad_check(build, {"a": _rand(rng, 2, 2, 3), "b": _rand(rng, 2, 4)})
    assert err < 1e-4


def test_grad_elementwise_family():
    # exp/log/div/clip/minimum/mean, randomized sweep away from kinks
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        a0 = rng.uniform(0.5, 2.0, size=(3, 3))
        b0 = rng.uniform(0.5, 2.0, size=(3, 3)) + 0.3  # keep |a-b| off the min tie

        def build(p):
            q = p["a"].exp() / p["b"] + p["a"].log()
            r = minimum(p["a"], p["b"]) * 3.0 - p["b"].clip(0.6, 1.9)
            return (q * r).mean() + (q - r).sum() * 0.1

        err = grad_check(build, {"a": a0, "b": b0})
        assert err < 1e-4, f"seed {seed}: {err}"


def test_grad_broadcast_bias():
    rng = np.random.default_rng(5)
    x = _rand(rng, 4, 3)

    def build(p):
        return ((Tensor(x) + p["b"]) * p["s"]).sum()

    err = grad_check(build, {"b": _rand(rng, 3), "s": np.array([[2.0]])})
    assert err < 1e-4


# ---------------------------------------------------------------- adam

def test_adam_first_step_frozen():
    # theta=1, grad=1, lr=1e-3: bias-corrected mhat=vhat=1 -> theta ~ 0.999
    st = ParamStore()
    st.add("w", np.array([1.0]))
    adam_step(st, {"w": np.array([1.0])}, lr=1e-3)
    assert abs(st.values["w"][0] - 0.999) < 1e-8
    assert st.step_count == 1


def test_adam_missing_grads_untouched():
    st = ParamStore()
    st.add("w", np.array([1.0]))
    st.add("frozen", np.array([5.0]))
    adam_step(st, {"w": np.array([0.5])}, lr=1e-2)
    assert st.values["frozen"][0] == 5.0
    assert np.all(st.m["frozen"] == 0.0)


def test_adam_validates():
    st = ParamStore()
    st.add("w", np.array([1.0]))
    with pytest.raises(ConfigError):
        adam_step(st, {}, lr=-1.0)
    with pytest.raises(NumericError):
        adam_step(st, {"w": np.array([np.nan])}, lr=1e-3)
    with pytest.raises(ConfigError):
        adam_step(st, {"nope": np.array([1.0])}, lr=1e-3)
    with pytest.raises(ConfigError):
        st.add("w", np.array([2.0]))


def test_adam_descends_quadratic():
    st = ParamStore()
    st.add("w", np.array([3.0, -2.0]))
    for _ in range(2000):
        leaves = st.leaves(np.float64)
        loss = ((leaves["w"] - 0.5) ** 2).sum()
        loss.backward()
        adam_step(st, grads_from_leaves(leaves), lr=0.01)
    assert np.allclose(st.values["w"], 0.5, atol=1e-3)


# ---------------------------------------------------------------- init

def test_init_kaiming_bound_and_variance():
    spec = fc(256, 128)
    w, b = init_layer_params(spec, np.random.default_rng(7), dtype=np.float64)
    bound = np.sqrt(6.0 / 256)
    assert w.shape == (256, 128) and b.shape == (128,)
    assert np.max(np.abs(w)) <= bound
    assert np.all(b == 0.0)
    # uniform(-bound, bound) variance = bound^2/3
    assert abs(w.var() / (bound ** 2 / 3) - 1.0) < 0.1


def test_init_xavier_bound():
    w, _ = init_layer_params(fc(64, 32, init="xavier"), np.random.default_rng(8))
    assert np.max(np.abs(w)) <= np.sqrt(6.0 / (64 + 32))


def test_init_conv_fan_in():
    w, b = init_layer_params(conv(2, 32), np.random.default_rng(9))
    assert w.shape == (32, 2, 3, 3)
    assert np.max(np.abs(w)) <= np.sqrt(6.0 / (2 * 9))


def test_init_deterministic_per_seed():
    s1 = ParamStore(); s2 = ParamStore(); s3 = ParamStore()
    specs = [conv(2, 4), RELU, FLATTEN, fc(16, 8), TANH]
    init_sequence(specs, s1, np.random.default_rng(42), "net.")
    init_sequence(specs, s2, np.random.default_rng(42), "net.")
    init_sequence(specs, s3, np.random.default_rng(43), "net.")
    for k in s1.values:
        assert s1.values[k].tobytes() == s2.values[k].tobytes()
    assert s1.values["net.0.weight"].tobytes() != s3.values["net.0.weight"].tobytes()


def test_sequence_apply():
    specs = [fc(3, 4), RELU, fc(4, 2), TANH]
    st = ParamStore()
    init_sequence(specs, st, np.random.default_rng(0), "f.")
    y = apply_sequence(specs, st.leaves(), Tensor(np.ones((5, 3), dtype=np.float32)), "f.")
    assert y.shape == (5, 2)
    assert np.all(np.abs(y.data) < 1.0)


# ---------------------------------------------------------------- checkpoint

def test_checkpoint_roundtrip_bitwise(tmp_path):
    st = ParamStore()
    rng = np.random.default_rng(11)
    st.add("a.weight", rng.normal(size=(4, 3)).astype(np.float32))
    st.add("a.bias", rng.normal(size=3).astype(np.float32))
    adam_step(st, {"a.weight": rng.normal(size=(4, 3)).astype(np.float32)}, lr=1e-3)
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, {"net": st}, meta={"note": "x", "stats": [1.0, 2.0]})
    stores, meta = load_checkpoint(path)
    got = stores["net"]
    assert meta["note"] == "x"
    assert got.step_count == 1
    for k in st.values:
        assert got.values[k].tobytes() == st.values[k].tobytes()
        assert got.m[k].tobytes() == st.m[k].tobytes()
        assert got.v[k].tobytes() == st.v[k].tobytes()


def test_checkpoint_corruption(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"not json at all\n\x00\x01")
    with pytest.raises(DataError):
        load_checkpoint(p)

    st = ParamStore()
    st.add("w", np.ones((8, 8), dtype=np.float32))
    good = tmp_path / "good.ckpt"
    save_checkpoint(good, {"n": st})
    blob = good.read_bytes()
    (tmp_path / "trunc.ckpt").write_bytes(blob[:-16])
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "trunc.ckpt")
