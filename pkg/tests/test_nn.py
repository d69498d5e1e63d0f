import dataclasses
import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dwl.config import NetConfig, get_profile
from dwl.nn import (MLP, Adam, GRUCell, Linear, Tensor, build_network, concat, elu, maximum,
                    minimum, no_grad, param_count, stack, where)
from dwl.nn.checkpoint import CheckpointError, load_into, read_checkpoint, save_checkpoint

import gradcheck
from oracles import central_difference


def test_elu_identity_region():
    assert elu(Tensor([0.0, 1.0])).data.tolist() == [0.0, 1.0]


def test_elu_saturates():
    assert elu(Tensor([-1e6])).data[0] == pytest.approx(-1.0)
    assert elu(Tensor([-np.inf])).data[0] == -1.0


def test_gru_zero_weights_zero_state():
    cell = GRUCell(4, 3)
    cell.init(None, "zeros")
    out = cell(Tensor(np.random.default_rng(0).normal(size=(2, 4))), Tensor(np.zeros((2, 3))))
    assert np.all(out.data == 0.0)


def test_gru_shape_mismatch():
    cell = GRUCell(4, 3)
    with pytest.raises(ValueError):
        cell(Tensor(np.zeros((1, 5))), Tensor(np.zeros((1, 3))))


def test_affine_shape_mismatch():
    with pytest.raises(ValueError):
        Linear(3, 2)(Tensor(np.zeros((1, 4))))


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_gru_hidden_bounded(seed, scale):
    rng = np.random.default_rng(seed)
    cell = GRUCell(3, 4)
    cell.init(rng, gain=scale)
    h = Tensor(np.zeros((2, 4)))
    for _ in range(10):
        h = cell(Tensor(rng.normal(size=(2, 3)) * scale), h)
        assert np.all(np.abs(h.data) <= 1.0)
        assert np.all(np.isfinite(h.data))


def test_backward_non_scalar_raises():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).backward()


def test_linear_map_gradient():
    x = np.array([1.0, 2.0, 3.0])
    layer = Linear(3, 2, bias=False)
    layer.weight.data[...] = 0.5
    layer(Tensor(x)).sum().backward()
    assert np.array_equal(layer.weight.grad, np.outer(x, np.ones(2)))


def test_zero_weight_network_zero_input_gradient():
    mlp = MLP([3, 4, 2])
    mlp.init(None, "zeros")
    x = Tensor(np.ones((1, 3)), requires_grad=True)
    mlp(x).sum().backward()
    assert np.all(x.grad == 0.0)


def test_gradients_accumulate():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    (x * x).sum().backward()
    (x * x).sum().backward()
    assert x.grad.tolist() == [4.0, -8.0]


def test_shared_node_gradient():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * x
    (y + y * y).sum().backward()
    assert x.grad[0] == pytest.approx(2 * 3 + 4 * 27)


def test_no_grad_blocks_graph():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = (x * 3).sum()
    assert not y.requires_grad


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div", "pow", "matmul", "getitem", "sum",
                                "mean", "exp", "log", "tanh", "sigmoid", "abs", "sqrt", "clip",
                                "minimum", "maximum", "concat", "stack", "where", "reshape",
                                "transpose", "broadcast"])
def test_elementary_op_gradients(op):
    rng = np.random.default_rng(zlib.crc32(op.encode()))
    a = Tensor(rng.uniform(0.5, 2.0, (3, 4)))
    b = Tensor(rng.uniform(0.5, 2.0, (3, 4)))
    m = Tensor(rng.normal(size=(4, 2)))
    row = Tensor(rng.normal(size=4))
    w = rng.normal(size=(3, 4))
    cond = rng.uniform(size=(3, 4)) > 0.5
    cases = {
        "add": (lambda: ((a + b) * w).sum(), [a, b]),
        "sub": (lambda: ((a - b) * w).sum(), [a, b]),
        "mul": (lambda: ((a * b) * w).sum(), [a, b]),
        "div": (lambda: ((a / b) * w).sum(), [a, b]),
        "pow": (lambda: ((a ** 3) * w).sum(), [a]),
        "matmul": (lambda: (a @ m).sum(), [a, m]),
        "getitem": (lambda: (a[1:, ::2] * w[1:, ::2]).sum(), [a]),
        "sum": (lambda: (a.sum(axis=0) * w[0]).sum(), [a]),
        "mean": (lambda: (a.mean(axis=1, keepdims=True) * w[:, :1]).sum(), [a]),
        "exp": (lambda: (a.exp() * w).sum(), [a]),
        "log": (lambda: (a.log() * w).sum(), [a]),
        "tanh": (lambda: (a.tanh() * w).sum(), [a]),
        "sigmoid": (lambda: (a.sigmoid() * w).sum(), [a]),
        "abs": (lambda: ((a - 1.25).abs() * w).sum(), [a]),
        "sqrt": (lambda: (a.sqrt() * w).sum(), [a]),
        "clip": (lambda: (a.clip(0.8, 1.6) * w).sum(), [a]),
        "minimum": (lambda: (minimum(a, b) * w).sum(), [a, b]),
        "maximum": (lambda: (maximum(a, b) * w).sum(), [a, b]),
        "concat": (lambda: (concat([a, b], axis=0) * np.concatenate([w, w])).sum(), [a, b]),
        "stack": (lambda: (stack([a, b]) * np.stack([w, -w])).sum(), [a, b]),
        "where": (lambda: (where(cond, a, b) * w).sum(), [a, b]),
        "reshape": (lambda: (a.reshape(4, 3) * w.reshape(4, 3)).sum(), [a]),
        "transpose": (lambda: (a.T * w.T).sum(), [a]),
        "broadcast": (lambda: ((a + row) * w).sum(), [a, row]),
    }
    loss, tensors = cases[op]
    assert gradcheck.check(loss, tensors) <= gradcheck.TOLERANCE


@pytest.mark.parametrize("name", sorted(gradcheck.LAYER_CASES))
def test_layer_gradients(name):
    err = gradcheck.check(*gradcheck.LAYER_CASES[name](np.random.default_rng(123)))
    assert err <= gradcheck.TOLERANCE


def test_ppo_baseline_path_gradients():
    rng = np.random.default_rng(5)
    net = gradcheck._network(rng, "ppo")
    obs = rng.normal(size=(2, 3, gradcheck.OBS))
    target = rng.normal(size=(3, gradcheck.STATE))

    def loss():
        h = Tensor(np.zeros((3, net.hidden_dim)))
        for t in range(2):
            z, h = net.encode(Tensor(obs[t]), h)
        return ((net.action_mean(z) ** 2).sum() + ((net.decode(z) - target) ** 2).sum())

    assert gradcheck.check(loss, net.parameters()) <= gradcheck.TOLERANCE


def test_central_difference_oracle_on_quadratic():
    x = np.array([1.0, -2.0, 0.5])
    g = central_difference(lambda: float(np.sum(x ** 2)), x)
    assert np.allclose(g, 2 * x, atol=1e-8)


def test_param_count_single_affine():
    assert param_count(Linear(2, 3)) == 9


def test_paper_actor_counts_in_band():
    cfg = get_profile("paper")
    dwl = build_network(47, 184, 12, cfg.net)
    ppo = build_network(47, 184, 12, dataclasses.replace(cfg.net, variant="ppo"))
    assert dwl.actor_param_count() == 308000
    assert ppo.actor_param_count() == 334488


def test_init_deterministic():
    cfg = NetConfig(gru_hidden=8, encoder_hidden=[8], latent_dim=4, decoder_hidden=[8],
                    actor_hidden=[8], critic_hidden=[8])
    a = build_network(5, 9, 3, cfg, np.random.default_rng(1)).state_dict()
    b = build_network(5, 9, 3, cfg, np.random.default_rng(1)).state_dict()
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_init_fan_in_bound():
    layer = Linear(256, 64)
    layer.init(np.random.default_rng(0))
    bound = 1.0 / math.sqrt(256)
    assert np.max(np.abs(layer.weight.data)) <= bound
    assert np.max(np.abs(layer.weight.data)) > 0.9 * bound


def test_zero_init():
    net = build_network(5, 9, 3, gradcheck.SMALL_NET, scheme="zeros")
    assert all(np.all(p.data == 0.0) for p in net.parameters())


def test_zero_params_latent_is_bias_and_decode_is_bias():
    net = build_network(5, 9, 3, gradcheck.SMALL_NET, scheme="zeros")
    net.encoder_head.layers[-1].bias.data[...] = [1.0, 2.0, 3.0, 4.0]
    net.decoder.layers[-1].bias.data[...] = np.arange(9.0)
    z, _ = net.encode(np.random.default_rng(0).normal(size=(2, 5)), np.zeros((2, 7)))
    assert np.array_equal(z.data, np.tile([1.0, 2.0, 3.0, 4.0], (2, 1)))
    zero = build_network(5, 9, 3, gradcheck.SMALL_NET, scheme="zeros")
    zero.decoder.layers[-1].bias.data[...] = np.arange(9.0)
    assert np.array_equal(zero.decode(Tensor(np.ones((1, 4)))).data[0], np.arange(9.0))


def test_encode_rejects_wrong_obs_dim():
    net = build_network(5, 9, 3, gradcheck.SMALL_NET)
    with pytest.raises(ValueError):
        net.encode(np.zeros((1, 6)), np.zeros((1, 7)))


def test_paper_latent_and_decoder_dims():
    net = build_network(47, 184, 12, get_profile("paper").net)
    z, _ = net.encode(np.zeros((1, 47)), np.zeros((1, 256)))
    assert z.shape == (1, 24)
    assert net.decode(z).shape == (1, 184)


def test_forward_deterministic():
    net = build_network(5, 9, 3, gradcheck.SMALL_NET, np.random.default_rng(3))
    obs = np.random.default_rng(4).normal(size=(6, 2, 5))

    def run():
        h, out = np.zeros((2, 7)), []
        for t in range(6):
            z, hn = net.encode(obs[t], h)
            h = hn.data
            out.append(z.data)
        return np.array(out)

    assert np.array_equal(run(), run())


def _graph_leaves(t):
    seen, stack_, leaves = set(), [t], []
    while stack_:
        n = stack_.pop()
        if id(n) in seen:
            continue
        seen.add(id(n))
        if not n._parents:
            leaves.append(n)
        stack_.extend(n._parents)
    return leaves


@pytest.mark.parametrize("variant", ["dwl", "ppo"])
def test_actor_graph_reads_only_observations(variant):
    net = build_network(5, 9, 3, dataclasses.replace(gradcheck.SMALL_NET, variant=variant))
    obs = Tensor(np.ones((2, 5)), requires_grad=True)
    h0 = Tensor(np.zeros((2, 7)), requires_grad=True)
    z, _ = net.encode(obs, h0)
    leaves = {id(x) for x in _graph_leaves(net.action_mean(z))}
    allowed = {id(obs), id(h0)} | {id(p) for m in net.actor_modules() for p in m.parameters()}
    assert leaves <= allowed
    forbidden = {id(p) for p in net.critic.parameters()}
    assert not leaves & forbidden


def test_adam_minimises_quadratic():
    x = Tensor(np.array([3.0, -2.0]), requires_grad=True)
    opt = Adam([x], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        (x * x).sum().backward()
        opt.step()
    assert np.all(np.abs(x.data) < 1e-2)


def test_adam_clips_global_norm():
    x = Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([x], lr=0.1, max_grad_norm=1.0)
    (x * 100.0).sum().backward()
    assert opt.step() == pytest.approx(100.0)
    assert x.data[0] == pytest.approx(0.9, abs=1e-6)


def test_checkpoint_round_trip(tmp_path):
    net = build_network(5, 9, 3, gradcheck.SMALL_NET, np.random.default_rng(8))
    path = save_checkpoint(tmp_path / "c.npz", net, {"k": 1}, {"seed": 3})
    meta, params = read_checkpoint(path)
    assert meta["config"] == {"k": 1} and meta["extra"] == {"seed": 3}
    other = build_network(5, 9, 3, gradcheck.SMALL_NET, np.random.default_rng(9))
    load_into(other, params)
    assert all(np.array_equal(a, b) for a, b in zip(net.state_dict().values(),
                                                    other.state_dict().values()))


def test_checkpoint_shape_mismatch(tmp_path):
    net = build_network(5, 9, 3, gradcheck.SMALL_NET)
    path = save_checkpoint(tmp_path / "c.npz", net, {})
    _, params = read_checkpoint(path)
    bigger = build_network(6, 9, 3, gradcheck.SMALL_NET)
    with pytest.raises(CheckpointError, match="gru.w_ih"):
        load_into(bigger, params)


def test_checkpoint_missing_meta(tmp_path):
    np.savez(tmp_path / "x.npz", a=np.zeros(2))
    with pytest.raises(CheckpointError):
        read_checkpoint(tmp_path / "x.npz")
