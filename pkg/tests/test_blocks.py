import numpy as np
import pytest

import oracles
from gffmgan import layers as L
from gffmgan.autograd import Tensor
from gffmgan.blocks import DenseBlockParams, ResBlockParams, dense_block, disc_res_block, gen_res_block
from gffmgan.errors import ConfigurationError

F64 = np.float64


def _randomize(obj, rng, scale=0.3):
    for p in L.named_parameters(obj):
        if not np.any(p.data):
            p.data[...] = scale * rng.standard_normal(p.shape)


def _zero_convs(p):
    for conv in (p.conv1, p.conv2):
        conv.weight.data[...] = 0.0
        conv.bias.data[...] = 0.0


def _conv(x, conv):
    return oracles.conv2d_loops(x, conv.weight.data, conv.bias.data, 1, conv.pad)


def _relu(x):
    return np.maximum(x, 0)


def _up(x):
    return x.repeat(2, axis=2).repeat(2, axis=3)


def _cbn(x, norm, cond):
    xhat = oracles.batch_norm_direct(x, np.ones(x.shape[1]), np.zeros(x.shape[1]))
    gain = 1 + cond @ norm.gain_proj.data.T
    bias = cond @ norm.bias_proj.data.T
    return xhat * gain[:, :, None, None] + bias[:, :, None, None]


# -- generator block ----------------------------------------------------------------------------
def test_gen_block_residual_identity(rng):
    p = ResBlockParams.create_gen(4, 4, "b", rng, up=False, dtype=F64)
    assert p.skip_conv is None
    _zero_convs(p)
    x = rng.standard_normal((2, 4, 4, 4))
    np.testing.assert_array_equal(gen_res_block(x, None, p).data, x)


def test_gen_block_up_shape(rng):
    p = ResBlockParams.create_gen(256, 256, "b", rng, up=True)
    assert gen_res_block(rng.standard_normal((2, 256, 4, 4)).astype(np.float32), None, p).shape == (2, 256, 8, 8)


@pytest.mark.parametrize("cond_dim,in_ch,out_ch", [(0, 4, 3), (5, 3, 3)])
def test_gen_block_compositional_oracle(rng, cond_dim, in_ch, out_ch):
    p = ResBlockParams.create_gen(in_ch, out_ch, "b", rng, True, cond_dim, dtype=F64)
    _randomize(p, rng)
    x = rng.standard_normal((3, in_ch, 3, 3))
    cond = rng.standard_normal((3, cond_dim)) if cond_dim else None
    out = gen_res_block(x, cond, p).data

    def norm(h, n):
        if cond_dim:
            return _cbn(h, n, cond)
        return oracles.batch_norm_direct(h, n.state.gain.data, n.state.bias.data)

    h = _conv(_up(_relu(norm(x, p.bn1))), p.conv1)
    h = _conv(_relu(norm(h, p.bn2)), p.conv2)
    skip = _up(x) if p.skip_conv is None else _conv(_up(x), p.skip_conv)
    np.testing.assert_allclose(out, h + skip, atol=1e-11)


def test_gen_block_cond_mismatch(rng):
    plain = ResBlockParams.create_gen(3, 3, "plain", rng, dtype=F64)
    with pytest.raises(ConfigurationError, match="plain"):
        gen_res_block(rng.standard_normal((2, 3, 2, 2)), np.zeros((2, 4)), plain)
    cond = ResBlockParams.create_gen(3, 3, "cond", rng, cond_dim=4, dtype=F64)
    with pytest.raises(ConfigurationError, match="cond"):
        gen_res_block(rng.standard_normal((2, 3, 2, 2)), None, cond)


# -- discriminator block ------------------------------------------------------------------------------
def test_disc_block_residual_identity(rng):
    p = ResBlockParams.create_disc(3, 3, "d", rng, down=False, spectral=False, dtype=F64)
    assert p.skip_conv is None
    _zero_convs(p)
    x = rng.standard_normal((2, 3, 4, 4))
    np.testing.assert_array_equal(disc_res_block(x, p).data, x)


def test_disc_block_table_shape(rng):
    p = ResBlockParams.create_disc(3, 128, "d", rng, down=True)
    out = disc_res_block(rng.standard_normal((2, 3, 32, 32)).astype(np.float32), p, first=True)
    assert out.shape == (2, 128, 16, 16)


@pytest.mark.parametrize("first,down", [(True, True), (False, True), (False, False)])
def test_disc_block_compositional_oracle(rng, first, down):
    p = ResBlockParams.create_disc(3, 4 if down else 3, "d", rng, down=down, spectral=True, dtype=F64)
    _randomize(p, rng)
    x = rng.standard_normal((2, 3, 4, 4))
    # snapshot the power-iteration vectors: the forward advances them once
    states = {id(c): c.weight.sn_state.copy() for c in (p.conv1, p.conv2, p.skip_conv) if c is not None}
    out = disc_res_block(x, p, first=first).data

    def conv(h, c):
        w = c.weight.data.reshape(c.weight.shape[0], -1)
        sigma, _, _ = L.power_iteration(w, states[id(c)], 1)
        return oracles.conv2d_loops(h, c.weight.data / sigma, c.bias.data, 1, c.pad)

    h = x if first else _relu(x)
    h = conv(_relu(conv(h, p.conv1)), p.conv2)
    if down:
        h = oracles.avg_pool_loops(h)
    skip = x
    if first:
        skip = conv(oracles.avg_pool_loops(skip) if down else skip, p.skip_conv)
    elif p.skip_conv is not None:
        skip = conv(skip, p.skip_conv)
        skip = oracles.avg_pool_loops(skip) if down else skip
    np.testing.assert_allclose(out, h + skip, atol=1e-11)


def test_disc_block_odd_size(rng):
    p = ResBlockParams.create_disc(3, 4, "d", rng, down=True, dtype=F64)
    with pytest.raises(ConfigurationError, match="odd"):
        disc_res_block(rng.standard_normal((1, 3, 5, 5)), p)


# -- dense block --------------------------------------------------------------------------------------
def test_dense_stage_channel_arithmetic(rng):
    p = DenseBlockParams.create(64, 64, "dense", rng, n_stages=3, growth=32)
    assert [conv.in_channels for _, conv in p.stages] == [64, 96, 128]
    assert p.transition.in_channels == 160


def test_dense_one_stage_zero_weights(rng):
    p = DenseBlockParams.create(3, 4, "dense", rng, n_stages=1, growth=2, up=False, dtype=F64)
    _, conv = p.stages[0]
    conv.weight.data[...] = 0.0
    x = rng.standard_normal((2, 3, 4, 4))
    expected = _conv(np.concatenate([x, np.zeros((2, 2, 4, 4))], axis=1), p.transition)
    np.testing.assert_allclose(dense_block(x, p).data, expected, atol=1e-12)


def test_dense_compositional_oracle(rng):
    p = DenseBlockParams.create(3, 4, "dense", rng, n_stages=3, growth=2, up=True, cond_dim=3, dtype=F64)
    _randomize(p, rng)
    x = rng.standard_normal((2, 3, 2, 2))
    cond = rng.standard_normal((2, 3))
    feats = [_up(x)]
    for norm, conv in p.stages:
        feats.append(_conv(_relu(_cbn(np.concatenate(feats, axis=1), norm, cond)), conv))
    expected = _conv(np.concatenate(feats, axis=1), p.transition)
    np.testing.assert_allclose(dense_block(x, p, cond).data, expected, atol=1e-11)


def test_dense_bookkeeping_error_names_stage(rng):
    p = DenseBlockParams.create(3, 4, "dense", rng, n_stages=2, growth=2, dtype=F64)
    norm, _ = p.stages[1]
    p.stages[1] = (norm, L.Conv.create(4, 2, 3, "bad", rng, dtype=F64))
    with pytest.raises(ConfigurationError, match="stage 1"):
        dense_block(rng.standard_normal((2, 3, 2, 2)), p)
    with pytest.raises(ConfigurationError):
        DenseBlockParams.create(3, 4, "dense", rng, n_stages=0)


# -- gradients -------------------------------------------------------------------------------------------
def test_block_gradients(rng):
    p = ResBlockParams.create_gen(3, 2, "b", rng, True, 4, dtype=F64)
    _randomize(p, rng)
    x = Tensor(rng.standard_normal((2, 3, 2, 2)), requires_grad=True)
    cond = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
    w = rng.standard_normal((2, 2, 4, 4))
    res = L.grad_check(lambda: (gen_res_block(x, cond, p) * w).sum(), L.named_parameters(p) + [x, cond], max_coords=8)
    assert res.max_rel_error <= 1e-4
