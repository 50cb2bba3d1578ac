import numpy as np
import pytest
import torch

from svhscore import nn as snn
from svhscore.nn import TrainConfig, param_digest
from svhscore.unet import (MaskSample, UNetSpec, build_unet, expected_param_count, holdout_split,
                           make_sample, predict_mask, predict_proba, train_unet)


def _ellipse_samples(n, size=32, seed=0):
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:size, 0:size]
    out = []
    for _ in range(n):
        cx, cy = rng.uniform(0.3, 0.7, 2) * size
        a, b = rng.uniform(0.15, 0.3, 2) * size
        m = ((x - cx) / a) ** 2 + ((y - cy) / b) ** 2 <= 1
        img = np.where(m, rng.uniform(0.5, 1.0, m.shape), rng.uniform(0, 0.1, m.shape))
        out.append(MaskSample(img, m))
    return out


@pytest.mark.parametrize("size", [32, 64, 128])
def test_output_shape_matches_input(size):
    net = build_unet(UNetSpec(input_size=size))
    out = net(torch.rand(2, 1, size, size))
    assert out.shape == (2, 1, size, size)
    assert ((out > 0) & (out < 1)).all()


def test_msb_fuse_width():
    blk = snn.MultiScaleBlock(3, 8, (1, 3, 5))
    assert blk(torch.zeros(1, 3, 10, 10)).shape[1] == 8
    with pytest.raises(ValueError):
        snn.MultiScaleBlock(3, 8, (2, 3))


def test_param_count_closed_form():
    for spec in (UNetSpec(), UNetSpec(input_size=32, stages=2, base_channels=4, msb_kernels=(1, 3))):
        net = build_unet(spec)
        assert snn.param_count(net) == expected_param_count(spec)
    # hand tally of one block: three branches, a 1x1 fuse
    assert snn.MultiScaleBlock.param_count(1, 8) == (8 + 8) + (72 + 8) + (200 + 8) + 24 * 8 + 8


@pytest.mark.parametrize("kw", [{"input_size": 100}, {"msb_kernels": (1, 4)}, {"stages": 0}])
def test_invalid_spec(kw):
    with pytest.raises(ValueError):
        UNetSpec(**kw)


def test_skip_connections_widen_decoders():
    net = build_unet(UNetSpec(input_size=32))
    w = net.spec.widths
    assert net.decoders[0].branches[0].in_channels == w[-1] + w[-2]


def test_predict_mask_threshold_and_resize():
    net = build_unet(UNetSpec(input_size=32))
    with torch.no_grad():
        net.head.weight.zero_()
        net.head.bias.fill_(float(np.log(0.7 / 0.3)))     # sigmoid = 0.7 everywhere
    unit = np.random.default_rng(0).random((45, 37))
    assert np.allclose(predict_proba(net, unit), 0.7, atol=1e-6)
    m = predict_mask(net, unit)
    assert m.shape == (45, 37) and m.all()
    assert not predict_mask(net, unit, thresh=0.75).any()
    with pytest.raises(ValueError):
        predict_mask(net, np.zeros((2, 3, 4)))


def test_make_sample_resizes():
    s = make_sample(np.zeros((90, 70)), np.ones((90, 70), bool), 32)
    assert s.image.shape == s.mask.shape == (32, 32) and s.mask.all()
    with pytest.raises(ValueError):
        MaskSample(np.zeros((4, 4)), np.zeros((4, 5), bool))


def test_holdout_is_ten_percent_and_disjoint():
    tr, va = holdout_split(64, seed=42)
    assert len(va) == 6 and len(tr) == 58
    assert not set(tr) & set(va)


def test_training_reduces_loss_and_is_deterministic():
    samples = _ellipse_samples(64)
    cfg = TrainConfig(learning_rate=1e-3, batch_size=16, max_epochs=10, early_stop_patience=None)
    spec = UNetSpec(input_size=32, stages=2, base_channels=4)
    a, ra = train_unet(samples, cfg, spec)
    b, rb = train_unet(samples, cfg, spec)
    assert ra.train_loss[9] < ra.train_loss[0]
    assert param_digest(a) == param_digest(b)
    assert ra.val_loss[ra.best_epoch - 1] == min(ra.val_loss)


def test_train_needs_samples():
    with pytest.raises(ValueError):
        train_unet(_ellipse_samples(1))


def test_separate_models_do_not_share_parameters():
    hand, foot = build_unet(UNetSpec(input_size=32), seed=1), build_unet(UNetSpec(input_size=32), seed=2)
    assert param_digest(hand) != param_digest(foot)
    assert not {id(p) for p in hand.parameters()} & {id(p) for p in foot.parameters()}
