import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from svhscore import nn as snn
from svhscore.joints import ScoreScale, default_scale
from svhscore.nn import TrainConfig, bce_loss, param_digest
from svhscore.ordinal import (ScorerSpec, build_scorer, build_trunk, extract_crop, ordinal_decode,
                              ordinal_encode, pretrain_trunk, score_batch, score_joint,
                              train_scorer, undersample)


@pytest.mark.parametrize("k,c,v", [(0, 3, [1, 0, 0]), (2, 3, [1, 1, 1]), (3, 5, [1, 1, 1, 1, 0])])
def test_encode_examples(k, c, v):
    assert ordinal_encode(k, c).tolist() == v


@pytest.mark.parametrize("k,c", [(-1, 3), (3, 3)])
def test_encode_range(k, c):
    with pytest.raises(ValueError):
        ordinal_encode(k, c)


def test_decode_examples():
    assert ordinal_decode([0.9, 0.8, 0.2]) == 1
    assert ordinal_decode([0.9, 0.2, 0.8]) == 0
    assert ordinal_decode([0.1, 0.9, 0.9]) == 0
    assert ordinal_decode([0.5, 0.5]) == 0


def test_roundtrip_all():
    for c in range(2, 17):
        for k in range(c):
            assert ordinal_decode(ordinal_encode(k, c)) == k


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=16), st.data())
def test_decode_monotone(v, data):
    v = np.array(v)
    bump = np.array(data.draw(st.lists(st.floats(0, 1), min_size=len(v), max_size=len(v))))
    assert ordinal_decode(np.minimum(v + bump, 1.0)) >= ordinal_decode(v)


def test_ordinal_bce_grows_with_class_distance():
    C = 6
    for kstar in range(C):
        pred = np.clip(ordinal_encode(kstar, C), 0.05, 0.95)
        losses = [bce_loss(pred, ordinal_encode(k, C))[0] for k in range(C)]
        by_dist = sorted(range(C), key=lambda k: abs(k - kstar))
        for a, b in zip(by_dist, by_dist[1:]):
            if abs(a - kstar) < abs(b - kstar):
                assert losses[a] <= losses[b]


def _labels(counts):
    return np.concatenate([np.full(n, c) for c, n in counts.items()])


def test_undersample_counts():
    labels = _labels({0: 1000, 1: 120, 2: 40})
    items = np.arange(len(labels))
    it, lab = undersample(items, labels, seed=42)
    assert dict(zip(*np.unique(lab, return_counts=True))) == {0: 120, 1: 120, 2: 40}
    assert np.array_equal(it[lab != 0], items[labels != 0])
    it2, _ = undersample(items, labels, seed=42)
    assert np.array_equal(it, it2)
    it3, _ = undersample(items, labels, seed=7)
    assert not np.array_equal(it, it3)


def test_undersample_no_reduction_and_single_class():
    labels = _labels({0: 50, 1: 120})
    it, lab = undersample(list(range(170)), labels)
    assert it == list(range(170))
    with pytest.raises(ValueError):
        undersample([1, 2, 3], [0, 0, 0])


@settings(max_examples=40, deadline=None)
@given(st.dictionaries(st.integers(0, 5), st.integers(1, 60), min_size=2))
def test_undersample_property(counts):
    labels = _labels(counts)
    rng = np.random.default_rng(0)
    labels = labels[rng.permutation(len(labels))]
    items = np.arange(len(labels))
    it, lab = undersample(items, labels)
    others = max(n for c, n in counts.items() if c != 0)
    zero_in = counts.get(0, 0)
    assert (lab == 0).sum() == min(zero_in, others)
    assert np.array_equal(it[lab != 0], items[labels != 0])
    assert set(it[lab == 0]) <= set(items[labels == 0])


def test_extract_crop_exact_pixels_without_margin(rng):
    img = rng.integers(0, 256, (60, 50), dtype=np.uint8)
    crop = extract_crop(img, (10, 20, 26, 36), size=16, margin=0.0)
    assert np.allclose(crop, img[20:36, 10:26] / 255.0)
    edge = extract_crop(img, (-8, -8, 8, 8), size=16, margin=0.0)
    assert not edge[:8, :8].any()


def test_scorer_shapes_and_trainable_count():
    spec = ScorerSpec()
    scale = default_scale("narrowing", "hand")
    net = build_scorer(spec, scale, build_trunk(spec))
    assert net(torch.zeros(1, 1, 64, 64)).shape == (1, 5)
    assert snn.param_count(net, trainable_only=True) == spec.head_param_count(5)
    assert snn.param_count(net.trunk, trainable_only=True) == 0
    assert spec.feature_size == 16 * 8 * 8
    with pytest.raises(ValueError):
        build_scorer(spec, scale, None)


def _bar_crops(n, C, seed=0):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, C, n)
    crops = rng.uniform(0, 0.1, (n, 64, 64)).astype(np.float32)
    for i, s in enumerate(scores):
        crops[i, :, 10:10 + 8 * (s + 1)] += 0.8
    return crops, scores


def test_train_scorer_contracts():
    spec = ScorerSpec()
    scale = ScoreScale("erosion", "hand", 4)
    crops, scores = _bar_crops(160, 4)
    trunk, _ = pretrain_trunk(crops, scores % 2, 2, spec,
                              TrainConfig(1e-3, 32, 2, None))
    assert all(not p.requires_grad for p in trunk.parameters())
    before = param_digest(trunk)
    cfg = TrainConfig(learning_rate=1e-3, batch_size=32, max_epochs=10, early_stop_patience=None)
    a = build_scorer(spec, scale, trunk, seed=1)
    res = train_scorer(a, crops, scores, cfg)
    assert res.train_loss[9] < res.train_loss[0]
    assert param_digest(a.trunk) == before
    b = build_scorer(spec, scale, trunk, seed=1)
    train_scorer(b, crops, scores, cfg)
    assert param_digest(a.head) == param_digest(b.head)

    k, v = score_joint(a, crops[0])
    assert v.shape == (4,) and k == ordinal_decode(v)
    ks, vs = score_batch(a, crops[:5])
    assert [ordinal_decode(r) for r in vs] == ks.tolist()
    with pytest.raises(ValueError):
        score_joint(a, np.zeros((32, 32)))
    with pytest.raises(ValueError):
        train_scorer(a, crops[:0], scores[:0], cfg)
    with pytest.raises(ValueError):
        train_scorer(a, crops, scores + 4, cfg)


def test_spec_roundtrip():
    spec = ScorerSpec(hidden=(16,))
    assert ScorerSpec.from_dict(spec.to_dict()) == spec
