import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from svhscore.detection import (BBox, Detection, DetectionSample, DetectorSpec, TRAINED_DETECTOR,
                                anchor_ranking, best_anchor, build_detector, build_targets, decode,
                                detect_joints, encode_box, fit_priors, iou, make_detection_sample,
                                nms, select_detections, shift_sample, step_schedule,
                                train_detector)
from svhscore.imaging import LimbKind
from svhscore.joints import JointClass
from svhscore.nn import TrainConfig, param_digest

PIP, MCP = JointClass.PIP, JointClass.MCP


def _det(cx, cy, conf, cls=MCP, w=0.05, h=0.05):
    return Detection(BBox(cx, cy, w, h), cls, conf)


def test_default_head_is_8x8x21():
    spec = DetectorSpec()
    assert spec.head_channels == 21 and spec.per_anchor == 7
    out = build_detector(spec)(torch.zeros(1, 1, 128, 128))
    assert out.shape == (1, 8, 8, 21)


def test_trained_geometry():
    out = build_detector(TRAINED_DETECTOR)(torch.zeros(2, 1, 128, 128))
    assert out.shape == (2, 16, 16, 21)


@pytest.mark.parametrize("kw", [{"grid": 0}, {"input_size": 100}, {"priors": ((0.1, 0.1),)},
                                {"priors": ((0.1, 0.1), (0.1, 1.5), (0.2, 0.2))}])
def test_invalid_spec(kw):
    with pytest.raises(ValueError):
        DetectorSpec(**kw)


def test_zero_logits_decode_to_cell_centres():
    spec = DetectorSpec()
    dec = decode(np.zeros((8, 8, 21)), spec)
    assert np.allclose(dec.confidence, 0.25)
    assert np.allclose(dec.cx[:, 3, 0], (3 + 0.5) / 8)
    assert np.allclose(dec.cy[5, :, 2], (5 + 0.5) / 8)
    assert np.allclose(dec.w[..., 1], spec.priors[1][0])


def test_encode_then_decode_roundtrip():
    spec = DetectorSpec()
    box = BBox(0.4321, 0.777, 0.09, 0.13)
    for a in range(3):
        row, col, t = encode_box(box, a, spec)
        raw = np.zeros((8, 8, 3, 7))
        raw[row, col, a, :4] = t
        dec = decode(raw.reshape(8, 8, 21), spec)
        got = (dec.cx[row, col, a], dec.cy[row, col, a], dec.w[row, col, a], dec.h[row, col, a])
        assert np.allclose(got, (box.cx, box.cy, box.w, box.h), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), scale=st.floats(0.1, 20))
def test_decoded_boxes_are_valid(seed, scale):
    raw = np.random.default_rng(seed).normal(0, scale, (8, 8, 21))
    dec = decode(raw, DetectorSpec())
    assert ((dec.cx >= 0) & (dec.cx <= 1) & (dec.cy >= 0) & (dec.cy <= 1)).all()
    assert ((dec.w > 0) & (dec.w <= 1) & (dec.h > 0) & (dec.h <= 1)).all()
    assert ((dec.confidence >= 0) & (dec.confidence <= 1)).all()


def test_bbox_validation():
    with pytest.raises(ValueError):
        BBox(1.2, 0.5, 0.1, 0.1)
    with pytest.raises(ValueError):
        BBox(0.5, 0.5, 0.0, 0.1)


def test_iou_hand_values():
    a = BBox(0.5, 0.5, 0.2, 0.2)
    assert iou(a, a) == pytest.approx(1.0)
    assert iou(a, BBox(0.6, 0.5, 0.2, 0.2)) == pytest.approx(0.02 / 0.06)
    assert iou(a, BBox(0.9, 0.9, 0.1, 0.1)) == 0.0


def test_nms_keeps_stronger_of_overlapping_pair():
    a = _det(0.5, 0.5, 0.95, w=0.2, h=0.2)
    b = _det(0.505, 0.5, 0.80, w=0.2, h=0.2)
    assert iou(a.bbox, b.bbox) > 0.9
    assert nms([b, a]) == [a]
    # a different class is not suppressed
    c = Detection(b.bbox, PIP, 0.8)
    assert nms([a, c]) == [a, c]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0.1, 0.9), st.floats(0.1, 0.9), st.floats(0.51, 1.0),
                          st.booleans()), min_size=1, max_size=25))
def test_nms_leaves_no_overlapping_same_class_pair(rows):
    dets = [_det(x, y, c, PIP if p else MCP, 0.15, 0.15) for x, y, c, p in rows]
    kept = nms(dets)
    for i, a in enumerate(kept):
        for b in kept[i + 1:]:
            assert a.joint_class != b.joint_class or iou(a.bbox, b.bbox) <= 0.45


def test_select_top_k_and_threshold():
    confs = [0.99, 0.98, 0.97, 0.96, 0.95, 0.94, 0.93, 0.92, 0.91, 0.90, 0.89, 0.88]
    dets = [_det(0.04 + 0.08 * i, 0.5, c) for i, c in enumerate(confs)]
    out = select_detections(dets, LimbKind.HandRight)
    assert len(out) == 10 and sorted(d.confidence for d in out) == sorted(confs[:10])
    feet = select_detections(dets, LimbKind.FootLeft)
    assert [d.confidence for d in feet] == confs[:6]
    low = select_detections([_det(0.5, 0.5, 0.49), _det(0.2, 0.2, 0.5)], LimbKind.HandLeft)
    assert low == []


def test_detect_joints_respects_threshold_and_k():
    net = build_detector(DetectorSpec(), seed=3)
    with torch.no_grad():
        last = net.body[-1]
        last.weight.zero_()
        last.bias.fill_(3.0)        # every anchor confident
    dets = detect_joints(net, np.zeros((64, 64)), LimbKind.HandRight)
    assert 0 < len(dets) <= 10 and all(d.confidence > 0.5 for d in dets)
    with torch.no_grad():
        last.bias.fill_(-3.0)
    assert detect_joints(net, np.zeros((64, 64)), LimbKind.HandRight) == []


def test_anchor_matching_by_shape_iou():
    spec = DetectorSpec(priors=((0.05, 0.05), (0.1, 0.1), (0.2, 0.2)))
    assert best_anchor(0.11, 0.09, spec) == 1
    assert anchor_ranking(0.3, 0.3, spec)[0] == 2


def test_targets_and_collision():
    spec = DetectorSpec(priors=((0.05, 0.05), (0.1, 0.1), (0.2, 0.2)))
    s = DetectionSample(np.zeros((128, 128)), [(BBox(0.30, 0.30, 0.1, 0.1), 1),
                                               (BBox(0.31, 0.31, 0.1, 0.1), 0)])
    tbox, tobj, tcls = build_targets([s], spec)
    assert tobj.sum() == 2
    assert tobj[0, 2, 2, 1] == 1 and tcls[0, 2, 2, 1].tolist() == [0, 1]
    assert tcls[0, 2, 2].sum() == 2
    with pytest.raises(ValueError):
        build_targets([DetectionSample(np.zeros((128, 128)), [(BBox(0.3, 0.3, 0.1, 0.1), 2)])], spec)


def test_make_sample_validates():
    with pytest.raises(TypeError):
        make_detection_sample(np.zeros((10, 10)), [((0.1, 0.1, 0.1, 0.1), 0)], 16)
    with pytest.raises(ValueError):
        make_detection_sample(np.zeros((10, 10)), [(BBox(0.5, 0.5, 0.1, 0.1), None)], 16)


def test_shift_sample_moves_image_and_boxes():
    img = np.zeros((16, 16))
    img[4, 4] = 1
    s = DetectionSample(img, [(BBox(4.5 / 16, 4.5 / 16, 0.1, 0.1), 0), (BBox(0.95, 0.5, 0.1, 0.1), 1)])
    moved = shift_sample(s, 2, 3)
    assert moved.image[6, 7] == 1 and moved.image.sum() == 1
    assert len(moved.boxes) == 1 and moved.boxes[0][0].cx == pytest.approx(7.5 / 16)


def test_step_schedule():
    lr = step_schedule(1e-3, 100)
    assert lr(0) == 1e-3 and lr(79) == 1e-3
    assert lr(80) == pytest.approx(1e-4) and lr(90) == pytest.approx(1e-5)


def test_fit_priors_groups_by_aspect():
    boxes = [BBox(0.5, 0.5, w, h) for w, h in [(0.1, 0.2), (0.1, 0.21), (0.1, 0.1), (0.1, 0.1),
                                                (0.2, 0.1), (0.2, 0.1)]]
    pri = fit_priors(boxes)
    assert pri[0] == (0.1, 0.205) and pri[2] == (0.2, 0.1)
    with pytest.raises(ValueError):
        fit_priors(boxes[:2])


def _blob_samples(n, seed=0, size=64):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        img = np.zeros((size, size))
        boxes = []
        for c in (0, 1):
            cx, cy = rng.uniform(0.2, 0.8, 2)
            x0, y0 = int((cx - 0.06) * size), int((cy - 0.06) * size)
            img[y0:y0 + 8, x0:x0 + 8] = 1.0 if c else 0.5
            boxes.append((BBox((x0 + 4) / size, (y0 + 4) / size, 0.125, 0.125), c))
        out.append(DetectionSample(img, boxes))
    return out


SMALL = DetectorSpec(grid=8, widths=(4, 8, 8), head_width=16, input_size=64,
                     priors=((0.1, 0.1), (0.125, 0.125), (0.15, 0.15)))


def test_training_loss_falls_and_is_deterministic():
    samples = _blob_samples(64)
    cfg = TrainConfig(learning_rate=1e-3, batch_size=16, max_epochs=55, early_stop_patience=None)
    hist = []
    net, _ = train_detector(samples, cfg, SMALL, history=hist)
    assert len(hist) >= 200
    assert np.mean(hist[195:200]) < np.mean(hist[5:10])
    short = TrainConfig(learning_rate=1e-3, batch_size=16, max_epochs=2, early_stop_patience=None)
    a, _ = train_detector(samples, short, SMALL, max_shift=2)
    b, _ = train_detector(samples, short, SMALL, max_shift=2)
    assert param_digest(a) == param_digest(b)


def test_train_rejects_empty_and_wrong_size():
    with pytest.raises(ValueError):
        train_detector([], spec=SMALL)
    with pytest.raises(ValueError):
        train_detector(_blob_samples(2, size=32), spec=SMALL)
