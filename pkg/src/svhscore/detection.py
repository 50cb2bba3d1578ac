"""Single-stage grid detector for joints, box coding and NMS."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import nn as snn
from .imaging import LimbKind, resize_bilinear
from .joints import DETECTOR_CLASSES, JointClass, joints_per_limb
from .nn.training import FitResult, TrainConfig, fit

CONF_THRESHOLD = 0.5
NMS_IOU = 0.45


@dataclass(frozen=True)
class BBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (0 <= self.cx <= 1 and 0 <= self.cy <= 1 and 0 < self.w <= 1 and 0 < self.h <= 1):
            raise ValueError(f"box outside the unit square: {self}")

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    joint_class: JointClass
    confidence: float

    @property
    def cx(self) -> float:
        return self.bbox.cx

    @property
    def cy(self) -> float:
        return self.bbox.cy


def iou(a: BBox, b: BBox) -> float:
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


# hand/foot joint boxes on the preprocessed synthetic limbs, (w, h) normalized
DEFAULT_ANCHORS = ((0.075, 0.115), (0.085, 0.12), (0.10, 0.135))


@dataclass(frozen=True)
class DetectorSpec:
    grid: int = 8
    anchors: int = 3
    classes: int = 2
    input_size: int = 128
    priors: tuple[tuple[float, float], ...] = DEFAULT_ANCHORS
    widths: tuple[int, ...] = (8, 16, 32, 32)
    head_width: int = 64

    def __post_init__(self):
        if self.grid < 1 or self.anchors < 1 or self.classes < 1:
            raise ValueError("grid, anchors and classes must be >= 1")
        if len(self.priors) != self.anchors:
            raise ValueError(f"{self.anchors} anchors but {len(self.priors)} priors")
        if any(not (0 < w <= 1 and 0 < h <= 1) for w, h in self.priors):
            raise ValueError("anchor priors must lie in (0, 1]")
        if self.input_size != self.grid * 2 ** len(self.widths):
            raise ValueError(f"input_size must equal grid * 2**{len(self.widths)}")

    @property
    def per_anchor(self) -> int:
        return 5 + self.classes

    @property
    def head_channels(self) -> int:
        return self.anchors * self.per_anchor

    def layers(self) -> list[dict]:
        out, c = [], 1
        for w in self.widths:
            out += [{"kind": "conv", "in": c, "out": w, "k": 3}, {"kind": "relu"}, {"kind": "maxpool"}]
            c = w
        out += [{"kind": "conv", "in": c, "out": self.head_width, "k": 3}, {"kind": "relu"},
                {"kind": "conv", "in": self.head_width, "out": self.head_channels, "k": 1}]
        return out

    def to_dict(self) -> dict:
        return {"grid": self.grid, "anchors": self.anchors, "classes": self.classes,
                "input_size": self.input_size, "priors": [list(p) for p in self.priors],
                "widths": list(self.widths), "head_width": self.head_width}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorSpec":
        return cls(d["grid"], d["anchors"], d["classes"], d["input_size"],
                   tuple(tuple(p) for p in d["priors"]), tuple(d["widths"]), d["head_width"])


class Detector(nn.Module):
    """Raw output is (N, S, S, B * (5 + classes)), channels last."""

    def __init__(self, spec: DetectorSpec):
        super().__init__()
        self.spec = spec
        self.body = snn.build_sequential(spec.layers())

    def forward(self, x):
        return self.body(x).permute(0, 2, 3, 1)


def build_detector(spec: DetectorSpec = DetectorSpec(), seed: int = 42) -> Detector:
    net = Detector(spec)
    g = torch.Generator()
    g.manual_seed(seed)
    return snn.he_uniform_(net, g)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class Decoded:
    """Per-anchor decoded arrays, each shaped (S, S, B) (class_prob adds C)."""
    cx: np.ndarray
    cy: np.ndarray
    w: np.ndarray
    h: np.ndarray
    objectness: np.ndarray
    class_prob: np.ndarray

    @property
    def confidence(self) -> np.ndarray:
        return self.objectness * self.class_prob.max(axis=-1)


def decode(raw: np.ndarray, spec: DetectorSpec) -> Decoded:
    """Decode one image's raw (S, S, B*(5+C)) predictions."""
    S, B = spec.grid, spec.anchors
    r = np.asarray(raw, dtype=np.float64).reshape(S, S, B, spec.per_anchor)
    cols = np.arange(S)[None, :, None]
    rows = np.arange(S)[:, None, None]
    pw = np.array([p[0] for p in spec.priors])
    ph = np.array([p[1] for p in spec.priors])
    cx = (cols + _sigmoid(r[..., 0])) / S
    cy = (rows + _sigmoid(r[..., 1])) / S
    w = np.minimum(pw * np.exp(np.minimum(r[..., 2], 50.0)), 1.0)
    h = np.minimum(ph * np.exp(np.minimum(r[..., 3], 50.0)), 1.0)
    return Decoded(cx, cy, w, h, _sigmoid(r[..., 4]), _sigmoid(r[..., 5:]))


def encode_box(box: BBox, anchor: int, spec: DetectorSpec) -> tuple[int, int, np.ndarray]:
    """(row, col, [tx, ty, tw, th]) such that decode reproduces ``box``."""
    S = spec.grid
    col = min(int(box.cx * S), S - 1)
    row = min(int(box.cy * S), S - 1)
    fx, fy = box.cx * S - col, box.cy * S - row
    fx, fy = np.clip([fx, fy], 1e-6, 1 - 1e-6)
    pw, ph = spec.priors[anchor]
    t = np.array([math.log(fx / (1 - fx)), math.log(fy / (1 - fy)),
                  math.log(box.w / pw), math.log(box.h / ph)])
    return row, col, t


def anchor_ranking(w: float, h: float, spec: DetectorSpec) -> list[int]:
    """Anchors by decreasing IoU against a (w, h) box sharing their centre."""
    def shape_iou(p):
        inter = min(w, p[0]) * min(h, p[1])
        return inter / (w * h + p[0] * p[1] - inter)
    scores = [shape_iou(p) for p in spec.priors]
    return sorted(range(len(scores)), key=lambda a: (-scores[a], a))


def best_anchor(w: float, h: float, spec: DetectorSpec) -> int:
    return anchor_ranking(w, h, spec)[0]


def nms(dets: list[Detection], iou_threshold: float = NMS_IOU) -> list[Detection]:
    """Greedy per-class suppression, highest confidence first."""
    keep: list[Detection] = []
    for d in sorted(dets, key=lambda d: -d.confidence):
        if all(k.joint_class != d.joint_class or iou(k.bbox, d.bbox) <= iou_threshold for k in keep):
            keep.append(d)
    return keep


def select_detections(dets: list[Detection], limb: LimbKind, threshold: float = CONF_THRESHOLD,
                      iou_threshold: float = NMS_IOU) -> list[Detection]:
    """Threshold, NMS, then keep the K most confident (K joints per limb)."""
    kept = nms([d for d in dets if d.confidence > threshold], iou_threshold)
    return kept[:joints_per_limb(limb)]


def raw_predictions(net: Detector, unit: np.ndarray) -> np.ndarray:
    s = net.spec.input_size
    x = torch.from_numpy(resize_bilinear(unit, s, s).astype(np.float32))[None, None]
    with torch.no_grad():
        return net(x)[0].double().numpy()


def detect_joints(net: Detector, unit: np.ndarray, limb: LimbKind,
                  threshold: float = CONF_THRESHOLD) -> list[Detection]:
    dec = decode(raw_predictions(net, unit), net.spec)
    classes = DETECTOR_CLASSES[limb.limb_type]
    conf = dec.confidence
    cls = dec.class_prob.argmax(axis=-1)
    dets = []
    for idx in zip(*np.nonzero(conf > threshold)):
        dets.append(Detection(BBox(float(dec.cx[idx]), float(dec.cy[idx]), float(dec.w[idx]),
                                   float(dec.h[idx])), classes[int(cls[idx])], float(conf[idx])))
    return select_detections(dets, limb, threshold)


@dataclass
class DetectionSample:
    image: np.ndarray                       # unit raster at the detector input size
    boxes: list[tuple[BBox, int]]           # (box, detector class index)


def make_detection_sample(unit: np.ndarray, boxes, size: int) -> DetectionSample:
    for b, c in boxes:
        if not isinstance(b, BBox):
            raise TypeError("truth boxes must be BBox instances")
        if c is None or c < 0:
            raise ValueError("every truth box needs a class")
    return DetectionSample(resize_bilinear(unit, size, size), list(boxes))


def build_targets(samples: list[DetectionSample], spec: DetectorSpec):
    """Dense target tensors: box offsets, objectness, one-hot class, match mask."""
    S, B, C = spec.grid, spec.anchors, spec.classes
    n = len(samples)
    tbox = np.zeros((n, S, S, B, 4), dtype=np.float32)
    tobj = np.zeros((n, S, S, B), dtype=np.float32)
    tcls = np.zeros((n, S, S, B, C), dtype=np.float32)
    for i, s in enumerate(samples):
        for box, c in s.boxes:
            if c >= C:
                raise ValueError(f"class index {c} outside 0..{C - 1}")
            # two joints can share a cell; the later one takes the next free anchor
            row, col, _ = encode_box(box, 0, spec)
            free = [a for a in anchor_ranking(box.w, box.h, spec) if not tobj[i, row, col, a]]
            if not free:
                continue
            a = free[0]
            row, col, t = encode_box(box, a, spec)
            tbox[i, row, col, a] = t
            tobj[i, row, col, a] = 1.0
            tcls[i, row, col, a] = 0.0
            tcls[i, row, col, a, c] = 1.0
    return torch.from_numpy(tbox), torch.from_numpy(tobj), torch.from_numpy(tcls)


COORD_WEIGHT = 5.0
OBJ_POS_WEIGHT = 5.0


def detection_loss(raw: torch.Tensor, tbox, tobj, tcls, spec: DetectorSpec,
                   coord_weight: float = COORD_WEIGHT,
                   obj_pos_weight: float = OBJ_POS_WEIGHT) -> torch.Tensor:
    """Weighted squared error on matched offsets + BCE objectness (matched
    anchors weighted up) + BCE on matched class scores, summed and divided by
    the batch size."""
    n = raw.shape[0]
    r = raw.reshape(n, spec.grid, spec.grid, spec.anchors, spec.per_anchor)
    m = tobj > 0
    xy = torch.sigmoid(r[..., 0:2])
    txy = torch.sigmoid(tbox[..., 0:2])
    box_err = ((xy - txy) ** 2).sum(-1) + ((r[..., 2:4] - tbox[..., 2:4]) ** 2).sum(-1)
    loss = coord_weight * (box_err * m).sum()
    obj = torch.sigmoid(r[..., 4])
    loss = loss + snn.bce(obj[~m], tobj[~m], reduction="sum")
    if m.any():
        loss = loss + obj_pos_weight * snn.bce(obj[m], tobj[m], reduction="sum")
    if m.any():
        loss = loss + snn.bce(torch.sigmoid(r[..., 5:][m]), tcls[m], reduction="sum")
    return loss / n


DETECTOR_TRAIN = TrainConfig(learning_rate=1e-3, batch_size=16, max_epochs=150,
                             early_stop_patience=None)
DETECTOR_SHIFT = 8

# what the training harness builds: a finer grid localizes joints better than
# the 8 x 8 default, and the extra width sits where it is cheap (16 x 16)
TRAINED_DETECTOR = DetectorSpec(grid=16, widths=(8, 16, 32), head_width=128)


def step_schedule(base_lr: float, total_steps: int):
    """Learning rate decayed x0.1 at 80% and again at 90% of all steps."""
    s1, s2 = int(0.8 * total_steps), int(0.9 * total_steps)
    return lambda step: base_lr * (0.1 if step >= s1 else 1.0) * (0.1 if step >= s2 else 1.0)


def shift_sample(s: DetectionSample, dy: int, dx: int) -> DetectionSample:
    """Translate image and boxes by whole pixels, zero fill; boxes whose
    centre leaves the frame are dropped."""
    n = s.image.shape[0]
    img = np.zeros_like(s.image)
    src = s.image[max(0, -dy):n - max(0, dy), max(0, -dx):n - max(0, dx)]
    img[max(0, dy):max(0, dy) + src.shape[0], max(0, dx):max(0, dx) + src.shape[1]] = src
    boxes = []
    for b, c in s.boxes:
        cx, cy = b.cx + dx / n, b.cy + dy / n
        if 0 <= cx < 1 and 0 <= cy < 1:
            boxes.append((BBox(cx, cy, b.w, b.h), c))
    return DetectionSample(img, boxes)


def train_detector(samples: list[DetectionSample], cfg: TrainConfig = DETECTOR_TRAIN,
                   spec: DetectorSpec = DetectorSpec(), net: Detector | None = None,
                   history: list | None = None, max_shift: int = 0) -> tuple[Detector, FitResult]:
    """Fit the detector; ``history`` (if given) receives every batch loss.

    ``max_shift`` > 0 translates each batch sample by a seeded random whole
    number of pixels in [-max_shift, max_shift] per axis.
    """
    if not samples:
        raise ValueError("empty training set")
    x = torch.from_numpy(np.stack([s.image for s in samples]).astype(np.float32))[:, None]
    if x.shape[-1] != spec.input_size or x.shape[-2] != spec.input_size:
        raise ValueError("sample images must match the detector input size")
    tbox, tobj, tcls = build_targets(samples, spec)
    if net is None:
        net = build_detector(spec, cfg.seed)
    steps = cfg.max_epochs * math.ceil(len(samples) / cfg.batch_size)
    rng = np.random.default_rng([cfg.seed, 1])

    def batch_loss(idx):
        if max_shift > 0:
            shifts = rng.integers(-max_shift, max_shift + 1, size=(len(idx), 2))
            moved = [shift_sample(samples[i], int(dy), int(dx)) for i, (dy, dx) in zip(idx, shifts)]
            xb = torch.from_numpy(np.stack([m.image for m in moved]).astype(np.float32))[:, None]
            loss = detection_loss(net(xb), *build_targets(moved, spec), spec)
        else:
            loss = detection_loss(net(x[idx]), tbox[idx], tobj[idx], tcls[idx], spec)
        if history is not None:
            history.append(float(loss.detach()))
        return loss

    result = fit(net, len(samples), batch_loss, cfg, lr_at=step_schedule(cfg.learning_rate, steps))
    net.eval()
    return net, result


def fit_priors(boxes: list[BBox], k: int = 3) -> tuple[tuple[float, float], ...]:
    """Mean (w, h) of ``k`` equal groups of boxes ordered by aspect ratio."""
    if len(boxes) < k:
        raise ValueError("not enough boxes to fit anchor priors")
    ordered = sorted(boxes, key=lambda b: (b.w / b.h, b.w * b.h))
    groups = np.array_split(np.arange(len(ordered)), k)
    return tuple((round(float(np.mean([ordered[i].w for i in g])), 4),
                  round(float(np.mean([ordered[i].h for i in g])), 4)) for g in groups)
