"""Ordinal score encoding and the frozen-trunk joint scorers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from scipy import ndimage
from torch import nn

from . import nn as snn
from .joints import ScoreScale
from .nn.training import FitResult, TrainConfig, fit

CROP_SIZE = 64
CROP_MARGIN = 0.20


def ordinal_encode(k: int, n_classes: int) -> np.ndarray:
    """Class ``k`` as ``k + 1`` leading ones in a length-``n_classes`` vector."""
    if not 0 <= k < n_classes:
        raise ValueError(f"class {k} outside 0..{n_classes - 1}")
    v = np.zeros(n_classes)
    v[:k + 1] = 1.0
    return v


def ordinal_decode(v) -> int:
    """Length of the leading run of entries above 0.5, minus one (min 0)."""
    run = 0
    for x in np.asarray(v, dtype=np.float64).ravel():
        if x <= 0.5:
            break
        run += 1
    return max(run - 1, 0)


def undersample(items, labels, seed: int = 42):
    """Reduce class 0 to the size of the largest other class.

    Other classes are kept untouched and in their original order; the
    surviving class-0 samples are a seeded uniform draw without replacement.
    Returns ``(items, labels)`` subsets of the same types as numpy arrays.
    """
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2:
        raise ValueError("undersampling needs at least two classes")
    n_zero = int(counts[classes == 0].sum())
    others = counts[classes != 0]
    target = int(others.max())
    keep = np.ones(len(labels), dtype=bool)
    if n_zero > target:
        zeros = np.flatnonzero(labels == 0)
        chosen = np.random.default_rng(seed).choice(zeros, size=target, replace=False)
        keep[zeros] = False
        keep[chosen] = True
    idx = np.flatnonzero(keep)
    if isinstance(items, np.ndarray) or isinstance(items, torch.Tensor):
        return items[idx], labels[idx]
    return [items[i] for i in idx], labels[idx]


def extract_crop(img: np.ndarray, box, size: int = CROP_SIZE,
                 margin: float = CROP_MARGIN) -> np.ndarray:
    """Unit-raster crop of ``box`` (x0, y0, x1, y1 pixels) grown by
    ``margin`` of its size, resampled bilinearly to ``size x size``."""
    x0, y0, x1, y1 = box
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    w, h = (x1 - x0) * (1 + margin), (y1 - y0) * (1 + margin)
    xs = cx - w / 2 + (np.arange(size) + 0.5) * w / size - 0.5
    ys = cy - h / 2 + (np.arange(size) + 0.5) * h / size - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    out = ndimage.map_coordinates(img.astype(np.float64), [yy, xx], order=1,
                                  mode="constant", cval=0.0)
    return np.clip(out / 255.0, 0.0, 1.0)


def _default_trunk():
    return [
        {"kind": "conv", "in": 1, "out": 8, "k": 3, "pad": "same"}, {"kind": "relu"},
        {"kind": "maxpool"},
        {"kind": "conv", "in": 8, "out": 16, "k": 3, "pad": "same"}, {"kind": "relu"},
        {"kind": "maxpool"},
        {"kind": "conv", "in": 16, "out": 16, "k": 3, "pad": "same"}, {"kind": "relu"},
        {"kind": "maxpool"},
        {"kind": "flatten"},
    ]


@dataclass
class ScorerSpec:
    input_size: int = CROP_SIZE
    trunk: list = field(default_factory=_default_trunk)
    hidden: tuple[int, ...] = (64, 32)

    @property
    def feature_size(self) -> int:
        side, ch = self.input_size, 1
        for layer in self.trunk:
            if layer["kind"] == "maxpool":
                side //= 2
            elif layer["kind"] == "conv":
                ch = layer["out"]
                if layer.get("pad", "same") == "valid":
                    side -= layer["k"] - 1
        return side * side * ch

    def head_layers(self, n_out: int) -> list[dict]:
        layers, c = [], self.feature_size
        for hdim in self.hidden:
            layers += [{"kind": "dense", "in": c, "out": hdim}, {"kind": "relu"}]
            c = hdim
        return layers + [{"kind": "dense", "in": c, "out": n_out}, {"kind": "sigmoid"}]

    def head_param_count(self, n_out: int) -> int:
        dims = [self.feature_size, *self.hidden, n_out]
        return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        return {"input_size": self.input_size, "trunk": self.trunk, "hidden": list(self.hidden)}

    @classmethod
    def from_dict(cls, d: dict) -> "ScorerSpec":
        return cls(d["input_size"], d["trunk"], tuple(d["hidden"]))


class Scorer(nn.Module):
    def __init__(self, trunk: nn.Module, head: nn.Module, spec: ScorerSpec, scale: ScoreScale):
        super().__init__()
        self.trunk = trunk
        self.head = head
        self.spec = spec
        self.scale = scale

    def forward(self, x):
        return self.head(self.trunk(x))


def build_trunk(spec: ScorerSpec, seed: int = 42) -> nn.Sequential:
    g = torch.Generator()
    g.manual_seed(seed)
    return snn.he_uniform_(snn.build_sequential(spec.trunk), g)


def build_scorer(spec: ScorerSpec, scale: ScoreScale, trunk: nn.Module | None,
                 seed: int = 42) -> Scorer:
    """Frozen ``trunk`` plus a fresh trainable dense head with
    ``scale.classes`` sigmoid outputs."""
    if trunk is None:
        raise ValueError("a pretrained trunk is required")
    trunk = snn.freeze(trunk)
    g = torch.Generator()
    g.manual_seed(seed + 1)
    head = snn.he_uniform_(snn.build_sequential(spec.head_layers(scale.classes)), g)
    return Scorer(trunk, head, spec, scale)


def _to_tensor(crops) -> torch.Tensor:
    arr = np.asarray(crops, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[:, None]
    return torch.from_numpy(arr)


PRETEXT_TRAIN = TrainConfig(learning_rate=1e-3, batch_size=32, max_epochs=8,
                            early_stop_patience=None)


def pretrain_trunk(crops, joint_classes, n_classes: int, spec: ScorerSpec = ScorerSpec(),
                   cfg: TrainConfig = PRETEXT_TRAIN) -> tuple[nn.Sequential, FitResult]:
    """Train the trunk on joint-class discrimination, then freeze it."""
    trunk = build_trunk(spec, cfg.seed)
    g = torch.Generator()
    g.manual_seed(cfg.seed + 7)
    probe = snn.he_uniform_(snn.build_sequential(
        [{"kind": "dense", "in": spec.feature_size, "out": n_classes}, {"kind": "sigmoid"}]), g)
    net = nn.Sequential(trunk, probe)
    x = _to_tensor(crops)
    y = torch.from_numpy(np.eye(n_classes, dtype=np.float32)[np.asarray(joint_classes)])

    result = fit(net, len(x), lambda idx: snn.bce(net(x[idx]), y[idx]), cfg)
    return snn.freeze(trunk), result


SCORER_TRAIN = TrainConfig(learning_rate=1e-4, batch_size=32, max_epochs=250,
                           early_stop_patience=None)


def features(net: Scorer, crops) -> torch.Tensor:
    with torch.no_grad():
        return net.trunk(_to_tensor(crops))


def train_scorer(net: Scorer, crops, scores, cfg: TrainConfig = SCORER_TRAIN,
                 balance: bool = True) -> FitResult:
    """Train the dense head on ordinal BCE targets.

    Class 0 is under-sampled first (``balance``); 10% of what remains is held
    out for validation and the best validation epoch is kept. The trunk is
    frozen, so its features are computed once.
    """
    scores = np.asarray(scores)
    if len(scores) == 0:
        raise ValueError("no training samples")
    C = net.scale.classes
    if scores.min() < 0 or scores.max() >= C:
        raise ValueError(f"scores outside the {C}-class scale")
    crops = np.asarray(crops, dtype=np.float32)
    if balance:
        crops, scores = undersample(crops, scores, cfg.seed)
    feats = features(net, crops)
    targets = torch.from_numpy(np.stack([ordinal_encode(int(k), C) for k in scores]).astype(np.float32))
    order = np.random.default_rng(cfg.seed).permutation(len(scores))
    n_val = max(1, len(scores) // 10)
    tr, va = np.sort(order[n_val:]), np.sort(order[:n_val])
    ft, yt, fv, yv = feats[tr], targets[tr], feats[va], targets[va]
    head = net.head

    result = fit(head, len(tr), lambda idx: snn.bce(head(ft[idx]), yt[idx]), cfg,
                 lambda: snn.bce(head(fv), yv).item())
    net.eval()
    return result


def score_joint(net: Scorer, crop: np.ndarray) -> tuple[int, np.ndarray]:
    s = net.spec.input_size
    if crop.shape != (s, s):
        raise ValueError(f"crop must be {s}x{s}, got {crop.shape}")
    with torch.no_grad():
        v = net(_to_tensor(crop[None]))[0].double().numpy()
    return ordinal_decode(v), v


def score_batch(net: Scorer, crops) -> tuple[np.ndarray, np.ndarray]:
    with torch.no_grad():
        v = net(_to_tensor(crops)).double().numpy()
    return np.array([ordinal_decode(r) for r in v], dtype=np.int64), v
