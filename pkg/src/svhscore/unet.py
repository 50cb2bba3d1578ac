"""Lightweight U-Net with multi-scale blocks for limb masking."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from . import nn as snn
from .imaging import resize_bilinear, resize_nearest
from .nn.training import FitResult, TrainConfig, fit


@dataclass(frozen=True)
class UNetSpec:
    input_size: int = 64
    stages: int = 3
    base_channels: int = 8
    msb_kernels: tuple[int, ...] = (1, 3, 5)

    def __post_init__(self):
        if self.stages < 1 or self.base_channels < 1:
            raise ValueError("stages and base_channels must be >= 1")
        if self.input_size % (2 ** self.stages):
            raise ValueError(f"input_size {self.input_size} not divisible by 2**{self.stages}")
        if any(k % 2 == 0 or k < 1 for k in self.msb_kernels):
            raise ValueError("msb_kernels must be odd")

    @property
    def widths(self) -> list[int]:
        # constant width per level keeps the net cheap enough for one CPU core
        return [self.base_channels] * (self.stages + 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["msb_kernels"] = list(self.msb_kernels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UNetSpec":
        return cls(d["input_size"], d["stages"], d["base_channels"], tuple(d["msb_kernels"]))


class UNet(nn.Module):
    def __init__(self, spec: UNetSpec):
        super().__init__()
        self.spec = spec
        w = spec.widths
        ks = spec.msb_kernels
        self.encoders = nn.ModuleList()
        c = 1
        for i in range(spec.stages):
            self.encoders.append(snn.MultiScaleBlock(c, w[i], ks))
            c = w[i]
        self.bottleneck = snn.MultiScaleBlock(c, w[spec.stages], ks)
        self.pool = nn.MaxPool2d(2)
        self.up = snn.Upsample2()
        self.decoders = nn.ModuleList()
        c = w[spec.stages]
        for i in reversed(range(spec.stages)):
            self.decoders.append(snn.MultiScaleBlock(c + w[i], w[i], ks))
            c = w[i]
        self.head = nn.Conv2d(c, 1, 1)

    def forward(self, x):
        skips = []
        for enc in self.encoders:
            x = enc(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for dec in self.decoders:
            x = dec(torch.cat([self.up(x), skips.pop()], dim=1))
        return torch.sigmoid(self.head(x))


def expected_param_count(spec: UNetSpec) -> int:
    w, ks = spec.widths, spec.msb_kernels
    total, c = 0, 1
    for i in range(spec.stages):
        total += snn.MultiScaleBlock.param_count(c, w[i], ks)
        c = w[i]
    total += snn.MultiScaleBlock.param_count(c, w[spec.stages], ks)
    c = w[spec.stages]
    for i in reversed(range(spec.stages)):
        total += snn.MultiScaleBlock.param_count(c + w[i], w[i], ks)
        c = w[i]
    return total + c + 1


def build_unet(spec: UNetSpec = UNetSpec(), seed: int = 42) -> UNet:
    net = UNet(spec)
    g = torch.Generator()
    g.manual_seed(seed)
    snn.he_uniform_(net, g)
    return net


@dataclass
class MaskSample:
    image: np.ndarray   # unit raster at the network input size
    mask: np.ndarray    # bool, same size

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise ValueError("image and mask sizes differ")


def make_sample(unit: np.ndarray, mask: np.ndarray, size: int) -> MaskSample:
    return MaskSample(resize_bilinear(unit, size, size), resize_nearest(np.asarray(mask, bool), size, size))


def _stack(samples) -> tuple[torch.Tensor, torch.Tensor]:
    x = torch.from_numpy(np.stack([s.image for s in samples]).astype(np.float32))[:, None]
    y = torch.from_numpy(np.stack([s.mask for s in samples]).astype(np.float32))[:, None]
    return x, y


def holdout_split(n: int, seed: int, fraction: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng(seed).permutation(n)
    n_val = max(1, int(np.floor(n * fraction)))
    return np.sort(order[:n - n_val]), np.sort(order[n - n_val:])


UNET_TRAIN = TrainConfig(learning_rate=1e-4, batch_size=16, max_epochs=200, early_stop_patience=10)


def train_unet(samples: list[MaskSample], cfg: TrainConfig = UNET_TRAIN,
               spec: UNetSpec = UNetSpec(), net: UNet | None = None) -> tuple[UNet, FitResult]:
    """Fit on 90% of ``samples``, early-stopping on BCE over the other 10%."""
    if len(samples) < 2:
        raise ValueError("need at least two mask samples")
    tr, va = holdout_split(len(samples), cfg.seed)
    x, y = _stack(samples)
    xt, yt, xv, yv = x[tr], y[tr], x[va], y[va]
    if net is None:
        net = build_unet(spec, cfg.seed)

    def batch_loss(idx):
        return snn.bce(net(xt[idx]), yt[idx])

    def val_loss():
        return snn.bce(net(xv), yv).item()

    result = fit(net, len(tr), batch_loss, cfg, val_loss)
    net.eval()
    return net, result


def predict_proba(net: UNet, unit: np.ndarray) -> np.ndarray:
    s = net.spec.input_size
    x = torch.from_numpy(resize_bilinear(unit, s, s).astype(np.float32))[None, None]
    with torch.no_grad():
        return net(x)[0, 0].double().numpy()


def predict_mask(net: UNet, unit: np.ndarray, thresh: float = 0.5) -> np.ndarray:
    """Foreground where the network output exceeds ``thresh``, rescaled
    (nearest neighbour) to the input's dimensions."""
    if unit.ndim != 2:
        raise ValueError("expected a 2-D unit raster")
    prob = predict_proba(net, unit)
    return resize_nearest(prob > thresh, *unit.shape)
