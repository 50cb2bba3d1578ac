"""Fixed layer catalogue and a builder for sequential layer graphs.

A layer graph is described by a list of plain dicts so it can be stored in a
checkpoint and rebuilt verbatim::

    [{"kind": "conv", "in": 1, "out": 8, "k": 3, "pad": "same"},
     {"kind": "relu"}, {"kind": "maxpool"}, {"kind": "flatten"},
     {"kind": "dense", "in": 8 * 16 * 16, "out": 3}, {"kind": "sigmoid"}]
"""
from __future__ import annotations

import math

import torch
from torch import nn
from torch.nn import functional as F

LAYER_KINDS = ("conv", "maxpool", "upsample", "dense", "relu", "sigmoid", "flatten")


class Upsample2(nn.Module):
    """x2 nearest-neighbour upsampling."""

    def forward(self, x):
        return x.repeat_interleave(2, dim=-2).repeat_interleave(2, dim=-1)


class MultiScaleBlock(nn.Module):
    """Parallel convolutions of several odd kernel sizes, concatenated and
    fused back to ``out_ch`` channels by a 1x1 convolution."""

    def __init__(self, in_ch: int, out_ch: int, kernels=(1, 3, 5)):
        super().__init__()
        if any(k % 2 == 0 for k in kernels):
            raise ValueError("multi-scale kernels must be odd")
        self.kernels = tuple(kernels)
        self.branches = nn.ModuleList(
            nn.Conv2d(in_ch, out_ch, k, padding=k // 2) for k in self.kernels)
        self.fuse = nn.Conv2d(out_ch * len(self.kernels), out_ch, 1)

    def forward(self, x):
        return F.relu(self.fuse(torch.cat([F.relu(b(x)) for b in self.branches], dim=1)))

    @staticmethod
    def param_count(in_ch: int, out_ch: int, kernels=(1, 3, 5)) -> int:
        branch = sum(in_ch * out_ch * k * k + out_ch for k in kernels)
        return branch + len(kernels) * out_ch * out_ch + out_ch


def make_layer(spec: dict) -> nn.Module:
    kind = spec.get("kind")
    if kind == "conv":
        k = spec["k"]
        pad = spec.get("pad", "same")
        if pad not in ("same", "valid"):
            raise ValueError(f"unknown padding {pad!r}")
        return nn.Conv2d(spec["in"], spec["out"], k, padding=k // 2 if pad == "same" else 0)
    if kind == "maxpool":
        return nn.MaxPool2d(2)
    if kind == "upsample":
        return Upsample2()
    if kind == "dense":
        return nn.Linear(spec["in"], spec["out"])
    if kind == "relu":
        return nn.ReLU()
    if kind == "sigmoid":
        return nn.Sigmoid()
    if kind == "flatten":
        return nn.Flatten()
    raise ValueError(f"unknown layer kind {kind!r}")


def build_sequential(layers: list[dict]) -> nn.Sequential:
    return nn.Sequential(*(make_layer(s) for s in layers))


def he_uniform_(module: nn.Module, generator: torch.Generator) -> nn.Module:
    """Fan-in scaled uniform weights, zero biases, drawn from ``generator``."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight[0].numel()
            bound = math.sqrt(6.0 / fan_in)
            with torch.no_grad():
                w = torch.rand(m.weight.shape, generator=generator, dtype=torch.float64)
                m.weight.copy_((w * 2 - 1) * bound)
                if m.bias is not None:
                    m.bias.zero_()
    return module


def param_count(module: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in module.parameters()
               if p.requires_grad or not trainable_only)


def freeze(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        p.requires_grad_(False)
    return module
