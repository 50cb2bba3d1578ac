"""Losses, optimizer and gradient verification on top of torch autograd."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

BCE_EPS = 1e-7


def set_deterministic(seed: int) -> torch.Generator:
    """Single-threaded, deterministic kernels; returns a seeded generator."""
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    torch.manual_seed(seed)
    g = torch.Generator()
    g.manual_seed(seed)
    return g


def forward_backward(net: nn.Module, x: torch.Tensor, upstream: torch.Tensor):
    """Run ``net`` on ``x`` and back-propagate ``upstream`` from its output.

    Returns ``(output, param_grads, input_grad)`` where ``param_grads`` maps
    every trainable parameter name to its gradient.
    """
    x = x.detach().clone().requires_grad_(True)
    net.zero_grad(set_to_none=True)
    out = net(x)
    if out.shape != upstream.shape:
        raise ValueError(f"upstream shape {tuple(upstream.shape)} != output {tuple(out.shape)}")
    out.backward(upstream)
    grads = {name: p.grad.detach().clone()
             for name, p in net.named_parameters() if p.requires_grad}
    return out.detach(), grads, x.grad.detach()


class _BCE(torch.autograd.Function):
    @staticmethod
    def forward(ctx, pred, target, reduce_mean):
        p = pred.clamp(BCE_EPS, 1 - BCE_EPS)
        ctx.save_for_backward(p, target)
        ctx.denom = pred.numel() if reduce_mean else 1
        terms = target * torch.log(p) + (1 - target) * torch.log(1 - p)
        return -terms.sum() / ctx.denom

    @staticmethod
    def backward(ctx, grad_out):
        p, target = ctx.saved_tensors
        g = (p - target) / (p * (1 - p)) / ctx.denom
        return grad_out * g, None, None


def bce(pred: torch.Tensor, target: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """Binary cross-entropy (natural log) with predictions clamped to
    ``[1e-7, 1 - 1e-7]``; differentiable via the closed-form gradient."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    if reduction not in ("mean", "sum"):
        raise ValueError(reduction)
    return _BCE.apply(pred, target.to(pred.dtype), reduction == "mean")


def bce_loss(pred, target):
    """Mean BCE and its gradient w.r.t. ``pred`` as numpy values."""
    p = torch.as_tensor(np.asarray(pred, dtype=np.float64)).requires_grad_(True)
    t = torch.as_tensor(np.asarray(target, dtype=np.float64))
    loss = bce(p, t)
    loss.backward()
    return float(loss.detach()), p.grad.numpy()


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def trainable(net: nn.Module) -> dict[str, torch.Tensor]:
    return {n: p for n, p in net.named_parameters() if p.requires_grad}


def adam_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor],
              state: AdamState, lr: float) -> AdamState:
    """One bias-corrected Adam update, in place. Frozen tensors
    (``requires_grad=False``) are skipped."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.t
    c2 = 1 - b2 ** state.t
    with torch.no_grad():
        for name, p in params.items():
            if not p.requires_grad:
                continue
            g = grads.get(name)
            if g is None:
                continue
            if g.shape != p.shape:
                raise ValueError(f"gradient shape mismatch for {name}")
            m = state.m.get(name)
            if m is None:
                m = state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            v = state.v[name]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            p.sub_(lr * (m / c1) / ((v / c2).sqrt() + state.eps))
    return state


class Adam:
    """Thin stateful wrapper used by the training loops."""

    def __init__(self, net: nn.Module, lr: float):
        self.params = trainable(net)
        self.lr = lr
        self.state = AdamState()

    def step(self):
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        adam_step(self.params, grads, self.state, self.lr)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    worst: str

    @property
    def ok(self) -> bool:
        return self.max_rel_error < 1e-3


def grad_check(net: nn.Module, x: torch.Tensor, target: torch.Tensor | None = None,
               eps: float = 1e-5, samples: int = 120, seed: int = 0,
               loss_fn=None, floor: float = 1e-6) -> GradCheckResult:
    """Compare autograd gradients with central differences.

    Relative error is ``|analytic - numeric| / max(|numeric|, floor)`` over a
    random subsample of at least ``samples`` parameter entries (all entries if
    fewer), with every trainable tensor probed at least once. The network must
    be in float64.
    """
    if loss_fn is None:
        if target is None:
            raise ValueError("need a target or a loss_fn")
        loss_fn = lambda out: bce(out, target)  # noqa: E731
    params = trainable(net)
    if any(p.dtype != torch.float64 for p in params.values()):
        raise ValueError("grad_check requires a float64 network")

    net.zero_grad(set_to_none=True)
    loss_fn(net(x)).backward()
    analytic = {n: p.grad.detach().clone() for n, p in params.items()}

    rng = np.random.default_rng(seed)
    # one probe per tensor, the rest drawn uniformly over the remaining entries
    names = list(params)
    sizes = [params[n].numel() for n in names]
    picks = {n: [int(rng.integers(s))] for n, s in zip(names, sizes)}
    pool = [(n, i) for n, s in zip(names, sizes) for i in range(s) if i != picks[n][0]]
    extra = min(len(pool), max(samples - len(names), 0))
    for j in rng.choice(len(pool), size=extra, replace=False):
        n, i = pool[j]
        picks[n].append(i)
    worst, worst_name, checked = 0.0, "", 0
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            for idx in sorted(picks[name]):
                orig = flat[idx].item()
                flat[idx] = orig + eps
                up = loss_fn(net(x)).item()
                flat[idx] = orig - eps
                down = loss_fn(net(x)).item()
                flat[idx] = orig
                numeric = (up - down) / (2 * eps)
                a = analytic[name].view(-1)[idx].item()
                rel = abs(a - numeric) / max(abs(numeric), floor)
                checked += 1
                if rel > worst:
                    worst, worst_name = rel, f"{name}[{idx}]"
    return GradCheckResult(worst, checked, worst_name)
