"""Hand-rolled Adam with per-tensor learning rates and scene-specific hooks:
non-finite gradients skip the tensor (and are reported), quaternion tensors
are renormalized after every step, and moment state can grow row-wise when
densification appends Gaussians."""

from __future__ import annotations

import math
from typing import Callable

import torch
from torch import Tensor

LrFn = Callable[[str, int], float]


def expon_lr(lr_init: float, lr_final: float, max_steps: int) -> Callable[[int], float]:
    """Log-linear interpolation from lr_init to lr_final over max_steps."""

    def fn(step: int) -> float:
        if max_steps <= 0:
            return lr_final
        frac = min(max(step / max_steps, 0.0), 1.0)
        return math.exp((1 - frac) * math.log(lr_init) + frac * math.log(lr_final))

    return fn


class Adam:
    def __init__(
        self,
        params: dict[str, Tensor],
        lr_fn: LrFn,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        unit_quaternion: set[str] | None = None,
    ):
        self.params = dict(params)
        self.lr_fn = lr_fn
        self.b1, self.b2 = betas
        self.eps = eps
        self.unit_quaternion = set(unit_quaternion or ())
        self.m = {k: torch.zeros_like(p) for k, p in self.params.items()}
        self.v = {k: torch.zeros_like(p) for k, p in self.params.items()}
        self.steps = {k: 0 for k in self.params}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, iteration: int) -> list[str]:
        """One bias-corrected update; returns names skipped for non-finite
        gradients. Tensors without a gradient this iteration are left alone."""
        skipped = []
        with torch.no_grad():
            for name, p in self.params.items():
                g = p.grad
                if g is None:
                    continue
                if not torch.isfinite(g).all():
                    skipped.append(name)
                    continue
                self.steps[name] += 1
                t = self.steps[name]
                m = self.m[name].mul_(self.b1).add_(g, alpha=1 - self.b1)
                v = self.v[name].mul_(self.b2).addcmul_(g, g, value=1 - self.b2)
                m_hat = m / (1 - self.b1**t)
                v_hat = v / (1 - self.b2**t)
                p.add_(-self.lr_fn(name, iteration) * m_hat / (v_hat.sqrt() + self.eps))
                if name in self.unit_quaternion:
                    p.div_(p.norm(dim=-1, keepdim=True).clamp_min(1e-12))
        return skipped

    def rebind(self, name: str, tensor: Tensor):
        """Point `name` at a replacement tensor; rows appended beyond the old
        length start with zero moments."""
        old_m, old_v = self.m[name], self.v[name]
        if tensor.shape[0] < old_m.shape[0] or tensor.shape[1:] != old_m.shape[1:]:
            raise ValueError("rebind only supports row-wise growth")
        pad = tensor.shape[0] - old_m.shape[0]
        if pad > 0:
            zeros = torch.zeros(pad, *old_m.shape[1:], dtype=old_m.dtype)
            self.m[name] = torch.cat([old_m, zeros])
            self.v[name] = torch.cat([old_v, zeros.clone()])
        self.params[name] = tensor
