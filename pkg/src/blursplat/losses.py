"""Training losses: L1+SSIM reconstruction, depth/mask geometry, motion smoothing.

SSIM uses the classic 11x11 Gaussian window (sigma 1.5) with C1=(0.01)^2,
C2=(0.03)^2 on unit range and valid-only window placement. Masked variants
restrict both terms to covered pixels so warped unseen-view targets with
holes supervise only what they actually observed.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import Tensor

from .scene import GaussianScene
from .transforms import quat_log

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
_C1 = 0.01**2
_C2 = 0.03**2

_window_cache: dict = {}


def _gaussian_window(channels: int, dtype) -> Tensor:
    key = (channels, dtype)
    if key not in _window_cache:
        half = (SSIM_WINDOW - 1) / 2
        xs = torch.arange(SSIM_WINDOW, dtype=dtype) - half
        g = torch.exp(-(xs**2) / (2 * SSIM_SIGMA**2))
        g = g / g.sum()
        w2d = torch.outer(g, g)
        _window_cache[key] = w2d.expand(channels, 1, SSIM_WINDOW, SSIM_WINDOW).clone()
    return _window_cache[key]


def _to_nchw(img: Tensor) -> Tensor:
    if img.dim() == 2:
        img = img.unsqueeze(-1)
    return img.permute(2, 0, 1).unsqueeze(0)


def ssim_map(a: Tensor, b: Tensor) -> Tensor:
    """Per-window SSIM, shape (H-10, W-10); inputs (H,W,C) or (H,W) on [0,1]."""
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    x, y = _to_nchw(a), _to_nchw(b)
    c = x.shape[1]
    w = _gaussian_window(c, x.dtype)
    mu_x = F.conv2d(x, w, groups=c)
    mu_y = F.conv2d(y, w, groups=c)
    sig_x = F.conv2d(x * x, w, groups=c) - mu_x**2
    sig_y = F.conv2d(y * y, w, groups=c) - mu_y**2
    sig_xy = F.conv2d(x * y, w, groups=c) - mu_x * mu_y
    num = (2 * mu_x * mu_y + _C1) * (2 * sig_xy + _C2)
    den = (mu_x**2 + mu_y**2 + _C1) * (sig_x + sig_y + _C2)
    return (num / den).mean(dim=1)[0]


def ssim(a: Tensor, b: Tensor, valid: Tensor | None = None) -> Tensor:
    """Mean SSIM; with `valid` (H,W in {0,1}) only windows fully inside the
    valid region count. Returns NaN when no window qualifies."""
    smap = ssim_map(a, b)
    if valid is None:
        return smap.mean()
    v = valid.to(a.dtype)
    ones = torch.ones(1, 1, SSIM_WINDOW, SSIM_WINDOW, dtype=a.dtype)
    cover = F.conv2d(v.unsqueeze(0).unsqueeze(0), ones)[0, 0]
    keep = cover >= SSIM_WINDOW**2 - 0.5
    if not bool(keep.any()):
        return torch.tensor(float("nan"), dtype=a.dtype)
    return smap[keep].mean()


def masked_l1(a: Tensor, b: Tensor, valid: Tensor | None = None) -> Tensor:
    diff = (a - b).abs()
    if valid is None:
        return diff.mean()
    v = valid.to(a.dtype)
    while v.dim() < diff.dim():
        v = v.unsqueeze(-1)
    denom = (v.expand_as(diff)).sum().clamp_min(1)
    return (diff * v).sum() / denom


def reconstruction_loss(
    b_hat: Tensor, b: Tensor, beta: float = 0.2, valid: Tensor | None = None
) -> Tensor:
    """(1-beta)*L1 + beta*(1-SSIM); the SSIM term is dropped when masking
    leaves no fully-covered window."""
    l1 = masked_l1(b_hat, b, valid)
    s = ssim(b_hat, b, valid)
    if torch.isnan(s):
        return (1 - beta) * l1
    return (1 - beta) * l1 + beta * (1 - s)


def geometry_loss(
    d_hat: Tensor,
    d: Tensor,
    m_hat: Tensor,
    m: Tensor,
    lambda_depth: float = 0.075,
    lambda_mask: float = 0.075,
    unseen: bool = False,
    valid: Tensor | None = None,
) -> Tensor:
    """Depth + mask L1; unseen iterations drop the depth term entirely."""
    mask_term = lambda_mask * masked_l1(m_hat, m, valid)
    if unseen:
        return mask_term
    return lambda_depth * masked_l1(d_hat, d, valid) + mask_term


def dynamic_trajectories(scene: GaussianScene) -> Tensor:
    """Deformed dynamic means across all frames, shape (T, N, 3)."""
    from .scene import deform_all_frames

    return deform_all_frames(scene.dynamic.means, scene.dynamic.motion_weights, scene.bases)


def smoothing_loss(scene: GaussianScene, w_basis: float = 0.1, w_traj: float = 0.1) -> Tensor:
    """Second-difference penalties on the basis transforms (translations and
    rotation log-maps, L2 norms summed) and on dynamic-mean trajectories
    (squared norms summed). Zero for sequences shorter than 3 frames."""
    T = scene.num_frames
    dtype = scene.bases.dtype
    if T < 3:
        return torch.zeros((), dtype=dtype)
    tr = scene.bases.translations()          # (T,B,3)
    rl = quat_log(scene.bases.rotations())   # (T,B,3)
    acc_t = tr[:-2] - 2 * tr[1:-1] + tr[2:]
    acc_r = rl[:-2] - 2 * rl[1:-1] + rl[2:]
    basis_term = acc_t.norm(dim=-1).sum() + acc_r.norm(dim=-1).sum()
    if len(scene.dynamic) > 0:
        mu = dynamic_trajectories(scene)
        acc_mu = mu[:-2] - 2 * mu[1:-1] + mu[2:]
        traj_term = (acc_mu**2).sum()
    else:
        traj_term = torch.zeros((), dtype=dtype)
    return w_basis * basis_term + w_traj * traj_term


def total_loss(rec: Tensor, geo: Tensor, smo: Tensor, spa: Tensor | None = None) -> Tensor:
    out = rec + geo + smo
    if spa is not None:
        out = out + spa
    return out
