"""Differentiable Gaussian splat rasterizer (desk scale, pure torch).

Each splat is evaluated inside a +-cull_sigma bounding box instead of tile
binning; per-pixel front-to-back compositing runs vectorized over a flat
(splat, pixel) pair list with a segmented cumulative product in log space.
Gradients flow to every splat field through torch autograd.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from .cameras import Camera
from .scene import GaussianScene
from .transforms import quat_to_rotmat

COV2D_FLOOR = 0.1    # px^2 added to the projected covariance diagonal
ALPHA_MAX = 0.99
MIN_ACCUM_ALPHA = 1e-4


@dataclass
class Splats2D:
    means2d: Tensor     # (N,2) pixel coordinates
    cov2d: Tensor       # (N,2,2) SPD, pixels^2
    depth: Tensor       # (N,) camera-space z
    opacity: Tensor     # (N,)
    color: Tensor       # (N,3)
    is_dynamic: Tensor  # (N,) bool

    def __len__(self) -> int:
        return self.means2d.shape[0]


@dataclass
class RenderOutput:
    image: Tensor   # (H,W,3)
    depth: Tensor   # (H,W)
    mask: Tensor    # (H,W) accumulated dynamic alpha
    alpha: Tensor   # (H,W) accumulated total alpha


def splat_project(
    means: Tensor, quats: Tensor, scales: Tensor, cam: Camera, regularize: bool = True
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """EWA projection of 3D Gaussians to screen space.

    Returns (means2d, cov2d, depth, valid); rows with valid=False are behind
    the near plane and must be culled by the caller.
    """
    from .cameras import NEAR_EPS, project

    means2d, depth, valid = project(means, cam)
    p_cam = cam.world_to_cam(means)
    z = p_cam[:, 2].clamp_min(NEAR_EPS)
    x, y = p_cam[:, 0], p_cam[:, 1]
    fx, fy = cam.K[0, 0], cam.K[1, 1]
    skew = cam.K[0, 1]
    zero = torch.zeros_like(z)
    # d(u,v)/d(p_cam) at the mean
    j0 = torch.stack([fx / z, skew / z, -(fx * x + skew * y) / z**2], dim=-1)
    j1 = torch.stack([zero, fy / z, -fy * y / z**2], dim=-1)
    J = torch.stack([j0, j1], dim=-2)                     # (N,2,3)
    R = quat_to_rotmat(quats)                             # (N,3,3)
    cov3d = R @ torch.diag_embed(scales**2) @ R.transpose(-1, -2)
    M = J @ cam.R.unsqueeze(0)                            # (N,2,3)
    cov2d = M @ cov3d @ M.transpose(-1, -2)
    if regularize:
        cov2d = cov2d + COV2D_FLOOR * torch.eye(2, dtype=cov2d.dtype)
    return means2d, cov2d, depth, valid


def rasterize(
    splats: Splats2D,
    cam: Camera,
    background: Tensor,
    background_depth: float = 0.0,
    cull_sigma: float = 3.0,
) -> RenderOutput:
    """Front-to-back alpha compositing of 2D splats over a solid background.

    Empty input renders pure background with depth = background_depth and
    zero mask. Input order does not matter: splats are depth-sorted with ties
    broken by the stable original index.
    """
    H, W = cam.height, cam.width
    dtype = background.dtype
    n = len(splats)
    if n == 0:
        image = background.expand(H, W, 3).clone()
        depth = torch.full((H, W), background_depth, dtype=dtype)
        zeros = torch.zeros(H, W, dtype=dtype)
        return RenderOutput(image=image, depth=depth, mask=zeros, alpha=zeros.clone())

    order = torch.argsort(splats.depth, stable=True)
    mean2d = splats.means2d[order]
    cov = splats.cov2d[order]

    # inverse conic per splat, then one packed per-splat field matrix so each
    # pair needs a single gather
    a = cov[:, 0, 0]
    b = cov[:, 0, 1]
    c = cov[:, 1, 1]
    det = (a * c - b**2).clamp_min(1e-12)
    fields = torch.cat(
        [
            mean2d,                                   # 0:2
            (c / det).unsqueeze(-1),                  # 2 conic_a
            (b / det).unsqueeze(-1),                  # 3 conic_b
            (a / det).unsqueeze(-1),                  # 4 conic_c
            splats.depth[order].unsqueeze(-1),        # 5
            splats.opacity[order].unsqueeze(-1),      # 6
            splats.color[order],                      # 7:10
            splats.is_dynamic[order].to(dtype).unsqueeze(-1),  # 10
        ],
        dim=-1,
    )

    with torch.no_grad():
        lam_max = 0.5 * (a + c) + torch.sqrt(0.25 * (a - c) ** 2 + b**2)
        radius = torch.ceil(cull_sigma * torch.sqrt(lam_max.clamp_min(0)))
        radius = radius.clamp(min=1, max=float(max(H, W)))
        x0 = (mean2d[:, 0] - radius).floor().clamp(0, W - 1).long()
        x1 = (mean2d[:, 0] + radius).ceil().clamp(0, W - 1).long()
        y0 = (mean2d[:, 1] - radius).floor().clamp(0, H - 1).long()
        y1 = (mean2d[:, 1] + radius).ceil().clamp(0, H - 1).long()
        on_screen = (
            (mean2d[:, 0] + radius >= 0)
            & (mean2d[:, 0] - radius <= W - 1)
            & (mean2d[:, 1] + radius >= 0)
            & (mean2d[:, 1] - radius <= H - 1)
        )
        bw = (x1 - x0 + 1).clamp_min(0)
        bh = (y1 - y0 + 1).clamp_min(0)
        counts = torch.where(on_screen, bw * bh, torch.zeros_like(bw))
        total = int(counts.sum())
        if total == 0:
            image = background.expand(H, W, 3).clone()
            depth = torch.full((H, W), background_depth, dtype=dtype)
            zeros = torch.zeros(H, W, dtype=dtype)
            return RenderOutput(image=image, depth=depth, mask=zeros, alpha=zeros.clone())
        pair_splat = torch.repeat_interleave(torch.arange(n), counts)
        csum = torch.cumsum(counts, 0)
        offs = torch.arange(total) - (csum - counts).repeat_interleave(counts)
        bw_p = bw[pair_splat]
        px = x0[pair_splat] + offs % bw_p
        py = y0[pair_splat] + offs // bw_p
        pixel_id = py * W + px
        # group pairs by pixel, preserving depth order inside each pixel
        # (pair_splat is the depth rank because splats were pre-sorted)
        perm = torch.argsort(pixel_id * n + pair_splat)
        pix_s = pixel_id[perm]
        pair_s = pair_splat[perm]
        dx = px[perm].to(dtype)
        dy = py[perm].to(dtype)

    f = fields.index_select(0, pair_s)
    dx = dx - f[:, 0]
    dy = dy - f[:, 1]
    power = -0.5 * (f[:, 2] * dx**2 - 2 * f[:, 3] * dx * dy + f[:, 4] * dy**2)
    alpha_s = (f[:, 6] * torch.exp(power)).clamp(max=ALPHA_MAX)

    log1m = torch.log1p(-alpha_s)
    cs = torch.cumsum(log1m, dim=0)
    cs_excl = cs - log1m
    with torch.no_grad():
        first = torch.ones_like(pix_s, dtype=torch.bool)
        first[1:] = pix_s[1:] != pix_s[:-1]
        first_idx = torch.nonzero(first, as_tuple=False).squeeze(1)
        seg_id = torch.cumsum(first.long(), dim=0) - 1
    log_T = cs_excl - cs_excl.index_select(0, first_idx).index_select(0, seg_id)
    weight = alpha_s * torch.exp(log_T)

    flat_zeros = torch.zeros(H * W, dtype=dtype)
    accum = flat_zeros.index_add(0, pix_s, weight)
    mask_acc = flat_zeros.index_add(0, pix_s, weight * f[:, 10])
    depth_num = flat_zeros.index_add(0, pix_s, weight * f[:, 5])
    img_flat = torch.zeros(H * W, 3, dtype=dtype).index_add(
        0, pix_s, weight.unsqueeze(-1) * f[:, 7:10]
    )

    # total transmittance = exp(sum of log(1-alpha)) per pixel; uncovered
    # pixels sum to 0 and get exactly 1
    t_final = torch.exp(flat_zeros.index_add(0, pix_s, log1m))
    img_flat = img_flat + t_final.unsqueeze(-1) * background.unsqueeze(0)

    depth_flat = torch.where(
        accum < MIN_ACCUM_ALPHA,
        torch.as_tensor(background_depth, dtype=dtype),
        depth_num / accum.clamp_min(MIN_ACCUM_ALPHA),
    )
    return RenderOutput(
        image=img_flat.view(H, W, 3),
        depth=depth_flat.view(H, W),
        mask=mask_acc.view(H, W),
        alpha=accum.view(H, W),
    )


def render_scene(
    scene: GaussianScene,
    cam: Camera,
    t: int | None = None,
    background: Tensor | None = None,
    background_depth: float = 0.0,
    cull_sigma: float = 3.0,
) -> RenderOutput:
    """Pose the scene at frame t (default: the camera's own timestamp),
    project, cull and composite."""
    if t is None:
        t = cam.frame
    means, quats, scales, opac, colors, is_dyn = scene.gather_frame(t)
    if background is None:
        background = torch.zeros(3, dtype=means.dtype)
    means2d, cov2d, depth, valid = splat_project(means, quats, scales, cam)
    splats = Splats2D(
        means2d=means2d[valid],
        cov2d=cov2d[valid],
        depth=depth[valid],
        opacity=opac[valid],
        color=colors[valid],
        is_dynamic=is_dyn[valid],
    )
    return rasterize(splats, cam, background, background_depth, cull_sigma)
