"""One-shot dynamic Gaussian densification.

Dynamic pixels sampled from observation-frame motion masks are lifted to 3D
with their depth and remapped into the canonical frame using the inverse of
the rigid transform carried by the nearest existing dynamic Gaussian. New
Gaussians inherit that neighbor's motion coefficients; densification only
appends, never mutates.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import Tensor

from .cameras import Camera, unproject
from .scene import GaussianScene, GaussianParams, compose_motion, inverse_sigmoid
from .transforms import rigid_inverse_apply


def sample_dynamic_pixels(
    mask: Tensor, depth: Tensor, n_px: int, rng: np.random.Generator
) -> tuple[Tensor, Tensor]:
    """Up to n_px distinct mask pixels with positive depth, seed-deterministic.

    Returns (pixels (M,2) as (u,v), depths (M,)); empty tensors when the mask
    has no usable pixels.
    """
    cand = torch.nonzero((mask > 0.5) & (depth > 0), as_tuple=False)  # (M, 2) as (row, col)
    if cand.shape[0] == 0:
        return torch.zeros(0, 2, dtype=torch.long), torch.zeros(0, dtype=depth.dtype)
    m = cand.shape[0]
    take = min(n_px, m)
    idx = rng.choice(m, size=take, replace=False)
    sel = cand[torch.from_numpy(np.sort(idx))]
    pixels = torch.stack([sel[:, 1], sel[:, 0]], dim=-1)  # (u, v)
    return pixels, depth[sel[:, 0], sel[:, 1]]


def lift_to_observation(pixels: Tensor, depths: Tensor, cam: Camera) -> Tensor:
    """Unproject sampled pixels into observation-frame world points."""
    return unproject(pixels.to(depths.dtype), depths, cam)


def remap_to_canonical(
    points: Tensor, scene: GaussianScene, t: int
) -> tuple[Tensor, Tensor]:
    """Pull observation-frame points back to the canonical frame.

    For each point, picks the existing dynamic Gaussian whose deformed mean is
    nearest (ties to the lowest index) and applies the inverse of that
    Gaussian's composed rigid transform. Returns (canonical points, neighbor
    indices).
    """
    if len(scene.dynamic) == 0:
        raise ValueError("remap_to_canonical needs at least one dynamic Gaussian")
    with torch.no_grad():
        deformed, _ = scene.dynamic_at(t)
        d2 = torch.cdist(points, deformed)
        nn_idx = torch.from_numpy(np.argmin(d2.numpy(), axis=1))
        q, tr = compose_motion(scene.dynamic.motion_weights, scene.bases, t)
        canonical = rigid_inverse_apply(q[nn_idx], tr[nn_idx], points)
    return canonical, nn_idx


def densify_scene(
    scene: GaussianScene,
    masks: Tensor,        # (T,H,W)
    depths: Tensor,       # (T,H,W)
    images: Tensor,       # (T,H,W,3) observation colors for initialization
    cameras: list[Camera],
    n_px: int,
    seed: int,
    init_opacity: float = 0.5,
) -> dict:
    """Run the one-shot densification across every observation frame.

    Appends the new Gaussians to the scene's dynamic block and returns an
    event report {added, per_frame}.
    """
    rng = np.random.default_rng(seed)
    dtype = scene.dynamic.means.dtype
    all_canon, all_nn, all_colors = [], [], []
    per_frame = []
    for t, cam in enumerate(cameras):
        pixels, dvals = sample_dynamic_pixels(masks[t], depths[t], n_px, rng)
        per_frame.append(int(pixels.shape[0]))
        if pixels.shape[0] == 0:
            continue
        pts = lift_to_observation(pixels, dvals.to(dtype), cam.to(dtype))
        canon, nn_idx = remap_to_canonical(pts, scene, t)
        all_canon.append(canon)
        all_nn.append(nn_idx)
        all_colors.append(images[t][pixels[:, 1], pixels[:, 0]].to(dtype))
    if not all_canon:
        return {"added": 0, "per_frame": per_frame}

    canon = torch.cat(all_canon)
    nn_idx = torch.cat(all_nn)
    colors = torch.cat(all_colors).clamp(1e-3, 1 - 1e-3)
    n_new = canon.shape[0]

    with torch.no_grad():
        if n_new > 1:
            d2 = torch.cdist(canon, canon)
            d2.fill_diagonal_(float("inf"))
            scale = float(d2.min(dim=1).values.mean())
        else:
            scale = float(scene.dynamic.scales.mean())
        scale = max(scale, 1e-4)
        rot = torch.zeros(n_new, 4, dtype=dtype)
        rot[:, 0] = 1.0
        new = GaussianParams(
            means=canon,
            rotations=rot,
            log_scales=torch.full((n_new, 3), float(np.log(scale)), dtype=dtype),
            opacity_logits=inverse_sigmoid(torch.full((n_new,), init_opacity, dtype=dtype)),
            color_logits=inverse_sigmoid(colors),
            motion_logits=scene.dynamic.motion_logits.detach()[nn_idx].clone(),
        )
    scene.append_dynamic(new)
    return {"added": n_new, "per_frame": per_frame}
