"""Unseen-view synthesis around the training trajectory.

Parallel views interpolate between adjacent training cameras; perpendicular
views sidestep a training camera along the local normal to the trajectory
(within the plane spanned by the tangent and the camera-right axis) and
re-aim at the view's central depth point. Training-view color and mask are
forward-splatted into the new view with bilinear weights, a relative-depth
z-buffer, and weight normalization ("reversed bilinear sampling").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from .cameras import Camera, lookat_w2c, unproject
from .transforms import matrix_to_quat, quat_slerp, quat_to_rotmat

ZBUF_RELATIVE_TOL = 0.01


@dataclass
class UnseenView:
    camera: Camera
    color: Tensor   # (H,W,3) warped target
    mask: Tensor    # (H,W) warped motion mask
    valid: Tensor   # (H,W) bool, pixels that received any sample


def trajectory_scale(cameras: list[Camera]) -> float:
    """Bounding-box diagonal of the camera centers; the unit for offsets."""
    centers = torch.stack([c.center for c in cameras])
    return float((centers.max(0).values - centers.min(0).values).norm())


def make_parallel_view(cam_a: Camera, cam_b: Camera, alpha: float) -> Camera:
    """Interpolate between two adjacent training cameras: lerped center,
    slerped rotation, intrinsics copied, timestamp of the source view."""
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must lie strictly inside (0, 1)")
    center = (1 - alpha) * cam_a.center + alpha * cam_b.center
    q = quat_slerp(matrix_to_quat(cam_a.R), matrix_to_quat(cam_b.R), alpha)
    R = quat_to_rotmat(q)
    return Camera(
        K=cam_a.K.clone(),
        R=R,
        t=-R @ center,
        width=cam_a.width,
        height=cam_a.height,
        frame=cam_a.frame,
    )


def make_perpendicular_view(
    cam_s: Camera,
    trajectory: list[Camera],
    offset: float,
    look_depth: float,
    side: int = 1,
    scale: float | None = None,
    vertical: bool = False,
) -> Camera:
    """Sidestep cam_s perpendicular to the local trajectory direction.

    The normal is the camera-right axis projected orthogonal to the tangent
    (horizontal sidestep); a lateral-tracking camera whose right axis runs
    along the tangent falls back to the projected down axis, and a stationary
    camera to camera-right. `vertical=True` swaps the primary axis to
    camera-down. `offset` is a fraction of the trajectory bounding-box
    diagonal (pass `scale` to override). The camera is re-aimed so the source
    view's central depth point (`look_depth` along the source forward axis)
    stays centered.
    """
    if len(trajectory) < 2:
        raise ValueError("need at least two trajectory cameras")
    idx = next((i for i, c in enumerate(trajectory) if c is cam_s), None)
    if idx is None:
        idx = min(
            range(len(trajectory)),
            key=lambda i: float((trajectory[i].center - cam_s.center).norm()),
        )
    lo, hi = max(idx - 1, 0), min(idx + 1, len(trajectory) - 1)
    tangent = trajectory[hi].center - trajectory[lo].center
    primary, secondary = cam_s.R[0], cam_s.R[1]
    if vertical:
        primary, secondary = secondary, primary
    if float(tangent.norm()) < 1e-9:
        normal = primary.clone()
    else:
        tangent = tangent / tangent.norm()
        normal = primary - (primary @ tangent) * tangent
        if float(normal.norm()) < 1e-6:
            normal = secondary - (secondary @ tangent) * tangent
        if float(normal.norm()) < 1e-6:
            normal = primary.clone()
    normal = normal / normal.norm().clamp_min(1e-12)
    if scale is None:
        scale = trajectory_scale(trajectory)
    center = cam_s.center + float(side) * offset * scale * normal
    target = cam_s.center + look_depth * cam_s.R[2]
    R, t = lookat_w2c(center, target, down=cam_s.R[1])
    return Camera(
        K=cam_s.K.clone(), R=R, t=t, width=cam_s.width, height=cam_s.height, frame=cam_s.frame
    )


def reproject_pixels(
    depth_s: Tensor, cam_s: Camera, cam_t: Camera
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Map every source pixel into the target view.

    Returns (u_t, v_t, z_t) as flat float64 arrays over the H*W source grid.
    """
    H, W = depth_s.shape
    vv, uu = torch.meshgrid(
        torch.arange(H, dtype=torch.float64), torch.arange(W, dtype=torch.float64), indexing="ij"
    )
    pix = torch.stack([uu.reshape(-1), vv.reshape(-1)], dim=-1)
    d = depth_s.reshape(-1).to(torch.float64).clamp_min(1e-9)
    world = unproject(pix, d, cam_s.to(torch.float64))
    p_cam = cam_t.to(torch.float64).world_to_cam(world)
    z = p_cam[:, 2]
    zs = torch.where(z > 1e-9, z, torch.ones_like(z))
    Kt = cam_t.K.to(torch.float64)
    u = (Kt[0, 0] * p_cam[:, 0] + Kt[0, 1] * p_cam[:, 1]) / zs + Kt[0, 2]
    v = Kt[1, 1] * p_cam[:, 1] / zs + Kt[1, 2]
    return u.numpy(), v.numpy(), z.numpy()


def warp_to_unseen(
    color_s: Tensor, mask_s: Tensor, depth_s: Tensor, cam_s: Camera, cam_t: Camera
) -> UnseenView:
    """Forward-splat source color/mask into the target camera.

    Each source pixel lands on its 4 bilinear neighbors; per target pixel only
    samples within 1% relative depth of the nearest warped depth survive, and
    the kept weights are normalized. Uncovered pixels are flagged V=0.
    """
    H, W = depth_s.shape
    u, v, z = reproject_pixels(depth_s, cam_s, cam_t)
    front = z > 1e-9
    cols = color_s.reshape(-1, 3).numpy().astype(np.float64)
    msk = mask_s.reshape(-1).numpy().astype(np.float64)

    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    fu = u - u0
    fv = v - v0

    Ht, Wt = cam_t.height, cam_t.width
    zmin = np.full(Ht * Wt, np.inf)
    corners = []
    for du, dv, w in (
        (0, 0, (1 - fu) * (1 - fv)),
        (1, 0, fu * (1 - fv)),
        (0, 1, (1 - fu) * fv),
        (1, 1, fu * fv),
    ):
        ui = u0 + du
        vi = v0 + dv
        # negligible corner weights must not seed the z-buffer
        ok = front & (ui >= 0) & (ui < Wt) & (vi >= 0) & (vi < Ht) & (w > 1e-9)
        tgt = (vi * Wt + ui)[ok]
        corners.append((tgt, w[ok], ok))
        np.minimum.at(zmin, tgt, z[ok])

    acc_w = np.zeros(Ht * Wt)
    acc_c = np.zeros((Ht * Wt, 3))
    acc_m = np.zeros(Ht * Wt)
    for tgt, w, ok in corners:
        keep = z[ok] <= zmin[tgt] * (1 + ZBUF_RELATIVE_TOL)
        tgt = tgt[keep]
        w = w[keep]
        np.add.at(acc_w, tgt, w)
        np.add.at(acc_c, tgt, w[:, None] * cols[ok][keep])
        np.add.at(acc_m, tgt, w * msk[ok][keep])

    valid = acc_w > 1e-12
    norm = np.where(valid, acc_w, 1.0)
    color_t = acc_c / norm[:, None]
    mask_t = acc_m / norm
    return UnseenView(
        camera=cam_t,
        color=torch.from_numpy(color_t.reshape(Ht, Wt, 3)).to(color_s.dtype),
        mask=torch.from_numpy(mask_t.reshape(Ht, Wt)).to(color_s.dtype),
        valid=torch.from_numpy(valid.reshape(Ht, Wt)),
    )
