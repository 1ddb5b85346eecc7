"""Pinhole camera model: world-to-camera rigid pose plus intrinsics.

Conventions (documented once, used everywhere):
  * camera frame: x right, y down, z forward (points are visible for z > 0)
  * pixel (u, v) = (column, row); pixel centers sit at integer coordinates,
    so the optical axis lands on (cx, cy)
  * extrinsics are world-to-camera: p_cam = R @ p_world + t
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch
from torch import Tensor

NEAR_EPS = 1e-4


@dataclass(eq=False)
class Camera:
    K: Tensor            # (3,3) upper-triangular intrinsics, pixels
    R: Tensor            # (3,3) world-to-camera rotation
    t: Tensor            # (3,) world-to-camera translation
    width: int
    height: int
    frame: int = 0       # timestamp (index into the sequence)

    def __post_init__(self):
        if abs(float(self.K[2, 2]) - 1.0) > 1e-9:
            raise ValueError("K[2,2] must be 1")
        if float(self.K[0, 0]) <= 0 or float(self.K[1, 1]) <= 0:
            raise ValueError("focal lengths must be positive")
        RtR = self.R.T @ self.R
        eye = torch.eye(3, dtype=self.R.dtype)
        if (RtR - eye).abs().max() > 1e-5 or abs(float(torch.det(self.R)) - 1.0) > 1e-5:
            raise ValueError("R is not a rotation")

    @property
    def center(self) -> Tensor:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    @property
    def fx(self) -> float:
        return float(self.K[0, 0])

    @property
    def fy(self) -> float:
        return float(self.K[1, 1])

    def to(self, dtype: torch.dtype) -> "Camera":
        return replace(self, K=self.K.to(dtype), R=self.R.to(dtype), t=self.t.to(dtype))

    def world_to_cam(self, points: Tensor) -> Tensor:
        return points @ self.R.T + self.t


def project(points: Tensor, cam: Camera) -> tuple[Tensor, Tensor, Tensor]:
    """Project world points (N,3) to pixels.

    Returns (pixels (N,2), depth (N,), valid (N,) bool); `valid` is False for
    points behind the near plane, which the caller is expected to cull.
    """
    p_cam = cam.world_to_cam(points)
    z = p_cam[..., 2]
    valid = z > NEAR_EPS
    zs = torch.where(valid, z, torch.ones_like(z))
    u = cam.K[0, 0] * p_cam[..., 0] / zs + cam.K[0, 2] + cam.K[0, 1] * p_cam[..., 1] / zs
    v = cam.K[1, 1] * p_cam[..., 1] / zs + cam.K[1, 2]
    return torch.stack([u, v], dim=-1), z, valid


def unproject(pixels: Tensor, depth: Tensor, cam: Camera) -> Tensor:
    """Lift pixels (N,2) with positive depths (N,) back to world points (N,3)."""
    if bool((depth <= 0).any()):
        raise ValueError("unproject requires positive depth")
    fx, fy = cam.K[0, 0], cam.K[1, 1]
    cx, cy = cam.K[0, 2], cam.K[1, 2]
    skew = cam.K[0, 1]
    y = (pixels[..., 1] - cy) / fy
    x = (pixels[..., 0] - cx - skew * y) / fx
    p_cam = torch.stack([x * depth, y * depth, depth], dim=-1)
    return (p_cam - cam.t) @ cam.R


def lookat_w2c(center: Tensor, target: Tensor, down: Tensor) -> tuple[Tensor, Tensor]:
    """Build (R, t) for a camera at `center` looking at `target`.

    `down` is the world direction the image's +v axis should follow; scenes in
    this package use world +y as down so an identity rotation is an upright
    camera looking along +z.
    """
    z = target - center
    z = z / z.norm().clamp_min(1e-12)
    x = torch.linalg.cross(down.to(z.dtype), z)
    x = x / x.norm().clamp_min(1e-12)
    y = torch.linalg.cross(z, x)
    R = torch.stack([x, y, z], dim=0)
    return R, -R @ center
