"""Quaternion and rigid-transform helpers.

Quaternions are stored (w, x, y, z). All functions are differentiable
torch ops and broadcast over leading batch dimensions.
"""

from __future__ import annotations

import torch
from torch import Tensor

_EPS = 1e-12


def quat_normalize(q: Tensor) -> Tensor:
    return q / q.norm(dim=-1, keepdim=True).clamp_min(_EPS)


def quat_to_rotmat(q: Tensor) -> Tensor:
    """Unit-norm the quaternion and build the 3x3 rotation, shape (..., 3, 3)."""
    q = quat_normalize(q)
    w, x, y, z = q.unbind(-1)
    row0 = torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], dim=-1)
    row1 = torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], dim=-1)
    row2 = torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], dim=-1)
    return torch.stack([row0, row1, row2], dim=-2)


def quat_multiply(a: Tensor, b: Tensor) -> Tensor:
    aw, ax, ay, az = a.unbind(-1)
    bw, bx, by, bz = b.unbind(-1)
    return torch.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        dim=-1,
    )


def quat_from_axis_angle(axis: Tensor, angle: Tensor) -> Tensor:
    axis = axis / axis.norm(dim=-1, keepdim=True).clamp_min(_EPS)
    half = 0.5 * angle
    return torch.cat([torch.cos(half).unsqueeze(-1), torch.sin(half).unsqueeze(-1) * axis], dim=-1)


def quat_log(q: Tensor) -> Tensor:
    """Rotation vector (axis * angle) of a unit quaternion, shape (..., 3).

    Stable at the identity: the norm is computed through a clamped square so
    its gradient vanishes (instead of NaN-ing) at zero vector parts, and the
    small-angle branch uses the 2*v/w expansion.
    """
    q = quat_normalize(q)
    # keep w >= 0 so the returned angle is in [0, pi]
    q = torch.where(q[..., :1] < 0, -q, q)
    w = q[..., 0]
    v = q[..., 1:]
    vnorm = torch.sqrt((v * v).sum(-1).clamp_min(1e-24))
    angle = 2.0 * torch.atan2(vnorm, w)
    small = vnorm < 1e-8
    scale = torch.where(small, 2.0 / w.clamp_min(_EPS), angle / vnorm)
    return scale.unsqueeze(-1) * v


def matrix_to_quat(R: Tensor) -> Tensor:
    """Rotation matrix (3,3) to unit quaternion (w,x,y,z), Shepperd's method."""
    m = R
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = torch.sqrt(tr + 1.0) * 2
        q = torch.stack(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = torch.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = torch.stack(
            [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        )
    elif m[1, 1] > m[2, 2]:
        s = torch.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = torch.stack(
            [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        )
    else:
        s = torch.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = torch.stack(
            [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        )
    return quat_normalize(q)


def quat_slerp(a: Tensor, b: Tensor, alpha: float) -> Tensor:
    """Spherical interpolation between two unit quaternions (sign-aligned)."""
    a = quat_normalize(a)
    b = quat_normalize(b)
    dot = (a * b).sum(-1, keepdim=True)
    b = torch.where(dot < 0, -b, b)
    dot = dot.abs().clamp(max=1.0)
    theta = torch.acos(dot)
    sin_theta = torch.sin(theta)
    if float(sin_theta.min()) < 1e-6:
        out = (1 - alpha) * a + alpha * b  # nearly parallel: lerp
    else:
        out = (torch.sin((1 - alpha) * theta) * a + torch.sin(alpha * theta) * b) / sin_theta
    return quat_normalize(out)


def blend_quaternions(weights: Tensor, quats: Tensor) -> Tensor:
    """Normalized weighted quaternion sum, signs aligned to the first entry.

    weights: (..., B), quats: (B, 4) unit quaternions. Returns (..., 4).
    """
    ref = quats[:1]
    sign = torch.where((quats * ref).sum(-1, keepdim=True) < 0, -1.0, 1.0)
    aligned = quats * sign
    q = weights @ aligned
    return quat_normalize(q)


def rigid_inverse_apply(q: Tensor, t: Tensor, points: Tensor) -> Tensor:
    """Apply the inverse of (R(q), t) to points: R^T (p - t)."""
    R = quat_to_rotmat(q)
    return torch.einsum("...ji,...j->...i", R, points - t)


def rigid_apply(q: Tensor, t: Tensor, points: Tensor) -> Tensor:
    R = quat_to_rotmat(q)
    return torch.einsum("...ij,...j->...i", R, points) + t
