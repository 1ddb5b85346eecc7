"""Scene parameterization: static/dynamic Gaussians and SE(3) motion bases.

Gaussians are stored struct-of-arrays with unconstrained parameters; the
activated views (unit quaternions, positive scales, [0,1] opacity/color) are
what every consumer sees. Dynamic Gaussians carry a motion-coefficient row
that blends a shared table of per-frame rigid motion bases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import Tensor

from .transforms import blend_quaternions, quat_multiply, quat_normalize, quat_to_rotmat


def inverse_sigmoid(x: Tensor) -> Tensor:
    return torch.log(x / (1 - x))


@dataclass
class GaussianParams:
    """One block of Gaussians (static or dynamic), raw parameter tensors."""

    means: Tensor           # (N,3)
    rotations: Tensor       # (N,4) quats, normalized on read
    log_scales: Tensor      # (N,3)
    opacity_logits: Tensor  # (N,)
    color_logits: Tensor    # (N,3)
    motion_logits: Tensor | None = None  # (N,B) dynamic only

    def __len__(self) -> int:
        return self.means.shape[0]

    @property
    def quats(self) -> Tensor:
        return quat_normalize(self.rotations)

    @property
    def scales(self) -> Tensor:
        return torch.exp(self.log_scales)

    @property
    def opacities(self) -> Tensor:
        return torch.sigmoid(self.opacity_logits)

    @property
    def colors(self) -> Tensor:
        return torch.sigmoid(self.color_logits)

    @property
    def motion_weights(self) -> Tensor:
        if self.motion_logits is None:
            raise ValueError("static Gaussians have no motion coefficients")
        return F.softmax(self.motion_logits, dim=-1)

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        out = {
            f"{prefix}.means": self.means,
            f"{prefix}.rotations": self.rotations,
            f"{prefix}.log_scales": self.log_scales,
            f"{prefix}.opacity_logits": self.opacity_logits,
            f"{prefix}.color_logits": self.color_logits,
        }
        if self.motion_logits is not None:
            out[f"{prefix}.motion_logits"] = self.motion_logits
        return out


def make_gaussian_params(
    means,
    rotations=None,
    scales=None,
    opacities=None,
    colors=None,
    motion_logits=None,
    dtype=torch.float32,
) -> GaussianParams:
    """Build a parameter block from activated values (scales/opacity/color in
    natural units); fills 3DGS-style defaults for anything omitted."""
    means = torch.as_tensor(means, dtype=dtype)
    n = means.shape[0]
    if rotations is None:
        rotations = torch.zeros(n, 4, dtype=dtype)
        rotations[:, 0] = 1.0
    else:
        rotations = torch.as_tensor(rotations, dtype=dtype)
    if scales is None:
        scales = torch.full((n, 3), 0.05, dtype=dtype)
    else:
        scales = torch.as_tensor(scales, dtype=dtype).expand(n, 3).clone()
    if opacities is None:
        opacities = torch.full((n,), 0.5, dtype=dtype)
    else:
        opacities = torch.as_tensor(opacities, dtype=dtype).expand(n).clone()
    if colors is None:
        colors = torch.full((n, 3), 0.5, dtype=dtype)
    else:
        colors = torch.as_tensor(colors, dtype=dtype)
    opacities = opacities.clamp(1e-4, 1 - 1e-4)
    colors = colors.clamp(1e-4, 1 - 1e-4)
    if motion_logits is not None:
        motion_logits = torch.as_tensor(motion_logits, dtype=dtype)
    return GaussianParams(
        means=means,
        rotations=rotations,
        log_scales=torch.log(scales),
        opacity_logits=inverse_sigmoid(opacities),
        color_logits=inverse_sigmoid(colors),
        motion_logits=motion_logits,
    )


class MotionBases:
    """Per-frame rigid transforms for each basis, shared by all dynamic Gaussians.

    The canonical frame (t=0) is pinned to the identity by construction; free
    parameters exist only for frames 1..T-1.
    """

    def __init__(self, num_frames: int, num_bases: int, dtype=torch.float32):
        if num_frames < 1 or num_bases < 1:
            raise ValueError("need at least one frame and one basis")
        self.num_frames = num_frames
        self.num_bases = num_bases
        rot = torch.zeros(max(num_frames - 1, 0), num_bases, 4, dtype=dtype)
        rot[..., 0] = 1.0
        self.rot_params = rot
        self.transl_params = torch.zeros(max(num_frames - 1, 0), num_bases, 3, dtype=dtype)

    @property
    def dtype(self):
        return self.rot_params.dtype

    def rotations(self) -> Tensor:
        """(T, B, 4) unit quaternions, identity at frame 0."""
        ident = torch.zeros(1, self.num_bases, 4, dtype=self.dtype)
        ident[..., 0] = 1.0
        return torch.cat([ident, quat_normalize(self.rot_params)], dim=0)

    def translations(self) -> Tensor:
        zero = torch.zeros(1, self.num_bases, 3, dtype=self.dtype)
        return torch.cat([zero, self.transl_params], dim=0)

    def check_frame(self, t: int):
        if not (0 <= t < self.num_frames):
            raise IndexError(f"frame {t} outside [0, {self.num_frames})")

    def set_frame(self, t: int, quats: Tensor, transls: Tensor):
        self.check_frame(t)
        if t == 0:
            raise ValueError("frame 0 is pinned to the identity")
        with torch.no_grad():
            self.rot_params[t - 1] = quats
            self.transl_params[t - 1] = transls

    def tensors(self) -> dict[str, Tensor]:
        return {"bases.rot_params": self.rot_params, "bases.transl_params": self.transl_params}


def compose_motion(weights: Tensor, bases: MotionBases, t: int) -> tuple[Tensor, Tensor]:
    """Blend the per-frame bases into one rigid transform per coefficient row.

    weights: (N,B) simplex weights (softmax already applied). Translations
    blend linearly; rotations as the normalized weighted quaternion sum,
    sign-aligned to the first basis. Returns (quat (N,4), translation (N,3)).
    """
    bases.check_frame(t)
    if not torch.isfinite(weights).all():
        raise ValueError("non-finite motion coefficients")
    rot = bases.rotations()[t]      # (B,4)
    tr = bases.translations()[t]    # (B,3)
    q = blend_quaternions(weights, rot)
    return q, weights @ tr


def compose_motion_all_frames(weights: Tensor, bases: MotionBases) -> tuple[Tensor, Tensor]:
    """compose_motion vectorized over every frame: quats (T,N,4), transl (T,N,3)."""
    rot = bases.rotations()        # (T,B,4)
    tr = bases.translations()      # (T,B,3)
    sign = torch.where((rot * rot[:, :1]).sum(-1, keepdim=True) < 0, -1.0, 1.0)
    aligned = rot * sign
    q = torch.einsum("nb,tbi->tni", weights, aligned)
    q = quat_normalize(q)
    return q, torch.einsum("nb,tbj->tnj", weights, tr)


def deform_all_frames(means: Tensor, weights: Tensor, bases: MotionBases) -> Tensor:
    """Deformed means for every frame at once, shape (T,N,3)."""
    q, tr = compose_motion_all_frames(weights, bases)
    R = quat_to_rotmat(q)
    return torch.einsum("tnij,nj->tni", R, means) + tr


def deform_gaussians(
    means: Tensor, rotations: Tensor, weights: Tensor, bases: MotionBases, t: int
) -> tuple[Tensor, Tensor]:
    """Move canonical-frame poses to frame t: mu_t = R mu + tr, q_t = q_blend * q."""
    q, tr = compose_motion(weights, bases, t)
    R = quat_to_rotmat(q)
    means_t = torch.einsum("nij,nj->ni", R, means) + tr
    rot_t = quat_multiply(q, quat_normalize(rotations))
    return means_t, rot_t


@dataclass
class GaussianScene:
    """Full scene: static block, dynamic block, and the motion basis table."""

    static: GaussianParams
    dynamic: GaussianParams
    bases: MotionBases
    extras: dict = field(default_factory=dict)

    @property
    def num_frames(self) -> int:
        return self.bases.num_frames

    def dynamic_at(self, t: int) -> tuple[Tensor, Tensor]:
        """Deformed dynamic (means, quats) at frame t."""
        if len(self.dynamic) == 0:
            e = self.dynamic.means
            return e, self.dynamic.rotations
        return deform_gaussians(
            self.dynamic.means, self.dynamic.rotations, self.dynamic.motion_weights, self.bases, t
        )

    def gather_frame(self, t: int):
        """All Gaussians posed at frame t, packed for the rasterizer.

        Returns (means, quats, scales, opacities, colors, is_dynamic).
        """
        dyn_means, dyn_quats = self.dynamic_at(t)
        means = torch.cat([self.static.means, dyn_means], dim=0)
        quats = torch.cat([self.static.quats, quat_normalize(dyn_quats)], dim=0)
        scales = torch.cat([self.static.scales, self.dynamic.scales], dim=0)
        opac = torch.cat([self.static.opacities, self.dynamic.opacities], dim=0)
        colors = torch.cat([self.static.colors, self.dynamic.colors], dim=0)
        is_dyn = torch.cat(
            [
                torch.zeros(len(self.static), dtype=torch.bool),
                torch.ones(len(self.dynamic), dtype=torch.bool),
            ]
        )
        return means, quats, scales, opac, colors, is_dyn

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.static.tensors("static"))
        out.update(self.dynamic.tensors("dynamic"))
        out.update(self.bases.tensors())
        return out

    def requires_grad_(self, flag: bool = True) -> "GaussianScene":
        for p in self.parameters().values():
            p.requires_grad_(flag)
        return self

    def to_dtype(self, dtype: torch.dtype) -> "GaussianScene":
        def conv(gp: GaussianParams) -> GaussianParams:
            return GaussianParams(
                means=gp.means.detach().to(dtype),
                rotations=gp.rotations.detach().to(dtype),
                log_scales=gp.log_scales.detach().to(dtype),
                opacity_logits=gp.opacity_logits.detach().to(dtype),
                color_logits=gp.color_logits.detach().to(dtype),
                motion_logits=None
                if gp.motion_logits is None
                else gp.motion_logits.detach().to(dtype),
            )

        bases = MotionBases(self.bases.num_frames, self.bases.num_bases, dtype=dtype)
        bases.rot_params = self.bases.rot_params.detach().to(dtype)
        bases.transl_params = self.bases.transl_params.detach().to(dtype)
        return GaussianScene(conv(self.static), conv(self.dynamic), bases, dict(self.extras))

    def append_dynamic(self, new: GaussianParams) -> None:
        """Append Gaussians to the dynamic block (densification); existing rows
        are never mutated."""
        d = self.dynamic
        if new.motion_logits is None:
            raise ValueError("appended dynamic Gaussians need motion coefficients")
        with torch.no_grad():
            self.dynamic = GaussianParams(
                means=torch.cat([d.means.detach(), new.means]).requires_grad_(d.means.requires_grad),
                rotations=torch.cat([d.rotations.detach(), new.rotations]).requires_grad_(
                    d.rotations.requires_grad
                ),
                log_scales=torch.cat([d.log_scales.detach(), new.log_scales]).requires_grad_(
                    d.log_scales.requires_grad
                ),
                opacity_logits=torch.cat(
                    [d.opacity_logits.detach(), new.opacity_logits]
                ).requires_grad_(d.opacity_logits.requires_grad),
                color_logits=torch.cat([d.color_logits.detach(), new.color_logits]).requires_grad_(
                    d.color_logits.requires_grad
                ),
                motion_logits=torch.cat([d.motion_logits.detach(), new.motion_logits]).requires_grad_(
                    d.motion_logits.requires_grad
                ),
            )
