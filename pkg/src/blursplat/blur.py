"""Unified blur synthesis: per-pixel kernel + intensity prediction, kernel
convolution, sharp/blurred blending, and the blur-aware sparsity constraint.

The predictor consumes three cues that correlate with blur: a learnable
per-view camera embedding, a feature map extracted from the rendered
image/depth/mask triple, and a positional encoding of pixel coordinates.
Kernels are simplex-constrained by a softmax over the tap axis; intensity is
a sigmoid. Everything is differentiable end to end, including the paths from
the blurred output back into the rendered inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .render import RenderOutput


@dataclass
class BlurField:
    """Per-pixel blur: kernels (H,W,K*K) on the simplex, intensity (H,W) in [0,1]."""

    kernels: Tensor
    intensity: Tensor

    @property
    def kernel_size(self) -> int:
        k = int(round(math.sqrt(self.kernels.shape[-1])))
        if k * k != self.kernels.shape[-1]:
            raise ValueError("kernel tap count is not a perfect square")
        return k

    @property
    def center_index(self) -> int:
        k = self.kernel_size
        if k % 2 == 0:
            raise ValueError("kernel size must be odd")
        return (k * k - 1) // 2


def positional_encoding(height: int, width: int, num_freqs: int = 4, dtype=torch.float32) -> Tensor:
    """(C,H,W) encoding of pixel coordinates normalized to [-1,1];
    C = 2 + 4*num_freqs."""
    ys = torch.linspace(-1.0, 1.0, height, dtype=dtype)
    xs = torch.linspace(-1.0, 1.0, width, dtype=dtype)
    vv, uu = torch.meshgrid(ys, xs, indexing="ij")
    chans = [uu, vv]
    for k in range(num_freqs):
        f = (2.0**k) * math.pi
        chans += [torch.sin(f * uu), torch.cos(f * uu), torch.sin(f * vv), torch.cos(f * vv)]
    return torch.stack(chans, dim=0)


class SceneFeatureExtractor(nn.Module):
    """Three 3x3 conv layers over the rendered (image, depth, mask) stack;
    ReLU after the first two, linear 64-channel output."""

    def __init__(self, width: int = 64):
        super().__init__()
        self.conv1 = nn.Conv2d(5, width, 3, padding=1)
        self.conv2 = nn.Conv2d(width, width, 3, padding=1)
        self.conv3 = nn.Conv2d(width, width, 3, padding=1)

    def forward(self, x: Tensor) -> Tensor:
        h = F.relu(self.conv1(x))
        h = F.relu(self.conv2(h))
        return self.conv3(h)


class BlurPredictionNet(nn.Module):
    """Four-layer per-pixel head on top of the scene features.

    Three hidden 1x1 conv layers (64-d, ReLU) with scene-feature skip
    connections added after the first two, then a final layer split into a
    softmax kernel head (K^2 channels) and a sigmoid intensity head. Head
    weights start at zero; the intensity starts at 0.5 and the kernel at the
    bias-encoded prior: uniform when init_kernel_sigma is None, otherwise an
    isotropic Gaussian of that width. The mild-Gaussian start matters at low
    resolutions, where a uniform K x K first kernel blurs so violently that
    optimization escapes by collapsing kernels to deltas.
    """

    def __init__(
        self,
        num_views: int,
        kernel_size: int = 9,
        embed_dim: int = 16,
        num_freqs: int = 4,
        width: int = 64,
        use_skip: bool = True,
        init_kernel_sigma: float | None = None,
    ):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd")
        self.num_views = num_views
        self.kernel_size = kernel_size
        self.embed_dim = embed_dim
        self.num_freqs = num_freqs
        self.use_skip = use_skip
        self.init_kernel_sigma = init_kernel_sigma
        pe_ch = 2 + 4 * num_freqs
        self.embedding = nn.Parameter(0.1 * torch.randn(num_views, embed_dim))
        self.conv1 = nn.Conv2d(embed_dim + width + pe_ch, width, 1)
        self.conv2 = nn.Conv2d(width, width, 1)
        self.conv3 = nn.Conv2d(width, width, 1)
        self.kernel_head = nn.Conv2d(width, kernel_size**2, 1)
        self.intensity_head = nn.Conv2d(width, 1, 1)
        nn.init.zeros_(self.kernel_head.weight)
        nn.init.zeros_(self.kernel_head.bias)
        nn.init.zeros_(self.intensity_head.weight)
        nn.init.zeros_(self.intensity_head.bias)
        if init_kernel_sigma is not None:
            from .synth import make_defocus_kernel

            taps = make_defocus_kernel(init_kernel_sigma, kernel_size).reshape(-1)
            with torch.no_grad():
                self.kernel_head.bias.copy_(torch.log(taps.clamp_min(1e-12)))

    def forward(self, f_scene: Tensor, view_index: int) -> BlurField:
        if not (0 <= view_index < self.num_views):
            raise IndexError(f"no embedding for view {view_index}")
        _, _, H, W = f_scene.shape
        emb = self.embedding[view_index].to(f_scene.dtype)
        emb = emb.view(1, -1, 1, 1).expand(1, self.embed_dim, H, W)
        pe = positional_encoding(H, W, self.num_freqs, dtype=f_scene.dtype).unsqueeze(0)
        h = F.relu(self.conv1(torch.cat([emb, f_scene, pe], dim=1)))
        if self.use_skip:
            h = h + f_scene
        h = F.relu(self.conv2(h))
        if self.use_skip:
            h = h + f_scene
        h = F.relu(self.conv3(h))
        logits = self.kernel_head(h)
        kernels = torch.softmax(logits, dim=1)[0].permute(1, 2, 0)
        intensity = torch.sigmoid(self.intensity_head(h))[0, 0]
        return BlurField(kernels=kernels, intensity=intensity)


class BlurModel(nn.Module):
    """Scene feature extractor + blur prediction net, wired for a render."""

    def __init__(
        self,
        num_views: int,
        kernel_size: int = 9,
        embed_dim: int = 16,
        num_freqs: int = 4,
        width: int = 64,
        depth_scale: float = 1.0,
        use_skip: bool = True,
        init_kernel_sigma: float | None = None,
    ):
        super().__init__()
        self.extractor = SceneFeatureExtractor(width)
        self.predictor = BlurPredictionNet(
            num_views, kernel_size, embed_dim, num_freqs, width, use_skip, init_kernel_sigma
        )
        self.depth_scale = depth_scale

    @property
    def kernel_size(self) -> int:
        return self.predictor.kernel_size

    def scene_features(self, render: RenderOutput) -> Tensor:
        x = torch.cat(
            [
                render.image.permute(2, 0, 1),
                (render.depth / self.depth_scale).unsqueeze(0),
                render.mask.unsqueeze(0),
            ],
            dim=0,
        ).unsqueeze(0)
        return self.extractor(x)

    def forward(self, render: RenderOutput, view_index: int) -> BlurField:
        return self.predictor(self.scene_features(render), view_index)


def convolve_blur(image: Tensor, kernels: Tensor) -> Tensor:
    """Per-pixel gather convolution: out(x) = sum_i image(x+d_i) * k_x(i).

    image (H,W,C), kernels (H,W,K*K) with taps in row-major window order.
    Borders replicate the image so simplex kernels stay energy-preserving.
    """
    H, W, C = image.shape
    if kernels.shape[0] != H or kernels.shape[1] != W:
        raise ValueError("kernel field does not match image dimensions")
    k2 = kernels.shape[-1]
    K = int(round(math.sqrt(k2)))
    if K * K != k2:
        raise ValueError("tap count must be a perfect square")
    if K % 2 == 0:
        raise ValueError("kernel size must be odd")
    pad = K // 2
    x = image.permute(2, 0, 1).unsqueeze(0)
    x = F.pad(x, (pad, pad, pad, pad), mode="replicate")
    patches = F.unfold(x, kernel_size=K).view(C, k2, H * W)
    kern = kernels.reshape(H * W, k2).transpose(0, 1)
    out = torch.einsum("ckp,kp->cp", patches, kern)
    return out.view(C, H, W).permute(1, 2, 0)


def blend(sharp: Tensor, blurred: Tensor, intensity: Tensor) -> Tensor:
    """Per-pixel mix: (1-m)*sharp + m*blurred."""
    m = intensity.unsqueeze(-1)
    return (1 - m) * sharp + m * blurred


def blur_center_weight(intensity: Tensor, scale: float = 5.0) -> Tensor:
    """Target center-tap weight c(m) = sigmoid(scale*(1-m)), gradients blocked
    through m."""
    return torch.sigmoid(scale * (1.0 - intensity.detach()))


def sparsity_loss(field: BlurField, scale: float = 5.0, pinned_intensity: Tensor | None = None) -> Tensor:
    """L1 tie between the kernel center tap and the blur-aware center weight,
    weighted per pixel by (1 - m) so it concentrates kernels where blur is
    mild and releases severely blurred pixels.

    The unweighted mean drives a measurable failure mode: under uniform severe
    blur m saturates at 1, the c(m)=0.5 target fights the reconstruction's
    (correctly dispersed) kernels, and the model escapes by collapsing kernels
    to deltas and re-absorbing the blur into the scene. The mild-region weight
    keeps the constraint exactly where its purpose applies.

    No gradient flows through the intensity: both the target and the weight
    use the detached value. `pinned_intensity` substitutes a fixed tensor for
    that detached value, which finite-difference checks need (the analytic
    gradient is the derivative of the intensity-pinned function).
    """
    center = field.kernels[..., field.center_index]
    m_sg = field.intensity.detach() if pinned_intensity is None else pinned_intensity
    c = torch.sigmoid(scale * (1.0 - m_sg))
    return ((1.0 - m_sg) * (c - center).abs()).mean()


def synthesize_blur(render: RenderOutput, field: BlurField) -> Tensor:
    """Full blur path: convolve the rendered image, then blend by intensity."""
    blurred = convolve_blur(render.image, field.kernels)
    return blend(render.image, blurred, field.intensity)
