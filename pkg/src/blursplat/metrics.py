"""Quality metrics (PSNR, SSIM, kernel PSNR / KL divergence) and the
structured evaluation report."""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor

from . import losses

KL_EPS = 1e-8


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x.detach().to(torch.float64)
    return torch.as_tensor(np.asarray(x), dtype=torch.float64)


def psnr(a, b) -> float:
    """10*log10(1/MSE) on unit range; +inf sentinel for identical inputs."""
    ta, tb = _as_tensor(a), _as_tensor(b)
    if ta.shape != tb.shape:
        raise ValueError(f"shape mismatch {tuple(ta.shape)} vs {tuple(tb.shape)}")
    mse = float(((ta - tb) ** 2).mean())
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(1.0 / mse)


def ssim(a, b) -> float:
    """Windowed SSIM (11x11 Gaussian, sigma 1.5) on unit-range images."""
    return float(losses.ssim(_as_tensor(a), _as_tensor(b)))


def kernel_metrics(
    estimated: Tensor, gt_kernel: Tensor, eval_mask: Tensor | None = None, eps: float = KL_EPS
) -> tuple[float, float]:
    """Compare per-pixel kernels against ground truth.

    estimated: (H,W,K*K) field or a single kernel ((K,K) or (K*K,)).
    gt_kernel: single (K,K) kernel broadcast to all pixels, or an (H,W,K*K)
    field. Kernel PSNR treats taps as an image on [0,1]; KL is
    sum p_gt*log(p_gt/(p_est+eps)) averaged over evaluated pixels. With
    `eval_mask`, only pixels where it exceeds 0 are evaluated.
    """
    est = _as_tensor(estimated)
    gt = _as_tensor(gt_kernel)
    if est.dim() == 2 and est.shape[0] == est.shape[1]:
        est = est.reshape(1, 1, -1)
    elif est.dim() == 1:
        est = est.reshape(1, 1, -1)
    if gt.dim() == 2:
        gt = gt.reshape(-1)
    if gt.dim() == 1:
        gt = gt.expand(est.shape[0], est.shape[1], gt.shape[0])
    if est.shape[-1] != gt.shape[-1]:
        raise ValueError("kernel sizes differ")
    if eval_mask is not None:
        keep = _as_tensor(eval_mask) > 0
        est = est[keep]
        gt = gt[keep]
    else:
        est = est.reshape(-1, est.shape[-1])
        gt = gt.reshape(-1, gt.shape[-1])
    if est.shape[0] == 0:
        return float("nan"), float("nan")
    mse = float(((est - gt) ** 2).mean())
    p = 10.0 * math.log10(1.0 / mse) if mse > 0 else float("inf")
    ratio = torch.where(gt > 0, gt * torch.log(gt / (est + eps)), torch.zeros_like(gt))
    kl = float(ratio.sum(dim=-1).mean())
    return p, kl


@dataclass
class EvalReport:
    preset: str
    frames: list = field(default_factory=list)        # per-frame {frame, psnr, ssim}
    eval_views: list = field(default_factory=list)    # per held-out view {frame, psnr, ssim}
    mean_psnr: float = float("nan")
    mean_ssim: float = float("nan")
    mean_eval_psnr: float = float("nan")
    mean_eval_ssim: float = float("nan")
    kernel_psnr: float | None = None
    kernel_kl: float | None = None
    lpips: None = None            # not computed: needs a pretrained perceptual net
    timings: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


def evaluate_sequence(scene, blur_model, seq, cull_sigma: float = 3.0) -> EvalReport:
    """Render the trained scene against the sequence's ground truth."""
    from .render import render_scene

    report = EvalReport(
        preset=seq.preset,
        notes={
            "kernel_psnr_convention": "taps treated as an image on [0,1]",
            "lpips": "absent by design (no external perceptual network)",
        },
    )
    t0 = time.perf_counter()
    kernel = seq.kernel_spec.to_kernel()
    if (
        kernel is not None
        and blur_model is not None
        and blur_model.kernel_size != kernel.shape[0]
    ):
        report.notes["kernel_metrics"] = (
            f"skipped: model kernel {blur_model.kernel_size} vs GT {kernel.shape[0]}"
        )
        kernel = None
    kp, kk = [], []
    with torch.no_grad():
        for t in range(seq.num_frames):
            out = render_scene(
                scene, seq.cameras[t], t,
                background=seq.background, background_depth=seq.background_depth,
                cull_sigma=cull_sigma,
            )
            img = out.image.clamp(0, 1)
            report.frames.append(
                {"frame": t, "psnr": psnr(img, seq.sharp[t]), "ssim": ssim(img, seq.sharp[t])}
            )
            out_e = render_scene(
                scene, seq.eval_cameras[t], t,
                background=seq.background, background_depth=seq.background_depth,
                cull_sigma=cull_sigma,
            )
            img_e = out_e.image.clamp(0, 1)
            report.eval_views.append(
                {"frame": t, "psnr": psnr(img_e, seq.eval_sharp[t]), "ssim": ssim(img_e, seq.eval_sharp[t])}
            )
            if blur_model is not None and kernel is not None:
                fld = blur_model(out, t)
                p, k = kernel_metrics(fld.kernels, kernel)
                kp.append(p)
                kk.append(k)
    report.mean_psnr = float(np.mean([f["psnr"] for f in report.frames]))
    report.mean_ssim = float(np.mean([f["ssim"] for f in report.frames]))
    report.mean_eval_psnr = float(np.mean([f["psnr"] for f in report.eval_views]))
    report.mean_eval_ssim = float(np.mean([f["ssim"] for f in report.eval_views]))
    if kp:
        report.kernel_psnr = float(np.mean(kp))
        report.kernel_kl = float(np.mean(kk))
    report.timings["evaluate_s"] = time.perf_counter() - t0
    return report
