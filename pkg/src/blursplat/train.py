"""Joint optimization loop: staged schedule, unseen-view cadence, one-shot
densification, per-iteration metrics stream, and checkpointing.

Stage gates (iterations are 1-based):
  * blur path is the identity (compare the render directly) before blur_start
  * the sparsity term contributes only from sparsity_start on
  * every unseen_interval-th iteration from unseen_start swaps the training
    view for a generated unseen view supervised by warped color/mask only
  * densification runs exactly once, at densify_iteration
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

from .blur import BlurModel, sparsity_loss, synthesize_blur
from .cameras import Camera, unproject
from .checkpoint import save_scene
from .config import LossWeights, TrainConfig
from .densify import densify_scene
from .losses import geometry_loss, reconstruction_loss, smoothing_loss, total_loss
from .metrics import psnr
from .optim import Adam, expon_lr
from .render import render_scene
from .scene import GaussianScene, MotionBases
from .synth import SyntheticSequence
from .unseen import make_parallel_view, make_perpendicular_view, warp_to_unseen


def init_scene_from_sequence(
    seq: SyntheticSequence, num_bases: int, static_count: int, dynamic_count: int,
    init_opacity: float, seed: int, dtype=torch.float32,
) -> GaussianScene:
    """Depth-reprojection initialization: static Gaussians from background
    pixels across frames, dynamic ones from canonical-frame (t=0) mask pixels,
    and basis translations from the per-frame dynamic centroid track."""
    rng = np.random.default_rng(seed)
    T = seq.num_frames

    def sample_pixels(t: int, want_dynamic: bool, count: int):
        mask = seq.masks[t] > 0.5
        surf = seq.depth[t] < seq.background_depth - 1e-3
        sel = (mask if want_dynamic else ~mask) & surf
        cand = torch.nonzero(sel, as_tuple=False)
        if cand.shape[0] == 0:
            return None
        take = min(count, cand.shape[0])
        idx = rng.choice(cand.shape[0], size=take, replace=False)
        rc = cand[torch.from_numpy(np.sort(idx))]
        pix = torch.stack([rc[:, 1], rc[:, 0]], dim=-1).to(dtype)
        d = seq.depth[t][rc[:, 0], rc[:, 1]].to(dtype)
        col = seq.blurred[t][rc[:, 0], rc[:, 1]].to(dtype)
        return pix, d, col

    # static block: spread samples over a handful of frames
    frame_ids = list(range(0, T, max(1, T // 6)))
    per = max(1, static_count // len(frame_ids))
    s_pts, s_cols = [], []
    for t in frame_ids:
        got = sample_pixels(t, want_dynamic=False, count=per)
        if got is None:
            continue
        pix, d, col = got
        s_pts.append(unproject(pix, d, seq.cameras[t].to(dtype)))
        s_cols.append(col)
    s_pts = torch.cat(s_pts) if s_pts else torch.zeros(0, 3, dtype=dtype)
    s_cols = torch.cat(s_cols) if s_cols else torch.zeros(0, 3, dtype=dtype)

    # dynamic block from the canonical frame
    got = sample_pixels(0, want_dynamic=True, count=dynamic_count)
    if got is None:
        d_pts = torch.zeros(0, 3, dtype=dtype)
        d_cols = torch.zeros(0, 3, dtype=dtype)
    else:
        pix, d, col = got
        d_pts = unproject(pix, d, seq.cameras[0].to(dtype))
        d_cols = col

    def nn_scale(pts: Tensor, default: float = 0.05) -> Tensor:
        n = pts.shape[0]
        if n < 2:
            return torch.full((n, 3), default, dtype=dtype)
        d2 = torch.cdist(pts, pts)
        d2.fill_diagonal_(float("inf"))
        nn = d2.min(dim=1).values.clamp(1e-4, 1.0)
        return (0.7 * nn).unsqueeze(-1).expand(n, 3).clone()

    from .scene import make_gaussian_params

    static = make_gaussian_params(
        s_pts, scales=nn_scale(s_pts), opacities=init_opacity, colors=s_cols.clamp(1e-3, 1 - 1e-3),
        dtype=dtype,
    )
    motion_logits = 0.2 * rng.standard_normal((d_pts.shape[0], num_bases))
    dynamic = make_gaussian_params(
        d_pts, scales=nn_scale(d_pts), opacities=init_opacity, colors=d_cols.clamp(1e-3, 1 - 1e-3),
        motion_logits=motion_logits, dtype=dtype,
    )

    bases = MotionBases(T, num_bases, dtype=dtype)
    if d_pts.shape[0] > 0:
        centroids = []
        for t in range(T):
            got = sample_pixels(t, want_dynamic=True, count=256)
            if got is None:
                centroids.append(None)
                continue
            pix, d, _ = got
            centroids.append(unproject(pix, d, seq.cameras[t].to(dtype)).mean(dim=0))
        c0 = centroids[0]
        with torch.no_grad():
            for t in range(1, T):
                if c0 is None or centroids[t] is None:
                    continue
                shift = centroids[t] - c0
                for b in range(num_bases):
                    noise = torch.from_numpy(0.01 * rng.standard_normal(3)).to(dtype) if b else 0.0
                    bases.transl_params[t - 1, b] = shift + noise

    return GaussianScene(static=static, dynamic=dynamic, bases=bases)


def training_loss(
    scene: GaussianScene,
    blur_model: BlurModel | None,
    cam: Camera,
    view_index: int,
    target_color: Tensor,
    target_depth: Tensor,
    target_mask: Tensor,
    weights: LossWeights,
    *,
    blur_active: bool,
    spa_active: bool,
    unseen: bool = False,
    valid: Tensor | None = None,
    background: Tensor,
    background_depth: float,
    cull_sigma: float = 3.0,
    pinned_intensity: Tensor | None = None,
):
    """One full forward pass; returns (total, parts dict of scalar tensors)."""
    render = render_scene(
        scene, cam, cam.frame, background=background,
        background_depth=background_depth, cull_sigma=cull_sigma,
    )
    field = None
    if blur_active and blur_model is not None:
        field = blur_model(render, view_index)
        b_hat = synthesize_blur(render, field)
    else:
        b_hat = render.image
    v = valid if unseen else None
    rec = reconstruction_loss(b_hat, target_color, weights.beta, valid=v)
    geo = geometry_loss(
        render.depth, target_depth, render.mask, target_mask,
        weights.lambda_depth, weights.lambda_mask, unseen=unseen, valid=v,
    )
    smo = smoothing_loss(scene, weights.smooth_basis, weights.smooth_traj)
    spa = None
    if spa_active and field is not None:
        spa = sparsity_loss(field, weights.sparsity_scale, pinned_intensity)
    total = total_loss(rec, geo, smo, spa)
    parts = {"l_rec": rec, "l_geo": geo, "l_smo": smo}
    if spa is not None:
        parts["l_spa"] = spa
    return total, parts, render


@dataclass
class TrainResult:
    scene: GaussianScene
    blur_model: BlurModel
    out_dir: Path | None
    metrics_path: Path | None
    checkpoint_path: Path | None


class Trainer:
    def __init__(self, seq: SyntheticSequence, config: TrainConfig, out_dir=None):
        config.validate()
        self.seq = seq
        self.cfg = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)

        if config.deterministic:
            torch.set_num_threads(1)
        torch.manual_seed(config.seed)
        self.rng = np.random.default_rng(config.seed)

        m = config.model
        self.scene = init_scene_from_sequence(
            seq, m.num_bases, m.static_init_count, m.dynamic_init_count,
            m.init_opacity, config.seed,
        ).requires_grad_(True)
        self.blur_model = BlurModel(
            num_views=seq.num_frames,
            kernel_size=m.kernel_size,
            embed_dim=m.embed_dim,
            num_freqs=m.num_freqs,
            width=m.feature_width,
            depth_scale=seq.background_depth,
            use_skip=m.use_skip,
            init_kernel_sigma=m.kernel_init_sigma,
        )
        self.optimizer = self._build_optimizer()
        self._frame_queue: list[int] = []
        self._metrics_file = None
        self._densified = False

    # -- optimizer wiring ---------------------------------------------------

    def _build_optimizer(self) -> Adam:
        s = self.cfg.schedule
        means_lr = expon_lr(s.lr_means_init, s.lr_means_final, s.total_iterations)
        table = {
            "means": None,  # schedule-dependent
            "rotations": s.lr_rotations,
            "log_scales": s.lr_scales,
            "opacity_logits": s.lr_opacity,
            "color_logits": s.lr_colors,
            "motion_logits": s.lr_motion_coeffs,
        }

        def lr_fn(name: str, iteration: int) -> float:
            if name.startswith("bases."):
                return s.lr_motion_bases
            if name.startswith("bpnet."):
                return s.lr_bpnet
            leaf = name.split(".", 1)[1]
            if leaf == "means":
                return means_lr(iteration)
            return table[leaf]

        params = dict(self.scene.parameters())
        for k, v in self.blur_model.named_parameters():
            params[f"bpnet.{k}"] = v
        return Adam(
            params,
            lr_fn,
            unit_quaternion={"static.rotations", "dynamic.rotations", "bases.rot_params"},
        )

    # -- schedule helpers ---------------------------------------------------

    def _next_frame(self) -> int:
        if not self._frame_queue:
            self._frame_queue = list(self.rng.permutation(self.seq.num_frames))
        return int(self._frame_queue.pop())

    def _is_unseen_iter(self, it: int) -> bool:
        s = self.cfg.schedule
        return (
            self.cfg.unseen_enabled
            and it >= s.unseen_start
            and (it - s.unseen_start) % s.unseen_interval == 0
        )

    def _make_unseen(self, frame: int):
        seq = self.seq
        cams = seq.cameras
        if len(cams) < 2 or self.rng.random() < 0.5:
            # parallel: interpolate toward a neighbor
            if len(cams) < 2:
                src = frame
                cam_t = cams[frame]
            else:
                nb = frame + 1 if frame + 1 < len(cams) else frame - 1
                a, b = (frame, nb) if nb > frame else (nb, frame)
                alpha = float(np.clip(self.rng.uniform(), 1e-3, 1 - 1e-3))
                cam_t = make_parallel_view(cams[a], cams[b], alpha)
                cam_t.frame = frame
                src = frame
        else:
            off = float(self.rng.uniform(0.5, 1.0))
            side = 1 if self.rng.random() < 0.5 else -1
            look = float(seq.depth[frame].median())
            cam_t = make_perpendicular_view(
                cams[frame], cams, off, look_depth=look, side=side,
                scale=seq.trajectory_diagonal,
            )
            src = frame
        view = warp_to_unseen(
            seq.blurred[src], seq.masks[src], seq.depth[src], cams[src], cam_t
        )
        return view, src

    # -- logging ------------------------------------------------------------

    def _log(self, record: dict):
        if self._metrics_file is not None:
            self._metrics_file.write(json.dumps(record, sort_keys=True) + "\n")

    # -- main loop ------------------------------------------------------------

    def run(self, limit: int | None = None) -> TrainResult:
        cfg, seq = self.cfg, self.seq
        s = cfg.schedule
        total = s.total_iterations if limit is None else min(limit, s.total_iterations)
        metrics_path = checkpoint_path = None
        if self.out_dir is not None:
            metrics_path = self.out_dir / "metrics.jsonl"
            self._metrics_file = open(metrics_path, "w")

        t_start = time.perf_counter()
        try:
            for it in range(1, total + 1):
                frame = self._next_frame()
                unseen = self._is_unseen_iter(it)
                blur_active = cfg.blur_enabled and it >= s.blur_start
                spa_active = blur_active and it >= s.sparsity_start
                events: list[str] = []

                if unseen:
                    view, src = self._make_unseen(frame)
                    cam = view.camera
                    tgt_color, tgt_mask, valid = view.color, view.mask, view.valid
                    tgt_depth = seq.depth[src]
                    view_index = src
                else:
                    cam = seq.cameras[frame]
                    tgt_color, tgt_depth, tgt_mask = (
                        seq.blurred[frame], seq.depth[frame], seq.masks[frame],
                    )
                    valid = None
                    view_index = frame

                loss, parts, _ = training_loss(
                    self.scene, self.blur_model, cam, view_index,
                    tgt_color, tgt_depth, tgt_mask, cfg.loss_weights,
                    blur_active=blur_active, spa_active=spa_active,
                    unseen=unseen, valid=valid,
                    background=seq.background, background_depth=seq.background_depth,
                    cull_sigma=cfg.model.cull_sigma,
                )
                self.optimizer.zero_grad()
                loss.backward()
                skipped = self.optimizer.step(it)
                if skipped:
                    events.append("skipped_grad:" + ",".join(skipped))

                if it == s.densify_iteration and not self._densified:
                    self._densified = True
                    if len(self.scene.dynamic) > 0:
                        if cfg.densify.use_rendered_depth:
                            depths = self._rendered_depths()
                        else:
                            depths = seq.depth
                        report = densify_scene(
                            self.scene, seq.masks, depths, seq.blurred, seq.cameras,
                            cfg.densify.pixels_per_frame, cfg.seed,
                        )
                        for name, tensor in self.scene.dynamic.tensors("dynamic").items():
                            self.optimizer.rebind(name, tensor)
                        events.append(f"densify:+{report['added']}")
                    else:
                        events.append("densify:+0")

                record = {
                    "iter": it,
                    "view": "unseen" if unseen else "train",
                    "frame": frame,
                    "total": float(loss.detach()),
                    "blur_active": blur_active,
                    "spa_active": spa_active,
                }
                for k, v in parts.items():
                    record[k] = float(v.detach())
                if events:
                    record["events"] = events
                if cfg.eval_interval and it % cfg.eval_interval == 0:
                    record["psnr_holdout"] = self._holdout_psnr(frame)
                    self._assert_finite()
                if it % cfg.log_every == 0 or events:
                    self._log(record)
                if (
                    self.out_dir is not None
                    and cfg.checkpoint_interval
                    and it % cfg.checkpoint_interval == 0
                ):
                    p = self.out_dir / f"checkpoint_{it:07d}.bsc"
                    self._save_checkpoint(p, it)
        finally:
            if self._metrics_file is not None:
                self._metrics_file.flush()
                self._metrics_file.close()
                self._metrics_file = None

        if self.out_dir is not None:
            checkpoint_path = self.out_dir / "checkpoint_final.bsc"
            self._save_checkpoint(checkpoint_path, total)
            summary = {
                "iterations": total,
                "wall_clock_s": time.perf_counter() - t_start,
                "num_static": len(self.scene.static),
                "num_dynamic": len(self.scene.dynamic),
            }
            (self.out_dir / "train_summary.json").write_text(json.dumps(summary, sort_keys=True))
        return TrainResult(
            scene=self.scene,
            blur_model=self.blur_model,
            out_dir=self.out_dir,
            metrics_path=metrics_path,
            checkpoint_path=checkpoint_path,
        )

    def _rendered_depths(self) -> Tensor:
        outs = []
        with torch.no_grad():
            for t in range(self.seq.num_frames):
                outs.append(
                    render_scene(
                        self.scene, self.seq.cameras[t], t,
                        background=self.seq.background,
                        background_depth=self.seq.background_depth,
                        cull_sigma=self.cfg.model.cull_sigma,
                    ).depth
                )
        return torch.stack(outs)

    def _holdout_psnr(self, frame: int) -> float:
        with torch.no_grad():
            out = render_scene(
                self.scene, self.seq.eval_cameras[frame], frame,
                background=self.seq.background,
                background_depth=self.seq.background_depth,
                cull_sigma=self.cfg.model.cull_sigma,
            )
        return psnr(out.image.clamp(0, 1), self.seq.eval_sharp[frame])

    def _assert_finite(self):
        for name, p in self.optimizer.params.items():
            if not torch.isfinite(p).all():
                raise RuntimeError(f"non-finite parameter tensor: {name}")

    def _save_checkpoint(self, path: Path, iteration: int):
        save_scene(
            path, self.scene, self.blur_model,
            meta={"iteration": iteration, "seed": self.cfg.seed},
        )


def train(seq: SyntheticSequence, config: TrainConfig, out_dir=None, limit=None) -> TrainResult:
    return Trainer(seq, config, out_dir).run(limit=limit)
