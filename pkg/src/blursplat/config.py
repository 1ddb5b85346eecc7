"""Training configuration: loss weights, staged schedule, densification and
model settings, with JSON round-tripping for every field."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class LossWeights:
    beta: float = 0.2              # SSIM share of the reconstruction loss
    lambda_depth: float = 0.075
    lambda_mask: float = 0.075
    smooth_basis: float = 0.1
    smooth_traj: float = 0.1
    sparsity_scale: float = 5.0

    def validate(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be nonnegative")


@dataclass
class Schedule:
    total_iterations: int = 40_000
    densify_iteration: int = 2_500
    unseen_start: int = 3_000
    unseen_interval: int = 5
    blur_start: int = 3_500
    sparsity_start: int = 5_500
    lr_means_init: float = 1.6e-4
    lr_means_final: float = 1.6e-6
    lr_scales: float = 5e-3
    lr_rotations: float = 1e-3
    lr_opacity: float = 5e-2
    lr_colors: float = 2.5e-3
    lr_motion_coeffs: float = 1e-2
    lr_motion_bases: float = 1.6e-4
    lr_bpnet: float = 5e-4

    def validate(self):
        if not (0 < self.densify_iteration < self.blur_start < self.sparsity_start <= self.total_iterations):
            raise ValueError(
                "schedule must satisfy 0 < densify < blur_start < sparsity_start <= total"
            )
        if self.unseen_interval < 1:
            raise ValueError("unseen_interval must be >= 1")


@dataclass
class DensifyConfig:
    pixels_per_frame: int = 256
    use_rendered_depth: bool = False   # ablation flag; default is dataset depth

    def validate(self):
        if self.pixels_per_frame <= 0:
            raise ValueError("pixels_per_frame must be positive")


@dataclass
class ModelConfig:
    num_bases: int = 2
    kernel_size: int = 9
    kernel_init_sigma: float | None = 1.0   # None = uniform initial kernel
    embed_dim: int = 16
    num_freqs: int = 4
    feature_width: int = 64
    use_skip: bool = True
    cull_sigma: float = 3.0
    static_init_count: int = 1400
    dynamic_init_count: int = 350
    init_opacity: float = 0.3

    def validate(self):
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ValueError("kernel_size must be odd and positive")
        if self.num_bases < 1:
            raise ValueError("num_bases must be >= 1")


@dataclass
class TrainConfig:
    schedule: Schedule = field(default_factory=Schedule)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    densify: DensifyConfig = field(default_factory=DensifyConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    seed: int = 0
    deterministic: bool = True
    blur_enabled: bool = True
    unseen_enabled: bool = True
    eval_interval: int = 500
    checkpoint_interval: int = 0    # 0 = final checkpoint only
    log_every: int = 1

    def validate(self):
        self.schedule.validate()
        self.loss_weights.validate()
        self.densify.validate()
        self.model.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        def build(tp, sub):
            kwargs = dict(sub)
            unknown = set(kwargs) - {f.name for f in dataclasses.fields(tp)}
            if unknown:
                raise ValueError(f"unknown {tp.__name__} fields: {sorted(unknown)}")
            return tp(**kwargs)

        cfg = cls(
            schedule=build(Schedule, d.get("schedule", {})),
            loss_weights=build(LossWeights, d.get("loss_weights", {})),
            densify=build(DensifyConfig, d.get("densify", {})),
            model=build(ModelConfig, d.get("model", {})),
            **{
                k: v
                for k, v in d.items()
                if k not in ("schedule", "loss_weights", "densify", "model")
            },
        )
        cfg.validate()
        return cfg

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))
