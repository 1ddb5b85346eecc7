"""Dynamic Gaussian splatting with joint per-pixel blur estimation.

Reconstructs a sharp dynamic scene (static + rigidly moving Gaussians with
SE(3) motion bases) from blurred monocular observations by synthesizing the
blur — per-pixel kernels plus blend intensity from a small prediction
network — and supervising the re-blurred render against the inputs.
"""

from .blur import (
    BlurField,
    BlurModel,
    BlurPredictionNet,
    SceneFeatureExtractor,
    blend,
    blur_center_weight,
    convolve_blur,
    sparsity_loss,
    synthesize_blur,
)
from .cameras import Camera, lookat_w2c, project, unproject
from .checkpoint import load_scene, load_tensors, save_scene, save_tensors
from .config import DensifyConfig, LossWeights, ModelConfig, Schedule, TrainConfig
from .densify import densify_scene, lift_to_observation, remap_to_canonical, sample_dynamic_pixels
from .losses import geometry_loss, reconstruction_loss, smoothing_loss, ssim, total_loss
from .metrics import EvalReport, evaluate_sequence, kernel_metrics, psnr
from .optim import Adam, expon_lr
from .render import RenderOutput, Splats2D, rasterize, render_scene, splat_project
from .scene import (
    GaussianParams,
    GaussianScene,
    MotionBases,
    compose_motion,
    deform_gaussians,
    make_gaussian_params,
)
from .synth import (
    KernelSpec,
    SyntheticSequence,
    build_scene,
    blur_sequence,
    generate_sequence,
    load_dataset,
    make_defocus_kernel,
    make_motion_kernel,
    save_dataset,
)
from .train import Trainer, TrainResult, init_scene_from_sequence, train, training_loss
from .unseen import (
    UnseenView,
    make_parallel_view,
    make_perpendicular_view,
    trajectory_scale,
    warp_to_unseen,
)

__version__ = "0.1.0"
