"""Flat binary tensor archive for scene + network checkpoints.

Layout (all integers little-endian):
  bytes 0..3   magic b"BSPC"
  u32          format version (currently 1)
  u32          metadata length, then that many bytes of UTF-8 JSON
  u32          tensor count
  per tensor, in sorted name order:
    u16 name length, name bytes (UTF-8)
    u8  dtype code (0=float32, 1=float64, 2=int64, 3=uint8)
    u8  ndim, then ndim * u64 dims
    u64 payload byte count, then raw C-order little-endian data

Writes are atomic (temp file + rename) and deterministic: the same tensors
and metadata always produce byte-identical files.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
import torch
from torch import Tensor

MAGIC = b"BSPC"
VERSION = 1

_DTYPES = {0: np.float32, 1: np.float64, 2: np.int64, 3: np.uint8}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.int64): 2, np.dtype(np.uint8): 3}


def save_tensors(path, tensors: dict[str, Tensor], meta: dict | None = None):
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        names = sorted(tensors)
        f.write(struct.pack("<I", len(names)))
        for name in names:
            arr = tensors[name].detach().cpu().numpy()
            if arr.dtype not in _CODES:
                raise ValueError(f"unsupported dtype {arr.dtype} for tensor {name}")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", _CODES[arr.dtype]))
            f.write(struct.pack("<B", arr.ndim))
            for d in arr.shape:
                f.write(struct.pack("<Q", d))
            payload = np.ascontiguousarray(arr).tobytes()
            f.write(struct.pack("<Q", len(payload)))
            f.write(payload)
    os.replace(tmp, path)


def load_tensors(path) -> tuple[dict[str, Tensor], dict]:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ValueError(f"{path}: not a blursplat checkpoint")
        (version,) = struct.unpack("<I", f.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (meta_len,) = struct.unpack("<I", f.read(4))
        meta = json.loads(f.read(meta_len).decode("utf-8"))
        (count,) = struct.unpack("<I", f.read(4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (code,) = struct.unpack("<B", f.read(1))
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = tuple(struct.unpack("<Q", f.read(8))[0] for _ in range(ndim))
            (nbytes,) = struct.unpack("<Q", f.read(8))
            arr = np.frombuffer(f.read(nbytes), dtype=_DTYPES[code]).reshape(shape)
            tensors[name] = torch.from_numpy(arr.copy())
    return tensors, meta


def save_scene(path, scene, blur_model=None, meta: dict | None = None):
    """Scene (+ optional blur model) checkpoint; round-trips bit-exactly."""
    from .scene import GaussianScene  # noqa: F401  (type context)

    tensors = {k: v for k, v in scene.parameters().items()}
    info = {
        "num_frames": scene.bases.num_frames,
        "num_bases": scene.bases.num_bases,
        "static_count": len(scene.static),
        "dynamic_count": len(scene.dynamic),
        "has_blur_model": blur_model is not None,
    }
    if blur_model is not None:
        for k, v in blur_model.state_dict().items():
            tensors[f"bpnet.{k}"] = v
        info["blur_model"] = {
            "num_views": blur_model.predictor.num_views,
            "kernel_size": blur_model.predictor.kernel_size,
            "embed_dim": blur_model.predictor.embed_dim,
            "num_freqs": blur_model.predictor.num_freqs,
            "width": blur_model.extractor.conv2.out_channels,
            "use_skip": blur_model.predictor.use_skip,
            "depth_scale": blur_model.depth_scale,
        }
    info.update(meta or {})
    save_tensors(path, tensors, info)


def load_scene(path):
    """Returns (scene, blur_model_or_None, meta)."""
    from .blur import BlurModel
    from .scene import GaussianParams, GaussianScene, MotionBases

    tensors, meta = load_tensors(path)

    def block(prefix: str) -> GaussianParams:
        return GaussianParams(
            means=tensors[f"{prefix}.means"],
            rotations=tensors[f"{prefix}.rotations"],
            log_scales=tensors[f"{prefix}.log_scales"],
            opacity_logits=tensors[f"{prefix}.opacity_logits"],
            color_logits=tensors[f"{prefix}.color_logits"],
            motion_logits=tensors.get(f"{prefix}.motion_logits"),
        )

    bases = MotionBases(meta["num_frames"], meta["num_bases"], dtype=tensors["bases.rot_params"].dtype)
    bases.rot_params = tensors["bases.rot_params"]
    bases.transl_params = tensors["bases.transl_params"]
    scene = GaussianScene(static=block("static"), dynamic=block("dynamic"), bases=bases)

    blur_model = None
    if meta.get("has_blur_model"):
        bm = meta["blur_model"]
        blur_model = BlurModel(
            num_views=bm["num_views"],
            kernel_size=bm["kernel_size"],
            embed_dim=bm["embed_dim"],
            num_freqs=bm["num_freqs"],
            width=bm["width"],
            depth_scale=bm["depth_scale"],
            use_skip=bm["use_skip"],
        )
        state = {k[len("bpnet.") :]: v for k, v in tensors.items() if k.startswith("bpnet.")}
        blur_model.load_state_dict(state)
    return scene, blur_model, meta
