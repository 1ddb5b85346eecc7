import numpy as np
import pytest
import torch

from blursplat.cameras import Camera


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_camera(
    width=32,
    height=32,
    focal=40.0,
    R=None,
    t=None,
    frame=0,
    dtype=torch.float64,
):
    K = torch.eye(3, dtype=dtype)
    K[0, 0] = K[1, 1] = focal
    K[0, 2] = (width - 1) / 2
    K[1, 2] = (height - 1) / 2
    R = torch.eye(3, dtype=dtype) if R is None else R.to(dtype)
    t = torch.zeros(3, dtype=dtype) if t is None else t.to(dtype)
    return Camera(K=K, R=R, t=t, width=width, height=height, frame=frame)


def random_unit_quats(rng, n, dtype=torch.float64):
    q = rng.standard_normal((n, 4))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    return torch.from_numpy(q).to(dtype)


def central_diff(fn, x: torch.Tensor, h: float = 1e-5) -> torch.Tensor:
    """Independent finite-difference oracle: perturbs each entry of x while
    everything else in fn's closure stays put."""
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        f_plus = float(fn())
        flat[i] = orig - h
        f_minus = float(fn())
        flat[i] = orig
        g[i] = (f_plus - f_minus) / (2 * h)
    return grad


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(b))
