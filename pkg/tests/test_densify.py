"""Densification: pixel sampling, canonical remapping, append-only growth."""

import numpy as np
import pytest
import torch

from blursplat.cameras import project
from blursplat.densify import (
    densify_scene,
    lift_to_observation,
    remap_to_canonical,
    sample_dynamic_pixels,
)
from blursplat.scene import (
    GaussianScene,
    MotionBases,
    make_gaussian_params,
)
from conftest import make_camera, random_unit_quats

F64 = torch.float64


def scene_with_dynamic(means, transl=None, quat=None, num_frames=3, logits=None):
    means = torch.as_tensor(means, dtype=F64)
    n = means.shape[0]
    dynamic = make_gaussian_params(
        means, motion_logits=np.zeros((n, 1)) if logits is None else logits, dtype=F64
    )
    static = make_gaussian_params(np.zeros((0, 3)), dtype=F64)
    bases = MotionBases(num_frames, dynamic.motion_logits.shape[1], dtype=F64)
    if transl is not None:
        bases.transl_params[0, 0] = torch.as_tensor(transl, dtype=F64)
    if quat is not None:
        bases.rot_params[0, 0] = torch.as_tensor(quat, dtype=F64)
    return GaussianScene(static=static, dynamic=dynamic, bases=bases)


class TestSamplePixels:
    def test_empty_mask(self):
        rng = np.random.default_rng(0)
        pix, d = sample_dynamic_pixels(torch.zeros(8, 8), torch.ones(8, 8), 10, rng)
        assert pix.shape == (0, 2) and d.shape == (0,)

    def test_exact_mask(self):
        rng = np.random.default_rng(0)
        mask = torch.zeros(8, 8)
        mask[2, 3] = mask[5, 1] = mask[7, 7] = 1
        pix, d = sample_dynamic_pixels(mask, torch.full((8, 8), 2.0), 3, rng)
        got = {(int(u), int(v)) for u, v in pix}
        assert got == {(3, 2), (1, 5), (7, 7)}
        assert torch.all(d == 2.0)

    def test_deterministic_under_seed(self):
        mask = torch.zeros(16, 16)
        mask[4:12, 4:12] = 1
        depth = torch.ones(16, 16)
        a, _ = sample_dynamic_pixels(mask, depth, 10, np.random.default_rng(42))
        b, _ = sample_dynamic_pixels(mask, depth, 10, np.random.default_rng(42))
        assert torch.equal(a, b)

    def test_uniformity_chi_squared(self):
        # frequency-count oracle over 1e4 single draws on a 50-pixel support
        mask = torch.zeros(10, 10)
        support = [(i, j) for i in range(5) for j in range(10)]
        for i, j in support:
            mask[i, j] = 1
        depth = torch.ones(10, 10)
        rng = np.random.default_rng(77)
        counts = {}
        for _ in range(10_000):
            pix, _ = sample_dynamic_pixels(mask, depth, 1, rng)
            key = (int(pix[0, 0]), int(pix[0, 1]))
            counts[key] = counts.get(key, 0) + 1
        expected = 10_000 / 50
        chi2 = sum((counts.get((j, i), 0) - expected) ** 2 / expected for i, j in support)
        # dof=49, critical value at p=0.001 is 85.35
        assert chi2 < 85.35


def test_lift_round_trips_through_projection(rng):
    cam = make_camera(width=32, height=32, focal=40.0)
    pix = torch.from_numpy(rng.uniform(2, 29, (20, 2))).to(F64)
    depths = torch.from_numpy(rng.uniform(1, 8, 20)).to(F64)
    pts = lift_to_observation(pix, depths, cam)
    pix2, d2, valid = project(pts, cam)
    assert bool(valid.all())
    assert float((pix2 - pix).abs().max()) < 1e-9
    assert float((d2 - depths).abs().max()) < 1e-12


class TestRemap:
    def test_identity_transforms(self):
        scene = scene_with_dynamic([[0.0, 0, 2]])
        p = torch.tensor([[0.4, -0.2, 2.5]], dtype=F64)
        canon, nn = remap_to_canonical(p, scene, 1)
        assert torch.allclose(canon, p)
        assert int(nn[0]) == 0

    def test_pure_translation_inverted(self):
        d = [0.5, 0.1, -0.3]
        scene = scene_with_dynamic([[0.0, 0, 2]], transl=d)
        p = torch.tensor([[1.0, 1.0, 1.0]], dtype=F64)
        canon, _ = remap_to_canonical(p, scene, 1)
        assert torch.allclose(canon, p - torch.tensor([d], dtype=F64))

    def test_ties_take_lowest_index(self):
        scene = scene_with_dynamic([[1.0, 0, 2], [-1.0, 0, 2]], logits=np.zeros((2, 1)))
        canon, nn = remap_to_canonical(torch.tensor([[0.0, 0, 2]], dtype=F64), scene, 1)
        assert int(nn[0]) == 0

    def test_round_trip_random_transforms(self, rng):
        # deform a canonical point, remap back through the same Gaussian
        for k in range(50):
            q = random_unit_quats(rng, 1)[0]
            tr = torch.from_numpy(rng.standard_normal(3)).to(F64)
            scene = scene_with_dynamic([[0.1, 0.2, 1.5]], transl=tr, quat=q)
            canonical_pt = torch.from_numpy(rng.standard_normal((1, 3))).to(F64)
            from blursplat.transforms import quat_to_rotmat

            moved = canonical_pt @ quat_to_rotmat(q).T + tr
            back, _ = remap_to_canonical(moved, scene, 1)
            assert float((back - canonical_pt).abs().max()) < 1e-6


class TestDensifyScene:
    def make_setup(self, rng):
        T, H, W = 3, 24, 24
        cams = [make_camera(width=W, height=H, focal=30.0, frame=t) for t in range(T)]
        masks = torch.zeros(T, H, W)
        masks[:, 8:16, 8:16] = 1
        depths = torch.full((T, H, W), 3.0)
        images = torch.from_numpy(rng.uniform(0, 1, (T, H, W, 3))).to(torch.float32)
        scene = scene_with_dynamic(rng.standard_normal((5, 3)) + [0, 0, 3.0], num_frames=T)
        return scene, masks, depths, images, cams

    def test_append_only_and_inheritance(self, rng):
        scene, masks, depths, images, cams = self.make_setup(rng)
        before = {k: v.clone() for k, v in scene.dynamic.tensors("dynamic").items()}
        n_before = len(scene.dynamic)
        report = densify_scene(scene, masks, depths, images, cams, n_px=20, seed=9)
        assert report["added"] == 60
        assert len(scene.dynamic) == n_before + 60
        after = scene.dynamic.tensors("dynamic")
        for k, v in before.items():
            assert torch.equal(after[k][: v.shape[0]], v), k
        # appended rows inherit an existing coefficient row
        new_logits = after["dynamic.motion_logits"][n_before:]
        old_logits = before["dynamic.motion_logits"]
        for row in new_logits:
            assert any(torch.equal(row, old) for old in old_logits)

    def test_deterministic_under_seed(self, rng):
        scene1, masks, depths, images, cams = self.make_setup(np.random.default_rng(5))
        scene2 = scene_with_dynamic(
            scene1.dynamic.means.clone().numpy(), num_frames=3
        )
        densify_scene(scene1, masks, depths, images, cams, n_px=15, seed=4)
        densify_scene(scene2, masks, depths, images, cams, n_px=15, seed=4)
        assert torch.equal(scene1.dynamic.means, scene2.dynamic.means)

    def test_empty_dynamic_set_rejected(self):
        scene = GaussianScene(
            static=make_gaussian_params(np.zeros((0, 3)), dtype=F64),
            dynamic=make_gaussian_params(np.zeros((0, 3)), motion_logits=np.zeros((0, 1)), dtype=F64),
            bases=MotionBases(2, 1, dtype=F64),
        )
        with pytest.raises(ValueError):
            remap_to_canonical(torch.zeros(1, 3, dtype=F64), scene, 1)
