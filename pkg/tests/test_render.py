"""Rasterizer: EWA projection closed forms, compositing oracles, gradients."""

import numpy as np
import torch

from blursplat.render import Splats2D, rasterize, splat_project
from conftest import make_camera, random_unit_quats

F64 = torch.float64


def tiny_splat(px, py, depth, opacity, color, dynamic=False, var=1e-4):
    return dict(
        means2d=torch.tensor([[px, py]], dtype=F64),
        cov2d=torch.tensor([[[var, 0.0], [0.0, var]]], dtype=F64),
        depth=torch.tensor([depth], dtype=F64),
        opacity=torch.tensor([opacity], dtype=F64),
        color=torch.tensor([color], dtype=F64),
        is_dynamic=torch.tensor([dynamic]),
    )


def cat_splats(*ds):
    keys = ds[0].keys()
    return Splats2D(**{k: torch.cat([d[k] for d in ds]) for k in keys})


class TestSplatProject:
    def test_isotropic_on_axis_closed_form(self):
        # J at the optical axis is diag(f/z, f/z), so cov2d = (f*s/z)^2 * I
        cam = make_camera(focal=50.0)
        s = 0.2
        for z in (1.0, 2.0):
            _, cov2d, depth, valid = splat_project(
                torch.tensor([[0.0, 0, z]], dtype=F64),
                torch.tensor([[1.0, 0, 0, 0]], dtype=F64),
                torch.full((1, 3), s, dtype=F64),
                cam,
                regularize=False,
            )
            expect = (50.0 * s / z) ** 2
            assert bool(valid.all())
            assert torch.allclose(
                cov2d[0], expect * torch.eye(2, dtype=F64), rtol=1e-12, atol=1e-12
            )

    def test_doubling_depth_halves_projected_std(self):
        cam = make_camera(focal=50.0)

        def std_at(z):
            _, cov2d, _, _ = splat_project(
                torch.tensor([[0.0, 0, z]], dtype=F64),
                torch.tensor([[1.0, 0, 0, 0]], dtype=F64),
                torch.full((1, 3), 0.1, dtype=F64),
                cam,
                regularize=False,
            )
            return float(cov2d[0, 0, 0]) ** 0.5

        assert abs(std_at(2.0) - 0.5 * std_at(1.0)) < 1e-12

    def test_zero_rotation_anisotropic_diag(self):
        cam = make_camera(focal=40.0)
        s = torch.tensor([[0.1, 0.3, 0.5]], dtype=F64)
        _, cov2d, _, _ = splat_project(
            torch.tensor([[0.0, 0, 2.0]], dtype=F64),
            torch.tensor([[1.0, 0, 0, 0]], dtype=F64),
            s,
            cam,
            regularize=False,
        )
        # on-axis: 3D cov diag(s^2) maps through diag(f/z, f/z)
        assert abs(cov2d[0, 0, 0] - (40.0 * 0.1 / 2) ** 2) < 1e-12
        assert abs(cov2d[0, 1, 1] - (40.0 * 0.3 / 2) ** 2) < 1e-12
        assert abs(cov2d[0, 0, 1]) < 1e-12

    def test_regularization_floor(self):
        cam = make_camera()
        _, cov2d, _, _ = splat_project(
            torch.tensor([[0.0, 0, 5.0]], dtype=F64),
            torch.tensor([[1.0, 0, 0, 0]], dtype=F64),
            torch.full((1, 3), 1e-4, dtype=F64),
            cam,
            regularize=True,
        )
        evals = torch.linalg.eigvalsh(cov2d[0])
        assert float(evals.min()) >= 0.1 - 1e-9


class TestRasterize:
    def test_empty_input_pure_background(self):
        cam = make_camera(width=8, height=8)
        bg = torch.tensor([0.2, 0.4, 0.6], dtype=F64)
        empty = Splats2D(
            means2d=torch.zeros(0, 2, dtype=F64),
            cov2d=torch.zeros(0, 2, 2, dtype=F64),
            depth=torch.zeros(0, dtype=F64),
            opacity=torch.zeros(0, dtype=F64),
            color=torch.zeros(0, 3, dtype=F64),
            is_dynamic=torch.zeros(0, dtype=torch.bool),
        )
        out = rasterize(empty, cam, bg, background_depth=9.0)
        assert torch.all(out.image == bg)
        assert torch.all(out.depth == 9.0)
        assert torch.all(out.mask == 0)
        assert torch.all(out.alpha == 0)

    def test_single_opaque_static_splat(self):
        cam = make_camera(width=9, height=9)
        bg = torch.zeros(3, dtype=F64)
        out = rasterize(
            cat_splats(tiny_splat(4.0, 4.0, 2.5, 0.99, [1.0, 0, 0])), cam, bg,
            background_depth=9.0,
        )
        assert abs(out.image[4, 4, 0] - 0.99) < 1e-9   # alpha clamp at 0.99
        assert out.mask[4, 4] == 0
        assert abs(out.depth[4, 4] - 2.5) < 1e-9

    def test_two_splat_hand_compositing(self):
        # front alpha 0.6 white over back alpha 0.8 black on black background:
        # 0.6*1 + 0.4*0.8*0 + 0.4*0.2*0 = 0.6
        cam = make_camera(width=9, height=9)
        out = rasterize(
            cat_splats(
                tiny_splat(4.0, 4.0, 1.0, 0.6, [1.0, 1, 1]),
                tiny_splat(4.0, 4.0, 2.0, 0.8, [0.0, 0, 0]),
            ),
            cam,
            torch.zeros(3, dtype=F64),
        )
        assert torch.allclose(out.image[4, 4], torch.full((3,), 0.6, dtype=F64), atol=1e-9)

    def test_order_invariance(self, rng):
        cam = make_camera(width=16, height=16)
        splats = random_splats(rng, 20)
        bg = torch.tensor([0.3, 0.3, 0.3], dtype=F64)
        out1 = rasterize(splats, cam, bg)
        perm = torch.from_numpy(rng.permutation(20))
        splats2 = Splats2D(
            means2d=splats.means2d[perm],
            cov2d=splats.cov2d[perm],
            depth=splats.depth[perm],
            opacity=splats.opacity[perm],
            color=splats.color[perm],
            is_dynamic=splats.is_dynamic[perm],
        )
        out2 = rasterize(splats2, cam, bg)
        assert torch.allclose(out1.image, out2.image, atol=1e-12)
        assert torch.allclose(out1.depth, out2.depth, atol=1e-12)
        assert torch.allclose(out1.mask, out2.mask, atol=1e-12)

    def test_weights_plus_background_sum_to_one(self, rng):
        # with white background and black splats, image = background weight
        cam = make_camera(width=16, height=16)
        splats = random_splats(rng, 30)
        splats.color.zero_()
        out = rasterize(splats, cam, torch.ones(3, dtype=F64))
        total = out.alpha + out.image[..., 0]
        assert float((total - 1).abs().max()) < 1e-6

    def test_mask_bounded_by_alpha_and_equal_when_all_dynamic(self, rng):
        cam = make_camera(width=16, height=16)
        splats = random_splats(rng, 25)
        out = rasterize(splats, cam, torch.zeros(3, dtype=F64))
        assert float((out.mask - out.alpha).max()) <= 1e-12
        assert float(out.mask.min()) >= 0
        assert float(out.alpha.max()) <= 1 + 1e-9
        splats.is_dynamic = torch.ones_like(splats.is_dynamic)
        out2 = rasterize(splats, cam, torch.zeros(3, dtype=F64))
        assert torch.allclose(out2.mask, out2.alpha, atol=1e-12)

    def test_image_range_preserved(self, rng):
        cam = make_camera(width=16, height=16)
        out = rasterize(random_splats(rng, 40), cam, torch.full((3,), 0.5, dtype=F64))
        assert float(out.image.min()) >= -1e-9
        assert float(out.image.max()) <= 1 + 1e-5

    def test_parallel_mode_matches_single_thread(self, rng):
        # accumulation-order tolerance between thread counts
        cam = make_camera(width=24, height=24)
        splats = random_splats(rng, 60)
        bg = torch.tensor([0.2, 0.5, 0.1], dtype=F64)
        torch.set_num_threads(1)
        out1 = rasterize(splats, cam, bg)
        torch.set_num_threads(2)
        out2 = rasterize(splats, cam, bg)
        torch.set_num_threads(1)
        assert float((out1.image - out2.image).abs().max()) < 1e-6
        assert float((out1.depth - out2.depth).abs().max()) < 1e-6


def random_splats(rng, n, dynamic_frac=0.4):
    means = rng.uniform([1, 1], [14, 14], (n, 2))
    L = rng.uniform(0.4, 1.6, (n, 2))
    rot = rng.uniform(0, np.pi, n)
    covs = []
    for i in range(n):
        c, s = np.cos(rot[i]), np.sin(rot[i])
        R = np.array([[c, -s], [s, c]])
        covs.append(R @ np.diag(L[i] ** 2) @ R.T + 0.1 * np.eye(2))
    return Splats2D(
        means2d=torch.from_numpy(means).to(F64),
        cov2d=torch.from_numpy(np.stack(covs)).to(F64),
        depth=torch.from_numpy(rng.uniform(1, 8, n)).to(F64),
        opacity=torch.from_numpy(rng.uniform(0.1, 0.9, n)).to(F64),
        color=torch.from_numpy(rng.uniform(0, 1, (n, 3))).to(F64),
        is_dynamic=torch.from_numpy(rng.random(n) < dynamic_frac),
    )


class TestGradients:
    def test_zero_output_gradient_gives_zero_param_gradient(self, rng):
        splats = random_splats(rng, 10)
        splats.means2d.requires_grad_(True)
        cam = make_camera(width=16, height=16)
        out = rasterize(splats, cam, torch.zeros(3, dtype=F64))
        (out.image * 0).sum().backward()
        assert torch.all(splats.means2d.grad == 0)

    def test_single_splat_color_gradient_equals_alpha(self):
        # d image(p)/d color = compositing weight = alpha (transmittance 1)
        d = tiny_splat(4.0, 4.0, 1.0, 0.55, [0.3, 0.3, 0.3])
        d["cov2d"] = torch.tensor([[[2.0, 0.3], [0.3, 1.0]]], dtype=F64)
        splats = cat_splats(d)
        splats.color.requires_grad_(True)
        cam = make_camera(width=9, height=9)
        out = rasterize(splats, cam, torch.zeros(3, dtype=F64))
        probe_px = (2, 6)
        out.image[probe_px[1], probe_px[0], 0].backward()
        dx = probe_px[0] - 4.0
        dy = probe_px[1] - 4.0
        cov = splats.cov2d[0].detach().numpy()
        inv = np.linalg.inv(cov)
        alpha = 0.55 * np.exp(-0.5 * (inv[0, 0] * dx**2 + 2 * inv[0, 1] * dx * dy + inv[1, 1] * dy**2))
        assert abs(float(splats.color.grad[0, 0]) - alpha) < 1e-10

    def test_full_scene_gradient_vs_fd(self, rng):
        # random 3D micro-scene through projection + rasterization, float64
        n = 12
        cam = make_camera(width=16, height=16, focal=20.0)
        means = torch.from_numpy(rng.uniform([-1.5, -1.5, 2.0], [1.5, 1.5, 6.0], (n, 3))).to(F64)
        quats = random_unit_quats(rng, n)
        log_scales = torch.from_numpy(np.log(rng.uniform(0.05, 0.3, (n, 3)))).to(F64)
        opac_logit = torch.from_numpy(rng.uniform(-1.5, 1.5, n)).to(F64)
        color_logit = torch.from_numpy(rng.uniform(-1, 1, (n, 3))).to(F64)
        is_dyn = torch.from_numpy(rng.random(n) < 0.5)
        params = [means, quats, log_scales, opac_logit, color_logit]
        for p in params:
            p.requires_grad_(True)
        probe_i = torch.from_numpy(rng.standard_normal((16, 16, 3))).to(F64)
        probe_d = torch.from_numpy(rng.standard_normal((16, 16))).to(F64)
        probe_m = torch.from_numpy(rng.standard_normal((16, 16))).to(F64)

        def loss_fn():
            m2d, cov2d, depth, valid = splat_project(
                means, quats, torch.exp(log_scales), cam
            )
            splats = Splats2D(
                means2d=m2d[valid],
                cov2d=cov2d[valid],
                depth=depth[valid],
                opacity=torch.sigmoid(opac_logit)[valid],
                color=torch.sigmoid(color_logit)[valid],
                is_dynamic=is_dyn[valid],
            )
            out = rasterize(splats, cam, torch.full((3,), 0.4, dtype=F64), 9.0, cull_sigma=5.0)
            return (out.image * probe_i).sum() + (out.depth * probe_d).sum() + (out.mask * probe_m).sum()

        loss_fn().backward()
        sampler = np.random.default_rng(7)
        for p in params:
            with torch.no_grad():
                fd = central_diff_sampled(loss_fn, p, sampler, k=6)
            for idx, fd_val in fd:
                an = float(p.grad.reshape(-1)[idx])
                assert abs(an - fd_val) / max(1.0, abs(fd_val)) < 1e-4, (p.shape, idx)


def central_diff_sampled(fn, x, sampler, k=6, h=1e-5):
    flat = x.reshape(-1)
    idxs = sampler.choice(flat.numel(), size=min(k, flat.numel()), replace=False)
    out = []
    for i in idxs:
        orig = flat[i].item()
        flat[i] = orig + h
        f_plus = float(fn())
        flat[i] = orig - h
        f_minus = float(fn())
        flat[i] = orig
        out.append((int(i), (f_plus - f_minus) / (2 * h)))
    return out
