"""Trainer: stage gates, densify event, determinism, config validation."""

import json

import numpy as np
import pytest
import torch

from blursplat.config import Schedule, TrainConfig
from blursplat.synth import generate_sequence
from blursplat.train import Trainer, train


@pytest.fixture(scope="module")
def tiny_seq():
    return generate_sequence("two-body", seed=4, resolution=24, num_frames=4)


def tiny_config(**over):
    cfg = TrainConfig()
    cfg.schedule.total_iterations = over.pop("total", 12)
    cfg.schedule.densify_iteration = over.pop("densify", 3)
    cfg.schedule.unseen_start = over.pop("unseen_start", 4)
    cfg.schedule.unseen_interval = over.pop("unseen_interval", 3)
    cfg.schedule.blur_start = over.pop("blur_start", 5)
    cfg.schedule.sparsity_start = over.pop("sparsity_start", 8)
    cfg.densify.pixels_per_frame = 6
    cfg.model.num_bases = 2
    cfg.model.kernel_size = 5
    cfg.model.feature_width = 16
    cfg.model.static_init_count = 50
    cfg.model.dynamic_init_count = 30
    cfg.eval_interval = over.pop("eval_interval", 0)
    for k, v in over.items():
        setattr(cfg, k, v)
    return cfg


class TestScheduleValidation:
    def test_invalid_orderings_rejected(self):
        s = Schedule(total_iterations=100, densify_iteration=50, blur_start=40, sparsity_start=60)
        with pytest.raises(ValueError):
            s.validate()
        s = Schedule(total_iterations=100, densify_iteration=0)
        with pytest.raises(ValueError):
            s.validate()
        s = Schedule(
            total_iterations=100, densify_iteration=10, blur_start=20, sparsity_start=300
        )
        with pytest.raises(ValueError):
            s.validate()

    def test_trainer_rejects_invalid_config(self, tiny_seq):
        cfg = tiny_config()
        cfg.schedule.blur_start = 2  # <= densify
        with pytest.raises(ValueError):
            Trainer(tiny_seq, cfg)


class TestRun:
    def test_zero_iterations_returns_initialization(self, tiny_seq):
        cfg = tiny_config()
        trainer = Trainer(tiny_seq, cfg)
        before = {k: v.detach().clone() for k, v in trainer.optimizer.params.items()}
        result = trainer.run(limit=0)
        for k, v in result.scene.parameters().items():
            assert torch.equal(v.detach(), before[k]), k

    def test_stage_gates_and_densify_event(self, tiny_seq, tmp_path):
        cfg = tiny_config()
        result = train(tiny_seq, cfg, out_dir=tmp_path / "run")
        lines = [json.loads(l) for l in (tmp_path / "run" / "metrics.jsonl").read_text().splitlines()]
        assert len(lines) == 12
        densify_events = [
            l["iter"] for l in lines if any(e.startswith("densify") for e in l.get("events", []))
        ]
        assert densify_events == [3]
        for l in lines:
            assert l["blur_active"] == (l["iter"] >= 5)
            assert l["spa_active"] == (l["iter"] >= 8)
            assert ("l_spa" in l) == l["spa_active"]
            expect_unseen = l["iter"] >= 4 and (l["iter"] - 4) % 3 == 0
            assert (l["view"] == "unseen") == expect_unseen, l["iter"]

    def test_densification_grows_dynamic_block(self, tiny_seq):
        cfg = tiny_config()
        trainer = Trainer(tiny_seq, cfg)
        n0 = len(trainer.scene.dynamic)
        trainer.run(limit=4)
        assert len(trainer.scene.dynamic) > n0
        # optimizer state grew along with the parameters
        for name, p in trainer.scene.dynamic.tensors("dynamic").items():
            assert trainer.optimizer.m[name].shape == p.shape

    def test_blur_disabled_run_never_activates(self, tiny_seq, tmp_path):
        cfg = tiny_config(blur_enabled=False)
        train(tiny_seq, cfg, out_dir=tmp_path / "nb")
        lines = [json.loads(l) for l in (tmp_path / "nb" / "metrics.jsonl").read_text().splitlines()]
        assert all(not l["blur_active"] for l in lines)
        assert all("l_spa" not in l for l in lines)

    def test_deterministic_checkpoints(self, tiny_seq, tmp_path):
        cfg = tiny_config(total=9, checkpoint_interval=9)
        train(tiny_seq, cfg, out_dir=tmp_path / "r1")
        train(tiny_seq, cfg, out_dir=tmp_path / "r2")
        a = (tmp_path / "r1" / "checkpoint_0000009.bsc").read_bytes()
        b = (tmp_path / "r2" / "checkpoint_0000009.bsc").read_bytes()
        assert a == b

    def test_quaternions_unit_norm_after_training(self, tiny_seq):
        cfg = tiny_config()
        result = train(tiny_seq, cfg, limit=6)
        for name in ("static.rotations", "dynamic.rotations"):
            q = result.scene.parameters()[name].detach()
            assert float((q.norm(dim=-1) - 1).abs().max()) < 1e-6
        qb = result.scene.bases.rot_params.detach()
        assert float((qb.norm(dim=-1) - 1).abs().max()) < 1e-6

    def test_holdout_psnr_logged(self, tiny_seq, tmp_path):
        cfg = tiny_config(eval_interval=4)
        train(tiny_seq, cfg, out_dir=tmp_path / "ho")
        lines = [json.loads(l) for l in (tmp_path / "ho" / "metrics.jsonl").read_text().splitlines()]
        with_psnr = [l["iter"] for l in lines if "psnr_holdout" in l]
        assert with_psnr == [4, 8, 12]

    def test_micro_end_to_end_loss_decreases(self, tmp_path):
        # 3-frame scene; smoothed reconstruction loss must trend down
        seq = generate_sequence("sliding-sprite", seed=6, resolution=24, num_frames=3)
        cfg = tiny_config(total=400, densify=50, unseen_start=60, blur_start=80,
                          sparsity_start=120, unseen_interval=5)
        train(seq, cfg, out_dir=tmp_path / "micro")
        lines = [
            json.loads(l) for l in (tmp_path / "micro" / "metrics.jsonl").read_text().splitlines()
        ]
        rec = [l["l_rec"] for l in lines if l["view"] == "train"]
        head = float(np.mean(rec[:20]))
        tail = float(np.mean(rec[-20:]))
        assert tail < head


def test_config_round_trip(tmp_path):
    cfg = TrainConfig()
    cfg.schedule.total_iterations = 6000
    cfg.loss_weights.beta = 0.3
    cfg.densify.pixels_per_frame = 99
    cfg.model.kernel_size = 7
    cfg.blur_enabled = False
    path = tmp_path / "cfg.json"
    cfg.save(path)
    back = TrainConfig.load(path)
    assert back.to_dict() == cfg.to_dict()


def test_config_rejects_unknown_fields(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"schedule": {"not_a_field": 1}}))
    with pytest.raises(ValueError):
        TrainConfig.load(path)
