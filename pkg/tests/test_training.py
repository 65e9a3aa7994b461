import csv

import numpy as np
import pytest
import torch

from trajfields import synthetic, training
from trajfields.fields import FieldParams
from trajfields.io import load_checkpoint, read_manifest, save_checkpoint
from trajfields.model import ModelConfig, TrajectoryNet, batch_inputs
from trajfields.training import NonFiniteLossError, TrainConfig, field_loss

TINY = ModelConfig(variant="I3", enc_channels=(4, 8), hidden=8, dec_hidden=8, sem_channels=4, T_pred=3)


def tiny_samples(rng, n=3):
    return synthetic.random_samples(rng, n, T_pred=3, max_agents=3)


def fields_like(B=1, T=12):
    return torch.zeros(B, T, 3, 64, 64), torch.zeros(B, T, 5, 64, 64)


def test_perfect_prediction_has_zero_loss(rng):
    (s,) = tiny_samples(rng, 1)
    L, A, _ = training.sample_targets(s, FieldParams())
    L, A = torch.from_numpy(L)[None], torch.from_numpy(A)[None]
    r = field_loss(L, A, L, A)
    assert float(r.total) == 0.0


def test_one_hot_p_error():
    gt_L, gt_A = fields_like()
    pred_L = gt_L.clone().double()
    pred_L[0, 5, 2, 10, 20] = 1.0
    r = field_loss(pred_L, gt_A.double(), gt_L.double(), gt_A.double())
    assert float(r.loc_mse) == 1 / (3 * 64 * 64 * 12)
    assert float(r.assoc_mse) == 0.0


def test_assoc_weight_is_linear():
    torch.manual_seed(0)
    pL, pA = torch.rand(1, 2, 3, 64, 64, dtype=torch.float64), torch.rand(1, 2, 5, 64, 64, dtype=torch.float64)
    gL, gA = torch.zeros_like(pL), torch.zeros_like(pA)
    r1 = field_loss(pL, pA, gL, gA, w_assoc=1.0)
    r2 = field_loss(pL, pA, gL, gA, w_assoc=2.0)
    assert torch.equal(r1.assoc_mse, r2.assoc_mse)
    assert float(r2.total) == float(r2.loc_mse + 2.0 * r2.assoc_mse)
    assert float(2.0 * r2.assoc_mse) == 2 * float(1.0 * r1.assoc_mse)
    assert float(r1.total) == float(r1.loc_mse + r1.assoc_mse)


def test_masked_steps_are_excluded():
    gt_L, gt_A = fields_like(1, 4)
    pred_L = gt_L.clone()
    pred_L[0, 3] = 5.0  # garbage on an invalid step only
    mask = torch.tensor([[True, True, True, False]])
    r = field_loss(pred_L, gt_A, gt_L, gt_A, mask)
    assert float(r.total) == 0.0
    r = field_loss(pred_L, gt_A, gt_L, gt_A, torch.zeros(1, 4, dtype=torch.bool))
    assert float(r.total) == 0.0


def test_shape_mismatch_rejected():
    gt_L, gt_A = fields_like()
    with pytest.raises(ValueError):
        field_loss(gt_L[:, :3], gt_A, gt_L, gt_A)


def test_step_mask_requires_all_agents(rng):
    (s,) = tiny_samples(rng, 1)
    s.future_mask[0, 1] = False
    s.future[0, 1] = np.nan
    _, _, mask = training.sample_targets(s, FieldParams())
    assert mask.tolist() == [True, False, True]


def test_loss_invariant_to_agent_order(rng):
    (s,) = synthetic.random_samples(rng, 1, T_pred=3, max_agents=1)
    while s.n_agents < 3:
        (s,) = synthetic.random_samples(rng, 1, T_pred=3, max_agents=5)
    perm = rng.permutation(s.n_agents)
    s2 = training.dataset.Sample(s.past[perm], s.future[perm], s.future_mask[perm])
    net = TrajectoryNet(TINY).eval()
    losses = []
    for smp in (s, s2):
        maps, sem, L, A, mask = training.make_batch([smp], None, FieldParams())
        with torch.no_grad():
            pL, pA = net(maps, teacher=L)
        losses.append(float(field_loss(pL, pA, L, A, mask).total))
    assert losses[0] == losses[1]


def test_lr_schedule():
    cfg = TrainConfig()
    assert training.lr_at(cfg, 0) == 5e-5
    assert training.lr_at(cfg, 29) == 5e-5
    assert training.lr_at(cfg, 30) == 2.5e-5
    assert training.lr_at(cfg, 95) == 5e-5 / 8


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(w_loc=-1)


def _first_epoch_loss(samples, tmp_path, tag):
    rows = []
    cfg = TrainConfig(lr=1e-3, batch=2, epochs=1, seed=7, checkpoint_every=0)
    training.train(samples, cfg, TINY, out_dir=tmp_path / tag, on_epoch=lambda e, r: rows.append(r))
    return rows[0]["total"]


def test_fixed_seed_is_bitwise_reproducible(rng, tmp_path):
    samples = tiny_samples(rng)
    assert _first_epoch_loss(samples, tmp_path, "a") == _first_epoch_loss(samples, tmp_path, "b")


def test_train_writes_metrics_and_checkpoints(rng, tmp_path):
    samples = tiny_samples(rng)
    cfg = TrainConfig(lr=1e-3, batch=2, epochs=2, checkpoint_every=1, decay_every=1)
    ckpt = training.train(samples, cfg, TINY, out_dir=tmp_path)
    assert ckpt.exists() and (tmp_path / "checkpoint_epoch0001.safetensors").exists()
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == list(training.METRIC_COLUMNS)
    assert [float(r["lr"]) for r in rows] == [1e-3, 5e-4]
    assert read_manifest(ckpt)["epoch"] == 2


def test_checkpoint_round_trip_bitwise(rng, tmp_path):
    samples = tiny_samples(rng, 2)
    net = TrajectoryNet(TINY)
    opt = torch.optim.Adam(net.parameters(), lr=1e-3)
    maps, _ = batch_inputs(samples)
    L, A = net(maps)
    (L.sum() + A.sum()).backward()
    opt.step()
    net.eval()
    path = save_checkpoint(tmp_path / "c.safetensors", net, opt, 3, {"note": "x"})
    net2, manifest, opt_state = load_checkpoint(path, TINY)
    with torch.no_grad():
        a, b = net(maps), net2(maps)
    assert torch.equal(a[0], b[0]) and torch.equal(a[1], b[1])
    assert manifest["epoch"] == 3 and manifest["config"] == {"note": "x"}
    opt2 = torch.optim.Adam(net2.parameters(), lr=1e-3)
    opt2.load_state_dict(opt_state)
    for k, st in opt.state_dict()["state"].items():
        assert torch.equal(st["exp_avg"], opt2.state_dict()["state"][k]["exp_avg"])


def test_checkpoint_architecture_mismatch(rng, tmp_path):
    path = save_checkpoint(tmp_path / "c.safetensors", TrajectoryNet(TINY))
    other = ModelConfig(variant="I3", enc_channels=(4, 8), hidden=16, dec_hidden=8, sem_channels=4)
    with pytest.raises(ValueError):
        load_checkpoint(path, other)


def test_non_finite_loss_aborts_with_dump(rng, tmp_path):
    samples = tiny_samples(rng, 2)
    net = TrajectoryNet(TINY)
    with torch.no_grad():
        net.decoder.loc_head.bias[0] = float("nan")
    cfg = TrainConfig(lr=1e-3, batch=2, epochs=1, checkpoint_every=0)
    with pytest.raises(NonFiniteLossError):
        training.train(samples, cfg, TINY, out_dir=tmp_path, model=net)
    (dump,) = tmp_path.glob("nonfinite_*.npz")
    assert set(np.load(dump).files) == {"maps", "gt_L", "gt_A", "pred_L", "pred_A"}
