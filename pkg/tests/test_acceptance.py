"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdicts are printed in
the "acceptance criteria" section of the terminal summary.
"""
import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from trajfields import dataset, evaluation, fields, io, synthetic, training
from trajfields.model import Interaction, ModelConfig, NonLocalBlock, SemanticExtractor, TrajectoryNet

ETHUCY_ENV = "TRAJFIELDS_ETHUCY_ROOT"
ETHUCY_SCENES = ("eth", "hotel", "univ", "zara1", "zara2")


# --- 1: codec round trip -------------------------------------------------------

def test_criterion_1_codec_round_trip(record_criterion):
    rng = np.random.default_rng(2024)
    params = fields.FieldParams()
    worst, lost_ids, n_agents = 0.0, 0, 0
    start = time.perf_counter()
    for _ in range(200):
        n = int(rng.integers(1, 22))
        pos = synthetic.random_scene(rng, n, 13)
        L, A = fields.encode_sample_fields(pos[:, 0], pos[:, 1:], params.d0)
        res = fields.decode_trajectories(L, A, pos[:, 0], params)
        err = np.linalg.norm(res.positions - pos[:, 1:], axis=-1)
        worst = max(worst, float(err.max()))
        # with >= 14 px separation an estimate within 1 px can only be the agent's own
        lost_ids += int((~res.associated).sum())
        n_agents += n
    elapsed = time.perf_counter() - start
    ok = worst <= 1.0 and lost_ids == 0 and elapsed < 60
    record_criterion(1, ok, f"max error {worst:.4f} px over {n_agents} agents, "
                            f"{lost_ids} identity losses, {elapsed:.1f} s")
    assert ok


# --- 2: accumulation oracle ------------------------------------------------------

def _brute_H(field, sigma, p_floor):
    V, U = np.mgrid[0:256, 0:256].astype(np.float64)
    H = np.zeros((256, 256))
    rows, cols = np.nonzero(field[2] > p_floor)
    for j, i in zip(rows, cols):
        mx = 4 * (i + field[0, j, i])
        my = 4 * (j + field[1, j, i])
        H += field[2, j, i] * np.exp(-((U - mx) ** 2 + (V - my) ** 2) / (2 * sigma**2))
    return H


def test_criterion_2_accumulation_oracle(record_criterion):
    rng = np.random.default_rng(7)
    params = fields.FieldParams()
    worst, worst_lin = 0.0, 0.0
    for k in range(50):
        f = np.zeros((3, 64, 64))
        f[:2] = rng.uniform(-4, 4, (2, 64, 64))
        density = rng.uniform(0.005, 0.08)
        f[2] = rng.uniform(0, 1, (64, 64)) * (rng.uniform(size=(64, 64)) < density)
        H = fields.accumulate(f, params.sigma, params.p_floor, params.truncate)
        worst = max(worst, float(np.abs(H - _brute_H(f, params.sigma, params.p_floor)).max()))
        # linearity in p (without a floor so that scaling cannot drop votes)
        alpha = rng.uniform(0.1, 1.0)
        g = f.copy()
        g[2] *= alpha
        base = fields.accumulate(f, params.sigma, 0.0, params.truncate)
        scaled = fields.accumulate(g, params.sigma, 0.0, params.truncate)
        worst_lin = max(worst_lin, float(np.abs(scaled - alpha * base).max() / max(base.max(), 1e-300)))
    ok = worst <= 1e-4 and worst_lin <= 1e-12
    record_criterion(2, ok, f"max |H - dense| = {worst:.2e}, relative linearity error {worst_lin:.2e}")
    assert ok


# --- 3: interaction algebra ------------------------------------------------------

def test_criterion_3_interaction_algebra(record_criterion):
    torch.manual_seed(0)
    base = dict(enc_channels=(8, 16), hidden=16, dec_hidden=16, sem_channels=8)
    i4 = Interaction(ModelConfig(variant="I4", **base)).double()
    i3 = Interaction(ModelConfig(variant="I3", **base)).double()
    i3.social.load_state_dict(i4.social.state_dict())
    x = torch.randn(2, 16, 8, 16, 16, dtype=torch.float64)
    zero = torch.zeros(2, 1, 16, 16, dtype=torch.float64)
    closed = torch.equal(i4(x, attention=zero), i3(x))
    opened = torch.equal(i4(x, attention=zero + 1), i3(x) + x)

    blk = NonLocalBlock(16, 8).double()
    with torch.no_grad():
        blk.pair.weight.zero_()
        blk.pair.bias.fill_(0.7)
    with torch.no_grad():
        q = blk.response(x)
        g = blk.g(x)
    # f == 0.7 everywhere, so q is 0.7 times the mean of g
    mean_err = float((q - 0.7 * g.mean(dim=(2, 3, 4), keepdim=True)).abs().max())
    ok = closed and opened and mean_err <= 1e-6
    record_criterion(3, ok, f"I4(J=0)==I3: {closed}, I4(J=1)==I3+X_e: {opened}, "
                            f"uniform-f error {mean_err:.1e}")
    assert ok


# --- 4: gradient checks ----------------------------------------------------------

def _grad_rel_error(fn, tensors, eps=1e-6, seed=0):
    """Central-difference vs autograd gradient of ``sum(w * fn())`` w.r.t. ``tensors``."""
    gen = torch.Generator().manual_seed(seed)
    out = fn()
    outs = out if isinstance(out, tuple) else (out,)
    ws = [torch.randn(o.shape, generator=gen, dtype=torch.float64) for o in outs]

    def scalar():
        o = fn()
        o = o if isinstance(o, tuple) else (o,)
        return sum((w * v).sum() for w, v in zip(ws, o))

    analytic = torch.autograd.grad(scalar(), tensors, allow_unused=True)
    analytic = [torch.zeros_like(t) if a is None else a for t, a in zip(tensors, analytic)]
    num_sq = diff_sq = ana_sq = 0.0
    with torch.no_grad():
        for t, a in zip(tensors, analytic):
            flat = t.view(-1)
            for k in range(flat.numel()):
                old = flat[k].item()
                flat[k] = old + eps
                up = scalar().item()
                flat[k] = old - eps
                down = scalar().item()
                flat[k] = old
                num = (up - down) / (2 * eps)
                ana = a.view(-1)[k].item()
                num_sq += num**2
                ana_sq += ana**2
                diff_sq += (num - ana) ** 2
    return (diff_sq**0.5) / max(num_sq**0.5, ana_sq**0.5, 1e-30)


def test_criterion_4_gradient_checks(record_criterion):
    torch.manual_seed(0)
    errs = {}

    blk = NonLocalBlock(4, 3).double()
    z = torch.randn(1, 4, 2, 3, 3, dtype=torch.float64, requires_grad=True)
    errs["nonlocal_response"] = _grad_rel_error(lambda: blk.response(z), [z, *blk.parameters()])

    cfg = ModelConfig(variant="I4", enc_channels=(4, 8), hidden=8, dec_hidden=8, sem_channels=3)
    sem = SemanticExtractor(cfg).double()
    m = torch.rand(1, 5, 12, 12, dtype=torch.float64, requires_grad=True)
    errs["extract_semantics"] = _grad_rel_error(lambda: sem(m), [m, *sem.parameters()])

    pL = torch.randn(2, 3, 3, 4, 4, dtype=torch.float64, requires_grad=True)
    pA = torch.randn(2, 3, 5, 4, 4, dtype=torch.float64, requires_grad=True)
    gL, gA = torch.randn_like(pL), torch.randn_like(pA)
    mask = torch.tensor([[True, False, True], [True, True, True]])
    errs["field_loss"] = _grad_rel_error(
        lambda: training.field_loss(pL, pA, gL, gA, mask, 1.0, 2.0).total, [pL, pA])

    net = TrajectoryNet(ModelConfig(variant="I3", enc_channels=(4, 8), hidden=4, dec_hidden=4,
                                    norm_groups=2)).double()
    ctx = torch.randn(1, 4, 4, 4, dtype=torch.float64, requires_grad=True)
    L_prev = torch.rand(1, 3, 4, 4, dtype=torch.float64, requires_grad=True)
    with torch.no_grad():
        _, _, state = net.decoder.step(ctx, L_prev)  # carried state from a previous step

    def one_step():
        loc, assoc, _ = net.decoder.step(ctx, L_prev, state)
        return loc, assoc

    errs["decode_step"] = _grad_rel_error(one_step, [ctx, L_prev, *net.decoder.parameters()])
    ok = all(e < 1e-3 for e in errs.values())
    record_criterion(4, ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()))
    assert ok


# --- 5: constant runtime -----------------------------------------------------------

def test_criterion_5_constant_runtime(record_criterion):
    torch.manual_seed(0)
    model = TrajectoryNet(ModelConfig())  # default widths, variant I4
    report = evaluation.runtime_benchmark(model, (1, 4, 21), repeats=30, warmup=3)
    ratio = report.ratio("forward")
    fwd = report.stage("forward")
    dec = report.stage("decode")
    ok = ratio <= 1.15 and all(r["repeats"] >= 30 for r in report.rows)
    detail = "forward " + ", ".join(f"{n}: {fwd[n]['mean_s'] * 1e3:.0f} ms" for n in sorted(fwd))
    detail += f", ratio {ratio:.3f}; decode " + ", ".join(
        f"{n}: {dec[n]['mean_s'] * 1e3:.1f} ms" for n in sorted(dec))
    record_criterion(5, ok, detail)
    assert ok


# --- 6: linear baseline on ETH/UCY ------------------------------------------------

def _load_ethucy(root: Path):
    samples, transforms = {}, {}
    for sid in ETHUCY_SCENES:
        raw = dataset.load_annotations(root / f"{sid}.txt")
        origin, extent = dataset.auto_extent(raw)
        tracks, tf = dataset.normalize_scene(raw, extent, origin)
        samples[sid] = dataset.make_samples(tracks, 8, 12, 1, sid)
        transforms[sid] = tf
    return samples, transforms


def test_criterion_6_linear_baseline_ethucy(record_criterion):
    root = os.environ.get(ETHUCY_ENV)
    missing = [s for s in ETHUCY_SCENES if not root or not (Path(root) / f"{s}.txt").exists()]
    if missing:
        record_criterion(6, False, f"ETH/UCY annotations not found (set {ETHUCY_ENV} to a directory "
                                   f"with {', '.join(s + '.txt' for s in ETHUCY_SCENES)})")
        pytest.xfail("ETH/UCY annotations are not available in this environment")
    start = time.perf_counter()
    samples, transforms = _load_ethucy(Path(root))
    folds = dataset.leave_one_out(ETHUCY_SCENES)
    per_fold = [evaluation.evaluate_linear({f.test_scenes[0]: samples[f.test_scenes[0]]},
                                           transforms=transforms) for f in folds]
    ade = float(np.mean([r.ade for r in per_fold]))
    fde = float(np.mean([r.fde for r in per_fold]))
    elapsed = time.perf_counter() - start
    ok = abs(ade / 0.133 - 1) <= 0.2 and abs(fde / 0.257 - 1) <= 0.2 and elapsed < 300
    record_criterion(6, ok, f"average ADE {ade:.3f} / FDE {fde:.3f} (target 0.133 / 0.257 +-20%), "
                            f"{elapsed:.1f} s")
    assert ok


# --- 7: overfit smoke --------------------------------------------------------------

SMOKE_MODEL = ModelConfig(variant="I3", enc_channels=(8, 16), hidden=16, dec_hidden=16, sem_channels=8)
SMOKE_TRAIN = training.TrainConfig(lr=1e-3, batch=1, epochs=200, decay_every=150, augment=False,
                                   checkpoint_every=0, teacher_forcing=False, seed=0)


@pytest.mark.slow
def test_criterion_7_overfit_smoke(record_criterion, tmp_path):
    samples = synthetic.random_samples(np.random.default_rng(0), 10, max_agents=4)
    losses = []
    start = time.perf_counter()
    training.train(samples, SMOKE_TRAIN, SMOKE_MODEL, out_dir=tmp_path,
                   on_epoch=lambda e, row: losses.append(row["total"]))
    model, _, _ = io.load_checkpoint(tmp_path / "checkpoint_final.safetensors")
    rep = evaluation.evaluate(model, {"smoke": samples}, units={"smoke": "pixels"})
    elapsed = time.perf_counter() - start
    drop = losses[0] / losses[-1]
    ok = rep.ade < 2.0 and elapsed < 4 * 3600
    record_criterion(7, ok, f"decoded ADE {rep.ade:.3f} px, FDE {rep.fde:.3f} px, loss drop {drop:.1f}x, "
                            f"{rep.n_unassociated} unassociated steps, {elapsed / 60:.1f} min")
    assert ok


# --- 8: metric units ---------------------------------------------------------------

def test_criterion_8_metric_units(record_criterion):
    gt = np.zeros((3, 12, 2))
    r345 = evaluation.ade_fde(gt + [3.0, 4.0], gt)
    pred = gt.copy()
    pred[:, :, 0] = np.arange(1, 13)
    rlin = evaluation.ade_fde(pred, gt)
    ok = (r345.ade, r345.fde) == (5.0, 5.0) and (rlin.ade, rlin.fde) == (6.5, 12.0)
    record_criterion(8, ok, f"3-4-5: ({r345.ade}, {r345.fde}), linear growth: ({rlin.ade}, {rlin.fde})")
    assert ok
