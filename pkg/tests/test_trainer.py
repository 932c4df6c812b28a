"""Training loop: determinism, two-stage schedule, isolation, checkpoints."""
import time

import numpy as np
import pytest

from posetransfer.attacks import AttackConfig
from posetransfer.errors import ShapeError
from posetransfer.training import (METRICS_HEADER, PMD_SCALE, EvalReport,
                                   EvalRow, TrainConfig, Trainer, named_stream)

from conftest import TOY_MODEL


def _cfg(**kw):
    base = dict(epochs=2, adversarial_start_epoch=2, pairs_per_epoch=6,
                eval_pairs=2, model=TOY_MODEL, checkpoint_every=0,
                attack=AttackConfig(method="fgm", eps=0.02))
    base.update(kw)
    return TrainConfig(**base)


def test_train_config_validation():
    with pytest.raises(ShapeError):
        TrainConfig(epochs=4, adversarial_start_epoch=5)
    assert TrainConfig(epochs=10).adv_start == 5
    assert TrainConfig(epochs=10, adversarial_start_epoch=7).adv_start == 7


def test_named_streams_are_independent_and_deterministic():
    a = named_stream(3, "pairing")
    b = named_stream(3, "pairing")
    c = named_stream(3, "masking")
    draws_a = a.integers(1 << 30, size=8)
    assert np.array_equal(draws_a, b.integers(1 << 30, size=8))
    assert not np.array_equal(draws_a, c.integers(1 << 30, size=8))


def test_overfit_single_pairs_loss_decreases(tiny_dataset):
    """A short clean run must show a mostly monotone loss decrease."""
    cfg = _cfg(epochs=10, adversarial_start_epoch=10, pairs_per_epoch=8,
               masking_ratio=0.0, eval_pairs=1)
    tr = Trainer(tiny_dataset, cfg)
    losses = []
    for _ in range(cfg.epochs):
        losses.append(tr.train_epoch_clean().loss_rec)
    # epoch losses are noisy (random pair draws), so compare smoothed ends
    assert np.mean(losses[-3:]) < np.mean(losses[:3])
    assert losses[-1] < losses[0]


def test_fit_same_seed_is_bit_identical(tiny_dataset, tmp_path):
    rows = []
    for run in ("a", "b"):
        tr = Trainer(tiny_dataset, _cfg(), out_dir=tmp_path / run)
        rows.append(tr.fit())
    assert rows[0] == rows[1]
    m_a = (tmp_path / "a" / "metrics.csv").read_bytes()
    m_b = (tmp_path / "b" / "metrics.csv").read_bytes()
    assert m_a == m_b
    assert m_a.decode().splitlines()[0] == METRICS_HEADER
    assert len(m_a.decode().splitlines()) == 1 + 2
    ck_a = (tmp_path / "a" / "model.ckpt").read_bytes()
    ck_b = (tmp_path / "b" / "model.ckpt").read_bytes()
    assert ck_a == ck_b


def test_lambda_edge_zero_skips_edge_term(tiny_dataset):
    tr = Trainer(tiny_dataset, _cfg(lambda_edge=0.0))
    stats = tr.train_epoch_clean()
    assert stats.loss_edge == 0.0
    assert np.isfinite(stats.loss_rec)


def test_two_stage_schedule(tiny_dataset):
    cfg = _cfg(epochs=4, adversarial_start_epoch=2, pairs_per_epoch=2,
               eval_pairs=1)
    tr = Trainer(tiny_dataset, cfg)
    rows = tr.fit()
    assert len(rows) == 4
    # adversarial epochs perturb the carrier, so they report a perturbation
    stats_clean = Trainer(tiny_dataset, cfg).train_epoch_clean()
    assert stats_clean.mean_perturbation == 0.0
    tr2 = Trainer(tiny_dataset, cfg)
    stats_adv = tr2.train_epoch_adversarial()
    assert stats_adv.mean_perturbation > 0.0


def test_adversarial_start_equal_to_epochs_never_attacks(tiny_dataset, tmp_path):
    cfg = _cfg(epochs=2, adversarial_start_epoch=2)
    tr = Trainer(tiny_dataset, cfg, out_dir=tmp_path)
    tr.fit()
    assert tr.epochs_done == 2


def test_zero_eps_adversarial_epoch_matches_clean(tiny_dataset):
    """With a zero budget and no SOR the attack is the identity, so the
    adversarial epoch reproduces the clean epoch losses exactly."""
    attack = AttackConfig(method="fgm", eps=0.0, apply_sor=False,
                          step_rule="raw-grad")
    a = Trainer(tiny_dataset, _cfg(attack=attack))
    b = Trainer(tiny_dataset, _cfg(attack=attack))
    stats_clean = a.train_epoch_clean()
    stats_adv = b.train_epoch_adversarial()
    assert stats_adv.loss_rec == stats_clean.loss_rec
    assert stats_adv.loss_edge == stats_clean.loss_edge
    for k, p in a.params.named().items():
        assert np.array_equal(p.values, b.params[k].values), k


def test_zero_eps_with_sor_stays_within_one_percent(tiny_dataset):
    """With SOR on, a zero-budget adversarial epoch may drop a few clean
    points, but the epoch PMD must stay within 1% of the clean epoch's."""
    attack = AttackConfig(method="fgm", eps=0.0, apply_sor=True,
                          step_rule="raw-grad")
    a = Trainer(tiny_dataset, _cfg(attack=attack))
    b = Trainer(tiny_dataset, _cfg(attack=attack))
    clean = a.train_epoch_clean().loss_rec
    adv = b.train_epoch_adversarial().loss_rec
    assert abs(adv - clean) / clean <= 0.01


def test_attack_graph_never_reaches_optimizer(tiny_dataset):
    """During an adversarial epoch, attack-side gradients must not leak:
    after zero_grad the parameter grad buffers stay empty until the training
    backward pass, and the optimizer state only advances on training steps."""
    tr = Trainer(tiny_dataset, _cfg(pairs_per_epoch=2))
    tr.opt.zero_grad()
    from posetransfer.attacks import generate_adversarial
    pose_m, id_m, gt_m = tiny_dataset.train_triple(0, 1, 0)
    before = {k: p.values.copy() for k, p in tr.params.named().items()}
    steps_before = tr.opt.step_count
    generate_adversarial(tr.params, pose_m.vertices, id_m, gt_m.vertices,
                         tr.cfg.attack, np.random.default_rng(0))
    assert tr.opt.step_count == steps_before
    for k, p in tr.params.named().items():
        assert p.grad is None, k
        assert np.array_equal(p.values, before[k]), k


def test_adversarial_epoch_wall_time_bounded(tiny_dataset):
    cfg = _cfg(pairs_per_epoch=4)
    t0 = time.perf_counter()
    Trainer(tiny_dataset, cfg).train_epoch_clean()
    t_clean = time.perf_counter() - t0
    t0 = time.perf_counter()
    Trainer(tiny_dataset, cfg).train_epoch_adversarial()
    t_adv = time.perf_counter() - t0
    # a single-step attack adds one forward/backward per sample
    assert t_adv <= 4.0 * t_clean + 0.5


def test_checkpoint_resume_is_bit_identical(tiny_dataset, tmp_path):
    cfg = _cfg(epochs=4, adversarial_start_epoch=2, checkpoint_every=2)
    full = Trainer(tiny_dataset, cfg, out_dir=tmp_path / "full")
    rows_full = full.fit()
    resumed = Trainer(tiny_dataset, cfg, out_dir=tmp_path / "resumed")
    rows_resumed = resumed.fit(
        resume_from=tmp_path / "full" / "checkpoint_ep0002")
    assert rows_resumed == rows_full[2:]
    for k, p in full.params.named().items():
        assert np.array_equal(p.values, resumed.params[k].values), k


def test_evaluate_report(tiny_dataset):
    tr = Trainer(tiny_dataset, _cfg())
    before = {k: p.values.copy() for k, p in tr.params.named().items()}
    rep = tr.evaluate(attack_cfg=AttackConfig(method="fgm", eps=0.05),
                      attack_rng=np.random.default_rng(0))
    # evaluation must not move the parameters
    for k, p in tr.params.named().items():
        assert np.array_equal(p.values, before[k]), k
    n_test = len(tiny_dataset.test_shapes)
    n_seen = n_test * len(tiny_dataset.train_poses)
    n_unseen = n_test * len(tiny_dataset.unseen_poses)
    assert len(rep.rows) == n_seen + n_unseen
    seen_rows = [r for r in rep.rows if r.split == "seen"]
    assert all(r.pmd_adv is not None for r in seen_rows)
    assert all(r.pmd_adv is None for r in rep.rows if r.split == "unseen")
    # means recompute from the rows
    mean, std = rep.pmd_seen
    vals = np.array([r.pmd for r in seen_rows])
    assert mean == pytest.approx(vals.mean(), rel=1e-12)
    assert std == pytest.approx(vals.std(), rel=1e-12)
    text = rep.to_csv()
    assert text.startswith("split,identity,pose,pmd_x1e4,pmd_adv_x1e4\n")
    assert "seen_mean" in text and "adversarial_mean" in text


def test_eval_report_empty_split_stats():
    rep = EvalReport(rows=[EvalRow("seen", 0, 0, 1.0)])
    assert rep.pmd_unseen is None
    assert rep.pmd_adversarial is None


def test_pmd_scale_applied(tiny_dataset):
    tr = Trainer(tiny_dataset, _cfg())
    rep = tr.evaluate()
    # untrained output errors are O(0.1) squared distances, i.e. O(1e3) x1e-4
    assert rep.pmd_seen[0] > 1.0
    assert PMD_SCALE == 1e4
