"""
Tests for losses, AdamW, the learning-rate schedule, metrics and the
seeded training loop.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roadmamba.autograd import Tensor, gradcheck, parameter, precision
from roadmamba.data import Dataset, RunConfig, SyntheticSpec, load_checkpoint, render_dataset
from roadmamba.errors import ConfigError, DivergenceError, NumericalError, ShapeError
from roadmamba.training import (
    AXES,
    AdamW,
    LossSpec,
    OptimizerState,
    ScheduleState,
    Trainer,
    TrainerState,
    compute_metrics,
    confusion_matrix,
    cross_entropy,
    factor_accuracy,
    format_table,
    history_path,
    lr_at,
    optimizer_step,
    read_history,
    run_ablation,
    scaled_lr,
    summarize,
    total_loss,
    train_loop,
)

LN27 = math.log(27)


def _tiny_run(**overrides):
    fields = dict(
        image_side=32,
        batch_size=2,
        total_steps=3,
        warmup_frac=0.34,
        base_lr=1e-3,
        eval_interval=2,
        precision="float64",
    )
    fields.update(overrides)
    return RunConfig(**fields)


@pytest.fixture(scope="module")
def tiny_data():
    return render_dataset(SyntheticSpec(image_side=32, seed=1), 6)


# =============================================================================
# Losses
# =============================================================================


def test_uniform_logits_give_log_classes():
    loss = total_loss(Tensor(np.zeros((4, 27))), [], np.arange(4))
    assert loss.item() == pytest.approx(LN27, rel=1e-6)


def test_uniform_aux_heads_add_weighted_terms():
    logits = Tensor(np.zeros((2, 27)))
    aux = [(Tensor(np.zeros((2, 27))), Tensor(np.zeros((2, 27)))) for _ in range(13)]
    loss = total_loss(logits, aux, np.array([3, 5]), LossSpec(0.3))
    assert loss.item() == pytest.approx(LN27 * (1 + 0.3 * 26), rel=1e-5)


def test_zero_lambda_is_exactly_main_loss(rng):
    logits = Tensor(rng.normal(size=(3, 27)))
    aux = [Tensor(rng.normal(size=(3, 27)))]
    labels = np.array([0, 26, 4])
    main = cross_entropy(logits, labels).item()
    assert total_loss(logits, aux, labels, LossSpec(0.0)).item() == main


def test_absent_local_heads_are_skipped():
    logits = Tensor(np.zeros((1, 27)))
    aux = [(Tensor(np.zeros((1, 27))), None)] * 3
    loss = total_loss(logits, aux, np.array([0]), LossSpec(1.0))
    assert loss.item() == pytest.approx(4 * LN27, rel=1e-6)


def test_label_out_of_range():
    with pytest.raises(ConfigError):
        cross_entropy(Tensor(np.zeros((2, 27))), np.array([0, 27]))
    with pytest.raises(ShapeError):
        cross_entropy(Tensor(np.zeros((2, 27))), np.array([0, 1, 2]))
    with pytest.raises(ConfigError):
        total_loss(Tensor(np.zeros((1, 27))), [], np.array([0]), LossSpec(-0.1))


def test_cross_entropy_is_stable_for_large_logits():
    logits = Tensor(np.array([[1000.0, 0.0, -1000.0]]))
    assert cross_entropy(logits, np.array([0])).item() == pytest.approx(0.0, abs=1e-6)


def test_total_loss_gradient(rng):
    with precision(np.float64):
        logits = parameter(rng.normal(size=(3, 5)))
        aux_g = parameter(rng.normal(size=(3, 5)))
        aux_l = parameter(rng.normal(size=(3, 5)))
        labels = np.array([1, 4, 0])
        assert gradcheck(
            lambda: total_loss(logits, [(aux_g, aux_l)], labels), [logits, aux_g, aux_l]
        )


# =============================================================================
# Optimizer
# =============================================================================


def _param(value):
    p = parameter(np.array(value, dtype=np.float64))
    return p


def test_zero_gradient_without_decay_leaves_parameters():
    with precision(np.float64):
        p = _param([1.0, -2.0])
        p.grad = np.zeros(2)
        optimizer_step(OptimizerState(weight_decay=0.0), [("p", p)], lr=0.1)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_moments_are_kept_at_parameter_dtype():
    p = parameter(np.ones(3, dtype=np.float32))
    p.grad = np.ones(3, dtype=np.float32)
    state = OptimizerState()
    optimizer_step(state, [("p", p)], lr=1e-3)
    assert state.exp_avg["p"].dtype == state.exp_avg_sq["p"].dtype == np.float32


def test_first_step_moves_by_learning_rate():
    with precision(np.float64):
        p = _param([0.5])
        p.grad = np.ones(1)
        state = OptimizerState(weight_decay=0.0)
        optimizer_step(state, [("p", p)], lr=0.01)
    assert p.data[0] == pytest.approx(0.5 - 0.01, abs=1e-9)
    assert state.step == 1
    np.testing.assert_allclose(state.exp_avg["p"], [0.1])


def test_decay_only_shrinks_exponentially():
    with precision(np.float64):
        p = _param([2.0])
        p.grad = np.zeros(1)
        optimizer_step(OptimizerState(weight_decay=0.05), [("p", p)], lr=0.1)
    assert p.data[0] == pytest.approx(2.0 * (1 - 0.1 * 0.05))


def test_nan_gradient_aborts_without_changes():
    with precision(np.float64):
        good, bad = _param([1.0]), _param([2.0])
        good.grad = np.ones(1)
        bad.grad = np.array([np.nan])
        state = OptimizerState()
        with pytest.raises(NumericalError, match="bad"):
            optimizer_step(state, [("good", good), ("bad", bad)], lr=0.1)
    assert good.data[0] == 1.0 and state.step == 0 and not state.exp_avg


def test_huge_epsilon_is_scaled_sgd_on_first_moment():
    with precision(np.float64):
        p = _param([1.0, 1.0])
        state = OptimizerState(eps=1e6, weight_decay=0.0)
        lr = 1.0
        for _ in range(3):
            p.grad = np.array([2.0, -4.0])
            optimizer_step(state, [("p", p)], lr=lr)
    # m_hat equals the constant gradient; each update is lr * g / eps
    np.testing.assert_allclose(p.data, [1.0 - 3 * 2.0 / 1e6, 1.0 + 3 * 4.0 / 1e6], rtol=1e-9)


def test_adamw_wrapper_updates_and_clears():
    with precision(np.float64):
        p = _param([1.0, 2.0])
        opt = AdamW([("w", p)], weight_decay=0.0)
        (p * p).sum().backward()
        opt.step(0.1)
        assert p.grad is not None
        opt.zero_grad()
    assert p.grad is None
    np.testing.assert_allclose(p.data, [0.9, 1.9], atol=1e-6)
    assert opt.state.step == 1


# =============================================================================
# Schedule
# =============================================================================


def test_schedule_examples():
    assert RunConfig().warmup_frac == 0.05
    sched = ScheduleState(base_lr=1e-3, warmup_steps=10, total_steps=100, min_lr=1e-5)
    assert lr_at(0, sched) == 0.0
    assert lr_at(10, sched) == pytest.approx(1e-3)
    assert lr_at(100, sched) == pytest.approx(1e-5)
    assert lr_at(5, sched) == pytest.approx(5e-4)
    assert lr_at(55, sched) == pytest.approx(1e-5 + 0.5 * (1e-3 - 1e-5))
    assert lr_at(1000, sched) == lr_at(100, sched)


def test_schedule_is_continuous_and_decreasing_after_warmup():
    sched = ScheduleState(base_lr=1.0, warmup_steps=20, total_steps=200)
    values = [lr_at(s, sched) for s in range(201)]
    steps = np.diff(values)
    assert np.all(np.abs(steps) <= 1.0 / 20 + 1e-12)
    assert np.all(steps[20:] <= 0)


def test_schedule_validation():
    with pytest.raises(ConfigError):
        ScheduleState(1e-3, 20, 10).validate()
    with pytest.raises(ConfigError):
        ScheduleState(1e-3, 0, 10, min_lr=1e-2).validate()


def test_linear_scaling_rule():
    assert scaled_lr(1e-4, 64) == pytest.approx(2e-4)
    assert RunConfig(batch_size=8).peak_lr == pytest.approx(2.5e-5)
    assert RunConfig(batch_size=8, scale_lr=False).peak_lr == 1e-4


# =============================================================================
# Metrics
# =============================================================================


def test_two_class_metrics_example():
    report = compute_metrics([0, 0, 1, 1], [0, 1, 1, 1], 2)
    assert report.top1 == pytest.approx(0.75)
    assert report.mean_precision == pytest.approx(0.75)
    assert report.mean_recall == pytest.approx(5 / 6)
    assert report.mean_f1 == pytest.approx((2 / 3 + 4 / 5) / 2)
    np.testing.assert_array_equal(report.confusion, [[1, 0], [1, 2]])


def test_perfect_predictions():
    labels = np.arange(27)
    report = compute_metrics(labels, labels, 27)
    assert report.summary() == {"top1": 1.0, "meanP": 1.0, "meanR": 1.0, "meanF1": 1.0}


def test_constant_predictor_on_balanced_labels():
    labels = np.repeat(np.arange(27), 3)
    report = compute_metrics(np.zeros_like(labels), labels, 27)
    assert report.top1 == pytest.approx(1 / 27)
    assert report.recall[0] == 1.0 and report.recall[1:].sum() == 0.0


def test_metrics_input_errors():
    with pytest.raises(ConfigError):
        compute_metrics([], [], 3)
    with pytest.raises(ShapeError):
        compute_metrics([0, 1], [0], 3)
    with pytest.raises(ConfigError):
        compute_metrics([0, 3], [0, 1], 3)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_metrics_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    k = 27
    preds = rng.integers(0, k, size=1000)
    labels = rng.integers(0, k, size=1000)
    cm = np.zeros((k, k), dtype=np.int64)
    for p, t in zip(preds, labels):
        cm[t, p] += 1
    report = compute_metrics(preds, labels, k)
    np.testing.assert_array_equal(report.confusion, cm)
    assert np.array_equal(cm.sum(axis=1), np.bincount(labels, minlength=k))
    precision_, recall_ = [], []
    for c in range(k):
        tp = cm[c, c]
        precision_.append(tp / cm[:, c].sum() if cm[:, c].sum() else 0.0)
        recall_.append(tp / cm[c].sum() if cm[c].sum() else 0.0)
    assert report.top1 == np.trace(cm) / 1000
    np.testing.assert_array_equal(report.precision, precision_)
    np.testing.assert_array_equal(report.recall, recall_)


def test_confusion_rows_are_labels():
    cm = confusion_matrix(np.array([2, 2]), np.array([0, 1]), 3)
    assert cm[0, 2] == 1 and cm[1, 2] == 1 and cm.sum() == 2


def test_factor_accuracy_reads_class_triples():
    # class 13 = (1, 1, 1); class 14 = (1, 1, 2); class 4 = (0, 1, 1)
    acc = factor_accuracy([14, 4], [13, 13])
    assert acc == {"hue": 0.5, "stripe": 1.0, "checker": 0.5}


# =============================================================================
# Training loop
# =============================================================================


def test_batches_follow_seeded_epoch_order(tiny_data):
    trainer = Trainer(_tiny_run(), tiny_data)
    assert trainer.steps_per_epoch == 3
    epoch0 = np.concatenate([trainer.batch_indices(s) for s in range(3)])
    assert sorted(epoch0.tolist()) == list(range(6))
    np.testing.assert_array_equal(trainer.batch_indices(3), trainer.epoch_order(1)[:2])
    again = Trainer(_tiny_run(), tiny_data)
    np.testing.assert_array_equal(again.epoch_order(4), trainer.epoch_order(4))


def test_same_seed_gives_identical_loss_curves(tiny_data, tmp_path):
    first = train_loop(_tiny_run(), tiny_data, seed=5)
    second = train_loop(_tiny_run(), tiny_data, seed=5)
    other = train_loop(_tiny_run(), tiny_data, seed=6)
    assert len(first.losses) == 3
    assert np.array(first.losses).tobytes() == np.array(second.losses).tobytes()
    assert first.losses != other.losses
    assert [row.step for row in first.history] == [2, 3]


def test_resume_continues_the_same_run(tiny_data, tmp_path):
    full = train_loop(_tiny_run(total_steps=4), tiny_data)

    ckpt = tmp_path / "run.rmba"
    partial = Trainer(_tiny_run(total_steps=4, checkpoint_interval=2), tiny_data, None, ckpt)
    with precision(np.float64):
        partial.train_step()
        partial.train_step()
    partial.save()

    resumed = Trainer(_tiny_run(total_steps=4), tiny_data, None, tmp_path / "resumed.rmba")
    resumed.resume(ckpt)
    assert resumed.train_state.step == 2
    state = resumed.run()
    assert state.losses == full.losses[2:]
    assert resumed.state is TrainerState.FINISHED


def test_history_csv_written_beside_checkpoint(tiny_data, tmp_path):
    ckpt = tmp_path / "run.rmba"
    train_loop(_tiny_run(), tiny_data, checkpoint_path=ckpt)
    assert ckpt.is_file()
    csv_path = history_path(ckpt)
    assert csv_path.name == "run.history.csv"
    assert csv_path.read_text().splitlines()[0] == "step,lr,loss,top1,meanP,meanR,meanF1"
    rows = read_history(csv_path)
    assert [r.step for r in rows] == [2, 3]
    assert all(0.0 <= r.top1 <= 1.0 for r in rows)


def test_divergence_stops_with_last_good_checkpoint(tiny_data, tmp_path):
    ckpt = tmp_path / "run.rmba"
    trainer = Trainer(_tiny_run(), tiny_data, checkpoint_path=ckpt)
    trainer.save()
    trainer.model.stem.conv.weight.data[...] = np.nan
    with pytest.raises(DivergenceError) as info:
        trainer.run()
    assert info.value.last_good_checkpoint == str(ckpt)
    assert trainer.state is TrainerState.DIVERGED


def test_divergence_without_manual_save_names_initial_checkpoint(tiny_data, tmp_path):
    ckpt = tmp_path / "run.rmba"
    poisoned = Dataset(np.full_like(tiny_data.images, np.nan), tiny_data.labels)
    trainer = Trainer(_tiny_run(), poisoned, checkpoint_path=ckpt)
    with pytest.raises(DivergenceError) as info:
        trainer.run()
    assert info.value.last_good_checkpoint == str(ckpt)
    assert load_checkpoint(ckpt).step == 0


def test_trainer_rejects_mismatched_images(tiny_data):
    with pytest.raises(ConfigError):
        Trainer(_tiny_run(image_side=64), tiny_data)


def test_ablation_axes():
    assert [arm.name for arm in AXES["scan"]] == ["GlobalMamba", "WindowMamba", "RoadMamba*"]
    assert [arm.name for arm in AXES["daf"]] == ["GCLT", "GLTC", "GTLC"]
    assert AXES["aux"][-1].overrides["lambda_aux"] == pytest.approx(0.3)
    assert all(arm.overrides["lambda_aux"] == 0.0 for arm in AXES["aux"][:-1])


def test_ablation_unknown_axis(tiny_data):
    with pytest.raises(ConfigError):
        run_ablation(_tiny_run(), "depth", tiny_data, tiny_data)


def test_ablation_table(tiny_data):
    results = run_ablation(_tiny_run(total_steps=1), "daf", tiny_data, tiny_data, seeds=[0])
    rows = summarize(results)
    assert [r["arm"] for r in rows] == ["GCLT", "GLTC", "GTLC"]
    table = format_table(rows)
    assert table.splitlines()[0].split()[:2] == ["arm", "top1"]
    assert len(table.splitlines()) == 4


@pytest.mark.slow
def test_micro_model_learns_below_uniform_loss():
    data = render_dataset(SyntheticSpec(image_side=32, seed=3, stratified=True), 54)
    config = RunConfig(
        image_side=32,
        batch_size=18,
        total_steps=150,
        base_lr=2e-3,
        scale_lr=False,
        eval_interval=50,
        seed=0,
    )
    state = train_loop(config, data)
    assert np.mean(state.losses[-10:]) < LN27
    assert np.mean(state.losses[-10:]) < np.mean(state.losses[:10])


@pytest.mark.slow
def test_dual_scan_beats_global_only_on_local_cue():
    spec = SyntheticSpec(image_side=64, seed=0)
    train = render_dataset(spec, 10_000)
    held_out = render_dataset(spec, 2_000, offset=10_000)
    config = RunConfig(total_steps=5000, base_lr=1e-3, eval_interval=0)
    rows = {
        row["arm"]: row
        for row in summarize(run_ablation(config, "scan", train, held_out, seeds=[0, 1, 2]))
    }
    dual, global_only = rows["RoadMamba*"], rows["GlobalMamba"]
    assert dual["top1"] >= 0.90
    assert dual["checker"] - global_only["checker"] >= 0.03
    assert dual["meanF1"] >= global_only["meanF1"]
