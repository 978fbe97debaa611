"""Trainer tests: loss values, Adam against a direct simulation, schedules,
splits, determinism, and checkpoint round-trips."""

import math

import numpy as np
import pytest

from codonfusion.autodiff import Tensor
from codonfusion.fusion import TAU_MAX, TAU_MIN
from codonfusion.models import ModelConfig
from codonfusion.trackio import ManifestError, SyntheticSpec, load_manifest, make_synthetic
from codonfusion.training import (
    AdamState,
    EarlyStopper,
    NonFiniteGradientError,
    PlateauScheduler,
    TrainConfig,
    adam_step,
    config_hash,
    derive_splits,
    evaluate_samples,
    load_checkpoint,
    load_records,
    loss,
    model_from_checkpoint,
    save_checkpoint,
    train,
    worker_count,
)

LN3 = float(np.log(3.0))


def small_dataset(tmp_path, n=30, seed=17, task="regression", noise=0.4):
    spec = SyntheticSpec(n_samples=n, seed=seed, t_prime_range=(8, 11),
                         dims={"dna": 8, "rna": 6, "protein": 5},
                         planted="rna", noise_scale=noise, task=task)
    return load_manifest(make_synthetic(spec, tmp_path))


def small_model_config(**overrides):
    base = dict(d_shared=10, d_attn=5, channels=6, dna_reduced=10, n_heads=2,
                head_dropout=0.0, attn_dropout=0.0)
    base.update(overrides)
    return ModelConfig(**base)


class TestLoss:
    def test_perfect_regression_is_zero(self):
        preds = [Tensor([2.0]), Tensor([-1.0])]
        out = loss(preds, [2.0, -1.0], [], lam=0.0, task="regression")
        assert out.item() == 0.0

    def test_uniform_alpha_entropy_term(self):
        preds = [Tensor([1.0])]
        ent = [Tensor(np.array(LN3))]
        out = loss(preds, [1.0], ent, lam=1.0, task="regression")
        assert out.item() == pytest.approx(LN3, abs=1e-12)

    def test_cross_entropy_of_uniform_logits(self):
        preds = [Tensor([0.7, 0.7, 0.7])]
        out = loss(preds, [1], [], lam=0.0, task="classification")
        assert out.item() == pytest.approx(LN3, abs=1e-12)

    def test_class_index_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            loss([Tensor([0.0, 0.0])], [5], [], lam=0.0, task="classification")

    def test_lambda_zero_is_exactly_task_loss(self):
        preds = [Tensor([0.3]), Tensor([1.4])]
        ent = [Tensor(np.array(0.9)), Tensor(np.array(1.0))]
        with_alpha = loss(preds, [0.0, 1.0], ent, lam=0.0, task="regression")
        without = loss(preds, [0.0, 1.0], [], lam=0.0, task="regression")
        assert with_alpha.item() == without.item()
        manual = ((0.3 - 0.0) ** 2 + (1.4 - 1.0) ** 2) / 2
        assert with_alpha.item() == pytest.approx(manual, abs=1e-15)


def simulate_adam(p0, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Direct scalar simulation of bias-corrected Adam, written independently."""
    m = v = 0.0
    p = p0
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p = p - lr * m_hat / (math.sqrt(v_hat) + eps)
    return p


class TestAdam:
    def _param(self, value=1.0):
        p = Tensor(np.array([value]), requires_grad=True, name="p")
        return {"p": p}, p

    def test_first_step_magnitude_is_lr(self):
        for g in (0.3, -2.0, 17.0):
            params, p = self._param(1.0)
            p.grad = np.array([g])
            adam_step(params, AdamState(params), lr=1e-3)
            update = p.data[0] - 1.0
            assert abs(update) == pytest.approx(1e-3, rel=1e-6)
            assert np.sign(update) == -np.sign(g)

    def test_zero_grad_zero_decay_leaves_param(self):
        params, p = self._param(0.7)
        p.grad = np.array([0.0])
        adam_step(params, AdamState(params), lr=1e-2, weight_decay=0.0)
        assert p.data[0] == 0.7

    def test_fresh_state_steps_with_opposite_grads_cancel(self):
        # one first-step with +g then one first-step with -g undo each other
        params, p = self._param(0.5)
        p.grad = np.array([1.3])
        adam_step(params, AdamState(params), lr=1e-3)
        p.grad = np.array([-1.3])
        adam_step(params, AdamState(params), lr=1e-3)
        assert abs(p.data[0] - 0.5) < 1e-3 * 1e-3

    def test_sequential_opposite_grads_match_simulation(self):
        # keeping the state across the two steps leaves a momentum residue;
        # the implementation must match the direct simulation exactly
        params, p = self._param(0.5)
        state = AdamState(params)
        p.grad = np.array([1.3])
        adam_step(params, state, lr=1e-3)
        p.grad = np.array([-1.3])
        adam_step(params, state, lr=1e-3)
        expected = simulate_adam(0.5, [1.3, -1.3], lr=1e-3)
        assert p.data[0] == pytest.approx(expected, abs=1e-15)

    def test_longer_trajectory_matches_simulation(self):
        rng = np.random.default_rng(3)
        grads = rng.standard_normal(12)
        params, p = self._param(2.0)
        state = AdamState(params)
        for g in grads:
            p.grad = np.array([g])
            adam_step(params, state, lr=7e-3)
        assert p.data[0] == pytest.approx(simulate_adam(2.0, grads, 7e-3), abs=1e-12)

    def test_decoupled_weight_decay(self):
        params, p = self._param(1.0)
        p.grad = np.array([0.0])
        adam_step(params, AdamState(params), lr=0.1, weight_decay=0.5)
        assert p.data[0] == pytest.approx(1.0 * (1 - 0.1 * 0.5), abs=1e-15)

    def test_non_finite_grad_raises(self):
        params, p = self._param()
        p.grad = np.array([np.nan])
        with pytest.raises(NonFiniteGradientError, match="p"):
            adam_step(params, AdamState(params), lr=1e-3)

    def test_clamp_applied_after_step(self):
        params, p = self._param(0.021)
        p.grad = np.array([5.0])
        adam_step(params, AdamState(params), lr=0.1, clamps=[(p, TAU_MIN, TAU_MAX)])
        assert p.data[0] == TAU_MIN


class TestSchedules:
    def test_improving_metric_keeps_lr(self):
        sched = PlateauScheduler(1e-3, patience=5, factor=0.5)
        for metric in np.linspace(0.1, 0.9, 12):
            assert sched.observe(metric) == 1e-3

    def test_six_flat_epochs_halve_once(self):
        sched = PlateauScheduler(1e-3, patience=5, factor=0.5)
        lrs = [sched.observe(0.5) for _ in range(6)]
        assert lrs == [1e-3] * 5 + [5e-4]

    def test_two_plateaus_quarter(self):
        # step-through: first reduction on the 6th flat epoch, second five
        # flat epochs later
        sched = PlateauScheduler(1e-3, patience=5, factor=0.5)
        lrs = [sched.observe(0.5) for _ in range(11)]
        assert lrs[5] == 5e-4
        assert lrs[10] == 2.5e-4

    def test_early_stopper(self):
        stop = EarlyStopper(patience=3)
        assert not stop.observe(0.5)
        assert not stop.observe(0.4)
        assert not stop.observe(0.4)
        assert stop.observe(0.4)


class TestSplits:
    def test_carved_val_is_deterministic(self, tmp_path):
        manifest, _ = small_dataset(tmp_path, n=40)
        a = derive_splits(manifest, seed=5)
        b = derive_splits(manifest, seed=5)
        c = derive_splits(manifest, seed=6)
        assert [r.sample_id for r in a["val"]] == [r.sample_id for r in b["val"]]
        assert [r.sample_id for r in a["val"]] != [r.sample_id for r in c["val"]]
        assert len(a["val"]) == round(0.1 * len(manifest.split_samples("train")))
        train_ids = {r.sample_id for r in a["train"]}
        assert train_ids.isdisjoint({r.sample_id for r in a["val"]})

    def test_manifest_val_respected(self, tmp_path):
        manifest, _ = small_dataset(tmp_path, n=30)
        manifest.samples[0].split = "val"
        splits = derive_splits(manifest, seed=0)
        assert [r.sample_id for r in splits["val"]] == [manifest.samples[0].sample_id]


class TestTrainLoop:
    def _run(self, tmp_path, strategy="mil", lam=0.0, epochs=4, seed=11, n=30):
        manifest, base = small_dataset(tmp_path, n=n)
        cfg = TrainConfig(learning_rate=3e-3, batch_size=16, max_epochs=epochs,
                          early_stop_patience=epochs, plateau_patience=epochs,
                          lambda_entropy=lam, task="regression",
                          strategy=strategy, seed=seed)
        return train(manifest, base, cfg, small_model_config()), manifest, base, cfg

    def test_same_seed_identical_logs(self, tmp_path):
        run_a, *_ = self._run(tmp_path / "a")
        run_b, *_ = self._run(tmp_path / "b")
        assert run_a.log_text() == run_b.log_text()

    def test_best_checkpoint_is_max_metric(self, tmp_path):
        run, *_ = self._run(tmp_path, epochs=6)
        assert run.best_metric == max(r.val_metric for r in run.epochs)
        assert run.epochs[run.best_epoch].val_metric == run.best_metric

    def test_tau_stays_clamped(self, tmp_path):
        manifest, base = small_dataset(tmp_path, n=30)
        cfg = TrainConfig(learning_rate=0.5, batch_size=16, max_epochs=3,
                          early_stop_patience=3, plateau_patience=3,
                          lambda_entropy=1.0, task="regression", strategy="mil", seed=4)
        run = train(manifest, base, cfg, small_model_config())
        tau = run.best_params["gate.tau"][0]
        assert TAU_MIN <= tau <= TAU_MAX

    def test_entropy_penalty_lowers_entropy(self, tmp_path):
        run_free, *_ = self._run(tmp_path / "free", lam=0.0, epochs=6, n=60)
        run_pen, *_ = self._run(tmp_path / "pen", lam=1.0, epochs=6, n=60)
        assert run_pen.epochs[-1].mean_entropy < run_free.epochs[-1].mean_entropy

    def test_concat_logs_empty_alpha_fields(self, tmp_path):
        run, *_ = self._run(tmp_path, strategy="concat", epochs=2)
        assert run.epochs[0].mean_entropy is None
        row = run.epochs[0].to_csv_row()
        assert row.endswith(",,,")

    def test_task_mismatch_rejected(self, tmp_path):
        manifest, base = small_dataset(tmp_path, n=20)
        cfg = TrainConfig(task="classification", strategy="mil", seed=0)
        with pytest.raises(ManifestError, match="task"):
            train(manifest, base, cfg, small_model_config())

    def test_classification_end_to_end(self, tmp_path):
        manifest, base = small_dataset(tmp_path, n=40, task="classification")
        cfg = TrainConfig(learning_rate=3e-3, batch_size=16, max_epochs=3,
                          early_stop_patience=3, plateau_patience=3,
                          task="classification", strategy="mil", seed=8)
        run = train(manifest, base, cfg, small_model_config())
        assert 0.0 <= run.best_metric <= 1.0

    def test_early_stop_reason(self, tmp_path):
        manifest, base = small_dataset(tmp_path, n=30)
        cfg = TrainConfig(learning_rate=1e-6, batch_size=16, max_epochs=50,
                          early_stop_patience=2, plateau_patience=50,
                          task="regression", strategy="concat", seed=3)
        run = train(manifest, base, cfg, small_model_config())
        assert run.stop_reason == "early_stop"
        assert len(run.epochs) < 50


class TestCheckpoint:
    def test_round_trip_reproduces_metric(self, tmp_path):
        manifest, base = small_dataset(tmp_path, n=30)
        cfg = TrainConfig(learning_rate=3e-3, batch_size=16, max_epochs=4,
                          early_stop_patience=4, plateau_patience=4,
                          task="regression", strategy="mil", seed=11)
        run = train(manifest, base, cfg, small_model_config())
        path = tmp_path / "model.blfc"
        save_checkpoint(path, run)
        header = load_checkpoint(path)
        assert header["config_hash"] == config_hash(cfg, small_model_config())
        model = model_from_checkpoint(header)
        val_samples = load_records(derive_splits(manifest, cfg.seed)["val"], base, {})
        again = evaluate_samples(model, val_samples, "regression")
        assert again.metric == run.best_metric  # same code path, exact match

    def test_identical_runs_identical_checkpoints(self, tmp_path):
        for tag in ("a", "b"):
            manifest, base = small_dataset(tmp_path / tag, n=24)
            cfg = TrainConfig(learning_rate=3e-3, batch_size=12, max_epochs=3,
                              early_stop_patience=3, plateau_patience=3,
                              task="regression", strategy="mil", seed=9)
            run = train(manifest, base, cfg, small_model_config())
            save_checkpoint(tmp_path / f"{tag}.blfc", run)
        assert (tmp_path / "a.blfc").read_bytes() == (tmp_path / "b.blfc").read_bytes()

    def test_dim_mismatch_names_both_dims(self, tmp_path):
        manifest, base = small_dataset(tmp_path, n=24)
        cfg = TrainConfig(learning_rate=3e-3, batch_size=12, max_epochs=2,
                          early_stop_patience=2, plateau_patience=2,
                          task="regression", strategy="mil", seed=9)
        run = train(manifest, base, cfg, small_model_config())
        path = tmp_path / "m.blfc"
        save_checkpoint(path, run)
        header = load_checkpoint(path)
        model = model_from_checkpoint(header)
        other, other_base = small_dataset(tmp_path / "other", n=12)
        sample = load_records(derive_splits(other, 0)["train"][:1], other_base, {})[0]
        # rebuild with wrong dims: model expects rna dim 6, give it 9
        from codonfusion.alignment import EmbeddingTrack, Modality
        sample.tracks[Modality.RNA] = EmbeddingTrack(
            Modality.RNA, np.random.default_rng(0).standard_normal((24, 9)))
        with pytest.raises(Exception, match=r"(9|6)"):
            model.forward(sample)


class TestWorkers:
    def test_worker_count_default(self, monkeypatch):
        monkeypatch.delenv("BLF_THREADS", raising=False)
        assert worker_count() == 1

    def test_worker_count_invalid(self, monkeypatch):
        monkeypatch.setenv("BLF_THREADS", "zebra")
        with pytest.raises(ValueError, match="BLF_THREADS"):
            worker_count()

    def test_threaded_eval_matches_sequential(self, tmp_path, monkeypatch):
        manifest, base = small_dataset(tmp_path, n=24)
        cfg = TrainConfig(learning_rate=3e-3, batch_size=12, max_epochs=2,
                          early_stop_patience=2, plateau_patience=2,
                          task="regression", strategy="mil", seed=13)
        run = train(manifest, base, cfg, small_model_config())
        path = tmp_path / "m.blfc"
        save_checkpoint(path, run)
        model = model_from_checkpoint(load_checkpoint(path))
        samples = load_records(derive_splits(manifest, cfg.seed)["test"], base, {})
        monkeypatch.setenv("BLF_THREADS", "1")
        seq = evaluate_samples(model, samples, "regression")
        monkeypatch.setenv("BLF_THREADS", "3")
        par = evaluate_samples(model, samples, "regression")
        np.testing.assert_array_equal(seq.predictions, par.predictions)
        assert seq.metric == par.metric
