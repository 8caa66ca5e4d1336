import json

import numpy as np
import pytest

from ssnet.autodiff.tensor import Tensor
from ssnet.dataset import generate_synthetic, map_labels, normalize_set, profiles_for
from ssnet.errors import ChecksumMismatch, DivergedLoss, EmptyDataset, NonFiniteGradient, SchemaVersionMismatch, ShapeMismatch
from ssnet.model import SSNetConfig, build
from ssnet.trainer import (
    AdamState,
    EarlyStopping,
    HyperParams,
    adam_step,
    batches,
    checkpoint_load,
    checkpoint_save,
    clip_global_norm,
    evaluate,
    train,
)


def P(v):
    return {"p": Tensor(np.asarray(v, dtype=np.float64), requires_grad=True)}


def small_data(n_per_class=8, seed=0):
    e = generate_synthetic(profiles_for(["W", "N3", "REM"]), n_per_class, 2, 100.0, seed=seed, epoch_s=2.43)
    return map_labels(normalize_set(e), "three")


def small_model(dtype="float64", seed=0):
    cfg = SSNetConfig(n_channels=2, epoch_len=243, n_classes=3, cnn_maps=(4,) * 5, lstm_sizes=(4, 3), dtype=dtype)
    return build(cfg, seed)


class TestAdam:
    def test_zero_grad_fresh_state(self):
        params = P([1.0, -2.0, 3.0])
        state = AdamState.init(params)
        adam_step(params, {"p": np.zeros(3)}, state, HyperParams())
        np.testing.assert_array_equal(params["p"].data, [1.0, -2.0, 3.0])
        assert state.t == 1

    def test_first_step(self):
        params = P(0.0)
        adam_step(params, {"p": np.array(1.0)}, AdamState.init(params), HyperParams(learning_rate=0.002))
        # bias-corrected first step is -lr * g / (|g| + eps)
        assert float(params["p"].data) == pytest.approx(-0.002 * 1.0 / (1.0 + 1e-8), abs=1e-15)

    def test_recurrence_by_hand(self):
        params = P([0.5])
        state = AdamState.init(params)
        hp = HyperParams(learning_rate=0.01)
        m = v = 0.0
        p = 0.5
        for t, g in enumerate([0.3, -0.1, 0.7], start=1):
            adam_step(params, {"p": np.array([g])}, state, hp)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            p -= 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert params["p"].data[0] == pytest.approx(p, abs=1e-15)

    def test_zero_grad_after_history_follows_recurrence(self):
        # a zero gradient on a warm state still moves the parameter by the decayed first moment
        params = P([0.0])
        state = AdamState.init(params)
        hp = HyperParams()
        adam_step(params, {"p": np.array([1.0])}, state, hp)
        before = params["p"].data.copy()
        adam_step(params, {"p": np.array([0.0])}, state, hp)
        m_hat = 0.09 / (1 - 0.81)
        v_hat = 0.999 * 0.001 / (1 - 0.999**2)
        np.testing.assert_allclose(params["p"].data, before - 0.002 * m_hat / (np.sqrt(v_hat) + 1e-8), rtol=1e-12)

    def test_two_steps_reduce_quadratic(self):
        params = P(2.0)
        state = AdamState.init(params)
        losses = [4.0]
        for _ in range(2):
            adam_step(params, {"p": np.array(2 * 2.0)}, state, HyperParams())
            losses.append(float(params["p"].data) ** 2)
        assert losses[0] > losses[1] > losses[2]

    def test_quadratic_converges(self):
        params = P(0.0)
        state = AdamState.init(params)
        hp = HyperParams(learning_rate=0.002)
        for step in range(1, 5001):
            p = float(params["p"].data)
            adam_step(params, {"p": np.array(2 * (p - 3.0))}, state, hp)
            if abs(float(params["p"].data) - 3.0) < 0.01:
                break
        assert abs(float(params["p"].data) - 3.0) < 0.01
        assert step <= 5000

    def test_v_nonnegative(self, rng):
        params = P(rng.standard_normal(10))
        state = AdamState.init(params)
        for _ in range(20):
            adam_step(params, {"p": rng.standard_normal(10) * 100}, state, HyperParams())
        assert np.all(state.v["p"] >= 0)

    def test_shape_mismatch(self):
        params = P([1.0, 2.0])
        with pytest.raises(ShapeMismatch):
            adam_step(params, {"p": np.zeros(3)}, AdamState.init(params), HyperParams())

    def test_non_finite(self):
        params = P([1.0, 2.0])
        with pytest.raises(NonFiniteGradient):
            adam_step(params, {"p": np.array([np.nan, 0.0])}, AdamState.init(params), HyperParams())

    def test_clip(self):
        g = {"a": np.array([3.0]), "b": np.array([4.0])}
        assert clip_global_norm(g, 1.0) == 5.0
        np.testing.assert_allclose([g["a"][0], g["b"][0]], [0.6, 0.8])

    @pytest.mark.parametrize("kw", [{"learning_rate": 0}, {"batch_size": 0}, {"beta1": 1.0}])
    def test_hyperparam_validation(self, kw):
        with pytest.raises(ValueError):
            HyperParams(**kw).validate()


class TestEarlyStopping:
    def test_patience_two_worsening(self):
        es = EarlyStopping(2)
        evaluations = 0
        for k, loss in enumerate([1.0, 2.0, 3.0, 4.0, 5.0]):
            evaluations += 1
            _, stop = es.update(loss, k)
            if stop:
                break
        assert evaluations == 3 and es.best_epoch == 0

    def test_improvement_resets(self):
        es = EarlyStopping(2)
        seq = [1.0, 1.5, 0.9, 1.0, 1.1]
        stops = [es.update(v, k)[1] for k, v in enumerate(seq)]
        assert stops == [False, False, False, False, True]


class TestBatches:
    def test_short_final_batch_kept(self):
        parts = batches(10, 4, np.arange(10))
        assert [len(b) for b in parts] == [4, 4, 2]

    def test_single_leftover_merged(self):
        parts = batches(9, 4, np.arange(9))
        assert [len(b) for b in parts] == [4, 5]
        np.testing.assert_array_equal(np.concatenate(parts), np.arange(9))


class TestTrain:
    def test_history_and_selection(self):
        data = small_data()
        model = small_model()
        best, hist, state = train(model, data, data, HyperParams(batch_size=8, max_epochs=4, patience=10))
        assert len(hist.train_loss) == len(hist.val_loss) == len(hist.val_accuracy) == 4
        assert hist.val_loss[hist.best_epoch] == min(hist.val_loss)
        loss, _, _ = evaluate(best, data.x.astype(np.float64), data.labels)
        assert loss == pytest.approx(min(hist.val_loss), rel=1e-12)

    def test_deterministic_float64(self):
        data = small_data()
        runs = [train(small_model(), data, data, HyperParams(batch_size=8, max_epochs=3, seed=4))[1] for _ in range(2)]
        assert runs[0].train_loss == runs[1].train_loss
        assert runs[0].val_loss == runs[1].val_loss

    def test_early_stop(self):
        data = small_data()
        _, hist, _ = train(small_model(), data, data, HyperParams(batch_size=8, max_epochs=50, patience=0))
        assert hist.stopped_early and len(hist.train_loss) < 50

    def test_empty(self):
        data = small_data()
        with pytest.raises(EmptyDataset):
            train(small_model(), data.subset([]), data, HyperParams())

    def test_shape_mismatch(self):
        data = small_data()
        model = build(SSNetConfig(n_channels=3, epoch_len=243, n_classes=3, cnn_maps=(2,) * 5, lstm_sizes=(2, 2)), 0)
        with pytest.raises(ShapeMismatch):
            train(model, data, data, HyperParams())

    def test_diverges(self):
        data = small_data()
        with pytest.raises(DivergedLoss), np.errstate(all="ignore"):
            train(small_model("float32"), data, data, HyperParams(learning_rate=1e6, batch_size=8, max_epochs=5))

    def test_overfit_64_epochs(self):
        e = generate_synthetic(profiles_for(["W", "N3", "REM"]), [22, 21, 21], 2, 100.0, seed=0, epoch_s=2.43)
        data = map_labels(normalize_set(e), "three")
        cfg = SSNetConfig(n_channels=2, epoch_len=243, n_classes=3, cnn_maps=(8,) * 5, lstm_sizes=(8, 8))
        _, hist, _ = train(build(cfg, 0), data, data, HyperParams(max_epochs=200, patience=200))
        assert min(hist.train_loss) < 0.01


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        data = small_data()
        _, _, state = train(small_model(), data, data, HyperParams(batch_size=8, max_epochs=2))
        checkpoint_save(state, tmp_path / "ck")
        back = checkpoint_load(tmp_path / "ck")
        for k, v in state.model.state_arrays().items():
            assert back.model.state_arrays()[k].tobytes() == v.tobytes()
        for k in state.adam.m:
            assert back.adam.m[k].tobytes() == state.adam.m[k].tobytes()
            assert back.adam.v[k].tobytes() == state.adam.v[k].tobytes()
        assert back.adam.t == state.adam.t and back.epoch == 2
        assert back.history.to_dict() == state.history.to_dict()
        meta = json.loads((tmp_path / "ck" / "meta.json").read_text())
        assert meta["rng"]["next_epoch"] == 2

    @pytest.mark.parametrize("dtype,rtol", [("float64", 0.0), ("float32", 1e-5)])
    def test_resume_matches_uninterrupted(self, tmp_path, dtype, rtol):
        data = small_data()
        hp = HyperParams(batch_size=8, max_epochs=4, seed=2)
        _, full, _ = train(small_model(dtype), data, data, hp)
        _, _, state = train(small_model(dtype), data, data, HyperParams(batch_size=8, max_epochs=2, seed=2))
        checkpoint_save(state, tmp_path / "ck")
        loaded = checkpoint_load(tmp_path / "ck")
        _, resumed, _ = train(loaded.model, data, data, hp, resume=loaded)
        np.testing.assert_allclose(resumed.train_loss, full.train_loss, rtol=rtol, atol=0)
        np.testing.assert_allclose(resumed.val_loss, full.val_loss, rtol=rtol, atol=0)

    def test_corrupted(self, tmp_path):
        data = small_data()
        _, _, state = train(small_model(), data, data, HyperParams(batch_size=8, max_epochs=1))
        checkpoint_save(state, tmp_path)
        raw = bytearray((tmp_path / "weights.bin").read_bytes())
        raw[100] ^= 1
        (tmp_path / "weights.bin").write_bytes(bytes(raw))
        with pytest.raises(ChecksumMismatch):
            checkpoint_load(tmp_path)

    def test_schema(self, tmp_path):
        data = small_data()
        _, _, state = train(small_model(), data, data, HyperParams(batch_size=8, max_epochs=1))
        checkpoint_save(state, tmp_path)
        meta = json.loads((tmp_path / "meta.json").read_text())
        meta["schema_version"] = 7
        (tmp_path / "meta.json").write_text(json.dumps(meta))
        with pytest.raises(SchemaVersionMismatch):
            checkpoint_load(tmp_path)
