import json

import numpy as np
import pytest

from ssnet.autodiff.suite import check_layer
from ssnet.errors import InvalidConfig, ShapeMismatch
from ssnet.model import ISRUC, SLEEP_EDFX, SSNetConfig, build, manifest_json, with_dtype

TINY = SSNetConfig(n_channels=2, epoch_len=243, n_classes=2, cnn_maps=(3, 3, 2, 2, 2), lstm_sizes=(3, 2))


@pytest.fixture(scope="module")
def default_model():
    return build(SLEEP_EDFX, init_seed=0)


class TestConfig:
    def test_defaults_reproduce_table(self):
        c = SSNetConfig()
        assert c.cnn_maps == (64, 32, 20, 16, 10)
        assert c.cnn_kernels == (5, 3, 2, 8, 3)
        assert (c.pool, c.dropout, c.lstm_sizes, c.recurrent_dropout) == (3, 0.02, (64, 20), 0.02)

    def test_sleep_edfx_chain(self):
        assert SLEEP_EDFX.shape_chain() == [3000, 1000, 333, 111, 37, 12]
        assert SLEEP_EDFX.cnn_features == 120
        assert SLEEP_EDFX.concat_features == 140

    def test_isruc_chain(self):
        assert ISRUC.shape_chain() == [6000, 2000, 666, 222, 74, 24]
        assert ISRUC.cnn_features == 240
        assert ISRUC.concat_features == 260

    @pytest.mark.parametrize("epoch_len", [100, 242])
    def test_too_short(self, epoch_len):
        with pytest.raises(InvalidConfig):
            build(SSNetConfig(epoch_len=epoch_len))

    def test_minimum_length_ok(self):
        assert build(SSNetConfig(n_channels=1, epoch_len=243)).config.shape_chain()[-1] == 1

    def test_dict_round_trip(self):
        c = SSNetConfig(n_channels=5, cnn_maps=[8, 8, 8, 8, 8])
        assert SSNetConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c


class TestBuild:
    def test_deterministic(self):
        a, b = build(TINY, 3), build(TINY, 3)
        for k, v in a.state_arrays().items():
            assert v.tobytes() == b.state_arrays()[k].tobytes()
        c = build(TINY, 4)
        assert any(not np.array_equal(v, c.state_arrays()[k]) for k, v in a.state_arrays().items())

    def test_manifest(self, default_model):
        m = json.loads(manifest_json(default_model))
        assert m["shape_chain"] == [3000, 1000, 333, 111, 37, 12]
        assert m["cnn_features"] == 120 and m["concat_features"] == 140
        assert m["init_seed"] == 0 and len(m["weights_sha256"]) == 64
        assert m["parameter_count"] == default_model.param_summary()["total"]
        assert m["overrides"] == {}

    def test_overrides_recorded(self):
        m = build(TINY, 0).manifest()
        assert m["overrides"]["cnn_maps"] == [3, 3, 2, 2, 2]

    def test_init_scheme(self, default_model):
        b = default_model.lstm1.bias.data
        np.testing.assert_array_equal(b[0], 1.0)  # forget gate offset
        np.testing.assert_array_equal(b[1:], 0.0)
        w = default_model.convs[0].weight.data
        limit = np.sqrt(6 / (4 * 5 + 64 * 5))
        assert np.abs(w).max() <= limit


class TestParamSummary:
    def test_counts(self, default_model):
        rows = {r["name"]: r["count"] for r in default_model.param_summary()["layers"]}
        assert rows["conv1.weight"] == 64 * 4 * 5
        assert rows["dense.weight"] + rows["dense.bias"] == (120 + 20) * 3 + 3
        assert rows["lstm1.weight"] == 4 * 64 * (64 + 4)
        assert rows["lstm2.weight"] == 4 * 20 * (20 + 64)
        assert sum(rows.values()) == default_model.param_summary()["total"]


class TestForward:
    def test_shape(self, default_model, rng):
        x = rng.standard_normal((2, 4, 3000)).astype(np.float32)
        assert default_model.forward(x).shape == (2, 3)

    def test_branch_widths(self, default_model, rng):
        x = rng.standard_normal((2, 4, 3000)).astype(np.float32)
        cnn, rnn = default_model.branch_features(x)
        assert (cnn.shape[1], rnn.shape[1]) == (120, 20)
        assert cnn.shape[1] + rnn.shape[1] == 140

    def test_eval_deterministic_and_consistent(self, default_model, rng):
        x = rng.standard_normal((3, 4, 3000)).astype(np.float32)
        a, b = default_model.forward(x).data, default_model.forward(x).data
        assert a.tobytes() == b.tobytes()
        assert default_model.classify(*default_model.branch_features(x)).data.tobytes() == a.tobytes()

    def test_batch_permutation(self, rng):
        m = build(TINY, 1)
        x = rng.standard_normal((5, 2, 243))
        perm = rng.permutation(5)
        np.testing.assert_allclose(m.forward(x[perm]).data, m.forward(x).data[perm], rtol=1e-6, atol=1e-7)

    def test_shape_mismatch(self, default_model):
        with pytest.raises(ShapeMismatch):
            default_model.forward(np.zeros((1, 3, 3000), np.float32))
        with pytest.raises(ShapeMismatch):
            default_model.branch_features(np.zeros((1, 4, 2999), np.float32))

    def test_train_mode_needs_rng(self, rng):
        with pytest.raises(ValueError):
            build(TINY, 0).forward(rng.standard_normal((2, 2, 243)), train=True)

    def test_train_mode_seeded(self, rng):
        m = build(TINY, 0)
        x = rng.standard_normal((4, 2, 243))
        a = m.copy().forward(x, True, np.random.default_rng(1)).data
        b = m.copy().forward(x, True, np.random.default_rng(1)).data
        np.testing.assert_array_equal(a, b)


class TestPredict:
    def _constant_logits(self, bias):
        m = build(TINY if len(bias) == 2 else SSNetConfig(n_channels=2, epoch_len=243, n_classes=len(bias), cnn_maps=(2,) * 5, lstm_sizes=(2, 2)), 0)
        m.classifier.weight.data[...] = 0
        m.classifier.bias.data[...] = bias
        return m

    def test_tie_to_lower(self, rng):
        m = self._constant_logits([0.0, 0.0, 0.0])
        cls, p = m.predict(rng.standard_normal((3, 2, 243)))
        np.testing.assert_array_equal(cls, 0)
        np.testing.assert_allclose(p, 1 / 3)

    def test_argmax(self, rng):
        cls, p = self._constant_logits([1.0, 3.0, 2.0]).predict(rng.standard_normal((2, 2, 243)))
        np.testing.assert_array_equal(cls, 1)
        np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-9)


class TestPersistence:
    def test_bytes_round_trip(self):
        m = build(TINY, 5)
        blob, index = m.to_bytes()
        back = type(m).from_bytes(blob, index, TINY)
        for k, v in m.state_arrays().items():
            np.testing.assert_array_equal(back.state_arrays()[k], v)

    def test_with_dtype(self):
        m = with_dtype(build(TINY, 0), "float64")
        assert m.dtype == np.float64 and m.named_parameters()["conv1.weight"].dtype == np.float64


def test_tiny_model_gradcheck():
    r = check_layer("ssnet_tiny", n_seeds=2, max_entries=30)
    assert r.passed, r.line()
