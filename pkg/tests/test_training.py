import numpy as np
import pytest

from kgrec.errors import EmptyBatch, InvalidConfig, LengthMismatch
from kgrec.kg import EntityKind, RelationKind
from kgrec.model import LossWeights, ModelDims, build_model
from kgrec.training import (
    Adam,
    LossCurve,
    TrainConfig,
    _click_examples,
    align_loss,
    bce_loss,
    clip_gradients,
    load_train_data,
    parse_config_file,
    total_loss,
    train,
)

TINY_DIMS = ModelDims(d_kg=8, d_sem=8, d_hidden=16, vocab_size=256)


class TestBceLoss:
    def test_half_probability(self):
        assert bce_loss([0.5], [1.0]) == pytest.approx(np.log(2.0), abs=1e-12)

    def test_hand_value(self):
        # -(ln 0.9 + ln 0.8) / 2
        assert bce_loss([0.9, 0.2], [1.0, 0.0]) == pytest.approx(0.16425,
                                                                 abs=1e-5)

    def test_clamping_keeps_loss_finite(self):
        assert np.isfinite(bce_loss([0.0, 1.0], [1.0, 0.0]))

    def test_errors(self):
        with pytest.raises(EmptyBatch):
            bce_loss([], [])
        with pytest.raises(LengthMismatch):
            bce_loss([0.5], [1.0, 0.0])


class TestAlignLoss:
    def test_identity_projector_identical_rows(self):
        rows = np.eye(3)
        assert align_loss(rows, rows, np.eye(3)) == 0.0

    def test_hand_value(self):
        kg = np.array([[1.0, 0.0]])
        sem = np.array([[0.0, 0.0]])
        assert align_loss(kg, sem, np.eye(2)) == 1.0

    def test_mean_over_rows(self):
        kg = np.array([[2.0], [0.0]])
        sem = np.zeros((2, 1))
        assert align_loss(kg, sem, np.eye(1)) == 2.0

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            align_loss(np.zeros((2, 2)), np.zeros((3, 2)), np.eye(2))


class TestTotalLoss:
    def test_arithmetic(self):
        weights = LossWeights(1.0, 0.5, 0.1)
        assert total_loss(1.0, 1.0, 2.5, weights) == pytest.approx(1.75)

    def test_zero_weights_isolate_terms(self):
        assert total_loss(3.0, 9.0, 9.0, LossWeights(1.0, 0.0, 0.0)) == 3.0


class TestTrainConfig:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.batch_size == 1024
        assert cfg.weights == LossWeights(1.0, 0.5, 0.1)

    @pytest.mark.parametrize("kwargs", [
        {"learning_rate": 0.0}, {"epochs": 0}, {"batch_size": 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidConfig):
            TrainConfig(**kwargs)


class TestParseConfigFile:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "train.cfg"
        path.write_text(
            "learning_rate = 0.005  # step size\n"
            "\n"
            "epochs = 3\n"
            "lambda2 = 0.25\n"
            "d_kg = 16\n"
            "grad_clip = none\n",
            encoding="utf-8")
        cfg = parse_config_file(path)
        assert cfg.learning_rate == 0.005
        assert cfg.epochs == 3
        assert cfg.weights.lambda2 == 0.25
        assert cfg.dims.d_kg == 16
        assert cfg.grad_clip is None
        assert cfg.batch_size == 1024  # untouched default

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("momentum = 0.9\n", encoding="utf-8")
        with pytest.raises(InvalidConfig, match="momentum"):
            parse_config_file(path)

    def test_bad_value(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("epochs = soon\n", encoding="utf-8")
        with pytest.raises(InvalidConfig):
            parse_config_file(path)

    def test_missing_equals(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("epochs\n", encoding="utf-8")
        with pytest.raises(InvalidConfig):
            parse_config_file(path)


class TestAdam:
    def test_first_step_is_signed_lr(self):
        params = {"w": np.array([1.0, -2.0])}
        grads = {"w": np.array([0.3, -0.7])}
        opt = Adam(params)
        opt.step(params, grads, lr=0.1)
        # bias-corrected first step moves by ~lr against the gradient sign
        np.testing.assert_allclose(params["w"], [1.0 - 0.1, -2.0 + 0.1],
                                   atol=1e-6)

    def test_zero_gradient_no_motion(self):
        params = {"w": np.array([3.0])}
        opt = Adam(params)
        opt.step(params, {"w": np.array([0.0])}, lr=0.5)
        assert params["w"][0] == 3.0

    def test_decoupled_weight_decay(self):
        params = {"w": np.array([2.0])}
        opt = Adam(params)
        opt.step(params, {"w": np.array([0.0])}, lr=0.1, weight_decay=0.5)
        assert params["w"][0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)


class TestClipGradients:
    def test_below_threshold_untouched(self):
        grads = {"a": np.array([0.3, 0.4])}
        clip_gradients(grads, 1.0)
        np.testing.assert_array_equal(grads["a"], [0.3, 0.4])

    def test_scaled_to_max_norm(self):
        grads = {"a": np.array([3.0, 0.0]), "b": np.array([4.0])}
        clip_gradients(grads, 1.0)
        total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        assert total == pytest.approx(1.0)
        # direction preserved
        assert grads["a"][0] / grads["b"][0] == pytest.approx(3.0 / 4.0)


class TestLossCurve:
    def test_save_csv(self, tmp_path):
        curve = LossCurve([1.5, 1.0], [2.0, 1.75])
        path = tmp_path / "curve.csv"
        curve.save_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,train_loss,test_loss"
        assert lines[1] == "1,1.5,2"
        assert len(lines) == 3


class TestLoadTrainData:
    def test_split_and_graph_leakage(self, tiny_bundle):
        data = load_train_data(tiny_bundle.out_dir, split_seed=0)
        train_users = {r.user for r in data.train_interactions}
        test_users = {r.user for r in data.test_interactions}
        valid_users = {r.user for r in data.valid_interactions}
        assert not (train_users & test_users)
        assert not (train_users & valid_users)
        # Clicks edges exist only for train users
        for triple in data.graph.triples:
            if triple.relation is RelationKind.CLICKS:
                assert triple.head in train_users

    def test_click_examples_balanced(self, tiny_bundle):
        data = load_train_data(tiny_bundle.out_dir)
        model = build_model(data.graph, data.ad_texts, data.user_tags,
                            TINY_DIMS, seed=0)
        ad_ids = model.graph.entities_of_kind(EntityKind.AD)
        rng = np.random.default_rng(0)
        users, ads, labels = _click_examples(data.train_interactions, model,
                                             ad_ids, rng)
        assert labels.sum() * 2 == len(labels)
        n_pos = sum(1 for r in data.train_interactions if r.label == 1)
        assert len(labels) == 2 * n_pos


class TestTrain:
    def run_tiny(self, tiny_bundle, epochs=2, seed=1):
        data = load_train_data(tiny_bundle.out_dir)
        cfg = TrainConfig(learning_rate=1e-3, batch_size=128, epochs=epochs,
                          seed=seed, dims=TINY_DIMS)
        return train(cfg, data)

    def test_curve_length_and_finiteness(self, tiny_bundle):
        _model, curve = self.run_tiny(tiny_bundle)
        assert len(curve.train_losses) == 2
        assert len(curve.test_losses) == 2
        assert all(np.isfinite(v) for v in curve.train_losses + curve.test_losses)

    def test_deterministic_per_seed(self, tiny_bundle):
        _m1, c1 = self.run_tiny(tiny_bundle)
        _m2, c2 = self.run_tiny(tiny_bundle)
        assert c1.train_losses == c2.train_losses
        assert c1.test_losses == c2.test_losses

    def test_seed_changes_curve(self, tiny_bundle):
        _m1, c1 = self.run_tiny(tiny_bundle, seed=1)
        _m2, c2 = self.run_tiny(tiny_bundle, seed=2)
        assert c1.train_losses != c2.train_losses

    def test_loss_decreases_over_epochs(self, tiny_bundle):
        _model, curve = self.run_tiny(tiny_bundle, epochs=5)
        assert curve.train_losses[-1] < curve.train_losses[0]
