"""Training orchestration: determinism, neutrality, traces, evaluation."""

import numpy as np
import pytest

from xnesyl import training as training_module
from xnesyl.alignment import WeightScheme
from xnesyl.datagen import GeneratorConfig, generate_dataset, split_dataset
from xnesyl.errors import ValidationError
from xnesyl.kg import monumai_kg
from xnesyl.training import (
    TrainConfig,
    config_echo,
    config_from_echo,
    evaluate,
    metrics_report,
    train_shap_backprop,
    train_standard,
)

FAST = dict(
    epochs_det=3,
    epochs_clf=10,
    lr_det=0.3,
    lr_clf=0.05,
    background_size=12,
    shap_mode="kernel",
    shap_samples=64,
)


@pytest.fixture(scope="module")
def small_splits():
    kg = monumai_kg()
    cfg = GeneratorConfig(seed=17, noise_rate=0.2)
    return kg, split_dataset(generate_dataset(kg, cfg, 150))


class TestStandard:
    def test_deterministic(self, small_splits):
        kg, splits = small_splits
        a = train_standard(kg, splits, TrainConfig(seed=5, **FAST))
        b = train_standard(kg, splits, TrainConfig(seed=5, **FAST))
        assert a.metrics == b.metrics
        np.testing.assert_array_equal(a.detector.weights, b.detector.weights)
        np.testing.assert_array_equal(a.classifier.w1, b.classifier.w1)

    def test_scheme_rejected(self, small_splits):
        kg, splits = small_splits
        cfg = TrainConfig(seed=5, scheme=WeightScheme("linear_bbox"), **FAST)
        with pytest.raises(ValidationError, match="train_shap_backprop"):
            train_standard(kg, splits, cfg)

    def test_trace_has_one_entry_per_epoch(self, small_splits):
        kg, splits = small_splits
        artifacts = train_standard(kg, splits, TrainConfig(seed=6, **FAST))
        assert [e["epoch"] for e in artifacts.per_epoch] == [1, 2, 3]
        assert all(e["alpha_mean"] == 1.0 for e in artifacts.per_epoch)

    def test_metrics_keys(self, small_splits):
        kg, splits = small_splits
        artifacts = train_standard(kg, splits, TrainConfig(seed=7, **FAST))
        assert set(artifacts.metrics) == {
            "part_macro_accuracy",
            "accuracy",
            "mean_shap_ged",
        }


class TestShapBackprop:
    def test_requires_scheme(self, small_splits):
        kg, splits = small_splits
        with pytest.raises(ValidationError, match="requires a weighting scheme"):
            train_shap_backprop(kg, splits, TrainConfig(seed=5, **FAST))

    def test_trace_records_alpha_stats(self, small_splits):
        kg, splits = small_splits
        cfg = TrainConfig(seed=8, scheme=WeightScheme("linear_instance"), **FAST)
        artifacts = train_shap_backprop(kg, splits, cfg)
        assert len(artifacts.per_epoch) == cfg.epochs_det
        for entry in artifacts.per_epoch:
            assert entry["alpha_max"] >= entry["alpha_mean"] >= 1.0
            assert np.isfinite(entry["det_loss"])

    def test_unit_weights_reproduce_standard_bitwise(self, small_splits, monkeypatch):
        # with every region weight forced to 1 the weighted procedure must
        # retrace the standard procedure exactly: same detector stream,
        # same final classifier seed, same evaluation
        kg, splits = small_splits

        def unit_weights(shap_row, kg_row, v, predicted_parts, scheme, v_threshold=0.0):
            return np.ones(np.asarray(predicted_parts).shape[0])

        monkeypatch.setattr(training_module, "region_weights", unit_weights)
        cfg_sbp = TrainConfig(seed=9, scheme=WeightScheme("linear_instance"), **FAST)
        cfg_std = TrainConfig(seed=9, **FAST)
        weighted = train_shap_backprop(kg, splits, cfg_sbp)
        standard = train_standard(kg, splits, cfg_std)
        np.testing.assert_array_equal(weighted.detector.weights, standard.detector.weights)
        np.testing.assert_array_equal(weighted.detector.bias, standard.detector.bias)
        for pw, ps in zip(weighted.classifier.parameters(), standard.classifier.parameters()):
            np.testing.assert_array_equal(pw, ps)
        assert weighted.metrics == standard.metrics

    def test_deterministic(self, small_splits):
        kg, splits = small_splits
        cfg = TrainConfig(seed=10, scheme=WeightScheme("exp_bbox"), **FAST)
        a = train_shap_backprop(kg, splits, cfg)
        b = train_shap_backprop(kg, splits, cfg)
        assert a.metrics == b.metrics
        assert a.per_epoch == b.per_epoch


class TestEvaluate:
    def test_perfect_oracle_detector_maxes_metrics(self):
        # a detector whose weights recover the generating means classifies
        # every region correctly on clean data
        kg = monumai_kg()
        gen_cfg = GeneratorConfig(seed=19, noise_rate=0.0, separation=8.0)
        data = generate_dataset(kg, gen_cfg, 200)
        splits = split_dataset(data)
        cfg = TrainConfig(seed=11, epochs_det=8, epochs_clf=40, lr_det=0.5,
                          lr_clf=0.05, background_size=12, shap_mode="kernel",
                          shap_samples=64)
        artifacts = train_standard(kg, splits, cfg)
        assert artifacts.metrics["part_macro_accuracy"] >= 0.99
        assert artifacts.metrics["accuracy"] >= 0.95

    def test_empty_test_split_rejected(self, small_splits):
        kg, splits = small_splits
        artifacts = train_standard(kg, splits, TrainConfig(seed=12, **FAST))
        with pytest.raises(ValidationError, match="empty"):
            evaluate(artifacts, [], kg)

    def test_ged_per_instance_covers_test_split(self, small_splits):
        kg, splits = small_splits
        artifacts = train_standard(kg, splits, TrainConfig(seed=13, **FAST))
        assert set(artifacts.ged_per_instance) == {i.id for i in splits[2]}


class TestConfigEcho:
    def test_round_trip(self):
        cfg = TrainConfig(
            seed=3,
            scheme=WeightScheme("exp_instance", h=2.0),
            epochs_det=4,
            epochs_clf=7,
            shap_mode="exact",
            aggregation="retina",
        )
        assert config_from_echo(config_echo(cfg)) == cfg

    def test_standard_mode_round_trip(self):
        cfg = TrainConfig(seed=4)
        echo = config_echo(cfg)
        assert echo["mode"] == "standard"
        assert config_from_echo(echo) == cfg

    def test_report_structure(self, small_splits):
        kg, splits = small_splits
        artifacts = train_standard(kg, splits, TrainConfig(seed=14, **FAST))
        report = metrics_report(artifacts)
        assert set(report) == {"config", "metrics", "per_epoch"}
        assert len(report["per_epoch"]) == 3
