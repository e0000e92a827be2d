from dataclasses import replace

import numpy as np
import pytest

from econ.baselines import LogisticBaseline, MajorityBaseline, window_matrix
from econ.evaluation import evaluate
from econ.ingestion import build_market_panel


@pytest.fixture(scope="module")
def panel(tiny_market):
    return build_market_panel(tiny_market)


def test_majority_follows_the_training_split(panel):
    baseline = MajorityBaseline().fit(panel, 5)
    t_idx, s_idx = panel.samples("train", 5)
    movement = panel.movement[t_idx, s_idx]
    assert baseline.up == bool((movement == 1).sum() >= (movement == 0).sum())
    assert baseline.abnormal_rate == pytest.approx(panel.volatility[t_idx, s_idx].mean())

    t_test, s_test = panel.samples("test", 5)
    predictions = baseline.predict(panel, t_test, s_test)
    assert len(predictions) == len(t_test)
    assert {p.movement_prob for p in predictions} == {1.0 if baseline.up else 0.0}


def test_window_matrix_stacks_features_and_macro(panel):
    t_idx, s_idx = np.array([5, 9]), np.array([0, 3])
    matrix = window_matrix(panel, t_idx, s_idx, 5)
    assert matrix.shape == (2, 5 * panel.p + 5 * panel.macro.shape[1])
    assert np.array_equal(matrix[1, : panel.p], panel.features[4, 3])
    assert np.array_equal(matrix[0, 5 * panel.p:5 * panel.p + panel.macro.shape[1]], panel.macro[0])


def test_logistic_baseline_scores_like_any_model(panel):
    baseline = LogisticBaseline(seed=0).fit(panel, 5)
    t_idx, s_idx = panel.samples("test", 5)
    predictions = baseline.predict(panel, t_idx, s_idx)
    assert all(0.0 <= p.movement_prob <= 1.0 for p in predictions)
    assert all(0.0 <= p.volatility_prob <= 1.0 for p in predictions)
    test_days = set(panel.split.test)
    labels = [l for l in panel.labels if l.date in test_days]
    report = evaluate(predictions, labels, "movement", model=baseline.name)
    assert 0.0 <= report.accuracy <= 1.0
    assert report.model == "logistic"


def test_logistic_baseline_is_deterministic(panel):
    t_idx, s_idx = panel.samples("val", 5)
    first = LogisticBaseline(seed=1).fit(panel, 5).probabilities(panel, t_idx, s_idx)
    second = LogisticBaseline(seed=1).fit(panel, 5).probabilities(panel, t_idx, s_idx)
    assert np.array_equal(first[0], second[0])
    assert np.array_equal(first[1], second[1])


def test_single_class_volatility_predicts_the_base_rate(panel):
    panel_copy = replace(panel, volatility=np.zeros_like(panel.volatility))
    baseline = LogisticBaseline().fit(panel_copy, 5)
    assert baseline.volatility_model is None
    t_idx, s_idx = panel.samples("test", 5)
    _, volatility = baseline.probabilities(panel_copy, t_idx, s_idx)
    assert np.all(volatility == 0.0)
