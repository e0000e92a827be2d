import dataclasses
import json
import math

import numpy as np
import pytest
import torch

from econ.config import Ablation, PredictorConfig
from econ.errors import ContractError
from econ.ingestion import build_market_panel
from econ.predictor import (
    AGRUD,
    SENTIMENT_WIDTH,
    EconModel,
    PanelTensors,
    fuse,
    joint_loss,
    movement_loss,
    predict,
    temporal_weights,
    train_predictor,
    volatility_loss,
    write_training_log,
)
from econ.trends import TrendBuilder


def hand_tensors(dtype=torch.float64, days=6, n=2, p=3, q=4, m=2, width=4, seed=0):
    generator = torch.Generator().manual_seed(seed)
    return PanelTensors(
        features=torch.randn(days, n, p, generator=generator, dtype=dtype),
        macro=torch.randn(days, q, generator=generator, dtype=dtype),
        sector_tweets=torch.randn(days, m, width, generator=generator, dtype=dtype),
        sector_of=torch.tensor([i % m for i in range(n)]),
        movement=torch.randint(0, 2, (days, n), generator=generator),
        volatility=torch.randint(0, 2, (days, n), generator=generator),
    )


def hand_model(tensors, window=3, hidden=4, ablation=Ablation.FULL):
    dims = tensors.dims
    torch.manual_seed(1)
    model = EconModel(
        n_stocks=dims["n_stocks"], p=dims["p"], q=dims["q"], embed_width=dims["embed_width"],
        hidden_size=hidden, window=window, ablation=ablation, n_sectors=dims["n_sectors"],
    )
    return model.to(tensors.features.dtype)


# Temporal weights and fusion


def test_temporal_weights_are_inverse_distances():
    assert temporal_weights(3).tolist() == [1 / 3, 1 / 2, 1.0]
    assert temporal_weights(5).tolist() == [1 / 5, 1 / 4, 1 / 3, 1 / 2, 1.0]
    weights = temporal_weights(15)
    assert bool((weights[1:] > weights[:-1]).all())
    assert weights.tolist() == [1 / (15 - j + 1) for j in range(1, 16)]


def test_identity_fusion_returns_the_concatenation():
    x, a, micro = torch.tensor([1.0, 2.0]), torch.tensor([3.0]), torch.tensor([4.0, 5.0])
    fused = fuse(x, a, micro, torch.eye(5), torch.zeros(5))
    assert fused.tolist() == [1.0, 2.0, 3.0, 4.0, 5.0]


def test_zero_inputs_fuse_to_the_bias():
    bias = torch.tensor([0.5, -0.5])
    fused = fuse(torch.zeros(1), torch.zeros(1), torch.zeros(1), torch.randn(2, 3), bias)
    assert torch.equal(fused, bias)


def test_small_fusion_by_hand():
    weight = torch.tensor([[1.0, 0.0, 2.0], [0.0, -1.0, 1.0]])
    fused = fuse(torch.tensor([1.0]), torch.tensor([2.0]), torch.tensor([3.0]), weight, torch.tensor([0.5, 0.0]))
    assert fused.tolist() == [7.5, 1.0]
    with pytest.raises(ContractError):
        fuse(torch.zeros(2), torch.zeros(1), torch.zeros(1), weight, torch.zeros(2))


# AGRUD


def test_zero_query_pools_states_evenly():
    torch.manual_seed(0)
    agrud = AGRUD(input_size=3, hidden_size=4, window=5)
    with torch.no_grad():
        agrud.query.zero_()
    out = agrud(torch.ones(2, 5, 3))
    assert torch.allclose(out.attention, torch.full((2, 5), 0.2))
    states, _ = agrud.gru(torch.ones(2, 5, 3))
    weighted = states * temporal_weights(5).float()[None, :, None]
    assert torch.allclose(out.h_out1[:, 4:], weighted.mean(dim=1), atol=1e-6)
    assert out.h_out2.shape == (2, 16)


def _gru_step(x, h, w_ih, w_hh, b_ih, b_hh):
    r = torch.sigmoid(w_ih[0] * x + b_ih[0] + w_hh[0] * h + b_hh[0])
    z = torch.sigmoid(w_ih[1] * x + b_ih[1] + w_hh[1] * h + b_hh[1])
    n = torch.tanh(w_ih[2] * x + b_ih[2] + r * (w_hh[2] * h + b_hh[2]))
    return (1 - z) * n + z * h


def test_two_step_scalar_gru_matches_a_hand_recurrence():
    agrud = AGRUD(input_size=1, hidden_size=1, window=2).double()
    w_ih = torch.tensor([0.5, -0.3, 0.8], dtype=torch.float64)
    w_hh = torch.tensor([0.2, 0.4, -0.6], dtype=torch.float64)
    b_ih = torch.tensor([0.1, 0.0, -0.2], dtype=torch.float64)
    b_hh = torch.tensor([0.0, 0.3, 0.1], dtype=torch.float64)
    with torch.no_grad():
        agrud.gru.weight_ih_l0.copy_(w_ih[:, None])
        agrud.gru.weight_hh_l0.copy_(w_hh[:, None])
        agrud.gru.bias_ih_l0.copy_(b_ih)
        agrud.gru.bias_hh_l0.copy_(b_hh)
        agrud.query.fill_(0.7)
    x1, x2 = 1.5, -0.5
    h1 = _gru_step(torch.tensor(x1, dtype=torch.float64), torch.tensor(0.0, dtype=torch.float64), w_ih, w_hh, b_ih, b_hh)
    h2 = _gru_step(torch.tensor(x2, dtype=torch.float64), h1, w_ih, w_hh, b_ih, b_hh)
    w1, w2 = 0.5 * h1, h2
    alpha = torch.softmax(torch.stack([0.7 * w1, 0.7 * w2]), dim=0)
    pooled = alpha[0] * w1 + alpha[1] * w2
    out = agrud(torch.tensor([[[x1], [x2]]], dtype=torch.float64))
    expected = torch.stack([w2, pooled, pooled, w2]).detach()
    assert torch.allclose(out.h_out2[0], expected, atol=1e-12)
    assert torch.allclose(out.attention[0], alpha.detach(), atol=1e-12)


def test_agrud_rejects_a_short_window():
    with pytest.raises(ContractError):
        AGRUD(input_size=3, hidden_size=4, window=5)(torch.zeros(1, 4, 3))


def test_attention_weights_form_a_distribution():
    torch.manual_seed(4)
    agrud = AGRUD(input_size=3, hidden_size=4, window=7).double()
    out = agrud(torch.randn(10, 7, 3, dtype=torch.float64) * 3)
    assert bool((out.attention >= 0).all())
    assert torch.allclose(out.attention.sum(dim=1), torch.ones(10, dtype=torch.float64), atol=1e-9)


# Losses


def test_movement_loss_examples():
    confident = torch.tensor([[-50.0, 50.0], [50.0, -50.0]], dtype=torch.float64)
    assert float(movement_loss(confident, torch.tensor([1, 0]))) == pytest.approx(0.0, abs=1e-12)
    assert float(movement_loss(torch.zeros(6, 2), torch.tensor([0, 1, 1, 0, 1, 0]))) == pytest.approx(6 * math.log(2))
    logits = torch.tensor([[0.0, 1.0], [2.0, 0.0], [0.5, 0.5]], dtype=torch.float64)
    expected = (
        -math.log(math.e / (1 + math.e))
        - math.log(1 / (math.exp(2) + 1))
        + math.log(2)
    )
    assert float(movement_loss(logits, torch.tensor([1, 1, 0]))) == pytest.approx(expected, rel=1e-12)


def test_excluded_samples_never_reach_the_movement_loss():
    logits = torch.tensor([[0.2, -0.1], [3.0, -4.0], [0.0, 1.0]], dtype=torch.float64, requires_grad=True)
    labels = torch.tensor([1, -1, 0])
    loss = movement_loss(logits, labels)
    loss.backward()
    assert torch.equal(logits.grad[1], torch.zeros(2, dtype=torch.float64))
    moved = logits.detach().clone()
    moved[1] = torch.tensor([-9.0, 9.0])
    assert float(movement_loss(moved, labels)) == pytest.approx(float(loss))
    assert float(movement_loss(logits, torch.tensor([-1, -1, -1]))) == 0.0


def test_volatility_loss_examples():
    saturated = volatility_loss(torch.tensor([30.0], dtype=torch.float64), torch.tensor([1]))
    assert float(saturated) == pytest.approx(0.0, abs=1e-9)
    assert float(volatility_loss(torch.zeros(4), torch.tensor([0, 1, 1, 0]))) == pytest.approx(4 * math.log(2))
    logits = torch.tensor([1.0, -2.0, 0.0], dtype=torch.float64)
    sigmoid = lambda v: 1 / (1 + math.exp(-v))
    expected = -math.log(sigmoid(1.0)) - math.log(1 - sigmoid(-2.0)) - math.log(0.5)
    assert float(volatility_loss(logits, torch.tensor([1, 0, 1]))) == pytest.approx(expected, rel=1e-12)


def test_joint_loss_weights_the_volatility_term():
    tensors = hand_tensors()
    model = hand_model(tensors)
    t_idx, s_idx = torch.tensor([3, 4, 5, 5]), torch.tensor([0, 1, 0, 1])
    out = model(tensors, t_idx, s_idx)
    move = movement_loss(out.movement_logits, tensors.movement[t_idx, s_idx])
    vol = volatility_loss(out.volatility_logit, tensors.volatility[t_idx, s_idx])
    combined = joint_loss(out, tensors.movement[t_idx, s_idx], tensors.volatility[t_idx, s_idx], weight=0.5)
    assert float(combined) == pytest.approx(float(move + 0.5 * vol), rel=1e-12)


def test_full_loss_gradient_matches_central_differences():
    tensors = hand_tensors()
    model = hand_model(tensors, window=3, hidden=4)
    t_idx, s_idx = torch.tensor([3, 4, 5, 3]), torch.tensor([0, 1, 1, 1])

    def loss() -> torch.Tensor:
        out = model(tensors, t_idx, s_idx)
        return joint_loss(out, tensors.movement[t_idx, s_idx], tensors.volatility[t_idx, s_idx])

    model.zero_grad()
    loss().backward()
    step = 1e-5
    for name, param in model.named_parameters():
        analytic = param.grad.detach().clone().reshape(-1)
        flat = param.data.view(-1)
        for index in range(flat.numel()):
            original = float(flat[index])
            with torch.no_grad():
                flat[index] = original + step
                upper = float(loss())
                flat[index] = original - step
                lower = float(loss())
                flat[index] = original
            numeric = (upper - lower) / (2 * step)
            assert numeric == pytest.approx(float(analytic[index]), rel=1e-4, abs=1e-7), (name, index)


# Model


@pytest.mark.parametrize(
    "ablation, macro_zero, micro_zero",
    [
        (Ablation.FULL, False, False),
        (Ablation.MACRO_ONLY, False, True),
        (Ablation.MICRO_ONLY, True, False),
        (Ablation.NONE, True, True),
    ],
)
def test_ablations_zero_the_right_trend(ablation, macro_zero, micro_zero):
    tensors = hand_tensors()
    model = hand_model(tensors, ablation=ablation)
    features, macro, micro = model.window_inputs(tensors, torch.tensor([4, 5]), torch.tensor([1, 0]))
    assert features.shape == (2, 3, 3)
    assert macro.shape == (2, 3, 4)
    assert micro.shape == (2, 3, 3)
    assert torch.equal(features[0], tensors.features[1:4, 1])
    assert bool((macro == 0).all()) == macro_zero
    assert bool((micro == 0).all()) == micro_zero


def test_micro_trend_of_a_stock_mixes_that_days_stocks():
    tensors = hand_tensors()
    model = hand_model(tensors)
    _, _, micro = model.window_inputs(tensors, torch.tensor([5]), torch.tensor([0]))
    day_features = tensors.features[2:5]
    assert bool((micro[0] >= day_features.min(dim=1).values - 1e-12).all())
    assert bool((micro[0] <= day_features.max(dim=1).values + 1e-12).all())


def test_target_days_need_a_full_window():
    tensors = hand_tensors()
    model = hand_model(tensors)
    with pytest.raises(ContractError):
        model(tensors, torch.tensor([2]), torch.tensor([0]))


@pytest.mark.parametrize("ablation", [Ablation.SENTIMENT_ALL, Ablation.SENTIMENT_TOPK])
def test_sentiment_variants_read_only_the_shares(ablation):
    tensors = hand_tensors()
    shares = torch.softmax(torch.randn(6, 2, SENTIMENT_WIDTH, dtype=torch.float64), dim=-1)
    tensors = dataclasses.replace(tensors, sentiment=shares)
    model = hand_model(tensors, ablation=ablation)
    assert tuple(model.fusion.weight.shape) == (SENTIMENT_WIDTH, SENTIMENT_WIDTH)
    features, macro, micro = model.window_inputs(tensors, torch.tensor([4, 5]), torch.tensor([1, 0]))
    assert torch.equal(features[0], shares[1:4, 1])
    assert torch.equal(features[1], shares[2:5, 0])
    assert macro.shape == (2, 3, 0)
    assert micro.shape == (2, 3, 0)
    before = model(tensors, torch.tensor([4, 5]), torch.tensor([1, 0])).movement_logits
    noisy = dataclasses.replace(tensors, features=torch.randn_like(tensors.features), macro=torch.randn_like(tensors.macro))
    after = model(noisy, torch.tensor([4, 5]), torch.tensor([1, 0])).movement_logits
    assert torch.equal(before, after)


def test_sentiment_variant_needs_shares():
    tensors = hand_tensors()
    model = hand_model(tensors, ablation=Ablation.SENTIMENT_ALL)
    with pytest.raises(ContractError):
        model(tensors, torch.tensor([4]), torch.tensor([0]))


@pytest.fixture(scope="module")
def tiny_panel(tiny_market):
    return build_market_panel(tiny_market)


@pytest.fixture(scope="module")
def tiny_tensors(tiny_panel):
    torch.manual_seed(0)
    sector_matrix = torch.randn(tiny_panel.n_sectors, 6)
    embeddings = {day: torch.randn(2, 6) for day in tiny_panel.dates[::3]}
    return PanelTensors.build(tiny_panel, TrendBuilder(sector_matrix).build(tiny_panel, embeddings))


def test_zero_parameters_predict_one_half(tiny_panel, tiny_tensors):
    model = EconModel.for_tensors(tiny_tensors, PredictorConfig(hidden_size=4))
    with torch.no_grad():
        for param in model.parameters():
            param.zero_()
    t_idx, s_idx = tiny_panel.samples("test", 5)
    outputs = predict(model, tiny_tensors, tiny_panel, t_idx, s_idx)
    assert len(outputs) == len(t_idx)
    assert all(o.movement_prob == pytest.approx(0.5) for o in outputs)
    assert all(o.volatility_prob == pytest.approx(0.5) for o in outputs)


def test_predict_is_pure_and_bounded(tiny_panel, tiny_tensors):
    torch.manual_seed(2)
    model = EconModel.for_tensors(tiny_tensors, PredictorConfig(hidden_size=4))
    before = {k: v.clone() for k, v in model.state_dict().items()}
    t_idx, s_idx = tiny_panel.samples("val", 5)
    first = predict(model, tiny_tensors, tiny_panel, t_idx, s_idx)
    second = predict(model, tiny_tensors, tiny_panel, t_idx, s_idx)
    assert [o.to_dict() for o in first] == [o.to_dict() for o in second]
    for name, value in model.state_dict().items():
        assert torch.equal(value, before[name])
    for output in first:
        assert 0.0 <= output.movement_prob <= 1.0
        assert 0.0 <= output.volatility_prob <= 1.0
        down, up = output.movement_logits
        assert output.movement_prob == pytest.approx(1 / (1 + math.exp(down - up)), rel=1e-5)
    assert {o.ticker for o in first} == set(tiny_panel.tickers)


def test_predict_rejects_mismatched_dimensions(tiny_panel, tiny_tensors):
    dims = tiny_tensors.dims
    model = EconModel(n_stocks=dims["n_stocks"] + 1, p=dims["p"], q=dims["q"], embed_width=dims["embed_width"])
    t_idx, s_idx = tiny_panel.samples("test", 5)
    with pytest.raises(ContractError):
        predict(model, tiny_tensors, tiny_panel, t_idx, s_idx)


def test_panel_tensors_without_trends_are_zero(tiny_panel):
    tensors = PanelTensors.build(tiny_panel)
    assert tensors.dims["q"] == tiny_panel.macro.shape[1] + tiny_panel.p
    assert bool((tensors.macro == 0).all())
    assert bool((tensors.sector_tweets == 0).all())


def test_panel_tensors_check_the_sentiment_grid(tiny_panel):
    grid = np.zeros((tiny_panel.n_days, tiny_panel.n_stocks, SENTIMENT_WIDTH))
    grid[:, :, 1] = 1.0
    tensors = PanelTensors.build(tiny_panel, sentiment=grid)
    assert tensors.sentiment.shape == (tiny_panel.n_days, tiny_panel.n_stocks, SENTIMENT_WIDTH)
    assert tensors.sentiment.dtype == torch.float32
    with pytest.raises(ContractError):
        PanelTensors.build(tiny_panel, sentiment=grid[:, :, :2])


# Training


def test_training_is_deterministic(tiny_panel, tiny_tensors, tmp_path):
    config = PredictorConfig(hidden_size=4, epochs=3, batch_size=32, patience=5)
    first = train_predictor(tiny_panel, tiny_tensors, config, Ablation.FULL, seed=5)
    second = train_predictor(tiny_panel, tiny_tensors, config, Ablation.FULL, seed=5)
    assert first.history == second.history
    assert [r["epoch"] for r in first.history] == [1, 2, 3]
    assert set(first.history[0]) == {
        "epoch", "movement_loss", "volatility_loss", "train_accuracy", "val_accuracy", "val_mcc",
    }
    for name, value in first.model.state_dict().items():
        assert torch.equal(second.model.state_dict()[name], value)
    assert first.best_epoch in (1, 2, 3)

    log = write_training_log(first.history, tmp_path / "training_log.jsonl")
    records = [json.loads(line) for line in log.read_text().splitlines()]
    assert records == first.history


def test_zero_learning_rate_keeps_the_initial_model(tiny_panel, tiny_tensors):
    config = PredictorConfig(hidden_size=4, epochs=2, learning_rate=0.0)
    result = train_predictor(tiny_panel, tiny_tensors, config, Ablation.NONE, seed=8)
    torch.manual_seed(8)
    reference = EconModel.for_tensors(tiny_tensors, config, Ablation.NONE)
    for name, value in reference.state_dict().items():
        assert torch.equal(result.model.state_dict()[name], value), name


def test_sentiment_only_training_runs_on_shares(tiny_panel):
    rng = np.random.default_rng(3)
    grid = rng.dirichlet(np.ones(SENTIMENT_WIDTH), size=(tiny_panel.n_days, tiny_panel.n_stocks))
    tensors = PanelTensors.build(tiny_panel, sentiment=grid)
    config = PredictorConfig(hidden_size=4, epochs=2, batch_size=32, patience=5)
    result = train_predictor(tiny_panel, tensors, config, Ablation.SENTIMENT_TOPK, seed=2)
    assert [r["epoch"] for r in result.history] == [1, 2]
    assert result.model.config_dims["fusion_dim"] == SENTIMENT_WIDTH
    t_idx, s_idx = tiny_panel.samples("test", config.window)
    outputs = predict(result.model, tensors, tiny_panel, t_idx, s_idx)
    assert all(0.0 <= o.movement_prob <= 1.0 for o in outputs)
