import math

import pytest
import torch

from econ.checkpoint import load_checkpoint, save_checkpoint
from econ.config import SelfAwareConfig, SynthConfig
from econ.errors import ContractError, DataError
from econ.selfaware import (
    SectorSelfAware,
    SequenceBatch,
    embed_sequences,
    embed_tweet,
    evaluate_selfaware,
    sector_probs,
    selfaware_loss,
    train_selfaware,
)
from econ.synth import generate_market
from econ.text import TokenSequence, Vocabulary, encode_and_pad, mask_tweets


def sequence(ids, length, mask_position=0, label=0):
    tokens = tuple(f"t{i}" for i in ids[:length])
    return TokenSequence(
        tokens=tokens,
        mask_position=mask_position,
        original_length=length,
        sector_label=label,
        ids=tuple(ids),
    )


def tiny_dataset():
    return [
        sequence((3, 1, 4, 0, 0), 3, mask_position=1, label=0),
        sequence((5, 1, 0, 0, 0), 2, mask_position=1, label=1),
        sequence((1, 6, 7, 3, 0), 4, mask_position=0, label=2),
        sequence((4, 4, 1, 0, 0), 3, mask_position=2, label=1),
    ]


# Sector probabilities


def test_equal_sector_rows_give_uniform_probabilities():
    sectors = torch.ones(4, 6)
    probs = sector_probs(torch.randn(6), sectors)
    assert torch.allclose(probs, torch.full((4,), 0.25))


def test_zero_embedding_gives_uniform_probabilities():
    probs = sector_probs(torch.zeros(6), torch.randn(3, 6))
    assert torch.allclose(probs, torch.full((3,), 1 / 3))


def test_two_sector_hand_softmax():
    probs = sector_probs(torch.tensor([1.0, 0.0]), torch.tensor([[1.0, 0.0], [0.0, 0.0]]))
    assert probs.tolist() == pytest.approx([0.7311, 0.2689], abs=1e-4)


def test_probabilities_sum_to_one_for_large_logits():
    generator = torch.Generator().manual_seed(0)
    embedding = torch.randn(8, 6, generator=generator, dtype=torch.float64) * 50
    probs = sector_probs(embedding, torch.randn(5, 6, generator=generator, dtype=torch.float64))
    assert torch.isfinite(probs).all()
    assert torch.allclose(probs.sum(dim=-1), torch.ones(8, dtype=torch.float64), atol=1e-9)


def test_width_mismatch_is_a_contract_error():
    with pytest.raises(ContractError):
        sector_probs(torch.zeros(4), torch.zeros(3, 6))


# Loss


def test_confident_correct_predictions_have_zero_loss():
    logits = torch.tensor([[100.0, -100.0], [-100.0, 100.0]])
    assert float(selfaware_loss(logits, torch.tensor([0, 1]))) == pytest.approx(0.0, abs=1e-6)


def test_uniform_predictions_cost_log_m_per_tweet():
    loss = selfaware_loss(torch.zeros(7, 3), torch.tensor([0, 1, 2, 0, 1, 2, 0]))
    assert float(loss) == pytest.approx(7 * math.log(3), rel=1e-6)


def test_two_tweet_hand_computation():
    logits = torch.tensor([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0]], dtype=torch.float64)
    expected = -math.log(math.e / (math.e + 2)) - math.log(1 / (math.exp(2) + 2))
    assert float(selfaware_loss(logits, torch.tensor([0, 2]))) == pytest.approx(expected, rel=1e-12)


def test_swapping_sector_rows_with_relabelling_keeps_the_loss():
    torch.manual_seed(0)
    model = SectorSelfAware(vocab_size=8, embedding_dim=4, n_sectors=3)
    batch = SequenceBatch.from_sequences(tiny_dataset())
    before = float(selfaware_loss(model(batch.ids, batch.lengths, batch.mask_positions), batch.labels))
    with torch.no_grad():
        model.sector_matrix[[0, 2]] = model.sector_matrix[[2, 0]].clone()
    relabelled = batch.labels.clone()
    relabelled[batch.labels == 0] = 2
    relabelled[batch.labels == 2] = 0
    after = float(selfaware_loss(model(batch.ids, batch.lengths, batch.mask_positions), relabelled))
    assert after == pytest.approx(before, rel=1e-6)


# Embeddings


def test_padding_does_not_change_the_embedding():
    torch.manual_seed(1)
    model = SectorSelfAware(vocab_size=8, embedding_dim=4, n_sectors=2)
    short = sequence((3, 1, 4, 0, 0), 3, mask_position=1)
    long = sequence((3, 1, 4, 0, 0, 0, 0, 0, 0, 0), 3, mask_position=1)
    assert torch.allclose(embed_tweet(short, model), embed_tweet(long, model), atol=1e-6)


def test_zero_parameters_make_every_tweet_look_alike():
    model = SectorSelfAware(vocab_size=8, embedding_dim=4, n_sectors=2)
    with torch.no_grad():
        for param in model.parameters():
            param.zero_()
    embeddings = embed_sequences(model, tiny_dataset())
    assert torch.allclose(embeddings, embeddings[:1].expand_as(embeddings))


def _one_step(x, weight_ih, bias_ih, bias_hh):
    i, f, g, o = (weight_ih @ x + bias_ih + bias_hh).chunk(4)
    cell = torch.sigmoid(i) * torch.tanh(g)
    return torch.sigmoid(o) * torch.tanh(cell)


def test_single_token_embedding_matches_a_hand_rolled_cell():
    torch.manual_seed(2)
    model = SectorSelfAware(vocab_size=8, embedding_dim=4, n_sectors=2)
    with torch.no_grad():
        for name, param in model.encoder.named_parameters():
            if name.startswith("bias"):
                param.uniform_(-0.5, 0.5)
    single = sequence((5, 0, 0), 1, mask_position=0)
    x = model.embedding.weight[5].detach()
    enc = model.encoder
    forward = _one_step(x, enc.weight_ih_l0, enc.bias_ih_l0, enc.bias_hh_l0)
    backward = _one_step(x, enc.weight_ih_l0_reverse, enc.bias_ih_l0_reverse, enc.bias_hh_l0_reverse)
    expected = torch.cat([forward, backward]).detach()
    assert torch.allclose(embed_tweet(single, model), expected, atol=1e-6)


def test_embed_tweet_needs_a_mask():
    model = SectorSelfAware(vocab_size=8, embedding_dim=4, n_sectors=2)
    unmasked = TokenSequence(tokens=("a",), original_length=1, ids=(3,))
    with pytest.raises(ContractError):
        embed_tweet(unmasked, model)
    assert embed_sequences(model, []).shape == (0, 8)


def test_loss_gradient_matches_central_differences():
    torch.manual_seed(3)
    model = SectorSelfAware(vocab_size=8, embedding_dim=4, n_sectors=3).double()
    batch = SequenceBatch.from_sequences(tiny_dataset()[:2])

    def loss() -> torch.Tensor:
        return selfaware_loss(model(batch.ids, batch.lengths, batch.mask_positions), batch.labels)

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


# Training


def test_zero_learning_rate_leaves_parameters_unchanged():
    config = SelfAwareConfig(embedding_dim=4, learning_rate=0.0, epochs=2, batch_size=2)
    torch.manual_seed(5)
    reference = SectorSelfAware(vocab_size=8, embedding_dim=4, n_sectors=3)
    result = train_selfaware(tiny_dataset(), [], vocab_size=8, n_sectors=3, config=config, seed=5)
    for name, value in reference.state_dict().items():
        assert torch.equal(result.model.state_dict()[name], value), name


def test_same_seed_gives_identical_parameters():
    config = SelfAwareConfig(embedding_dim=4, epochs=3, batch_size=2)
    first = train_selfaware(tiny_dataset(), tiny_dataset()[:2], 8, 3, config, seed=9)
    second = train_selfaware(tiny_dataset(), tiny_dataset()[:2], 8, 3, config, seed=9)
    for name, value in first.model.state_dict().items():
        assert torch.equal(second.model.state_dict()[name], value), name
    assert first.history == second.history
    assert [r["epoch"] for r in first.history] == [1, 2, 3]


def test_best_epoch_has_the_lowest_validation_loss():
    config = SelfAwareConfig(embedding_dim=4, learning_rate=0.05, epochs=8, batch_size=2, patience=8)
    result = train_selfaware(tiny_dataset(), tiny_dataset()[1:3], 8, 3, config, seed=4)
    best = min(result.history, key=lambda record: record["val_loss"])
    assert result.best_epoch == best["epoch"]
    assert result.val_accuracy == best["val_accuracy"]


def test_out_of_range_labels_are_rejected():
    bad = [sequence((3, 1, 0), 2, mask_position=1, label=5)]
    with pytest.raises(ContractError):
        train_selfaware(bad, [], vocab_size=8, n_sectors=3, config=SelfAwareConfig(embedding_dim=4))


def test_checkpoint_checks_kind_and_dims(tmp_path):
    model = SectorSelfAware(vocab_size=8, embedding_dim=4, n_sectors=3)
    path = save_checkpoint(tmp_path / "selfaware.pt", "selfaware", model.dims, model, {"seed": 1})
    payload = load_checkpoint(path, "selfaware", model.dims)
    restored = SectorSelfAware(**payload["dims"])
    restored.load_state_dict(payload["state_dict"])
    assert torch.equal(restored.sector_matrix, model.sector_matrix)
    assert payload["meta"] == {"seed": 1}
    with pytest.raises(ContractError):
        load_checkpoint(path, "selfaware", {"embedding_dim": 8})
    with pytest.raises(ContractError):
        load_checkpoint(path, "econ")
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "missing.pt", "selfaware")


@pytest.mark.slow
def test_planted_sector_keywords_are_learned():
    market = generate_market(SynthConfig(n_stocks=10, m_sectors=5, n_days=120, n_keywords=0), seed=0)
    pairs = [(t.tickers[0], t) for t in market.tweets]
    sequences = mask_tweets(pairs, market.sector_map)
    split = int(len(sequences) * 0.8)
    vocab = Vocabulary.build([list(s.tokens) for s in sequences[:split]], min_freq=2)
    encoded = encode_and_pad(sequences, vocab, 16)
    config = SelfAwareConfig(embedding_dim=16, epochs=30, learning_rate=5e-3)
    result = train_selfaware(encoded[:split], encoded[split:], len(vocab), market.sector_map.m, config, seed=0)
    _, accuracy = evaluate_selfaware(result.model, SequenceBatch.from_sequences(encoded[split:]))
    assert accuracy >= 0.95
