"""
ECON Sector Self-Aware Pretraining

A BiLSTM reads a tweet whose company mention is masked; its state at the mask
is the tweet embedding, scored against one learned vector per sector.

Features:
- Masked-company tweet embeddings (2k wide)
- Learned sector embedding matrix C (m x 2k)
- Summed cross-entropy training with early stopping on validation loss
"""

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from torch.nn.utils.rnn import pack_padded_sequence, pad_packed_sequence

from .config import SelfAwareConfig
from .errors import ContractError, TrainingError
from .text import TokenSequence

logger = logging.getLogger(__name__)


@dataclass
class SequenceBatch:
    ids: torch.Tensor  # [B, L]
    lengths: torch.Tensor  # [B]
    mask_positions: torch.Tensor  # [B]
    labels: torch.Tensor  # [B]

    @classmethod
    def from_sequences(cls, sequences: Sequence[TokenSequence]) -> "SequenceBatch":
        if not sequences:
            raise ContractError("cannot batch zero sequences")
        for sequence in sequences:
            if sequence.ids is None:
                raise ContractError("sequences must be encoded before batching")
            if sequence.mask_position is None:
                raise ContractError(f"sequence for tweet {sequence.tweet_id} has no mask position")
        return cls(
            ids=torch.tensor([s.ids for s in sequences], dtype=torch.long),
            lengths=torch.tensor([s.original_length for s in sequences], dtype=torch.long),
            mask_positions=torch.tensor([s.mask_position for s in sequences], dtype=torch.long),
            labels=torch.tensor(
                [-1 if s.sector_label is None else s.sector_label for s in sequences], dtype=torch.long
            ),
        )

    def __len__(self) -> int:
        return self.ids.shape[0]

    def take(self, index: torch.Tensor) -> "SequenceBatch":
        return SequenceBatch(self.ids[index], self.lengths[index], self.mask_positions[index], self.labels[index])


class SectorSelfAware(nn.Module):
    def __init__(self, vocab_size: int, embedding_dim: int, n_sectors: int, pad_id: int = 0):
        super().__init__()
        self.vocab_size = vocab_size
        self.embedding_dim = embedding_dim
        self.n_sectors = n_sectors
        self.embedding = nn.Embedding(vocab_size, embedding_dim, padding_idx=pad_id)
        self.encoder = nn.LSTM(embedding_dim, embedding_dim, batch_first=True, bidirectional=True)
        self.sector_matrix = nn.Parameter(torch.empty(n_sectors, 2 * embedding_dim))
        self.reset_parameters()

    @property
    def dims(self) -> Dict[str, int]:
        return {"vocab_size": self.vocab_size, "embedding_dim": self.embedding_dim, "n_sectors": self.n_sectors}

    def reset_parameters(self) -> None:
        nn.init.uniform_(self.embedding.weight, -0.1, 0.1)
        with torch.no_grad():
            self.embedding.weight[self.embedding.padding_idx].zero_()
        nn.init.uniform_(self.sector_matrix, -0.1, 0.1)
        for name, param in self.encoder.named_parameters():
            if name.startswith("weight_hh"):
                for gate in param.chunk(4, dim=0):
                    nn.init.orthogonal_(gate)
            elif name.startswith("weight_ih"):
                nn.init.xavier_uniform_(param)
            else:
                nn.init.zeros_(param)

    def embed(self, ids: torch.Tensor, lengths: torch.Tensor, mask_positions: torch.Tensor) -> torch.Tensor:
        """BiLSTM state at the mask: forward half then backward half, [B, 2k]."""
        vectors = self.embedding(ids)
        packed = pack_padded_sequence(vectors, lengths.cpu(), batch_first=True, enforce_sorted=False)
        states, _ = self.encoder(packed)
        states, _ = pad_packed_sequence(states, batch_first=True, total_length=ids.shape[1])
        return states[torch.arange(ids.shape[0]), mask_positions]

    def forward(self, ids: torch.Tensor, lengths: torch.Tensor, mask_positions: torch.Tensor) -> torch.Tensor:
        """Sector logits h_c . h_e, [B, m]."""
        return self.embed(ids, lengths, mask_positions) @ self.sector_matrix.T


def sector_probs(embedding: torch.Tensor, sector_matrix: torch.Tensor) -> torch.Tensor:
    if embedding.shape[-1] != sector_matrix.shape[-1]:
        raise ContractError(
            f"tweet embedding width {embedding.shape[-1]} != sector embedding width {sector_matrix.shape[-1]}"
        )
    return torch.softmax(embedding @ sector_matrix.T, dim=-1)


def selfaware_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Negative log-likelihood of the true sectors, summed over the batch."""
    return F.cross_entropy(logits, labels, reduction="sum")


def embed_tweet(sequence: TokenSequence, model: SectorSelfAware) -> torch.Tensor:
    if sequence.mask_position is None:
        raise ContractError("embed_tweet needs a masked sequence")
    return embed_sequences(model, [sequence])[0]


@torch.no_grad()
def embed_sequences(model: SectorSelfAware, sequences: Sequence[TokenSequence], batch_size: int = 256) -> torch.Tensor:
    """Tweet embeddings in input order, [N, 2k]."""
    if not sequences:
        return torch.zeros(0, 2 * model.embedding_dim)
    model.eval()
    batch = SequenceBatch.from_sequences(sequences)
    chunks = []
    for start in range(0, len(batch), batch_size):
        part = batch.take(torch.arange(start, min(start + batch_size, len(batch))))
        chunks.append(model.embed(part.ids, part.lengths, part.mask_positions))
    return torch.cat(chunks)


@torch.no_grad()
def evaluate_selfaware(model: SectorSelfAware, batch: SequenceBatch, batch_size: int = 256) -> Tuple[float, float]:
    """Summed loss and sector accuracy."""
    model.eval()
    total = 0.0
    correct = 0
    for start in range(0, len(batch), batch_size):
        part = batch.take(torch.arange(start, min(start + batch_size, len(batch))))
        logits = model(part.ids, part.lengths, part.mask_positions)
        total += float(selfaware_loss(logits, part.labels))
        correct += int((logits.argmax(dim=-1) == part.labels).sum())
    return total, correct / len(batch)


@dataclass
class SelfAwareResult:
    model: SectorSelfAware
    history: List[Dict[str, Any]] = field(default_factory=list)
    best_epoch: int = 0
    val_accuracy: float = 0.0


def train_selfaware(
    train: Sequence[TokenSequence],
    val: Sequence[TokenSequence],
    vocab_size: int,
    n_sectors: int,
    config: Optional[SelfAwareConfig] = None,
    seed: int = 0,
    pad_id: int = 0,
) -> SelfAwareResult:
    """Fit embeddings and C; returns the parameters with the lowest validation loss."""
    config = config or SelfAwareConfig()
    if not train:
        raise ContractError("self-aware training needs at least one sequence")
    train_batch = SequenceBatch.from_sequences(train)
    if bool(((train_batch.labels < 0) | (train_batch.labels >= n_sectors)).any()):
        raise ContractError(f"sector labels must lie in [0, {n_sectors})")
    val_batch = SequenceBatch.from_sequences(val) if val else train_batch

    torch.manual_seed(seed)
    generator = torch.Generator().manual_seed(seed)
    model = SectorSelfAware(vocab_size, config.embedding_dim, n_sectors, pad_id=pad_id)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)

    best_loss = math.inf
    best_state = copy.deepcopy(model.state_dict())
    result = SelfAwareResult(model=model)
    stale = 0
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = torch.randperm(len(train_batch), generator=generator)
        running = 0.0
        for step, start in enumerate(range(0, len(train_batch), config.batch_size)):
            part = train_batch.take(order[start:start + config.batch_size])
            loss = selfaware_loss(model(part.ids, part.lengths, part.mask_positions), part.labels)
            if not torch.isfinite(loss):
                raise TrainingError(
                    "self-aware loss diverged",
                    {"epoch": epoch, "step": step, "loss": float(loss), "learning_rate": config.learning_rate},
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            running += float(loss)
        val_loss, val_accuracy = evaluate_selfaware(model, val_batch)
        record = {
            "epoch": epoch,
            "train_loss": running / len(train_batch),
            "val_loss": val_loss / len(val_batch),
            "val_accuracy": val_accuracy,
        }
        result.history.append(record)
        logger.info(
            "selfaware epoch %d: train %.4f val %.4f acc %.3f",
            epoch, record["train_loss"], record["val_loss"], val_accuracy,
        )
        if val_loss < best_loss:
            best_loss = val_loss
            best_state = copy.deepcopy(model.state_dict())
            result.best_epoch = epoch
            result.val_accuracy = val_accuracy
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.info("selfaware early stop at epoch %d (best %d)", epoch, result.best_epoch)
                break
    model.load_state_dict(best_state)
    return result


def sector_embeddings(model: SectorSelfAware) -> np.ndarray:
    return model.sector_matrix.detach().cpu().numpy().copy()
