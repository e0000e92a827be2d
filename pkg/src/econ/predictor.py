"""
ECON Predictor

Fuses each stock's features with the macro and micro trends and runs an
attention GRU over the previous d days. Two heads share the trunk: next-day
movement (2-way softmax) and abnormal volatility (sigmoid).

Features:
- Temporal-distance weighting of GRU states (1/d ... 1/2, 1)
- Per-stock softmax attention over the window
- Ablations that zero the micro trend (A), the macro trend (I) or both (none)
- Sentiment-only variants fed daily per-stock sentiment shares instead of prices and trends
- Joint movement + lambda * volatility objective, early stopping on validation MCC
"""

import copy
import datetime as dt
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import Ablation, PredictorConfig
from .errors import ContractError, TrainingError
from .evaluation import ConfusionCounts, accuracy, mcc
from .ingestion import MarketPanel
from .trends import TrendBundle, gather_stock_micro, micro_trend, project_companies

logger = logging.getLogger(__name__)

SENTIMENT_WIDTH = 3  # positive, neutral, negative shares


def temporal_weights(window: int) -> torch.Tensor:
    """1/distance for window days ordered oldest to newest."""
    return 1.0 / torch.arange(window, 0, -1, dtype=torch.float64)


def fuse(
    features: torch.Tensor,
    macro: torch.Tensor,
    micro: torch.Tensor,
    weight: torch.Tensor,
    bias: torch.Tensor,
) -> torch.Tensor:
    """W2 (x ++ a ++ micro) + b2."""
    joined = torch.cat([features, macro, micro], dim=-1)
    if weight.dim() != 2 or weight.shape[1] != joined.shape[-1]:
        raise ContractError(f"W2 shape {tuple(weight.shape)} does not accept width {joined.shape[-1]}")
    if bias.shape != (weight.shape[0],):
        raise ContractError(f"b2 shape {tuple(bias.shape)} does not match W2 rows {weight.shape[0]}")
    return joined @ weight.T + bias


@dataclass
class AgrudOutput:
    h_out1: torch.Tensor  # [B, 2H]
    h_out2: torch.Tensor  # [B, 4H]
    movement_logits: torch.Tensor  # [B, 2]; column 1 is Up
    volatility_logit: torch.Tensor  # [B]
    attention: torch.Tensor  # [B, d]

    @property
    def movement_prob(self) -> torch.Tensor:
        return torch.softmax(self.movement_logits, dim=-1)[:, 1]

    @property
    def volatility_prob(self) -> torch.Tensor:
        return torch.sigmoid(self.volatility_logit)


class AGRUD(nn.Module):
    """GRU over the window with distance-weighted states and attention pooling."""

    def __init__(self, input_size: int, hidden_size: int, window: int):
        super().__init__()
        self.window = window
        self.gru = nn.GRU(input_size, hidden_size, batch_first=True)
        self.query = nn.Parameter(torch.empty(hidden_size).uniform_(-0.1, 0.1))
        self.movement_head = nn.Linear(4 * hidden_size, 2)
        self.volatility_head = nn.Linear(4 * hidden_size, 1)
        self.register_buffer("distance_weights", temporal_weights(window).float())

    def forward(self, inputs: torch.Tensor) -> AgrudOutput:
        if inputs.dim() != 3 or inputs.shape[1] != self.window:
            raise ContractError(f"expected [batch, {self.window}, features], got {tuple(inputs.shape)}")
        states, _ = self.gru(inputs)
        weighted = states * self.distance_weights.to(states.dtype)[None, :, None]
        attention = torch.softmax(weighted @ self.query, dim=1)
        pooled = (attention.unsqueeze(-1) * weighted).sum(dim=1)
        newest = weighted[:, -1]
        h_out1 = torch.cat([newest, pooled], dim=-1)
        h_out2 = torch.cat([h_out1, pooled, newest], dim=-1)
        return AgrudOutput(
            h_out1=h_out1,
            h_out2=h_out2,
            movement_logits=self.movement_head(h_out2),
            volatility_logit=self.volatility_head(h_out2).squeeze(-1),
            attention=attention,
        )


@dataclass
class PanelTensors:
    """Everything the model reads, indexed by panel day."""

    features: torch.Tensor  # [T, n, p]
    macro: torch.Tensor  # a_t, [T, q]
    sector_tweets: torch.Tensor  # w_ct, [T, m, 2k]
    sector_of: torch.Tensor  # [n]
    movement: torch.Tensor  # [T, n]; 1 up, 0 down, -1 excluded
    volatility: torch.Tensor  # [T, n]
    sentiment: Optional[torch.Tensor] = None  # [T, n, 3] daily class shares

    @classmethod
    def build(
        cls,
        panel: MarketPanel,
        bundle: Optional[TrendBundle] = None,
        dtype: torch.dtype = torch.float32,
        sentiment: Optional[np.ndarray] = None,
    ) -> "PanelTensors":
        """Without a bundle both trends are zeros (the no-trend ablation)."""
        expected = (panel.n_days, panel.n_stocks, SENTIMENT_WIDTH)
        if sentiment is not None and tuple(sentiment.shape) != expected:
            raise ContractError(f"sentiment shares have shape {tuple(sentiment.shape)}, expected {expected}")
        features = torch.as_tensor(panel.features, dtype=dtype)
        if bundle is None:
            q = panel.macro.shape[1] + panel.p
            macro = torch.zeros(panel.n_days, q, dtype=dtype)
            sector_tweets = torch.zeros(panel.n_days, panel.n_sectors, 1, dtype=dtype)
        else:
            if len(bundle.dates) != panel.n_days:
                raise ContractError("trend bundle and panel cover different days")
            macro = bundle.macro.to(dtype)
            sector_tweets = bundle.sector_tweets.to(dtype)
        return cls(
            features=features,
            macro=macro,
            sector_tweets=sector_tweets,
            sector_of=torch.as_tensor(panel.sector_of, dtype=torch.long),
            movement=torch.as_tensor(panel.movement, dtype=torch.long),
            volatility=torch.as_tensor(panel.volatility, dtype=torch.long),
            sentiment=None if sentiment is None else torch.as_tensor(sentiment, dtype=dtype),
        )

    @property
    def dims(self) -> Dict[str, int]:
        return {
            "n_stocks": self.features.shape[1],
            "p": self.features.shape[2],
            "q": self.macro.shape[1],
            "n_sectors": self.sector_tweets.shape[1],
            "embed_width": self.sector_tweets.shape[2],
        }


class EconModel(nn.Module):
    def __init__(
        self,
        n_stocks: int,
        p: int,
        q: int,
        embed_width: int,
        hidden_size: int = 64,
        window: int = 5,
        fusion_dim: Optional[int] = None,
        ablation: Ablation = Ablation.FULL,
        n_sectors: int = 0,
    ):
        super().__init__()
        self.window = window
        self.ablation = Ablation(ablation)
        width = SENTIMENT_WIDTH if self.ablation.sentiment_only else 2 * p + q
        self.config_dims = {
            "n_stocks": n_stocks,
            "p": p,
            "q": q,
            "embed_width": embed_width,
            "hidden_size": hidden_size,
            "window": window,
            "fusion_dim": fusion_dim or width,
            "n_sectors": n_sectors,
        }
        self.company_projection = nn.Linear(embed_width, n_stocks)
        self.fusion = nn.Linear(width, fusion_dim or width)
        self.agrud = AGRUD(fusion_dim or width, hidden_size, window)

    @classmethod
    def for_tensors(
        cls, tensors: PanelTensors, config: PredictorConfig, ablation: Ablation = Ablation.FULL
    ) -> "EconModel":
        dims = tensors.dims
        return cls(
            n_stocks=dims["n_stocks"],
            p=dims["p"],
            q=dims["q"],
            embed_width=dims["embed_width"],
            hidden_size=config.hidden_size,
            window=config.window,
            fusion_dim=config.fusion_dim,
            ablation=ablation,
            n_sectors=dims["n_sectors"],
        )

    def micro(
        self, sector_tweets: torch.Tensor, stock_features: torch.Tensor, sector_of: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """Per-stock micro trend [..., n, p] and company attention [..., m, n]."""
        g = project_companies(sector_tweets, self.company_projection.weight, self.company_projection.bias)
        sector_micro, alpha = micro_trend(g, stock_features.unsqueeze(-3))
        return gather_stock_micro(sector_micro, sector_of), alpha

    def window_inputs(
        self, tensors: PanelTensors, t_idx: torch.Tensor, s_idx: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        if bool((t_idx < self.window).any()):
            raise ContractError(f"every target day needs {self.window} days of history")
        days = t_idx[:, None] + torch.arange(-self.window, 0)
        if self.ablation.sentiment_only:
            if tensors.sentiment is None:
                raise ContractError(f"ablation {self.ablation.value} needs daily sentiment shares")
            shares = tensors.sentiment[days, s_idx[:, None]]
            empty = shares.new_zeros((*shares.shape[:2], 0))
            return shares, empty, empty
        features = tensors.features[days, s_idx[:, None]]
        macro = tensors.macro[days]
        stock_micro, _ = self.micro(tensors.sector_tweets[days], tensors.features[days], tensors.sector_of)
        micro = stock_micro[torch.arange(len(s_idx))[:, None], torch.arange(self.window)[None, :], s_idx[:, None]]
        if self.ablation in (Ablation.MACRO_ONLY, Ablation.NONE):
            micro = torch.zeros_like(micro)
        if self.ablation in (Ablation.MICRO_ONLY, Ablation.NONE):
            macro = torch.zeros_like(macro)
        return features, macro, micro

    def forward(self, tensors: PanelTensors, t_idx: torch.Tensor, s_idx: torch.Tensor) -> AgrudOutput:
        features, macro, micro = self.window_inputs(tensors, t_idx, s_idx)
        fused = fuse(features, macro, micro, self.fusion.weight, self.fusion.bias)
        return self.agrud(fused)


def movement_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Summed negative log-probability of the observed class; label -1 is skipped."""
    keep = labels >= 0
    if not bool(keep.any()):
        return logits.sum() * 0.0
    return F.cross_entropy(logits[keep], labels[keep], reduction="sum")


def volatility_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    return F.binary_cross_entropy_with_logits(logits, labels.to(logits.dtype), reduction="sum")


def joint_loss(output: AgrudOutput, movement: torch.Tensor, volatility: torch.Tensor, weight: float = 1.0) -> torch.Tensor:
    return movement_loss(output.movement_logits, movement) + weight * volatility_loss(output.volatility_logit, volatility)


@dataclass
class PredictionOutput:
    ticker: str
    date: dt.date
    movement_prob: float
    volatility_prob: float
    movement_logits: Tuple[float, float] = (0.0, 0.0)
    volatility_logit: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ticker": self.ticker,
            "date": self.date.isoformat(),
            "movement_prob": self.movement_prob,
            "volatility_prob": self.volatility_prob,
        }


@torch.no_grad()
def predict(
    model: EconModel,
    tensors: PanelTensors,
    panel: MarketPanel,
    t_idx: np.ndarray,
    s_idx: np.ndarray,
    batch_size: int = 512,
) -> List[PredictionOutput]:
    """Inference over (day, stock) pairs; parameters are left untouched."""
    dims = {k: v for k, v in tensors.dims.items() if k in ("n_stocks", "p", "q", "embed_width")}
    mismatched = {k: (model.config_dims[k], v) for k, v in dims.items() if model.config_dims[k] != v}
    if mismatched:
        raise ContractError(f"model and inputs disagree on dimensions (model, input): {mismatched}")
    was_training = model.training
    model.eval()
    outputs: List[PredictionOutput] = []
    t_all = torch.as_tensor(t_idx, dtype=torch.long)
    s_all = torch.as_tensor(s_idx, dtype=torch.long)
    for start in range(0, len(t_all), batch_size):
        t_part = t_all[start:start + batch_size]
        s_part = s_all[start:start + batch_size]
        result = model(tensors, t_part, s_part)
        movement = result.movement_prob.tolist()
        volatility = result.volatility_prob.tolist()
        logits = result.movement_logits.tolist()
        vol_logits = result.volatility_logit.tolist()
        for i, (t, s) in enumerate(zip(t_part.tolist(), s_part.tolist())):
            outputs.append(
                PredictionOutput(
                    ticker=panel.tickers[s],
                    date=panel.dates[t],
                    movement_prob=movement[i],
                    volatility_prob=volatility[i],
                    movement_logits=(logits[i][0], logits[i][1]),
                    volatility_logit=vol_logits[i],
                )
            )
    model.train(was_training)
    return outputs


@dataclass
class TrainResult:
    model: EconModel
    history: List[Dict[str, Any]] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mcc: float = float("-inf")


def _movement_scores(probs: torch.Tensor, labels: torch.Tensor) -> Tuple[float, float]:
    keep = labels >= 0
    predicted = (probs[keep] >= 0.5).long()
    counts = ConfusionCounts.from_arrays(predicted.numpy(), labels[keep].numpy())
    if counts.total == 0:
        return 0.0, 0.0
    return accuracy(counts), mcc(counts)


@torch.no_grad()
def _score(model: EconModel, tensors: PanelTensors, t_idx: torch.Tensor, s_idx: torch.Tensor, batch_size: int) -> Tuple[float, float]:
    model.eval()
    probs = []
    for start in range(0, len(t_idx), batch_size):
        probs.append(model(tensors, t_idx[start:start + batch_size], s_idx[start:start + batch_size]).movement_prob)
    return _movement_scores(torch.cat(probs), tensors.movement[t_idx, s_idx])


def train_predictor(
    panel: MarketPanel,
    tensors: PanelTensors,
    config: Optional[PredictorConfig] = None,
    ablation: Ablation = Ablation.FULL,
    seed: int = 0,
) -> TrainResult:
    """Minimise movement + lambda * volatility loss; keep the best validation-MCC epoch."""
    config = config or PredictorConfig()
    torch.manual_seed(seed)
    generator = torch.Generator().manual_seed(seed)
    model = EconModel.for_tensors(tensors, config, ablation).to(tensors.features.dtype)

    t_train, s_train = (torch.as_tensor(a) for a in panel.samples("train", config.window))
    t_val, s_val = (torch.as_tensor(a) for a in panel.samples("val", config.window))
    if len(t_train) == 0:
        raise ContractError(f"no training days with {config.window} days of history")
    if len(t_val) == 0:
        t_val, s_val = t_train, s_train
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)

    result = TrainResult(model=model)
    best_state = copy.deepcopy(model.state_dict())
    stale = 0
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = torch.randperm(len(t_train), generator=generator)
        totals = {"movement": 0.0, "volatility": 0.0}
        for step, start in enumerate(range(0, len(order), config.batch_size)):
            batch = order[start:start + config.batch_size]
            t_idx, s_idx = t_train[batch], s_train[batch]
            output = model(tensors, t_idx, s_idx)
            move = movement_loss(output.movement_logits, tensors.movement[t_idx, s_idx])
            vol = volatility_loss(output.volatility_logit, tensors.volatility[t_idx, s_idx])
            loss = move + config.volatility_weight * vol
            if not torch.isfinite(loss):
                raise TrainingError(
                    "predictor loss diverged",
                    {
                        "epoch": epoch,
                        "step": step,
                        "movement_loss": float(move),
                        "volatility_loss": float(vol),
                        "learning_rate": config.learning_rate,
                    },
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            totals["movement"] += float(move)
            totals["volatility"] += float(vol)
        train_accuracy, _ = _score(model, tensors, t_train, s_train, config.batch_size * 8)
        val_accuracy, val_mcc = _score(model, tensors, t_val, s_val, config.batch_size * 8)
        record = {
            "epoch": epoch,
            "movement_loss": totals["movement"] / len(t_train),
            "volatility_loss": totals["volatility"] / len(t_train),
            "train_accuracy": train_accuracy,
            "val_accuracy": val_accuracy,
            "val_mcc": val_mcc,
        }
        result.history.append(record)
        logger.info(
            "train[%s] epoch %d: movement %.4f volatility %.4f train acc %.3f val acc %.3f val mcc %.4f",
            model.ablation.value, epoch, record["movement_loss"], record["volatility_loss"],
            train_accuracy, val_accuracy, val_mcc,
        )
        if val_mcc > result.best_val_mcc:
            result.best_val_mcc = val_mcc
            result.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                logger.info("early stop at epoch %d (best %d)", epoch, result.best_epoch)
                break
    model.load_state_dict(best_state)
    return result


def write_training_log(history: Sequence[Dict[str, Any]], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        for record in history:
            handle.write(json.dumps(record, sort_keys=True) + "\n")
    return path
