"""
ECON Trends

Macro trend: the day's mean tweet embedding attends over sectors and mixes
their macro-plus-price features. Micro trend: each sector embedding attends
over the day's tweets, the result is projected onto companies, and those
scores weight the stock feature vectors.

All functions broadcast over leading batch dimensions.
"""

import datetime as dt
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch

from .errors import ContractError
from .ingestion import MarketPanel, SectorMap

logger = logging.getLogger(__name__)


def daily_mean_embedding(embeddings: torch.Tensor, width: Optional[int] = None) -> Tuple[torch.Tensor, bool]:
    """Mean tweet embedding r_t; an empty day gives zeros and ``True``."""
    if embeddings.shape[0] == 0:
        if width is None:
            width = embeddings.shape[-1] if embeddings.dim() == 2 else 0
        return torch.zeros(width, dtype=embeddings.dtype), True
    return embeddings.mean(dim=0), False


def embeddings_by_day(
    vectors: torch.Tensor,
    tweet_ids: Sequence[str],
    tweet_days: Mapping[str, dt.date],
) -> Tuple[Dict[dt.date, torch.Tensor], Dict[dt.date, List[str]]]:
    """One embedding per tweet and day, in first-seen order.

    A tweet naming several targets is encoded once per target; those rows are
    averaged so the tweet counts once in r_t and in the tweet attention.
    """
    if vectors.shape[0] != len(tweet_ids):
        raise ContractError(f"{vectors.shape[0]} embeddings for {len(tweet_ids)} tweet ids")
    rows: Dict[str, List[int]] = {}
    for i, tweet_id in enumerate(tweet_ids):
        rows.setdefault(tweet_id, []).append(i)
    day_vectors: Dict[dt.date, List[torch.Tensor]] = {}
    day_ids: Dict[dt.date, List[str]] = {}
    for tweet_id, index in rows.items():
        day = tweet_days[tweet_id]
        day_vectors.setdefault(day, []).append(vectors[torch.as_tensor(index)].mean(dim=0))
        day_ids.setdefault(day, []).append(tweet_id)
    return {day: torch.stack(v) for day, v in day_vectors.items()}, day_ids


def macro_trend(
    r: torch.Tensor, sector_matrix: torch.Tensor, sector_features: torch.Tensor
) -> Tuple[torch.Tensor, torch.Tensor]:
    """(a_t, alpha) with alpha = softmax_c(r . h_c) and a_t = sum_c alpha_c x_c.

    Shapes: r [..., 2k], sector_matrix [m, 2k], sector_features [..., m, q].
    """
    if r.shape[-1] != sector_matrix.shape[-1]:
        raise ContractError(f"r width {r.shape[-1]} != sector embedding width {sector_matrix.shape[-1]}")
    if sector_features.shape[-2] != sector_matrix.shape[0]:
        raise ContractError(
            f"{sector_features.shape[-2]} sector feature rows for {sector_matrix.shape[0]} sectors"
        )
    alpha = torch.softmax(r @ sector_matrix.T, dim=-1)
    return (alpha.unsqueeze(-1) * sector_features).sum(dim=-2), alpha


def micro_tweet_agg(
    sector_embedding: torch.Tensor, tweet_embeddings: torch.Tensor
) -> Tuple[torch.Tensor, torch.Tensor, bool]:
    """(w, alpha, empty): each sector query attends over the day's tweets.

    ``sector_embedding`` is [2k] or [m, 2k]; ``tweet_embeddings`` is [N, 2k].
    """
    if sector_embedding.shape[-1] != tweet_embeddings.shape[-1]:
        raise ContractError("sector and tweet embeddings differ in width")
    if tweet_embeddings.shape[0] == 0:
        zeros = torch.zeros_like(sector_embedding)
        return zeros, torch.zeros(*sector_embedding.shape[:-1], 0, dtype=sector_embedding.dtype), True
    alpha = torch.softmax(sector_embedding @ tweet_embeddings.T, dim=-1)
    return alpha @ tweet_embeddings, alpha, False


def project_companies(w: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """g = W1 w + b1, one score per company."""
    if weight.dim() != 2 or weight.shape[1] != w.shape[-1]:
        raise ContractError(f"W1 shape {tuple(weight.shape)} does not accept width {w.shape[-1]}")
    if bias.shape != (weight.shape[0],):
        raise ContractError(f"b1 shape {tuple(bias.shape)} does not match {weight.shape[0]} companies")
    return w @ weight.T + bias


def micro_trend(g: torch.Tensor, stock_features: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """Softmax over companies of g weights the stock feature vectors.

    Shapes: g [..., n], stock_features [..., n, p] -> ([..., p], [..., n]).
    """
    if g.shape[-1] != stock_features.shape[-2]:
        raise ContractError(f"g has {g.shape[-1]} companies, features have {stock_features.shape[-2]}")
    alpha = torch.softmax(g, dim=-1)
    return (alpha.unsqueeze(-1) * stock_features).sum(dim=-2), alpha


def stock_micro_lookup(ticker: str, sector_micro: torch.Tensor, sector_map: SectorMap) -> torch.Tensor:
    """Micro trend of the stock's own sector; ``sector_micro`` is [m, p]."""
    return sector_micro[sector_map.sector_of(ticker)]


def gather_stock_micro(sector_micro: torch.Tensor, sector_of: torch.Tensor) -> torch.Tensor:
    """[..., m, p] per-sector trends -> [..., n, p] per-stock trends."""
    return sector_micro.index_select(-2, sector_of)


def sector_features(
    macro: np.ndarray, stock_features: np.ndarray, sector_of: np.ndarray, n_sectors: int
) -> np.ndarray:
    """x_ct: day macro vector followed by the mean features of the sector's stocks, [T, m, M + p]."""
    days, _, p = stock_features.shape
    price = np.zeros((days, n_sectors, p))
    for c in range(n_sectors):
        members = sector_of == c
        if members.any():
            price[:, c] = stock_features[:, members].mean(axis=1)
    shared = np.repeat(macro[:, None, :], n_sectors, axis=1)
    return np.concatenate([shared, price], axis=-1)


@dataclass
class TrendBundle:
    """Attention inputs and outputs for every panel day."""

    dates: List[dt.date]
    r: torch.Tensor  # [T, 2k]
    tweet_empty: torch.Tensor  # [T] bool
    macro: torch.Tensor  # a_t, [T, q]
    alpha_macro: torch.Tensor  # [T, m]
    sector_tweets: torch.Tensor  # w_ct, [T, m, 2k]
    alpha_tweets: List[torch.Tensor] = field(default_factory=list)  # per day [m, N_t]
    tweet_ids: List[List[str]] = field(default_factory=list)
    alpha_micro: Optional[torch.Tensor] = None  # [T, m, n], filled in by the predictor

    @property
    def q(self) -> int:
        return self.macro.shape[-1]

    def to_dict(self) -> Dict[str, Any]:
        days = []
        for t, day in enumerate(self.dates):
            entry: Dict[str, Any] = {
                "date": day.isoformat(),
                "no_tweets": bool(self.tweet_empty[t]),
                "alpha_macro": self.alpha_macro[t].tolist(),
            }
            if self.alpha_tweets:
                entry["alpha_tweets"] = {
                    tweet_id: self.alpha_tweets[t][:, i].tolist() for i, tweet_id in enumerate(self.tweet_ids[t])
                }
            if self.alpha_micro is not None:
                entry["alpha_micro"] = self.alpha_micro[t].tolist()
            days.append(entry)
        return {"days": days}


def dump_attention(bundle: TrendBundle, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(bundle.to_dict(), indent=1))
    return path


class TrendBuilder:
    """Precomputes the parameter-free part of both trends for a panel."""

    def __init__(self, sector_matrix: torch.Tensor):
        self.sector_matrix = sector_matrix.detach()

    def build(
        self,
        panel: MarketPanel,
        day_embeddings: Mapping[dt.date, torch.Tensor],
        day_tweet_ids: Optional[Mapping[dt.date, Sequence[str]]] = None,
    ) -> TrendBundle:
        width = self.sector_matrix.shape[-1]
        if self.sector_matrix.shape[0] != panel.n_sectors:
            raise ContractError(
                f"sector matrix has {self.sector_matrix.shape[0]} rows, panel has {panel.n_sectors} sectors"
            )
        features = torch.as_tensor(
            sector_features(panel.macro, panel.features, panel.sector_of, panel.n_sectors),
            dtype=self.sector_matrix.dtype,
        )
        rs, flags, ws, alphas, ids = [], [], [], [], []
        empty = torch.zeros(0, width, dtype=self.sector_matrix.dtype)
        for day in panel.dates:
            embeddings = day_embeddings.get(day, empty).to(self.sector_matrix.dtype)
            r, no_tweets = daily_mean_embedding(embeddings, width)
            w, alpha, _ = micro_tweet_agg(self.sector_matrix, embeddings)
            rs.append(r)
            flags.append(no_tweets)
            ws.append(w)
            alphas.append(alpha)
            ids.append(list(day_tweet_ids.get(day, [])) if day_tweet_ids else [])
        r = torch.stack(rs)
        a, alpha_macro = macro_trend(r, self.sector_matrix, features)
        empty_days = sum(flags)
        if empty_days:
            logger.info("%d of %d days have no tweets; their attention falls back to uniform", empty_days, len(flags))
        return TrendBundle(
            dates=list(panel.dates),
            r=r,
            tweet_empty=torch.tensor(flags, dtype=torch.bool),
            macro=a,
            alpha_macro=alpha_macro,
            sector_tweets=torch.stack(ws),
            alpha_tweets=alphas if day_tweet_ids else [],
            tweet_ids=ids if day_tweet_ids else [],
        )
