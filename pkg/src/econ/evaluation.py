"""
ECON Evaluation

Features:
- Accuracy and MCC from confusion counts (integer arithmetic)
- Rank-based AUC with half credit for ties
- Movement / volatility metric reports keyed by (ticker, date)
- Comparison table across runs and ablations with a config-diff column
"""

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .config import VARIANT_ORDER
from .errors import AlignmentError, ContractError, UndefinedMetricError
from .ingestion import Movement, StockDayLabel

if TYPE_CHECKING:
    from .predictor import PredictionOutput

logger = logging.getLogger(__name__)

TASKS = ("movement", "volatility")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ContractError("confusion counts must be nonnegative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_arrays(cls, predicted: Iterable[int], actual: Iterable[int]) -> "ConfusionCounts":
        predicted = np.asarray(list(predicted)).astype(bool)
        actual = np.asarray(list(actual)).astype(bool)
        if predicted.shape != actual.shape:
            raise ContractError("predicted and actual labels differ in length")
        return cls(
            tp=int(np.sum(predicted & actual)),
            fp=int(np.sum(predicted & ~actual)),
            tn=int(np.sum(~predicted & ~actual)),
            fn=int(np.sum(~predicted & actual)),
        )

    def to_dict(self) -> Dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def accuracy(counts: ConfusionCounts) -> float:
    if counts.total == 0:
        raise UndefinedMetricError("accuracy is undefined with no samples")
    return (counts.tp + counts.tn) / counts.total


def mcc(counts: ConfusionCounts) -> float:
    """Matthews correlation; 0 when any marginal is empty."""
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    product = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if product == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(product)


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Probability a random positive outranks a random negative (ties count half)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape:
        raise ContractError("scores and labels differ in length")
    n_pos = int(labels.sum())
    n_neg = int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative samples")
    ranks = rankdata(scores)
    wins = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(wins / (n_pos * n_neg))


@dataclass
class MetricsReport:
    task: str
    accuracy: float
    mcc: float
    counts: ConfusionCounts
    class_counts: Dict[str, int]
    auc: Optional[float] = None
    seed: Optional[int] = None
    config_digest: Optional[str] = None
    model: str = "econ"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task": self.task,
            "model": self.model,
            "accuracy": self.accuracy,
            "mcc": self.mcc,
            "auc": self.auc,
            "confusion": self.counts.to_dict(),
            "class_counts": self.class_counts,
            "seed": self.seed,
            "config_digest": self.config_digest,
        }


def evaluate(
    predictions: Sequence["PredictionOutput"],
    labels: Sequence[StockDayLabel],
    task: str,
    threshold: float = 0.5,
    seed: Optional[int] = None,
    config_digest: Optional[str] = None,
    model: str = "econ",
) -> MetricsReport:
    """Score predictions against labels with identical (ticker, date) keys."""
    if task not in TASKS:
        raise ContractError(f"unknown task {task!r}; choose from {TASKS}")
    by_key = {(p.ticker, p.date): p for p in predictions}
    truth = {(l.ticker, l.date): l for l in labels}
    if by_key.keys() != truth.keys():
        missing = sorted(
            [("prediction", k[0], k[1].isoformat()) for k in truth.keys() - by_key.keys()]
            + [("label", k[0], k[1].isoformat()) for k in by_key.keys() - truth.keys()]
        )
        raise AlignmentError("predictions and labels are keyed differently", missing)
    keys = sorted(truth)
    if task == "movement":
        keys = [k for k in keys if truth[k].movement != Movement.EXCLUDED]
        actual = [truth[k].movement == Movement.UP for k in keys]
        scores = [by_key[k].movement_prob for k in keys]
        class_counts = {"up": int(sum(actual)), "down": len(actual) - int(sum(actual))}
    else:
        actual = [truth[k].volatility == 1 for k in keys]
        scores = [by_key[k].volatility_prob for k in keys]
        class_counts = {"abnormal": int(sum(actual)), "normal": len(actual) - int(sum(actual))}
    predicted = [score >= threshold for score in scores]
    counts = ConfusionCounts.from_arrays(predicted, actual)
    report = MetricsReport(
        task=task,
        accuracy=accuracy(counts),
        mcc=mcc(counts),
        counts=counts,
        class_counts=class_counts,
        seed=seed,
        config_digest=config_digest,
        model=model,
    )
    if task == "volatility":
        try:
            report.auc = auc(scores, actual)
        except UndefinedMetricError:
            logger.warning("volatility AUC undefined: only one class among %d test samples", len(actual))
    return report


# Comparison


@dataclass
class RunSummary:
    name: str
    ablation: Optional[str] = None
    movement: Optional[MetricsReport] = None
    volatility: Optional[MetricsReport] = None
    config: Dict[str, Any] = field(default_factory=dict)
    tweets: Optional[int] = None


def flatten(mapping: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    flat: Dict[str, Any] = {}
    for key, value in mapping.items():
        name = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def config_diff(configs: Sequence[Mapping[str, Any]], ignore: Iterable[str] = ("output_dir",)) -> List[str]:
    """Per config, the ``key=value`` pairs that are not shared by every config."""
    flats = [flatten(c) for c in configs]
    keys = sorted(set().union(*flats)) if flats else []
    skipped = set(ignore)
    varying = [
        k for k in keys
        if k not in skipped and len({repr(f.get(k)) for f in flats}) > 1
    ]
    return [";".join(f"{k}={f.get(k)}" for k in varying) for f in flats]


def _order(run: RunSummary) -> tuple:
    ablations = [a.value for a in VARIANT_ORDER]
    if run.ablation in ablations:
        return (0, ablations.index(run.ablation), run.name)
    return (1, 0, run.name)


def comparison_table(runs: Sequence[RunSummary]) -> pd.DataFrame:
    """One row per run: ablations first (full, A, I, none, sentiment-all, sentiment-topk), then other models."""
    ordered = sorted(runs, key=_order)
    diffs = config_diff([r.config for r in ordered])
    rows = []
    for run, diff in zip(ordered, diffs):
        rows.append(
            {
                "run": run.name,
                "ablation": run.ablation or "",
                "movement_acc": run.movement.accuracy if run.movement else np.nan,
                "movement_mcc": run.movement.mcc if run.movement else np.nan,
                "volatility_acc": run.volatility.accuracy if run.volatility else np.nan,
                "volatility_mcc": run.volatility.mcc if run.volatility else np.nan,
                "volatility_auc": (
                    run.volatility.auc if run.volatility and run.volatility.auc is not None else np.nan
                ),
                "tweets": run.tweets if run.tweets is not None else np.nan,
                "config_diff": diff,
            }
        )
    return pd.DataFrame(rows)
