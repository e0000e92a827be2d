"""
ECON Baselines

Reference models scored with the same metrics as the full predictor.
"""

import logging
from abc import ABC, abstractmethod
from typing import List, Optional, Tuple

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.preprocessing import StandardScaler

from .ingestion import MarketPanel
from .predictor import PredictionOutput

logger = logging.getLogger(__name__)


class Baseline(ABC):
    name: str = "baseline"

    @abstractmethod
    def fit(self, panel: MarketPanel, window: int) -> "Baseline":
        pass

    @abstractmethod
    def probabilities(self, panel: MarketPanel, t_idx: np.ndarray, s_idx: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(P(up), P(abnormal)) per sample."""

    def predict(self, panel: MarketPanel, t_idx: np.ndarray, s_idx: np.ndarray) -> List[PredictionOutput]:
        movement, volatility = self.probabilities(panel, t_idx, s_idx)
        return [
            PredictionOutput(
                ticker=panel.tickers[s],
                date=panel.dates[t],
                movement_prob=float(movement[i]),
                volatility_prob=float(volatility[i]),
            )
            for i, (t, s) in enumerate(zip(t_idx.tolist(), s_idx.tolist()))
        ]


class MajorityBaseline(Baseline):
    """Always predicts the majority training movement and the training abnormal rate."""

    name = "majority"

    def __init__(self) -> None:
        self.up = True
        self.abnormal_rate = 0.0

    def fit(self, panel: MarketPanel, window: int) -> "MajorityBaseline":
        t_idx, s_idx = panel.samples("train", window)
        movement = panel.movement[t_idx, s_idx]
        movement = movement[movement >= 0]
        self.up = bool((movement == 1).sum() >= (movement == 0).sum())
        self.abnormal_rate = float(panel.volatility[t_idx, s_idx].mean()) if len(t_idx) else 0.0
        return self

    def probabilities(self, panel: MarketPanel, t_idx: np.ndarray, s_idx: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        count = len(t_idx)
        return np.full(count, 1.0 if self.up else 0.0), np.full(count, self.abnormal_rate)


def window_matrix(panel: MarketPanel, t_idx: np.ndarray, s_idx: np.ndarray, window: int) -> np.ndarray:
    """Stock features and macro values of the previous ``window`` days, flattened."""
    days = t_idx[:, None] + np.arange(-window, 0)[None, :]
    stock = panel.features[days, s_idx[:, None]].reshape(len(t_idx), -1)
    macro = panel.macro[days].reshape(len(t_idx), -1)
    return np.concatenate([stock, macro], axis=1)


class LogisticBaseline(Baseline):
    """Logistic regression on the flattened feature window, one model per task."""

    name = "logistic"

    def __init__(self, seed: int = 0, C: float = 1.0):
        self.seed = seed
        self.C = C
        self.window = 5
        self.scaler = StandardScaler()
        self.movement_model: Optional[LogisticRegression] = None
        self.volatility_model: Optional[LogisticRegression] = None
        self.abnormal_rate = 0.0
        self.up_rate = 0.5

    def _model(self) -> LogisticRegression:
        return LogisticRegression(C=self.C, max_iter=1000, random_state=self.seed)

    def fit(self, panel: MarketPanel, window: int) -> "LogisticBaseline":
        self.window = window
        t_idx, s_idx = panel.samples("train", window)
        X = self.scaler.fit_transform(window_matrix(panel, t_idx, s_idx, window))
        movement = panel.movement[t_idx, s_idx]
        keep = movement >= 0
        self.up_rate = float((movement[keep] == 1).mean()) if keep.any() else 0.5
        if len(np.unique(movement[keep])) > 1:
            self.movement_model = self._model().fit(X[keep], movement[keep])
        volatility = panel.volatility[t_idx, s_idx]
        self.abnormal_rate = float(volatility.mean()) if len(volatility) else 0.0
        if len(np.unique(volatility)) > 1:
            self.volatility_model = self._model().fit(X, volatility)
        else:
            logger.info("logistic baseline: single volatility class in training, predicting the base rate")
        return self

    def probabilities(self, panel: MarketPanel, t_idx: np.ndarray, s_idx: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        X = self.scaler.transform(window_matrix(panel, t_idx, s_idx, self.window))
        if self.movement_model is None:
            movement = np.full(len(t_idx), self.up_rate)
        else:
            up_column = list(self.movement_model.classes_).index(1)
            movement = self.movement_model.predict_proba(X)[:, up_column]
        if self.volatility_model is None:
            volatility = np.full(len(t_idx), self.abnormal_rate)
        else:
            volatility = self.volatility_model.predict_proba(X)[:, 1]
        return movement, volatility
