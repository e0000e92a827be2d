"""
ECON Synthetic Market

Generates the four input files for an offline run. A hidden market mood
drives next-day returns, same-day volume and the sentiment of the
highest-impression tweets, so every part of the model has something to find.

Features:
- Sector-tagged tickers with keyword-bearing tweets
- Mood-driven returns with a flat-day share that lands in the exclusion band
- Engagement-ranked signal tweets among noisy and duplicated chatter
- Search-trend indices stitched from overlapping windows
"""

import datetime as dt
import logging
from pathlib import Path
from string import ascii_uppercase
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .config import SynthConfig
from .ingestion import (
    MacroSeries,
    MacroSource,
    MarketDataset,
    PriceBar,
    SectorMap,
    Sentiment,
    Tweet,
    normalize_trend_windows,
    save_dataset,
)

logger = logging.getLogger(__name__)

POSITIVE_WORDS = ["soar", "rally", "beat", "bullish", "surge"]
NEGATIVE_WORDS = ["plunge", "miss", "bearish", "drop", "sell"]
FILLER_WORDS = ["today", "watching", "update", "chart", "shares", "market", "news", "volume"]
SECTOR_KEYWORDS = [
    "chips", "oil", "banks", "pharma", "retail",
    "autos", "airlines", "telecom", "mining", "insurance",
    "software", "utilities", "media", "shipping", "biotech",
]
MACRO_KEYWORDS = ["inflation", "unemployment", "rates", "recession", "housing"]

TREND_WINDOW = 90
TREND_OVERLAP = 30


def ticker_name(index: int) -> str:
    """Letters-only ticker so it reads as a cashtag: ZAA, ZAB, ..."""
    return "Z" + ascii_uppercase[(index // 26) % 26] + ascii_uppercase[index % 26]


def sector_keyword(sector: int) -> str:
    if sector < len(SECTOR_KEYWORDS):
        return SECTOR_KEYWORDS[sector]
    return f"{SECTOR_KEYWORDS[sector % len(SECTOR_KEYWORDS)]}{sector}"


class SyntheticMarket:
    """Seeded generator; one instance produces one dataset."""

    def __init__(self, config: SynthConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.tickers = [ticker_name(i) for i in range(config.n_stocks)]
        self.sectors = {t: i % config.m_sectors for i, t in enumerate(self.tickers)}
        self.dates = [d.date() for d in pd.bdate_range(start=config.start, periods=config.n_days)]
        self.mood = self.rng.choice([-1, 1], size=config.n_days)
        self._next_id = 0

    def generate(self) -> MarketDataset:
        bars = self._prices()
        tweets = self._tweets()
        macro = self._macro()
        names = tuple(f"sector{c:02d}" for c in range(self.config.m_sectors))
        dataset = MarketDataset(
            bars=bars,
            tweets=tweets,
            macro=macro,
            sector_map=SectorMap(entries=dict(self.sectors), names=names),
        )
        logger.info(
            "Generated %d stocks x %d days, %d tweets, %d macro series (seed %d)",
            len(self.tickers), len(self.dates), len(tweets), len(macro), self.seed,
        )
        return dataset

    def _agrees(self) -> bool:
        return bool(self.rng.random() < (1 + self.config.signal_strength) / 2)

    def _prices(self) -> List[PriceBar]:
        cfg = self.config
        bars: List[PriceBar] = []
        for ticker in self.tickers:
            price = round(float(self.rng.uniform(20, 200)), 4)
            base_volume = float(self.rng.uniform(4e6, 6e6))
            previous_close = price
            for t, day in enumerate(self.dates):
                if t > 0:
                    if self.rng.random() < cfg.flat_rate:
                        ret = float(self.rng.uniform(-0.004, 0.004))
                    else:
                        direction = self.mood[t - 1] if self._agrees() else -self.mood[t - 1]
                        ret = float(direction * (0.006 + cfg.noise * abs(self.rng.standard_normal())))
                    price = round(max(previous_close * (1 + ret), 0.01), 4)
                gap = float(self.rng.normal(0, 0.002))
                open_ = round(max(previous_close * (1 + gap), 0.01), 4) if t > 0 else price
                high = round(max(open_, price) * (1 + abs(self.rng.normal(0, 0.003))), 4)
                low = round(min(open_, price) * (1 - abs(self.rng.normal(0, 0.003))), 4)
                volume = int(
                    base_volume
                    * np.exp(
                        cfg.volume_signal * cfg.signal_strength * self.mood[t]
                        + cfg.volume_noise * self.rng.standard_normal()
                    )
                )
                bars.append(
                    PriceBar(
                        ticker=ticker, date=day, open=open_, high=high, low=low,
                        close=price, adj_close=price, volume=volume,
                    )
                )
                previous_close = price
        return bars

    def _tweet_text(self, ticker: str, sentiment: Sentiment) -> str:
        words = [f"${ticker}", sector_keyword(self.sectors[ticker])]
        words += list(self.rng.choice(FILLER_WORDS, size=2, replace=False))
        if sentiment == Sentiment.POSITIVE:
            words += list(self.rng.choice(POSITIVE_WORDS, size=2, replace=False))
        elif sentiment == Sentiment.NEGATIVE:
            words += list(self.rng.choice(NEGATIVE_WORDS, size=2, replace=False))
        order = self.rng.permutation(len(words))
        return " ".join(words[i] for i in order)

    def _make_tweet(
        self, ticker: str, day: dt.date, sentiment: Sentiment, impressions: int, text: Optional[str] = None
    ) -> Tweet:
        minute = int(self.rng.integers(0, 390))
        timestamp = dt.datetime.combine(day, dt.time(9, 30)) + dt.timedelta(minutes=minute)
        likes = int(impressions * self.rng.uniform(0.01, 0.05))
        tweet = Tweet(
            id=f"{self._next_id:08d}",
            tickers=[ticker],
            text=text if text is not None else self._tweet_text(ticker, sentiment),
            timestamp=timestamp,
            likes=likes,
            retweets=int(likes * 0.2),
            impressions=impressions,
            sentiment=sentiment,
        )
        self._next_id += 1
        return tweet

    def _tweets(self) -> List[Tweet]:
        cfg = self.config
        tweets: List[Tweet] = []
        polar = {1: Sentiment.POSITIVE, -1: Sentiment.NEGATIVE}
        choices = [Sentiment.POSITIVE, Sentiment.NEUTRAL, Sentiment.NEGATIVE]
        for t, day in enumerate(self.dates):
            for ticker in self.tickers:
                batch: List[Tweet] = []
                n_signal = cfg.signal_tweets if cfg.tweet_rate > 0 else 0
                for _ in range(n_signal):
                    sign = self.mood[t] if self._agrees() else -self.mood[t]
                    impressions = int(self.rng.lognormal(9.0, 0.5))
                    batch.append(self._make_tweet(ticker, day, polar[int(sign)], impressions))
                for _ in range(int(self.rng.poisson(cfg.tweet_rate))):
                    impressions = int(self.rng.lognormal(5.0, 1.0))
                    noise = batch[n_signal:]
                    if noise and self.rng.random() < cfg.duplicate_rate:
                        source = noise[int(self.rng.integers(0, len(noise)))]
                        batch.append(
                            self._make_tweet(ticker, day, source.sentiment, impressions, text=source.text)
                        )
                        continue
                    sentiment = choices[int(self.rng.integers(0, 3))]
                    batch.append(self._make_tweet(ticker, day, sentiment, impressions))
                tweets.extend(batch)
        tweets.sort(key=lambda tw: (tw.timestamp.isoformat(), tw.id))
        return tweets

    def _trend_windows(self, level: np.ndarray) -> List[List[Tuple[dt.date, float]]]:
        """Split a positive series into overlapping windows, each scaled to peak 100."""
        windows = []
        step = TREND_WINDOW - TREND_OVERLAP
        start = 0
        while True:
            stop = min(start + TREND_WINDOW, len(self.dates))
            chunk = level[start:stop]
            peak = chunk.max()
            windows.append([(self.dates[i], float(level[i] / peak * 100)) for i in range(start, stop)])
            if stop == len(self.dates):
                return windows
            start += step

    def _macro(self) -> List[MacroSeries]:
        series: List[MacroSeries] = []
        mood = self.mood.astype(float)
        for i in range(self.config.n_keywords):
            keyword = MACRO_KEYWORDS[i % len(MACRO_KEYWORDS)]
            if i >= len(MACRO_KEYWORDS):
                keyword = f"{keyword}{i}"
            walk = np.cumsum(self.rng.normal(0, 0.005, size=len(self.dates)))
            level = np.exp(walk + 0.3 * mood * self.config.signal_strength) * 50
            series.append(normalize_trend_windows(self._trend_windows(level), keyword=keyword))
            econ = np.cumsum(self.rng.normal(0, 0.1, size=len(self.dates))) + 100
            series.append(
                MacroSeries(
                    keyword=keyword,
                    source=MacroSource.ECON_SERIES,
                    samples=tuple((d, round(float(v), 6)) for d, v in zip(self.dates, econ)),
                )
            )
        # Stitching floats can land a hair past 100.
        return [
            MacroSeries(
                keyword=s.keyword,
                source=s.source,
                samples=tuple(
                    (d, round(min(v, 100.0), 6) if s.source == MacroSource.TREND_INDEX else v)
                    for d, v in s.samples
                ),
            )
            for s in series
        ]


def generate_market(config: SynthConfig, seed: int = 0) -> MarketDataset:
    return SyntheticMarket(config, seed).generate()


def write_market(config: SynthConfig, seed: int, directory: Path) -> Dict[str, Path]:
    """Generate and write the four input files under ``directory``."""
    return save_dataset(generate_market(config, seed), directory)
