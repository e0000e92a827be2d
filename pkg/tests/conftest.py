import datetime as dt
from typing import Optional

import pytest

from econ.config import RunConfig, SynthConfig
from econ.ingestion import PriceBar, Sentiment, Tweet
from econ.synth import generate_market

TINY_SYNTH = {
    "n_stocks": 4,
    "m_sectors": 2,
    "n_days": 60,
    "tweet_rate": 3.0,
    "signal_tweets": 2,
    "n_keywords": 1,
}


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    """Keep ECON_* variables from the developer's shell out of the tests."""
    import os

    for name in list(os.environ):
        if name.startswith("ECON_"):
            monkeypatch.delenv(name, raising=False)


@pytest.fixture
def tiny_synth() -> SynthConfig:
    return SynthConfig(**TINY_SYNTH)


@pytest.fixture(scope="session")
def tiny_market():
    return generate_market(SynthConfig(**TINY_SYNTH), seed=7)


@pytest.fixture
def tiny_run_config(tmp_path) -> RunConfig:
    return RunConfig(
        seed=3,
        output_dir=tmp_path / "run",
        synth=TINY_SYNTH,
        filter={"candidates": [1, 2, 3]},
        text={"min_freq": 1, "max_len": 16},
        selfaware={"embedding_dim": 8, "epochs": 2, "batch_size": 32},
        predictor={"hidden_size": 8, "epochs": 2, "batch_size": 64, "patience": 2},
    )


@pytest.fixture
def make_bar():
    def build(ticker: str, day: dt.date, close: float, volume: float = 1000.0, open_: Optional[float] = None) -> PriceBar:
        open_ = close if open_ is None else open_
        return PriceBar(
            ticker=ticker,
            date=day,
            open=open_,
            high=max(open_, close),
            low=min(open_, close),
            close=close,
            adj_close=close,
            volume=volume,
        )

    return build


@pytest.fixture
def make_tweet():
    def build(
        tweet_id: str,
        ticker: str,
        text: str,
        day: dt.date = dt.date(2021, 3, 1),
        impressions: int = 0,
        likes: int = 0,
        sentiment: Optional[Sentiment] = None,
        hour: int = 10,
    ) -> Tweet:
        return Tweet(
            id=tweet_id,
            tickers=[ticker],
            text=text,
            timestamp=dt.datetime.combine(day, dt.time(hour, 0)),
            likes=likes,
            retweets=0,
            impressions=impressions,
            sentiment=sentiment,
        )

    return build
