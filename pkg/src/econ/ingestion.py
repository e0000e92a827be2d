"""
ECON Ingestion

Loads the four input files and turns them into model-ready arrays.

Features:
- Price, tweet, macro and sector-map loaders with line-numbered errors
- Movement / abnormal-volatility labels from adjusted closes
- Chained normalization of overlapping search-trend windows
- z-scored stock features with training-split statistics
- Chronological train/val/test split shared across stocks
- MarketPanel: the aligned day x stock arrays the trends and predictor consume
"""

import datetime as dt
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Type, TypeVar
from zoneinfo import ZoneInfo

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator, model_validator

from .errors import (
    AlignmentError,
    ChainingError,
    ContractError,
    DataValidationError,
    DuplicateKeyError,
    MappingError,
    ParseError,
)

logger = logging.getLogger(__name__)

PRICE_COLUMNS = ["ticker", "date", "open", "high", "low", "close", "adj_close", "volume"]
TWEET_KEYS = ["id", "tickers", "text", "timestamp", "likes", "retweets", "impressions"]
MACRO_COLUMNS = ["keyword", "source", "date", "value"]
SECTOR_COLUMNS = ["ticker", "sector"]

PRICES_FILE = "prices.csv"
TWEETS_FILE = "tweets.jsonl"
MACRO_FILE = "macro.csv"
SECTORS_FILE = "sectors.csv"

FEATURE_NAMES = [
    "ret_open",
    "ret_high",
    "ret_low",
    "ret_close",
    "ret_adj_close",
    "log_volume",
    "tweet_count",
]

NEW_YORK = ZoneInfo("America/New_York")
SESSION_OPEN = dt.time(9, 30)
SESSION_CLOSE = dt.time(16, 0)


class Movement(str, Enum):
    UP = "up"
    DOWN = "down"
    EXCLUDED = "excluded"

    @property
    def code(self) -> int:
        return MOVEMENT_CODES[self]


MOVEMENT_CODES = {Movement.UP: 1, Movement.DOWN: 0, Movement.EXCLUDED: -1}


class Sentiment(str, Enum):
    POSITIVE = "positive"
    NEUTRAL = "neutral"
    NEGATIVE = "negative"


class MacroSource(str, Enum):
    TREND_INDEX = "trend-index"
    ECON_SERIES = "econ-series"


def normalize_ticker(raw: str) -> str:
    return str(raw).strip().lstrip("$").upper()


# Records


class PriceBar(BaseModel):
    model_config = ConfigDict(frozen=True)

    ticker: str
    date: dt.date
    open: float
    high: float
    low: float
    close: float
    adj_close: float
    volume: float

    @field_validator("ticker")
    @classmethod
    def _ticker(cls, value: str) -> str:
        value = normalize_ticker(value)
        if not value:
            raise ValueError("empty ticker")
        return value

    @model_validator(mode="after")
    def _bar_invariants(self) -> "PriceBar":
        if self.low > min(self.open, self.close):
            raise ValueError(f"low {self.low} above min(open, close) for {self.ticker} {self.date}")
        if self.high < max(self.open, self.close):
            raise ValueError(f"high {self.high} below max(open, close) for {self.ticker} {self.date}")
        if not self.adj_close > 0:
            raise ValueError(f"adj_close must be positive for {self.ticker} {self.date}")
        if self.volume < 0:
            raise ValueError(f"negative volume for {self.ticker} {self.date}")
        return self


class Tweet(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    tickers: List[str]
    text: str
    timestamp: dt.datetime
    likes: int = 0
    retweets: int = 0
    impressions: int = 0
    sentiment: Optional[Sentiment] = None

    @field_validator("id", mode="before")
    @classmethod
    def _id_as_text(cls, value: Any) -> str:
        return str(value)

    @field_validator("tickers")
    @classmethod
    def _cashtags(cls, value: List[str]) -> List[str]:
        seen: List[str] = []
        for raw in value:
            ticker = normalize_ticker(raw)
            if ticker and ticker not in seen:
                seen.append(ticker)
        if not seen:
            raise ValueError("tweet must carry at least one cashtag")
        return seen

    @field_validator("likes", "retweets", "impressions")
    @classmethod
    def _nonnegative(cls, value: int) -> int:
        if value < 0:
            raise ValueError("engagement counts must be nonnegative")
        return value

    @property
    def session_date(self) -> dt.date:
        return session_date(self.timestamp)


class MacroRecord(BaseModel):
    keyword: str
    source: MacroSource
    date: dt.date
    value: float


@dataclass(frozen=True)
class StockDayLabel:
    ticker: str
    date: dt.date
    return_pct: float
    movement: Movement
    volatility: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ticker": self.ticker,
            "date": self.date.isoformat(),
            "return_pct": self.return_pct,
            "movement": self.movement.value,
            "volatility": self.volatility,
        }


@dataclass(frozen=True)
class MacroSeries:
    keyword: str
    source: MacroSource
    samples: Tuple[Tuple[dt.date, float], ...]

    def __post_init__(self) -> None:
        dates = [d for d, _ in self.samples]
        for earlier, later in zip(dates, dates[1:]):
            if not later > earlier:
                raise DataValidationError(
                    f"macro series {self.keyword}/{self.source.value}: dates not strictly increasing at {later}"
                )
        if self.source == MacroSource.TREND_INDEX:
            for d, v in self.samples:
                if not -1e-9 <= v <= 100 + 1e-9:
                    raise DataValidationError(
                        f"trend index {self.keyword} outside [0, 100] on {d}: {v}"
                    )

    @property
    def name(self) -> str:
        return f"{self.keyword}:{self.source.value}"

    def to_series(self) -> pd.Series:
        return pd.Series(
            [v for _, v in self.samples],
            index=pd.Index([d for d, _ in self.samples]),
            name=self.name,
            dtype=float,
        )


@dataclass(frozen=True)
class SectorMap:
    entries: Dict[str, int]
    names: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        indices = set(self.entries.values())
        if indices != set(range(len(indices))):
            raise DataValidationError(
                f"sector identifiers must form a contiguous range 0..m-1, got {sorted(indices)}"
            )
        if self.names and len(self.names) < len(indices):
            raise DataValidationError("fewer sector names than sector indices")

    @property
    def m(self) -> int:
        return max(len(set(self.entries.values())), len(self.names))

    @property
    def tickers(self) -> List[str]:
        return sorted(self.entries)

    def sector_of(self, ticker: str) -> int:
        key = normalize_ticker(ticker)
        try:
            return self.entries[key]
        except KeyError:
            raise MappingError(f"ticker {key} has no sector") from None

    def __getitem__(self, ticker: str) -> int:
        return self.sector_of(ticker)

    def __contains__(self, ticker: object) -> bool:
        return isinstance(ticker, str) and normalize_ticker(ticker) in self.entries

    def members(self, sector: int) -> List[str]:
        return sorted(t for t, c in self.entries.items() if c == sector)

    def sector_name(self, sector: int) -> str:
        return self.names[sector] if self.names else str(sector)


@dataclass
class StockFeatureVector:
    ticker: str
    date: dt.date
    values: np.ndarray


@dataclass
class MarketDataset:
    bars: List[PriceBar]
    tweets: List[Tweet]
    macro: List[MacroSeries]
    sector_map: SectorMap

    @property
    def tickers(self) -> List[str]:
        return sorted({b.ticker for b in self.bars})


# Loaders

Model = TypeVar("Model", bound=BaseModel)


def _validate_record(model: Type[Model], record: Mapping[str, Any], path: Path, line: int) -> Model:
    try:
        return model.model_validate(record)
    except ValidationError as exc:
        errors = exc.errors()
        detail = "; ".join(
            f"{'.'.join(str(p) for p in e['loc']) or 'row'}: {e['msg']}" for e in errors
        )
        if errors and all(e["type"] == "value_error" for e in errors):
            raise DataValidationError(detail, line=line) from exc
        raise ParseError(detail, path=str(path), line=line) from exc


def _read_csv(path: Path, columns: List[str]) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise ParseError("file not found", path=str(path))
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as exc:
        raise ParseError("empty file", path=str(path), line=1) from exc
    except pd.errors.ParserError as exc:
        raise ParseError(str(exc), path=str(path)) from exc
    if list(frame.columns) != columns:
        raise ParseError(
            f"header {','.join(frame.columns)} does not match {','.join(columns)}",
            path=str(path),
            line=1,
        )
    return frame


def load_prices(path: Path) -> List[PriceBar]:
    """Load a prices CSV; rows come back sorted by (ticker, date)."""
    frame = _read_csv(path, PRICE_COLUMNS)
    bars: List[PriceBar] = []
    seen: Dict[Tuple[str, dt.date], int] = {}
    for offset, record in enumerate(frame.to_dict("records")):
        line = offset + 2
        bar = _validate_record(PriceBar, record, path, line)
        key = (bar.ticker, bar.date)
        if key in seen:
            raise DuplicateKeyError(
                f"duplicate (ticker, date) {bar.ticker} {bar.date} (first on line {seen[key]})",
                line=line,
            )
        seen[key] = line
        bars.append(bar)
    bars.sort(key=lambda b: (b.ticker, b.date))
    logger.info("Loaded %d price bars for %d tickers from %s", len(bars), len({b.ticker for b in bars}), path)
    return bars


def session_date(timestamp: dt.datetime) -> dt.date:
    """Trading day of a timestamp; naive timestamps are taken as New York time."""
    if timestamp.tzinfo is not None:
        timestamp = timestamp.astimezone(NEW_YORK)
    return timestamp.date()


def within_trading_hours(timestamp: dt.datetime) -> bool:
    local = timestamp.astimezone(NEW_YORK) if timestamp.tzinfo is not None else timestamp
    return local.weekday() < 5 and SESSION_OPEN <= local.time() < SESSION_CLOSE


def load_tweets(path: Path, trading_hours: bool = False) -> List[Tweet]:
    """Load tweets from JSON lines, optionally keeping only regular-session posts."""
    path = Path(path)
    if not path.exists():
        raise ParseError("file not found", path=str(path))
    tweets: List[Tweet] = []
    seen: Dict[str, int] = {}
    dropped = 0
    with path.open(encoding="utf-8") as handle:
        for line, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", path=str(path), line=line) from exc
            if not isinstance(record, dict):
                raise ParseError("each line must be a JSON object", path=str(path), line=line)
            missing = [key for key in TWEET_KEYS if key not in record]
            if missing:
                raise ParseError(f"missing keys {missing}", path=str(path), line=line)
            tweet = _validate_record(Tweet, record, path, line)
            if tweet.id in seen:
                raise DuplicateKeyError(f"duplicate tweet id {tweet.id} (first on line {seen[tweet.id]})", line=line)
            seen[tweet.id] = line
            if trading_hours and not within_trading_hours(tweet.timestamp):
                dropped += 1
                continue
            tweets.append(tweet)
    tweets.sort(key=lambda t: (t.timestamp.isoformat(), t.id))
    if dropped:
        logger.info("Dropped %d tweets outside trading hours", dropped)
    logger.info("Loaded %d tweets from %s", len(tweets), path)
    return tweets


def load_macro(path: Path) -> List[MacroSeries]:
    frame = _read_csv(path, MACRO_COLUMNS)
    grouped: Dict[Tuple[str, MacroSource], Dict[dt.date, float]] = {}
    for offset, record in enumerate(frame.to_dict("records")):
        line = offset + 2
        row = _validate_record(MacroRecord, record, path, line)
        samples = grouped.setdefault((row.keyword, row.source), {})
        if row.date in samples:
            raise DuplicateKeyError(f"duplicate date {row.date} for {row.keyword}/{row.source.value}", line=line)
        samples[row.date] = row.value
    series = [
        MacroSeries(keyword=keyword, source=source, samples=tuple(sorted(samples.items())))
        for (keyword, source), samples in sorted(grouped.items(), key=lambda item: (item[0][0], item[0][1].value))
    ]
    logger.info("Loaded %d macro series from %s", len(series), path)
    return series


def load_sector_map(path: Path) -> SectorMap:
    frame = _read_csv(path, SECTOR_COLUMNS)
    raw: Dict[str, str] = {}
    for offset, record in enumerate(frame.to_dict("records")):
        line = offset + 2
        ticker = normalize_ticker(record["ticker"])
        sector = str(record["sector"]).strip()
        if not ticker or not sector:
            raise ParseError("empty ticker or sector", path=str(path), line=line)
        if ticker in raw:
            raise DuplicateKeyError(f"ticker {ticker} mapped twice", line=line)
        raw[ticker] = sector
    values = set(raw.values())
    if all(v.isdigit() for v in values):
        return SectorMap(entries={t: int(s) for t, s in raw.items()})
    names = tuple(sorted(values))
    index = {name: i for i, name in enumerate(names)}
    return SectorMap(entries={t: index[s] for t, s in raw.items()}, names=names)


def load_dataset(directory: Path, trading_hours: bool = False) -> MarketDataset:
    directory = Path(directory)
    return MarketDataset(
        bars=load_prices(directory / PRICES_FILE),
        tweets=load_tweets(directory / TWEETS_FILE, trading_hours=trading_hours),
        macro=load_macro(directory / MACRO_FILE),
        sector_map=load_sector_map(directory / SECTORS_FILE),
    )


def save_dataset(dataset: MarketDataset, directory: Path) -> Dict[str, Path]:
    """Write the four input files; output is byte-stable for equal inputs."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "prices": directory / PRICES_FILE,
        "tweets": directory / TWEETS_FILE,
        "macro": directory / MACRO_FILE,
        "sectors": directory / SECTORS_FILE,
    }
    prices = pd.DataFrame([b.model_dump() for b in dataset.bars], columns=PRICE_COLUMNS)
    prices.to_csv(paths["prices"], index=False, lineterminator="\n")
    with paths["tweets"].open("w", encoding="utf-8", newline="\n") as handle:
        for tweet in dataset.tweets:
            handle.write(json.dumps(tweet.model_dump(mode="json", exclude_none=True), ensure_ascii=False) + "\n")
    macro_rows = [
        {"keyword": s.keyword, "source": s.source.value, "date": d.isoformat(), "value": v}
        for s in sorted(dataset.macro, key=lambda s: (s.keyword, s.source.value))
        for d, v in s.samples
    ]
    pd.DataFrame(macro_rows, columns=MACRO_COLUMNS).to_csv(paths["macro"], index=False, lineterminator="\n")
    sector_map = dataset.sector_map
    sector_rows = [
        {"ticker": t, "sector": sector_map.sector_name(c) if sector_map.names else c}
        for t, c in sorted(sector_map.entries.items())
    ]
    pd.DataFrame(sector_rows, columns=SECTOR_COLUMNS).to_csv(paths["sectors"], index=False, lineterminator="\n")
    return paths


# Labels


def label_return(return_pct: float, move_band: float = 0.005, vol_threshold: float = 0.05) -> Tuple[Movement, int]:
    """Movement and volatility labels for one daily return."""
    if -move_band < return_pct < move_band:
        movement = Movement.EXCLUDED
    elif return_pct >= move_band:
        movement = Movement.UP
    else:
        movement = Movement.DOWN
    volatility = 1 if abs(return_pct) >= vol_threshold else 0
    return movement, volatility


def _group_by_ticker(bars: Iterable[PriceBar]) -> Dict[str, List[PriceBar]]:
    grouped: Dict[str, List[PriceBar]] = {}
    for bar in bars:
        grouped.setdefault(bar.ticker, []).append(bar)
    return grouped


def compute_labels(
    bars: Sequence[PriceBar],
    move_band: float = 0.005,
    vol_threshold: float = 0.05,
) -> List[StockDayLabel]:
    """One label per consecutive pair of bars, from adjusted closes."""
    labels: List[StockDayLabel] = []
    for ticker, series in _group_by_ticker(bars).items():
        if len(series) < 2:
            raise DataValidationError(f"{ticker}: need at least 2 bars to label, got {len(series)}")
        for previous, current in zip(series, series[1:]):
            if not current.date > previous.date:
                raise DataValidationError(f"{ticker}: bars not date-ordered at {current.date}")
            if not previous.adj_close > 0:
                raise DataValidationError(f"{ticker}: nonpositive adjusted close on {previous.date}")
            return_pct = (current.adj_close - previous.adj_close) / previous.adj_close
            movement, volatility = label_return(return_pct, move_band, vol_threshold)
            labels.append(
                StockDayLabel(
                    ticker=ticker,
                    date=current.date,
                    return_pct=return_pct,
                    movement=movement,
                    volatility=volatility,
                )
            )
    return labels


# Search-trend windows


def normalize_trend_windows(
    windows: Sequence[Sequence[Tuple[dt.date, float]]],
    keyword: str = "",
) -> MacroSeries:
    """Stitch overlapping trend windows onto one 0-100 scale.

    Each window is rescaled so its values on the dates shared with the previous
    (already rescaled) window match; the stitched series is then scaled so its
    peak is 100. Dates covered by several windows keep the earliest window's value.
    """
    if not windows:
        raise ContractError("normalize_trend_windows needs at least one window")
    previous: Optional[Dict[dt.date, float]] = None
    merged: Dict[dt.date, float] = {}
    for index, window in enumerate(windows):
        current = dict(window)
        if any(v < 0 for v in current.values()):
            raise DataValidationError(f"window {index} has negative search volume")
        scale = 1.0
        if previous is not None:
            shared = sorted(set(previous) & set(current))
            if not shared:
                raise ChainingError(f"windows {index - 1} and {index} share no anchor date", pair=(index - 1, index))
            previous_anchor = sum(previous[d] for d in shared)
            current_anchor = sum(current[d] for d in shared)
            if previous_anchor == 0 or current_anchor == 0:
                raise ChainingError(
                    f"zero-valued anchor between windows {index - 1} and {index}", pair=(index - 1, index)
                )
            scale = previous_anchor / current_anchor
        rescaled = {d: v * scale for d, v in current.items()}
        for d, v in rescaled.items():
            merged.setdefault(d, v)
        previous = rescaled
    peak = max(merged.values())
    factor = 100.0 / peak if peak > 0 else 1.0
    samples = tuple((d, merged[d] * factor) for d in sorted(merged))
    return MacroSeries(keyword=keyword, source=MacroSource.TREND_INDEX, samples=samples)


def align_macro_daily(series: Sequence[MacroSeries], dates: Sequence[dt.date]) -> Tuple[List[str], np.ndarray]:
    """Forward-fill every series onto the trading calendar; one column per series."""
    calendar = pd.Index(sorted(dates))
    columns: List[np.ndarray] = []
    names: List[str] = []
    for s in sorted(series, key=lambda s: (s.keyword, s.source.value)):
        values = s.to_series()
        index = values.index.union(calendar)
        filled = values.reindex(index).ffill().bfill().reindex(calendar)
        columns.append(filled.to_numpy(dtype=float))
        names.append(s.name)
    if not columns:
        return names, np.zeros((len(calendar), 0))
    return names, np.stack(columns, axis=1)


# Features


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, raw: np.ndarray) -> "FeatureStats":
        if raw.shape[0] == 0:
            raise ContractError("cannot fit normalization statistics on zero rows")
        return cls(mean=raw.mean(axis=0), std=raw.std(axis=0))

    def apply(self, raw: np.ndarray) -> np.ndarray:
        safe = np.where(self.std > 0, self.std, 1.0)
        z = (raw - self.mean) / safe
        # constant columns carry no information
        return np.where(self.std > 0, z, 0.0)

    def to_dict(self) -> Dict[str, List[float]]:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


def raw_stock_features(
    bars: Sequence[PriceBar],
    daily_tweet_counts: Optional[Mapping[Tuple[str, dt.date], int]] = None,
) -> pd.DataFrame:
    """Unnormalized features, one row per (ticker, date) after each ticker's first bar."""
    counts = daily_tweet_counts or {}
    frame = pd.DataFrame([b.model_dump() for b in bars], columns=PRICE_COLUMNS)
    frame = frame.sort_values(["ticker", "date"]).reset_index(drop=True)
    grouped = frame.groupby("ticker", sort=False)
    out = pd.DataFrame({"ticker": frame["ticker"], "date": frame["date"]})
    for column, name in zip(["open", "high", "low", "close", "adj_close"], FEATURE_NAMES[:5]):
        out[name] = np.log(frame[column].astype(float)).groupby(frame["ticker"]).diff()
    out["log_volume"] = np.log1p(frame["volume"].astype(float))
    out["tweet_count"] = [float(counts.get((t, d), 0)) for t, d in zip(frame["ticker"], frame["date"])]
    first_rows = grouped.cumcount() == 0
    return out[~first_rows].reset_index(drop=True)


def check_calendar(bars: Sequence[PriceBar]) -> List[dt.date]:
    """Every ticker must trade on every calendar day; returns the calendar."""
    by_ticker: Dict[str, set] = {}
    for bar in bars:
        by_ticker.setdefault(bar.ticker, set()).add(bar.date)
    calendar = sorted(set().union(*by_ticker.values())) if by_ticker else []
    missing = [
        (ticker, d.isoformat())
        for ticker, days in sorted(by_ticker.items())
        for d in calendar
        if d not in days
    ]
    if missing:
        raise AlignmentError("price series are not aligned; missing (ticker, date)", missing)
    return calendar


def build_stock_features(
    bars: Sequence[PriceBar],
    labels: Optional[Sequence[StockDayLabel]] = None,
    daily_tweet_counts: Optional[Mapping[Tuple[str, dt.date], int]] = None,
    train_dates: Optional[Iterable[dt.date]] = None,
    stats: Optional[FeatureStats] = None,
) -> Tuple[List[StockFeatureVector], FeatureStats]:
    """z-scored feature vector per labelled stock-day.

    Statistics are fitted on rows whose date is in ``train_dates`` (all rows when
    omitted) unless ``stats`` is passed in.
    """
    check_calendar(bars)
    raw = raw_stock_features(bars, daily_tweet_counts)
    if labels is not None:
        keys = set(zip(raw["ticker"], raw["date"]))
        missing = sorted({(l.ticker, l.date.isoformat()) for l in labels if (l.ticker, l.date) not in keys})
        if missing:
            raise AlignmentError("labels without a matching feature row", missing)
        wanted = {(l.ticker, l.date) for l in labels}
        raw = raw[[key in wanted for key in zip(raw["ticker"], raw["date"])]].reset_index(drop=True)
    matrix = raw[FEATURE_NAMES].to_numpy(dtype=float)
    if stats is None:
        if train_dates is None:
            fit_rows = np.ones(len(raw), dtype=bool)
        else:
            train = set(train_dates)
            fit_rows = raw["date"].isin(train).to_numpy()
        stats = FeatureStats.fit(matrix[fit_rows])
    values = stats.apply(matrix)
    vectors = [
        StockFeatureVector(ticker=t, date=d, values=values[i])
        for i, (t, d) in enumerate(zip(raw["ticker"], raw["date"]))
    ]
    if not np.all(np.isfinite(values)):
        raise DataValidationError("non-finite stock features")
    return vectors, stats


# Splits


@dataclass(frozen=True)
class DateSplit:
    train: Tuple[dt.date, ...]
    val: Tuple[dt.date, ...]
    test: Tuple[dt.date, ...]

    def of(self, name: str) -> Tuple[dt.date, ...]:
        return getattr(self, name)

    def to_dict(self) -> Dict[str, Any]:
        return {
            name: {"start": dates[0].isoformat(), "end": dates[-1].isoformat(), "days": len(dates)}
            for name, dates in (("train", self.train), ("val", self.val), ("test", self.test))
        }


def chronological_split(dates: Iterable[dt.date], ratios: Sequence[float] = (0.7, 0.1, 0.2)) -> DateSplit:
    ordered = sorted(set(dates))
    total = len(ordered)
    if total < 3:
        raise ContractError(f"need at least 3 dates to split, got {total}")
    n_train = max(1, int(round(total * ratios[0])))
    n_val = max(1, int(round(total * ratios[1])))
    while n_train + n_val > total - 1:
        if n_train > n_val:
            n_train -= 1
        else:
            n_val -= 1
    return DateSplit(
        train=tuple(ordered[:n_train]),
        val=tuple(ordered[n_train:n_train + n_val]),
        test=tuple(ordered[n_train + n_val:]),
    )


# Panel


@dataclass
class MarketPanel:
    """Aligned day x stock arrays; day index t runs over labelled dates."""

    dates: List[dt.date]
    tickers: List[str]
    features: np.ndarray  # [T, n, p]
    movement: np.ndarray  # [T, n] codes: 1 up, 0 down, -1 excluded
    volatility: np.ndarray  # [T, n]
    returns: np.ndarray  # [T, n]
    macro: np.ndarray  # [T, M] z-scored
    macro_names: List[str]
    sector_of: np.ndarray  # [n]
    n_sectors: int
    split: DateSplit
    feature_stats: FeatureStats
    labels: List[StockDayLabel] = field(default_factory=list)

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def n_stocks(self) -> int:
        return len(self.tickers)

    @property
    def p(self) -> int:
        return self.features.shape[-1]

    def day_index(self) -> Dict[dt.date, int]:
        return {d: i for i, d in enumerate(self.dates)}

    def samples(self, split: str, window: int) -> Tuple[np.ndarray, np.ndarray]:
        """(day, stock) index pairs whose target day is in ``split`` and has a full window."""
        wanted = set(self.split.of(split))
        days = [t for t, d in enumerate(self.dates) if d in wanted and t >= window]
        t_idx = np.repeat(np.asarray(days, dtype=np.int64), self.n_stocks)
        s_idx = np.tile(np.arange(self.n_stocks, dtype=np.int64), len(days))
        return t_idx, s_idx


def build_market_panel(
    dataset: MarketDataset,
    move_band: float = 0.005,
    vol_threshold: float = 0.05,
    ratios: Sequence[float] = (0.7, 0.1, 0.2),
    daily_tweet_counts: Optional[Mapping[Tuple[str, dt.date], int]] = None,
) -> MarketPanel:
    check_calendar(dataset.bars)
    labels = compute_labels(dataset.bars, move_band, vol_threshold)
    dates = sorted({l.date for l in labels})
    tickers = sorted({l.ticker for l in labels})
    split = chronological_split(dates, ratios)
    vectors, stats = build_stock_features(
        dataset.bars, labels, daily_tweet_counts, train_dates=split.train
    )
    day = {d: i for i, d in enumerate(dates)}
    stock = {t: i for i, t in enumerate(tickers)}
    features = np.zeros((len(dates), len(tickers), len(FEATURE_NAMES)))
    for vector in vectors:
        features[day[vector.date], stock[vector.ticker]] = vector.values
    movement = np.full((len(dates), len(tickers)), -1, dtype=np.int64)
    volatility = np.zeros((len(dates), len(tickers)), dtype=np.int64)
    returns = np.zeros((len(dates), len(tickers)))
    for label in labels:
        i, j = day[label.date], stock[label.ticker]
        movement[i, j] = label.movement.code
        volatility[i, j] = label.volatility
        returns[i, j] = label.return_pct
    macro_names, macro = align_macro_daily(dataset.macro, dates)
    if macro.shape[1]:
        train_days = set(split.train)
        train_rows = np.asarray([d in train_days for d in dates])
        macro = FeatureStats.fit(macro[train_rows]).apply(macro)
    sector_of = np.asarray([dataset.sector_map.sector_of(t) for t in tickers], dtype=np.int64)
    return MarketPanel(
        dates=dates,
        tickers=tickers,
        features=features,
        movement=movement,
        volatility=volatility,
        returns=returns,
        macro=macro,
        macro_names=macro_names,
        sector_of=sector_of,
        n_sectors=dataset.sector_map.m,
        split=split,
        feature_stats=stats,
        labels=labels,
    )
