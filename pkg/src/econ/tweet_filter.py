"""
ECON Tweet Filter

Features:
- Pluggable sentiment scorers (finance lexicon or imported labels)
- Daily per-stock sentiment by plurality vote
- Chi-square and Cramer's V between daily sentiment and price movement
- Top-k tweet selection by impressions with k calibrated on training days
- Per-stock daily sentiment shares for the sentiment-only predictor
"""

import datetime as dt
import logging
import math
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import CalibrationError, ContractError, DataValidationError, DomainError, ParseError
from .ingestion import Movement, Sentiment, StockDayLabel, Tweet
from .text import tokenize

logger = logging.getLogger(__name__)

SENTIMENT_ORDER = (Sentiment.POSITIVE, Sentiment.NEUTRAL, Sentiment.NEGATIVE)
MOVEMENT_ORDER = (Movement.UP, Movement.DOWN)

NEGATORS = frozenset(
    {"not", "no", "never", "nor", "without", "don't", "dont", "isn't", "isnt",
     "won't", "wont", "can't", "cant", "didn't", "didnt", "doesn't", "doesnt"}
)
NEGATION_WINDOW = 3

DEFAULT_LEXICON: Dict[str, int] = {
    **{word: 1 for word in (
        "soar", "soars", "soaring", "rally", "rallies", "beat", "beats", "bullish", "surge",
        "surges", "surging", "gain", "gains", "buy", "moon", "strong", "growth", "record",
        "upgrade", "upgraded", "outperform", "profit", "profits", "breakout", "green", "long",
    )},
    **{word: -1 for word in (
        "plunge", "plunges", "plunging", "miss", "missed", "misses", "bearish", "drop", "drops",
        "sell", "selloff", "loss", "losses", "weak", "crash", "downgrade", "downgraded",
        "underperform", "red", "short", "fall", "falls", "dump", "lawsuit",
    )},
}

StockDayKey = Tuple[str, dt.date]


# Scorers


class SentimentScorer(ABC):
    """Maps one tweet to a sentiment class."""

    name: str = "base"

    @abstractmethod
    def score(self, tweet: Tweet) -> Sentiment:
        pass


class LexiconScorer(SentimentScorer):
    """Word-count polarity; a negator up to three tokens back flips a hit."""

    name = "lexicon"

    def __init__(self, lexicon: Optional[Mapping[str, int]] = None):
        self.lexicon = dict(DEFAULT_LEXICON if lexicon is None else lexicon)

    @classmethod
    def from_file(cls, path: Path) -> "LexiconScorer":
        """Read ``word:+`` / ``word:-`` lines; ``#`` starts a comment."""
        path = Path(path)
        lexicon: Dict[str, int] = {}
        for line, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            entry = raw.split("#", 1)[0].strip()
            if not entry:
                continue
            word, _, polarity = entry.rpartition(":")
            if not word or polarity not in ("+", "-"):
                raise ParseError("expected word:+ or word:-", path=str(path), line=line)
            lexicon[word.lower()] = 1 if polarity == "+" else -1
        return cls(lexicon)

    def polarity(self, tokens: Sequence[str]) -> int:
        total = 0
        for i, token in enumerate(tokens):
            value = self.lexicon.get(token, 0)
            if not value:
                continue
            if any(t in NEGATORS for t in tokens[max(0, i - NEGATION_WINDOW):i]):
                value = -value
            total += value
        return total

    def score(self, tweet: Tweet) -> Sentiment:
        total = self.polarity(tokenize(tweet.text))
        if total > 0:
            return Sentiment.POSITIVE
        if total < 0:
            return Sentiment.NEGATIVE
        return Sentiment.NEUTRAL


class ImportedScorer(SentimentScorer):
    """Uses labels shipped with the tweets."""

    name = "import"

    def score(self, tweet: Tweet) -> Sentiment:
        if tweet.sentiment is None:
            raise DataValidationError(f"tweet {tweet.id} has no imported sentiment label")
        return tweet.sentiment


SCORERS = {"lexicon": LexiconScorer, "import": ImportedScorer}


def get_scorer(name: str, lexicon: Optional[Path] = None) -> SentimentScorer:
    if name == "lexicon" and lexicon is not None:
        return LexiconScorer.from_file(lexicon)
    try:
        return SCORERS[name]()
    except KeyError:
        raise ContractError(f"unknown scorer {name!r}; choose from {sorted(SCORERS)}") from None


def score_sentiment(tweet: Tweet, scorer: SentimentScorer) -> Sentiment:
    if tweet.sentiment is not None:
        return tweet.sentiment
    return scorer.score(tweet)


# Daily aggregation


@dataclass(frozen=True)
class DailySentiment:
    ticker: str
    date: dt.date
    counts: Dict[Sentiment, int]
    aggregate: Sentiment

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ticker": self.ticker,
            "date": self.date.isoformat(),
            "counts": {s.value: self.counts.get(s, 0) for s in SENTIMENT_ORDER},
            "aggregate": self.aggregate.value,
        }

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @property
    def shares(self) -> Tuple[float, float, float]:
        """Positive, neutral and negative fractions of the day's tweets."""
        total = self.total
        return tuple(self.counts.get(s, 0) / total if total else 0.0 for s in SENTIMENT_ORDER)


def plurality(counts: Mapping[Sentiment, int]) -> Sentiment:
    """Most frequent class; any tie for the lead resolves to neutral."""
    best = max(counts.get(s, 0) for s in SENTIMENT_ORDER)
    leaders = [s for s in SENTIMENT_ORDER if counts.get(s, 0) == best]
    return leaders[0] if len(leaders) == 1 else Sentiment.NEUTRAL


def aggregate_daily(
    tweets: Sequence[Tweet],
    scorer: SentimentScorer,
    ticker: Optional[str] = None,
    sentiments: Optional[Mapping[str, Sentiment]] = None,
) -> DailySentiment:
    """Plurality sentiment of one stock-day.

    ``sentiments`` may carry precomputed scores keyed by tweet id.
    """
    if not tweets:
        raise ContractError("aggregate_daily needs at least one tweet")
    dates = {t.session_date for t in tweets}
    if len(dates) != 1:
        raise ContractError(f"tweets span several days: {sorted(dates)}")
    if ticker is None:
        shared = set(tweets[0].tickers).intersection(*(t.tickers for t in tweets))
        if not shared:
            raise ContractError("tweets share no ticker")
        ticker = sorted(shared)[0]
    elif any(ticker not in t.tickers for t in tweets):
        raise ContractError(f"not every tweet mentions {ticker}")
    counts = Counter(
        sentiments[t.id] if sentiments is not None and t.id in sentiments else score_sentiment(t, scorer)
        for t in tweets
    )
    full = {s: counts.get(s, 0) for s in SENTIMENT_ORDER}
    return DailySentiment(ticker=ticker, date=dates.pop(), counts=full, aggregate=plurality(full))


# Association


@dataclass
class ContingencyTable:
    """Observed counts; rows are sentiment classes, columns movement classes."""

    observed: np.ndarray
    row_labels: Tuple[str, ...] = tuple(s.value for s in SENTIMENT_ORDER)
    col_labels: Tuple[str, ...] = tuple(m.value for m in MOVEMENT_ORDER)

    def __post_init__(self) -> None:
        observed = np.asarray(self.observed)
        if observed.ndim != 2:
            raise ContractError(f"contingency table must be 2-D, got shape {observed.shape}")
        if not np.issubdtype(observed.dtype, np.integer):
            if not np.all(np.equal(np.mod(observed, 1), 0)):
                raise ContractError("contingency counts must be integers")
        observed = observed.astype(np.int64)
        if np.any(observed < 0):
            raise ContractError("contingency counts must be nonnegative")
        if observed.shape != (len(self.row_labels), len(self.col_labels)):
            self.row_labels = tuple(str(i) for i in range(observed.shape[0]))
            self.col_labels = tuple(str(j) for j in range(observed.shape[1]))
        self.observed = observed

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[Sentiment, Movement]]) -> "ContingencyTable":
        observed = np.zeros((len(SENTIMENT_ORDER), len(MOVEMENT_ORDER)), dtype=np.int64)
        rows = {s: i for i, s in enumerate(SENTIMENT_ORDER)}
        cols = {m: j for j, m in enumerate(MOVEMENT_ORDER)}
        for sentiment, movement in pairs:
            if movement in cols:
                observed[rows[sentiment], cols[movement]] += 1
        return cls(observed)

    @property
    def row_totals(self) -> np.ndarray:
        return self.observed.sum(axis=1)

    @property
    def col_totals(self) -> np.ndarray:
        return self.observed.sum(axis=0)

    @property
    def grand_total(self) -> int:
        return int(self.observed.sum())

    def pruned(self) -> "ContingencyTable":
        rows = self.row_totals > 0
        cols = self.col_totals > 0
        return ContingencyTable(
            self.observed[rows][:, cols],
            tuple(l for l, keep in zip(self.row_labels, rows) if keep),
            tuple(l for l, keep in zip(self.col_labels, cols) if keep),
        )

    def merge(self, other: "ContingencyTable") -> "ContingencyTable":
        if self.observed.shape != other.observed.shape:
            raise ContractError("cannot merge tables of different shapes")
        return ContingencyTable(self.observed + other.observed, self.row_labels, self.col_labels)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rows": list(self.row_labels),
            "columns": list(self.col_labels),
            "observed": self.observed.tolist(),
        }


def expected_frequencies(table: ContingencyTable) -> np.ndarray:
    total = table.grand_total
    if total <= 0:
        raise DomainError("expected frequencies need a positive grand total")
    return np.outer(table.row_totals, table.col_totals) / total


def chi_square(table: ContingencyTable) -> Optional[float]:
    """Pearson chi-square after pruning empty rows/columns; None when degenerate."""
    pruned = table.pruned()
    if min(pruned.observed.shape) < 2:
        return None
    expected = expected_frequencies(pruned)
    return float(np.sum((pruned.observed - expected) ** 2 / expected))


def cramers_v(table: ContingencyTable) -> Optional[float]:
    statistic = chi_square(table)
    if statistic is None:
        return None
    pruned = table.pruned()
    dof = min(pruned.observed.shape) - 1
    value = math.sqrt(statistic / (pruned.grand_total * dof))
    return min(max(value, 0.0), 1.0)


@dataclass
class AssociationReport:
    table: ContingencyTable
    expected: Optional[np.ndarray]
    chi_square: Optional[float]
    cramers_v: Optional[float]
    k_curve: List[Tuple[int, Optional[float]]] = field(default_factory=list)
    chosen_k: Optional[Union[int, str]] = None
    k_all: Optional[int] = None

    @property
    def degenerate(self) -> bool:
        return self.cramers_v is None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "chosen_k": self.chosen_k,
            "k_all": self.k_all,
            "chi_square": self.chi_square,
            "cramers_v": self.cramers_v,
            "degenerate": self.degenerate,
            "k_curve": [{"k": k, "v": v} for k, v in self.k_curve],
            "table": self.table.to_dict(),
            "expected": None if self.expected is None else self.expected.tolist(),
        }


def association(table: ContingencyTable) -> AssociationReport:
    statistic = chi_square(table)
    expected = expected_frequencies(table.pruned()) if statistic is not None else None
    return AssociationReport(
        table=table,
        expected=expected,
        chi_square=statistic,
        cramers_v=cramers_v(table),
    )


# Selection and calibration


def rank_key(tweet: Tweet) -> Tuple[int, int, str]:
    return (-tweet.impressions, -tweet.likes, tweet.id)


def distinct_tweets(tweets: Iterable[Tweet]) -> List[Tweet]:
    """Best-ranked copy of each text, in rank order."""
    seen = set()
    kept: List[Tweet] = []
    for tweet in sorted(tweets, key=rank_key):
        if tweet.text in seen:
            continue
        seen.add(tweet.text)
        kept.append(tweet)
    return kept


def select_top_k(tweets: Iterable[Tweet], k: Optional[int]) -> List[Tweet]:
    """The k best-ranked distinct tweets; ``None`` keeps all of them."""
    ranked = distinct_tweets(tweets)
    if k is None:
        return ranked
    if k < 1:
        raise ContractError(f"k must be positive, got {k}")
    return ranked[:k]


def group_by_stock_day(tweets: Iterable[Tweet], tickers: Optional[Iterable[str]] = None) -> Dict[StockDayKey, List[Tweet]]:
    """Tweets per (ticker, session date); a tweet naming two tickers lands in both."""
    wanted = set(tickers) if tickers is not None else None
    grouped: Dict[StockDayKey, List[Tweet]] = {}
    for tweet in tweets:
        day = tweet.session_date
        for ticker in tweet.tickers:
            if wanted is None or ticker in wanted:
                grouped.setdefault((ticker, day), []).append(tweet)
    return grouped


@dataclass
class StockDayTweets:
    ticker: str
    date: dt.date
    tweets: List[Tweet]
    movement: Movement


def pair_with_movements(
    grouped: Mapping[StockDayKey, List[Tweet]],
    labels: Sequence[StockDayLabel],
    dates: Optional[Iterable[dt.date]] = None,
    lag: int = 0,
) -> List[StockDayTweets]:
    """Match each labelled day with the tweets posted ``lag`` trading days earlier.

    Only labels dated within ``dates`` are used; days with no tweets are skipped.
    """
    wanted = set(dates) if dates is not None else None
    calendars: Dict[str, List[dt.date]] = {}
    for label in labels:
        calendars.setdefault(label.ticker, []).append(label.date)
    positions = {
        ticker: {d: i for i, d in enumerate(sorted(days))} for ticker, days in calendars.items()
    }
    ordered = {ticker: sorted(days) for ticker, days in calendars.items()}
    days: List[StockDayTweets] = []
    for label in labels:
        if wanted is not None and label.date not in wanted:
            continue
        index = positions[label.ticker][label.date] - lag
        if index < 0:
            continue
        tweet_day = ordered[label.ticker][index]
        tweets = grouped.get((label.ticker, tweet_day))
        if tweets:
            days.append(StockDayTweets(label.ticker, tweet_day, list(tweets), label.movement))
    return days


def _sentiment_cache(days: Sequence[StockDayTweets], scorer: SentimentScorer) -> Dict[str, Sentiment]:
    cache: Dict[str, Sentiment] = {}
    for day in days:
        for tweet in day.tweets:
            if tweet.id not in cache:
                cache[tweet.id] = score_sentiment(tweet, scorer)
    return cache


def table_for_k(
    days: Sequence[StockDayTweets],
    k: Optional[int],
    scorer: SentimentScorer,
    sentiments: Optional[Mapping[str, Sentiment]] = None,
) -> ContingencyTable:
    """Sentiment x movement counts over stock-days using each day's top-k tweets."""
    pairs = []
    for day in days:
        if day.movement == Movement.EXCLUDED:
            continue
        selected = select_top_k(day.tweets, k)
        if not selected:
            continue
        daily = aggregate_daily(selected, scorer, ticker=day.ticker, sentiments=sentiments)
        pairs.append((daily.aggregate, day.movement))
    return ContingencyTable.from_pairs(pairs)


def plateau_k(curve: Sequence[Tuple[int, Optional[float]]], slack: float) -> int:
    """Smallest k whose V is within ``slack`` of the best V on the curve."""
    values = [(k, v if v is not None else 0.0) for k, v in curve]
    best = max(v for _, v in values)
    return min(k for k, v in values if v >= (1 - slack) * best)


def calibrate_k(
    days: Sequence[StockDayTweets],
    candidates: Sequence[int] = tuple(range(1, 11)),
    scorer: Optional[SentimentScorer] = None,
    slack: float = 0.05,
) -> AssociationReport:
    """Score every candidate k and pick the plateau point.

    The curve also carries ``k_all`` (the largest number of distinct tweets on
    any day), where top-k keeps every tweet.
    """
    scorer = scorer or LexiconScorer()
    movements = {d.movement for d in days if d.movement != Movement.EXCLUDED}
    if len(movements) < 2:
        raise CalibrationError(f"calibration needs both Up and Down days, found {sorted(m.value for m in movements)}")
    if not candidates:
        raise ContractError("calibrate_k needs at least one candidate k")
    sentiments = _sentiment_cache(days, scorer)
    k_all = max(len(distinct_tweets(d.tweets)) for d in days)
    ks = sorted(set(candidates) | {k_all})
    curve: List[Tuple[int, Optional[float]]] = []
    tables: Dict[int, ContingencyTable] = {}
    for k in ks:
        table = table_for_k(days, k, scorer, sentiments)
        value = cramers_v(table)
        if value is None:
            logger.debug("Degenerate contingency table at k=%d: %s", k, table.observed.tolist())
        curve.append((k, value))
        tables[k] = table
    if all(v is None for _, v in curve):
        raise CalibrationError("every candidate k produced a degenerate contingency table")
    chosen = plateau_k(curve, slack)
    report = association(tables[chosen])
    report.k_curve = curve
    report.chosen_k = chosen
    report.k_all = k_all
    logger.info(
        "Calibrated k=%d (V=%.4f, max V=%.4f over %d stock-days)",
        chosen, report.cramers_v or 0.0, max(v or 0.0 for _, v in curve), len(days),
    )
    return report


# Sentiment features


def daily_sentiments(
    grouped: Mapping[StockDayKey, List[Tweet]],
    scorer: SentimentScorer,
    k: Optional[int] = None,
) -> Dict[StockDayKey, DailySentiment]:
    """Sentiment counts of each stock-day's top-k distinct tweets; ``None`` scores them all."""
    daily: Dict[StockDayKey, DailySentiment] = {}
    cache: Dict[str, Sentiment] = {}
    for (ticker, day), tweets in sorted(grouped.items()):
        selected = select_top_k(tweets, k)
        if not selected:
            continue
        for tweet in selected:
            if tweet.id not in cache:
                cache[tweet.id] = score_sentiment(tweet, scorer)
        daily[(ticker, day)] = aggregate_daily(selected, scorer, ticker=ticker, sentiments=cache)
    return daily


def sentiment_panel(
    shares: Mapping[StockDayKey, Sequence[float]],
    tickers: Sequence[str],
    dates: Sequence[dt.date],
) -> np.ndarray:
    """Class shares on the [day, stock, class] grid; stock-days without tweets stay zero."""
    column = {ticker: i for i, ticker in enumerate(tickers)}
    row = {day: i for i, day in enumerate(dates)}
    grid = np.zeros((len(dates), len(tickers), len(SENTIMENT_ORDER)))
    for (ticker, day), values in shares.items():
        if ticker in column and day in row:
            grid[row[day], column[ticker]] = values
    return grid



class TweetFilter:
    """Calibrates k on training days, then keeps the top-k tweets of every stock-day."""

    def __init__(
        self,
        scorer: Optional[SentimentScorer] = None,
        k: Union[int, str] = "auto",
        candidates: Sequence[int] = tuple(range(1, 11)),
        slack: float = 0.05,
        lag: int = 0,
    ):
        self.scorer = scorer or LexiconScorer()
        self.k = k
        self.candidates = list(candidates)
        self.slack = slack
        self.lag = lag
        self.report: Optional[AssociationReport] = None

    @property
    def cap(self) -> Optional[int]:
        """Per-day tweet cap in force; None keeps every distinct tweet."""
        if self.k == "all":
            return None
        if self.k == "auto":
            if self.report is None or not isinstance(self.report.chosen_k, int):
                raise ContractError("TweetFilter.calibrate must run before apply when k is 'auto'")
            return self.report.chosen_k
        return int(self.k)

    def calibrate(
        self,
        grouped: Mapping[StockDayKey, List[Tweet]],
        labels: Sequence[StockDayLabel],
        train_dates: Iterable[dt.date],
    ) -> AssociationReport:
        days = pair_with_movements(grouped, labels, train_dates, self.lag)
        if self.k == "auto":
            self.report = calibrate_k(days, self.candidates, self.scorer, self.slack)
            return self.report
        try:
            report = calibrate_k(days, self.candidates, self.scorer, self.slack)
        except CalibrationError as exc:
            logger.warning("Association curve unavailable: %s", exc)
            report = AssociationReport(table=ContingencyTable(np.zeros((3, 2), dtype=np.int64)),
                                       expected=None, chi_square=None, cramers_v=None)
        fixed = None if self.k == "all" else int(self.k)
        chosen = association(table_for_k(days, fixed, self.scorer)) if days else report
        chosen.k_curve = report.k_curve
        chosen.k_all = report.k_all
        chosen.chosen_k = self.k if self.k == "all" else fixed
        self.report = chosen
        return chosen

    def apply(self, grouped: Mapping[StockDayKey, List[Tweet]]) -> Dict[StockDayKey, List[Tweet]]:
        cap = self.cap
        return {key: select_top_k(tweets, cap) for key, tweets in sorted(grouped.items())}

    @staticmethod
    def daily_counts(grouped: Mapping[StockDayKey, List[Tweet]]) -> Dict[StockDayKey, int]:
        """Distinct tweets per stock-day, the tweet-count stock feature."""
        return {key: len(distinct_tweets(tweets)) for key, tweets in grouped.items()}
