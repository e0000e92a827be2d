"""
ECON Text Preprocessing

Features:
- Ticker-preserving tokenizer ($AAPL and bare AAPL stay whole)
- Company masking with sector labels for the pretext task
- Frequency-ordered vocabulary with reserved [pad]/[mask]/[unk] ids
- Fixed-length encoding that never truncates the mask away
"""

import logging
import re
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import AbstractSet, Dict, Iterable, List, Optional, Sequence, Tuple

from .errors import DataValidationError, EncodingError, MappingError, MaskingError, ParseError
from .ingestion import SectorMap, Tweet, normalize_ticker

logger = logging.getLogger(__name__)

PAD = "[pad]"
MASK = "[mask]"
UNK = "[unk]"
URL = "[url]"
RESERVED = (PAD, MASK, UNK)

TOKEN_PATTERN = re.compile(
    r"""
    (?P<url>https?://\S+|www\.\S+)
    | (?P<cashtag>\$[A-Za-z]{1,6}(?:\.[A-Za-z])?(?![A-Za-z]))
    | (?P<word>\w+(?:'\w+)?)
    | (?P<punct>\S)
    """,
    re.VERBOSE,
)


def tokenize(text: str, known_tickers: AbstractSet[str] = frozenset()) -> List[str]:
    """Split tweet text into lowercased tokens; tickers come out as "$TICKER"."""
    tokens: List[str] = []
    for match in TOKEN_PATTERN.finditer(text):
        kind = match.lastgroup
        value = match.group()
        if kind == "url":
            tokens.append(URL)
        elif kind == "cashtag":
            tokens.append("$" + value[1:].upper())
        elif kind == "word" and value in known_tickers:
            tokens.append("$" + value)
        else:
            tokens.append(value.lower())
    return tokens


def ticker_token(ticker: str) -> str:
    return "$" + normalize_ticker(ticker)


@dataclass(frozen=True)
class TokenSequence:
    tokens: Tuple[str, ...]
    mask_position: Optional[int] = None
    original_length: int = 0
    sector_label: Optional[int] = None
    ids: Optional[Tuple[int, ...]] = None
    ticker: Optional[str] = None
    tweet_id: Optional[str] = None

    def __post_init__(self) -> None:
        if self.mask_position is not None and not 0 <= self.mask_position < max(self.original_length, 1):
            raise EncodingError(
                f"mask position {self.mask_position} outside sequence of length {self.original_length}"
            )


def mask_company(tokens: Sequence[str], target_ticker: str, sector_map: SectorMap) -> TokenSequence:
    """Replace every mention of the target ticker with [mask]."""
    target = ticker_token(target_ticker)
    positions = [i for i, token in enumerate(tokens) if token == target or token == MASK]
    if not positions:
        raise MaskingError(f"{target} does not occur in the tweet")
    sector = sector_map.sector_of(target)
    masked = tuple(MASK if token == target else token for token in tokens)
    return TokenSequence(
        tokens=masked,
        mask_position=positions[0],
        original_length=len(masked),
        sector_label=sector,
        ticker=target[1:],
    )


def mask_tweets(
    pairs: Iterable[Tuple[str, Tweet]],
    sector_map: SectorMap,
    known_tickers: AbstractSet[str] = frozenset(),
) -> List[TokenSequence]:
    """Masked sequences for (target ticker, tweet) pairs.

    Tweets whose text never names the target, or whose target has no sector,
    are skipped.
    """
    sequences: List[TokenSequence] = []
    skipped = 0
    for ticker, tweet in pairs:
        try:
            sequence = mask_company(tokenize(tweet.text, known_tickers), ticker, sector_map)
        except (MaskingError, MappingError):
            skipped += 1
            continue
        sequences.append(replace(sequence, tweet_id=tweet.id))
    if skipped:
        logger.debug("Skipped %d tweets that could not be masked", skipped)
    return sequences


class Vocabulary:
    """Token <-> id table; reserved tokens take ids 0, 1, 2."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise DataValidationError(f"vocabulary must start with {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise DataValidationError("vocabulary tokens must be unique")
        self.tokens: List[str] = list(tokens)
        self.index: Dict[str, int] = {token: i for i, token in enumerate(self.tokens)}

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]], min_freq: int = 2) -> "Vocabulary":
        counts = Counter(token for sequence in sequences for token in sequence if token not in RESERVED)
        kept = sorted(
            (token for token, count in counts.items() if count >= min_freq),
            key=lambda token: (-counts[token], token),
        )
        return cls(list(RESERVED) + kept)

    @property
    def pad_id(self) -> int:
        return self.index[PAD]

    @property
    def mask_id(self) -> int:
        return self.index[MASK]

    @property
    def unk_id(self) -> int:
        return self.index[UNK]

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: object) -> bool:
        return token in self.index

    def encode(self, tokens: Iterable[str]) -> List[int]:
        return [self.index.get(token, self.unk_id) for token in tokens]

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self.tokens[i] for i in ids if i != self.pad_id]

    def save(self, path: Path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as handle:
            for i, token in enumerate(self.tokens):
                handle.write(f"{token}\t{i}\n")

    @classmethod
    def load(cls, path: Path) -> "Vocabulary":
        path = Path(path)
        tokens: List[str] = []
        with path.open(encoding="utf-8") as handle:
            for line, raw in enumerate(handle, start=1):
                parts = raw.rstrip("\n").split("\t")
                if len(parts) != 2 or not parts[1].isdigit():
                    raise ParseError("expected token<TAB>id", path=str(path), line=line)
                if int(parts[1]) != len(tokens):
                    raise ParseError(f"ids must be consecutive, got {parts[1]}", path=str(path), line=line)
                tokens.append(parts[0])
        return cls(tokens)


def encode_and_pad(sequences: Sequence[TokenSequence], vocab: Vocabulary, max_len: int) -> List[TokenSequence]:
    """Encode to ids and right-pad to ``max_len``.

    Long sequences keep their head; when the mask would fall off the end they
    keep their tail instead.
    """
    if max_len < 1:
        raise EncodingError(f"max_len must be at least 1, got {max_len}")
    encoded: List[TokenSequence] = []
    for sequence in sequences:
        tokens = list(sequence.tokens)
        start = 0
        if len(tokens) > max_len and sequence.mask_position is not None and sequence.mask_position >= max_len:
            start = len(tokens) - max_len
            if sequence.mask_position < start:
                raise EncodingError(
                    f"mask at {sequence.mask_position} fits neither the first nor the last {max_len} tokens"
                )
        window = tokens[start:start + max_len]
        mask_position = None if sequence.mask_position is None else sequence.mask_position - start
        ids = vocab.encode(window) + [vocab.pad_id] * (max_len - len(window))
        encoded.append(
            replace(
                sequence,
                tokens=tuple(window),
                mask_position=mask_position,
                original_length=len(window),
                ids=tuple(ids),
            )
        )
    return encoded
