"""Headline ingestion, market-hours alignment, tokenisation and vocabulary."""

from __future__ import annotations

import datetime as dt
import enum
import hashlib
import json
import string
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MARKET_OPEN = dt.time(9, 30)
MARKET_CLOSE = dt.time(16, 0)
PAD = 0


class CorpusError(ValueError):
    pass


class TimeCategory(str, enum.Enum):
    BEFORE_MARKET = "before_market"
    DURING_MARKET = "during_market"
    AFTER_MARKET = "after_market"
    HOLIDAY = "holiday"
    WEEKEND = "weekend"


@dataclass(frozen=True)
class HeadlineRecord:
    stock_id: str
    timestamp_utc: dt.datetime
    text: str
    id: str = ""

    def __post_init__(self):
        if not self.text.strip():
            raise CorpusError("empty headline text")
        if self.timestamp_utc.tzinfo is None:
            raise CorpusError("timestamp must carry a UTC offset")
        if not self.id:
            object.__setattr__(self, "id", headline_id(self.stock_id, self.timestamp_utc, self.text))


def headline_id(stock_id: str, ts: dt.datetime, text: str) -> str:
    key = f"{stock_id}|{ts.isoformat()}|{text}".encode()
    return hashlib.sha1(key).hexdigest()[:16]


@dataclass
class AlignedDay:
    stock_id: str
    trading_date: dt.date
    headlines: list[list[str]] = field(default_factory=list)
    ids: list[str] = field(default_factory=list)

    @property
    def has_news(self) -> bool:
        return bool(self.headlines)


# --------------------------------------------------------------------------
# time handling


def _nth_sunday(year: int, month: int, nth: int) -> dt.date:
    d = dt.date(year, month, 1)
    first = d + dt.timedelta(days=(6 - d.weekday()) % 7)
    return first + dt.timedelta(weeks=nth - 1)


def _last_sunday(year: int, month: int) -> dt.date:
    nxt = dt.date(year + (month == 12), month % 12 + 1, 1)
    d = nxt - dt.timedelta(days=1)
    return d - dt.timedelta(days=(d.weekday() - 6) % 7)


def dst_bounds_utc(year: int) -> tuple[dt.datetime, dt.datetime]:
    """UTC instants when New York daylight time starts and ends in ``year``.

    Rule table: 2007 onwards second Sunday of March to first Sunday of
    November; 1987-2006 first Sunday of April to last Sunday of October.
    Both switches happen at 02:00 local time.
    """
    if year >= 2007:
        start, end = _nth_sunday(year, 3, 2), _nth_sunday(year, 11, 1)
    elif year >= 1987:
        start, end = _nth_sunday(year, 4, 1), _last_sunday(year, 10)
    else:
        raise CorpusError(f"no DST rule for {year}")
    utc = dt.timezone.utc
    # 02:00 EST = 07:00 UTC, 02:00 EDT = 06:00 UTC
    return (dt.datetime.combine(start, dt.time(7), utc), dt.datetime.combine(end, dt.time(6), utc))


def to_eastern(ts: dt.datetime) -> dt.datetime:
    """Convert an offset-aware instant to New York wall time (EST/EDT offset attached)."""
    if ts.tzinfo is None:
        raise CorpusError("timestamp must carry a UTC offset")
    u = ts.astimezone(dt.timezone.utc)
    start, end = dst_bounds_utc(u.year)
    hours = -4 if start <= u < end else -5
    return u.astimezone(dt.timezone(dt.timedelta(hours=hours)))


def from_eastern(local: dt.datetime) -> dt.datetime:
    """UTC instant for a naive New York wall time.

    Wall times repeated in the autumn resolve to the daylight-time reading;
    wall times skipped in the spring are read as standard time.
    """
    if local.tzinfo is not None:
        raise CorpusError("expected a naive wall time")
    utc = dt.timezone.utc
    start, end = dst_bounds_utc(local.year)
    edt = (local + dt.timedelta(hours=4)).replace(tzinfo=utc)
    if start <= edt < end:
        return edt
    return (local + dt.timedelta(hours=5)).replace(tzinfo=utc)


def parse_timestamp(s: str) -> dt.datetime:
    ts = dt.datetime.fromisoformat(s.strip().replace("Z", "+00:00"))
    if ts.tzinfo is None:
        raise CorpusError(f"timestamp without offset: {s!r}")
    return ts


class TradingCalendar:
    """Weekdays minus an explicit holiday list."""

    def __init__(self, holidays: Iterable[dt.date] = ()):
        self.holidays = frozenset(holidays)

    def is_weekend(self, d: dt.date) -> bool:
        return d.weekday() >= 5

    def is_holiday(self, d: dt.date) -> bool:
        return d in self.holidays

    def is_trading_day(self, d: dt.date) -> bool:
        return not self.is_weekend(d) and not self.is_holiday(d)

    def next_trading_day(self, d: dt.date) -> dt.date:
        """First trading day strictly after ``d``."""
        d += dt.timedelta(days=1)
        while not self.is_trading_day(d):
            d += dt.timedelta(days=1)
        return d

    def trading_days(self, start: dt.date, end: dt.date) -> list[dt.date]:
        out = []
        d = start
        while d <= end:
            if self.is_trading_day(d):
                out.append(d)
            d += dt.timedelta(days=1)
        return out

    @classmethod
    def from_file(cls, path: str | Path) -> "TradingCalendar":
        days = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                days.append(dt.date.fromisoformat(line))
            except ValueError:
                raise CorpusError(f"{path}:{lineno}: bad date {line!r}") from None
        return cls(days)


def categorize(ts_eastern: dt.datetime, calendar: TradingCalendar) -> TimeCategory:
    """Market-hours bucket of a New York wall-clock time.

    Weekend and holiday dates win; otherwise 09:30:00 and 16:00:00 both
    count as during market.
    """
    d = ts_eastern.date()
    if calendar.is_weekend(d):
        return TimeCategory.WEEKEND
    if calendar.is_holiday(d):
        return TimeCategory.HOLIDAY
    t = ts_eastern.time().replace(tzinfo=None)
    if t < MARKET_OPEN:
        return TimeCategory.BEFORE_MARKET
    if t <= MARKET_CLOSE:
        return TimeCategory.DURING_MARKET
    return TimeCategory.AFTER_MARKET


def effective_date(ts_utc: dt.datetime, calendar: TradingCalendar) -> tuple[dt.date, TimeCategory]:
    """Trading date whose session a headline can influence, with its category."""
    local = to_eastern(ts_utc)
    cat = categorize(local, calendar)
    d = local.date()
    if cat in (TimeCategory.BEFORE_MARKET, TimeCategory.DURING_MARKET):
        return d, cat
    return calendar.next_trading_day(d), cat


def align(records: Iterable[HeadlineRecord], calendar: TradingCalendar,
          trading_dates: dict[str, Sequence[dt.date]] | None = None) -> dict[str, list[AlignedDay]]:
    """Group headlines per stock onto the trading day they can influence.

    Before- and during-market news stay on their date; after-market, weekend
    and holiday news move to the next trading day. Within a day headlines
    are in time order. With ``trading_dates`` every listed date gets an
    AlignedDay (possibly empty) and headlines landing on unlisted dates are
    dropped; otherwise only dates with news are returned.
    """
    buckets: dict[str, dict[dt.date, list[tuple[dt.datetime, HeadlineRecord]]]] = defaultdict(lambda: defaultdict(list))
    for rec in records:
        d, _ = effective_date(rec.timestamp_utc, calendar)
        buckets[rec.stock_id][d].append((rec.timestamp_utc.astimezone(dt.timezone.utc), rec))
    stocks = set(buckets) | set(trading_dates or {})
    out: dict[str, list[AlignedDay]] = {}
    for sid in sorted(stocks):
        by_day = buckets.get(sid, {})
        dates = list(trading_dates[sid]) if trading_dates and sid in trading_dates else sorted(by_day)
        days = []
        for d in dates:
            items = sorted(by_day.get(d, []), key=lambda x: x[0])
            days.append(AlignedDay(sid, d, [tokenize(r.text) for _, r in items], [r.id for _, r in items]))
        out[sid] = days
    return out


def category_histogram(records: Iterable[HeadlineRecord], calendar: TradingCalendar) -> dict[str, int]:
    counts = Counter(categorize(to_eastern(r.timestamp_utc), calendar).value for r in records)
    return {c.value: counts.get(c.value, 0) for c in TimeCategory}


# --------------------------------------------------------------------------
# text


_STRIP = string.punctuation + "‘’“”"


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation, drop empties."""
    out = []
    for tok in text.lower().split():
        tok = tok.strip(_STRIP)
        if tok:
            out.append(tok)
    return out


def _contains(seq: Sequence[str], sub: Sequence[str]) -> bool:
    k = len(sub)
    if k == 0:
        return False
    return any(list(seq[i:i + k]) == list(sub) for i in range(len(seq) - k + 1))


def match_stock(headline_text: str, forms: dict[str, list[str]]) -> set[str]:
    """Stocks with a surface form appearing as a contiguous token run in the headline."""
    toks = tokenize(headline_text)
    return {sid for sid, fs in forms.items() if any(_contains(toks, tokenize(f)) for f in fs)}


# --------------------------------------------------------------------------
# vocabulary


@dataclass
class Vocabulary:
    index: dict[str, int]
    matrix: np.ndarray

    def __post_init__(self):
        if self.matrix.shape[0] != len(self.index) + 1:
            raise CorpusError("embedding matrix must have |V| + 1 rows")

    def __len__(self) -> int:
        return len(self.index)

    @property
    def d_w(self) -> int:
        return self.matrix.shape[1]

    def tokens(self) -> list[str]:
        inv = [""] * (len(self.index) + 1)
        for tok, i in self.index.items():
            inv[i] = tok
        return inv

    def lookup(self, tokens: Sequence[str]) -> list[int]:
        """Indices of the in-vocabulary tokens; the rest are skipped."""
        return [self.index[t] for t in tokens if t in self.index]


def read_embeddings(path: str | Path, keep: set[str] | None = None) -> tuple[dict[str, np.ndarray], int]:
    """Parse a GloVe-style text file. Returns (token -> vector, d_w)."""
    vectors: dict[str, np.ndarray] = {}
    d_w = None
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            if len(parts) < 2:
                raise CorpusError(f"{path}:{lineno}: token without vector")
            if d_w is None:
                d_w = len(parts) - 1
            elif len(parts) - 1 != d_w:
                raise CorpusError(f"{path}:{lineno}: expected {d_w} values, got {len(parts) - 1}")
            tok = parts[0]
            if keep is not None and tok not in keep:
                continue
            try:
                vectors[tok] = np.array([float(x) for x in parts[1:]])
            except ValueError:
                raise CorpusError(f"{path}:{lineno}: non-numeric embedding value") from None
    if d_w is None:
        raise CorpusError(f"{path}: no embeddings")
    return vectors, d_w


def build_vocab(corpus: Iterable[AlignedDay], embeddings_file: str | Path) -> Vocabulary:
    """Corpus tokens that have an embedding, sorted; row 0 is the zero pad vector."""
    seen: set[str] = set()
    for day in corpus:
        for h in day.headlines:
            seen.update(h)
    vectors, d_w = read_embeddings(embeddings_file, keep=seen)
    return vocab_from_vectors(vectors, d_w)


def vocab_from_vectors(vectors: dict[str, np.ndarray], d_w: int) -> Vocabulary:
    toks = sorted(vectors)
    matrix = np.zeros((len(toks) + 1, d_w))
    index = {}
    for i, t in enumerate(toks, start=1):
        index[t] = i
        matrix[i] = vectors[t]
    return Vocabulary(index, matrix)


def encode_day(day: AlignedDay, vocab: Vocabulary, l_n: int, l_s: int) -> np.ndarray:
    """(l_n, l_s) token indices for one day, zero padded.

    Headlines with no in-vocabulary token are dropped before the earliest
    ``l_n`` are kept; each is cut to its first ``l_s`` known tokens.
    """
    if l_n < 1 or l_s < 1:
        raise ValueError("l_n and l_s must be >= 1")
    out = np.zeros((l_n, l_s), dtype=np.int64)
    row = 0
    for h in day.headlines:
        idx = vocab.lookup(h)[:l_s]
        if not idx:
            continue
        out[row, : len(idx)] = idx
        row += 1
        if row == l_n:
            break
    return out


def kept_headline_ids(day: AlignedDay, vocab: Vocabulary, l_n: int) -> list[str]:
    """Ids of the headlines :func:`encode_day` keeps, in row order."""
    out = []
    for h, hid in zip(day.headlines, day.ids):
        if vocab.lookup(h):
            out.append(hid)
            if len(out) == l_n:
                break
    return out


# --------------------------------------------------------------------------
# files


def parse_headline(obj: dict) -> HeadlineRecord:
    for key in ("stock", "utc", "text"):
        if key not in obj:
            raise CorpusError(f"missing field {key!r}")
    if not isinstance(obj["text"], str) or not obj["text"].strip():
        raise CorpusError("empty text")
    try:
        ts = parse_timestamp(str(obj["utc"]))
    except ValueError as exc:
        raise CorpusError(f"unparsable timestamp {obj['utc']!r}: {exc}") from None
    return HeadlineRecord(str(obj["stock"]), ts, obj["text"], str(obj.get("id", "")))


def read_headlines_jsonl(path: str | Path) -> tuple[list[HeadlineRecord], list[dict]]:
    """Parsed records plus one rejection entry {line, reason} per bad line."""
    records, rejected = [], []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(parse_headline(json.loads(line)))
            except (json.JSONDecodeError, CorpusError) as exc:
                rejected.append({"line": lineno, "reason": str(exc)})
    return records, rejected


def write_headlines_jsonl(records: Iterable[HeadlineRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({"id": r.id, "stock": r.stock_id, "utc": r.timestamp_utc.isoformat(),
                                 "text": r.text}) + "\n")


def read_surface_forms(path: str | Path) -> dict[str, list[str]]:
    forms = json.loads(Path(path).read_text())
    for sid, fs in forms.items():
        if not isinstance(fs, list) or not fs:
            raise CorpusError(f"{path}: stock {sid!r} needs a non-empty list of surface forms")
    return forms


def read_sidecar(path: str | Path) -> dict[str, np.ndarray]:
    """Precomputed sentence vectors, JSONL {"id": str, "vec": [floats]}."""
    out = {}
    d = None
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            vec = np.asarray(obj["vec"], dtype=np.float64)
            if d is None:
                d = vec.size
            elif vec.size != d:
                raise CorpusError(f"{path}:{lineno}: vector length {vec.size}, expected {d}")
            out[str(obj["id"])] = vec
    return out

