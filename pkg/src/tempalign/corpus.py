"""Temporal-QA corpora: parsing, validation, summaries, and month arithmetic.

Corpus files are line-delimited JSON, UTF-8, LF line endings, one record per
line: {"id": str, "language": str, "level": "L1"|"L2"|"L3", "question": str,
"answers": [str, ...]}.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional

import numpy as np

from .errors import DataError

TASK_LEVELS = ("L1", "L2", "L3")

# Month-name lookup per language: token -> month number. L1 answers are
# month-year expressions; unknown month names fail parsing rather than guess.
_EN_MONTHS = {
    "january": 1, "february": 2, "march": 3, "april": 4, "may": 5,
    "june": 6, "july": 7, "august": 8, "september": 9, "october": 10,
    "november": 11, "december": 12,
    "jan": 1, "feb": 2, "mar": 3, "apr": 4, "jun": 6, "jul": 7, "aug": 8,
    "sep": 9, "sept": 9, "oct": 10, "nov": 11, "dec": 12,
}
_FR_MONTHS = {
    "janvier": 1, "février": 2, "fevrier": 2, "mars": 3, "avril": 4,
    "mai": 5, "juin": 6, "juillet": 7, "août": 8, "aout": 8,
    "septembre": 9, "octobre": 10, "novembre": 11, "décembre": 12,
    "decembre": 12,
    "janv": 1, "févr": 2, "fevr": 2, "avr": 4, "juil": 7, "sept": 9,
    "oct": 10, "nov": 11, "déc": 12, "dec": 12,
}
_DE_MONTHS = {
    "januar": 1, "februar": 2, "märz": 3, "maerz": 3, "marz": 3,
    "april": 4, "mai": 5, "juni": 6, "juli": 7, "august": 8,
    "september": 9, "oktober": 10, "november": 11, "dezember": 12,
    "jan": 1, "feb": 2, "mär": 3, "mrz": 3, "apr": 4, "jun": 6, "jul": 7,
    "aug": 8, "sep": 9, "sept": 9, "okt": 10, "nov": 11, "dez": 12,
}
_RO_MONTHS = {
    "ianuarie": 1, "februarie": 2, "martie": 3, "aprilie": 4, "mai": 5,
    "iunie": 6, "iulie": 7, "august": 8, "septembrie": 9, "octombrie": 10,
    "noiembrie": 11, "decembrie": 12,
    "ian": 1, "feb": 2, "mar": 3, "apr": 4, "iun": 6, "iul": 7, "aug": 8,
    "sep": 9, "sept": 9, "oct": 10, "noi": 11, "dec": 12,
}
MONTH_TABLES = {"en": _EN_MONTHS, "fr": _FR_MONTHS, "de": _DE_MONTHS, "ro": _RO_MONTHS}

# Canonical month tokens (English, lowercase), indexed by month number - 1.
CANONICAL_MONTHS = (
    "january", "february", "march", "april", "may", "june",
    "july", "august", "september", "october", "november", "december",
)
_MONTH_ABBREV = (
    "Jan", "Feb", "Mar", "Apr", "May", "Jun",
    "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
)
_FULL_NAMES = {
    "en": CANONICAL_MONTHS,
    "fr": ("janvier", "février", "mars", "avril", "mai", "juin", "juillet",
           "août", "septembre", "octobre", "novembre", "décembre"),
    "de": ("januar", "februar", "märz", "april", "mai", "juni", "juli",
           "august", "september", "oktober", "november", "dezember"),
    "ro": ("ianuarie", "februarie", "martie", "aprilie", "mai", "iunie",
           "iulie", "august", "septembrie", "octombrie", "noiembrie",
           "decembrie"),
}

_MONTH_YEAR_RE = re.compile(r"^\s*([^\W\d_]+)\.?\s*,?\s+(\d{1,6})\s*$", re.UNICODE)


def month_table(language: str) -> dict[str, int]:
    """Month-name table for a primary language subtag, e.g. "fr" or "fr-FR"."""
    primary = language.split("-")[0].casefold()
    try:
        return MONTH_TABLES[primary]
    except KeyError:
        raise DataError(f"no month-name table for language {language!r}") from None


@dataclass(frozen=True, order=True)
class MonthYear:
    """A calendar month; ordering is chronological (year, then month)."""

    year: int
    month: int

    def __post_init__(self) -> None:
        if self.year < 1:
            raise DataError(f"year must be >= 1, got {self.year}")
        if not 1 <= self.month <= 12:
            raise DataError(f"month must be in [1, 12], got {self.month}")

    def format(self, language: str = "en") -> str:
        """Render as answer text: "Mar, 1192" for English, "mars 1192" otherwise."""
        primary = language.split("-")[0].casefold()
        if primary == "en":
            return f"{_MONTH_ABBREV[self.month - 1]}, {self.year}"
        if primary not in _FULL_NAMES:
            raise DataError(f"no month-name table for language {language!r}")
        return f"{_FULL_NAMES[primary][self.month - 1]} {self.year}"


def parse_month_year(text: str, language: str = "en") -> MonthYear:
    """Parse a month-year expression such as "Nov, 1185" or "august 1240"."""
    m = _MONTH_YEAR_RE.match(text)
    if m is None:
        raise DataError(f"not a month-year expression: {text!r}")
    token, year = m.group(1).casefold(), int(m.group(2))
    table = month_table(language)
    if token not in table:
        raise DataError(f"unknown month name {token!r} for language {language!r}")
    return MonthYear(year=year, month=table[token])


def l1_offset(anchor: MonthYear, years: int, months: int, direction: str) -> MonthYear:
    """Exact calendar month arithmetic: anchor +/- (12*years + months)."""
    if direction not in ("after", "before"):
        raise DataError(f"direction must be 'after' or 'before', got {direction!r}")
    if years < 0 or months < 0:
        raise DataError("offset years/months must be non-negative")
    delta = 12 * years + months
    total = anchor.year * 12 + (anchor.month - 1)
    total = total + delta if direction == "after" else total - delta
    year, month0 = divmod(total, 12)
    if year < 1:
        raise DataError(f"offset result falls before year 1 ({anchor} {direction} {years}y{months}m)")
    return MonthYear(year=year, month=month0 + 1)


@dataclass(frozen=True)
class QueryRecord:
    """One temporal-QA item."""

    id: str
    language: str
    level: str
    question: str
    answers: tuple[str, ...]
    split: str

    def __post_init__(self) -> None:
        if not self.id:
            raise DataError("record id must be non-empty")
        if self.level not in TASK_LEVELS:
            raise DataError(f"level must be one of {TASK_LEVELS}, got {self.level!r}")
        if not self.question:
            raise DataError(f"record {self.id}: question must be non-empty")
        if not self.answers:
            raise DataError(f"record {self.id}: answers must be non-empty")


@dataclass(frozen=True)
class CorpusSplit:
    """A homogeneous pool of records (one language, one level, one split)."""

    records: tuple[QueryRecord, ...]
    language: str
    level: str
    split: str

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for rec in self.records:
            if rec.language != self.language:
                raise DataError(
                    f"record {rec.id}: language {rec.language!r} != split language {self.language!r}"
                )
            if rec.level != self.level:
                raise DataError(
                    f"record {rec.id}: level {rec.level!r} != split level {self.level!r}"
                )
            if rec.split != self.split:
                raise DataError(
                    f"record {rec.id}: split {rec.split!r} != split name {self.split!r}"
                )
            if rec.id in seen:
                raise DataError(f"duplicate record id {rec.id!r} in split {self.split!r}")
            seen.add(rec.id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self, record_id: str) -> QueryRecord:
        for rec in self.records:
            if rec.id == record_id:
                return rec
        raise DataError(f"record id {record_id!r} not in split {self.split!r}")


def parse_corpus(
    stream: IO[bytes] | IO[str] | Iterable[bytes] | Iterable[str],
    language: str,
    level: str,
    split: str,
) -> CorpusSplit:
    """Parse line-delimited JSON into a validated split.

    Any malformed line rejects the whole input; errors name the 1-based line.
    """
    records: list[QueryRecord] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {lineno}: malformed JSON ({exc.msg})") from exc
        if not isinstance(obj, dict):
            raise DataError(f"line {lineno}: expected a JSON object")
        for key in ("id", "language", "level", "question", "answers"):
            if key not in obj:
                raise DataError(f"line {lineno}: missing field {key!r}")
        if obj["language"] != language:
            raise DataError(
                f"line {lineno}: language {obj['language']!r} does not match expected {language!r}"
            )
        if obj["level"] != level:
            raise DataError(
                f"line {lineno}: level {obj['level']!r} does not match expected {level!r}"
            )
        answers = obj["answers"]
        if not isinstance(answers, list) or not all(isinstance(a, str) for a in answers):
            raise DataError(f"line {lineno}: answers must be a list of strings")
        if obj["id"] in seen:
            raise DataError(f"line {lineno}: duplicate id {obj['id']!r}")
        seen.add(obj["id"])
        try:
            records.append(
                QueryRecord(
                    id=obj["id"],
                    language=obj["language"],
                    level=obj["level"],
                    question=obj["question"],
                    answers=tuple(answers),
                    split=split,
                )
            )
        except DataError as exc:
            raise DataError(f"line {lineno}: {exc}") from exc
    return CorpusSplit(records=tuple(records), language=language, level=level, split=split)


def serialize_corpus(split: CorpusSplit) -> bytes:
    """Inverse of parse_corpus: one JSON object per line, UTF-8, LF endings."""
    lines = []
    for rec in split.records:
        lines.append(
            json.dumps(
                {
                    "id": rec.id,
                    "language": rec.language,
                    "level": rec.level,
                    "question": rec.question,
                    "answers": list(rec.answers),
                },
                ensure_ascii=False,
                sort_keys=True,
            )
        )
    return ("\n".join(lines) + "\n" if lines else "").encode("utf-8")


@dataclass(frozen=True)
class CorpusStats:
    count: int
    level_counts: dict[str, int] = field(default_factory=dict)
    min_year: Optional[int] = None
    max_year: Optional[int] = None


def corpus_stats(split: CorpusSplit) -> CorpusStats:
    """Counts plus, for L1 splits, the year range of parseable answers."""
    level_counts: dict[str, int] = {}
    for rec in split.records:
        level_counts[rec.level] = level_counts.get(rec.level, 0) + 1
    min_year = max_year = None
    if split.level == "L1":
        for rec in split.records:
            for answer in rec.answers:
                try:
                    my = parse_month_year(answer, split.language)
                except DataError:
                    continue
                if min_year is None or my.year < min_year:
                    min_year = my.year
                if max_year is None or my.year > max_year:
                    max_year = my.year
    return CorpusStats(
        count=len(split.records),
        level_counts=level_counts,
        min_year=min_year,
        max_year=max_year,
    )


_L1_QUESTION = {
    "en": "What is the time {years} years and {months} months {direction} {anchor}",
    "fr": "Quelle est la date {years} ans et {months} mois {direction} {anchor}",
    "de": "Welche Zeit ist {years} Jahre und {months} Monate {direction} {anchor}",
    "ro": "Care este timpul cu {years} ani și {months} luni {direction} {anchor}",
}
_DIRECTION_WORDS = {
    "en": {"after": "after", "before": "before"},
    "fr": {"after": "après", "before": "avant"},
    "de": {"after": "nach", "before": "vor"},
    "ro": {"after": "după", "before": "înainte de"},
}


def synth_l1_corpus(
    count: int,
    year_range: tuple[int, int],
    seed: int,
    language: str = "en",
    split: str = "synth",
) -> CorpusSplit:
    """Deterministic synthetic L1 split; every answer is l1_offset of its question.

    Uses NumPy's PCG64 generator seeded with `seed`, so equal seeds yield
    byte-identical corpora after serialization.
    """
    if count < 0:
        raise DataError(f"count must be >= 0, got {count}")
    lo, hi = year_range
    if lo > hi or lo < 1:
        raise DataError(f"empty or invalid year range {year_range}")
    primary = language.split("-")[0].casefold()
    template = _L1_QUESTION[primary]
    rng = np.random.default_rng(seed)
    records = []
    for i in range(count):
        anchor = MonthYear(
            year=int(rng.integers(lo, hi + 1)), month=int(rng.integers(1, 13))
        )
        years = int(rng.integers(0, 10))
        months = int(rng.integers(0, 12))
        if years == 0 and months == 0:
            months = 1
        direction = "after" if rng.integers(0, 2) == 1 else "before"
        if direction == "before" and anchor.year - years - 1 < 1:
            direction = "after"
        answer = l1_offset(anchor, years, months, direction)
        question = template.format(
            years=years,
            months=months,
            direction=_DIRECTION_WORDS[primary][direction],
            anchor=anchor.format(language),
        )
        records.append(
            QueryRecord(
                id=f"{split}-l1-{i:06d}",
                language=language,
                level="L1",
                question=question,
                answers=(answer.format(language),),
                split=split,
            )
        )
    return CorpusSplit(records=tuple(records), language=language, level="L1", split=split)
