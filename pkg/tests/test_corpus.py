import io
import re

import numpy as np
import pytest

from tempalign.corpus import (
    CorpusSplit,
    MonthYear,
    QueryRecord,
    corpus_stats,
    l1_offset,
    parse_corpus,
    parse_month_year,
    serialize_corpus,
    synth_l1_corpus,
)
from tempalign.errors import DataError


def _lines(*rows: str) -> io.BytesIO:
    return io.BytesIO(("\n".join(rows) + "\n").encode("utf-8"))


L1_LINE_A = '{"id": "a", "language": "en", "level": "L1", "question": "What is the time 1 years and 2 months after Nov, 1185", "answers": ["Jan, 1187"]}'
L1_LINE_B = '{"id": "b", "language": "en", "level": "L1", "question": "What is the time 2 years and 0 months before Mar, 1200", "answers": ["Mar, 1198"]}'


def test_parse_two_wellformed_lines():
    split = parse_corpus(_lines(L1_LINE_A, L1_LINE_B), "en", "L1", "train")
    assert len(split) == 2
    assert split.records[0].id == "a"
    assert split.records[1].answers == ("Mar, 1198",)


def test_parse_missing_field_names_line():
    bad = '{"id": "x", "language": "en", "level": "L1", "question": "q"}'
    with pytest.raises(DataError, match=r"line 2.*answers"):
        parse_corpus(_lines(L1_LINE_A, bad), "en", "L1", "train")


def test_parse_duplicate_id():
    with pytest.raises(DataError, match=r"line 2.*duplicate id"):
        parse_corpus(_lines(L1_LINE_A, L1_LINE_A), "en", "L1", "train")


def test_parse_malformed_json_names_line():
    with pytest.raises(DataError, match=r"line 2: malformed JSON"):
        parse_corpus(_lines(L1_LINE_A, "{not json"), "en", "L1", "train")


def test_parse_language_level_mismatch():
    with pytest.raises(DataError, match="language"):
        parse_corpus(_lines(L1_LINE_A), "fr", "L1", "train")
    with pytest.raises(DataError, match="level"):
        parse_corpus(_lines(L1_LINE_A), "en", "L2", "train")


def test_parse_serialize_roundtrip():
    split = parse_corpus(_lines(L1_LINE_A, L1_LINE_B), "en", "L1", "train")
    data = serialize_corpus(split)
    again = parse_corpus(io.BytesIO(data), "en", "L1", "train")
    assert again == split
    assert serialize_corpus(again) == data


def test_corpus_split_rejects_duplicate_and_mixed():
    rec = QueryRecord(id="a", language="en", level="L1", question="q",
                      answers=("Jan, 1",), split="s")
    with pytest.raises(DataError):
        CorpusSplit(records=(rec, rec), language="en", level="L1", split="s")
    other = QueryRecord(id="b", language="fr", level="L1", question="q",
                        answers=("x",), split="s")
    with pytest.raises(DataError):
        CorpusSplit(records=(rec, other), language="en", level="L1", split="s")


def test_stats_counts_paper_scale_l1_pool():
    # The L1 training pool size reported for the source benchmark.
    split = synth_l1_corpus(400_000, (1014, 2022), seed=3)
    assert corpus_stats(split).count == 400_000


def test_stats_empty_split():
    split = CorpusSplit(records=(), language="en", level="L1", split="empty")
    stats = corpus_stats(split)
    assert stats.count == 0
    assert stats.level_counts == {}
    assert stats.min_year is None and stats.max_year is None


def test_stats_year_range_from_fixture():
    rows = [
        '{"id": "1", "language": "en", "level": "L1", "question": "q1", "answers": ["Mar, 1192"]}',
        '{"id": "2", "language": "en", "level": "L1", "question": "q2", "answers": ["Nov, 1190"]}',
        '{"id": "3", "language": "en", "level": "L1", "question": "q3", "answers": ["May, 1232"]}',
    ]
    stats = corpus_stats(parse_corpus(_lines(*rows), "en", "L1", "t"))
    assert stats.count == 3
    assert stats.level_counts == {"L1": 3}
    assert (stats.min_year, stats.max_year) == (1190, 1232)


# --- month parsing -----------------------------------------------------------


def test_parse_month_year_forms():
    assert parse_month_year("Nov, 1185") == MonthYear(1185, 11)
    assert parse_month_year("march 1192") == MonthYear(1192, 3)
    assert parse_month_year("mars 1192", "fr") == MonthYear(1192, 3)
    assert parse_month_year("august 1240", "ro") == MonthYear(1240, 8)
    assert parse_month_year("märz, 1500", "de") == MonthYear(1500, 3)


def test_parse_month_year_unknown_month_fails():
    with pytest.raises(DataError, match="unknown month"):
        parse_month_year("smarch 1192")
    with pytest.raises(DataError):
        parse_month_year("not a date at all")


def test_month_year_ordering_and_bounds():
    assert MonthYear(1192, 3) > MonthYear(1185, 11)
    assert MonthYear(1185, 12) > MonthYear(1185, 11)
    with pytest.raises(DataError):
        MonthYear(0, 5)
    with pytest.raises(DataError):
        MonthYear(10, 13)


# --- l1_offset ---------------------------------------------------------------


def _offset_by_counting(anchor: MonthYear, years: int, months: int, direction: str) -> MonthYear:
    """Brute-force oracle: step one month at a time."""
    year, month = anchor.year, anchor.month
    for _ in range(12 * years + months):
        if direction == "after":
            month += 1
            if month == 13:
                month, year = 1, year + 1
        else:
            month -= 1
            if month == 0:
                month, year = 12, year - 1
    return MonthYear(year, month)


def test_l1_offset_worked_example():
    assert l1_offset(MonthYear(1185, 11), 6, 4, "after") == MonthYear(1192, 3)


def test_l1_offset_identity():
    assert l1_offset(MonthYear(1500, 7), 0, 0, "after") == MonthYear(1500, 7)


def test_l1_offset_before_example():
    expected = _offset_by_counting(MonthYear(1240, 8), 8, 3, "before")
    assert expected == MonthYear(1232, 5)
    assert l1_offset(MonthYear(1240, 8), 8, 3, "before") == expected


def test_l1_offset_matches_counting_oracle():
    rng = np.random.default_rng(11)
    for _ in range(300):
        anchor = MonthYear(int(rng.integers(50, 3000)), int(rng.integers(1, 13)))
        years, months = int(rng.integers(0, 40)), int(rng.integers(0, 12))
        direction = "after" if rng.integers(0, 2) else "before"
        assert l1_offset(anchor, years, months, direction) == _offset_by_counting(
            anchor, years, months, direction
        )


def test_l1_offset_round_trip_property():
    rng = np.random.default_rng(12)
    for _ in range(500):
        anchor = MonthYear(int(rng.integers(100, 3000)), int(rng.integers(1, 13)))
        years, months = int(rng.integers(0, 50)), int(rng.integers(0, 12))
        out = l1_offset(anchor, years, months, "after")
        assert l1_offset(out, years, months, "before") == anchor


def test_l1_offset_monotone():
    anchor = MonthYear(1400, 6)
    seen = [l1_offset(anchor, 0, m, "after") for m in range(1, 30)]
    assert all(b > a for a, b in zip(seen, seen[1:]))


def test_l1_offset_before_year_one():
    with pytest.raises(DataError, match="year 1"):
        l1_offset(MonthYear(2, 1), 5, 0, "before")


# --- synthetic corpus --------------------------------------------------------


def test_synth_empty():
    assert len(synth_l1_corpus(0, (1000, 2000), seed=0)) == 0


def test_synth_deterministic():
    a = serialize_corpus(synth_l1_corpus(100, (1000, 2000), seed=7))
    b = serialize_corpus(synth_l1_corpus(100, (1000, 2000), seed=7))
    assert a == b
    c = serialize_corpus(synth_l1_corpus(100, (1000, 2000), seed=8))
    assert a != c


_EN_QUESTION_RE = re.compile(
    r"^What is the time (\d+) years and (\d+) months (after|before) (.+)$"
)


def test_synth_answers_verified_by_offset_oracle():
    for rec in synth_l1_corpus(200, (900, 2100), seed=5):
        m = _EN_QUESTION_RE.match(rec.question)
        assert m, rec.question
        years, months, direction, anchor_text = m.groups()
        anchor = parse_month_year(anchor_text)
        expected = l1_offset(anchor, int(years), int(months), direction)
        assert parse_month_year(rec.answers[0]) == expected


def test_synth_other_language_round_trips():
    split = synth_l1_corpus(20, (1200, 1800), seed=3, language="ro")
    assert split.language == "ro"
    for rec in split:
        parse_month_year(rec.answers[0], "ro")


def test_synth_bad_range():
    with pytest.raises(DataError, match="range"):
        synth_l1_corpus(5, (2000, 1000), seed=0)
