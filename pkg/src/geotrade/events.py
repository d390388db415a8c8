"""Dyadic event records and geopolitical alignment scores.

An event is a dated interaction between two countries carrying a
conflict/cooperation intensity score on the [-10, 10] scale.  Annual
averages of that score (rescaled to [-1, 1]) feed a depreciating
recursion that produces a smooth "dynamic" alignment score per country
pair: years with many events move the score a lot, quiet years barely
move it, and the stock of past events decays at a fixed annual rate.
"""

from __future__ import annotations

import enum
import io
import json
import re
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ParseError, ValidationError
from .tables import fmt_float, write_rows

DEFAULT_DECAY = 0.3

_COUNTRY_RE = re.compile(r"^[A-Z]{3}$")

EVENT_COLUMNS = (
    "origin",
    "partner",
    "year",
    "cameo_root",
    "cameo_quad",
    "goldstein",
    "economic",
    "description",
)

SCORE_COLUMNS = (
    "dyad_a",
    "dyad_b",
    "year",
    "raw_score",
    "dynamic_score",
    "event_count",
    "effective_count",
)


class Quad(enum.Enum):
    """Coarse four-way event taxonomy derived from the root code."""

    VERBAL_COOPERATION = "VerbalCooperation"
    MATERIAL_COOPERATION = "MaterialCooperation"
    VERBAL_CONFLICT = "VerbalConflict"
    MATERIAL_CONFLICT = "MaterialConflict"


class Economic(enum.Enum):
    """Economic-content tag attached to each event."""

    NOT_ECONOMIC = "NotEconomic"
    TRADE = "Trade"
    SANCTIONS = "Sanctions"
    ASSET_SEIZURE = "AssetSeizure"
    OTHER_ECONOMIC = "OtherEconomic"


def quad_for_root(root: int) -> Quad:
    """Map a root code (1-20) to its quad."""
    if 1 <= root <= 5:
        return Quad.VERBAL_COOPERATION
    if 6 <= root <= 9:
        return Quad.MATERIAL_COOPERATION
    if 10 <= root <= 14:
        return Quad.VERBAL_CONFLICT
    if 15 <= root <= 20:
        return Quad.MATERIAL_CONFLICT
    raise ValidationError(f"cameo_root must be in 1..20, got {root}")


class DuplicateEventWarning(UserWarning):
    """Same dyad, year, and description seen more than once."""


@dataclass(frozen=True)
class EventRecord:
    """One validated dyadic event."""

    origin: str
    partner: str
    year: int
    cameo_root: int
    cameo_quad: Quad
    goldstein: float
    economic: Economic
    description: str = ""

    def __post_init__(self):
        for name in ("origin", "partner"):
            code = getattr(self, name)
            if not _COUNTRY_RE.match(code):
                raise ValidationError(f"unknown country code {code!r} in field {name!r}")
        if self.origin == self.partner:
            raise ValidationError(f"self-dyad {self.origin!r} is not a valid event")
        if quad_for_root(self.cameo_root) is not self.cameo_quad:
            raise ValidationError(
                f"cameo_quad {self.cameo_quad.value} inconsistent with root {self.cameo_root}"
            )
        if not -10.0 <= self.goldstein <= 10.0:
            raise ValidationError(f"goldstein score {self.goldstein} outside [-10, 10]")

    @property
    def dyad(self) -> tuple[str, str]:
        """Unordered country pair, alphabetical."""
        return dyad_key(self.origin, self.partner)


def dyad_key(a: str, b: str) -> tuple[str, str]:
    if a == b:
        raise ValidationError(f"self-dyad {a!r}")
    return (a, b) if a < b else (b, a)


# ---------------------------------------------------------------------------
# parsing

def parse_events(source, fmt: str = "csv") -> list[EventRecord]:
    """Parse an event stream into validated records.

    Parameters
    ----------
    source : path, str content, bytes, or file-like
        Raw event data.  A ``str`` holding a path to an existing file is
        read from disk; any other ``str`` is treated as CSV/JSON content.
    fmt : {"csv", "json"}
        ``csv`` expects the documented column order with a header row;
        ``json`` expects a list of objects with the same field names.

    Raises
    ------
    ParseError
        If any row fails validation; carries (line, field, message) for
        every rejected row.  Duplicate events (same dyad, year, and
        description) only trigger a :class:`DuplicateEventWarning`.
    """
    text = _as_text(source)
    if fmt == "csv":
        raw_rows = _rows_from_csv(text)
    elif fmt == "json":
        raw_rows = _rows_from_json(text)
    else:
        raise ValidationError(f"unknown event format {fmt!r} (expected 'csv' or 'json')")

    records: list[EventRecord] = []
    errors: list[tuple[int, str, str]] = []
    seen: set[tuple[tuple[str, str], int, str]] = set()
    for line_no, row in raw_rows:
        try:
            rec = _record_from_mapping(row)
        except _FieldError as exc:
            errors.append((line_no, exc.field, exc.message))
            continue
        key = (rec.dyad, rec.year, rec.description)
        if key in seen:
            warnings.warn(
                f"duplicate event at line {line_no}: {rec.dyad} {rec.year} {rec.description!r}",
                DuplicateEventWarning,
                stacklevel=2,
            )
        seen.add(key)
        records.append(rec)
    if errors:
        raise ParseError(errors)
    return records


class _FieldError(Exception):
    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(message)


def _as_text(source) -> str:
    if isinstance(source, Path):
        return source.read_text()
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        if "\n" not in source and "," not in source and Path(source).exists():
            return Path(source).read_text()
        return source
    return source.read()


def _rows_from_csv(text: str) -> list[tuple[int, dict]]:
    import csv as _csv

    rows: list[tuple[int, dict]] = []
    reader = _csv.reader(io.StringIO(text))
    for i, parts in enumerate(reader, start=1):
        if not parts or (len(parts) == 1 and not parts[0].strip()):
            continue
        if i == 1 and parts[0].strip() == "origin":
            continue  # header row
        if len(parts) not in (7, 8):
            rows.append((i, {"__malformed__": f"expected 7 or 8 fields, got {len(parts)}"}))
            continue
        row = dict(zip(EVENT_COLUMNS, (p.strip() for p in parts)))
        row.setdefault("description", "")
        rows.append((i, row))
    return rows


def _rows_from_json(text: str) -> list[tuple[int, dict]]:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError([(exc.lineno, "document", f"invalid JSON: {exc.msg}")]) from exc
    if not isinstance(payload, list):
        raise ParseError([(1, "document", "expected a JSON array of event objects")])
    return [(i, obj) for i, obj in enumerate(payload, start=1)]


def _record_from_mapping(row: Mapping) -> EventRecord:
    if "__malformed__" in row:
        raise _FieldError("row", str(row["__malformed__"]))

    def need(name):
        if name not in row or row[name] in (None, ""):
            raise _FieldError(name, "missing value")
        return row[name]

    def as_int(name):
        try:
            return int(need(name))
        except (TypeError, ValueError):
            raise _FieldError(name, f"not an integer: {row.get(name)!r}") from None

    def as_float(name):
        try:
            return float(need(name))
        except (TypeError, ValueError):
            raise _FieldError(name, f"not a number: {row.get(name)!r}") from None

    def as_enum(name, enum_cls):
        value = need(name)
        if isinstance(value, enum_cls):
            return value
        try:
            return enum_cls(value)
        except ValueError:
            valid = ", ".join(m.value for m in enum_cls)
            raise _FieldError(name, f"{value!r} is not one of: {valid}") from None

    try:
        return EventRecord(
            origin=str(need("origin")),
            partner=str(need("partner")),
            year=as_int("year"),
            cameo_root=as_int("cameo_root"),
            cameo_quad=as_enum("cameo_quad", Quad),
            goldstein=as_float("goldstein"),
            economic=as_enum("economic", Economic),
            description=str(row.get("description") or ""),
        )
    except ValidationError as exc:
        field_name = "origin"
        msg = str(exc)
        if "partner" in msg:
            field_name = "partner"
        elif "self-dyad" in msg:
            field_name = "partner"
        elif "goldstein" in msg:
            field_name = "goldstein"
        elif "quad" in msg or "root" in msg:
            field_name = "cameo_quad"
        raise _FieldError(field_name, msg) from None


# ---------------------------------------------------------------------------
# filtering

_NAMED_FILTERS: dict[str, Callable[[EventRecord], bool]] = {
    "non_economic": lambda e: e.economic is Economic.NOT_ECONOMIC,
    "economic_only": lambda e: e.economic is not Economic.NOT_ECONOMIC,
    "material_conflict_nonecon": lambda e: (
        e.cameo_quad is Quad.MATERIAL_CONFLICT and e.economic is Economic.NOT_ECONOMIC
    ),
}


def filter_events(events: Iterable[EventRecord], selector) -> list[EventRecord]:
    """Select events by named rule, field mapping, or predicate.

    Named rules: ``non_economic``, ``economic_only``,
    ``material_conflict_nonecon``.  A mapping filters on exact field
    values (scalars or containers), e.g. ``{"cameo_root": range(15, 21)}``.
    """
    if callable(selector):
        pred = selector
    elif isinstance(selector, str):
        try:
            pred = _NAMED_FILTERS[selector]
        except KeyError:
            raise ValidationError(
                f"unknown filter {selector!r}; expected one of {sorted(_NAMED_FILTERS)}"
            ) from None
    elif isinstance(selector, Mapping):
        valid = set(EVENT_COLUMNS)
        bad = set(selector) - valid
        if bad:
            raise ValidationError(f"unknown event fields in filter: {sorted(bad)}")

        def pred(e, _spec=dict(selector)):
            for name, wanted in _spec.items():
                have = getattr(e, name)
                if isinstance(wanted, (set, frozenset, list, tuple, range)):
                    if have not in wanted:
                        return False
                elif have != wanted:
                    return False
            return True

    else:
        raise ValidationError(f"unsupported filter selector: {selector!r}")
    return [e for e in events if pred(e)]


# ---------------------------------------------------------------------------
# scoring

def annual_average(events: Sequence[EventRecord]) -> float | None:
    """Mean intensity over events, rescaled to [-1, 1].

    Returns ``None`` when there are no events; callers decide what a
    missing year means (the dynamic recursion carries the score forward).
    """
    if not events:
        return None
    return sum(e.goldstein for e in events) / (10.0 * len(events))


@dataclass(frozen=True)
class ScoreSeries:
    """Alignment-score path for one unordered country pair.

    Covers a contiguous year range starting at the first observed event.
    ``raw`` holds the annual average (``None`` in years without events),
    ``dynamic`` the depreciated recursion, ``event_count`` the number of
    events per year, and ``effective_count`` the depreciated event stock.
    """

    dyad: tuple[str, str]
    start_year: int
    raw: tuple
    dynamic: tuple
    event_count: tuple
    effective_count: tuple
    decay: float | None = DEFAULT_DECAY

    def __post_init__(self):
        n = len(self.dynamic)
        if not (len(self.raw) == len(self.event_count) == len(self.effective_count) == n > 0):
            raise ValidationError("score series fields must have equal, nonzero length")
        for s in self.dynamic:
            if not -1.0 <= s <= 1.0:
                raise ValidationError(f"dynamic score {s} outside [-1, 1]")
        for n_new, n_eff in zip(self.event_count, self.effective_count):
            if n_new < 0 or n_eff < n_new - 1e-12:
                raise ValidationError("effective count must be >= event count >= 0")

    @property
    def years(self) -> range:
        return range(self.start_year, self.start_year + len(self.dynamic))

    def _index(self, year: int) -> int:
        i = year - self.start_year
        if not 0 <= i < len(self.dynamic):
            raise KeyError(f"year {year} outside coverage {self.years}")
        return i

    def value(self, year: int) -> float:
        return self.dynamic[self._index(year)]

    def raw_value(self, year: int):
        return self.raw[self._index(year)]

    def __contains__(self, year) -> bool:
        return self.start_year <= year < self.start_year + len(self.dynamic)


def dynamic_scores(
    events: Iterable[EventRecord],
    decay: float = DEFAULT_DECAY,
    through_year: int | None = None,
) -> dict[tuple[str, str], ScoreSeries]:
    """Build dynamic alignment scores for every dyad in ``events``.

    The recursion per dyad, with annual average ``r_t`` over ``n_t``
    events and depreciated stock ``N_t``::

        N_t = (1 - decay) * N_{t-1} + n_t
        S_t = (1 - n_t / N_t) * S_{t-1} + (n_t / N_t) * r_t

    seeded at the first event year with ``S = r`` and ``N = n``.  Years
    without events carry the score forward while the stock decays, so a
    later event moves the score by more.  ``through_year`` extends the
    carry-forward beyond the last event year.
    """
    if not 0.0 < decay <= 1.0:
        raise ValidationError(f"decay must be in (0, 1], got {decay}")
    by_dyad: dict[tuple[str, str], dict[int, list[EventRecord]]] = {}
    for e in events:
        by_dyad.setdefault(e.dyad, {}).setdefault(e.year, []).append(e)
    if not by_dyad:
        raise ValidationError("no events supplied")

    out: dict[tuple[str, str], ScoreSeries] = {}
    for dyad in sorted(by_dyad):
        by_year = by_dyad[dyad]
        first = min(by_year)
        last = max(by_year)
        if through_year is not None:
            last = max(last, through_year)
        raw: list = []
        dyn: list = []
        counts: list = []
        stocks: list = []
        score = 0.0
        stock = 0.0
        for year in range(first, last + 1):
            year_events = by_year.get(year, ())
            n_new = len(year_events)
            r = annual_average(year_events)
            if year == first:
                score = r
                stock = float(n_new)
            else:
                stock = (1.0 - decay) * stock + n_new
                if n_new:
                    share = n_new / stock
                    score = (1.0 - share) * score + share * r
            raw.append(r)
            dyn.append(score)
            counts.append(n_new)
            stocks.append(stock)
        out[dyad] = ScoreSeries(
            dyad=dyad,
            start_year=first,
            raw=tuple(raw),
            dynamic=tuple(dyn),
            event_count=tuple(counts),
            effective_count=tuple(stocks),
            decay=decay,
        )
    return out


# ---------------------------------------------------------------------------
# trade-weighted aggregates

@dataclass(frozen=True)
class WeightedScore:
    """Trade-weighted mean alignment with a bootstrap confidence band."""

    year: int
    mean: float
    ci_low: float
    ci_high: float
    n_dyads: int
    draws: int


def trade_weighted_score(
    series_map: Mapping[tuple[str, str], ScoreSeries],
    weights: Mapping[int, Mapping[tuple[str, str], float]],
    year: int,
    draws: int = 500,
    seed: int = 0,
) -> WeightedScore:
    """Weighted mean of dynamic scores with a dyad-bootstrap 95% band.

    ``weights`` maps year -> dyad -> nonnegative weight.  Dyads enter if
    they carry positive weight and have score coverage for ``year``; the
    bootstrap resamples those dyads with replacement ``draws`` times and
    takes the 2.5/97.5 percentile of the resampled weighted means.
    """
    if year not in weights:
        raise ValidationError(f"no weights for year {year}")
    if draws < 1:
        raise ValidationError("draws must be >= 1")
    pairs = []
    for dyad, w in weights[year].items():
        if w < 0:
            raise ValidationError(f"negative weight for dyad {dyad}")
        series = series_map.get(dyad)
        if w > 0 and series is not None and year in series:
            pairs.append((dyad, w, series.value(year)))
    if not pairs:
        raise ValidationError(f"no positively weighted dyads with scores in {year}")
    pairs.sort()
    w = np.array([p[1] for p in pairs])
    s = np.array([p[2] for p in pairs])
    mean = float(np.dot(w, s) / w.sum())

    rng = np.random.default_rng(seed)
    idx = rng.integers(0, len(pairs), size=(draws, len(pairs)))
    wb = w[idx]
    means = (wb * s[idx]).sum(axis=1) / wb.sum(axis=1)
    lo, hi = np.percentile(means, [2.5, 97.5])
    return WeightedScore(year, mean, float(lo), float(hi), len(pairs), draws)


def weighted_change(
    series_map: Mapping[tuple[str, str], ScoreSeries],
    weights: Mapping[int, Mapping[tuple[str, str], float]],
) -> dict[int, float]:
    """Year-over-year change in the weighted mean score, lagged weights.

    For each year ``t`` with weights available at ``t - 1``, both the
    current and previous weighted means use the ``t - 1`` weights, so the
    difference reflects score movements rather than weight churn.
    """
    changes: dict[int, float] = {}
    years = sorted(weights)
    for prev in years:
        t = prev + 1
        num = 0.0
        den = 0.0
        prev_w = weights[prev]
        for dyad, wgt in prev_w.items():
            if wgt <= 0:
                continue
            series = series_map.get(dyad)
            if series is None or t not in series or prev not in series:
                continue
            num += wgt * (series.value(t) - series.value(prev))
            den += wgt
        if den > 0:
            changes[t] = num / den
    if not changes:
        raise ValidationError("no year pair has lagged weights and score coverage")
    return changes


# ---------------------------------------------------------------------------
# score series I/O

def write_scores(series_map: Mapping[tuple[str, str], ScoreSeries], path) -> None:
    """Write score series to CSV (one row per dyad-year)."""
    rows = []
    for dyad in sorted(series_map):
        series = series_map[dyad]
        for i, year in enumerate(series.years):
            raw = series.raw[i]
            rows.append(
                (
                    dyad[0],
                    dyad[1],
                    year,
                    "" if raw is None else fmt_float(raw),
                    fmt_float(series.dynamic[i]),
                    series.event_count[i],
                    fmt_float(series.effective_count[i]),
                )
            )
    write_rows(path, SCORE_COLUMNS, rows)


def read_scores(source) -> dict[tuple[str, str], ScoreSeries]:
    """Read a score CSV written by :func:`write_scores`."""
    import csv as _csv

    if isinstance(source, (str, Path)):
        text = Path(source).read_text()
    else:
        text = source.read()
    reader = _csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != SCORE_COLUMNS:
        raise ValidationError(f"score CSV must start with header {','.join(SCORE_COLUMNS)}")
    acc: dict[tuple[str, str], dict[int, tuple]] = {}
    for i, parts in enumerate(reader, start=2):
        if not parts:
            continue
        if len(parts) != len(SCORE_COLUMNS):
            raise ParseError([(i, "row", f"expected {len(SCORE_COLUMNS)} fields")])
        a, b, year, raw, dyn, n_new, n_eff = (p.strip() for p in parts)
        try:
            entry = (
                None if raw == "" else float(raw),
                float(dyn),
                int(n_new),
                float(n_eff),
            )
            acc.setdefault(dyad_key(a, b), {})[int(year)] = entry
        except (ValueError, ValidationError) as exc:
            raise ParseError([(i, "row", str(exc))]) from None
    out = {}
    for dyad, by_year in acc.items():
        years = sorted(by_year)
        if years != list(range(years[0], years[-1] + 1)):
            raise ValidationError(f"score series for {dyad} has year gaps")
        cols = [by_year[y] for y in years]
        out[dyad] = ScoreSeries(
            dyad=dyad,
            start_year=years[0],
            raw=tuple(c[0] for c in cols),
            dynamic=tuple(c[1] for c in cols),
            event_count=tuple(c[2] for c in cols),
            effective_count=tuple(c[3] for c in cols),
            decay=None,
        )
    if not out:
        raise ValidationError("score CSV contains no rows")
    return out
