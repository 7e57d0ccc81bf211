"""Matched strata: exposure period, two control years, four lag weeks each.

Dates are handled as proleptic ordinals internally; every public type
exposes :class:`datetime.date` values.
"""
from __future__ import annotations

import calendar
import datetime as dt
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .ccs import (CAUSES, CAUSE_INDEX, EXCLUDED_CODE, ICD10_START, UNMAPPED_CODE, CcsCause, CcsTable,
                  cause_code, default_table, map_icd_to_ccs)
from .covariates import MeteoTriple
from .errors import MissingDataError, StructuralError, ValidationError

log = logging.getLogger(__name__)

N_LAG_WEEKS = 4
LAG_DAYS = 7 * N_LAG_WEEKS
STUDY_YEARS = (2000, 2016)


class Anchor(str, Enum):
    EXPOSURE = "exposure"
    CONTROL_1 = "control_1"
    CONTROL_2 = "control_2"


class CountSubset(str, Enum):
    ALL = "all"
    EMERGENCY = "emergency"
    NON_EMERGENCY = "non_emergency"


class NoControlsError(ValidationError):
    """Fewer than two eligible control years."""


def shift_year(d: dt.date, year: int) -> dt.date:
    """Same month-day in ``year``; Feb 29 becomes Feb 28 in common years."""
    if d.month == 2 and d.day == 29 and not calendar.isleap(year):
        return dt.date(year, 2, 28)
    return d.replace(year=year)


# ---------------------------------------------------------------- claims

class ClaimsTable:
    """Columnar claims: admission date, ICD code, ZIP and emergency flag.

    ICD codes and ZIPs are stored as integer indices into category arrays.
    """

    COLUMNS = ("admission_date", "icd", "zip", "emergency")

    def __init__(self, admission, icd, zip_id, emergency, validate=True):
        icd_idx, icd_cats = pd.factorize(pd.Series(icd, dtype=object), use_na_sentinel=True)
        zip_idx, zip_cats = pd.factorize(pd.Series(zip_id, dtype=object).astype(str))
        if np.any(icd_idx < 0):
            raise ValidationError("claims contain empty ICD codes")
        self._init(admission, icd_idx, np.asarray(icd_cats, dtype=object), zip_idx,
                   np.asarray(zip_cats, dtype=object), emergency, validate)

    @classmethod
    def from_codes(cls, admission, icd_index, icd_categories, zip_index, zip_categories, emergency,
                   validate=True):
        self = cls.__new__(cls)
        self._init(admission, icd_index, np.asarray(icd_categories, dtype=object), zip_index,
                   np.asarray(zip_categories, dtype=object), emergency, validate)
        return self

    def _init(self, admission, icd_idx, icd_cats, zip_idx, zip_cats, emergency, validate):
        self.admission = np.asarray(admission, dtype="datetime64[D]")
        self.icd_index = np.asarray(icd_idx, dtype=np.int32)
        self.icd_categories = icd_cats
        self.zip_index = np.asarray(zip_idx, dtype=np.int32)
        self.zip_categories = zip_cats
        self.emergency = np.asarray(emergency, dtype=bool)
        n = len(self.admission)
        if not (len(self.icd_index) == len(self.zip_index) == len(self.emergency) == n):
            raise StructuralError("claims columns differ in length")
        if validate:
            self._validate()

    def __len__(self):
        return len(self.admission)

    @property
    def icd(self):
        return self.icd_categories[self.icd_index]

    @property
    def zip_id(self):
        return self.zip_categories[self.zip_index]

    def _validate(self):
        cats = [str(c).strip() for c in self.icd_categories]
        if any(not c or c.lower() == "nan" for c in cats):
            raise ValidationError("claims contain empty ICD codes")
        icd10_style = np.array([c[:1].isalpha() and c[:1].upper() not in ("V", "E") for c in cats]
                               + [False], dtype=bool)
        early = self.admission < np.datetime64(ICD10_START)
        bad = early & icd10_style[self.icd_index]
        if bad.any():
            raise ValidationError(
                f"ICD-10 style code {cats[self.icd_index[np.argmax(bad)]]!r} before {ICD10_START}")

    @classmethod
    def from_frame(cls, frame: pd.DataFrame):
        missing = set(cls.COLUMNS) - set(frame.columns)
        if missing:
            raise StructuralError(f"claims table missing columns {sorted(missing)}")
        emerg = frame["emergency"]
        if emerg.dtype != bool:
            emerg = emerg.astype(str).str.lower().isin(["1", "true", "t", "yes"])
        icd = frame["icd"].where(frame["icd"].notna(), None)
        return cls(pd.to_datetime(frame["admission_date"]).values.astype("datetime64[D]"),
                   icd.values, frame["zip"].astype(str).str.zfill(5).values, emerg.values)

    def to_frame(self):
        return pd.DataFrame({"admission_date": self.admission.astype(str), "icd": self.icd,
                             "zip": self.zip_id, "emergency": self.emergency.astype(int)})

    def cause_codes(self, table: CcsTable | None = None) -> np.ndarray:
        """Per-claim cause index (0..12), EXCLUDED_CODE or UNMAPPED_CODE."""
        table = table or default_table()
        lut9 = np.array([cause_code(map_icd_to_ccs(c, "icd9", table)) for c in self.icd_categories]
                        + [0], dtype=np.int8)
        lut10 = np.array([cause_code(map_icd_to_ccs(c, "icd10", table)) for c in self.icd_categories]
                         + [0], dtype=np.int8)
        late = self.admission >= np.datetime64(ICD10_START)
        return np.where(late, lut10[self.icd_index], lut9[self.icd_index])


def read_claims(path) -> ClaimsTable:
    frame = pd.read_csv(path, dtype={"icd": str, "zip": str})
    return ClaimsTable.from_frame(frame)


class ClaimsIndex:
    """Claims sorted by (ZIP, day) for range counting."""

    def __init__(self, claims: ClaimsTable, table: CcsTable | None = None):
        codes = claims.cause_codes(table)
        days = claims.admission.astype(np.int64) + _EPOCH_ORDINAL
        zips = claims.zip_index
        order = np.lexsort((days, zips))
        self.n_claims = len(claims)
        self.days = days[order]
        self.codes = codes[order]
        self.emergency = claims.emergency[order]
        self.order = order
        zs = zips[order]
        self.zip_slices = {}
        if len(zs):
            bounds = np.flatnonzero(zs[1:] != zs[:-1]) + 1
            starts = np.r_[0, bounds]
            ends = np.r_[bounds, len(zs)]
            for s, e in zip(starts, ends):
                self.zip_slices[str(claims.zip_categories[zs[s]])] = (int(s), int(e))

    def span(self, zip_id, first_ord, last_ord):
        """Half-open index range of claims for ``zip_id`` with day in [first, last]."""
        s, e = self.zip_slices.get(zip_id, (0, 0))
        lo = s + int(np.searchsorted(self.days[s:e], first_ord, side="left"))
        hi = s + int(np.searchsorted(self.days[s:e], last_ord, side="right"))
        return lo, hi

    def counts(self, zip_id, first_ord, last_ord):
        lo, hi = self.span(zip_id, first_ord, last_ord)
        codes = self.codes[lo:hi]
        emerg = self.emergency[lo:hi]
        mapped = codes >= 0
        all_counts = np.bincount(codes[mapped], minlength=len(CAUSES))
        em_counts = np.bincount(codes[mapped & emerg], minlength=len(CAUSES))
        return (all_counts, em_counts, int(np.sum(codes == EXCLUDED_CODE)),
                int(np.sum(codes == UNMAPPED_CODE)))


_EPOCH_ORDINAL = dt.date(1970, 1, 1).toordinal()


# ---------------------------------------------------------------- strata

@dataclass(frozen=True)
class ExposurePeriod:
    zip_id: str
    event_id: str
    exposed_dates: tuple

    def __post_init__(self):
        dates = tuple(sorted(set(self.exposed_dates)))
        if not dates:
            raise ValidationError("exposure period must contain at least one day")
        object.__setattr__(self, "exposed_dates", dates)

    @property
    def start(self):
        return self.exposed_dates[0]

    @property
    def end(self):
        return self.exposed_dates[-1]

    @property
    def year(self):
        return self.start.year

    @property
    def span_days(self):
        return (self.end - self.start).days + 1


def anchor_span(exposure: ExposurePeriod, year: int):
    """Lag-0 span in ``year``: same start month-day, same length."""
    start = shift_year(exposure.start, year) if year != exposure.year else exposure.start
    return start, start + dt.timedelta(days=exposure.span_days - 1)


def lag_span(span_end: dt.date, week: int):
    return (span_end + dt.timedelta(days=7 * (week - 1) + 1), span_end + dt.timedelta(days=7 * week))


def _window_is_clear(history_ords, first_ord, last_ord):
    i = np.searchsorted(history_ords, first_ord, side="left")
    return i >= len(history_ords) or history_ords[i] > last_ord


def control_window(exposure: ExposurePeriod, year: int):
    start, end = anchor_span(exposure, year)
    return start, end + dt.timedelta(days=LAG_DAYS)


def find_control_years(zip_id, exposure: ExposurePeriod, exposure_history,
                       study_years=STUDY_YEARS):
    """The two nearest flood-free years for the exposure's day-of-year window.

    A year is eligible when its lag-0 span plus 28 lag days lies inside the
    study window and contains no exposed day for this ZIP. Equal-distance
    ties prefer the candidate that brackets the exposure year with the
    first pick, then the earlier year.
    """
    hist = np.asarray(sorted(exposure_history.get(zip_id, ()) if isinstance(exposure_history, Mapping)
                             else exposure_history), dtype=np.int64)
    y0 = exposure.year
    lo_date, hi_date = dt.date(study_years[0], 1, 1), dt.date(study_years[1], 12, 31)
    eligible = []
    for y in range(study_years[0], study_years[1] + 1):
        if y == y0:
            continue
        first, last = control_window(exposure, y)
        if first < lo_date or last > hi_date:
            continue
        if _window_is_clear(hist, first.toordinal(), last.toordinal()):
            eligible.append(y)
    if len(eligible) < 2:
        raise NoControlsError(f"ZIP {zip_id}, event {exposure.event_id}: "
                              f"only {len(eligible)} eligible control year(s)")
    first = min(eligible, key=lambda y: (abs(y - y0), y))
    rest = [y for y in eligible if y != first]
    side = np.sign(first - y0)
    second = min(rest, key=lambda y: (abs(y - y0), np.sign(y - y0) == side, y))
    return first, second


@dataclass(frozen=True, eq=False)
class PeriodObservation:
    stratum_id: str
    anchor: Anchor
    lag: int
    start: dt.date
    end: dt.date
    counts: np.ndarray
    emergency_counts: np.ndarray
    person_days: float
    year: int
    meteo: MeteoTriple
    n_excluded: int = 0
    n_unmapped: int = 0

    @property
    def span_days(self):
        return (self.end - self.start).days + 1

    def count(self, cause, subset=CountSubset.ALL):
        i = CAUSE_INDEX[CcsCause(cause)]
        subset = CountSubset(subset)
        if subset is CountSubset.ALL:
            return int(self.counts[i])
        if subset is CountSubset.EMERGENCY:
            return int(self.emergency_counts[i])
        return int(self.counts[i] - self.emergency_counts[i])


ANCHORS = (Anchor.EXPOSURE, Anchor.CONTROL_1, Anchor.CONTROL_2)
PERIODS_PER_STRATUM = len(ANCHORS) * (N_LAG_WEEKS + 1)


@dataclass(frozen=True, eq=False)
class Stratum:
    stratum_id: str
    exposure: ExposurePeriod
    control_years: tuple
    periods: tuple
    severity: float | None = None
    pct_black: float | None = None

    def __post_init__(self):
        if len(self.control_years) != 2 or len(set(self.control_years)) != 2:
            raise ValidationError(f"{self.stratum_id}: exactly two distinct control years required")
        if len(self.periods) != PERIODS_PER_STRATUM:
            raise StructuralError(f"{self.stratum_id}: expected {PERIODS_PER_STRATUM} periods")

    @property
    def zip_id(self):
        return self.exposure.zip_id

    def counts(self, cause, subset=CountSubset.ALL):
        return np.array([p.count(cause, subset) for p in self.periods])


def build_stratum(exposure: ExposurePeriod, control_years, claims: ClaimsIndex,
                  enrollment: Mapping, meteo, severity=None, pct_black=None) -> Stratum:
    """Aggregate counts, person-days and period-mean meteorology for 15 periods.

    ``meteo`` provides ``period_mean(zip_id, start, end)``; ``enrollment``
    maps ``(zip_id, year)`` to enrollee counts.
    """
    sid = f"{exposure.zip_id}-{exposure.event_id}"
    years = (exposure.year,) + tuple(control_years)
    periods = []
    for anchor, year in zip(ANCHORS, years):
        enrollees = enrollment.get((exposure.zip_id, year))
        if enrollees is None or not enrollees > 0:
            raise MissingDataError(f"{sid}: no enrollment for ZIP {exposure.zip_id} in {year}")
        start, end = anchor_span(exposure, year)
        spans = [(start, end)] + [lag_span(end, w) for w in range(1, N_LAG_WEEKS + 1)]
        for lag, (a, b) in enumerate(spans):
            all_c, em_c, n_ex, n_un = claims.counts(exposure.zip_id, a.toordinal(), b.toordinal())
            periods.append(PeriodObservation(
                sid, anchor, lag, a, b, all_c, em_c, float(enrollees) * ((b - a).days + 1), year,
                meteo.period_mean(exposure.zip_id, a, b), n_ex, n_un))
    return Stratum(sid, exposure, tuple(control_years), tuple(periods), severity, pct_black)


def drop_zero_strata(strata: Iterable[Stratum], cause, subset=CountSubset.ALL):
    """Strata with at least one count of ``cause``; zero-total strata are logged."""
    kept, dropped = [], []
    for s in strata:
        (kept if s.counts(cause, subset).sum() > 0 else dropped).append(s)
    if dropped:
        log.info("dropped %d zero-count strata for %s (%s)", len(dropped), CcsCause(cause).value,
                 CountSubset(subset).value)
    return kept


# ---------------------------------------------------------------- orchestration

def exposure_periods(exposure_rows, event_ids=None) -> list:
    """One :class:`ExposurePeriod` per (ZIP, event) with exposed days."""
    grouped: dict = {}
    for r in exposure_rows:
        if r.exposed and (event_ids is None or r.event_id in event_ids):
            grouped.setdefault((r.zip_id, r.event_id), []).append(r.date)
    return [ExposurePeriod(z, e, tuple(d)) for (z, e), d in sorted(grouped.items())]


def exposure_history(exposure_rows) -> dict:
    """ZIP -> sorted ordinals of every exposed day (all events)."""
    hist: dict = {}
    for r in exposure_rows:
        if r.exposed:
            hist.setdefault(r.zip_id, set()).add(r.date.toordinal())
    return {z: np.array(sorted(v), dtype=np.int64) for z, v in hist.items()}


@dataclass
class DesignAudit:
    n_claims: int = 0
    n_exposure_periods: int = 0
    dropped: list = field(default_factory=list)
    claims_in_periods: int = 0
    claims_out_of_period: int = 0
    in_period_counted: int = 0
    in_period_excluded: int = 0
    in_period_unmapped: int = 0
    unmapped_total: int = 0
    excluded_total: int = 0
    period_assignments: int = 0

    @property
    def balanced(self):
        return (self.in_period_counted + self.in_period_excluded + self.in_period_unmapped
                + self.claims_out_of_period == self.n_claims)

    def to_dict(self):
        return {
            "n_claims": self.n_claims,
            "n_exposure_periods": self.n_exposure_periods,
            "n_strata_dropped": len(self.dropped),
            "dropped": [{"stratum_id": s, "reason": r} for s, r in self.dropped],
            "claims_in_periods": self.claims_in_periods,
            "claims_out_of_period": self.claims_out_of_period,
            "in_period_counted": self.in_period_counted,
            "in_period_excluded": self.in_period_excluded,
            "in_period_unmapped": self.in_period_unmapped,
            "unmapped_total": self.unmapped_total,
            "excluded_total": self.excluded_total,
            "period_assignments": self.period_assignments,
            "balanced": self.balanced,
        }


@dataclass
class Design:
    strata: list
    audit: DesignAudit
    history: dict


def build_design(exposure_rows: Sequence, claims: ClaimsTable | ClaimsIndex, enrollment: Mapping,
                 meteo, events: Mapping | None = None, analysis_event_ids=None,
                 pct_black: Mapping | None = None, study_years=STUDY_YEARS,
                 ccs_table: CcsTable | None = None) -> Design:
    """Build every stratum for the analysis events.

    ``events`` maps event_id to :class:`~floodlag.exposure.FloodEvent` (for
    severity); ``pct_black`` maps ZIP to its share of Black residents.
    Control contamination is checked against exposed days of *all* events.
    """
    index = claims if isinstance(claims, ClaimsIndex) else ClaimsIndex(claims, ccs_table)
    history = exposure_history(exposure_rows)
    periods = exposure_periods(exposure_rows, analysis_event_ids)
    audit = DesignAudit(n_claims=index.n_claims, n_exposure_periods=len(periods))
    end_limit = dt.date(study_years[1], 12, 31)
    strata = []
    for ep in periods:
        sid = f"{ep.zip_id}-{ep.event_id}"
        if ep.end + dt.timedelta(days=LAG_DAYS) > end_limit:
            audit.dropped.append((sid, "lag window extends beyond study period"))
            continue
        try:
            years = find_control_years(ep.zip_id, ep, history, study_years)
            sev = events[ep.event_id].severity if events is not None and ep.event_id in events else None
            pb = pct_black.get(ep.zip_id) if pct_black is not None else None
            strata.append(build_stratum(ep, years, index, enrollment, meteo, sev, pb))
        except NoControlsError as exc:
            audit.dropped.append((sid, str(exc)))
            log.info("dropped %s: %s", sid, exc)
        except MissingDataError as exc:
            audit.dropped.append((sid, str(exc)))
            log.info("dropped %s: %s", sid, exc)
    _fill_conservation(audit, index, strata)
    return Design(strata, audit, history)


def _fill_conservation(audit: DesignAudit, index: ClaimsIndex, strata):
    mult = np.zeros(index.n_claims + 1, dtype=np.int64)
    for s in strata:
        for p in s.periods:
            lo, hi = index.span(s.zip_id, p.start.toordinal(), p.end.toordinal())
            mult[lo] += 1
            mult[hi] -= 1
    mult = np.cumsum(mult)[:-1]
    inside = mult > 0
    codes = index.codes
    audit.period_assignments = int(mult.sum())
    audit.claims_in_periods = int(inside.sum())
    audit.claims_out_of_period = int((~inside).sum())
    audit.in_period_counted = int(np.sum(inside & (codes >= 0)))
    audit.in_period_excluded = int(np.sum(inside & (codes == EXCLUDED_CODE)))
    audit.in_period_unmapped = int(np.sum(inside & (codes == UNMAPPED_CODE)))
    audit.unmapped_total = int(np.sum(codes == UNMAPPED_CODE))
    audit.excluded_total = int(np.sum(codes == EXCLUDED_CODE))


def check_control_contamination(strata: Iterable[Stratum], history: Mapping) -> list:
    """(stratum_id, control_year, n_exposed_days) for every contaminated control window."""
    bad = []
    for s in strata:
        hist = history.get(s.zip_id, np.zeros(0, dtype=np.int64))
        for y in s.control_years:
            first, last = control_window(s.exposure, y)
            n = int(np.sum((hist >= first.toordinal()) & (hist <= last.toordinal())))
            if n:
                bad.append((s.stratum_id, y, n))
    return bad


# ---------------------------------------------------------------- tables

def read_enrollment(path) -> dict:
    frame = pd.read_csv(path, dtype={"zip": str})
    need = {"zip", "year", "enrollee_count"}
    if not need <= set(frame.columns):
        raise StructuralError(f"{path}: enrollment needs columns {sorted(need)}")
    return {(str(z).zfill(5), int(y)): float(n)
            for z, y, n in zip(frame["zip"], frame["year"], frame["enrollee_count"])}


def read_demographics(path) -> dict:
    """``(zip, year) -> pct_black``."""
    frame = pd.read_csv(path, dtype={"zip": str})
    need = {"zip", "year", "pct_black"}
    if not need <= set(frame.columns):
        raise StructuralError(f"{path}: demographics needs columns {sorted(need)}")
    frame = frame.dropna(subset=["pct_black"])
    return {(str(z).zfill(5), int(y)): float(p)
            for z, y, p in zip(frame["zip"], frame["year"], frame["pct_black"])}


def zip_pct_black(demographics: Mapping) -> dict:
    """Mean share of Black residents per ZIP over the years available."""
    acc: dict = {}
    for (z, _), p in demographics.items():
        acc.setdefault(z, []).append(p)
    return {z: float(np.mean(v)) for z, v in acc.items()}


PERIOD_BASE_COLUMNS = ["stratum_id", "zip_id", "event_id", "anchor", "lag", "start", "end", "year",
                       "person_days", "t_max", "rh_max", "wind_10m", "severity", "pct_black",
                       "control_year_1", "control_year_2", "n_excluded", "n_unmapped"]


def strata_to_frame(strata: Iterable[Stratum]) -> pd.DataFrame:
    """Long table: one row per period, counts per cause and per emergency flag."""
    rows = []
    for s in strata:
        for p in s.periods:
            row = [s.stratum_id, s.zip_id, s.exposure.event_id, p.anchor.value, p.lag,
                   p.start.isoformat(), p.end.isoformat(), p.year, p.person_days, *p.meteo,
                   s.severity, s.pct_black, s.control_years[0], s.control_years[1],
                   p.n_excluded, p.n_unmapped]
            row += [int(v) for v in p.counts] + [int(v) for v in p.emergency_counts]
            rows.append(row)
    cols = PERIOD_BASE_COLUMNS + [f"n_{c.value}" for c in CAUSES] + [f"em_{c.value}" for c in CAUSES]
    return pd.DataFrame(rows, columns=cols)


def frame_to_strata(frame: pd.DataFrame, exposed_dates: Mapping | None = None) -> list:
    """Inverse of :func:`strata_to_frame`.

    Exposed-day sets are not stored in the period table; without
    ``exposed_dates`` they are taken as every day of the lag-0 span.
    """
    need = set(PERIOD_BASE_COLUMNS) | {f"n_{c.value}" for c in CAUSES} | {f"em_{c.value}" for c in CAUSES}
    missing = need - set(frame.columns)
    if missing:
        raise StructuralError(f"period table missing columns {sorted(missing)}")
    n_cols = [f"n_{c.value}" for c in CAUSES]
    e_cols = [f"em_{c.value}" for c in CAUSES]
    strata = []
    for sid, g in frame.groupby("stratum_id", sort=False):
        g = g.sort_values(["anchor", "lag"], key=lambda col: col.map(_anchor_rank) if col.name == "anchor" else col)
        periods = []
        for r in g.itertuples(index=False):
            rd = r._asdict()
            periods.append(PeriodObservation(
                sid, Anchor(rd["anchor"]), int(rd["lag"]), dt.date.fromisoformat(rd["start"]),
                dt.date.fromisoformat(rd["end"]), np.array([rd[c] for c in n_cols], dtype=np.int64),
                np.array([rd[c] for c in e_cols], dtype=np.int64), float(rd["person_days"]),
                int(rd["year"]), MeteoTriple(rd["t_max"], rd["rh_max"], rd["wind_10m"]),
                int(rd["n_excluded"]), int(rd["n_unmapped"])))
        first = g.iloc[0]
        zip_id, event_id = str(first["zip_id"]).zfill(5), str(first["event_id"]).zfill(4)
        lag0 = periods[0]
        dates = None if exposed_dates is None else exposed_dates.get((zip_id, event_id))
        if dates is None:
            dates = tuple(lag0.start + dt.timedelta(days=k) for k in range(lag0.span_days))
        sev = None if pd.isna(first["severity"]) else float(first["severity"])
        pb = None if pd.isna(first["pct_black"]) else float(first["pct_black"])
        strata.append(Stratum(sid, ExposurePeriod(zip_id, event_id, tuple(dates)),
                              (int(first["control_year_1"]), int(first["control_year_2"])),
                              tuple(periods), sev, pb))
    return strata


def _anchor_rank(value):
    return [a.value for a in ANCHORS].index(value)
