import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spfclust.curves import (
    AnnualCurve,
    Dataset,
    RawObservation,
    SiteGeometry,
    aggregate_mean_daily,
    build_dataset,
    complete_year_count,
    filter_complete_sites,
    ingest_records,
    missing_fraction,
)
from spfclust.errors import ConflictError, CoverageError, ValidationError


def daily_rows(site, years, value=lambda d: 1.0, skip=()):
    """Rows for every day of ``years`` except dates in ``skip`` (omitted)."""
    out = []
    for y in years:
        d = dt.date(y, 1, 1)
        while d.year == y:
            if d not in skip:
                out.append(RawObservation(site, d, value(d)))
            d += dt.timedelta(days=1)
    return out


def test_grouping_and_sorting():
    rows = [
        RawObservation("b", dt.date(2000, 1, 2), 1.0),
        RawObservation("a", dt.date(2000, 1, 5), 2.0),
        RawObservation("b", dt.date(2000, 1, 1), 3.0),
    ]
    rec = ingest_records(rows)
    assert list(rec) == ["a", "b"]
    assert rec["b"].dates.tolist() == [dt.date(2000, 1, 1), dt.date(2000, 1, 2)]
    assert rec["b"].values.tolist() == [3.0, 1.0]


def test_empty_stream():
    assert ingest_records([]) == {}


def test_duplicate_date_names_the_date():
    rows = [
        RawObservation("a", dt.date(2001, 3, 4), 1.0),
        RawObservation("a", dt.date(2001, 3, 5), 1.0),
        RawObservation("a", dt.date(2001, 3, 4), 2.0),
    ]
    with pytest.raises(ConflictError, match="2001-03-04"):
        ingest_records(rows)


def test_same_date_different_sites_is_fine():
    rows = [RawObservation("a", dt.date(2001, 3, 4), 1.0), RawObservation("b", dt.date(2001, 3, 4), 1.0)]
    assert len(ingest_records(rows)) == 2


def test_negative_or_nan_values_rejected():
    with pytest.raises(ValidationError):
        RawObservation("a", dt.date(2000, 1, 1), -0.1)
    with pytest.raises(ValidationError):
        RawObservation("a", dt.date(2000, 1, 1), float("nan"))
    RawObservation("a", dt.date(2000, 1, 1), float("nan"), missing=True)


def test_49_complete_years_dropped_at_50():
    rec = ingest_records(daily_rows("s", range(1960, 2009)))
    assert complete_year_count(rec["s"]) == 49
    assert filter_complete_sites(rec, 50) == {}
    assert list(filter_complete_sites(rec, 49)) == ["s"]


def _brute_force_complete_years(rows, tol):
    present = {}
    for r in rows:
        if r.missing or (r.date.month == 2 and r.date.day == 29):
            continue
        present.setdefault(r.date.year, set()).add(r.date)
    return sum(1 for y, days in present.items() if 365 - len(days) <= tol)


def test_roster_of_ten_sites_against_brute_force_count():
    rng = np.random.default_rng(5)
    years = range(1990, 1996)
    rows = []
    for s in range(10):
        all_days = daily_rows(f"s{s}", years)
        if s >= 6:
            # knock out one day in each of two years -> only 4 complete years
            drop = {dt.date(1991, 5, 1 + s), dt.date(1994, 7, 2 + s)}
            all_days = [r for r in all_days if r.date not in drop]
        if s == 3:
            # a missing Feb 29 does not make a year incomplete
            all_days = [r for r in all_days if r.date != dt.date(1992, 2, 29)]
        rows += all_days
    rec = ingest_records(rows)
    by_site = {}
    for r in rows:
        by_site.setdefault(r.site_id, []).append(r)
    counts = {s: _brute_force_complete_years(by_site[s], 0) for s in by_site}
    kept = filter_complete_sites(rec, min_complete_years=6)
    assert sorted(kept) == sorted(s for s, c in counts.items() if c >= 6)
    assert len(kept) == 6
    assert all(complete_year_count(rec[s]) == counts[s] for s in rec)


def test_missing_tolerance_parameter():
    rows = daily_rows("s", [2001], skip={dt.date(2001, 6, 1)})
    rows.append(RawObservation("s", dt.date(2001, 6, 2) + dt.timedelta(days=400), 1.0))
    rec = ingest_records(daily_rows("s", [2001], skip={dt.date(2001, 6, 1)}))
    assert complete_year_count(rec["s"], 0) == 0
    assert complete_year_count(rec["s"], 1) == 1


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=4, max_size=4), st.integers(1, 4), st.integers(1, 4))
def test_filter_is_monotone(gaps, lo, hi):
    lo, hi = min(lo, hi), max(lo, hi)
    rows = []
    for s, g in enumerate(gaps):
        rows += daily_rows(f"s{s}", range(2000, 2000 + 4 - g))
    rec = ingest_records(rows)
    assert set(filter_complete_sites(rec, hi)) <= set(filter_complete_sites(rec, lo))


def test_identical_years_give_that_year():
    f = lambda d: float(d.timetuple().tm_yday % 7)
    rec = ingest_records(daily_rows("s", range(2001, 2004), f))
    curve = aggregate_mean_daily(rec["s"])
    single = aggregate_mean_daily(ingest_records(daily_rows("s", [2001], f))["s"])
    np.testing.assert_allclose(curve.values, single.values)
    assert curve.years_used == 3


def test_two_years_mean():
    rows = daily_rows("s", [2001], lambda d: 2.0) + daily_rows("s", [2002], lambda d: 4.0)
    curve = aggregate_mean_daily(ingest_records(rows)["s"])
    np.testing.assert_allclose(curve.values, 3.0)
    assert curve.values.size == 365
    np.testing.assert_allclose(curve.times, (np.arange(1, 366) - 0.5) / 365)


def test_missing_days_against_brute_force_average():
    rng = np.random.default_rng(3)
    years = range(2001, 2006)
    rows = []
    for y in years:
        skip_day = dt.date(y, 1, 1) + dt.timedelta(days=int(rng.integers(365)))
        for r in daily_rows("s", [y], lambda d: float(rng.gamma(0.5, 4.0))):
            rows.append(RawObservation("s", r.date, 0.0, missing=True) if r.date == skip_day else r)
    curve = aggregate_mean_daily(ingest_records(rows)["s"])
    by_md = {}
    for r in rows:
        if not r.missing and (r.date.month, r.date.day) != (2, 29):
            by_md.setdefault((r.date.month, r.date.day), []).append(r.value)
    ref = [np.mean(v) for _, v in sorted(by_md.items())]
    np.testing.assert_allclose(curve.values, ref, rtol=1e-13)


def test_leap_day_is_dropped():
    rows = daily_rows("s", [2003, 2004], lambda d: 100.0 if (d.month, d.day) == (2, 29) else 1.0)
    curve = aggregate_mean_daily(ingest_records(rows)["s"])
    np.testing.assert_allclose(curve.values, 1.0)


def test_year_range_restricts_average():
    rows = daily_rows("s", [2001], lambda d: 2.0) + daily_rows("s", [2002], lambda d: 4.0)
    curve = aggregate_mean_daily(ingest_records(rows)["s"], (2002, 2002))
    np.testing.assert_allclose(curve.values, 4.0)
    assert curve.years_used == 1


def test_uncovered_day_lists_it():
    rows = daily_rows("s", [2001, 2002], skip={dt.date(2001, 3, 1), dt.date(2002, 3, 1)})
    with pytest.raises(CoverageError, match=r"\b60\b"):
        aggregate_mean_daily(ingest_records(rows)["s"])


@settings(max_examples=25, deadline=None)
@given(st.permutations(list(range(4))), st.integers(0, 10_000))
def test_aggregation_is_year_permutation_invariant_and_bounded(perm, seed):
    rng = np.random.default_rng(seed)
    vals = rng.gamma(0.7, 3.0, size=(4, 365))
    base = [2001, 2002, 2003, 2005]
    def rows_for(order):
        rows = []
        for slot, src in enumerate(order):
            start = dt.date(base[slot], 1, 1)
            rows += [RawObservation("s", start + dt.timedelta(days=d), float(vals[src, d])) for d in range(365)]
        return rows
    a = aggregate_mean_daily(ingest_records(rows_for(range(4)))["s"]).values
    b = aggregate_mean_daily(ingest_records(rows_for(perm))["s"]).values
    np.testing.assert_allclose(a, b, rtol=1e-12)
    assert np.all(a >= vals.min(axis=0) - 1e-12) and np.all(a <= vals.max(axis=0) + 1e-12)


def test_missing_fraction_counts_gaps_and_blanks():
    rows = daily_rows("s", [2001], skip={dt.date(2001, 5, 5)})
    rows.append(RawObservation("t", dt.date(2001, 1, 1), 0.0, missing=True))
    rows.append(RawObservation("t", dt.date(2001, 1, 2), 1.0))
    frac = missing_fraction(ingest_records(rows))
    assert frac == pytest.approx(2 / 367)


def test_dataset_alignment():
    c = AnnualCurve("a", [0.1, 0.2], [1.0, 2.0])
    g = SiteGeometry("a", 10.0, 20.0, 5.0)
    ds = Dataset([c], [g])
    assert ds.site_ids == ["a"]
    with pytest.raises(ValidationError, match="b"):
        Dataset([c], [g, SiteGeometry("b", 0, 0, 0)])
    with pytest.raises(ValidationError):
        AnnualCurve("x", [0.2, 0.1], [1.0, 1.0])
    with pytest.raises(ValidationError):
        SiteGeometry("x", 91.0, 0.0, 0.0)


def test_build_dataset_requires_geometry():
    rec = ingest_records(daily_rows("s", [2001]))
    with pytest.raises(ValidationError, match="s"):
        build_dataset(rec, [])
    ds = build_dataset(rec, [SiteGeometry("s", 1, 2, 3), SiteGeometry("other", 1, 2, 3)])
    assert ds.site_ids == ["s"]
