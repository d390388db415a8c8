"""Gravity estimation, yearly coefficients, fit decomposition, blocs."""

from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from geotrade.errors import ValidationError
from geotrade.gravity import (
    Bloc,
    BlocAssignment,
    GravitySpec,
    ZeroVariationWarning,
    bloc_classification,
    interaction_name,
    static_gravity,
    variance_decomposition,
    write_blocs,
    write_gravity,
    yearly_coefficients,
)
from geotrade.panel import ClusterDyad, GRAVITY_FE, Panel

CONTROLS = ("log_distance", "contiguity", "linguistic_distance")
TRUE_CONTROLS = {"log_distance": -1.2, "contiguity": 0.8, "linguistic_distance": -0.5}


def gravity_panel(seed=0, alpha=0.458, years=range(1995, 2007), n_countries=10,
                  noise=0.3, alpha_by_year=None, score_fn=None):
    """Directed panel with country-year effects, controls, and a score."""
    rng = np.random.default_rng(seed)
    countries = [chr(65 + i) * 3 for i in range(n_countries)]
    years = list(years)
    dist = {}
    contig = {}
    ling = {}
    score = {}
    for i, o in enumerate(countries):
        for d in countries[i + 1:]:
            dist[(o, d)] = rng.uniform(0.5, 3.0)
            contig[(o, d)] = float(rng.random() < 0.2)
            ling[(o, d)] = rng.uniform(0.0, 1.0)
            score[(o, d)] = rng.normal(0.0, 0.5, size=len(years))
    a = {(c, t): rng.normal() for c in countries for t in years}
    b = {(c, t): rng.normal() for c in countries for t in years}
    rows = []
    for (o, d), s_path in score.items():
        for k, t in enumerate(years):
            at = alpha if alpha_by_year is None else alpha_by_year(t)
            s = s_path[k] if score_fn is None else score_fn(rng)
            pair_part = (
                at * s
                + TRUE_CONTROLS["log_distance"] * dist[(o, d)]
                + TRUE_CONTROLS["contiguity"] * contig[(o, d)]
                + TRUE_CONTROLS["linguistic_distance"] * ling[(o, d)]
            )
            for oo, dd in ((o, d), (d, o)):
                y = a[(oo, t)] + b[(dd, t)] + pair_part
                rows.append((
                    oo, dd, t, y + noise * rng.normal(), s,
                    dist[(o, d)], contig[(o, d)], ling[(o, d)],
                ))
    return Panel(pd.DataFrame(
        rows,
        columns=["origin", "dest", "year", "log_trade", "score", *CONTROLS],
    ))


# ---------------------------------------------------------------------------
# spec validation

def test_spec_rejects_score_among_controls():
    with pytest.raises(ValidationError):
        GravitySpec(score="score", controls=("score", "log_distance"))
    with pytest.raises(ValidationError):
        GravitySpec(controls=("log_distance", "log_distance"))


def test_spec_defaults():
    spec = GravitySpec()
    assert spec.fe == GRAVITY_FE
    assert isinstance(spec.se_engine, ClusterDyad)
    assert spec.regressors == ("score",)


# ---------------------------------------------------------------------------
# static gravity

def test_static_gravity_recovers_planted_alpha():
    panel = gravity_panel(seed=1, alpha=0.458)
    fit = static_gravity(panel, GravitySpec(controls=CONTROLS))
    assert abs(fit.coef("score") - 0.458) < 2 * fit.stderr("score")
    for name, truth in TRUE_CONTROLS.items():
        assert abs(fit.coef(name) - truth) < 3 * fit.stderr(name)


def test_static_gravity_noise_score_covers_zero():
    # score independent of the outcome: the band must cover zero
    panel = gravity_panel(seed=2, alpha=0.7)
    rng = np.random.default_rng(99)
    shuffled = panel.with_column("noise_score", rng.normal(size=len(panel)))
    fit = static_gravity(shuffled, GravitySpec(score="noise_score", controls=CONTROLS))
    lo, hi = fit.conf_int("noise_score")
    assert lo < 0.0 < hi


# ---------------------------------------------------------------------------
# yearly coefficients

def test_yearly_flat_dgp_stays_near_truth():
    panel = gravity_panel(seed=3, alpha=0.6, years=range(2000, 2010))
    yc = yearly_coefficients(panel, GravitySpec(controls=CONTROLS))
    assert yc.years == tuple(range(2000, 2010))
    assert yc.omitted_years == ()
    for t in yc.years:
        assert abs(yc.value(t) - 0.6) < 3 * yc.stderr(t)
    # pooled run gives the overall level the yearly path fluctuates around
    pooled = static_gravity(panel, GravitySpec(controls=CONTROLS))
    assert abs(np.mean(yc.alpha) - pooled.coef("score")) < 0.05


def test_yearly_recovers_regime_break():
    panel = gravity_panel(
        seed=4, years=range(1994, 2008),
        alpha_by_year=lambda t: 0.4 if t < 2001 else 1.2,
    )
    yc = yearly_coefficients(panel, GravitySpec(controls=CONTROLS))
    pre = [yc.value(t) for t in yc.years if t < 2001]
    post = [yc.value(t) for t in yc.years if t >= 2001]
    assert abs(np.mean(pre) - 0.4) < 0.12
    assert abs(np.mean(post) - 1.2) < 0.12
    assert np.mean(post) - np.mean(pre) > 0.5


def test_yearly_omits_zero_variation_year_with_warning():
    panel = gravity_panel(seed=5, years=range(2000, 2006))
    score = panel.column("score").copy()
    score[panel.years() == 2003] = 0.25  # constant within the year
    frozen = panel.with_column("score", score)
    with pytest.warns(ZeroVariationWarning, match="2003"):
        yc = yearly_coefficients(frozen, GravitySpec(controls=CONTROLS))
    assert 2003 in yc.omitted_years
    assert 2003 not in yc.years
    assert interaction_name("score", 2002) in yc.fit.names
    assert interaction_name("score", 2003) not in yc.fit.names


def test_yearly_requires_two_years():
    panel = gravity_panel(seed=6, years=[2001])
    with pytest.raises(ValidationError):
        yearly_coefficients(panel, GravitySpec(controls=CONTROLS))


# ---------------------------------------------------------------------------
# variance decomposition

def test_single_factor_dgp_attributes_fit_to_that_factor():
    # outcome driven by distance alone: its loss is the whole fit, up to
    # chance correlation among static dyad attributes (scales with 1/dyads)
    panel = gravity_panel(seed=7, alpha=0.0, noise=0.0, n_countries=16)
    rng = np.random.default_rng(7)
    y = (
        panel.column("log_trade")
        - TRUE_CONTROLS["contiguity"] * panel.column("contiguity")
        - TRUE_CONTROLS["linguistic_distance"] * panel.column("linguistic_distance")
        + 0.05 * rng.normal(size=len(panel))
    )
    dist_only = panel.with_column("log_trade", y)
    dec = variance_decomposition(dist_only, GravitySpec(controls=CONTROLS))
    assert dec.full_r2 > 0.9
    assert abs(dec.r2_loss["log_distance"] - 100 * dec.full_r2) < 3.0
    assert dec.r2_loss["score"] < 1.0
    assert dec.r2_loss["contiguity"] < 1.0
    assert dec.r2_loss["linguistic_distance"] < 1.0


def test_losses_are_nonnegative_with_correlated_regressors():
    panel = gravity_panel(seed=8, alpha=0.5, noise=0.6)
    dec = variance_decomposition(panel, GravitySpec(controls=CONTROLS))
    for name, loss in dec.r2_loss.items():
        assert loss >= -1e-8, name
    assert set(dec.r2_loss) == {"score", *CONTROLS}
    assert 0.0 < dec.full_r2 < 1.0


def test_score_only_spec_loss_equals_full_fit():
    panel = gravity_panel(seed=9, alpha=0.8, noise=0.3)
    dec = variance_decomposition(panel, GravitySpec())
    assert dec.r2_loss["score"] == pytest.approx(100 * dec.full_r2)


# ---------------------------------------------------------------------------
# bloc classification

def two_year_panel(entries, years=(2015, 2023)):
    """entries: {(o, d): (log_trade_t0, log_trade_t1, score_t0, score_t1)}"""
    rows = []
    for (o, d), (y0, y1, s0, s1) in entries.items():
        rows.append((o, d, years[0], y0, s0))
        rows.append((o, d, years[1], y1, s1))
    return Panel(pd.DataFrame(
        rows, columns=["origin", "dest", "year", "log_trade", "score"]
    ))


def balanced_entries(deltas, score_deltas=None):
    """Symmetric directed entries from unordered deltas (zero base year)."""
    entries = {}
    for (a, b), dy in deltas.items():
        ds = 0.0 if score_deltas is None else score_deltas.get((a, b), 0.0)
        entries[(a, b)] = (0.0, dy, 0.0, ds)
        entries[(b, a)] = (0.0, dy, 0.0, ds)
    return entries


def test_hand_pattern_assigns_anchor_blocs():
    # AAA rises toward USA and falls toward CHN; BBB is the mirror image.
    # Country-level means of the planted pattern are all zero, so the
    # origin/dest effects vanish and residuals equal the planted deltas.
    deltas = {
        ("AAA", "USA"): 1.0, ("AAA", "CHN"): -1.0,
        ("BBB", "USA"): -1.0, ("BBB", "CHN"): 1.0,
        ("AAA", "BBB"): 0.0, ("CHN", "USA"): 0.0,
    }
    panel = two_year_panel(balanced_entries(deltas, score_deltas=deltas))
    by_country = {a.country: a for a in bloc_classification(panel, (2015, 2023))}
    assert by_country["AAA"].trade_bloc is Bloc.US
    assert by_country["BBB"].trade_bloc is Bloc.CHINA
    assert by_country["AAA"].geo_bloc is Bloc.US
    assert by_country["USA"].trade_bloc is Bloc.UNCLASSIFIED
    assert by_country["CHN"].geo_bloc is Bloc.UNCLASSIFIED
    assert by_country["AAA"].window == (2015, 2023)


def test_no_change_world_is_all_closer_with_zero_residuals():
    countries = ["USA", "CHN", "AAA", "BBB", "CCC"]
    deltas = {
        (a, b): 0.0 for i, a in enumerate(countries) for b in countries[i + 1:]
    }
    panel = two_year_panel(balanced_entries(deltas))
    for a in bloc_classification(panel, (2015, 2023)):
        if a.country in ("USA", "CHN"):
            assert a.trade_bloc is Bloc.UNCLASSIFIED
        else:
            assert a.trade_bloc is Bloc.BOTH_CLOSER
            assert a.geo_bloc is Bloc.BOTH_CLOSER


def test_planted_partition_recovered():
    rng = np.random.default_rng(11)
    us_side = [f"U{i:02d}" for i in range(10)]
    cn_side = [f"C{i:02d}" for i in range(10)]
    countries = ["USA", "CHN", *us_side, *cn_side]
    growth = {c: rng.normal(0.0, 0.3) for c in countries}
    deltas = {}
    score_deltas = {}
    for i, a in enumerate(countries):
        for b in countries[i + 1:]:
            signal = 0.0
            anchor = {a, b} & {"USA", "CHN"}
            other = (({a, b} - anchor) or {None}).pop()
            if len(anchor) == 1 and other is not None:
                sign = 1.0 if other in us_side else -1.0
                signal = sign * (0.8 if anchor == {"USA"} else -0.8)
            deltas[(a, b)] = growth[a] + growth[b] + signal + rng.normal(0, 0.05)
            score_deltas[(a, b)] = signal + rng.normal(0, 0.05)
    panel = two_year_panel(balanced_entries(deltas, score_deltas))
    by_country = {a.country: a for a in bloc_classification(panel, (2015, 2023))}
    trade_hits = sum(by_country[c].trade_bloc is Bloc.US for c in us_side)
    trade_hits += sum(by_country[c].trade_bloc is Bloc.CHINA for c in cn_side)
    geo_hits = sum(by_country[c].geo_bloc is Bloc.US for c in us_side)
    geo_hits += sum(by_country[c].geo_bloc is Bloc.CHINA for c in cn_side)
    assert trade_hits >= 19  # >= 95% of the 20 planted countries
    assert geo_hits >= 19


def test_labels_invariant_to_trade_rescaling():
    rng = np.random.default_rng(13)
    countries = ["USA", "CHN", "AAA", "BBB", "CCC", "DDD"]
    deltas = {
        (a, b): rng.normal(0.0, 0.7)
        for i, a in enumerate(countries) for b in countries[i + 1:]
    }
    panel = two_year_panel(balanced_entries(deltas))
    base = bloc_classification(panel, (2015, 2023))
    # multiply every year-1 trade value by the same constant
    lifted = panel.column("log_trade") + np.where(
        panel.years() == 2023, np.log(7.0), 0.0
    )
    scaled = panel.with_column("log_trade", lifted)
    assert bloc_classification(scaled, (2015, 2023)) == base


def test_missing_anchor_pair_leaves_country_unclassified():
    deltas = {
        ("AAA", "USA"): 1.0, ("AAA", "CHN"): -1.0,
        ("BBB", "CHN"): 1.0,  # BBB never observed against USA
        ("AAA", "BBB"): 0.0, ("CHN", "USA"): 0.0,
    }
    panel = two_year_panel(balanced_entries(deltas, score_deltas=deltas))
    by_country = {a.country: a for a in bloc_classification(panel, (2015, 2023))}
    assert by_country["BBB"].trade_bloc is Bloc.UNCLASSIFIED
    assert by_country["AAA"].trade_bloc is Bloc.US


def test_window_validation():
    deltas = {("AAA", "USA"): 1.0, ("AAA", "CHN"): -1.0, ("CHN", "USA"): 0.0}
    panel = two_year_panel(balanced_entries(deltas, score_deltas=deltas))
    with pytest.raises(ValidationError):
        bloc_classification(panel, (2023, 2015))
    with pytest.raises(ValidationError):
        bloc_classification(panel, (2015, 2024))  # 2024 absent
    with pytest.raises(ValidationError):
        bloc_classification(panel, (2015, 2023), anchors=("USA", "USA"))


# ---------------------------------------------------------------------------
# output files

def test_write_gravity_table(tmp_path):
    panel = gravity_panel(seed=14, years=range(2000, 2004), n_countries=6)
    fit = static_gravity(panel, GravitySpec(controls=CONTROLS))
    path = tmp_path / "gravity.csv"
    write_gravity(path, fit)
    lines = path.read_text().splitlines()
    assert lines[0] == "regressor,coefficient,se"
    assert lines[1].startswith("score,")
    assert len(lines) == 1 + len(fit.names)
    value = float(lines[1].split(",")[1])
    assert value == fit.coef("score")


def test_write_blocs_sorted(tmp_path):
    assignments = [
        BlocAssignment("BBB", Bloc.CHINA, Bloc.BOTH_FARTHER, (2015, 2023)),
        BlocAssignment("AAA", Bloc.US, Bloc.US, (2015, 2023)),
    ]
    path = tmp_path / "blocs.csv"
    write_blocs(path, assignments)
    assert path.read_text() == (
        "country,trade_bloc,geo_bloc\n"
        "AAA,US,US\n"
        "BBB,China,Both-farther\n"
    )
