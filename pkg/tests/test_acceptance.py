"""Acceptance gate: ten independent checks over the full pipeline.

Each test prints one ``[criterion NN] PASS/FAIL`` line (visible under
``pytest -s``) and enforces the stated tolerance and, where one applies,
the runtime budget.  Everything here is deterministic: fixed seeds, no
environment dependence.
"""

from __future__ import annotations

import itertools
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from geotrade.cli import main as cli_main
from geotrade.decomposition import (
    CostDecomposition,
    Scenario,
    ScenarioResult,
    contributions,
    head_ries_unobserved,
    run_counterfactuals,
    welfare_distribution,
)
from geotrade.equilibrium import HatShock, calibrate, solve_hats
from geotrade.events import EventRecord, Economic, dynamic_scores, quad_for_root
from geotrade.lp import Irf, KIND_AUTOCORR, KIND_OUTCOME, LpSpec, lp_irf
from geotrade.panel import (
    DriscollKraay,
    FeSpec,
    IID,
    Panel,
    THREE_WAY_FE,
    absorb_and_fit,
    build_panel,
    drop_singletons,
)
from geotrade.shocks import decompose, transitory_weights
from geotrade.synthworld import (
    WorldConfig,
    generate_world,
    level_solve,
    random_level_world,
)

import pandas as pd


def verdict(num: int, label: str, ok: bool, detail: str) -> None:
    print(f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'} {label}: {detail}")
    assert ok, f"criterion {num} failed ({label}): {detail}"


CODES = ["".join(c) for c in itertools.islice(itertools.product("ABCDEFGHIJKLM", repeat=3), 2000)]


# ---------------------------------------------------------------------------
# 1. score engine bounds, carry-forward, and the two-year hand oracle

def test_criterion_01_score_engine():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    events = []
    for i in range(1000):
        a, b = CODES[2 * i], CODES[2 * i + 1]
        years = sorted(rng.choice(np.arange(1990, 2020), size=rng.integers(3, 12),
                                  replace=False))
        for year in years:
            for _ in range(int(rng.integers(1, 4))):
                root = int(rng.integers(1, 21))
                events.append(EventRecord(
                    origin=a, partner=b, year=int(year), cameo_root=root,
                    cameo_quad=quad_for_root(root),
                    goldstein=float(rng.uniform(-10, 10)),
                    economic=Economic.NOT_ECONOMIC,
                    description=f"stream-{i}-{year}-{_}",
                ))
    series_map = dynamic_scores(events, decay=0.3)

    in_bounds = True
    carries = True
    for series in series_map.values():
        for raw in series.raw:
            if raw is not None and not -1.0 <= raw <= 1.0:
                in_bounds = False
        if any(not -1.0 <= s <= 1.0 for s in series.dynamic):
            in_bounds = False
        for k, n in enumerate(series.event_count):
            if k > 0 and n == 0 and series.dynamic[k] != series.dynamic[k - 1]:
                carries = False

    # year 1: raw 0 over two events; year 2: one +10 event,
    # stock 0.7*2 + 1 = 2.4, so S2 = (1/2.4)*1
    oracle = [
        EventRecord("USA", "RUS", 2000, 4, quad_for_root(4), 5.0, Economic.TRADE, "a"),
        EventRecord("USA", "RUS", 2000, 11, quad_for_root(11), -5.0, Economic.TRADE, "b"),
        EventRecord("USA", "RUS", 2001, 5, quad_for_root(5), 10.0, Economic.TRADE, "c"),
    ]
    s2 = dynamic_scores(oracle, decay=0.3)[("RUS", "USA")].value(2001)
    oracle_ok = abs(s2 - 1.0 / 2.4) <= 1e-12

    elapsed = time.perf_counter() - t0
    ok = in_bounds and carries and oracle_ok and elapsed < 5.0
    verdict(1, "score engine", ok,
            f"1000 streams, bounds={in_bounds}, carry={carries}, "
            f"|S2-1/2.4|<=1e-12={oracle_ok}, {elapsed:.1f}s (budget 5s)")


# ---------------------------------------------------------------------------
# 2. FE absorption + WLS against dense dummy least squares

def _dense_dummy_fit(panel: Panel, outcome: str, regressors, fe: FeSpec) -> np.ndarray:
    y = panel.column(outcome)
    X = np.column_stack([panel.column(c) for c in regressors])
    blocks = [X]
    for codes in panel.fe_codes(fe):
        uniq, inv = np.unique(codes, return_inverse=True)
        D = np.zeros((len(panel), len(uniq)))
        D[np.arange(len(panel)), inv] = 1.0
        blocks.append(D)
    sol = np.linalg.lstsq(np.hstack(blocks), y, rcond=None)[0]
    return sol[: X.shape[1]]


def test_criterion_02_absorption_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(100 + seed)
        n_c = int(rng.integers(5, 8))
        n_y = int(rng.integers(5, 9))
        rows = []
        for o in CODES[:n_c]:
            for d in CODES[:n_c]:
                if o == d:
                    continue
                for t in range(2000, 2000 + n_y):
                    # keep panels unbalanced but leave residual dof for
                    # three families of dummies
                    if rng.uniform() < 0.25:
                        continue
                    rows.append((o, d, t))
        frame = pd.DataFrame(rows, columns=["origin", "dest", "year"])
        assert len(frame) <= 500
        frame["x1"] = rng.normal(size=len(frame))
        frame["x2"] = rng.normal(size=len(frame))
        frame["y"] = (1.5 * frame["x1"] - 0.5 * frame["x2"]
                      + rng.normal(size=len(frame)))
        panel = Panel(frame)

        fit = absorb_and_fit(panel, "y", ["x1", "x2"], THREE_WAY_FE, IID())
        keep, n_dropped = drop_singletons(panel.fe_codes(THREE_WAY_FE))
        kept = panel.subset(keep) if n_dropped else panel
        oracle = _dense_dummy_fit(kept, "y", ["x1", "x2"], THREE_WAY_FE)
        worst = max(worst, float(np.max(np.abs(fit.beta - oracle))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 30.0
    verdict(2, "absorption vs dense dummies", ok,
            f"50 panels, max |beta - oracle| = {worst:.2e} (tol 1e-6), "
            f"{elapsed:.1f}s (budget 30s)")


# ---------------------------------------------------------------------------
# 3. local-projection recovery of the planted hump

def test_criterion_03_lp_recovery():
    t0 = time.perf_counter()
    horizons = tuple(range(-4, 9))
    covered, false_pos = [], []
    for seed in range(200):
        cfg = WorldConfig(flavor="lp", n_countries=6, n_years=40, seed=seed)
        world = generate_world(cfg)
        scores = dynamic_scores(world.events, cfg.decay)
        panel = build_panel(world.trade, scores).panel
        # LP residuals at horizon h are MA(h): the HAC window must span
        # the longest horizon, not the short T-based default
        spec = LpSpec(outcome="log_trade", shock="score", horizons=horizons,
                      lags=3, se_engine=DriscollKraay(bandwidth=6))
        irf = lp_irf(panel, spec)
        for i, h in enumerate(irf.horizons):
            if h >= 0:
                truth = world.truth.beta_at(h)
                covered.append(irf.band_low[i] <= truth <= irf.band_high[i])
            else:
                false_pos.append(not irf.band_low[i] <= 0.0 <= irf.band_high[i])
    coverage = float(np.mean(covered))
    fpr = float(np.mean(false_pos))
    peak = max(WorldConfig().beta_path)
    elapsed = time.perf_counter() - t0
    ok = peak == 0.28 and coverage >= 0.90 and fpr <= 0.10 and elapsed < 600.0
    verdict(3, "LP recovery of planted hump", ok,
            f"200 worlds, peak {peak}, coverage {coverage:.3f} (>=0.90), "
            f"pre-horizon FPR {fpr:.3f} (<=0.10), {elapsed:.0f}s (budget 600s)")


# ---------------------------------------------------------------------------
# 4. Driscoll-Kraay vs IID coverage under a dependent null

def test_criterion_04_dk_coverage():
    t0 = time.perf_counter()
    fe = FeSpec(("dyad",))
    hits = {"dk": [], "iid": []}
    for seed in range(500):
        cfg = WorldConfig(
            flavor="lp", n_countries=6, n_years=50, seed=seed,
            beta_path=(0.0,), noise_ar=0.5, noise_common_scale=0.2,
            score_common_weight=0.8,
        )
        world = generate_world(cfg)
        scores = dynamic_scores(world.events, cfg.decay)
        panel = build_panel(world.trade, scores).panel
        for name, engine in (("dk", DriscollKraay()), ("iid", IID())):
            spec = LpSpec(outcome="log_trade", shock="score", horizons=(0,),
                          lags=1, fe=fe, se_engine=engine)
            irf = lp_irf(panel, spec)
            hits[name].append(irf.band_low[0] <= 0.0 <= irf.band_high[0])
    dk = float(np.mean(hits["dk"]))
    iid = float(np.mean(hits["iid"]))
    elapsed = time.perf_counter() - t0
    ok = dk >= 0.90 and iid < 0.80 and elapsed < 600.0
    verdict(4, "DK vs IID coverage", ok,
            f"500 replications, DK {dk:.3f} (>=0.90) where IID {iid:.3f} (<0.80), "
            f"{elapsed:.0f}s (budget 600s)")


# ---------------------------------------------------------------------------
# 5. deconvolution exactness

def _irf(horizons, beta, kind) -> Irf:
    beta = np.asarray(beta, float)
    z = np.zeros_like(beta)
    return Irf(kind=kind, horizons=tuple(horizons), beta=beta, se=z,
               band_low=beta, band_high=beta, n_obs=np.full(beta.size, 10))


def test_criterion_05_deconvolution():
    rng = np.random.default_rng(5)
    e1_ok = True
    for _ in range(100):
        H = int(rng.integers(2, 13))
        phi = np.concatenate([[1.0], rng.uniform(-0.95, 0.95, H - 1)])
        p = transitory_weights(phi)
        conv = np.convolve(phi, p)[:H]
        e1 = np.zeros(H)
        e1[0] = 1.0
        if np.max(np.abs(conv - e1)) > 1e-12:
            e1_ok = False

    hand = transitory_weights([1.0, 0.5, 0.0])
    hand_ok = np.array_equal(hand, [1.0, -0.5, 0.25])

    bitwise_ok = True
    for _ in range(20):
        H = int(rng.integers(2, 10))
        beta = rng.normal(0.1, 0.2, H)
        acf = np.concatenate([[1.0], rng.uniform(-0.5, 0.9, H - 1)])
        dec = decompose(_irf(range(H), beta, KIND_OUTCOME),
                        _irf(range(H), acf, KIND_AUTOCORR))
        if not np.array_equal(np.diff(dec.permanent, prepend=0.0), dec.transitory):
            bitwise_ok = False

    ok = e1_ok and hand_ok and bitwise_ok
    verdict(5, "deconvolution exactness", ok,
            f"conv(phi,p)=e1 within 1e-12 x100: {e1_ok}, "
            f"hand example (1,-0.5,0.25) exact: {hand_ok}, "
            f"permanent diffs bit-for-bit: {bitwise_ok}")


# ---------------------------------------------------------------------------
# 6. hat-algebra vs level-space equivalence

def test_criterion_06_hat_level_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    worst_ones = 0.0
    for seed in range(100):
        n = 2 + seed % 5
        prim, base = random_level_world(seed, n_countries=n,
                                        with_tariffs=bool(seed % 2))
        rng = np.random.default_rng(10_000 + seed)
        d_hat = rng.uniform(0.9, 1.2, (n, n))
        np.fill_diagonal(d_hat, 1.0)
        tau_hat = rng.uniform(1.0, 1.1, (n, n))
        np.fill_diagonal(tau_hat, 1.0)
        shocked = level_solve(
            prim["labor"], prim["productivity"], prim["cost"] * d_hat,
            prim["tariff"] * tau_hat, sigma=prim["sigma"],
        )
        world = calibrate(base.flows, CODES[:n], tariff=prim["tariff"],
                          sigma=prim["sigma"])
        sol = solve_hats(world, HatShock(d_hat, tau_hat), tol=1e-12)
        for got, want in (
            (sol.w_hat, shocked.wages / base.wages),
            (sol.P_hat, shocked.prices / base.prices),
            (sol.X_hat, shocked.expenditure / base.expenditure),
        ):
            worst = max(worst, float(np.max(np.abs(got / want - 1.0))))

        calm = solve_hats(world, HatShock.none(n), tol=1e-10)
        for hat in (calm.w_hat, calm.P_hat, calm.X_hat, calm.pi_hat):
            worst_ones = max(worst_ones, float(np.max(np.abs(hat - 1.0))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-8 and worst_ones <= 1e-10 and elapsed < 120.0
    verdict(6, "hat vs level equivalence", ok,
            f"100 worlds N<=6, max rel err {worst:.2e} (tol 1e-8), "
            f"no-shock max |hat-1| {worst_ones:.2e} (tol 1e-10), "
            f"{elapsed:.0f}s (budget 120s)")


# ---------------------------------------------------------------------------
# 7. Head-Ries inversion round trip

def _symmetric(rng, n, lo, hi):
    m = rng.uniform(lo, hi, (n, n))
    m = np.sqrt(m * m.T)
    np.fill_diagonal(m, 1.0)
    return m


def test_criterion_07_head_ries_roundtrip():
    worst = 0.0
    for seed in range(50):
        n = 3 + seed % 4
        rng = np.random.default_rng(700 + seed)
        values = rng.uniform(1.0, 4.0, (n, n))
        values[np.diag_indices(n)] += 12.0
        world = calibrate(values, CODES[:n], sigma=4.0)

        variant = seed % 3
        eps_true = _symmetric(rng, n, 0.8, 1.3)
        geo_true = np.log(_symmetric(rng, n, 0.9, 1.15))
        tau_hat = rng.uniform(1.0, 1.1, (n, n))
        np.fill_diagonal(tau_hat, 1.0)
        if variant == 1:                       # tariff-only
            eps_true = np.ones((n, n))
            geo_true = np.zeros((n, n))
        elif variant == 2:                     # geo-only
            eps_true = np.ones((n, n))
            tau_hat = np.ones((n, n))

        d_hat = eps_true * tau_hat * np.exp(geo_true)
        np.fill_diagonal(d_hat, 1.0)
        sol = solve_hats(world, HatShock(d_hat, tau_hat), tol=1e-12)
        eps, flagged = head_ries_unobserved(
            world.pi, sol.pi_hat * world.pi,
            tau_hat=None if variant == 2 else tau_hat,
            delta_geo=None if variant == 1 else geo_true,
            sigma=4.0,
        )
        assert flagged == ()
        worst = max(worst, float(np.max(np.abs(eps / eps_true - 1.0))))
    ok = worst <= 1e-6
    verdict(7, "Head-Ries round trip", ok,
            f"50 worlds incl. tariff-only and geo-only, "
            f"max rel err {worst:.2e} (tol 1e-6)")


# ---------------------------------------------------------------------------
# 8. counterfactual contribution arithmetic and signs

def test_criterion_08_counterfactual_arithmetic():
    cfg = WorldConfig(flavor="ge", n_countries=4, n_years=6, seed=8,
                      geo_step=0.05, tariff_rate=0.0, unobserved_scale=0.04)
    world = generate_world(cfg)
    truth = world.truth
    dec = CostDecomposition(
        countries=truth.countries, base_year=truth.base_year, sigma=truth.sigma,
        years=truth.years[1:],
        geo_factor=truth.geo_factor, tariff_factor=truth.tariff_factor,
        unobserved_factor=truth.unobserved_factor, total=truth.total_factor,
    )
    base = world.trade[world.trade["year"] == truth.base_year]
    matrix = base.pivot(index="origin", columns="dest", values="value").to_numpy()
    ge_world = calibrate(matrix, truth.countries, sigma=truth.sigma)
    results = run_counterfactuals(ge_world, dec)

    arithmetic_ok = True
    geo_negative = True
    nogeo_matches = True
    for year in dec.years:
        table = contributions(results, year)
        growth = {s: 100.0 * (results[s].index_at(year) - 1.0) for s in Scenario}
        if table.geo != growth[Scenario.BASELINE] - growth[Scenario.NO_GEO]:
            arithmetic_ok = False
        if table.tariff != growth[Scenario.BASELINE] - growth[Scenario.NO_TARIFF]:
            arithmetic_ok = False
        if table.combined != growth[Scenario.BASELINE] - growth[Scenario.ONLY_UNOBSERVED]:
            arithmetic_ok = False
        if not table.geo < 0.0:
            geo_negative = False
        gap = abs(results[Scenario.NO_GEO].index_at(year)
                  - results[Scenario.ONLY_UNOBSERVED].index_at(year))
        if gap > 1e-8:
            nogeo_matches = False

    ok = arithmetic_ok and geo_negative and nogeo_matches
    verdict(8, "contribution arithmetic", ok,
            f"differences exact: {arithmetic_ok}, geo contribution negative "
            f"every year: {geo_negative}, NoGeo == OnlyUnobserved within "
            f"solver tolerance: {nogeo_matches}")


# ---------------------------------------------------------------------------
# 9. welfare distribution statistics

def _result(scenario: Scenario, welfare: np.ndarray) -> ScenarioResult:
    return ScenarioResult(
        scenario=scenario, base_year=2000, countries=tuple(CODES[: welfare.size]),
        years=(2001,), trade_index=np.array([1.0]), welfare={2001: welfare},
        solutions={},
    )


def test_criterion_09_welfare_statistics():
    base = _result(Scenario.BASELINE, np.array([0.5, 1.0, 1.5]))
    cf = _result(Scenario.NO_GEO, np.ones(3))
    stats = welfare_distribution(base, cf)
    hand_ok = (
        stats.mean == 1.0 and stats.median == 1.0 and stats.std == 0.5
        and stats.n_gainers == 1 and stats.n_losers == 1
        and stats.min == 0.5 and stats.max == 1.5
    )

    same = _result(Scenario.BASELINE, np.array([0.8, 1.1, 1.3, 0.9]))
    ident = welfare_distribution(same, _result(Scenario.NO_TARIFF, same.welfare[2001]))
    identity_ok = (
        np.array_equal(ident.ratios, np.ones(4))
        and ident.n_gainers == 0 and ident.n_losers == 0
        and ident.std == 0.0 and ident.skewness == 0.0
    )

    ok = hand_ok and identity_ok
    verdict(9, "welfare statistics", ok,
            f"hand oracle exact: {hand_ok}, identity pair all ones: {identity_ok}")


# ---------------------------------------------------------------------------
# 10. end-to-end determinism through the command line

def _run_pipeline(root: Path) -> None:
    cwd = os.getcwd()
    os.chdir(root)
    try:
        for argv in (
            ["synth", "--flavor", "lp", "--n-countries", "6", "--n-years", "24",
             "--seed", "42", "--tariff-rate", "0.05", "--out", "world"],
            ["score", "--events", "world/events.csv", "--out", "scores.csv"],
            ["panel", "--trade", "world/trade.csv", "--scores", "scores.csv",
             "--tariffs", "world/tariffs.csv", "--out", "panel.csv"],
            ["lp", "--panel", "panel.csv", "--horizons", "-3", "6", "--decompose",
             "--seed", "42", "--out", "lpout"],
            ["counterfactual", "--trade", "world/trade.csv", "--scores", "scores.csv",
             "--response", "lpout/shock_decomposition.csv",
             "--tariffs", "world/tariffs.csv", "--base-year", "1997",
             "--out", "counterfactual"],
        ):
            code = cli_main(argv)
            assert code == 0, (argv, code)
    finally:
        os.chdir(cwd)


def test_criterion_10_end_to_end_determinism(tmp_path):
    t0 = time.perf_counter()
    runs = []
    for name in ("first", "second"):
        root = tmp_path / name
        root.mkdir()
        _run_pipeline(root)
        runs.append({
            str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()
        })
    same_names = sorted(runs[0]) == sorted(runs[1])
    same_bytes = runs[0] == runs[1]
    n_files = len(runs[0])
    elapsed = time.perf_counter() - t0
    ok = same_names and same_bytes and n_files >= 12
    verdict(10, "end-to-end determinism", ok,
            f"synth>score>lp --decompose>counterfactual twice, {n_files} files "
            f"byte-identical: {same_bytes}, {elapsed:.0f}s")
