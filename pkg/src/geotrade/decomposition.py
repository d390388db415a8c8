"""Decomposing bilateral cost changes and running scenario counterfactuals.

Cost changes relative to a base year factor into three multiplicative
pieces: a geopolitical factor built by convolving score changes with an
estimated permanent response path, an observable tariff factor, and an
unobserved remainder recovered from trade shares by the symmetric
two-way identity (the product of a dyad's two share changes over the
product of the two domestic share changes pins down the symmetric cost
change regardless of wages or price indices).

The four scenarios recombine the stored factors, so arithmetic
identities between scenario cost matrices hold bit for bit; each
scenario-year then solves the hat system from the same base world.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .equilibrium import HatShock, HatSolution, WorldData, aggregate_trade, solve_hats
from .errors import ConvergenceError, ValidationError
from .events import ScoreSeries, dyad_key
from .shocks import DecomposedIrf
from .tables import _read_csv, fmt_float, write_rows

DECOMPOSITION_COLUMNS = (
    "origin", "dest", "year",
    "geo_factor", "tariff_factor", "unobserved_factor", "total",
)
SCENARIO_COLUMNS = ("scenario", "year", "trade_index")
WELFARE_COLUMNS = ("scenario", "country", "year", "welfare_ratio")
CONTRIBUTION_COLUMNS = ("item", "value")


class MissingScoreWarning(UserWarning):
    """Dyads without full score coverage fall back to a unit geo factor."""


class FlaggedDyadWarning(UserWarning):
    """Dyads with zero bilateral flows fall back to a unit unobserved factor."""


class Scenario(Enum):
    BASELINE = "Baseline"
    NO_GEO = "NoGeo"
    NO_TARIFF = "NoTariff"
    ONLY_UNOBSERVED = "OnlyUnobserved"


def _permanent_path(irf) -> np.ndarray:
    if isinstance(irf, DecomposedIrf):
        path = np.asarray(irf.permanent, float)
    else:
        path = np.asarray(irf, float)
    if path.ndim != 1 or path.size == 0:
        raise ValidationError("permanent response path must be a nonempty vector")
    if not np.isfinite(path).all():
        raise ValidationError("permanent response path has non-finite values")
    return path


def geo_cost_change(
    scores: Mapping[tuple[str, str], ScoreSeries],
    irf,
    *,
    sigma: float,
    base_year: int,
    years: Sequence[int],
    countries: Sequence[str],
) -> tuple[dict[int, np.ndarray], tuple[tuple[str, str], ...]]:
    """Cumulative log cost changes from the score history.

    For each year, score first-differences since the base year are
    weighted by the permanent response path at the elapsed horizon
    (held at its terminal value beyond the estimated window) and scaled
    by 1/(1 - sigma): better relations lower costs.  Dyads lacking score
    coverage over [base_year, max(years)] keep a zero change and are
    returned as dropped.
    """
    if not sigma > 1:
        raise ValidationError("sigma must exceed 1")
    path = _permanent_path(irf)
    countries = tuple(countries)
    years = sorted(int(t) for t in years)
    if not years or years[0] <= base_year:
        raise ValidationError("decomposition years must all follow the base year")
    index = {c: i for i, c in enumerate(countries)}
    last = years[-1]
    span = last - base_year

    def weight(h: int) -> float:
        return float(path[h]) if h < path.size else float(path[-1])

    n = len(countries)
    delta = {t: np.zeros((n, n)) for t in years}
    dropped = []
    for a, b in [(a, b) for i, a in enumerate(countries) for b in countries[i + 1:]]:
        series = scores.get(dyad_key(a, b))
        if series is None or base_year not in series or last not in series:
            dropped.append(dyad_key(a, b))
            continue
        s = np.array([series.value(base_year + k) for k in range(span + 1)])
        ds = np.diff(s)
        for t in years:
            m = t - base_year
            level = sum(weight(t - (base_year + u)) * ds[u - 1] for u in range(1, m + 1))
            value = level / (1.0 - sigma)
            i, j = index[a], index[b]
            delta[t][i, j] = value
            delta[t][j, i] = value
    if dropped:
        warnings.warn(
            f"{len(dropped)} dyads lack score coverage back to {base_year}; "
            "their geopolitical factor stays at 1",
            MissingScoreWarning,
            stacklevel=2,
        )
    return delta, tuple(dropped)


def value_shares(values) -> np.ndarray:
    """Expenditure shares from a gross value matrix (columns sum to 1)."""
    v = np.asarray(values, float)
    if v.ndim != 2 or v.shape[0] != v.shape[1]:
        raise ValidationError("value matrix must be square")
    if (v < 0).any():
        raise ValidationError("values must be nonnegative")
    col = v.sum(axis=0)
    if (col <= 0).any():
        raise ValidationError("every destination needs positive total expenditure")
    return v / col[None, :]


def head_ries_unobserved(
    pi_base: np.ndarray,
    pi_current: np.ndarray,
    *,
    tau_hat: np.ndarray | None = None,
    delta_geo: np.ndarray | None = None,
    sigma: float,
) -> tuple[np.ndarray, tuple[tuple[int, int], ...]]:
    """Symmetric unobserved cost factors from observed share changes.

    Dyads with a zero bilateral share in either year cannot be inverted;
    they get a unit factor and their (i, j) indices (i < j) are returned
    as flagged.  Zero domestic shares are a hard error: the identity
    needs every country's home share.
    """
    if not sigma > 1:
        raise ValidationError("sigma must exceed 1")
    base = np.asarray(pi_base, float)
    cur = np.asarray(pi_current, float)
    n = base.shape[0]
    if base.shape != (n, n) or cur.shape != (n, n):
        raise ValidationError("share matrices must be square and same-shaped")
    if (np.diag(base) <= 0).any() or (np.diag(cur) <= 0).any():
        d = int(np.argmin(np.minimum(np.diag(base), np.diag(cur))))
        raise ValidationError(f"zero domestic share for country index {d}")
    if tau_hat is None:
        tau_hat = np.ones((n, n))
    tau_hat = np.asarray(tau_hat, float)
    if delta_geo is None:
        delta_geo = np.zeros((n, n))
    delta_geo = np.asarray(delta_geo, float)

    ok = (base > 0) & (cur > 0)
    tradable = ok & ok.T
    with np.errstate(divide="ignore", invalid="ignore"):
        pi_hat = np.where(ok, cur / np.where(base > 0, base, 1.0), np.nan)
        ratio = pi_hat * pi_hat.T / np.outer(np.diag(pi_hat), np.diag(pi_hat))
        eps = (
            ratio ** (1.0 / (2.0 * (1.0 - sigma)))
            * (tau_hat * tau_hat.T) ** -0.5
            * np.exp(-delta_geo)
        )
    flagged = []
    out = np.ones((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if tradable[i, j]:
                out[i, j] = eps[i, j]
                out[j, i] = eps[j, i]
            else:
                flagged.append((i, j))
    if flagged:
        warnings.warn(
            f"{len(flagged)} dyads have zero bilateral shares; "
            "their unobserved factor stays at 1",
            FlaggedDyadWarning,
            stacklevel=2,
        )
    return out, tuple(flagged)


@dataclass
class CostDecomposition:
    """Per-year multiplicative cost factors for every country pair.

    ``total`` is always the stored product (unobserved * tariff) * geo,
    so recombining factors reproduces it exactly.
    """

    countries: tuple[str, ...]
    base_year: int
    sigma: float
    years: tuple[int, ...]
    geo_factor: dict[int, np.ndarray]
    tariff_factor: dict[int, np.ndarray]
    unobserved_factor: dict[int, np.ndarray]
    total: dict[int, np.ndarray]
    dropped_dyads: tuple[tuple[str, str], ...] = ()
    flagged_dyads: dict[int, tuple[tuple[int, int], ...]] | None = None

    def __post_init__(self):
        self.countries = tuple(self.countries)
        self.years = tuple(sorted(int(t) for t in self.years))
        n = len(self.countries)
        if self.flagged_dyads is None:
            self.flagged_dyads = {t: () for t in self.years}
        for t in self.years:
            if t <= self.base_year:
                raise ValidationError("decomposition years must follow the base year")
            for name, table in (
                ("geo_factor", self.geo_factor),
                ("tariff_factor", self.tariff_factor),
                ("unobserved_factor", self.unobserved_factor),
                ("total", self.total),
            ):
                if t not in table:
                    raise ValidationError(f"{name} missing year {t}")
                m = np.asarray(table[t], float)
                if m.shape != (n, n):
                    raise ValidationError(f"{name}[{t}] must be {n}x{n}")
                if not (np.isfinite(m).all() and (m > 0).all()):
                    raise ValidationError(f"{name}[{t}] must be strictly positive")
                table[t] = m
            rebuilt = (self.unobserved_factor[t] * self.tariff_factor[t]) * self.geo_factor[t]
            if not np.array_equal(rebuilt, self.total[t]):
                raise ValidationError(
                    f"total[{t}] is not the product of the stored factors"
                )
            if not np.array_equal(
                self.unobserved_factor[t], self.unobserved_factor[t].T
            ):
                raise ValidationError(f"unobserved_factor[{t}] must be symmetric")


def build_decomposition(
    *,
    countries: Sequence[str],
    base_year: int,
    years: Sequence[int],
    shares_by_year: Mapping[int, np.ndarray],
    tariff_by_year: Mapping[int, np.ndarray] | None = None,
    scores: Mapping[tuple[str, str], ScoreSeries] | None = None,
    irf=None,
    sigma: float = 4.0,
) -> CostDecomposition:
    """Assemble the full factor table from observed inputs.

    ``shares_by_year`` must cover the base year and every target year.
    Tariff matrices are gross factors in levels; their hats are ratios
    to the base year.  Without scores (or without a response path) the
    geo factor is identically 1, and without tariffs so is the tariff
    factor.
    """
    countries = tuple(countries)
    n = len(countries)
    years = tuple(sorted(int(t) for t in years))
    if base_year not in shares_by_year:
        raise ValidationError(f"shares missing for base year {base_year}")

    if (scores is None) != (irf is None):
        raise ValidationError("scores and irf must be supplied together")
    if scores is not None and irf is not None:
        delta_geo, dropped = geo_cost_change(
            scores, irf, sigma=sigma, base_year=base_year, years=years,
            countries=countries,
        )
    else:
        delta_geo = {t: np.zeros((n, n)) for t in years}
        dropped = ()

    def tariff_level(t: int) -> np.ndarray:
        if tariff_by_year is None or t not in tariff_by_year:
            return np.ones((n, n))
        m = np.asarray(tariff_by_year[t], float)
        if m.shape != (n, n):
            raise ValidationError(f"tariff matrix for {t} must be {n}x{n}")
        if not (np.isfinite(m).all() and (m >= 1.0).all()):
            raise ValidationError(f"tariff matrix for {t} must hold gross factors >= 1")
        return m

    tau_base = tariff_level(base_year)
    pi_base = np.asarray(shares_by_year[base_year], float)
    geo, tariff, unobs, total, flagged = {}, {}, {}, {}, {}
    for t in years:
        if t not in shares_by_year:
            raise ValidationError(f"shares missing for year {t}")
        tau_hat = tariff_level(t) / tau_base
        eps, flags = head_ries_unobserved(
            pi_base, np.asarray(shares_by_year[t], float),
            tau_hat=tau_hat, delta_geo=delta_geo[t], sigma=sigma,
        )
        g = np.exp(delta_geo[t])
        np.fill_diagonal(g, 1.0)
        np.fill_diagonal(tau_hat, 1.0)
        np.fill_diagonal(eps, 1.0)
        geo[t] = g
        tariff[t] = tau_hat
        unobs[t] = eps
        total[t] = (eps * tau_hat) * g
        flagged[t] = flags
    return CostDecomposition(
        countries=countries,
        base_year=base_year,
        sigma=sigma,
        years=years,
        geo_factor=geo,
        tariff_factor=tariff,
        unobserved_factor=unobs,
        total=total,
        dropped_dyads=dropped,
        flagged_dyads=flagged,
    )


def scenario_costs(dec: CostDecomposition, scenario: Scenario, year: int) -> HatShock:
    """Cost shock for one scenario-year.

    The price-relevant shock recombines stored factors (so Baseline
    equals NoGeo times the geo factor exactly); the tariff side of the
    shock follows whether the scenario lets tariffs move.
    """
    if year not in dec.total:
        raise ValidationError(f"decomposition has no year {year}")
    eps = dec.unobserved_factor[year]
    tau = dec.tariff_factor[year]
    geo = dec.geo_factor[year]
    n = len(dec.countries)
    ones = np.ones((n, n))
    if scenario is Scenario.BASELINE:
        return HatShock(dec.total[year], tau)
    if scenario is Scenario.NO_GEO:
        return HatShock(eps * tau, tau)
    if scenario is Scenario.NO_TARIFF:
        return HatShock(eps * geo, ones)
    if scenario is Scenario.ONLY_UNOBSERVED:
        return HatShock(eps.copy(), ones)
    raise ValidationError(f"unknown scenario {scenario!r}")


@dataclass
class ScenarioResult:
    """Trade index and welfare paths for one scenario across years."""

    scenario: Scenario
    base_year: int
    countries: tuple[str, ...]
    years: tuple[int, ...]
    trade_index: np.ndarray
    welfare: dict[int, np.ndarray]
    solutions: dict[int, HatSolution]

    def index_at(self, year: int) -> float:
        return float(self.trade_index[self.years.index(year)])


def run_counterfactuals(
    world: WorldData,
    dec: CostDecomposition,
    scenarios: Sequence[Scenario] = tuple(Scenario),
    *,
    damping: float = 0.5,
    tol: float = 1e-10,
    max_iter: int = 100_000,
) -> dict[Scenario, ScenarioResult]:
    """Solve every scenario-year from the same base world."""
    if world.countries != dec.countries:
        raise ValidationError("world and decomposition country lists differ")
    if abs(world.sigma - dec.sigma) > 1e-12:
        raise ValidationError("world and decomposition disagree on sigma")
    out: dict[Scenario, ScenarioResult] = {}
    for scenario in scenarios:
        indices, welfare_by_year, solutions = [], {}, {}
        for year in dec.years:
            shock = scenario_costs(dec, scenario, year)
            try:
                sol = solve_hats(
                    world, shock, damping=damping, tol=tol, max_iter=max_iter
                )
            except ConvergenceError as exc:
                raise ConvergenceError(
                    f"{scenario.value} {year}: {exc.what}",
                    exc.iterations, exc.residual,
                ) from exc
            indices.append(aggregate_trade(world, sol))
            welfare_by_year[year] = sol.welfare
            solutions[year] = sol
        out[scenario] = ScenarioResult(
            scenario=scenario,
            base_year=dec.base_year,
            countries=world.countries,
            years=dec.years,
            trade_index=np.array(indices),
            welfare=welfare_by_year,
            solutions=solutions,
        )
    return out


@dataclass
class ContributionTable:
    """Scenario growth and pairwise contribution arithmetic."""

    base_year: int
    year: int
    growth: dict[Scenario, float]
    geo: float
    tariff: float
    combined: float
    annualized: bool = False


def contributions(
    results: Mapping[Scenario, ScenarioResult],
    year: int | None = None,
    *,
    annualize: bool = False,
) -> ContributionTable:
    """Growth in percent per scenario plus the difference arithmetic.

    Geo contribution is Baseline minus NoGeo, tariff is Baseline minus
    NoTariff, combined is Baseline minus OnlyUnobserved, all in
    percentage points.  With ``annualize``, each index first becomes a
    geometric mean annual growth rate over the window.
    """
    missing = [s for s in Scenario if s not in results]
    if missing:
        raise ValidationError(f"missing scenarios {[s.value for s in missing]}")
    base_result = results[Scenario.BASELINE]
    if year is None:
        year = base_result.years[-1]
    span = year - base_result.base_year

    def growth(s: Scenario) -> float:
        idx = results[s].index_at(year)
        if annualize:
            return 100.0 * (idx ** (1.0 / span) - 1.0)
        return 100.0 * (idx - 1.0)

    g = {s: growth(s) for s in Scenario}
    return ContributionTable(
        base_year=base_result.base_year,
        year=year,
        growth=g,
        geo=g[Scenario.BASELINE] - g[Scenario.NO_GEO],
        tariff=g[Scenario.BASELINE] - g[Scenario.NO_TARIFF],
        combined=g[Scenario.BASELINE] - g[Scenario.ONLY_UNOBSERVED],
        annualized=annualize,
    )


@dataclass
class WelfareStats:
    """Distribution of per-country welfare ratios for one comparison."""

    scenario: Scenario
    year: int
    countries: tuple[str, ...]
    ratios: np.ndarray
    mean: float
    median: float
    std: float
    skewness: float
    n_gainers: int
    n_losers: int
    share_gainers: float
    share_losers: float
    min: float
    max: float


def welfare_distribution(
    baseline: ScenarioResult,
    counterfactual: ScenarioResult,
    year: int | None = None,
) -> WelfareStats:
    """Summarize baseline/counterfactual welfare ratios across countries.

    A ratio above 1 means the factor the counterfactual removes was
    beneficial for that country (removing it would hurt).
    """
    if baseline.countries != counterfactual.countries:
        raise ValidationError("scenario country lists differ")
    if baseline.base_year != counterfactual.base_year:
        raise ValidationError("scenarios have different base years")
    if year is None:
        year = baseline.years[-1]
    if year not in baseline.welfare or year not in counterfactual.welfare:
        raise ValidationError(f"year {year} not solved in both scenarios")
    ratios = baseline.welfare[year] / counterfactual.welfare[year]
    n = ratios.size
    std = float(np.std(ratios, ddof=1)) if n > 1 else 0.0
    # bias-corrected skewness needs n >= 3 and positive dispersion
    skewness = float(stats.skew(ratios, bias=False)) if std > 0 and n > 2 else 0.0
    gainers = int(np.sum(ratios > 1.0))
    losers = int(np.sum(ratios < 1.0))
    return WelfareStats(
        scenario=counterfactual.scenario,
        year=year,
        countries=baseline.countries,
        ratios=ratios,
        mean=float(np.mean(ratios)),
        median=float(np.median(ratios)),
        std=std,
        skewness=skewness,
        n_gainers=gainers,
        n_losers=losers,
        share_gainers=gainers / n,
        share_losers=losers / n,
        min=float(np.min(ratios)),
        max=float(np.max(ratios)),
    )


# ---------------------------------------------------------------------------
# tables

def write_decomposition(path, dec: CostDecomposition) -> None:
    rows = []
    n = len(dec.countries)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            for t in dec.years:
                rows.append((
                    dec.countries[i], dec.countries[j], t,
                    fmt_float(dec.geo_factor[t][i, j]),
                    fmt_float(dec.tariff_factor[t][i, j]),
                    fmt_float(dec.unobserved_factor[t][i, j]),
                    fmt_float(dec.total[t][i, j]),
                ))
    write_rows(path, DECOMPOSITION_COLUMNS, rows)


def read_decomposition(source, *, base_year: int, sigma: float = 4.0) -> CostDecomposition:
    df = _read_csv(source)
    missing = [c for c in DECOMPOSITION_COLUMNS if c not in df.columns]
    if missing:
        raise ValidationError(f"decomposition table missing columns {missing}")
    countries = tuple(sorted(set(df["origin"]) | set(df["dest"])))
    index = {c: i for i, c in enumerate(countries)}
    years = tuple(sorted(int(t) for t in df["year"].unique()))
    n = len(countries)
    geo = {t: np.ones((n, n)) for t in years}
    tariff = {t: np.ones((n, n)) for t in years}
    unobs = {t: np.ones((n, n)) for t in years}
    for row in df.itertuples(index=False):
        i, j, t = index[row.origin], index[row.dest], int(row.year)
        geo[t][i, j] = float(row.geo_factor)
        tariff[t][i, j] = float(row.tariff_factor)
        unobs[t][i, j] = float(row.unobserved_factor)
    total = {t: (unobs[t] * tariff[t]) * geo[t] for t in years}
    for row in df.itertuples(index=False):
        i, j, t = index[row.origin], index[row.dest], int(row.year)
        if total[t][i, j] != float(row.total):
            raise ValidationError(
                f"total for ({row.origin}, {row.dest}, {t}) does not equal "
                "the product of its factors"
            )
    return CostDecomposition(
        countries=countries,
        base_year=base_year,
        sigma=sigma,
        years=years,
        geo_factor=geo,
        tariff_factor=tariff,
        unobserved_factor=unobs,
        total=total,
    )


def write_scenarios(path, results: Mapping[Scenario, ScenarioResult]) -> None:
    rows = []
    for scenario in Scenario:
        if scenario not in results:
            continue
        res = results[scenario]
        for k, year in enumerate(res.years):
            rows.append((scenario.value, year, fmt_float(res.trade_index[k])))
    write_rows(path, SCENARIO_COLUMNS, rows)


def write_welfare(path, results: Mapping[Scenario, ScenarioResult]) -> None:
    rows = []
    for scenario in Scenario:
        if scenario not in results:
            continue
        res = results[scenario]
        for year in res.years:
            for i, country in enumerate(res.countries):
                rows.append((
                    scenario.value, country, year,
                    fmt_float(res.welfare[year][i]),
                ))
    write_rows(path, WELFARE_COLUMNS, rows)


def write_contributions(path, table: ContributionTable) -> None:
    rows = [
        (f"growth_{s.value}", fmt_float(table.growth[s])) for s in Scenario
    ]
    rows += [
        ("contribution_geo", fmt_float(table.geo)),
        ("contribution_tariff", fmt_float(table.tariff)),
        ("contribution_combined", fmt_float(table.combined)),
    ]
    write_rows(path, CONTRIBUTION_COLUMNS, rows)
