"""Synthetic worlds with known ground truth for estimators and solvers.

Three flavors share one event generator:

- ``lp``: dyad scores follow an AR(1) with a known coefficient, planted
  by inverting the score recursion event by event; log trade responds
  to current and lagged scores through a distributed-lag kernel chosen
  so the per-horizon dynamic response equals a configured path.
- ``gravity``: a static score effect plus planted control effects under
  origin-year and destination-year heterogeneity.
- ``ge``: per-year market-clearing flows from a level-space Armington
  solver under planted cost-factor paths; the level solver doubles as
  the independent oracle for the hat-space solver.

Draws happen in a fixed documented order from one seeded generator and
all emitted floats use shortest round-trip formatting, so a config
reproduces its output files byte for byte.
"""

from __future__ import annotations

import itertools
import json
import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConvergenceError, NumericalError, ValidationError
from .events import (
    EVENT_COLUMNS,
    Economic,
    EventRecord,
    ScoreSeries,
    dyad_key,
    dynamic_scores,
    quad_for_root,
)
from .tables import fmt_float, write_flow_table, write_rows

FLAVORS = ("lp", "gravity", "ge")

# dynamic response path used when none is configured: hump peaking at
# 0.28 a few years out, settling toward a positive long-run level
DEFAULT_BETA_PATH = (0.05, 0.16, 0.28, 0.24, 0.20, 0.18, 0.17, 0.165, 0.16)

CONTROLS_COLUMNS = ("origin", "dest", "log_distance", "contiguity")


@dataclass(frozen=True)
class WorldConfig:
    """Parameters of one synthetic world."""

    n_countries: int = 8
    start_year: int = 1980
    n_years: int = 30
    flavor: str = "lp"
    seed: int = 0
    # score process
    ar_coef: float = 0.7
    innovation_scale: float = 0.08
    events_per_year: float = 4.0
    count_jitter: bool = False
    decay: float = 0.3
    score_common_weight: float = 0.0
    # trade response
    beta_path: tuple[float, ...] = DEFAULT_BETA_PATH
    alpha: float = 0.5
    distance_decay: float = -1.2
    contiguity_effect: float = 0.8
    # heterogeneity and noise
    fe_scale: float = 0.5
    home_premium: float = 3.0
    noise_scale: float = 0.25
    noise_ar: float = 0.0
    noise_common_scale: float = 0.0
    # tariffs (net rate reached in the final year, linear ramp)
    tariff_rate: float = 0.0
    # ge flavor
    sigma: float = 4.0
    unobserved_scale: float = 0.05
    geo_step: float = 0.0

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise ValidationError(f"flavor must be one of {FLAVORS}, got {self.flavor!r}")
        if self.n_countries < 3:
            raise ValidationError("need at least 3 countries")
        if self.n_countries > len(_ALL_CODES):
            raise ValidationError(f"at most {len(_ALL_CODES)} countries supported")
        if self.n_years < 2:
            raise ValidationError("need at least 2 years")
        if len(self.beta_path) == 0:
            raise ValidationError("beta_path must be nonempty")
        if self.n_years <= len(self.beta_path) // 2 and self.flavor == "lp":
            raise ValidationError("too few years for the configured response path")
        if not -1.0 < self.ar_coef < 1.0:
            raise ValidationError("ar_coef must lie in (-1, 1)")
        if not 0.0 <= self.score_common_weight < 1.0:
            raise ValidationError("score_common_weight must lie in [0, 1)")
        if not 0.0 <= self.noise_ar < 1.0:
            raise ValidationError("noise_ar must lie in [0, 1)")
        if not 0.0 < self.decay <= 1.0:
            raise ValidationError("decay must lie in (0, 1]")
        if self.events_per_year < 1.0:
            raise ValidationError("events_per_year must be at least 1")
        if self.sigma <= 1.0:
            raise ValidationError("sigma must exceed 1")
        for name in ("innovation_scale", "fe_scale", "noise_scale",
                     "noise_common_scale", "tariff_rate", "unobserved_scale"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")

    @property
    def years(self) -> range:
        return range(self.start_year, self.start_year + self.n_years)


@dataclass
class GroundTruth:
    """What the generator planted, in estimator-facing terms."""

    flavor: str
    countries: tuple[str, ...]
    years: tuple[int, ...]
    rho: float
    beta_path: tuple[float, ...]
    psi: tuple[float, ...]
    alpha: float | None
    control_effects: dict[str, float]
    scores: dict[tuple[str, str], ScoreSeries]
    sigma: float | None = None
    base_year: int | None = None
    geo_factor: dict[int, np.ndarray] = field(default_factory=dict)
    tariff_factor: dict[int, np.ndarray] = field(default_factory=dict)
    unobserved_factor: dict[int, np.ndarray] = field(default_factory=dict)
    total_factor: dict[int, np.ndarray] = field(default_factory=dict)
    hats: dict[int, dict[str, np.ndarray]] = field(default_factory=dict)

    def beta_at(self, horizon: int) -> float:
        """Planted dynamic response at any horizon.

        Beyond the configured path the response decays geometrically at
        the score AR coefficient; before horizon 0 it is zero.
        """
        if horizon < 0:
            return 0.0
        if horizon < len(self.beta_path):
            return self.beta_path[horizon]
        return self.beta_path[-1] * self.rho ** (horizon - len(self.beta_path) + 1)


@dataclass
class GeneratedWorld:
    config: WorldConfig
    countries: tuple[str, ...]
    events: list[EventRecord]
    trade: pd.DataFrame
    tariffs: pd.DataFrame
    controls: pd.DataFrame
    truth: GroundTruth


def psi_from_beta(beta_path, rho: float) -> np.ndarray:
    """Distributed-lag kernel whose dynamic response is ``beta_path``.

    When scores follow an AR(1) with coefficient ``rho``, a projection
    of the outcome at horizon h on the current score compounds the
    kernel with the score's own propagation; first-differencing against
    the discounted previous response undoes it.
    """
    beta = np.asarray(beta_path, float)
    return np.concatenate([beta[:1], beta[1:] - rho * beta[:-1]])


_ALL_CODES = tuple(
    "".join(p) for p in itertools.islice(
        itertools.product(string.ascii_uppercase, repeat=3), 2000)
)


def _codes(n: int) -> tuple[str, ...]:
    return _ALL_CODES[:n]


def _root_span(raw: float) -> tuple[int, int]:
    if raw >= 0.3:
        return 6, 10   # material cooperation
    if raw >= 0.0:
        return 1, 6    # verbal cooperation
    if raw > -0.3:
        return 10, 15  # verbal conflict
    return 15, 21      # material conflict


_ECONOMIC = tuple(Economic)


def _score_events(cfg: WorldConfig, rng, dyads, score_years) -> list[EventRecord]:
    """Events whose dynamic scores track per-dyad AR(1) targets.

    The generator replays the score recursion: given this year's event
    count it solves for the annual average that moves the dynamic score
    to the AR(1) target, clipping to the feasible [-1, 1] raw range
    (clips are rare at default scales and simply shrink that step).
    Zero innovation scale plants constant scores.
    """
    rho, eta, delta = cfg.ar_coef, cfg.innovation_scale, cfg.decay
    n_years = len(score_years)
    common = rng.standard_normal(n_years) if cfg.score_common_weight > 0 else None
    events: list[EventRecord] = []
    for a, b in dyads:
        if cfg.count_jitter:
            counts = 1 + rng.poisson(cfg.events_per_year - 1.0, n_years)
        else:
            counts = np.full(n_years, max(1, round(cfg.events_per_year)))
        stationary = eta / np.sqrt(1.0 - rho * rho) if eta > 0 else 0.0
        x = float(np.clip(rng.normal(0.0, stationary) if eta > 0 else 0.0, -1.0, 1.0))
        z = rng.standard_normal(n_years)
        if common is not None:
            w = cfg.score_common_weight
            z = np.sqrt(1.0 - w * w) * z + w * common
        stock = 0.0
        for k, year in enumerate(score_years):
            n_ev = int(counts[k])
            stock = (1.0 - delta) * stock + n_ev
            phi = n_ev / stock
            if k == 0:
                raw = x
            else:
                target = x if eta == 0 else rho * x + eta * float(z[k])
                raw = float(np.clip((target - (1.0 - phi) * x) / phi, -1.0, 1.0))
                x = (1.0 - phi) * x + phi * raw
            goldstein = 10.0 * raw
            lo, hi = _root_span(raw)
            roots = rng.integers(lo, hi, n_ev)
            econ = rng.integers(0, len(_ECONOMIC), n_ev)
            for i in range(n_ev):
                root = int(roots[i])
                events.append(EventRecord(
                    origin=a,
                    partner=b,
                    year=int(year),
                    cameo_root=root,
                    cameo_quad=quad_for_root(root),
                    goldstein=goldstein,
                    economic=_ECONOMIC[int(econ[i])],
                    description=f"synthetic-{a}-{b}-{year}-{i}",
                ))
    return events


def _controls(rng, countries) -> tuple[pd.DataFrame, np.ndarray, np.ndarray]:
    n = len(countries)
    dist = rng.uniform(1.0, 20.0, (n, n))
    upper = np.triu_indices(n, k=1)
    dist.T[upper] = dist[upper]
    log_distance = np.log(dist)
    contig = (rng.uniform(size=(n, n)) < 0.15).astype(float)
    contig.T[upper] = contig[upper]
    rows = []
    for i, o in enumerate(countries):
        for j, d in enumerate(countries):
            if i == j:
                continue
            rows.append((o, d, log_distance[i, j], contig[i, j]))
    frame = pd.DataFrame(rows, columns=list(CONTROLS_COLUMNS))
    return frame, log_distance, contig


def _tariff_rates(cfg: WorldConfig, n: int) -> np.ndarray:
    """Net rates per (origin, dest, year): linear ramp to the target."""
    ramp = np.linspace(0.0, cfg.tariff_rate, cfg.n_years)
    rates = np.ones((n, n, cfg.n_years)) * ramp[None, None, :]
    for k in range(cfg.n_years):
        np.fill_diagonal(rates[:, :, k], 0.0)
    return rates


def _serial_noise(cfg: WorldConfig, rng, n: int) -> np.ndarray:
    """Directed-pair noise with optional AR(1) and common-factor parts."""
    T = cfg.n_years
    e = rng.standard_normal((n, n, T)) * cfg.noise_scale
    if cfg.noise_ar > 0:
        u = np.empty_like(e)
        u[:, :, 0] = e[:, :, 0]
        damp = np.sqrt(1.0 - cfg.noise_ar**2)
        for t in range(1, T):
            u[:, :, t] = cfg.noise_ar * u[:, :, t - 1] + damp * e[:, :, t]
        e = u
    if cfg.noise_common_scale > 0:
        load = rng.normal(1.0, 0.3, (n, n))
        factor = rng.standard_normal(T)
        e = e + cfg.noise_common_scale * load[:, :, None] * factor[None, None, :]
    return e


def generate_world(cfg: WorldConfig) -> GeneratedWorld:
    """Build a world per config; see the module docstring for flavors.

    Draw order is fixed: controls, score streams (sorted dyads), then
    flavor-specific heterogeneity and noise, so identical configs give
    identical worlds.
    """
    rng = np.random.default_rng(cfg.seed)
    countries = _codes(cfg.n_countries)
    n = cfg.n_countries
    dyads = [(a, b) for i, a in enumerate(countries) for b in countries[i + 1:]]
    kernel = psi_from_beta(cfg.beta_path, cfg.ar_coef)
    lead_in = kernel.size - 1 if cfg.flavor == "lp" else 0
    score_years = np.arange(cfg.start_year - lead_in,
                            cfg.start_year + cfg.n_years)

    controls_frame, log_distance, contiguity = _controls(rng, countries)
    events = _score_events(cfg, rng, dyads, score_years)
    scores = dynamic_scores(events, decay=cfg.decay)

    years = np.arange(cfg.start_year, cfg.start_year + cfg.n_years)
    rates = _tariff_rates(cfg, n)

    if cfg.flavor == "ge":
        trade, truth = _ge_world(cfg, rng, countries, scores, rates)
    else:
        trade, truth = _response_world(
            cfg, rng, countries, scores, kernel, score_years,
            log_distance, contiguity,
        )

    tariff_rows = []
    for i, o in enumerate(countries):
        for j, d in enumerate(countries):
            if i == j:
                continue
            for k, t in enumerate(years):
                tariff_rows.append((o, d, int(t), rates[i, j, k]))
    tariffs = pd.DataFrame(tariff_rows, columns=["origin", "dest", "year", "value"])

    return GeneratedWorld(
        config=cfg,
        countries=countries,
        events=events,
        trade=trade,
        tariffs=tariffs,
        controls=controls_frame,
        truth=truth,
    )


def _response_world(cfg, rng, countries, scores, kernel, score_years,
                    log_distance, contiguity):
    """Gravity-style trade with a planted score response ("lp"/"gravity")."""
    n = len(countries)
    T = cfg.n_years
    is_lp = cfg.flavor == "lp"

    pair_fe = rng.normal(0.0, cfg.fe_scale, (n, n)) if is_lp else np.zeros((n, n))
    origin_year = rng.normal(0.0, cfg.fe_scale, (n, T))
    dest_year = rng.normal(0.0, cfg.fe_scale, (n, T))
    noise = _serial_noise(cfg, rng, n)
    home_noise = noise  # domestic rows reuse the diagonal slots

    # symmetric score response per dyad over the trade years
    response = np.zeros((n, n, T))
    offset = len(score_years) - T
    for i, a in enumerate(countries):
        for j in range(i + 1, n):
            series = scores[dyad_key(a, countries[j])]
            path = np.array([series.value(int(t)) for t in score_years])
            if is_lp:
                resp = np.convolve(path, kernel)[offset:offset + T]
            else:
                resp = cfg.alpha * path[offset:offset + T]
            response[i, j, :] = resp
            response[j, i, :] = resp

    control_part = (cfg.distance_decay * log_distance
                    + cfg.contiguity_effect * contiguity)
    log_v = (pair_fe[:, :, None]
             + origin_year[:, None, :]
             + dest_year[None, :, :]
             + response
             + control_part[:, :, None]
             + noise)
    for k in range(T):
        np.fill_diagonal(log_v[:, :, k],
                         cfg.home_premium
                         + origin_year[:, k] + dest_year[:, k]
                         + np.diagonal(home_noise[:, :, k]))

    years = np.arange(cfg.start_year, cfg.start_year + T)
    origin = np.repeat(countries, n * T)
    dest = np.tile(np.repeat(countries, T), n)
    year_col = np.tile(years, n * n)
    trade = pd.DataFrame({
        "origin": origin,
        "dest": dest,
        "year": year_col,
        "value": np.exp(log_v).ravel(),
    })
    truth = GroundTruth(
        flavor=cfg.flavor,
        countries=countries,
        years=tuple(int(t) for t in years),
        rho=cfg.ar_coef,
        beta_path=tuple(cfg.beta_path) if is_lp else (),
        psi=tuple(float(p) for p in kernel) if is_lp else (),
        alpha=None if is_lp else cfg.alpha,
        control_effects={
            "log_distance": cfg.distance_decay,
            "contiguity": cfg.contiguity_effect,
        },
        scores=scores,
    )
    return trade, truth


def _ge_world(cfg, rng, countries, scores, rates):
    """Per-year level equilibria under planted cost-factor paths."""
    n = len(countries)
    T = cfg.n_years
    labor = rng.uniform(0.5, 2.0, n)
    productivity = rng.uniform(0.5, 2.0, n)
    d_base = rng.uniform(1.2, 2.5, (n, n))
    upper = np.triu_indices(n, k=1)
    d_base.T[upper] = d_base[upper]
    np.fill_diagonal(d_base, 1.0)

    walk = rng.standard_normal((n, n, T - 1)) * cfg.unobserved_scale
    for k in range(T - 1):
        walk[:, :, k].T[upper] = walk[:, :, k][upper]
        np.fill_diagonal(walk[:, :, k], 0.0)

    years = np.arange(cfg.start_year, cfg.start_year + T)
    base_year = int(years[0])
    geo_f, tar_f, eps_f, tot_f, hats = {}, {}, {}, {}, {}
    log_eps = np.zeros((n, n))
    rows = []
    base_solution = None
    for k, year in enumerate(years):
        tau = 1.0 + rates[:, :, k]
        if k == 0:
            d_year = d_base
        else:
            log_eps = log_eps + walk[:, :, k - 1]
            eps = np.exp(log_eps)
            np.fill_diagonal(eps, 1.0)
            geo = np.full((n, n), np.exp(cfg.geo_step * k))
            np.fill_diagonal(geo, 1.0)
            total = (eps * tau) * geo
            geo_f[int(year)] = geo
            tar_f[int(year)] = tau
            eps_f[int(year)] = eps
            tot_f[int(year)] = total
            d_year = d_base * total
        sol = level_solve(labor, productivity, d_year, tau, sigma=cfg.sigma)
        if k == 0:
            base_solution = sol
        else:
            hats[int(year)] = {
                "w_hat": sol.wages / base_solution.wages,
                "P_hat": sol.prices / base_solution.prices,
                "X_hat": sol.expenditure / base_solution.expenditure,
                "welfare": (sol.wages / sol.prices)
                / (base_solution.wages / base_solution.prices),
            }
        for i, o in enumerate(countries):
            for j, d in enumerate(countries):
                rows.append((o, d, int(year), sol.flows[i, j]))
    trade = pd.DataFrame(rows, columns=["origin", "dest", "year", "value"])
    truth = GroundTruth(
        flavor="ge",
        countries=countries,
        years=tuple(int(t) for t in years),
        rho=cfg.ar_coef,
        beta_path=(),
        psi=(),
        alpha=None,
        control_effects={},
        scores=scores,
        sigma=cfg.sigma,
        base_year=base_year,
        geo_factor=geo_f,
        tariff_factor=tar_f,
        unobserved_factor=eps_f,
        total_factor=tot_f,
        hats=hats,
    )
    return trade, truth


# ---------------------------------------------------------------------------
# level-space Armington solver (independent oracle for solve_hats)

@dataclass(frozen=True)
class LevelSolution:
    """Level equilibrium: wages normalized so world labor income is 1."""

    wages: np.ndarray
    prices: np.ndarray
    shares: np.ndarray
    expenditure: np.ndarray
    flows: np.ndarray
    iterations: int
    residual: float


def level_solve(
    labor,
    productivity,
    cost,
    tariff=None,
    *,
    sigma: float = 4.0,
    damping: float = 0.5,
    tol: float = 1e-12,
    max_iter: int = 200_000,
) -> LevelSolution:
    """Solve the level Armington system by damped wage iteration.

    Prices are ``w_o * cost_od / productivity_o``; expenditure adds
    rebated tariff revenue to labor income; convergence is the largest
    relative labor-market-clearing violation.  ``flows`` are gross of
    tariffs (what the destination spends).
    """
    labor = np.asarray(labor, float)
    productivity = np.asarray(productivity, float)
    n = labor.size
    cost = np.asarray(cost, float)
    if labor.shape != (n,) or productivity.shape != (n,) or cost.shape != (n, n):
        raise ValidationError("level primitives have inconsistent shapes")
    if (labor <= 0).any() or (productivity <= 0).any():
        raise ValidationError("labor and productivity must be positive")
    if not (np.isfinite(cost).all() and (cost > 0).all()):
        raise ValidationError("costs must be positive and finite")
    if tariff is None:
        tariff = np.ones((n, n))
    tariff = np.asarray(tariff, float)
    if tariff.shape != (n, n) or (tariff < 1.0).any():
        raise ValidationError("tariff factors must be >= 1")
    if (np.diag(tariff) != 1.0).any():
        raise ValidationError("domestic tariff factors must equal 1")
    if sigma <= 1.0:
        raise ValidationError("sigma must exceed 1")

    w = np.ones(n)
    w /= (w * labor).sum()
    power = 1.0 - sigma
    residual = np.inf
    for iteration in range(1, max_iter + 1):
        with np.errstate(over="ignore", under="ignore", divide="ignore"):
            s = (w[:, None] * cost / productivity[:, None]) ** power
            p_pow = s.sum(axis=0)
            pi = s / p_pow
            income = w * labor
            expenditure = income / (pi / tariff).sum(axis=0)
            sales = (pi / tariff * expenditure[None, :]).sum(axis=1)
        if not (np.isfinite(sales).all() and np.isfinite(p_pow).all()):
            raise NumericalError("level solver produced non-finite values")
        residual = float(np.max(np.abs(sales - income) / income))
        if residual < tol:
            prices = p_pow ** (1.0 / power)
            return LevelSolution(
                wages=w,
                prices=prices,
                shares=pi,
                expenditure=expenditure,
                flows=pi * expenditure[None, :],
                iterations=iteration,
                residual=residual,
            )
        w = w * (sales / income) ** damping
        w /= (w * labor).sum()
    raise ConvergenceError("level wage fixed point", max_iter, residual)


def random_level_world(seed: int, *, n_countries: int = 4, sigma: float = 4.0,
                       with_tariffs: bool = False):
    """Random level primitives plus their solved equilibrium."""
    rng = np.random.default_rng(seed)
    labor = rng.uniform(0.5, 2.0, n_countries)
    productivity = rng.uniform(0.5, 2.0, n_countries)
    cost = rng.uniform(1.2, 2.5, (n_countries, n_countries))
    np.fill_diagonal(cost, 1.0)
    tariff = np.ones((n_countries, n_countries))
    if with_tariffs:
        tariff = rng.uniform(1.0, 1.3, (n_countries, n_countries))
        np.fill_diagonal(tariff, 1.0)
    primitives = dict(labor=labor, productivity=productivity, cost=cost,
                      tariff=tariff, sigma=sigma)
    return primitives, level_solve(labor, productivity, cost, tariff, sigma=sigma)


# ---------------------------------------------------------------------------
# artifacts

def write_events(events, path) -> None:
    rows = (
        (e.origin, e.partner, e.year, e.cameo_root, e.cameo_quad.value,
         fmt_float(e.goldstein), e.economic.value, e.description)
        for e in events
    )
    write_rows(path, EVENT_COLUMNS, rows)


def _truth_json(truth: GroundTruth) -> dict:
    def matrices(table):
        return {
            str(t): [[float(v) for v in row] for row in m]
            for t, m in sorted(table.items())
        }

    out = {
        "flavor": truth.flavor,
        "countries": list(truth.countries),
        "years": list(truth.years),
        "rho": truth.rho,
        "beta_path": list(truth.beta_path),
        "psi": list(truth.psi),
        "alpha": truth.alpha,
        "control_effects": truth.control_effects,
        "scores": {
            f"{a}|{b}": {
                "start_year": s.start_year,
                "dynamic": [float(v) for v in s.dynamic],
            }
            for (a, b), s in sorted(truth.scores.items())
        },
    }
    if truth.flavor == "ge":
        out.update({
            "sigma": truth.sigma,
            "base_year": truth.base_year,
            "geo_factor": matrices(truth.geo_factor),
            "tariff_factor": matrices(truth.tariff_factor),
            "unobserved_factor": matrices(truth.unobserved_factor),
            "total_factor": matrices(truth.total_factor),
            "hats": {
                str(t): {k: [float(v) for v in vec] for k, vec in sorted(h.items())}
                for t, h in sorted(truth.hats.items())
            },
        })
    return out


def write_world(world: GeneratedWorld, outdir) -> dict[str, Path]:
    """Write the world's artifacts; returns the path of each file."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "events": outdir / "events.csv",
        "trade": outdir / "trade.csv",
        "tariffs": outdir / "tariffs.csv",
        "controls": outdir / "controls.csv",
        "ground_truth": outdir / "ground_truth.json",
    }
    write_events(world.events, paths["events"])
    write_flow_table(paths["trade"], world.trade)
    write_flow_table(paths["tariffs"], world.tariffs)
    rows = (
        (o, d, fmt_float(ld), fmt_float(c))
        for o, d, ld, c in world.controls.itertuples(index=False)
    )
    write_rows(paths["controls"], CONTROLS_COLUMNS, rows)
    with paths["ground_truth"].open("w") as fh:
        json.dump(_truth_json(world.truth), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths
