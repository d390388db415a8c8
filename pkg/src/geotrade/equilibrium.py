"""Armington world model and the exact-hat-algebra counterfactual solver.

The model keeps levels implicit: a calibrated world stores expenditure
shares, expenditures, gross tariff factors, labor incomes, and the
substitution elasticity.  Counterfactuals are solved in proportional
changes ("hats"): given a bilateral cost shock ``d_hat`` (the full
price-relevant change, whatever its composition) and a gross-tariff
change ``tau_hat`` (which only moves the revenue split), a damped
fixed-point iteration finds wage changes that clear all labor markets.

Conventions, fixed here because the hat system is homogeneous:

- numeraire: world labor income is held at its base value;
- tariff revenue is rebated into destination expenditure, so
  ``X_d = w_d l_d / sum_o pi'_od / tau'_od`` in any equilibrium;
- trade flows aggregate net of tariffs (producer receipts).

Calibration from a gross value matrix purges trade imbalances with a
diagonal similarity scaling (f_o M_od / f_d) that preserves domestic
absorption; the maximum entry adjustment is recorded on the world.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import ConvergenceError, NumericalError, ValidationError
from .tables import _read_csv, fmt_float, write_rows

DEFAULT_SIGMA = 4.0
DEFAULT_DAMPING = 0.5
CLEARING_TOL = 1e-10
MAX_ITERATIONS = 100_000

SOLUTION_COLUMNS = ("country", "w_hat", "P_hat", "X_hat", "welfare")
MATRIX_COLUMNS = ("origin", "dest", "value")


def _as_square(x, n: int, what: str) -> np.ndarray:
    arr = np.asarray(x, float)
    if arr.shape != (n, n):
        raise ValidationError(f"{what} must be {n}x{n}, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValidationError(f"{what} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class WorldData:
    """Calibrated base-year equilibrium in share form."""

    countries: tuple[str, ...]
    pi: np.ndarray
    expenditure: np.ndarray
    tariff: np.ndarray
    labor_income: np.ndarray
    sigma: float = DEFAULT_SIGMA
    balance_adjustment: float = 0.0
    balance_iterations: int = 0

    def __post_init__(self):
        countries = tuple(self.countries)
        object.__setattr__(self, "countries", countries)
        n = len(countries)
        if n < 2:
            raise ValidationError("world needs at least two countries")
        if len(set(countries)) != n:
            raise ValidationError("duplicate country codes")
        pi = _as_square(self.pi, n, "share matrix")
        tariff = _as_square(self.tariff, n, "tariff matrix")
        for name, vec in (("expenditure", self.expenditure),
                          ("labor_income", self.labor_income)):
            arr = np.asarray(vec, float)
            if arr.shape != (n,):
                raise ValidationError(f"{name} must have length {n}")
            if not (np.isfinite(arr).all() and (arr > 0).all()):
                raise ValidationError(f"{name} must be strictly positive")
            object.__setattr__(self, name, arr)
        if (pi < 0).any():
            raise ValidationError("shares must be nonnegative")
        colsums = pi.sum(axis=0)
        if np.max(np.abs(colsums - 1.0)) > 1e-10:
            bad = self.countries[int(np.argmax(np.abs(colsums - 1.0)))]
            raise ValidationError(f"share column for {bad} does not sum to 1")
        if (tariff < 1.0).any():
            raise ValidationError("gross tariff factors must be >= 1")
        if np.max(np.abs(np.diag(tariff) - 1.0)) > 1e-12:
            raise ValidationError("domestic tariff factors must equal 1")
        if not self.sigma > 1:
            raise ValidationError("sigma must exceed 1")
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "tariff", tariff)
        receipts = (self.expenditure[None, :] * pi / tariff).sum(axis=1)
        rel = np.abs(receipts - self.labor_income) / self.labor_income
        if np.max(rel) > 1e-8:
            bad = self.countries[int(np.argmax(rel))]
            raise ValidationError(
                f"labor income of {bad} violates market clearing "
                f"(relative error {np.max(rel):.2e})"
            )

    @property
    def n(self) -> int:
        return len(self.countries)

    def index(self, country: str) -> int:
        try:
            return self.countries.index(country)
        except ValueError:
            raise ValidationError(f"unknown country {country!r}") from None


def _balance(net: np.ndarray, tol: float = 1e-12, max_iter: int = 10000
             ) -> tuple[np.ndarray, float, int]:
    """Equalize row and column sums by a diagonal similarity scaling.

    ``net`` holds producer receipts; the transform f_o * M_od / f_d
    preserves the diagonal and all zeros, so domestic absorption is
    untouched while surpluses and deficits are squeezed out.
    """
    m = net.copy()
    f = np.ones(len(m))
    for it in range(max_iter):
        rows = m.sum(axis=1)
        cols = m.sum(axis=0)
        gap = np.max(np.abs(rows - cols) / np.maximum(rows, cols))
        if gap < tol:
            scaled = f[:, None] * net / f[None, :]
            adj = np.abs(scaled[net > 0] / net[net > 0] - 1.0)
            return scaled, float(adj.max(initial=0.0)), it
        f *= np.sqrt(cols / rows)
        m = f[:, None] * net / f[None, :]
    raise ConvergenceError("trade balancing", max_iter, float(gap))


def calibrate(
    trade,
    countries: Sequence[str],
    *,
    tariff=None,
    sigma: float = DEFAULT_SIGMA,
    balance: bool = True,
) -> WorldData:
    """Build a WorldData from a gross value matrix.

    ``trade[o, d]`` is the value destination d spends on origin o,
    inclusive of tariffs; the diagonal is domestic absorption and must
    be positive.  Row/column imbalances (trade deficits) are
    incompatible with the balanced-trade model and are purged before
    shares are formed unless ``balance=False``.
    """
    countries = tuple(countries)
    n = len(countries)
    values = _as_square(trade, n, "trade matrix")
    if (values < 0).any():
        raise ValidationError("trade values must be nonnegative")
    if (np.diag(values) <= 0).any():
        bad = countries[int(np.argmin(np.diag(values)))]
        raise ValidationError(f"zero domestic absorption for {bad}")
    if tariff is None:
        tariff = np.ones((n, n))
    tariff = _as_square(tariff, n, "tariff matrix")

    net = values / tariff
    adjustment, iterations = 0.0, 0
    if balance:
        net, adjustment, iterations = _balance(net)
        values = net * tariff
    expenditure = values.sum(axis=0)
    if (expenditure <= 0).any():
        bad = countries[int(np.argmin(expenditure))]
        raise ValidationError(f"zero total expenditure for {bad}")
    pi = values / expenditure[None, :]
    labor_income = net.sum(axis=1)
    return WorldData(
        countries=countries,
        pi=pi,
        expenditure=expenditure,
        tariff=tariff,
        labor_income=labor_income,
        sigma=sigma,
        balance_adjustment=adjustment,
        balance_iterations=iterations,
    )


@dataclass(frozen=True)
class HatShock:
    """Proportional changes to bilateral costs and gross tariffs."""

    d_hat: np.ndarray
    tau_hat: np.ndarray | None = None

    def validated(self, n: int) -> "HatShock":
        d = _as_square(self.d_hat, n, "d_hat")
        if (d <= 0).any():
            raise ValidationError("d_hat entries must be strictly positive")
        if np.max(np.abs(np.diag(d) - 1.0)) > 1e-12:
            raise ValidationError("domestic cost changes must equal 1")
        tau = self.tau_hat
        if tau is None:
            tau = np.ones((n, n))
        tau = _as_square(tau, n, "tau_hat")
        if (tau <= 0).any():
            raise ValidationError("tau_hat entries must be strictly positive")
        if np.max(np.abs(np.diag(tau) - 1.0)) > 1e-12:
            raise ValidationError("domestic tariff changes must equal 1")
        return HatShock(d_hat=d, tau_hat=tau)

    @staticmethod
    def none(n: int) -> "HatShock":
        return HatShock(np.ones((n, n)), np.ones((n, n)))


@dataclass
class HatSolution:
    """Converged counterfactual in proportional changes."""

    countries: tuple[str, ...]
    w_hat: np.ndarray
    P_hat: np.ndarray
    pi_hat: np.ndarray
    X_hat: np.ndarray
    welfare: np.ndarray
    clearing_residual: float
    balance_residual: float
    iterations: int
    shock: HatShock

    def __post_init__(self):
        for name in ("w_hat", "P_hat", "X_hat", "welfare"):
            arr = np.asarray(getattr(self, name), float)
            if not (np.isfinite(arr).all() and (arr > 0).all()):
                raise ValidationError(f"{name} must be strictly positive")
        if not (np.isfinite(self.pi_hat).all() and (self.pi_hat > 0).all()):
            raise ValidationError("pi_hat must be strictly positive")


def _system(world: WorldData, shock: HatShock, w_hat: np.ndarray):
    """Shares, expenditures, and sales implied by a wage-change vector."""
    power = 1.0 - world.sigma
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        cost = (w_hat[:, None] * shock.d_hat) ** power
    if not np.isfinite(cost).all():
        o, d = np.argwhere(~np.isfinite(cost))[0]
        raise NumericalError(
            f"non-finite cost term for {world.countries[o]}->{world.countries[d]}"
        )
    scaled = world.pi * cost
    col = scaled.sum(axis=0)
    if not ((col > 0).all() and np.isfinite(col).all()):
        d = int(np.argmin(col))
        raise NumericalError(f"degenerate price index for {world.countries[d]}")
    pi_prime = scaled / col
    P_hat = col ** (1.0 / power)
    tau_prime = shock.tau_hat * world.tariff
    net_share = pi_prime / tau_prime
    X_prime = w_hat * world.labor_income / net_share.sum(axis=0)
    sales = (net_share * X_prime[None, :]).sum(axis=1)
    return pi_prime, P_hat, X_prime, sales


def solve_hats(
    world: WorldData,
    shock: HatShock,
    *,
    damping: float = DEFAULT_DAMPING,
    tol: float = CLEARING_TOL,
    max_iter: int = MAX_ITERATIONS,
    w_init: np.ndarray | None = None,
) -> HatSolution:
    """Solve the counterfactual wage fixed point.

    Wages update multiplicatively toward each country's sales/income
    ratio; the step shrinks geometrically whenever the clearing residual
    worsens (oscillation), and world labor income is renormalized to its
    base value every step.
    """
    shock = shock.validated(world.n)
    if not 0 < damping <= 1:
        raise ValidationError("damping must be in (0, 1]")
    wl = world.labor_income
    total = wl.sum()
    if w_init is None:
        w_hat = np.ones(world.n)
    else:
        w_hat = np.asarray(w_init, float).copy()
        if w_hat.shape != (world.n,) or (w_hat <= 0).any():
            raise ValidationError("w_init must be a positive vector of length n")
    w_hat *= total / (w_hat * wl).sum()

    damp = damping
    prev = np.inf
    residual = np.inf
    for iteration in range(1, max_iter + 1):
        pi_prime, P_hat, X_prime, sales = _system(world, shock, w_hat)
        income = w_hat * wl
        excess = sales - income
        if abs(excess.sum()) > 1e-10 * total:
            raise NumericalError(
                f"excess demands do not aggregate to zero ({excess.sum():.3e})"
            )
        residual = float(np.max(np.abs(excess) / income))
        if residual < tol:
            tau_prime = shock.tau_hat * world.tariff
            exports = (pi_prime / tau_prime * X_prime[None, :]).sum(axis=1)
            exports -= np.diag(pi_prime / tau_prime) * X_prime
            imports = (pi_prime / tau_prime * X_prime[None, :]).sum(axis=0)
            imports -= np.diag(pi_prime / tau_prime) * X_prime
            balance = float(np.max(np.abs(exports - imports) / income))
            pi_hat = (w_hat[:, None] * shock.d_hat / P_hat[None, :]) ** (
                1.0 - world.sigma
            )
            return HatSolution(
                countries=world.countries,
                w_hat=w_hat,
                P_hat=P_hat,
                pi_hat=pi_hat,
                X_hat=X_prime / world.expenditure,
                welfare=w_hat / P_hat,
                clearing_residual=residual,
                balance_residual=balance,
                iterations=iteration,
                shock=shock,
            )
        if residual > prev:
            damp = max(damp * 0.5, 1.0 / 64.0)
        prev = residual
        w_hat = w_hat * (sales / income) ** damp
        w_hat *= total / (w_hat * wl).sum()
    raise ConvergenceError("wage fixed point", max_iter, residual)


def welfare(solution: HatSolution) -> np.ndarray:
    """Real income changes: wage change deflated by the price index change."""
    return np.asarray(solution.w_hat, float) / np.asarray(solution.P_hat, float)


def aggregate_trade(world: WorldData, solution: HatSolution) -> float:
    """World trade index: counterfactual over base cross-border flows.

    Flows are producer receipts (net of tariffs), matching the clearing
    convention; domestic sales are excluded from both totals.
    """
    off = ~np.eye(world.n, dtype=bool)
    base = (world.expenditure[None, :] * world.pi / world.tariff)[off].sum()
    pi_prime = world.pi * solution.pi_hat
    tau_prime = solution.shock.tau_hat * world.tariff
    x_prime = solution.X_hat * world.expenditure
    counter = (x_prime[None, :] * pi_prime / tau_prime)[off].sum()
    return float(counter / base)


@dataclass(frozen=True)
class EquilibriumReport:
    """Residuals recomputed from a solution, independent of the solver."""

    clearing: float
    balance: float
    share_columns: float

    @property
    def ok(self) -> bool:
        return max(self.clearing, self.balance, self.share_columns) < 1e-8


def validate_equilibrium(world: WorldData, solution: HatSolution) -> EquilibriumReport:
    """Recompute clearing, balance, and share-column residuals from scratch."""
    shock = solution.shock.validated(world.n)
    w_hat = np.asarray(solution.w_hat, float)
    pi_prime, _, X_prime, sales = _system(world, shock, w_hat)
    income = w_hat * world.labor_income
    clearing = float(np.max(np.abs(sales - income) / income))
    tau_prime = shock.tau_hat * world.tariff
    net = pi_prime / tau_prime * X_prime[None, :]
    exports = net.sum(axis=1) - np.diag(net)
    imports = net.sum(axis=0) - np.diag(net)
    balance = float(np.max(np.abs(exports - imports) / income))
    counter_cols = (world.pi * solution.pi_hat).sum(axis=0)
    share_columns = float(np.max(np.abs(counter_cols - 1.0)))
    return EquilibriumReport(
        clearing=clearing, balance=balance, share_columns=share_columns
    )


# ---------------------------------------------------------------------------
# matrix and solution tables

def read_matrix(
    source,
    *,
    countries: Sequence[str] | None = None,
    fill: float | None = None,
) -> tuple[tuple[str, ...], np.ndarray]:
    """Read an origin/dest/value table into a square matrix.

    Rows may include the diagonal (domestic values).  With ``countries``
    given, the matrix is laid out in that order; otherwise codes are the
    sorted union of origins and destinations.  Missing pairs take
    ``fill``; with ``fill=None`` every pair must be present.
    """
    df = _read_csv(source)
    missing = [c for c in MATRIX_COLUMNS if c not in df.columns]
    if missing:
        raise ValidationError(f"matrix table missing columns {missing}")
    if df.duplicated(subset=["origin", "dest"]).any():
        row = df[df.duplicated(subset=["origin", "dest"])].iloc[0]
        raise ValidationError(
            f"duplicate matrix entry ({row['origin']}, {row['dest']})"
        )
    if countries is None:
        countries = sorted(set(df["origin"]) | set(df["dest"]))
    countries = tuple(countries)
    index = {c: i for i, c in enumerate(countries)}
    n = len(countries)
    out = np.full((n, n), np.nan if fill is None else float(fill))
    for origin, dest, value in zip(df["origin"], df["dest"], df["value"]):
        if origin not in index or dest not in index:
            raise ValidationError(f"entry ({origin}, {dest}) outside country list")
        out[index[origin], index[dest]] = float(value)
    if fill is None and np.isnan(out).any():
        o, d = np.argwhere(np.isnan(out))[0]
        raise ValidationError(f"missing matrix entry ({countries[o]}, {countries[d]})")
    return countries, out


def write_matrix(path, countries: Sequence[str], matrix: np.ndarray) -> None:
    countries = tuple(countries)
    rows = [
        (o, d, fmt_float(matrix[i, j]))
        for i, o in enumerate(countries)
        for j, d in enumerate(countries)
    ]
    write_rows(path, MATRIX_COLUMNS, rows)


def write_solution(path, solution: HatSolution) -> None:
    rows = [
        (
            c,
            fmt_float(solution.w_hat[i]),
            fmt_float(solution.P_hat[i]),
            fmt_float(solution.X_hat[i]),
            fmt_float(solution.welfare[i]),
        )
        for i, c in enumerate(solution.countries)
    ]
    write_rows(path, SOLUTION_COLUMNS, rows)
