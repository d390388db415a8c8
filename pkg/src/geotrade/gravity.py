"""Static gravity estimation, yearly coefficients, and bloc analysis.

Three views of the same panel: a pooled cross-sectional regression of
log trade on the alignment score and standard gravity controls under
origin-year and destination-year absorption; the same regression with
the score interacted with calendar year to trace how the coefficient
moved across eras; and a decomposition of the within fit into the share
each regressor accounts for.

Bloc classification takes a different cut: long-difference log trade
(or the score) over a window, strip origin and destination effects, and
read each country's drift toward or away from two anchor economies off
the signs of the remaining dyad residuals.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import ValidationError
from .panel import (
    ClusterDyad,
    FeSpec,
    FitResult,
    GRAVITY_FE,
    Panel,
    SeEngine,
    absorb,
    absorb_and_fit,
)
from .tables import fmt_float, write_rows


class ZeroVariationWarning(UserWarning):
    """A year had no score variation; its coefficient was omitted."""


@dataclass(frozen=True)
class GravitySpec:
    """One gravity regression: a score column, controls, FEs, errors.

    ``score`` names the single alignment regressor (swap in an
    alternative measure by renaming); it cannot also appear among the
    controls, so competing alignment measures never enter jointly.
    """

    score: str = "score"
    controls: tuple[str, ...] = ()
    outcome: str = "log_trade"
    fe: FeSpec = GRAVITY_FE
    se_engine: SeEngine = field(default_factory=ClusterDyad)
    absorb_tol: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "controls", tuple(self.controls))
        if self.score in self.controls:
            raise ValidationError(
                f"score column {self.score!r} cannot also be a control"
            )
        if len(set(self.controls)) != len(self.controls):
            raise ValidationError("duplicate control columns")

    @property
    def regressors(self) -> tuple[str, ...]:
        return (self.score, *self.controls)


def static_gravity(panel: Panel, spec: GravitySpec) -> FitResult:
    """Pooled gravity fit of the outcome on score and controls."""
    return absorb_and_fit(
        panel, spec.outcome, list(spec.regressors), spec.fe, spec.se_engine,
        tol=spec.absorb_tol,
    )


# ---------------------------------------------------------------------------
# year-interacted coefficients

def interaction_name(score: str, year: int) -> str:
    return f"{score}:{year}"


@dataclass
class YearlyCoefficients:
    """Per-year score coefficients from a single interacted regression."""

    score: str
    years: tuple[int, ...]
    alpha: np.ndarray
    se: np.ndarray
    omitted_years: tuple[int, ...]
    fit: FitResult

    def value(self, year: int) -> float:
        return float(self.alpha[self.years.index(year)])

    def stderr(self, year: int) -> float:
        return float(self.se[self.years.index(year)])


def yearly_coefficients(panel: Panel, spec: GravitySpec) -> YearlyCoefficients:
    """Estimate score-by-year coefficients in one regression.

    Controls and fixed effects are shared across years; the score enters
    through one interaction column per year.  Years whose score does not
    vary cannot identify a coefficient and are omitted with a warning.
    """
    score = panel.column(spec.score)
    yr = panel.years()
    all_years = sorted(int(t) for t in np.unique(yr))
    if len(all_years) < 2:
        raise ValidationError("yearly coefficients need at least two years")

    kept, omitted = [], []
    for t in all_years:
        vals = score[yr == t]
        if vals.size >= 2 and np.ptp(vals) > 0:
            kept.append(t)
        else:
            omitted.append(t)
            warnings.warn(
                f"year {t} has no score variation; coefficient omitted",
                ZeroVariationWarning,
                stacklevel=2,
            )
    if not kept:
        raise ValidationError("no year has score variation")

    frame = panel.frame.copy()
    names = []
    for t in kept:
        name = interaction_name(spec.score, t)
        frame[name] = np.where(yr == t, score, 0.0)
        names.append(name)
    interacted = Panel(frame, allow_duplicates=panel.allow_duplicates)
    fit = absorb_and_fit(
        interacted, spec.outcome, names + list(spec.controls), spec.fe,
        spec.se_engine, tol=spec.absorb_tol,
    )
    alpha = np.array([fit.coef(n) for n in names])
    se = np.array([fit.stderr(n) for n in names])
    return YearlyCoefficients(
        score=spec.score,
        years=tuple(kept),
        alpha=alpha,
        se=se,
        omitted_years=tuple(omitted),
        fit=fit,
    )


# ---------------------------------------------------------------------------
# variance decomposition

@dataclass
class VarianceDecomposition:
    """Within-fit loss, in percentage points, from dropping each regressor."""

    full_r2: float
    r2_loss: dict[str, float]


def variance_decomposition(panel: Panel, spec: GravitySpec) -> VarianceDecomposition:
    """Refit without each regressor in turn and record the fit loss.

    The restricted models are nested in the full one, so every loss is
    nonnegative up to solver noise.  Dropping the last regressor leaves
    the fixed-effects-only model, whose within fit is zero by definition.
    """
    full = static_gravity(panel, spec)
    losses: dict[str, float] = {}
    for name in spec.regressors:
        rest = [r for r in spec.regressors if r != name]
        if rest:
            restricted = absorb_and_fit(
                panel, spec.outcome, rest, spec.fe, spec.se_engine,
                tol=spec.absorb_tol,
            )
            r2 = restricted.r_squared
        else:
            r2 = 0.0
        losses[name] = 100.0 * (full.r_squared - r2)
    return VarianceDecomposition(full_r2=float(full.r_squared), r2_loss=losses)


# ---------------------------------------------------------------------------
# bloc classification

class Bloc(Enum):
    US = "US"
    CHINA = "China"
    BOTH_CLOSER = "Both-closer"
    BOTH_FARTHER = "Both-farther"
    UNCLASSIFIED = "Unclassified"


@dataclass(frozen=True)
class BlocAssignment:
    country: str
    trade_bloc: Bloc
    geo_bloc: Bloc
    window: tuple[int, int]


def _window_residuals(
    panel: Panel, column: str, window: tuple[int, int], tol: float
) -> dict[tuple[str, str], float]:
    """Residuals of long-differenced ``column`` on origin + dest effects.

    Directed pairs observed in both window years enter; each residual is
    the pair-specific part of the change once country-level shifts are
    absorbed.  Singletons are kept: their residuals are zero by
    construction, the honest least-squares answer.
    """
    t0, t1 = window
    yr = panel.years()
    vals = panel.column(column)
    o = panel.frame["origin"].to_numpy()
    d = panel.frame["dest"].to_numpy()

    level: dict[int, dict[tuple[str, str], float]] = {t0: {}, t1: {}}
    for t in (t0, t1):
        rows = np.flatnonzero(yr == t)
        if rows.size == 0:
            raise ValidationError(f"window year {t} not present in panel")
        for i in rows:
            level[t][(o[i], d[i])] = float(vals[i])

    pairs = sorted(set(level[t0]) & set(level[t1]))
    if not pairs:
        raise ValidationError(f"no directed pair observed in both {t0} and {t1}")
    frame = pd.DataFrame(pairs, columns=["origin", "dest"])
    frame["year"] = t1
    frame["delta"] = [level[t1][p] - level[t0][p] for p in pairs]
    dpanel = Panel(frame)
    res = absorb(dpanel, ["delta"], FeSpec(("origin", "dest")), tol=tol,
                 drop_singleton=False)
    resid = res.residuals[:, 0]
    key_o = dpanel.frame["origin"].to_numpy()
    key_d = dpanel.frame["dest"].to_numpy()
    return {(key_o[i], key_d[i]): float(resid[i]) for i in range(len(dpanel))}


def _against(
    residuals: dict[tuple[str, str], float], country: str, anchor: str
) -> float | None:
    vals = [
        residuals[p]
        for p in ((country, anchor), (anchor, country))
        if p in residuals
    ]
    return float(np.mean(vals)) if vals else None


def _label(toward_us: float | None, toward_china: float | None) -> Bloc:
    # residual >= 0 means the pair got closer (trade up / alignment up)
    if toward_us is None or toward_china is None:
        return Bloc.UNCLASSIFIED
    closer_us = toward_us >= 0
    closer_china = toward_china >= 0
    if closer_us and not closer_china:
        return Bloc.US
    if closer_china and not closer_us:
        return Bloc.CHINA
    if closer_us and closer_china:
        return Bloc.BOTH_CLOSER
    return Bloc.BOTH_FARTHER


def bloc_classification(
    panel: Panel,
    window: tuple[int, int],
    *,
    anchors: tuple[str, str] = ("USA", "CHN"),
    trade_column: str = "log_trade",
    score_column: str = "score",
    absorb_tol: float = 1e-8,
) -> list[BlocAssignment]:
    """Assign every country a trade bloc and a geopolitical bloc.

    A country lands in an anchor's bloc when it drifted toward that
    anchor and away from the other over the window; drifting toward or
    away from both gets the corresponding joint label.  The anchors
    themselves, and countries lacking a residual against either anchor,
    stay unclassified.
    """
    t0, t1 = int(window[0]), int(window[1])
    if t0 >= t1:
        raise ValidationError(f"window must be increasing, got ({t0}, {t1})")
    us, china = anchors
    if us == china:
        raise ValidationError("anchors must be distinct")

    trade_res = _window_residuals(panel, trade_column, (t0, t1), absorb_tol)
    geo_res = _window_residuals(panel, score_column, (t0, t1), absorb_tol)

    out = []
    for country in panel.countries:
        if country in (us, china):
            out.append(
                BlocAssignment(country, Bloc.UNCLASSIFIED, Bloc.UNCLASSIFIED, (t0, t1))
            )
            continue
        trade_bloc = _label(
            _against(trade_res, country, us), _against(trade_res, country, china)
        )
        geo_bloc = _label(
            _against(geo_res, country, us), _against(geo_res, country, china)
        )
        out.append(BlocAssignment(country, trade_bloc, geo_bloc, (t0, t1)))
    return out


# ---------------------------------------------------------------------------
# output tables

GRAVITY_COLUMNS = ("regressor", "coefficient", "se")
BLOC_COLUMNS = ("country", "trade_bloc", "geo_bloc")


def write_gravity(path, fit: FitResult) -> None:
    rows = [
        (name, fmt_float(fit.coef(name)), fmt_float(fit.stderr(name)))
        for name in fit.names
    ]
    write_rows(path, GRAVITY_COLUMNS, rows)


def write_blocs(path, assignments: Sequence[BlocAssignment]) -> None:
    rows = [
        (a.country, a.trade_bloc.value, a.geo_bloc.value)
        for a in sorted(assignments, key=lambda a: a.country)
    ]
    write_rows(path, BLOC_COLUMNS, rows)
