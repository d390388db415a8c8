"""Dyad-year panels, high-dimensional fixed-effect absorption, and WLS.

The regression stack is split in two:

* :func:`absorb` removes fixed effects from a set of columns by
  alternating projections (repeatedly subtracting group means per key
  until nothing moves), after iteratively dropping singleton rows.
* :func:`wls` runs (weighted) least squares on the residualized columns
  and computes standard errors under one of three designs: IID,
  clustering on the unordered country pair, or Driscoll-Kraay
  (cross-sectional sums with a Bartlett kernel over time).

By Frisch-Waugh the two-step estimates equal the full dummy-variable
regression; tests enforce agreement with a dense oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ConvergenceError, RankDeficiencyError, ValidationError
from .events import ScoreSeries, dyad_key

#: Large economies used for sample splits (32 countries).
MAJOR_ECONOMIES = (
    "ARG", "AUS", "AUT", "BEL", "BRA", "CAN", "CHE", "CHN", "DEU", "DNK",
    "ESP", "FRA", "GBR", "IDN", "IND", "IRN", "IRQ", "ITA", "JPN", "KOR",
    "MEX", "NGA", "NLD", "PHL", "POL", "RUS", "SAU", "SWE", "TUR", "USA",
    "VEN", "ZAF",
)

VALID_FE_KEYS = ("dyad", "origin", "dest", "year", "origin_year", "dest_year")

KEY_COLUMNS = ("origin", "dest", "year")

#: Internal column used by the block bootstrap to separate dyad replicas.
REPLICA_COLUMN = "__replica_pair__"


@dataclass(frozen=True)
class FeSpec:
    """Fixed-effect structure: which group keys to absorb.

    ``dyad`` is the ordered origin-dest pair (one intercept per directed
    flow); ``origin_year``/``dest_year`` are exporter-time and
    importer-time effects.
    """

    keys: tuple[str, ...]

    def __post_init__(self):
        if not self.keys:
            raise ValidationError("FeSpec needs at least one key")
        bad = [k for k in self.keys if k not in VALID_FE_KEYS]
        if bad:
            raise ValidationError(f"unknown FE keys {bad}; valid: {VALID_FE_KEYS}")
        if len(set(self.keys)) != len(self.keys):
            raise ValidationError("duplicate FE keys")


#: Exporter-time and importer-time effects (static gravity).
GRAVITY_FE = FeSpec(("origin_year", "dest_year"))
#: Adds a directed-pair intercept (dynamic panel regressions).
THREE_WAY_FE = FeSpec(("dyad", "origin_year", "dest_year"))


class Panel:
    """Rectangular dyad-year store with named value columns.

    Rows are sorted by (origin, dest, year) on construction, and integer
    codes for countries, years, pairs and country-years are precomputed,
    so repeated fixed-effect operations stay cheap.
    """

    def __init__(self, frame: pd.DataFrame, allow_duplicates: bool = False):
        missing = [c for c in KEY_COLUMNS if c not in frame.columns]
        if missing:
            raise ValidationError(f"panel frame missing key columns {missing}")
        if len(frame) == 0:
            raise ValidationError("panel is empty")
        self.allow_duplicates = allow_duplicates
        if not allow_duplicates:
            dup = frame.duplicated(subset=list(KEY_COLUMNS))
            if dup.any():
                row = frame[dup].iloc[0]
                raise ValidationError(
                    f"duplicate observation ({row['origin']}, {row['dest']}, {row['year']})"
                )
        frame = frame.copy()
        frame["year"] = frame["year"].astype(int)
        frame = frame.sort_values(list(KEY_COLUMNS), kind="stable").reset_index(drop=True)
        if (frame["origin"] == frame["dest"]).any():
            raise ValidationError("panel contains self-flows (origin == dest)")
        self.frame = frame
        countries = np.unique(np.concatenate([frame["origin"], frame["dest"]]))
        self._country_index = {c: i for i, c in enumerate(countries)}
        self.countries = tuple(countries)
        self._o = frame["origin"].map(self._country_index).to_numpy(np.int64)
        self._d = frame["dest"].map(self._country_index).to_numpy(np.int64)
        years = frame["year"].to_numpy(np.int64)
        self.year_min = int(years.min())
        self.year_max = int(years.max())
        self._y = years - self.year_min
        self._n_years = self.year_max - self.year_min + 1

    # -- basic accessors ----------------------------------------------------

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def n_obs(self) -> int:
        return len(self.frame)

    @property
    def value_columns(self) -> tuple[str, ...]:
        return tuple(c for c in self.frame.columns if c not in KEY_COLUMNS)

    def column(self, name: str) -> np.ndarray:
        if name not in self.frame.columns:
            raise ValidationError(f"panel has no column {name!r}")
        return self.frame[name].to_numpy(float)

    def with_column(self, name: str, values) -> "Panel":
        frame = self.frame.copy()
        frame[name] = values
        return Panel(frame, allow_duplicates=self.allow_duplicates)

    def years(self) -> np.ndarray:
        return self.frame["year"].to_numpy(np.int64)

    def subset(self, mask: np.ndarray) -> "Panel":
        if not mask.any():
            raise ValidationError("subset mask keeps no rows")
        return Panel(self.frame.loc[np.asarray(mask, bool)],
                     allow_duplicates=self.allow_duplicates)

    # -- integer codes ------------------------------------------------------
    # A bootstrap replica column (REPLICA_COLUMN) overrides pair identity so
    # that resampled copies of a dyad get their own intercepts while country
    # and year identities stay intact for the other FE keys.

    def directed_pair_codes(self) -> np.ndarray:
        if REPLICA_COLUMN in self.frame.columns:
            return self.frame[REPLICA_COLUMN].to_numpy(np.int64)
        n = len(self._country_index)
        return self._o * n + self._d

    def unordered_pair_codes(self) -> np.ndarray:
        if REPLICA_COLUMN in self.frame.columns:
            return self.frame[REPLICA_COLUMN].to_numpy(np.int64) // 2
        n = len(self._country_index)
        lo = np.minimum(self._o, self._d)
        hi = np.maximum(self._o, self._d)
        return lo * n + hi

    def fe_codes(self, fe: FeSpec) -> list[np.ndarray]:
        """Raw (uncompacted) integer codes for each FE key."""
        out = []
        for key in fe.keys:
            if key == "dyad":
                out.append(self.directed_pair_codes())
            elif key == "origin":
                out.append(self._o.copy())
            elif key == "dest":
                out.append(self._d.copy())
            elif key == "year":
                out.append(self._y.copy())
            elif key == "origin_year":
                out.append(self._o * self._n_years + self._y)
            elif key == "dest_year":
                out.append(self._d * self._n_years + self._y)
        return out


# ---------------------------------------------------------------------------
# absorption

@dataclass
class AbsorbResult:
    """Residualized columns plus bookkeeping from the absorption pass."""

    names: tuple[str, ...]
    residuals: np.ndarray          # (n_kept, k)
    keep: np.ndarray               # bool mask into the input panel's rows
    n_dropped_singletons: int
    sweeps: int
    max_delta: float
    fe_levels: tuple[int, ...]
    absorbed_dof: int

    def column(self, name: str) -> np.ndarray:
        return self.residuals[:, self.names.index(name)]


def _compact(codes: np.ndarray) -> tuple[np.ndarray, int]:
    uniq, inv = np.unique(codes, return_inverse=True)
    return inv.astype(np.intp), len(uniq)


def drop_singletons(code_arrays: Sequence[np.ndarray]) -> tuple[np.ndarray, int]:
    """Iteratively drop rows alone in any FE group.

    Returns (keep mask, number dropped).  Observations that are the only
    member of a group carry no within-group information and would leave
    zero residual degrees of freedom in that group.
    """
    n = len(code_arrays[0])
    keep = np.ones(n, bool)
    changed = True
    while changed:
        changed = False
        for codes in code_arrays:
            kept_codes = codes[keep]
            if kept_codes.size == 0:
                break
            compacted, nlev = _compact(kept_codes)
            counts = np.bincount(compacted, minlength=nlev)
            single_local = counts[compacted] == 1
            if single_local.any():
                idx = np.flatnonzero(keep)[single_local]
                keep[idx] = False
                changed = True
    return keep, int(n - keep.sum())


def absorb_arrays(
    X: np.ndarray,
    code_arrays: Sequence[np.ndarray],
    *,
    names: Sequence[str] | None = None,
    weights: np.ndarray | None = None,
    tol: float = 1e-8,
    max_sweeps: int = 10000,
    drop_singleton: bool = True,
) -> AbsorbResult:
    """Array-level core of :func:`absorb`; see there for semantics."""
    X = np.atleast_2d(np.asarray(X, float))
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    if names is None:
        names = tuple(f"col{j}" for j in range(k))
    if not np.isfinite(X).all():
        bad = [c for j, c in enumerate(names) if not np.isfinite(X[:, j]).all()]
        raise ValidationError(f"non-finite values in columns {bad}; mask them out first")

    if drop_singleton:
        keep, n_dropped = drop_singletons(code_arrays)
        if not keep.any():
            raise ValidationError("every observation is a singleton under this FE spec")
    else:
        keep = np.ones(n, bool)
        n_dropped = 0

    X = X[keep].copy()
    keys = [_compact(codes[keep]) for codes in code_arrays]

    w = None
    if weights is not None:
        w = np.asarray(weights, float)[keep]
        if (w <= 0).any() or not np.isfinite(w).all():
            raise ValidationError("weights must be positive and finite")

    group_weights = []
    for codes, nlev in keys:
        if w is None:
            gw = np.bincount(codes, minlength=nlev).astype(float)
        else:
            gw = np.bincount(codes, weights=w, minlength=nlev)
        group_weights.append(gw)

    sweeps = 0
    delta = np.inf
    for sweeps in range(1, max_sweeps + 1):
        delta = 0.0
        for (codes, nlev), gw in zip(keys, group_weights):
            for j in range(X.shape[1]):
                col = X[:, j] if w is None else w * X[:, j]
                means = np.bincount(codes, weights=col, minlength=nlev) / gw
                X[:, j] -= means[codes]
                step = np.abs(means).max() if nlev else 0.0
                if step > delta:
                    delta = step
        if delta < tol:
            break
    else:
        raise ConvergenceError("fixed-effect absorption", max_sweeps, float(delta))

    levels = tuple(nlev for _, nlev in keys)
    absorbed_dof = sum(levels) - (len(levels) - 1)
    return AbsorbResult(
        names=tuple(names),
        residuals=X,
        keep=keep,
        n_dropped_singletons=n_dropped,
        sweeps=sweeps,
        max_delta=float(delta),
        fe_levels=levels,
        absorbed_dof=absorbed_dof,
    )


def absorb(
    panel: Panel,
    columns: Sequence[str],
    fe: FeSpec,
    *,
    weights: np.ndarray | None = None,
    tol: float = 1e-8,
    max_sweeps: int = 10000,
    drop_singleton: bool = True,
) -> AbsorbResult:
    """Residualize ``columns`` on the fixed effects in ``fe``.

    Alternating projections: per sweep, subtract the (weighted) group
    mean for every key; stop when the largest subtracted mean falls
    below ``tol``.  Singleton rows are dropped first (iterating until a
    fixed point) and counted in the result.
    """
    X = np.column_stack([panel.column(c) for c in columns]).astype(float)
    return absorb_arrays(
        X,
        panel.fe_codes(fe),
        names=columns,
        weights=weights,
        tol=tol,
        max_sweeps=max_sweeps,
        drop_singleton=drop_singleton,
    )


# ---------------------------------------------------------------------------
# WLS with three variance engines

@dataclass(frozen=True)
class IID:
    """Homoskedastic spherical errors."""


@dataclass(frozen=True)
class ClusterDyad:
    """One-way clustering on the unordered country pair."""


@dataclass(frozen=True)
class DriscollKraay:
    """Cross-sectional score sums with Bartlett-kernel HAC over time.

    ``bandwidth`` is the highest lag in the kernel window.  ``None``
    selects floor(4 * (T/100)^(2/9)), the usual Newey-West default.
    """

    bandwidth: int | None = None


SeEngine = IID | ClusterDyad | DriscollKraay


@dataclass
class FitResult:
    """Least-squares estimates with a variance engine attached."""

    names: tuple[str, ...]
    beta: np.ndarray
    vcov: np.ndarray
    n_obs: int
    dof: int
    r_squared: float
    se_engine: SeEngine
    absorbed_dof: int = 0
    n_dropped_singletons: int = 0
    rss: float = 0.0
    tss: float = 0.0

    @property
    def coefficients(self) -> dict[str, float]:
        return {n: float(b) for n, b in zip(self.names, self.beta)}

    @property
    def se(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, np.sqrt(np.diag(self.vcov)))}

    def coef(self, name: str) -> float:
        return float(self.beta[self.names.index(name)])

    def stderr(self, name: str) -> float:
        i = self.names.index(name)
        return float(np.sqrt(self.vcov[i, i]))

    def conf_int(self, name: str, z: float = 1.959963984540054) -> tuple[float, float]:
        b, s = self.coef(name), self.stderr(name)
        return (b - z * s, b + z * s)


def sandwich_vcov(
    bread: np.ndarray,
    scores: np.ndarray,
    se_engine: SeEngine,
    *,
    n: int,
    dof: int,
    rss: float,
    cluster_ids: np.ndarray | None = None,
    time_ids: np.ndarray | None = None,
) -> np.ndarray:
    """Parameter covariance under the chosen error design.

    ``bread`` is the inverse Gram matrix of the (instrumented, weighted)
    regressors and ``scores`` the per-observation moment contributions
    x_i * w_i * e_i.  Shared by plain WLS and the two-stage estimator.
    """
    k = scores.shape[1]
    if isinstance(se_engine, IID):
        vcov = (rss / dof) * bread
    elif isinstance(se_engine, ClusterDyad):
        if cluster_ids is None:
            raise ValidationError("ClusterDyad requires cluster_ids")
        codes, n_groups = _compact(np.asarray(cluster_ids))
        if n_groups < 2:
            raise ValidationError("clustered errors need at least 2 clusters")
        sums = np.zeros((n_groups, k))
        for j in range(k):
            sums[:, j] = np.bincount(codes, weights=scores[:, j], minlength=n_groups)
        meat = sums.T @ sums
        c = (n_groups / (n_groups - 1)) * ((n - 1) / dof)
        vcov = c * bread @ meat @ bread
    elif isinstance(se_engine, DriscollKraay):
        if time_ids is None:
            raise ValidationError("DriscollKraay requires time_ids")
        codes, n_periods = _compact(np.asarray(time_ids))
        h = np.zeros((n_periods, k))
        for j in range(k):
            h[:, j] = np.bincount(codes, weights=scores[:, j], minlength=n_periods)
        m = se_engine.bandwidth
        if m is None:
            m = int(np.floor(4.0 * (n_periods / 100.0) ** (2.0 / 9.0)))
        m = min(m, n_periods - 1)
        meat = h.T @ h
        for lag in range(1, m + 1):
            gamma = h[lag:].T @ h[:-lag]
            meat += (1.0 - lag / (m + 1.0)) * (gamma + gamma.T)
        c = n / dof
        vcov = c * bread @ meat @ bread
    else:
        raise ValidationError(f"unknown se engine {se_engine!r}")
    return (vcov + vcov.T) / 2.0


def wls(
    y: np.ndarray,
    X: np.ndarray,
    names: Sequence[str],
    se_engine: SeEngine = IID(),
    *,
    weights: np.ndarray | None = None,
    cluster_ids: np.ndarray | None = None,
    time_ids: np.ndarray | None = None,
    absorbed_dof: int = 0,
    n_dropped_singletons: int = 0,
) -> FitResult:
    """Weighted least squares on residualized data.

    ``absorbed_dof`` enters the residual degrees of freedom so that
    variance estimates account for the fixed effects removed upstream.
    ``cluster_ids`` are required for :class:`ClusterDyad`, ``time_ids``
    for :class:`DriscollKraay`.
    """
    y = np.asarray(y, float)
    X = np.atleast_2d(np.asarray(X, float))
    if X.shape[0] != y.shape[0]:
        raise ValidationError("y and X row counts differ")
    n, k = X.shape
    if len(names) != k:
        raise ValidationError("names must match X columns")
    if not (np.isfinite(y).all() and np.isfinite(X).all()):
        raise ValidationError("non-finite values in regression data")

    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, float)
        if (w <= 0).any() or not np.isfinite(w).all():
            raise ValidationError("weights must be positive and finite")

    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    yw = y * sw

    # rank check with column identification
    from scipy.linalg import qr as _qr

    Q, R, piv = _qr(Xw, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol_rank = diag[0] * max(n, k) * np.finfo(float).eps if diag.size else 0.0
    rank = int((diag > tol_rank).sum())
    if rank < k:
        raise RankDeficiencyError(str(names[piv[rank]]))

    beta = np.zeros(k)
    from scipy.linalg import solve_triangular

    beta[piv] = solve_triangular(R[:k, :k], Q.T[:k] @ yw)

    resid = y - X @ beta
    dof = n - k - absorbed_dof
    if dof < 1:
        raise ValidationError(f"non-positive residual dof ({dof})")

    XtX = Xw.T @ Xw
    bread = np.linalg.inv(XtX)
    scores = X * (w * resid)[:, None]
    rss = float(w @ resid**2)
    ybar = float(np.average(y, weights=w))
    tss = float(w @ (y - ybar) ** 2)

    vcov = sandwich_vcov(
        bread, scores, se_engine,
        n=n, dof=dof, rss=rss, cluster_ids=cluster_ids, time_ids=time_ids,
    )
    r2 = 1.0 - rss / tss if tss > 0 else 0.0
    return FitResult(
        names=tuple(names),
        beta=beta,
        vcov=vcov,
        n_obs=n,
        dof=dof,
        r_squared=r2,
        se_engine=se_engine,
        absorbed_dof=absorbed_dof,
        n_dropped_singletons=n_dropped_singletons,
        rss=rss,
        tss=tss,
    )


def absorb_and_fit(
    panel: Panel,
    outcome: str,
    regressors: Sequence[str],
    fe: FeSpec,
    se_engine: SeEngine = IID(),
    *,
    weights: np.ndarray | None = None,
    tol: float = 1e-8,
    max_sweeps: int = 10000,
) -> FitResult:
    """Absorb FEs from outcome and regressors, then run WLS."""
    res = absorb(panel, [outcome, *regressors], fe, weights=weights, tol=tol,
                 max_sweeps=max_sweeps)
    kept = panel.subset(res.keep) if res.n_dropped_singletons else panel
    w = None if weights is None else np.asarray(weights, float)[res.keep]
    return wls(
        res.residuals[:, 0],
        res.residuals[:, 1:],
        list(regressors),
        se_engine,
        weights=w,
        cluster_ids=kept.unordered_pair_codes(),
        time_ids=kept.years(),
        absorbed_dof=res.absorbed_dof,
        n_dropped_singletons=res.n_dropped_singletons,
    )


# ---------------------------------------------------------------------------
# panel construction

@dataclass
class PanelBuildReport:
    panel: Panel
    n_zero_trade_dropped: int = 0
    n_missing_score_dropped: int = 0
    n_domestic_dropped: int = 0


def _check_flow_frame(df: pd.DataFrame, what: str) -> pd.DataFrame:
    need = ["origin", "dest", "year", "value"]
    missing = [c for c in need if c not in df.columns]
    if missing:
        raise ValidationError(f"{what} table missing columns {missing}")
    dup = df.duplicated(subset=["origin", "dest", "year"])
    if dup.any():
        row = df[dup].iloc[0]
        raise ValidationError(
            f"duplicate key in {what} table: ({row['origin']}, {row['dest']}, {row['year']})"
        )
    return df


def build_panel(
    trade: pd.DataFrame,
    scores: Mapping[tuple[str, str], ScoreSeries],
    *,
    tariffs: pd.DataFrame | None = None,
    sanctions: pd.DataFrame | None = None,
    controls: pd.DataFrame | None = None,
    extra_scores: Mapping[str, Mapping[tuple[str, str], ScoreSeries]] | None = None,
    sample: str = "all",
    majors: Sequence[str] = MAJOR_ECONOMIES,
) -> PanelBuildReport:
    """Join trade flows with scores and covariates into a Panel.

    Zero or negative trade flows are dropped (log outcome) and counted,
    as are rows whose dyad-year has no score coverage.  Domestic rows
    (origin == dest), present in complete flow tables, are dropped and
    counted too.  Tariff rates are stored as ``log_gross_tariff`` =
    log(1 + rate).  Sanctions default to 0 where the table is silent;
    missing tariffs stay NaN.  ``sample`` is one of ``all``,
    ``major_major``, ``major_nonmajor``.
    """
    trade = _check_flow_frame(trade, "trade").copy()
    trade["year"] = trade["year"].astype(int)
    domestic = trade["origin"] == trade["dest"]
    n_domestic = int(domestic.sum())
    if n_domestic:
        trade = trade[~domestic]

    major_set = set(majors)
    if sample == "all":
        pass
    elif sample == "major_major":
        trade = trade[trade["origin"].isin(major_set) & trade["dest"].isin(major_set)]
    elif sample == "major_nonmajor":
        trade = trade[trade["origin"].isin(major_set) ^ trade["dest"].isin(major_set)]
    else:
        raise ValidationError(f"unknown sample {sample!r}")
    if len(trade) == 0:
        raise ValidationError(f"sample {sample!r} leaves no trade rows")

    positive = trade["value"] > 0
    n_zero = int((~positive).sum())
    trade = trade[positive].copy()
    if len(trade) == 0:
        raise ValidationError("no positive trade flows")
    trade["log_trade"] = np.log(trade["value"].to_numpy(float))

    def score_lookup(series_map, origins, dests, years_arr):
        out = np.full(len(origins), np.nan)
        for i, (o, d, t) in enumerate(zip(origins, dests, years_arr)):
            series = series_map.get(dyad_key(o, d))
            if series is not None and t in series:
                out[i] = series.value(t)
        return out

    trade["score"] = score_lookup(
        scores, trade["origin"].to_numpy(), trade["dest"].to_numpy(), trade["year"].to_numpy()
    )
    has_score = np.isfinite(trade["score"].to_numpy(float))
    n_missing = int((~has_score).sum())
    trade = trade[has_score]
    if len(trade) == 0:
        raise ValidationError("no overlap between trade flows and score coverage")

    for name, series_map in (extra_scores or {}).items():
        trade[name] = score_lookup(
            series_map, trade["origin"].to_numpy(), trade["dest"].to_numpy(),
            trade["year"].to_numpy(),
        )

    if tariffs is not None:
        tar = _check_flow_frame(tariffs, "tariff").copy()
        if (tar["value"] < 0).any():
            raise ValidationError("tariff rates must be nonnegative")
        tar["log_gross_tariff"] = np.log1p(tar["value"].to_numpy(float))
        trade = trade.merge(
            tar[["origin", "dest", "year", "log_gross_tariff"]],
            on=["origin", "dest", "year"], how="left",
        )

    if sanctions is not None:
        sanc = _check_flow_frame(sanctions, "sanction").copy()
        sanc = sanc.rename(columns={"value": "sanction_flag"})
        trade = trade.merge(
            sanc[["origin", "dest", "year", "sanction_flag"]],
            on=["origin", "dest", "year"], how="left",
        )
        trade["sanction_flag"] = trade["sanction_flag"].fillna(0.0)

    if controls is not None:
        need = {"origin", "dest"}
        if not need.issubset(controls.columns):
            raise ValidationError("controls table needs origin and dest columns")
        on = ["origin", "dest"] + (["year"] if "year" in controls.columns else [])
        if controls.duplicated(subset=on).any():
            raise ValidationError("duplicate keys in controls table")
        trade = trade.merge(controls, on=on, how="left")

    panel = Panel(trade.drop(columns=["value"]))
    return PanelBuildReport(
        panel=panel,
        n_zero_trade_dropped=n_zero,
        n_missing_score_dropped=n_missing,
        n_domestic_dropped=n_domestic,
    )


def residual_lead_series(
    panel: Panel,
    score_col: str,
    outcome_col: str,
    fe: FeSpec,
    pair: tuple[str, str],
    lead: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Score and led-outcome residuals for one directed pair.

    Residualizes both columns on ``fe`` over the full panel, then pairs
    the score residual at ``t`` with the outcome residual at ``t + lead``
    for the given (origin, dest) pair.  Returns (score_resid,
    outcome_resid_led, base_years).
    """
    res = absorb(panel, [score_col, outcome_col], fe)
    kept = panel.subset(res.keep) if res.n_dropped_singletons else panel
    mask = (kept.frame["origin"] == pair[0]) & (kept.frame["dest"] == pair[1])
    if not mask.any():
        raise ValidationError(f"pair {pair} not in panel after singleton dropping")
    rows = np.flatnonzero(mask.to_numpy())
    years = kept.years()[rows]
    by_year = {int(t): r for t, r in zip(years, rows)}
    s_out, y_out, t_out = [], [], []
    for t, r in sorted(by_year.items()):
        r_lead = by_year.get(t + lead)
        if r_lead is None:
            continue
        s_out.append(res.residuals[r, 0])
        y_out.append(res.residuals[r_lead, 1])
        t_out.append(t)
    if not s_out:
        raise ValidationError(f"no (t, t+{lead}) pairs available for {pair}")
    return np.array(s_out), np.array(y_out), np.array(t_out)
