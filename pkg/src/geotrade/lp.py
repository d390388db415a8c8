"""Local projections: dynamic responses of trade to alignment shocks.

One absorbed regression per horizon ``h``: the outcome led ``h`` years
is regressed on the shock at ``t`` plus ``lags`` own lags of outcome and
shock, after removing directed-pair, exporter-year, and importer-year
effects.  Each horizon keeps its own estimation sample (rows where the
lead and every control exist), so paths are comparable across horizons
but not forced onto a common sample.

Variants share the same engine:

* :func:`lp_irf` - outcome on shock (the response path).
* :func:`lp_autocorr` - the shock on itself (its persistence profile);
  the horizon-0 coefficient is 1 by construction and is not estimated.
* :func:`lp_iv` / :func:`reverse_lp` - per-horizon two-stage least
  squares with excluded instruments dated ``t``.
* :func:`block_bootstrap` - dyad-cluster resampling of any of the above.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import GeotradeError, ValidationError
from .panel import (
    THREE_WAY_FE,
    DriscollKraay,
    FeSpec,
    FitResult,
    Panel,
    REPLICA_COLUMN,
    SeEngine,
    absorb_arrays,
    sandwich_vcov,
    wls,
)
from .tables import fmt_float, write_rows

Z975 = 1.959963984540054

IRF_COLUMNS = ("horizon", "beta", "se", "band_low", "band_high", "n_obs", "kind")

KIND_OUTCOME = "outcome_on_shock"
KIND_AUTOCORR = "shock_autocorr"
KIND_IV = "iv"


class WeakInstrumentWarning(UserWarning):
    """First-stage F below 10 at some horizon."""


class OmittedHorizonWarning(UserWarning):
    """A horizon was skipped for lack of usable observations."""


@dataclass(frozen=True)
class LpSpec:
    """Configuration for one local-projection run."""

    outcome: str
    shock: str
    horizons: tuple[int, ...] = tuple(range(-8, 21))
    lags: int = 3
    fe: FeSpec = THREE_WAY_FE
    se_engine: SeEngine = field(default_factory=DriscollKraay)
    instruments: tuple[str, ...] = ()
    absorb_tol: float = 1e-8

    def __post_init__(self):
        if len(self.horizons) == 0:
            raise ValidationError("horizons must be nonempty")
        hs = tuple(int(h) for h in self.horizons)
        if len(set(hs)) != len(hs):
            raise ValidationError("duplicate horizons")
        object.__setattr__(self, "horizons", tuple(sorted(hs)))
        if self.lags < 0:
            raise ValidationError("lags must be >= 0")
        object.__setattr__(self, "instruments", tuple(self.instruments))


@dataclass
class Irf:
    """Estimated impulse-response path."""

    kind: str
    horizons: tuple[int, ...]
    beta: np.ndarray
    se: np.ndarray
    band_low: np.ndarray
    band_high: np.ndarray
    n_obs: np.ndarray
    first_stage_f: np.ndarray | None = None
    omitted: tuple[int, ...] = ()

    def __post_init__(self):
        m = len(self.horizons)
        for name in ("beta", "se", "band_low", "band_high", "n_obs"):
            if len(getattr(self, name)) != m:
                raise ValidationError(f"irf field {name} length mismatch")
        if any(h2 <= h1 for h1, h2 in zip(self.horizons, self.horizons[1:])):
            raise ValidationError("horizons must be strictly increasing")
        if not (
            np.all(self.band_low <= self.beta + 1e-12)
            and np.all(self.beta <= self.band_high + 1e-12)
        ):
            raise ValidationError("bands must bracket the point estimates")

    def _index(self, h: int) -> int:
        try:
            return self.horizons.index(h)
        except ValueError:
            raise KeyError(f"horizon {h} not estimated") from None

    def value(self, h: int) -> float:
        return float(self.beta[self._index(h)])

    def positive_path(self) -> tuple[tuple[int, ...], np.ndarray]:
        """Horizons >= 0 and their coefficients (for convolutions)."""
        idx = [i for i, h in enumerate(self.horizons) if h >= 0]
        hs = tuple(self.horizons[i] for i in idx)
        if hs != tuple(range(len(hs))):
            raise ValidationError("nonnegative horizons must be contiguous from 0")
        return hs, self.beta[idx]


def write_irf(irf: Irf, path) -> None:
    rows = []
    for i, h in enumerate(irf.horizons):
        rows.append(
            (
                h,
                fmt_float(irf.beta[i]),
                fmt_float(irf.se[i]),
                fmt_float(irf.band_low[i]),
                fmt_float(irf.band_high[i]),
                int(irf.n_obs[i]),
                irf.kind,
            )
        )
    write_rows(path, IRF_COLUMNS, rows)


def read_irf(source) -> Irf:
    import csv as _csv
    import io as _io
    from pathlib import Path as _Path

    text = _Path(source).read_text() if isinstance(source, (str, _Path)) else source.read()
    reader = _csv.reader(_io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != IRF_COLUMNS:
        raise ValidationError(f"IRF CSV must start with header {','.join(IRF_COLUMNS)}")
    rows = [r for r in reader if r]
    if not rows:
        raise ValidationError("IRF CSV has no rows")
    kinds = {r[6] for r in rows}
    if len(kinds) != 1:
        raise ValidationError(f"IRF CSV mixes kinds {sorted(kinds)}")
    rows.sort(key=lambda r: int(r[0]))
    return Irf(
        kind=rows[0][6],
        horizons=tuple(int(r[0]) for r in rows),
        beta=np.array([float(r[1]) for r in rows]),
        se=np.array([float(r[2]) for r in rows]),
        band_low=np.array([float(r[3]) for r in rows]),
        band_high=np.array([float(r[4]) for r in rows]),
        n_obs=np.array([int(r[5]) for r in rows]),
    )


# ---------------------------------------------------------------------------
# lead/lag grid

class PanelGrid:
    """O(1) lead/lag lookups on a (directed pair, year) grid."""

    def __init__(self, panel: Panel):
        pair_raw = panel.directed_pair_codes()
        uniq, self._pair = np.unique(pair_raw, return_inverse=True)
        years = panel.years()
        self._t0 = int(years.min())
        self._span = int(years.max()) - self._t0 + 1
        self._tidx = years - self._t0
        self._pos = np.full((len(uniq), self._span), -1, dtype=np.intp)
        if np.any(self._pos[self._pair, self._tidx] != -1):  # pragma: no cover
            raise ValidationError("duplicate (pair, year) rows")
        self._pos[self._pair, self._tidx] = np.arange(len(years), dtype=np.intp)

    def shift(self, values: np.ndarray, k: int) -> np.ndarray:
        """Value of the same pair at year + k, NaN when absent."""
        out = np.full(values.shape[0], np.nan)
        tgt = self._tidx + k
        ok = (tgt >= 0) & (tgt < self._span)
        src = self._pos[self._pair[ok], tgt[ok]]
        found = src >= 0
        rows = np.flatnonzero(ok)[found]
        out[rows] = values[src[found]]
        return out


# ---------------------------------------------------------------------------
# engine

def _per_horizon_engine(se_engine: SeEngine, h: int) -> SeEngine:
    # Driscoll-Kraay bandwidth default grows with the horizon: the lead
    # overlap induces an MA(|h|)-type error, and 1.5x covers leakage.
    if isinstance(se_engine, DriscollKraay) and se_engine.bandwidth is None:
        return DriscollKraay(bandwidth=int(np.floor(1.5 * abs(h))) + 1)
    return se_engine


def _design_names(spec: LpSpec, kind: str, h: int) -> list[str]:
    names = [spec.shock]
    if kind != KIND_AUTOCORR:
        for lag in range(1, spec.lags + 1):
            if h < 0 and lag == -h:
                continue  # the dependent variable itself; drop to stay full rank
            names.append(f"{spec.outcome}_lag{lag}")
    for lag in range(1, spec.lags + 1):
        if kind == KIND_AUTOCORR and h < 0 and lag == -h:
            continue
        names.append(f"{spec.shock}_lag{lag}")
    return names


def _run_lp(panel: Panel, spec: LpSpec, kind: str) -> Irf:
    if kind == KIND_AUTOCORR and spec.outcome != spec.shock:
        raise ValidationError("autocorrelation runs need outcome == shock")
    if kind == KIND_IV and not spec.instruments:
        raise ValidationError("IV runs need at least one instrument column")

    grid = PanelGrid(panel)
    outcome_vals = panel.column(spec.outcome)
    shock_vals = panel.column(spec.shock)

    named: dict[str, np.ndarray] = {spec.shock: shock_vals}
    for lag in range(1, spec.lags + 1):
        named[f"{spec.shock}_lag{lag}"] = grid.shift(shock_vals, -lag)
        if kind != KIND_AUTOCORR:
            named[f"{spec.outcome}_lag{lag}"] = grid.shift(outcome_vals, -lag)
    instrument_vals = {z: panel.column(z) for z in spec.instruments}

    fe_raw = panel.fe_codes(spec.fe)
    cluster_raw = panel.unordered_pair_codes()
    time_raw = panel.years()

    horizons, betas, ses, n_obs = [], [], [], []
    fstats = []
    omitted: list[int] = []

    for h in spec.horizons:
        if kind == KIND_AUTOCORR and h == 0:
            horizons.append(0)
            betas.append(1.0)
            ses.append(0.0)
            n_obs.append(int(np.isfinite(shock_vals).sum()))
            fstats.append(np.nan)
            continue

        y = grid.shift(outcome_vals, h)
        names = _design_names(spec, kind, h)
        cols = [named[c] for c in names]
        zcols = [instrument_vals[z] for z in spec.instruments] if kind == KIND_IV else []
        mask = np.isfinite(y)
        for c in cols + zcols:
            mask &= np.isfinite(c)
        min_rows = len(names) + len(zcols) + 2
        if mask.sum() < min_rows:
            omitted.append(h)
            continue

        X = np.column_stack([y] + cols + zcols)[mask]
        codes = [c[mask] for c in fe_raw]
        try:
            res = absorb_arrays(
                X, codes, names=["__y__"] + names + list(spec.instruments),
                tol=spec.absorb_tol,
            )
            engine = _per_horizon_engine(spec.se_engine, h)
            cl = cluster_raw[mask][res.keep]
            tm = time_raw[mask][res.keep]
            y_res = res.residuals[:, 0]
            k_reg = len(names)
            X_res = res.residuals[:, 1 : 1 + k_reg]
            if kind == KIND_IV:
                Z_res = res.residuals[:, 1 + k_reg :]
                fit, fstat = _two_stage(
                    y_res, X_res, names, Z_res, list(spec.instruments), engine,
                    cluster_ids=cl, time_ids=tm, absorbed_dof=res.absorbed_dof,
                )
                if fstat < 10.0:
                    warnings.warn(
                        f"weak instruments at horizon {h}: first-stage F = {fstat:.2f}",
                        WeakInstrumentWarning,
                        stacklevel=3,
                    )
                fstats.append(fstat)
            else:
                fit = wls(
                    y_res, X_res, names, engine,
                    cluster_ids=cl, time_ids=tm, absorbed_dof=res.absorbed_dof,
                    n_dropped_singletons=res.n_dropped_singletons,
                )
                fstats.append(np.nan)
        except (ValidationError,) as exc:
            omitted.append(h)
            warnings.warn(
                f"horizon {h} omitted: {exc}", OmittedHorizonWarning, stacklevel=3
            )
            continue

        horizons.append(h)
        betas.append(fit.coef(spec.shock))
        ses.append(fit.stderr(spec.shock))
        n_obs.append(fit.n_obs)

    if not horizons:
        raise ValidationError("no horizon could be estimated")
    if omitted:
        warnings.warn(
            f"omitted horizons: {omitted}", OmittedHorizonWarning, stacklevel=2
        )

    beta = np.array(betas)
    se = np.array(ses)
    f_arr = np.array(fstats) if kind == KIND_IV else None
    return Irf(
        kind=kind,
        horizons=tuple(horizons),
        beta=beta,
        se=se,
        band_low=beta - Z975 * se,
        band_high=beta + Z975 * se,
        n_obs=np.array(n_obs, dtype=int),
        first_stage_f=f_arr,
        omitted=tuple(omitted),
    )


def _two_stage(
    y: np.ndarray,
    X: np.ndarray,
    names: Sequence[str],
    Z: np.ndarray,
    z_names: Sequence[str],
    se_engine: SeEngine,
    *,
    cluster_ids: np.ndarray,
    time_ids: np.ndarray,
    absorbed_dof: int,
):
    """2SLS on residualized data; first column of X is the endogenous shock.

    Included controls (the lag columns) instrument themselves; ``Z`` holds
    the excluded instruments.  Returns (FitResult, first-stage F).
    """
    n, k = X.shape
    kz = Z.shape[1]
    W = X[:, 1:]
    endog = X[:, 0]

    full = np.column_stack([Z, W]) if W.size else Z
    coef_fs, _, rank_fs, _ = np.linalg.lstsq(full, endog, rcond=None)
    if rank_fs < full.shape[1]:
        raise ValidationError("first stage is rank deficient")
    fs_resid = endog - full @ coef_fs
    rss_u = float(fs_resid @ fs_resid)
    if W.size:
        coef_r, _, _, _ = np.linalg.lstsq(W, endog, rcond=None)
        rss_r = float(((endog - W @ coef_r) ** 2).sum())
    else:
        rss_r = float(endog @ endog)
    dof_fs = n - full.shape[1] - absorbed_dof
    if dof_fs < 1:
        raise ValidationError("first stage has no residual degrees of freedom")
    if rss_u <= 0:
        fstat = np.inf
    else:
        fstat = max(0.0, (rss_r - rss_u) / kz / (rss_u / dof_fs))

    proj, _, _, _ = np.linalg.lstsq(full, X, rcond=None)
    X_hat = full @ proj
    gram = X_hat.T @ X_hat
    if np.linalg.matrix_rank(gram) < k:
        raise ValidationError("instrumented design is rank deficient")
    bread = np.linalg.inv(gram)
    beta = bread @ (X_hat.T @ y)
    resid = y - X @ beta
    dof = n - k - absorbed_dof
    if dof < 1:
        raise ValidationError(f"non-positive residual dof ({dof})")
    scores = X_hat * resid[:, None]
    rss = float(resid @ resid)
    vcov = sandwich_vcov(
        bread, scores, se_engine,
        n=n, dof=dof, rss=rss, cluster_ids=cluster_ids, time_ids=time_ids,
    )
    tss = float(((y - y.mean()) ** 2).sum())
    fit = FitResult(
        names=tuple(names),
        beta=beta,
        vcov=vcov,
        n_obs=n,
        dof=dof,
        r_squared=1.0 - rss / tss if tss > 0 else 0.0,
        se_engine=se_engine,
        absorbed_dof=absorbed_dof,
        rss=rss,
        tss=tss,
    )
    return fit, float(fstat)


# ---------------------------------------------------------------------------
# public entry points

def lp_irf(panel: Panel, spec: LpSpec) -> Irf:
    """Response path of the outcome to the shock."""
    return _run_lp(panel, spec, KIND_OUTCOME)


def lp_autocorr(
    panel: Panel,
    shock: str,
    horizons: Sequence[int] = tuple(range(0, 11)),
    lags: int = 3,
    fe: FeSpec = THREE_WAY_FE,
    se_engine: SeEngine | None = None,
    absorb_tol: float = 1e-8,
) -> Irf:
    """Persistence profile of the shock itself.

    Regresses the shock led ``h`` on the shock at ``t`` and its lags; no
    outcome lags enter (they would duplicate the shock lags).  At h = 0
    the coefficient is 1 by definition and is recorded, not estimated.
    """
    spec = LpSpec(
        outcome=shock,
        shock=shock,
        horizons=tuple(horizons),
        lags=lags,
        fe=fe,
        se_engine=se_engine if se_engine is not None else DriscollKraay(),
        absorb_tol=absorb_tol,
    )
    return _run_lp(panel, spec, KIND_AUTOCORR)


def lp_iv(panel: Panel, spec: LpSpec) -> Irf:
    """Per-horizon 2SLS using ``spec.instruments`` (dated t) for the shock."""
    return _run_lp(panel, spec, KIND_IV)


def reverse_lp(
    panel: Panel,
    trade_shock: str,
    score_outcome: str,
    instruments: Sequence[str],
    horizons: Sequence[int] = tuple(range(0, 11)),
    lags: int = 3,
    fe: FeSpec = THREE_WAY_FE,
    se_engine: SeEngine | None = None,
) -> Irf:
    """Response of the alignment score to an instrumented trade shock."""
    if not instruments:
        raise ValidationError("reverse_lp needs instrument columns (e.g. predicted trade)")
    for col in instruments:
        if col not in panel.frame.columns:
            raise ValidationError(f"instrument column {col!r} not in panel")
    spec = LpSpec(
        outcome=score_outcome,
        shock=trade_shock,
        horizons=tuple(horizons),
        lags=lags,
        fe=fe,
        se_engine=se_engine if se_engine is not None else DriscollKraay(),
        instruments=tuple(instruments),
    )
    return _run_lp(panel, spec, KIND_IV)


# ---------------------------------------------------------------------------
# dyad-cluster block bootstrap

@dataclass
class BootstrapBands:
    """Percentile bands from dyad-cluster resampling."""

    horizons: tuple[int, ...]
    band_low: np.ndarray
    band_high: np.ndarray
    draws: int
    n_failed: int
    paths: np.ndarray  # (successful draws, n_horizons)


def resample_dyads(panel: Panel, rng: np.random.Generator) -> Panel:
    """Resample unordered dyads with replacement.

    Every sampled copy becomes its own pair for the dyad fixed effect
    (and its own cluster), while country-year identities are preserved.
    """
    u_codes = panel.unordered_pair_codes()
    uniq = np.unique(u_codes)
    row_lists = {int(g): np.flatnonzero(u_codes == g) for g in uniq}
    picks = rng.choice(uniq, size=len(uniq), replace=True)
    o_lt_d = (
        panel.frame["origin"].to_numpy() < panel.frame["dest"].to_numpy()
    ).astype(np.int64)
    idx_parts = []
    replica_parts = []
    for j, g in enumerate(picks):
        rows = row_lists[int(g)]
        idx_parts.append(rows)
        replica_parts.append(2 * j + o_lt_d[rows])
    idx = np.concatenate(idx_parts)
    frame = panel.frame.iloc[idx].copy()
    frame[REPLICA_COLUMN] = np.concatenate(replica_parts)
    return Panel(frame, allow_duplicates=True)


def block_bootstrap(
    panel: Panel,
    spec: LpSpec,
    draws: int = 200,
    seed: int = 0,
    runner: Callable[[Panel, LpSpec], Irf] | None = None,
    max_retries: int = 10,
) -> BootstrapBands:
    """Percentile 95% bands for an LP path under dyad resampling.

    Each draw resamples unordered dyads with replacement, re-runs the
    full pipeline (singleton dropping, absorption, WLS) and keeps the
    point path.  Draws whose resample cannot be estimated (degenerate
    samples) are retried up to ``max_retries`` times, then counted in
    ``n_failed``.  Deterministic for a given ``seed``.
    """
    if draws < 1:
        raise ValidationError("draws must be >= 1")
    run = runner if runner is not None else lp_irf
    rng = np.random.default_rng(seed)
    paths = []
    n_failed = 0
    for _ in range(draws):
        ok = False
        for _attempt in range(max_retries + 1):
            resampled = resample_dyads(panel, rng)
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", OmittedHorizonWarning)
                    warnings.simplefilter("ignore", WeakInstrumentWarning)
                    irf = run(resampled, spec)
            except GeotradeError:
                continue
            if irf.horizons != spec.horizons:
                continue  # some horizon vanished; treat as degenerate
            paths.append(irf.beta)
            ok = True
            break
        if not ok:
            n_failed += 1
    if not paths:
        raise ValidationError("every bootstrap draw failed")
    arr = np.vstack(paths)
    lo, hi = np.percentile(arr, [2.5, 97.5], axis=0)
    return BootstrapBands(
        horizons=spec.horizons,
        band_low=lo,
        band_high=hi,
        draws=draws,
        n_failed=n_failed,
        paths=arr,
    )
