"""Decomposing response paths into transitory and permanent components.

An estimated response path mixes the outcome's reaction to a one-period
shock with the shock's own persistence.  Given the shock's estimated
autocorrelation path ``acf`` (acf[0] = 1), the deconvolution weights
``p`` solve ``conv(acf, p) = (1, 0, 0, ...)``; convolving the raw
response path with ``p`` yields the response to a one-time transitory
innovation, and its running sum is the response to a permanent shift.

Bands come from a dyad-cluster bootstrap that re-estimates both the
response path and the autocorrelation path on each resample, so the
uncertainty in the persistence profile propagates into both outputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import GeotradeError, NumericalError, ValidationError
from .lp import Irf, LpSpec, OmittedHorizonWarning, WeakInstrumentWarning, lp_autocorr, lp_irf, resample_dyads
from .panel import Panel


def transitory_weights(acf: Sequence[float]) -> np.ndarray:
    """Deconvolution weights ``p`` with ``conv(acf, p) = e1``.

    Solves the lower-triangular Toeplitz system by forward substitution.
    ``acf[0]`` is normally 1 (a path's contemporaneous autocorrelation);
    it must be nonzero.
    """
    phi = np.asarray(acf, float)
    if phi.ndim != 1 or phi.size == 0:
        raise ValidationError("acf must be a nonempty 1-d sequence")
    if not np.isfinite(phi).all():
        raise ValidationError("acf contains non-finite values")
    if phi[0] == 0.0:
        raise ValidationError("acf[0] must be nonzero (normalize to 1)")
    n = phi.size
    p = np.zeros(n)
    p[0] = 1.0 / phi[0]
    for i in range(1, n):
        acc = 0.0
        for j in range(1, i + 1):
            acc += phi[j] * p[i - j]
        p[i] = -acc / phi[0]
    return p


def transitory_irf(beta: Sequence[float], weights: Sequence[float]) -> np.ndarray:
    """Convolve a raw response path with deconvolution weights.

    ``beta[h]`` is the response at horizon h >= 0; ``weights`` must cover
    at least as many horizons.  Returns the transitory-shock path of the
    same length.
    """
    b = np.asarray(beta, float)
    p = np.asarray(weights, float)
    if b.ndim != 1 or p.ndim != 1:
        raise ValidationError("beta and weights must be 1-d")
    if p.size < b.size:
        raise ValidationError(
            f"weights cover {p.size} horizons but beta has {b.size}; "
            "pad the acf with zeros beyond its estimated range first"
        )
    return np.convolve(p, b)[: b.size]


def permanent_irf(transitory: Sequence[float]) -> np.ndarray:
    """Running sum of the transitory path: response to a permanent shift."""
    t = np.asarray(transitory, float)
    if t.ndim != 1:
        raise ValidationError("transitory path must be 1-d")
    return np.cumsum(t)


@dataclass
class DecomposedIrf:
    """Transitory and permanent response paths with optional bands.

    ``permanent`` is the canonical accumulator: ``transitory`` is stored
    as its first difference, so ``permanent[h] - permanent[h-1] ==
    transitory[h]`` holds bit for bit.
    """

    horizons: tuple[int, ...]
    transitory: np.ndarray
    permanent: np.ndarray
    acf: np.ndarray
    weights: np.ndarray
    transitory_low: np.ndarray | None = None
    transitory_high: np.ndarray | None = None
    permanent_low: np.ndarray | None = None
    permanent_high: np.ndarray | None = None
    draws: int = 0
    n_failed: int = 0

    def __post_init__(self):
        if self.horizons != tuple(range(len(self.horizons))):
            raise ValidationError("decomposition horizons must run 0..H")
        if not np.array_equal(
            np.diff(self.permanent, prepend=0.0), self.transitory
        ):
            raise ValidationError(
                "permanent differences must equal the transitory path exactly"
            )


def _paths_from(beta: np.ndarray, acf: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(weights, transitory, permanent) with the shared-accumulator contract."""
    H = beta.size
    phi = np.zeros(H)
    m = min(H, acf.size)
    phi[:m] = acf[:m]
    p = transitory_weights(phi)
    trans_raw = transitory_irf(beta, p)
    perm = np.cumsum(trans_raw)
    trans = np.diff(perm, prepend=0.0)
    return p, trans, perm


def decompose(outcome_irf: Irf, acf_irf: Irf) -> DecomposedIrf:
    """Point decomposition of an estimated response path.

    Uses the nonnegative horizons of both inputs; autocorrelations beyond
    the estimated range count as fully dissipated (zero).
    """
    h_out, beta = outcome_irf.positive_path()
    h_acf, acf = acf_irf.positive_path()
    if not h_out or not h_acf:
        raise ValidationError("both paths need horizon-0 estimates")
    if abs(acf[0] - 1.0) > 1e-9:
        raise ValidationError("autocorrelation path must start at 1 (horizon 0)")
    p, trans, perm = _paths_from(beta, acf)
    return DecomposedIrf(
        horizons=h_out,
        transitory=trans,
        permanent=perm,
        acf=np.asarray(acf, float),
        weights=p,
    )


def bootstrap_decomposition(
    panel: Panel,
    outcome_spec: LpSpec,
    *,
    acf_horizons: Sequence[int] | None = None,
    acf_lags: int | None = None,
    draws: int = 200,
    seed: int = 0,
    max_failure_share: float = 0.2,
) -> DecomposedIrf:
    """Decomposition with dyad-bootstrap percentile bands.

    Point paths come from the original sample's two-step estimates; each
    bootstrap draw resamples dyads once, re-estimates both the response
    path and the autocorrelation path on that resample, and re-runs the
    deconvolution.  Draws whose resample cannot deliver the full horizon
    grid count as failed; more than ``max_failure_share`` failures abort.
    """
    if draws < 1:
        raise ValidationError("draws must be >= 1")
    pos_h = tuple(h for h in outcome_spec.horizons if h >= 0)
    if pos_h != tuple(range(len(pos_h))) or not pos_h:
        raise ValidationError("outcome horizons must include a contiguous 0..H block")
    if acf_horizons is None:
        acf_horizons = pos_h
    acf_horizons = tuple(sorted(int(h) for h in acf_horizons))
    if acf_horizons[0] != 0:
        raise ValidationError("acf horizons must start at 0")
    if acf_lags is None:
        acf_lags = outcome_spec.lags

    def estimate(p: Panel) -> tuple[np.ndarray, np.ndarray]:
        irf_out = lp_irf(p, outcome_spec)
        irf_acf = lp_autocorr(
            p, outcome_spec.shock, horizons=acf_horizons, lags=acf_lags,
            fe=outcome_spec.fe, se_engine=outcome_spec.se_engine,
            absorb_tol=outcome_spec.absorb_tol,
        )
        if irf_out.horizons != outcome_spec.horizons:
            raise ValidationError("response path lost horizons")
        if irf_acf.horizons != acf_horizons:
            raise ValidationError("autocorrelation path lost horizons")
        _, beta = irf_out.positive_path()
        _, acf = irf_acf.positive_path()
        return beta, acf

    beta0, acf0 = estimate(panel)
    p0, trans0, perm0 = _paths_from(beta0, acf0)

    rng = np.random.default_rng(seed)
    trans_draws, perm_draws = [], []
    n_failed = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OmittedHorizonWarning)
        warnings.simplefilter("ignore", WeakInstrumentWarning)
        for _ in range(draws):
            resampled = resample_dyads(panel, rng)
            try:
                beta_b, acf_b = estimate(resampled)
            except GeotradeError:
                n_failed += 1
                continue
            _, t_b, m_b = _paths_from(beta_b, acf_b)
            trans_draws.append(t_b)
            perm_draws.append(m_b)
    if n_failed > max_failure_share * draws:
        raise NumericalError(
            f"{n_failed}/{draws} bootstrap draws failed (limit {max_failure_share:.0%})"
        )

    t_arr = np.vstack(trans_draws)
    m_arr = np.vstack(perm_draws)
    t_lo, t_hi = np.percentile(t_arr, [2.5, 97.5], axis=0)
    m_lo, m_hi = np.percentile(m_arr, [2.5, 97.5], axis=0)
    return DecomposedIrf(
        horizons=pos_h,
        transitory=trans0,
        permanent=perm0,
        acf=acf0,
        weights=p0,
        transitory_low=t_lo,
        transitory_high=t_hi,
        permanent_low=m_lo,
        permanent_high=m_hi,
        draws=draws,
        n_failed=n_failed,
    )


# ---------------------------------------------------------------------------
# tables

DECOMPOSED_COLUMNS = (
    "horizon", "transitory", "permanent",
    "transitory_low", "transitory_high", "permanent_low", "permanent_high",
)


def write_decomposed(dec: DecomposedIrf, path) -> None:
    """One row per horizon; band cells are empty without a bootstrap."""
    from .tables import fmt_float, write_rows

    def cell(arr, i):
        return fmt_float(arr[i]) if arr is not None else ""

    rows = [
        (
            h,
            fmt_float(dec.transitory[i]),
            fmt_float(dec.permanent[i]),
            cell(dec.transitory_low, i),
            cell(dec.transitory_high, i),
            cell(dec.permanent_low, i),
            cell(dec.permanent_high, i),
        )
        for i, h in enumerate(dec.horizons)
    ]
    write_rows(path, DECOMPOSED_COLUMNS, rows)


def read_decomposed(source) -> DecomposedIrf:
    """Read paths written by :func:`write_decomposed`.

    The deconvolution inputs (autocorrelation path and weights) are not
    part of the table, so they come back empty; the path identities
    still hold bit for bit.
    """
    from .tables import _read_csv

    df = _read_csv(source)
    missing = [c for c in DECOMPOSED_COLUMNS[:3] if c not in df.columns]
    if missing:
        raise ValidationError(f"decomposition table missing columns {missing}")
    df = df.sort_values("horizon")
    horizons = tuple(int(h) for h in df["horizon"])

    def band(name):
        if name not in df.columns or df[name].isna().all():
            return None
        return df[name].to_numpy(float)

    return DecomposedIrf(
        horizons=horizons,
        transitory=df["transitory"].to_numpy(float),
        permanent=df["permanent"].to_numpy(float),
        acf=np.array([]),
        weights=np.array([]),
        transitory_low=band("transitory_low"),
        transitory_high=band("transitory_high"),
        permanent_low=band("permanent_low"),
        permanent_high=band("permanent_high"),
    )
