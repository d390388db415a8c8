"""Command-line runner for the scoring, estimation, and counterfactual pipeline.

Every subcommand resolves its parameters in three layers (built-in
defaults, then the section named after the subcommand in an INI-style
config file, then explicit flags), validates and computes entirely in
memory, and only then writes its outputs together with a JSON manifest
echoing the fully resolved configuration.  A failed run therefore
leaves no partial artifacts, and two runs with the same manifest write
byte-identical files.

Exit codes: 0 success, 2 input validation, 3 numerical failure, 4 I/O.

Package imports happen inside the handlers so that ``--threads`` can
cap the numerical libraries' thread pools before they load.
"""

from __future__ import annotations

import argparse
import configparser
import enum
import json
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .errors import NumericalError, ValidationError

PROG = "geotrade"


# ---------------------------------------------------------------------------
# parameter schema

@dataclass(frozen=True)
class Opt:
    """One command parameter, shared by the flag parser and the config file."""

    name: str                       # flag spelling, hyphenated
    kind: str                       # str/int/float/flag/int_pair/str_pair/list/float_list
    default: object = None
    required: bool = False
    choices: tuple[str, ...] | None = None
    help: str = ""

    @property
    def dest(self) -> str:
        return self.name.replace("-", "_")


_CONFIG_OPT = Opt("config", "str", help="INI config file; section [command] supplies defaults")
_THREADS_OPT = Opt("threads", "int", help="cap worker threads in numerical libraries")
_OUT_FILE = Opt("out", "str", required=True, help="output CSV path")
_OUT_DIR = Opt("out", "str", required=True, help="output directory")

_PANEL_IN = Opt("panel", "str", required=True, help="panel CSV from the panel command")
_SE_OPTS = (
    Opt("se", "str", default="dk", choices=("iid", "dyad", "dk"), help="standard error engine"),
    Opt("dk-bandwidth", "int", help="HAC lag window (dk only; default is the T-based rule)"),
)

SUMMARY = {
    "score": "turn an event stream into dyad-year alignment scores",
    "panel": "join flows, scores, and covariates into an estimation panel",
    "gravity": "static fixed-effects gravity regression",
    "lp": "dynamic response paths by local projections",
    "bloc": "classify countries into trade blocs by residual drift",
    "decompose": "split a response path into transitory and permanent parts",
    "counterfactual": "calibrate and solve general-equilibrium scenarios",
    "synth": "generate a synthetic world with known ground truth",
}

OPTIONS: dict[str, tuple[Opt, ...]] = {
    "score": (
        Opt("events", "str", required=True, help="event stream to score"),
        Opt("fmt", "str", default="csv", choices=("csv", "json"), help="event file format"),
        Opt("delta", "float", default=0.3, help="annual decay of the event stock (1.0 = unsmoothed)"),
        Opt("through-year", "int", help="carry scores forward through this year"),
        _OUT_FILE,
    ),
    "panel": (
        Opt("trade", "str", required=True, help="bilateral flow table"),
        Opt("scores", "str", required=True, help="score CSV from the score command"),
        Opt("tariffs", "str", help="net tariff rates in flow-table layout"),
        Opt("sanctions", "str", help="sanction indicators in flow-table layout"),
        Opt("controls", "str", help="dyad (or dyad-year) covariate table"),
        Opt("sample", "str", default="all", choices=("all", "major_major", "major_nonmajor"),
            help="dyad subsample"),
        _OUT_FILE,
    ),
    "gravity": (
        _PANEL_IN,
        Opt("score", "str", default="score", help="alignment regressor column"),
        Opt("controls", "list", default=(), help="comma-separated control columns"),
        Opt("outcome", "str", default="log_trade", help="dependent column"),
        Opt("fe", "str", default="gravity", choices=("gravity", "threeway"), help="fixed effects"),
        Opt("se", "str", default="dyad", choices=("iid", "dyad", "dk"), help="standard error engine"),
        Opt("dk-bandwidth", "int", help="HAC lag window (dk only)"),
        Opt("yearly", "flag", default=False, help="also estimate score-by-year coefficients"),
        _OUT_FILE,
    ),
    "lp": (
        _PANEL_IN,
        Opt("outcome", "str", default="log_trade", help="dependent column"),
        Opt("shock", "str", default="score", help="impulse column"),
        Opt("horizons", "int_pair", default=(-8, 20), help="first and last horizon"),
        Opt("lags", "int", default=3, help="shock and outcome lags"),
        Opt("fe", "str", default="threeway", choices=("gravity", "threeway"), help="fixed effects"),
        *_SE_OPTS,
        Opt("autocorr", "flag", default=False, help="also estimate the shock persistence path"),
        Opt("acf-horizons", "int_pair", default=(0, 10), help="persistence horizon range"),
        Opt("acf-lags", "int", help="persistence lags (default: same as --lags)"),
        Opt("iv", "str", help="instruments=col1,col2 switches to per-horizon 2SLS"),
        Opt("decompose", "flag", default=False,
            help="write transitory/permanent paths (implies --autocorr)"),
        Opt("bootstrap", "int", default=0, help="dyad bootstrap draws for decomposition bands"),
        Opt("seed", "int", default=0, help="seed for bootstrap resampling"),
        _OUT_DIR,
    ),
    "bloc": (
        _PANEL_IN,
        Opt("window", "int_pair", required=True, help="start and end year of the drift window"),
        Opt("anchors", "str_pair", default=("USA", "CHN"), help="bloc anchor countries"),
        Opt("trade-col", "str", default="log_trade", help="trade column"),
        Opt("score-col", "str", default="score", help="score column"),
        _OUT_FILE,
    ),
    "decompose": (
        Opt("outcome-irf", "str", required=True, help="response path CSV (lp output)"),
        Opt("acf-irf", "str", required=True, help="shock persistence CSV (lp --autocorr output)"),
        _OUT_FILE,
    ),
    "counterfactual": (
        Opt("trade", "str", required=True, help="bilateral flows including domestic rows"),
        Opt("scores", "str", required=True, help="score CSV"),
        Opt("response", "str", required=True,
            help="shock decomposition CSV (lp --decompose output); its permanent path prices scores"),
        Opt("tariffs", "str", help="net tariff rates in flow-table layout"),
        Opt("base-year", "int", required=True, help="calibration year"),
        Opt("years", "int_pair", help="first and last scenario year (default: rest of the sample)"),
        Opt("sigma", "float", default=4.0, help="trade elasticity of substitution"),
        Opt("scenarios", "list", default=("Baseline", "NoGeo", "NoTariff", "OnlyUnobserved"),
            help="comma-separated scenario subset"),
        Opt("damping", "float", default=0.5, help="wage update damping"),
        Opt("tol", "float", default=1e-10, help="market clearing tolerance"),
        Opt("max-iter", "int", default=100_000, help="solver iteration cap"),
        Opt("annualize", "flag", default=False, help="report annualized growth contributions"),
        _OUT_DIR,
    ),
    "synth": (
        Opt("flavor", "str", choices=("lp", "gravity", "ge"), help="world design"),
        Opt("n-countries", "int"),
        Opt("start-year", "int"),
        Opt("n-years", "int"),
        Opt("seed", "int", help="world seed; the only source of randomness"),
        Opt("ar-coef", "float", help="AR(1) coefficient of planted scores"),
        Opt("innovation-scale", "float", help="score innovation s.d. (0 plants constant scores)"),
        Opt("events-per-year", "float"),
        Opt("count-jitter", "flag", help="draw event counts instead of fixing them"),
        Opt("decay", "float", help="score stock decay used by the generator"),
        Opt("score-common-weight", "float", help="share of a common factor in score innovations"),
        Opt("beta-path", "float_list", help="planted response path, comma separated"),
        Opt("alpha", "float", help="static score effect (gravity flavor)"),
        Opt("distance-decay", "float"),
        Opt("contiguity-effect", "float"),
        Opt("fe-scale", "float"),
        Opt("home-premium", "float"),
        Opt("noise-scale", "float"),
        Opt("noise-ar", "float", help="AR(1) coefficient of the disturbance"),
        Opt("noise-common-scale", "float", help="common time factor loading in the disturbance"),
        Opt("tariff-rate", "float", help="terminal net tariff rate of the planted ramp"),
        Opt("sigma", "float"),
        Opt("unobserved-scale", "float", help="log-normal friction walk s.d. (ge flavor)"),
        Opt("geo-step", "float", help="per-year log geo cost drift (ge flavor)"),
        _OUT_DIR,
    ),
}


# ---------------------------------------------------------------------------
# resolution: defaults < config file < explicit flags

def _convert(opt: Opt, raw: str):
    tokens = [t for t in re.split(r"[,\s]+", raw.strip()) if t]
    try:
        if opt.kind == "int":
            return int(raw)
        if opt.kind == "float":
            return float(raw)
        if opt.kind == "flag":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if opt.kind == "int_pair":
            if len(tokens) != 2:
                raise ValueError("expected two integers")
            return (int(tokens[0]), int(tokens[1]))
        if opt.kind == "str_pair":
            if len(tokens) != 2:
                raise ValueError("expected two values")
            return (tokens[0], tokens[1])
        if opt.kind == "list":
            return tuple(tokens)
        if opt.kind == "float_list":
            return tuple(float(t) for t in tokens)
        return raw
    except ValueError as exc:
        raise ValidationError(f"config key {opt.name!r}: {exc}") from None


def _add_argument(parser: argparse.ArgumentParser, opt: Opt) -> None:
    flag = f"--{opt.name}"
    if opt.kind == "flag":
        parser.add_argument(flag, dest=opt.dest, action=argparse.BooleanOptionalAction,
                            default=None, help=opt.help)
    elif opt.kind == "int":
        parser.add_argument(flag, dest=opt.dest, type=int, help=opt.help)
    elif opt.kind == "float":
        parser.add_argument(flag, dest=opt.dest, type=float, help=opt.help)
    elif opt.kind == "int_pair":
        parser.add_argument(flag, dest=opt.dest, type=int, nargs=2, metavar=("LO", "HI"),
                            help=opt.help)
    elif opt.kind == "str_pair":
        parser.add_argument(flag, dest=opt.dest, type=str, nargs=2, help=opt.help)
    else:                           # str, list, float_list arrive as one token
        parser.add_argument(flag, dest=opt.dest, type=str, choices=opt.choices, help=opt.help)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="geopolitical score, estimation, and counterfactual pipeline",
    )
    parser.add_argument("--version", action="version", version=f"{PROG} {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for command, opts in OPTIONS.items():
        p = sub.add_parser(command, help=SUMMARY[command], description=SUMMARY[command])
        for opt in (_CONFIG_OPT, _THREADS_OPT, *opts):
            _add_argument(p, opt)
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, the config-file section, and explicit flags."""
    opts = {o.dest: o for o in (_THREADS_OPT, *OPTIONS[command])}
    values = {dest: o.default for dest, o in opts.items()}

    config_path = getattr(args, "config", None)
    if config_path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        with open(config_path, encoding="utf-8") as fh:
            try:
                parser.read_file(fh)
            except configparser.Error as exc:
                raise ValidationError(f"config file: {exc}") from None
        if parser.has_section(command):
            for key, raw in parser.items(command):
                dest = key.replace("-", "_")
                if dest not in opts:
                    raise ValidationError(f"config key {key!r} unknown to {command!r}")
                values[dest] = _convert(opts[dest], raw)

    for dest, opt in opts.items():
        given = getattr(args, dest, None)
        if given is not None:
            if opt.kind in ("list", "float_list") and isinstance(given, str):
                given = _convert(opt, given)
            elif opt.kind in ("int_pair", "str_pair"):
                given = tuple(given)
            values[dest] = given

    for dest, opt in opts.items():
        val = values[dest]
        if opt.required and val is None:
            raise ValidationError(f"{command} requires --{opt.name}")
        if opt.choices is not None and val is not None and val not in opt.choices:
            raise ValidationError(
                f"--{opt.name} must be one of {', '.join(opt.choices)}, got {val!r}"
            )
    return values


# ---------------------------------------------------------------------------
# manifests

def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, enum.Enum):
        return value.value
    if hasattr(value, "item") and not isinstance(value, (str, bytes)):
        return value.item()        # numpy scalar
    return value


def write_manifest(path, command: str, parameters: dict, inputs: dict,
                   outputs: list[str], results: dict) -> None:
    """Echo the resolved run so it can be replayed and compared.

    Input paths are recorded exactly as given and outputs by basename,
    keeping manifests of identical runs byte-identical regardless of
    where they execute.
    """
    doc = {
        "command": command,
        "inputs": _jsonable(dict(sorted(inputs.items()))),
        "outputs": sorted(outputs),
        "parameters": _jsonable({k: parameters[k] for k in sorted(parameters)}),
        "results": _jsonable(results),
        "tool": {"name": PROG, "version": __version__},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _file_outputs(out: Path, extra: list[Path] | None = None) -> tuple[Path, list[str]]:
    """Manifest path and basename list for a single-file command."""
    manifest = out.with_name(out.stem + ".manifest.json")
    names = [out.name, manifest.name] + [p.name for p in (extra or [])]
    return manifest, names


def _prepare_parent(out: Path) -> None:
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)


# ---------------------------------------------------------------------------
# shared readers and writers

def _read_panel_file(path) -> "Panel":
    from .panel import Panel
    from .tables import _read_csv

    df = _read_csv(path)
    missing = [c for c in ("origin", "dest", "year") if c not in df.columns]
    if missing:
        raise ValidationError(f"panel file missing columns {missing}")
    return Panel(df)


def _write_panel_file(panel: "Panel", path) -> None:
    import pandas as pd

    from .tables import fmt_float, write_rows

    cols = ("origin", "dest", "year", *panel.value_columns)
    rows = [
        (row[0], row[1], int(row[2]),
         *("" if pd.isna(x) else fmt_float(x) for x in row[3:]))
        for row in panel.frame[list(cols)].itertuples(index=False)
    ]
    write_rows(path, cols, rows)


def _se_engine(values: dict):
    from .panel import IID, ClusterDyad, DriscollKraay

    name = values["se"]
    if name == "iid":
        return IID()
    if name == "dyad":
        return ClusterDyad()
    return DriscollKraay(bandwidth=values.get("dk_bandwidth"))


def _fe_spec(name: str):
    from .panel import GRAVITY_FE, THREE_WAY_FE

    return GRAVITY_FE if name == "gravity" else THREE_WAY_FE


# ---------------------------------------------------------------------------
# handlers

def cmd_score(v: dict) -> None:
    from .events import dynamic_scores, parse_events, write_scores

    # a Path makes a missing file an I/O error, not literal event text
    events = parse_events(Path(v["events"]), fmt=v["fmt"])
    scores = dynamic_scores(events, decay=v["delta"], through_year=v["through_year"])

    out = Path(v["out"])
    manifest, outputs = _file_outputs(out)
    _prepare_parent(out)
    write_scores(scores, out)
    write_manifest(
        manifest, "score", v, inputs={"events": v["events"]}, outputs=outputs,
        results={"n_events": len(events), "n_dyads": len(scores)},
    )


def cmd_panel(v: dict) -> None:
    from .events import read_scores
    from .panel import build_panel
    from .tables import _read_csv, read_flow_table

    trade = read_flow_table(v["trade"])
    scores = read_scores(v["scores"])
    tariffs = read_flow_table(v["tariffs"]) if v["tariffs"] else None
    sanctions = read_flow_table(v["sanctions"]) if v["sanctions"] else None
    controls = _read_csv(v["controls"]) if v["controls"] else None

    report = build_panel(
        trade, scores, tariffs=tariffs, sanctions=sanctions, controls=controls,
        sample=v["sample"],
    )
    panel = report.panel

    out = Path(v["out"])
    manifest, outputs = _file_outputs(out)
    inputs = {k: v[k] for k in ("trade", "scores", "tariffs", "sanctions", "controls")
              if v[k] is not None}
    _prepare_parent(out)
    _write_panel_file(panel, out)
    write_manifest(
        manifest, "panel", v, inputs=inputs, outputs=outputs,
        results={
            "n_obs": panel.n_obs,
            "n_countries": len(panel.countries),
            "years": [panel.year_min, panel.year_max],
            "n_zero_trade_dropped": report.n_zero_trade_dropped,
            "n_missing_score_dropped": report.n_missing_score_dropped,
            "n_domestic_dropped": report.n_domestic_dropped,
        },
    )


def cmd_gravity(v: dict) -> None:
    from .gravity import GravitySpec, static_gravity, write_gravity, yearly_coefficients

    panel = _read_panel_file(v["panel"])
    spec = GravitySpec(
        score=v["score"], controls=tuple(v["controls"]), outcome=v["outcome"],
        fe=_fe_spec(v["fe"]), se_engine=_se_engine(v),
    )
    fit = static_gravity(panel, spec)
    yearly = yearly_coefficients(panel, spec) if v["yearly"] else None

    out = Path(v["out"])
    yearly_out = out.with_name(out.stem + "_yearly" + out.suffix)
    manifest, outputs = _file_outputs(out, [yearly_out] if yearly else None)
    _prepare_parent(out)
    write_gravity(out, fit)
    if yearly is not None:
        write_gravity(yearly_out, yearly.fit)

    results = {
        "coefficient": fit.coef(spec.score),
        "se": fit.stderr(spec.score),
        "n_obs": fit.n_obs,
        "r_squared": fit.r_squared,
    }
    if yearly is not None:
        results["omitted_years"] = list(yearly.omitted_years)
    write_manifest(manifest, "gravity", v, inputs={"panel": v["panel"]},
                   outputs=outputs, results=results)


def _parse_instruments(raw: str | None) -> tuple[str, ...]:
    if raw is None:
        return ()
    key, sep, rest = raw.partition("=")
    cols = tuple(t for t in re.split(r"[,\s]+", rest.strip()) if t)
    if key != "instruments" or not sep or not cols:
        raise ValidationError("--iv expects instruments=col1,col2")
    return cols


def cmd_lp(v: dict) -> None:
    from .lp import LpSpec, lp_autocorr, lp_irf, lp_iv, write_irf
    from .shocks import bootstrap_decomposition, decompose, write_decomposed

    instruments = _parse_instruments(v["iv"])
    if v["bootstrap"] < 0:
        raise ValidationError("--bootstrap must be >= 0")
    if v["bootstrap"] and not v["decompose"]:
        raise ValidationError("--bootstrap only applies with --decompose")
    if v["bootstrap"] and instruments:
        raise ValidationError("bootstrap decomposition re-estimates without instruments; drop --iv")

    panel = _read_panel_file(v["panel"])
    h0, h1 = v["horizons"]
    spec = LpSpec(
        outcome=v["outcome"], shock=v["shock"], horizons=tuple(range(h0, h1 + 1)),
        lags=v["lags"], fe=_fe_spec(v["fe"]), se_engine=_se_engine(v),
        instruments=instruments,
    )
    irf = lp_iv(panel, spec) if instruments else lp_irf(panel, spec)

    want_acf = v["autocorr"] or v["decompose"]
    a0, a1 = v["acf_horizons"]
    acf_lags = v["acf_lags"] if v["acf_lags"] is not None else v["lags"]
    acf = None
    if want_acf:
        acf = lp_autocorr(
            panel, v["shock"], horizons=tuple(range(a0, a1 + 1)), lags=acf_lags,
            fe=spec.fe, se_engine=spec.se_engine,
        )

    dec = None
    if v["decompose"]:
        if v["bootstrap"]:
            dec = bootstrap_decomposition(
                panel, spec, acf_horizons=tuple(range(a0, a1 + 1)),
                acf_lags=acf_lags, draws=v["bootstrap"], seed=v["seed"],
            )
        else:
            dec = decompose(irf, acf)

    outdir = Path(v["out"])
    outputs = ["irf.csv", "manifest.json"]
    if acf is not None:
        outputs.append("autocorr.csv")
    if dec is not None:
        outputs.append("shock_decomposition.csv")
    outdir.mkdir(parents=True, exist_ok=True)
    write_irf(irf, outdir / "irf.csv")
    if acf is not None:
        write_irf(acf, outdir / "autocorr.csv")
    if dec is not None:
        write_decomposed(dec, outdir / "shock_decomposition.csv")

    results = {
        "kind": irf.kind,
        "n_obs_h0": irf.n_obs[irf.horizons.index(0)] if 0 in irf.horizons else None,
        "omitted_horizons": list(irf.omitted),
    }
    if dec is not None:
        results["permanent_terminal"] = dec.permanent[-1]
        results["bootstrap_failed"] = dec.n_failed
    write_manifest(outdir / "manifest.json", "lp", v, inputs={"panel": v["panel"]},
                   outputs=outputs, results=results)


def cmd_bloc(v: dict) -> None:
    from .gravity import bloc_classification, write_blocs

    panel = _read_panel_file(v["panel"])
    assignments = bloc_classification(
        panel, tuple(v["window"]), anchors=tuple(v["anchors"]),
        trade_column=v["trade_col"], score_column=v["score_col"],
    )

    out = Path(v["out"])
    manifest, outputs = _file_outputs(out)
    _prepare_parent(out)
    write_blocs(out, assignments)
    counts: dict[str, int] = {}
    for a in assignments:
        counts[a.trade_bloc.value] = counts.get(a.trade_bloc.value, 0) + 1
    write_manifest(manifest, "bloc", v, inputs={"panel": v["panel"]},
                   outputs=outputs, results={"n_countries": len(assignments),
                                             "trade_bloc_counts": counts})


def cmd_decompose(v: dict) -> None:
    from .lp import read_irf
    from .shocks import decompose, write_decomposed

    dec = decompose(read_irf(v["outcome_irf"]), read_irf(v["acf_irf"]))

    out = Path(v["out"])
    manifest, outputs = _file_outputs(out)
    _prepare_parent(out)
    write_decomposed(dec, out)
    write_manifest(
        manifest, "decompose", v,
        inputs={"outcome-irf": v["outcome_irf"], "acf-irf": v["acf_irf"]},
        outputs=outputs,
        results={"horizons": [dec.horizons[0], dec.horizons[-1]],
                 "permanent_terminal": dec.permanent[-1]},
    )


def _share_matrices(trade, countries, years):
    """Per-year expenditure-share and raw-value matrices from a flow frame."""
    import numpy as np

    from .decomposition import value_shares

    index = {c: i for i, c in enumerate(countries)}
    n = len(countries)
    shares, values = {}, {}
    for year in years:
        sub = trade[trade["year"] == year]
        m = np.zeros((n, n))
        m[sub["origin"].map(index), sub["dest"].map(index)] = sub["value"].to_numpy(float)
        values[year] = m
        shares[year] = value_shares(m)
    return shares, values


def _tariff_matrices(tariffs, countries, years):
    """Gross tariff factors per year; absent rows mean a zero net rate."""
    import numpy as np

    index = {c: i for i, c in enumerate(countries)}
    n = len(countries)
    unknown = sorted(
        set(tariffs["origin"]).union(tariffs["dest"]).difference(countries)
    )
    if unknown:
        raise ValidationError(f"tariff table names countries absent from trade: {unknown}")
    out = {}
    for year in years:
        sub = tariffs[tariffs["year"] == year]
        m = np.ones((n, n))
        m[sub["origin"].map(index), sub["dest"].map(index)] = (
            1.0 + sub["value"].to_numpy(float)
        )
        out[year] = m
    return out


def cmd_counterfactual(v: dict) -> None:
    from .decomposition import (
        Scenario,
        build_decomposition,
        contributions,
        run_counterfactuals,
        write_contributions,
        write_decomposition,
        write_scenarios,
        write_welfare,
    )
    from .equilibrium import calibrate
    from .events import read_scores
    from .shocks import read_decomposed
    from .tables import read_flow_table

    try:
        wanted = tuple(dict.fromkeys(Scenario(name) for name in v["scenarios"]))
    except ValueError:
        raise ValidationError(
            f"scenarios must be drawn from {[s.value for s in Scenario]}"
        ) from None

    trade = read_flow_table(v["trade"])
    scores = read_scores(v["scores"])
    response = read_decomposed(v["response"])
    tariffs = read_flow_table(v["tariffs"]) if v["tariffs"] else None

    base_year = v["base_year"]
    sample_years = sorted(int(t) for t in trade["year"].unique())
    if base_year not in sample_years:
        raise ValidationError(f"trade table has no rows for base year {base_year}")
    if v["years"] is not None:
        y0, y1 = v["years"]
        years = [t for t in range(y0, y1 + 1)]
        missing = sorted(set(years) - set(sample_years))
        if missing:
            raise ValidationError(f"trade table has no rows for years {missing}")
    else:
        years = [t for t in sample_years if t > base_year]
    if not years:
        raise ValidationError("no scenario years after the base year")

    all_years = [base_year, *years]
    countries = sorted(set(trade["origin"]).union(trade["dest"]))
    shares, values = _share_matrices(trade, countries, all_years)
    tariff_by_year = (
        _tariff_matrices(tariffs, countries, all_years) if tariffs is not None else None
    )

    dec = build_decomposition(
        countries=countries, base_year=base_year, years=years,
        shares_by_year=shares, tariff_by_year=tariff_by_year,
        scores=scores, irf=response, sigma=v["sigma"],
    )
    world = calibrate(
        values[base_year], countries,
        tariff=None if tariff_by_year is None else tariff_by_year[base_year],
        sigma=v["sigma"],
    )
    results = run_counterfactuals(
        world, dec, wanted, damping=v["damping"], tol=v["tol"],
        max_iter=v["max_iter"],
    )
    table = (
        contributions(results, annualize=v["annualize"])
        if set(wanted) == set(Scenario) else None
    )

    outdir = Path(v["out"])
    outputs = ["decomposition.csv", "scenarios.csv", "welfare.csv", "manifest.json"]
    if table is not None:
        outputs.append("contributions.csv")
    outdir.mkdir(parents=True, exist_ok=True)
    write_decomposition(outdir / "decomposition.csv", dec)
    write_scenarios(outdir / "scenarios.csv", results)
    write_welfare(outdir / "welfare.csv", results)
    if table is not None:
        write_contributions(outdir / "contributions.csv", table)

    last = years[-1]
    summary = {
        "countries": len(countries),
        "years": [years[0], last],
        "balance_adjustment": world.balance_adjustment,
        "dropped_dyads": len(dec.dropped_dyads),
        "flagged_dyads": sum(len(f) for f in dec.flagged_dyads.values()),
        "trade_index": {s.value: r.index_at(last) for s, r in results.items()},
    }
    if table is not None:
        summary["contribution_geo"] = table.geo
        summary["contribution_tariff"] = table.tariff
    inputs = {k: v[k] for k in ("trade", "scores", "response", "tariffs")
              if v[k] is not None}
    write_manifest(outdir / "manifest.json", "counterfactual", v, inputs=inputs,
                   outputs=outputs, results=summary)


def cmd_synth(v: dict) -> None:
    import dataclasses

    from .synthworld import WorldConfig, generate_world, write_world

    overrides = {
        f.name: v[f.name] for f in dataclasses.fields(WorldConfig)
        if v.get(f.name) is not None
    }
    if "beta_path" in overrides:
        overrides["beta_path"] = tuple(overrides["beta_path"])
    cfg = WorldConfig(**overrides)
    world = generate_world(cfg)

    outdir = Path(v["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    paths = write_world(world, outdir)
    outputs = [p.name for p in paths.values()] + ["manifest.json"]

    resolved = dict(v)
    resolved.update(dataclasses.asdict(cfg))
    write_manifest(
        outdir / "manifest.json", "synth", resolved, inputs={}, outputs=outputs,
        results={
            "n_events": len(world.events),
            "n_trade_rows": len(world.trade),
            "countries": len(world.countries),
        },
    )


HANDLERS = {
    "score": cmd_score,
    "panel": cmd_panel,
    "gravity": cmd_gravity,
    "lp": cmd_lp,
    "bloc": cmd_bloc,
    "decompose": cmd_decompose,
    "counterfactual": cmd_counterfactual,
    "synth": cmd_synth,
}


def _apply_thread_cap(threads: int | None) -> None:
    """Cap numerical thread pools; must run before numpy loads."""
    if threads is None:
        return
    if threads < 1:
        raise ValidationError("--threads must be >= 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ[var] = str(threads)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2
    try:
        values = resolve(args.command, args)
        _apply_thread_cap(values["threads"])
        HANDLERS[args.command](values)
    except ValidationError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
