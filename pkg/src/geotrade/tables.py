"""Small CSV helpers shared across modules.

All writers emit floats through :func:`fmt_float` (shortest round-trip
representation, well above ten significant digits) and keep row order
deterministic, so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Sequence

import pandas as pd

from .errors import ValidationError

FLOW_COLUMNS = ("origin", "dest", "year", "value")


def fmt_float(x) -> str:
    """Shortest decimal string that round-trips to the same double."""
    return repr(float(x))


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def read_flow_table(source, value_name: str = "value") -> pd.DataFrame:
    """Read a CSV keyed origin,dest,year,value into a tidy frame.

    Accepts a path or file-like object.  Rejects duplicate
    (origin, dest, year) keys and non-numeric values.
    """
    df = _read_csv(source)
    missing = [c for c in FLOW_COLUMNS if c not in df.columns]
    if missing:
        raise ValidationError(f"flow table missing columns {missing}")
    df = df.loc[:, list(FLOW_COLUMNS)].copy()
    try:
        df["year"] = df["year"].astype(int)
        df["value"] = df["value"].astype(float)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"flow table has non-numeric entries: {exc}") from exc
    dup = df.duplicated(subset=["origin", "dest", "year"])
    if dup.any():
        row = df[dup].iloc[0]
        raise ValidationError(
            f"duplicate key in flow table: ({row['origin']}, {row['dest']}, {row['year']})"
        )
    return df.rename(columns={"value": value_name})


def write_flow_table(path, df: pd.DataFrame, value_name: str = "value") -> None:
    df = df.sort_values(["origin", "dest", "year"], kind="stable")
    rows = (
        (o, d, int(y), fmt_float(v))
        for o, d, y, v in zip(df["origin"], df["dest"], df["year"], df[value_name])
    )
    write_rows(path, FLOW_COLUMNS, rows)


def _read_csv(source) -> pd.DataFrame:
    # round_trip parsing: values written via repr() read back bit-exact
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    return pd.read_csv(source, float_precision="round_trip")
