"""The (tract x hour-of-week) feature panel.

Hour-of-week is 24 * weekday + hour in the study timezone, Monday 00:00
being hour 0; the weekend flag marks Saturday/Sunday (t >= 120). All
aggregations are commutative count additions, so input order never
changes a panel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ValidationError
from .ingest import ACTIVITY_TYPES, TractSet

log = logging.getLogger(__name__)

HOURS_PER_WEEK = 168
WEEKEND_START = 120  # Saturday 00:00

BASE_COLUMNS = [
    "tract_id", "t", "crime", "past_crime", "checkins",
    "inout_flow", "selfloop_flow", "passthrough_flow", "x", "y", "weekend",
]
ACTIVITY_COLUMNS = [f"checkins_{a}" for a in ACTIVITY_TYPES]
COVARIATE_COLUMNS = [
    "concentrated_disadvantage", "residential_stability", "ethnic_heterogeneity",
]


def hour_of_week(ts, tz: str = "UTC") -> int:
    """Hour-of-week index 0..167 of a timestamp in the study timezone."""
    t = pd.Timestamp(ts)
    t = t.tz_localize(tz) if t.tzinfo is None else t.tz_convert(tz)
    return 24 * t.weekday() + t.hour


def hour_of_week_index(ts: pd.Series | pd.DatetimeIndex, tz: str = "UTC") -> np.ndarray:
    """Vectorized hour_of_week over a timestamp series."""
    idx = pd.DatetimeIndex(ts)
    idx = idx.tz_localize(tz) if idx.tz is None else idx.tz_convert(tz)
    return (24 * idx.weekday + idx.hour).to_numpy(dtype=np.int64)


def local_year(ts: pd.Series | pd.DatetimeIndex, tz: str = "UTC") -> np.ndarray:
    idx = pd.DatetimeIndex(ts)
    idx = idx.tz_localize(tz) if idx.tz is None else idx.tz_convert(tz)
    return idx.year.to_numpy(dtype=np.int64)


def _zero_grid(tracts: TractSet) -> np.ndarray:
    return np.zeros((len(tracts), HOURS_PER_WEEK), dtype=np.int64)


def _accumulate(grid: np.ndarray, tract_rows: np.ndarray, hours: np.ndarray) -> None:
    flat = np.bincount(
        tract_rows * HOURS_PER_WEEK + hours, minlength=grid.size
    ).reshape(grid.shape)
    grid += flat


def _endpoint_view(transitions: pd.DataFrame, venues: pd.DataFrame, tracts: TractSet,
                   year: int | None, tz: str):
    """Per-endpoint arrays: tract row index (-1 if unresolvable), hour, in-year mask."""
    venue_tract = venues.set_index("venue_id")["tract_id"].to_dict()
    venue_act = venues.set_index("venue_id")["activity_type"].to_dict()
    out = []
    for ts_col, venue_col in (("start_ts", "src_venue"), ("end_ts", "dst_venue")):
        vids = transitions[venue_col]
        if len(transitions) == 0:
            out.append((np.zeros(0, np.int64), np.zeros(0, np.int64),
                        np.zeros(0, bool), np.zeros(0, object)))
            continue
        rows = pd.to_numeric(vids.map(venue_tract).map(tracts.index), errors="coerce")
        rows = rows.fillna(-1).to_numpy(dtype=np.int64)
        hours = hour_of_week_index(transitions[ts_col], tz)
        if year is None:
            in_year = np.ones(len(transitions), dtype=bool)
        else:
            in_year = local_year(transitions[ts_col], tz) == year
        acts = vids.map(venue_act).to_numpy(dtype=object)
        out.append((rows, hours, in_year, acts))
    return out


def aggregate_checkins(transitions: pd.DataFrame, venues: pd.DataFrame, tracts: TractSet,
                       year: int | None = None, tz: str = "UTC",
                       by_activity: bool = False):
    """Check-in counts per (tract, hour): both endpoints of every transition.

    The source counts at the start hour, the destination at the end
    hour; endpoints whose venue resolves to no kept tract are skipped
    and tallied. Returns (grid, drops) or (grid, per_activity, drops).
    """
    grid = _zero_grid(tracts)
    per_activity = {a: _zero_grid(tracts) for a in ACTIVITY_TYPES} if by_activity else None
    dropped = 0
    for rows, hours, in_year, acts in _endpoint_view(transitions, venues, tracts, year, tz):
        ok = (rows >= 0) & in_year
        dropped += int(((rows < 0) & in_year).sum())
        _accumulate(grid, rows[ok], hours[ok])
        if by_activity:
            for a in ACTIVITY_TYPES:
                sel = ok & (acts == a)
                _accumulate(per_activity[a], rows[sel], hours[sel])
    drops = {"checkin_endpoints_dropped": dropped}
    if by_activity:
        return grid, per_activity, drops
    return grid, drops


def decompose_flows(transitions: pd.DataFrame, venues: pd.DataFrame, tracts: TractSet,
                    year: int | None = None, tz: str = "UTC"):
    """Split transitions into incoming/outgoing and self-loop counts.

    Cross-tract transitions add one to each endpoint tract (direction
    not distinguished: origin at the start hour, destination at the end
    hour); same-tract transitions add one self-loop at the start hour.
    Transitions with an unresolvable endpoint are skipped entirely.
    """
    (src_rows, src_hours, src_in_year, _), (dst_rows, dst_hours, dst_in_year, _) = \
        _endpoint_view(transitions, venues, tracts, year, tz)
    resolvable = (src_rows >= 0) & (dst_rows >= 0)
    inout = _zero_grid(tracts)
    selfloop = _zero_grid(tracts)
    cross = resolvable & (src_rows != dst_rows)
    same = resolvable & (src_rows == dst_rows)
    if year is not None:
        cross_src = cross & src_in_year
        cross_dst = cross & dst_in_year
        same = same & src_in_year
    else:
        cross_src = cross_dst = cross
    _accumulate(inout, src_rows[cross_src], src_hours[cross_src])
    _accumulate(inout, dst_rows[cross_dst], dst_hours[cross_dst])
    _accumulate(selfloop, src_rows[same], src_hours[same])
    drops = {"flow_transitions_dropped": int((~resolvable).sum())}
    return inout, selfloop, drops


def aggregate_crime(crimes: pd.DataFrame, tracts: TractSet, year: int,
                    tz: str = "UTC", crime_type: str | None = None):
    """Incident counts per (tract, hour-of-week) for one calendar year."""
    df = crimes
    if crime_type is not None:
        df = df[df["crime_type"] == crime_type]
    if "tract_id" not in df.columns:
        raise ValidationError("crimes must be resolved to tracts first")
    grid = _zero_grid(tracts)
    if len(df) == 0:
        return grid, {"crime_incidents_dropped": 0}
    in_year = local_year(df["ts"], tz) == year
    df = df[in_year]
    rows = pd.to_numeric(df["tract_id"].map(tracts.index), errors="coerce")
    ok = rows.notna().to_numpy()
    hours = hour_of_week_index(df["ts"], tz)
    _accumulate(grid, rows[ok].to_numpy(dtype=np.int64), hours[ok])
    return grid, {"crime_incidents_dropped": int((~ok).sum())}


def load_covariates(path, tracts: TractSet) -> pd.DataFrame:
    """Read per-tract covariate indices; every kept tract must be present."""
    df = pd.read_csv(path, dtype={"tract_id": str})
    missing_cols = [c for c in ["tract_id", *COVARIATE_COLUMNS] if c not in df.columns]
    if missing_cols:
        raise ValidationError(f"{path}: missing columns {missing_cols}")
    missing = sorted(set(tracts.ids) - set(df["tract_id"]))
    if missing:
        raise ValidationError(f"{path}: covariates missing for tracts {missing}")
    return df.set_index("tract_id")[COVARIATE_COLUMNS]


@dataclass
class Panel:
    """Complete (tract x hour-of-week) grid with its provenance."""

    frame: pd.DataFrame
    year: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n_tracts = self.frame["tract_id"].nunique()
        if len(self.frame) != n_tracts * HOURS_PER_WEEK:
            raise ValidationError(
                f"panel is not a complete grid: {len(self.frame)} rows, {n_tracts} tracts"
            )

    @property
    def n_tracts(self) -> int:
        return self.frame["tract_id"].nunique()

    def write_csv(self, path) -> None:
        self.frame.to_csv(path, index=False, lineterminator="\n")

    @classmethod
    def read_csv(cls, path, year: int) -> "Panel":
        df = pd.read_csv(path, dtype={"tract_id": str})
        return cls(frame=df, year=year)


def assemble_panel(tracts: TractSet, year: int, crime: np.ndarray, past_crime: np.ndarray,
                   checkins: np.ndarray, inout: np.ndarray, selfloop: np.ndarray,
                   passthrough: np.ndarray, activity: dict[str, np.ndarray] | None = None,
                   covariates: pd.DataFrame | None = None, meta: dict | None = None) -> Panel:
    """Join all aggregates into the complete zero-filled grid.

    Rows are ordered by (tract_id, t). Covariates are constant across t;
    activity columns, when given, partition the check-in counts.
    """
    n = len(tracts)
    grids = {"crime": crime, "past_crime": past_crime, "checkins": checkins,
             "inout_flow": inout, "selfloop_flow": selfloop, "passthrough_flow": passthrough}
    for name, g in grids.items():
        if g.shape != (n, HOURS_PER_WEEK):
            raise ValidationError(f"aggregate {name} has shape {g.shape}, want {(n, HOURS_PER_WEEK)}")
    t = np.tile(np.arange(HOURS_PER_WEEK), n)
    cents = tracts.centroid_frame()
    df = pd.DataFrame(
        {
            "tract_id": np.repeat(np.asarray(tracts.ids, dtype=object), HOURS_PER_WEEK),
            "t": t,
            **{name: g.reshape(-1) for name, g in grids.items()},
            "x": np.repeat(cents["x"].to_numpy(), HOURS_PER_WEEK),
            "y": np.repeat(cents["y"].to_numpy(), HOURS_PER_WEEK),
            "weekend": (t >= WEEKEND_START).astype(np.int64),
        }
    )
    if activity is not None:
        for a in ACTIVITY_TYPES:
            df[f"checkins_{a}"] = activity[a].reshape(-1)
    if covariates is not None:
        for col in COVARIATE_COLUMNS:
            df[col] = df["tract_id"].map(covariates[col])
    return Panel(frame=df, year=year, meta=meta or {})
