"""Input parsing, validation, and the tract/crime filters.

All readers return either a TractSet or a plain pandas DataFrame with a
fixed column contract. Timestamps are stored timezone-aware in UTC;
hour-of-week conversion to a study timezone happens in the panel module.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping

import numpy as np
import pandas as pd

from . import geometry
from .errors import ConfigError, ParseError, ValidationError

log = logging.getLogger(__name__)

ACTIVITY_TYPES = ("work_study", "restaurants_bars", "leisure", "shopping", "travel")
CRIME_TYPES = ("larceny_theft", "robbery", "assault", "burglary", "vehicle_theft")

MAX_TRANSITION_GAP_S = 3 * 3600

TRANSITION_COLUMNS = ["user_key", "start_ts", "end_ts", "src_venue", "dst_venue"]
VENUE_COLUMNS = ["venue_id", "lon", "lat", "category", "activity_type", "tract_id"]
CRIME_COLUMNS = ["incident_id", "ts", "lon", "lat", "crime_type"]


@dataclass(frozen=True)
class Tract:
    """One areal unit: polygon rings, centroid, and resident population."""

    tract_id: str
    rings: tuple[np.ndarray, ...]
    holes: tuple[bool, ...]
    centroid: tuple[float, float]
    population: int
    bbox: tuple[float, float, float, float] = field(repr=False)

    @property
    def area(self) -> float:
        return geometry.polygon_area(list(self.rings), list(self.holes))


class TractSet:
    """Immutable, id-sorted collection of tracts with point assignment."""

    def __init__(self, tracts: Iterable[Tract]):
        items = sorted(tracts, key=lambda t: t.tract_id)
        seen: set[str] = set()
        for t in items:
            if t.tract_id in seen:
                raise ValidationError(f"duplicate tract_id {t.tract_id!r}")
            seen.add(t.tract_id)
        self._tracts = {t.tract_id: t for t in items}
        self.ids: list[str] = [t.tract_id for t in items]
        self.index: dict[str, int] = {tid: i for i, tid in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[Tract]:
        return iter(self._tracts.values())

    def __contains__(self, tract_id: str) -> bool:
        return tract_id in self._tracts

    def get(self, tract_id: str) -> Tract:
        return self._tracts[tract_id]

    def centroid_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "tract_id": self.ids,
                "x": [self._tracts[t].centroid[0] for t in self.ids],
                "y": [self._tracts[t].centroid[1] for t in self.ids],
            }
        )

    def assign_points(self, lons: np.ndarray, lats: np.ndarray) -> np.ndarray:
        """Vectorized point-to-tract assignment.

        Returns an object array of tract ids (None where no tract
        contains the point). Iterating tracts in ascending id order
        makes the lexicographic tie-break for boundary points implicit:
        the first containing tract wins.
        """
        lons = np.asarray(lons, dtype=np.float64)
        lats = np.asarray(lats, dtype=np.float64)
        out = np.full(lons.shape[0], None, dtype=object)
        unassigned = np.ones(lons.shape[0], dtype=bool)
        for tid in self.ids:
            if not unassigned.any():
                break
            t = self._tracts[tid]
            minx, miny, maxx, maxy = t.bbox
            cand = unassigned & (lons >= minx - geometry.BOUNDARY_EPS) \
                & (lons <= maxx + geometry.BOUNDARY_EPS) \
                & (lats >= miny - geometry.BOUNDARY_EPS) \
                & (lats <= maxy + geometry.BOUNDARY_EPS)
            if not cand.any():
                continue
            idx = np.nonzero(cand)[0]
            pts = np.column_stack([lons[idx], lats[idx]])
            hit = geometry.points_in_polygon(pts, list(t.rings))
            hit_idx = idx[hit]
            out[hit_idx] = tid
            unassigned[hit_idx] = False
        return out


def assign_point_to_tract(point: tuple[float, float], tracts: TractSet) -> str | None:
    """Tract containing the point, smallest tract_id on boundary ties, else None."""
    if len(tracts) == 0:
        raise ValidationError("empty tract set")
    res = tracts.assign_points(np.array([point[0]]), np.array([point[1]]))
    return res[0]


def _feature_rings(feature: dict, label: str) -> tuple[list[np.ndarray], list[bool]]:
    geom = feature.get("geometry") or {}
    gtype = geom.get("type")
    if gtype == "Polygon":
        polys = [geom.get("coordinates") or []]
    elif gtype == "MultiPolygon":
        polys = geom.get("coordinates") or []
    else:
        raise ParseError(f"feature {label}: unsupported geometry type {gtype!r}")
    rings: list[np.ndarray] = []
    holes: list[bool] = []
    for poly in polys:
        for k, raw in enumerate(poly):
            arr = np.asarray(raw, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 4:
                raise ParseError(f"feature {label}: ring with fewer than 4 coordinate pairs")
            if not np.array_equal(arr[0], arr[-1]):
                raise ParseError(f"feature {label}: ring is not closed")
            rings.append(arr)
            holes.append(k > 0)
    if not rings:
        raise ParseError(f"feature {label}: empty geometry")
    return rings, holes


def parse_tracts(geojson_path) -> TractSet:
    """Read a GeoJSON FeatureCollection of tracts.

    Required feature properties: tract_id (string) and population
    (non-negative integer). Centroids are area-weighted polygon
    centroids (holes subtracted).
    """
    with open(geojson_path) as fh:
        doc = json.load(fh)
    if doc.get("type") != "FeatureCollection":
        raise ParseError(f"{geojson_path}: not a FeatureCollection")
    tracts = []
    for i, feature in enumerate(doc.get("features", [])):
        props = feature.get("properties") or {}
        tid = props.get("tract_id")
        label = repr(tid) if tid is not None else f"#{i}"
        if tid is None:
            raise ParseError(f"feature {label}: missing tract_id property")
        tid = str(tid)
        pop = props.get("population")
        if pop is None or int(pop) < 0:
            raise ParseError(f"feature {label}: missing or negative population")
        rings, holes = _feature_rings(feature, label)
        try:
            centroid = geometry.polygon_centroid(rings, holes)
        except ValueError as exc:
            raise ParseError(f"feature {label}: {exc}") from exc
        tracts.append(
            Tract(
                tract_id=tid,
                rings=tuple(rings),
                holes=tuple(holes),
                centroid=centroid,
                population=int(pop),
                bbox=geometry.rings_bbox(rings),
            )
        )
    return TractSet(tracts)


def tracts_to_geojson(tracts: TractSet) -> dict:
    """Serialize a tract set back to the input GeoJSON schema."""
    features = []
    for t in tracts:
        parts: list[list[list[list[float]]]] = []
        for ring, is_hole in zip(t.rings, t.holes):
            if is_hole and parts:
                parts[-1].append(ring.tolist())
            else:
                parts.append([ring.tolist()])
        if len(parts) == 1:
            geometry = {"type": "Polygon", "coordinates": parts[0]}
        else:
            geometry = {"type": "MultiPolygon", "coordinates": parts}
        features.append({
            "type": "Feature",
            "properties": {"tract_id": t.tract_id, "population": t.population},
            "geometry": geometry,
        })
    return {"type": "FeatureCollection", "features": features}


def filter_tracts(tracts: TractSet, annual_checkins: Mapping[str, int],
                  pop_min: int = 100, checkin_min: int = 100) -> TractSet:
    """Keep tracts with population >= pop_min and annual check-ins >= checkin_min."""
    kept = [
        t for t in tracts
        if t.population >= pop_min and annual_checkins.get(t.tract_id, 0) >= checkin_min
    ]
    if not kept:
        raise ConfigError(
            f"tract filter (pop >= {pop_min}, check-ins >= {checkin_min}) kept no tracts"
        )
    dropped = len(tracts) - len(kept)
    if dropped:
        log.info("tract filter dropped %d of %d tracts", dropped, len(tracts))
    return TractSet(kept)


def _read_delimited(path, required: list[str], parse_ts: list[str],
                    tz: str = "UTC") -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except Exception as exc:
        raise ParseError(f"{path}: {exc}") from exc
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise ParseError(f"{path}: missing columns {missing}")
    for col in parse_ts:
        parsed = pd.to_datetime(df[col], errors="coerce", format="ISO8601")
        if parsed.dtype == object:
            raise ParseError(f"{path}: column {col!r} mixes timezone-aware "
                             "and naive timestamps")
        bad = parsed.isna().to_numpy()
        if bad.any():
            line = int(np.nonzero(bad)[0][0]) + 2  # 1-based, after header
            raise ParseError(f"{path}: line {line}: unparseable timestamp "
                             f"{df[col].iloc[line - 2]!r}")
        if parsed.dt.tz is None:
            # naive timestamps are local times in the study timezone
            try:
                parsed = parsed.dt.tz_localize(tz)
            except Exception as exc:
                raise ParseError(f"{path}: column {col!r}: {exc}") from exc
        df[col] = parsed.dt.tz_convert("UTC")
    return df


def _to_float(df: pd.DataFrame, cols: list[str], path) -> None:
    for col in cols:
        vals = pd.to_numeric(df[col], errors="coerce")
        if vals.isna().any():
            line = int(np.nonzero(vals.isna().to_numpy())[0][0]) + 2
            raise ParseError(f"{path}: line {line}: non-numeric {col} {df[col].iloc[line - 2]!r}")
        df[col] = vals.astype(np.float64)


def load_category_mapping(path) -> dict[str, str]:
    """Read the category -> activity_type table; a row for 'other' declares the fallback."""
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    for col in ("category", "activity_type"):
        if col not in df.columns:
            raise ParseError(f"{path}: missing column {col!r}")
    mapping: dict[str, str] = {}
    for i, row in enumerate(df.itertuples(index=False)):
        if row.activity_type not in ACTIVITY_TYPES:
            raise ParseError(
                f"{path}: line {i + 2}: unknown activity_type {row.activity_type!r}"
            )
        mapping[row.category] = row.activity_type
    return mapping


def parse_venues(path, mapping: Mapping[str, str]) -> pd.DataFrame:
    """Read venues and map raw categories to the five activity types.

    Categories absent from the mapping fall back to the mapping's
    'other' entry with a warning; without an 'other' entry they are a
    validation error. tract_id starts unresolved (None).
    """
    df = _read_delimited(path, ["venue_id", "lon", "lat", "category"], [])
    _to_float(df, ["lon", "lat"], path)
    if df["venue_id"].duplicated().any():
        dup = df["venue_id"][df["venue_id"].duplicated()].iloc[0]
        raise ValidationError(f"{path}: duplicate venue_id {dup!r}")
    fallback = mapping.get("other")
    unknown = sorted(set(df["category"]) - set(mapping))
    if unknown:
        if fallback is None:
            raise ValidationError(
                f"{path}: categories with no mapping and no 'other' fallback: {unknown[:5]}"
            )
        log.warning("%d venue categories unmapped; using fallback %r", len(unknown), fallback)
    df["activity_type"] = df["category"].map(lambda c: mapping.get(c, fallback))
    df["tract_id"] = None
    return df[VENUE_COLUMNS]


def resolve_venues(venues: pd.DataFrame, tracts: TractSet) -> pd.DataFrame:
    """Fill tract_id by point-in-polygon against the given tract set."""
    out = venues.copy()
    out["tract_id"] = tracts.assign_points(
        out["lon"].to_numpy(), out["lat"].to_numpy()
    )
    return out


def parse_crimes(path, types_filter: tuple[str, ...] = CRIME_TYPES,
                 tz: str = "UTC") -> pd.DataFrame:
    """Read crime incidents, dropping any type outside the filter.

    Naive timestamps are interpreted in the study timezone tz.
    """
    df = _read_delimited(path, CRIME_COLUMNS, ["ts"], tz)
    _to_float(df, ["lon", "lat"], path)
    keep = df["crime_type"].isin(types_filter)
    dropped = int((~keep).sum())
    if dropped:
        log.info("dropped %d incidents outside crime-type filter", dropped)
    return df[keep].reset_index(drop=True)[CRIME_COLUMNS]


def resolve_crimes(crimes: pd.DataFrame, tracts: TractSet) -> tuple[pd.DataFrame, int]:
    """Attach tract_id to incidents; returns (frame, count unassigned)."""
    out = crimes.copy()
    out["tract_id"] = tracts.assign_points(out["lon"].to_numpy(), out["lat"].to_numpy())
    unassigned = int(pd.isna(out["tract_id"]).sum())
    return out, unassigned


def parse_transitions(path, tz: str = "UTC") -> pd.DataFrame:
    """Read a transitions file and enforce the per-record invariants.

    Every row must satisfy start_ts <= end_ts, a gap of at most three
    hours, and distinct venues; violations are parse errors naming the
    line.
    """
    df = _read_delimited(path, TRANSITION_COLUMNS, ["start_ts", "end_ts"], tz)
    gap = (df["end_ts"] - df["start_ts"]).dt.total_seconds()
    bad = gap < 0
    if bad.any():
        line = int(np.nonzero(bad.to_numpy())[0][0]) + 2
        raise ParseError(f"{path}: line {line}: end_ts precedes start_ts")
    bad = gap > MAX_TRANSITION_GAP_S
    if bad.any():
        line = int(np.nonzero(bad.to_numpy())[0][0]) + 2
        raise ParseError(f"{path}: line {line}: gap exceeds three hours")
    bad = df["src_venue"] == df["dst_venue"]
    if bad.any():
        line = int(np.nonzero(bad.to_numpy())[0][0]) + 2
        raise ParseError(f"{path}: line {line}: identical src and dst venue")
    return df[TRANSITION_COLUMNS]


def parse_checkins(path, tz: str = "UTC") -> pd.DataFrame:
    """Read a raw check-in stream (user_key, ts, venue_id)."""
    return _read_delimited(path, ["user_key", "ts", "venue_id"], ["ts"], tz)


def derive_transitions(checkins: pd.DataFrame) -> pd.DataFrame:
    """Pair consecutive same-user check-ins into transitions.

    Consecutive check-ins of one user at two different venues within
    three hours form one transition; same-venue pairs and gaps over
    three hours form none. Timestamp ties keep input order.
    """
    df = checkins.reset_index(drop=True)
    df = df.sort_values(["user_key", "ts"], kind="stable")
    same_user = df["user_key"].to_numpy()[1:] == df["user_key"].to_numpy()[:-1]
    ts = df["ts"].to_numpy()
    gap_ok = (ts[1:] - ts[:-1]) <= np.timedelta64(MAX_TRANSITION_GAP_S, "s")
    venue = df["venue_id"].to_numpy()
    diff_venue = venue[1:] != venue[:-1]
    take = same_user & gap_ok & diff_venue
    out = pd.DataFrame(
        {
            "user_key": df["user_key"].to_numpy()[:-1][take],
            "start_ts": df["ts"].iloc[:-1][take].to_numpy(),
            "end_ts": df["ts"].iloc[1:][take].to_numpy(),
            "src_venue": venue[:-1][take],
            "dst_venue": venue[1:][take],
        }
    )
    for col in ("start_ts", "end_ts"):
        out[col] = pd.DatetimeIndex(out[col]).tz_convert("UTC") if len(out) else pd.to_datetime(out[col], utc=True)
    return out.reset_index(drop=True)


def annual_checkin_counts(transitions: pd.DataFrame, venues: pd.DataFrame,
                          tracts: TractSet, year: int, tz: str = "UTC") -> dict[str, int]:
    """Check-ins per tract over one calendar year, both transition endpoints counted."""
    venue_tract = venues.set_index("venue_id")["tract_id"]
    counts: dict[str, int] = {tid: 0 for tid in tracts.ids}
    for ts_col, venue_col in (("start_ts", "src_venue"), ("end_ts", "dst_venue")):
        ts_local = pd.DatetimeIndex(transitions[ts_col]).tz_convert(tz)
        in_year = ts_local.year == year
        tids = transitions.loc[in_year, venue_col].map(venue_tract)
        for tid, n in tids.value_counts().items():
            if tid is not None and tid in counts:
                counts[tid] += int(n)
    return counts
