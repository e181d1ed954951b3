"""Synthetic city generator with a known ground-truth crime process.

Tracts are unit grid squares, OD demand follows a gravity kernel on the
queen contiguity graph, and crime counts are negative binomial draws
whose log-mean combines tract and hour effects with the mobility
features. The features entering the crime mean are computed by the
production network/panel code from the generated transitions, so any
bias there surfaces as a parameter-recovery failure instead of a
silently consistent pair of implementations.

Everything is a pure function of the configuration; ground truth lives
in its own output directory that the estimation pipeline never reads.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict

import numpy as np
import pandas as pd

from . import flownet, panel
from .errors import ConfigError
from .ingest import ACTIVITY_TYPES, CRIME_TYPES, Tract, TractSet, tracts_to_geojson
from .panel import HOURS_PER_WEEK, hour_of_week_index

log = logging.getLogger(__name__)

MAX_LOG_MEAN = 25.0
_VENUE_MARGIN = 1e-3  # keep venues and incidents off tract boundaries

# stage tags for deriving independent generator streams from one seed
_TAG_CITY, _TAG_TRANSITIONS, _TAG_CRIME, _TAG_COV = 1, 2, 3, 4


@dataclass
class SynthConfig:
    """Ground-truth model and volume knobs for one synthetic dataset."""

    seed: int = 0
    grid_w: int = 5
    grid_h: int = 4
    venues_per_tract_mean: float = 8.0
    population_low: int = 500
    population_high: int = 8000
    popularity_sigma: float = 0.6
    transition_volume: int = 40_000  # expected transitions per study year
    gravity: float = 2.0
    selfloop_share: float = 0.15
    n_users: int = 500
    nu: float = 0.3
    base_nu: float | None = None  # prior-year process; defaults to nu
    beta: float = 0.02  # past crime
    gamma: float = 0.004  # check-ins
    delta: float = 0.006  # pass-through flow
    eta_inout: float = 0.0
    eta_selfloop: float = 0.0
    sigma_alpha: float = 0.3
    sigma_theta: float = 0.15
    theta_nb: float = 8.0
    start_year: int = 2012
    n_years: int = 1
    tz: str = "UTC"
    activity_mix: tuple = (0.1011, 0.5011, 0.1282, 0.1556, 0.1140)
    crime_mix: tuple = (0.2, 0.2, 0.2, 0.2, 0.2)

    def validate(self) -> None:
        if self.grid_w * self.grid_h < 4:
            raise ConfigError("grid must have at least 4 tracts")
        if self.transition_volume <= 0 and self.transition_volume != 0:
            raise ConfigError("transition volume must be non-negative")
        if self.theta_nb <= 0:
            raise ConfigError("NB dispersion must be positive")
        if not 0.0 <= self.selfloop_share < 1.0:
            raise ConfigError("selfloop_share must be in [0, 1)")
        if abs(sum(self.activity_mix) - 1.0) > 1e-9 or len(self.activity_mix) != 5:
            raise ConfigError("activity_mix must be 5 shares summing to 1")
        if self.n_years < 1:
            raise ConfigError("need at least one study year")
        if self.venues_per_tract_mean < 2:
            raise ConfigError("need an expected venue count of at least 2 per tract")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def study_years(self) -> list[int]:
        return list(range(self.start_year, self.start_year + self.n_years))


def _rng(cfg: SynthConfig, tag: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng((cfg.seed, tag, *extra))


def _square(col: int, row: int) -> np.ndarray:
    return np.array(
        [[col, row], [col + 1, row], [col + 1, row + 1], [col, row + 1], [col, row]],
        dtype=np.float64,
    )


@dataclass
class City:
    tracts: TractSet
    venues: pd.DataFrame  # resolved, with activity_type and tract_id
    popularity: np.ndarray
    venue_lists: dict[str, np.ndarray]  # tract_id -> venue ids


def generate_city(cfg: SynthConfig) -> City:
    """Unit-square tract grid with venues placed uniformly inside tracts."""
    cfg.validate()
    rng = _rng(cfg, _TAG_CITY)
    tracts = []
    n = cfg.grid_w * cfg.grid_h
    populations = rng.integers(cfg.population_low, cfg.population_high + 1, n)
    for row in range(cfg.grid_h):
        for col in range(cfg.grid_w):
            i = row * cfg.grid_w + col
            ring = _square(col, row)
            tracts.append(
                Tract(
                    tract_id=f"T{i:04d}",
                    rings=(ring,),
                    holes=(False,),
                    centroid=(col + 0.5, row + 0.5),
                    population=int(populations[i]),
                    bbox=(float(col), float(row), float(col + 1), float(row + 1)),
                )
            )
    tract_set = TractSet(tracts)
    popularity = rng.lognormal(0.0, cfg.popularity_sigma, n)

    venue_rows = {"venue_id": [], "lon": [], "lat": [], "category": [],
                  "activity_type": [], "tract_id": []}
    venue_lists: dict[str, np.ndarray] = {}
    for i, tid in enumerate(tract_set.ids):
        count = 2 + int(rng.poisson(max(0.0, cfg.venues_per_tract_mean - 2.0)))
        col, row = i % cfg.grid_w, i // cfg.grid_w
        lons = rng.uniform(col + _VENUE_MARGIN, col + 1 - _VENUE_MARGIN, count)
        lats = rng.uniform(row + _VENUE_MARGIN, row + 1 - _VENUE_MARGIN, count)
        acts = rng.choice(len(ACTIVITY_TYPES), size=count, p=cfg.activity_mix)
        vids = [f"V{i:04d}_{k:03d}" for k in range(count)]
        venue_rows["venue_id"].extend(vids)
        venue_rows["lon"].extend(lons.tolist())
        venue_rows["lat"].extend(lats.tolist())
        venue_rows["category"].extend(ACTIVITY_TYPES[a] for a in acts)
        venue_rows["activity_type"].extend(ACTIVITY_TYPES[a] for a in acts)
        venue_rows["tract_id"].extend([tid] * count)
        venue_lists[tid] = np.array(vids, dtype=object)
    venues = pd.DataFrame(venue_rows)
    return City(tracts=tract_set, venues=venues, popularity=popularity,
                venue_lists=venue_lists)


def _hour_intensity(cfg: SynthConfig) -> np.ndarray:
    """Smooth day/night, weekday/weekend intensity over the 168 hours."""
    t = np.arange(HOURS_PER_WEEK)
    h = t % 24
    weekend = t >= panel.WEEKEND_START
    day = 0.3 + 0.7 * np.exp(-((h - 14.0) ** 2) / (2.0 * 5.0 ** 2))
    curve = day * np.where(weekend, 1.15, 1.0)
    return curve / curve.sum()


def _year_hour_slots(cfg: SynthConfig, year: int, trim_tail_hours: int = 0):
    """Epoch seconds of each hour in the year, grouped by hour-of-week."""
    idx = pd.date_range(
        start=pd.Timestamp(year=year, month=1, day=1, tz=cfg.tz),
        end=pd.Timestamp(year=year + 1, month=1, day=1, tz=cfg.tz),
        freq="h", inclusive="left",
    )
    if trim_tail_hours:
        idx = idx[:-trim_tail_hours]
    how = hour_of_week_index(idx, cfg.tz)
    secs = idx.asi8 // 1_000_000_000
    return [secs[how == t] for t in range(HOURS_PER_WEEK)]


def _pair_distribution(cfg: SynthConfig, city: City) -> tuple[np.ndarray, np.ndarray]:
    """(pairs, probabilities): gravity-weighted cross pairs plus self pairs."""
    ids = city.tracts.ids
    n = len(ids)
    adj = flownet.build_queen_adjacency(city.tracts)
    cache = flownet.PathCache(adj)
    hop = np.zeros((n, n), dtype=np.float64)
    for j, dest in enumerate(ids):
        dist = cache._distances_to(dest)
        for i, orig in enumerate(ids):
            hop[i, j] = dist.get(orig, np.inf)
    pop = city.popularity
    cross = np.outer(pop, pop) / (1.0 + hop) ** cfg.gravity
    np.fill_diagonal(cross, 0.0)
    cross[~np.isfinite(cross)] = 0.0
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    weights = np.array([cross[i, j] for i, j in pairs])
    if weights.sum() > 0:
        weights = weights / weights.sum() * (1.0 - cfg.selfloop_share)
    self_w = pop ** 2
    self_w = self_w / self_w.sum() * cfg.selfloop_share
    pairs += [(i, i) for i in range(n)]
    probs = np.concatenate([weights, self_w])
    return np.array(pairs, dtype=np.int64), probs / probs.sum()


def generate_transitions(cfg: SynthConfig, city: City, year: int) -> pd.DataFrame:
    """One study year of transitions from the gravity demand process.

    Counts per (pair, hour-of-week) are Poisson with mean proportional
    to pair probability times the hour intensity; start times land
    uniformly on the matching hours of the year (trimmed three hours
    before new year so no transition crosses it), durations are uniform
    in (0, 3h].
    """
    rng = _rng(cfg, _TAG_TRANSITIONS, year)
    pairs, probs = _pair_distribution(cfg, city)
    intensity = _hour_intensity(cfg)
    lam = cfg.transition_volume * probs[:, None] * intensity[None, :]
    counts = rng.poisson(lam)
    pair_idx, hour_idx = np.nonzero(counts)
    reps = counts[pair_idx, hour_idx]
    pair_rows = np.repeat(pair_idx, reps)
    hours = np.repeat(hour_idx, reps)
    total = len(pair_rows)
    if total == 0:
        return pd.DataFrame({c: [] for c in
                             ["user_key", "start_ts", "end_ts", "src_venue", "dst_venue"]})

    slots = _year_hour_slots(cfg, year, trim_tail_hours=3)
    slot_choice = np.empty(total, dtype=np.int64)
    for t in range(HOURS_PER_WEEK):
        mask = hours == t
        m = int(mask.sum())
        if m:
            slot_choice[mask] = slots[t][rng.integers(0, len(slots[t]), m)]
    start_sec = slot_choice + rng.integers(0, 3600, total)
    durations = rng.integers(1, 3 * 3600 + 1, total)

    src_tract = pairs[pair_rows, 0]
    dst_tract = pairs[pair_rows, 1]
    ids = city.tracts.ids
    src_venue = np.empty(total, dtype=object)
    dst_venue = np.empty(total, dtype=object)
    for i, tid in enumerate(ids):
        vlist = city.venue_lists[tid]
        m_src = src_tract == i
        n_src = int(m_src.sum())
        if n_src:
            src_venue[m_src] = vlist[rng.integers(0, len(vlist), n_src)]
        m_dst = dst_tract == i
        n_dst = int(m_dst.sum())
        if n_dst:
            dst_venue[m_dst] = vlist[rng.integers(0, len(vlist), n_dst)]
    # self-loop transitions need two distinct venues in the tract
    selfloop = src_tract == dst_tract
    clash = selfloop & (src_venue == dst_venue)
    while clash.any():
        for i, tid in enumerate(ids):
            m = clash & (src_tract == i)
            k = int(m.sum())
            if k:
                vlist = city.venue_lists[tid]
                dst_venue[m] = vlist[rng.integers(0, len(vlist), k)]
        clash = selfloop & (src_venue == dst_venue)

    users = rng.integers(0, cfg.n_users, total)
    df = pd.DataFrame(
        {
            "user_key": [f"u{u:05d}" for u in users],
            "start_ts": pd.to_datetime(start_sec, unit="s", utc=True),
            "end_ts": pd.to_datetime(start_sec + durations, unit="s", utc=True),
            "src_venue": src_venue,
            "dst_venue": dst_venue,
        }
    )
    df = df.sort_values(["start_ts", "user_key", "src_venue", "dst_venue"],
                        kind="stable").reset_index(drop=True)
    return df


def compute_features(cfg: SynthConfig, city: City, transitions: pd.DataFrame,
                     year: int) -> dict[str, np.ndarray]:
    """Mobility feature grids via the production network and panel code."""
    adj = flownet.build_queen_adjacency(city.tracts)
    cache = flownet.PathCache(adj)
    od, _ = flownet.build_od_network(transitions, city.venues, city.tracts,
                                     year=year, tz=cfg.tz)
    passthrough, _ = flownet.pass_through_counts(adj, od, cache=cache)
    checkins, _ = panel.aggregate_checkins(transitions, city.venues, city.tracts,
                                           year=year, tz=cfg.tz)
    inout, selfloop, _ = panel.decompose_flows(transitions, city.venues, city.tracts,
                                               year=year, tz=cfg.tz)
    return {
        "checkins": checkins,
        "inout_flow": inout,
        "selfloop_flow": selfloop,
        "passthrough_flow": passthrough.counts,
    }


@dataclass
class GroundTruth:
    """The realized effects and features behind the generated crime counts."""

    config: dict
    alpha: dict[str, float]
    theta_t: list[float]
    coefficients: dict[str, float]
    features: dict[int, dict[str, np.ndarray]] = field(repr=False, default_factory=dict)
    crime_grids: dict[int, np.ndarray] = field(repr=False, default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "config": self.config,
            "alpha": self.alpha,
            "theta_t": self.theta_t,
            "coefficients": self.coefficients,
            "years": sorted(self.features),
        }


def _materialize_incidents(cfg: SynthConfig, city: City, grid: np.ndarray,
                           year: int, rng: np.random.Generator) -> pd.DataFrame:
    slots = _year_hour_slots(cfg, year)
    rows = {"incident_id": [], "ts": [], "lon": [], "lat": [], "crime_type": []}
    seq = 0
    ids = city.tracts.ids
    for i, tid in enumerate(ids):
        col, row = i % cfg.grid_w, i // cfg.grid_w
        for t in range(HOURS_PER_WEEK):
            c = int(grid[i, t])
            if c == 0:
                continue
            secs = slots[t][rng.integers(0, len(slots[t]), c)] + rng.integers(0, 3600, c)
            lons = rng.uniform(col + _VENUE_MARGIN, col + 1 - _VENUE_MARGIN, c)
            lats = rng.uniform(row + _VENUE_MARGIN, row + 1 - _VENUE_MARGIN, c)
            kinds = rng.choice(len(CRIME_TYPES), size=c, p=cfg.crime_mix)
            for k in range(c):
                rows["incident_id"].append(f"C{year}-{seq:07d}")
                seq += 1
            rows["ts"].extend(secs.tolist())
            rows["lon"].extend(lons.tolist())
            rows["lat"].extend(lats.tolist())
            rows["crime_type"].extend(CRIME_TYPES[k] for k in kinds)
    df = pd.DataFrame(rows)
    if len(df):
        df["ts"] = pd.to_datetime(df["ts"], unit="s", utc=True)
    return df


def generate_crimes(cfg: SynthConfig, city: City,
                    features_by_year: dict[int, dict[str, np.ndarray]]):
    """NB crime draws for the base year and every study year.

    The base year (start_year - 1) uses only the intercept and fixed
    effects and serves as past crime for the first study year; each
    study year's mean adds the mobility terms and the previous year's
    realized counts.
    """
    rng = _rng(cfg, _TAG_CRIME)
    n = len(city.tracts)
    alpha = rng.normal(0.0, cfg.sigma_alpha, n)
    theta_t = rng.normal(0.0, cfg.sigma_theta, HOURS_PER_WEEK)
    base_nu = cfg.nu if cfg.base_nu is None else cfg.base_nu

    def nb_draw(mu):
        if np.max(mu) > np.exp(MAX_LOG_MEAN):
            raise ConfigError(
                "crime mean overflow: generated log-mean exceeds "
                f"{MAX_LOG_MEAN}; rescale the true coefficients or volumes")
        p = cfg.theta_nb / (cfg.theta_nb + mu)
        return rng.negative_binomial(cfg.theta_nb, p)

    log_mu0 = base_nu + alpha[:, None] + theta_t[None, :]
    crime_grids = {cfg.start_year - 1: nb_draw(np.exp(log_mu0))}
    past = crime_grids[cfg.start_year - 1]
    for year in cfg.study_years:
        f = features_by_year[year]
        log_mu = (
            cfg.nu + alpha[:, None] + theta_t[None, :]
            + cfg.beta * past
            + cfg.gamma * f["checkins"]
            + cfg.delta * f["passthrough_flow"]
            + cfg.eta_inout * f["inout_flow"]
            + cfg.eta_selfloop * f["selfloop_flow"]
        )
        if np.max(log_mu) > MAX_LOG_MEAN:
            raise ConfigError(
                f"crime mean overflow in {year}: max log-mean {np.max(log_mu):.1f} "
                f"exceeds {MAX_LOG_MEAN}; rescale the true coefficients or volumes")
        crime_grids[year] = nb_draw(np.exp(log_mu))
        past = crime_grids[year]

    frames = []
    for year in sorted(crime_grids):
        frames.append(_materialize_incidents(cfg, city, crime_grids[year], year,
                                             _rng(cfg, _TAG_CRIME, year)))
    crimes = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()
    truth = GroundTruth(
        config=cfg.to_dict(),
        alpha={tid: float(a) for tid, a in zip(city.tracts.ids, alpha)},
        theta_t=[float(x) for x in theta_t],
        coefficients={
            "nu": cfg.nu, "beta": cfg.beta, "gamma": cfg.gamma, "delta": cfg.delta,
            "eta_inout": cfg.eta_inout, "eta_selfloop": cfg.eta_selfloop,
            "theta_nb": cfg.theta_nb,
        },
        features=features_by_year,
        crime_grids=crime_grids,
    )
    return crimes, truth


def generate_covariates(cfg: SynthConfig, city: City, truth: GroundTruth) -> pd.DataFrame:
    """Per-tract indices correlated with the tract effects (and thus absorbable)."""
    rng = _rng(cfg, _TAG_COV)
    alpha = np.array([truth.alpha[tid] for tid in city.tracts.ids])
    n = len(alpha)
    return pd.DataFrame(
        {
            "tract_id": city.tracts.ids,
            "concentrated_disadvantage": 0.7 * alpha + 0.3 * rng.normal(0, 1, n),
            "residential_stability": -0.4 * alpha + 0.6 * rng.normal(0, 1, n),
            "ethnic_heterogeneity": rng.normal(0, 1, n),
        }
    )


@dataclass
class Dataset:
    """In-memory bundle of one generated city and its ground truth."""

    cfg: SynthConfig
    city: City
    transitions: pd.DataFrame  # all study years
    crimes: pd.DataFrame  # base year + study years
    covariates: pd.DataFrame
    truth: GroundTruth
    transitions_by_year: dict[int, pd.DataFrame] = field(default_factory=dict)


def generate_dataset(cfg: SynthConfig) -> Dataset:
    cfg.validate()
    city = generate_city(cfg)
    transitions_by_year = {y: generate_transitions(cfg, city, y) for y in cfg.study_years}
    features = {y: compute_features(cfg, city, transitions_by_year[y], y)
                for y in cfg.study_years}
    crimes, truth = generate_crimes(cfg, city, features)
    covariates = generate_covariates(cfg, city, truth)
    transitions = pd.concat([transitions_by_year[y] for y in cfg.study_years],
                            ignore_index=True)
    return Dataset(cfg=cfg, city=city, transitions=transitions, crimes=crimes,
                   covariates=covariates, truth=truth,
                   transitions_by_year=transitions_by_year)


def _iso_utc(series: pd.Series) -> pd.Series:
    return pd.DatetimeIndex(series).strftime("%Y-%m-%dT%H:%M:%S+00:00")


def write_dataset(ds: Dataset, inputs_dir, truth_dir) -> dict:
    """Write the ingest-format input files plus the ground-truth namespace."""
    from pathlib import Path

    inputs = Path(inputs_dir)
    truth = Path(truth_dir)
    inputs.mkdir(parents=True, exist_ok=True)
    truth.mkdir(parents=True, exist_ok=True)

    with open(inputs / "tracts.geojson", "w") as fh:
        json.dump(tracts_to_geojson(ds.city.tracts), fh)
    ds.city.venues[["venue_id", "lon", "lat", "category"]].to_csv(
        inputs / "venues.csv", index=False, lineterminator="\n")
    mapping = pd.DataFrame({"category": list(ACTIVITY_TYPES) + ["other"],
                            "activity_type": list(ACTIVITY_TYPES) + ["leisure"]})
    mapping.to_csv(inputs / "category_mapping.csv", index=False, lineterminator="\n")

    tr = ds.transitions.copy()
    tr["start_ts"] = _iso_utc(tr["start_ts"])
    tr["end_ts"] = _iso_utc(tr["end_ts"])
    tr.to_csv(inputs / "transitions.csv", index=False, lineterminator="\n")

    cr = ds.crimes.copy()
    if len(cr):
        cr["ts"] = _iso_utc(cr["ts"])
    cr.to_csv(inputs / "crimes.csv", index=False, lineterminator="\n")
    ds.covariates.to_csv(inputs / "covariates.csv", index=False, lineterminator="\n")

    years = ds.cfg.study_years
    dataset_meta = {
        "train_year": years[0],
        "eval_year": years[1] if len(years) > 1 else None,
        "tz": ds.cfg.tz,
        "files": {
            "tracts": "tracts.geojson",
            "venues": "venues.csv",
            "category_mapping": "category_mapping.csv",
            "transitions": "transitions.csv",
            "crimes": "crimes.csv",
            "covariates": "covariates.csv",
        },
    }
    with open(inputs / "dataset.json", "w") as fh:
        json.dump(dataset_meta, fh, indent=2, sort_keys=True)

    with open(truth / "ground_truth.json", "w") as fh:
        json.dump(ds.truth.to_json_dict(), fh, indent=2, sort_keys=True)
    for year, feats in ds.truth.features.items():
        out = pd.DataFrame({
            "tract_id": np.repeat(np.asarray(ds.city.tracts.ids, dtype=object),
                                  HOURS_PER_WEEK),
            "t": np.tile(np.arange(HOURS_PER_WEEK), len(ds.city.tracts)),
            **{name: grid.reshape(-1) for name, grid in feats.items()},
            "crime": ds.truth.crime_grids[year].reshape(-1),
        })
        out.to_csv(truth / f"expected_features_{year}.csv", index=False,
                   lineterminator="\n")
    return dataset_meta
