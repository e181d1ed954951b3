import numpy as np
import pandas as pd
import pytest

from crimeflows import flownet, ingest, panel, synthcity
from crimeflows.errors import ConfigError


def small_cfg(**kw):
    base = dict(seed=5, grid_w=3, grid_h=2, transition_volume=3000,
                venues_per_tract_mean=4.0, n_users=50)
    base.update(kw)
    return synthcity.SynthConfig(**base)


class TestCity:
    def test_2x2_complete_adjacency(self):
        city = synthcity.generate_city(small_cfg(grid_w=2, grid_h=2))
        adj = flownet.build_queen_adjacency(city.tracts)
        assert adj.n_edges() == 6

    def test_1x4_path_adjacency(self):
        city = synthcity.generate_city(small_cfg(grid_w=4, grid_h=1))
        adj = flownet.build_queen_adjacency(city.tracts)
        assert adj.n_edges() == 3
        assert adj.neighbors["T0000"] == ["T0001"]

    def test_activity_mix_matches_declared_shares(self):
        cfg = small_cfg(grid_w=20, grid_h=20, venues_per_tract_mean=250.0)
        city = synthcity.generate_city(cfg)
        shares = city.venues["activity_type"].value_counts(normalize=True)
        assert len(city.venues) > 90_000
        for name, want in zip(ingest.ACTIVITY_TYPES, cfg.activity_mix):
            assert abs(shares[name] - want) < 0.02

    def test_min_grid_enforced(self):
        with pytest.raises(ConfigError):
            synthcity.generate_city(small_cfg(grid_w=1, grid_h=3))

    def test_venues_inside_their_tract(self):
        city = synthcity.generate_city(small_cfg())
        resolved = ingest.resolve_venues(
            city.venues[["venue_id", "lon", "lat", "category", "activity_type"]]
            .assign(tract_id=None), city.tracts)
        assert list(resolved["tract_id"]) == list(city.venues["tract_id"])


class TestTransitions:
    def test_deterministic(self):
        cfg = small_cfg()
        city = synthcity.generate_city(cfg)
        a = synthcity.generate_transitions(cfg, city, 2012)
        b = synthcity.generate_transitions(cfg, city, 2012)
        pd.testing.assert_frame_equal(a, b)

    def test_zero_volume_empty(self):
        cfg = small_cfg(transition_volume=0)
        city = synthcity.generate_city(cfg)
        out = synthcity.generate_transitions(cfg, city, 2012)
        assert len(out) == 0

    def test_gravity_limit_only_adjacent(self):
        cfg = small_cfg(grid_w=4, grid_h=1, gravity=60.0, selfloop_share=0.0,
                        transition_volume=2000)
        city = synthcity.generate_city(cfg)
        tr = synthcity.generate_transitions(cfg, city, 2012)
        od, _ = flownet.build_od_network(tr, city.venues, city.tracts)
        adj = flownet.build_queen_adjacency(city.tracts)
        cache = flownet.PathCache(adj)
        hops = [len(cache.path(k, l)) - 1 for k, l in od.edges()]
        assert hops and max(hops) == 1

    def test_transition_invariants(self):
        cfg = small_cfg()
        city = synthcity.generate_city(cfg)
        tr = synthcity.generate_transitions(cfg, city, 2012)
        gaps = (tr["end_ts"] - tr["start_ts"]).dt.total_seconds()
        assert (gaps > 0).all() and (gaps <= 3 * 3600).all()
        assert (tr["src_venue"] != tr["dst_venue"]).all()
        years = tr["start_ts"].dt.year.unique().tolist() \
            + tr["end_ts"].dt.year.unique().tolist()
        assert set(years) == {2012}

    def test_volume_near_target(self):
        cfg = small_cfg(transition_volume=5000)
        city = synthcity.generate_city(cfg)
        tr = synthcity.generate_transitions(cfg, city, 2012)
        assert abs(len(tr) - 5000) < 5 * np.sqrt(5000)


class TestCrimes:
    def test_iid_when_effects_zero(self):
        cfg = small_cfg(grid_w=4, grid_h=4, nu=1.0, beta=0.0, gamma=0.0, delta=0.0,
                        sigma_alpha=0.0, sigma_theta=0.0, theta_nb=5.0,
                        transition_volume=500)
        ds = synthcity.generate_dataset(cfg)
        grid = ds.truth.crime_grids[2012].astype(float)
        mu = np.exp(1.0)
        var = mu + mu * mu / 5.0
        se = np.sqrt(var / grid.size)
        assert abs(grid.mean() - mu) < 3 * se

    def test_poisson_limit_variance_ratio(self):
        cfg = small_cfg(grid_w=5, grid_h=5, nu=1.5, beta=0.0, gamma=0.0, delta=0.0,
                        sigma_alpha=0.0, sigma_theta=0.0, theta_nb=1e6,
                        transition_volume=500)
        ds = synthcity.generate_dataset(cfg)
        grid = ds.truth.crime_grids[2012].astype(float)
        ratio = grid.var() / grid.mean()
        assert abs(ratio - 1.0) < 0.05

    def test_passthrough_effect_visible(self):
        cfg = small_cfg(grid_w=5, grid_h=2, delta=0.02, gamma=0.0,
                        transition_volume=20000, theta_nb=20.0)
        ds = synthcity.generate_dataset(cfg)
        f = ds.truth.features[2012]["passthrough_flow"].reshape(-1).astype(float)
        c = ds.truth.crime_grids[2012].reshape(-1).astype(float)
        assert np.corrcoef(f, c)[0, 1] > 0.1

    def test_overflow_rejected(self):
        cfg = small_cfg(gamma=5.0, transition_volume=20000)
        with pytest.raises(ConfigError, match="overflow"):
            synthcity.generate_dataset(cfg)


class TestRoundTrip:
    def test_pipeline_reproduces_generator_features(self, tmp_path):
        cfg = small_cfg(seed=11, n_years=1)
        ds = synthcity.generate_dataset(cfg)
        meta = synthcity.write_dataset(ds, tmp_path / "inputs", tmp_path / "truth")

        tracts = ingest.parse_tracts(tmp_path / "inputs" / "tracts.geojson")
        mapping = ingest.load_category_mapping(tmp_path / "inputs" / "category_mapping.csv")
        venues = ingest.parse_venues(tmp_path / "inputs" / "venues.csv", mapping)
        venues = ingest.resolve_venues(venues, tracts)
        transitions = ingest.parse_transitions(tmp_path / "inputs" / "transitions.csv")
        year = meta["train_year"]

        feats = synthcity.compute_features(cfg, ds.city, transitions, year)
        for name, grid in ds.truth.features[year].items():
            assert np.array_equal(feats[name], grid), name

        # and through the independent parse of venues/tracts as well
        adj = flownet.build_queen_adjacency(tracts)
        od, _ = flownet.build_od_network(transitions, venues, tracts, year=year)
        pt, _ = flownet.pass_through_counts(adj, od)
        assert np.array_equal(pt.counts, ds.truth.features[year]["passthrough_flow"])
        checkins, _ = panel.aggregate_checkins(transitions, venues, tracts, year=year)
        assert np.array_equal(checkins, ds.truth.features[year]["checkins"])

    def test_crimes_roundtrip_to_grid(self, tmp_path):
        cfg = small_cfg(seed=13)
        ds = synthcity.generate_dataset(cfg)
        synthcity.write_dataset(ds, tmp_path / "inputs", tmp_path / "truth")
        tracts = ingest.parse_tracts(tmp_path / "inputs" / "tracts.geojson")
        crimes = ingest.parse_crimes(tmp_path / "inputs" / "crimes.csv")
        crimes, unassigned = ingest.resolve_crimes(crimes, tracts)
        assert unassigned == 0
        grid, _ = panel.aggregate_crime(crimes, tracts, year=2012)
        assert np.array_equal(grid, ds.truth.crime_grids[2012])

    def test_full_generation_deterministic(self):
        a = synthcity.generate_dataset(small_cfg(seed=21))
        b = synthcity.generate_dataset(small_cfg(seed=21))
        pd.testing.assert_frame_equal(a.transitions, b.transitions)
        pd.testing.assert_frame_equal(a.crimes, b.crimes)
        assert a.truth.alpha == b.truth.alpha

    def test_two_year_dataset(self):
        cfg = small_cfg(seed=31, n_years=2)
        ds = synthcity.generate_dataset(cfg)
        assert sorted(ds.truth.crime_grids) == [2011, 2012, 2013]
        assert sorted(ds.transitions_by_year) == [2012, 2013]
        y = ds.transitions["start_ts"].dt.year
        assert set(y.unique()) == {2012, 2013}
