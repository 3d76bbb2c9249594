import math

import numpy as np
import pytest

from sddgat.errors import ConfigError, DataIOError, PreprocessingError, SchemaError, SplitError
from sddgat.data import (SplitSpec, SyntheticSpec, fit_and_apply_standardizer, generate_synthetic, load_csv,
                         make_split, perturb_dropout, perturb_noise, write_csv)

HEADER = "id,lon,lat,fluoride,ph,detection_freq,soil_type,dfi,region\n"


def write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestCsv:
    def test_three_rows(self, tmp_path):
        p = write(tmp_path, HEADER + "a,1,2,0.5,7.1,0.3,clay,1.2,0\nb,2,3,0.8,6.5,0.1,loam,2.0,1\nc,3,1,1.1,7.0,0.9,clay,0.3,1\n")
        t = load_csv(p)
        assert t.n == 3
        assert t.feature_names == ("fluoride", "ph", "detection_freq", "soil_type=clay", "soil_type=loam")
        np.testing.assert_array_equal(t.features[:, 3:].sum(axis=1), 1.0)
        np.testing.assert_array_equal(t.label, [0, 1, 0])
        assert t.ids == ("a", "b", "c")

    def test_missing_column(self, tmp_path):
        p = write(tmp_path, "id,lon,lat,fluoride,ph,detection_freq,soil_type,region\na,1,2,0.5,7.1,0.3,clay,0\n")
        with pytest.raises(SchemaError, match="dfi"):
            load_csv(p)

    def test_bad_number_names_line(self, tmp_path):
        p = write(tmp_path, HEADER + "a,1,2,0.5,7.1,0.3,clay,1.2,0\nb,2,3,high,6.5,0.1,loam,2.0,1\n")
        with pytest.raises(SchemaError, match="line 3.*fluoride"):
            load_csv(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataIOError):
            load_csv(tmp_path / "nope.csv")

    def test_round_trip_lossless(self, tmp_path):
        t = generate_synthetic(SyntheticSpec(n_nodes=40, seed=2))
        write_csv(t, tmp_path / "a.csv")
        back = load_csv(tmp_path / "a.csv")
        assert back.same_as(t)
        write_csv(back, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestStandardizer:
    def test_full_train(self, small_table):
        std, rec = fit_and_apply_standardizer(small_table, np.arange(small_table.n))
        num = std.features[:, std.numeric_mask]
        np.testing.assert_allclose(num.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(num.var(axis=0), 1.0, rtol=1e-12)
        np.testing.assert_array_equal(std.features[:, ~std.numeric_mask], small_table.features[:, ~small_table.numeric_mask])

    def test_same_record_idempotent_refit_not(self, small_table):
        idx = np.arange(30)
        once, rec = fit_and_apply_standardizer(small_table, idx)
        assert rec.apply(once) is once
        with pytest.raises(PreprocessingError):
            fit_and_apply_standardizer(once, np.arange(10, 50))

    def test_heldout_rows_use_train_stats(self, small_table):
        std, _ = fit_and_apply_standardizer(small_table, np.arange(30))
        assert abs(std.features[30:, 0].mean()) > 1e-3

    def test_zero_variance_column(self, tmp_path):
        p = write(tmp_path, HEADER + "a,1,2,0.5,7.1,0.3,clay,1.2,0\nb,2,3,0.8,7.1,0.1,loam,2.0,1\n")
        with pytest.raises(PreprocessingError, match="ph"):
            fit_and_apply_standardizer(load_csv(p), [0, 1])


def reference_dfi(spec):
    """Independent restatement of the generator's coordinate and target draws."""
    ss = np.random.SeedSequence(spec.seed).spawn(7)
    r_coords, r_plumes, r_ph = (np.random.default_rng(s) for s in ss[:3])
    coords = r_coords.uniform(0, 1, size=(spec.n_nodes, 2))
    centers = r_plumes.uniform(0.15, 0.85, size=(spec.n_plumes, 2))
    amps = r_plumes.uniform(1.0, 2.0, size=spec.n_plumes)
    th = math.radians(spec.bearing_deg)
    fluoride = np.full(spec.n_nodes, 0.1)
    slope = np.zeros(spec.n_nodes)
    for c, a in zip(centers, amps):
        dx, dy = coords[:, 0] - c[0], coords[:, 1] - c[1]
        u = (dx * math.cos(th) + dy * math.sin(th)) / spec.len_along
        v = (-dx * math.sin(th) + dy * math.cos(th)) / spec.len_across
        k = a * np.exp(-(u ** 2 + v ** 2) / 2)
        fluoride += k
        # d/ds of k along the unit bearing vector
        slope += k * (-u / spec.len_along)
    om = r_ph.normal(0, 4.0, size=(64, 2))
    ph_phase = r_ph.uniform(0, 2 * math.pi, size=64)
    ph = 6.8 + 0.6 * math.sqrt(2 / 64) * np.cos(coords @ om.T + ph_phase).sum(axis=1)
    return coords, fluoride, ph, np.clip(0.8 * fluoride + 0.3 * np.maximum(7 - ph, 0) + 0.4 * slope, 0, 4)


class TestSynthetic:
    def test_deterministic(self):
        a = generate_synthetic(SyntheticSpec(n_nodes=50, seed=4))
        b = generate_synthetic(SyntheticSpec(n_nodes=50, seed=4))
        assert a.same_as(b)
        assert not a.same_as(generate_synthetic(SyntheticSpec(n_nodes=50, seed=5)))

    def test_noise_free_matches_reference(self):
        spec = SyntheticSpec(n_nodes=200, noise_sd=0.0, seed=9)
        t = generate_synthetic(spec)
        coords, fluoride, ph, dfi = reference_dfi(spec)
        np.testing.assert_array_equal(t.coords, coords)
        np.testing.assert_allclose(t.features[:, 0], fluoride, rtol=1e-13)
        np.testing.assert_allclose(t.features[:, 1], ph, rtol=1e-13)
        np.testing.assert_allclose(t.dfi, dfi, rtol=1e-12, atol=1e-13)

    def test_slope_is_directional_derivative(self):
        from sddgat.data import plume_field
        spec = SyntheticSpec(n_nodes=50, seed=1)
        pts = np.random.default_rng(0).uniform(0.2, 0.8, size=(20, 2))
        th = math.radians(spec.bearing_deg)
        step = 1e-6 * np.array([math.cos(th), math.sin(th)])
        _, slope = plume_field(pts, spec)
        fp, _ = plume_field(pts + step, spec)
        fm, _ = plume_field(pts - step, spec)
        np.testing.assert_allclose(slope, (fp - fm) / 2e-6, rtol=1e-5, atol=1e-6)

    def test_ranges_and_regions(self):
        t = generate_synthetic(SyntheticSpec(n_nodes=300, seed=0))
        assert t.dfi.min() >= 0 and t.dfi.max() <= 4
        assert set(np.unique(t.region)) == {0, 1, 2}
        assert ((t.coords >= 0) & (t.coords <= 1)).all()

    @pytest.mark.parametrize("kw", [{"n_nodes": 5}, {"len_along": 0.1, "len_across": 0.1}, {"noise_sd": -1.0}])
    def test_invalid_spec(self, kw):
        with pytest.raises(ConfigError):
            generate_synthetic(SyntheticSpec(**kw))


class TestPerturbations:
    def setup_method(self):
        self.t = generate_synthetic(SyntheticSpec(n_nodes=4000, seed=1))

    def test_zero_is_identity(self):
        assert perturb_noise(self.t, 0.0, 3) is self.t
        assert perturb_dropout(self.t, 0.0, 3) is self.t

    def test_noise_sd(self):
        out = perturb_noise(self.t, 0.2, seed=5)
        diff = (out.features - self.t.features)[:, self.t.numeric_mask]
        assert diff.size >= 10_000
        assert diff.std() == pytest.approx(0.2, rel=0.05)
        np.testing.assert_array_equal(out.features[:, ~self.t.numeric_mask], self.t.features[:, ~self.t.numeric_mask])

    def test_noise_common_pattern_across_levels(self):
        a = perturb_noise(self.t, 0.1, seed=5).features - self.t.features
        b = perturb_noise(self.t, 0.2, seed=5).features - self.t.features
        np.testing.assert_allclose(b, 2 * a, rtol=1e-12, atol=1e-15)

    def test_dropout_rate(self):
        out = perturb_dropout(self.t, 0.3, seed=6)
        num = out.features[:, self.t.numeric_mask]
        assert abs(np.mean(num == 0) - 0.3) < 0.02

    def test_dropout_full(self):
        out = perturb_dropout(self.t, 1.0, seed=6)
        assert (out.features[:, self.t.numeric_mask] == 0).all()

    def test_dropout_masks_nested(self):
        lo = perturb_dropout(self.t, 0.1, seed=2).features == 0
        hi = perturb_dropout(self.t, 0.3, seed=2).features == 0
        assert (hi | ~lo).all()

    def test_targets_untouched(self):
        for out in (perturb_noise(self.t, 0.5, 1), perturb_dropout(self.t, 0.5, 1)):
            np.testing.assert_array_equal(out.dfi, self.t.dfi)
            np.testing.assert_array_equal(out.coords, self.t.coords)
            np.testing.assert_array_equal(out.region, self.t.region)


class TestSplits:
    def test_disjoint_cover(self, small_table):
        s = make_split(small_table, SplitSpec(seed=2))
        allidx = np.concatenate([s.train, s.val, s.test])
        assert sorted(allidx.tolist()) == list(range(small_table.n))
        assert (len(s.train), len(s.val), len(s.test)) == (42, 9, 9)

    def test_all_train(self, small_table):
        s = make_split(small_table, SplitSpec(fractions=(1.0, 0.0, 0.0)))
        assert len(s.train) == small_table.n and len(s.val) == len(s.test) == 0

    def test_deterministic(self, small_table):
        a, b = make_split(small_table, SplitSpec(seed=7)), make_split(small_table, SplitSpec(seed=7))
        np.testing.assert_array_equal(a.test, b.test)

    def test_region_holdout(self, small_table):
        s = make_split(small_table, SplitSpec(kind="region_holdout", holdout_region=2))
        np.testing.assert_array_equal(s.test, np.flatnonzero(small_table.region == 2))
        rest = len(s.train) + len(s.val)
        assert len(s.val) == round(0.15 * rest)
        assert not set(s.test) & (set(s.train) | set(s.val))

    def test_missing_region(self, small_table):
        with pytest.raises(SplitError):
            make_split(small_table, SplitSpec(kind="region_holdout", holdout_region=9))

    def test_empty_part(self, small_table):
        sub = generate_synthetic(SyntheticSpec(n_nodes=10, seed=0))
        with pytest.raises(SplitError):
            make_split(sub, SplitSpec(fractions=(0.96, 0.02, 0.02)))

    def test_bad_fractions(self, small_table):
        with pytest.raises(ConfigError):
            make_split(small_table, SplitSpec(fractions=(0.5, 0.2, 0.2)))
