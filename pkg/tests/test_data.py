import numpy as np
import pytest

from ricgen.data import (CSV_HEADER, DEPTHS, CompactionFeatures, DataError,
                         Dataset, N_POINTS, Scaler, SoilSample, SynthConfig,
                         assemble_tensors, baseline_qc, datasets_equal,
                         largest_remainder_sizes, load_csv, resample_profile,
                         save_csv, shift_right, split_dataset, synth_generate,
                         synth_response)


def _sample(i=0, with_post=True):
    qc_ini = baseline_qc(DEPTHS) * (1.0 + 0.01 * i)
    return SoilSample(
        sample_id=f"s{i:03d}",
        qc_ini=qc_ini,
        qc_post=qc_ini * 1.3 if with_post else None,
        features=CompactionFeatures(50.0 + 10.0 * i, 0.5 + 0.25 * i,
                                    18.0 + float(i)))


def _dataset(n=12, **kwargs):
    return Dataset([_sample(i, **kwargs) for i in range(n)])


class TestDepthGrid:
    def test_grid_shape_and_ends(self):
        assert N_POINTS == 28
        assert DEPTHS[0] == 0.25
        assert DEPTHS[-1] == 7.0
        assert np.allclose(np.diff(DEPTHS), 0.25)


class TestValidation:
    def test_features_reject_bad_values(self):
        with pytest.raises(DataError):
            CompactionFeatures(0.0, 0.5, 18.0)
        with pytest.raises(DataError):
            CompactionFeatures(100.0, -0.1, 18.0)
        with pytest.raises(DataError):
            CompactionFeatures(100.0, 0.5, 101.0)

    def test_sample_needs_28_points(self):
        with pytest.raises(DataError):
            SoilSample("x", np.ones(27), CompactionFeatures(100, 0.5, 18))

    def test_sample_rejects_nonpositive_qc(self):
        qc = np.ones(N_POINTS)
        qc[5] = 0.0
        with pytest.raises(DataError):
            SoilSample("x", qc, CompactionFeatures(100, 0.5, 18))

    def test_split_length_mismatch(self):
        with pytest.raises(DataError):
            Dataset([_sample()], splits=["train", "val"])


class TestResample:
    def test_identity_on_grid(self):
        values = np.linspace(1, 5, N_POINTS)
        out = resample_profile(DEPTHS, values)
        assert np.max(np.abs(out - values)) < 1e-12

    def test_linear_interpolation_oracle(self):
        # brute-force piecewise-linear evaluation at each grid point
        raw_d = np.array([0.1, 2.0, 4.5, 8.0])
        raw_v = np.array([1.0, 3.0, 2.0, 6.0])
        out = resample_profile(raw_d, raw_v)
        for g, o in zip(DEPTHS, out):
            if g <= raw_d[0]:
                expected = raw_v[0]
            else:
                j = np.searchsorted(raw_d, g) - 1
                frac = (g - raw_d[j]) / (raw_d[j + 1] - raw_d[j])
                expected = raw_v[j] + frac * (raw_v[j + 1] - raw_v[j])
            assert abs(o - expected) < 1e-12

    def test_extrapolation_holds_last_value(self):
        out = resample_profile([0.5, 1.0], [2.0, 4.0])
        assert np.all(out[DEPTHS >= 1.0] == 4.0)

    def test_rejects_unsorted_depths(self):
        with pytest.raises(DataError):
            resample_profile([1.0, 0.5], [1.0, 2.0])

    def test_rejects_empty_and_mismatched(self):
        with pytest.raises(DataError):
            resample_profile([], [])
        with pytest.raises(DataError):
            resample_profile([1.0], [1.0, 2.0])


class TestScaler:
    def test_round_trip(self):
        ds = split_dataset(_dataset(32), seed=0)
        scaler = Scaler().fit(ds)
        x = np.linspace(0.5, 30, 50)
        back = scaler.inverse("qc_ini", scaler.transform("qc_ini", x))
        assert np.max(np.abs(back - x)) < 1e-9

    def test_train_split_statistics(self):
        ds = split_dataset(_dataset(32), seed=0)
        scaler = Scaler().fit(ds)
        train_qc = np.concatenate(
            [s.qc_ini for s in ds.subset("train").samples])
        scaled = scaler.transform("qc_ini", train_qc)
        assert abs(scaled.mean()) < 1e-9
        assert abs(scaled.std() - 1.0) < 1e-9   # population std

    def test_constant_channel_floored_with_warning(self):
        base = _sample(0)
        ds = Dataset([SoilSample(f"c{i}", base.qc_ini, base.features, base.qc_post)
                      for i in range(4)])   # identical features for every sample
        with pytest.warns(UserWarning, match="constant"):
            scaler = Scaler().fit(ds)
        assert np.all(scaler.transform("blows", base.features.blows) == 0.0)

    def test_unfitted_channel(self):
        with pytest.raises(DataError):
            Scaler().transform("qc_ini", 1.0)

    def test_serialization_round_trip(self):
        ds = split_dataset(_dataset(16), seed=1)
        scaler = Scaler().fit(ds)
        clone = Scaler.from_dict(scaler.to_dict())
        assert clone.stats == scaler.stats


class TestSplit:
    def test_32_samples_give_26_3_3(self):
        assert largest_remainder_sizes(32, (0.8, 0.1, 0.1)) == [26, 3, 3]
        ds = split_dataset(_dataset(32), seed=0)
        counts = {tag: ds.splits.count(tag) for tag in ("train", "val", "test")}
        assert counts == {"train": 26, "val": 3, "test": 3}

    def test_10_samples_give_8_1_1(self):
        assert largest_remainder_sizes(10, (0.8, 0.1, 0.1)) == [8, 1, 1]

    def test_sizes_always_sum_to_n(self):
        for n in range(10, 60):
            assert sum(largest_remainder_sizes(n, (0.8, 0.1, 0.1))) == n

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(DataError):
            largest_remainder_sizes(32, (0.8, 0.1, 0.2))

    def test_too_few_samples(self):
        with pytest.raises(DataError):
            split_dataset(_dataset(9))

    def test_seeded_and_deterministic(self):
        a = split_dataset(_dataset(20), seed=5)
        b = split_dataset(_dataset(20), seed=5)
        c = split_dataset(_dataset(20), seed=6)
        assert a.splits == b.splits
        assert a.splits != c.splits

    def test_every_sample_tagged_exactly_once(self):
        ds = split_dataset(_dataset(17), seed=2)
        assert all(tag in ("train", "val", "test") for tag in ds.splits)


class TestAssemble:
    @pytest.fixture()
    def fitted(self):
        ds = split_dataset(_dataset(32), seed=0)
        return ds, Scaler().fit(ds)

    def test_fnn_rows(self, fitted):
        ds, scaler = fitted
        out = assemble_tensors(ds, "FNN", scaler, split="train")
        assert out["x"].shape == (26 * 28, 4)
        assert out["y"].shape == (26 * 28, 1)

    def test_fnn_s_vector(self, fitted):
        ds, scaler = fitted
        out = assemble_tensors(ds, "FNN_S", scaler)
        assert out["x"].shape == (32, 31)
        assert out["y"].shape == (32, 28)

    def test_sequential_tensor_and_channel_order(self, fitted):
        ds, scaler = fitted
        out = assemble_tensors(ds, "LSTM", scaler)
        assert out["x"].shape == (32, 28, 4)
        s = ds.samples[0]
        assert np.allclose(out["x"][0, :, 0], scaler.transform("qc_ini", s.qc_ini))
        assert np.allclose(out["x"][0, :, 1], scaler.transform("blows", s.features.blows))

    def test_seq2seq_gets_shifted_target(self, fitted):
        ds, scaler = fitted
        out = assemble_tensors(ds, "LSTM_S2S", scaler)
        assert out["y_shifted"].shape == (32, 28)
        assert np.all(out["y_shifted"][:, 0] == 0.0)
        assert np.array_equal(out["y_shifted"][:, 1:], out["y"][:, :-1])

    def test_unknown_kind(self, fitted):
        ds, scaler = fitted
        with pytest.raises(DataError):
            assemble_tensors(ds, "GRU", scaler)

    def test_empty_split(self, fitted):
        ds, scaler = fitted
        with pytest.raises(DataError):
            assemble_tensors(ds, "LSTM", scaler, split="nope")

    def test_missing_targets(self):
        ds = Dataset([_sample(i, with_post=False) for i in range(4)])
        scaler = Scaler().fit(ds)
        with pytest.raises(DataError):
            assemble_tensors(ds, "LSTM", scaler)
        out = assemble_tensors(ds, "LSTM", scaler, require_targets=False)
        assert out["y"] is None


def test_shift_right_definition():
    y = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    out = shift_right(y)
    assert np.array_equal(out, [[0.0, 1.0, 2.0], [0.0, 4.0, 5.0]])


class TestSynth:
    def test_baseline_strictly_increasing(self):
        qc = baseline_qc(DEPTHS)
        assert np.all(np.diff(qc) > 0)
        assert np.all(qc > 0)

    def test_response_closed_form_spot_value(self):
        cfg = SynthConfig()
        feats = CompactionFeatures(100.0, 0.5, 18.0)
        factor = synth_response(cfg, feats, DEPTHS)
        # 100 blows, reference fines: amplitude is exactly amp_max, no punch
        d0 = 0.6 + 0.45 * 0.5
        expected = 1.0 + cfg.amp_max * np.exp(
            -((DEPTHS - d0) ** 2) / (2.0 * cfg.peak_width ** 2))
        assert np.max(np.abs(factor - expected)) < 1e-12

    def test_punch_only_above_100_blows_and_shallow(self):
        cfg = SynthConfig()
        low = synth_response(cfg, CompactionFeatures(80.0, 0.5, 33.0), DEPTHS)
        high = synth_response(cfg, CompactionFeatures(200.0, 0.5, 33.0), DEPTHS)
        assert np.all(low >= 1.0)                       # no penalty below 100 blows
        assert np.all(high[DEPTHS >= cfg.punch_depth] >= high[DEPTHS >= cfg.punch_depth].min())
        shallow = DEPTHS < cfg.punch_depth
        no_punch = synth_response(cfg, CompactionFeatures(100.0, 0.5, 33.0), DEPTHS)
        assert np.all(high[shallow] < no_punch[shallow])

    def test_amplitude_decreases_with_fine_content(self):
        cfg = SynthConfig()
        lean = synth_response(cfg, CompactionFeatures(100.0, 0.5, 18.0), DEPTHS)
        rich = synth_response(cfg, CompactionFeatures(100.0, 0.5, 33.0), DEPTHS)
        assert lean.max() > rich.max()

    def test_peak_depth_tracks_fill_thickness(self):
        cfg = SynthConfig()
        thin = synth_response(cfg, CompactionFeatures(100.0, 0.5, 18.0), DEPTHS)
        thick = synth_response(cfg, CompactionFeatures(100.0, 5.0, 18.0), DEPTHS)
        assert DEPTHS[np.argmax(thin)] < DEPTHS[np.argmax(thick)]

    def test_noise_free_is_deterministic_function_of_features(self):
        cfg = SynthConfig(n_samples=8, noise=0.0)
        a = synth_generate(cfg, seed=0)
        b = synth_generate(cfg, seed=99)   # seed only matters when noise > 0
        assert datasets_equal(a, b)

    def test_seeded_noise_reproducible(self):
        cfg = SynthConfig(n_samples=8, noise=0.05)
        assert datasets_equal(synth_generate(cfg, seed=3), synth_generate(cfg, seed=3))
        assert not datasets_equal(synth_generate(cfg, seed=3), synth_generate(cfg, seed=4))

    def test_all_values_positive(self):
        ds = synth_generate(SynthConfig(n_samples=32, noise=0.3), seed=7)
        for s in ds.samples:
            assert np.all(s.qc_ini > 0)
            assert np.all(s.qc_post > 0)

    def test_invalid_config(self):
        with pytest.raises(DataError):
            SynthConfig(n_samples=0).validate()
        with pytest.raises(DataError):
            SynthConfig(noise=-0.1).validate()

    def test_config_round_trip(self):
        cfg = SynthConfig(n_samples=5, noise=0.1)
        assert SynthConfig.from_dict(cfg.to_dict()) == cfg


class TestCsv:
    def test_round_trip_bit_exact(self, tmp_path):
        ds = synth_generate(SynthConfig(n_samples=6, noise=0.1), seed=2)
        path = tmp_path / "data.csv"
        save_csv(ds, path)
        assert datasets_equal(load_csv(path), ds)

    def test_round_trip_without_targets(self, tmp_path):
        ds = Dataset([_sample(i, with_post=False) for i in range(3)])
        path = tmp_path / "data.csv"
        save_csv(ds, path)
        loaded = load_csv(path)
        assert not loaded.has_targets()
        assert datasets_equal(loaded, ds)

    def test_header_line(self, tmp_path):
        ds = _dataset(2)
        path = tmp_path / "data.csv"
        save_csv(ds, path)
        with open(path) as fh:
            assert fh.readline().strip() == ",".join(CSV_HEADER)

    def test_bad_header_reports_line_1(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("wrong,header\n")
        with pytest.raises(DataError, match="line 1"):
            load_csv(path)

    def test_unparsable_float_reports_line(self, tmp_path):
        ds = _dataset(1)
        path = tmp_path / "data.csv"
        save_csv(ds, path)
        lines = path.read_text().splitlines()
        parts = lines[3].split(",")
        parts[2] = "not-a-number"
        lines[3] = ",".join(parts)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match="line 4"):
            load_csv(path)

    def test_wrong_row_count_per_sample(self, tmp_path):
        ds = _dataset(1)
        path = tmp_path / "data.csv"
        save_csv(ds, path)
        lines = path.read_text().splitlines()
        path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(DataError, match="27 depth rows"):
            load_csv(path)

    def test_inconsistent_features_within_sample(self, tmp_path):
        ds = _dataset(1)
        path = tmp_path / "data.csv"
        save_csv(ds, path)
        lines = path.read_text().splitlines()
        parts = lines[5].split(",")
        parts[4] = "999.0"
        lines[5] = ",".join(parts)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match="features differ"):
            load_csv(path)

    def test_off_grid_depth_rejected(self, tmp_path):
        ds = _dataset(1)
        path = tmp_path / "data.csv"
        save_csv(ds, path)
        lines = path.read_text().splitlines()
        parts = lines[1].split(",")
        parts[1] = "0.3"
        lines[1] = ",".join(parts)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(DataError, match="grid"):
            load_csv(path)
