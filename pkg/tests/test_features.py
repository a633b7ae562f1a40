import numpy as np
import pytest

from mtbci import ValidationError
from mtbci.features import (POWER_FLOOR, BandSpec, RawRecording, band_power_spectrum, extract_trial_features,
                            laplacian_matrix, log_bandpower, read_recording_csv, surface_laplacian,
                            write_recording_csv)

FS = 500.0


def _tone(freq, seconds=7.0, amp=1.0, fs=FS, phase=0.0):
    t = np.arange(int(round(seconds * fs))) / fs
    return amp * np.sin(2 * np.pi * freq * t + phase)


CROSS = {"C": ["N", "S", "E", "W"], "N": ["C"], "S": ["C"], "E": ["C"], "W": ["C"]}


class TestLaplacian:
    def test_identical_channels_vanish(self, rng):
        x = rng.standard_normal(50)
        rec = RawRecording(np.tile(x, (5, 1)), FS, tuple(CROSS), CROSS)
        np.testing.assert_allclose(surface_laplacian(rec).samples, 0.0, atol=1e-15)

    def test_cross_montage_hand_case(self):
        names = ("C", "N", "S", "E", "W")
        samples = np.array([[10.0, 0.0], [1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]])
        out = surface_laplacian(RawRecording(samples, FS, names, CROSS)).samples
        np.testing.assert_allclose(out[0], [10.0 - 4.0, 0.0 - 5.0])
        np.testing.assert_allclose(out[1], [1.0 - 10.0, 2.0 - 0.0])
        np.testing.assert_allclose(out[4], [7.0 - 10.0, 8.0])

    def test_linear(self, rng):
        names = ("C", "N", "S", "E", "W")
        x, y = rng.standard_normal((5, 100)), rng.standard_normal((5, 100))
        a, b = 2.7, -0.4

        def lap(s):
            return surface_laplacian(RawRecording(s, FS, names, CROSS)).samples

        np.testing.assert_allclose(lap(a * x + b * y), a * lap(x) + b * lap(y), rtol=0, atol=1e-12)

    def test_missing_neighbors(self):
        with pytest.raises(ValidationError, match="'b'"):
            laplacian_matrix(("a", "b"), {"a": ["b"]})

    def test_unknown_channel_in_montage(self):
        with pytest.raises(ValidationError):
            RawRecording(np.zeros((2, 4)), FS, ("a", "b"), {"a": ["z"]})


class TestLogBandpower:
    def test_ten_hertz_peak(self):
        out = log_bandpower(_tone(10.0), FS, BandSpec.motor_imagery())
        assert BandSpec.motor_imagery().bands[int(np.argmax(out))] == (9.0, 11.0)

    def test_spectrum_matches_direct_dft(self, rng):
        x = rng.standard_normal(64)
        freqs, power = band_power_spectrum(x, 128.0)
        n = np.arange(64)
        win = 0.5 - 0.5 * np.cos(2 * np.pi * n / 63)
        coeffs = np.array([np.sum(x * win * np.exp(-2j * np.pi * k * n / 64)) for k in range(33)])
        raw = np.abs(coeffs) ** 2 / 64
        raw[1:32] *= 2
        np.testing.assert_allclose(power, raw / np.sum(win ** 2), rtol=1e-10)
        np.testing.assert_allclose(freqs, np.arange(33) * 2.0)

    @pytest.mark.parametrize("T", [700, 701])
    def test_parseval(self, rng, T):
        x = rng.standard_normal(T)
        win = np.hanning(T)
        full = BandSpec(((0.0, FS / 2),))
        total = np.exp(log_bandpower(x, FS, full))[0] - POWER_FLOOR
        assert total == pytest.approx(np.sum((x * win) ** 2) / np.sum(win ** 2), rel=1e-9)

    def test_zero_signal(self):
        out = log_bandpower(np.zeros(3500), FS, BandSpec.motor_imagery())
        np.testing.assert_array_equal(out, np.full(12, np.log(POWER_FLOOR)))

    def test_doubling_amplitude(self, rng):
        x = rng.standard_normal(3500)
        bands = BandSpec.motor_imagery()
        diff = log_bandpower(2 * x, FS, bands) - log_bandpower(x, FS, bands)
        np.testing.assert_allclose(diff, np.log(4.0), rtol=0, atol=1e-9)

    def test_out_of_band_tone(self, rng):
        x = rng.standard_normal(3500)
        bands = BandSpec.motor_imagery()
        # 45 Hz is 16 Hz above the top band edge
        moved = log_bandpower(x + _tone(45.0, amp=3.0), FS, bands) - log_bandpower(x, FS, bands)
        assert np.max(np.abs(moved)) <= 1e-3

    def test_empty_band_named(self):
        with pytest.raises(ValidationError, match="10.15"):
            log_bandpower(np.ones(3500), FS, BandSpec(((10.15, 10.2),)))

    def test_nyquist_bin_included(self):
        T = 100
        x = np.cos(np.pi * np.arange(T))  # energy only at Nyquist
        top = log_bandpower(x, 100.0, BandSpec(((45.0, 50.0),)))
        assert top[0] > np.log(POWER_FLOOR) + 10

    def test_band_above_nyquist(self):
        with pytest.raises(ValidationError, match="Nyquist"):
            log_bandpower(np.ones(100), 100.0, BandSpec(((40.0, 60.0),)))

    @pytest.mark.parametrize("bands", [((5.0, 5.0),), ((-1.0, 2.0),), ()])
    def test_invalid_spec(self, bands):
        with pytest.raises(ValidationError):
            BandSpec(bands)


class TestExtract:
    def test_motor_imagery_shape(self, rng):
        rec = RawRecording(rng.standard_normal((128, 5000)), FS, tuple(f"ch{i}" for i in range(128)))
        assert extract_trial_features(rec, (3.0, 10.0), BandSpec.motor_imagery()).shape == (128, 12)

    def test_named_band_shape(self, rng):
        rec = RawRecording(rng.standard_normal((121, 1000)), FS, tuple(f"ch{i}" for i in range(121)))
        feats = extract_trial_features(rec, (0.0, 2.0), BandSpec.named())
        assert feats.shape == (121, 7)
        assert BandSpec.named().labels[0] == "delta"

    def test_rows_match_single_channel(self, rng):
        rec = RawRecording(rng.standard_normal((3, 2000)), FS, ("a", "b", "c"))
        bands = BandSpec.motor_imagery()
        feats = extract_trial_features(rec, (1.0, 4.0), bands)
        np.testing.assert_array_equal(feats[2], log_bandpower(rec.samples[2, 500:2000], FS, bands))

    def test_window_out_of_range(self, rng):
        rec = RawRecording(rng.standard_normal((2, 1000)), FS, ("a", "b"))
        with pytest.raises(ValidationError):
            extract_trial_features(rec, (1.0, 3.0), BandSpec.motor_imagery())


def test_recording_csv_round_trip(tmp_path, rng):
    rec = RawRecording(rng.standard_normal((3, 40)), 250.0, ("Cz", "C3", "C4"))
    path = tmp_path / "rec.csv"
    write_recording_csv(rec, path)
    again = read_recording_csv(path)
    np.testing.assert_array_equal(again.samples, rec.samples)
    assert again.sample_rate == pytest.approx(250.0, rel=1e-12)
    assert again.channel_names == rec.channel_names
