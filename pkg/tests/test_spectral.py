import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oscroot.errors import ConfigError, InsufficientDataError, NoDominantModeError
from oscroot.ingest import Channel, ChannelSet
from oscroot.spectral import ModeCandidate, aggregate_spectrum, dominant_modes, select_window, spectrum

DT = 1 / 30


def channels(*rows, dt=DT, t0=0.0):
    return ChannelSet(dt, [Channel(f"G{i}", "P", np.asarray(r, dtype=float)) for i, r in enumerate(rows)], t0)


def tone(f, n, amp=1.0, phase=0.0, dt=DT):
    return amp * np.sin(2 * np.pi * f * dt * np.arange(n) + phase)


def dft_magnitudes(x):
    """Brute-force DFT of the Hann-tapered signal, no FFT involved."""
    n = x.size
    k = np.arange(n)
    w = 0.5 - 0.5 * np.cos(2 * np.pi * k / n)
    basis = np.exp(-2j * np.pi * np.outer(np.arange(n // 2 + 1), k) / n)
    return np.abs(basis @ (w * x)), w


class TestSpectrum:
    def test_zeros(self):
        _, mags = spectrum(np.zeros(64), DT)
        np.testing.assert_array_equal(mags, 0.0)

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            spectrum(np.zeros(7), DT)

    def test_frequency_grid(self):
        freqs, _ = spectrum(np.zeros(900), DT)
        np.testing.assert_allclose(freqs, np.arange(451) / (900 * DT))

    def test_matches_brute_force_dft(self):
        x = np.random.default_rng(0).normal(size=301)
        _, mags = spectrum(x, DT)
        ref, w = dft_magnitudes(x)
        scale = 2 * ref / w.sum()
        scale[0] /= 2
        np.testing.assert_allclose(mags, scale, rtol=1e-9, atol=1e-12)

    def test_unit_sinusoid_peak(self):
        freqs, mags = spectrum(tone(1.0, 900), DT)
        ref, _ = dft_magnitudes(tone(1.0, 900))
        assert np.argmax(mags) == np.argmax(ref)
        assert freqs[np.argmax(mags)] == pytest.approx(1.0)
        assert mags.max() == pytest.approx(1.0, rel=1e-9)

    def test_two_close_modes_resolved(self):
        x = tone(1.27, 1800) + tone(1.41, 1800)
        freqs, mags = spectrum(x, DT)
        interior = (mags[1:-1] > mags[:-2]) & (mags[1:-1] >= mags[2:])
        peaks = freqs[1:-1][interior & (mags[1:-1] > 0.3)]
        assert len(peaks) == 2
        assert peaks[0] == pytest.approx(1.27, abs=0.02)
        assert peaks[1] == pytest.approx(1.41, abs=0.02)

    @pytest.mark.parametrize("n", [64, 301, 900])
    def test_parseval(self, n):
        x = np.random.default_rng(n).normal(size=n)
        _, mags = spectrum(x, DT)
        w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
        X = mags * w.sum() / 2
        X[0] *= 2
        if n % 2 == 0:
            X[-1] *= 2
        interior = X[1:-1] if n % 2 == 0 else X[1:]
        two_sided = X[0] ** 2 + 2 * np.sum(interior**2) + (X[-1] ** 2 if n % 2 == 0 else 0.0)
        assert two_sided / n == pytest.approx(np.sum((w * x) ** 2), rel=1e-6)

    def test_nonnegative(self):
        _, mags = spectrum(np.random.default_rng(3).normal(size=200), DT)
        assert np.all(mags >= 0)


class TestAggregate:
    def test_per_bin_maximum(self):
        a, b = tone(1.0, 300), tone(2.0, 300, 0.5)
        _, agg = aggregate_spectrum(channels(a, b))
        _, ma = spectrum(a, DT)
        _, mb = spectrum(b, DT)
        np.testing.assert_array_equal(agg, np.maximum(ma, mb))


class TestDominantModes:
    def test_single_sso_mode(self):
        t = DT * np.arange(87)
        x = np.exp(-0.46 * t) * np.cos(2 * np.pi * 9.34 * t)
        found = dominant_modes(channels(x, 0.5 * x))
        assert len(found) == 1
        assert found[0].f_s == pytest.approx(9.34, abs=0.1)
        assert not found[0].is_harmonic

    def test_forced_harmonics_flagged(self):
        n = 1800
        x = tone(0.4, n) + tone(0.8, n, 0.5) + tone(1.2, n, 0.35)
        found = dominant_modes(channels(x))
        assert [round(c.f_s, 2) for c in found] == [0.4, 0.8, 1.2]
        assert found[0].harmonic_of is None
        assert found[1].harmonic_of == pytest.approx(found[0].f_s)
        assert found[2].harmonic_of == pytest.approx(found[0].f_s)

    def test_square_wave(self):
        t = DT * np.arange(1800)
        x = np.sign(np.sin(2 * np.pi * 0.4 * t + 0.1))
        found = dominant_modes(channels(x))
        dominant = [c for c in found if not c.is_harmonic]
        assert len(dominant) == 1
        assert dominant[0].f_s == pytest.approx(0.4, rel=0.01)
        assert any(c.f_s == pytest.approx(1.2, rel=0.01) for c in found if c.is_harmonic)

    def test_white_noise_rejected(self):
        empty = 0
        for seed in range(100):
            x = np.random.default_rng(seed).normal(size=(4, 900))
            if not dominant_modes(channels(*x), threshold_rel=0.5):
                empty += 1
        assert empty >= 95

    def test_sorted_and_below_nyquist(self):
        n = 900
        x = tone(1.27, n, 0.6) + tone(3.1, n, 1.0) + tone(7.7, n, 0.8)
        found = dominant_modes(channels(x))
        amps = [c.amplitude for c in found]
        assert amps == sorted(amps, reverse=True)
        assert all(0 < c.f_s < 15 for c in found)
        assert found[0].f_s == pytest.approx(3.1, abs=0.02)

    def test_nearby_peaks_merged(self):
        x = tone(2.0, 900) + tone(2.0 + 0.2 / 30, 900)
        assert len(dominant_modes(channels(x))) == 1

    @pytest.mark.parametrize("bad", [0.0, -0.1, 1.5])
    def test_threshold_range(self, bad):
        with pytest.raises(ConfigError):
            dominant_modes(channels(tone(1.0, 100)), threshold_rel=bad)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 1.0), st.floats(0.01, 1.0))
    def test_threshold_monotone(self, a, b):
        lo, hi = sorted((a, b))
        rng = np.random.default_rng(11)
        n = 900
        x = tone(0.7, n) + tone(1.9, n, 0.45) + tone(4.2, n, 0.2) + 0.05 * rng.normal(size=n)
        cs = channels(x)
        f_lo = {round(c.f_s, 6) for c in dominant_modes(cs, lo)}
        f_hi = {round(c.f_s, 6) for c in dominant_modes(cs, hi)}
        assert f_hi <= f_lo


class TestSelectWindow:
    @staticmethod
    def mode(f):
        return ModeCandidate(f, 1.0, (0.0, 0.0))

    def test_minimum_length(self):
        cs = channels(tone(1.41, 1800))
        start, end = select_window(cs, [self.mode(1.41)])
        assert end - start >= 5 / 1.41
        assert 0.0 <= start < end <= cs.times[-1]

    def test_requested_window_honoured(self):
        cs = channels(tone(1.13, 150 * 30))
        assert select_window(cs, [self.mode(1.13)], (70.0, 120.0)) == (70.0, 120.0)

    def test_requested_outside_data(self):
        cs = channels(tone(1.13, 300))
        with pytest.raises(ConfigError):
            select_window(cs, [self.mode(1.13)], (5.0, 20.0))

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            select_window(channels(tone(1.0, 60)), [self.mode(1.0)])

    def test_needs_a_mode(self):
        with pytest.raises(NoDominantModeError):
            select_window(channels(tone(1.0, 300)), [])

    def test_follows_energy(self):
        n = 3600
        t = DT * np.arange(n)
        burst = np.where((t > 80) & (t < 110), 1.0, 0.02)
        cs = channels(burst * np.sin(2 * np.pi * 1.5 * t))
        start, end = select_window(cs, [self.mode(1.5)])
        assert end - start == pytest.approx(40.0, abs=2 * DT)
        assert start <= 80 and end >= 110

    def test_short_record_used_whole(self):
        cs = channels(tone(9.34, 87))
        assert select_window(cs, [self.mode(9.34)]) == (0.0, pytest.approx(86 * DT))
