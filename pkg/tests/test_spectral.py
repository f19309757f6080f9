import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import signal as sps

from diffmonitor.signal_core import TimeWindow
from diffmonitor.spectral import (StftConfig, WelchConfig, hanning, istft, istft_array, psd_freqs,
                                  stft, stft_array, welch_array, welch_psd)

FS = 50.0


def _dft_stft(x, n_win, hop):
    """Direct-sum oracle for one channel."""
    w = hanning(n_win)
    frames = []
    for start in range(0, len(x) - n_win + 1, hop):
        seg = x[start:start + n_win] * w
        k = np.arange(n_win // 2 + 1)[:, None]
        n = np.arange(n_win)[None, :]
        frames.append((seg[None, :] * np.exp(-2j * np.pi * k * n / n_win)).sum(axis=1))
    return np.array(frames).T


class TestHanning:
    def test_symmetric_endpoints_zero(self):
        w = hanning(22)
        assert w[0] == 0 and w[-1] == 0
        assert np.allclose(w, w[::-1])

    def test_matches_numpy(self):
        assert np.allclose(hanning(64), np.hanning(64), atol=1e-15)

    def test_invalid(self):
        with pytest.raises(ValueError):
            hanning(0)


class TestStft:
    def test_default_shape(self):
        spec = stft(np.zeros((4, 160)))
        assert spec.frames.shape == (4, 12, 70)
        assert StftConfig().hop == 2

    def test_against_direct_dft(self, rng):
        x = rng.standard_normal(160)
        assert np.allclose(stft_array(x), _dft_stft(x, 22, 2), atol=1e-10)

    def test_window_longer_than_signal(self):
        with pytest.raises(ValueError, match="window longer"):
            stft(np.zeros((1, 10)))

    def test_invalid_overlap(self):
        with pytest.raises(ValueError):
            StftConfig(22, 22)

    def test_round_trip_interior(self, rng):
        x = rng.standard_normal((3, 160))
        back = istft(stft(TimeWindow(x))).data
        assert np.max(np.abs(back[:, 1:-1] - x[:, 1:-1])) < 1e-9

    def test_edge_samples_under_zero_taps(self, rng):
        # symmetric Hann has zero end taps, so the first and last samples carry no energy
        x = rng.standard_normal((1, 160))
        back = istft_array(stft_array(x), StftConfig(), 160)
        assert back[0, 0] == 0.0 and back[0, -1] == 0.0

    def test_cola_violation(self):
        cfg = StftConfig(4, 0)  # hop 4 with zero end taps leaves interior gaps
        with pytest.raises(ValueError, match="COLA violation"):
            istft_array(stft_array(np.ones(16), cfg), cfg, 16)

    @given(n=st.integers(22, 300), win=st.integers(4, 22), data=st.data())
    @settings(max_examples=40, deadline=None)
    def test_round_trip_property(self, n, win, data):
        hop = data.draw(st.integers(1, max(1, win // 2 - 1)))
        cfg = StftConfig(win, win - hop)
        x = np.random.default_rng(n * 31 + win).standard_normal(n)
        frames = cfg.num_frames(n)
        covered = (frames - 1) * hop + win
        back = istft_array(stft_array(x, cfg), cfg, covered)
        assert np.allclose(back[1:-1], x[1:covered - 1], atol=1e-9)


class TestWelch:
    def test_bins_for_window(self):
        assert welch_array(np.zeros((2, 160))).shape == (2, 33)

    def test_density_matches_scipy(self, rng):
        x = rng.standard_normal(160)
        ours = welch_array(x, WelchConfig(scaling="density"), FS)
        _, ref = sps.welch(x, fs=FS, window=hanning(64), nperseg=64, noverlap=32,
                           detrend=False, scaling="density")
        assert np.allclose(ours, ref, rtol=1e-12)

    def test_tone_at_bin_center(self):
        t = np.arange(160) / FS
        for k in (3, 7, 12):
            x = np.sin(2 * np.pi * k * FS / 64 * t)
            assert int(np.argmax(welch_array(x))) == k

    def test_parseval_density(self, rng):
        x = rng.standard_normal(100_000)
        p = welch_array(x, WelchConfig(scaling="density"), FS)
        df = FS / 64
        assert abs(p.sum() * df / np.mean(x ** 2) - 1) < 0.05

    def test_amplitude_doubling_exact(self, rng):
        x = rng.standard_normal((3, 160))
        assert np.array_equal(welch_array(2 * x), 4 * welch_array(x))

    def test_clamped_short_signal(self):
        out = welch_psd(np.ones((1, 40)))
        assert out[0].power.shape == (21,)
        assert np.allclose(out[0].freq_axis, psd_freqs(40))

    def test_unclamped_error(self):
        with pytest.raises(ValueError, match="segment_len"):
            welch_array(np.ones(40), WelchConfig(64, clamp=False))

    @given(scale=st.floats(0.01, 100))
    @settings(max_examples=25, deadline=None)
    def test_non_negative_and_quadratic(self, scale):
        x = np.random.default_rng(0).standard_normal(160)
        p = welch_array(x)
        assert np.all(p >= 0)
        assert np.allclose(welch_array(scale * x), scale ** 2 * p, rtol=1e-10)
