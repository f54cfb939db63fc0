import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cycledcd.audio import Waveform
from cycledcd.spectral import (ComplexSpectrogram, StftParams, export_csv, export_png, hann_window, istft,
                               magnitude, phase, polar_compose, stft)

P = StftParams()


def wf(x):
    return Waveform(x, 16000)


def test_defaults():
    assert (P.win_len, P.hop, P.fft_len, P.n_bins) == (320, 160, 320, 161)


def test_zero_in_zero_out():
    s = stft(wf(np.zeros(1600)))
    assert not s.data.any()
    assert not istft(ComplexSpectrogram(np.zeros((11, 161)), P), length=1600).samples.any()


def test_impulse_at_frame_center_is_flat():
    x = np.zeros(3200)
    x[5 * 160] = 1.0
    s = stft(wf(x))
    np.testing.assert_allclose(np.abs(s.data[5]), hann_window(320)[160], atol=1e-12)


def test_sinusoid_peak_bin_against_brute_force_dft():
    n = np.arange(16000)
    x = np.sin(2 * np.pi * 800 * n / 16000)
    s = stft(wf(x))
    t = 20
    seg = x[t * 160 - 160:t * 160 + 160] * hann_window(320)
    k = np.arange(161)[:, None]
    dft = (seg[None, :] * np.exp(-2j * np.pi * k * np.arange(320)[None, :] / 320)).sum(axis=1)
    np.testing.assert_allclose(s.data[t], dft, atol=1e-9)
    assert np.argmax(np.abs(dft)) == 16
    assert all(np.argmax(np.abs(s.data[i])) == 16 for i in range(2, s.n_frames - 2))


def test_white_noise_reconstruction():
    x = np.random.default_rng(0).standard_normal(16000)
    y = istft(stft(wf(x))).samples
    assert y.shape == x.shape
    assert np.max(np.abs(y[160:-160] - x[160:-160])) < 1e-6


def test_single_frame_hand_overlap_add():
    seg = np.random.default_rng(1).standard_normal(320)
    w = hann_window(320)
    spec = ComplexSpectrogram(np.fft.rfft(seg * w)[None, :], P)
    # one frame: buffer = irfft * w, normalization = w^2; centre trimming drops the first 160
    y = istft(spec, length=160).samples
    expect = (seg * w * w)[160:] / (w * w)[160:]
    np.testing.assert_allclose(y, expect, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 300), st.integers(0, 2**32 - 1))
def test_perfect_reconstruction_property(n_hops, seed):
    x = np.random.default_rng(seed).standard_normal(160 * n_hops + 160)
    y = istft(stft(wf(x))).samples
    assert np.max(np.abs(y[160:-160] - x[160:-160]), initial=0.0) < 1e-6


def test_linearity():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal(4000), rng.standard_normal(4000)
    lhs = stft(wf(2.5 * a - 0.75 * b)).data
    rhs = 2.5 * stft(wf(a)).data - 0.75 * stft(wf(b)).data
    assert np.max(np.abs(lhs - rhs)) < 1e-9


def test_parseval_one_frame():
    seg = np.random.default_rng(3).standard_normal(320)
    x = np.zeros(640)
    x[160:480] = seg
    s = stft(wf(x))
    framed = x[160:480] * hann_window(320)
    spec = s.data[2]
    weights = np.full(161, 2.0)
    weights[[0, -1]] = 1.0
    time_energy = 320 * np.sum(framed ** 2)
    assert abs(np.sum(weights * np.abs(spec) ** 2) - time_energy) / time_energy < 1e-6


def test_short_input_padded_to_one_frame():
    x = np.random.default_rng(4).standard_normal(100)
    s = stft(wf(x))
    assert s.n_frames >= 1
    assert istft(s).samples.shape == (100,)


def test_polar_forms():
    s = np.array([[3 + 4j, 0j]])
    assert magnitude(s)[0, 0] == 5.0
    assert phase(s)[0, 0] == np.arctan2(4, 3)
    assert phase(s)[0, 1] == 0.0
    rng = np.random.default_rng(5)
    r = ComplexSpectrogram(rng.standard_normal((7, 161)) + 1j * rng.standard_normal((7, 161)), P)
    back = polar_compose(magnitude(r), phase(r))
    assert np.max(np.abs(back.data - r.data)) < 1e-12
    with pytest.raises(ValueError):
        polar_compose(-np.ones((1, 161)), np.zeros((1, 161)))


def test_exports(tmp_path):
    s = stft(wf(np.random.default_rng(6).standard_normal(1600)))
    export_csv(s, tmp_path / "s.csv")
    rows = (tmp_path / "s.csv").read_text().splitlines()
    assert rows[0] == "frame,bin,real,imag" and len(rows) == 1 + s.n_frames * 161
    t, f, re, im = rows[1 + 161 + 3].split(",")
    assert (int(t), int(f)) == (1, 3) and complex(float(re), float(im)) == s.data[1, 3]
    export_png(s, tmp_path / "s.png")
    from PIL import Image
    img = np.array(Image.open(tmp_path / "s.png"))
    assert img.shape == (161, s.n_frames) and img.min() == 0 and img.max() == 255
