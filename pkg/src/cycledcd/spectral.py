"""STFT analysis/synthesis and polar decomposition of spectrograms.

Frames are reflect-padded by half a window at each end, so frame ``t`` is
centred on input sample ``t * hop`` and :func:`istft` returns exactly the
input length.  Synthesis divides the overlap-added frames by the overlap-added
squared window.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform


@dataclass(frozen=True)
class StftParams:
    win_len: int = 320
    hop: int = 160
    fft_len: int = 320
    window: str = "hann"

    def __post_init__(self):
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")
        if self.hop <= 0 or self.win_len <= 0 or self.win_len % self.hop:
            raise ValueError("hop must evenly divide win_len")
        if self.fft_len < self.win_len:
            raise ValueError("fft_len must be >= win_len")

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


@dataclass(frozen=True)
class ComplexSpectrogram:
    data: np.ndarray  # (T, F) complex, frame-major
    params: StftParams
    length: int | None = None  # source waveform length in samples

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.complex128)
        if d.ndim != 2 or d.shape[1] != self.params.n_bins:
            raise ValueError(f"spectrogram shape {d.shape} inconsistent with {self.params.n_bins} bins")
        if not np.isfinite(d).all():
            raise ValueError("spectrogram contains non-finite values")
        object.__setattr__(self, "data", d)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]


def stft(w: Waveform, p: StftParams = StftParams()) -> ComplexSpectrogram:
    x = w.samples
    n = x.size
    if n < p.win_len:
        x = np.pad(x, (0, p.win_len - n))
    half = p.win_len // 2
    xp = np.pad(x, half, mode="reflect")
    n_frames = 1 + (xp.size - p.win_len) // p.hop
    frames = np.lib.stride_tricks.sliding_window_view(xp, p.win_len)[::p.hop][:n_frames]
    spec = np.fft.rfft(frames * hann_window(p.win_len), n=p.fft_len, axis=-1)
    return ComplexSpectrogram(spec, p, n)


def istft(s: ComplexSpectrogram, p: StftParams | None = None, length: int | None = None,
          sample_rate_hz: int = 16000) -> Waveform:
    p = p or s.params
    if s.params != p:
        raise ValueError("spectrogram was produced with different STFT parameters")
    if length is None:
        length = s.length if s.length is not None else p.hop * (s.n_frames - 1)
    win = hann_window(p.win_len)
    frames = np.fft.irfft(s.data, n=p.fft_len, axis=-1)[:, :p.win_len] * win
    total = p.win_len + p.hop * (s.n_frames - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    for t in range(s.n_frames):
        out[t * p.hop:t * p.hop + p.win_len] += frames[t]
        norm[t * p.hop:t * p.hop + p.win_len] += win * win
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    half = p.win_len // 2
    y = out[half:half + length]
    if y.size < length:
        y = np.pad(y, (0, length - y.size))
    return Waveform(y, sample_rate_hz)


def _as_array(s) -> np.ndarray:
    return s.data if isinstance(s, ComplexSpectrogram) else np.asarray(s)


def magnitude(s) -> np.ndarray:
    return np.abs(_as_array(s))


def phase(s) -> np.ndarray:
    """Phase in radians; numpy's angle already maps 0+0j to 0."""
    return np.angle(_as_array(s))


def polar_compose(mag: np.ndarray, ph: np.ndarray, params: StftParams = StftParams(),
                  length: int | None = None) -> ComplexSpectrogram:
    mag = np.asarray(mag, dtype=np.float64)
    if (mag < 0).any():
        raise ValueError("negative magnitude")
    return ComplexSpectrogram(mag * np.exp(1j * np.asarray(ph)), params, length)


# -- debug exports ---------------------------------------------------------------------

def export_csv(s: ComplexSpectrogram, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["frame", "bin", "real", "imag"])
        for t in range(s.n_frames):
            for f in range(s.data.shape[1]):
                v = s.data[t, f]
                wr.writerow([t, f, repr(float(v.real)), repr(float(v.imag))])


def export_png(s: ComplexSpectrogram, path) -> None:
    """Grayscale log-magnitude image, low frequencies at the bottom, min/max scaled per file."""
    from PIL import Image

    logmag = 20.0 * np.log10(np.abs(s.data) + 1e-10)
    lo, hi = float(logmag.min()), float(logmag.max())
    scaled = np.zeros_like(logmag) if hi == lo else (logmag - lo) / (hi - lo)
    img = np.flipud((scaled * 255.0).round().astype(np.uint8).T)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img, mode="L").save(path)
