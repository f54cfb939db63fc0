"""WAV I/O, resampling, SNR-controlled mixing and manifest-driven batch assembly.

Manifest files are JSON Lines.  The first line is a header, every further line
one mixture::

    {"format": "cycledcd-manifest", "version": 1, "split": "train"}
    {"clean": "clean/p232_001.wav", "noise": "noise/cafe.wav", "snr_db": 5.0, "seed": 11}

Relative paths resolve against the manifest's own directory.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

MANIFEST_FORMAT = "cycledcd-manifest"
MANIFEST_VERSION = 1
SPLITS = ("train", "valid", "test")


class WavError(ValueError):
    """Base class for WAV ingestion failures."""


class UnreadableWavError(WavError):
    pass


class MultiChannelError(WavError):
    pass


class UnsupportedEncodingError(WavError):
    pass


class DegeneratePowerError(ValueError):
    pass


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.float64).reshape(-1)
        if s.size == 0:
            raise ValueError("waveform is empty")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if not np.isfinite(s).all():
            raise ValueError("waveform contains non-finite samples")
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


# -- WAV I/O ----------------------------------------------------------------------

def load_wav(path) -> Waveform:
    """Read a mono PCM16 or float32 WAV; PCM16 is scaled by 1/32768."""
    try:
        rate, data = wavfile.read(str(path))
    except (OSError, ValueError, EOFError) as exc:
        raise UnreadableWavError(f"cannot read {path}: {exc}") from exc
    if data.ndim > 1:
        if data.shape[1] != 1:
            raise MultiChannelError(f"{path}: multi-channel unsupported ({data.shape[1]} channels)")
        data = data[:, 0]
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise UnsupportedEncodingError(f"{path}: unsupported sample encoding {data.dtype}")
    if samples.size == 0:
        raise UnreadableWavError(f"{path}: no samples")
    return Waveform(samples, rate)


def save_wav(path, w: Waveform, encoding: str = "float32") -> None:
    if encoding == "float32":
        data = w.samples.astype(np.float32)
    elif encoding == "pcm16":
        data = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), w.sample_rate_hz, data)


# -- resampling and mixing -----------------------------------------------------------

def resample(w: Waveform, target_rate_hz: int) -> Waveform:
    """Polyphase windowed-sinc resampling; output length is round(n * target / source)."""
    target_rate_hz = int(target_rate_hz)
    if target_rate_hz <= 0:
        raise ValueError(f"target rate must be positive, got {target_rate_hz}")
    src = w.sample_rate_hz
    if target_rate_hz == src:
        return w
    g = math.gcd(src, target_rate_hz)
    y = resample_poly(w.samples, target_rate_hz // g, src // g)
    n_out = max(1, int(round(len(w) * target_rate_hz / src)))
    if y.size < n_out:
        y = np.pad(y, (0, n_out - y.size))
    return Waveform(y[:n_out], target_rate_hz)


def noise_gain(p_clean: float, p_noise: float, snr_db: float) -> float:
    return math.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float, seed: int) -> tuple[Waveform, Waveform]:
    """Add a seeded random cut of ``noise`` to ``clean`` at exactly ``snr_db``.

    Noise shorter than the utterance is tiled first.  Powers are mean squares over
    the utterance extent.  Returns ``(noisy, scaled_noise_cut)``.
    """
    if clean.sample_rate_hz != noise.sample_rate_hz:
        raise ValueError("clean and noise sample rates differ")
    if not math.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    n = len(clean)
    z = noise.samples
    if z.size < n:
        z = np.tile(z, -(-n // z.size))
    rng = np.random.default_rng(seed)
    start = int(rng.integers(0, z.size - n + 1))
    cut = z[start:start + n]
    p_clean = float(np.mean(clean.samples ** 2))
    p_noise = float(np.mean(cut ** 2))
    if p_clean == 0.0 or p_noise == 0.0:
        raise DegeneratePowerError("degenerate power: clean or noise segment has zero energy")
    scaled = noise_gain(p_clean, p_noise, snr_db) * cut
    rate = clean.sample_rate_hz
    return Waveform(clean.samples + scaled, rate), Waveform(scaled, rate)


def snr_db(clean: np.ndarray, noise: np.ndarray) -> float:
    return 10.0 * math.log10(float(np.mean(np.square(clean))) / float(np.mean(np.square(noise))))


# -- manifests ------------------------------------------------------------------------

@dataclass(frozen=True)
class MixtureSpec:
    clean_path: Path
    noise_path: Path
    snr_db: float
    seed: int

    def key(self) -> tuple:
        return (str(self.clean_path), str(self.noise_path), float(self.snr_db), int(self.seed))


@dataclass
class Manifest:
    entries: list[MixtureSpec]
    split: str = "train"
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ManifestError(f"split must be one of {SPLITS}, got {self.split!r}")
        if not self.entries:
            raise ManifestError("manifest has no entries")
        seen = set()
        for e in self.entries:
            if not math.isfinite(e.snr_db):
                raise ManifestError(f"non-finite snr_db in {e}")
            if e.seed < 0:
                raise ManifestError(f"seed must be unsigned, got {e.seed}")
            if e.key() in seen:
                raise ManifestError(f"duplicate manifest entry {e.key()}")
            seen.add(e.key())

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, p: Path) -> Path:
        return p if p.is_absolute() else self.root / p

    def validate_paths(self) -> None:
        missing = [str(self.resolve(p)) for e in self.entries for p in (e.clean_path, e.noise_path)
                   if not self.resolve(p).is_file()]
        if missing:
            raise ManifestError(f"unresolvable paths: {missing[:5]}")

    @classmethod
    def load(cls, path, validate: bool = True) -> "Manifest":
        path = Path(path)
        try:
            lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
        except OSError as exc:
            raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
        if not lines:
            raise ManifestError(f"{path}: empty manifest")
        try:
            header = json.loads(lines[0])
            records = [json.loads(ln) for ln in lines[1:]]
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: invalid JSON line: {exc}") from exc
        if header.get("format") != MANIFEST_FORMAT or header.get("version") != MANIFEST_VERSION:
            raise ManifestError(f"{path}: not a {MANIFEST_FORMAT} v{MANIFEST_VERSION} file")
        entries = []
        for rec in records:
            if set(rec) != {"clean", "noise", "snr_db", "seed"}:
                raise ManifestError(f"{path}: record keys must be clean/noise/snr_db/seed, got {sorted(rec)}")
            entries.append(MixtureSpec(Path(rec["clean"]), Path(rec["noise"]), float(rec["snr_db"]), int(rec["seed"])))
        m = cls(entries, header.get("split", "train"), path.parent)
        if validate:
            m.validate_paths()
        return m

    def save(self, path) -> None:
        path = Path(path)
        lines = [json.dumps({"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "split": self.split})]
        for e in self.entries:
            lines.append(json.dumps({"clean": str(e.clean_path), "noise": str(e.noise_path),
                                     "snr_db": e.snr_db, "seed": e.seed}))
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n")


# -- datasets and batches ------------------------------------------------------------------

@dataclass
class Batch:
    """Aligned (noisy, clean) spectrogram crops, shape (B, T, F), complex."""

    noisy: np.ndarray
    clean: np.ndarray
    valid: np.ndarray  # (B, T) bool, False on zero-padded frames
    padded: np.ndarray  # (B,) bool
    indices: list[int]


class MixtureDataset:
    """Materializes manifest mixtures at ``sample_rate_hz`` and caches them in memory."""

    def __init__(self, manifest: Manifest, stft_params=None, sample_rate_hz: int = 16000):
        from .spectral import StftParams

        self.manifest = manifest
        self.stft_params = stft_params or StftParams()
        self.sample_rate_hz = sample_rate_hz
        self._mix: dict[int, tuple[Waveform, Waveform]] = {}
        self._spec: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def __len__(self) -> int:
        return len(self.manifest)

    def mixture(self, i: int) -> tuple[Waveform, Waveform]:
        """(noisy, clean) waveforms of entry ``i``."""
        if i not in self._mix:
            e = self.manifest.entries[i]
            clean = resample(load_wav(self.manifest.resolve(e.clean_path)), self.sample_rate_hz)
            noise = resample(load_wav(self.manifest.resolve(e.noise_path)), self.sample_rate_hz)
            noisy, _ = mix_at_snr(clean, noise, e.snr_db, e.seed)
            self._mix[i] = (noisy, clean)
        return self._mix[i]

    def spectra(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        from .spectral import stft

        if i not in self._spec:
            noisy, clean = self.mixture(i)
            self._spec[i] = (stft(noisy, self.stft_params).data, stft(clean, self.stft_params).data)
        return self._spec[i]


def entry_rng(seed: int, index: int) -> np.random.Generator:
    """Per-entry stream; independent of batch composition and worker layout."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def build_batch(data: Manifest | MixtureDataset, indices: Sequence[int], crop_frames: int, seed: int) -> Batch:
    """Random aligned crops of ``crop_frames`` frames; shorter utterances are zero-padded."""
    if not len(indices):
        raise ValueError("build_batch needs at least one index")
    if crop_frames <= 0:
        raise ValueError("crop_frames must be positive")
    ds = data if isinstance(data, MixtureDataset) else MixtureDataset(data)
    noisy_out, clean_out, valid, padded = [], [], [], []
    for i in indices:
        xn, xc = ds.spectra(int(i))
        t = xn.shape[0]
        if t >= crop_frames:
            start = int(entry_rng(seed, i).integers(0, t - crop_frames + 1))
            sl = slice(start, start + crop_frames)
            noisy_out.append(xn[sl])
            clean_out.append(xc[sl])
            valid.append(np.ones(crop_frames, dtype=bool))
            padded.append(False)
        else:
            pad = ((0, crop_frames - t), (0, 0))
            noisy_out.append(np.pad(xn, pad))
            clean_out.append(np.pad(xc, pad))
            valid.append(np.arange(crop_frames) < t)
            padded.append(True)
    return Batch(np.stack(noisy_out), np.stack(clean_out), np.stack(valid), np.array(padded), [int(i) for i in indices])
