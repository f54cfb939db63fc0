"""Segmental SNR, SI-SNR and manifest-level evaluation with WAV exports."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .audio import Manifest, MixtureDataset, Waveform, save_wav
from .models import TwoStageModel, two_stage_enhance

SI_SNR_CAP_DB = 100.0


class SilentReferenceError(ValueError):
    pass


def _pair(clean, test) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(clean, Waveform) and isinstance(test, Waveform) and clean.sample_rate_hz != test.sample_rate_hz:
        raise ValueError("sample rates differ")
    c = clean.samples if isinstance(clean, Waveform) else np.asarray(clean, dtype=np.float64)
    t = test.samples if isinstance(test, Waveform) else np.asarray(test, dtype=np.float64)
    if c.shape != t.shape:
        raise ValueError(f"length mismatch {c.shape} vs {t.shape}")
    return c, t


def ssnr(clean, test, frame_len: int = 512, hop: int = 256, clamp_lo: float = -10.0, clamp_hi: float = 35.0) -> float:
    """Mean over frames with nonzero clean energy of the clamped per-frame SNR in dB.

    Defaults are 32 ms frames with a 16 ms hop at 16 kHz.  A frame with zero error
    scores ``clamp_hi``.  The last partial frame is zero-padded.
    """
    c, t = _pair(clean, test)
    n = c.size
    n_frames = 1 if n <= frame_len else 1 + -(-(n - frame_len) // hop)
    pad = (n_frames - 1) * hop + frame_len - n
    c = np.pad(c, (0, pad))
    e = np.pad(c[:n] - t, (0, pad))
    cw = np.lib.stride_tricks.sliding_window_view(c, frame_len)[::hop][:n_frames]
    ew = np.lib.stride_tricks.sliding_window_view(e, frame_len)[::hop][:n_frames]
    sig = np.sum(cw * cw, axis=1)
    err = np.sum(ew * ew, axis=1)
    voiced = sig > 0
    if not voiced.any():
        raise SilentReferenceError("clean reference is silent in every frame")
    sig, err = sig[voiced], err[voiced]
    with np.errstate(divide="ignore"):
        seg = np.where(err > 0, 10.0 * np.log10(sig / np.where(err > 0, err, 1.0)), clamp_hi)
    return float(np.mean(np.clip(seg, clamp_lo, clamp_hi)))


def si_snr(clean, test, cap_db: float = SI_SNR_CAP_DB) -> float:
    """Scale-invariant SNR of zero-mean signals; a perfect match reports ``cap_db``."""
    c, t = _pair(clean, test)
    c = c - c.mean()
    t = t - t.mean()
    cc = float(np.dot(c, c))
    if cc == 0.0:
        raise SilentReferenceError("clean reference has zero variance")
    target = (np.dot(t, c) / cc) * c
    resid = t - target
    num, den = float(np.dot(target, target)), float(np.dot(resid, resid))
    if num == 0.0:
        return -cap_db
    if den == 0.0 or num / den > 10.0 ** (cap_db / 10.0):
        return cap_db
    return max(-cap_db, 10.0 * math.log10(num / den))


def snr(clean, test) -> float:
    c, t = _pair(clean, test)
    num, den = float(np.dot(c, c)), float(np.dot(c - t, c - t))
    if num == 0.0:
        raise SilentReferenceError("clean reference is silent")
    return SI_SNR_CAP_DB if den == 0.0 else min(SI_SNR_CAP_DB, 10.0 * math.log10(num / den))


METRICS = ("ssnr_db", "snr_db", "si_snr_db")


@dataclass
class UtteranceScore:
    id: str
    ssnr_db: float
    snr_db: float
    si_snr_db: float
    noisy_ssnr_db: float


@dataclass
class EvalReport:
    rows: list[UtteranceScore]
    config: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.rows)

    def aggregate(self) -> dict[str, float]:
        keys = METRICS + ("noisy_ssnr_db",)
        return {k: float(np.mean([getattr(r, k) for r in self.rows])) for k in keys}

    def to_dict(self) -> dict:
        return {"count": self.count, "aggregate": self.aggregate(),
                "utterances": [asdict(r) for r in self.rows], "config": self.config}

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def score(clean: Waveform, enhanced: Waveform, noisy: Waveform, uid: str) -> UtteranceScore:
    return UtteranceScore(uid, ssnr(clean, enhanced), snr(clean, enhanced), si_snr(clean, enhanced),
                          ssnr(clean, noisy))


def evaluate(manifest: Manifest | MixtureDataset, model: TwoStageModel, export_dir=None,
             config: dict | None = None) -> EvalReport:
    """Enhance every manifest entry, score it, and optionally write {id}.noisy|enh|clean.wav."""
    ds = manifest if isinstance(manifest, MixtureDataset) else MixtureDataset(manifest, model.stft_params)
    rows = []
    for i, entry in enumerate(ds.manifest.entries):
        noisy, clean = ds.mixture(i)
        enhanced = two_stage_enhance(noisy, model)
        uid = f"{i:04d}_{Path(entry.clean_path).stem}"
        rows.append(score(clean, enhanced, noisy, uid))
        if export_dir is not None:
            d = Path(export_dir)
            for tag, w in (("noisy", noisy), ("enh", enhanced), ("clean", clean)):
                save_wav(d / f"{uid}.{tag}.wav", w)
    return EvalReport(rows, config or {})
