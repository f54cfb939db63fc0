"""Synthetic speech-like material for smoke tests and the overfit experiment."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Manifest, MixtureSpec, Waveform, save_wav


def synth_utterance(seconds: float = 1.0, sample_rate_hz: int = 16000, seed: int = 0) -> Waveform:
    """Gliding harmonic tone with formant-like weighting, split into syllables by short pauses."""
    rng = np.random.default_rng(seed)
    n = int(round(seconds * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz
    f0 = 120.0 + 30.0 * np.sin(2 * np.pi * 1.5 * t + rng.uniform(0, np.pi))
    ph = 2 * np.pi * np.cumsum(f0) / sample_rate_hz
    x = np.zeros(n)
    for h in range(1, 25):
        fh = h * f0.mean()
        if fh > 0.45 * sample_rate_hz:
            break
        amp = np.exp(-((fh - 500.0) / 400.0) ** 2) + 0.5 * np.exp(-((fh - 1500.0) / 500.0) ** 2) + 0.05
        x += amp * np.sin(h * ph)
    env = np.zeros(n)
    syl = int(0.2 * sample_rate_hz)
    gap = int(0.05 * sample_rate_hz)
    pos = gap
    while pos + syl < n:
        env[pos:pos + syl] = np.hanning(syl)
        pos += syl + gap
    x *= env
    return Waveform(0.5 * x / np.max(np.abs(x)), sample_rate_hz)


def white_noise(seconds: float = 1.0, sample_rate_hz: int = 16000, seed: int = 1) -> Waveform:
    rng = np.random.default_rng(seed)
    return Waveform(0.1 * rng.standard_normal(int(round(seconds * sample_rate_hz))), sample_rate_hz)


def write_toy_corpus(root, n_utterances: int = 1, seconds: float = 1.0, snr_db: float = 0.0,
                     seed: int = 0, split: str = "train") -> Path:
    """Write clean/noise WAVs and a manifest under ``root``; returns the manifest path."""
    root = Path(root)
    entries = []
    noise = white_noise(seconds, seed=seed + 1000)
    save_wav(root / "noise" / "white.wav", noise)
    for i in range(n_utterances):
        rel = Path("clean") / f"utt{i:03d}.wav"
        save_wav(root / rel, synth_utterance(seconds, seed=seed + i))
        entries.append(MixtureSpec(rel, Path("noise") / "white.wav", float(snr_db), seed + i))
    path = root / f"{split}.jsonl"
    Manifest(entries, split, root).save(path)
    return path


@dataclass
class OverfitResult:
    noisy_ssnr_db: float
    stage_one_ssnr_db: float  # same networks with the mask fixed to 1
    enhanced_ssnr_db: float
    dcd_losses: list[float]
    seconds: float

    def running_mean(self, step: int) -> float:
        """Mean of the joint-phase L_DCD over steps 1..step."""
        return float(np.mean(self.dcd_losses[:step]))

    @property
    def improvement_db(self) -> float:
        return self.enhanced_ssnr_db - self.noisy_ssnr_db


def overfit_experiment(root, stage1_steps: int = 300, joint_steps: int = 500, width: float = 1 / 8,
                       crop_frames: int = 64, seed: int = 0) -> OverfitResult:
    """Train both phases on one 1 s utterance in 0 dB white noise and score that same pair."""
    import time

    from .audio import MixtureDataset
    from .metrics import ssnr
    from .models import ModelConfig, TwoStageModel, two_stage_enhance
    from .training import ScheduleConfig, TrainConfig, train_joint, train_stage1

    t0 = time.perf_counter()
    ds = MixtureDataset(Manifest.load(write_toy_corpus(root, seed=seed)))
    noisy, clean = ds.mixture(0)
    spe = 10
    if stage1_steps % spe or joint_steps % spe:
        raise ValueError(f"step counts must be multiples of {spe}")
    sched = ScheduleConfig(stage1_epochs=stage1_steps // spe, identity_epochs=stage1_steps // spe,
                           total_epochs=joint_steps // spe, decay_start_epoch=joint_steps // spe // 2,
                           batch_size=1, crop_frames=crop_frames, steps_per_epoch=spe, seed=seed,
                           checkpoint_every_epoch=False)
    cfg = TrainConfig(sched)
    model = TwoStageModel(ModelConfig().scaled(width, attn_reduction=4), seed=seed)
    train_stage1(ds, model, cfg)
    masked_off = TwoStageModel(model.config, model.stft_params, seed=seed, mask_mode="identity")
    masked_off.load_state_dict(model.state_dict())
    stage_one = ssnr(clean, two_stage_enhance(noisy, masked_off))
    joint = train_joint(ds, model, cfg)
    return OverfitResult(ssnr(clean, noisy), stage_one, ssnr(clean, two_stage_enhance(noisy, joint.model)),
                         [r["dcd"] for r in joint.records], time.perf_counter() - t0)
