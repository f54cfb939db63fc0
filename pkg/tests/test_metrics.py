import json

import numpy as np
import pytest

from cycledcd.audio import Manifest, MixtureDataset, load_wav
from cycledcd.metrics import EvalReport, SilentReferenceError, UtteranceScore, evaluate, si_snr, snr, ssnr
from cycledcd.models import ModelConfig, TwoStageModel, two_stage_enhance
from cycledcd.spectral import istft, stft, ComplexSpectrogram
from cycledcd.nn import no_grad
from cycledcd.toy import write_toy_corpus

TINY = ModelConfig().scaled(1 / 8, attn_reduction=4)


def white(n, seed):
    return np.random.default_rng(seed).standard_normal(n)


def test_ssnr_perfect_and_zero():
    c = white(16000, 0)
    assert ssnr(c, c) == 35.0
    assert ssnr(c, np.zeros_like(c)) == 0.0


def test_ssnr_closed_form_construction():
    # non-overlapping frames let the error be scaled exactly per frame
    n, L = 512 * 30, 512
    c, e = white(n, 1), white(n, 2)
    for k in range(0, n, L):
        s = slice(k, k + L)
        e[s] *= np.sqrt(np.sum(c[s] ** 2) / (10.0 * np.sum(e[s] ** 2)))
    assert ssnr(c, c - e, frame_len=L, hop=L) == pytest.approx(10.0, abs=1e-9)
    # with the default half-overlap framing the ratio is only approximately preserved
    assert ssnr(c, c - e) == pytest.approx(10.0, abs=0.5)


def test_ssnr_clamps_and_skips_silence():
    c = white(4096, 3)
    c[:2048] = 0.0  # silent frames must not count
    assert ssnr(c, c) == 35.0
    assert ssnr(c, c + 100 * white(4096, 4)) == -10.0
    with pytest.raises(SilentReferenceError):
        ssnr(np.zeros(1000), white(1000, 5))
    with pytest.raises(ValueError):
        ssnr(np.ones(10), np.ones(11))


def test_ssnr_monotone_under_added_noise():
    c, base = white(8000, 6), white(8000, 7)
    scores = [ssnr(c, c + a * base) for a in (0.01, 0.05, 0.2, 0.6, 1.5, 4.0)]
    assert all(b <= a for a, b in zip(scores, scores[1:]))
    # extra noise orthogonal to the existing error inside every frame can only add error energy
    L = 512
    for seed in range(20):
        noise, extra = white(8000, 100 + seed), white(8000, 200 + seed)
        for k in range(0, 8000, L):
            s = slice(k, k + L)
            extra[s] -= np.dot(extra[s], noise[s]) / np.dot(noise[s], noise[s]) * noise[s]
        assert ssnr(c, c + noise + extra, frame_len=L, hop=L) <= ssnr(c, c + noise, frame_len=L, hop=L)


def test_ssnr_short_signal_single_padded_frame():
    c = white(100, 9)
    assert ssnr(c, c) == 35.0
    assert ssnr(c, 0.5 * c) == pytest.approx(10 * np.log10(4.0))


def test_si_snr_properties():
    c = white(4000, 10)
    assert si_snr(c, 2 * c) == 100.0
    n = white(4000, 11)
    t = c + 0.1 * n
    assert si_snr(c, 3.7 * t) == pytest.approx(si_snr(c, t), abs=1e-9)
    cz, tz = c - c.mean(), t - t.mean()
    target = np.dot(tz, cz) / np.dot(cz, cz) * cz
    ref = 10 * np.log10(np.dot(target, target) / np.dot(tz - target, tz - target))
    assert si_snr(c, t) == pytest.approx(ref, abs=1e-9)
    # orthogonal test signal
    o = n - np.dot(n - n.mean(), cz) / np.dot(cz, cz) * cz
    assert si_snr(c, o) < -60
    with pytest.raises(SilentReferenceError):
        si_snr(np.full(10, 3.0), white(10, 12))


def test_snr_closed_form():
    c = white(1000, 13)
    assert snr(c, 0.9 * c) == pytest.approx(20.0)
    assert snr(c, c) == 100.0


def test_report_aggregate_is_row_mean(tmp_path):
    rows = [UtteranceScore(f"u{i}", float(i), 2.0 * i, -float(i), 0.5) for i in range(4)]
    rep = EvalReport(rows, {"k": 1})
    agg = rep.aggregate()
    assert agg == {"ssnr_db": 1.5, "snr_db": 3.0, "si_snr_db": -1.5, "noisy_ssnr_db": 0.5}
    rep.save(tmp_path / "r.json")
    saved = json.loads((tmp_path / "r.json").read_text())
    assert saved["count"] == 4 and saved["aggregate"] == agg and saved["config"] == {"k": 1}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return Manifest.load(write_toy_corpus(tmp_path_factory.mktemp("c"), n_utterances=2, seconds=0.4))


def test_evaluate_exports_roundtrip(corpus, tmp_path):
    model = TwoStageModel(TINY, seed=0)
    rep = evaluate(corpus, model, tmp_path / "wavs")
    assert rep.count == 2
    ds = MixtureDataset(corpus)
    for i, row in enumerate(rep.rows):
        noisy, clean = ds.mixture(i)
        enh = two_stage_enhance(noisy, model)
        for tag, w in (("noisy", noisy), ("enh", enh), ("clean", clean)):
            back = load_wav(tmp_path / "wavs" / f"{row.id}.{tag}.wav")
            assert back.sample_rate_hz == 16000 and len(back) == len(w)
            np.testing.assert_allclose(back.samples, w.samples, atol=1e-6)
        assert row.ssnr_db == ssnr(clean, enh) and row.noisy_ssnr_db == ssnr(clean, noisy)
    agg = rep.aggregate()
    assert agg["ssnr_db"] == pytest.approx(np.mean([r.ssnr_db for r in rep.rows]))


def test_identity_model_scores_stage_one_output(corpus):
    model = TwoStageModel(TINY, seed=0, mask_mode="identity")
    rep = evaluate(corpus, model)
    noisy, clean = MixtureDataset(corpus).mixture(0)
    spec = stft(noisy)
    with no_grad():
        _, coarse = model.stage_one(spec.data[None])
    ref = istft(ComplexSpectrogram(coarse.numpy()[0, 0], spec.params, len(noisy)), length=len(noisy))
    assert rep.rows[0].ssnr_db == pytest.approx(ssnr(clean, ref), abs=1e-9)
