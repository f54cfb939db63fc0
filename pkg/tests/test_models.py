import numpy as np
import pytest

from cycledcd.audio import Waveform
from cycledcd.complex_nn import ComplexTensor
from cycledcd.models import (DCDNet, DcdConfig, Discriminator, Generator, GeneratorConfig, ModelConfig,
                             TwoStageModel, compose_with_phase, dcd_forward, freq_widths, model_from_header,
                             model_header, two_stage_enhance)
from cycledcd.nn import Tensor, no_grad, set_check_finite
from cycledcd.spectral import istft, stft, ComplexSpectrogram

TINY = ModelConfig().scaled(1 / 8, attn_reduction=4)


@pytest.fixture(scope="module")
def tiny():
    return TwoStageModel(TINY, seed=0)


def rand_mag(rng, b, t, f=161):
    return Tensor(np.abs(rng.standard_normal((b, 1, t, f))))


def test_freq_width_arithmetic():
    assert freq_widths(161, 5) == [161, 81, 41, 21, 11, 6]
    assert freq_widths(161, 8) == [161, 81, 41, 21, 11, 6, 3, 2, 1]


def test_config_invariants():
    with pytest.raises(ValueError):
        GeneratorConfig(down_channels=(8, 16))
    with pytest.raises(ValueError):
        GeneratorConfig(dra_dilations=(1, 2))
    with pytest.raises(ValueError):
        DcdConfig(encoder_channels=(4,) * 7)
    assert GeneratorConfig().up_channels == (64, 32, 1)
    assert DcdConfig().decoder_channels == (256, 128, 128, 64, 64, 32, 32, 1)
    assert TINY.discriminator.channels == (4, 4, 8, 8, 16, 1)


def test_generator_shape_and_nonnegative(tiny):
    rng = np.random.default_rng(0)
    with no_grad():
        for t in (1, 3, 64):
            out = tiny.g_xy(rand_mag(rng, 2, t))
            assert out.shape == (2, 1, t, 161)
            assert (out.data >= 0).all()


def test_generator_rejects_wrong_geometry(tiny):
    with pytest.raises(ValueError):
        tiny.g_xy(Tensor(np.zeros((1, 2, 4, 161))))
    with pytest.raises(ValueError):
        tiny.g_xy(Tensor(np.zeros((1, 1, 4, 160))))


def test_discriminator_geometry(tiny):
    rng = np.random.default_rng(1)
    d = tiny.d_y
    d.eval()
    x = rand_mag(rng, 2, 64)
    h = x
    widths = []
    for conv, act in zip(d.convs, d.acts):
        h = act(conv(h))
        widths.append(h.shape[3])
    assert widths == [81, 41, 21, 11, 6]
    assert d(x).shape == (2, 1, 64, 6)
    assert d.score(x).shape == (2,)
    assert len(d.convs) + 1 == 6 and all(c.spectral_norm for c in d.convs + [d.out])
    with pytest.raises(ValueError):
        d(Tensor(np.zeros((1, 1, 4, 100))))


def test_spectral_norm_scale_invariance():
    d = Discriminator(TINY.discriminator, rng=np.random.default_rng(2))
    d.train()
    x = rand_mag(np.random.default_rng(3), 1, 8)
    for _ in range(60):  # converge the power iteration
        d(x)
    d.eval()
    ref = d(x).data
    for conv in d.convs + [d.out]:
        conv.weight.data = conv.weight.data * 10.0
    np.testing.assert_allclose(d(x).data, ref, rtol=1e-6, atol=1e-9)


def test_dcd_geometry_and_bounded_mask():
    net = DCDNet(TINY.dcd, rng=np.random.default_rng(4))
    rng = np.random.default_rng(5)
    z = rng.standard_normal((1, 1, 32, 161)) + 1j * rng.standard_normal((1, 1, 32, 161))
    x = ComplexTensor.from_numpy(z)
    h, widths = x, []
    for layer in net.encoder:
        h = layer(h)
        widths.append(h.shape[3])
    assert widths == [81, 41, 21, 11, 6, 3, 2, 1]
    mask, enhanced = dcd_forward(net, x)
    assert mask.real.shape == (1, 32, 161) and enhanced.shape == (1, 32, 161)
    assert mask.magnitude.max() < 1.0
    np.testing.assert_allclose(enhanced, z[:, 0] * mask.numpy(), atol=1e-12)


@pytest.mark.parametrize("t", [1, 2, 5, 17])
def test_shape_roundtrip_random_lengths(tiny, t):
    rng = np.random.default_rng(t)
    noisy = rng.standard_normal((1, t, 161)) + 1j * rng.standard_normal((1, t, 161))
    assert tiny.enhance_spectrum(noisy).shape == (1, t, 161)


def test_unique_parameter_names(tiny):
    names = [n for n, _ in tiny.named_parameters()]
    assert len(names) == len(set(names))
    assert {n.split(".")[0] for n in names} == set(TwoStageModel.SUBNETS)


def test_zero_waveform_gives_zero_output(tiny):
    out = two_stage_enhance(Waveform(np.zeros(8000), 16000), tiny)
    assert len(out) == 8000 and not out.samples.any()


def test_output_length_contract(tiny):
    rng = np.random.default_rng(6)
    w = Waveform(rng.standard_normal(20800) * 0.1, 16000)  # 1.3 s
    out = two_stage_enhance(w, tiny)
    assert len(out) == len(w) and out.sample_rate_hz == 16000


def test_identity_mask_equals_stage_one_output(tiny):
    rng = np.random.default_rng(7)
    w = Waveform(rng.standard_normal(6400) * 0.1, 16000)
    ident = TwoStageModel(TINY, seed=0, mask_mode="identity")
    ident.load_state_dict(tiny.state_dict())
    out = two_stage_enhance(w, ident)
    spec = stft(w)
    with no_grad():
        _, coarse = ident.stage_one(spec.data[None])
    ref = istft(ComplexSpectrogram(coarse.numpy()[0, 0], spec.params, len(w)), length=len(w))
    np.testing.assert_allclose(out.samples, ref.samples, atol=1e-12)


def test_polar_composition_with_noisy_phase():
    rng = np.random.default_rng(8)
    noisy = rng.standard_normal((1, 3, 161)) + 1j * rng.standard_normal((1, 3, 161))
    mag = np.abs(rng.standard_normal((1, 1, 3, 161)))
    c = compose_with_phase(Tensor(mag), noisy).numpy()[:, 0]
    np.testing.assert_allclose(np.abs(c), mag[:, 0], atol=1e-12)
    np.testing.assert_allclose(np.angle(c), np.angle(noisy), atol=1e-12)


def test_forward_deterministic_and_header_roundtrip(tiny):
    rng = np.random.default_rng(9)
    noisy = rng.standard_normal((1, 6, 161)) + 1j * rng.standard_normal((1, 6, 161))
    a, b = tiny.enhance_spectrum(noisy), tiny.enhance_spectrum(noisy)
    assert np.array_equal(a, b)
    clone = model_from_header(model_header(tiny))
    clone.load_state_dict(tiny.state_dict())
    assert np.array_equal(clone.enhance_spectrum(noisy), a)


def test_no_nonfinite_values_for_bounded_inputs(tiny):
    rng = np.random.default_rng(10)
    noisy = 1e3 * (rng.standard_normal((1, 8, 161)) + 1j * rng.standard_normal((1, 8, 161)))
    prev = set_check_finite(True)
    try:
        out = tiny.enhance_spectrum(noisy)
        tiny.f_yx.eval()
        tiny.d_x.eval()
        with no_grad():
            tiny.d_x.score(tiny.f_yx(Tensor(np.abs(noisy)[:, None])))
    finally:
        set_check_finite(prev)
    assert np.isfinite(out).all()


def test_mask_mode_and_bins_validation():
    with pytest.raises(ValueError):
        TwoStageModel(TINY, mask_mode="polar")
    with pytest.raises(ValueError):
        TwoStageModel(ModelConfig(n_bins=129))


def test_full_width_parameter_layout():
    g = Generator(GeneratorConfig(), rng=np.random.default_rng(0))
    assert [blk.conv.weight.shape for blk in g.down] == [(64, 1, 3, 5), (128, 32, 3, 5), (256, 64, 3, 5)]
    assert [blk.conv.dilation for blk in g.dra] == [(d, 1) for d in (1, 2, 4, 8, 16, 32)]
    assert g.gates[0].ta.wq.weight.shape == (16, 128, 1, 1)
