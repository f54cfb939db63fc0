"""CycleGAN magnitude-mapping generators/discriminators, the complex denoising net,
and the two-stage enhancement pipeline that chains them.

All networks take (B, C, T, F) tensors with F = 161 at the model boundary and
halve F with ceil rounding at every stride-(1, 2) layer.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .attention import TFAttentionGate, TFSelfAttention
from .audio import Waveform
from .complex_nn import (ComplexConv2d, ComplexInstanceNorm2d, ComplexRatioMask, ComplexTensor, CPReLU,
                         CTFSelfAttention, apply_mask, bound_mask, concat)
from .nn import functional as fn
from .nn.layers import Conv2d, ConvTranspose2d, InstanceNorm2d, Module, PReLU
from .nn.tensor import Tensor, no_grad
from .spectral import ComplexSpectrogram, StftParams, istft, stft


@dataclass(frozen=True)
class GeneratorConfig:
    down_channels: tuple = (32, 64, 128)
    dra_blocks: int = 6
    dra_dilations: tuple = (1, 2, 4, 8, 16, 32)
    kernel: tuple = (3, 5)
    stride: tuple = (1, 2)
    attn_reduction: int = 8

    def __post_init__(self):
        if len(self.down_channels) != 3:
            raise ValueError("generator needs exactly three downsampling layers")
        if len(self.dra_dilations) != self.dra_blocks:
            raise ValueError("one dilation per DRA block required")

    @property
    def up_channels(self) -> tuple:
        """Outputs of the three upsampling layers: the down widths mirrored, ending in 1."""
        return tuple(reversed(self.down_channels[:-1])) + (1,)


@dataclass(frozen=True)
class DiscriminatorConfig:
    channels: tuple = (32, 32, 64, 64, 128, 1)
    kernel: tuple = (3, 5)
    stride: tuple = (1, 2)

    def __post_init__(self):
        if len(self.channels) != 6:
            raise ValueError("discriminator has exactly six convolutions")


@dataclass(frozen=True)
class DcdConfig:
    encoder_channels: tuple = (32, 32, 64, 64, 128, 128, 256, 256)
    kernel: tuple = (3, 5)
    stride: tuple = (1, 2)
    ctfsa_blocks: int = 6
    attn_reduction: int = 8

    def __post_init__(self):
        if len(self.encoder_channels) != 8:
            raise ValueError("DCD-Net has exactly eight encoder layers")

    @property
    def decoder_channels(self) -> tuple:
        return tuple(reversed(self.encoder_channels[:-1])) + (1,)


@dataclass(frozen=True)
class ModelConfig:
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    dcd: DcdConfig = field(default_factory=DcdConfig)
    n_bins: int = 161

    def scaled(self, factor: float, attn_reduction: int | None = None) -> "ModelConfig":
        """Same topology with every channel count multiplied by ``factor`` (score/output widths stay 1)."""
        s = lambda cs: tuple(max(1, int(round(c * factor))) for c in cs)  # noqa: E731
        disc = self.discriminator.channels
        g = replace(self.generator, down_channels=s(self.generator.down_channels),
                    attn_reduction=attn_reduction or self.generator.attn_reduction)
        d = replace(self.discriminator, channels=s(disc[:-1]) + (disc[-1],))
        c = replace(self.dcd, encoder_channels=s(self.dcd.encoder_channels))
        return replace(self, generator=g, discriminator=d, dcd=c)

    def to_dict(self) -> dict:
        return asdict(self)


def freq_widths(n: int, layers: int) -> list[int]:
    out = [n]
    for _ in range(layers):
        out.append(-(-out[-1] // 2))
    return out


# -- generator ------------------------------------------------------------------------

class DownBlock(Module):
    """conv -> IN -> PReLU -> GLU; the conv emits twice the block width for the gate."""

    def __init__(self, cin, cout, cfg: GeneratorConfig, rng):
        self.conv = Conv2d(cin, 2 * cout, cfg.kernel, cfg.stride, rng=rng)
        self.norm = InstanceNorm2d(2 * cout)
        self.act = PReLU(2 * cout)

    def forward(self, x):
        return fn.glu(self.act(self.norm(self.conv(x))))


class UpBlock(Module):
    def __init__(self, cin, cout, cfg: GeneratorConfig, rng, final: bool = False):
        self.final = final
        self.deconv = ConvTranspose2d(cin, cout if final else 2 * cout, cfg.kernel, cfg.stride, rng=rng)
        if not final:
            self.norm = InstanceNorm2d(2 * cout)
            self.act = PReLU(2 * cout)

    def forward(self, x, output_size):
        y = self.deconv(x, output_size)
        if self.final:
            return fn.relu(y)
        return fn.glu(self.act(self.norm(y)))


class DRABlock(Module):
    """Time-dilated conv residual followed by T-F self-attention."""

    def __init__(self, channels, dilation, cfg: GeneratorConfig, rng):
        self.conv = Conv2d(channels, channels, cfg.kernel, (1, 1), dilation=(dilation, 1), rng=rng)
        self.norm = InstanceNorm2d(channels)
        self.act = PReLU(channels)
        self.attn = TFSelfAttention(channels, cfg.attn_reduction, rng)

    def forward(self, x):
        return self.attn(x + self.act(self.norm(self.conv(x))))


class Generator(Module):
    def __init__(self, cfg: GeneratorConfig = GeneratorConfig(), n_bins: int = 161, rng=None):
        rng = rng or np.random.default_rng(0)
        self.cfg, self.n_bins = cfg, n_bins
        chans = cfg.down_channels
        ins = (1,) + chans[:-1]
        self.down = [DownBlock(ci, co, cfg, rng) for ci, co in zip(ins, chans)]
        self.dra = [DRABlock(chans[-1], d, cfg, rng) for d in cfg.dra_dilations]
        rev = tuple(reversed(chans))
        self.gates = [TFAttentionGate(c, cfg.attn_reduction, rng) for c in rev]
        self.up = [UpBlock(ci, co, cfg, rng, final=(k == 2)) for k, (ci, co) in enumerate(zip(rev, cfg.up_channels))]

    def forward(self, mag: Tensor) -> Tensor:
        if mag.ndim != 4 or mag.shape[1] != 1 or mag.shape[3] != self.n_bins:
            raise ValueError(f"generator expects (B, 1, T, {self.n_bins}), got {mag.shape}")
        t = mag.shape[2]
        x, skips = mag, []
        for blk in self.down:
            x = blk(x)
            skips.append(x)
        for blk in self.dra:
            x = blk(x)
        widths = [mag.shape[3]] + [s.shape[3] for s in skips[:-1]]
        for j, (gate, up) in enumerate(zip(self.gates, self.up)):
            x = gate(skips[-1 - j], x)
            x = up(x, (t, widths[-1 - j]))
        return x


# -- discriminator ------------------------------------------------------------------------------

class Discriminator(Module):
    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig(), n_bins: int = 161, rng=None):
        rng = rng or np.random.default_rng(0)
        self.cfg, self.n_bins = cfg, n_bins
        ins = (1,) + cfg.channels[:-1]
        self.convs = [Conv2d(ci, co, cfg.kernel, cfg.stride, rng=rng, spectral_norm=True)
                      for ci, co in zip(ins[:5], cfg.channels[:5])]
        self.acts = [PReLU(c) for c in cfg.channels[:5]]
        self.out = Conv2d(ins[5], cfg.channels[5], (1, 1), (1, 1), rng=rng, spectral_norm=True)

    def forward(self, mag: Tensor) -> Tensor:
        """Score map (B, 1, T, 6) for F = 161."""
        if mag.ndim != 4 or mag.shape[1] != 1 or mag.shape[3] != self.n_bins:
            raise ValueError(f"discriminator expects (B, 1, T, {self.n_bins}), got {mag.shape}")
        x = mag
        for conv, act in zip(self.convs, self.acts):
            x = act(conv(x))
        return self.out(x)

    def score(self, mag: Tensor) -> Tensor:
        """One scalar per sample: the score map averaged over its (T, F') cells."""
        return self.forward(mag).mean(axis=(1, 2, 3))


# -- deep complex denoising net ------------------------------------------------------------------

class ComplexEncoderLayer(Module):
    def __init__(self, cin, cout, cfg: DcdConfig, rng):
        self.conv = ComplexConv2d(cin, cout, cfg.kernel, cfg.stride, rng)
        self.norm = ComplexInstanceNorm2d(cout)
        self.act = CPReLU(cout)

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class ComplexDecoderLayer(Module):
    def __init__(self, cin, cout, cfg: DcdConfig, rng, final: bool = False):
        self.final = final
        self.conv = ComplexConv2d(cin, cout, cfg.kernel, cfg.stride, rng, transposed=True)
        if not final:
            self.norm = ComplexInstanceNorm2d(cout)
            self.act = CPReLU(cout)

    def forward(self, x, output_size):
        y = self.conv(x, output_size)
        return y if self.final else self.act(self.norm(y))


class DCDNet(Module):
    """Complex encoder/decoder with skip concatenation and CT-F SA blocks at the bottleneck."""

    def __init__(self, cfg: DcdConfig = DcdConfig(), n_bins: int = 161, rng=None):
        rng = rng or np.random.default_rng(0)
        self.cfg, self.n_bins = cfg, n_bins
        enc = cfg.encoder_channels
        self.encoder = [ComplexEncoderLayer(ci, co, cfg, rng) for ci, co in zip((1,) + enc[:-1], enc)]
        self.attn = [CTFSelfAttention(enc[-1], cfg.attn_reduction, rng) for _ in range(cfg.ctfsa_blocks)]
        rev = tuple(reversed(enc))
        self.decoder = [ComplexDecoderLayer(2 * ci, co, cfg, rng, final=(k == 7))
                        for k, (ci, co) in enumerate(zip(rev, cfg.decoder_channels))]

    def raw_mask(self, x: ComplexTensor) -> ComplexTensor:
        if len(x.shape) != 4 or x.shape[1] != 1 or x.shape[3] != self.n_bins:
            raise ValueError(f"DCD-Net expects (B, 1, T, {self.n_bins}), got {x.shape}")
        h, skips = x, []
        for layer in self.encoder:
            h = layer(h)
            skips.append(h)
        for blk in self.attn:
            h = blk(h)
        widths = [x.shape[3]] + [s.shape[3] for s in skips[:-1]]
        t = x.shape[2]
        for j, layer in enumerate(self.decoder):
            h = layer(concat([h, skips[-1 - j]], axis=1), (t, widths[-1 - j]))
        return h

    def forward(self, coarse: ComplexTensor) -> tuple[ComplexTensor, ComplexTensor]:
        """Returns (bounded mask, enhanced = coarse * mask), both (B, 1, T, F)."""
        mask = bound_mask(self.raw_mask(coarse))
        return mask, apply_mask(coarse, mask)


# -- the two-stage model -----------------------------------------------------------------------------

def to_net(x: np.ndarray) -> Tensor:
    """(B, T, F) real array -> (B, 1, T, F) tensor."""
    return Tensor(np.asarray(x, dtype=np.float64)[:, None])


def compose_with_phase(mag: Tensor, noisy: np.ndarray) -> ComplexTensor:
    """Couple an estimated magnitude (B, 1, T, F) with the phase of ``noisy`` (B, T, F)."""
    ph = np.angle(noisy)[:, None]
    return ComplexTensor(mag * Tensor(np.cos(ph)), mag * Tensor(np.sin(ph)))


class TwoStageModel(Module):
    SUBNETS = ("g_xy", "f_yx", "d_x", "d_y", "dcd")

    def __init__(self, config: ModelConfig = ModelConfig(), stft_params: StftParams = StftParams(),
                 seed: int = 0, mask_mode: str = "dcd"):
        if mask_mode not in ("dcd", "identity"):
            raise ValueError("mask_mode must be 'dcd' or 'identity'")
        if config.n_bins != stft_params.n_bins:
            raise ValueError("model bins and STFT bins disagree")
        self.config, self.stft_params, self.seed, self.mask_mode = config, stft_params, seed, mask_mode
        rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)]
        n = config.n_bins
        self.g_xy = Generator(config.generator, n, rngs[0])
        self.f_yx = Generator(config.generator, n, rngs[1])
        self.d_x = Discriminator(config.discriminator, n, rngs[2])
        self.d_y = Discriminator(config.discriminator, n, rngs[3])
        self.dcd = DCDNet(config.dcd, n, rngs[4])

    def stage_one(self, noisy: np.ndarray) -> tuple[Tensor, ComplexTensor]:
        """Noisy complex spectra (B, T, F) -> (enhanced magnitude, coarse complex spectrum)."""
        mag = self.g_xy(to_net(np.abs(noisy)))
        return mag, compose_with_phase(mag, noisy)

    def stage_two(self, coarse: ComplexTensor) -> tuple[ComplexTensor, ComplexTensor]:
        if self.mask_mode == "identity":
            ones = ComplexTensor(Tensor(np.ones(coarse.shape)), Tensor(np.zeros(coarse.shape)))
            return ones, coarse
        return self.dcd(coarse)

    def enhance_spectrum(self, noisy: np.ndarray) -> np.ndarray:
        with no_grad():
            _, coarse = self.stage_one(noisy)
            _, enhanced = self.stage_two(coarse)
        return enhanced.numpy()[:, 0]


def generator_forward(g: Generator, mag: Tensor) -> Tensor:
    return g(mag)


def discriminator_forward(d: Discriminator, mag: Tensor) -> Tensor:
    return d(mag)


def dcd_forward(net: DCDNet, coarse: ComplexTensor) -> tuple[ComplexRatioMask, np.ndarray]:
    """Array-level wrapper: mask and enhanced spectrum with the channel axis dropped, (B, T, F)."""
    mask, enhanced = net(coarse)
    m = mask.numpy()[:, 0]
    return ComplexRatioMask(m.real, m.imag), enhanced.numpy()[:, 0]


def model_header(model: TwoStageModel) -> dict:
    """Checkpoint header echoing every dimension needed to rebuild ``model``."""
    return {"model": model.config.to_dict(), "stft": asdict(model.stft_params),
            "seed": model.seed, "mask_mode": model.mask_mode}


def model_from_header(header: dict) -> TwoStageModel:
    m = header["model"]
    cfg = ModelConfig(GeneratorConfig(**_tuples(m["generator"])), DiscriminatorConfig(**_tuples(m["discriminator"])),
                      DcdConfig(**_tuples(m["dcd"])), m["n_bins"])
    return TwoStageModel(cfg, StftParams(**header["stft"]), header["seed"], header.get("mask_mode", "dcd"))


def _tuples(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def two_stage_enhance(noisy: Waveform, model: TwoStageModel, stft_params: StftParams | None = None,
                      return_spectra: bool = False):
    """STFT -> G on magnitudes -> noisy phase -> DCD mask -> iSTFT; output length = input length."""
    p = stft_params or model.stft_params
    was_training = model.training
    model.eval()
    try:
        spec = stft(noisy, p)
        enhanced = model.enhance_spectrum(spec.data[None])[0]
    finally:
        model.train(was_training)
    out_spec = ComplexSpectrogram(enhanced, p, len(noisy))
    out = istft(out_spec, p, length=len(noisy), sample_rate_hz=noisy.sample_rate_hz)
    return (out, spec, out_spec) if return_spectra else out
