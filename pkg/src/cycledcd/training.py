"""Two-phase training: adversarial magnitude-mapper pretraining, then joint training
with the complex denoiser.

Batches are a pure function of (seed, phase, step), so a run resumed from a
checkpoint replays the uninterrupted trajectory exactly.
"""
from __future__ import annotations

import contextlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import losses as L
from .audio import Manifest, MixtureDataset, build_batch
from .models import TwoStageModel, compose_with_phase, model_from_header, model_header
from .nn import functional as fn
from .nn.layers import Module
from .nn.param_store import load_store, save_store
from .nn.tensor import NonFiniteError, Parameter, Tensor

CHECKPOINT_VERSION = 1
PHASES = ("stage1", "joint")


class DivergenceError(RuntimeError):
    """A loss became NaN or infinite."""


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0:
            raise ValueError("invalid Adam hyperparameters")


@dataclass(frozen=True)
class ScheduleConfig:
    stage1_epochs: int = 20
    identity_epochs: int = 20
    total_epochs: int = 80  # joint-phase epochs
    decay_start_epoch: int = 50
    lr_d1: float = 2e-4
    lr_g1: float = 5e-4
    lr_dcd: float = 1e-3
    lr_cyclegan_joint: float = 1e-4
    lr_d_joint: float = 1e-4
    batch_size: int = 8
    crop_frames: int = 128
    seed: int = 0
    steps_per_epoch: int | None = None  # None: one pass over the manifest
    grad_clip: float | None = 5.0
    checkpoint_every_epoch: bool = True

    def __post_init__(self):
        rates = (self.lr_d1, self.lr_g1, self.lr_dcd, self.lr_cyclegan_joint, self.lr_d_joint)
        if any(not r > 0 for r in rates):
            raise ValueError("learning rates must be > 0")
        if self.identity_epochs > self.stage1_epochs + self.total_epochs:
            raise ValueError("identity_epochs exceeds the total number of epochs")
        if not self.decay_start_epoch < self.total_epochs:
            raise ValueError("decay_start_epoch must be < total_epochs")
        if self.batch_size <= 0 or self.crop_frames <= 0 or self.stage1_epochs < 0:
            raise ValueError("batch_size and crop_frames must be positive")
        if self.steps_per_epoch is not None and self.steps_per_epoch <= 0:
            raise ValueError("steps_per_epoch must be positive")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValueError("grad_clip must be > 0 or null")


@dataclass(frozen=True)
class TrainConfig:
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    weights: L.LossWeights = field(default_factory=L.LossWeights)


def lr_at(epoch: int, base_lr: float, s: ScheduleConfig) -> float:
    """Constant until ``decay_start_epoch``, then linear towards 0 at ``total_epochs``."""
    if epoch < s.decay_start_epoch:
        return base_lr
    return base_lr * max(0.0, s.total_epochs - epoch) / (s.total_epochs - s.decay_start_epoch)


# -- optimizer -------------------------------------------------------------------------------

class Adam:
    """Adam over named parameter groups; each group has its own learning rate."""

    def __init__(self, groups: dict[str, list[tuple[str, Parameter]]], lrs: dict[str, float],
                 cfg: OptimizerConfig = OptimizerConfig()):
        if set(groups) != set(lrs):
            raise ValueError("every parameter group needs a learning rate")
        self.cfg = cfg
        self.groups = groups
        self.lrs = dict(lrs)
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for g in groups.values() for n, p in g}
        self.v = {n: np.zeros_like(p.data) for g in groups.values() for n, p in g}

    def params(self) -> list[Parameter]:
        return [p for g in self.groups.values() for _, p in g]

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad = None

    def step(self, clip: float | None = None) -> float:
        """Apply one update; returns the pre-clip global gradient norm."""
        norm = global_grad_norm(self.params())
        scale = clip / norm if clip is not None and norm > clip else 1.0
        self.t += 1
        b1, b2, eps = self.cfg.beta1, self.cfg.beta2, self.cfg.eps
        c1, c2 = 1.0 - b1 ** self.t, 1.0 - b2 ** self.t
        for gname, group in self.groups.items():
            lr = self.lrs[gname]
            for name, p in group:
                if p.grad is None:
                    continue
                g = p.grad * scale
                m = self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
                v = self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
                p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
        return norm

    def state_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {f"{prefix}.m.{n}": a for n, a in self.m.items()}
        out.update({f"{prefix}.v.{n}": a for n, a in self.v.items()})
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str, t: int) -> None:
        for n in self.m:
            self.m[n] = arrays[f"{prefix}.m.{n}"].copy()
            self.v[n] = arrays[f"{prefix}.v.{n}"].copy()
        self.t = int(t)


def global_grad_norm(params: Iterable[Parameter]) -> float:
    return math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None))


def named(module: Module, prefix: str) -> list[tuple[str, Parameter]]:
    return [(f"{prefix}.{n}", p) for n, p in module.named_parameters()]


@contextlib.contextmanager
def frozen(*modules: Module):
    """Evaluation mode without parameter gradients; gradients still flow to the inputs."""
    params = [p for m in modules for p in m.parameters()]
    modes = [m.training for m in modules]
    for m in modules:
        m.eval()
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p in params:
            p.requires_grad = True
        for m, mode in zip(modules, modes):
            m.train(mode)


def assert_no_grads(modules: Iterable[Module], what: str) -> None:
    for m in modules:
        for n, p in m.named_parameters():
            if p.grad is not None and np.any(p.grad != 0):
                raise AssertionError(f"gradient leaked into {what} parameter {n}")


# -- batches --------------------------------------------------------------------------------

def _phase_id(phase: str) -> int:
    return PHASES.index(phase)


def steps_per_epoch(n_items: int, s: ScheduleConfig) -> int:
    return s.steps_per_epoch or max(1, -(-n_items // s.batch_size))


def batch_for_step(ds: MixtureDataset, s: ScheduleConfig, phase: str, step: int):
    spe = steps_per_epoch(len(ds), s)
    epoch, k = divmod(step, spe)
    perm_rng = np.random.default_rng(np.random.SeedSequence([s.seed, _phase_id(phase), epoch]))
    order = np.resize(perm_rng.permutation(len(ds)), spe * s.batch_size)
    idx = order[k * s.batch_size:(k + 1) * s.batch_size]
    crop_seed = int(np.random.SeedSequence([s.seed, _phase_id(phase), step, 1]).generate_state(1)[0])
    return build_batch(ds, idx, s.crop_frames, crop_seed)


def _net_mag(z: np.ndarray) -> Tensor:
    return Tensor(np.abs(z)[:, None])


def _split_scores(d, real: Tensor, fake: Tensor) -> tuple[Tensor, Tensor]:
    """Score real and fake in one pass so spectral-norm vectors advance once per step."""
    b = real.shape[0]
    s = d.score(fn.concat([real, fake], axis=0))
    return s[:b], s[b:]


def _check(rec: dict) -> dict:
    for k, v in rec.items():
        if isinstance(v, float) and not math.isfinite(v):
            raise DivergenceError(f"non-finite {k} at {rec.get('phase')} step {rec.get('step')}")
    return rec


# -- step functions ----------------------------------------------------------------------------

@dataclass
class GeneratorPass:
    fake_y: Tensor
    fake_x: Tensor
    rec_x: Tensor
    rec_y: Tensor
    idt_x: Tensor | None  # F(x)
    idt_y: Tensor | None  # G(y)


def generator_pass(model: TwoStageModel, x: Tensor, y: Tensor, include_identity: bool) -> GeneratorPass:
    """All generator evaluations of one step; identity inputs ride along in the same batch."""
    b = x.shape[0]
    gx = model.g_xy(fn.concat([x, y], axis=0) if include_identity else x)
    fy = model.f_yx(fn.concat([y, x], axis=0) if include_identity else y)
    fake_y, fake_x = gx[:b], fy[:b]
    return GeneratorPass(fake_y, fake_x, model.f_yx(fake_y), model.g_xy(fake_x),
                         fy[b:] if include_identity else None, gx[b:] if include_identity else None)


def cyclegan_objective(model: TwoStageModel, gp: GeneratorPass, x: Tensor, y: Tensor, w: L.LossWeights):
    """Generator-side objective; discriminators must already be frozen."""
    real_dy, fake_dy = _split_scores(model.d_y, y, gp.fake_y)
    real_dx, fake_dx = _split_scores(model.d_x, x, gp.fake_x)
    adv_g = L.rals_g_loss(real_dy, fake_dy)
    adv_f = L.rals_g_loss(real_dx, fake_dx)
    cyc = L.cycle_loss(x, gp.rec_x, y, gp.rec_y)
    include_identity = gp.idt_x is not None
    idt = L.identity_loss(x, gp.idt_x, y, gp.idt_y) if include_identity else Tensor(0.0)
    total = L.cyclegan_total(adv_g, adv_f, cyc, idt, w, include_identity)
    parts = {"adv_g": adv_g.item(), "adv_f": adv_f.item(), "cycle": cyc.item(), "identity": idt.item(),
             "identity_weight": w.lambda_id if include_identity else 0.0, "cyclegan": total.item()}
    return total, parts


def discriminator_step(model: TwoStageModel, opt: Adam, pairs, clip) -> tuple[float, float]:
    """``pairs`` lists (discriminator, real, detached fake); losses are summed into one update."""
    opt.zero_grad()
    loss = None
    for d, real, fake in pairs:
        r, f = _split_scores(d, real, fake)
        term = L.rals_d_loss(r, f)
        loss = term if loss is None else loss + term
    loss.backward()
    return loss.item(), opt.step(clip)


# -- state and checkpoints -----------------------------------------------------------------------

@dataclass
class TrainState:
    phase: str = "stage1"
    step: int = 0  # completed steps in this phase


@dataclass
class Checkpoint:
    model: TwoStageModel
    state: TrainState
    header: dict
    arrays: dict


def save_checkpoint(path, model: TwoStageModel, optimizers: dict[str, Adam], state: TrainState,
                    extra: dict | None = None) -> Path:
    arrays = {f"model.{k}": v for k, v in model.state_dict().items()}
    for name, opt in optimizers.items():
        arrays.update(opt.state_arrays(f"opt.{name}"))
    header = {"checkpoint_version": CHECKPOINT_VERSION, **model_header(model),
              "phase": state.phase, "step": state.step,
              "optimizer_steps": {n: o.t for n, o in optimizers.items()},
              "optimizer_lrs": {n: o.lrs for n, o in optimizers.items()}}
    if extra:
        header["extra"] = extra
    save_store(path, arrays, header)
    return Path(path)


def load_checkpoint(path) -> Checkpoint:
    arrays, header = load_store(path)
    if header.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {header.get('checkpoint_version')!r}, "
                              f"expected {CHECKPOINT_VERSION}")
    model = model_from_header(header)
    model.load_state_dict({k[len("model."):]: v for k, v in arrays.items() if k.startswith("model.")})
    return Checkpoint(model, TrainState(header["phase"], header["step"]), header, arrays)


def restore_optimizers(ckpt: Checkpoint, optimizers: dict[str, Adam]) -> None:
    steps = ckpt.header.get("optimizer_steps", {})
    for name, opt in optimizers.items():
        if name not in steps:
            raise CheckpointError(f"checkpoint has no state for optimizer {name!r}")
        opt.load_arrays(ckpt.arrays, f"opt.{name}", steps[name])


# -- training loops -------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: TwoStageModel
    state: TrainState
    records: list[dict]
    checkpoint: Path | None


class _Log:
    def __init__(self, path: Path | None, append: bool):
        self.records: list[dict] = []
        self.fh = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self.fh = open(path, "a" if append else "w")

    def write(self, rec: dict) -> None:
        self.records.append(rec)
        if self.fh:
            self.fh.write(json.dumps(rec) + "\n")
            self.fh.flush()

    def close(self):
        if self.fh:
            self.fh.close()


def _dataset(data) -> MixtureDataset:
    if isinstance(data, MixtureDataset):
        return data
    if isinstance(data, Manifest):
        return MixtureDataset(data)
    return MixtureDataset(Manifest.load(data))


def _stage1_optimizers(model, cfg: TrainConfig) -> dict[str, Adam]:
    s = cfg.schedule
    return {"d": Adam({"d": named(model.d_x, "d_x") + named(model.d_y, "d_y")}, {"d": s.lr_d1}, cfg.optimizer),
            "g": Adam({"g": named(model.g_xy, "g_xy") + named(model.f_yx, "f_yx")}, {"g": s.lr_g1}, cfg.optimizer)}


def _joint_optimizers(model, cfg: TrainConfig) -> dict[str, Adam]:
    s = cfg.schedule
    gen = named(model.g_xy, "g_xy") + named(model.f_yx, "f_yx")
    return {"d": Adam({"d": named(model.d_y, "d_y")}, {"d": s.lr_d_joint}, cfg.optimizer),
            "g": Adam({"cyclegan": gen, "dcd": named(model.dcd, "dcd")},
                      {"cyclegan": s.lr_cyclegan_joint, "dcd": s.lr_dcd}, cfg.optimizer)}


def _run(phase: str, data, model: TwoStageModel, cfg: TrainConfig, out_dir, resume: Checkpoint | None,
         max_steps: int | None) -> TrainResult:
    s = cfg.schedule
    ds = _dataset(data)
    spe = steps_per_epoch(len(ds), s)
    n_epochs = s.stage1_epochs if phase == "stage1" else s.total_epochs
    total = n_epochs * spe if max_steps is None else min(max_steps, n_epochs * spe)
    opts = (_stage1_optimizers if phase == "stage1" else _joint_optimizers)(model, cfg)
    state = TrainState(phase, 0)
    if resume is not None and resume.state.phase == phase:
        restore_optimizers(resume, opts)
        state = TrainState(phase, resume.state.step)
    out_dir = Path(out_dir) if out_dir is not None else None
    log = _Log(out_dir / f"{phase}_log.jsonl" if out_dir else None, append=state.step > 0)
    ckpt_path = None
    step_fn = _stage1_step if phase == "stage1" else _joint_step
    model.train()
    try:
        while state.step < total:
            epoch = state.step // spe
            try:
                rec = step_fn(model, opts, cfg, batch_for_step(ds, s, phase, state.step), epoch)
            except NonFiniteError as exc:
                raise DivergenceError(f"{exc} at {phase} step {state.step}") from exc
            rec = _check({"phase": phase, "step": state.step, "epoch": epoch, **rec})
            log.write(rec)
            state.step += 1
            if out_dir and s.checkpoint_every_epoch and state.step % spe == 0:
                ckpt_path = save_checkpoint(out_dir / f"{phase}_epoch{state.step // spe:03d}.ckpt",
                                            model, opts, state)
        if out_dir:
            ckpt_path = save_checkpoint(out_dir / f"{phase}_last.ckpt", model, opts, state)
    finally:
        log.close()
    return TrainResult(model, state, log.records, ckpt_path)


def _stage1_step(model: TwoStageModel, opts, cfg: TrainConfig, batch, epoch: int) -> dict:
    s, w = cfg.schedule, cfg.weights
    x, y = _net_mag(batch.noisy), _net_mag(batch.clean)
    gens, discs = (model.g_xy, model.f_yx), (model.d_x, model.d_y)
    opts["g"].zero_grad()
    gp = generator_pass(model, x, y, epoch < s.identity_epochs)

    with frozen(*gens):
        loss_d, d_norm = discriminator_step(
            model, opts["d"], [(model.d_x, x, gp.fake_x.detach()), (model.d_y, y, gp.fake_y.detach())], s.grad_clip)
        assert_no_grads(gens, "generator")
    with frozen(*discs):
        for m in discs:
            m.zero_grad()
        total, parts = cyclegan_objective(model, gp, x, y, w)
        total.backward()
        assert_no_grads(discs, "discriminator")
        g_norm = opts["g"].step(s.grad_clip)
    return {"loss_d": loss_d, **parts, "total": total.item(), "lr_d": opts["d"].lrs["d"],
            "lr_g": opts["g"].lrs["g"], "grad_norm_g": g_norm, "grad_norm_d": d_norm}


def _joint_step(model: TwoStageModel, opts, cfg: TrainConfig, batch, epoch: int) -> dict:
    s, w = cfg.schedule, cfg.weights
    for name, base in (("cyclegan", s.lr_cyclegan_joint), ("dcd", s.lr_dcd)):
        opts["g"].lrs[name] = lr_at(epoch, base, s)
    opts["d"].lrs["d"] = lr_at(epoch, s.lr_d_joint, s)
    x, y = _net_mag(batch.noisy), _net_mag(batch.clean)
    gens = (model.g_xy, model.f_yx, model.dcd)
    opts["g"].zero_grad()
    gp = generator_pass(model, x, y, s.stage1_epochs + epoch < s.identity_epochs)
    _, enhanced = model.stage_two(compose_with_phase(gp.fake_y, batch.noisy))

    with frozen(*gens, model.d_x):
        loss_d, d_norm = discriminator_step(model, opts["d"], [(model.d_y, y, gp.fake_y.detach())], s.grad_clip)
        assert_no_grads(gens, "generator")
    with frozen(model.d_x, model.d_y):
        model.d_x.zero_grad()
        model.d_y.zero_grad()
        cg, parts = cyclegan_objective(model, gp, x, y, w)
        clean = L._complex(batch.clean[:, None])
        ri, mag = L.dcd_ri_loss(enhanced, clean), L.dcd_mag_loss(enhanced, clean)
        total = L.full_loss(ri, mag, cg, w.gamma)
        total.backward()
        assert_no_grads((model.d_x, model.d_y), "discriminator")
        g_norm = opts["g"].step(s.grad_clip)
    return {"loss_d": loss_d, **parts, "dcd_ri": ri.item(), "dcd_mag": mag.item(),
            "dcd": ri.item() + mag.item(), "total": total.item(),
            "lr_d": opts["d"].lrs["d"], "lr_cyclegan": opts["g"].lrs["cyclegan"], "lr_dcd": opts["g"].lrs["dcd"],
            "grad_norm_g": g_norm, "grad_norm_d": d_norm}


def train_stage1(data, model: TwoStageModel, cfg: TrainConfig = TrainConfig(), out_dir=None,
                 resume: Checkpoint | None = None, max_steps: int | None = None) -> TrainResult:
    """Pretrain G, F, D_X and D_Y; identity term only while epoch < identity_epochs."""
    if resume is not None:
        model = resume.model
    return _run("stage1", data, model, cfg, out_dir, resume, max_steps)


def train_joint(data, stage1: Checkpoint | TwoStageModel, cfg: TrainConfig = TrainConfig(), out_dir=None,
                resume: Checkpoint | None = None, max_steps: int | None = None) -> TrainResult:
    """Joint phase with fresh optimizers; D_X stays fixed while the whole stage-one objective remains active."""
    if resume is not None:
        if resume.state.phase != "joint":
            raise CheckpointError("resume checkpoint is not from the joint phase")
        model = resume.model
    else:
        model = stage1.model if isinstance(stage1, Checkpoint) else stage1
    return _run("joint", data, model, cfg, out_dir, resume, max_steps)


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


__all__ = ["Adam", "Checkpoint", "CheckpointError", "DivergenceError", "OptimizerConfig", "ScheduleConfig",
           "TrainConfig", "TrainResult", "TrainState", "batch_for_step", "frozen", "load_checkpoint", "lr_at",
           "save_checkpoint", "train_joint", "train_stage1"]
