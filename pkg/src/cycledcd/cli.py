"""Command-line entry point.

Exit codes: 0 on success, 1 when inputs or configuration fail validation,
2 when a run fails after validation.  Relative paths resolve against --workdir.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .audio import Manifest, ManifestError, MixtureDataset, MixtureSpec, WavError, load_wav, save_wav
from .config import ConfigError, RunConfig, dump_config, load_config
from .spectral import export_csv, export_png

log = logging.getLogger("cycledcd")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class ValidationError(Exception):
    """Bad user input detected before any work starts."""


def _path(args, p) -> Path | None:
    if p is None:
        return None
    p = Path(p)
    return p if p.is_absolute() else Path(args.workdir) / p


def _config(args) -> RunConfig:
    return load_config(_path(args, args.config), args.set)


def _train_data(args, cfg: RunConfig) -> MixtureDataset:
    manifest = Manifest.load(_path(args, cfg.paths.train_manifest))
    return MixtureDataset(manifest, cfg.stft)


def _load_ckpt(args, p):
    from .training import load_checkpoint

    path = _path(args, p)
    if not (path / "index.txt").is_file():
        raise ValidationError(f"no checkpoint at {path}")
    return load_checkpoint(path)


# -- commands -----------------------------------------------------------------------------

def cmd_prepare_data(args) -> int:
    from .spectral import stft

    manifest = Manifest.load(_path(args, args.manifest))
    if args.seed:
        manifest = Manifest([MixtureSpec(e.clean_path, e.noise_path, e.snr_db, e.seed + args.seed)
                             for e in manifest.entries], manifest.split, manifest.root)
    out = _path(args, args.out)
    ds = MixtureDataset(manifest)
    shapes = []
    for i, e in enumerate(manifest.entries):
        noisy, clean = ds.mixture(i)
        stem = f"{i:04d}_{Path(e.clean_path).stem}"
        save_wav(out / "mixtures" / f"{stem}.noisy.wav", noisy)
        save_wav(out / "mixtures" / f"{stem}.clean.wav", clean)
        shapes.append({"id": stem, "samples": len(clean), "frames": stft(noisy).n_frames, "snr_db": e.snr_db})
    (out / "shapes.json").write_text(json.dumps({"split": manifest.split, "entries": shapes}, indent=2) + "\n")
    print(f"prepared {len(shapes)} mixtures in {out}")
    return EXIT_OK


def _train(args, phase: str) -> int:
    from .models import TwoStageModel
    from .training import train_joint, train_stage1

    cfg = _config(args)
    data = _train_data(args, cfg)
    out = _path(args, args.out or cfg.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{phase}_config.yaml").write_text(dump_config(cfg))
    resume = _load_ckpt(args, args.resume) if args.resume else None
    tc = cfg.train_config()
    if phase == "stage1":
        model = TwoStageModel(cfg.model_config(), cfg.stft, seed=cfg.seed)
        result = train_stage1(data, model, tc, out, resume=resume, max_steps=args.max_steps)
    else:
        stage1 = None if resume else _load_ckpt(args, args.from_stage1)
        result = train_joint(data, stage1, tc, out, resume=resume, max_steps=args.max_steps)
    last = result.records[-1] if result.records else {}
    print(json.dumps({"phase": phase, "steps": result.state.step, "checkpoint": str(result.checkpoint),
                      "last": last}))
    return EXIT_OK


def cmd_train_stage1(args) -> int:
    return _train(args, "stage1")


def cmd_train_joint(args) -> int:
    if not args.from_stage1 and not args.resume:
        raise ValidationError("train-joint needs --from-stage1 (or --resume)")
    return _train(args, "joint")


def cmd_enhance(args) -> int:
    from .models import two_stage_enhance

    ckpt = _load_ckpt(args, args.checkpoint)
    noisy = load_wav(_path(args, args.input))
    if noisy.sample_rate_hz != 16000:
        raise ValidationError(f"expected a 16 kHz input, got {noisy.sample_rate_hz} Hz")
    enhanced, s_in, s_out = two_stage_enhance(noisy, ckpt.model, return_spectra=True)
    save_wav(_path(args, args.output), enhanced)
    if args.dump_spectrograms:
        d = _path(args, args.dump_spectrograms)
        for tag, s in (("noisy", s_in), ("enhanced", s_out)):
            export_csv(s, d / f"{tag}.csv")
            export_png(s, d / f"{tag}.png")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .metrics import evaluate

    ckpt = _load_ckpt(args, args.checkpoint)
    manifest = Manifest.load(_path(args, args.manifest))
    out = _path(args, args.out)
    export = _path(args, args.export_dir) if args.export_dir else out.parent / "wavs"
    report = evaluate(manifest, ckpt.model, export, config={"checkpoint": str(args.checkpoint)})
    report.save(out)
    print(json.dumps({"count": report.count, **report.aggregate()}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import SCOPES, run_scope

    scopes = SCOPES if args.scope == "all" else (args.scope,)
    ok = True
    for scope in scopes:
        for name, rep in run_scope(scope, tol=args.tol, eps=args.eps, seed=args.seed):
            ok &= rep.passed
            status = "PASS" if rep.passed else "FAIL"
            print(f"{status} {scope}/{name}: max_rel_error={rep.max_rel_error:.3e} "
                  f"checked={rep.checked} skipped={rep.skipped}")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_show_config(args) -> int:
    sys.stdout.write(dump_config(_config(args)))
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cycledcd", description="Two-stage speech enhancement toolkit.")
    ap.add_argument("--workdir", default=".", help="root for every relative path (default: current directory)")
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. schedule.batch_size=4 (repeatable)")

    p = sub.add_parser("prepare-data", help="materialize manifest mixtures and record their shapes")
    p.add_argument("--manifest", required=True, help="JSONL mixture manifest")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="offset added to every entry seed (default 0)")
    p.set_defaults(func=cmd_prepare_data)

    for name, func, doc in (("train-stage1", cmd_train_stage1, "pretrain the adversarial magnitude mapper"),
                            ("train-joint", cmd_train_joint, "train mapper and complex denoiser jointly")):
        p = sub.add_parser(name, help=doc)
        with_config(p)
        if name == "train-joint":
            p.add_argument("--from-stage1", help="stage-one checkpoint to start from")
        p.add_argument("--resume", help="checkpoint of this phase to continue from")
        p.add_argument("--out", help="run directory (default: paths.out_dir)")
        p.add_argument("--max-steps", type=int, help="stop after this many steps of the phase")
        p.set_defaults(func=func)

    p = sub.add_parser("enhance", help="enhance one 16 kHz mono WAV")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--in", dest="input", required=True, help="noisy input WAV")
    p.add_argument("--out", dest="output", required=True, help="enhanced output WAV (float32)")
    p.add_argument("--dump-spectrograms", metavar="DIR", help="also write noisy/enhanced spectra as CSV and PNG")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("evaluate", help="score a manifest and export WAV triples")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--manifest", required=True, help="JSONL mixture manifest")
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--export-dir", help="WAV export directory (default: <report dir>/wavs)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--scope", choices=("layers", "losses", "model", "all"), default="layers", help="suite to run")
    p.add_argument("--tol", type=float, default=1e-3, help="maximum relative error (default 1e-3)")
    p.add_argument("--eps", type=float, default=1e-4, help="central-difference step (default 1e-4)")
    p.add_argument("--seed", type=int, default=0, help="seed for inputs and probe selection")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("show-config", help="print the fully resolved configuration")
    with_config(p)
    p.set_defaults(func=cmd_show_config)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValidationError, ConfigError, ManifestError, WavError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any post-validation failure maps to the runtime code
        log.debug("run failed", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
