import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cycledcd.audio import Waveform, load_wav, save_wav
from cycledcd.cli import build_parser, main
from cycledcd.toy import write_toy_corpus
from cycledcd.training import load_checkpoint

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
FAST = ["--set", "schedule.crop_frames=8", "--set", "schedule.steps_per_epoch=2"]


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_toy_corpus(root / "data", n_utterances=1, seconds=0.3)
    return root


@pytest.fixture(scope="module")
def stage1(work):
    rc = main(["--workdir", str(work), "train-stage1", "--config", str(CONFIGS / "tiny.yaml"), *FAST,
               "--out", "run", "--max-steps", "2"])
    assert rc == 0
    return work / "run" / "stage1_last.ckpt"


def subcommand_parsers():
    ap = build_parser()
    sub = next(a for a in ap._actions if a.dest == "command")
    return ap, sub.choices


def test_help_documents_every_flag():
    ap, subs = subcommand_parsers()
    assert set(subs) == {"prepare-data", "train-stage1", "train-joint", "enhance", "evaluate", "gradcheck",
                         "show-config"}
    for p in [ap, *subs.values()]:
        for action in p._actions:
            if action.option_strings and action.dest != "help":
                assert action.help, (p.prog, action.option_strings)
    out = subprocess.run([sys.executable, "-m", "cycledcd.cli", "enhance", "--help"], capture_output=True,
                         text=True, check=True).stdout
    for flag in ("--checkpoint", "--in", "--out", "--dump-spectrograms"):
        assert flag in out


def test_train_stage1_writes_checkpoint_and_log(work, stage1, capsys):
    ck = load_checkpoint(stage1)
    assert ck.state.step == 2 and ck.state.phase == "stage1"
    lines = (work / "run" / "stage1_log.jsonl").read_text().splitlines()
    assert len(lines) == 2 and json.loads(lines[1])["step"] == 1
    assert (work / "run" / "stage1_config.yaml").is_file()


def test_train_joint_and_resume(work, stage1, capsys):
    cfg = ["--config", str(CONFIGS / "tiny.yaml"), *FAST, "--out", "run"]
    assert main(["--workdir", str(work), "train-joint", *cfg, "--from-stage1", str(stage1), "--max-steps", "1"]) == 0
    assert main(["--workdir", str(work), "train-joint", *cfg, "--resume", "run/joint_last.ckpt",
                 "--max-steps", "2"]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["phase"] == "joint" and summary["steps"] == 2
    assert len((work / "run" / "joint_log.jsonl").read_text().splitlines()) == 2
    assert main(["--workdir", str(work), "train-joint", *cfg]) == 1


def test_enhance_preserves_length_and_rate(work, stage1):
    rng = np.random.default_rng(0)
    save_wav(work / "in.wav", Waveform(0.1 * rng.standard_normal(5000), 16000))
    rc = main(["--workdir", str(work), "enhance", "--checkpoint", str(stage1), "--in", "in.wav",
               "--out", "out.wav", "--dump-spectrograms", "spec"])
    assert rc == 0
    out = load_wav(work / "out.wav")
    assert len(out) == 5000 and out.sample_rate_hz == 16000
    assert {p.name for p in (work / "spec").iterdir()} == {"noisy.csv", "noisy.png", "enhanced.csv",
                                                           "enhanced.png"}
    save_wav(work / "in8k.wav", Waveform(np.zeros(800), 8000))
    assert main(["--workdir", str(work), "enhance", "--checkpoint", str(stage1), "--in", "in8k.wav",
                 "--out", "x.wav"]) == 1


def test_evaluate_and_prepare_data(work, stage1, capsys):
    assert main(["--workdir", str(work), "evaluate", "--checkpoint", str(stage1), "--manifest",
                 "data/train.jsonl", "--out", "eval/report.json"]) == 0
    report = json.loads((work / "eval" / "report.json").read_text())
    assert report["count"] == 1
    assert len(list((work / "eval" / "wavs").glob("*.wav"))) == 3
    assert main(["--workdir", str(work), "prepare-data", "--manifest", "data/train.jsonl", "--out", "prep"]) == 0
    shapes = json.loads((work / "prep" / "shapes.json").read_text())
    assert shapes["entries"][0]["samples"] == 4800


def test_gradcheck_layers_exit_zero(capsys):
    assert main(["gradcheck", "--scope", "layers"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 10 and all(x.startswith("PASS") for x in lines)


def test_gradcheck_reports_failure(capsys):
    # a tolerance no finite-difference estimate can meet must fail loudly
    assert main(["gradcheck", "--scope", "losses", "--tol", "1e-30"]) == 2
    assert "FAIL" in capsys.readouterr().out


def test_bad_inputs_exit_one(work, tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("schedule: {no_such_key: 1}\n")
    assert main(["show-config", "--config", str(bad)]) == 1
    assert main(["show-config", "--set", "schedule.batch_size=0"]) == 1
    assert main(["--workdir", str(work), "enhance", "--checkpoint", "missing", "--in", "in.wav",
                 "--out", "o.wav"]) == 1
    assert main(["prepare-data", "--manifest", str(tmp_path / "none.jsonl"), "--out", str(tmp_path)]) == 1


def test_show_config_roundtrip(tmp_path, capsys):
    assert main(["show-config", "--config", str(CONFIGS / "tiny.yaml"), "--set", "seed=7"]) == 0
    text = capsys.readouterr().out
    (tmp_path / "c.yaml").write_text(text)
    assert main(["show-config", "--config", str(tmp_path / "c.yaml")]) == 0
    assert capsys.readouterr().out == text
