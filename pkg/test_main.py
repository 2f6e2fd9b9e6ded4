import json
import logging

import pytest

from conftest import REPO_ROOT, concat, harmonic, record, silence
from cotgen import CotMode
from features import Level
from main import run
from manifest import Emotion, read_manifest, write_manifest


@pytest.fixture(autouse=True)
def restore_logging():
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_missing_required_flag_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        run(["schedule", "--explicit", "a", "--implicit", "b", "--steps", "3", "--out", str(tmp_path / "s")])
    assert info.value.code == 2


def test_errors_exit_one_with_one_line(tmp_path, capsys):
    bad = tmp_path / "m.jsonl"
    bad.write_text("{oops\n", encoding="utf-8")

    code = run(["--quiet", "report", "--manifest", str(bad), "--out", str(tmp_path / "d.json")])

    assert code == 1
    assert capsys.readouterr().err.strip().splitlines()[-1].startswith("error: ManifestError: line 1:")


def test_fuse_report_and_schedule(tmp_path):
    manifest = tmp_path / "raw.jsonl"
    write_manifest(
        [
            record("a", None, speech_emotion="excited", text_emotion="happy"),
            record("b", None, speech_emotion="angry", text_emotion="sad"),
            record("c", None, speech_emotion="fearful", text_emotion="fear", language="zh"),
        ],
        manifest,
    )

    assert run(["--quiet", "fuse-labels", "--manifest", str(manifest), "--map", str(REPO_ROOT / "harmonize.toml"),
                "--out", str(tmp_path / "fused.jsonl"), "--rejects", str(tmp_path / "rej.jsonl")]) == 0
    assert [r.id for r in read_manifest(tmp_path / "fused.jsonl")] == ["a", "c"]
    assert read_manifest(tmp_path / "rej.jsonl")[0].extra_fields == {"reject_reason": "disagreement"}

    assert run(["--quiet", "report", "--manifest", str(tmp_path / "fused.jsonl"), "--out",
                str(tmp_path / "dist.json"), "--chart-dir", str(tmp_path / "charts")]) == 0
    dist = json.loads((tmp_path / "dist.json").read_text(encoding="utf-8"))
    assert dist["emotions"]["happiness"] == {"count": 1, "fraction": 0.5}
    assert (tmp_path / "charts" / "emotion_distribution.png").exists()

    levels = (Level.MEDIUM, Level.HIGH, Level.LOW)
    write_manifest([record("x", Emotion.ANGER, levels), record("y", Emotion.FEAR, levels)], tmp_path / "disc.jsonl")
    for mode in CotMode:
        assert run(["--quiet", "gen-cot", "--manifest", str(tmp_path / "disc.jsonl"), "--mode", mode.value,
                    "--out", str(tmp_path / f"{mode.value}.jsonl")]) == 0
    assert run(["--quiet", "schedule", "--explicit", str(tmp_path / "explicit.jsonl"), "--implicit",
                str(tmp_path / "implicit.jsonl"), "--steps", "20", "--seed", "3", "--out",
                str(tmp_path / "plan" / "schedule.jsonl")]) == 0
    assert len((tmp_path / "plan" / "schedule.jsonl").read_text(encoding="utf-8").splitlines()) == 20


def test_loss_check_prints_summary(tmp_path, capsys):
    batch = {"embeddings": [[1.0, 0.1], [0.9, 0.2], [-1.0, 0.3], [-0.8, -0.1]],
             "labels": ["anger", "anger", "fear", "fear"]}
    (tmp_path / "batch.json").write_text(json.dumps(batch), encoding="utf-8")

    assert run(["--quiet", "loss-check", "--batch", str(tmp_path / "batch.json"), "--tau", "0.5"]) == 0

    summary = json.loads(capsys.readouterr().out)
    assert summary["temperature"] == 0.5
    assert summary["grad_check_category"] < 1e-4
    assert summary["total_loss"] == pytest.approx(100.0 * summary["category_loss"])


def test_remote_extractor_needs_url(tmp_path, capsys):
    write_manifest([record("a", Emotion.ANGER)], tmp_path / "refs.jsonl")
    (tmp_path / "hyps.jsonl").write_text('{"id": "a", "text": "anger"}\n', encoding="utf-8")

    code = run(["--quiet", "evaluate", "--refs", str(tmp_path / "refs.jsonl"), "--hyps", str(tmp_path / "hyps.jsonl"),
                "--out", str(tmp_path / "eval.json"), "--extractor", "remote"])

    assert code == 1
    assert "--extractor remote" in capsys.readouterr().err


def test_extract_features_skips_bad_audio(tmp_path, wav_factory):
    wav_factory("wavs/ok.wav", concat(silence(0.2), harmonic(150.0, 1.5), silence(0.2)))
    wav_factory("wavs/quiet.wav", silence(1.0))
    write_manifest(
        [
            record("ok", audio_path="wavs/ok.wav", duration_s=1.9),
            record("quiet", audio_path="wavs/quiet.wav", duration_s=1.0),
            record("long", audio_path="wavs/ok.wav", duration_s=25.0),
        ],
        tmp_path / "m.jsonl",
    )

    code = run(["--quiet", "extract-features", "--manifest", str(tmp_path / "m.jsonl"), "--out",
                str(tmp_path / "features.jsonl"), "--max-duration", "20"])

    assert code == 0
    (done,) = read_manifest(tmp_path / "features.jsonl")
    assert done.id == "ok"
    assert done.attributes.pitch_mean_hz == pytest.approx(150.0, rel=0.02)


def test_demo_is_reproducible(tmp_path):
    first, second = tmp_path / "one", tmp_path / "two"

    assert run(["--quiet", "demo", "--seed", "7", "--out", str(first)]) == 0
    assert run(["--quiet", "demo", "--seed", "7", "--out", str(second)]) == 0

    assert tree(first) == tree(second)
    report = json.loads((first / "report.json").read_text(encoding="utf-8"))
    stages = report["stages"]
    assert stages["filter"] == {"input": 20, "kept": 19, "dropped": 1}
    assert stages["fuse"]["fused"] == 16
    assert stages["fuse"]["reasons"] == {"disagreement": 2, "dropped-label": 1}
    assert stages["extract_features"]["skipped"] == 0
    assert stages["discretize"]["discretized"] == 16
    assert stages["schedule"]["steps"] == 100
    assert stages["loss_check"]["grad_check_category"] < 1e-4
    assert stages["evaluate"]["n"] == 16


def test_quiet_run_still_prints_config(tmp_path, capsys):
    write_manifest([record("a", Emotion.ANGER)], tmp_path / "m.jsonl")

    assert run(["--quiet", "report", "--manifest", str(tmp_path / "m.jsonl"), "--out", str(tmp_path / "d.json")]) == 0

    err = capsys.readouterr().err
    assert "report config" in err
    assert '"threshold_db":-40.0' in err


def test_build_stats_has_no_sigma_flag(tmp_path):
    with pytest.raises(SystemExit) as info:
        run(["build-stats", "--manifest", "m.jsonl", "--out", str(tmp_path / "s.json"), "--sample-sigma"])
    assert info.value.code == 2


def test_malformed_loss_inputs_exit_one(tmp_path, capsys):
    batch = {"embeddings": [[1.0, 0.0], [0.9, 0.1]], "labels": ["anger", "anger"]}
    (tmp_path / "batch.json").write_text(json.dumps(batch), encoding="utf-8")
    (tmp_path / "frames.json").write_text('{"frame": {"teacher": [[1.0]]}}', encoding="utf-8")

    code = run(["--quiet", "loss-check", "--batch", str(tmp_path / "batch.json"), "--frames", str(tmp_path / "frames.json")])

    assert code == 1
    assert capsys.readouterr().err.strip().splitlines()[-1].startswith("error: LossInputError:")
