"""
Synthetic end-to-end run.

Builds a small corpus of synthetic voiced utterances with deliberately
awkward cases (an over-long file, disagreeing annotators, a label outside
the seven classes) and pushes it through every stage. The same seed always
produces the same output tree.
"""

import logging
from pathlib import Path
from typing import Any

import numpy as np
from slugify import slugify

from audio import Waveform, write_wav
from config import PipelineConfig
from cotgen import CotLevels, CotMode, render_explicit_target, render_implicit_target
from features import count_phonemes
from losskernel import TensorPair, cluster_batch, save_batch, save_pairs
from manifest import EMOTIONS, Emotion, UtteranceRecord, read_manifest, write_jsonl, write_manifest
from metrics import Hypothesis
import stages

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000
NUM_UTTERANCES = 20
SCHEDULE_STEPS = 100
LONG_INDEX = 19
DISAGREE_INDICES = (4, 9)
OUT_OF_SET_INDEX = 17

TRANSCRIPTS: dict[str, dict[Emotion, str]] = {
    "en": {
        Emotion.ANGER: "I told you never to touch my things again",
        Emotion.HAPPINESS: "we finally won the championship tonight",
        Emotion.NEUTRAL: "the meeting starts at nine in the morning",
        Emotion.SADNESS: "I miss the old house where we grew up",
        Emotion.SURPRISE: "wait you actually came all the way here",
        Emotion.DISGUST: "together you sort of get this whole narrative of feedback",
        Emotion.FEAR: "did you hear that noise behind the door",
    },
    "zh": {
        Emotion.ANGER: "你怎么又把事情搞砸了",
        Emotion.HAPPINESS: "今天真是太开心了",
        Emotion.NEUTRAL: "明天上午九点开会",
        Emotion.SADNESS: "我真的很想念他",
        Emotion.SURPRISE: "你居然真的来了",
        Emotion.DISGUST: "这味道实在让人受不了",
        Emotion.FEAR: "外面好像有人在走动",
    },
}

# f0 (Hz), peak amplitude, phonemes per second
VOICE: dict[Emotion, tuple[float, float, float]] = {
    Emotion.ANGER: (220.0, 0.70, 14.0),
    Emotion.HAPPINESS: (260.0, 0.55, 13.0),
    Emotion.NEUTRAL: (160.0, 0.30, 11.0),
    Emotion.SADNESS: (130.0, 0.12, 7.0),
    Emotion.SURPRISE: (300.0, 0.50, 15.0),
    Emotion.DISGUST: (150.0, 0.25, 9.0),
    Emotion.FEAR: (240.0, 0.20, 12.0),
}

# how the speech annotator spells each class; happiness alternates
SPEECH_SPELLING: dict[Emotion, tuple[str, ...]] = {
    Emotion.ANGER: ("angry",),
    Emotion.HAPPINESS: ("excited", "happy"),
    Emotion.NEUTRAL: ("neutral",),
    Emotion.SADNESS: ("sad",),
    Emotion.SURPRISE: ("surprised",),
    Emotion.DISGUST: ("disgust",),
    Emotion.FEAR: ("fearful",),
}

PARAPHRASE_WORD: dict[Emotion, str] = {
    Emotion.ANGER: "angry",
    Emotion.HAPPINESS: "happy",
    Emotion.NEUTRAL: "calm",
    Emotion.SADNESS: "sad",
    Emotion.SURPRISE: "surprised",
    Emotion.DISGUST: "disgusted",
    Emotion.FEAR: "afraid",
}


def synthesize_voice(
    f0_hz: float, amplitude: float, voiced_s: float, pad_s: float, rng: np.random.Generator
) -> Waveform:
    """Three-harmonic tone with slow vibrato and syllable-rate tremolo, padded with faint noise."""
    n = round(voiced_s * SAMPLE_RATE)
    t = np.arange(n) / SAMPLE_RATE
    f0 = f0_hz * (1.0 + 0.04 * np.sin(2 * np.pi * 0.7 * t))
    phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE
    tone = (np.sin(phase) + 0.5 * np.sin(2 * phase) + 0.25 * np.sin(3 * phase)) / 1.75
    envelope = 0.7 + 0.3 * np.abs(np.sin(np.pi * 3.0 * t))
    ramp = min(n // 2, round(0.01 * SAMPLE_RATE))
    envelope[:ramp] *= np.linspace(0.0, 1.0, ramp)
    envelope[n - ramp :] *= np.linspace(1.0, 0.0, ramp)

    pad = round(pad_s * SAMPLE_RATE)
    voiced = amplitude * envelope * tone
    noise = 1e-4 * rng.standard_normal(pad * 2)
    samples = np.concatenate([noise[:pad], voiced, noise[pad:]])
    return Waveform(np.clip(samples, -1.0, 1.0), SAMPLE_RATE)


def build_corpus(out_dir: Path, seed: int) -> Path:
    """Write NUM_UTTERANCES WAV files and corpus.jsonl under out_dir."""
    rng = np.random.default_rng([seed, 0])
    wav_dir = out_dir / "wavs"
    wav_dir.mkdir(parents=True, exist_ok=True)
    records: list[UtteranceRecord] = []

    for index in range(NUM_UTTERANCES):
        emotion = EMOTIONS[index % len(EMOTIONS)]
        language = "en" if index % 3 == 0 else "zh"
        transcript = TRANSCRIPTS[language][emotion]
        f0, amplitude, rate = VOICE[emotion]

        pad_s = float(rng.uniform(0.2, 0.4))
        if index == LONG_INDEX:
            voiced_s = 20.5 - 2 * pad_s
        else:
            phonemes = count_phonemes(transcript, language)
            voiced_s = float(np.clip(phonemes / (rate * rng.uniform(0.9, 1.1)), 0.8, 6.0))
        waveform = synthesize_voice(
            f0 * float(rng.uniform(0.92, 1.08)), amplitude * float(rng.uniform(0.85, 1.15)), voiced_s, pad_s, rng
        )

        utterance_id = slugify(f"demo {index:02d} {emotion.value}")
        audio_path = Path("wavs") / f"{utterance_id}.wav"
        write_wav(out_dir / audio_path, waveform)

        spellings = SPEECH_SPELLING[emotion]
        speech_label = spellings[index // len(EMOTIONS) % len(spellings)]
        text_label = emotion.value
        if index in DISAGREE_INDICES:
            text_label = EMOTIONS[(index + 3) % len(EMOTIONS)].value
        if index == OUT_OF_SET_INDEX:
            speech_label = "sleepy"

        records.append(
            UtteranceRecord(
                id=utterance_id,
                audio_path=audio_path.as_posix(),
                transcript=transcript,
                language=language,
                speech_emotion=speech_label,
                text_emotion=text_label,
                duration_s=round(waveform.duration_s, 6),
            )
        )

    manifest_path = out_dir / "corpus.jsonl"
    write_manifest(records, manifest_path)
    log.info(f"🎙️ Synthesized {len(records)} utterances in {wav_dir}")
    return manifest_path


def simulate_hypotheses(references: list[UtteranceRecord], seed: int) -> list[Hypothesis]:
    """Stand-in model outputs: mostly right, some wrong CoT, some synonyms, some unusable."""
    rng = np.random.default_rng([seed, 2])
    hypotheses = []
    for record in references:
        truth = record.fused_emotion
        draw = rng.random()
        if draw < 0.6:
            text = render_implicit_target(truth)
        elif draw < 0.75:
            attrs = record.attributes
            wrong = EMOTIONS[(EMOTIONS.index(truth) + 1 + int(rng.integers(6))) % len(EMOTIONS)]
            levels = CotLevels(rate=attrs.rate_level, energy=attrs.energy_level, pitch=attrs.pitch_level)
            text = render_explicit_target(levels, record.transcript, wrong)
        elif draw < 0.9:
            text = f"Listening to the voice, the speaker sounds {PARAPHRASE_WORD[truth]} to me."
        else:
            text = "Sorry, I cannot tell from this recording."
        hypotheses.append(Hypothesis(id=record.id, text=text))
    return hypotheses


def run_demo(out_dir: str | Path, seed: int, config: PipelineConfig, progress: bool = True) -> dict[str, Any]:
    """Build the synthetic corpus, run every stage and write report.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report: dict[str, Any] = {"seed": seed, "stages": {}}
    summary = report["stages"]

    corpus = build_corpus(out, seed)
    summary["filter"] = stages.filter_stage(corpus, out / "filtered.jsonl", config.max_duration_s)
    summary["fuse"] = stages.fuse_stage(
        out / "filtered.jsonl", None, out / "fused.jsonl", out / "rejects.jsonl"
    )
    summary["extract_features"] = stages.extract_stage(
        out / "fused.jsonl", out / "features.jsonl", config.extraction(), config.jobs, progress
    )
    summary["build_stats"] = stages.build_stats_stage(out / "features.jsonl", out / "stats.json")
    summary["discretize"] = stages.discretize_stage(
        out / "features.jsonl", out / "stats.json", out / "discretized.jsonl", config.sample_sigma
    )

    endpoint = stages.endpoint_from(config)
    for mode in CotMode:
        summary[f"gen_cot_{mode.value}"] = stages.gen_cot_stage(
            out / "discretized.jsonl", mode, out / f"cot_{mode.value}.jsonl", endpoint, config.max_in_flight
        )
    summary["schedule"] = stages.schedule_stage(
        out / "cot_explicit.jsonl",
        out / "cot_implicit.jsonl",
        SCHEDULE_STEPS,
        seed,
        out / "schedule.jsonl",
        config.batch_size,
    )

    rng = np.random.default_rng([seed, 1])
    labels = [Emotion.ANGER, Emotion.ANGER, Emotion.HAPPINESS, Emotion.HAPPINESS,
              Emotion.SADNESS, Emotion.SADNESS, Emotion.NEUTRAL, Emotion.NEUTRAL]
    save_batch(cluster_batch(labels, dim=16, spread=0.5, rng=rng), out / "batch.json")
    frames_student = rng.standard_normal((10, 16))
    utt_student = rng.standard_normal((4, 16))
    save_pairs(
        TensorPair(frames_student, frames_student + 0.1 * rng.standard_normal((10, 16))),
        TensorPair(utt_student, utt_student + 0.1 * rng.standard_normal((4, 16))),
        out / "frames.json",
    )
    loss = stages.loss_check_stage(out / "batch.json", out / "frames.json", config.loss_weights(), config.grad_eps)
    stages.write_json(loss, out / "loss.json")
    summary["loss_check"] = loss

    references = read_manifest(out / "discretized.jsonl")
    write_jsonl(simulate_hypotheses(references, seed), out / "hyps.jsonl")
    evaluation = stages.evaluate_stage(out / "discretized.jsonl", out / "hyps.jsonl", out / "evaluation.json", endpoint)
    summary["evaluate"] = {key: evaluation[key] for key in ("wa", "ua", "macro_f1", "n", "unknown")}

    summary["report"] = stages.report_stage(out / "discretized.jsonl", out / "distribution.json", out / "charts")

    stages.write_json(report, out / "report.json")
    log.info(f"✅ Demo finished, report at {out / 'report.json'}")
    return report
