"""
Chain-of-thought training text.

Explicit samples narrate speaking rate, pitch, energy and the transcript
before naming the emotion; implicit samples name only the emotion. Explicit
targets can optionally be paraphrased by a chat model, in which case every
paraphrase is validated and replaced by the template target when it fails.
"""

import asyncio
import itertools
import json
import logging
import re
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import aiofiles
from jinja2 import Environment, StrictUndefined
from pydantic import BaseModel, ConfigDict

from features import Level
from llm_client import ChatEndpoint, TransportError
from manifest import EMOTIONS, Emotion, UtteranceRecord

log = logging.getLogger(__name__)


class CotMode(str, Enum):
    EXPLICIT = "explicit"
    IMPLICIT = "implicit"


class CotSource(str, Enum):
    TEMPLATE = "template"
    LLM = "llm"


class CotError(ValueError):
    pass


class CotSample(BaseModel):
    """
    One training-text record.

    The emotion, transcript and levels are kept alongside the texts so a
    sample can be validated without the manifest it came from.
    """

    model_config = ConfigDict(frozen=True)

    utterance_id: str
    mode: CotMode
    prompt_text: str
    target_text: str
    source: CotSource
    emotion: Emotion
    transcript: str | None = None
    rate_level: Level | None = None
    energy_level: Level | None = None
    pitch_level: Level | None = None


_env = Environment(undefined=StrictUndefined, autoescape=False, keep_trailing_newline=True)

EXPLICIT_PROMPT = _env.from_string(
    "Based on the provided speech features—including a speaking rate of {{ rate }}, "
    "a volume level of {{ energy }}, and a pitch of {{ pitch }}—along with the text content "
    "‘{{ text }}’ and the emotion {{ emotion }}, generate a natural and logical emotional description. "
    "Here is an example: ‘The speaker spoke at a {{ rate }} pace, with a {{ pitch }} tone and "
    "{{ energy }} level: “{{ text }}”. Based on the analysis of speech characteristics, the emotion "
    "was inferred to be {{ emotion }}.’ Ensure including all speech features and logic of the description."
)
EXPLICIT_TARGET = _env.from_string(
    'The speaker spoke at a {{ rate }} pace, with a {{ pitch }} tone and {{ energy }} level: "{{ text }}". '
    "Based on the analysis of speech characteristics, the emotion was inferred to be {{ emotion }}."
)
IMPLICIT_TARGET = _env.from_string("The emotion of this speech is {{ emotion }}.")

# instruction paired with implicit targets at training time
IMPLICIT_PROMPT = "Listen to the speech and state the emotion of the speaker."


@dataclass(frozen=True)
class CotLevels:
    rate: Level
    energy: Level
    pitch: Level


def _emotion(value: Emotion | str) -> Emotion:
    try:
        return Emotion(value)
    except ValueError:
        raise CotError(
            f"emotion {value!r} is not one of {', '.join(e.value for e in EMOTIONS)}"
        ) from None


def _placeholders(levels: CotLevels, transcript: str, emotion: Emotion | str) -> dict[str, str]:
    if not transcript or not transcript.strip():
        raise CotError("empty transcript")
    return {
        "rate": Level(levels.rate).value.lower(),
        "energy": Level(levels.energy).value.lower(),
        "pitch": Level(levels.pitch).value.lower(),
        "text": transcript,
        "emotion": _emotion(emotion).value,
    }


def render_explicit_prompt(levels: CotLevels, transcript: str, emotion: Emotion | str) -> str:
    return EXPLICIT_PROMPT.render(**_placeholders(levels, transcript, emotion))


def render_explicit_target(levels: CotLevels, transcript: str, emotion: Emotion | str) -> str:
    return EXPLICIT_TARGET.render(**_placeholders(levels, transcript, emotion))


def render_implicit_target(emotion: Emotion | str) -> str:
    return IMPLICIT_TARGET.render(emotion=_emotion(emotion).value)


# --- validation ----------------------------------------------------------

LEVEL_WORDS: dict[str, dict[Level, tuple[str, ...]]] = {
    "rate": {
        Level.LOW: ("low", "slow"),
        Level.MEDIUM: ("medium", "moderate", "average", "normal"),
        Level.HIGH: ("high", "fast", "quick", "rapid"),
    },
    "energy": {
        Level.LOW: ("low", "soft", "quiet"),
        Level.MEDIUM: ("medium", "moderate"),
        Level.HIGH: ("high", "loud"),
    },
    "pitch": {
        Level.LOW: ("low", "deep"),
        Level.MEDIUM: ("medium", "moderate"),
        Level.HIGH: ("high",),
    },
}

_EMOTION_WORD = re.compile(r"\b(" + "|".join(e.value for e in EMOTIONS) + r")\b")
_TRAILING_ELLIPSIS = re.compile(r"(\s*(…|\.\.\.|\.))+$")


def _normalize(text: str) -> str:
    return " ".join(text.casefold().split())


@dataclass(frozen=True)
class CotVerdict:
    accepted: bool
    reason: str | None = None
    detail: str | None = None

    @classmethod
    def reject(cls, reason: str, detail: str | None = None) -> "CotVerdict":
        return cls(False, reason, detail)


ACCEPTED = CotVerdict(True)


def _check_emotion(text: str, emotion: Emotion) -> CotVerdict:
    found = {match.group(1) for match in _EMOTION_WORD.finditer(text)}
    if not found:
        return CotVerdict.reject("missing-emotion")
    if found != {emotion.value}:
        reason = "emotion-mismatch" if emotion.value not in found else "ambiguous-emotion"
        return CotVerdict.reject(reason, ", ".join(sorted(found)))
    return ACCEPTED


def validate_cot(sample: CotSample) -> CotVerdict:
    """
    Check that a target says what its record says.

    Explicit targets must quote the transcript, name a word for each of the
    three levels (a separate mention per attribute) and name exactly one
    emotion, the record's. Implicit targets only need the emotion. Matching ignores case and whitespace runs; the
    quoted transcript is removed before words are looked up so its contents
    cannot satisfy or break the checks.
    """
    text = _normalize(sample.target_text)
    if not text:
        return CotVerdict.reject("empty-target")
    if sample.mode is CotMode.IMPLICIT:
        return _check_emotion(text, sample.emotion)

    transcript = _TRAILING_ELLIPSIS.sub("", _normalize(sample.transcript or ""))
    if not transcript or transcript not in text:
        return CotVerdict.reject("missing-transcript")
    text = text.replace(transcript, " ", 1)

    positions = []
    for attribute, level in (
        ("rate", sample.rate_level),
        ("energy", sample.energy_level),
        ("pitch", sample.pitch_level),
    ):
        if level is None:
            return CotVerdict.reject("missing-level", f"{attribute} level unknown")
        found = _word_positions(text, LEVEL_WORDS[attribute][level])
        if not found:
            return CotVerdict.reject("missing-level", f"{attribute}={level.value.lower()}")
        positions.append(found)
    # each attribute needs its own mention
    if not any(len(set(pick)) == len(pick) for pick in itertools.product(*positions)):
        return CotVerdict.reject("missing-level", "one level word stands for several attributes")
    return _check_emotion(text, sample.emotion)


def _word_positions(text: str, words: tuple[str, ...]) -> set[int]:
    return {match.start() for word in words for match in re.finditer(rf"\b{word}\b", text)}


# --- samples from records ------------------------------------------------


def _levels_of(record: UtteranceRecord) -> CotLevels:
    attrs = record.attributes
    if attrs is None or None in (attrs.rate_level, attrs.energy_level, attrs.pitch_level):
        raise CotError(f"{record.id}: levels not discretized")
    return CotLevels(rate=attrs.rate_level, energy=attrs.energy_level, pitch=attrs.pitch_level)


def _label_of(record: UtteranceRecord) -> Emotion:
    if record.fused_emotion is None:
        raise CotError(f"{record.id}: fused_emotion is not set")
    return record.fused_emotion


def explicit_sample(record: UtteranceRecord) -> CotSample:
    """Template-mode explicit sample for a discretized, fused record."""
    levels = _levels_of(record)
    emotion = _label_of(record)
    return CotSample(
        utterance_id=record.id,
        mode=CotMode.EXPLICIT,
        prompt_text=render_explicit_prompt(levels, record.transcript, emotion),
        target_text=render_explicit_target(levels, record.transcript, emotion),
        source=CotSource.TEMPLATE,
        emotion=emotion,
        transcript=record.transcript,
        rate_level=levels.rate,
        energy_level=levels.energy,
        pitch_level=levels.pitch,
    )


def implicit_sample(record: UtteranceRecord) -> CotSample:
    emotion = _label_of(record)
    return CotSample(
        utterance_id=record.id,
        mode=CotMode.IMPLICIT,
        prompt_text=IMPLICIT_PROMPT,
        target_text=render_implicit_target(emotion),
        source=CotSource.TEMPLATE,
        emotion=emotion,
    )


def paraphrase_remote(prompt: str, endpoint: ChatEndpoint) -> str:
    """Ask the chat model for a reasoning path; raises TransportError."""
    return endpoint.complete(prompt)


@dataclass
class CotBuildSummary:
    samples: int = 0
    llm_accepted: int = 0
    llm_rejected: int = 0
    transport_failures: int = 0
    reasons: Counter[str] = field(default_factory=Counter)

    @property
    def rejected_fraction(self) -> float:
        attempted = self.llm_accepted + self.llm_rejected + self.transport_failures
        return (self.llm_rejected + self.transport_failures) / attempted if attempted else 0.0

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "llm_accepted": self.llm_accepted,
            "llm_rejected": self.llm_rejected,
            "transport_failures": self.transport_failures,
            "rejection_reasons": dict(sorted(self.reasons.items())),
            "rejected_fraction": round(self.rejected_fraction, 6),
        }


async def _paraphrase_one(
    sample: CotSample, endpoint: ChatEndpoint, gate: asyncio.Semaphore, summary: CotBuildSummary
) -> CotSample:
    async with gate:
        try:
            text = await asyncio.to_thread(paraphrase_remote, sample.prompt_text, endpoint)
        except TransportError as e:
            log.warning(f"⚠️ {sample.utterance_id}: chat endpoint failed, using template ({e})")
            summary.transport_failures += 1
            return sample

    candidate = sample.model_copy(update={"target_text": text, "source": CotSource.LLM})
    verdict = validate_cot(candidate)
    if verdict.accepted:
        summary.llm_accepted += 1
        return candidate
    log.info(f"🔍 {sample.utterance_id}: paraphrase rejected ({verdict.reason}: {verdict.detail}), using template")
    summary.llm_rejected += 1
    summary.reasons[verdict.reason] += 1
    return sample


async def build_samples(
    records: Sequence[UtteranceRecord],
    mode: CotMode,
    endpoint: ChatEndpoint | None = None,
    max_in_flight: int = 4,
) -> tuple[list[CotSample], CotBuildSummary]:
    """
    Build one sample per record, in record order.

    With an endpoint, explicit targets are paraphrased with at most
    max_in_flight requests outstanding. Implicit samples never use the
    endpoint.
    """
    if max_in_flight < 1:
        raise CotError(f"max_in_flight must be >= 1, got {max_in_flight}")
    make = explicit_sample if mode is CotMode.EXPLICIT else implicit_sample
    templates = [make(record) for record in records]
    summary = CotBuildSummary(samples=len(templates))

    if endpoint is None or mode is CotMode.IMPLICIT:
        return templates, summary

    gate = asyncio.Semaphore(max_in_flight)
    samples = await asyncio.gather(*(_paraphrase_one(s, endpoint, gate, summary) for s in templates))
    log.info(
        f"📊 Paraphrases: {summary.llm_accepted} accepted, {summary.llm_rejected} rejected, "
        f"{summary.transport_failures} transport failures"
    )
    return list(samples), summary


async def write_samples(samples: Sequence[CotSample], path: str | Path) -> None:
    async with aiofiles.open(path, "w", encoding="utf-8", newline="\n") as f:
        for sample in samples:
            await f.write(json.dumps(sample.model_dump(mode="json"), ensure_ascii=False) + "\n")


async def generate_cot(
    records: Sequence[UtteranceRecord],
    mode: CotMode,
    out_path: str | Path,
    endpoint: ChatEndpoint | None = None,
    max_in_flight: int = 4,
) -> CotBuildSummary:
    """Build samples and write them with a `<out>.summary.json` next to them."""
    samples, summary = await build_samples(records, mode, endpoint, max_in_flight)
    await write_samples(samples, out_path)

    summary_path = Path(f"{out_path}.summary.json")
    async with aiofiles.open(summary_path, "w", encoding="utf-8", newline="\n") as f:
        await f.write(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")
    log.info(f"✅ Wrote {len(samples)} {mode.value} samples to {out_path}")
    return summary
