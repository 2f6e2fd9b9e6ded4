"""
Corpus Manifest Module for Emotion CoT Corpus Preparation.

This module defines the canonical utterance record, reads and writes
line-delimited JSON manifests, and implements the corpus-level preprocessing
filters and distribution reports. Every pipeline stage consumes and produces
manifests in this format.
"""

import json
import logging
import math
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from features import AcousticAttributes

log = logging.getLogger(__name__)


class Emotion(str, Enum):
    """The seven harmonized emotion classes, in reporting order."""

    ANGER = "anger"
    HAPPINESS = "happiness"
    NEUTRAL = "neutral"
    SADNESS = "sadness"
    SURPRISE = "surprise"
    DISGUST = "disgust"
    FEAR = "fear"


EMOTIONS: tuple[Emotion, ...] = tuple(Emotion)

# Labels whose meaning no harmonization map may change: the class names and
# the happiness merges used when the training corpora were pooled.
PINNED_LABELS: dict[str, Emotion] = {
    **{emotion.value: emotion for emotion in Emotion},
    "excited": Emotion.HAPPINESS,
    "amused": Emotion.HAPPINESS,
    "joy": Emotion.HAPPINESS,
    "happy": Emotion.HAPPINESS,
}

# Default raw annotator vocabulary -> class. Anything absent is dropped.
CANONICAL_SYNONYMS: dict[str, Emotion] = {
    **PINNED_LABELS,
    "angry": Emotion.ANGER,
    "mad": Emotion.ANGER,
    "joyful": Emotion.HAPPINESS,
    "calm": Emotion.NEUTRAL,
    "sad": Emotion.SADNESS,
    "surprised": Emotion.SURPRISE,
    "disgusted": Emotion.DISGUST,
    "fearful": Emotion.FEAR,
    "afraid": Emotion.FEAR,
}


class ManifestError(ValueError):
    """A manifest line could not be turned into a valid record."""

    def __init__(self, message: str, line: int | None = None, record_id: str | None = None) -> None:
        self.line = line
        self.record_id = record_id
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class InvariantError(ValueError):
    """A record violates the manifest invariants."""


def check_invariants(record: "UtteranceRecord") -> None:
    """
    Check the cross-field invariants of a record.

    A fused label may only exist when both annotation streams are present.
    When both annotations are pinned labels (class names or the fixed
    happiness merges) they must also agree with the fused label.

    Raises:
        InvariantError: If the record is inconsistent.
    """
    if record.duration_s < 0:
        raise InvariantError(f"{record.id}: duration_s must be >= 0, got {record.duration_s}")
    if record.fused_emotion is None:
        return
    if record.speech_emotion is None or record.text_emotion is None:
        raise InvariantError(
            f"{record.id}: fused_emotion is set but "
            f"{'speech_emotion' if record.speech_emotion is None else 'text_emotion'} is missing"
        )
    speech = PINNED_LABELS.get(record.speech_emotion.strip().casefold())
    text = PINNED_LABELS.get(record.text_emotion.strip().casefold())
    if speech is not None and text is not None and not (speech == text == record.fused_emotion):
        raise InvariantError(
            f"{record.id}: fused_emotion {record.fused_emotion.value} disagrees with "
            f"annotations ({record.speech_emotion!r}, {record.text_emotion!r})"
        )


class UtteranceRecord(BaseModel):
    """
    One corpus item.

    Attributes:
        id: Unique identifier within a manifest.
        audio_path: Path to the WAV file, relative paths resolve against the manifest directory.
        transcript: The text label of the utterance.
        language: "zh", "en" or any other language tag.
        speech_emotion: Raw label from the speech-modality annotator.
        text_emotion: Raw label from the text-modality annotator.
        fused_emotion: Harmonized label agreed by both annotators.
        duration_s: Duration of the audio in seconds.
        phoneme_count: Optional externally supplied phoneme count.
        attributes: Acoustic attributes, once extracted.
    """

    model_config = ConfigDict(extra="allow", frozen=True)

    id: str = Field(min_length=1)
    audio_path: str
    transcript: str
    language: str = Field(min_length=1)
    speech_emotion: str | None = None
    text_emotion: str | None = None
    fused_emotion: Emotion | None = None
    duration_s: float = Field(ge=0.0)
    phoneme_count: int | None = Field(default=None, gt=0)
    attributes: AcousticAttributes | None = None

    @model_validator(mode="after")
    def _check_invariants(self) -> "UtteranceRecord":
        check_invariants(self)
        return self

    @property
    def extra_fields(self) -> dict[str, Any]:
        """Fields carried through from third-party tools."""
        return dict(self.__pydantic_extra__ or {})


def with_extra(record: UtteranceRecord, **fields: Any) -> UtteranceRecord:
    """Return a copy of the record with extra (non-schema) fields set."""
    data = record.model_dump(mode="json")
    data.update(fields)
    return UtteranceRecord.model_validate(data)


def _record_to_line(record: UtteranceRecord) -> str:
    data = record.model_dump(mode="json")
    declared = {name: data[name] for name in UtteranceRecord.model_fields}
    extras = {name: data[name] for name in sorted(record.extra_fields)}
    return json.dumps({**declared, **extras}, ensure_ascii=False)


def read_manifest(path: str | Path) -> list[UtteranceRecord]:
    """
    Read a JSONL manifest.

    Args:
        path: Path to the manifest file.

    Returns:
        Records in file order.

    Raises:
        ManifestError: On a malformed line (carrying its line number) or a
            duplicate id.
    """
    path = Path(path)
    records: list[UtteranceRecord] = []
    seen: dict[str, int] = {}
    unknown: Counter[str] = Counter()

    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"malformed JSON ({e.msg})", line=line_no) from e
            if not isinstance(payload, dict):
                raise ManifestError("expected one JSON object per line", line=line_no)
            try:
                record = UtteranceRecord.model_validate(payload)
            except ValidationError as e:
                raise ManifestError(
                    f"invalid record: {e.errors()[0]['msg']}", line=line_no, record_id=payload.get("id")
                ) from e
            if record.id in seen:
                raise ManifestError(
                    f"duplicate id {record.id!r} (first seen on line {seen[record.id]})",
                    line=line_no,
                    record_id=record.id,
                )
            seen[record.id] = line_no
            unknown.update(record.extra_fields.keys())
            records.append(record)

    if unknown:
        log.warning(
            f"⚠️ {path.name}: {sum(unknown.values())} unknown field value(s) kept but ignored "
            f"({', '.join(sorted(unknown))})"
        )
    log.debug(f"📥 Read {len(records)} records from {path}")
    return records


def write_manifest(records: Iterable[UtteranceRecord], path: str | Path) -> None:
    """
    Write records as a JSONL manifest, one object per line.

    Keys follow the schema order with any extra fields appended in sorted
    order, so the same records always produce the same bytes.

    Raises:
        InvariantError: If a record violates the manifest invariants.
        ManifestError: If two records share an id.
    """
    lines: list[str] = []
    seen: set[str] = set()
    for record in records:
        check_invariants(record)
        if record.id in seen:
            raise ManifestError(f"duplicate id {record.id!r}", record_id=record.id)
        seen.add(record.id)
        lines.append(_record_to_line(record) + "\n")

    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.writelines(lines)


ModelT = TypeVar("ModelT", bound=BaseModel)


def read_jsonl(path: str | Path, model: type[ModelT]) -> list[ModelT]:
    """Read any JSONL artifact whose lines validate against a pydantic model."""
    items: list[ModelT] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            try:
                items.append(model.model_validate_json(line))
            except ValidationError as e:
                raise ManifestError(f"invalid {model.__name__}: {e.errors()[0]['msg']}", line=line_no) from e
    return items


def write_jsonl(items: Iterable[BaseModel], path: str | Path) -> None:
    """Write pydantic models as JSONL in field order."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for item in items:
            f.write(json.dumps(item.model_dump(mode="json"), ensure_ascii=False) + "\n")


def filter_duration(
    records: Sequence[UtteranceRecord], max_s: float = 20.0
) -> tuple[list[UtteranceRecord], int]:
    """
    Drop utterances longer than max_s seconds.

    Records lasting exactly max_s are kept.

    Returns:
        Tuple of (kept records in input order, number dropped).
    """
    if not max_s > 0:
        raise ValueError(f"max_s must be > 0, got {max_s}")
    kept = [record for record in records if record.duration_s <= max_s]
    return kept, len(records) - len(kept)


@dataclass(frozen=True)
class DistributionReport:
    """
    Emotion and language distribution of a fused corpus.

    Attributes:
        emotions: Emotion value -> (count, fraction), in class order.
        languages: Language tag -> (count, fraction), most frequent first.
        total: Number of records counted.
    """

    emotions: dict[str, tuple[int, float]]
    languages: dict[str, tuple[int, float]]
    total: int

    def to_dict(self) -> dict[str, Any]:
        def table(rows: dict[str, tuple[int, float]]) -> dict[str, dict[str, float]]:
            return {key: {"count": count, "fraction": round(fraction, 6)} for key, (count, fraction) in rows.items()}

        return {"total": self.total, "emotions": table(self.emotions), "languages": table(self.languages)}


def distribution_report(records: Sequence[UtteranceRecord]) -> DistributionReport:
    """
    Count fused emotions and languages.

    Raises:
        ValueError: If a record has no fused_emotion.
    """
    for record in records:
        if record.fused_emotion is None:
            raise ValueError(f"{record.id}: fused_emotion is not set")

    total = len(records)
    emotion_counts = Counter(record.fused_emotion for record in records)
    language_counts = Counter(record.language for record in records)

    emotions = {
        emotion.value: (emotion_counts[emotion], emotion_counts[emotion] / total)
        for emotion in EMOTIONS
        if emotion_counts[emotion]
    }
    languages = {
        language: (count, count / total)
        for language, count in sorted(language_counts.items(), key=lambda item: (-item[1], item[0]))
    }
    for name, rows in (("emotion", emotions), ("language", languages)):
        if rows and not math.isclose(sum(f for _, f in rows.values()), 1.0, abs_tol=1e-9):
            raise AssertionError(f"{name} fractions do not sum to 1")
    return DistributionReport(emotions=emotions, languages=languages, total=total)
