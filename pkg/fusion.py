"""
Dual-annotation label fusion.

Raw emotion labels from the speech and text annotators are harmonized into
the seven classes; a record keeps a fused label only when both agree.
"""

import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from collections import Counter
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import NamedTuple

from manifest import CANONICAL_SYNONYMS, EMOTIONS, PINNED_LABELS, Emotion, UtteranceRecord, with_extra

log = logging.getLogger(__name__)


class Drop(Enum):
    DROP = "drop"


DROP = Drop.DROP

REASON_DISAGREEMENT = "disagreement"
REASON_DROPPED_LABEL = "dropped-label"


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class HarmonizationMap:
    """Case-folded raw label -> canonical emotion or DROP."""

    entries: Mapping[str, Emotion | Drop]
    _warned: set[str] = field(default_factory=set, compare=False, repr=False)

    def __post_init__(self) -> None:
        for raw, target in PINNED_LABELS.items():
            if self.entries.get(raw) != target:
                raise FusionError(
                    f"harmonization map must map {raw!r} to {target.value}, "
                    f"got {getattr(self.entries.get(raw), 'value', None)!r}"
                )

    @classmethod
    def default(cls) -> "HarmonizationMap":
        return cls(entries=dict(CANONICAL_SYNONYMS))

    @classmethod
    def from_mapping(cls, raw_entries: Mapping[str, str]) -> "HarmonizationMap":
        entries: dict[str, Emotion | Drop] = dict(PINNED_LABELS)
        for raw, target in raw_entries.items():
            if not isinstance(target, str):
                raise FusionError(f"{raw!r} maps to {target!r}, expected a label string")
            key = raw.strip().casefold()
            value = target.strip().casefold()
            if value == DROP.value:
                entries[key] = DROP
                continue
            try:
                entries[key] = Emotion(value)
            except ValueError:
                raise FusionError(
                    f"{raw!r} maps to {target!r}, expected one of "
                    f"{', '.join(e.value for e in EMOTIONS)} or 'drop'"
                ) from None
        return cls(entries=entries)

    @classmethod
    def from_toml(cls, path: str | Path) -> "HarmonizationMap":
        """Load the [labels] table of a TOML harmonization file."""
        with open(path, "rb") as f:
            document = tomllib.load(f)
        labels = document.get("labels")
        if not isinstance(labels, dict):
            raise FusionError(f"{path}: missing [labels] table")
        return cls.from_mapping(labels)


def harmonize(raw: str, harmonization: HarmonizationMap) -> Emotion | Drop:
    """Case-insensitive lookup; unmapped labels are dropped with a warning."""
    key = raw.strip().casefold()
    target = harmonization.entries.get(key)
    if target is None:
        if key not in harmonization._warned:
            harmonization._warned.add(key)
            log.warning(f"⚠️ Unmapped emotion label {raw!r}, dropping")
        return DROP
    return target


class FusionResult(NamedTuple):
    record: UtteranceRecord
    reject_reason: str | None

    @property
    def rejected(self) -> bool:
        return self.reject_reason is not None


def fuse(record: UtteranceRecord, harmonization: HarmonizationMap) -> FusionResult:
    """
    Intersect the two annotation streams of one record.

    Raises:
        FusionError: If either annotation is missing.
    """
    if record.speech_emotion is None or record.text_emotion is None:
        missing = "speech_emotion" if record.speech_emotion is None else "text_emotion"
        raise FusionError(f"{record.id}: {missing} is missing")

    speech = harmonize(record.speech_emotion, harmonization)
    text = harmonize(record.text_emotion, harmonization)
    if speech is DROP or text is DROP:
        return FusionResult(record.model_copy(update={"fused_emotion": None}), REASON_DROPPED_LABEL)
    if speech != text:
        return FusionResult(record.model_copy(update={"fused_emotion": None}), REASON_DISAGREEMENT)
    return FusionResult(record.model_copy(update={"fused_emotion": speech}), None)


@dataclass(frozen=True)
class FusionReport:
    """
    Attributes:
        fused: Records with an agreed label, input order.
        rejected: Records without one, each tagged with reject_reason.
        per_emotion: Fused count per emotion value, class order.
        reasons: Rejected count per reason.
    """

    fused: list[UtteranceRecord]
    rejected: list[UtteranceRecord]
    per_emotion: dict[str, int]
    reasons: dict[str, int]

    @property
    def rejected_count(self) -> int:
        return len(self.rejected)


def fuse_corpus(records: Sequence[UtteranceRecord], harmonization: HarmonizationMap) -> FusionReport:
    fused: list[UtteranceRecord] = []
    rejected: list[UtteranceRecord] = []
    reasons: Counter[str] = Counter()
    for record in records:
        result = fuse(record, harmonization)
        if result.rejected:
            reasons[result.reject_reason] += 1
            rejected.append(with_extra(result.record, reject_reason=result.reject_reason))
        else:
            fused.append(result.record)

    counts = Counter(record.fused_emotion for record in fused)
    per_emotion = {emotion.value: counts[emotion] for emotion in EMOTIONS}
    log.info(f"🔀 Fused {len(fused)} / {len(records)} records, rejected {len(rejected)} {dict(sorted(reasons.items()))}")
    return FusionReport(fused=fused, rejected=rejected, per_emotion=per_emotion, reasons=dict(sorted(reasons.items())))
