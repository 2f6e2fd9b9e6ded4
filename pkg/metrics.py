"""
Evaluation Module for Speech Emotion Recognition.

Scores predictions against harmonized reference labels with weighted
accuracy (WA), unweighted accuracy (UA) and macro F1, and turns free-form
model output into a single label first.
"""

import logging
import re
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel
from sklearn.metrics import accuracy_score, confusion_matrix, precision_recall_fscore_support

from llm_client import ChatEndpoint, TransportError
from manifest import CANONICAL_SYNONYMS, EMOTIONS, Emotion, UtteranceRecord

log = logging.getLogger(__name__)

UNKNOWN: Literal["unknown"] = "unknown"
Prediction = Emotion | Literal["unknown"]

EXTRACTION_PROMPT = (
    "Given the following text, determine its corresponding emotion and output only the single most "
    "appropriate emotion label. The possible labels are: anger, happiness, neutral, sadness, surprise, "
    "disgust, fear"
)

_VOCABULARY = sorted(CANONICAL_SYNONYMS, key=len, reverse=True)
_INFERRED = re.compile(r"inferred to be\s+(?:an?\s+|the\s+)?([a-z]+)", re.IGNORECASE)
_ANY_EMOTION = re.compile(r"\b(" + "|".join(_VOCABULARY) + r")\b", re.IGNORECASE)


class MetricsError(ValueError):
    pass


class Hypothesis(BaseModel):
    """One line of a hypotheses file: model output text for an utterance."""

    id: str
    text: str


def extract_label(free_text: str) -> Prediction:
    """
    Pull one emotion out of free-form model output.

    The conclusion "inferred to be <emotion>" wins; otherwise the last emotion
    word or synonym in the text; otherwise UNKNOWN.
    """
    for match in reversed(list(_INFERRED.finditer(free_text))):
        emotion = CANONICAL_SYNONYMS.get(match.group(1).casefold())
        if emotion is not None:
            return emotion
    mentions = _ANY_EMOTION.findall(free_text)
    if mentions:
        return CANONICAL_SYNONYMS[mentions[-1].casefold()]
    return UNKNOWN


@dataclass
class RemoteExtractor:
    """
    Label extraction delegated to a chat model.

    The reply goes through extract_label. If the endpoint fails the rules are
    applied to the original text and the failure is counted.
    """

    endpoint: ChatEndpoint
    failures: int = 0

    def __call__(self, free_text: str) -> Prediction:
        try:
            reply = self.endpoint.complete(f"{EXTRACTION_PROMPT}\n\n{free_text}")
        except TransportError as e:
            self.failures += 1
            log.warning(f"⚠️ Remote extraction failed, using rules ({e})")
            return extract_label(free_text)
        return extract_label(reply)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """
    Reference-by-prediction counts over the seven classes.

    Attributes:
        counts: 7x7 integer matrix, rows are references, columns predictions.
        unknown: Per reference class, predictions that named no emotion.
    """

    counts: np.ndarray
    unknown: np.ndarray

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1) + self.unknown

    @property
    def total(self) -> int:
        return int(self.row_totals.sum())

    def to_dict(self) -> dict[str, Any]:
        return {
            "labels": [e.value for e in EMOTIONS],
            "counts": self.counts.tolist(),
            "unknown": self.unknown.tolist(),
        }


@dataclass(frozen=True)
class ScoreReport:
    confusion: ConfusionMatrix
    wa: float
    ua: float
    macro_f1: float
    per_class_recall: dict[str, float]

    def to_dict(self) -> dict[str, Any]:
        return {
            "wa": round(self.wa, 6),
            "ua": round(self.ua, 6),
            "macro_f1": round(self.macro_f1, 6),
            "per_class_recall": {k: round(v, 6) for k, v in self.per_class_recall.items()},
            "confusion_matrix": self.confusion.to_dict(),
            "n": self.confusion.total,
        }


def _as_label(value: Prediction | str) -> str:
    return value.value if isinstance(value, Emotion) else str(value)


def score(pairs: Sequence[tuple[Emotion, Prediction]]) -> ScoreReport:
    """
    Compute WA, UA and macro F1.

    UA and macro F1 average over the classes present in the references.
    UNKNOWN predictions are wrong for every class.

    Raises:
        MetricsError: On empty input or a reference outside the seven classes.
    """
    if not pairs:
        raise MetricsError("nothing to score")
    valid = {e.value for e in EMOTIONS}
    references: list[str] = []
    predictions: list[str] = []
    for index, (reference, predicted) in enumerate(pairs):
        ref = _as_label(reference)
        if ref not in valid:
            raise MetricsError(f"pair {index}: reference {ref!r} is not one of the seven classes")
        pred = _as_label(predicted)
        if pred not in valid and pred != UNKNOWN:
            raise MetricsError(f"pair {index}: prediction {pred!r} is neither a class nor unknown")
        references.append(ref)
        predictions.append(pred)

    present = [e.value for e in EMOTIONS if e.value in set(references)]
    _, recall, f1, _ = precision_recall_fscore_support(
        references, predictions, labels=present, average=None, zero_division=0
    )
    full = confusion_matrix(references, predictions, labels=[e.value for e in EMOTIONS] + [UNKNOWN])
    confusion = ConfusionMatrix(counts=full[:7, :7].astype(np.int64), unknown=full[:7, 7].astype(np.int64))

    return ScoreReport(
        confusion=confusion,
        wa=float(accuracy_score(references, predictions)),
        ua=float(np.mean(recall)),
        macro_f1=float(np.mean(f1)),
        per_class_recall={label: float(r) for label, r in zip(present, recall)},
    )


@dataclass(frozen=True)
class FreeformReport:
    score: ScoreReport
    predictions: list[Prediction]
    unknown_count: int

    def to_dict(self) -> dict[str, Any]:
        report = self.score.to_dict()
        report["unknown"] = self.unknown_count
        report["per_class_accuracy"] = report["per_class_recall"]
        return report


def score_freeform(
    references: Sequence[UtteranceRecord],
    hypotheses: Sequence[Hypothesis],
    extractor: Callable[[str], Prediction] = extract_label,
) -> FreeformReport:
    """
    Extract a label from each hypothesis text and score it.

    Args:
        references: Records with fused_emotion set.
        hypotheses: Model outputs, aligned with references by position and id.
        extractor: Text to label function.

    Raises:
        MetricsError: On length or id mismatch or a missing reference label.
    """
    if len(references) != len(hypotheses):
        raise MetricsError(f"{len(references)} references but {len(hypotheses)} hypotheses")
    pairs: list[tuple[Emotion, Prediction]] = []
    for record, hypothesis in zip(references, hypotheses):
        if record.id != hypothesis.id:
            raise MetricsError(f"id mismatch: reference {record.id!r} vs hypothesis {hypothesis.id!r}")
        if record.fused_emotion is None:
            raise MetricsError(f"{record.id}: reference has no fused_emotion")
        pairs.append((record.fused_emotion, extractor(hypothesis.text)))

    predictions = [predicted for _, predicted in pairs]
    unknown = sum(1 for p in predictions if p == UNKNOWN)
    report = score(pairs)
    log.info(
        f"📊 WA {report.wa:.4f}  UA {report.ua:.4f}  Macro-F1 {report.macro_f1:.4f}  "
        f"({len(pairs)} utterances, {unknown} unknown)"
    )
    return FreeformReport(score=report, predictions=predictions, unknown_count=unknown)
