"""
Loss kernel for emotion-aware embedding distillation.

Float64 reference implementations of the composed objective
frame MSE + lambda_utt * utterance MSE + lambda_cate * category contrastive,
their closed-form gradients, and a central-difference gradient check.
"""

import json
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp, softmax

from manifest import Emotion

log = logging.getLogger(__name__)


class LossInputError(ValueError):
    pass


class DegenerateBatchError(ValueError):
    """No anchor in the batch has a same-label partner."""


class GradientError(ValueError):
    pass


def _finite_matrix(values, name: str) -> np.ndarray:
    array = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(array)):
        row = int(np.argwhere(~np.isfinite(array))[0][0])
        raise LossInputError(f"{name}: non-finite entry in row {row}")
    return array


@dataclass(frozen=True, eq=False)
class EmbeddingBatch:
    """Pooled utterance embeddings (B x D) with one emotion label per row."""

    embeddings: np.ndarray
    labels: tuple[Emotion, ...]

    def __post_init__(self) -> None:
        g = _finite_matrix(self.embeddings, "embeddings")
        if g.ndim != 2:
            raise LossInputError(f"embeddings must be B x D, got shape {g.shape}")
        if g.shape[0] < 2 or g.shape[1] < 1:
            raise LossInputError(f"need B >= 2 and D >= 1, got {g.shape}")
        if len(self.labels) != g.shape[0]:
            raise LossInputError(f"{len(self.labels)} labels for {g.shape[0]} rows")
        object.__setattr__(self, "embeddings", g)
        object.__setattr__(self, "labels", tuple(Emotion(label) for label in self.labels))

    @property
    def positives(self) -> np.ndarray:
        """Boolean B x B mask of same-label pairs, diagonal excluded."""
        codes = np.array([label.value for label in self.labels])
        mask = codes[:, None] == codes[None, :]
        np.fill_diagonal(mask, False)
        return mask


@dataclass(frozen=True)
class LossWeights:
    lambda_utt: float = 0.1
    lambda_cate: float = 100.0
    temperature: float = 0.07

    def __post_init__(self) -> None:
        if self.lambda_utt < 0 or self.lambda_cate < 0:
            raise LossInputError("loss weights must be >= 0")
        if not self.temperature > 0:
            raise LossInputError(f"temperature must be > 0, got {self.temperature}")


@dataclass(frozen=True, eq=False)
class TensorPair:
    """Student and teacher tensors of equal shape (frames x D or tokens x D)."""

    student: np.ndarray
    teacher: np.ndarray

    def __post_init__(self) -> None:
        student = _finite_matrix(self.student, "student")
        teacher = _finite_matrix(self.teacher, "teacher")
        if student.shape != teacher.shape:
            raise LossInputError(f"shape mismatch: student {student.shape} vs teacher {teacher.shape}")
        if student.size == 0:
            raise LossInputError("empty tensors")
        object.__setattr__(self, "student", student)
        object.__setattr__(self, "teacher", teacher)


FramePair = TensorPair
UttPair = TensorPair


def _unit_rows(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(g, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise LossInputError(f"row {int(zero[0])} has zero norm")
    return g / norms[:, None], norms


def cosine_similarity_matrix(g: np.ndarray) -> np.ndarray:
    unit, _ = _unit_rows(_finite_matrix(g, "embeddings"))
    return unit @ unit.T


def _contrastive_terms(batch: EmbeddingBatch, temperature: float):
    unit, norms = _unit_rows(batch.embeddings)
    logits = (unit @ unit.T) / temperature
    np.fill_diagonal(logits, -np.inf)
    positives = batch.positives
    counts = positives.sum(axis=1)
    anchors = counts > 0
    if not np.any(anchors):
        raise DegenerateBatchError(
            f"no anchor has a positive among {len(batch.labels)} rows with labels "
            f"{sorted({label.value for label in batch.labels})}"
        )
    return unit, norms, logits, positives, counts, anchors


def category_contrastive_loss(batch: EmbeddingBatch, temperature: float = 0.07) -> float:
    """
    Multi-positive contrastive loss over cosine similarities.

    For each anchor with at least one same-label partner, the mean negative
    log-softmax of its positives over all other rows; averaged over anchors.

    Raises:
        DegenerateBatchError: If no label occurs twice.
    """
    _, _, logits, positives, counts, anchors = _contrastive_terms(batch, temperature)
    log_prob = logits - logsumexp(logits, axis=1, keepdims=True)
    positive_sum = np.where(positives, log_prob, 0.0).sum(axis=1)
    per_anchor = -positive_sum[anchors] / counts[anchors]
    return float(np.mean(per_anchor))


def category_contrastive_gradient(batch: EmbeddingBatch, temperature: float = 0.07) -> np.ndarray:
    """Closed-form gradient of category_contrastive_loss w.r.t. the raw embeddings."""
    unit, norms, logits, positives, counts, anchors = _contrastive_terms(batch, temperature)
    probs = softmax(logits, axis=1)
    target = np.where(positives, 1.0 / np.maximum(counts, 1)[:, None], 0.0)

    # d loss / d S for every anchor row that contributes
    m = np.zeros_like(probs)
    m[anchors] = (probs[anchors] - target[anchors]) / (temperature * anchors.sum())
    d_unit = (m + m.T) @ unit
    radial = np.sum(d_unit * unit, axis=1, keepdims=True)
    return (d_unit - radial * unit) / norms[:, None]


def mse_loss(pair: TensorPair) -> float:
    return float(np.mean((pair.student - pair.teacher) ** 2))


def mse_gradient(pair: TensorPair) -> np.ndarray:
    """Gradient of mse_loss w.r.t. the student tensor."""
    return 2.0 * (pair.student - pair.teacher) / pair.student.size


def frame_loss(pair: FramePair) -> float:
    return mse_loss(pair)


def utt_loss(pair: UttPair) -> float:
    return mse_loss(pair)


def total_loss(frm: float, utt: float, cate: float, weights: LossWeights = LossWeights()) -> float:
    """frm + lambda_utt * utt + lambda_cate * cate."""
    for name, value in (("frame", frm), ("utterance", utt), ("category", cate)):
        if not np.isfinite(value):
            raise LossInputError(f"{name} loss is not finite: {value}")
    return frm + weights.lambda_utt * utt + weights.lambda_cate * cate


def total_loss_gradient(
    batch: EmbeddingBatch,
    frames: FramePair | None = None,
    utterance: UttPair | None = None,
    weights: LossWeights = LossWeights(),
) -> dict[str, np.ndarray]:
    """Weighted gradients of the composed loss, one entry per input tensor."""
    grads = {"embeddings": weights.lambda_cate * category_contrastive_gradient(batch, weights.temperature)}
    if frames is not None:
        grads["frame_student"] = mse_gradient(frames)
    if utterance is not None:
        grads["utt_student"] = weights.lambda_utt * mse_gradient(utterance)
    return grads


def numeric_gradient(loss_fn: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences, one coordinate at a time."""
    x0 = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x0)
    flat = x0.reshape(-1)
    out = grad.reshape(-1)
    for j in range(flat.size):
        saved = flat[j]
        flat[j] = saved + eps
        f_plus = loss_fn(x0)
        flat[j] = saved - eps
        f_minus = loss_fn(x0)
        flat[j] = saved
        out[j] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def grad_check(
    loss_fn: Callable[[np.ndarray], float],
    grad_fn: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    eps: float = 1e-5,
) -> float:
    """
    Compare an analytic gradient with central differences.

    Returns:
        max over coordinates of |analytic - numeric| / max(1, |numeric|).

    Raises:
        GradientError: If either gradient has a non-finite coordinate.
    """
    x = np.asarray(x, dtype=np.float64)
    analytic = np.asarray(grad_fn(x), dtype=np.float64)
    if analytic.shape != x.shape:
        raise GradientError(f"analytic gradient shape {analytic.shape} != input shape {x.shape}")
    numeric = numeric_gradient(loss_fn, x, eps)
    for name, grad in (("analytic", analytic), ("numeric", numeric)):
        bad = np.argwhere(~np.isfinite(grad))
        if bad.size:
            raise GradientError(f"{name} gradient not finite at coordinate {tuple(int(i) for i in bad[0])}")
    error = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    log.debug(f"🔍 grad check over {x.size} coordinates, max relative error {error.max():.3e}")
    return float(error.max())


def contrastive_grad_check(batch: EmbeddingBatch, temperature: float = 0.07, eps: float = 1e-5) -> float:
    labels = batch.labels

    def loss(g: np.ndarray) -> float:
        return category_contrastive_loss(EmbeddingBatch(g, labels), temperature)

    def grad(g: np.ndarray) -> np.ndarray:
        return category_contrastive_gradient(EmbeddingBatch(g, labels), temperature)

    return grad_check(loss, grad, batch.embeddings, eps)


def mse_grad_check(pair: TensorPair, eps: float = 1e-5) -> float:
    teacher = pair.teacher
    return grad_check(
        lambda s: mse_loss(TensorPair(s, teacher)),
        lambda s: mse_gradient(TensorPair(s, teacher)),
        pair.student,
        eps,
    )


# --- batch files ---------------------------------------------------------


def load_batch(path: str | Path) -> EmbeddingBatch:
    """Read {"embeddings": [[...], ...], "labels": [...]} from JSON."""
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    try:
        return EmbeddingBatch(np.array(payload["embeddings"], dtype=np.float64), tuple(payload["labels"]))
    except (KeyError, TypeError) as e:
        raise LossInputError(f"{path}: expected embeddings and labels ({e})") from e


def load_pairs(path: str | Path) -> tuple[FramePair | None, UttPair | None]:
    """Read optional {"frame": {...}, "utterance": {...}} student/teacher pairs."""
    with open(path, "r", encoding="utf-8") as f:
        payload = json.load(f)
    if not isinstance(payload, dict):
        raise LossInputError(f"{path}: expected a JSON object")

    def pair(key: str) -> TensorPair | None:
        if key not in payload:
            return None
        try:
            return TensorPair(np.array(payload[key]["student"]), np.array(payload[key]["teacher"]))
        except (KeyError, TypeError) as e:
            raise LossInputError(f"{path}: {key} needs student and teacher tensors ({e})") from e

    return pair("frame"), pair("utterance")


def save_batch(batch: EmbeddingBatch, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(
            {"embeddings": batch.embeddings.tolist(), "labels": [label.value for label in batch.labels]}, f, indent=2
        )
        f.write("\n")


def save_pairs(frames: FramePair, utterance: UttPair, path: str | Path) -> None:
    payload = {
        name: {"student": pair.student.tolist(), "teacher": pair.teacher.tolist()}
        for name, pair in (("frame", frames), ("utterance", utterance))
    }
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def loss_summary(
    batch: EmbeddingBatch,
    frames: FramePair | None = None,
    utterance: UttPair | None = None,
    weights: LossWeights = LossWeights(),
    eps: float = 1e-5,
) -> dict[str, float]:
    """Loss components, weighted total and gradient-check errors for one batch."""
    cate = category_contrastive_loss(batch, weights.temperature)
    frm = frame_loss(frames) if frames is not None else 0.0
    utt = utt_loss(utterance) if utterance is not None else 0.0
    summary = {
        "frame_loss": frm,
        "utt_loss": utt,
        "category_loss": cate,
        "total_loss": total_loss(frm, utt, cate, weights),
        "lambda_utt": weights.lambda_utt,
        "lambda_cate": weights.lambda_cate,
        "temperature": weights.temperature,
        "grad_check_category": contrastive_grad_check(batch, weights.temperature, eps),
    }
    if frames is not None:
        summary["grad_check_frame"] = mse_grad_check(frames, eps)
    if utterance is not None:
        summary["grad_check_utt"] = mse_grad_check(utterance, eps)
    return summary


def cluster_batch(labels: Sequence[Emotion], dim: int, spread: float, rng: np.random.Generator) -> EmbeddingBatch:
    """Synthetic batch: one random centroid per label plus isotropic noise."""
    centroids = {label: rng.standard_normal(dim) for label in dict.fromkeys(labels)}
    rows = np.stack([centroids[label] + spread * rng.standard_normal(dim) for label in labels])
    return EmbeddingBatch(rows, tuple(labels))
