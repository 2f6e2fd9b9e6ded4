import math

import numpy as np
import pytest

from losskernel import (
    DegenerateBatchError,
    EmbeddingBatch,
    LossInputError,
    LossWeights,
    TensorPair,
    category_contrastive_gradient,
    category_contrastive_loss,
    cluster_batch,
    contrastive_grad_check,
    cosine_similarity_matrix,
    grad_check,
    load_batch,
    load_pairs,
    loss_summary,
    mse_grad_check,
    save_batch,
    save_pairs,
    total_loss,
    total_loss_gradient,
)
from manifest import EMOTIONS, Emotion


def brute_force_loss(g: np.ndarray, labels, tau: float) -> float:
    b = len(labels)
    cos = [[float(g[i] @ g[j] / (np.linalg.norm(g[i]) * np.linalg.norm(g[j]))) for j in range(b)] for i in range(b)]
    anchors = []
    for i in range(b):
        positives = [p for p in range(b) if p != i and labels[p] == labels[i]]
        if not positives:
            continue
        denominator = sum(math.exp(cos[i][k] / tau) for k in range(b) if k != i)
        anchors.append(-sum(math.log(math.exp(cos[i][p] / tau) / denominator) for p in positives) / len(positives))
    return sum(anchors) / len(anchors)


def random_batch(rng: np.random.Generator) -> EmbeddingBatch:
    while True:
        size = int(rng.integers(2, 9))
        labels = [EMOTIONS[int(k)] for k in rng.integers(0, 3, size)]
        if len(set(labels)) < size:
            return EmbeddingBatch(rng.standard_normal((size, int(rng.integers(1, 17)))), tuple(labels))


def test_contrastive_loss_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(20):
        batch = random_batch(rng)
        expected = brute_force_loss(batch.embeddings, batch.labels, 0.07)

        assert category_contrastive_loss(batch, 0.07) == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_contrastive_gradient_check():
    rng = np.random.default_rng(1)
    for _ in range(20):
        batch = random_batch(rng)
        assert contrastive_grad_check(batch, 0.07) < 1e-4


def test_mse_gradient_check():
    rng = np.random.default_rng(2)
    student = rng.standard_normal((6, 4))
    pair = TensorPair(student, student + rng.standard_normal((6, 4)))

    assert mse_grad_check(pair) < 1e-4


def test_total_loss_reproduces_reference_value():
    assert total_loss(0.5, 0.2, 0.01, LossWeights(lambda_utt=0.1, lambda_cate=100.0)) == pytest.approx(1.52, abs=1e-12)


def test_total_loss_rejects_non_finite():
    with pytest.raises(LossInputError, match="category"):
        total_loss(0.5, 0.2, math.nan)


def test_clustered_batch_has_lower_loss():
    rng = np.random.default_rng(3)
    labels = [Emotion.ANGER, Emotion.ANGER, Emotion.FEAR, Emotion.FEAR]

    tight = cluster_batch(labels, dim=8, spread=0.05, rng=rng)
    loose = EmbeddingBatch(rng.standard_normal((4, 8)), tuple(labels))

    assert category_contrastive_loss(tight) < category_contrastive_loss(loose)


def test_cosine_matrix():
    g = np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 3.0]])

    cos = cosine_similarity_matrix(g)

    assert cos[0, 1] == pytest.approx(0.0)
    assert cos[0, 2] == pytest.approx(1 / math.sqrt(2))
    assert np.allclose(np.diag(cos), 1.0)
    assert np.allclose(cos, cos.T)


def test_degenerate_batch():
    batch = EmbeddingBatch(np.eye(3), (Emotion.ANGER, Emotion.FEAR, Emotion.NEUTRAL))

    with pytest.raises(DegenerateBatchError):
        category_contrastive_loss(batch)


def test_batch_validation():
    with pytest.raises(LossInputError, match="row 1"):
        category_contrastive_loss(EmbeddingBatch(np.array([[1.0, 0.0], [0.0, 0.0]]), (Emotion.ANGER, Emotion.ANGER)))
    with pytest.raises(LossInputError, match="row 0"):
        EmbeddingBatch(np.array([[math.inf, 0.0], [1.0, 0.0]]), (Emotion.ANGER, Emotion.ANGER))
    with pytest.raises(LossInputError):
        EmbeddingBatch(np.ones((3, 2)), (Emotion.ANGER, Emotion.ANGER))
    with pytest.raises(LossInputError):
        TensorPair(np.ones((2, 3)), np.ones((3, 2)))


def test_temperature_must_be_positive():
    with pytest.raises(LossInputError):
        LossWeights(temperature=0.0)


def test_grad_check_flags_a_wrong_gradient():
    x = np.array([1.0, -2.0, 0.5])

    error = grad_check(lambda v: float(np.sum(v**2)), lambda v: v, x)

    assert error > 0.1


def test_total_loss_gradient_is_weighted():
    rng = np.random.default_rng(4)
    batch = cluster_batch([Emotion.ANGER, Emotion.ANGER, Emotion.FEAR], dim=4, spread=0.3, rng=rng)
    frames = TensorPair(rng.standard_normal((5, 4)), rng.standard_normal((5, 4)))
    utterance = TensorPair(rng.standard_normal((2, 4)), rng.standard_normal((2, 4)))

    grads = total_loss_gradient(batch, frames, utterance, LossWeights(lambda_utt=0.5, lambda_cate=2.0))

    assert set(grads) == {"embeddings", "frame_student", "utt_student"}
    assert np.allclose(grads["utt_student"], 0.5 * 2.0 * (utterance.student - utterance.teacher) / utterance.student.size)


def test_loss_summary_from_files(tmp_path):
    rng = np.random.default_rng(5)
    batch = cluster_batch([Emotion.SADNESS] * 2 + [Emotion.SURPRISE] * 2, dim=6, spread=0.4, rng=rng)
    student = rng.standard_normal((3, 6))
    save_batch(batch, tmp_path / "batch.json")
    save_pairs(TensorPair(student, student * 0.9), TensorPair(student[:1], student[:1]), tmp_path / "frames.json")

    loaded = load_batch(tmp_path / "batch.json")
    frames, utterance = load_pairs(tmp_path / "frames.json")
    summary = loss_summary(loaded, frames, utterance)

    assert loaded.labels == batch.labels
    assert summary["utt_loss"] == 0.0
    assert summary["total_loss"] == pytest.approx(summary["frame_loss"] + 100.0 * summary["category_loss"])
    assert summary["grad_check_category"] < 1e-4
    assert summary["grad_check_frame"] < 1e-4


def test_contrastive_loss_ignores_row_order_and_scale():
    rng = np.random.default_rng(21)
    labels = [Emotion.ANGER, Emotion.FEAR, Emotion.ANGER, Emotion.SADNESS, Emotion.FEAR, Emotion.SADNESS]
    g = rng.normal(size=(6, 5))
    reference = category_contrastive_loss(EmbeddingBatch(g, tuple(labels)))

    order = rng.permutation(6)
    permuted = EmbeddingBatch(g[order], tuple(labels[i] for i in order))
    rescaled = g.copy()
    rescaled[2] *= 37.5

    assert category_contrastive_loss(permuted) == pytest.approx(reference, abs=1e-12)
    assert category_contrastive_loss(EmbeddingBatch(rescaled, tuple(labels))) == pytest.approx(reference, abs=1e-12)


def test_identical_pair_is_the_minimum():
    batch = EmbeddingBatch(np.array([[0.3, -1.2, 0.5], [0.3, -1.2, 0.5]]), (Emotion.FEAR, Emotion.FEAR))

    assert category_contrastive_loss(batch) == 0.0
    assert np.abs(category_contrastive_gradient(batch)).max() <= 1e-12


def test_loaders_report_missing_keys(tmp_path):
    (tmp_path / "batch.json").write_text('{"embeddings": [[1.0], [2.0]]}', encoding="utf-8")
    (tmp_path / "frames.json").write_text('{"frame": {"teacher": [[1.0]]}}', encoding="utf-8")

    with pytest.raises(LossInputError, match="labels"):
        load_batch(tmp_path / "batch.json")
    with pytest.raises(LossInputError, match="frame"):
        load_pairs(tmp_path / "frames.json")
