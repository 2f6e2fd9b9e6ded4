import logging
import random

import pytest

from conftest import REPO_ROOT, record
from fusion import (
    DROP,
    REASON_DISAGREEMENT,
    REASON_DROPPED_LABEL,
    FusionError,
    HarmonizationMap,
    fuse,
    fuse_corpus,
    harmonize,
)
from manifest import Emotion


def raw(id: str, speech: str | None, text: str | None):
    return record(id, None, speech_emotion=speech, text_emotion=text)


@pytest.mark.parametrize("label", ["excited", "amused", "joy", "happy", "Happiness", " HAPPY "])
def test_happiness_merges(label):
    assert harmonize(label, HarmonizationMap.default()) is Emotion.HAPPINESS


def test_synonyms_and_drops():
    harmonization = HarmonizationMap.default()

    assert harmonize("Angry", harmonization) is Emotion.ANGER
    assert harmonize("afraid", harmonization) is Emotion.FEAR
    assert harmonize("sleepy", harmonization) is DROP


def test_unmapped_label_warns_once(caplog):
    harmonization = HarmonizationMap.default()

    with caplog.at_level(logging.WARNING):
        for _ in range(3):
            harmonize("bored", harmonization)

    assert caplog.text.count("'bored'") == 1


def test_fuse_agreement():
    result = fuse(raw("a", "excited", "happiness"), HarmonizationMap.default())

    assert not result.rejected
    assert result.record.fused_emotion is Emotion.HAPPINESS


def test_fuse_rejections():
    harmonization = HarmonizationMap.default()

    disagree = fuse(raw("a", "angry", "sad"), harmonization)
    dropped = fuse(raw("b", "sleepy", "neutral"), harmonization)

    assert disagree.reject_reason == REASON_DISAGREEMENT
    assert dropped.reject_reason == REASON_DROPPED_LABEL
    assert disagree.record.fused_emotion is None


def test_fuse_needs_both_annotations():
    with pytest.raises(FusionError, match="text_emotion"):
        fuse(raw("a", "angry", None), HarmonizationMap.default())


def test_fuse_corpus_tags_rejects():
    records = [raw("a", "angry", "anger"), raw("b", "angry", "fear"), raw("c", "contempt", "disgust")]

    report = fuse_corpus(records, HarmonizationMap.default())

    assert [r.id for r in report.fused] == ["a"]
    assert [r.extra_fields["reject_reason"] for r in report.rejected] == [REASON_DISAGREEMENT, REASON_DROPPED_LABEL]
    assert report.per_emotion["anger"] == 1
    assert report.reasons == {REASON_DISAGREEMENT: 1, REASON_DROPPED_LABEL: 1}


def test_intersection_property_on_random_corpora():
    vocabulary = ["anger", "angry", "happy", "excited", "joy", "sad", "sadness", "calm", "neutral", "fear", "sleepy"]
    rng = random.Random(5)
    harmonization = HarmonizationMap.default()

    for trial in range(50):
        records = [
            raw(f"{trial}-{i}", rng.choice(vocabulary), rng.choice(vocabulary)) for i in range(rng.randint(1, 40))
        ]
        report = fuse_corpus(records, harmonization)

        assert len(report.fused) + report.rejected_count == len(records)
        assert sum(report.per_emotion.values()) == len(report.fused)
        for fused in report.fused:
            assert harmonize(fused.speech_emotion, harmonization) is fused.fused_emotion
            assert harmonize(fused.text_emotion, harmonization) is fused.fused_emotion


def test_map_cannot_move_pinned_labels():
    with pytest.raises(FusionError, match="excited"):
        HarmonizationMap.from_mapping({"excited": "surprise"})
    with pytest.raises(FusionError, match="joyous"):
        HarmonizationMap.from_mapping({"joyous": "glee"})


def test_map_from_repository_toml():
    harmonization = HarmonizationMap.from_toml(REPO_ROOT / "harmonize.toml")

    assert harmonize("mad", harmonization) is Emotion.ANGER
    assert harmonize("contempt", harmonization) is DROP
    assert harmonize("amused", harmonization) is Emotion.HAPPINESS


def test_map_toml_needs_labels_table(tmp_path):
    path = tmp_path / "map.toml"
    path.write_text('angry = "anger"\n', encoding="utf-8")

    with pytest.raises(FusionError, match="labels"):
        HarmonizationMap.from_toml(path)


def test_swapping_annotations_changes_nothing():
    vocabulary = ["anger", "mad", "happy", "excited", "sad", "calm", "neutral", "afraid", "fear", "sleepy"]
    harmonization = HarmonizationMap.default()

    for speech in vocabulary:
        for text in vocabulary:
            forward = fuse(raw("a", speech, text), harmonization)
            backward = fuse(raw("a", text, speech), harmonization)

            assert forward.reject_reason == backward.reject_reason
            assert forward.record.fused_emotion is backward.record.fused_emotion


def test_map_values_must_be_strings(tmp_path):
    path = tmp_path / "map.toml"
    path.write_text('[labels]\nangry = 3\n', encoding="utf-8")

    with pytest.raises(FusionError, match="angry"):
        HarmonizationMap.from_toml(path)
