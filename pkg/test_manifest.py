import json
import logging

import pytest
from pydantic import ValidationError

from conftest import record
from manifest import (
    Emotion,
    InvariantError,
    ManifestError,
    distribution_report,
    filter_duration,
    read_manifest,
    with_extra,
    write_manifest,
)


def write_lines(path, *lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def test_write_then_read_keeps_extras_and_bytes(tmp_path):
    records = [
        record("a", Emotion.ANGER),
        with_extra(record("b", Emotion.FEAR, transcript="外面好像有人在走动", language="zh"), speaker="spk7"),
    ]
    first = tmp_path / "first.jsonl"
    second = tmp_path / "second.jsonl"

    write_manifest(records, first)
    loaded = read_manifest(first)
    write_manifest(loaded, second)

    assert [r.id for r in loaded] == ["a", "b"]
    assert loaded[1].extra_fields == {"speaker": "spk7"}
    assert loaded[1].transcript == "外面好像有人在走动"
    assert first.read_bytes() == second.read_bytes()
    assert b"\r\n" not in first.read_bytes()


def test_hundred_records_survive_a_round_trip(tmp_path):
    emotions = list(Emotion)
    records = []
    for i in range(100):
        emotion = emotions[i % len(emotions)] if i % 9 else None
        item = record(f"utt-{i:03d}", emotion, duration_s=0.5 + i * 0.173, language="zh" if i % 4 == 0 else "en")
        records.append(with_extra(item, speaker=f"spk{i % 5}") if i % 3 == 0 else item)
    path = tmp_path / "m.jsonl"

    write_manifest(records, path)
    loaded = read_manifest(path)

    assert [r.model_dump(mode="json") for r in loaded] == [r.model_dump(mode="json") for r in records]


def test_empty_file_reads_as_no_records(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text("", encoding="utf-8")

    assert read_manifest(path) == []


def test_blank_lines_are_skipped(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(record("a").model_dump_json() + "\n\n  \n", encoding="utf-8")

    assert [r.id for r in read_manifest(path)] == ["a"]


def test_unknown_fields_are_logged(tmp_path, caplog):
    path = tmp_path / "m.jsonl"
    payload = record("a").model_dump(mode="json") | {"snr_db": 31.5}
    write_lines(path, json.dumps(payload))

    with caplog.at_level(logging.WARNING):
        (loaded,) = read_manifest(path)

    assert loaded.extra_fields == {"snr_db": 31.5}
    assert "snr_db" in caplog.text


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "m.jsonl"
    write_lines(path, record("a").model_dump_json(), "{not json")

    with pytest.raises(ManifestError) as info:
        read_manifest(path)
    assert info.value.line == 2
    assert str(info.value).startswith("line 2:")


def test_duplicate_id_is_rejected(tmp_path):
    path = tmp_path / "m.jsonl"
    write_lines(path, record("a").model_dump_json(), record("a").model_dump_json())

    with pytest.raises(ManifestError, match="duplicate id 'a'"):
        read_manifest(path)
    with pytest.raises(ManifestError):
        write_manifest([record("a"), record("a")], tmp_path / "out.jsonl")


def test_fused_label_needs_both_annotations():
    with pytest.raises(ValidationError, match="text_emotion is missing"):
        record("a", Emotion.ANGER, text_emotion=None)


def test_fused_label_must_match_pinned_annotations(tmp_path):
    with pytest.raises(ValidationError):
        record("a", Emotion.ANGER, text_emotion="sadness")

    # copies skip validation, so the writer checks again
    bad = record("a", Emotion.ANGER).model_copy(update={"fused_emotion": Emotion.FEAR})
    with pytest.raises(InvariantError):
        write_manifest([bad], tmp_path / "out.jsonl")


def test_happiness_merges_are_consistent():
    merged = record("a", Emotion.HAPPINESS, speech_emotion="excited", text_emotion="joy")
    assert merged.fused_emotion is Emotion.HAPPINESS


def test_invalid_record_on_read(tmp_path):
    path = tmp_path / "m.jsonl"
    payload = record("a").model_dump(mode="json") | {"duration_s": -1.0}
    write_lines(path, json.dumps(payload))

    with pytest.raises(ManifestError) as info:
        read_manifest(path)
    assert info.value.line == 1
    assert info.value.record_id == "a"


def test_filter_duration_keeps_exact_limit():
    records = [record("short", duration_s=3.0), record("limit", duration_s=20.0), record("long", duration_s=20.5)]

    kept, dropped = filter_duration(records, 20.0)

    assert [r.id for r in kept] == ["short", "limit"]
    assert dropped == 1


def test_filter_duration_rejects_bad_limit():
    with pytest.raises(ValueError):
        filter_duration([record("a")], 0.0)


def test_distribution_report():
    records = [
        record("a", Emotion.ANGER),
        record("b", Emotion.ANGER, language="zh"),
        record("c", Emotion.SADNESS, language="zh"),
        record("d", Emotion.FEAR, language="zh"),
    ]

    report = distribution_report(records)

    assert report.total == 4
    assert list(report.emotions) == ["anger", "sadness", "fear"]
    assert report.emotions["anger"] == (2, 0.5)
    assert list(report.languages) == ["zh", "en"]
    assert report.to_dict()["languages"]["zh"] == {"count": 3, "fraction": 0.75}


def test_distribution_report_needs_fused_labels():
    with pytest.raises(ValueError, match="unfused"):
        distribution_report([record("unfused", None)])
