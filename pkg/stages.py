"""
Pipeline stages as file-to-file steps.

Each function reads its input artifacts, runs one stage and writes its
outputs, returning a small summary dict. The CLI subcommands and the demo
chain both go through here.
"""

import asyncio
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import soundfile as sf
from tqdm import tqdm

from audio import AllSilentError, TooShortError, UnsupportedFormatError
from charts import write_distribution_charts
from config import PipelineConfig
from cotgen import CotMode, CotSample, generate_cot
from curriculum import Schedule, emit_schedule
from features import ExtractionSettings, PhonemeCountError, SilenceError, extract_attributes
from fusion import HarmonizationMap, fuse_corpus
from llm_client import ChatEndpoint
from losskernel import LossWeights, load_batch, load_pairs, loss_summary
from manifest import (
    UtteranceRecord,
    distribution_report,
    filter_duration,
    read_jsonl,
    read_manifest,
    write_jsonl,
    write_manifest,
)
from metrics import Hypothesis, RemoteExtractor, extract_label, score_freeform
from stats import corpus_stats, discretize_attributes, load_stats, save_stats

log = logging.getLogger(__name__)

# per-record failures that leave the record out instead of stopping the stage
SKIPPABLE = (
    AllSilentError,
    TooShortError,
    SilenceError,
    UnsupportedFormatError,
    PhonemeCountError,
    sf.LibsndfileError,
    OSError,
)


def write_json(payload: Any, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def endpoint_from(config: PipelineConfig) -> ChatEndpoint | None:
    if not config.llm_url:
        return None
    return ChatEndpoint(
        url=config.llm_url,
        model=config.llm_model,
        temperature=config.llm_temperature,
        attempts=config.llm_attempts,
        backoff_s=config.llm_backoff_s,
        timeout_s=config.llm_timeout_s,
    )


def filter_stage(manifest_path: Path, out_path: Path, max_s: float) -> dict[str, int]:
    records = read_manifest(manifest_path)
    kept, dropped = filter_duration(records, max_s)
    write_manifest(kept, out_path)
    log.info(f"⏱️ Kept {len(kept)} records, dropped {dropped} longer than {max_s:g}s")
    return {"input": len(records), "kept": len(kept), "dropped": dropped}


def fuse_stage(manifest_path: Path, map_path: Path | None, out_path: Path, rejects_path: Path) -> dict[str, Any]:
    harmonization = HarmonizationMap.from_toml(map_path) if map_path else HarmonizationMap.default()
    records = read_manifest(manifest_path)
    report = fuse_corpus(records, harmonization)
    write_manifest(report.fused, out_path)
    write_manifest(report.rejected, rejects_path)
    return {
        "input": len(records),
        "fused": len(report.fused),
        "rejected": report.rejected_count,
        "reasons": report.reasons,
        "per_emotion": report.per_emotion,
    }


def _extract_one(job: tuple[UtteranceRecord, ExtractionSettings, Path]) -> tuple[UtteranceRecord | None, str | None]:
    record, settings, base_dir = job
    try:
        return extract_attributes(record, settings, base_dir), None
    except SKIPPABLE as e:
        return None, f"{type(e).__name__}: {e}"


def extract_stage(
    manifest_path: Path,
    out_path: Path,
    settings: ExtractionSettings,
    jobs: int = 1,
    progress: bool = True,
    base_dir: Path | None = None,
) -> dict[str, Any]:
    """
    Extract attributes for every record; failed records are skipped and counted.

    Relative audio paths resolve against base_dir, the manifest's directory
    by default.
    """
    records = read_manifest(manifest_path)
    base_dir = base_dir or manifest_path.parent
    work = [(record, settings, base_dir) for record in records]
    bar = dict(total=len(work), desc="features", unit="utt", disable=not progress)

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(tqdm(pool.map(_extract_one, work, chunksize=4), **bar))
    else:
        results = [_extract_one(job) for job in tqdm(work, **bar)]

    extracted: list[UtteranceRecord] = []
    failures: dict[str, str] = {}
    for record, (done, error) in zip(records, results):
        if error is not None:
            log.warning(f"⚠️ {record.id}: skipped ({error})")
            failures[record.id] = error
        else:
            extracted.append(done)
    write_manifest(extracted, out_path)
    log.info(f"✅ Extracted attributes for {len(extracted)} records, {len(failures)} skipped")
    return {"input": len(records), "extracted": len(extracted), "skipped": len(failures), "failures": failures}


def build_stats_stage(manifest_path: Path, out_path: Path) -> dict[str, Any]:
    stats, skipped = corpus_stats(read_manifest(manifest_path))
    if skipped:
        log.warning(f"⚠️ {len(skipped)} record(s) without complete attributes left out of the statistics: {skipped}")
    save_stats(stats, out_path)
    log.info(f"📊 Statistics over {stats.pitch.n} utterances written to {out_path}")
    return {"n": stats.pitch.n, "skipped": skipped, "stats": stats.to_dict()}


def discretize_stage(manifest_path: Path, stats_path: Path, out_path: Path, sample_sigma: bool = False) -> dict[str, Any]:
    records = read_manifest(manifest_path)
    complete = [r for r in records if r.attributes is not None and r.attributes.pitch_mean_hz is not None]
    if len(complete) < len(records):
        log.warning(f"⚠️ {len(records) - len(complete)} record(s) without a voiced pitch left out")
    discretized = discretize_attributes(complete, load_stats(stats_path), sample_sigma)
    write_manifest(discretized, out_path)
    return {"input": len(records), "discretized": len(discretized)}


def gen_cot_stage(
    manifest_path: Path, mode: CotMode, out_path: Path, endpoint: ChatEndpoint | None, max_in_flight: int = 4
) -> dict[str, Any]:
    records = read_manifest(manifest_path)
    summary = asyncio.run(generate_cot(records, mode, out_path, endpoint, max_in_flight))
    return summary.to_dict()


def schedule_stage(
    explicit_path: Path, implicit_path: Path, steps: int, seed: int, out_path: Path, batch_size: int = 8
) -> dict[str, Any]:
    explicit = read_jsonl(explicit_path, CotSample)
    implicit = read_jsonl(implicit_path, CotSample)
    stream = emit_schedule(explicit, implicit, Schedule(total_steps=steps, seed=seed), batch_size)
    write_jsonl(stream, out_path)
    explicit_batches = sum(1 for batch in stream if batch.mode is CotMode.EXPLICIT)
    return {"steps": steps, "seed": seed, "explicit_batches": explicit_batches}


def loss_check_stage(
    batch_path: Path, frames_path: Path | None, weights: LossWeights, eps: float = 1e-5
) -> dict[str, float]:
    batch = load_batch(batch_path)
    frames, utterance = load_pairs(frames_path) if frames_path else (None, None)
    return loss_summary(batch, frames, utterance, weights, eps)


def evaluate_stage(
    refs_path: Path, hyps_path: Path, out_path: Path, endpoint: ChatEndpoint | None = None
) -> dict[str, Any]:
    references = read_manifest(refs_path)
    hypotheses = read_jsonl(hyps_path, Hypothesis)
    extractor = RemoteExtractor(endpoint) if endpoint is not None else extract_label
    report = score_freeform(references, hypotheses, extractor).to_dict()
    if isinstance(extractor, RemoteExtractor):
        report["extractor_failures"] = extractor.failures
    write_json(report, out_path)
    return report


def report_stage(manifest_path: Path, out_path: Path, chart_dir: Path | None = None) -> dict[str, Any]:
    report = distribution_report(read_manifest(manifest_path))
    payload = report.to_dict()
    write_json(payload, out_path)
    if chart_dir is not None:
        write_distribution_charts(report, chart_dir)
    return payload
