"""
Acoustic attribute extraction.

Computes the three utterance-level attributes used to describe how an
utterance was spoken: mean pitch (Hz, difference-function estimator),
integrated loudness (LUFS, BS.1770 gating) and speaking rate (phonemes per
second over the trimmed duration).
"""

import logging
import math
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, NamedTuple, Protocol

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import signal

from audio import TooShortError, Waveform, decode_wav, trim_silence

if TYPE_CHECKING:
    from manifest import UtteranceRecord

log = logging.getLogger(__name__)


class Level(str, Enum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"

    @property
    def rank(self) -> int:
        return _LEVEL_RANK[self]


_LEVEL_RANK = {Level.LOW: 0, Level.MEDIUM: 1, Level.HIGH: 2}


class AcousticAttributes(BaseModel):
    """
    Continuous acoustic attributes of one utterance plus their levels.

    The levels stay unset until the corpus statistics are known.
    """

    model_config = ConfigDict(frozen=True)

    pitch_mean_hz: float | None = Field(default=None, ge=50.0, le=600.0)
    loudness_lufs: float
    speaking_rate_pps: float = Field(gt=0.0)
    pitch_level: Level | None = None
    energy_level: Level | None = None
    rate_level: Level | None = None


class SilenceError(ValueError):
    """Every loudness block was removed by the gates."""


class PhonemeCountError(ValueError):
    pass


class PitchFrame(NamedTuple):
    time_s: float
    f0_hz: float | None


# --- pitch ---------------------------------------------------------------


def _cmndf(frame: np.ndarray, max_lag: int) -> np.ndarray:
    """Cumulative-mean-normalized difference function for lags 0..max_lag."""
    n = frame.shape[0]
    energy = np.concatenate(([0.0], np.cumsum(frame**2)))
    acf = signal.correlate(frame, frame, mode="full")[n - 1 : n + max_lag]
    lags = np.arange(max_lag + 1)
    # window shrinks with lag: sum over j < n - tau of (x_j - x_{j+tau})^2
    diff = energy[n - lags] + (energy[n] - energy[lags]) - 2.0 * acf
    diff = np.maximum(diff, 0.0)

    out = np.ones(max_lag + 1)
    running = np.cumsum(diff[1:])
    nonzero = running > 0
    out[1:][nonzero] = diff[1:][nonzero] * lags[1:][nonzero] / running[nonzero]
    return out


def _frame_f0(frame: np.ndarray, rate: int, min_lag: int, max_lag: int, threshold: float) -> float | None:
    if not np.any(frame):
        return None
    d = _cmndf(frame, max_lag)
    below = np.flatnonzero(d[min_lag : max_lag + 1] < threshold)
    if below.size == 0:
        return None

    tau = min_lag + int(below[0])
    while tau + 1 <= max_lag and d[tau + 1] < d[tau]:
        tau += 1

    # parabolic refinement around the dip
    shift = 0.0
    if 0 < tau < max_lag:
        left, mid, right = d[tau - 1], d[tau], d[tau + 1]
        curvature = left - 2.0 * mid + right
        if curvature > 0:
            shift = 0.5 * (left - right) / curvature
    return rate / (tau + shift)


def pitch_contour(
    w: Waveform,
    fmin_hz: float = 50.0,
    fmax_hz: float = 600.0,
    frame_ms: float = 25.0,
    hop_ms: float = 10.0,
    threshold: float = 0.15,
) -> list[PitchFrame]:
    """
    Estimate f0 per frame with a normalized difference function.

    A frame is voiced when the normalized difference dips below threshold
    inside the search range; the reported f0 always lies in [fmin_hz, fmax_hz].

    Raises:
        TooShortError: If the waveform is shorter than one frame.
    """
    rate = w.sample_rate_hz
    frame_len = round(rate * frame_ms / 1000.0)
    hop = round(rate * hop_ms / 1000.0)
    if w.num_samples < frame_len:
        raise TooShortError(
            f"{w.duration_s * 1000:.1f} ms of audio is shorter than one {frame_ms:g} ms pitch frame"
        )

    max_lag = min(math.ceil(rate / fmin_hz), frame_len - 1)
    min_lag = max(1, math.floor(rate / fmax_hz))
    frames = np.lib.stride_tricks.sliding_window_view(w.samples, frame_len)[::hop]

    contour: list[PitchFrame] = []
    for index, frame in enumerate(frames):
        f0 = _frame_f0(frame, rate, min_lag, max_lag, threshold)
        if f0 is not None and not fmin_hz <= f0 <= fmax_hz:
            f0 = None
        contour.append(PitchFrame((index * hop + frame_len / 2) / rate, f0))
    return contour


def pitch_mean(contour: list[PitchFrame]) -> float | None:
    voiced = [frame.f0_hz for frame in contour if frame.f0_hz is not None]
    if not voiced:
        return None
    return float(np.mean(voiced))


# --- loudness ------------------------------------------------------------

BLOCK_S = 0.4
BLOCK_OVERLAP = 0.75
ABSOLUTE_GATE_LUFS = -70.0
RELATIVE_GATE_LU = -10.0
REFERENCE_RATE_HZ = 48000


def k_weighting(rate: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """
    K-weighting as two biquads (high shelf, then high pass) for any rate.

    Coefficients come from the analog prototype parameters of BS.1770 so that
    48 kHz reproduces the tabulated filter and other rates stay consistent.
    The tabulated high pass keeps an unnormalized [1, -2, 1] numerator, so its
    passband gain is its a0; other rates scale the numerator to the 48 kHz gain.
    """
    # stage 1: high shelf
    f0, gain_db, q = 1681.9744509555319, 3.99984385397, 0.7071752369554193
    k = math.tan(math.pi * f0 / rate)
    vh = 10.0 ** (gain_db / 20.0)
    vb = vh**0.499666774155
    a0 = 1.0 + k / q + k * k
    shelf_b = np.array([(vh + vb * k / q + k * k) / a0, 2.0 * (k * k - vh) / a0, (vh - vb * k / q + k * k) / a0])
    shelf_a = np.array([1.0, 2.0 * (k * k - 1.0) / a0, (1.0 - k / q + k * k) / a0])

    # stage 2: high pass
    f0, q = 38.13547087613982, 0.5003270373253953

    def hp_a0(fs: float) -> float:
        k = math.tan(math.pi * f0 / fs)
        return 1.0 + k / q + k * k

    k = math.tan(math.pi * f0 / rate)
    a0 = hp_a0(rate)
    hp_b = np.array([1.0, -2.0, 1.0]) * (hp_a0(REFERENCE_RATE_HZ) / a0)
    hp_a = np.array([1.0, 2.0 * (k * k - 1.0) / a0, (1.0 - k / q + k * k) / a0])
    return [(shelf_b, shelf_a), (hp_b, hp_a)]


def integrated_loudness(w: Waveform) -> float:
    """
    Gated integrated loudness in LUFS.

    Raises:
        TooShortError: If the signal is shorter than one 400 ms block.
        SilenceError: If no block passes the absolute and relative gates.
    """
    rate = w.sample_rate_hz
    block_len = round(BLOCK_S * rate)
    step = round(BLOCK_S * (1.0 - BLOCK_OVERLAP) * rate)
    if w.num_samples < block_len:
        raise TooShortError(f"{w.duration_s:.3f} s is shorter than one {BLOCK_S} s gating block")

    weighted = w.samples
    for b, a in k_weighting(rate):
        weighted = signal.lfilter(b, a, weighted)

    blocks = np.lib.stride_tricks.sliding_window_view(weighted, block_len)[::step]
    power = np.mean(blocks**2, axis=1)
    with np.errstate(divide="ignore"):
        block_lufs = -0.691 + 10.0 * np.log10(power)

    above_absolute = block_lufs > ABSOLUTE_GATE_LUFS
    if not np.any(above_absolute):
        raise SilenceError(f"all {len(power)} blocks below the {ABSOLUTE_GATE_LUFS} LUFS gate")

    relative_gate = -0.691 + 10.0 * np.log10(np.mean(power[above_absolute])) + RELATIVE_GATE_LU
    gated = above_absolute & (block_lufs > relative_gate)
    if not np.any(gated):
        raise SilenceError("all blocks removed by the relative gate")
    return float(-0.691 + 10.0 * np.log10(np.mean(power[gated])))


# --- speaking rate -------------------------------------------------------


def speaking_rate(phoneme_count: int, trimmed_duration_s: float) -> float:
    if phoneme_count <= 0:
        raise PhonemeCountError(f"phoneme count must be positive, got {phoneme_count}")
    if not trimmed_duration_s > 0:
        raise ValueError(f"trimmed duration must be > 0 s, got {trimmed_duration_s}")
    return phoneme_count / trimmed_duration_s


class Phonemizer(Protocol):
    def count(self, transcript: str, language: str) -> int: ...


_LATIN_WORD = re.compile(r"[a-z]+(?:'[a-z]+)*", re.IGNORECASE)
_VOWEL_GROUP = re.compile(r"[aeiouy]+", re.IGNORECASE)
_HAN = re.compile(r"[\u3400-\u4dbf\u4e00-\u9fff\uf900-\ufaff]")


class ScriptRulePhonemizer:
    """
    Per-script phoneme approximation.

    Latin words count one phoneme per vowel group (at least one per word);
    each Han character counts two (initial and final). Mixed text sums both.
    """

    def count(self, transcript: str, language: str) -> int:
        latin = sum(max(1, len(_VOWEL_GROUP.findall(word))) for word in _LATIN_WORD.findall(transcript))
        han = 2 * len(_HAN.findall(transcript))
        return latin + han


def count_phonemes(
    transcript: str,
    language: str,
    phoneme_count: int | None = None,
    phonemizer: Phonemizer | None = None,
) -> int:
    """
    Number of phonemes in a transcript.

    Args:
        transcript: Utterance text.
        language: Language tag of the utterance.
        phoneme_count: Count supplied by the manifest; returned as is when set.
        phonemizer: Counting strategy, the per-script rules by default.

    Raises:
        PhonemeCountError: On an empty transcript or when nothing is countable.
    """
    if phoneme_count is not None:
        if phoneme_count <= 0:
            raise PhonemeCountError(f"supplied phoneme_count must be positive, got {phoneme_count}")
        return phoneme_count
    if not transcript or not transcript.strip():
        raise PhonemeCountError("empty transcript")

    count = (phonemizer or ScriptRulePhonemizer()).count(transcript, language)
    if count <= 0:
        raise PhonemeCountError(f"no countable script in transcript {transcript!r} ({language})")
    return count


# --- per-record extraction -----------------------------------------------


@dataclass(frozen=True)
class ExtractionSettings:
    threshold_db: float = -40.0
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    pitch_min_hz: float = 50.0
    pitch_max_hz: float = 600.0
    voicing_threshold: float = 0.15


def extract_attributes(
    record: "UtteranceRecord",
    settings: ExtractionSettings = ExtractionSettings(),
    base_dir: Path | None = None,
) -> "UtteranceRecord":
    """
    Decode, trim and measure one utterance.

    Relative audio paths resolve against base_dir. Loudness and rate are
    measured on the trimmed signal. The returned record carries fresh
    attributes without levels; duration_s is left as recorded.
    """
    audio_path = Path(record.audio_path)
    if base_dir is not None and not audio_path.is_absolute():
        audio_path = base_dir / audio_path

    waveform = decode_wav(audio_path)
    trimmed = trim_silence(waveform, settings.threshold_db, settings.frame_ms, settings.hop_ms).trimmed

    contour = pitch_contour(
        trimmed,
        fmin_hz=settings.pitch_min_hz,
        fmax_hz=settings.pitch_max_hz,
        frame_ms=settings.frame_ms,
        hop_ms=settings.hop_ms,
        threshold=settings.voicing_threshold,
    )
    phonemes = count_phonemes(record.transcript, record.language, record.phoneme_count)
    attributes = AcousticAttributes(
        pitch_mean_hz=pitch_mean(contour),
        loudness_lufs=integrated_loudness(trimmed),
        speaking_rate_pps=speaking_rate(phonemes, trimmed.duration_s),
    )
    return record.model_copy(update={"attributes": attributes})
