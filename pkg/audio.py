import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import soundfile as sf

log = logging.getLogger(__name__)

SUPPORTED_RATES = frozenset({8000, 16000, 22050, 24000, 44100, 48000})
SUPPORTED_FORMATS = frozenset({"WAV", "WAVEX"})
SUPPORTED_SUBTYPES = frozenset({"PCM_16", "FLOAT"})


class UnsupportedFormatError(ValueError):
    """The file is not a PCM16 or float32 RIFF WAV at a supported rate."""


class AllSilentError(ValueError):
    """No frame of the waveform rises above the silence threshold."""


class TooShortError(ValueError):
    """The waveform is shorter than the analysis window it is given to."""


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono float64 samples in [-1, 1] at one of the supported rates."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self) -> None:
        if self.sample_rate_hz not in SUPPORTED_RATES:
            raise UnsupportedFormatError(
                f"sample rate {self.sample_rate_hz} Hz not in {sorted(SUPPORTED_RATES)}"
            )
        if self.samples.ndim != 1:
            raise ValueError(f"expected mono samples, got shape {self.samples.shape}")

    @property
    def num_samples(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration_s(self) -> float:
        return self.num_samples / self.sample_rate_hz

    def scaled(self, gain: float) -> "Waveform":
        return Waveform(self.samples * gain, self.sample_rate_hz)


def decode_wav(path: str | Path) -> Waveform:
    """
    Decode a PCM16 / float32 WAV file to mono.

    Stereo is folded to mono by averaging the channels.
    """
    path = Path(path)
    try:
        info = sf.info(str(path))
    except sf.LibsndfileError as e:
        raise UnsupportedFormatError(f"{path.name}: cannot open as WAV ({e})") from e

    if info.format not in SUPPORTED_FORMATS:
        raise UnsupportedFormatError(f"{path.name}: container {info.format} is not RIFF WAV")
    if info.subtype not in SUPPORTED_SUBTYPES:
        raise UnsupportedFormatError(
            f"{path.name}: encoding {info.subtype} ({info.subtype_info}) is not PCM_16 or FLOAT"
        )

    data, rate = sf.read(str(path), dtype="float64", always_2d=True)
    mono = data.mean(axis=1) if data.shape[1] > 1 else data[:, 0]
    return Waveform(np.clip(mono, -1.0, 1.0), int(rate))


def write_wav(path: str | Path, waveform: Waveform, subtype: str = "PCM_16") -> None:
    if subtype not in SUPPORTED_SUBTYPES:
        raise UnsupportedFormatError(f"cannot write subtype {subtype}")
    sf.write(str(path), waveform.samples, waveform.sample_rate_hz, subtype=subtype)


def frame_bounds(num_samples: int, sample_rate_hz: int, frame_ms: float, hop_ms: float) -> tuple[int, int, np.ndarray]:
    """Frame length, hop length and frame start offsets covering the whole signal."""
    frame_len = max(1, round(sample_rate_hz * frame_ms / 1000.0))
    hop = max(1, round(sample_rate_hz * hop_ms / 1000.0))
    if num_samples < frame_len:
        return frame_len, hop, np.array([0], dtype=np.int64)
    starts = np.arange(0, num_samples - frame_len + 1, hop, dtype=np.int64)
    # the last hop may leave a tail shorter than a frame
    if starts[-1] + frame_len < num_samples:
        starts = np.append(starts, num_samples - frame_len)
    return frame_len, hop, starts


def frame_rms_db(w: Waveform, frame_ms: float = 25.0, hop_ms: float = 10.0) -> tuple[np.ndarray, np.ndarray, int]:
    """Per-frame RMS level in dBFS, with frame starts and frame length."""
    frame_len, _, starts = frame_bounds(w.num_samples, w.sample_rate_hz, frame_ms, hop_ms)
    padded = w.samples
    if w.num_samples < frame_len:
        padded = np.pad(w.samples, (0, frame_len - w.num_samples))
    frames = np.lib.stride_tricks.sliding_window_view(padded, frame_len)[starts]
    rms = np.sqrt(np.mean(frames**2, axis=1))
    with np.errstate(divide="ignore"):
        level_db = 20.0 * np.log10(rms)
    return level_db, starts, frame_len


@dataclass(frozen=True, eq=False)
class TrimResult:
    trimmed: Waveform
    leading_s: float
    trailing_s: float


def trim_silence(
    w: Waveform, threshold_db: float = -40.0, frame_ms: float = 25.0, hop_ms: float = 10.0
) -> TrimResult:
    """
    Strip leading and trailing silence with a frame-RMS gate.

    Frames whose RMS exceeds threshold_db are voiced. The kept span runs from
    the first voiced frame to the end of the last one, and its edges are then
    tightened to the first and last sample inside those frames whose
    magnitude exceeds the threshold amplitude. Interior silence is kept.

    Raises:
        AllSilentError: If no frame is voiced.
    """
    if w.num_samples == 0:
        raise AllSilentError("empty waveform")

    level_db, starts, frame_len = frame_rms_db(w, frame_ms, hop_ms)
    voiced = np.flatnonzero(level_db > threshold_db)
    if voiced.size == 0:
        raise AllSilentError(
            f"no frame above {threshold_db} dBFS (peak frame {np.max(level_db):.1f} dBFS)"
        )

    amplitude = 10.0 ** (threshold_db / 20.0)
    first_start = int(starts[voiced[0]])
    last_start = int(starts[voiced[-1]])
    last_end = min(last_start + frame_len, w.num_samples)

    # a frame with RMS above the amplitude always holds a sample above it
    head = np.flatnonzero(np.abs(w.samples[first_start : first_start + frame_len]) > amplitude)
    tail = np.flatnonzero(np.abs(w.samples[last_start:last_end]) > amplitude)
    begin = first_start + int(head[0])
    end = last_start + int(tail[-1]) + 1

    rate = w.sample_rate_hz
    trimmed = Waveform(w.samples[begin:end].copy(), rate)
    return TrimResult(trimmed=trimmed, leading_s=begin / rate, trailing_s=(w.num_samples - end) / rate)
