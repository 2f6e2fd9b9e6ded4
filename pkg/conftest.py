import socket
import threading
import time
from pathlib import Path

import numpy as np
import pytest
import uvicorn

import stub_llm
from audio import Waveform, write_wav
from features import AcousticAttributes, Level
from manifest import Emotion, UtteranceRecord

REPO_ROOT = Path(__file__).parent


def sine(freq_hz: float, seconds: float, rate: int = 16000, amplitude: float = 0.5) -> Waveform:
    t = np.arange(round(seconds * rate)) / rate
    return Waveform(amplitude * np.sin(2 * np.pi * freq_hz * t), rate)


def harmonic(f0_hz: float, seconds: float, rate: int = 16000, amplitude: float = 0.5) -> Waveform:
    t = np.arange(round(seconds * rate)) / rate
    tone = sum(np.sin(2 * np.pi * k * f0_hz * t) / k for k in range(1, 5))
    return Waveform(amplitude * tone / np.max(np.abs(tone)), rate)


def silence(seconds: float, rate: int = 16000) -> Waveform:
    return Waveform(np.zeros(round(seconds * rate)), rate)


def concat(*parts: Waveform) -> Waveform:
    return Waveform(np.concatenate([p.samples for p in parts]), parts[0].sample_rate_hz)


def record(
    id: str = "utt-1",
    emotion: Emotion | None = Emotion.ANGER,
    levels: tuple[Level, Level, Level] | None = None,
    **fields,
) -> UtteranceRecord:
    """Record with agreeing annotations; levels are (rate, energy, pitch)."""
    data = {
        "id": id,
        "audio_path": f"wavs/{id}.wav",
        "transcript": "I told you never to touch my things again",
        "language": "en",
        "speech_emotion": emotion.value if emotion else "angry",
        "text_emotion": emotion.value if emotion else "angry",
        "fused_emotion": emotion,
        "duration_s": 2.0,
    }
    if levels is not None:
        data["attributes"] = AcousticAttributes(
            pitch_mean_hz=200.0,
            loudness_lufs=-20.0,
            speaking_rate_pps=12.0,
            rate_level=levels[0],
            energy_level=levels[1],
            pitch_level=levels[2],
        )
    data.update(fields)
    return UtteranceRecord(**data)


@pytest.fixture
def wav_factory(tmp_path):
    def write(name: str, waveform: Waveform, subtype: str = "PCM_16") -> Path:
        path = tmp_path / name
        path.parent.mkdir(parents=True, exist_ok=True)
        write_wav(path, waveform, subtype)
        return path

    return write


def _free_port() -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture
def unused_url() -> str:
    return f"http://127.0.0.1:{_free_port()}/v1/chat/completions"


@pytest.fixture(scope="session")
def stub_server():
    """Base URL of the stub chat server running in a background thread."""
    port = _free_port()
    server = uvicorn.Server(uvicorn.Config(stub_llm.app, host="127.0.0.1", port=port, log_level="warning"))
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 10
    while not server.started:
        if time.monotonic() > deadline:
            raise RuntimeError("stub chat server did not start")
        time.sleep(0.05)
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=5)


@pytest.fixture
def chat_url(stub_server) -> str:
    return f"{stub_server}/v1/chat/completions"
