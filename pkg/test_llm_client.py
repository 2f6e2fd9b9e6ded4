import pytest
import requests

from llm_client import API_KEY_ENV, ChatEndpoint, TransportError
from metrics import EXTRACTION_PROMPT
from stub_llm import FALLBACK_REPLY, reply_for


def test_health_endpoint(stub_server):
    response = requests.get(f"{stub_server}/health", timeout=5)

    assert response.status_code == 200
    assert response.json() == {"status": "healthy"}


def test_complete_returns_assistant_text(chat_url):
    prompt = "Here is an example: ‘The speaker spoke slowly.’ Ensure including all speech features."

    assert ChatEndpoint(chat_url).complete(prompt) == "The speaker spoke slowly."


def test_complete_without_example(chat_url):
    assert ChatEndpoint(chat_url).complete("hello") == FALLBACK_REPLY


def test_retries_with_backoff_then_fails(unused_url):
    delays = []
    endpoint = ChatEndpoint(unused_url, attempts=3, backoff_s=0.5, sleep=delays.append)

    with pytest.raises(TransportError, match="after 3 attempt"):
        endpoint.complete("hello")
    assert delays == [0.5, 1.0]


def test_client_errors_are_not_retried(stub_server):
    delays = []
    endpoint = ChatEndpoint(f"{stub_server}/v1/missing", sleep=delays.append)

    with pytest.raises(TransportError, match="404"):
        endpoint.complete("hello")
    assert delays == []


def test_api_key_from_environment(monkeypatch):
    monkeypatch.setenv(API_KEY_ENV, "secret-token")

    endpoint = ChatEndpoint("http://127.0.0.1:1/v1/chat/completions")

    assert endpoint._headers()["Authorization"] == "Bearer secret-token"
    assert "secret-token" not in repr(endpoint)


def test_no_key_no_header(monkeypatch):
    monkeypatch.delenv(API_KEY_ENV, raising=False)

    assert "Authorization" not in ChatEndpoint("http://127.0.0.1:1/")._headers()


def test_attempts_must_be_positive():
    with pytest.raises(ValueError):
        ChatEndpoint("http://127.0.0.1:1/", attempts=0)


def test_stub_answers_extraction_prompts():
    assert reply_for(f"{EXTRACTION_PROMPT}\n\nThe emotion was inferred to be fear.") == "fear"
    assert reply_for(f"{EXTRACTION_PROMPT}\n\nNo idea.") == "unknown"
