import logging
import os
import time
from collections.abc import Callable
from dataclasses import dataclass, field

import requests

log = logging.getLogger(__name__)

API_KEY_ENV = "EMOCOT_API_KEY"
RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


class TransportError(RuntimeError):
    """The chat endpoint could not be reached or answered with an error."""


def _api_key_from_env() -> str | None:
    return os.environ.get(API_KEY_ENV) or None


@dataclass
class ChatEndpoint:
    """
    OpenAI-style chat-completion endpoint.

    One POST per prompt with bounded retries: connection errors, timeouts and
    429/5xx answers are retried with exponential backoff; other HTTP errors
    fail immediately.
    """

    url: str
    model: str = "glm-4-9b-chat"
    temperature: float = 0.7
    attempts: int = 3
    backoff_s: float = 0.5
    timeout_s: float = 30.0
    api_key: str | None = field(default_factory=_api_key_from_env, repr=False)
    sleep: Callable[[float], None] = field(default=time.sleep, repr=False)

    def __post_init__(self) -> None:
        if self.attempts < 1:
            raise ValueError(f"attempts must be >= 1, got {self.attempts}")

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json", "Accept": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def complete(self, prompt: str) -> str:
        """
        Send one user message and return the assistant's text.

        An empty or missing message content comes back as "".

        Raises:
            TransportError: When every attempt failed or the server refused
                the request.
        """
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        }
        last_problem = "no attempt made"

        with requests.Session() as session:
            for attempt in range(self.attempts):
                if attempt:
                    delay = self.backoff_s * 2 ** (attempt - 1)
                    log.debug(f"🔁 Retry {attempt}/{self.attempts - 1} in {delay:.2f}s ({last_problem})")
                    self.sleep(delay)
                try:
                    response = session.post(
                        self.url, json=payload, headers=self._headers(), timeout=(5, self.timeout_s)
                    )
                except (requests.ConnectionError, requests.Timeout) as e:
                    last_problem = f"{type(e).__name__}: {e}"
                    continue

                if response.status_code in RETRYABLE_STATUS:
                    last_problem = f"HTTP {response.status_code}"
                    continue
                if response.status_code >= 400:
                    snippet = response.text[:300] if response.text else "(empty body)"
                    raise TransportError(f"{self.url} answered {response.status_code}: {snippet}")
                return self._content(response)

        raise TransportError(f"{self.url} failed after {self.attempts} attempt(s): {last_problem}")

    def _content(self, response: requests.Response) -> str:
        try:
            body = response.json()
            content = body["choices"][0]["message"].get("content")
        except (ValueError, KeyError, IndexError, TypeError, AttributeError) as e:
            raise TransportError(f"{self.url} returned an unexpected body: {response.text[:300]}") from e
        return (content or "").strip()
