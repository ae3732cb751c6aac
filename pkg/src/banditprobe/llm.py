"""Chat-completion client for LLM participants.

The prompt protocol is fixed: one system message describing the planet game,
one user message listing the trial history, ``max_tokens=1``, and a strict
parse of the returned token. Any backend that turns a chat payload into a
string fits behind :class:`ChatClient`; two ship here, an OpenAI-compatible
HTTP backend and a scripted mock.
"""

import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

from .bandit import Choice

logger = logging.getLogger(__name__)

SYSTEM_PROMPT = (
    "You are a space explorer in a game. "
    "Your task is to choose between visiting Planet X or Planet Y in each round, "
    "aiming to find as many gold coins as possible. "
    "The probability of finding gold coins on each planet is unknown at the start, "
    "but you can learn and adjust your strategy based on the outcomes of your previous visits. "
    "Respond with 'X' for Planet X or 'Y' for Planet Y."
)

HISTORY_HEADER = "Your previous space travels went as follows:"
_TRIAL_RE = re.compile(r"in Trial (\d+)\?")


@dataclass(frozen=True)
class DecodingConfig:
    temperature: float
    top_p: float
    label: str

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p must lie in (0, 1], got {self.top_p}")


DECODING_PRESETS = {
    "Strict": DecodingConfig(0.0, 0.5, "Strict"),
    "Moderate": DecodingConfig(1.0, 0.5, "Moderate"),
    "Default-like": DecodingConfig(1.0, 1.0, "Default-like"),
    "Exploratory": DecodingConfig(2.0, 1.0, "Exploratory"),
}


@dataclass(frozen=True)
class ProviderConfig:
    endpoint_url: str
    model_name: str
    api_key_env_var: str = ""
    max_retries: int = 3
    timeout: float = 30.0
    max_in_flight: int = 4
    min_interval: float = 0.0

    def api_key(self) -> str:
        if not self.api_key_env_var:
            return ""
        key = os.environ.get(self.api_key_env_var)
        if key is None:
            raise AuthenticationError(f"environment variable {self.api_key_env_var} is not set")
        return key


@dataclass(frozen=True)
class Prompt:
    system_text: str
    user_text: str


@dataclass(frozen=True)
class ChatExchange:
    system_text: str
    user_text: str
    raw_response: str
    parsed: Choice
    latency: float  # milliseconds
    attempts: int = 1


class ProviderError(RuntimeError):
    pass


class TransientError(ProviderError):
    """Retryable failure: transport error, timeout, rate limit, 5xx."""


class AuthenticationError(ProviderError):
    pass


class TransportExhausted(ProviderError):
    pass


class BudgetExhausted(ProviderError):
    pass


def _outcome(reward: int) -> str:
    return "100 gold coins" if reward else "nothing"


def render_prompt(history, next_trial: int) -> Prompt:
    """Render the chat messages for trial ``next_trial`` given the past trials."""
    if next_trial != len(history) + 1:
        raise ValueError(f"next_trial must be {len(history) + 1}, got {next_trial}")
    lines = []
    if history:
        lines.append(HISTORY_HEADER)
        for rec in history:
            if rec.choice.is_valid:
                lines.append(f"- In Trial {rec.trial}, you went to Planet {rec.choice.value} and found {_outcome(rec.reward)}.")
            else:
                lines.append(f"- In Trial {rec.trial}, you did not choose a valid planet and found nothing.")
        lines.append("")
    lines.append(f"Q: Which planet do you want to go to in Trial {next_trial}?")
    lines.append("A: Planet")
    return Prompt(SYSTEM_PROMPT, "\n".join(lines))


def parse_choice(raw) -> Choice:
    if not isinstance(raw, str):
        return Choice.INVALID
    token = raw.strip()
    if token == "X":
        return Choice.X
    if token == "Y":
        return Choice.Y
    return Choice.INVALID


def chat_payload(model: str, decoding: DecodingConfig, prompt: Prompt) -> dict:
    return {
        "model": model,
        "messages": [
            {"role": "system", "content": prompt.system_text},
            {"role": "user", "content": prompt.user_text},
        ],
        "temperature": decoding.temperature,
        "top_p": decoding.top_p,
        "max_tokens": 1,
    }


class HTTPBackend:
    """OpenAI-style ``/chat/completions`` over httpx.

    DeepSeek, OpenAI and Gemini's OpenAI-compatible endpoint all accept this
    payload; point ``endpoint_url`` at the full completions URL.
    """

    def __init__(self, provider: ProviderConfig, transport=None):
        import httpx

        self._httpx = httpx
        self.provider = provider
        self._client = httpx.Client(timeout=provider.timeout, transport=transport)

    def send(self, payload: dict) -> str:
        httpx = self._httpx
        headers = {"Content-Type": "application/json"}
        key = self.provider.api_key()
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self._client.post(self.provider.endpoint_url, json=payload, headers=headers)
        except httpx.TransportError as exc:
            raise TransientError(f"{type(exc).__name__}: {exc}") from None
        if resp.status_code in (401, 403):
            raise AuthenticationError(f"HTTP {resp.status_code} from {self.provider.endpoint_url}")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise ProviderError(f"unexpected response body: {resp.text[:200]}") from None
        return content or ""


class MockBackend:
    """Scripted provider: trial ``k`` answers with ``tokens[k - 1]``.

    The trial index is read from the rendered prompt, so answers do not shift
    when calls are retried. ``failures`` maps a trial index to how many
    transient errors precede its answer. Trials beyond the script get "".
    """

    def __init__(self, tokens, failures: Optional[dict] = None, auth_fail: bool = False):
        self.tokens = list(tokens)
        self.failures = dict(failures or {})
        self.auth_fail = auth_fail
        self.calls = 0
        self.payloads = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path, **kwargs) -> "MockBackend":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text.splitlines(), **kwargs)

    def send(self, payload: dict) -> str:
        with self._lock:
            self.calls += 1
            self.payloads.append(payload)
            if self.auth_fail:
                raise AuthenticationError("mock: bad credentials")
            m = _TRIAL_RE.search(payload["messages"][-1]["content"])
            trial = int(m.group(1)) if m else 1
            if self.failures.get(trial, 0) > 0:
                self.failures[trial] -= 1
                raise TransientError(f"mock: scripted failure on trial {trial}")
            if trial <= len(self.tokens):
                return self.tokens[trial - 1]
            return ""


class ChatClient:
    """Retrying, rate-limited front end over a backend. Safe to share across threads."""

    def __init__(
        self,
        provider: ProviderConfig,
        backend=None,
        *,
        backoff: float = 0.5,
        max_requests: Optional[int] = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ):
        if provider.max_retries < 1:
            raise ValueError("max_retries counts attempts and must be >= 1")
        self.provider = provider
        self.backend = backend if backend is not None else HTTPBackend(provider)
        self.backoff = backoff
        self.max_requests = max_requests
        self.n_requests = 0
        self._sleep = sleep
        self._clock = clock
        self._slots = threading.BoundedSemaphore(max(1, provider.max_in_flight))
        self._pace = threading.Lock()
        self._last_send = None

    def _send(self, payload: dict) -> str:
        with self._slots:
            with self._pace:
                if self.max_requests is not None and self.n_requests >= self.max_requests:
                    raise BudgetExhausted(f"request budget of {self.max_requests} spent")
                self.n_requests += 1
                if self._last_send is not None and self.provider.min_interval > 0:
                    wait = self.provider.min_interval - (self._clock() - self._last_send)
                    if wait > 0:
                        self._sleep(wait)
                self._last_send = self._clock()
            return self.backend.send(payload)

    def complete(self, decoding: DecodingConfig, prompt: Prompt) -> ChatExchange:
        payload = chat_payload(self.provider.model_name, decoding, prompt)
        for attempt in range(1, self.provider.max_retries + 1):
            start = self._clock()
            try:
                raw = self._send(payload)
            except TransientError as exc:
                logger.warning("attempt %d/%d failed: %s", attempt, self.provider.max_retries, exc)
                if attempt == self.provider.max_retries:
                    raise TransportExhausted(f"gave up after {attempt} attempts: {exc}") from exc
                self._sleep(self.backoff * 2 ** (attempt - 1))
                continue
            latency = (self._clock() - start) * 1000.0
            return ChatExchange(prompt.system_text, prompt.user_text, raw, parse_choice(raw), latency, attempt)
        raise AssertionError("unreachable")

    def complete_or_invalid(self, decoding: DecodingConfig, prompt: Prompt) -> ChatExchange:
        """Like :meth:`complete`, but an exhausted retry budget yields an Invalid exchange."""
        try:
            return self.complete(decoding, prompt)
        except TransportExhausted as exc:
            logger.error("trial coded Invalid: %s", exc)
            return ChatExchange(prompt.system_text, prompt.user_text, "", Choice.INVALID, 0.0,
                                self.provider.max_retries)


def complete(provider: ProviderConfig, decoding: DecodingConfig, prompt: Prompt, backend=None, **kwargs) -> ChatExchange:
    return ChatClient(provider, backend, **kwargs).complete(decoding, prompt)
