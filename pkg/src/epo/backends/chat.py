"""Client for chat-style text-generation services plus strategist/actor adapters.

Wire format: ``POST {endpoint}`` with ``{"model", "temperature", "messages"}``;
the reply text is read from a configurable dotted JSON path.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import httpx
import numpy as np

from epo.backends.base import ActorContext, StrategistContext
from epo.core import Behavior, PromptTemplate, Strategy, TemplateRole

log = logging.getLogger(__name__)

ROLES = frozenset({"system", "user", "assistant"})
DEFAULT_RESPONSE_PATH = "choices.0.message.content"


class ChatError(RuntimeError):
    pass


class ChatTransportError(ChatError):
    """The service could not be reached after all retries."""

    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class ChatServiceError(ChatError):
    """The service answered with a non-2xx status or an unusable body."""

    def __init__(self, status: int, body: str, message: str | None = None):
        super().__init__(message or f"chat service returned HTTP {status}: {body[:200]}")
        self.status = status
        self.body = body


def extract_path(payload: Any, path: str) -> Any:
    node = payload
    for part in path.split("."):
        if isinstance(node, list):
            node = node[int(part)]
        else:
            node = node[part]
    return node


def check_messages(messages: Sequence[Mapping[str, Any]]) -> list[dict[str, str]]:
    if not messages:
        raise ValueError("messages must be non-empty")
    out = []
    for i, m in enumerate(messages):
        role, content = m.get("role"), m.get("content")
        if role not in ROLES or not isinstance(content, str):
            raise ValueError(f"message {i} needs role in {sorted(ROLES)} and string content")
        out.append({"role": role, "content": content})
    return out


@dataclass
class ChatServiceClient:
    endpoint: str
    model: str
    temperature: float = 0.7
    timeout: float = 30.0
    max_retries: int = 3
    api_key: str | None = None
    response_path: str = DEFAULT_RESPONSE_PATH
    max_in_flight: int = 4
    backoff_base: float = 0.5
    jitter: float = 0.2
    transport: httpx.BaseTransport | None = None
    sleep: Callable[[float], None] = time.sleep
    seed: int | None = None
    _gate: threading.Semaphore = field(init=False, repr=False)
    _jitter_rng: random.Random = field(init=False, repr=False)
    _http: httpx.Client = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self._gate = threading.Semaphore(self.max_in_flight)
        self._jitter_rng = random.Random(self.seed)
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        self._http = httpx.Client(timeout=self.timeout, transport=self.transport, headers=headers)

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> ChatServiceClient:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def backoff(self, attempt: int) -> float:
        base = self.backoff_base * 2**attempt
        return base * (1.0 + self._jitter_rng.uniform(-self.jitter, self.jitter))

    def complete(self, messages: Sequence[Mapping[str, Any]], temperature: float | None = None) -> str:
        body = {
            "model": self.model,
            "temperature": self.temperature if temperature is None else temperature,
            "messages": check_messages(messages),
        }
        last: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self.sleep(self.backoff(attempt - 1))
            try:
                with self._gate:
                    resp = self._http.post(self.endpoint, json=body)
            except httpx.TransportError as exc:
                log.warning("chat transport error (attempt %d): %s", attempt + 1, exc)
                last = exc
                continue
            if resp.status_code >= 500:
                log.warning("chat service HTTP %d (attempt %d)", resp.status_code, attempt + 1)
                last = ChatServiceError(resp.status_code, resp.text)
                continue
            if resp.status_code >= 300:
                raise ChatServiceError(resp.status_code, resp.text)
            try:
                text = extract_path(resp.json(), self.response_path)
            except (ValueError, KeyError, IndexError, TypeError):
                raise ChatServiceError(
                    resp.status_code, resp.text, f"no text at {self.response_path!r} in response"
                ) from None
            if not isinstance(text, str):
                raise ChatServiceError(resp.status_code, resp.text, f"non-text value at {self.response_path!r}")
            return text
        if isinstance(last, ChatServiceError):
            raise last
        raise ChatTransportError(f"chat request failed after {self.max_retries + 1} attempts: {last}", self.max_retries + 1)

    def digest(self) -> str:
        tag = json.dumps([self.endpoint, self.model, self.temperature, self.response_path])
        return hashlib.sha256(tag.encode()).hexdigest()


def chat_complete(client: ChatServiceClient, messages: Sequence[Mapping[str, Any]]) -> str:
    return client.complete(messages)


# ---------------------------------------------------------------------------
# prompt rendering


def render_history(history: Sequence[tuple[Any, Any]]) -> str:
    if not history:
        return "(none)"
    return "\n".join(f"[{obs.turn_index}] observation: {obs.content}\n    action: {beh.content}" for obs, beh in history)


def render_strategies(strategies: Sequence[Strategy | None]) -> str:
    lines = [f"{i}. {s.rendered if s else '(none)'}" for i, s in enumerate(strategies, 1)]
    return "\n".join(lines) if lines else "(none)"


def _first_line(text: str) -> str:
    for line in text.strip().splitlines():
        line = line.strip()
        if line:
            return line.removeprefix("Strategy:").strip() or line
    return ""


class ChatStrategist:
    """Strategist served by a chat model. Training happens server-side, so ``update`` is unsupported."""

    def __init__(self, client: ChatServiceClient, templates: Mapping[TemplateRole, PromptTemplate]):
        self.client = client
        self.template = templates[TemplateRole.STRATEGIST_SYS]

    def _messages(self, ctx: StrategistContext) -> list[dict[str, str]]:
        system = self.template.render(
            goal=ctx.goal.description,
            history=render_history(ctx.history),
            strategies=render_strategies(ctx.strategies),
            observation=ctx.observation.content,
        )
        return [{"role": "system", "content": system}, {"role": "user", "content": ctx.observation.content}]

    def _ask(self, ctx: StrategistContext, temperature: float | None) -> Strategy:
        text = _first_line(self.client.complete(self._messages(ctx), temperature))
        if not text:
            raise ChatServiceError(200, "", "strategist returned an empty strategy")
        return Strategy(tuple(text.split()), None, text)

    def sample(self, context: StrategistContext, rng: np.random.Generator) -> Strategy:
        return self._ask(context, None)

    def greedy_decode(self, context: StrategistContext) -> Strategy:
        return self._ask(context, 0.0)

    def logprobs(self, context: StrategistContext, tokens: Sequence[str | int]) -> list[float]:
        raise NotImplementedError("chat strategists do not expose token log-probabilities")

    def update(self, batch: Any, step_size: float) -> str:
        raise NotImplementedError("chat strategists are trained outside this package")

    def version(self) -> str:
        return f"chat:{self.client.model}"

    def param_digest(self) -> str:
        return self.client.digest()


class ChatActor:
    """Frozen actor served by a chat model."""

    def __init__(self, client: ChatServiceClient, templates: Mapping[TemplateRole, PromptTemplate]):
        self.client = client
        self.template = templates[TemplateRole.ACTOR_SYS]

    def act(self, context: ActorContext, state: Any, participant_id: str) -> Behavior:
        system = self.template.render(
            goal=context.goal.description,
            history=render_history(context.history),
            strategies=render_strategies(context.strategies),
            observation=context.observation.content,
        )
        text = self.client.complete(
            [{"role": "system", "content": system}, {"role": "user", "content": context.observation.content}]
        ).strip()
        return Behavior(text or "(no action)", participant_id)

    def digest(self) -> str:
        h = hashlib.sha256(self.client.digest().encode())
        h.update(self.template.template.encode())
        return h.hexdigest()
