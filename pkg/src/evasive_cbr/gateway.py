"""Clients for the embedding and chat-completion services, plus offline mocks.

The wire shapes default to the common ``/v1/chat/completions`` and
``/v1/embeddings`` endpoints; an :class:`EndpointProfile` remaps paths and the
response fields to read, which is enough to talk to an Ollama server's native
API as well.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import time
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, replace

import httpx
import numpy as np

from .errors import (
    DataError,
    EmptyVector,
    GatewayTimeout,
    MalformedResponse,
    MissingField,
    NoObjectFound,
    ServiceError,
    TransportError,
)
from .taxonomy import TEXT_VALUE_FIELDS, VALUE_FIELDS, Decision, RunMeta, parse_maneuver

log = logging.getLogger(__name__)

ENV_ENDPOINT = "EVASIVE_CBR_ENDPOINT"
ENV_TIMEOUT_MS = "EVASIVE_CBR_TIMEOUT_MS"


@dataclass(frozen=True)
class EndpointProfile:
    chat_path: str = "/v1/chat/completions"
    embed_path: str = "/v1/embeddings"
    # Dotted paths into the response JSON; integer segments index lists.
    chat_text_field: str = "choices.0.message.content"
    embed_vector_field: str = "data.0.embedding"
    max_tokens_key: str = "max_tokens"


PROFILES: dict[str, EndpointProfile] = {
    "openai": EndpointProfile(),
    "ollama": EndpointProfile(
        chat_path="/api/chat",
        embed_path="/api/embed",
        chat_text_field="message.content",
        embed_vector_field="embeddings.0",
        max_tokens_key="num_predict",
    ),
}


@dataclass(frozen=True)
class GatewayConfig:
    base_url: str = "http://localhost:11434"
    timeout_ms: int = 120_000
    max_retries: int = 2
    backoff_base_ms: int = 500
    profile: EndpointProfile = field(default_factory=EndpointProfile)

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise DataError("timeout_ms must be > 0")
        if self.max_retries < 0 or self.backoff_base_ms < 0:
            raise DataError("max_retries and backoff_base_ms must be >= 0")

    @classmethod
    def from_env(cls, **overrides) -> GatewayConfig:
        cfg = cls(**overrides)
        if os.environ.get(ENV_ENDPOINT):
            cfg = replace(cfg, base_url=os.environ[ENV_ENDPOINT])
        if os.environ.get(ENV_TIMEOUT_MS):
            cfg = replace(cfg, timeout_ms=int(os.environ[ENV_TIMEOUT_MS]))
        return cfg


@dataclass(frozen=True)
class EmbeddingRequest:
    model_id: str
    input: str

    def __post_init__(self):
        if not self.input:
            raise DataError("embedding input must be nonempty")


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        msgs = tuple(m if isinstance(m, Message) else Message(**m) for m in self.messages)
        object.__setattr__(self, "messages", msgs)
        if not msgs or msgs[0].role != "system":
            raise DataError("first chat message must have role 'system'")
        if sum(m.role == "system" for m in msgs) != 1:
            raise DataError("exactly one system message is allowed")
        if any(m.role not in ("system", "user") for m in msgs):
            raise DataError("message roles must be 'system' or 'user'")
        if self.temperature < 0 or self.max_tokens <= 0:
            raise DataError("temperature must be >= 0 and max_tokens > 0")

    @property
    def system(self) -> str:
        return self.messages[0].content

    @property
    def user(self) -> str:
        return "\n\n".join(m.content for m in self.messages if m.role == "user")


def _dig(obj, path: str):
    for part in path.split("."):
        if isinstance(obj, list) and part.lstrip("-").isdigit():
            obj = obj[int(part)]
        elif isinstance(obj, Mapping):
            obj = obj[part]
        else:
            raise KeyError(part)
    return obj


def l2_normalize(vec: Sequence[float]) -> tuple[float, ...]:
    v = np.asarray(vec, dtype=np.float64)
    n = float(np.linalg.norm(v))
    if n == 0.0 or not np.isfinite(n):
        raise MalformedResponse("embedding has zero or non-finite norm")
    return tuple(float(x) for x in v / n)


def _post_with_retry(cfg: GatewayConfig, path: str, body: dict,
                     client: httpx.Client | None = None,
                     sleep: Callable[[float], None] = time.sleep) -> dict:
    """POST ``body`` and return the decoded JSON response.

    Transport failures, timeouts and 5xx answers are retried with exponential
    backoff; ``max_retries + 1`` attempts in total.
    """
    url = cfg.base_url.rstrip("/") + path
    own = client is None
    if own:
        client = httpx.Client(timeout=cfg.timeout_ms / 1000)
    try:
        last: Exception | None = None
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                sleep(cfg.backoff_base_ms * (2 ** (attempt - 1)) / 1000)
            try:
                resp = client.post(url, json=body, timeout=cfg.timeout_ms / 1000)
            except httpx.TimeoutException as e:
                last = GatewayTimeout(f"{url}: timed out after {cfg.timeout_ms} ms ({e})")
                continue
            except httpx.TransportError as e:
                last = TransportError(f"{url}: {e}")
                continue
            if resp.status_code >= 500 or resp.status_code == 429:
                last = ServiceError(resp.status_code, resp.text)
                continue
            if resp.status_code >= 400:
                raise ServiceError(resp.status_code, resp.text)
            try:
                return resp.json()
            except ValueError:
                raise MalformedResponse(f"{url}: response is not JSON") from None
        log.warning("giving up on %s after %d attempts", url, cfg.max_retries + 1)
        raise last
    finally:
        if own:
            client.close()


def embed_text(cfg: GatewayConfig, req: EmbeddingRequest, client: httpx.Client | None = None,
               sleep: Callable[[float], None] = time.sleep) -> tuple[float, ...]:
    """Embed one text and return the L2-normalized vector."""
    data = _post_with_retry(cfg, cfg.profile.embed_path, {"model": req.model_id, "input": req.input},
                            client, sleep)
    try:
        vec = _dig(data, cfg.profile.embed_vector_field)
    except (KeyError, IndexError, TypeError):
        if isinstance(data, Mapping) and (data.get("data") == [] or data.get("embeddings") == []):
            raise EmptyVector() from None
        raise MalformedResponse(f"no {cfg.profile.embed_vector_field!r} in embedding response") from None
    if not isinstance(vec, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in vec):
        raise MalformedResponse("embedding is not a numeric array")
    if not vec:
        raise EmptyVector()
    return l2_normalize(vec)


def complete_chat(cfg: GatewayConfig, req: ChatRequest, client: httpx.Client | None = None,
                  sleep: Callable[[float], None] = time.sleep) -> str:
    """Return the generated text verbatim."""
    body = {
        "model": req.model_id,
        "messages": [{"role": m.role, "content": m.content} for m in req.messages],
        "temperature": req.temperature,
        "stream": False,
    }
    if cfg.profile.max_tokens_key == "num_predict":
        body["options"] = {"temperature": req.temperature, "num_predict": req.max_tokens}
    else:
        body[cfg.profile.max_tokens_key] = req.max_tokens
    data = _post_with_retry(cfg, cfg.profile.chat_path, body, client, sleep)
    try:
        text = _dig(data, cfg.profile.chat_text_field)
    except (KeyError, IndexError, TypeError):
        raise MalformedResponse(f"no {cfg.profile.chat_text_field!r} in chat response") from None
    if not isinstance(text, str):
        raise MalformedResponse("chat response text is not a string")
    return text


# -- callable clients used by the pipeline ---------------------------------

class HttpEmbedder:
    def __init__(self, cfg: GatewayConfig, model_id: str):
        self.cfg = cfg
        self.model_id = model_id
        self._client = httpx.Client(timeout=cfg.timeout_ms / 1000)

    def __call__(self, text: str) -> tuple[float, ...]:
        return embed_text(self.cfg, EmbeddingRequest(self.model_id, text), self._client)

    def close(self) -> None:
        self._client.close()


class HttpChat:
    def __init__(self, cfg: GatewayConfig):
        self.cfg = cfg
        self._client = httpx.Client(timeout=cfg.timeout_ms / 1000)

    def __call__(self, req: ChatRequest) -> str:
        return complete_chat(self.cfg, req, self._client)

    def close(self) -> None:
        self._client.close()


_TOKEN = re.compile(r"\w+", re.UNICODE)


class MockEmbedder:
    """Deterministic offline embedder.

    Each lowercase word is hashed (with the model id as salt) onto a signed
    coordinate, so captions sharing vocabulary land close together. The
    result is a unit vector and a pure function of ``(model_id, text)``.
    """

    def __init__(self, model_id: str = "mock-embed", dim: int = 64):
        if dim <= 0:
            raise DataError("dim must be positive")
        self.model_id = model_id
        self.dim = dim

    def _hash(self, token: str) -> int:
        digest = hashlib.sha256(f"{self.model_id}\x00{token}".encode()).digest()
        return int.from_bytes(digest[:8], "little")

    def raw(self, text: str) -> list[float]:
        v = [0.0] * self.dim
        for tok in _TOKEN.findall(text.lower()) or [text]:
            h = self._hash(tok)
            v[h % self.dim] += 1.0 if (h >> 32) & 1 else -1.0
        if not any(v):
            v[self._hash(text) % self.dim] = 1.0
        return v

    def __call__(self, text: str) -> tuple[float, ...]:
        EmbeddingRequest(self.model_id, text)
        return l2_normalize(self.raw(text))


# -- structured-output extraction -----------------------------------------

_FENCE = re.compile(r"^[ \t]*```[^\n]*$", re.MULTILINE)


def _balanced_objects(text: str):
    """Yield substrings that start at a '{' and end at its balancing '}'."""
    start = text.find("{")
    while start != -1:
        depth, in_str, esc = 0, False, False
        end = -1
        for i in range(start, len(text)):
            ch = text[i]
            if in_str:
                if esc:
                    esc = False
                elif ch == "\\":
                    esc = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    end = i
                    break
        if end != -1:
            yield text[start:end + 1]
        start = text.find("{", start + 1)


def find_json_object(raw: str) -> dict:
    """First well-formed JSON object in ``raw`` after dropping code fences."""
    text = _FENCE.sub("", raw)
    for chunk in _balanced_objects(text):
        try:
            obj = json.loads(chunk)
        except (ValueError, RecursionError):
            continue
        if isinstance(obj, dict):
            return obj
    raise NoObjectFound()


def _norm_key(key: str) -> str:
    return re.sub(r"[\s\-]+", "_", str(key).strip().lower())


def _field_map(obj: dict) -> dict[str, object]:
    return {_norm_key(k): v for k, v in obj.items()}


def _find_fields(obj: dict, depth: int = 0) -> dict[str, object] | None:
    fields = _field_map(obj)
    if all(f in fields for f in VALUE_FIELDS):
        return fields
    if depth < 4:
        for v in obj.values():
            if isinstance(v, dict):
                found = _find_fields(v, depth + 1)
                if found is not None:
                    return found
    return None


def _as_text(value) -> str:
    if isinstance(value, str):
        return value.strip()
    if value is None:
        return ""
    return json.dumps(value, ensure_ascii=False)


def extract_decision(raw: str, event_id: str, meta: RunMeta | None = None) -> Decision:
    """Map the six analysis keys of the first JSON object in ``raw`` onto a Decision.

    Keys match case-insensitively with spaces/hyphens read as underscores. If
    the top-level object lacks them, nested objects are searched.
    """
    if not isinstance(raw, str):
        raise NoObjectFound()
    obj = find_json_object(raw)
    fields = _find_fields(obj)
    if fields is None:
        top = _field_map(obj)
        missing = next(f for f in VALUE_FIELDS if f not in top)
        raise MissingField(missing)
    maneuver = fields["ego_car_evasive_maneuver"]
    maneuver = parse_maneuver(maneuver if isinstance(maneuver, str) else _as_text(maneuver))
    return Decision(
        event_id=event_id,
        **{f: _as_text(fields[f]) for f in TEXT_VALUE_FIELDS},
        ego_car_evasive_maneuver=maneuver,
        raw_response=raw,
        meta=meta,
    )
