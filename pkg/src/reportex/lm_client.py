"""HTTP client for a local model server (generation + embeddings).

Wire protocol: POST <endpoint>/api/generate with a JSON body carrying model,
prompt, stream=false, optional format="json", and sampling options; the
completion comes back in the "response" field. POST <endpoint>/api/embeddings
with {"model", "prompt"} returns {"embedding": [...]}. The environment
variable EXTRACTOR_LM_ENDPOINT overrides any configured endpoint.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np
import requests

DEFAULT_TIMEOUT = 120.0
DEFAULT_RETRIES = 3
DEFAULT_RETRY_BASE = 0.5  # seconds; doubles per retry

ENDPOINT_ENV_VAR = "EXTRACTOR_LM_ENDPOINT"


class LmClientError(Exception):
    """Base class for model-server client failures."""


class TransportError(LmClientError):
    """Connection-level failure that persisted through all retries."""


class RequestTimeout(LmClientError):
    """The server did not answer within the configured timeout."""


class ProtocolError(LmClientError):
    """Non-2xx response or malformed response body."""

    def __init__(self, status: int, body: str):
        super().__init__(f"server returned status {status}: {body[:200]}")
        self.status = status
        self.body = body


@dataclass(frozen=True)
class GenerationRequest:
    model: str
    prompt: str
    json_mode: bool = False
    temperature: float = 0.0
    top_k: int = 40
    top_p: float = 0.9
    seed: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must be in (0, 1]")

    def to_payload(self) -> dict:
        options: dict = {"temperature": self.temperature, "top_k": self.top_k, "top_p": self.top_p}
        if self.seed is not None:
            options["seed"] = self.seed
        payload: dict = {"model": self.model, "prompt": self.prompt, "stream": False, "options": options}
        if self.json_mode:
            payload["format"] = "json"
        return payload

    @classmethod
    def from_payload(cls, payload: dict) -> "GenerationRequest":
        options = payload.get("options", {})
        return cls(
            model=payload["model"],
            prompt=payload["prompt"],
            json_mode=payload.get("format") == "json",
            temperature=options.get("temperature", 0.0),
            top_k=options.get("top_k", 40),
            top_p=options.get("top_p", 0.9),
            seed=options.get("seed"),
        )


@dataclass(frozen=True)
class GenerationResponse:
    raw_text: str  # returned verbatim; postprocessing owns all cleaning
    latency_ms: float
    model_echo: str


def resolve_endpoint(configured: str | None) -> str:
    endpoint = os.environ.get(ENDPOINT_ENV_VAR) or configured
    if not endpoint:
        raise LmClientError(f"no endpoint configured and {ENDPOINT_ENV_VAR} is unset")
    return endpoint.rstrip("/")


def _post_with_retries(url: str, payload: dict, timeout: float, retries: int,
                       retry_base: float) -> dict:
    last_error: LmClientError | None = None
    for attempt in range(retries + 1):
        try:
            resp = requests.post(url, json=payload, timeout=timeout)
        except requests.Timeout as e:
            last_error = RequestTimeout(f"{url}: timed out after {timeout}s")
            last_error.__cause__ = e
        except requests.RequestException as e:
            last_error = TransportError(f"{url}: {e}")
            last_error.__cause__ = e
        else:
            if not 200 <= resp.status_code < 300:
                raise ProtocolError(resp.status_code, resp.text)
            try:
                return resp.json()
            except ValueError as e:
                raise ProtocolError(resp.status_code, f"non-JSON body: {resp.text[:100]}") from e
        if attempt < retries:
            time.sleep(retry_base * (2 ** attempt))
    assert last_error is not None
    raise last_error


def generate(endpoint: str, request: GenerationRequest, timeout: float = DEFAULT_TIMEOUT,
             retries: int = DEFAULT_RETRIES, retry_base: float = DEFAULT_RETRY_BASE) -> GenerationResponse:
    """One non-streaming generation call; transient transport failures are retried."""
    url = resolve_endpoint(endpoint) + "/api/generate"
    start = time.perf_counter()
    data = _post_with_retries(url, request.to_payload(), timeout, retries, retry_base)
    latency_ms = (time.perf_counter() - start) * 1000.0
    if "response" not in data:
        raise ProtocolError(200, "missing 'response' field")
    return GenerationResponse(
        raw_text=data["response"],
        latency_ms=latency_ms,
        model_echo=data.get("model", ""),
    )


def embed(endpoint: str, model: str, texts: list[str], timeout: float = DEFAULT_TIMEOUT,
          retries: int = DEFAULT_RETRIES, retry_base: float = DEFAULT_RETRY_BASE) -> np.ndarray:
    """Embed each text through the server; rows come back L2-normalized."""
    if not texts:
        raise ValueError("texts must be nonempty")
    url = resolve_endpoint(endpoint) + "/api/embeddings"
    rows = []
    for text in texts:
        data = _post_with_retries(url, {"model": model, "prompt": text}, timeout, retries, retry_base)
        if "embedding" not in data:
            raise ProtocolError(200, "missing 'embedding' field")
        try:
            row = np.asarray(data["embedding"], dtype=np.float64)
        except (TypeError, ValueError) as e:
            raise ProtocolError(200, f"non-numeric embedding: {e}") from e
        if row.ndim != 1 or row.size == 0:
            raise ProtocolError(200, f"embedding must be a flat number array, got shape {row.shape}")
        rows.append(row)
    dims = {r.shape for r in rows}
    if len(dims) != 1:
        raise ProtocolError(200, f"inconsistent embedding dimensions: {sorted(dims)}")
    matrix = np.vstack(rows)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return matrix / norms
