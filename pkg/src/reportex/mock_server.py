"""Deterministic in-repo mock of the local model server, for hermetic tests.

The mock speaks the same wire protocol as a real server. Because the protocol
carries only the prompt, report identity is recovered from the prompt text via
a substring-shingle index over the corpus: 16-character windows unique to one
report vote for its id, and windows unique to one gold label (from the
synthetic answer-sentence templates) act as a fallback when a selected chunk
carries no report-unique text. Unknown prompts get a garbage-mode response.
"""

from __future__ import annotations

import hashlib
import json
import random
import threading
from collections import Counter
from enum import Enum
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from importlib import resources

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .corpus import LabelSchema, Report, answer_sentence
from .prompting import PromptTemplates, default_exemplars
from .retrieval import MockHashEmbedder

_SHINGLE = 16
_HASH_BASE = np.uint64(1099511628211)  # FNV prime; products wrap mod 2**64
_HASH_WEIGHTS = _HASH_BASE ** np.arange(_SHINGLE - 1, -1, -1, dtype=np.uint64)
_HASH_BLOCK = 1 << 17


def _window_hashes(text: str) -> np.ndarray:
    """Polynomial hash of every 16-byte window of the UTF-8 text (uint64 wraparound)."""
    data = np.frombuffer(text.encode("utf-8"), dtype=np.uint8)
    n = data.size - _SHINGLE + 1
    if n <= 0:
        return np.empty(0, dtype=np.uint64)
    out = np.empty(n, dtype=np.uint64)
    for start in range(0, n, _HASH_BLOCK):
        end = min(start + _HASH_BLOCK, n)
        windows = sliding_window_view(data[start : end + _SHINGLE - 1], _SHINGLE)
        out[start:end] = (windows.astype(np.uint64) * _HASH_WEIGHTS).sum(axis=1)
    return out


class MockMode(str, Enum):
    ORACLE = "oracle"
    NOISY_ORACLE = "noisy_oracle"
    GARBAGE = "garbage"
    MALFORMED = "malformed"
    LENGTH_NOISY = "length_noisy"  # error rate grows with prompt length


def _h64(s: str) -> int:
    return int.from_bytes(hashlib.blake2b(s.encode("utf-8"), digest_size=8).digest(), "big")


def _load_fixture(name: str, key: str) -> list[str]:
    data = json.loads(resources.files("reportex.data").joinpath(name).read_text("utf-8"))
    return data[key]


def load_garbage_fixtures() -> list[str]:
    return _load_fixture("garbage_fixtures.json", "garbage")


def load_malformed_templates() -> list[str]:
    return _load_fixture("malformed_fixtures.json", "templates")


class MockModel:
    """Prompt -> completion logic behind the mock server (usable in-process)."""

    def __init__(self, mode: MockMode, gold: dict[str, str], schema: LabelSchema,
                 reports: list[Report] = (), seed: int = 0, noise_rate: float = 0.1,
                 noise_base: float = 0.05, noise_per_kchar: float = 0.1,
                 noise_cap: float = 0.9):
        self.mode = MockMode(mode)
        self.gold = dict(gold)
        self.schema = schema
        self.seed = seed
        self.noise_rate = noise_rate
        self.noise_base = noise_base
        self.noise_per_kchar = noise_per_kchar
        self.noise_cap = noise_cap
        self.garbage = load_garbage_fixtures()
        self.malformed = load_malformed_templates()
        self.embedder = MockHashEmbedder(dimension=64, seed=seed)
        self._uniq: dict[int, str | None] = {}
        for r in reports:
            self._index_text(r.id, r.text)
        self._label_index = self._build_label_index()
        for text in self._static_prompt_material():
            self._tombstone(text)

    def _index_text(self, report_id: str, text: str) -> None:
        uniq = self._uniq
        for h in _window_hashes(text).tolist():
            owner = uniq.get(h, report_id)
            uniq[h] = report_id if owner == report_id else None

    def _static_prompt_material(self) -> list[str]:
        """Constant prompt text (templates, built-in exemplars) that appears in
        every prompt and therefore must never vote for a report or a label."""
        templates = PromptTemplates.default()
        texts = [templates.simple, templates.complex]
        key = self.schema.answer_key
        for e in default_exemplars(self.schema):
            texts.append(e.snippet)
            texts.append(f"Answer: {e.answer}")
            texts.append(f'Answer: {{"{key}": "{e.answer}"}}')
        texts.append(f'Reply with exactly one JSON object of the form '
                     f'{{"{key}": "<answer>"}} and no other text.')
        return texts

    def _tombstone(self, text: str) -> None:
        for h in _window_hashes(text).tolist():
            if h in self._uniq:
                self._uniq[h] = None
            if h in self._label_index:
                self._label_index[h] = None

    def _build_label_index(self) -> dict[int, str | None]:
        index: dict[int, str | None] = {}
        for label in self.schema.valid_labels:
            if label == self.schema.nr_label:
                continue
            sentence = answer_sentence(self.schema.task, label)
            for h in _window_hashes(sentence).tolist():
                owner = index.get(h, label)
                index[h] = label if owner == label else None
        return index

    def _resolve_report(self, prompt: str) -> str | None:
        votes: Counter[str] = Counter()
        uniq = self._uniq
        for scanned, h in enumerate(_window_hashes(prompt).tolist(), start=1):
            rid = uniq.get(h)
            if rid is not None:
                votes[rid] += 1
            if scanned % 256 == 0 and votes:
                (_, top_n), *rest = votes.most_common(2)
                if top_n >= 25 and (not rest or top_n - rest[0][1] >= 25):
                    break
        if not votes:
            return None
        return max(votes.items(), key=lambda kv: (kv[1], kv[0]))[0]

    def _resolve_label(self, prompt: str) -> str | None:
        votes: Counter[str] = Counter()
        for h in _window_hashes(prompt).tolist():
            label = self._label_index.get(h)
            if label is not None:
                votes[label] += 1
        if not votes:
            return None
        return max(votes.items(), key=lambda kv: (kv[1], kv[0]))[0]

    def _rng(self, model: str, prompt: str, seed: int | None) -> random.Random:
        request_seed = seed if seed is not None else _h64(prompt)
        return random.Random(_h64(f"{self.seed}|{model}|{request_seed}"))

    def _garbage_response(self, prompt: str) -> str:
        return self.garbage[_h64(prompt) % len(self.garbage)]

    def _wrong_label(self, gold_label: str, rng: random.Random) -> str:
        others = [l for l in self.schema.valid_labels if l != gold_label]
        return rng.choice(others)

    def _error_rate(self, prompt: str) -> float:
        if self.mode is MockMode.NOISY_ORACLE:
            return self.noise_rate
        if self.mode is MockMode.LENGTH_NOISY:
            return min(self.noise_cap, self.noise_base + self.noise_per_kchar * len(prompt) / 1000.0)
        return 0.0

    def complete(self, payload: dict) -> dict:
        """Handle one /api/generate payload; returns the wire response dict."""
        model = payload.get("model", "")
        prompt = payload.get("prompt", "")
        options = payload.get("options", {})
        if self.mode is MockMode.GARBAGE:
            return self._wire(model, self._garbage_response(prompt))

        report_id = self._resolve_report(prompt)
        if report_id is not None and report_id in self.gold:
            label = self.gold[report_id]
        else:
            label = self._resolve_label(prompt)
            if label is None:
                return self._wire(model, self._garbage_response(prompt))

        if self.mode is MockMode.MALFORMED:
            template = self.malformed[_h64(prompt) % len(self.malformed)]
            return self._wire(model, template.format(key=self.schema.answer_key, label=label))

        eps = self._error_rate(prompt)
        if eps > 0.0:
            rng = self._rng(model, prompt, options.get("seed"))
            if rng.random() < eps:
                label = self._wrong_label(label, rng)
        return self._wire(model, json.dumps({self.schema.answer_key: label}))

    def embeddings(self, payload: dict) -> dict:
        vector = self.embedder.embed([payload.get("prompt", "")])[0]
        return {"embedding": vector.tolist()}

    @staticmethod
    def _wire(model: str, text: str) -> dict:
        return {"model": model, "response": text, "done": True}


class _Handler(BaseHTTPRequestHandler):
    model: MockModel  # set on the server class

    def do_POST(self):  # noqa: N802 (http.server API)
        try:
            length = int(self.headers.get("Content-Length", 0))
            try:
                payload = json.loads(self.rfile.read(length))
            except json.JSONDecodeError:
                self._send(400, {"error": "invalid JSON body"})
                return
            if self.path == "/api/generate":
                self._send(200, self.server.model.complete(payload))  # type: ignore[attr-defined]
            elif self.path == "/api/embeddings":
                self._send(200, self.server.model.embeddings(payload))  # type: ignore[attr-defined]
            else:
                self._send(404, {"error": f"unknown path {self.path}"})
        except (BrokenPipeError, ConnectionResetError):
            pass  # client vanished mid-request (e.g. killed sweep process)

    def _send(self, status: int, obj: dict) -> None:
        body = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):  # silence request logging in tests
        pass


class MockLmServer:
    """Threaded HTTP wrapper around MockModel; endpoint is http://127.0.0.1:<port>."""

    def __init__(self, model: MockModel, host: str = "127.0.0.1", port: int = 0):
        self.model = model
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.model = model  # type: ignore[attr-defined]
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    @property
    def endpoint(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "MockLmServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def __enter__(self) -> "MockLmServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()
