"""Uniform black-box access to reader models.

Backends speak one wire protocol: ``POST /v1/answer`` taking a ReaderRequest
and returning a ReaderReply, plus ``GET /v1/handshake`` returning
``{"model_name", "model_version", "supports_attention"}``. A scripted mock
and a replay cache implement the same surface so every pipeline stage can
run without a live model.

Replay-cache keys are invariant under permutation of the passage list,
which is sound because the reader is treated as order invariant; the
conformance check below verifies that empirically for any backend.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import re
import threading
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import requests

from .datamodel import Passage, QAInstance
from .errors import (
    CacheMissError,
    CapabilityError,
    ConsistencyError,
    ProtocolError,
    TransportError,
)

READER_URL_ENV = "READER_URL"


@dataclass(frozen=True)
class ReaderPassage:
    """The (title, text) pair a reader sees for one context slot."""

    title: str
    text: str

    @classmethod
    def from_passage(cls, p: Passage) -> "ReaderPassage":
        return cls(title=p.title, text=p.text)

    def to_json(self) -> dict[str, str]:
        return {"title": self.title, "text": self.text}


@dataclass(frozen=True)
class ReaderRequest:
    request_id: str
    question: str
    passages: tuple[ReaderPassage, ...]
    want_attention: bool = False

    def __post_init__(self):
        if not self.passages:
            raise ValueError("passages must be non-empty")

    def to_json(self) -> dict[str, Any]:
        return {
            "request_id": self.request_id,
            "question": self.question,
            "passages": [p.to_json() for p in self.passages],
            "want_attention": self.want_attention,
        }


@dataclass(frozen=True)
class ReaderReply:
    request_id: str
    answer: str
    attention: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.attention is not None and any(a < 0 for a in self.attention):
            raise ValueError("attention scores must be >= 0")


@dataclass(frozen=True)
class Handshake:
    model_name: str
    model_version: str
    supports_attention: bool

    def to_json(self) -> dict[str, Any]:
        return {
            "model_name": self.model_name,
            "model_version": self.model_version,
            "supports_attention": self.supports_attention,
        }


def make_request(
    question: str,
    passages: Sequence[Passage],
    request_id: str = "",
    want_attention: bool = False,
) -> ReaderRequest:
    if not request_id:
        request_id = f"req-{hashlib.sha256(question.encode('utf-8')).hexdigest()[:8]}-{len(passages)}"
    return ReaderRequest(
        request_id=request_id,
        question=question,
        passages=tuple(ReaderPassage.from_passage(p) for p in passages),
        want_attention=want_attention,
    )


# ---------------------------------------------------------------------------
# Replay cache keyed by the passage multiset
# ---------------------------------------------------------------------------


def _normalize_question(q: str) -> str:
    # Conservative on purpose: collapsing whitespace never merges two
    # genuinely different questions, unlike answer normalization.
    return " ".join(q.split())


def passage_content_hash(p: ReaderPassage) -> str:
    payload = p.title + "\n\x1f\n" + p.text
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ReplayCacheKey:
    """Cache key invariant under permutation of the passage list."""

    reader_fingerprint: str
    question: str
    passage_hashes: tuple[str, ...]  # sorted

    @classmethod
    def for_request(cls, reader_fingerprint: str, request: ReaderRequest) -> "ReplayCacheKey":
        hashes = sorted(passage_content_hash(p) for p in request.passages)
        return cls(reader_fingerprint, _normalize_question(request.question), tuple(hashes))

    @property
    def key_hash(self) -> str:
        canonical = json.dumps(
            {
                "fingerprint": self.reader_fingerprint,
                "question": self.question,
                "passages": list(self.passage_hashes),
            },
            sort_keys=True,
            separators=(",", ":"),
        )
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def to_json(self) -> dict[str, Any]:
        return {
            "reader_fingerprint": self.reader_fingerprint,
            "question": self.question,
            "passage_hashes": list(self.passage_hashes),
        }

    @classmethod
    def from_json(cls, obj: Mapping[str, Any]) -> "ReplayCacheKey":
        return cls(obj["reader_fingerprint"], obj["question"], tuple(obj["passage_hashes"]))


@dataclass
class _CacheEntry:
    key: ReplayCacheKey
    answer: str
    # attention stored per content hash so a permuted request gets scores
    # realigned to its own passage order; duplicates queue in store order.
    attention_by_hash: dict[str, list[float]] | None


class ReplayCache:
    """Append-only JSON-lines store of reader replies, keyed by ReplayCacheKey.

    Records are ``{"key_hash", "full_key", "reply"}``; hash collisions are
    resolved by comparing the full key. Writes for identical keys are
    idempotent, so concurrent last-write-wins is safe.
    """

    def __init__(self, path=None):
        self.path = path
        self._entries: dict[str, list[_CacheEntry]] = {}
        self._handshake: Handshake | None = None
        self._fingerprint: str | None = None
        self._lock = threading.Lock()
        if path is not None and os.path.exists(path):
            self._load(path)

    def _load(self, path) -> None:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as e:
                    raise ProtocolError(f"cache file {path} line {lineno}: {e.msg}") from e
                if rec.get("type") == "header":
                    self._fingerprint = rec.get("fingerprint")
                    hs = rec.get("handshake")
                    if hs:
                        self._handshake = Handshake(
                            hs["model_name"], hs["model_version"], hs["supports_attention"]
                        )
                    continue
                key = ReplayCacheKey.from_json(rec["full_key"])
                reply = rec["reply"]
                entry = _CacheEntry(
                    key=key,
                    answer=reply["answer"],
                    attention_by_hash={k: list(v) for k, v in reply["attention_by_hash"].items()}
                    if reply.get("attention_by_hash") is not None
                    else None,
                )
                bucket = self._entries.setdefault(rec["key_hash"], [])
                # later records supersede earlier ones (append-only file)
                for i, e in enumerate(bucket):
                    if e.key == key:
                        bucket[i] = entry
                        break
                else:
                    bucket.append(entry)

    def __len__(self) -> int:
        return sum(len(v) for v in self._entries.values())

    @property
    def handshake(self) -> Handshake | None:
        return self._handshake

    @property
    def fingerprint(self) -> str | None:
        return self._fingerprint

    def set_header(self, fingerprint: str, handshake: Handshake) -> None:
        with self._lock:
            if self._fingerprint is not None:
                if self._fingerprint != fingerprint:
                    raise ConsistencyError(
                        f"cache recorded for fingerprint {self._fingerprint}, got {fingerprint}"
                    )
                return
            self._fingerprint = fingerprint
            self._handshake = handshake
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(json.dumps({
                        "type": "header",
                        "fingerprint": fingerprint,
                        "handshake": handshake.to_json(),
                    }) + "\n")

    def lookup(self, key: ReplayCacheKey) -> _CacheEntry | None:
        with self._lock:
            for entry in self._entries.get(key.key_hash, ()):
                if entry.key == key:
                    return entry
        return None

    def get_reply(self, key: ReplayCacheKey, request: ReaderRequest) -> ReaderReply | None:
        """Reconstruct a reply for this request's passage order, or None."""
        entry = self.lookup(key)
        if entry is None:
            return None
        attention: tuple[float, ...] | None = None
        if request.want_attention:
            if entry.attention_by_hash is None:
                return None  # recorded without attention; cannot serve this request
            cursor = {h: 0 for h in entry.attention_by_hash}
            scores = []
            for p in request.passages:
                h = passage_content_hash(p)
                i = cursor.get(h, 0)
                scores.append(entry.attention_by_hash[h][i])
                cursor[h] = i + 1
            attention = tuple(scores)
        return ReaderReply(request_id=request.request_id, answer=entry.answer, attention=attention)

    def store(self, key: ReplayCacheKey, request: ReaderRequest, reply: ReaderReply) -> None:
        attention_by_hash: dict[str, list[float]] | None = None
        if reply.attention is not None:
            attention_by_hash = {}
            for p, score in zip(request.passages, reply.attention):
                attention_by_hash.setdefault(passage_content_hash(p), []).append(score)
        entry = _CacheEntry(key=key, answer=reply.answer, attention_by_hash=attention_by_hash)
        with self._lock:
            bucket = self._entries.setdefault(key.key_hash, [])
            for i, e in enumerate(bucket):
                if e.key == key:
                    bucket[i] = entry
                    break
            else:
                bucket.append(entry)
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(json.dumps({
                        "key_hash": key.key_hash,
                        "full_key": key.to_json(),
                        "reply": {"answer": entry.answer, "attention_by_hash": entry.attention_by_hash},
                    }, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


class ReaderBackend:
    """One concrete way of answering ReaderRequests."""

    kind = "abstract"
    is_remote = False

    def __init__(self):
        self.calls = 0  # incremented on every infer that reaches this backend

    def infer(self, request: ReaderRequest) -> ReaderReply:
        raise NotImplementedError

    def handshake(self) -> Handshake:
        raise NotImplementedError

    def identity(self) -> str:
        raise NotImplementedError


class HttpReaderBackend(ReaderBackend):
    """Client for a remote reader service speaking the wire protocol."""

    kind = "http"
    is_remote = True

    def __init__(self, url: str, timeout: float = 120.0):
        super().__init__()
        self.url = url.rstrip("/")
        self.timeout = timeout

    def infer(self, request: ReaderRequest) -> ReaderReply:
        self.calls += 1
        try:
            resp = requests.post(
                f"{self.url}/v1/answer", json=request.to_json(), timeout=self.timeout
            )
        except requests.RequestException as e:
            raise TransportError(f"reader unreachable at {self.url}: {e}") from e
        if resp.status_code != 200:
            raise ProtocolError(f"reader returned HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            answer = body["answer"]
            attention = body.get("attention")
        except (ValueError, KeyError, TypeError) as e:
            raise ProtocolError(f"malformed reader reply: {e}") from e
        if request.want_attention and attention is not None:
            if len(attention) != len(request.passages):
                raise ProtocolError(
                    f"attention length {len(attention)} != passage count {len(request.passages)}"
                )
            attention = tuple(float(a) for a in attention)
        else:
            attention = None
        return ReaderReply(request_id=request.request_id, answer=answer, attention=attention)

    def handshake(self) -> Handshake:
        try:
            resp = requests.get(f"{self.url}/v1/handshake", timeout=self.timeout)
            resp.raise_for_status()
            body = resp.json()
        except requests.RequestException as e:
            raise TransportError(f"handshake failed at {self.url}: {e}") from e
        except ValueError as e:
            raise ProtocolError(f"handshake reply is not JSON: {e}") from e
        try:
            return Handshake(
                model_name=body["model_name"],
                model_version=body.get("model_version") or "unversioned",
                supports_attention=bool(body["supports_attention"]),
            )
        except KeyError as e:
            raise ProtocolError(f"handshake missing field {e}") from e

    def identity(self) -> str:
        return self.url


class MockReader(ReaderBackend):
    """Deterministic scripted reader for tests and fixtures.

    The answer is a pure function of (question-independent) marker content
    in the passage multiset:

    1. if any passage contains ``poison_marker``, answer ``poison_answer``;
    2. else the first entry of the ordered ``markers`` table whose marker
       occurs in any passage wins (earlier table entries take precedence,
       so adding a passage can flip the answer either way);
    3. else if ``extract_prefix`` is set and some passage contains
       ``<prefix><token>``, answer the lexicographically smallest token;
    4. else ``default_answer``.

    With ``order_mode="first_title"`` the mock instead answers with the
    first passage's title, deliberately violating order invariance.

    Attention (when requested): passages containing the poison or a table
    marker score ``marker_attention[marker]`` if configured, else the
    ``attention_marker``/``attention_poison`` level; all others score
    ``attention_default``.
    """

    kind = "mock"

    def __init__(
        self,
        markers: Sequence[tuple[str, str]] | Mapping[str, str] = (),
        poison_marker: str | None = None,
        poison_answer: str = "poisoned",
        default_answer: str = "no idea",
        extract_prefix: str | None = None,
        order_mode: str = "invariant",
        name: str = "scripted-mock",
        version: str = "1",
        supports_attention: bool = True,
        attention_marker: float = 1.0,
        attention_poison: float = 0.8,
        attention_default: float = 0.01,
        marker_attention: Mapping[str, float] | None = None,
    ):
        super().__init__()
        if order_mode not in ("invariant", "first_title"):
            raise ValueError(f"unknown order_mode {order_mode!r}")
        self.markers = list(markers.items()) if isinstance(markers, Mapping) else list(markers)
        self.poison_marker = poison_marker
        self.poison_answer = poison_answer
        self.default_answer = default_answer
        self.extract_prefix = extract_prefix
        self.order_mode = order_mode
        self.name = name
        self.version = version
        self.supports_attention = supports_attention
        self.attention_marker = attention_marker
        self.attention_poison = attention_poison
        self.attention_default = attention_default
        self.marker_attention = dict(marker_attention or {})

    @classmethod
    def from_script_file(cls, path) -> "MockReader":
        with open(path, "r", encoding="utf-8") as f:
            cfg = json.load(f)
        return cls(
            markers=[tuple(m) for m in cfg.get("markers", [])]
            if isinstance(cfg.get("markers", []), list)
            else cfg["markers"],
            poison_marker=cfg.get("poison_marker"),
            poison_answer=cfg.get("poison_answer", "poisoned"),
            default_answer=cfg.get("default_answer", "no idea"),
            extract_prefix=cfg.get("extract_prefix"),
            order_mode=cfg.get("order_mode", "invariant"),
            name=cfg.get("name", "scripted-mock"),
            version=cfg.get("version", "1"),
            supports_attention=cfg.get("supports_attention", True),
            attention_marker=cfg.get("attention_marker", 1.0),
            attention_poison=cfg.get("attention_poison", 0.8),
            attention_default=cfg.get("attention_default", 0.01),
            marker_attention=cfg.get("marker_attention"),
        )

    def to_script(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "version": self.version,
            "markers": [list(m) for m in self.markers],
            "poison_marker": self.poison_marker,
            "poison_answer": self.poison_answer,
            "default_answer": self.default_answer,
            "extract_prefix": self.extract_prefix,
            "order_mode": self.order_mode,
            "supports_attention": self.supports_attention,
            "attention_marker": self.attention_marker,
            "attention_poison": self.attention_poison,
            "attention_default": self.attention_default,
            "marker_attention": self.marker_attention,
        }

    def _answer(self, request: ReaderRequest) -> str:
        texts = [p.text for p in request.passages]
        if self.order_mode == "first_title":
            return request.passages[0].title
        if self.poison_marker and any(self.poison_marker in t for t in texts):
            return self.poison_answer
        for marker, answer in self.markers:
            if any(marker in t for t in texts):
                return answer
        if self.extract_prefix:
            pat = re.compile(re.escape(self.extract_prefix) + r"(\S+)")
            found = sorted({m.group(1) for t in texts for m in pat.finditer(t)})
            if found:
                return found[0]
        return self.default_answer

    def _passage_attention(self, text: str) -> float:
        if self.poison_marker and self.poison_marker in text:
            return self.marker_attention.get(self.poison_marker, self.attention_poison)
        for marker, _ in self.markers:
            if marker in text:
                return self.marker_attention.get(marker, self.attention_marker)
        if self.extract_prefix and self.extract_prefix in text:
            return self.attention_marker
        return self.attention_default

    def infer(self, request: ReaderRequest) -> ReaderReply:
        self.calls += 1
        answer = self._answer(request)
        attention = None
        if request.want_attention and self.supports_attention:
            attention = tuple(self._passage_attention(p.text) for p in request.passages)
        return ReaderReply(request_id=request.request_id, answer=answer, attention=attention)

    def handshake(self) -> Handshake:
        return Handshake(
            model_name=self.name,
            model_version=self.version or "unversioned",
            supports_attention=self.supports_attention,
        )

    def identity(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_script(), sort_keys=True).encode("utf-8")
        ).hexdigest()[:16]


class ReplayBackend(ReaderBackend):
    """Serves recorded replies only; any unknown key is a hard error."""

    kind = "replay"

    def __init__(self, path):
        super().__init__()
        self.path = path
        self.cache = ReplayCache(path)
        if self.cache.fingerprint is None:
            raise ProtocolError(f"cache file {path} has no header record")

    def infer(self, request: ReaderRequest) -> ReaderReply:
        self.calls += 1
        key = ReplayCacheKey.for_request(self.cache.fingerprint, request)
        reply = self.cache.get_reply(key, request)
        if reply is None:
            raise CacheMissError(key.key_hash)
        return reply

    def handshake(self) -> Handshake:
        hs = self.cache.handshake
        if hs is None:
            raise ProtocolError(f"cache file {self.path} has no handshake record")
        return hs

    def identity(self) -> str:
        return str(self.path)

    def fingerprint(self) -> str:
        return self.cache.fingerprint


def fingerprint(backend: ReaderBackend) -> str:
    """Stable id of backend type, endpoint identity, and reported model version."""
    if isinstance(backend, ReplayBackend):
        return backend.fingerprint()  # replay must present the recorded identity
    hs = backend.handshake()
    version = hs.model_version or "unversioned"
    payload = f"{backend.kind}|{backend.identity()}|{hs.model_name}|{version}"
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------


class ReaderGateway:
    """Thread-safe front door: caching, bounded concurrency, fingerprinting."""

    def __init__(self, backend: ReaderBackend, cache: ReplayCache | None = None,
                 max_in_flight: int = 8):
        self.backend = backend
        self.cache = cache
        self._sem = threading.Semaphore(max_in_flight)
        self._fingerprint: str | None = None
        self._fp_lock = threading.Lock()

    def fingerprint(self) -> str:
        with self._fp_lock:
            if self._fingerprint is None:
                self._fingerprint = fingerprint(self.backend)
                if self.cache is not None:
                    self.cache.set_header(self._fingerprint, self.backend.handshake())
            return self._fingerprint

    def handshake(self) -> Handshake:
        return self.backend.handshake()

    def infer(self, request: ReaderRequest, use_cache: bool = True) -> ReaderReply:
        """Answer a request, preferring the cache; remote replies are stored first.

        ``use_cache=False`` skips the gateway cache layer (the order-invariance
        check needs that so a shared key cannot mask an order-sensitive reader).
        """
        key = None
        if self.cache is not None:
            key = ReplayCacheKey.for_request(self.fingerprint(), request)
            if use_cache:
                reply = self.cache.get_reply(key, request)
                if reply is not None:
                    return reply
        with self._sem:
            reply = self.backend.infer(request)
        if self.cache is not None and key is not None:
            self.cache.store(key, request, reply)
        return reply

    def answer(
        self,
        question: str,
        passages: Sequence[Passage],
        want_attention: bool = False,
        use_cache: bool = True,
    ) -> ReaderReply:
        return self.infer(make_request(question, passages, want_attention=want_attention),
                          use_cache=use_cache)


@dataclass(frozen=True)
class OrderInvarianceReport:
    invariant: bool
    trials: int
    counterexample: tuple[int, ...] | None = None
    baseline_answer: str = ""
    divergent_answer: str | None = None


def check_order_invariance(
    instance: QAInstance,
    trials: int,
    seed: int,
    gateway: ReaderGateway,
) -> OrderInvarianceReport:
    """Run the reader on seeded random permutations of the full context list.

    Calls bypass the gateway cache so the permutation-invariant key cannot
    hide an order-sensitive reader. Deterministic given the seed.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = random.Random(seed)
    baseline = gateway.answer(instance.question, instance.contexts, use_cache=False).answer
    n = len(instance.contexts)
    for _ in range(trials):
        perm = rng.sample(range(n), n)
        shuffled = [instance.contexts[i] for i in perm]
        answer = gateway.answer(instance.question, shuffled, use_cache=False).answer
        if answer != baseline:
            return OrderInvarianceReport(
                invariant=False,
                trials=trials,
                counterexample=tuple(perm),
                baseline_answer=baseline,
                divergent_answer=answer,
            )
    return OrderInvarianceReport(invariant=True, trials=trials, baseline_answer=baseline)


def backend_from_spec(spec: str) -> ReaderBackend:
    """Build a backend from a ``--reader`` flag value.

    Accepted forms: ``http:<url>`` (or a bare URL), ``mock:<script-file>``,
    ``replay:<cache-file>``. With no spec, the READER_URL env var is used.
    """
    if not spec:
        url = os.environ.get(READER_URL_ENV)
        if not url:
            raise ValueError(f"no reader spec given and {READER_URL_ENV} is unset")
        return HttpReaderBackend(url)
    if spec.startswith("http:") and spec[5:6] == "//":
        return HttpReaderBackend(spec)
    scheme, _, rest = spec.partition(":")
    if scheme == "http":
        return HttpReaderBackend(rest if "://" in rest else f"http://{rest}")
    if scheme == "https":
        return HttpReaderBackend(spec)
    if scheme == "mock":
        return MockReader.from_script_file(rest)
    if scheme == "replay":
        return ReplayBackend(rest)
    raise ValueError(f"unknown reader spec {spec!r}; expected http:, mock:, or replay:")


# ---------------------------------------------------------------------------
# Backend conformance suite (shared by mock tests and the service shim)
# ---------------------------------------------------------------------------


def check_backend_conformance(backend: ReaderBackend) -> list[str]:
    """Run the protocol conformance checks; returns a list of failures.

    Checks: handshake schema, reply schema, determinism of repeated
    requests, and (when supported) attention vector length.
    """
    failures: list[str] = []
    hs = backend.handshake()
    if not hs.model_name:
        failures.append("handshake: empty model_name")
    if not hs.model_version:
        failures.append("handshake: empty model_version")

    passages = (
        ReaderPassage(title="alpha", text="first probe passage"),
        ReaderPassage(title="beta", text="second probe passage"),
    )
    req = ReaderRequest(request_id="conformance-1", question="probe?", passages=passages)
    r1 = backend.infer(req)
    r2 = backend.infer(req)
    if r1.request_id != "conformance-1":
        failures.append("reply: request_id not echoed")
    if not isinstance(r1.answer, str):
        failures.append("reply: answer is not a string")
    if r1.answer != r2.answer:
        failures.append("determinism: identical requests produced different answers")
    if r1.attention is not None:
        failures.append("reply: attention returned without want_attention")

    if hs.supports_attention:
        areq = ReaderRequest(
            request_id="conformance-2", question="probe?", passages=passages, want_attention=True
        )
        ar = backend.infer(areq)
        if ar.attention is None:
            failures.append("attention: supports_attention but none returned")
        elif len(ar.attention) != len(passages):
            failures.append(
                f"attention: length {len(ar.attention)} != passage count {len(passages)}"
            )
        elif any(a < 0 for a in ar.attention):
            failures.append("attention: negative score")
    return failures
