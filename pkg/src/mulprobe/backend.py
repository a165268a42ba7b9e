"""Model access: deterministic generation and forced-completion scoring.

Two implementations share one interface. :class:`MockBackend` is rule-driven and
needs no model; :class:`HTTPBackend` talks to a chat-completions style endpoint
and archives every exchange in a :class:`ReplayCache`.
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .arith import Problem, compute_load
from .render import AUDIO_PROMPT, IMAGE_PROMPT, RenderedInstance, decode_png, read_text
from .words import parse_words

log = logging.getLogger(__name__)

MAX_BUDGET = 2048
ENV_ENDPOINT = "MULPROBE_ENDPOINT"
ENV_API_KEY = "MULPROBE_API_KEY"
ENV_MODEL = "MULPROBE_MODEL"


class BackendError(RuntimeError):
    """Transport or protocol failure; may be retried."""


class CapabilityError(RuntimeError):
    """The backend cannot do what was asked (e.g. it cannot score a forced continuation)."""


def sha256_hex(data) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class ScoringContext:
    prompt: str
    image: Optional[bytes] = None
    image_media_type: Optional[str] = None
    audio: Optional[bytes] = None
    audio_media_type: Optional[str] = None
    system: Optional[str] = None
    # Bookkeeping only; never sent to a model.
    meta: dict = field(default_factory=dict, compare=False, hash=False)

    def key(self) -> str:
        """Hash of what a model actually sees."""
        return sha256_hex(canonical_json({
            "prompt": self.prompt,
            "system": self.system,
            "image": sha256_hex(self.image) if self.image is not None else None,
            "image_media_type": self.image_media_type,
            "audio": sha256_hex(self.audio) if self.audio is not None else None,
        }))

    @classmethod
    def from_rendered(cls, inst: RenderedInstance, problem: Optional[Problem] = None, system: Optional[str] = None):
        meta = {"problem_id": inst.problem_id, "representation": inst.representation.value}
        if problem is not None:
            meta.update(a=problem.a.value, b=problem.b.value)
        r = inst.representation
        if r.is_text:
            return cls(prompt=inst.payload, system=system, meta=meta)
        if r.is_image:
            return cls(prompt=IMAGE_PROMPT, image=inst.payload, image_media_type=inst.media_type, system=system, meta=meta)
        return cls(prompt=AUDIO_PROMPT, audio=inst.payload, audio_media_type=inst.media_type, system=system, meta=meta)


@dataclass(frozen=True)
class TokenLosses:
    tokens: tuple
    losses: tuple

    def __post_init__(self):
        if len(self.losses) < 1:
            raise ValueError("TokenLosses needs at least one token")
        if len(self.tokens) != len(self.losses):
            raise ValueError("tokens and losses differ in length")
        for v in self.losses:
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"token loss must be finite and >= 0, got {v!r}")

    @property
    def T(self) -> int:
        return len(self.losses)

    @property
    def total(self) -> float:
        return math.fsum(self.losses)

    def __add__(self, other: "TokenLosses") -> "TokenLosses":
        return TokenLosses(self.tokens + other.tokens, self.losses + other.losses)

    def to_dict(self) -> dict:
        return {"tokens": list(self.tokens), "losses": list(self.losses)}

    @classmethod
    def from_dict(cls, d: dict) -> "TokenLosses":
        return cls(tuple(d["tokens"]), tuple(float(x) for x in d["losses"]))


@dataclass(frozen=True)
class GenerationResult:
    text: str
    finish_reason: str
    usage: dict

    def to_dict(self) -> dict:
        return {"text": self.text, "finish_reason": self.finish_reason, "usage": dict(self.usage)}


_TOKEN_RE = re.compile(r"\s*\S+")


def mock_tokenize(text: str) -> list:
    """Whitespace-attached word pieces; concatenation of the pieces is ``text`` minus trailing space."""
    return _TOKEN_RE.findall(text)


def _unit(*parts) -> float:
    """Deterministic uniform in [0, 1) from arbitrary string parts."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big") / 2.0 ** 64


def _check_budget(budget: int, maximum: int) -> None:
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if budget > maximum:
        raise ValueError(f"budget {budget} exceeds backend maximum {maximum}")


_NUM_RE = re.compile(r"\d[\d,]*")


def operands_from_context(ctx: ScoringContext) -> Optional[tuple]:
    """Recover (a, b) from meta, the prompt text, or a PNG image."""
    if "a" in ctx.meta and "b" in ctx.meta:
        return int(ctx.meta["a"]), int(ctx.meta["b"])
    text = ctx.prompt
    if ctx.image is not None and ctx.image_media_type == "image/png":
        text = read_text(decode_png(ctx.image))
    m = re.search(r"(\d+)\s*×\s*(\d+)", text)
    if m:
        return int(m.group(1)), int(m.group(2))
    m = re.search(r"what is (.+?) times (.+?)\?", text, re.IGNORECASE)
    if m:
        try:
            return parse_words(m.group(1)), parse_words(m.group(2))
        except ValueError:
            return None
    return None


class MockBackend:
    """Rule-driven stand-in for a model.

    ``spec`` keys:

    * ``scoring``: ``{"kind": "constant", "value": c}``,
      ``{"kind": "hash", "seed": s, "low": 0.5, "high": 4.0}`` or
      ``{"kind": "table", "entries": [...], "default": <scoring spec>}`` where each
      entry is ``{"context": "*" | prompt, "continuation": str, "losses": [...]}``.
      ``{"kind": "none"}`` makes the mock probe-incapable.
    * ``generation``: ``{"kind": "correct"}``, ``{"kind": "accuracy", "p": 0.02, "seed": s}``
      (correct with probability ``(1-p)**C``) or ``{"kind": "constant", "text": str}``.

    Hash and constant losses are per token, so scores are additive over
    concatenation at token boundaries.
    """

    name = "mock"

    def __init__(self, spec: Optional[dict] = None, max_budget: int = MAX_BUDGET):
        spec = dict(spec or {})
        self.spec = spec
        self.scoring = dict(spec.get("scoring", {"kind": "hash", "seed": 0}))
        self.generation = dict(spec.get("generation", {"kind": "correct"}))
        self.max_budget = max_budget
        self._table = {}
        if self.scoring["kind"] == "table":
            for e in self.scoring.get("entries", []):
                self._table[(e.get("context", "*"), e["continuation"])] = tuple(float(x) for x in e["losses"])
        if self.scoring["kind"] not in ("constant", "hash", "table", "none"):
            raise ValueError(f"unknown mock scoring kind {self.scoring['kind']!r}")
        if self.generation["kind"] not in ("correct", "accuracy", "constant"):
            raise ValueError(f"unknown mock generation kind {self.generation['kind']!r}")

    @property
    def probe_capable(self) -> bool:
        return self.scoring["kind"] != "none"

    def describe(self) -> dict:
        return {"backend": self.name, "spec": self.spec}

    # -- scoring --

    def _rule_losses(self, rule: dict, ctx: ScoringContext, tokens: list) -> tuple:
        kind = rule["kind"]
        if kind == "constant":
            return tuple(float(rule["value"]) for _ in tokens)
        if kind == "hash":
            lo, hi = float(rule.get("low", 0.5)), float(rule.get("high", 4.0))
            seed = rule.get("seed", 0)
            ck = ctx.key()
            return tuple(lo + (hi - lo) * _unit(seed, ck, t) for t in tokens)
        if kind == "none":
            raise CapabilityError("mock configured as probe-incapable")
        raise ValueError(f"no per-token rule for kind {kind!r}")

    def score_continuation(self, ctx: ScoringContext, continuation: str) -> TokenLosses:
        if not continuation or not continuation.strip():
            raise ValueError("continuation must be non-empty")
        tokens = mock_tokenize(continuation)
        if self.scoring["kind"] == "table":
            for k in ((ctx.prompt, continuation), ("*", continuation)):
                if k in self._table:
                    losses = self._table[k]
                    if len(losses) != len(tokens):
                        tokens = [f"<{i}>" for i in range(len(losses))]
                    return TokenLosses(tuple(tokens), losses)
            default = self.scoring.get("default")
            if default is None:
                raise BackendError(f"mock table has no entry for continuation {continuation[:40]!r}")
            return TokenLosses(tuple(tokens), self._rule_losses(default, ctx, tokens))
        return TokenLosses(tuple(tokens), self._rule_losses(self.scoring, ctx, tokens))

    # -- generation --

    def _answer_text(self, ctx: ScoringContext) -> str:
        g = self.generation
        if g["kind"] == "constant":
            return g["text"]
        ops = operands_from_context(ctx)
        if ops is None:
            return "I cannot read the problem."
        a, b = ops
        product = a * b
        if g["kind"] == "accuracy":
            p = float(g.get("p", 0.02))
            proxy = g.get("ops", "load")
            m = compute_load(a, b)
            n_ops = m.load_C if proxy == "load" else m.carry_count + m.nonzero_products
            u = _unit(g.get("seed", 0), ctx.key(), "gen")
            if u >= (1.0 - p) ** n_ops:
                slip = 1 + int(_unit(g.get("seed", 0), ctx.key(), "slip") * 9)
                place = 10 ** int(_unit(g.get("seed", 0), ctx.key(), "place") * max(1, len(str(product))))
                product = product + slip * place
        return f"Multiplying step by step, the product is {product}. Answer: {product}"

    def generate(self, ctx: ScoringContext, budget: int = MAX_BUDGET) -> GenerationResult:
        _check_budget(budget, self.max_budget)
        text = self._answer_text(ctx)
        toks = mock_tokenize(text)
        finish = "stop"
        if len(toks) > budget:
            toks, finish = toks[:budget], "length"
        return GenerationResult("".join(toks), finish, {"completion_tokens": len(toks)})


# --- replay cache ------------------------------------------------------------------


class ReplayCache:
    """Append-only JSONL archive of request/response pairs keyed by request hash.

    The first successful response recorded for a key wins; later writes for the
    same key are ignored, so retries never change stored results.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict = {}
        if self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._entries.setdefault(rec["key"], rec["response"])

    @staticmethod
    def key_for(request: dict) -> str:
        return sha256_hex(canonical_json(request))

    def get(self, request: dict):
        return self._entries.get(self.key_for(request))

    def __len__(self) -> int:
        return len(self._entries)

    def put(self, request: dict, response: dict) -> bool:
        key = self.key_for(request)
        with self._lock:
            if key in self._entries:
                return False
            self._entries[key] = response
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(canonical_json({"key": key, "request": request, "response": response}) + "\n")
        return True


# --- HTTP backend ------------------------------------------------------------------


def data_url(payload: bytes, media_type: str) -> str:
    return f"data:{media_type};base64,{base64.b64encode(payload).decode('ascii')}"


@dataclass
class RetryPolicy:
    max_retries: int = 3
    backoff: float = 0.5
    max_backoff: float = 8.0

    def delay(self, attempt: int) -> float:
        return min(self.max_backoff, self.backoff * 2 ** attempt)


class HTTPBackend:
    """Chat-completions client.

    Scoring sends the assistant continuation as the final message with
    ``echo``/``logprobs`` set and expects ``choices[0].logprobs.content`` to hold
    one ``{"token", "logprob"}`` record per continuation token. Servers that
    return no such field are reported as probe-incapable.

    ``mode``: ``live`` (no cache), ``record`` (cache first, then network) or
    ``replay`` (cache only).
    """

    name = "http"

    def __init__(self, endpoint: Optional[str] = None, model: Optional[str] = None, api_key: Optional[str] = None,
                 cache: Optional[ReplayCache] = None, mode: str = "record", retry: RetryPolicy = RetryPolicy(),
                 timeout: float = 120.0, max_budget: int = MAX_BUDGET, transport=None,
                 sleep: Callable[[float], None] = time.sleep):
        if mode not in ("live", "record", "replay"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode != "live" and cache is None:
            raise ValueError(f"mode {mode!r} needs a replay cache")
        self.endpoint = (endpoint or os.environ.get(ENV_ENDPOINT, "")).rstrip("/")
        self.model = model or os.environ.get(ENV_MODEL, "default")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_API_KEY)
        if not self.endpoint and mode != "replay":
            raise ValueError(f"no endpoint given and ${ENV_ENDPOINT} is unset")
        self.cache, self.mode, self.retry = cache, mode, retry
        self.max_budget = max_budget
        self.probe_capable = True
        self._sleep = sleep
        self._client = None
        if mode != "replay":
            import httpx

            headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
            self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def describe(self) -> dict:
        return {"backend": self.name, "endpoint": self.endpoint, "model": self.model, "mode": self.mode}

    def close(self) -> None:
        if self._client is not None:
            self._client.close()

    def _messages(self, ctx: ScoringContext) -> list:
        msgs = []
        if ctx.system:
            msgs.append({"role": "system", "content": ctx.system})
        parts = []
        if ctx.image is not None:
            parts.append({"type": "image_url", "image_url": {"url": data_url(ctx.image, ctx.image_media_type or "image/png")}})
        if ctx.audio is not None:
            parts.append({"type": "input_audio", "input_audio": {"data": base64.b64encode(ctx.audio).decode("ascii"), "format": "wav"}})
        parts.append({"type": "text", "text": ctx.prompt})
        msgs.append({"role": "user", "content": parts if len(parts) > 1 else ctx.prompt})
        return msgs

    def _post(self, body: dict) -> dict:
        if self.cache is not None:
            hit = self.cache.get(body)
            if hit is not None:
                return hit
        if self.mode == "replay":
            raise BackendError(f"replay cache miss for request {ReplayCache.key_for(body)[:12]}")
        import httpx

        url = f"{self.endpoint}/chat/completions"
        last = None
        for attempt in range(self.retry.max_retries + 1):
            try:
                resp = self._client.post(url, json=body)
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = BackendError(f"HTTP {resp.status_code} from {url}")
                elif resp.status_code >= 400:
                    raise BackendError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
                else:
                    data = resp.json()
                    if self.cache is not None:
                        self.cache.put(body, data)
                    return data
            except httpx.TransportError as exc:
                last = BackendError(f"transport failure: {exc}")
            if attempt < self.retry.max_retries:
                self._sleep(self.retry.delay(attempt))
        raise last

    def generate(self, ctx: ScoringContext, budget: int = MAX_BUDGET) -> GenerationResult:
        _check_budget(budget, self.max_budget)
        body = {
            "model": self.model,
            "messages": self._messages(ctx),
            "temperature": 0,
            "top_p": 1,
            "max_tokens": budget,
            "seed": 0,
        }
        data = self._post(body)
        try:
            choice = data["choices"][0]
            return GenerationResult(choice["message"]["content"] or "", choice.get("finish_reason") or "stop",
                                    dict(data.get("usage") or {}))
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed completion response: {exc}") from exc

    def score_continuation(self, ctx: ScoringContext, continuation: str) -> TokenLosses:
        if not continuation or not continuation.strip():
            raise ValueError("continuation must be non-empty")
        body = {
            "model": self.model,
            "messages": self._messages(ctx) + [{"role": "assistant", "content": continuation}],
            "temperature": 0,
            "max_tokens": 1,
            "echo": True,
            "logprobs": True,
            "add_generation_prompt": False,
            "continue_final_message": True,
        }
        data = self._post(body)
        try:
            content = data["choices"][0]["logprobs"]["content"]
        except (KeyError, IndexError, TypeError):
            content = None
        if not content:
            self.probe_capable = False
            raise CapabilityError(f"{self.endpoint} returned no continuation logprobs; backend is probe-incapable")
        tokens = tuple(str(c.get("token", "")) for c in content)
        losses = tuple(max(0.0, -float(c["logprob"])) for c in content)
        return TokenLosses(tokens, losses)


def backend_from_config(cfg: dict, cache_path=None):
    """``{"kind": "mock", ...spec}`` or ``{"kind": "http", "endpoint", "model", "mode"}``."""
    kind = cfg.get("kind", "mock")
    if kind == "mock":
        return MockBackend({k: v for k, v in cfg.items() if k != "kind"})
    if kind == "http":
        cache = ReplayCache(cfg.get("cache", cache_path)) if (cfg.get("cache") or cache_path) else None
        retry = RetryPolicy(int(cfg.get("max_retries", 3)), float(cfg.get("backoff", 0.5)))
        return HTTPBackend(cfg.get("endpoint"), cfg.get("model"), api_key=cfg.get("api_key"), cache=cache,
                           mode=cfg.get("mode", "record" if cache is not None else "live"), retry=retry,
                           timeout=float(cfg.get("timeout", 120.0)))
    raise ValueError(f"unknown backend kind {kind!r}")


def map_bounded(fn, items, max_workers: int = 1) -> list:
    """``[fn(x) for x in items]`` with at most ``max_workers`` in flight; order preserved."""
    items = list(items)
    if max_workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fn, items))
