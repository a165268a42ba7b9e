import json
import math

import httpx
import pytest

from mulprobe.arith import Problem
from mulprobe.backend import (
    BackendError,
    CapabilityError,
    HTTPBackend,
    MockBackend,
    ReplayCache,
    RetryPolicy,
    ScoringContext,
    TokenLosses,
    backend_from_config,
    map_bounded,
    mock_tokenize,
    operands_from_context,
)
from mulprobe.render import render

P = Problem.make("p", 47, 36)
CTX = ScoringContext(prompt="What is 47 × 36?")


def test_token_losses_validation():
    with pytest.raises(ValueError):
        TokenLosses((), ())
    with pytest.raises(ValueError):
        TokenLosses(("a",), (-0.1,))
    with pytest.raises(ValueError):
        TokenLosses(("a",), (math.inf,))
    with pytest.raises(ValueError):
        TokenLosses(("a", "b"), (1.0,))
    t = TokenLosses(("a", "b"), (1.0, 2.0))
    assert t.T == 2 and t.total == 3.0
    assert TokenLosses.from_dict(t.to_dict()) == t


def test_mock_tokenize_round_trip():
    s = "Let me  solve\nthis."
    assert "".join(mock_tokenize(s)) == s


def test_context_key_ignores_meta():
    a = ScoringContext("x", meta={"a": 1})
    b = ScoringContext("x", meta={"a": 2})
    assert a == b and a.key() == b.key()
    assert a.key() != ScoringContext("x", system="s").key()


@pytest.mark.parametrize("r", ["numeral_text", "word_text", "numeral_image", "word_image"])
def test_operands_recovered_without_meta(r):
    ctx = ScoringContext.from_rendered(render(P, r))
    assert operands_from_context(ctx) == (47, 36)


def test_hash_scoring_deterministic_and_additive():
    m = MockBackend({"scoring": {"kind": "hash", "seed": 3}})
    a = m.score_continuation(CTX, "Let me round")
    assert a == m.score_continuation(CTX, "Let me round")
    ab = m.score_continuation(CTX, "Let me round to bases")
    assert ab.losses[:3] == a.losses
    assert all(0.5 <= v <= 4.0 for v in ab.losses)


def test_table_scoring():
    spec = {"scoring": {"kind": "table", "entries": [
        {"context": "*", "continuation": "one two", "losses": [1.0, 3.0]},
        {"context": CTX.prompt, "continuation": "one two", "losses": [0.5, 0.5]},
    ]}}
    m = MockBackend(spec)
    assert m.score_continuation(CTX, "one two").losses == (0.5, 0.5)
    assert m.score_continuation(ScoringContext("other"), "one two").losses == (1.0, 3.0)
    with pytest.raises(BackendError):
        m.score_continuation(CTX, "three")


def test_incapable_mock():
    m = MockBackend({"scoring": {"kind": "none"}})
    assert not m.probe_capable
    with pytest.raises(CapabilityError):
        m.score_continuation(CTX, "x")


def test_unknown_kinds():
    with pytest.raises(ValueError):
        MockBackend({"scoring": {"kind": "nope"}})
    with pytest.raises(ValueError):
        MockBackend({"generation": {"kind": "nope"}})


def test_empty_continuation():
    with pytest.raises(ValueError):
        MockBackend().score_continuation(CTX, "  ")


def test_generation_correct_and_budget():
    m = MockBackend({"generation": {"kind": "correct"}})
    g = m.generate(CTX)
    assert g.text.endswith("Answer: 1692") and g.finish_reason == "stop"
    short = m.generate(CTX, budget=2)
    assert short.finish_reason == "length" and short.usage["completion_tokens"] == 2
    with pytest.raises(ValueError):
        m.generate(CTX, budget=0)
    with pytest.raises(ValueError):
        m.generate(CTX, budget=10 ** 6)


def test_generation_accuracy_rate():
    m = MockBackend({"generation": {"kind": "accuracy", "p": 0.05, "seed": 1}})
    ok = 0
    for i in range(2000):
        ctx = ScoringContext(f"What is 47 × 36? #{i}", meta={"a": 47, "b": 36})
        ok += m.generate(ctx).text.endswith("Answer: 1692")
    assert abs(ok / 2000 - 0.95 ** 16) < 0.04


def test_replay_cache_first_write_wins(tmp_path):
    c = ReplayCache(tmp_path / "c.jsonl")
    req = {"b": 1, "a": [1, 2]}
    assert c.put(req, {"v": 1})
    assert not c.put({"a": [1, 2], "b": 1}, {"v": 2})
    assert ReplayCache(tmp_path / "c.jsonl").get(req) == {"v": 1}
    assert len(c) == 1


def _logprob_response(tokens, lps):
    return {"choices": [{"message": {"role": "assistant", "content": ""}, "finish_reason": "length",
                         "logprobs": {"content": [{"token": t, "logprob": lp} for t, lp in zip(tokens, lps)]}}]}


def _chat_response(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
            "usage": {"completion_tokens": 3}}


def test_http_score_and_request_shape():
    seen = []

    def handler(request):
        body = json.loads(request.content)
        seen.append((request, body))
        return httpx.Response(200, json=_logprob_response(["Let", " me"], [-0.5, -1.5]))

    b = HTTPBackend("http://x/v1", "m", api_key="k", mode="live", transport=httpx.MockTransport(handler))
    img = render(P, "numeral_image")
    ctx = ScoringContext.from_rendered(img, P)
    t = b.score_continuation(ctx, "Let me")
    assert t.losses == (0.5, 1.5)
    req, body = seen[0]
    assert str(req.url) == "http://x/v1/chat/completions"
    assert req.headers["authorization"] == "Bearer k"
    assert body["messages"][-1] == {"role": "assistant", "content": "Let me"}
    assert body["echo"] and body["logprobs"]
    user = body["messages"][0]["content"]
    assert user[0]["image_url"]["url"].startswith("data:image/png;base64,")
    assert "meta" not in json.dumps(body) and "problem_id" not in json.dumps(body)


def test_http_generate_decoding_params():
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        return httpx.Response(200, json=_chat_response("Answer: 1692"))

    b = HTTPBackend("http://x", "m", mode="live", transport=httpx.MockTransport(handler))
    g = b.generate(CTX, budget=100)
    assert g.text == "Answer: 1692"
    assert seen[0]["temperature"] == 0 and seen[0]["max_tokens"] == 100 and seen[0]["top_p"] == 1


def test_http_retries_then_succeeds():
    calls = []
    sleeps = []

    def handler(request):
        calls.append(1)
        if len(calls) < 3:
            return httpx.Response(503 if len(calls) == 1 else 429)
        return httpx.Response(200, json=_chat_response("ok"))

    b = HTTPBackend("http://x", "m", mode="live", retry=RetryPolicy(3, 0.1), transport=httpx.MockTransport(handler),
                    sleep=sleeps.append)
    assert b.generate(CTX).text == "ok"
    assert len(calls) == 3 and sleeps == [0.1, 0.2]


def test_http_retries_exhausted():
    def handler(request):
        raise httpx.ConnectError("down")

    b = HTTPBackend("http://x", "m", mode="live", retry=RetryPolicy(2, 0.0), transport=httpx.MockTransport(handler),
                    sleep=lambda s: None)
    with pytest.raises(BackendError, match="transport"):
        b.generate(CTX)


def test_http_client_error_not_retried():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(400, text="bad")

    b = HTTPBackend("http://x", "m", mode="live", transport=httpx.MockTransport(handler), sleep=lambda s: None)
    with pytest.raises(BackendError, match="400"):
        b.generate(CTX)
    assert len(calls) == 1


def test_http_probe_incapable():
    b = HTTPBackend("http://x", "m", mode="live",
                    transport=httpx.MockTransport(lambda r: httpx.Response(200, json=_chat_response("hi"))))
    with pytest.raises(CapabilityError):
        b.score_continuation(CTX, "Let me")
    assert not b.probe_capable


def test_record_then_replay_bit_exact(tmp_path):
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(200, json=_logprob_response(["a", "b"], [-0.123456789, -2.5]))

    cache = ReplayCache(tmp_path / "r.jsonl")
    rec = HTTPBackend("http://x", "m", cache=cache, mode="record", transport=httpx.MockTransport(handler))
    first = rec.score_continuation(CTX, "a b")
    rec.score_continuation(CTX, "a b")
    assert len(calls) == 1
    rep = HTTPBackend(None, "m", cache=ReplayCache(tmp_path / "r.jsonl"), mode="replay")
    assert rep.score_continuation(CTX, "a b") == first
    with pytest.raises(BackendError, match="miss"):
        rep.score_continuation(CTX, "other")


def test_mode_validation(tmp_path):
    with pytest.raises(ValueError):
        HTTPBackend("http://x", mode="replay")
    with pytest.raises(ValueError):
        HTTPBackend("http://x", mode="bogus")


def test_backend_from_config(tmp_path):
    assert isinstance(backend_from_config({"kind": "mock"}), MockBackend)
    b = backend_from_config({"kind": "http", "endpoint": "http://x", "api_key": "k", "max_retries": 5},
                            tmp_path / "c.jsonl")
    assert b.api_key == "k" and b.retry.max_retries == 5 and b.mode == "record"
    with pytest.raises(ValueError):
        backend_from_config({"kind": "grpc"})


def test_map_bounded_preserves_order():
    assert map_bounded(lambda x: x * x, range(50), max_workers=8) == [x * x for x in range(50)]
