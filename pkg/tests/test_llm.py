import json
import math
import threading

import httpx
import pytest
from hypothesis import given, strategies as st

from recmem.errors import LlmFailure, LlmTimeout, UnknownConversation
from recmem.fixtures import StreamSpec, synthetic_stream
from recmem.llm import (
    LlmRequest,
    RemoteLLM,
    StubLLM,
    TokenLedger,
    TokenUsage,
    estimate_tokens,
    parse_json_output,
)


def test_usage_ceil_arithmetic():
    # independent one-liner: -(-n // 4)
    for n in (0, 1, 3, 4, 5, 399, 400, 401):
        assert estimate_tokens("x" * n) == -(-n // 4)
    assert (estimate_tokens("p" * 400), estimate_tokens("o" * 80)) == (100, 20)


def test_stub_answer_usage_for_400_char_prompt():
    req = LlmRequest("answer", "q" * 400, inputs={"semantic": ["o" * 80]})
    text, usage = StubLLM().complete(req)
    assert text == "o" * 80
    assert usage == TokenUsage(100, 20)


def test_stub_is_deterministic():
    req = LlmRequest("merge", "merge prompt", system="sys", inputs={
        "narrative": "EPISODE:\nold", "turn_id": "t4", "unit_text": "[ts] USER: a\nASSISTANT: b"})
    a, b = StubLLM().complete(req), StubLLM().complete(req)
    assert a == b
    assert json.loads(a[0])["narrative"] == "EPISODE:\nold\nMERGED[t4] [ts] USER: a\nASSISTANT: b"
    # usage is charged on system + prompt
    assert a[1].prompt_tokens == math.ceil(len("sys\nmerge prompt") / 4)


def test_request_validation():
    with pytest.raises(ValueError):
        LlmRequest("answer", "x", temperature=0.7)
    with pytest.raises(ValueError):
        LlmRequest("chat", "x")
    with pytest.raises(ValueError):
        LlmRequest("answer", "")
    assert LlmRequest("refine", "x").phase == "construction"
    assert LlmRequest("answer", "x").phase == "query"


@given(st.lists(st.tuples(st.integers(0, 10**6), st.integers(0, 10**6)), max_size=20))
def test_usage_is_additive(pairs):
    total = sum((TokenUsage(p, c) for p, c in pairs), TokenUsage())
    assert total.prompt_tokens == sum(p for p, _ in pairs)
    assert total.completion_tokens == sum(c for _, c in pairs)
    assert total.total == sum(p + c for p, c in pairs)


def test_parse_json_tolerates_fences():
    assert parse_json_output('```json\n{"a": 1}\n```') == {"a": 1}
    with pytest.raises(ValueError):
        parse_json_output("not json")


def test_ledger_report_and_averages():
    ledger = TokenLedger()
    ledger.register("c")
    ledger.record("c", "consolidate", TokenUsage(10, 2))
    ledger.record("c", "refine", TokenUsage(5, 1))
    ledger.record("c", "answer", TokenUsage(7, 3), question_id="q1")
    ledger.record("c", "answer", TokenUsage(1, 1), question_id="q2")
    r = ledger.report("c")
    assert r["construction_total"] == {"prompt_tokens": 15, "completion_tokens": 3, "total": 18}
    assert [q["question_id"] for q in r["per_question_query_totals"]] == ["q1", "q2"]
    assert r["averages"]["query_tokens_per_question"] == 6.0
    assert r["construction_calls"] == {"merge": 0, "consolidate": 1, "refine": 1}
    with pytest.raises(UnknownConversation):
        ledger.report("nope")
    with pytest.raises(ValueError):
        ledger.record("c", "answer", TokenUsage(1, 1))
    with pytest.raises(ValueError):
        ledger.record("c", "merge", TokenUsage(1, 1), question_id="q")
    again = TokenLedger.from_json(json.loads(json.dumps(ledger.to_json())))
    assert again.report("c") == r


def test_ledger_zero_questions():
    ledger = TokenLedger()
    ledger.register("c")
    r = ledger.report("c")
    assert r["per_question_query_totals"] == []
    assert r["construction_total"]["total"] == 0
    assert r["averages"]["query_tokens_per_question"] == 0.0


def test_ledger_is_thread_safe():
    ledger = TokenLedger()

    def work(cid):
        for i in range(500):
            ledger.record(cid, "answer", TokenUsage(1, 1), question_id=f"q{i % 5}")

    threads = [threading.Thread(target=work, args=(c,)) for c in ("a", "a", "b", "b")]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for c in ("a", "b"):
        assert ledger.calls(c, "answer") == 1000
        assert sum(q["total"] for q in ledger.report(c)["per_question_query_totals"]) == 2000


def test_eager_run_spends_one_consolidate_and_one_refine_per_turn(make_engine):
    n = 12
    eng = make_engine(mode="eager")
    for u in synthetic_stream(StreamSpec(n, [4], seed=2)):
        eng.ingest(u)
    assert eng.ledger.calls("c", "consolidate") == n
    assert eng.ledger.calls("c", "refine") == n
    assert eng.ledger.calls("c", "merge") == 0


# -- remote backend --------------------------------------------------------

def _client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def _ok(content="hello", usage=(12, 3)):
    return httpx.Response(200, json={
        "choices": [{"message": {"content": content}}],
        "usage": {"prompt_tokens": usage[0], "completion_tokens": usage[1]},
    })


def test_remote_request_shape(monkeypatch):
    seen = []

    def handler(request):
        seen.append((str(request.url), request.headers.get("authorization"), json.loads(request.read())))
        return _ok()

    monkeypatch.setenv("RECMEM_API_KEY", "k")
    llm = RemoteLLM("m1", "http://h/v1/", client=_client(handler))
    text, usage = llm.complete(LlmRequest("answer", "question?", system="be brief"))
    assert (text, usage) == ("hello", TokenUsage(12, 3))
    url, auth, body = seen[0]
    assert url == "http://h/v1/chat/completions" and auth == "Bearer k"
    assert body == {"model": "m1", "temperature": 0.0, "messages": [
        {"role": "system", "content": "be brief"}, {"role": "user", "content": "question?"}]}


def test_remote_retries_with_exponential_backoff():
    responses = iter([httpx.Response(503), httpx.Response(500), _ok("fine")])
    delays = []
    llm = RemoteLLM(client=_client(lambda r: next(responses)), sleep=delays.append)
    assert llm.complete(LlmRequest("merge", "x"))[0] == "fine"
    assert delays == [1.0, 2.0]


def test_remote_gives_up_after_retries():
    calls, delays = [], []

    def handler(request):
        calls.append(1)
        return httpx.Response(503)

    llm = RemoteLLM(client=_client(handler), sleep=delays.append)
    with pytest.raises(LlmFailure):
        llm.complete(LlmRequest("merge", "x"))
    assert len(calls) == 4 and delays == [1.0, 2.0, 4.0]


def test_remote_timeout_surfaces():
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    llm = RemoteLLM(retries=1, client=_client(handler), sleep=lambda s: None)
    with pytest.raises(LlmTimeout):
        llm.complete(LlmRequest("answer", "x"))


def test_remote_bad_payload():
    llm = RemoteLLM(client=_client(lambda r: httpx.Response(200, json={"choices": []})))
    with pytest.raises(LlmFailure):
        llm.complete(LlmRequest("answer", "x"))
