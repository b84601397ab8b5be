import random

import requests

from conftest import vocab_sentence


def _request_body(rng, n=2, want_attention=False):
    return {
        "request_id": f"t-{rng.randrange(10_000)}",
        "question": vocab_sentence(rng, 4),
        "passages": [
            {"title": vocab_sentence(rng, 2), "text": vocab_sentence(rng, 6)}
            for _ in range(n)
        ],
        "want_attention": want_attention,
    }


def test_handshake_schema(server):
    body = requests.get(f"{server}/v1/handshake", timeout=10).json()
    assert set(body) == {"model_name", "model_version", "supports_attention"}
    assert body["supports_attention"] is True
    assert body["model_name"] and body["model_version"]


def test_answer_happy_path(server):
    rng = random.Random(0)
    body = _request_body(rng)
    resp = requests.post(f"{server}/v1/answer", json=body, timeout=30)
    assert resp.status_code == 200
    reply = resp.json()
    assert reply["request_id"] == body["request_id"]
    assert isinstance(reply["answer"], str)
    assert "attention" not in reply


def test_answer_with_attention(server):
    rng = random.Random(1)
    body = _request_body(rng, n=3, want_attention=True)
    reply = requests.post(f"{server}/v1/answer", json=body, timeout=30).json()
    assert len(reply["attention"]) == 3
    assert all(a >= 0 for a in reply["attention"])


def test_empty_passages_rejected(server):
    body = {"request_id": "x", "question": "q", "passages": []}
    resp = requests.post(f"{server}/v1/answer", json=body, timeout=10)
    assert resp.status_code == 400
    assert resp.json()["field"] == "passages"


def test_bad_passage_shape_rejected(server):
    body = {"request_id": "x", "question": "q", "passages": [{"title": "t"}]}
    resp = requests.post(f"{server}/v1/answer", json=body, timeout=10)
    assert resp.status_code == 400
    assert resp.json()["field"] == "passages[0]"


def test_malformed_json_rejected(server):
    resp = requests.post(f"{server}/v1/answer", data=b"{oops", timeout=10,
                         headers={"Content-Type": "application/json"})
    assert resp.status_code == 400


def test_over_limit_returns_413(server):
    rng = random.Random(2)
    body = _request_body(rng, n=9)  # server fixture caps at 8
    resp = requests.post(f"{server}/v1/answer", json=body, timeout=30)
    assert resp.status_code == 413
