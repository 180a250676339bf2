"""Protocol conformance of the served endpoints."""

import numpy as np
import requests

from tests.conftest import BRIDGE_CFG

WIDTH = 32  # tiny-random hidden size
PROMPT_DIM = BRIDGE_CFG.prompt_tokens * WIDTH


def post_eval(endpoint, payload):
    return requests.post(f"{endpoint}/evaluate", json=payload, timeout=30)


def well_formed(prompt=None, n=3, return_per_sample=False):
    rng = np.random.default_rng(0)
    return {
        "prompt": list(prompt if prompt is not None else np.zeros(PROMPT_DIM)),
        "samples": [
            {"token_ids": [int(t) for t in rng.integers(0, 128, 6)], "label": int(i % 2)}
            for i in range(n)
        ],
        "return_per_sample": return_per_sample,
    }


def test_info_reports_configured_dimensions(bridge_endpoint):
    info = requests.get(f"{bridge_endpoint}/info", timeout=10).json()
    assert info["prompt_dim"] == PROMPT_DIM
    assert info["num_classes"] == len(BRIDGE_CFG.verbalizer)
    assert info["model_name"] == "tiny-random"


def test_evaluate_basic_contract(bridge_endpoint):
    resp = post_eval(bridge_endpoint, well_formed(n=1))
    assert resp.status_code == 200
    body = resp.json()
    assert np.isfinite(body["loss"]) and body["loss"] >= 0
    assert body["accuracy"] in (0.0, 1.0)
    assert body["num_classes"] == 2
    assert "per_sample_loss" not in body


def test_per_sample_losses_consistent(bridge_endpoint):
    body = post_eval(bridge_endpoint, well_formed(n=5, return_per_sample=True)).json()
    per = body["per_sample_loss"]
    assert len(per) == 5
    assert abs(np.mean(per) - body["loss"]) <= 1e-6


def test_repeated_calls_agree(bridge_endpoint):
    rng = np.random.default_rng(3)
    payload = well_formed(prompt=rng.standard_normal(PROMPT_DIM), n=4)
    a = post_eval(bridge_endpoint, payload).json()
    b = post_eval(bridge_endpoint, payload).json()
    assert abs(a["loss"] - b["loss"]) <= 1e-6
    assert a["accuracy"] == b["accuracy"]


def test_prompt_dim_mismatch_is_400(bridge_endpoint):
    payload = well_formed()
    payload["prompt"] = payload["prompt"][:-1]
    resp = post_eval(bridge_endpoint, payload)
    assert resp.status_code == 400
    assert resp.json()["error"] == "prompt_dim mismatch"


def test_malformed_json_is_400(bridge_endpoint):
    resp = requests.post(
        f"{bridge_endpoint}/evaluate",
        data="{not json",
        headers={"Content-Type": "application/json"},
        timeout=10,
    )
    assert resp.status_code == 400
    assert "error" in resp.json()


def test_bad_token_ids_are_400(bridge_endpoint):
    payload = well_formed(n=1)
    payload["samples"][0]["token_ids"] = [999999]
    resp = post_eval(bridge_endpoint, payload)
    assert resp.status_code == 400
    assert "error" in resp.json()


def test_missing_label_is_400(bridge_endpoint):
    payload = well_formed(n=1)
    del payload["samples"][0]["label"]
    resp = post_eval(bridge_endpoint, payload)
    assert resp.status_code == 400


def test_empty_samples_are_400(bridge_endpoint):
    payload = well_formed(n=1)
    payload["samples"] = []
    assert post_eval(bridge_endpoint, payload).status_code == 400


def test_text_without_tokenizer_is_400(bridge_endpoint):
    # tiny-random serves no tokenizer, so raw text cannot be scored
    payload = well_formed(n=1)
    payload["samples"][0] = {"text": "a sentence", "label": 0}
    resp = post_eval(bridge_endpoint, payload)
    assert resp.status_code == 400
    assert "token_ids" in resp.json()["error"]


def test_large_batch_chunked(bridge_endpoint):
    body = post_eval(bridge_endpoint, well_formed(n=150, return_per_sample=True)).json()
    assert len(body["per_sample_loss"]) == 150
    assert abs(np.mean(body["per_sample_loss"]) - body["loss"]) <= 1e-6
