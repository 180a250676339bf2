"""Bridge conformance acceptance: configured dimensions on /info, a short
federated run driven through the primary package's CLI and remote oracle,
and response stability. One line is printed per criterion."""

import json
import subprocess
import sys

import numpy as np
import pytest
import requests

from tests.conftest import BRIDGE_CFG

PROMPT_DIM = BRIDGE_CFG.prompt_tokens * 32


def report(name: str, ok: bool):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}", flush=True)
    assert ok, name


def test_info_matches_configuration(bridge_endpoint):
    info = requests.get(f"{bridge_endpoint}/info", timeout=10).json()
    ok = (
        info["prompt_dim"] == PROMPT_DIM
        and info["num_classes"] == len(BRIDGE_CFG.verbalizer)
    )
    report("bridge: /info matches configured dimensions", ok)


def test_repeated_evaluate_agrees(bridge_endpoint):
    rng = np.random.default_rng(11)
    payload = {
        "prompt": [float(x) for x in rng.standard_normal(PROMPT_DIM)],
        "samples": [
            {"token_ids": [int(t) for t in rng.integers(0, 128, 8)], "label": int(i % 2)}
            for i in range(6)
        ],
        "return_per_sample": True,
    }
    a = requests.post(f"{bridge_endpoint}/evaluate", json=payload, timeout=30).json()
    b = requests.post(f"{bridge_endpoint}/evaluate", json=payload, timeout=30).json()
    ok = (
        abs(a["loss"] - b["loss"]) <= 1e-6
        and max(abs(x - y) for x, y in zip(a["per_sample_loss"], b["per_sample_loss"])) <= 1e-6
    )
    report("bridge: repeated /evaluate calls agree within 1e-6", ok)


def test_five_round_run_through_remote_oracle(bridge_endpoint, tmp_path):
    rng = np.random.default_rng(0)

    def write_jsonl(path, n):
        with open(path, "w") as fh:
            for i in range(n):
                row = {
                    "token_ids": [int(t) for t in rng.integers(0, 128, 8)],
                    "label": int(i % 2),
                }
                fh.write(json.dumps(row) + "\n")

    write_jsonl(tmp_path / "train.jsonl", 24)
    write_jsonl(tmp_path / "test.jsonl", 16)
    out = tmp_path / "out"
    cfg = {
        "oracle": "remote",
        "endpoint": bridge_endpoint,
        "train_path": str(tmp_path / "train.jsonl"),
        "test_path": str(tmp_path / "test.jsonl"),
        "sub_dim": 8,
        "vocab_size": 128,
        "rounds": 5,
        "clients": 2,
        "per_class": 6,
        "partition": "iid",
        "local_iterations": 3,
        "population": 4,
        "seed": 3,
        "out": str(out),
        "confusion": "none",
    }
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    proc = subprocess.run(
        [sys.executable, "-m", "fedbpt.cli", "run", "--config", str(tmp_path / "cfg.json")],
        capture_output=True,
        text=True,
        timeout=570,
    )
    rows = []
    if proc.returncode == 0:
        rows = (out / "metrics.csv").read_text().splitlines()
    ok = proc.returncode == 0 and len(rows) == 1 + 5 + 1  # header, initial, 5 rounds
    if not ok:
        print(proc.stdout, proc.stderr)
    report("bridge: 5-round K=2 federated run via the remote oracle completes", ok)
