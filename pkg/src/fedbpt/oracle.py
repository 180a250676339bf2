"""Black-box oracles: anything mapping (prompt, labeled batch) to a loss.

Three families live behind the same ``evaluate`` surface:

* analytic test functions (sphere, Rosenbrock, Rastrigin) that ignore the
  batch and score the subspace vector directly: they certify the optimizer
  without any prompt machinery in the loop;
* ``SyntheticPLM``, a frozen random classifier with a planted optimal prompt,
  the desk-scale stand-in for a real language model;
* ``RemoteOracle``, an HTTP client for the wire protocol (GET /info,
  POST /evaluate) served by an external model process.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import requests

from . import _kernels
from .errors import RemoteRejection, TaskGenerationError, TransportError
from .seeding import child_seed, rng_from
from .subspace import ProjectionSpec, generate_projection

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class Sample:
    """One labeled token sequence. ``text`` is kept when loaded from raw text."""

    token_ids: np.ndarray
    label: int
    text: str | None = None

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        if self.token_ids.ndim != 1 or self.token_ids.shape[0] == 0:
            raise ValueError("token_ids must be a non-empty 1-D sequence")
        if self.label < 0:
            raise ValueError(f"label must be non-negative, got {self.label}")


@dataclass
class LossReport:
    """Scalar outcome of one oracle call."""

    loss: float
    accuracy: float
    per_sample_loss: np.ndarray | None
    num_classes: int


def pack_batch(batch: list[Sample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Flatten a batch into (flat_tokens, offsets, labels) for the kernels."""
    lengths = np.fromiter((s.token_ids.shape[0] for s in batch), dtype=np.int64)
    offsets = np.zeros(len(batch) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    flat = np.concatenate([s.token_ids for s in batch])
    labels = np.fromiter((s.label for s in batch), dtype=np.int64)
    return flat, offsets, labels


# ---------------------------------------------------------------------------
# analytic test functions


def sphere(z: np.ndarray) -> float:
    return float(np.dot(z, z))


def rosenbrock(z: np.ndarray) -> float:
    return float(np.sum(100.0 * (z[1:] - z[:-1] ** 2) ** 2 + (1.0 - z[:-1]) ** 2))


def rastrigin(z: np.ndarray) -> float:
    return float(10.0 * z.shape[0] + np.sum(z**2 - 10.0 * np.cos(2.0 * np.pi * z)))


TEST_FUNCTIONS = {"sphere": sphere, "rosenbrock": rosenbrock, "rastrigin": rastrigin}


class TestFunctionOracle:
    """Adapter giving an analytic function the oracle surface.

    The "prompt" it receives is the subspace vector itself; the batch is
    ignored. Accuracy is reported as 0 and the class count as 1.
    """

    def __init__(self, fn, dim: int):
        self._fn = fn
        self.prompt_dim = dim
        self.num_classes = 1

    def evaluate(self, prompt, batch=(), return_per_sample: bool = False) -> LossReport:
        z = np.asarray(prompt, dtype=np.float64)
        if z.shape != (self.prompt_dim,):
            raise ValueError(f"expected vector of length {self.prompt_dim}, got {z.shape}")
        value = float(self._fn(z))
        per_sample = np.array([value]) if return_per_sample else None
        return LossReport(value, 0.0, per_sample, 1)


# ---------------------------------------------------------------------------
# synthetic frozen classifier


@dataclass(eq=False)
class SyntheticPLM:
    """Frozen random classifier with a planted optimal prompt.

    The forward pass reshapes the prompt into ``prompt_tokens`` pseudo-token
    embeddings, mean-pools them with the looked-up token embeddings and
    applies two frozen dense layers (tanh in between). ``golden_z`` is the
    subspace vector whose projected prompt generated the task's labels.
    """

    embedding: np.ndarray  # (vocab, embed_dim)
    w1: np.ndarray  # (embed_dim, hidden_dim)
    w2: np.ndarray  # (hidden_dim, num_classes)
    prompt_tokens: int
    golden_z: np.ndarray

    def __post_init__(self):
        for name in ("embedding", "w1", "w2"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            setattr(self, name, arr)
        self.golden_z = np.asarray(self.golden_z, dtype=np.float64)

    @property
    def vocab_size(self) -> int:
        return self.embedding.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.embedding.shape[1]

    @property
    def num_classes(self) -> int:
        return self.w2.shape[1]

    @property
    def prompt_dim(self) -> int:
        return self.prompt_tokens * self.embed_dim

    def _forward(self, prompt: np.ndarray, batch: list[Sample]):
        prompt = np.asarray(prompt, dtype=np.float64)
        if prompt.shape != (self.prompt_dim,):
            raise ValueError(
                f"prompt length {prompt.shape} does not match model dimension {self.prompt_dim}"
            )
        if not batch:
            raise ValueError("batch must be non-empty")
        flat, offsets, labels = pack_batch(batch)
        if flat.min() < 0 or flat.max() >= self.vocab_size:
            raise ValueError("token id outside the model vocabulary")
        if labels.max() >= self.num_classes:
            raise ValueError("label outside the model's class range")
        prompt_sum = prompt.reshape(self.prompt_tokens, self.embed_dim).sum(axis=0)
        return _kernels.forward(
            self.embedding, self.w1, self.w2, prompt_sum,
            float(self.prompt_tokens), flat, offsets, labels,
        ) + (labels,)

    def evaluate(self, prompt, batch, return_per_sample: bool = False) -> LossReport:
        losses, preds, labels = self._forward(prompt, batch)
        return LossReport(
            loss=float(losses.mean()),
            accuracy=float(np.mean(preds == labels)),
            per_sample_loss=losses if return_per_sample else None,
            num_classes=self.num_classes,
        )

    def predict(self, prompt, batch: list[Sample]) -> np.ndarray:
        """Argmax class per sample (lowest index on ties)."""
        _, preds, _ = self._forward(prompt, batch)
        return preds

    def _predict_matrix(self, prompt: np.ndarray, ids: np.ndarray) -> np.ndarray:
        """Batch prediction on an (n, seq_len) id matrix, bypassing Sample packing."""
        n, seq_len = ids.shape
        flat = ids.reshape(-1)
        offsets = np.arange(0, (n + 1) * seq_len, seq_len, dtype=np.int64)
        labels = np.zeros(n, dtype=np.int64)
        prompt_sum = prompt.reshape(self.prompt_tokens, self.embed_dim).sum(axis=0)
        _, preds = _kernels.forward(
            self.embedding, self.w1, self.w2, prompt_sum,
            float(self.prompt_tokens), flat, offsets, labels,
        )
        return preds


@dataclass
class SyntheticTaskConfig:
    """Knobs for the generated classification task."""

    vocab_size: int = 100
    embed_dim: int = 20
    prompt_tokens: int = 5
    hidden_dim: int = 32
    num_classes: int = 4
    sub_dim: int = 10
    seq_len: int = 16
    train_per_class: int = 40
    test_per_class: int = 100
    gamma: float = 1.0
    # Gain on the class layer. Argmax (labels, accuracy, floor, ceiling) is
    # invariant to it; it only sharpens the softmax so the cross-entropy at
    # the planted prompt is confidently low instead of near-uniform.
    output_gain: float = 4.0
    # Gain on the hidden layer: >1 saturates the tanh units, which makes the
    # loss landscape over the subspace rugged (plateaus and cliffs).
    hidden_gain: float = 1.0
    gap_threshold: float = 0.10
    max_retries: int = 50
    max_draws: int = 200_000


@dataclass
class SyntheticTask:
    """A generated task: frozen model, its projection, splits and bounds."""

    model: SyntheticPLM
    projection: ProjectionSpec
    matrix: np.ndarray = field(repr=False)
    train_pool: list[Sample]
    test_set: list[Sample]
    floor_accuracy: float
    ceiling_accuracy: float


def generate_task(cfg: SyntheticTaskConfig, seed: int) -> SyntheticTask:
    """Draw a frozen model and a labeled few-shot task it can solve.

    Labels are the model's own predictions under the planted prompt
    p* = A golden_z, so the ceiling accuracy is exactly 1. The zero-prompt
    accuracy is the floor; tasks whose ceiling-floor gap falls below the
    threshold (or whose rarest class cannot fill the splits within the draw
    budget) are resampled with fresh weights and a fresh projection. A
    class absent from the first chunk of draws aborts the attempt at once:
    the planted prompt's shift has drowned that class out, and no draw
    budget rescues a near-zero marginal.
    """
    need = cfg.train_per_class + cfg.test_per_class

    for attempt in range(cfg.max_retries):
        projection = ProjectionSpec(
            full_dim=cfg.prompt_tokens * cfg.embed_dim,
            sub_dim=cfg.sub_dim,
            seed=child_seed(seed, "projection", attempt),
            gamma=cfg.gamma,
        )
        matrix = generate_projection(projection)
        # weight variance 1/sqrt(fan_in): keeps the logits O(1) at this depth
        wrng = rng_from(child_seed(seed, "weights", attempt))
        model = SyntheticPLM(
            embedding=wrng.normal(0.0, cfg.embed_dim**-0.25, (cfg.vocab_size, cfg.embed_dim)),
            w1=cfg.hidden_gain
            * wrng.normal(0.0, cfg.embed_dim**-0.25, (cfg.embed_dim, cfg.hidden_dim)),
            w2=cfg.output_gain
            * wrng.normal(0.0, cfg.hidden_dim**-0.25, (cfg.hidden_dim, cfg.num_classes)),
            prompt_tokens=cfg.prompt_tokens,
            golden_z=wrng.standard_normal(cfg.sub_dim),
        )
        golden_prompt = matrix @ model.golden_z

        drng = rng_from(child_seed(seed, "data", attempt))
        buckets: list[list[np.ndarray]] = [[] for _ in range(cfg.num_classes)]
        drawn = 0
        chunk = 2048
        while drawn < cfg.max_draws and any(len(b) < need for b in buckets):
            ids = drng.integers(0, cfg.vocab_size, size=(chunk, cfg.seq_len), dtype=np.int64)
            drawn += chunk
            preds = model._predict_matrix(golden_prompt, ids)
            for row, label in zip(ids, preds):
                bucket = buckets[int(label)]
                if len(bucket) < need:
                    bucket.append(row)
            if drawn == chunk and any(not b for b in buckets):
                break
        if any(len(b) < need for b in buckets):
            continue

        train = [
            Sample(row, c)
            for c in range(cfg.num_classes)
            for row in buckets[c][: cfg.train_per_class]
        ]
        test = [
            Sample(row, c)
            for c in range(cfg.num_classes)
            for row in buckets[c][cfg.train_per_class : need]
        ]
        drng.shuffle(test)

        floor = model.evaluate(np.zeros(model.prompt_dim), test).accuracy
        ceiling = model.evaluate(golden_prompt, test).accuracy
        if ceiling - floor >= cfg.gap_threshold:
            return SyntheticTask(
                model=model,
                projection=projection,
                matrix=matrix,
                train_pool=train,
                test_set=test,
                floor_accuracy=floor,
                ceiling_accuracy=ceiling,
            )

    raise TaskGenerationError(
        f"no healthy task within {cfg.max_retries} attempts (seed {seed})"
    )


# ---------------------------------------------------------------------------
# remote oracle over the wire protocol


class RemoteOracle:
    """Client for an oracle served over HTTP.

    ``GET {endpoint}/info`` is fetched once at construction to learn the
    prompt dimension and class count; ``evaluate`` posts one JSON document
    per call and maps the response straight into a ``LossReport``.
    """

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        info = self._request("GET", "/info")
        self.prompt_dim = int(info["prompt_dim"])
        self.num_classes = int(info["num_classes"])
        self.model_name = str(info.get("model_name", ""))

    def _request(self, method: str, path: str, body: dict | None = None) -> dict:
        url = self.endpoint + path
        try:
            resp = requests.request(method, url, json=body, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"{method} {url}: {exc}") from exc
        if resp.status_code == 400:
            try:
                message = resp.json().get("error", resp.text)
            except json.JSONDecodeError:
                message = resp.text
            raise RemoteRejection(message)
        if resp.status_code != 200:
            raise TransportError(f"{method} {url}: HTTP {resp.status_code}")
        try:
            return resp.json()
        except json.JSONDecodeError as exc:
            raise TransportError(f"{method} {url}: malformed JSON response") from exc

    def evaluate(self, prompt, batch, return_per_sample: bool = False) -> LossReport:
        prompt = np.asarray(prompt, dtype=np.float64)
        if prompt.shape != (self.prompt_dim,):
            raise ValueError(
                f"prompt length {prompt.shape} does not match endpoint dimension {self.prompt_dim}"
            )
        # token ids travel, never text: they are what the tuner perturbs, and
        # samples loaded from raw text were already tokenized into the
        # configured vocabulary
        payload = {
            "prompt": [float(x) for x in prompt],
            "samples": [
                {"token_ids": [int(t) for t in s.token_ids], "label": int(s.label)}
                for s in batch
            ],
            "return_per_sample": bool(return_per_sample),
        }
        data = self._request("POST", "/evaluate", payload)
        per_sample = data.get("per_sample_loss")
        if per_sample is not None:
            per_sample = np.asarray(per_sample, dtype=np.float64)
            if abs(float(per_sample.mean()) - float(data["loss"])) > 1e-9:
                logger.warning(
                    "per-sample losses average %.6g but reported loss is %.6g",
                    float(per_sample.mean()),
                    float(data["loss"]),
                )
        return LossReport(
            loss=float(data["loss"]),
            accuracy=float(data["accuracy"]),
            per_sample_loss=per_sample,
            num_classes=int(data["num_classes"]),
        )


class CountingOracle:
    """Pass-through wrapper counting ``evaluate`` calls (for instrumentation)."""

    def __init__(self, inner):
        self.inner = inner
        self.calls = 0

    @property
    def prompt_dim(self) -> int:
        return self.inner.prompt_dim

    @property
    def num_classes(self) -> int:
        return self.inner.num_classes

    def evaluate(self, prompt, batch, return_per_sample: bool = False) -> LossReport:
        self.calls += 1
        return self.inner.evaluate(prompt, batch, return_per_sample)

    def predict(self, prompt, batch):
        return self.inner.predict(prompt, batch)
