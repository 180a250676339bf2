"""Few-shot selection and federated partitioning of labeled sample pools."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import FormatError
from .oracle import Sample
from .seeding import rng_from


class PartitionMode(str, Enum):
    IID = "iid"
    DIRICHLET = "dirichlet"


@dataclass
class Shard:
    """One client's private slice of the training pool."""

    client_id: int
    samples: list[Sample]

    @property
    def size(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    alpha: float
    seed: int
    mode: PartitionMode = PartitionMode.DIRICHLET

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if self.mode is PartitionMode.DIRICHLET and self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


def _by_class(samples: list[Sample]) -> dict[int, list[int]]:
    classes: dict[int, list[int]] = {}
    for i, s in enumerate(samples):
        classes.setdefault(s.label, []).append(i)
    return classes


def few_shot_select(pool: list[Sample], per_class: int, seed: int) -> list[Sample]:
    """Exactly ``per_class`` samples of every class, drawn without replacement."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    classes = _by_class(pool)
    rng = rng_from(seed)
    out: list[Sample] = []
    for label in sorted(classes):
        indices = classes[label]
        if len(indices) < per_class:
            raise ValueError(
                f"class {label} has only {len(indices)} samples, need {per_class}"
            )
        chosen = rng.choice(len(indices), size=per_class, replace=False)
        out.extend(pool[indices[i]] for i in sorted(chosen))
    return out


def _largest_remainder(fractions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to ``total`` proportional to ``fractions``."""
    raw = fractions * total
    counts = np.floor(raw).astype(np.int64)
    shortfall = total - int(counts.sum())
    if shortfall > 0:
        remainders = raw - counts
        # ties resolved toward lower index via stable sort on the negation
        order = np.argsort(-remainders, kind="stable")
        counts[order[:shortfall]] += 1
    return counts


def dirichlet_partition(samples: list[Sample], spec: PartitionSpec) -> list[Shard]:
    """Split ``samples`` into one shard per client.

    Dirichlet mode draws, for each class, client proportions from
    Dir(alpha) and converts them to counts by largest-remainder rounding;
    IID mode shuffles and deals round-robin. Every sample lands in exactly
    one shard and no shard is left empty (one sample is moved from the
    largest shard if rounding starves one).
    """
    if spec.num_clients > len(samples):
        raise ValueError(
            f"cannot split {len(samples)} samples across {spec.num_clients} clients"
        )
    rng = rng_from(spec.seed)
    assigned: list[list[Sample]] = [[] for _ in range(spec.num_clients)]

    if spec.mode is PartitionMode.IID:
        order = rng.permutation(len(samples))
        for pos, idx in enumerate(order):
            assigned[pos % spec.num_clients].append(samples[idx])
    else:
        classes = _by_class(samples)
        for label in sorted(classes):
            indices = np.array(classes[label])
            rng.shuffle(indices)
            proportions = rng.dirichlet(np.full(spec.num_clients, spec.alpha))
            counts = _largest_remainder(proportions, len(indices))
            start = 0
            for client, count in enumerate(counts):
                for idx in indices[start : start + count]:
                    assigned[client].append(samples[idx])
                start += count

    for client, bucket in enumerate(assigned):
        while not bucket:
            donor = max(range(spec.num_clients), key=lambda c: len(assigned[c]))
            if len(assigned[donor]) <= 1:
                raise ValueError("not enough samples to give every client one")
            bucket.append(assigned[donor].pop())

    return [Shard(client_id=c, samples=bucket) for c, bucket in enumerate(assigned)]


def hash_tokenize(text: str, vocab_size: int) -> np.ndarray:
    """Whitespace split, each token hashed (blake2b) into [0, vocab_size)."""
    words = text.split()
    if not words:
        raise ValueError("text has no whitespace-delimited tokens")
    ids = [
        int.from_bytes(hashlib.blake2b(w.encode("utf-8"), digest_size=8).digest(), "little")
        % vocab_size
        for w in words
    ]
    return np.asarray(ids, dtype=np.int64)


def load_jsonl(path, vocab_size: int | None = None) -> list[Sample]:
    """Read one sample per line: {"token_ids": [...] | "text": "...", "label": int}."""
    out: list[Sample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON ({exc.msg})", line=lineno) from exc
            if not isinstance(obj, dict):
                raise FormatError("expected a JSON object", line=lineno)
            if "label" not in obj:
                raise FormatError('missing "label"', line=lineno)
            label = obj["label"]
            if not isinstance(label, int) or isinstance(label, bool):
                raise FormatError('"label" must be an integer', line=lineno)
            text = None
            if "token_ids" in obj:
                token_ids = obj["token_ids"]
                if (
                    not isinstance(token_ids, list)
                    or not token_ids
                    or not all(isinstance(t, int) for t in token_ids)
                ):
                    raise FormatError('"token_ids" must be a non-empty integer list', line=lineno)
                ids = np.asarray(token_ids, dtype=np.int64)
                text = obj.get("text")
            elif "text" in obj:
                if vocab_size is None:
                    raise FormatError(
                        '"text" sample needs a configured vocab_size to tokenize', line=lineno
                    )
                text = obj["text"]
                try:
                    ids = hash_tokenize(text, vocab_size)
                except ValueError as exc:
                    raise FormatError(str(exc), line=lineno) from exc
            else:
                raise FormatError('need "token_ids" or "text"', line=lineno)
            try:
                out.append(Sample(ids, label, text=text))
            except ValueError as exc:
                raise FormatError(str(exc), line=lineno) from exc
    return out
