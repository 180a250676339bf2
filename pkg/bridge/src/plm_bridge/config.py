"""Bridge configuration."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field


@dataclass
class BridgeConfig:
    """Settings for one served model.

    ``model`` is either a Hugging Face checkpoint name/path for a masked LM,
    or the literal ``"tiny-random"`` to build a small randomly initialized
    BERT (seeded by ``model_seed``), which works offline and in tests.
    ``verbalizer`` maps each class index to the vocabulary token id whose
    mask-position logit scores that class. ``template`` optionally wraps raw
    text samples; ``{text}`` marks the sentence slot and the mask token is
    appended after the template.
    """

    model: str = "tiny-random"
    prompt_tokens: int = 4
    verbalizer: list[int] = field(default_factory=lambda: [10, 11])
    host: str = "127.0.0.1"
    port: int = 8080
    max_batch_size: int = 64
    template: str | None = None
    model_seed: int = 0
    vocab_size: int = 128  # tiny-random only

    def __post_init__(self):
        if self.prompt_tokens < 1:
            raise ValueError("prompt_tokens must be >= 1")
        if len(self.verbalizer) < 2:
            raise ValueError("verbalizer must cover at least 2 classes")
        if self.max_batch_size < 1:
            raise ValueError("max_batch_size must be >= 1")

    @classmethod
    def from_file(cls, path: str) -> "BridgeConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)
