"""Frozen masked-LM scoring: prompt embeddings prepended, classes read off
the mask-token logits through a verbalizer."""

from __future__ import annotations

import numpy as np
import torch

from .config import BridgeConfig


class RequestError(ValueError):
    """Client-side fault; surfaces as HTTP 400."""


class MaskedLMScorer:
    """Inference-only wrapper around a masked LM.

    The continuous prompt arrives as a flat vector, is reshaped into
    ``prompt_tokens`` embedding-width rows and prepended to the sample's
    token embeddings; a mask token is appended and class scores are the
    mask-position logits at the verbalizer's token ids.
    """

    def __init__(self, cfg: BridgeConfig):
        self.cfg = cfg
        self.tokenizer = None
        if cfg.model == "tiny-random":
            from transformers import BertConfig, BertForMaskedLM

            torch.manual_seed(cfg.model_seed)
            self.model = BertForMaskedLM(
                BertConfig(
                    vocab_size=cfg.vocab_size,
                    hidden_size=32,
                    num_hidden_layers=2,
                    num_attention_heads=2,
                    intermediate_size=64,
                    max_position_embeddings=256,
                )
            )
            self.mask_token_id = cfg.vocab_size - 1
        else:
            from transformers import AutoModelForMaskedLM, AutoTokenizer

            self.model = AutoModelForMaskedLM.from_pretrained(cfg.model)
            self.tokenizer = AutoTokenizer.from_pretrained(cfg.model)
            if self.tokenizer.mask_token_id is None:
                raise ValueError(f"{cfg.model} has no mask token; not a masked LM")
            self.mask_token_id = self.tokenizer.mask_token_id
        self.model.eval()
        for param in self.model.parameters():
            param.requires_grad_(False)

        self.embeddings = self.model.get_input_embeddings()
        self.width = int(self.embeddings.embedding_dim)
        self.vocab = int(self.embeddings.num_embeddings)
        self.max_positions = int(self.model.config.max_position_embeddings)
        bad = [t for t in cfg.verbalizer if not 0 <= t < self.vocab]
        if bad:
            raise ValueError(f"verbalizer ids outside vocabulary: {bad}")

    @property
    def prompt_dim(self) -> int:
        return self.cfg.prompt_tokens * self.width

    @property
    def num_classes(self) -> int:
        return len(self.cfg.verbalizer)

    @property
    def model_name(self) -> str:
        return self.cfg.model

    def _sample_ids(self, sample: dict) -> list[int]:
        if "token_ids" in sample and sample["token_ids"] is not None:
            ids = sample["token_ids"]
            if not isinstance(ids, list) or not ids:
                raise RequestError("token_ids must be a non-empty list")
            if not all(isinstance(t, int) and 0 <= t < self.vocab for t in ids):
                raise RequestError(f"token ids must lie in [0, {self.vocab})")
            return list(ids)
        if "text" in sample and sample["text"] is not None:
            if self.tokenizer is None:
                raise RequestError("this bridge serves a tokenizer-less model; send token_ids")
            text = str(sample["text"])
            if self.cfg.template:
                text = self.cfg.template.replace("{text}", text)
            ids = self.tokenizer.encode(text, add_special_tokens=False)
            if not ids:
                raise RequestError("text tokenized to an empty sequence")
            return ids
        raise RequestError('sample needs "token_ids" or "text"')

    @torch.no_grad()
    def evaluate(self, prompt: np.ndarray, samples: list[dict]):
        """Mean cross-entropy, accuracy and per-sample losses for a batch."""
        if prompt.shape != (self.prompt_dim,):
            raise RequestError("prompt_dim mismatch")
        if not samples:
            raise RequestError("samples must be non-empty")
        n_classes = self.num_classes
        id_lists, labels = [], []
        for sample in samples:
            if "label" not in sample or not isinstance(sample["label"], int):
                raise RequestError('sample needs an integer "label"')
            if not 0 <= sample["label"] < n_classes:
                raise RequestError(f"label must lie in [0, {n_classes})")
            ids = self._sample_ids(sample)
            if self.cfg.prompt_tokens + len(ids) + 1 > self.max_positions:
                raise RequestError(
                    f"sequence too long: {len(ids)} tokens exceeds the model's "
                    f"{self.max_positions} positions"
                )
            id_lists.append(ids)
            labels.append(sample["label"])

        prompt_embeds = torch.from_numpy(
            prompt.reshape(self.cfg.prompt_tokens, self.width)
        ).to(self.embeddings.weight.dtype)

        losses, correct = [], []
        step = self.cfg.max_batch_size
        for start in range(0, len(id_lists), step):
            chunk = id_lists[start : start + step]
            chunk_labels = labels[start : start + step]
            losses_c, correct_c = self._forward_chunk(prompt_embeds, chunk, chunk_labels)
            losses.extend(losses_c)
            correct.extend(correct_c)

        losses = np.asarray(losses, dtype=np.float64)
        return float(losses.mean()), float(np.mean(correct)), losses

    def _forward_chunk(self, prompt_embeds, id_lists, labels):
        n_prompt = self.cfg.prompt_tokens
        lengths = [n_prompt + len(ids) + 1 for ids in id_lists]
        max_len = max(lengths)
        batch = len(id_lists)
        embeds = torch.zeros(batch, max_len, self.width, dtype=prompt_embeds.dtype)
        attention = torch.zeros(batch, max_len, dtype=torch.long)
        mask_positions = []
        for i, ids in enumerate(id_lists):
            token_embeds = self.embeddings(torch.tensor(ids, dtype=torch.long))
            mask_embed = self.embeddings(torch.tensor([self.mask_token_id]))
            seq = torch.cat([prompt_embeds, token_embeds, mask_embed], dim=0)
            embeds[i, : seq.shape[0]] = seq
            attention[i, : seq.shape[0]] = 1
            mask_positions.append(seq.shape[0] - 1)

        logits = self.model(inputs_embeds=embeds, attention_mask=attention).logits
        rows = torch.arange(batch)
        mask_logits = logits[rows, torch.tensor(mask_positions)]
        class_scores = mask_logits[:, torch.tensor(self.cfg.verbalizer)]
        log_probs = torch.log_softmax(class_scores.double(), dim=1)
        label_tensor = torch.tensor(labels, dtype=torch.long)
        sample_losses = (-log_probs[rows, label_tensor]).tolist()
        preds = class_scores.argmax(dim=1)
        correct = (preds == label_tensor).tolist()
        return sample_losses, correct
