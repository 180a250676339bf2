"""One client's local round: a few CMA-ES iterations over the subspace
vector, scored by the perturbation-ratio objective.

Per local iteration the client draws one fresh set of token-replacement
masks (shared by all candidates of that iteration, so their fitnesses are
comparable), samples a population, and scores each candidate with

    clean loss / max(perturbed loss, floor).

A prompt that keeps the model confident on corrupted inputs scores badly,
which is what stops a label-skewed shard from collapsing the model onto its
dominant class. With a mask rate of zero the ratio degenerates to a
constant, so the clean loss alone is used (plain black-box tuning).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .cmaes import CmaParams, RankedSample, SearchDistribution, sample_population, update
from .data import Shard
from .errors import RemoteRejection, RoundFailure, TransportError
from .oracle import Sample
from .seeding import rng_from
from .subspace import project

if TYPE_CHECKING:
    from .server import Broadcast


@dataclass
class ClientRoundConfig:
    """Local-round knobs; ``seed`` is this (round, client) pair's child seed."""

    seed: int
    vocab_size: int
    local_iterations: int = 8
    population: int = 5
    mask_rate: float = 0.4
    denominator_floor: float = 1e-8
    weight_scheme: str = "equal"

    def __post_init__(self):
        if self.local_iterations < 1:
            raise ValueError("local_iterations must be >= 1")
        if self.population < 1:
            raise ValueError("population must be >= 1")
        if not 0.0 <= self.mask_rate <= 1.0:
            raise ValueError(f"mask_rate must be in [0, 1], got {self.mask_rate}")
        if self.denominator_floor <= 0:
            raise ValueError("denominator_floor must be positive")


@dataclass
class ClientResult:
    """Per-round upload. ``step_lengths`` starts with the broadcast step and
    appends the step after each local iteration. ``final_cov`` rides along
    in-process for the direct-averaging baseline, which needs it."""

    client_id: int
    final_mean: np.ndarray
    step_lengths: list[float]
    local_loss: float
    sample_count: int
    final_cov: np.ndarray | None = None


def perturb_batch(
    batch: list[Sample], mask_rate: float, vocab_size: int, rng: np.random.Generator
) -> list[Sample]:
    """Replace round(mask_rate * len) positions of each sample with uniform
    random tokens; labels unchanged. Replacements may coincide with the
    original token; the position count is the contract."""
    if not 0.0 <= mask_rate <= 1.0:
        raise ValueError(f"mask_rate must be in [0, 1], got {mask_rate}")
    out = []
    for sample in batch:
        length = sample.token_ids.shape[0]
        n_replace = int(np.floor(mask_rate * length + 0.5))
        ids = sample.token_ids.copy()
        if n_replace > 0:
            positions = rng.choice(length, size=n_replace, replace=False)
            ids[positions] = rng.integers(0, vocab_size, size=n_replace)
        # any source text no longer matches the rewritten ids, so drop it
        out.append(Sample(ids, sample.label))
    return out


def ratio_objective(
    oracle,
    matrix: np.ndarray,
    z: np.ndarray,
    clean_batch: list[Sample],
    perturbed_batch: list[Sample],
    floor: float,
) -> float:
    """Clean loss over floored perturbed loss at the projected prompt."""
    prompt = project(matrix, z)
    clean = oracle.evaluate(prompt, clean_batch).loss
    perturbed = oracle.evaluate(prompt, perturbed_batch).loss
    return clean / max(perturbed, floor)


def run_local_round(
    broadcast: "Broadcast",
    shard: Shard,
    oracle,
    matrix: np.ndarray,
    cfg: ClientRoundConfig,
) -> ClientResult:
    """Run one client's local tuning round and build its upload."""
    if not shard.samples:
        raise ValueError(f"client {shard.client_id} has an empty shard")
    dim = broadcast.mean.shape[0]
    dist = SearchDistribution(
        dim=dim,
        mean=broadcast.mean.copy(),
        step=float(broadcast.step),
        cov=broadcast.cov.copy(),
        path_cov=np.zeros(dim),
        path_step=np.zeros(dim),
    )
    params = CmaParams.defaults(dim, cfg.population, weight_scheme=cfg.weight_scheme)
    rng = rng_from(cfg.seed)
    clean = shard.samples
    step_lengths = [dist.step]

    try:
        for _ in range(cfg.local_iterations - 1):
            perturbed = (
                perturb_batch(clean, cfg.mask_rate, cfg.vocab_size, rng)
                if cfg.mask_rate > 0.0
                else None
            )
            candidates = sample_population(dist, cfg.population, rng)
            ranked = []
            for z in candidates:
                if perturbed is None:
                    fitness = oracle.evaluate(project(matrix, z), clean).loss
                else:
                    fitness = ratio_objective(
                        oracle, matrix, z, clean, perturbed, cfg.denominator_floor
                    )
                ranked.append(RankedSample(z, fitness))
            dist = update(dist, ranked, params, effective_step=dist.step)
            step_lengths.append(dist.step)
        final_loss = oracle.evaluate(project(matrix, dist.mean), clean).loss
    except (TransportError, RemoteRejection) as exc:
        raise RoundFailure(shard.client_id, str(exc)) from exc

    return ClientResult(
        client_id=shard.client_id,
        final_mean=dist.mean,
        step_lengths=step_lengths,
        local_loss=final_loss,
        sample_count=shard.size,
        final_cov=dist.cov,
    )
