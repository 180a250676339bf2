"""Round aggregation.

The main aggregator treats the uploaded client means as a population sampled
by the server and runs one CMA-ES generation over them, with the local loss
values as fitness. The server never sampled those points itself, so the step
length that normalizes the evolution-path update is reconstructed from the
clients' per-iteration step lengths:

    sigma' = 2 sqrt( sum_{k in best half} sum_j (sigma_{k,j})^2 / (|S| lambda_k) ),

restricted to the half of the clients with the lowest local losses. The
direct-averaging baseline instead takes sample-count-weighted means of the
clients' final distribution statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cmaes import (
    SIGMA_MIN,
    CmaParams,
    RankedSample,
    SearchDistribution,
    update,
)
from .client import ClientResult
from .subspace import ProjectionSpec


@dataclass
class Broadcast:
    """Global search-distribution parameters sent to every client."""

    mean: np.ndarray
    step: float
    cov: np.ndarray
    round: int
    projection: ProjectionSpec | None = None

    @classmethod
    def from_state(
        cls, state: SearchDistribution, round: int, projection: ProjectionSpec | None = None
    ) -> "Broadcast":
        return cls(
            mean=state.mean.copy(),
            step=state.step,
            cov=state.cov.copy(),
            round=round,
            projection=projection,
        )


def corrected_sigma(results: list[ClientResult], population: int) -> float:
    """Server-side effective step length reconstructed from client uploads.

    ``population`` is the (uniform) local population size lambda_k. The sum
    runs over the floor(n/2) clients with the lowest local loss, ties broken
    by client id.
    """
    if len(results) < 2:
        raise ValueError(f"need at least 2 client results, got {len(results)}")
    if population < 1:
        raise ValueError("population must be >= 1")
    iterations = {len(r.step_lengths) for r in results}
    if len(iterations) != 1:
        raise ValueError(f"clients report differing iteration counts: {sorted(iterations)}")
    ordered = sorted(results, key=lambda r: (r.local_loss, r.client_id))
    best_half = ordered[: len(results) // 2]
    square_sum = sum(float(s) ** 2 for r in best_half for s in r.step_lengths)
    value = 2.0 * np.sqrt(square_sum / (len(results) * population))
    return max(float(value), SIGMA_MIN)


def aggregate_fedbpt(
    state: SearchDistribution,
    results: list[ClientResult],
    params: CmaParams,
    population: int,
    uncorrected: bool = False,
) -> SearchDistribution:
    """One server-level CMA-ES generation over the uploaded means.

    The corrected sigma normalizes the path and covariance displacements
    (it estimates the sampling scale of a whole multi-iteration local
    round). The next broadcast step is the step-size adaptation factor
    applied to the RMS of the final local steps of the loss-selected half:
    that is the working scale the best local searches adapted to, so the
    broadcast tracks the clients' own step adaptation while the server
    path can still re-inflate it when rounds make coherent progress.

    ``uncorrected`` is a debug switch that normalizes with the previous
    broadcast step instead, reproducing the misadapted paths of naive
    aggregation.
    """
    if len(results) < 2:
        raise ValueError(f"need at least 2 client results, got {len(results)}")
    if params.mu != len(results) // 2:
        raise ValueError(
            f"server params select {params.mu} parents, expected {len(results) // 2}"
        )
    effective = state.step if uncorrected else corrected_sigma(results, population)
    by_loss = sorted(results, key=lambda r: (r.local_loss, r.client_id))
    selected = by_loss[: len(results) // 2]
    base = float(np.sqrt(np.mean([r.step_lengths[-1] ** 2 for r in selected])))
    ordered = sorted(results, key=lambda r: r.client_id)
    ranked = [RankedSample(r.final_mean, r.local_loss) for r in ordered]
    return update(
        state,
        ranked,
        params,
        effective_step=effective,
        base_step=max(base, SIGMA_MIN),
    )


def aggregate_fedavg_bbt(
    results: list[ClientResult], generation: int = 0
) -> SearchDistribution:
    """Direct averaging baseline: sample-count-weighted means of the clients'
    final local statistics; evolution paths reset to zero."""
    if not results:
        raise ValueError("need at least 1 client result")
    for r in results:
        if r.final_cov is None:
            raise ValueError(f"client {r.client_id} upload lacks a covariance matrix")
    weights = np.array([r.sample_count for r in results], dtype=np.float64)
    weights /= weights.sum()
    dim = results[0].final_mean.shape[0]
    mean = np.zeros(dim)
    cov = np.zeros((dim, dim))
    step = 0.0
    for w, r in zip(weights, results):
        mean += w * r.final_mean
        cov += w * r.final_cov
        step += w * float(r.step_lengths[-1])
    return SearchDistribution(
        dim=dim,
        mean=mean,
        step=max(step, SIGMA_MIN),
        cov=0.5 * (cov + cov.T),
        path_cov=np.zeros(dim),
        path_step=np.zeros(dim),
        generation=generation,
    )
