"""CMA-ES with an injectable normalization step length.

The same optimizer drives two very different callers: a client tuning a
subspace vector against its local loss, and a server that treats uploaded
client means as a sampled population. The server's "population" was not drawn
from its own distribution, so ``update`` takes the step length used to
normalize displacements (``effective_step``) as an explicit argument instead
of reading it off the state. For ordinary in-process optimization the caller
passes the distribution's own step.

The mean update is a weighted recombination of the mu best points; the
evolution path accumulates whitened mean displacements,

    p_c <- (1 - c_c) p_c + sqrt(1 - (1 - c_c)^2) sqrt(mu_w) C^{-1/2} dm / step,

and the covariance gets the usual rank-one plus rank-mu update with
cumulative step-size adaptation on top. Rate constants not fixed by the
recombination scheme follow the standard CMA-ES tutorial formulas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NumericFailure

SIGMA_MIN = 1e-12
_SPD_EPSILON = 1e-10


def default_population(dim: int) -> int:
    """Conventional population size 4 + floor(3 ln d)."""
    return 4 + int(3 * math.log(dim))


@dataclass
class CmaParams:
    """Static strategy constants for one optimizer instance.

    ``weights`` has length ``mu`` and sums to one; ``mu_w = 1 / sum(w_k^2)``
    is the variance-effective selection mass.
    """

    lam: int
    mu: int
    weights: np.ndarray
    c_c: float
    c_sigma: float
    c_1: float
    c_mu: float
    d_sigma: float
    eig_refresh_every: int = 1

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.lam < 1:
            raise ValueError(f"population must be >= 1, got {self.lam}")
        if not 1 <= self.mu <= self.lam:
            raise ValueError(f"mu must be in [1, {self.lam}], got {self.mu}")
        if self.weights.shape != (self.mu,):
            raise ValueError("weights must have length mu")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        for name in ("c_c", "c_sigma", "c_1", "c_mu"):
            rate = getattr(self, name)
            if not 0.0 < rate <= 1.0:
                raise ValueError(f"{name} must be in (0, 1], got {rate}")
        if self.d_sigma <= 0:
            raise ValueError(f"d_sigma must be positive, got {self.d_sigma}")
        if self.eig_refresh_every < 1:
            raise ValueError("eig_refresh_every must be >= 1")

    @property
    def mu_w(self) -> float:
        return 1.0 / float(np.sum(self.weights**2))

    @classmethod
    def defaults(
        cls,
        dim: int,
        lam: int | None = None,
        weight_scheme: str = "equal",
        eig_refresh_every: int = 1,
    ) -> "CmaParams":
        """Tutorial-default constants for dimension ``dim``.

        ``weight_scheme`` is "equal" (w_k = 1/mu, the default everywhere in
        this package) or "log" (logarithmic rank weights).
        """
        if dim < 1:
            raise ValueError(f"dimension must be >= 1, got {dim}")
        if lam is None:
            lam = default_population(dim)
        if lam < 1:
            raise ValueError(f"population must be >= 1, got {lam}")
        mu = max(1, lam // 2)
        if weight_scheme == "equal":
            weights = np.full(mu, 1.0 / mu)
        elif weight_scheme == "log":
            raw = math.log((lam + 1) / 2) - np.log(np.arange(1, mu + 1))
            raw = np.maximum(raw, 0.0)
            weights = raw / raw.sum()
        else:
            raise ValueError(f"unknown weight scheme {weight_scheme!r}")
        mu_w = 1.0 / float(np.sum(weights**2))
        c_c = (4 + mu_w / dim) / (dim + 4 + 2 * mu_w / dim)
        c_sigma = (mu_w + 2) / (dim + mu_w + 5)
        c_1 = 2 / ((dim + 1.3) ** 2 + mu_w)
        # floored: the tutorial value is exactly 0 at mu_w = 1 (single parent)
        c_mu = min(1 - c_1, max(2 * (mu_w - 2 + 1 / mu_w) / ((dim + 2) ** 2 + mu_w), 1e-16))
        d_sigma = 1 + 2 * max(0.0, math.sqrt((mu_w - 1) / (dim + 1)) - 1) + c_sigma
        return cls(
            lam=lam,
            mu=mu,
            weights=weights,
            c_c=c_c,
            c_sigma=c_sigma,
            c_1=c_1,
            c_mu=c_mu,
            d_sigma=d_sigma,
            eig_refresh_every=eig_refresh_every,
        )


@dataclass
class RankedSample:
    """A candidate point with its (finite, lower-is-better) fitness."""

    point: np.ndarray
    fitness: float


@dataclass(eq=False)
class SearchDistribution:
    """Mutable-by-replacement CMA-ES state owned by a single actor.

    ``cov`` is stored exactly symmetric and positive definite; ``path_cov``
    and ``path_step`` are the covariance and step-size evolution paths.
    The eigendecomposition of ``cov`` is cached on the instance and reused
    by sampling and whitening within a generation.
    """

    dim: int
    mean: np.ndarray
    step: float
    cov: np.ndarray
    path_cov: np.ndarray
    path_step: np.ndarray
    generation: int = 0
    _eig: tuple[np.ndarray, np.ndarray] | None = field(
        default=None, repr=False, compare=False
    )
    _eig_age: int = field(default=0, repr=False, compare=False)


def init_distribution(dim: int, mean0: np.ndarray, sigma0: float) -> SearchDistribution:
    """Fresh state: identity covariance, zero paths, generation zero."""
    if dim < 1:
        raise ValueError(f"dimension must be >= 1, got {dim}")
    if sigma0 <= 0:
        raise ValueError(f"initial step must be positive, got {sigma0}")
    mean0 = np.asarray(mean0, dtype=np.float64)
    if mean0.shape != (dim,):
        raise ValueError(f"mean must have shape ({dim},), got {mean0.shape}")
    return SearchDistribution(
        dim=dim,
        mean=mean0.copy(),
        step=float(sigma0),
        cov=np.eye(dim),
        path_cov=np.zeros(dim),
        path_step=np.zeros(dim),
    )


def _decompose(dist: SearchDistribution) -> tuple[np.ndarray, np.ndarray]:
    """Cached eigendecomposition of ``cov``, repairing SPD loss once."""
    if dist._eig is not None:
        return dist._eig
    vals, vecs = np.linalg.eigh(dist.cov)
    if vals[0] <= 0.0:
        dist.cov = dist.cov + _SPD_EPSILON * np.eye(dist.dim)
        vals, vecs = np.linalg.eigh(dist.cov)
        if vals[0] <= 0.0:
            raise NumericFailure(
                f"covariance not positive definite (min eigenvalue {vals[0]:.3e})"
            )
    dist._eig = (vals, vecs)
    return dist._eig


def sample_population(
    dist: SearchDistribution, lam: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw ``lam`` points, one per row: mean + step * L u with L L^T = cov."""
    if lam < 1:
        raise ValueError(f"population must be >= 1, got {lam}")
    vals, vecs = _decompose(dist)
    factor = vecs * np.sqrt(vals)  # L = B diag(sqrt(vals)); L L^T = cov
    u = rng.standard_normal((lam, dist.dim))
    return dist.mean + dist.step * (u @ factor.T)


def inverse_sqrt_cov(dist: SearchDistribution) -> np.ndarray:
    """Symmetric M with M cov M = I, via the eigendecomposition."""
    vals, vecs = _decompose(dist)
    return (vecs / np.sqrt(vals)) @ vecs.T


def _chi_n(dim: int) -> float:
    """Expected norm of a standard normal vector."""
    return math.sqrt(dim) * (1 - 1 / (4 * dim) + 1 / (21 * dim**2))


def update(
    dist: SearchDistribution,
    samples: list[RankedSample],
    params: CmaParams,
    effective_step: float,
    base_step: float | None = None,
) -> SearchDistribution:
    """One generation: select, recombine, adapt paths, covariance and step.

    Ranking is a stable sort on fitness, so ties keep input order. All
    displacement normalizations use ``effective_step``; the returned step is
    the cumulative step-size adaptation factor applied to ``base_step``
    (defaulting to ``effective_step``). The two differ on the server, where
    the normalizer measures a whole multi-iteration local round and is
    systematically larger than any sensible next sampling scale: feeding it
    back as the next step would inflate the step geometrically, so the
    server supplies a separate base.
    """
    if len(samples) < params.mu:
        raise ValueError(
            f"need at least {params.mu} samples, got {len(samples)}"
        )
    if effective_step <= 0:
        raise ValueError(f"effective step must be positive, got {effective_step}")
    if base_step is None:
        base_step = effective_step
    elif base_step <= 0:
        raise ValueError(f"base step must be positive, got {base_step}")
    fitness = np.asarray([s.fitness for s in samples], dtype=np.float64)
    if not np.all(np.isfinite(fitness)):
        raise ValueError("sample fitness must be finite")
    points = np.asarray([s.point for s in samples], dtype=np.float64)
    if points.shape[1] != dist.dim:
        raise ValueError(
            f"sample dimension {points.shape[1]} does not match state dimension {dist.dim}"
        )

    order = np.argsort(fitness, kind="stable")
    selected = points[order[: params.mu]]

    mean_old = dist.mean
    mean_new = params.weights @ selected

    whitener = inverse_sqrt_cov(dist)
    displacement = (mean_new - mean_old) / effective_step
    whitened = whitener @ displacement

    decay_c = 1.0 - params.c_c
    path_cov = decay_c * dist.path_cov + math.sqrt(
        (1.0 - decay_c**2) * params.mu_w
    ) * whitened
    decay_s = 1.0 - params.c_sigma
    path_step = decay_s * dist.path_step + math.sqrt(
        (1.0 - decay_s**2) * params.mu_w
    ) * whitened

    steps = (selected - mean_old) / effective_step
    rank_mu = steps.T @ (params.weights[:, None] * steps)
    cov = (
        (1.0 - params.c_1 - params.c_mu) * dist.cov
        + params.c_1 * np.outer(path_cov, path_cov)
        + params.c_mu * rank_mu
    )
    cov = 0.5 * (cov + cov.T)

    step_factor = math.exp(
        (params.c_sigma / params.d_sigma)
        * (float(np.linalg.norm(path_step)) / _chi_n(dist.dim) - 1.0)
    )
    step = max(base_step * step_factor, SIGMA_MIN)

    out = SearchDistribution(
        dim=dist.dim,
        mean=mean_new,
        step=step,
        cov=cov,
        path_cov=path_cov,
        path_step=path_step,
        generation=dist.generation + 1,
    )
    if params.eig_refresh_every > 1 and dist._eig is not None:
        age = dist._eig_age + 1
        if age < params.eig_refresh_every:
            out._eig = dist._eig
            out._eig_age = age
            return out
    _decompose(out)  # eager: enforces SPD right after the update
    return out


def minimize(
    fn,
    x0: np.ndarray,
    sigma0: float,
    generations: int,
    lam: int | None = None,
    seed: int = 0,
    params: CmaParams | None = None,
) -> SearchDistribution:
    """Plain minimization loop over ``fn``; returns the final state."""
    x0 = np.asarray(x0, dtype=np.float64)
    dist = init_distribution(x0.shape[0], x0, sigma0)
    if params is None:
        params = CmaParams.defaults(dist.dim, lam)
    rng = np.random.Generator(np.random.PCG64(seed))
    for _ in range(generations):
        points = sample_population(dist, params.lam, rng)
        ranked = [RankedSample(p, float(fn(p))) for p in points]
        dist = update(dist, ranked, params, effective_step=dist.step)
    return dist


def copy_state(dist: SearchDistribution) -> SearchDistribution:
    """Deep copy without the cached decomposition."""
    return replace(
        dist,
        mean=dist.mean.copy(),
        cov=dist.cov.copy(),
        path_cov=dist.path_cov.copy(),
        path_step=dist.path_step.copy(),
        _eig=None,
        _eig_age=0,
    )
