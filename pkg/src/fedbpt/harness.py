"""Experiment orchestration: the federated training loop, evaluation,
communication accounting, diagnostics and result files.

A run is fully deterministic given the master seed (for in-process oracles):
every random stream is derived via ``seeding.child_seed`` from the master
seed and a purpose tag, and clients are aggregated in client-id order, so
collection order cannot matter.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .client import ClientResult, ClientRoundConfig, run_local_round
from .cmaes import CmaParams, SearchDistribution, init_distribution
from .data import PartitionMode, PartitionSpec, dirichlet_partition, few_shot_select, load_jsonl
from .oracle import (
    RemoteOracle,
    Sample,
    SyntheticTask,
    SyntheticTaskConfig,
    generate_task,
)
from .seeding import child_seed
from .server import (
    Broadcast,
    aggregate_fedavg_bbt,
    aggregate_fedbpt,
    corrected_sigma,
)
from .subspace import ProjectionSpec, generate_projection, project

AGGREGATOR_FEDBPT = "fedbpt"
AGGREGATOR_FEDAVG_BBT = "fedavg_bbt"


@dataclass
class ExperimentConfig:
    """All experiment knobs; JSON config files use exactly these key names."""

    # search space
    sub_dim: int = 500
    prompt_tokens: int = 50
    embed_dim: int = 1024
    gamma: float = 1.0
    # synthetic task
    vocab_size: int = 100
    hidden_dim: int = 32
    num_classes: int = 4
    seq_len: int = 16
    test_per_class: int = 100
    output_gain: float = 4.0
    hidden_gain: float = 1.0
    gap_threshold: float = 0.10
    # federation
    rounds: int = 60
    clients: int = 10
    participation: str = "all"
    partition: str = PartitionMode.DIRICHLET.value
    alpha: float = 1.0
    per_class: int = 40
    # local tuning
    local_iterations: int = 8
    population: int = 5
    sigma0: float = 1.0
    r_p: float = 0.4
    weight_scheme: str = "equal"
    # plumbing
    aggregator: str = AGGREGATOR_FEDBPT
    uncorrected_sigma: bool = False
    oracle: str = "synthetic"
    endpoint: str | None = None
    train_path: str | None = None
    test_path: str | None = None
    seed: int = 0
    out: str | None = None
    eval_stride: int = 1
    confusion: str = "final"  # "final" | "all" | "none"

    def __post_init__(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.clients < 1:
            raise ValueError("clients must be >= 1")
        if self.participation != "all":
            raise ValueError("only full participation is supported")
        if self.aggregator not in (AGGREGATOR_FEDBPT, AGGREGATOR_FEDAVG_BBT):
            raise ValueError(f"unknown aggregator {self.aggregator!r}")
        if self.oracle not in ("synthetic", "remote"):
            raise ValueError(f"unknown oracle kind {self.oracle!r}")
        if self.oracle == "remote" and not self.endpoint:
            raise ValueError("remote oracle needs an endpoint")
        if self.partition not in (m.value for m in PartitionMode):
            raise ValueError(f"unknown partition mode {self.partition!r}")
        if self.confusion not in ("final", "all", "none"):
            raise ValueError(f"unknown confusion cadence {self.confusion!r}")
        if self.eval_stride < 1:
            raise ValueError("eval_stride must be >= 1")

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class RoundMetrics:
    """One evaluation row; ``round`` counts completed federated rounds."""

    round: int
    test_accuracy: float
    test_loss: float
    broadcast_sigma: float
    corrected_sigma: float | None
    uplink_floats: int
    downlink_floats: int
    client_losses: list[float] = field(default_factory=list)


@dataclass
class CommReport:
    """Per-round float counts for one client, plus baseline ratios.

    ``trainable_params`` is the optimized vector's length d (the figure the
    4 KB-per-round style claims count); ``downlink_floats`` includes the full
    covariance matrix the broadcast actually carries.
    """

    trainable_params: int
    uplink_floats: int
    downlink_floats: int
    ratios: dict[str, float]


def comm_accounting(
    cfg: ExperimentConfig, baselines: dict[str, int] | None = None
) -> CommReport:
    """Float counts per client per round under the configured aggregator."""
    d = cfg.sub_dim
    if cfg.aggregator == AGGREGATOR_FEDAVG_BBT:
        uplink = d + 1 + d * d  # mean, final step, covariance
    else:
        uplink = d + cfg.local_iterations + 1  # mean, step-length list, loss
    downlink = d + d * d + 1  # mean, covariance, step
    ratios: dict[str, float] = {}
    for name, count in (baselines or {}).items():
        if count % d == 0:
            ratios[name] = count // d
        else:
            ratios[name] = count / d
    return CommReport(
        trainable_params=d, uplink_floats=uplink, downlink_floats=downlink, ratios=ratios
    )


def confusion_matrix(oracle, prompt: np.ndarray, test_set: list[Sample]) -> np.ndarray:
    """Counts[i, j] = samples with true label i predicted j.

    Works against any oracle: class c's per-sample cross-entropy is
    -log p_c, so evaluating the batch once per forged label and taking the
    argmin recovers the argmax prediction (lowest index on ties).
    """
    if not test_set:
        raise ValueError("test set must be non-empty")
    n_classes = oracle.num_classes
    losses = np.empty((n_classes, len(test_set)))
    for c in range(n_classes):
        relabeled = [Sample(s.token_ids, c, text=s.text) for s in test_set]
        report = oracle.evaluate(prompt, relabeled, return_per_sample=True)
        losses[c] = report.per_sample_loss
    preds = losses.argmin(axis=0)
    matrix = np.zeros((n_classes, n_classes), dtype=np.int64)
    for sample, pred in zip(test_set, preds):
        matrix[sample.label, pred] += 1
    return matrix


# ---------------------------------------------------------------------------
# the training loop


@dataclass
class ExperimentResult:
    metrics: list[RoundMetrics]
    final_mean: np.ndarray
    projection: ProjectionSpec
    floor_accuracy: float | None
    task: SyntheticTask | None


def _build_task(cfg: ExperimentConfig):
    """Returns (oracle, matrix, projection, train_pool, test_set, floor, task)."""
    if cfg.oracle == "synthetic":
        task_cfg = SyntheticTaskConfig(
            vocab_size=cfg.vocab_size,
            embed_dim=cfg.embed_dim,
            prompt_tokens=cfg.prompt_tokens,
            hidden_dim=cfg.hidden_dim,
            num_classes=cfg.num_classes,
            sub_dim=cfg.sub_dim,
            seq_len=cfg.seq_len,
            train_per_class=cfg.per_class,
            test_per_class=cfg.test_per_class,
            gamma=cfg.gamma,
            output_gain=cfg.output_gain,
            hidden_gain=cfg.hidden_gain,
            gap_threshold=cfg.gap_threshold,
        )
        task = generate_task(task_cfg, child_seed(cfg.seed, "task"))
        return (
            task.model,
            task.matrix,
            task.projection,
            task.train_pool,
            task.test_set,
            task.floor_accuracy,
            task,
        )
    oracle = RemoteOracle(cfg.endpoint)
    projection = ProjectionSpec(
        full_dim=oracle.prompt_dim,
        sub_dim=cfg.sub_dim,
        seed=child_seed(cfg.seed, "projection"),
        gamma=cfg.gamma,
    )
    matrix = generate_projection(projection)
    if not cfg.train_path or not cfg.test_path:
        raise ValueError("remote oracle runs need train_path and test_path")
    train = load_jsonl(cfg.train_path, vocab_size=cfg.vocab_size)
    test = load_jsonl(cfg.test_path, vocab_size=cfg.vocab_size)
    return oracle, matrix, projection, train, test, None, None


def run_experiment(cfg: ExperimentConfig, wrap_oracle=None) -> ExperimentResult:
    """Run the full federated loop and (optionally) write artifacts.

    ``wrap_oracle`` is an instrumentation hook: it receives the constructed
    oracle and must return a behaviorally identical one (e.g.
    ``CountingOracle``).
    """
    oracle, matrix, projection, train_pool, test_set, floor, task = _build_task(cfg)
    if wrap_oracle is not None:
        oracle = wrap_oracle(oracle)

    pool = few_shot_select(train_pool, cfg.per_class, child_seed(cfg.seed, "fewshot"))
    shards = dirichlet_partition(
        pool,
        PartitionSpec(
            num_clients=cfg.clients,
            alpha=cfg.alpha,
            seed=child_seed(cfg.seed, "partition"),
            mode=PartitionMode(cfg.partition),
        ),
    )

    accounting = comm_accounting(cfg)
    state = init_distribution(cfg.sub_dim, np.zeros(cfg.sub_dim), cfg.sigma0)
    server_params = CmaParams.defaults(
        cfg.sub_dim, cfg.clients, weight_scheme=cfg.weight_scheme
    )

    out_dir = cfg.out
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    metrics: list[RoundMetrics] = []

    def evaluate_round(completed: int, sigma_prime: float | None, losses: list[float]):
        report = oracle.evaluate(project(matrix, state.mean), test_set)
        metrics.append(
            RoundMetrics(
                round=completed,
                test_accuracy=report.accuracy,
                test_loss=report.loss,
                broadcast_sigma=state.step,
                corrected_sigma=sigma_prime,
                uplink_floats=accounting.uplink_floats,
                downlink_floats=accounting.downlink_floats,
                client_losses=losses,
            )
        )
        if out_dir and (
            cfg.confusion == "all"
            or (cfg.confusion == "final" and completed == cfg.rounds)
        ):
            matrix_counts = confusion_matrix(oracle, project(matrix, state.mean), test_set)
            path = os.path.join(out_dir, f"confusion_round{completed}.json")
            with open(path, "w", encoding="utf-8") as fh:
                json.dump({"round": completed, "matrix": matrix_counts.tolist()}, fh)
                fh.write("\n")

    evaluate_round(0, None, [])

    for t in range(cfg.rounds):
        broadcast = Broadcast.from_state(state, round=t, projection=projection)
        results: list[ClientResult] = []
        for shard in shards:
            round_cfg = ClientRoundConfig(
                seed=child_seed(cfg.seed, "client", t, shard.client_id),
                vocab_size=cfg.vocab_size,
                local_iterations=cfg.local_iterations,
                population=cfg.population,
                mask_rate=cfg.r_p,
                weight_scheme=cfg.weight_scheme,
            )
            results.append(run_local_round(broadcast, shard, oracle, matrix, round_cfg))
        results.sort(key=lambda r: r.client_id)

        if cfg.aggregator == AGGREGATOR_FEDAVG_BBT:
            sigma_prime = None
            state = aggregate_fedavg_bbt(results, generation=t + 1)
        else:
            sigma_prime = corrected_sigma(results, cfg.population)
            state = aggregate_fedbpt(
                state,
                results,
                server_params,
                cfg.population,
                uncorrected=cfg.uncorrected_sigma,
            )
        if (t + 1) % cfg.eval_stride == 0 or t + 1 == cfg.rounds:
            evaluate_round(t + 1, sigma_prime, [r.local_loss for r in results])

    if out_dir:
        write_metrics_csv(os.path.join(out_dir, "metrics.csv"), metrics)
        with open(os.path.join(out_dir, "final_z.json"), "w", encoding="utf-8") as fh:
            json.dump(
                {
                    "d": cfg.sub_dim,
                    "z": [float(x) for x in state.mean],
                    "projection": {
                        "D": projection.full_dim,
                        "d": projection.sub_dim,
                        "seed": projection.seed,
                        "gamma": projection.gamma,
                    },
                },
                fh,
            )
            fh.write("\n")
        write_accuracy_svg(
            os.path.join(out_dir, "accuracy.svg"),
            [(m.round, m.test_accuracy) for m in metrics],
        )

    return ExperimentResult(
        metrics=metrics,
        final_mean=state.mean,
        projection=projection,
        floor_accuracy=floor,
        task=task,
    )


# ---------------------------------------------------------------------------
# metrics files

CSV_HEADER = (
    "round,test_accuracy,test_loss,broadcast_sigma,corrected_sigma,"
    "uplink_floats_per_client,downlink_floats_per_client,client_losses"
)


def write_metrics_csv(path: str, metrics: list[RoundMetrics]) -> None:
    lines = [CSV_HEADER]
    for m in metrics:
        corrected = "" if m.corrected_sigma is None else repr(float(m.corrected_sigma))
        losses = ";".join(repr(float(x)) for x in m.client_losses)
        lines.append(
            f"{m.round},{float(m.test_accuracy)!r},{float(m.test_loss)!r},"
            f"{float(m.broadcast_sigma)!r},{corrected},"
            f"{m.uplink_floats},{m.downlink_floats},{losses}"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_metrics_csv(path: str) -> list[RoundMetrics]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path} does not carry the expected metrics header")
    out = []
    for line in lines[1:]:
        parts = line.split(",")
        out.append(
            RoundMetrics(
                round=int(parts[0]),
                test_accuracy=float(parts[1]),
                test_loss=float(parts[2]),
                broadcast_sigma=float(parts[3]),
                corrected_sigma=float(parts[4]) if parts[4] else None,
                uplink_floats=int(parts[5]),
                downlink_floats=int(parts[6]),
                client_losses=[float(x) for x in parts[7].split(";")] if parts[7] else [],
            )
        )
    return out


def write_accuracy_svg(path: str, points: list[tuple[int, float]]) -> None:
    """Minimal static accuracy-vs-round plot; no plotting dependency."""
    width, height, margin = 640, 400, 50
    if not points:
        points = [(0, 0.0)]
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    x_max = max(max(xs), 1)

    def sx(x):
        return margin + (width - 2 * margin) * (x / x_max)

    def sy(y):
        return height - margin - (height - 2 * margin) * y

    poly = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in points)
    ticks = []
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = sy(frac)
        ticks.append(
            f'<line x1="{margin}" y1="{y:.2f}" x2="{width - margin}" y2="{y:.2f}" '
            f'stroke="#ddd"/><text x="8" y="{y + 4:.2f}" font-size="11">{frac:.2f}</text>'
        )
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
        f'<rect width="{width}" height="{height}" fill="white"/>'
        + "".join(ticks)
        + f'<polyline points="{poly}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>'
        f'<text x="{width / 2:.0f}" y="{height - 12}" font-size="12" text-anchor="middle">round</text>'
        f'<text x="{width / 2:.0f}" y="18" font-size="12" text-anchor="middle">test accuracy</text>'
        "</svg>\n"
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg)
