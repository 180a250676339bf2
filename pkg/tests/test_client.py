"""Local round mechanics: perturbation, ratio objective, the tuning loop."""

import numpy as np
import pytest

from fedbpt.client import (
    ClientRoundConfig,
    perturb_batch,
    ratio_objective,
    run_local_round,
)
from fedbpt.cmaes import SIGMA_MIN, init_distribution
from fedbpt.data import Shard
from fedbpt.errors import RoundFailure, TransportError
from fedbpt.oracle import CountingOracle, LossReport, Sample
from fedbpt.server import Broadcast
from fedbpt.subspace import project

BIG_VOCAB = 10**6  # replacement collisions with original ids become negligible


def batch_of(lengths, vocab=20):
    rng = np.random.default_rng(0)
    return [Sample(rng.integers(0, vocab, n), int(i % 3)) for i, n in enumerate(lengths)]


class TestPerturb:
    def test_zero_rate_is_identity(self):
        batch = batch_of([5, 8, 3])
        out = perturb_batch(batch, 0.0, 100, np.random.default_rng(1))
        for before, after in zip(batch, out):
            assert np.array_equal(before.token_ids, after.token_ids)
            assert before.label == after.label
            assert before is not after

    def test_full_rate_replaces_every_position(self):
        batch = batch_of([10], vocab=10)
        out = perturb_batch(batch, 1.0, BIG_VOCAB, np.random.default_rng(2))
        diffs = int(np.sum(out[0].token_ids != batch[0].token_ids))
        assert diffs == 10

    def test_half_rate_replaces_half(self):
        batch = batch_of([10], vocab=10)
        out = perturb_batch(batch, 0.5, BIG_VOCAB, np.random.default_rng(3))
        assert int(np.sum(out[0].token_ids != batch[0].token_ids)) == 5

    def test_rounding_of_position_count(self):
        # round(0.25 * 10) -> 3 with half-up rounding
        batch = batch_of([10], vocab=10)
        out = perturb_batch(batch, 0.25, BIG_VOCAB, np.random.default_rng(4))
        assert int(np.sum(out[0].token_ids != batch[0].token_ids)) == 3

    def test_labels_unchanged(self):
        batch = batch_of([6, 6])
        out = perturb_batch(batch, 0.5, 100, np.random.default_rng(5))
        assert [s.label for s in out] == [s.label for s in batch]

    def test_stale_text_dropped(self):
        batch = [Sample(np.arange(1, 5), 0, text="original words")]
        out = perturb_batch(batch, 0.5, 100, np.random.default_rng(6))
        assert out[0].text is None

    def test_invalid_rate(self):
        with pytest.raises(ValueError):
            perturb_batch(batch_of([4]), 1.5, 100, np.random.default_rng(0))

    def test_fresh_masks_overlap_statistic(self):
        # replaced-position sets of two independent draws overlap by ~r^2 * L
        rng = np.random.default_rng(6)
        length, rate = 20, 0.4
        batch = batch_of([length], vocab=10)
        overlaps = []
        for _ in range(300):
            a = perturb_batch(batch, rate, BIG_VOCAB, rng)[0]
            b = perturb_batch(batch, rate, BIG_VOCAB, rng)[0]
            pos_a = set(np.nonzero(a.token_ids != batch[0].token_ids)[0])
            pos_b = set(np.nonzero(b.token_ids != batch[0].token_ids)[0])
            overlaps.append(len(pos_a & pos_b))
        expected = rate**2 * length  # 3.2
        assert abs(np.mean(overlaps) - expected) < 0.5


class FixedLossOracle:
    """Maps batch identity to a fixed loss; prompt is ignored."""

    def __init__(self, losses):
        self.losses = losses
        self.prompt_dim = 4
        self.num_classes = 2

    def evaluate(self, prompt, batch, return_per_sample=False):
        return LossReport(self.losses[id(batch)], 0.0, None, 2)


class TestRatioObjective:
    def make(self, clean_loss, pert_loss):
        clean, pert = batch_of([4]), batch_of([4])
        oracle = FixedLossOracle({id(clean): clean_loss, id(pert): pert_loss})
        matrix = np.zeros((4, 2))
        return oracle, matrix, clean, pert

    def test_basic_arithmetic(self):
        oracle, matrix, clean, pert = self.make(0.2, 2.0)
        assert ratio_objective(oracle, matrix, np.zeros(2), clean, pert, 1e-8) == pytest.approx(0.1)

    def test_equal_losses(self):
        oracle, matrix, clean, pert = self.make(0.7, 0.7)
        assert ratio_objective(oracle, matrix, np.zeros(2), clean, pert, 1e-8) == pytest.approx(1.0)

    def test_floored_denominator(self):
        oracle, matrix, clean, pert = self.make(0.2, 0.0)
        value = ratio_objective(oracle, matrix, np.zeros(2), clean, pert, 1e-8)
        assert value == pytest.approx(2e7)


def desk_shard(task, size=12):
    return Shard(client_id=0, samples=task.train_pool[:size])


def desk_broadcast(task, sigma=1.0):
    d = task.projection.sub_dim
    state = init_distribution(d, np.zeros(d), sigma)
    return Broadcast.from_state(state, round=0)


def desk_cfg(task, **kw):
    defaults = dict(seed=7, vocab_size=task.model.vocab_size)
    defaults.update(kw)
    return ClientRoundConfig(**defaults)


class TestRunLocalRound:
    def test_single_iteration_is_identity(self, desk_task):
        broadcast = desk_broadcast(desk_task)
        counter = CountingOracle(desk_task.model)
        result = run_local_round(
            broadcast, desk_shard(desk_task), counter, desk_task.matrix,
            desk_cfg(desk_task, local_iterations=1),
        )
        assert np.array_equal(result.final_mean, broadcast.mean)
        assert result.step_lengths == [broadcast.step]
        assert counter.calls == 1
        clean = desk_task.model.evaluate(
            project(desk_task.matrix, broadcast.mean), desk_shard(desk_task).samples
        )
        assert result.local_loss == clean.loss

    def test_step_floor_keeps_mean_in_place(self, desk_task):
        d = desk_task.projection.sub_dim
        state = init_distribution(d, np.zeros(d), 1.0)
        state.step = SIGMA_MIN
        broadcast = Broadcast.from_state(state, round=0)
        result = run_local_round(
            broadcast, desk_shard(desk_task), desk_task.model, desk_task.matrix,
            desk_cfg(desk_task),
        )
        assert np.max(np.abs(result.final_mean - broadcast.mean)) <= 1e-9

    def test_first_step_is_broadcast_sigma(self, desk_task):
        broadcast = desk_broadcast(desk_task, sigma=0.37)
        cfg = desk_cfg(desk_task)
        result = run_local_round(
            broadcast, desk_shard(desk_task), desk_task.model, desk_task.matrix, cfg
        )
        assert result.step_lengths[0] == 0.37
        assert len(result.step_lengths) == cfg.local_iterations
        assert result.sample_count == desk_shard(desk_task).size
        assert result.final_cov is not None

    def test_oracle_call_budget_with_perturbation(self, desk_task):
        counter = CountingOracle(desk_task.model)
        cfg = desk_cfg(desk_task, local_iterations=4, population=3, mask_rate=0.4)
        run_local_round(
            desk_broadcast(desk_task), desk_shard(desk_task), counter,
            desk_task.matrix, cfg,
        )
        assert counter.calls == (4 - 1) * 3 * 2 + 1

    def test_oracle_call_budget_without_perturbation(self, desk_task):
        counter = CountingOracle(desk_task.model)
        cfg = desk_cfg(desk_task, local_iterations=4, population=3, mask_rate=0.0)
        run_local_round(
            desk_broadcast(desk_task), desk_shard(desk_task), counter,
            desk_task.matrix, cfg,
        )
        assert counter.calls == (4 - 1) * 3 + 1

    def test_determinism(self, desk_task):
        args = (
            desk_broadcast(desk_task), desk_shard(desk_task), desk_task.model,
            desk_task.matrix, desk_cfg(desk_task),
        )
        a = run_local_round(*args)
        b = run_local_round(*args)
        assert np.array_equal(a.final_mean, b.final_mean)
        assert a.step_lengths == b.step_lengths
        assert a.local_loss == b.local_loss

    def test_empty_shard_rejected(self, desk_task):
        with pytest.raises(ValueError):
            run_local_round(
                desk_broadcast(desk_task), Shard(client_id=3, samples=[]),
                desk_task.model, desk_task.matrix, desk_cfg(desk_task),
            )

    def test_oracle_failure_carries_client_id(self, desk_task):
        class FailingOracle:
            prompt_dim = desk_task.model.prompt_dim
            num_classes = 4

            def evaluate(self, *a, **k):
                raise TransportError("endpoint gone")

        with pytest.raises(RoundFailure) as err:
            run_local_round(
                desk_broadcast(desk_task),
                Shard(client_id=5, samples=desk_task.train_pool[:4]),
                FailingOracle(), desk_task.matrix, desk_cfg(desk_task),
            )
        assert err.value.client_id == 5

    def test_local_tuning_reduces_clean_loss(self, desk_task):
        # one client owning the full pool, chained rounds of plain local tuning
        shard = Shard(client_id=0, samples=desk_task.train_pool)
        improved = 0
        for seed in range(10):
            broadcast = desk_broadcast(desk_task)
            loss0 = desk_task.model.evaluate(
                project(desk_task.matrix, broadcast.mean), shard.samples
            ).loss
            result = None
            for round_idx in range(50):
                cfg = desk_cfg(desk_task, seed=1000 * seed + round_idx)
                result = run_local_round(
                    broadcast, shard, desk_task.model, desk_task.matrix, cfg
                )
                broadcast = Broadcast(
                    mean=result.final_mean,
                    step=result.step_lengths[-1],
                    cov=result.final_cov,
                    round=round_idx + 1,
                )
            improved += result.local_loss < loss0
        assert improved >= 9
