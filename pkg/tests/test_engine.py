import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eaflsim.engine import (
    DataShard,
    EmptyAggregationError,
    ModelState,
    TaskConfig,
    aggregate_fedavg,
    evaluate,
    generate_fleet_data,
    local_train,
    loss_and_grad,
    per_sample_loss,
    softmax,
    yogi_server_update,
)


def mean_ce(w, x, y):
    # written out from the definition, no shared code with the engine
    total = 0.0
    for xi, yi in zip(x, y):
        logits = xi @ w
        top = max(logits)
        total += top + math.log(sum(math.exp(v - top) for v in logits)) - logits[yi]
    return total / len(y)


def numeric_grad(w, x, y, h=1e-6):
    g = np.zeros_like(w)
    for idx in np.ndindex(*w.shape):
        plus, minus = w.copy(), w.copy()
        plus[idx] += h
        minus[idx] -= h
        g[idx] = (mean_ce(plus, x, y) - mean_ce(minus, x, y)) / (2 * h)
    return g


class TestSoftmaxAndLoss:
    @given(st.integers(0, 2**31))
    @settings(max_examples=30)
    def test_rows_sum_to_one(self, seed):
        logits = np.random.default_rng(seed).normal(0, 30, size=(7, 5))
        assert np.allclose(softmax(logits).sum(axis=1), 1.0, atol=1e-9)

    def test_loss_matches_reference(self):
        rng = np.random.default_rng(3)
        w, x, y = rng.normal(size=(4, 3)), rng.normal(size=(6, 4)), rng.integers(0, 3, 6)
        loss, _ = loss_and_grad(w, x, y)
        assert loss == pytest.approx(mean_ce(w, x, y), rel=1e-12)
        assert per_sample_loss(w, x, y).mean() == pytest.approx(loss, rel=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        w, x, y = rng.normal(size=(8, 5)), rng.normal(size=(12, 8)), rng.integers(0, 5, 12)
        _, g = loss_and_grad(w, x, y)
        num = numeric_grad(w, x, y)
        assert np.linalg.norm(g - num) / np.linalg.norm(num) <= 1e-4


class TestFleetData:
    def test_label_partition(self):
        task = TaskConfig()
        data = generate_fleet_data(task, 20, seed=1)
        assert all(len(s.label_set) == 4 for s in data.shards)
        lo, hi = task.size_bounds
        assert all(lo <= len(s) <= hi for s in data.shards)
        counts = np.bincount(data.test_set.labels, minlength=35)
        assert np.all(counts == counts[0])

    def test_iid_degenerate(self):
        task = TaskConfig(num_labels=5, labels_per_client=5, samples_per_client=50)
        data = generate_fleet_data(task, 4, seed=0)
        assert all(s.label_set == set(range(5)) for s in data.shards)

    def test_deterministic(self):
        a = generate_fleet_data(TaskConfig(), 5, seed=9)
        b = generate_fleet_data(TaskConfig(), 5, seed=9)
        for sa, sb in zip(a.shards, b.shards):
            assert sa.features.tobytes() == sb.features.tobytes()
            assert sa.labels.tobytes() == sb.labels.tobytes()

    def test_too_many_labels(self):
        with pytest.raises(ValueError):
            TaskConfig(num_labels=3, labels_per_client=4)


class TestLocalTrain:
    def shard(self, seed=0):
        return generate_fleet_data(TaskConfig(num_labels=5, feature_dim=8, labels_per_client=3,
                                              samples_per_client=80, size_spread=0.0), 1, seed).shards[0]

    def test_tiny_lr_barely_moves(self):
        res = local_train(np.zeros(40), self.shard(), 1e-12, 1, 20, seed=0)
        assert np.linalg.norm(res.delta) < 1e-6

    def test_descent(self):
        shard = self.shard(2)
        w0 = np.zeros(40)
        res = local_train(w0, shard, 0.05, 1, 20, seed=4)
        before = per_sample_loss(w0.reshape(8, 5), shard.features, shard.labels).mean()
        after = per_sample_loss((w0 + res.delta).reshape(8, 5), shard.features, shard.labels).mean()
        assert after <= before
        assert res.samples_used == len(shard)

    def test_first_pass_loss(self):
        shard = self.shard(1)
        rng = np.random.default_rng(0)
        w = rng.normal(size=40)
        res = local_train(w, shard, 0.05, 2, 20, seed=0)
        losses = per_sample_loss(w.reshape(8, 5), shard.features, shard.labels)
        assert res.sum_sq_loss == pytest.approx(float(np.sum(losses ** 2)), rel=1e-12)

    def test_fixed_point(self):
        shard = DataShard(np.array([[1.0, 0.0]]), np.array([0]))
        w = np.array([[60.0, 0.0], [0.0, 0.0]]).ravel()
        res = local_train(w, shard, 0.05, 1, 1, seed=0)
        assert res.avg_loss < 1e-20
        assert res.sum_sq_loss < 1e-40

    def test_empty_shard(self):
        with pytest.raises(ValueError):
            DataShard(np.zeros((0, 2)), np.zeros(0, dtype=int))

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            local_train(np.zeros(40), self.shard(), 0.0, 1, 20, seed=0)
        with pytest.raises(ValueError):
            local_train(np.zeros(40), self.shard(), 0.1, 1, 0, seed=0)

    def test_deterministic(self):
        a = local_train(np.zeros(40), self.shard(), 0.05, 1, 20, seed=7)
        b = local_train(np.zeros(40), self.shard(), 0.05, 1, 20, seed=7)
        assert a.delta.tobytes() == b.delta.tobytes()


class TestFedAvg:
    def test_examples(self):
        v = np.array([1.0, -2.0])
        assert np.array_equal(aggregate_fedavg([(0, v, 5)]), v)
        assert np.array_equal(aggregate_fedavg([(0, v, 3), (1, -v, 3)]), np.zeros(2))
        assert aggregate_fedavg([(0, np.array([1.0]), 1), (1, np.array([4.0]), 3)])[0] == 3.25

    def test_empty(self):
        with pytest.raises(EmptyAggregationError):
            aggregate_fedavg([])

    @given(st.permutations(range(6)))
    def test_permutation_invariant_bitwise(self, order):
        rng = np.random.default_rng(0)
        updates = [(i, rng.normal(size=5) * 10 ** i, int(rng.integers(1, 50))) for i in range(6)]
        ref = aggregate_fedavg(updates)
        got = aggregate_fedavg([updates[i] for i in order])
        assert got.tobytes() == ref.tobytes()


class TestYogi:
    tau = 1e-3

    def test_zero_update(self):
        m = ModelState.zeros(3, self.tau)
        m.weights[:] = [1.0, 2.0, 3.0]
        out = yogi_server_update(m, np.zeros(3), 0.01, 0.9, 0.99, self.tau)
        assert np.array_equal(out.weights, m.weights)
        assert np.array_equal(out.server_v, m.server_v)

    @pytest.mark.parametrize("delta", [0.5, 1e-4, -0.2])
    def test_single_step(self, delta):
        t2 = self.tau ** 2
        out = yogi_server_update(ModelState.zeros(1, self.tau), np.array([delta]), 0.01, 0.0, 0.99, self.tau)
        sign = math.copysign(1.0, t2 - delta ** 2) if t2 != delta ** 2 else 0.0
        v = t2 - 0.01 * delta ** 2 * sign
        assert out.server_m[0] == delta
        assert out.server_v[0] == pytest.approx(v, rel=1e-12)
        assert out.weights[0] == pytest.approx(0.01 * delta / (math.sqrt(v) + self.tau), rel=1e-12)

    def test_momentum_decay(self):
        state = yogi_server_update(ModelState.zeros(1, self.tau), np.array([1.0]), 0.01, 0.9, 0.99, self.tau)
        m = 0.1
        for _ in range(2):
            prev = state.weights[0]
            state = yogi_server_update(state, np.zeros(1), 0.01, 0.9, 0.99, self.tau)
            m *= 0.9
            assert state.server_m[0] == pytest.approx(m, rel=1e-12)
            assert state.weights[0] - prev == pytest.approx(0.01 * m / (math.sqrt(state.server_v[0]) + self.tau))

    def test_sgd_limit(self):
        state = ModelState.zeros(2, self.tau)
        delta = np.array([0.3, -0.7])
        out = yogi_server_update(state, delta, 0.01, 0.0, 1.0, self.tau)
        assert np.allclose(out.weights, 0.01 * delta / (self.tau + self.tau), rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            yogi_server_update(ModelState.zeros(2), np.zeros(3), 0.01, 0.9, 0.99, self.tau)


class TestEvaluate:
    def test_zero_model(self):
        L = 7
        x = np.random.default_rng(0).normal(size=(70, 4))
        y = np.repeat(np.arange(L), 10)
        acc, loss = evaluate(np.zeros(4 * L), DataShard(x, y))
        assert loss == pytest.approx(math.log(L), rel=1e-12)
        # argmax ties fall on label 0, so exactly the label-0 tenth is right
        assert abs(acc - 1 / L) <= 3 * math.sqrt((1 / L) * (1 - 1 / L) / 70)

    def test_separator(self):
        x = np.array([[1.0, 0.0], [2.0, 0.1], [0.0, 1.0], [0.2, 3.0]])
        y = np.array([0, 0, 1, 1])
        acc, _ = evaluate(np.eye(2).ravel(), DataShard(x, y))
        assert acc == 1.0

    def test_deterministic(self):
        data = generate_fleet_data(TaskConfig(), 1, seed=0)
        w = np.random.default_rng(1).normal(size=TaskConfig().n_params)
        assert evaluate(w, data.test_set) == evaluate(w, data.test_set)
