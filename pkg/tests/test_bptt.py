import numpy as np
import pytest

from conftest import finite_difference_grads, max_rel_error, random_batch, \
    small_random_net
from lru_online.bptt import (TrainConfig, WindowBatch, bptt_gradient,
                             evaluate, sample_windows, train)
from lru_online.datapipe import SequenceData
from lru_online.errors import ConfigurationError
from lru_online.lru import init_network


def make_data(session_lengths, m=3, p=2, seed=0):
    rng = np.random.default_rng(seed)
    n = sum(session_lengths)
    sids = np.concatenate([np.full(L, i, dtype=np.int64)
                           for i, L in enumerate(session_lengths)])
    return SequenceData(features=rng.standard_normal((n, m)),
                        targets=rng.standard_normal((n, p)),
                        session_ids=sids,
                        timestamps=np.arange(n, dtype=np.float64))


class TestSampleWindows:
    def test_single_possible_window(self):
        data = make_data([10])
        batch = sample_windows(data, T=10, batch=4, rng=0)
        assert np.array_equal(batch.inputs[0], data.features)
        assert np.array_equal(batch.inputs[1], data.features)

    def test_deterministic_given_seed(self):
        data = make_data([100, 50])
        a = sample_windows(data, 20, 8, rng=7)
        b = sample_windows(data, 20, 8, rng=7)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.session_ids, b.session_ids)

    def test_window_too_long_names_session(self):
        data = make_data([100, 30])
        with pytest.raises(ConfigurationError, match="session 1"):
            sample_windows(data, 50, 4, rng=0)

    def test_session_frequency_proportional_to_windows(self):
        data = make_data([1000, 3000])
        T = 200
        rng = np.random.default_rng(0)
        draws = 100_000
        batch = sample_windows(data, T, draws, rng)
        frac = np.mean(batch.session_ids == 1)
        expect = (3000 - 199) / ((1000 - 199) + (3000 - 199))
        assert abs(frac - expect) / expect < 0.02

    def test_windows_stay_in_session(self):
        data = make_data([60, 60], seed=1)
        # make the features encode the session id so crossings are visible
        data.features[:, 0] = data.session_ids
        batch = sample_windows(data, 30, 64, rng=3)
        for b in range(64):
            assert len(np.unique(batch.inputs[b, :, 0])) == 1


class TestBpttGradient:
    def test_perfect_predictions_zero(self):
        net = init_network(2, (4,), 1, seed=0)
        inputs = np.zeros((1, 10, 2))
        targets = np.zeros((1, 10, 1))
        loss, grads = bptt_gradient(net, WindowBatch(inputs, targets, 10,
                                                     np.zeros(1, np.int64)))
        assert loss == 0.0
        assert all(np.all(b == 0) for layer in grads for b in layer.values())

    def test_finite_differences_depth1(self, rng):
        net = small_random_net(rng, m=3, n=6, p=2)
        batch = random_batch(rng, net, T=50)
        _, grads = bptt_gradient(net, batch)
        fd = finite_difference_grads(net, batch)
        assert max_rel_error(grads, fd, floor=1e-6) < 1e-4

    def test_finite_differences_depth2(self, rng):
        net = small_random_net(rng, m=2, n=4, p=2, depth=2)
        batch = random_batch(rng, net, T=20)
        _, grads = bptt_gradient(net, batch)
        fd = finite_difference_grads(net, batch)
        assert max_rel_error(grads, fd, floor=1e-6) < 1e-4

    def test_batch_reduction_matches_mean_of_singles(self, rng):
        net = small_random_net(rng, m=3, n=5, p=2)
        batch = random_batch(rng, net, T=16, batch=4)
        loss, grads = bptt_gradient(net, batch)
        singles = [bptt_gradient(net, WindowBatch(batch.inputs[b:b + 1],
                                                  batch.targets[b:b + 1], 16,
                                                  batch.session_ids[b:b + 1]))
                   for b in range(4)]
        assert loss == pytest.approx(np.mean([s[0] for s in singles]))
        for k, layer in enumerate(grads):
            for name in layer:
                mean = np.mean([s[1][k][name] for s in singles], axis=0)
                assert np.allclose(layer[name], mean, atol=1e-12)


class TestTrain:
    def test_zero_steps_returns_initial(self):
        net = init_network(3, (4,), 2, seed=0)
        data = make_data([50])
        result = train(net, data, None, TrainConfig(steps=0, batch=2,
                                                    window=10))
        for a, b in zip(result.net.parameters(), net.parameters()):
            for name in a:
                assert np.array_equal(a[name], b[name])

    def test_lr_zero_leaves_params_bitwise(self):
        net = init_network(3, (4,), 2, seed=0)
        data = make_data([80])
        result = train(net, data, None, TrainConfig(steps=5, batch=2,
                                                    window=10, lr=0.0))
        for a, b in zip(result.net.parameters(), net.parameters()):
            for name in a:
                assert np.array_equal(a[name], b[name])

    def test_learnable_task_improves(self):
        # constant-target task: loss must drop
        rng = np.random.default_rng(0)
        n = 400
        data = SequenceData(features=rng.standard_normal((n, 2)),
                            targets=np.full((n, 1), 0.7),
                            session_ids=np.zeros(n, dtype=np.int64),
                            timestamps=np.arange(n, dtype=np.float64))
        net = init_network(2, (4,), 1, seed=1)
        cfg = TrainConfig(steps=500, batch=8, window=20, lr=1e-2,
                          eval_every=100)
        result = train(net, data, data, cfg)
        first = result.loss_curve[0][1]
        last = result.loss_curve[-1][1]
        assert last < first

    def test_reproducible_loss_curve(self):
        net = init_network(3, (4,), 2, seed=3)
        data = make_data([120])
        cfg = TrainConfig(steps=20, batch=4, window=16, seed=9, eval_every=5)
        a = train(net.copy(), data, data, cfg)
        b = train(net.copy(), data, data, cfg)
        assert np.allclose(a.loss_curve, b.loss_curve, rtol=0, atol=0,
                           equal_nan=True)
        for la, lb in zip(a.net.parameters(), b.net.parameters()):
            for name in la:
                assert np.array_equal(la[name], lb[name])


class TestEvaluate:
    def test_zero_error(self):
        net = init_network(2, (4,), 1, seed=0)
        data = make_data([30], m=2, p=1)
        from lru_online.lru import network_scan
        _, _, preds = network_scan(net, data.features)
        data.targets = preds
        assert evaluate(net, data) == 0.0
