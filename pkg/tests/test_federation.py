import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedprint.errors import ConfigError, ProtocolError, ShapeError
from fedprint.federation import (
    Client, ClientUpdate, FederationConfig, execute_round, fedavg, init_state, participation_summary,
    run_federation, run_round, sample_clients,
)
from fedprint.nn import ParamSet, TrainConfig, init_params


def scalar(v):
    return ParamSet([np.array([[v]], dtype=float)], [np.array([0.0])])


def brute_force_mean(pairs):
    """Per-entry weighted mean with exact-ish summation, independent of ``fedavg``."""
    n = sum(k for _, k in pairs)
    out = []
    for idx in range(len(pairs[0][0].flat())):
        out.append(sum(p.flat()[idx] * k for p, k in pairs) / n)
    return np.array(out)


CFG = TrainConfig(epochs=2, learning_rate=0.1, batch_size=16)


class TestSampling:
    def test_full_population(self, rng):
        assert sample_clients(5, 5, rng) == [0, 1, 2, 3, 4]

    def test_too_many(self, rng):
        with pytest.raises(ConfigError):
            sample_clients(5, 6, rng)

    def test_seeded(self):
        a = sample_clients(100, 20, np.random.default_rng(9))
        b = sample_clients(100, 20, np.random.default_rng(9))
        assert a == b and len(set(a)) == 20 and a == sorted(a)

    def test_roughly_uniform(self):
        rng = np.random.default_rng(0)
        counts = np.zeros(10)
        for _ in range(4000):
            counts[sample_clients(10, 3, rng)] += 1
        np.testing.assert_allclose(counts / 4000, 0.3, atol=0.03)


class TestFedAvg:
    def test_single_update_identity(self, tiny_params):
        assert fedavg([(tiny_params, 17)]).bit_equal(tiny_params)

    def test_symmetric_cancellation(self, tiny_params):
        neg = ParamSet([-w for w in tiny_params.weights], [-b for b in tiny_params.biases])
        out = fedavg([(tiny_params, 4), (neg, 4)])
        assert all(np.all(a == 0.0) for a in out.arrays())

    def test_hand_computed(self):
        out = fedavg([(scalar(10), 1), (scalar(20), 2), (scalar(30), 3)])
        assert out.weights[0][0, 0] == pytest.approx(140 / 6, abs=1e-12)

    def test_client_update_objects(self, tiny_params):
        a = fedavg([ClientUpdate(0, tiny_params, 3)])
        assert a.bit_equal(tiny_params)

    def test_errors(self, tiny_params):
        with pytest.raises(ProtocolError):
            fedavg([])
        with pytest.raises(ProtocolError):
            fedavg([(tiny_params, 0)])
        with pytest.raises(ShapeError):
            fedavg([(tiny_params, 1), (init_params([6, 4], 0), 1)])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 6), st.lists(st.integers(1, 1000), min_size=6, max_size=6), st.integers(0, 10**6))
    def test_matches_brute_force_and_is_convex(self, k, sizes, seed):
        g = np.random.default_rng(seed)
        pairs = [(init_params([3, 4, 2], int(g.integers(1 << 30))), sizes[i]) for i in range(k)]
        out = fedavg(pairs).flat()
        np.testing.assert_allclose(out, brute_force_mean(pairs), rtol=0, atol=1e-12)
        stack = np.stack([p.flat() for p, _ in pairs])
        assert np.all(out >= stack.min(0) - 1e-12) and np.all(out <= stack.max(0) + 1e-12)

    def test_weights_sum_to_one(self):
        # constant parameters stay constant only if the weights sum to 1
        out = fedavg([(scalar(1.0), n) for n in (3, 7, 11, 13)])
        assert out.weights[0][0, 0] == pytest.approx(1.0, abs=1e-15)


class TestRounds:
    def cfg(self, corpus, **kw):
        base = dict(total_clients=len(corpus.clients), clients_per_round=3, rounds=2, train_cfg=CFG,
                    seed=4, hidden_dims=(8, 8))
        base.update(kw)
        return FederationConfig(**base)

    def test_config_errors(self):
        with pytest.raises(ConfigError):
            FederationConfig(total_clients=5, rounds=0)
        with pytest.raises(ConfigError):
            FederationConfig(total_clients=5, clients_per_round=6)

    def test_single_client_round(self, small_corpus):
        cfg = self.cfg(small_corpus, clients_per_round=1)
        state = init_state(cfg, small_corpus.feature_dim, small_corpus.num_classes)
        result = execute_round(state, [Client(d) for d in small_corpus.clients], cfg)
        assert result.state.global_model.bit_equal(result.updates[0].params)

    def test_identical_clients(self, small_corpus):
        ds = small_corpus.clients[0]
        cfg = self.cfg(small_corpus, total_clients=4, clients_per_round=4)
        state = init_state(cfg, small_corpus.feature_dim, small_corpus.num_classes)
        result = execute_round(state, [Client(ds) for _ in range(4)], cfg)
        for a, b in zip(result.state.global_model.arrays(), result.updates[0].params.arrays()):
            np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)

    def test_state_not_mutated(self, small_corpus):
        cfg = self.cfg(small_corpus)
        state = init_state(cfg, small_corpus.feature_dim, small_corpus.num_classes)
        model = state.global_model.copy()
        draw = init_state(cfg, 6, 4).rng.random()
        run_round(state, small_corpus, cfg)
        assert state.global_model.bit_equal(model) and state.history == []
        assert state.rng.random() == draw

    def test_history_and_determinism(self, small_corpus):
        cfg = self.cfg(small_corpus, rounds=3)
        a = run_federation(cfg, small_corpus)
        b = run_federation(cfg, small_corpus)
        assert [e.round for e in a.history] == [1, 2, 3]
        assert [e.participant_ids for e in a.history] == [e.participant_ids for e in b.history]
        assert a.global_model.bit_equal(b.global_model)
        for e in a.history:
            sizes = {d.speaker_id: d.num_train for d in small_corpus.clients}
            assert e.client_sizes == [sizes[s] for s in e.participant_ids]

    def test_serial_equals_threaded(self, small_corpus):
        cfg = self.cfg(small_corpus, rounds=3, clients_per_round=5)
        assert run_federation(cfg, small_corpus, threads=1).global_model.bit_equal(
            run_federation(cfg, small_corpus, threads=4).global_model)

    def test_one_round(self, small_corpus):
        assert len(run_federation(self.cfg(small_corpus, rounds=1), small_corpus).history) == 1

    def test_client_count_mismatch(self, small_corpus):
        with pytest.raises(ConfigError):
            run_federation(self.cfg(small_corpus, total_clients=20), small_corpus)

    def test_hooks_see_broadcast_model(self, small_corpus):
        seen = []
        state = run_federation(self.cfg(small_corpus), small_corpus, hooks=[seen.append])
        assert [r.round for r in seen] == [1, 2]
        assert seen[1].broadcast_model.bit_equal(seen[0].state.global_model)
        assert seen[1].state.global_model.bit_equal(state.global_model)

    def test_failed_client_aborts_round(self, small_corpus):
        bad = small_corpus.clients[0]
        bad_x = bad.train_x * 1e200
        from fedprint.data import SpeakerDataset
        clients = [Client(SpeakerDataset(i, bad_x, bad.train_y, bad_x[:0], bad.train_y[:0])) for i in range(3)]
        cfg = self.cfg(small_corpus, total_clients=3, train_cfg=TrainConfig(epochs=2, learning_rate=1e10))
        state = init_state(cfg, small_corpus.feature_dim, small_corpus.num_classes)
        with pytest.raises(ProtocolError):
            execute_round(state, clients, cfg)

    def test_participation_summary(self, small_corpus):
        state = run_federation(self.cfg(small_corpus, rounds=4), small_corpus)
        summary = participation_summary(state.history, 8)
        seen = {s for e in state.history for s in e.participant_ids}
        assert summary["distinct_participants"] == len(seen)
        assert summary["fraction"] == len(seen) / 8
