import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedsim import algorithms
from fedsim.acceptance import ref_fedsmart_round, ref_weight_update
from fedsim.algorithms import (STRATEGIES, Centralized, FedAvg, FedSGD, FedSmart, LoAdaBoost, LocalOnly,
                               ProtocolError, StrategyState, boost_mask, centralized_train, fedavg_aggregate,
                               fedavg_round, fedsgd_round, fedsmart_round, fedsmart_weight_update, get_strategy,
                               loadaboost_round, local_only_round, median, mix_deltas, pool_train)
from fedsim.data import ClientPartition
from fedsim.model import ClientUpdate, ContractError, Dataset, gradient, local_train


def simplex(n):
    return arrays(np.float64, n, elements=st.floats(0.01, 1.0)).map(lambda w: w / w.sum())


@st.composite
def weight_cases(draw):
    n = draw(st.integers(1, 8))
    prev = draw(simplex(n))
    accs = draw(arrays(np.float64, n, elements=st.floats(0, 1)))
    eta = draw(st.floats(1e-3, 10))
    return prev, accs, eta


def partition(cid, X, y, val=None):
    ds = Dataset(X, y)
    return ClientPartition(cid, ds, val if val is not None else ds, 0, len(ds))


def random_partitions(rng, n, m=24, d=3):
    parts = []
    for i in range(n):
        X = rng.integers(0, 2, size=(m, d)).astype(float)
        y = rng.integers(0, 2, size=m)
        parts.append(partition(i, X, y))
    return parts


def state_for(strategy, n, d=3, **hyper):
    hyper = {"master_seed": 3, "batch_size": 5, "lr": 0.2, **hyper}
    return strategy.init_state(n, d, **hyper)


class TestMedian:
    def test_examples(self):
        assert median([0.5]) == 0.5
        assert median([0.6, 0.8]) == pytest.approx(0.7, abs=1e-15)
        assert median([0.9, 0.1, 0.5]) == 0.5

    def test_empty(self):
        with pytest.raises(ContractError):
            median([])

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30))
    def test_matches_sort_oracle(self, values):
        v = sorted(values)
        k = len(v)
        want = v[k // 2] if k % 2 else (v[k // 2 - 1] + v[k // 2]) / 2
        assert median(values) == want


class TestWeightUpdate:
    def test_equal_accuracies(self):
        prev = np.full(4, 0.25)
        assert np.array_equal(fedsmart_weight_update(prev, np.full(4, 0.7), 3.0), prev)

    def test_hand_example(self):
        out = fedsmart_weight_update(np.full(4, 0.25), np.array([0.9, 0.8, 0.7, 0.6]), 1.0)
        assert np.allclose(out, [0.4, 0.3, 0.2, 0.1], rtol=0, atol=1e-15)

    def test_clamp_example(self):
        out = fedsmart_weight_update(np.array([0.1, 0.3, 0.6]), np.array([0.5, 0.9, 0.9]), 1.0)
        assert np.allclose(out, [0.0, 1 / 3, 2 / 3], rtol=0, atol=1e-15)
        assert out[0] == 0.0

    def test_all_zero_falls_back_to_uniform(self):
        # median 1.0: the two leaders stay at 0, the laggard drops to -1 and clamps
        out = fedsmart_weight_update(np.array([0.0, 0.0, 1.0]), np.array([1.0, 1.0, 0.0]), 1.0)
        assert np.array_equal(out, np.full(3, 1 / 3))

    def test_one_sided_shift(self):
        out = fedsmart_weight_update(np.array([0.5, 0.5]), np.array([0.0, 1.0]), 2.0)
        assert np.array_equal(out, np.array([0.0, 1.0]))

    def test_length_mismatch(self):
        with pytest.raises(ContractError):
            fedsmart_weight_update(np.full(3, 1 / 3), np.zeros(2), 1.0)

    def test_eta_must_be_positive(self):
        with pytest.raises(ContractError):
            fedsmart_weight_update(np.full(2, 0.5), np.zeros(2), 0.0)

    @given(weight_cases())
    def test_simplex(self, case):
        out = fedsmart_weight_update(*case)
        assert np.all(out >= 0)
        assert abs(out.sum() - 1.0) <= 1e-9

    @given(weight_cases())
    def test_matches_reference(self, case):
        prev, accs, eta = case
        want = ref_weight_update(prev.tolist(), accs.tolist(), eta)
        assert np.allclose(fedsmart_weight_update(prev, accs, eta), want, rtol=0, atol=1e-12)

    @given(st.integers(1, 10).flatmap(lambda n: st.tuples(simplex(n), st.floats(0, 1), st.floats(1e-3, 10))))
    def test_equal_accuracy_fixed_point(self, case):
        prev, acc, eta = case
        assert np.array_equal(fedsmart_weight_update(prev, np.full(prev.size, acc), eta), prev)

    @given(weight_cases(), st.floats(0.0, 0.5), st.data())
    def test_monotone_response(self, case, bump, data):
        prev, accs, eta = case
        j = data.draw(st.integers(0, prev.size - 1))
        raised = accs.copy()
        raised[j] = min(1.0, accs[j] + bump)
        # only moves that keep j on the same side of the middle
        order_before = np.argsort(np.argsort(accs, kind="stable"), kind="stable")
        order_after = np.argsort(np.argsort(raised, kind="stable"), kind="stable")
        assume(np.array_equal(order_before, order_after))
        before = fedsmart_weight_update(prev, accs, eta)[j]
        after = fedsmart_weight_update(prev, raised, eta)[j]
        assert after >= before - 1e-12


class TestMixing:
    def test_identical_rows_come_back_exactly(self, rng):
        d = rng.normal(size=5)
        w = np.array([0.1, 0.2, 0.3, 0.4])
        assert np.array_equal(mix_deltas(w, np.tile(d, (4, 1))), d)

    def test_fedavg_hand_example(self):
        ups = [ClientUpdate(0, np.array([1.0, 0.0]), 1), ClientUpdate(1, np.array([0.0, 1.0]), 3)]
        assert np.allclose(fedavg_aggregate(ups), [0.25, 0.75], rtol=0, atol=1e-15)

    def test_fedavg_identical_and_single(self, rng):
        d = rng.normal(size=3)
        assert np.array_equal(fedavg_aggregate([ClientUpdate(i, d, i + 1) for i in range(3)]), d)
        assert np.array_equal(fedavg_aggregate([ClientUpdate(0, d, 7)]), d)

    def test_fedavg_empty(self):
        with pytest.raises(ContractError):
            fedavg_aggregate([])

    @given(st.integers(1, 6).flatmap(lambda n: st.tuples(
        arrays(np.float64, (n, 3), elements=st.floats(-5, 5)), st.lists(st.integers(1, 100), min_size=n, max_size=n))))
    def test_fedavg_matches_weighted_mean(self, case):
        deltas, sizes = case
        ups = [ClientUpdate(i, deltas[i], sizes[i]) for i in range(len(sizes))]
        total = sum(sizes)
        want = [math.fsum(sizes[i] * deltas[i][k] for i in range(len(sizes))) / total for k in range(3)]
        assert np.allclose(fedavg_aggregate(ups), want, rtol=1e-12, atol=1e-12)


class TestFedSmartRound:
    def test_single_client_is_local_training(self, rng):
        parts = random_partitions(rng, 1)
        fs, lo = FedSmart(), LocalOnly()
        s1, s2 = state_for(fs, 1), state_for(lo, 1)
        for _ in range(3):
            s1, s2 = fs.play_round(s1, parts), lo.play_round(s2, parts)
        assert np.array_equal(s1.models, s2.models)
        assert np.array_equal(s1.weights, [[1.0]])

    def test_identical_deltas(self, rng):
        n = 4
        parts = random_partitions(rng, n)
        d = rng.normal(size=4)
        state = StrategyState(rng.normal(size=(n, 4)), np.full((n, n), 0.25), 0)
        out = fedsmart_round(state, [ClientUpdate(i, d, 5) for i in range(n)], parts)
        assert np.array_equal(out.models, state.models + d)

    @given(st.integers(0, 10_000))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n, d = 3, 2
        models = rng.normal(size=(n, d + 1))
        weights = np.stack([w / w.sum() for w in rng.random((n, n)) + 0.01])
        deltas = rng.normal(size=(n, d + 1))
        vals = [(rng.normal(size=(4, d)), rng.integers(0, 2, size=4)) for _ in range(n)]
        parts = [partition(i, X, y) for i, (X, y) in enumerate(vals)]
        eta = float(rng.uniform(0.1, 2))
        out = fedsmart_round(StrategyState(models, weights, 5, eta=eta),
                             [ClientUpdate(i, deltas[i], 4) for i in range(n)], parts)
        ref_m, ref_w = ref_fedsmart_round(models.tolist(), weights.tolist(), deltas.tolist(),
                                          [(X.tolist(), y.tolist()) for X, y in vals], eta)
        assert np.allclose(out.models, ref_m, rtol=0, atol=1e-12)
        assert np.allclose(out.weights, ref_w, rtol=0, atol=1e-12)
        assert out.round == 6

    def test_missing_update(self, rng):
        parts = random_partitions(rng, 3)
        state = state_for(FedSmart(), 3)
        ups = FedSmart().client_phase(state, parts)
        with pytest.raises(ProtocolError):
            fedsmart_round(state, ups[:2], parts)
        with pytest.raises(ProtocolError):
            fedsmart_round(state, [ups[1], ups[0], ups[2]], parts)

    def test_rows_stay_on_simplex_over_rounds(self, rng):
        parts = random_partitions(rng, 4)
        fs = FedSmart()
        state = state_for(fs, 4)
        for _ in range(10):
            state = fs.play_round(state, parts)
            assert np.all(state.weights >= 0)
            assert np.allclose(state.weights.sum(axis=1), 1.0, rtol=0, atol=1e-9)

    def test_initial_weights_uniform(self):
        assert np.array_equal(state_for(FedSmart(), 5).weights, np.full((5, 5), 0.2))


class TestBaselines:
    def test_fedsgd_single_client_is_full_batch_step(self, rng):
        parts = random_partitions(rng, 1)
        state = state_for(FedSGD(), 1)
        out = fedsgd_round(state, parts)
        assert np.array_equal(out.models[0], state.models[0] - 0.2 * gradient(state.models[0], parts[0].train))

    def test_fedsgd_weighted_gradients(self, rng):
        parts = random_partitions(rng, 2, m=10)
        parts.append(partition(2, rng.integers(0, 2, (30, 3)).astype(float), rng.integers(0, 2, 30)))
        state = state_for(FedSGD(), 3)
        out = fedsgd_round(state, parts)
        grads = [gradient(state.models[0], p.train) for p in parts]
        want = state.models[0] - 0.2 * (10 * grads[0] + 10 * grads[1] + 30 * grads[2]) / 50
        assert np.allclose(out.models[0], want, rtol=0, atol=1e-14)

    def test_fedsgd_equal_sizes_mean(self, rng):
        parts = random_partitions(rng, 3)
        state = state_for(FedSGD(), 3)
        grads = np.stack([gradient(state.models[0], p.train) for p in parts])
        out = fedsgd_round(state, parts)
        assert np.allclose(out.models[0], -0.2 * grads.mean(axis=0), rtol=0, atol=1e-14)

    def test_boost_mask(self):
        assert boost_mask([0.2, 0.5, 0.9]) == [False, False, True]
        assert boost_mask([0.4, 0.4, 0.4]) == [False] * 3
        assert boost_mask([0.7]) == [False]

    def test_loadaboost_without_boost_is_fedavg(self, rng):
        X = rng.integers(0, 2, (20, 3)).astype(float)
        y = rng.integers(0, 2, 20)
        parts = [partition(i, X, y) for i in range(3)]
        # identical data and full batches give identical losses, so the gate never fires
        state = state_for(FedAvg(), 3, batch_size=100)
        assert np.array_equal(loadaboost_round(state, parts).models, fedavg_round(state, parts).models)
        assert np.array_equal(loadaboost_round(state_for(FedAvg(), 1), parts[:1]).models,
                              fedavg_round(state_for(FedAvg(), 1), parts[:1]).models)

    def test_loadaboost_retrains_high_loss_client(self, rng):
        parts = random_partitions(rng, 3)
        state = state_for(LoAdaBoost(), 3)
        plain = FedAvg().client_phase(state, parts)
        boosted = LoAdaBoost().client_phase(state, parts)
        from fedsim.model import loss
        losses = [loss(state.models[0] + u.delta, p.train) for u, p in zip(plain, parts)]
        for u, v, flag in zip(plain, boosted, boost_mask(losses)):
            assert np.array_equal(u.delta, v.delta) != flag

    def test_local_only_single_equals_centralized(self, rng):
        parts = random_partitions(rng, 1)
        lo = LocalOnly()
        state = state_for(lo, 1)
        for _ in range(3):
            state = local_only_round(state, parts)
        assert np.array_equal(state.models[0], centralized_train(parts, rounds=3, master_seed=3, batch_size=5,
                                                                 lr=0.2))

    def test_centralized_pool_order(self, rng):
        parts = random_partitions(rng, 3)
        pooled = pool_train(list(reversed(parts)))
        assert pooled == Dataset.concat([p.train for p in parts])

    def test_centralized_duplicate_clients(self, rng):
        X = rng.integers(0, 2, (15, 3)).astype(float)
        y = rng.integers(0, 2, 15)
        twins = [partition(0, X, y), partition(1, X, y)]
        doubled = [partition(0, np.vstack([X, X]), np.concatenate([y, y]))]
        hyper = dict(master_seed=1, batch_size=4, lr=0.3)
        assert np.array_equal(centralized_train(twins, 2, **hyper), centralized_train(doubled, 2, **hyper))

    def test_centralized_empty(self):
        with pytest.raises(ContractError):
            centralized_train([])

    @pytest.mark.parametrize("batch_size", [5, 1000])
    def test_fedavg_degenerates_to_local(self, rng, monkeypatch, batch_size):
        # identical data and identical seeds for every client
        monkeypatch.setattr(algorithms, "round_seed", lambda seed, cid, rnd, stream=21: [seed, stream, rnd])
        X = rng.integers(0, 2, (25, 3)).astype(float)
        y = rng.integers(0, 2, 25)
        parts = [partition(i, X, y) for i in range(4)]
        fa, lo = FedAvg(), LocalOnly()
        s_fa, s_lo = state_for(fa, 4, batch_size=batch_size), state_for(lo, 4, batch_size=batch_size)
        for _ in range(4):
            s_fa, s_lo = fa.play_round(s_fa, parts), lo.play_round(s_lo, parts)
            for i in range(4):
                assert np.array_equal(s_fa.models[0], s_lo.models[i])

    def test_round_counter(self, rng):
        parts = random_partitions(rng, 2)
        for name in STRATEGIES:
            strat = get_strategy(name)
            state = state_for(strat, 2)
            for t in range(3):
                assert state.round == t
                state = strat.play_round(state, parts)

    def test_uniform_weight_matrix_for_baselines(self):
        for strat in (FedAvg(), FedSGD(), LocalOnly(), Centralized(), LoAdaBoost()):
            assert np.array_equal(strat.weight_matrix(state_for(strat, 4), 4), np.full((4, 4), 0.25))

    def test_unknown_strategy(self):
        with pytest.raises(ContractError):
            get_strategy("fedprox")


def test_client_update_uses_local_train(rng):
    parts = random_partitions(rng, 2)
    state = state_for(FedAvg(), 2)
    u = FedAvg().client_update(state, 1, parts[1])
    want = local_train(state.models[0], parts[1].train, 1, 5, 0.2, algorithms.round_seed(3, 1, 0), 1)
    assert u == want
