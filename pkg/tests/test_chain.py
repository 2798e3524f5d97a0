import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import mm1, nominal, random_corpus, toy_model
from rarechain import (
    ChangeOfMeasure,
    InvalidModelError,
    Kind,
    MarkovModel,
    path_probability,
    random_chain,
    sample_path,
    substream,
    validate_model,
)
from rarechain.chain import InvalidTransitionError, SupportError, absolute_continuity_violation, check_absolute_continuity
from rarechain.simulate import DeadRowError, StepLimitError


def rules(violations):
    return [v.rule for v in violations]


class TestValidateModel:
    def test_minimal_model_is_valid(self, toy):
        assert validate_model(toy) == []

    def test_good_state_jumping_to_bad_set(self):
        P = toy_model().P.copy()
        P[0] = [0.0, 0.9, 0.1]
        model = MarkovModel(P, [1, 0, 2], check=False)
        assert "good state jumps to bad set" in rules(validate_model(model))

    def test_row_deficit_reported(self):
        P = toy_model().P.copy()
        P[1] = [0.8, 0.0, 0.1]
        bad = validate_model(MarkovModel(P, [1, 0, 2], check=False))
        assert rules(bad) == ["row not stochastic"]
        assert bad[0].state == 1
        assert "deficit 0.1" in str(bad[0])

    def test_good_self_loop(self):
        P = toy_model().P.copy()
        P[0] = [0.5, 0.5, 0.0]
        assert "good state has a self-loop" in rules(validate_model(MarkovModel(P, [1, 0, 2], check=False)))

    def test_trap_detected(self):
        # states 2 and 3 bounce between each other forever
        P = np.zeros((5, 5))
        P[0, 1] = 1
        P[1, [0, 2, 4]] = [0.5, 0.25, 0.25]
        P[2, 3] = 1
        P[3, 2] = 1
        P[4, 4] = 1
        bad = validate_model(MarkovModel(P, [1, 0, 0, 0, 2], check=False))
        assert sorted(v.state for v in bad if v.rule.startswith("absorbing set unreachable")) == [2, 3]

    def test_partition_rules(self):
        P = np.eye(3)
        out = rules(validate_model(MarkovModel(P, [0, 0, 0], check=False)))
        assert "exactly one good state required" in out
        assert "at least one bad state required" in out

    def test_probability_range(self):
        P = toy_model().P.copy()
        P[1] = [1.2, -0.2, 0.0]
        assert "probability outside [0, 1]" in rules(validate_model(MarkovModel(P, [1, 0, 2], check=False)))

    def test_constructor_rejects(self):
        P = toy_model().P.copy()
        P[1, 0] = 0.5
        with pytest.raises(InvalidModelError, match="row not stochastic"):
            MarkovModel(P, [1, 0, 2])

    def test_models_are_immutable(self, toy):
        with pytest.raises(ValueError):
            toy.P[0, 0] = 1.0


class TestPathProbability:
    def test_single_edge(self, toy):
        assert path_probability(toy, [1, 2]) == 0.01

    def test_mm1_two_steps(self):
        assert path_probability(mm1(5), [1, 2, 3]) == pytest.approx(16 / 81, rel=1e-15)

    def test_zero_edge_rejected(self):
        with pytest.raises(InvalidTransitionError, match="1 -> 3"):
            path_probability(mm1(5), [1, 3])


class TestSamplePath:
    def test_toy_nominal_paths(self, toy):
        seen = set()
        for i in range(200):
            path = sample_path(toy, nominal(toy), substream(3, i))
            assert path.log_weight == 0.0
            seen.add(tuple(path.states.tolist()))
        assert seen == {(0, 1, 2), (0, 1, 0)}

    def test_forced_upward_measure(self):
        model = mm1(5)
        Q = model.P.copy()
        for x in range(1, 5):
            Q[x] = 0
            Q[x, x + 1] = 1
        path = sample_path(model, ChangeOfMeasure(Q), substream(0))
        assert path.states.tolist() == [0, 1, 2, 3, 4, 5]
        assert path.hit_bad
        assert path.weight == pytest.approx((4 / 9) ** 4, rel=1e-12)
        assert path.weight == pytest.approx(0.039018, abs=5e-7)

    def test_uniform_neighbour_two_level(self):
        model = mm1(2)
        Q = model.P.copy()
        Q[1] = [0.5, 0, 0.5]
        for i in range(100):
            path = sample_path(model, ChangeOfMeasure(Q), substream(11, i))
            if path.hit_bad:
                assert path.states.tolist() == [0, 1, 2]
                assert path.weight == pytest.approx(8 / 9, rel=1e-12)
                break
        else:
            pytest.fail("no hitting path in 100 draws")

    def test_counts_consistent_with_states(self):
        model = random_chain(9, 5)
        for i in range(50):
            path = sample_path(model, nominal(model), substream(1, i))
            pairs = list(zip(path.states[:-1].tolist(), path.states[1:].tolist()))
            assert sum(path.counts.values()) == path.length == len(pairs)
            for edge, c in path.counts.items():
                assert pairs.count(edge) == c
            assert model.kinds[path.states[-1]] != Kind.INTERNAL
            assert all(model.kinds[s] == Kind.INTERNAL for s in path.states[1:-1])
            assert path.states[0] == model.good

    def test_same_stream_same_path(self):
        model = mm1(10)
        a = sample_path(model, nominal(model), substream(5, 2, 9))
        b = sample_path(model, nominal(model), substream(5, 2, 9))
        assert a.states.tolist() == b.states.tolist() and a.log_weight == b.log_weight

    def test_step_limit(self):
        model = mm1(50)
        with pytest.raises(StepLimitError):
            for i in range(20):
                sample_path(model, nominal(model), substream(0, i), max_steps=3)

    def test_dead_row(self):
        # ChangeOfMeasure refuses empty rows, so bypass its constructor
        model = mm1(5)
        Q = model.P.copy()
        Q[3] = 0.0
        measure = ChangeOfMeasure.__new__(ChangeOfMeasure)
        measure.P, measure.flagged, measure.label = Q, np.zeros(6, bool), "broken"
        with pytest.raises(DeadRowError, match="state 3"):
            for i in range(50):
                sample_path(model, measure, substream(0, i))

    def test_frequencies_follow_measure_row(self):
        # chi-square sanity on transitions out of the most visited state
        model = random_chain(8, 17, density=0.5)
        Q = model.P.copy()
        x = int(model.internal[0])
        support = Q[x] > 0
        Q[x, support] = np.linspace(1, 2, support.sum()) / np.linspace(1, 2, support.sum()).sum()
        measure = ChangeOfMeasure(Q)
        check_absolute_continuity(model, measure)
        counts = np.zeros(model.n_states)
        for i in range(10_000):
            for (a, b), c in sample_path(model, measure, substream(4, i)).counts.items():
                if a == x:
                    counts[b] += c
        obs = counts[support]
        assert obs.sum() > 500
        p = stats.chisquare(obs, Q[x, support] * obs.sum()).pvalue
        assert p > 0.01


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(4, 12))
def test_log_weight_matches_path_probability_ratio(seed, n):
    model = random_chain(n, seed)
    rng = np.random.default_rng(seed + 1)
    Q = model.P.copy()
    for x in [model.good, *model.internal]:
        s = Q[x] > 0
        Q[x, s] = rng.uniform(0.1, 1, s.sum())
        Q[x] /= Q[x].sum()
    measure = ChangeOfMeasure(Q)
    measure_model = MarkovModel(Q, model.kinds)
    path = sample_path(model, measure, substream(seed, 0))
    ratio = path_probability(model, path.states) / path_probability(measure_model, path.states)
    assert np.exp(path.log_weight) == pytest.approx(ratio, rel=1e-10)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_nominal_sampling_has_zero_log_weight(seed):
    model = random_chain(10, seed)
    for i in range(5):
        assert sample_path(model, nominal(model), substream(seed, i)).log_weight == 0.0


class TestAbsoluteContinuity:
    def test_missing_edge_detected(self):
        model = mm1(5)
        Q = model.P.copy()
        Q[3] = [0, 0, 1, 0, 0, 0]
        assert absolute_continuity_violation(model, ChangeOfMeasure(Q)) == (3, 4)
        with pytest.raises(SupportError, match="3 -> 4"):
            check_absolute_continuity(model, ChangeOfMeasure(Q))

    def test_edges_back_to_good_not_required(self):
        model = mm1(5)
        Q = model.P.copy()
        Q[1] = [0, 0, 1, 0, 0, 0]
        assert absolute_continuity_violation(model, ChangeOfMeasure(Q)) is None

    def test_change_of_measure_rejects_non_stochastic(self):
        with pytest.raises(ValueError, match="not stochastic"):
            ChangeOfMeasure(np.array([[0.5, 0.4], [0, 1]]))


def test_random_corpus_is_valid():
    for model in random_corpus(50):
        assert validate_model(model) == []
