import pickle

import numpy as np
import pytest
from numpy.testing import assert_allclose

from frogger_advice.advice_policy import (
    AdviceError,
    AdviceIndex,
    LanguageCritique,
    StaleCacheError,
    language_critique,
    load_cache,
    save_cache,
    select_advice,
)
from frogger_advice.frogger_env import ACTIONS, CELL_TOKENS, Action, LocalView
from frogger_advice.rl_core import TemperatureSchedule
from frogger_advice.seq2seq import TrainConfig, Vocab, encode, init_model, score, score_all_actions

UTTERANCES = [
    ("i", "am", "moving", "up"),
    ("waiting", "for", "the", "car"),
    ("hop", "on", "the", "log", "now"),
]
VIEW = LocalView(("ROAD",) * 3 + ("GRASS",) * 3 + ("WALL",) * 3)


@pytest.fixture
def model():
    return init_model(Vocab.build(UTTERANCES), TrainConfig(layers=1, hidden=6, embedding=4, init_scale=0.5), seed=8)


@pytest.fixture
def index(model):
    return AdviceIndex(model, UTTERANCES)


def _random_views(n, seed=0):
    rng = np.random.default_rng(seed)
    return [LocalView(tuple(CELL_TOKENS[int(i)] for i in rng.integers(len(CELL_TOKENS), size=9))) for _ in range(n)]


def test_index_deduplicates_utterances(model):
    index = AdviceIndex(model, UTTERANCES + [UTTERANCES[0]])
    assert len(index) == 3
    with pytest.raises(AdviceError):
        AdviceIndex(model, [])


def test_single_utterance_is_always_selected(model):
    index = AdviceIndex(model, UTTERANCES[:1])
    best, scores = select_advice(VIEW, index)
    assert best == 0
    assert_allclose(scores, score_all_actions(model, encode(model, UTTERANCES[0]), VIEW)[0])


def test_selection_matches_brute_force(model, index):
    for view in _random_views(20, seed=1):
        brute = np.array([[score(model, u, view, a) for a in ACTIONS] for u in UTTERANCES])
        best, scores = select_advice(view, index, use_cache=False)
        assert best == int(np.unravel_index(np.argmax(brute), brute.shape)[0])
        assert_allclose(scores, brute[best], atol=1e-9)


def test_ties_resolve_to_lowest_utterance(index, monkeypatch):
    monkeypatch.setattr(index, "scores", lambda view: np.full((3, 5), -4.0))
    best, _ = select_advice(VIEW, index, use_cache=False)
    assert best == 0


def test_language_critique_known_value(index, monkeypatch):
    monkeypatch.setattr(index, "scores", lambda view: np.array([[0.0, -3.0, -3.0, -3.0, -3.0],
                                                                [-9.0, -9.0, -9.0, -9.0, -9.0],
                                                                [-9.0, -9.0, -9.0, -9.0, -9.0]]))
    dist = language_critique(VIEW, index, episode=0, schedule=TemperatureSchedule.constant(1.0))
    assert dist[Action.UP] == pytest.approx(0.834, abs=1e-3)


def test_language_critique_flattens_as_temperature_rises(index):
    schedule = TemperatureSchedule(tau0=0.5, tau_max=50.0, horizon=10)
    peaks = [max(language_critique(VIEW, index, e, schedule).probs) for e in range(12)]
    assert all(b <= a + 1e-12 for a, b in zip(peaks, peaks[1:]))
    assert peaks[-1] < peaks[0]


def test_language_critique_keeps_best_action_on_top(index):
    for view in _random_views(10, seed=2):
        _, scores = select_advice(view, index)
        dist = language_critique(view, index, 0, TemperatureSchedule.constant(2.0))
        assert int(dist.argmax()) == int(np.argmax(scores))


def test_cache_is_transparent(model):
    cached, uncached = AdviceIndex(model, UTTERANCES), AdviceIndex(model, UTTERANCES)
    views = _random_views(1000, seed=3)
    for view in views:
        a = select_advice(view, cached)
        b = select_advice(view, uncached, use_cache=False)
        assert a[0] == b[0]
        assert np.array_equal(a[1], b[1])
    assert len(cached.cache) == len(set(views))
    assert not uncached.cache
    # second pass is served from the cache
    for view in views[:50]:
        assert select_advice(view, cached)[0] == cached.cache[view][0]


def test_length_normalised_scores(model):
    plain = AdviceIndex(model, UTTERANCES)
    normalised = AdviceIndex(model, UTTERANCES, length_normalize=True)
    assert_allclose(normalised.scores(VIEW), plain.scores(VIEW) / 11)


def test_cache_file_round_trip(model, index):
    for view in _random_views(25, seed=4):
        select_advice(view, index)
    text = save_cache(index)
    fresh = AdviceIndex(model, UTTERANCES)
    assert load_cache(fresh, text) == len(index.cache)
    assert save_cache(fresh) == text


def test_cache_file_errors(index):
    with pytest.raises(AdviceError) as excinfo:
        load_cache(index, f"{VIEW}\t0\t0 0 0 0 0\n{VIEW}\t7\t0 0 0 0 0\n")
    assert excinfo.value.line_number == 2
    with pytest.raises(AdviceError):
        load_cache(index, "not a cache line\n")


def test_cache_from_another_model_is_rejected(index):
    select_advice(VIEW, index)
    text = save_cache(index)
    assert text.startswith(f"# index {index.fingerprint}\n")

    other = init_model(index.model.vocab, TrainConfig(layers=1, hidden=6, embedding=4, init_scale=0.5), seed=9)
    with pytest.raises(StaleCacheError) as excinfo:
        load_cache(AdviceIndex(other, UTTERANCES), text)
    assert excinfo.value.found == index.fingerprint
    assert excinfo.value.line_number == 1

    with pytest.raises(StaleCacheError):
        load_cache(AdviceIndex(index.model, UTTERANCES, length_normalize=True), text)
    with pytest.raises(StaleCacheError):
        load_cache(AdviceIndex(index.model, UTTERANCES[:2]), text)


def test_fingerprint_is_stable_for_equal_indexes(model):
    assert AdviceIndex(model, UTTERANCES).fingerprint == AdviceIndex(model, UTTERANCES).fingerprint


def test_language_critique_adapter(index):
    critique = LanguageCritique(index, TemperatureSchedule.constant(1.0))
    assert critique.kind == "language"
    assert_allclose(critique.distribution(VIEW, 5).probs.sum(), 1.0)


def test_index_survives_pickling(index):
    select_advice(VIEW, index)
    restored = pickle.loads(pickle.dumps(index))
    assert restored.cache.keys() == index.cache.keys()
    assert select_advice(VIEW, restored)[0] == select_advice(VIEW, index)[0]


@pytest.mark.slow
def test_overfit_model_recovers_demonstrated_actions(overfit_examples, overfit_model):
    index = AdviceIndex(overfit_model, [example.utterance for example in overfit_examples])
    schedule = TemperatureSchedule.constant(0.2)
    recovered = 0
    for example in overfit_examples:
        _, scores = select_advice(example.view, index)
        dist = language_critique(example.view, index, 0, schedule)
        assert int(dist.argmax()) == int(np.argmax(scores))
        recovered += int(dist.argmax()) == int(example.action)
    assert recovered >= 0.9 * len(overfit_examples)
