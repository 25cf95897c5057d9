"""
Language Advice Policy

This module turns a trained sequence-to-sequence model into a critique policy.
For a local view it scores every (training utterance, action) reconstruction,
keeps the utterance behind the single best score and softmaxes that utterance's
five action scores at the current advice temperature.

Core Features:
- ``AdviceIndex``: distinct utterances, pre-encoded once, with a per-view answer cache
- ``select_advice``: utterance selection by the largest reconstruction log probability
- ``language_critique``: Boltzmann over the selected utterance's action scores
- ``LanguageCritique``: critique-side adapter for ``ShapedPolicy``
- Cache files (``view \\t utterance id \\t 5 scores``) for audit and reuse, stamped with
  the fingerprint of the index that wrote them

Dependencies:
    pip install numpy
"""

import hashlib
import threading
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .frogger_env import N_ACTIONS, LocalView
from .helpers.utils import hash_payload
from .rl_core import ActionDistribution, TemperatureSchedule, boltzmann
from .seq2seq import Seq2SeqModel, encode_many, score_all_actions

CACHE_HEADER = "# index "


class AdviceError(Exception):
    """Custom exception for advice index construction and cache files."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        super().__init__(message)
        self.line_number = line_number


class StaleCacheError(AdviceError):
    """Cache file written by a different model, utterance set or scoring mode."""

    def __init__(self, message: str, expected: str, found: str):
        super().__init__(message, line_number=1)
        self.expected = expected
        self.found = found


def index_fingerprint(model: Seq2SeqModel, utterances: Sequence[Sequence[str]], length_normalize: bool) -> str:
    """Digest of everything a cached answer depends on: parameters, vocabulary, utterances and scoring mode."""
    digest = hashlib.sha256()
    for name, block in model.params.items():
        digest.update(name.encode("utf-8"))
        digest.update(np.ascontiguousarray(block, dtype=np.float64).tobytes())
    digest.update(hash_payload({
        "source": list(model.vocab.source),
        "utterances": [list(u) for u in utterances],
        "length_normalize": bool(length_normalize),
    }).encode("utf-8"))
    return digest.hexdigest()


class AdviceIndex:
    """
    Read-mostly index over the distinct training utterances.

    Cache entries are pure functions of (model, utterances, view); concurrent
    population writes identical values.
    """

    def __init__(self, model: Seq2SeqModel, utterances: Sequence[Sequence[str]], length_normalize: bool = False):
        distinct = list(dict.fromkeys(tuple(u) for u in utterances))
        if not distinct:
            raise AdviceError("An advice index needs at least one utterance")
        self.model = model
        self.utterances = distinct
        self.length_normalize = length_normalize
        self.encoded = encode_many(model, distinct)
        self.fingerprint = index_fingerprint(model, distinct, length_normalize)
        self.cache: Dict[LocalView, Tuple[int, np.ndarray]] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.utterances)

    def __getstate__(self):
        state = self.__dict__.copy()
        del state["_lock"]
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def scores(self, view: LocalView) -> np.ndarray:
        """All (utterance, action) log probabilities for ``view``, shape (utterances, 5)."""
        scores = score_all_actions(self.model, self.encoded, view)
        if self.length_normalize:
            # view tokens + action + </s>
            scores = scores / (len(view.cells) + 2)
        return scores


def select_advice(view: LocalView, index: AdviceIndex, use_cache: bool = True) -> Tuple[int, np.ndarray]:
    """
    Pick the utterance participating in the single largest (utterance, action) score.

    Ties resolve to the lowest utterance id (then the lowest action).

    Returns:
        Tuple of (utterance id, that utterance's 5 action scores)
    """
    if use_cache and view in index.cache:
        best, scores = index.cache[view]
        return best, scores.copy()
    all_scores = index.scores(view)
    best = int(np.argmax(all_scores.reshape(-1))) // N_ACTIONS
    scores = all_scores[best].copy()
    if use_cache:
        with index._lock:
            index.cache[view] = (best, scores.copy())
    return best, scores


def language_critique(view: LocalView, index: AdviceIndex, episode: int,
                      schedule: TemperatureSchedule) -> ActionDistribution:
    """Boltzmann over the selected utterance's action scores at ``schedule.tau(episode)``."""
    _, scores = select_advice(view, index)
    return boltzmann(scores, schedule.tau(episode))


class LanguageCritique:
    """Critique side of the language agents."""

    kind = "language"

    def __init__(self, index: AdviceIndex, schedule: TemperatureSchedule):
        self.index = index
        self.schedule = schedule

    def distribution(self, view: LocalView, episode: int) -> ActionDistribution:
        return language_critique(view, self.index, episode, self.schedule)


def save_cache(index: AdviceIndex) -> str:
    """Serialise the cache under a fingerprint header, sorted by view text, with round-trippable floats."""
    lines = [f"{CACHE_HEADER}{index.fingerprint}\n"]
    for view in sorted(index.cache, key=str):
        best, scores = index.cache[view]
        lines.append(f"{view}\t{best}\t" + " ".join(repr(float(s)) for s in scores) + "\n")
    return "".join(lines)


def load_cache(index: AdviceIndex, text: str) -> int:
    """
    Merge cache lines into ``index``; returns the number of entries loaded.

    A fingerprint header, when present, must match ``index.fingerprint``.

    Raises:
        StaleCacheError: If the header names a different index
        AdviceError: On malformed lines or utterance ids outside the index
    """
    loaded = 0
    for number, line in enumerate(text.splitlines(), 1):
        if line.startswith(CACHE_HEADER):
            found = line[len(CACHE_HEADER):].strip()
            if found != index.fingerprint:
                raise StaleCacheError(f"Advice cache was written for index {found[:12]}, "
                                      f"not {index.fingerprint[:12]}", index.fingerprint, found)
            continue
        if not line.strip():
            continue
        try:
            view_text, best_text, scores_text = line.split("\t")
            view = LocalView.from_tokens(view_text.split())
            best = int(best_text)
            scores = np.array([float(s) for s in scores_text.split()])
        except ValueError as e:
            raise AdviceError(f"line {number}: bad cache line: {e}", number)
        if not 0 <= best < len(index) or scores.shape != (N_ACTIONS,):
            raise AdviceError(f"line {number}: cache entry does not fit this index", number)
        index.cache[view] = (best, scores)
        loaded += 1
    return loaded
