import os
import sys

import numpy as np
import pytest

# Add the source directory to path so the package can be imported
sys.path.append(os.path.join(os.path.dirname(__file__), "..", "src"))

from frogger_advice.frogger_env import ACTIONS, GameState, load_map, local_view, safe_cells  # noqa: E402
from frogger_advice.helpers.utils import data_path, read_file_content  # noqa: E402
from frogger_advice.seq2seq import TrainConfig, train  # noqa: E402
from frogger_advice.trainer_sim import AnnotatedExample, Dataset, describe, load_grammar  # noqa: E402

FIXTURE_MAPS = ("train.map", "map25.map", "map50.map", "map75.map", "empty.map")
OVERFIT_SIZE = 50


def load_fixture_map(name):
    return load_map(read_file_content(data_path("maps", name)))


@pytest.fixture
def empty_map():
    return load_fixture_map("empty.map")


@pytest.fixture
def train_map():
    return load_fixture_map("train.map")


@pytest.fixture(scope="session")
def grammar():
    return load_grammar(read_file_content(data_path("grammar", "frogger.grammar")))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def overfit_examples(grammar):
    """Fifty distinct local views from the fixture maps, one action each, every sentence different."""
    views = {}
    for name in FIXTURE_MAPS:
        frogger_map = load_fixture_map(name)
        for tick in range(frogger_map.width):
            for cell in safe_cells(frogger_map, tick):
                views.setdefault(local_view(GameState(frogger_map, cell, tick)), None)

    rng = np.random.default_rng(50)
    examples, sentences = [], set()
    for view in views:
        action = ACTIONS[len(examples) % len(ACTIONS)]
        utterance = describe(view, action, 1.0, rng, grammar)
        if utterance in sentences:
            continue
        sentences.add(utterance)
        examples.append(AnnotatedExample(utterance, view, action))
        if len(examples) == OVERFIT_SIZE:
            break
    assert len(examples) == OVERFIT_SIZE
    return examples


@pytest.fixture(scope="session")
def overfit_model(overfit_examples):
    """Desk-default model trained for 300 epochs on ``overfit_examples``."""
    return train(Dataset(overfit_examples), TrainConfig(epochs=300), verbose=False)
