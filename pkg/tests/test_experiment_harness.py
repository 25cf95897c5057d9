import json
import os

import numpy as np
import pandas as pd
import pytest

from frogger_advice.experiment_harness import (
    NOT_REACHED,
    ExperimentConfig,
    ExperimentError,
    LearningCurve,
    Pipeline,
    PipelineError,
    compare,
    episodes_to_threshold,
    run_experiment,
    sign_test,
)
from frogger_advice.frogger_env import Action, LocalView
from frogger_advice.helpers.config import load_config
from frogger_advice.helpers.utils import read_file_content, write_file_content
from frogger_advice.seq2seq import TrainConfig, save_checkpoint, train
from frogger_advice.trainer_sim import AnnotatedExample, Dataset, save_dataset, save_pairs

TINY_OVERRIDES = [
    "env.step_cap=30",
    "trainer.training_map=empty.map",
    "trainer.n_agents=3",
    "trainer.episodes_per_agent=30",
    "trainer.horizon=10",
    "seq2seq.epochs=2",
    "seq2seq.layers=1",
    "seq2seq.hidden=4",
    "seq2seq.embedding=4",
    "seq2seq.batch_size=8",
    "experiment.maps=[empty.map]",
    "experiment.episodes.deterministic=200",
    "experiment.episodes.stochastic=100",
    "experiment.eval_period=100",
    "experiment.eval_episodes=2",
    "experiment.replicates=2",
]

GRASS_VIEW = LocalView(("ROAD",) * 3 + ("GRASS",) * 3 + ("WALL",) * 3)
ROAD_VIEW = LocalView(("GOAL",) * 3 + ("ROAD",) * 3 + ("ROAD",) * 3)


def _experiment(agent="qlearn", **overrides):
    settings = dict(map_file="empty.map", dynamics="deterministic", agent=agent, episodes=100,
                    eval_period=50, eval_episodes=2, replicates=3, step_cap=30, seed=5)
    settings.update(overrides)
    return ExperimentConfig(**settings)


def _curve(name, evaluations, episodes=(100, 200, 300)):
    return LearningCurve.from_evaluations(name, list(episodes), evaluations)


def _language_artifacts(tmp_path, epochs=2):
    examples = [AnnotatedExample(("go", "up", "now"), GRASS_VIEW, Action.UP),
                AnnotatedExample(("reach", "the", "goal"), ROAD_VIEW, Action.UP),
                AnnotatedExample(("wait", "right", "here"), ROAD_VIEW, Action.STAY)]
    dataset = Dataset(examples, accuracy=0.8)
    dataset_path = str(tmp_path / "dataset_80.tsv")
    write_file_content(dataset_path, save_dataset(dataset))
    model = train(dataset, TrainConfig(epochs=epochs, layers=1, hidden=4, embedding=3, batch_size=3), verbose=False)
    model_path = str(tmp_path / "model_80.ckpt")
    save_checkpoint(model, model_path)
    return dataset_path, model_path


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def test_eval_period_must_divide_budget():
    with pytest.raises(ExperimentError):
        _experiment(episodes=120, eval_period=50)


def test_unknown_agent_rejected():
    with pytest.raises(ExperimentError):
        _experiment(agent="language50")


def test_config_from_workbench_settings():
    config = load_config(overrides=TINY_OVERRIDES)
    experiment = ExperimentConfig.from_config(config, "empty.map", "stochastic", "qlearn")
    assert experiment.episodes == 100
    assert experiment.step_cap == 30
    assert experiment.eval_grid() == [100]
    with pytest.raises(ExperimentError):
        ExperimentConfig.from_config(config, "empty.map", "chaotic", "qlearn")


def test_replicate_seeds_are_shared_across_agents():
    assert _experiment("qlearn").replicate_seeds() == _experiment("observation").replicate_seeds()
    assert len(set(_experiment().replicate_seeds())) == 3


# ---------------------------------------------------------------------------
# Running experiments
# ---------------------------------------------------------------------------


def test_qlearn_curve_shape():
    curve, provenance = run_experiment(_experiment())
    assert len(curve) == 2
    assert list(curve.frame.columns) == ["episode", "rep_0", "rep_1", "rep_2", "mean", "stderr"]
    assert curve.episodes.tolist() == [50, 100]
    assert provenance["demonstrations_hash"] is None
    assert len(provenance["replicate_seeds"]) == 3


def test_same_seed_gives_identical_csv(tmp_path):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    run_experiment(_experiment())[0].to_csv(str(first))
    run_experiment(_experiment())[0].to_csv(str(second))
    assert first.read_bytes() == second.read_bytes()


@pytest.mark.parametrize("agent", ["qlearn", "observation", "language80"])
def test_parallel_replicates_match_serial(tmp_path, agent):
    artifacts = {}
    if agent == "observation":
        artifacts["demonstrations"] = str(tmp_path / "demos.tsv")
        write_file_content(artifacts["demonstrations"],
                           save_pairs([(GRASS_VIEW, Action.UP), (ROAD_VIEW, Action.UP)] * 3))
    elif agent == "language80":
        artifacts["dataset"], artifacts["model"] = _language_artifacts(tmp_path)
    config = _experiment(agent, dynamics="stochastic", **artifacts)
    serial, _ = run_experiment(config)
    parallel, _ = run_experiment(config, workers=2)
    pd.testing.assert_frame_equal(serial.frame, parallel.frame)


def test_missing_demonstrations_raise():
    with pytest.raises(ExperimentError):
        run_experiment(_experiment("observation"))


def test_missing_model_raises(tmp_path):
    dataset_path, _ = _language_artifacts(tmp_path)
    with pytest.raises(ExperimentError) as excinfo:
        run_experiment(_experiment("language80", dataset=dataset_path, model=str(tmp_path / "none.ckpt")))
    assert excinfo.value.artifact.endswith("none.ckpt")


def test_observation_agent_runs(tmp_path):
    path = str(tmp_path / "demos.tsv")
    write_file_content(path, save_pairs([(GRASS_VIEW, Action.UP), (ROAD_VIEW, Action.UP)] * 3))
    curve, provenance = run_experiment(_experiment("observation", demonstrations=path))
    assert len(curve) == 2
    assert provenance["demonstrations_hash"] is not None
    assert provenance["schedule"].startswith("linear")


def test_language_agent_runs_and_writes_cache(tmp_path):
    dataset_path, model_path = _language_artifacts(tmp_path)
    cache_path = str(tmp_path / "cache.tsv")
    config = _experiment("language80", dataset=dataset_path, model=model_path, replicates=2)
    curve, provenance = run_experiment(config, cache_path=cache_path)
    assert len(curve) == 2
    assert provenance["model_hash"] and provenance["dataset_hash"]
    assert os.path.exists(cache_path)
    header, *lines = read_file_content(cache_path).splitlines()
    assert header.startswith("# index ")
    assert lines and all(len(line.split("\t")) == 3 for line in lines)
    # a warm cache does not change the curve
    again, _ = run_experiment(config, cache_path=cache_path)
    pd.testing.assert_frame_equal(curve.frame, again.frame)


def test_retrained_model_ignores_previous_cache(tmp_path):
    dataset_path, model_path = _language_artifacts(tmp_path)
    cache_path = str(tmp_path / "cache.tsv")
    config = _experiment("language80", dataset=dataset_path, model=model_path, replicates=2)
    run_experiment(config, cache_path=cache_path)
    previous = read_file_content(cache_path)

    # same paths, different weights
    _language_artifacts(tmp_path, epochs=6)
    retrained, _ = run_experiment(config, cache_path=cache_path)
    fresh_path = str(tmp_path / "fresh.tsv")
    fresh, _ = run_experiment(config, cache_path=fresh_path)

    assert read_file_content(cache_path) != previous
    assert read_file_content(cache_path) == read_file_content(fresh_path)
    pd.testing.assert_frame_equal(retrained.frame, fresh.frame)


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------


def test_identical_curves_tie():
    evaluations = [[-50.0, 10.0, 90.0], [-40.0, 20.0, 95.0]]
    summary = compare([_curve("a", evaluations), _curve("b", evaluations)])
    row = summary.pairs.iloc[0]
    assert row["ties"] == 2
    assert row["p_two_sided"] == 1.0
    assert row["p_a_greater"] == 1.0
    assert row["a_reaches_no_later"] == 2


def test_dominating_curve_is_significant():
    rng = np.random.default_rng(0)
    low = rng.uniform(-100, 0, size=(10, 3))
    summary = compare([_curve("high", low + 50.0), _curve("low", low)])
    row = summary.pairs.iloc[0]
    assert row["wins_a"] == 10
    assert row["p_two_sided"] == pytest.approx(2 / 1024)
    assert row["p_a_greater"] == pytest.approx(1 / 1024)
    assert row["p_two_sided"] < 0.01


def test_threshold_and_not_reached():
    good = _curve("good", [[0.0, 80.0, 100.0], [0.0, 90.0, 100.0]])
    poor = _curve("poor", [[-80.0, -60.0, 20.0], [-90.0, -50.0, 30.0]])
    summary = compare([good, poor])
    assert summary.threshold == pytest.approx(90.0)
    agents = summary.agents.set_index("agent")
    assert agents.loc["good", "episodes_to_threshold"] == 300
    assert agents.loc["poor", "episodes_to_threshold"] == NOT_REACHED
    assert agents.loc["good", "auc_of_mean"] == pytest.approx(0.5 * 100 * (0 + 85) + 0.5 * 100 * (85 + 100))
    assert "not reached" in summary.to_text()


def test_compare_rejects_mismatched_grids():
    with pytest.raises(ExperimentError):
        compare([_curve("a", [[1.0, 2.0, 3.0]]), _curve("b", [[1.0, 2.0]], episodes=(100, 200))])


def test_sign_test_without_differences():
    result = sign_test([1.0, 2.0], [1.0, 2.0])
    assert result == {"wins_a": 0, "wins_b": 0, "ties": 2, "p_two_sided": 1.0, "p_a_greater": 1.0}


def test_episodes_to_threshold():
    assert episodes_to_threshold([1, 5, 9], [10, 20, 30], 5) == 20
    assert episodes_to_threshold([1, 2, 3], [10, 20, 30], 5) is None


def test_curve_csv_round_trip(tmp_path):
    curve = _curve("agent", [[-1.5, 2.25, 3.0], [0.5, 1.0, 2.0]])
    path = str(tmp_path / "agent.csv")
    curve.to_csv(path)
    restored = LearningCurve.from_csv(path)
    assert restored.name == "agent"
    np.testing.assert_allclose(restored.replicates, curve.replicates)
    np.testing.assert_allclose(restored.frame["stderr"], curve.frame["stderr"], atol=1e-6)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


def _output_files(root):
    found = {}
    for directory, _, files in os.walk(root):
        for name in files:
            path = os.path.join(directory, name)
            found[os.path.relpath(path, root)] = open(path, "rb").read()
    return found


def test_pipeline_produces_every_artifact_and_skips_on_rerun(tmp_path):
    config = load_config(overrides=TINY_OVERRIDES)
    output_dir = str(tmp_path / "out")
    executed, skipped = Pipeline(config, output_dir).run()
    assert executed == ["collect", "build_datasets", "train_models", "run_experiments", "compare"]
    assert skipped == []

    files = _output_files(output_dir)
    assert sum(name.startswith("datasets") for name in files) == 3
    assert sum(name.startswith("models") and name.endswith(".ckpt") for name in files) == 3
    curves = [name for name in files if name.startswith("curves") and name.endswith(".csv")]
    assert len(curves) == 10
    provenance = json.loads(files[os.path.join("curves", "empty_deterministic", "language80.provenance.json")])
    assert provenance["config"]["model"] == "models/model_80.ckpt"

    executed, skipped = Pipeline(config, output_dir).run()
    assert executed == []
    assert len(skipped) == 5


def test_pipeline_reruns_stage_with_changed_output(tmp_path):
    config = load_config(overrides=TINY_OVERRIDES + ["experiment.agents=[qlearn, observation]",
                                                     "experiment.dynamics=[deterministic]"])
    output_dir = str(tmp_path / "out")
    Pipeline(config, output_dir).run()
    summary = os.path.join(output_dir, "summaries", "empty_deterministic.txt")
    write_file_content(summary, "tampered\n")
    executed, _ = Pipeline(config, output_dir).run()
    assert executed == ["compare"]
    assert read_file_content(summary) != "tampered\n"


def test_pipeline_failure_names_stage(tmp_path):
    config = load_config(overrides=TINY_OVERRIDES + ["experiment.agents=[language50]"])
    with pytest.raises(PipelineError) as excinfo:
        Pipeline(config, str(tmp_path / "out")).run()
    assert excinfo.value.stage == "run_experiments"


@pytest.mark.slow
def test_pipeline_is_reproducible_across_directories(tmp_path):
    config = load_config(overrides=TINY_OVERRIDES)
    Pipeline(config, str(tmp_path / "one")).run()
    Pipeline(config, str(tmp_path / "two")).run()
    assert _output_files(str(tmp_path / "one")) == _output_files(str(tmp_path / "two"))


# ---------------------------------------------------------------------------
# Agent ordering at desk scale
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def map50_curves(tmp_path_factory):
    agents = ["qlearn", "observation", "language80", "language100"]
    config = load_config(overrides=["experiment.maps=[map50.map]",
                                    "experiment.dynamics=[deterministic]",
                                    f"experiment.agents=[{', '.join(agents)}]",
                                    "trainer.accuracies=[0.8, 1.0]"])
    output_dir = str(tmp_path_factory.mktemp("map50"))
    Pipeline(config, output_dir).run()
    return {agent: LearningCurve.from_csv(os.path.join(output_dir, "curves", "map50_deterministic", f"{agent}.csv"))
            for agent in agents}


@pytest.mark.slow
def test_language80_outlearns_qlearn_on_map50(map50_curves):
    row = compare([map50_curves["language80"], map50_curves["qlearn"]]).pairs.iloc[0]
    assert row["wins_a"] >= 8
    assert row["p_a_greater"] < 0.06


@pytest.mark.slow
def test_language100_reaches_threshold_no_later_than_observation(map50_curves):
    row = compare([map50_curves["language100"], map50_curves["observation"]]).pairs.iloc[0]
    assert row["a_reaches_no_later"] >= 8


@pytest.mark.slow
def test_observation_outlearns_qlearn_on_map25(tmp_path):
    config = load_config()
    pipeline = Pipeline(config, str(tmp_path / "out"))
    pipeline.collect()
    curves = [run_experiment(ExperimentConfig.from_config(config, "map25.map", "deterministic", agent,
                                                          {"demonstrations": pipeline.demonstrations_path()}))[0]
              for agent in ("observation", "qlearn")]
    row = compare(curves).pairs.iloc[0]
    assert len(curves[0].replicates) == 10
    assert row["wins_a"] + row["ties"] >= 7
