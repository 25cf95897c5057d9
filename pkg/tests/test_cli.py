import pandas as pd
import pytest

from frogger_advice.cli import build_parser, main
from frogger_advice.experiment_harness import LearningCurve
from frogger_advice.frogger_env import Action, LocalView, load_map
from frogger_advice.helpers.utils import read_file_content, write_file_content
from frogger_advice.trainer_sim import save_pairs

VIEW_TEXT = "ROAD ROAD ROAD GRASS GRASS GRASS WALL WALL WALL"


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_gen_map_writes_loadable_map(tmp_path):
    output = str(tmp_path / "generated.map")
    main(["--quiet", "gen-map", "--density", "0.25", "--seed", "3", "--output", output])
    frogger_map = load_map(read_file_content(output))
    assert (frogger_map.width, frogger_map.height) == (9, 8)


def test_advise_with_demonstrations(tmp_path, capsys):
    demos = str(tmp_path / "demos.tsv")
    view = LocalView.from_tokens(VIEW_TEXT.split())
    write_file_content(demos, save_pairs([(view, Action.UP)] * 4))
    main(["advise", "--view", VIEW_TEXT, "--demonstrations", demos, "--tau", "1.0"])
    out = capsys.readouterr().out
    assert "demonstration counts" in out
    assert f"view:     {VIEW_TEXT}" in out
    assert "UP=0.9317" in out


def test_bad_override_exits_with_code_two(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--set", "rl.unknown=1", "gen-map", "--output", "unused.map"])
    assert excinfo.value.code == 2
    assert "Configuration error" in capsys.readouterr().out


def test_run_writes_curve_and_provenance(tmp_path):
    output = str(tmp_path / "qlearn.csv")
    main(["--quiet", "--set", "experiment.episodes.deterministic=100", "--set", "experiment.eval_period=50",
          "--set", "experiment.replicates=2", "--set", "experiment.eval_episodes=1", "--set", "env.step_cap=30",
          "run", "--map", "empty.map", "--agent", "qlearn", "--output", output])
    frame = pd.read_csv(output)
    assert frame["episode"].tolist() == [50, 100]
    assert (tmp_path / "qlearn.provenance.json").exists()


def test_compare_prints_summary(tmp_path, capsys):
    paths = []
    for name, offset in (("fast", 50.0), ("slow", 0.0)):
        curve = LearningCurve.from_evaluations(name, [100, 200], [[offset, offset + 40.0], [offset, offset + 45.0]])
        path = str(tmp_path / f"{name}.csv")
        curve.to_csv(path)
        paths.append(path)
    summary = str(tmp_path / "summary.txt")
    main(["compare", *paths, "--output", summary])
    out = capsys.readouterr().out
    assert "threshold" in out
    assert read_file_content(summary) in out


def test_advise_without_model_is_a_configuration_error():
    with pytest.raises(SystemExit) as excinfo:
        main(["advise", "--view", VIEW_TEXT])
    assert excinfo.value.code == 2


def test_malformed_demonstrations_exit_with_code_one(tmp_path, capsys):
    demos = tmp_path / "demos.tsv"
    demos.write_text("ROAD ROAD\tUP\n")
    with pytest.raises(SystemExit) as excinfo:
        main(["advise", "--view", VIEW_TEXT, "--demonstrations", str(demos)])
    assert excinfo.value.code == 1
    assert "DatasetFormatError" in capsys.readouterr().out
