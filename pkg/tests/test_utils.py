import pytest

from frogger_advice.helpers.utils import (
    hash_payload,
    log,
    print_stage,
    print_stage_summary,
    set_quiet,
    stage_statuses,
)

STAGES = ["collect", "build_datasets", "train_models", "run_experiments", "compare"]


@pytest.fixture(autouse=True)
def loud():
    set_quiet(False)
    yield
    set_quiet(False)


def test_stage_header_names_stage_and_details(capsys):
    print_stage(2, 5, "build_datasets", "Building annotated datasets", output_dir="artifacts")
    out = capsys.readouterr().out
    assert "[2/5] build_datasets: Building annotated datasets" in out
    assert "output dir: artifacts" in out


def test_quiet_mode_hides_headers_but_not_warnings(capsys):
    set_quiet(True)
    print_stage(1, 5, "collect", "Collecting demonstrations")
    log("progress")
    log("cache ignored", "WARNING")
    out = capsys.readouterr().out
    assert "collect" not in out
    assert "progress" not in out
    assert "cache ignored" in out


def test_statuses_follow_run_order():
    statuses = stage_statuses(STAGES, executed=["train_models"], skipped=["collect", "build_datasets"],
                              failed="run_experiments")
    assert statuses == [("collect", "skipped"), ("build_datasets", "skipped"), ("train_models", "ran"),
                        ("run_experiments", "failed"), ("compare", "not reached")]


def test_summary_of_failed_run(capsys):
    print_stage_summary("Workbench", STAGES, executed=["collect", "build_datasets"], skipped=[],
                        failure=("train_models", "Loss became non-finite in epoch 3"))
    lines = capsys.readouterr().out.splitlines()
    assert any(line.strip().startswith("❌ train_models") and line.endswith("epoch 3") for line in lines)
    assert sum("not reached" in line for line in lines) == 3
    assert "2 ran, 1 failed, 2 not reached" in [line.strip() for line in lines]


def test_summary_of_rerun(capsys):
    print_stage_summary("Workbench", STAGES, executed=["compare"], skipped=STAGES[:4])
    out = capsys.readouterr().out
    assert out.count("(artifacts current)") == 4
    assert "1 ran, 4 skipped" in out
    assert "failed" not in out


def test_hash_payload_ignores_key_order():
    assert hash_payload({"a": 1, "b": [1, 2]}) == hash_payload({"b": [1, 2], "a": 1})
    assert hash_payload({"a": 1}) != hash_payload({"a": 2})
