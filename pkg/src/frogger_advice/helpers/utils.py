#!/usr/bin/env python3
"""
Common Utility Functions

This module provides common utility functions used across the workbench modules
and the pipeline/CLI entry points: file access, content hashing, status output
and pipeline stage headers and summaries.
"""

import hashlib
import json
import os
from typing import Any, List, Optional, Sequence, Tuple


_QUIET = False


def set_quiet(quiet: bool) -> None:
    """
    Silence (or restore) INFO-level status output.

    Warnings and errors are always printed.

    Args:
        quiet: True to suppress INFO messages
    """
    global _QUIET
    _QUIET = quiet


def log(message: str, level: str = "INFO") -> None:
    """
    Print a status message with the level icon.

    Args:
        message: Text to print
        level: "INFO", "WARNING" or "ERROR"
    """
    if level == "ERROR":
        print(f"❌ {message}")
    elif level == "WARNING":
        print(f"⚠️  {message}")
    elif not _QUIET:
        print(message)


def read_file_content(file_path: str) -> str:
    """
    Read content from a file.

    Args:
        file_path: Path to the file to read

    Returns:
        File content as string

    Raises:
        FileNotFoundError: If file doesn't exist
        OSError: If file can't be read
    """
    try:
        with open(file_path, 'r', encoding='utf-8') as f:
            return f.read()
    except FileNotFoundError:
        raise FileNotFoundError(f"File not found: {file_path}")
    except OSError as e:
        raise OSError(f"Error reading file {file_path}: {e}")


def write_file_content(file_path: str, content: str) -> None:
    """
    Write text to a file, creating parent directories as needed.

    Newlines are always written as ``\\n`` so artifacts hash identically on every
    platform.

    Args:
        file_path: Destination path
        content: Text to write
    """
    parent = os.path.dirname(os.path.abspath(file_path))
    os.makedirs(parent, exist_ok=True)
    with open(file_path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(content)


def hash_file(file_path: str) -> str:
    """
    Return the SHA-256 hex digest of a file's bytes.

    Args:
        file_path: Path to the file

    Returns:
        Hex digest string
    """
    digest = hashlib.sha256()
    with open(file_path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            digest.update(chunk)
    return digest.hexdigest()


def hash_payload(payload: Any) -> str:
    """
    Return the SHA-256 hex digest of a JSON-serialisable value.

    Keys are sorted so equal payloads always hash equally.

    Args:
        payload: Any JSON-serialisable value

    Returns:
        Hex digest string
    """
    text = json.dumps(payload, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def repo_root() -> str:
    """Return the repository root (two levels above ``src/frogger_advice``)."""
    package_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    return os.path.dirname(os.path.dirname(package_dir))


def data_path(*parts: str) -> str:
    """Return an absolute path below the repository ``data/`` directory."""
    return os.path.join(repo_root(), 'data', *parts)


# ---------------------------------------------------------------------------
# Pipeline stage reporting
# ---------------------------------------------------------------------------

STAGE_MARKS = {"ran": "✅", "skipped": "⏩", "failed": "❌", "not reached": "⏭️ "}


def print_stage(number: int, total: int, stage: str, title: str, **details: Any) -> None:
    """
    Print the header of one pipeline stage, e.g. ``[2/5] build_datasets: Building annotated datasets``.

    Args:
        number: 1-based position of the stage
        total: Number of stages in the run
        stage: Stage name as recorded in the manifest
        title: Human-readable description
        **details: Extra ``key: value`` lines (artifact directory, map count, ...)
    """
    if _QUIET:
        return
    print(f"\n{'-' * 60}")
    print(f"🐸 [{number}/{total}] {stage}: {title}")
    for key, value in details.items():
        print(f"   {key.replace('_', ' ')}: {value}")


def stage_statuses(stages: Sequence[str], executed: Sequence[str], skipped: Sequence[str],
                   failed: Optional[str] = None) -> List[Tuple[str, str]]:
    """
    Classify every stage of a run, in run order.

    Returns:
        List of (stage, status) with status "ran", "skipped", "failed" or "not reached"
    """
    statuses = []
    for stage in stages:
        if stage == failed:
            status = "failed"
        elif stage in executed:
            status = "ran"
        elif stage in skipped:
            status = "skipped"
        else:
            status = "not reached"
        statuses.append((stage, status))
    return statuses


def print_stage_summary(run_name: str, stages: Sequence[str], executed: Sequence[str], skipped: Sequence[str],
                        failure: Optional[Tuple[str, str]] = None) -> None:
    """
    Print one status line per pipeline stage followed by the totals.

    Args:
        run_name: Name of the run being summarised
        stages: Every stage name, in run order
        executed: Stages that ran
        skipped: Stages whose inputs and artifacts were current
        failure: (stage, error message) of the stage that raised, if any
    """
    failed_stage, error = failure if failure else (None, "")
    statuses = stage_statuses(stages, executed, skipped, failed_stage)

    print(f"\n{'=' * 60}")
    print(f"📊 {run_name} Summary")
    print(f"{'=' * 60}")
    for stage, status in statuses:
        line = f"   {STAGE_MARKS[status]} {stage:<16} {status}"
        if status == "skipped":
            line += " (artifacts current)"
        elif status == "failed":
            line += f": {error}"
        print(line)
    counts = {status: sum(s == status for _, s in statuses) for status in STAGE_MARKS}
    print(f"\n   {', '.join(f'{n} {status}' for status, n in counts.items() if n)}")
    print(f"{'=' * 60}")
