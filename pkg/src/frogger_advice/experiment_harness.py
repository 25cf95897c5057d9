"""
Experiment Harness

This module runs the agent comparisons: independent learning replicates per
(map, dynamics, agent), periodic greedy evaluation, learning-curve CSVs with
provenance, summary statistics and the end-to-end artifact pipeline.

Core Features:
- ``ExperimentConfig``: one (map, dynamics, agent) experiment, built from the YAML configuration
- ``run_experiment``: replicates (serial or process pool) -> ``LearningCurve`` + provenance
- ``compare``: area under curve, episodes-to-threshold and paired sign tests
- ``Pipeline``: collect -> datasets -> models -> experiments -> comparisons, with a
  content-hash manifest so current stages are skipped

Dependencies:
    pip install numpy pandas scipy
"""

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.stats import binomtest

from .advice_policy import AdviceIndex, LanguageCritique, StaleCacheError, load_cache, save_cache
from .critique_shaping import ObservationCritique, ShapedPolicy
from .frogger_env import FroggerEnv, load_map, parse_dynamics
from .helpers.config import get_setting
from .helpers.utils import (
    data_path,
    hash_file,
    hash_payload,
    log,
    print_stage,
    read_file_content,
    write_file_content,
)
from .rl_core import QTable, TemperatureSchedule, evaluate_policy, run_episode
from .seq2seq import TrainConfig, load_checkpoint, save_checkpoint, save_loss_trace, token_accuracy, train
from .trainer_sim import (
    build_dataset,
    collect_demonstrations,
    load_dataset,
    load_grammar,
    load_pairs,
    save_dataset,
    save_pairs,
)

AGENT_KINDS = ("qlearn", "observation", "language60", "language80", "language100")
NOT_REACHED = "not reached"


class ExperimentError(Exception):
    """Custom exception for invalid experiment configurations, artifacts or curves."""

    def __init__(self, message: str, artifact: Optional[str] = None):
        super().__init__(message)
        self.artifact = artifact


class PipelineError(Exception):
    """Raised when a pipeline stage fails; carries the stage name."""

    def __init__(self, message: str, stage: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def language_accuracy(agent: str) -> Optional[int]:
    """Return the dataset accuracy (percent) behind a ``languageNN`` agent, else None."""
    return int(agent[len("language"):]) if agent.startswith("language") else None


def resolve_map_path(map_file: str) -> str:
    """Paths that do not exist as given are looked up in ``data/maps``."""
    return map_file if os.path.exists(map_file) else data_path("maps", map_file)


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    map_file: str
    dynamics: str
    agent: str
    episodes: int
    eval_period: int = 100
    eval_episodes: int = 20
    replicates: int = 10
    seed: int = 2018
    alpha: float = 0.1
    gamma: float = 0.95
    q_tau: float = 1.0
    initial_q: float = 0.0
    step_cap: int = 200
    p_fail: float = 0.2
    schedule: Dict[str, Any] = field(default_factory=lambda: {
        "shape": "linear", "tau0": 0.2, "tau_max": 5.0, "horizon_fraction": 0.6})
    length_normalize: bool = False
    demonstrations: Optional[str] = None
    dataset: Optional[str] = None
    model: Optional[str] = None

    def __post_init__(self):
        if self.agent not in AGENT_KINDS:
            raise ExperimentError(f"Unknown agent '{self.agent}', expected one of {AGENT_KINDS}")
        for name in ("episodes", "eval_period", "eval_episodes", "replicates"):
            if getattr(self, name) < 1:
                raise ExperimentError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.episodes % self.eval_period:
            raise ExperimentError(f"eval_period {self.eval_period} must divide the episode budget {self.episodes}")

    @classmethod
    def from_config(cls, config: Dict[str, Any], map_file: str, dynamics: str, agent: str,
                    artifacts: Optional[Dict[str, str]] = None) -> "ExperimentConfig":
        """
        Build one experiment from the merged workbench configuration.

        Args:
            config: Merged configuration (see ``helpers.config``)
            map_file: Map file name or path
            dynamics: ``deterministic`` / ``stochastic``
            agent: One of ``AGENT_KINDS``
            artifacts: Optional ``demonstrations`` / ``dataset`` / ``model`` paths
        """
        exp = get_setting(config, "experiment")
        rl = get_setting(config, "rl")
        budgets = exp["episodes"]
        base = dynamics.split(":", 1)[0]
        if base not in budgets:
            raise ExperimentError(f"No episode budget configured for dynamics '{dynamics}'")
        return cls(map_file=map_file, dynamics=dynamics, agent=agent, episodes=int(budgets[base]),
                   eval_period=int(exp["eval_period"]), eval_episodes=int(exp["eval_episodes"]),
                   replicates=int(exp["replicates"]), seed=int(exp["seed"]),
                   alpha=float(rl["alpha"]), gamma=float(rl["gamma"]), q_tau=float(rl["q_tau"]),
                   initial_q=float(rl["initial_q"]), step_cap=int(get_setting(config, "env.step_cap")),
                   p_fail=float(get_setting(config, "env.p_fail")),
                   schedule=dict(get_setting(config, "shaping.schedule")),
                   length_normalize=bool(get_setting(config, "advice.length_normalize")),
                   **(artifacts or {}))

    @property
    def name(self) -> str:
        return self.agent

    def temperature_schedule(self) -> TemperatureSchedule:
        return TemperatureSchedule.from_config(self.schedule, self.episodes)

    def replicate_seeds(self) -> List[int]:
        """Per-replicate seeds spawned from the master seed (shared by all agents, so replicates pair up)."""
        return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(self.seed).spawn(self.replicates)]

    def eval_grid(self) -> List[int]:
        return list(range(self.eval_period, self.episodes + 1, self.eval_period))

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# ---------------------------------------------------------------------------
# Learning curves
# ---------------------------------------------------------------------------


class LearningCurve:
    """
    Evaluation rewards on a fixed episode grid.

    Columns: ``episode``, ``rep_0`` .. ``rep_{n-1}``, ``mean``, ``stderr``.
    """

    def __init__(self, name: str, frame: pd.DataFrame):
        episodes = frame["episode"].to_numpy()
        if len(episodes) > 1 and not np.all(np.diff(episodes) > 0):
            raise ExperimentError(f"Curve '{name}' episodes must be strictly increasing")
        self.name = name
        self.frame = frame

    @classmethod
    def from_evaluations(cls, name: str, episodes: Sequence[int], evaluations: Sequence[Sequence[float]]) -> "LearningCurve":
        """Build a curve from one evaluation list per replicate (in replicate order)."""
        matrix = np.asarray(evaluations, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != len(episodes):
            raise ExperimentError(f"Evaluations of '{name}' do not match the episode grid")
        data: Dict[str, Any] = {"episode": np.asarray(episodes, dtype=np.int64)}
        for i, row in enumerate(matrix):
            data[f"rep_{i}"] = row
        data["mean"] = matrix.mean(axis=0)
        n = matrix.shape[0]
        data["stderr"] = matrix.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros(len(episodes))
        return cls(name, pd.DataFrame(data))

    @classmethod
    def from_csv(cls, path: str, name: Optional[str] = None) -> "LearningCurve":
        return cls(name or os.path.splitext(os.path.basename(path))[0], pd.read_csv(path))

    def to_csv(self, path: str) -> None:
        write_file_content(path, self.frame.to_csv(index=False, float_format="%.6f", lineterminator="\n"))

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def episodes(self) -> np.ndarray:
        return self.frame["episode"].to_numpy()

    @property
    def mean(self) -> np.ndarray:
        return self.frame["mean"].to_numpy()

    @property
    def replicates(self) -> np.ndarray:
        """Matrix (replicates, grid points)."""
        cols = [c for c in self.frame.columns if c.startswith("rep_")]
        return self.frame[cols].to_numpy().T


# ---------------------------------------------------------------------------
# Running experiments
# ---------------------------------------------------------------------------


def build_critique(config: ExperimentConfig):
    """Return the critique side for the configured agent (None for the Q-only agent)."""
    if config.agent == "qlearn":
        return None
    schedule = config.temperature_schedule()
    if config.agent == "observation":
        if not config.demonstrations or not os.path.exists(config.demonstrations):
            raise ExperimentError("The observation agent needs a demonstrations file",
                                  artifact=config.demonstrations)
        return ObservationCritique.from_pairs(load_pairs(read_file_content(config.demonstrations)), schedule)
    for artifact in (config.dataset, config.model):
        if not artifact or not os.path.exists(artifact):
            raise ExperimentError(f"The {config.agent} agent needs a dataset and a model", artifact=artifact)
    dataset = load_dataset(read_file_content(config.dataset))
    index = AdviceIndex(load_checkpoint(config.model), dataset.utterances, config.length_normalize)
    return LanguageCritique(index, schedule)


def run_replicate(config: ExperimentConfig, critique, seed: int) -> Tuple[List[float], Optional[str]]:
    """
    Train one agent for the full budget, evaluating greedily every ``eval_period`` episodes.

    Returns:
        Tuple of (evaluation means on the episode grid, advice cache text or None)
    """
    frogger_map = load_map(read_file_content(resolve_map_path(config.map_file)))
    env = FroggerEnv(frogger_map, parse_dynamics(config.dynamics, config.p_fail), step_cap=config.step_cap)
    train_seq, eval_seq = np.random.SeedSequence(seed).spawn(2)
    train_rng, eval_rng = np.random.default_rng(train_seq), np.random.default_rng(eval_seq)

    table = QTable(alpha=config.alpha, gamma=config.gamma, initial=config.initial_q)
    policy = ShapedPolicy(table, config.q_tau, critique)
    evaluations = []
    for episode in range(config.episodes):
        run_episode(env, table, policy, rng=train_rng, episode=episode)
        if (episode + 1) % config.eval_period == 0:
            evaluations.append(evaluate_policy(env, table, config.eval_episodes, rng=eval_rng))
    cache = save_cache(critique.index) if isinstance(critique, LanguageCritique) else None
    return evaluations, cache


def _replicate_task(args):
    config, critique, replicate_id, seed = args
    evaluations, cache = run_replicate(config, critique, seed)
    return replicate_id, evaluations, cache


def run_experiment(config: ExperimentConfig, workers: int = 1, curve_name: Optional[str] = None,
                   cache_path: Optional[str] = None) -> Tuple[LearningCurve, Dict[str, Any]]:
    """
    Run every replicate of one experiment.

    Args:
        config: Experiment configuration
        workers: Process count; results are sorted by replicate id before aggregation
        curve_name: Name of the resulting curve (defaults to the agent kind)
        cache_path: Advice cache file read before and written after language runs

    Returns:
        Tuple of (LearningCurve, provenance record)

    Raises:
        ExperimentError: On missing artifacts or invalid configuration
    """
    critique = build_critique(config)
    if isinstance(critique, LanguageCritique) and cache_path and os.path.exists(cache_path):
        try:
            load_cache(critique.index, read_file_content(cache_path))
        except StaleCacheError as e:
            log(f"{cache_path}: {e}; recomputing advice", "WARNING")
            critique.index.cache.clear()

    seeds = config.replicate_seeds()
    tasks = [(config, critique, i, s) for i, s in enumerate(seeds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate_task, tasks))
    else:
        results = [_replicate_task(t) for t in tasks]
    results.sort(key=lambda r: r[0])

    if isinstance(critique, LanguageCritique):
        for _, _, cache in results:
            load_cache(critique.index, cache)
        if cache_path:
            write_file_content(cache_path, save_cache(critique.index))

    curve = LearningCurve.from_evaluations(curve_name or config.name, config.eval_grid(), [r[1] for r in results])
    provenance = {
        "curve": curve.name,
        "config": config.to_dict(),
        "config_hash": hash_payload(config.to_dict()),
        "map_hash": hash_file(resolve_map_path(config.map_file)),
        "demonstrations_hash": hash_file(config.demonstrations) if config.agent == "observation" else None,
        "dataset_hash": hash_file(config.dataset) if language_accuracy(config.agent) is not None else None,
        "model_hash": hash_file(config.model) if language_accuracy(config.agent) is not None else None,
        "replicate_seeds": seeds,
        "eval_episodes": config.eval_episodes,
        "schedule": config.temperature_schedule().label,
        "length_normalize": config.length_normalize,
    }
    return curve, provenance


# ---------------------------------------------------------------------------
# Comparison
# ---------------------------------------------------------------------------


def episodes_to_threshold(values: Sequence[float], episodes: Sequence[int], threshold: float) -> Optional[int]:
    """First grid episode whose value reaches ``threshold``; None when never reached."""
    for episode, value in zip(episodes, values):
        if value >= threshold:
            return int(episode)
    return None


def sign_test(a: Sequence[float], b: Sequence[float]) -> Dict[str, Any]:
    """
    Paired sign test of ``a`` against ``b``; ties are dropped.

    Returns:
        ``wins_a``, ``wins_b``, ``ties``, two-sided p and one-sided p for "a greater"
        (both 1.0 when every pair ties)
    """
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    wins_a, wins_b = int((diff > 0).sum()), int((diff < 0).sum())
    n = wins_a + wins_b
    if n == 0:
        p_two, p_greater = 1.0, 1.0
    else:
        p_two = float(binomtest(wins_a, n, 0.5, alternative="two-sided").pvalue)
        p_greater = float(binomtest(wins_a, n, 0.5, alternative="greater").pvalue)
    return {"wins_a": wins_a, "wins_b": wins_b, "ties": int(len(diff) - n),
            "p_two_sided": p_two, "p_a_greater": p_greater}


@dataclass
class ComparisonSummary:
    threshold: float
    agents: pd.DataFrame
    pairs: pd.DataFrame

    def to_text(self) -> str:
        return (f"threshold (best final mean less 10% of its magnitude): {self.threshold:.4f}\n\n"
                f"{self.agents.to_string(index=False)}\n\n{self.pairs.to_string(index=False)}\n")


def compare(curves: Sequence[LearningCurve]) -> ComparisonSummary:
    """
    Summarise curves that share an episode grid.

    Per curve: mean AUC (trapezoid over the grid), AUC of the mean curve, final mean
    and episodes-to-threshold, where the threshold is the best final mean minus 10%
    of its magnitude. Per pair: sign tests on per-replicate AUC and the number of
    replicates where the first agent reaches the threshold no later than the second.

    Raises:
        ExperimentError: If the curves do not share an episode grid or replicate count
    """
    if not curves:
        raise ExperimentError("Nothing to compare")
    grid = curves[0].episodes
    for curve in curves[1:]:
        if not np.array_equal(curve.episodes, grid):
            raise ExperimentError(f"Curve '{curve.name}' does not share the episode grid of '{curves[0].name}'")

    best_final = max(float(c.mean[-1]) for c in curves)
    threshold = best_final - 0.1 * abs(best_final)

    aucs = {c.name: np.array([trapezoid(rep, grid) for rep in c.replicates]) for c in curves}
    reach = {c.name: [episodes_to_threshold(rep, grid, threshold) for rep in c.replicates] for c in curves}

    agent_rows = []
    for c in curves:
        ttt = episodes_to_threshold(c.mean, grid, threshold)
        agent_rows.append({
            "agent": c.name,
            "auc_mean": float(aucs[c.name].mean()),
            "auc_of_mean": float(trapezoid(c.mean, grid)),
            "final_mean": float(c.mean[-1]),
            "episodes_to_threshold": NOT_REACHED if ttt is None else ttt,
        })

    pair_rows = []
    for i, a in enumerate(curves):
        for b in curves[i + 1:]:
            if len(aucs[a.name]) != len(aucs[b.name]):
                raise ExperimentError(f"Curves '{a.name}' and '{b.name}' have different replicate counts")
            test = sign_test(aucs[a.name], aucs[b.name])
            no_later = sum(
                (ra if ra is not None else np.inf) <= (rb if rb is not None else np.inf)
                for ra, rb in zip(reach[a.name], reach[b.name]))
            pair_rows.append({"agent_a": a.name, "agent_b": b.name, **test, "a_reaches_no_later": int(no_later)})

    pairs = pd.DataFrame(pair_rows, columns=["agent_a", "agent_b", "wins_a", "wins_b", "ties",
                                             "p_two_sided", "p_a_greater", "a_reaches_no_later"])
    return ComparisonSummary(threshold, pd.DataFrame(agent_rows), pairs)


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

ALL_PIPELINE_STAGES = ["collect", "build_datasets", "train_models", "run_experiments", "compare"]


class Pipeline:
    """
    End-to-end artifact pipeline rooted at one output directory.

    ``manifest.json`` records, per stage, the hash of its inputs (configuration slice
    plus upstream artifact hashes) and of every output; a stage is skipped when both
    still match.
    """

    def __init__(self, config: Dict[str, Any], output_dir: str, workers: Optional[int] = None):
        self.config = config
        self.output_dir = output_dir
        self.workers = workers if workers is not None else int(get_setting(config, "experiment.workers"))
        self.manifest_path = os.path.join(output_dir, "manifest.json")
        self.manifest: Dict[str, Any] = {"stages": {}}
        if os.path.exists(self.manifest_path):
            self.manifest = json.loads(read_file_content(self.manifest_path))
        self.executed: List[str] = []
        self.skipped: List[str] = []

    # -- bookkeeping -------------------------------------------------------

    def path(self, *parts: str) -> str:
        return os.path.join(self.output_dir, *parts)

    def _output_hashes(self, outputs: Sequence[str]) -> Dict[str, str]:
        return {os.path.relpath(p, self.output_dir).replace(os.sep, "/"): hash_file(p) for p in sorted(outputs)}

    def _is_current(self, stage: str, input_hash: str) -> bool:
        entry = self.manifest["stages"].get(stage)
        if not entry or entry.get("input_hash") != input_hash:
            return False
        for rel, digest in entry.get("outputs", {}).items():
            full = self.path(rel)
            if not os.path.exists(full) or hash_file(full) != digest:
                return False
        return True

    def _run_stage(self, stage: str, inputs: Any, action: Callable[[], List[str]]) -> None:
        input_hash = hash_payload(inputs)
        if self._is_current(stage, input_hash):
            log(f"⏩ {stage}: artifacts current, skipping")
            self.skipped.append(stage)
            return
        try:
            outputs = action()
        except Exception as exc:
            raise PipelineError(str(exc), stage) from exc
        self.manifest["stages"][stage] = {"input_hash": input_hash, "outputs": self._output_hashes(outputs)}
        self._write_manifest()
        log(f"✅ Successfully completed: {stage}")
        self.executed.append(stage)

    def _write_manifest(self) -> None:
        write_file_content(self.manifest_path, json.dumps(self.manifest, sort_keys=True, indent=2) + "\n")

    def _hashes(self, paths: Sequence[str]) -> Dict[str, str]:
        return {os.path.basename(p): hash_file(p) for p in paths}

    def _portable(self, config: Dict[str, Any]) -> Dict[str, Any]:
        """Experiment config with artifact paths relative to the output directory."""
        config = dict(config)
        for key in ("demonstrations", "dataset", "model"):
            if config.get(key):
                config[key] = os.path.relpath(config[key], self.output_dir).replace(os.sep, "/")
        return config

    # -- stages ------------------------------------------------------------

    @property
    def accuracies(self) -> List[int]:
        return [int(round(100 * a)) for a in get_setting(self.config, "trainer.accuracies")]

    def demonstrations_path(self) -> str:
        return self.path("demonstrations.tsv")

    def dataset_path(self, pct: int) -> str:
        return self.path("datasets", f"dataset_{pct}.tsv")

    def model_path(self, pct: int) -> str:
        return self.path("models", f"model_{pct}.ckpt")

    def collect(self) -> None:
        trainer = get_setting(self.config, "trainer")
        map_path = resolve_map_path(trainer["training_map"])
        inputs = {"trainer": trainer, "rl": get_setting(self.config, "rl"), "map": hash_file(map_path)}

        def action() -> List[str]:
            rl = self.config["rl"]
            pairs = collect_demonstrations(load_map(read_file_content(map_path)), int(trainer["n_agents"]),
                                           int(trainer["seed"]), episodes=int(trainer["episodes_per_agent"]),
                                           horizon=int(trainer["horizon"]), alpha=float(rl["alpha"]),
                                           gamma=float(rl["gamma"]), q_tau=float(rl["q_tau"]))
            if not pairs:
                raise ExperimentError("No demonstration agent reached its target row")
            log(f"   Harvested {len(pairs)} demonstration pairs")
            write_file_content(self.demonstrations_path(), save_pairs(pairs))
            return [self.demonstrations_path()]

        self._run_stage("collect", inputs, action)

    def build_datasets(self) -> None:
        trainer = get_setting(self.config, "trainer")
        grammar_path = trainer["grammar"] if os.path.exists(trainer["grammar"]) else data_path("grammar", trainer["grammar"])
        inputs = {"accuracies": self.accuracies, "seed": trainer["seed"], "grammar": hash_file(grammar_path),
                  "demonstrations": hash_file(self.demonstrations_path())}

        def action() -> List[str]:
            grammar = load_grammar(read_file_content(grammar_path))
            pairs = load_pairs(read_file_content(self.demonstrations_path()))
            outputs = []
            for pct in self.accuracies:
                dataset = build_dataset(pairs, pct / 100.0, int(trainer["seed"]), grammar)
                stats = dataset.stats
                log(f"   accuracy {pct}%: {stats.size} examples (raw {stats.raw_size}), "
                    f"top sentence share {stats.top_sentence_share:.4f}, "
                    f"mean repetition share {stats.mean_repetition_share:.5f}")
                write_file_content(self.dataset_path(pct), save_dataset(dataset))
                outputs.append(self.dataset_path(pct))
            return outputs

        self._run_stage("build_datasets", inputs, action)

    def train_models(self) -> None:
        settings = get_setting(self.config, "seq2seq")
        datasets = [self.dataset_path(pct) for pct in self.accuracies]
        inputs = {"seq2seq": settings, "datasets": self._hashes(datasets)}

        def action() -> List[str]:
            train_config = TrainConfig.from_config(settings)
            outputs = []
            for pct in self.accuracies:
                dataset = load_dataset(read_file_content(self.dataset_path(pct)))
                log(f"   Training model on the {pct}% dataset ({len(dataset)} examples)")
                model = train(dataset, train_config, verbose=False)
                model.metadata["dataset_hash"] = hash_file(self.dataset_path(pct))
                model.metadata["token_accuracy"] = token_accuracy(model, dataset.examples)
                log(f"   final mean NLL {model.loss_trace[-1]:.4f}, "
                    f"token accuracy {model.metadata['token_accuracy']:.4f}")
                os.makedirs(os.path.dirname(self.model_path(pct)), exist_ok=True)
                save_checkpoint(model, self.model_path(pct))
                loss_path = self.path("models", f"loss_{pct}.csv")
                save_loss_trace(model, loss_path)
                outputs += [self.model_path(pct), loss_path]
            return outputs

        self._run_stage("train_models", inputs, action)

    def experiment_plan(self) -> List[Tuple[str, ExperimentConfig]]:
        """Every (curve file stem, experiment) the configuration asks for, schedule sweeps included."""
        exp = get_setting(self.config, "experiment")
        plan = []
        for map_file in exp["maps"]:
            for dynamics in exp["dynamics"]:
                for agent in exp["agents"]:
                    pct = language_accuracy(agent)
                    artifacts: Dict[str, str] = {}
                    if agent == "observation":
                        artifacts["demonstrations"] = self.demonstrations_path()
                    elif pct is not None:
                        if pct not in self.accuracies:
                            raise ExperimentError(f"Agent '{agent}' needs trainer.accuracies to include {pct / 100}")
                        artifacts.update(dataset=self.dataset_path(pct), model=self.model_path(pct))
                    config = ExperimentConfig.from_config(self.config, map_file, dynamics, agent, artifacts)
                    stem = f"{os.path.splitext(os.path.basename(map_file))[0]}_{dynamics.replace(':', '-')}"
                    plan.append((f"{stem}/{agent}", config))
                    if agent != "qlearn":
                        for schedule in exp.get("schedules") or []:
                            swept = replace(config, schedule=dict(schedule))
                            plan.append((f"{stem}/{agent}@{swept.temperature_schedule().label}", swept))
        return plan

    def run_experiments(self) -> None:
        plan = self.experiment_plan()
        upstream = [self.demonstrations_path()] + [self.dataset_path(p) for p in self.accuracies] + \
                   [self.model_path(p) for p in self.accuracies]
        inputs = {"plan": [(name, self._portable(cfg.to_dict())) for name, cfg in plan],
                  "artifacts": self._hashes([p for p in upstream if os.path.exists(p)])}

        def action() -> List[str]:
            outputs = []
            for name, config in plan:
                log(f"   Running {name} ({config.replicates} replicates x {config.episodes} episodes)")
                cache_path = None
                pct = language_accuracy(config.agent)
                if pct is not None:
                    cache_path = self.path("advice_cache", f"{os.path.dirname(name)}_{pct}.tsv")
                curve, provenance = run_experiment(config, workers=self.workers,
                                                   curve_name=os.path.basename(name), cache_path=cache_path)
                provenance["config"] = self._portable(provenance["config"])
                provenance["config_hash"] = hash_payload(provenance["config"])
                csv_path = self.path("curves", f"{name}.csv")
                curve.to_csv(csv_path)
                prov_path = self.path("curves", f"{name}.provenance.json")
                write_file_content(prov_path, json.dumps(provenance, sort_keys=True, indent=2) + "\n")
                outputs += [csv_path, prov_path]
                if cache_path:
                    outputs.append(cache_path)
            return sorted(set(outputs))

        self._run_stage("run_experiments", inputs, action)

    def compare(self) -> None:
        plan = self.experiment_plan()
        curve_paths = [self.path("curves", f"{name}.csv") for name, _ in plan]
        inputs = {"curves": {os.path.relpath(p, self.output_dir): hash_file(p) for p in curve_paths}}

        def action() -> List[str]:
            groups: Dict[str, List[LearningCurve]] = {}
            for name, _ in plan:
                group, curve_name = name.split("/", 1)
                groups.setdefault(group, []).append(
                    LearningCurve.from_csv(self.path("curves", f"{name}.csv"), curve_name))
            outputs = []
            for group, curves in sorted(groups.items()):
                summary = compare(curves)
                text_path = self.path("summaries", f"{group}.txt")
                write_file_content(text_path, summary.to_text())
                agents_path = self.path("summaries", f"{group}_agents.csv")
                pairs_path = self.path("summaries", f"{group}_pairs.csv")
                write_file_content(agents_path, summary.agents.to_csv(index=False, float_format="%.6f",
                                                                      lineterminator="\n"))
                write_file_content(pairs_path, summary.pairs.to_csv(index=False, float_format="%.6g",
                                                                     lineterminator="\n"))
                outputs += [text_path, agents_path, pairs_path]
            return outputs

        self._run_stage("compare", inputs, action)

    def run(self) -> Tuple[List[str], List[str]]:
        """
        Execute every stage in order.

        Returns:
            Tuple of (executed stage names, skipped stage names)

        Raises:
            PipelineError: Naming the failed stage
        """
        stages = [
            ("collect", "Collecting demonstrations", self.collect),
            ("build_datasets", "Building annotated datasets", self.build_datasets),
            ("train_models", "Training sequence-to-sequence models", self.train_models),
            ("run_experiments", "Running agent experiments", self.run_experiments),
            ("compare", "Comparing learning curves", self.compare),
        ]
        for number, (stage, title, method) in enumerate(stages, 1):
            print_stage(number, len(stages), stage, title, output_dir=self.output_dir)
            try:
                method()
            except PipelineError:
                raise
            except Exception as exc:
                raise PipelineError(str(exc), stage) from exc
        return self.executed, self.skipped
