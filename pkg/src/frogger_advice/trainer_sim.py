"""
Synthetic Trainers

This module stands in for human trainers: it collects one-row-forward
demonstrations from short-horizon Q-learners, describes each demonstrated action
through a rule grammar whose correctness is controlled by an accuracy parameter,
and builds deduplicated annotated datasets with repetition statistics.

Core Features:
- Grammar files: prioritised rules, predicate conditions, templates with synonym slots
- ``collect_demonstrations``: (local view, action) pairs from successful sub-task rollouts
- ``describe``: noisy-oracle utterance for a (view, action) pair
- ``build_dataset``: per-pair seeded annotation, exact-duplicate removal, statistics
- Text files for demonstration pairs and datasets

Grammar file format:
    rule <id> priority <n>          # smaller number = higher priority
    when <expr>                     # predicates / action families with and, or, not, ( )
    template "<words with {slot}>"  # one or more
    slot <name>: a | b | c          # one per slot used in the templates

Dependencies:
    pip install numpy
"""

import itertools
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .frogger_env import (
    CAR,
    DETERMINISTIC,
    GOAL,
    GRASS,
    LOG,
    REACHED_GOAL,
    ROAD,
    WALL,
    WATER,
    Action,
    FroggerEnv,
    FroggerMap,
    LocalView,
    local_view,
    safe_cells,
)
from .helpers.utils import log
from .rl_core import BoltzmannSource, GreedySource, QTable, run_episode

MIN_FORMS_PER_RULE = 20
MIN_UTTERANCE_TOKENS = 3
CATCH_ALL = "any"

# View cells, row-major: 0 1 2 / 3 4 5 / 6 7 8 (agent at 4, "ahead" is 1)
AHEAD, LEFT, CENTER, RIGHT, BEHIND = 1, 3, 4, 5, 7

Condition = Callable[[LocalView, Action], bool]


class GrammarError(Exception):
    """Custom exception for malformed or incomplete grammar files."""

    def __init__(self, message: str, line_number: Optional[int] = None, rule_id: Optional[str] = None):
        prefix = f"line {line_number}: " if line_number is not None else ""
        super().__init__(prefix + message)
        self.line_number = line_number
        self.rule_id = rule_id


class DatasetFormatError(Exception):
    """Raised for unreadable demonstration or dataset files."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        super().__init__(f"line {line_number}: {message}" if line_number is not None else message)
        self.line_number = line_number


# ---------------------------------------------------------------------------
# Predicates
# ---------------------------------------------------------------------------

PREDICATES: Dict[str, Callable[[LocalView], bool]] = {
    "clear_ahead": lambda v: v.cells[AHEAD] in (GRASS, ROAD, LOG, GOAL),
    "car_ahead": lambda v: v.cells[AHEAD] == CAR,
    "car_left": lambda v: CAR in (v.cells[0], v.cells[LEFT]),
    "car_right": lambda v: CAR in (v.cells[2], v.cells[RIGHT]),
    "car_behind": lambda v: v.cells[BEHIND] == CAR,
    "water_ahead": lambda v: v.cells[AHEAD] == WATER,
    "log_ahead": lambda v: v.cells[AHEAD] == LOG,
    "on_log": lambda v: v.cells[CENTER] == LOG,
    "at_left_wall": lambda v: v.cells[LEFT] == WALL,
    "at_right_wall": lambda v: v.cells[RIGHT] == WALL,
    "goal_visible": lambda v: GOAL in v.cells[:3],
}

ACTION_FAMILIES: Dict[str, Tuple[Action, ...]] = {
    "advance": (Action.UP,),
    "retreat": (Action.DOWN,),
    "dodge_lateral": (Action.LEFT, Action.RIGHT),
    "move_left": (Action.LEFT,),
    "move_right": (Action.RIGHT,),
    "wait": (Action.STAY,),
}


def _name_condition(name: str, line_number: int) -> Condition:
    if name == CATCH_ALL:
        return lambda view, action: True
    if name in PREDICATES:
        predicate = PREDICATES[name]
        return lambda view, action: predicate(view)
    if name in ACTION_FAMILIES:
        family = ACTION_FAMILIES[name]
        return lambda view, action: Action(action) in family
    raise GrammarError(f"Unknown predicate or action family '{name}'", line_number)


def parse_condition(expr: str, line_number: int = 0) -> Condition:
    """
    Parse a ``when`` expression into a callable over (view, action).

    Grammar: ``or_expr := and_expr ('or' and_expr)*``, ``and_expr := unary ('and' unary)*``,
    ``unary := 'not' unary | '(' or_expr ')' | name``.
    """
    tokens = re.findall(r"\(|\)|[A-Za-z_]+", expr)
    if not tokens or "".join(tokens) != re.sub(r"\s+", "", expr):
        raise GrammarError(f"Malformed condition '{expr}'", line_number)
    pos = 0

    def peek() -> Optional[str]:
        return tokens[pos] if pos < len(tokens) else None

    def take() -> str:
        nonlocal pos
        if pos >= len(tokens):
            raise GrammarError(f"Unexpected end of condition '{expr}'", line_number)
        pos += 1
        return tokens[pos - 1]

    def unary() -> Condition:
        tok = take()
        if tok == "not":
            inner = unary()
            return lambda v, a: not inner(v, a)
        if tok == "(":
            inner = or_expr()
            if take() != ")":
                raise GrammarError(f"Missing ')' in '{expr}'", line_number)
            return inner
        if tok in ("and", "or", ")"):
            raise GrammarError(f"Unexpected '{tok}' in '{expr}'", line_number)
        return _name_condition(tok, line_number)

    def and_expr() -> Condition:
        parts = [unary()]
        while peek() == "and":
            take()
            parts.append(unary())
        return parts[0] if len(parts) == 1 else (lambda v, a: all(p(v, a) for p in parts))

    def or_expr() -> Condition:
        parts = [and_expr()]
        while peek() == "or":
            take()
            parts.append(and_expr())
        return parts[0] if len(parts) == 1 else (lambda v, a: any(p(v, a) for p in parts))

    condition = or_expr()
    if pos != len(tokens):
        raise GrammarError(f"Trailing tokens in condition '{expr}'", line_number)
    return condition


# ---------------------------------------------------------------------------
# Grammar
# ---------------------------------------------------------------------------

_SLOT_RE = re.compile(r"\{([A-Za-z_]+)\}")


@dataclass
class GrammarRule:
    rule_id: str
    priority: int
    condition_text: str = ""
    condition: Optional[Condition] = field(default=None, repr=False)
    templates: List[str] = field(default_factory=list)
    slots: Dict[str, List[str]] = field(default_factory=dict)

    @property
    def is_catch_all(self) -> bool:
        return self.condition_text.strip() == CATCH_ALL

    def matches(self, view: LocalView, action: Action) -> bool:
        return self.condition(view, action)

    def form_count(self) -> int:
        total = 0
        for template in self.templates:
            count = 1
            for name in _SLOT_RE.findall(template):
                count *= len(self.slots[name])
            total += count
        return total

    def realize(self, rng: np.random.Generator) -> str:
        """Draw a template and slot fills uniformly."""
        template = self.templates[int(rng.integers(len(self.templates)))]
        return _SLOT_RE.sub(lambda m: self.slots[m.group(1)][int(rng.integers(len(self.slots[m.group(1)])))],
                            template)


class Grammar:
    """Rules sorted by priority (ascending number = tried first)."""

    def __init__(self, rules: Sequence[GrammarRule]):
        self.rules: List[GrammarRule] = sorted(rules, key=lambda r: r.priority)
        self.validate()

    def validate(self) -> None:
        if not self.rules:
            raise GrammarError("Grammar has no rules")
        ids = [r.rule_id for r in self.rules]
        if len(set(ids)) != len(ids):
            raise GrammarError(f"Duplicate rule ids: {sorted(i for i, n in Counter(ids).items() if n > 1)}")
        priorities = [r.priority for r in self.rules]
        if len(set(priorities)) != len(priorities):
            raise GrammarError("Rule priorities must be distinct")
        if not any(r.is_catch_all for r in self.rules):
            raise GrammarError(f"Grammar needs a catch-all rule ('when {CATCH_ALL}')")
        for rule in self.rules:
            if rule.condition is None:
                raise GrammarError("Rule has no 'when' line", rule_id=rule.rule_id)
            if not rule.templates:
                raise GrammarError("Rule has no templates", rule_id=rule.rule_id)
            for template in rule.templates:
                missing = [s for s in _SLOT_RE.findall(template) if s not in rule.slots]
                if missing:
                    raise GrammarError(f"Rule '{rule.rule_id}' uses undefined slot(s) {missing}", rule_id=rule.rule_id)
                if len(tokenize(_SLOT_RE.sub("x", template))) < MIN_UTTERANCE_TOKENS:
                    raise GrammarError(f"Template too short in rule '{rule.rule_id}'", rule_id=rule.rule_id)
            if rule.form_count() < MIN_FORMS_PER_RULE:
                raise GrammarError(f"Rule '{rule.rule_id}' yields {rule.form_count()} forms, "
                                   f"needs >= {MIN_FORMS_PER_RULE}", rule_id=rule.rule_id)

    def __len__(self) -> int:
        return len(self.rules)

    def rule(self, rule_id: str) -> GrammarRule:
        for rule in self.rules:
            if rule.rule_id == rule_id:
                return rule
        raise KeyError(rule_id)

    def best_rule(self, view: LocalView, action: Action) -> GrammarRule:
        for rule in self.rules:
            if rule.matches(view, action):
                return rule
        raise GrammarError(f"No rule matches view [{view}] with action {Action(action).name}")


def load_grammar(text: str) -> Grammar:
    """
    Parse a grammar file.

    Raises:
        GrammarError: On syntax errors, unknown predicates, missing slots, too few
            surface forms or a missing catch-all rule
    """
    rules: List[GrammarRule] = []
    current: Optional[GrammarRule] = None
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip() if not raw.strip().startswith("template") else raw.strip()
        if not line:
            continue
        keyword, _, rest = line.partition(" ")
        rest = rest.strip()
        if keyword == "rule":
            m = re.fullmatch(r"([A-Za-z0-9_]+)\s+priority\s+(-?\d+)", rest)
            if not m:
                raise GrammarError(f"Expected 'rule <id> priority <n>', got '{line}'", number)
            current = GrammarRule(m.group(1), int(m.group(2)))
            rules.append(current)
            continue
        if current is None:
            raise GrammarError(f"'{keyword}' outside a rule block", number)
        if keyword == "when":
            current.condition_text = rest
            current.condition = parse_condition(rest, number)
        elif keyword == "template":
            m = re.fullmatch(r'"([^"]+)"', rest)
            if not m:
                raise GrammarError("Template must be a double-quoted string", number, current.rule_id)
            current.templates.append(m.group(1))
        elif keyword == "slot":
            name, sep, fills = rest.partition(":")
            options = [f.strip() for f in fills.split("|") if f.strip()]
            if not sep or not name.strip() or not options:
                raise GrammarError("Expected 'slot <name>: a | b | c'", number, current.rule_id)
            current.slots[name.strip()] = options
        else:
            raise GrammarError(f"Unknown keyword '{keyword}'", number)
    return Grammar(rules)


def enumerate_forms(rule: GrammarRule) -> List[str]:
    """Every surface string a rule can produce, in template/slot order."""
    forms = []
    for template in rule.templates:
        names = _SLOT_RE.findall(template)
        for fills in itertools.product(*(rule.slots[n] for n in names)):
            values = iter(fills)
            forms.append(_SLOT_RE.sub(lambda m: next(values), template))
    return forms


def tokenize(text: str) -> Tuple[str, ...]:
    """Lowercase, strip punctuation, split on whitespace."""
    return tuple(re.sub(r"[^\w\s]", "", text.lower()).split())


def describe_with_rule(view: LocalView, action: Action, accuracy: float, rng: np.random.Generator,
                       grammar: Grammar) -> Tuple[Tuple[str, ...], str]:
    """Like ``describe`` but also returns the id of the rule that produced the utterance."""
    if not 0.0 <= accuracy <= 1.0:
        raise ValueError(f"accuracy must lie in [0, 1], got {accuracy}")
    if rng.random() < accuracy:
        rule = grammar.best_rule(view, action)
    else:
        rule = grammar.rules[int(rng.integers(len(grammar.rules)))]
    return tokenize(rule.realize(rng)), rule.rule_id


def describe(view: LocalView, action: Action, accuracy: float, rng: np.random.Generator,
             grammar: Grammar) -> Tuple[str, ...]:
    """
    Noisy-oracle description of a demonstrated action.

    With probability ``accuracy`` the highest-priority matching rule is used, otherwise
    a rule drawn uniformly from the whole grammar; template and slot fills are uniform.

    Returns:
        Utterance tokens
    """
    return describe_with_rule(view, action, accuracy, rng, grammar)[0]


# ---------------------------------------------------------------------------
# Demonstrations
# ---------------------------------------------------------------------------

Pair = Tuple[LocalView, Action]


def _demonstrate_once(frogger_map: FroggerMap, rng: np.random.Generator, episodes: int, horizon: int,
                      alpha: float, gamma: float, q_tau: float) -> List[Pair]:
    tick = int(rng.integers(frogger_map.width))
    cells = safe_cells(frogger_map, tick=tick, min_row=1)
    col, row = cells[int(rng.integers(len(cells)))]
    env = FroggerEnv(frogger_map, DETERMINISTIC, step_cap=horizon, goal_row=row - 1)
    table = QTable(alpha=alpha, gamma=gamma)
    explore = BoltzmannSource(table, q_tau)
    for episode in range(episodes):
        run_episode(env, table, explore, rng=rng, episode=episode, start=env.reset((col, row), tick))

    greedy = GreedySource(table)
    state = env.reset((col, row), tick)
    pairs: List[Pair] = []
    for _ in range(horizon):
        action = greedy.distribution(state, episodes).sample(rng)
        pairs.append((local_view(state), action))
        state, _ = env.step(state, action, rng)
        if state.terminal != "none":
            break
    return pairs if state.terminal == REACHED_GOAL else []


def collect_demonstrations(frogger_map: FroggerMap, n_agents: int, seed: int, episodes: int = 300,
                           horizon: int = 25, alpha: float = 0.1, gamma: float = 0.95,
                           q_tau: float = 1.0) -> List[Pair]:
    """
    Train ``n_agents`` one-row-forward learners and harvest their greedy trajectories.

    Each agent starts at a random safe cell (row >= 1) and tick, and its episode ends
    with the goal reward on reaching the row above the start or with the death
    penalty. Only trajectories that reach that row are harvested.

    Returns:
        (LocalView, Action) pairs in agent order

    Raises:
        ValueError: If ``n_agents`` < 1
    """
    if n_agents < 1:
        raise ValueError(f"n_agents must be >= 1, got {n_agents}")
    pairs: List[Pair] = []
    failed = 0
    for child in np.random.SeedSequence(seed).spawn(n_agents):
        harvested = _demonstrate_once(frogger_map, np.random.default_rng(child), episodes, horizon,
                                      alpha, gamma, q_tau)
        failed += not harvested
        pairs.extend(harvested)
    if failed:
        log(f"{failed}/{n_agents} demonstration agents did not reach their target row", "WARNING")
    return pairs


def save_pairs(pairs: Iterable[Pair]) -> str:
    """One pair per line: ``<9 view tokens>\\t<ACTION>``."""
    return "".join(f"{view}\t{Action(action).name}\n" for view, action in pairs)


def load_pairs(text: str) -> List[Pair]:
    pairs = []
    for number, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            view_text, action_text = line.split("\t")
            pairs.append((LocalView.from_tokens(view_text.split()), Action[action_text.strip()]))
        except (ValueError, KeyError) as e:
            raise DatasetFormatError(f"Bad demonstration line '{line}': {e}", number)
    return pairs


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnnotatedExample:
    utterance: Tuple[str, ...]
    view: LocalView
    action: Action

    def __post_init__(self):
        if len(self.utterance) < MIN_UTTERANCE_TOKENS:
            raise ValueError(f"Utterance needs >= {MIN_UTTERANCE_TOKENS} tokens: {self.utterance}")

    @property
    def sentence(self) -> str:
        return " ".join(self.utterance)


@dataclass(frozen=True)
class DatasetStats:
    size: int
    raw_size: int
    distinct_sentences: int
    top_sentence_share: float
    mean_repetition_share: float


class Dataset:
    """Deduplicated annotated examples; statistics always reflect the current examples."""

    def __init__(self, examples: Iterable[AnnotatedExample] = (), accuracy: float = 1.0,
                 raw_size: Optional[int] = None):
        self.accuracy = accuracy
        self.examples: List[AnnotatedExample] = []
        self._seen = set()
        added = 0
        for example in examples:
            self.add(example)
            added += 1
        self.raw_size = added if raw_size is None else raw_size

    def add(self, example: AnnotatedExample) -> bool:
        """Append an example unless an identical one is present; returns True when added."""
        if example in self._seen:
            return False
        self._seen.add(example)
        self.examples.append(example)
        return True

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def utterances(self) -> List[Tuple[str, ...]]:
        """Distinct utterances in first-seen order."""
        return list(dict.fromkeys(ex.utterance for ex in self.examples))

    @property
    def stats(self) -> DatasetStats:
        size = len(self.examples)
        counts = Counter(ex.sentence for ex in self.examples)
        if size == 0:
            return DatasetStats(0, self.raw_size, 0, 0.0, 0.0)
        shares = [n / size for n in counts.values()]
        return DatasetStats(size, self.raw_size, len(counts), max(shares), float(np.mean(shares)))


def build_dataset(pairs: Sequence[Pair], accuracy: float, seed: int, grammar: Grammar) -> Dataset:
    """
    Describe every pair and remove exact duplicates.

    Each pair gets its own generator spawned from ``seed``, so datasets built from the
    same pairs at different accuracies share their (view, action) payloads.

    Raises:
        ValueError: If ``pairs`` is empty
    """
    if not pairs:
        raise ValueError("Cannot build a dataset from zero demonstration pairs")
    children = np.random.SeedSequence(seed).spawn(len(pairs))
    examples = (AnnotatedExample(describe(view, action, accuracy, np.random.default_rng(child), grammar),
                                 view, Action(action))
                for (view, action), child in zip(pairs, children))
    return Dataset(examples, accuracy=accuracy)


def save_dataset(dataset: Dataset) -> str:
    """One example per line: ``<utterance>\\t<9 view tokens>\\t<ACTION>`` under a header comment."""
    lines = [f"# accuracy={dataset.accuracy!r} raw_size={dataset.raw_size}\n"]
    lines += [f"{ex.sentence}\t{ex.view}\t{ex.action.name}\n" for ex in dataset.examples]
    return "".join(lines)


def load_dataset(text: str) -> Dataset:
    accuracy, raw_size = 1.0, None
    examples = []
    for number, line in enumerate(text.splitlines(), 1):
        if line.startswith("#"):
            m = re.search(r"accuracy=([0-9.]+)\s+raw_size=(\d+)", line)
            if m:
                accuracy, raw_size = float(m.group(1)), int(m.group(2))
            continue
        if not line.strip():
            continue
        try:
            utterance, view_text, action_text = line.split("\t")
            examples.append(AnnotatedExample(tuple(utterance.split()), LocalView.from_tokens(view_text.split()),
                                             Action[action_text.strip()]))
        except (ValueError, KeyError) as e:
            raise DatasetFormatError(f"Bad dataset line '{line}': {e}", number)
    return Dataset(examples, accuracy=accuracy, raw_size=raw_size)
