"""
Frogger Gridworld Environment

This module provides a deterministic-core Frogger gridworld: map files, a seeded
map generator, the step/reward function with optional action-failure noise, and
the 3x3 local view used by the advice pipeline.

Core Features:
- Map file parsing/validation (``frogger v1`` text format) and dumping
- Seeded map generation from the default row template
- Pure ``step`` function over value-semantics ``GameState``
- Toroidal obstacle rotation, log carriage, car/water deaths
- Agent-centred 3x3 ``LocalView`` and the Markov state key ``(col, row, tick mod width)``

Step order inside ``step``:
    1. resolve the action (stochastic substitution)
    2. move the agent
    3. off-map death
    4. obstacles advance one cell (tick + 1)
    5. an agent standing on a log is carried with it (wrapping)
    6. car collision / empty water death
    7. goal check

Dependencies:
    pip install numpy
"""

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, List, Optional, Tuple

import numpy as np


class MapParseError(Exception):
    """Custom exception for malformed map files."""

    def __init__(self, message: str, line_number: Optional[int] = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class MapValidationError(Exception):
    """Custom exception for maps that parse but break a structural invariant."""

    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(message)
        self.row = row


class EnvironmentContractError(Exception):
    """Raised when the environment is driven outside its contract (e.g. stepping a terminal state)."""


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    STAY = 4


ACTIONS: Tuple[Action, ...] = tuple(Action)
N_ACTIONS = len(ACTIONS)

_MOVES: Dict[Action, Tuple[int, int]] = {
    Action.UP: (0, -1),
    Action.DOWN: (0, 1),
    Action.LEFT: (-1, 0),
    Action.RIGHT: (1, 0),
    Action.STAY: (0, 0),
}

# Cell tokens
WALL = "WALL"
GRASS = "GRASS"
ROAD = "ROAD"
CAR = "CAR"
WATER = "WATER"
LOG = "LOG"
GOAL = "GOAL"
CELL_TOKENS: Tuple[str, ...] = (WALL, GRASS, ROAD, CAR, WATER, LOG, GOAL)

# Row kinds / directions
GOAL_ROW = "goal"
GRASS_ROW = "grass"
ROAD_ROW = "road"
WATER_ROW = "water"
MOVING_KINDS = (ROAD_ROW, WATER_ROW)

_KIND_CHARS = {"t": GOAL_ROW, "g": GRASS_ROW, "r": ROAD_ROW, "w": WATER_ROW}
_DIR_CHARS = {"<": "left", ">": "right", "-": "none"}
_SHIFT = {"left": -1, "right": 1, "none": 0}

# Terminal markers
ALIVE = "none"
DEAD = "dead"
REACHED_GOAL = "goal"

REWARD_GOAL = 100.0
REWARD_DEATH = -10.0
REWARD_STEP = -1.0

MAP_HEADER = "frogger v1"


@dataclass(frozen=True)
class RowSpec:
    kind: str
    direction: str
    occupancy: Tuple[bool, ...]

    @property
    def shift(self) -> int:
        return _SHIFT[self.direction]

    @property
    def moving(self) -> bool:
        return self.kind in MOVING_KINDS


@dataclass(frozen=True)
class FroggerMap:
    """
    A Frogger map.

    Row 0 is the goal row, row ``height - 1`` the start row. ``occupancy`` bits
    are cars on road rows and logs on water rows at tick 0.
    """

    width: int
    height: int
    rows: Tuple[RowSpec, ...]
    start_position: Tuple[int, int]
    rng_density: Optional[float] = None

    def occupied(self, col: int, row: int, tick: int) -> bool:
        """Return whether cell (col, row) holds an obstacle at ``tick`` (toroidal rotation)."""
        spec = self.rows[row]
        return spec.occupancy[(col - spec.shift * tick) % self.width]

    def occupancy_at(self, row: int, tick: int) -> Tuple[bool, ...]:
        """Return the whole occupancy pattern of ``row`` at ``tick``."""
        return tuple(self.occupied(col, row, tick) for col in range(self.width))

    @property
    def period(self) -> int:
        """Ticks after which every moving row returns to its tick-0 pattern."""
        return self.width

    def validate(self) -> "FroggerMap":
        """
        Check every structural invariant.

        Returns:
            The map itself, for chaining

        Raises:
            MapValidationError: On the first violated invariant
        """
        if self.width < 3 or self.height < 4:
            raise MapValidationError(f"Map must be at least 3 wide and 4 high, got {self.width}x{self.height}")
        if len(self.rows) != self.height:
            raise MapValidationError(f"Expected {self.height} rows, got {len(self.rows)}")

        goal_rows = [r for r, spec in enumerate(self.rows) if spec.kind == GOAL_ROW]
        if goal_rows != [0]:
            raise MapValidationError("Exactly one goal row is required and it must be the top row",
                                     row=goal_rows[0] if goal_rows else None)
        if self.rows[-1].kind != GRASS_ROW:
            raise MapValidationError("The bottom (start) row must be grass", row=self.height - 1)

        for r, spec in enumerate(self.rows):
            if len(spec.occupancy) != self.width:
                raise MapValidationError(f"Row {r} has {len(spec.occupancy)} cells, expected {self.width}", row=r)
            if spec.moving and spec.direction == "none":
                raise MapValidationError(f"Moving row {r} ({spec.kind}) needs a direction", row=r)
            if not spec.moving:
                if spec.direction != "none":
                    raise MapValidationError(f"Row {r} ({spec.kind}) cannot move", row=r)
                if any(spec.occupancy):
                    raise MapValidationError(f"Row {r} ({spec.kind}) cannot hold obstacles", row=r)

        for r in range(1, self.height):
            above, below = self.rows[r - 1], self.rows[r]
            if above.moving and below.moving and above.direction == below.direction:
                raise MapValidationError(f"Adjacent moving rows {r - 1} and {r} must alternate direction", row=r)

        col, row = self.start_position
        if row != self.height - 1 or not 0 <= col < self.width:
            raise MapValidationError(f"Start position {self.start_position} must lie in the bottom row",
                                     row=row)
        return self


@dataclass(frozen=True)
class GameState:
    map_ref: FroggerMap = field(repr=False)
    agent: Tuple[int, int]
    tick: int = 0
    terminal: str = ALIVE

    @property
    def col(self) -> int:
        return self.agent[0]

    @property
    def row(self) -> int:
        return self.agent[1]


@dataclass(frozen=True)
class LocalView:
    """Nine cell tokens, row-major, centred on the agent."""

    cells: Tuple[str, ...]

    def __post_init__(self):
        if len(self.cells) != 9:
            raise ValueError(f"A local view has 9 cells, got {len(self.cells)}")
        unknown = [c for c in self.cells if c not in CELL_TOKENS]
        if unknown:
            raise ValueError(f"Unknown cell token(s): {unknown}")

    @classmethod
    def from_tokens(cls, tokens) -> "LocalView":
        return cls(tuple(tokens))

    def __str__(self) -> str:
        return " ".join(self.cells)


@dataclass(frozen=True)
class Dynamics:
    """Action-failure model: with probability ``p_fail`` another action is executed."""

    p_fail: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.p_fail <= 1.0:
            raise ValueError(f"p_fail must lie in [0, 1], got {self.p_fail}")

    @property
    def name(self) -> str:
        return "deterministic" if self.p_fail == 0.0 else "stochastic"


DETERMINISTIC = Dynamics(0.0)
STOCHASTIC = Dynamics(0.2)


def parse_dynamics(name: str, default_p_fail: float = 0.2) -> Dynamics:
    """
    Build a ``Dynamics`` from its configuration name.

    Accepts ``deterministic``, ``stochastic`` and ``stochastic:<p_fail>``.
    """
    name = name.strip().lower()
    if name == "deterministic":
        return DETERMINISTIC
    if name == "stochastic":
        return Dynamics(default_p_fail)
    if name.startswith("stochastic:"):
        return Dynamics(float(name.split(":", 1)[1]))
    raise ValueError(f"Unknown dynamics '{name}'")


# ---------------------------------------------------------------------------
# Map files
# ---------------------------------------------------------------------------


def load_map(text: str) -> FroggerMap:
    """
    Parse and validate a map file.

    Args:
        text: Map file content (``frogger v1 <width> <height>`` header, then one line per row, top first)

    Returns:
        A validated FroggerMap

    Raises:
        MapParseError: On a malformed line (with its 1-based line number)
        MapValidationError: On missing goal/start rows or non-alternating directions
    """
    lines = [(n, line.rstrip()) for n, line in enumerate(text.splitlines(), 1)
             if line.strip() and not line.lstrip().startswith("#")]
    if not lines:
        raise MapParseError("Empty map file", line_number=1)

    header_no, header = lines[0]
    parts = header.split()
    if len(parts) != 4 or " ".join(parts[:2]) != MAP_HEADER:
        raise MapParseError(f"Expected '{MAP_HEADER} <width> <height>', got '{header}'", header_no)
    try:
        width, height = int(parts[2]), int(parts[3])
    except ValueError:
        raise MapParseError(f"Width and height must be integers, got '{header}'", header_no)

    row_lines = lines[1:]
    if len(row_lines) != height:
        last_line = row_lines[-1][0] if row_lines else header_no
        raise MapParseError(f"Expected {height} row lines, found {len(row_lines)}", last_line)

    rows: List[RowSpec] = []
    starts: List[Tuple[int, int]] = []
    for r, (line_no, line) in enumerate(row_lines):
        fields = line.split()
        if len(fields) != 2 or len(fields[0]) != 2:
            raise MapParseError(f"Row must look like '<kind><dir> <cells>', got '{line}'", line_no)
        kind_char, dir_char = fields[0]
        if kind_char not in _KIND_CHARS:
            raise MapParseError(f"Unknown row kind '{kind_char}'", line_no)
        if dir_char not in _DIR_CHARS:
            raise MapParseError(f"Unknown row direction '{dir_char}'", line_no)
        cells = fields[1]
        if len(cells) != width:
            raise MapParseError(f"Row has {len(cells)} cells, expected {width}", line_no)
        bad = sorted({c for c in cells if c not in ".#A"})
        if bad:
            raise MapParseError(f"Illegal cell character(s) {bad}", line_no)
        for col, c in enumerate(cells):
            if c == "A":
                starts.append((col, r))
        rows.append(RowSpec(kind=_KIND_CHARS[kind_char], direction=_DIR_CHARS[dir_char],
                            occupancy=tuple(c == "#" for c in cells)))

    if len(starts) != 1:
        raise MapValidationError(f"Exactly one agent start 'A' is required, found {len(starts)}")
    start = starts[0]
    if rows[start[1]].kind != GRASS_ROW or start[1] != height - 1:
        raise MapValidationError("The agent start 'A' must be in the bottom grass row", row=start[1])

    return FroggerMap(width=width, height=height, rows=tuple(rows), start_position=start).validate()


def dump_map(frogger_map: FroggerMap) -> str:
    """Render a map in the ``frogger v1`` file format (inverse of ``load_map``)."""
    kind_chars = {v: k for k, v in _KIND_CHARS.items()}
    dir_chars = {v: k for k, v in _DIR_CHARS.items()}
    lines = [f"{MAP_HEADER} {frogger_map.width} {frogger_map.height}"]
    for r, spec in enumerate(frogger_map.rows):
        cells = ["#" if occ else "." for occ in spec.occupancy]
        if (frogger_map.start_position[1]) == r:
            cells[frogger_map.start_position[0]] = "A"
        lines.append(f"{kind_chars[spec.kind]}{dir_chars[spec.direction]} {''.join(cells)}")
    return "\n".join(lines) + "\n"


def default_row_kinds(height: int) -> List[str]:
    """
    Return the default row template, top first.

    goal, water rows, a grass median, road rows, grass start. For height 8 this is
    goal / 2 water / median / 3 road / start.
    """
    middle = height - 2
    n_water = middle // 3
    n_median = 1 if middle >= 3 else 0
    n_road = middle - n_water - n_median
    return [GOAL_ROW] + [WATER_ROW] * n_water + [GRASS_ROW] * n_median + [ROAD_ROW] * n_road + [GRASS_ROW]


def generate_map(width: int = 9, height: int = 8, density: float = 0.5, seed: int = 0) -> FroggerMap:
    """
    Generate a map from the default template.

    Every cell of every moving row holds an obstacle (car or log) independently with
    probability ``density``. Moving rows alternate direction starting with ``left``
    at the top.

    Raises:
        MapValidationError: If width < 3 or height < 4
        ValueError: If density is outside [0, 1]
    """
    if width < 3 or height < 4:
        raise MapValidationError(f"Map must be at least 3 wide and 4 high, got {width}x{height}")
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density must lie in [0, 1], got {density}")

    rng = np.random.default_rng(seed)
    rows: List[RowSpec] = []
    next_direction = "left"
    for kind in default_row_kinds(height):
        if kind in MOVING_KINDS:
            occupancy = tuple(bool(x) for x in rng.random(width) < density)
            rows.append(RowSpec(kind=kind, direction=next_direction, occupancy=occupancy))
            next_direction = "right" if next_direction == "left" else "left"
        else:
            rows.append(RowSpec(kind=kind, direction="none", occupancy=(False,) * width))

    return FroggerMap(width=width, height=height, rows=tuple(rows),
                      start_position=(width // 2, height - 1), rng_density=density).validate()


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------


def resolve_action(action: Action, dynamics: Dynamics, rng: np.random.Generator) -> Action:
    """Apply action-failure noise: with probability p_fail pick one of the other four actions uniformly."""
    if dynamics.p_fail > 0.0 and rng.random() < dynamics.p_fail:
        others = [a for a in ACTIONS if a != action]
        return others[int(rng.integers(len(others)))]
    return Action(action)


def is_deadly(frogger_map: FroggerMap, col: int, row: int, tick: int) -> bool:
    """Return whether standing on (col, row) at ``tick`` kills the agent."""
    kind = frogger_map.rows[row].kind
    if kind == ROAD_ROW:
        return frogger_map.occupied(col, row, tick)
    if kind == WATER_ROW:
        return not frogger_map.occupied(col, row, tick)
    return False


def step(state: GameState, action: Action, dynamics: Dynamics = DETERMINISTIC,
         rng: Optional[np.random.Generator] = None, goal_row: int = 0) -> Tuple[GameState, float]:
    """
    Advance the world by one tick.

    Args:
        state: Current non-terminal state
        action: Requested action
        dynamics: Deterministic or stochastic action execution
        rng: Generator used for stochastic substitution (required when p_fail > 0)
        goal_row: Row whose arrival ends the episode with +100 (0 for the full game)

    Returns:
        Tuple of (next state, reward); reward is one of +100, -10, -1

    Raises:
        EnvironmentContractError: If ``state`` is already terminal
    """
    if state.terminal != ALIVE:
        raise EnvironmentContractError(f"Cannot step a terminal state ({state.terminal})")
    if dynamics.p_fail > 0.0 and rng is None:
        raise EnvironmentContractError("Stochastic dynamics need a random generator")

    frogger_map = state.map_ref
    executed = resolve_action(Action(action), dynamics, rng)
    dx, dy = _MOVES[executed]
    col, row = state.col + dx, state.row + dy
    tick = state.tick + 1

    if not (0 <= col < frogger_map.width and 0 <= row < frogger_map.height):
        return GameState(frogger_map, (col, row), tick, DEAD), REWARD_DEATH

    spec = frogger_map.rows[row]
    if spec.kind == WATER_ROW and frogger_map.occupied(col, row, state.tick):
        col = (col + spec.shift) % frogger_map.width

    if is_deadly(frogger_map, col, row, tick):
        return GameState(frogger_map, (col, row), tick, DEAD), REWARD_DEATH

    if row == goal_row:
        return GameState(frogger_map, (col, row), tick, REACHED_GOAL), REWARD_GOAL

    return GameState(frogger_map, (col, row), tick, ALIVE), REWARD_STEP


def cell_token(frogger_map: FroggerMap, col: int, row: int, tick: int) -> str:
    """Return the token for one cell at ``tick`` (WALL outside the map)."""
    if not (0 <= col < frogger_map.width and 0 <= row < frogger_map.height):
        return WALL
    kind = frogger_map.rows[row].kind
    if kind == GOAL_ROW:
        return GOAL
    if kind == GRASS_ROW:
        return GRASS
    occupied = frogger_map.occupied(col, row, tick)
    if kind == ROAD_ROW:
        return CAR if occupied else ROAD
    return LOG if occupied else WATER


def local_view(state: GameState) -> LocalView:
    """Return the agent-centred 3x3 view at the state's tick, row-major."""
    cells = tuple(cell_token(state.map_ref, state.col + dc, state.row + dr, state.tick)
                  for dr in (-1, 0, 1) for dc in (-1, 0, 1))
    return LocalView(cells)


def markov_key(state: GameState) -> Tuple[int, int, int]:
    """Return ``(col, row, tick mod width)``; obstacle patterns repeat every ``width`` ticks."""
    return (state.col, state.row, state.tick % state.map_ref.width)


def safe_cells(frogger_map: FroggerMap, tick: int = 0, min_row: int = 1) -> List[Tuple[int, int]]:
    """Return every (col, row) with row >= ``min_row`` where the agent can stand at ``tick``."""
    return [(col, row)
            for row in range(min_row, frogger_map.height)
            for col in range(frogger_map.width)
            if frogger_map.rows[row].kind != GOAL_ROW and not is_deadly(frogger_map, col, row, tick)]


class FroggerEnv:
    """
    Frogger environment bound to one map and one dynamics setting.

    ``goal_row`` defaults to the top row; the demonstration sub-task moves it to the
    row above the agent's start.
    """

    def __init__(self, frogger_map: FroggerMap, dynamics: Dynamics = DETERMINISTIC,
                 step_cap: int = 200, goal_row: int = 0):
        if step_cap < 1:
            raise ValueError(f"step_cap must be positive, got {step_cap}")
        self.frogger_map = frogger_map
        self.dynamics = dynamics
        self.step_cap = step_cap
        self.goal_row = goal_row

    def reset(self, start: Optional[Tuple[int, int]] = None, tick: int = 0) -> GameState:
        """Return the initial state (map start position unless ``start`` is given)."""
        return GameState(self.frogger_map, tuple(start or self.frogger_map.start_position), tick, ALIVE)

    def step(self, state: GameState, action: Action,
             rng: Optional[np.random.Generator] = None) -> Tuple[GameState, float]:
        return step(state, action, self.dynamics, rng, goal_row=self.goal_row)
