import numpy as np
import pytest

from frogger_advice.frogger_env import (
    ACTIONS,
    ALIVE,
    CAR,
    DEAD,
    DETERMINISTIC,
    GOAL_ROW,
    GRASS_ROW,
    LOG,
    REACHED_GOAL,
    ROAD,
    STOCHASTIC,
    WALL,
    WATER,
    Action,
    Dynamics,
    EnvironmentContractError,
    FroggerEnv,
    GameState,
    MapParseError,
    MapValidationError,
    dump_map,
    generate_map,
    load_map,
    local_view,
    markov_key,
    parse_dynamics,
    resolve_action,
    safe_cells,
    step,
)

from .conftest import FIXTURE_MAPS, load_fixture_map

MINIMAL_MAP = """frogger v1 5 4
t- .....
r< .#...
w> .##..
g- ..A..
"""


def _brute_force_occupancy(spec, width, tick):
    return np.roll(np.array(spec.occupancy), spec.shift * tick)


def _brute_force_token(frogger_map, col, row, tick):
    if not (0 <= col < frogger_map.width and 0 <= row < frogger_map.height):
        return WALL
    spec = frogger_map.rows[row]
    occupied = bool(_brute_force_occupancy(spec, frogger_map.width, tick)[col])
    return {"goal": "GOAL", "grass": "GRASS", "road": CAR if occupied else ROAD,
            "water": LOG if occupied else WATER}[spec.kind]


# ---------------------------------------------------------------------------
# Map files
# ---------------------------------------------------------------------------


def test_minimal_map_loads():
    frogger_map = load_map(MINIMAL_MAP)
    assert frogger_map.height == 4
    assert frogger_map.width == 5
    assert frogger_map.start_position == (2, 3)
    assert frogger_map.rows[1].occupancy == (False, True, False, False, False)


def test_illegal_cell_character_names_line():
    text = MINIMAL_MAP.replace("r< .#...", "r< .#?..")
    with pytest.raises(MapParseError) as excinfo:
        load_map(text)
    assert excinfo.value.line_number == 3
    assert "line 3" in str(excinfo.value)


def test_non_alternating_directions_rejected():
    text = MINIMAL_MAP.replace("w> .##..", "w< .##..")
    with pytest.raises(MapValidationError):
        load_map(text)


def test_missing_start_rejected():
    with pytest.raises(MapValidationError):
        load_map(MINIMAL_MAP.replace("..A..", "....."))


def test_wrong_row_count_is_parse_error():
    with pytest.raises(MapParseError):
        load_map(MINIMAL_MAP.replace("frogger v1 5 4", "frogger v1 5 5"))


def test_static_row_with_obstacle_rejected():
    with pytest.raises(MapValidationError):
        load_map(MINIMAL_MAP.replace("t- .....", "t- ..#.."))


@pytest.mark.parametrize("name", FIXTURE_MAPS)
def test_fixture_maps_are_valid(name):
    frogger_map = load_fixture_map(name)
    assert frogger_map.rows[0].kind == GOAL_ROW
    assert frogger_map.rows[-1].kind == GRASS_ROW
    assert frogger_map.start_position[1] == frogger_map.height - 1
    moving = [spec for spec in frogger_map.rows if spec.moving]
    assert all(spec.direction in ("left", "right") for spec in moving)


def test_dump_then_load_preserves_layout():
    generated = generate_map(9, 8, 0.5, seed=3)
    reloaded = load_map(dump_map(generated))
    assert reloaded.rows == generated.rows
    assert reloaded.start_position == generated.start_position


# ---------------------------------------------------------------------------
# Generator
# ---------------------------------------------------------------------------


def test_generate_density_zero_and_one():
    empty = generate_map(9, 8, 0.0, seed=0)
    full = generate_map(9, 8, 1.0, seed=0)
    for e, f in zip(empty.rows, full.rows):
        if e.moving:
            assert not any(e.occupancy)
            assert all(f.occupancy)


def test_generate_mean_occupancy_matches_density():
    cells = []
    for seed in range(100):
        frogger_map = generate_map(9, 8, 0.5, seed=seed)
        for spec in frogger_map.rows:
            if spec.moving:
                cells.extend(spec.occupancy)
    assert abs(np.mean(cells) - 0.5) < 0.05


def test_generate_follows_default_template():
    frogger_map = generate_map(9, 8, 0.5, seed=1)
    kinds = [spec.kind for spec in frogger_map.rows]
    assert kinds == ["goal", "water", "water", "grass", "road", "road", "road", "grass"]
    assert frogger_map.rng_density == 0.5


def test_generate_rejects_small_dimensions():
    with pytest.raises(MapValidationError):
        generate_map(2, 8, 0.5)
    with pytest.raises(MapValidationError):
        generate_map(9, 3, 0.5)


# ---------------------------------------------------------------------------
# Step function
# ---------------------------------------------------------------------------


def test_reaching_goal(empty_map):
    state = GameState(empty_map, (2, 1))
    next_state, reward = step(state, Action.UP)
    assert reward == 100.0
    assert next_state.terminal == REACHED_GOAL


def test_moving_off_map_is_death(empty_map):
    state = GameState(empty_map, (0, 3))
    next_state, reward = step(state, Action.LEFT)
    assert reward == -10.0
    assert next_state.terminal == DEAD


def test_stay_on_grass(empty_map):
    state = GameState(empty_map, (2, 3))
    next_state, reward = step(state, Action.STAY)
    assert reward == -1.0
    assert next_state.terminal == ALIVE
    assert next_state.tick == 1


def test_stepping_terminal_state_is_contract_violation(empty_map):
    state = GameState(empty_map, (2, 1), terminal=DEAD)
    with pytest.raises(EnvironmentContractError):
        step(state, Action.UP)


def test_stochastic_needs_generator(empty_map):
    with pytest.raises(EnvironmentContractError):
        step(GameState(empty_map, (2, 3)), Action.UP, STOCHASTIC)


def test_log_carries_agent():
    frogger_map = load_map("frogger v1 5 4\nt- .....\nw> ..#..\ng- .....\ng- ..A..\n")
    state, reward = step(GameState(frogger_map, (2, 2)), Action.UP)
    assert reward == -1.0
    assert state.terminal == ALIVE
    assert state.agent == (3, 1)
    assert local_view(state).cells[4] == LOG


def test_log_carriage_wraps_at_edge():
    frogger_map = load_map("frogger v1 5 4\nt- .....\nw> ....#\ng- .....\ng- ..A..\n")
    state, _ = step(GameState(frogger_map, (4, 2)), Action.UP)
    assert state.terminal == ALIVE
    assert state.agent == (0, 1)


def test_empty_water_is_death():
    frogger_map = load_map("frogger v1 5 4\nt- .....\nw> ..#..\ng- .....\ng- ..A..\n")
    state, reward = step(GameState(frogger_map, (0, 2)), Action.UP)
    assert reward == -10.0
    assert state.terminal == DEAD


def test_car_moving_into_agent_kills():
    frogger_map = load_map("frogger v1 5 4\nt- .....\nr> #....\ng- .....\ng- ..A..\n")
    state, reward = step(GameState(frogger_map, (1, 2)), Action.UP)
    assert reward == -10.0
    assert state.terminal == DEAD


def test_stochastic_substitution_rate():
    rng = np.random.default_rng(0)
    executed = [resolve_action(Action.UP, STOCHASTIC, rng) for _ in range(100_000)]
    rate = np.mean([a == Action.UP for a in executed])
    assert abs(rate - 0.8) < 0.01


def test_substitution_never_picks_requested_action():
    rng = np.random.default_rng(1)
    always_fail = Dynamics(1.0)
    executed = {resolve_action(Action.STAY, always_fail, rng) for _ in range(2000)}
    assert executed == {Action.UP, Action.DOWN, Action.LEFT, Action.RIGHT}


def test_parse_dynamics():
    assert parse_dynamics("deterministic") is DETERMINISTIC
    assert parse_dynamics("stochastic", 0.2).p_fail == 0.2
    assert parse_dynamics("stochastic:0.1").p_fail == 0.1
    with pytest.raises(ValueError):
        parse_dynamics("chaotic")


def test_rewards_are_partitioned(train_map):
    rng = np.random.default_rng(5)
    env = FroggerEnv(train_map, STOCHASTIC)
    for _ in range(50):
        state = env.reset()
        for _ in range(40):
            state, reward = env.step(state, ACTIONS[int(rng.integers(5))], rng)
            assert reward in (100.0, -10.0, -1.0)
            if state.terminal != ALIVE:
                break


# ---------------------------------------------------------------------------
# Rotation / views / keys
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("name", FIXTURE_MAPS)
def test_rotation_matches_brute_force(name):
    frogger_map = load_fixture_map(name)
    for row, spec in enumerate(frogger_map.rows):
        for tick in range(3 * frogger_map.period):
            expected = tuple(bool(x) for x in _brute_force_occupancy(spec, frogger_map.width, tick))
            assert frogger_map.occupancy_at(row, tick) == expected


def test_corner_view_has_five_walls(empty_map):
    view = local_view(GameState(empty_map, (0, empty_map.height - 1)))
    assert view.cells.count(WALL) == 5


def test_view_ahead_of_grass_is_road(empty_map):
    view = local_view(GameState(empty_map, (2, 3)))
    assert view.cells[1] == ROAD


def test_view_matches_brute_force_rotation(train_map):
    for tick in (0, 1, 3, 8, 13):
        for col, row in [(4, 7), (0, 5), (8, 4), (3, 3), (6, 6)]:
            view = local_view(GameState(train_map, (col, row), tick))
            expected = tuple(_brute_force_token(train_map, col + dc, row + dr, tick)
                             for dr in (-1, 0, 1) for dc in (-1, 0, 1))
            assert view.cells == expected


def test_markov_key_period(train_map):
    a = GameState(train_map, (4, 7), tick=0)
    b = GameState(train_map, (4, 7), tick=train_map.width)
    c = GameState(train_map, (4, 7), tick=1)
    assert markov_key(a) == markov_key(b)
    assert markov_key(a) != markov_key(c)


def test_equal_keys_replay_identically(train_map):
    script = np.random.default_rng(9).integers(0, 5, size=30)

    def rollout(tick):
        state = GameState(train_map, (4, 7), tick=tick)
        rewards = []
        for a in script:
            state, reward = step(state, ACTIONS[int(a)])
            rewards.append(reward)
            if state.terminal != ALIVE:
                break
        return rewards

    assert rollout(0) == rollout(train_map.width)


def test_deterministic_replay_is_bit_identical(train_map):
    def rollout(seed):
        rng = np.random.default_rng(seed)
        env = FroggerEnv(train_map, STOCHASTIC)
        state, trajectory = env.reset(), []
        for _ in range(100):
            state, reward = env.step(state, ACTIONS[int(rng.integers(5))], rng)
            trajectory.append((state.agent, state.tick, state.terminal, reward))
            if state.terminal != ALIVE:
                state = env.reset()
        return trajectory

    assert rollout(42) == rollout(42)


def test_safe_cells_exclude_hazards(train_map):
    for col, row in safe_cells(train_map, tick=2):
        assert row >= 1
        token = local_view(GameState(train_map, (col, row), 2)).cells[4]
        assert token not in (CAR, WATER)
