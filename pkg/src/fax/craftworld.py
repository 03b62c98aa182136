"""Symbolic CraftWorld: a small egocentric, deterministic survival-and-crafting gridworld.

A state is a flat, hashable vector of 81 slots:

* 63 map cells on a 9x7 egocentric grid (``dx`` in [-4, 4], ``dy`` in [-3, 3],
  the agent at ``(0, 0)``; ``up`` is negative ``dy``),
* 12 inventory counts,
* 4 survival gauges plus a daylight flag,
* the facing direction.

Slots are addressed by name (``map(left2,up3)``, ``inventory_wood``,
``health``, ``daylight``, ``facing``), which is also the grammar used by edits.
"""
from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from enum import IntEnum
from importlib import resources
from typing import Any, Iterable, Mapping, NamedTuple

__all__ = [
    "Material", "Direction", "Action", "ITEMS", "GAUGES", "SLOTS",
    "State", "Edit", "EditError", "UnknownSlot", "ValueOutOfRange",
    "ConflictingAtoms", "ParseError", "apply_edit", "make_edits", "parse_edit",
    "format_edits", "step", "render_state", "parse_state", "state_to_json",
    "state_from_json", "random_state", "named_state", "FIXTURES",
    "S0", "S_TREE", "S_DMD", "S_ZMB", "S_LOWDRINK",
]


class Material(IntEnum):
    GRASS = 0
    SAND = 1
    PATH = 2
    TREE = 3
    STONE = 4
    COAL = 5
    IRON = 6
    DIAMOND = 7
    WATER = 8
    LAVA = 9
    TABLE = 10
    FURNACE = 11
    PLANT = 12
    COW = 13
    ZOMBIE = 14
    SKELETON = 15

    def __str__(self) -> str:
        return self.name.lower()


WALKABLE = frozenset({Material.GRASS, Material.SAND, Material.PATH, Material.PLANT})
THREATS = frozenset({Material.ZOMBIE, Material.SKELETON})
CREATURES = THREATS | {Material.COW}


class Direction(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3

    @property
    def delta(self) -> tuple[int, int]:
        return _DELTAS[self]

    @property
    def opposite(self) -> Direction:
        return _OPPOSITE[self]

    def __str__(self) -> str:
        return self.name.lower()


_DELTAS = {
    Direction.UP: (0, -1),
    Direction.DOWN: (0, 1),
    Direction.LEFT: (-1, 0),
    Direction.RIGHT: (1, 0),
}
_OPPOSITE = {
    Direction.UP: Direction.DOWN,
    Direction.DOWN: Direction.UP,
    Direction.LEFT: Direction.RIGHT,
    Direction.RIGHT: Direction.LEFT,
}


class Action(IntEnum):
    NOOP = 0
    LEFT = 1
    RIGHT = 2
    UP = 3
    DOWN = 4
    DO = 5
    SLEEP = 6
    PLACE_STONE = 7
    PLACE_TABLE = 8
    PLACE_FURNACE = 9
    PLACE_PLANT = 10
    MAKE_WOOD_PICKAXE = 11
    MAKE_STONE_PICKAXE = 12
    MAKE_IRON_PICKAXE = 13
    MAKE_WOOD_SWORD = 14
    MAKE_STONE_SWORD = 15
    MAKE_IRON_SWORD = 16

    def __str__(self) -> str:
        return self.name


MOVES = {
    Action.LEFT: Direction.LEFT,
    Action.RIGHT: Direction.RIGHT,
    Action.UP: Direction.UP,
    Action.DOWN: Direction.DOWN,
}
MOVE_FOR = {d: a for a, d in MOVES.items()}

ITEMS = (
    "wood", "stone", "coal", "iron", "diamond", "sapling",
    "wood_pickaxe", "stone_pickaxe", "iron_pickaxe",
    "wood_sword", "stone_sword", "iron_sword",
)
GAUGES = ("health", "food", "drink", "energy")
MAX_COUNT = 9

DX_RANGE = range(-4, 5)
DY_RANGE = range(-3, 4)
N_CELLS = len(DX_RANGE) * len(DY_RANGE)
INV_BASE = N_CELLS
GAUGE_BASE = INV_BASE + len(ITEMS)
DAYLIGHT = GAUGE_BASE + len(GAUGES)
FACING = DAYLIGHT + 1
N_SLOTS = FACING + 1


def cell_index(dx: int, dy: int) -> int:
    return (dy + 3) * 9 + (dx + 4)


def cell_offset(index: int) -> tuple[int, int]:
    return index % 9 - 4, index // 9 - 3


_ITEM_INDEX = {name: INV_BASE + k for k, name in enumerate(ITEMS)}
_GAUGE_INDEX = {name: GAUGE_BASE + k for k, name in enumerate(GAUGES)}


def item_index(item: str) -> int:
    return _ITEM_INDEX[item]


CENTER = cell_index(0, 0)


def offset_name(dx: int, dy: int) -> str:
    x = "center" if dx == 0 else (f"left{-dx}" if dx < 0 else f"right{dx}")
    y = "center" if dy == 0 else (f"up{-dy}" if dy < 0 else f"down{dy}")
    return f"map({x},{y})"


SLOTS: tuple[str, ...] = (
    tuple(offset_name(*cell_offset(i)) for i in range(N_CELLS))
    + tuple(f"inventory_{item}" for item in ITEMS)
    + GAUGES
    + ("daylight", "facing")
)
SLOT_INDEX = {name: i for i, name in enumerate(SLOTS)}

_MAP_RE = re.compile(
    r"^map\(\s*(center|left[1-9]\d*|right[1-9]\d*)\s*,\s*(center|up[1-9]\d*|down[1-9]\d*)\s*\)$"
)


class EditError(ValueError):
    """An edit that cannot be applied; verdicts built on it are Inconclusive."""


class UnknownSlot(EditError):
    pass


class ValueOutOfRange(EditError):
    pass


class ConflictingAtoms(EditError):
    pass


class ParseError(ValueError):
    def __init__(self, message: str, lineno: int = 0):
        super().__init__(f"line {lineno}: {message}" if lineno else message)
        self.lineno = lineno


def slot_index(slot: str) -> int:
    """Resolve a slot name, accepting whitespace inside ``map(...)``."""
    idx = SLOT_INDEX.get(slot)
    if idx is not None:
        return idx
    m = _MAP_RE.match(slot.strip())
    if not m:
        raise UnknownSlot(f"unknown slot {slot!r}")
    x, y = m.groups()
    dx = 0 if x == "center" else (-int(x[4:]) if x.startswith("left") else int(x[5:]))
    dy = 0 if y == "center" else (-int(y[2:]) if y.startswith("up") else int(y[4:]))
    if dx not in DX_RANGE or dy not in DY_RANGE:
        raise UnknownSlot(f"map offset out of range in {slot!r}")
    return cell_index(dx, dy)


def canonical_slot(slot: str) -> str:
    return SLOTS[slot_index(slot)]


def slot_domain(index: int) -> tuple:
    """All legal values of a slot, in canonical order."""
    if index < N_CELLS:
        if index == CENTER:
            return tuple(m for m in Material if m in WALKABLE)
        return tuple(Material)
    if index < DAYLIGHT:
        return tuple(range(MAX_COUNT + 1))
    if index == DAYLIGHT:
        return (False, True)
    return tuple(Direction)


def coerce_value(index: int, raw: Any):
    """Convert ``raw`` (string or native) to the typed value of a slot."""
    name = SLOTS[index]
    try:
        if index < N_CELLS:
            value = raw if isinstance(raw, Material) else Material[str(raw).strip().upper()]
        elif index < DAYLIGHT:
            if isinstance(raw, bool):
                raise ValueError
            value = int(raw)
        elif index == DAYLIGHT:
            if isinstance(raw, bool):
                value = raw
            elif str(raw).strip().lower() in ("true", "1", "yes"):
                value = True
            elif str(raw).strip().lower() in ("false", "0", "no"):
                value = False
            else:
                raise ValueError
        else:
            value = raw if isinstance(raw, Direction) else Direction[str(raw).strip().upper()]
    except (KeyError, ValueError, TypeError):
        raise ValueOutOfRange(f"invalid value {raw!r} for {name}") from None
    if value not in slot_domain(index):
        if index == CENTER:
            raise ValueOutOfRange(f"agent cell must be walkable, got {value}")
        raise ValueOutOfRange(f"{name}={value} outside [0, {MAX_COUNT}]")
    return value


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


@dataclass(frozen=True, slots=True)
class State:
    values: tuple

    def get(self, slot: str):
        return self.values[slot_index(slot)]

    def cell(self, dx: int, dy: int) -> Material:
        return self.values[cell_index(dx, dy)]

    def item(self, name: str) -> int:
        return self.values[item_index(name)]

    @property
    def inventory(self) -> dict[str, int]:
        return {k: self.values[INV_BASE + i] for i, k in enumerate(ITEMS)}

    @property
    def health(self) -> int:
        return self.values[GAUGE_BASE]

    @property
    def food(self) -> int:
        return self.values[GAUGE_BASE + 1]

    @property
    def drink(self) -> int:
        return self.values[GAUGE_BASE + 2]

    @property
    def energy(self) -> int:
        return self.values[GAUGE_BASE + 3]

    @property
    def daylight(self) -> bool:
        return self.values[DAYLIGHT]

    @property
    def facing(self) -> Direction:
        return self.values[FACING]

    @property
    def faced_index(self) -> int:
        return cell_index(*self.facing.delta)

    @property
    def faced(self) -> Material:
        return self.values[self.faced_index]

    def replace(self, changes: Mapping[int, Any]) -> State:
        """Unchecked slot replacement by index; callers validate."""
        vals = list(self.values)
        for i, v in changes.items():
            vals[i] = v
        return State(tuple(vals))

    def diff(self, other: State) -> list[str]:
        return [SLOTS[i] for i, (a, b) in enumerate(zip(self.values, other.values)) if a != b]

    def __str__(self) -> str:
        return render_state(self)


def _default_values() -> tuple:
    return (
        (Material.GRASS,) * N_CELLS
        + (0,) * len(ITEMS)
        + (MAX_COUNT,) * len(GAUGES)
        + (True, Direction.UP)
    )


S0 = State(_default_values())


class Edit(NamedTuple):
    slot: str
    value: Any

    def __str__(self) -> str:
        return f"{self.slot}={format_value(self.value)}"


def parse_edit(text: str) -> Edit:
    """Parse ``slot=value`` (``:`` also accepted) into a typed edit."""
    sep = "=" if "=" in text else ":"
    slot, _, raw = text.partition(sep)
    if not _:
        raise UnknownSlot(f"malformed edit {text!r}")
    idx = slot_index(slot.strip())
    return Edit(SLOTS[idx], coerce_value(idx, raw.strip()))


def make_edits(edits: Mapping[str, Any] | Iterable) -> tuple[Edit, ...]:
    """Normalise a mapping, ``slot=value`` strings, or (slot, value) pairs."""
    if isinstance(edits, Mapping):
        pairs = list(edits.items())
    else:
        pairs = [parse_edit(e) if isinstance(e, str) else tuple(e) for e in edits]
    out = []
    seen = set()
    for slot, raw in pairs:
        idx = slot_index(str(slot).strip())
        if idx in seen:
            raise ConflictingAtoms(f"slot {SLOTS[idx]} edited twice")
        seen.add(idx)
        out.append(Edit(SLOTS[idx], coerce_value(idx, raw)))
    return tuple(out)


def format_edits(edits: Iterable[Edit]) -> str:
    return "; ".join(str(e) for e in edits) or "{}"


def edits_to_json(edits: Iterable[Edit]) -> dict[str, Any]:
    out = {}
    for e in edits:
        v = e.value
        out[e.slot] = v if isinstance(v, bool) or type(v) is int else str(v)
    return out


def apply_edit(state: State, edits: Mapping[str, Any] | Iterable) -> State:
    """Return a new state with every edit atom applied; ``state`` is untouched."""
    atoms = make_edits(edits)
    if not atoms:
        return state
    return state.replace({SLOT_INDEX[e.slot]: e.value for e in atoms})


# --------------------------------------------------------------------------
# transition


def neighbours(state: State) -> list[tuple[Direction, Material]]:
    return [(d, state.values[cell_index(*d.delta)]) for d in Direction]


def adjacent_materials(state: State) -> set[Material]:
    return {m for _, m in neighbours(state)}


def _clamp(v: int) -> int:
    return max(0, min(MAX_COUNT, v))


_MINE = {
    Material.STONE: ("stone", "wood_pickaxe", Material.PATH),
    Material.COAL: ("coal", "wood_pickaxe", Material.PATH),
    Material.IRON: ("iron", "stone_pickaxe", Material.PATH),
    Material.DIAMOND: ("diamond", "iron_pickaxe", Material.PATH),
}

_RECIPES = {
    Action.MAKE_WOOD_PICKAXE: ("wood_pickaxe", {"wood": 1}, False),
    Action.MAKE_WOOD_SWORD: ("wood_sword", {"wood": 1}, False),
    Action.MAKE_STONE_PICKAXE: ("stone_pickaxe", {"wood": 1, "stone": 1}, False),
    Action.MAKE_STONE_SWORD: ("stone_sword", {"wood": 1, "stone": 1}, False),
    Action.MAKE_IRON_PICKAXE: ("iron_pickaxe", {"wood": 1, "coal": 1, "iron": 1}, True),
    Action.MAKE_IRON_SWORD: ("iron_sword", {"wood": 1, "coal": 1, "iron": 1}, True),
}

_PLACEMENTS = {
    Action.PLACE_STONE: ("stone", Material.STONE),
    Action.PLACE_TABLE: ("wood", Material.TABLE),
    Action.PLACE_FURNACE: ("stone", Material.FURNACE),
    Action.PLACE_PLANT: ("sapling", Material.PLANT),
}


def can_craft(state: State, action: Action) -> bool:
    _, cost, furnace = _RECIPES[action]
    near = adjacent_materials(state)
    if Material.TABLE not in near or (furnace and Material.FURNACE not in near):
        return False
    return all(state.item(k) >= n for k, n in cost.items())


def can_place(state: State, action: Action) -> bool:
    item, _ = _PLACEMENTS[action]
    return state.item(item) >= 1 and state.faced in WALKABLE


def step(state: State, action: Action) -> State:
    """Deterministic transition; actions with unmet preconditions are no-ops."""
    action = Action(action)
    changes: dict[int, Any] = {}
    faced = state.faced_index

    def add(item: str, n: int) -> None:
        i = item_index(item)
        changes[i] = _clamp(changes.get(i, state.values[i]) + n)

    def gauge(k: int, value: int) -> None:
        changes[GAUGE_BASE + k] = _clamp(value)

    if action in MOVES:
        d = MOVES[action]
        changes[FACING] = d
        target = cell_index(*d.delta)
        if state.values[target] in WALKABLE:
            ddx, ddy = d.delta
            for i in range(N_CELLS):
                x, y = cell_offset(i)
                sx, sy = x + ddx, y + ddy
                inside = sx in DX_RANGE and sy in DY_RANGE
                changes[i] = state.values[cell_index(sx, sy)] if inside else Material.GRASS
    elif action is Action.DO:
        m = state.values[faced]
        if m is Material.TREE:
            add("wood", 1)
            changes[faced] = Material.GRASS
        elif m in _MINE:
            item, tool, leaves = _MINE[m]
            if state.item(tool) >= 1:
                add(item, 1)
                changes[faced] = leaves
        elif m is Material.WATER:
            gauge(2, state.drink + 1)
        elif m is Material.COW:
            gauge(1, state.food + 1)
            changes[faced] = Material.GRASS
        elif m is Material.PLANT:
            gauge(1, state.food + 1)
            changes[faced] = Material.GRASS
        elif m in THREATS:
            changes[faced] = Material.GRASS
    elif action is Action.SLEEP:
        gauge(3, MAX_COUNT)
    elif action in _RECIPES:
        if can_craft(state, action):
            product, cost, _ = _RECIPES[action]
            for k, n in cost.items():
                add(k, -n)
            add(product, 1)
    elif action in _PLACEMENTS:
        if can_place(state, action):
            item, material = _PLACEMENTS[action]
            add(item, -1)
            changes[faced] = material

    nxt = state.replace(changes) if changes else state
    hits = sum(1 for _, m in neighbours(nxt) if m in THREATS)
    if hits:
        nxt = nxt.replace({GAUGE_BASE: _clamp(nxt.health - hits)})
    return nxt


# --------------------------------------------------------------------------
# text and JSON forms


def render_state(state: State) -> str:
    lines = []
    for i in range(N_CELLS):
        if state.values[i] is not Material.GRASS:
            lines.append(f"{SLOTS[i]}: {state.values[i]}")
    for i in range(INV_BASE, N_SLOTS):
        lines.append(f"{SLOTS[i]}: {format_value(state.values[i])}")
    return "\n".join(lines) + "\n"


def parse_state(text: str) -> State:
    """Inverse of :func:`render_state`; missing slots take their S0 values."""
    changes: dict[int, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.rpartition(":")
        if not sep or not key.strip():
            raise ParseError(f"expected 'slot: value', got {raw!r}", lineno)
        try:
            idx = slot_index(key.strip())
            if idx in changes:
                raise ConflictingAtoms(f"slot {SLOTS[idx]} given twice")
            changes[idx] = coerce_value(idx, value.strip())
        except EditError as exc:
            raise ParseError(str(exc), lineno) from None
    return S0.replace(changes) if changes else S0


def state_to_json(state: State) -> dict[str, Any]:
    cells = {}
    for i in range(N_CELLS):
        if state.values[i] is not Material.GRASS:
            dx, dy = cell_offset(i)
            cells[f"({dx},{dy})"] = str(state.values[i])
    return {
        "map": cells,
        "inventory": state.inventory,
        "status": {g: state.values[GAUGE_BASE + k] for k, g in enumerate(GAUGES)}
        | {"daylight": state.daylight},
        "facing": str(state.facing),
    }


_OFFSET_RE = re.compile(r"^\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)$")


def state_from_json(data: Mapping[str, Any]) -> State:
    changes: dict[int, Any] = {}
    try:
        for key, material in dict(data.get("map", {})).items():
            m = _OFFSET_RE.match(key)
            if m:
                dx, dy = int(m.group(1)), int(m.group(2))
                if dx not in DX_RANGE or dy not in DY_RANGE:
                    raise UnknownSlot(f"map offset {key} out of range")
                idx = cell_index(dx, dy)
            else:
                idx = slot_index(key)
            changes[idx] = coerce_value(idx, material)
        for item, n in dict(data.get("inventory", {})).items():
            idx = slot_index(f"inventory_{item}")
            changes[idx] = coerce_value(idx, n)
        for field, v in dict(data.get("status", {})).items():
            idx = slot_index(field)
            if idx < GAUGE_BASE or idx == FACING:
                raise UnknownSlot(f"unknown status field {field!r}")
            changes[idx] = coerce_value(idx, v)
        if "facing" in data:
            changes[FACING] = coerce_value(FACING, data["facing"])
    except EditError as exc:
        raise ParseError(str(exc)) from None
    return S0.replace(changes) if changes else S0


# --------------------------------------------------------------------------
# fixtures and seeded states

S_TREE = apply_edit(S0, {"map(center,up1)": "tree"})
S_DMD = apply_edit(S0, {"map(center,up1)": "diamond", "inventory_iron_pickaxe": 1})
S_ZMB = apply_edit(S0, {"map(center,up1)": "zombie"})
S_LOWDRINK = apply_edit(S0, {"map(center,up1)": "water", "drink": 1})

FIXTURES = {
    "S0": S0,
    "S_TREE": S_TREE,
    "S_DMD": S_DMD,
    "S_ZMB": S_ZMB,
    "S_LOWDRINK": S_LOWDRINK,
}

_SCATTER = (
    [Material.TREE] * 3 + [Material.STONE] * 5 + [Material.WATER] * 3
    + [Material.SAND, Material.PATH, Material.COAL, Material.COAL, Material.IRON, Material.IRON,
       Material.DIAMOND, Material.LAVA, Material.TABLE, Material.FURNACE,
       Material.PLANT, Material.COW, Material.COW, Material.ZOMBIE, Material.SKELETON]
)


def random_state(seed: int | random.Random, density: float = 0.12) -> State:
    """A seeded random state covering the full slot grammar."""
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    vals = list(_default_values())
    for i in range(N_CELLS):
        if i == CENTER:
            vals[i] = rng.choice((Material.GRASS, Material.GRASS, Material.SAND, Material.PATH))
        elif rng.random() < density:
            vals[i] = rng.choice(_SCATTER)
    for k in range(len(ITEMS)):
        if rng.random() < 0.35:
            vals[INV_BASE + k] = rng.randint(1, 3) if k >= 6 else rng.randint(1, MAX_COUNT)
    for k in range(len(GAUGES)):
        low = rng.random() < 0.1
        vals[GAUGE_BASE + k] = rng.randint(0, 3) if low else rng.randint(4, MAX_COUNT)
    vals[DAYLIGHT] = rng.random() < 0.7
    vals[FACING] = rng.choice(tuple(Direction))
    return State(tuple(vals))


def _bench_states() -> dict[str, State]:
    text = resources.files("fax").joinpath("data/states.json").read_text()
    return {k: state_from_json(v) for k, v in json.loads(text).items()}


_BENCH_STATES: dict[str, State] | None = None


def named_state(name: str) -> State:
    """Resolve a fixture name, a shipped benchmark state id, or ``random:<seed>``."""
    global _BENCH_STATES
    if name in FIXTURES:
        return FIXTURES[name]
    if name.startswith("random:"):
        try:
            return random_state(int(name.split(":", 1)[1]))
        except ValueError:
            raise ParseError(f"bad random state id {name!r}") from None
    if _BENCH_STATES is None:
        _BENCH_STATES = _bench_states()
    if name in _BENCH_STATES:
        return _BENCH_STATES[name]
    raise ParseError(f"unknown state {name!r}")
