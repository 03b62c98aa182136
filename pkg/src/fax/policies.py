"""Scripted target policies with ordered rule tables.

Each profile is a list of rules evaluated top to bottom; the first rule whose
condition holds decides the action. Preference scores are derived from the
same table, so ``argmax(preferences) == decide`` holds by construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable, Optional

from .craftworld import (
    _GAUGE_INDEX, _ITEM_INDEX, CENTER, MOVE_FOR, N_CELLS, THREATS, WALKABLE,
    Action, Direction, Material, State, cell_index, cell_offset, step,
)

__all__ = [
    "PolicyProfile", "Rule", "decide", "preferences", "rollout", "Step",
    "spread", "argmax", "profile_from_name", "rule_table", "fired_rule",
    "emittable_actions", "View",
]


class PolicyProfile(str, Enum):
    DIAMOND_SEEKER = "diamond"
    ITEM_HOARDER = "hoarder"
    PACIFIST = "pacifist"

    def __str__(self) -> str:
        return self.value


def profile_from_name(name: str | PolicyProfile) -> PolicyProfile:
    if isinstance(name, PolicyProfile):
        return name
    key = name.strip().lower().replace("_", "").replace("-", "")
    aliases = {
        "diamond": PolicyProfile.DIAMOND_SEEKER, "diamondseeker": PolicyProfile.DIAMOND_SEEKER,
        "hoarder": PolicyProfile.ITEM_HOARDER, "itemhoarder": PolicyProfile.ITEM_HOARDER,
        "pacifist": PolicyProfile.PACIFIST,
    }
    if key not in aliases:
        raise ValueError(f"unknown policy profile {name!r}")
    return aliases[key]


# Cells ordered by (|dx|+|dy|, dy, dx): the move-toward tie-break order.
_SCAN = sorted(
    (i for i in range(N_CELLS) if i != CENTER),
    key=lambda i: (abs(cell_offset(i)[0]) + abs(cell_offset(i)[1]), cell_offset(i)[1], cell_offset(i)[0]),
)
_SCAN_RANK = {i: r for r, i in enumerate(_SCAN)}
_SCAN_REV = _SCAN[::-1]
_ADJ = [(d, cell_index(*d.delta)) for d in Direction]


class View:
    """Per-state features shared by all rules of one evaluation."""

    __slots__ = ("s", "v", "faced", "adjacent", "nearest", "threat_dir")

    def __init__(self, state: State):
        self.s = state
        v = self.v = state.values
        self.faced = v[state.faced_index]
        self.adjacent = {v[i] for _, i in _ADJ}
        # later writes win, so scanning far-to-near keeps the nearest cell
        self.nearest = {v[i]: i for i in _SCAN_REV}
        self.threat_dir = next((d for d, i in _ADJ if v[i] in THREATS), None)

    def inv(self, item: str) -> int:
        return self.v[_ITEM_INDEX[item]]

    def gauge(self, name: str) -> int:
        return self.v[_GAUGE_INDEX[name]]

    def visible(self, m: Material) -> bool:
        return m in self.nearest

    def toward(self, materials) -> Optional[Action]:
        best = None
        for m in materials:
            i = self.nearest.get(m)
            if i is not None and (best is None or _SCAN_RANK[i] < _SCAN_RANK[best]):
                best = i
        if best is None:
            return None
        dx, dy = cell_offset(best)
        if abs(dx) >= abs(dy):
            return Action.RIGHT if dx > 0 else Action.LEFT
        return Action.DOWN if dy > 0 else Action.UP


_MOVES = frozenset({Action.LEFT, Action.RIGHT, Action.UP, Action.DOWN})


@dataclass(frozen=True)
class Rule:
    name: str
    fire: Callable[[View], Optional[Action]]
    emits: frozenset
    # slot families the condition reads
    reads: tuple[str, ...] = ()


def _rule(name: str, cond: Callable[[View], bool], action: Action, reads=()) -> Rule:
    return Rule(name, lambda w: action if cond(w) else None, frozenset({action}), tuple(reads))


def _move_rule(name: str, fire: Callable[[View], Optional[Action]], reads=()) -> Rule:
    return Rule(name, fire, _MOVES, tuple(reads))


def _flee(view: View) -> Optional[Action]:
    if view.threat_dir is None:
        return None
    return MOVE_FOR[view.threat_dir.opposite]


def _guards(pacifist: bool) -> list[Rule]:
    food = (Material.PLANT,) if pacifist else (Material.COW, Material.PLANT)
    return [
        _rule("G1 drink", lambda w: w.gauge("drink") <= 2 and w.faced is Material.WATER, Action.DO,
              ("drink", "faced")),
        _rule("G2 food", lambda w: w.gauge("food") <= 2 and w.faced in food, Action.DO, ("food", "faced")),
        _rule("G3 sleep", lambda w: w.gauge("energy") <= 2 and w.threat_dir is None, Action.SLEEP,
              ("energy", "adjacent")),
        _move_rule("G4 flee", lambda w: _flee(w) if w.gauge("health") <= 3 else None, ("health", "adjacent")),
    ]


def _table_near(w: View) -> bool:
    return Material.TABLE in w.adjacent


_LADDER_LOW = [
    _rule("D7 make stone pickaxe",
          lambda w: _table_near(w) and w.inv("wood") >= 1 and w.inv("stone") >= 1 and w.inv("stone_pickaxe") == 0,
          Action.MAKE_STONE_PICKAXE,
          ("adjacent", "inventory_wood", "inventory_stone", "inventory_stone_pickaxe")),
    _rule("D8 mine stone", lambda w: w.faced is Material.STONE and w.inv("wood_pickaxe") >= 1, Action.DO,
          ("faced", "inventory_wood_pickaxe")),
    _rule("D9 make wood pickaxe",
          lambda w: _table_near(w) and w.inv("wood") >= 1 and w.inv("wood_pickaxe") == 0,
          Action.MAKE_WOOD_PICKAXE, ("adjacent", "inventory_wood", "inventory_wood_pickaxe")),
    _rule("D10 place table", lambda w: w.inv("wood") >= 2 and not w.visible(Material.TABLE), Action.PLACE_TABLE,
          ("inventory_wood", "visible")),
    _rule("D11 chop tree", lambda w: w.faced is Material.TREE, Action.DO, ("faced",)),
    _move_rule("D12 seek tree", lambda w: w.toward((Material.TREE,)), ("visible",)),
]

_DIAMOND = _guards(False) + [
    _rule("D1 mine diamond", lambda w: w.faced is Material.DIAMOND and w.inv("iron_pickaxe") >= 1, Action.DO,
          ("faced", "inventory_iron_pickaxe")),
    _move_rule("D2 seek diamond",
               lambda w: w.toward((Material.DIAMOND,)) if w.inv("iron_pickaxe") >= 1 else None,
               ("visible", "inventory_iron_pickaxe")),
    _rule("D3 make iron pickaxe",
          lambda w: _table_near(w) and Material.FURNACE in w.adjacent and w.inv("wood") >= 1
          and w.inv("coal") >= 1 and w.inv("iron") >= 1 and w.inv("iron_pickaxe") == 0,
          Action.MAKE_IRON_PICKAXE,
          ("adjacent", "inventory_wood", "inventory_coal", "inventory_iron", "inventory_iron_pickaxe")),
    _rule("D4 mine iron", lambda w: w.faced is Material.IRON and w.inv("stone_pickaxe") >= 1, Action.DO,
          ("faced", "inventory_stone_pickaxe")),
    _move_rule("D5 seek iron",
               lambda w: w.toward((Material.IRON,)) if w.inv("stone_pickaxe") >= 1 else None,
               ("visible", "inventory_stone_pickaxe")),
    _rule("D6 mine coal",
          lambda w: w.faced is Material.COAL and w.inv("wood_pickaxe") >= 1 and w.inv("coal") == 0, Action.DO,
          ("faced", "inventory_wood_pickaxe", "inventory_coal")),
] + _LADDER_LOW + [
    _rule("D13 explore", lambda w: True, Action.UP),
]


def _harvestable(w: View) -> tuple[Material, ...]:
    out = [Material.TREE, Material.COW, Material.PLANT]
    if w.inv("wood_pickaxe") >= 1:
        out += [Material.STONE, Material.COAL]
    if w.inv("stone_pickaxe") >= 1:
        out.append(Material.IRON)
    if w.inv("iron_pickaxe") >= 1:
        out.append(Material.DIAMOND)
    return tuple(out)


_TOOLS = ("inventory_wood_pickaxe", "inventory_stone_pickaxe", "inventory_iron_pickaxe")


def _craft_rule(action: Action, product: str, cost: dict[str, int], furnace: bool) -> Rule:
    def cond(w: View) -> bool:
        if w.inv(product) != 0 or not _table_near(w):
            return False
        if furnace and Material.FURNACE not in w.adjacent:
            return False
        return all(w.inv(k) >= n for k, n in cost.items())
    reads = ("adjacent", f"inventory_{product}") + tuple(f"inventory_{k}" for k in cost)
    return _rule(f"H make {product}", cond, action, reads)


def _place_rule(action: Action, item: str, material: Material, needs_grass: bool = False) -> Rule:
    def cond(w: View) -> bool:
        ok_cell = w.faced is Material.GRASS if needs_grass else w.faced in WALKABLE
        return w.inv(item) >= 1 and ok_cell and not w.visible(material)
    return _rule(f"H place {material}", cond, action, ("faced", f"inventory_{item}", "visible"))


_HOARDER = _guards(False) + [
    _rule("H1 harvest", lambda w: w.faced in _harvestable(w), Action.DO, ("faced",) + _TOOLS),
    _craft_rule(Action.MAKE_WOOD_PICKAXE, "wood_pickaxe", {"wood": 1}, False),
    _craft_rule(Action.MAKE_STONE_PICKAXE, "stone_pickaxe", {"wood": 1, "stone": 1}, False),
    _craft_rule(Action.MAKE_IRON_PICKAXE, "iron_pickaxe", {"wood": 1, "coal": 1, "iron": 1}, True),
    _craft_rule(Action.MAKE_WOOD_SWORD, "wood_sword", {"wood": 1}, False),
    _craft_rule(Action.MAKE_STONE_SWORD, "stone_sword", {"wood": 1, "stone": 1}, False),
    _craft_rule(Action.MAKE_IRON_SWORD, "iron_sword", {"wood": 1, "coal": 1, "iron": 1}, True),
    _place_rule(Action.PLACE_TABLE, "wood", Material.TABLE),
    _place_rule(Action.PLACE_FURNACE, "stone", Material.FURNACE),
    _place_rule(Action.PLACE_STONE, "stone", Material.STONE),
    _place_rule(Action.PLACE_PLANT, "sapling", Material.PLANT, needs_grass=True),
    _move_rule("H seek harvestable", lambda w: w.toward(_harvestable(w)), ("visible",) + _TOOLS),
    _rule("H explore", lambda w: True, Action.RIGHT),
]

_PACIFIST = [_move_rule("P0 flee", _flee, ("adjacent",))] + _guards(True) + _LADDER_LOW + [
    _rule("P plant sapling", lambda w: w.inv("sapling") >= 1 and w.faced is Material.GRASS, Action.PLACE_PLANT,
          ("faced", "inventory_sapling")),
    _rule("P explore", lambda w: True, Action.LEFT),
]

_TABLES = {
    PolicyProfile.DIAMOND_SEEKER: tuple(_DIAMOND),
    PolicyProfile.ITEM_HOARDER: tuple(_HOARDER),
    PolicyProfile.PACIFIST: tuple(_PACIFIST),
}


def rule_table(profile: PolicyProfile | str) -> tuple[Rule, ...]:
    return _TABLES[profile_from_name(profile)]


def fired_rule(profile: PolicyProfile | str, state: State) -> tuple[int, Rule, Action]:
    """Rank, rule and action of the first holding rule."""
    view = View(state)
    for rank, rule in enumerate(rule_table(profile)):
        a = rule.fire(view)
        if a is not None:
            return rank, rule, a
    raise AssertionError("rule table has no default rule")


@lru_cache(maxsize=200_000)
def _decide(profile: PolicyProfile, state: State) -> Action:
    return fired_rule(profile, state)[2]


def decide(profile: PolicyProfile | str, state: State) -> Action:
    return _decide(profile_from_name(profile), state)


@lru_cache(maxsize=200_000)
def _preferences(profile: PolicyProfile, state: State) -> tuple[int, ...]:
    table = _TABLES[profile]
    view = View(state)
    r = len(table)
    scores = [-1] * len(Action)
    for rank, rule in enumerate(table):
        a = rule.fire(view)
        if a is not None and scores[a] < 0:
            scores[a] = r - rank
    return tuple(scores)


def preferences(profile: PolicyProfile | str, state: State) -> tuple[int, ...]:
    """Score per action (indexed by ``Action``): ``R - rank`` of the best
    holding rule that emits it, ``-1`` when none does."""
    return _preferences(profile_from_name(profile), state)


def argmax(scores) -> Action:
    best = max(scores)
    return Action(scores.index(best))


def spread(scores) -> int:
    held = [s for s in scores if s >= 0]
    return max(held) - min(held)


@dataclass(frozen=True)
class Step:
    state: State
    action: Action
    prefs: tuple[int, ...]


def rollout(profile: PolicyProfile | str, state: State, horizon: int) -> list[Step]:
    if not 1 <= horizon <= 64:
        raise ValueError("horizon must be in [1, 64]")
    profile = profile_from_name(profile)
    out = []
    for _ in range(horizon):
        a = decide(profile, state)
        out.append(Step(state, a, preferences(profile, state)))
        state = step(state, a)
    return out


def emittable_actions(profile: PolicyProfile | str) -> frozenset[Action]:
    """Every action some rule of the table can emit."""
    out: set[Action] = set()
    for rule in rule_table(profile):
        out |= rule.emits
    return frozenset(out)
