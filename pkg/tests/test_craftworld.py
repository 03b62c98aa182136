import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import edit_sets, states
from fax.craftworld import (
    S0, S_DMD, S_LOWDRINK, S_TREE, S_ZMB, SLOTS, Action, ConflictingAtoms, Direction,
    Edit, Material, ParseError, UnknownSlot, ValueOutOfRange, apply_edit, make_edits,
    named_state, parse_edit, parse_state, render_state, slot_domain, state_from_json,
    state_to_json, step,
)


def test_fixtures_match_definitions():
    assert S0.facing is Direction.UP and S0.daylight
    assert all(S0.cell(dx, dy) is Material.GRASS for dx in range(-4, 5) for dy in range(-3, 4))
    assert all(v == 0 for v in S0.inventory.values())
    assert (S0.health, S0.food, S0.drink, S0.energy) == (9, 9, 9, 9)
    assert apply_edit(S0, make_edits({"map(center,up1)": "tree"})) == S_TREE
    assert S_DMD.faced is Material.DIAMOND and S_DMD.item("iron_pickaxe") == 1
    assert S_ZMB.faced is Material.ZOMBIE
    assert S_LOWDRINK.faced is Material.WATER and S_LOWDRINK.drink == 1


def test_apply_edit_identity_and_errors():
    assert apply_edit(S0, ()) == S0
    with pytest.raises(ValueOutOfRange):
        apply_edit(S0, make_edits({"inventory_wood": 12}))
    with pytest.raises(UnknownSlot):
        parse_edit("inventory_gold=1")
    with pytest.raises(ConflictingAtoms):
        make_edits([Edit("health", 1), Edit("health", 2)])


def test_agent_cell_accepts_walkable_only():
    assert apply_edit(S0, make_edits({"map(center,center)": "sand"})).cell(0, 0) is Material.SAND
    with pytest.raises(ValueOutOfRange):
        apply_edit(S0, make_edits({"map(center,center)": "tree"}))


@given(states, edit_sets())
def test_edit_changes_exactly_named_slots(s, e):
    out = apply_edit(s, e)
    changed = set(out.diff(s))
    named = {a.slot for a in e if s.get(a.slot) != a.value}
    assert changed == named
    for a in e:
        assert out.get(a.slot) == a.value


def test_step_examples():
    after = step(S_TREE, Action.DO)
    assert after.faced is Material.GRASS and after.item("wood") == 1
    assert step(S0, Action.UP) == S0
    assert step(S0, Action.MAKE_WOOD_PICKAXE) == S0
    assert step(S_LOWDRINK, Action.DO).drink == 2


def test_step_moves_world_opposite_direction():
    s = apply_edit(S0, make_edits({"map(right1,center)": "stone", "facing": "right"}))
    assert step(s, Action.RIGHT).facing is Direction.RIGHT
    assert step(s, Action.RIGHT) == s  # stone blocks
    moved = step(apply_edit(S0, make_edits({"map(right2,center)": "stone"})), Action.RIGHT)
    assert moved.cell(1, 0) is Material.STONE


def test_adjacent_zombie_hurts():
    assert step(S_ZMB, Action.NOOP).health == 8


@settings(max_examples=50)
@given(states, st.lists(st.sampled_from(list(Action)), max_size=30))
def test_gauges_stay_bounded(s, actions):
    for a in actions:
        s = step(s, a)
        assert all(0 <= s.get(g) <= 9 for g in ("health", "food", "drink", "energy"))
        assert all(0 <= v <= 9 for v in s.inventory.values())


@given(states, st.sampled_from(list(Action)))
def test_step_is_pure(s, a):
    assert step(s, a) == step(s, a)


def test_render_counts():
    lines = render_state(S0).splitlines()
    assert not [l for l in lines if l.startswith("map(")]
    assert len([l for l in lines if l.startswith("inventory_")]) == 12
    assert len([l for l in lines if l.split(":")[0] in ("health", "food", "drink", "energy", "daylight")]) == 5
    assert "map(center,up1): tree" in render_state(S_TREE)


@pytest.mark.parametrize("s", [S0, S_TREE, S_DMD, S_ZMB, S_LOWDRINK])
def test_render_parse_fixtures(s):
    assert parse_state(render_state(s)) == s


@given(states)
def test_render_parse_bijection(s):
    assert parse_state(render_state(s)) == s
    assert state_from_json(state_to_json(s)) == s


def test_parse_errors():
    assert parse_state("") == S0
    with pytest.raises(ParseError):
        parse_state("map(left9,up1): tree")
    with pytest.raises(ParseError):
        parse_state("health: ten")


def test_named_states_resolve():
    assert named_state("S_DMD") == S_DMD
    assert named_state("random:3") == named_state("random:3")
    assert named_state("diamond_60") is not None
    with pytest.raises(ParseError):
        named_state("nowhere")


def test_slot_domains_nonempty():
    for i in range(len(SLOTS)):
        dom = slot_domain(i)
        assert len(dom) >= 2 and len(set(dom)) == len(dom)
