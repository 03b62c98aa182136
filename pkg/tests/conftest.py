import random

import pytest
from hypothesis import strategies as st

from fax.craftworld import SLOTS, Edit, random_state, slot_domain


@pytest.fixture
def rng():
    return random.Random(1234)


states = st.integers(0, 10_000).map(random_state)


@st.composite
def edit_sets(draw, max_atoms=3):
    idx = draw(st.lists(st.integers(0, len(SLOTS) - 1), max_size=max_atoms, unique=True))
    return tuple(Edit(SLOTS[i], draw(st.sampled_from(slot_domain(i)))) for i in idx)
