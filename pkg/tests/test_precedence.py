import itertools

from hypothesis import given, strategies as st

from lifeguard import GossipUpdate, State
from lifeguard.core.membership import MembershipTable, overrides
from lifeguard.types import MemberRecord
from oracles import beats, check_precedence, check_refutation, fold, precedence_ref


def test_override_matches_reference_pairwise():
    space = [(k, i) for k in State for i in range(4)]
    for new, old in itertools.product(space, space):
        rec = MemberRecord("x", old[0], old[1])
        assert overrides(GossipUpdate(new[0], "x", new[1], "a"), rec) == beats(new, old)
    assert overrides(GossipUpdate(State.DEAD, "x", 0, "a"), None)


def test_small_multisets_permutation_invariant():
    checked, failures = check_precedence(max_size=3, max_inc=2)
    assert checked > 0 and failures == []


def test_refutation_small():
    checked, failures = check_refutation(max_size=3, max_inc=2)
    assert failures == []


updates = st.lists(st.tuples(st.sampled_from(list(State)), st.integers(0, 6)), min_size=1, max_size=6)


@given(updates, st.randoms())
def test_merge_order_insensitive(ms, rnd):
    shuffled = list(ms)
    rnd.shuffle(shuffled)
    assert fold(ms) == fold(shuffled) == precedence_ref(ms)


@given(updates)
def test_idempotent(ms):
    assert fold(ms) == fold(ms + ms)


def test_live_count_and_order_follow_states():
    import random
    t = MembershipTable("me", random.Random(1))
    t.put("me", State.ALIVE, 0, 0)
    for m in "abcd":
        t.put(m, State.ALIVE, 0, 0)
    assert t.live == 5 and sorted(t.order) == list("abcd")
    t.put("b", State.SUSPECT, 0, 1)
    assert t.live == 5 and "b" in t.order
    t.put("b", State.DEAD, 0, 2)
    assert t.live == 4 and "b" not in t.order
    t.put("b", State.ALIVE, 1, 3)
    assert t.live == 5 and t.order.count("b") == 1
