import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import CHICAGO, COLUMBUS, DALLAS, NEW_YORK, TOY_STREAM
from ringsum.errors import SnapshotError
from ringsum.tsum import Counter, Tsum


def run(stream, m):
    s = Tsum(m)
    for c in stream:
        s.update(c)
    return s


class NaiveSpaceSaving:
    """Reference implementation: linear scans, same eviction order."""

    def __init__(self, m):
        self.m = m
        self.rows = {}

    def update(self, cell):
        if cell in self.rows:
            f, d = self.rows[cell]
            self.rows[cell] = (f + 1, d)
        elif len(self.rows) < self.m:
            self.rows[cell] = (1, 0)
        else:
            victim = min(self.rows, key=lambda c: (self.rows[c][0], -self.rows[c][1], c))
            f = self.rows.pop(victim)[0]
            self.rows[cell] = (f + 1, f)

    def triples(self):
        return sorted((c, f, d) for c, (f, d) in self.rows.items())


def triples(s):
    return sorted((c.cell, c.f, c.delta) for c in s.counters())


# Worked example

def test_toy_stream_initial_state():
    s = run(TOY_STREAM, 3)
    assert triples(s) == sorted([(DALLAS, 3, 0), (COLUMBUS, 2, 0), (NEW_YORK, 1, 0)])


def test_toy_stream_after_eviction():
    s = run(TOY_STREAM + [CHICAGO], 3)
    assert triples(s) == sorted([(DALLAS, 3, 0), (COLUMBUS, 2, 0), (CHICAGO, 2, 1)])
    assert s.total_frequency() == 7
    assert s.frequency_upper_bound(NEW_YORK) == 2
    assert s.frequency_upper_bound(DALLAS) == 3


def test_toy_top_k():
    s = run(TOY_STREAM, 3)
    assert [(c.cell, c.f) for c in s.top_k(2)] == [(DALLAS, 3), (COLUMBUS, 2)]
    assert len(s.top_k(10)) == 3


def test_single_cell_repeated():
    s = run([7] * 25, 1)
    assert triples(s) == [(7, 25, 0)]


def test_empty_sketch():
    s = Tsum(4)
    assert s.top_k(3) == []
    assert s.total_frequency() == 0
    assert s.frequency_upper_bound(1) == 0
    assert s.min_f == 0


def test_top_k_rejects_nonpositive():
    with pytest.raises(ValueError):
        Tsum(3).top_k(0)


def test_capacity_must_be_positive():
    with pytest.raises(ValueError):
        Tsum(0)


def test_tie_break_largest_delta_then_lowest_cell():
    s = Tsum(3)
    for c in [5, 6, 7, 8]:  # 8 evicts 5 (all f=1, delta 0, lowest cell)
        s.update(c)
    assert s.get(8) == Counter(8, 2, 1)
    assert s.min_counter() == Counter(6, 1, 0)
    s.update(6)
    s.update(9)  # evicts 7 (only f=1 left)
    assert 7 not in s and s.get(9) == Counter(9, 2, 1)
    # Now 6, 8 and 9 share f=2; 8 and 9 carry delta 1, so the lower of them goes.
    s.update(10)
    assert 8 not in s and s.get(10) == Counter(10, 3, 2)


def test_upper_bound_of_unstored_is_min_f():
    s = run([1, 1, 2, 3, 3, 3, 4], 3)
    assert s.frequency_upper_bound(99) == s.min_f == min(c.f for c in s.counters())


# Guarantees against exact counts

streams = st.lists(st.integers(0, 40), min_size=1, max_size=400)


@given(streams, st.integers(1, 12))
def test_matches_naive_reference(stream, m):
    ref = NaiveSpaceSaving(m)
    s = Tsum(m)
    for c in stream:
        ref.update(c)
        s.update(c)
        assert s.n == sum(f for f, _ in ref.rows.values())
    assert triples(s) == ref.triples()


@given(streams, st.integers(1, 12))
def test_space_saving_guarantees(stream, m):
    s = Tsum(m)
    exact = {}
    for i, c in enumerate(stream, start=1):
        s.update(c)
        exact[c] = exact.get(c, 0) + 1
        assert s.total_frequency() == i
        assert s.max_delta() <= i / m
        assert len(s) <= m
    N = len(stream)
    for c in s.counters():
        assert c.f - c.delta <= exact[c.cell] <= c.f
        assert 0 <= c.delta <= c.f
    for cell, n in exact.items():
        if n > N / m:
            assert cell in s
        if cell not in s:
            assert n <= s.frequency_upper_bound(cell)


def test_large_random_stream_invariants(rng):
    cells = (rng.zipf(1.5, 100_000) % 500).tolist()
    s = run(cells, 50)
    exact = np.bincount(cells, minlength=500)
    assert s.total_frequency() == 100_000
    assert s.max_delta() <= 100_000 / 50
    for c in s.counters():
        assert c.f - c.delta <= exact[c.cell] <= c.f
    for cell in np.flatnonzero(exact > 100_000 / 50):
        assert int(cell) in s


# Copies and serialization

def test_copy_is_independent():
    s = run(TOY_STREAM, 3)
    t = s.copy()
    t.update(CHICAGO)
    assert s == run(TOY_STREAM, 3)
    assert s != t


@given(streams, st.integers(1, 12))
def test_binary_round_trip(stream, m):
    s = run(stream, m)
    back = Tsum.from_bytes(s.to_bytes())
    assert back == s
    assert back.to_bytes() == s.to_bytes()
    # The restored summary keeps evolving identically.
    for c in [1, 2, 3, 50, 51]:
        s.update(c)
        back.update(c)
    assert back == s


def test_csv_round_trip():
    s = run(TOY_STREAM + [CHICAGO], 3)
    text = s.to_csv()
    assert text.splitlines()[0] == "cell_id,f,delta"
    assert Tsum.from_csv(text, 3) == s


def test_from_bytes_rejects_garbage():
    with pytest.raises(SnapshotError):
        Tsum.from_bytes(b"nope")
    data = bytearray(run(TOY_STREAM, 3).to_bytes())
    data[0:4] = b"XXXX"
    with pytest.raises(SnapshotError):
        Tsum.from_bytes(bytes(data))
