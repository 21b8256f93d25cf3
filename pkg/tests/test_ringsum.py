import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ringsum.errors import InvalidSpecError, SnapshotError
from ringsum.grid import (GridConfig, RingSpec, build_ring_cell_table, cell_center, default_ring_spec,
                          great_circle_km, haversine_km, ring_overlap_matrix, ring_transfer_matrix)
from ringsum.ringsum import RingCenter, Ringsum, Strategy, add_to_rings, initialize_rings, ring_lik_input
from ringsum.tsum import Tsum

G10 = GridConfig(cell_size_deg=10.0)
SPEC10 = default_ring_spec(G10, 0.6, 10, min_radius_km=300.0)


def hist_oracle(center, cells, g, spec):
    """Per-ring count of occurrences around ``center`` from raw haversine distances."""
    lat0, lon0 = cell_center(center, g)
    out = np.zeros(spec.R)
    for c in cells:
        if c == center:
            continue
        d = float(haversine_km(lat0, lon0, *cell_center(c, g)))
        for i, (lo, hi) in enumerate(zip(spec.inner_km, spec.radii)):
            if lo < d <= hi:
                out[i] += 1
                break
    return out


def feed(rs, cells):
    for c in cells:
        rs.update(int(c))
    return rs


# Update procedure

def test_occurrence_at_stored_center():
    rs = feed(Ringsum(3, SPEC10, G10), [100, 110, 300])
    before = {c.cell: c for c in rs.centers()}
    rs.update(110)
    after = {c.cell: c for c in rs.centers()}
    assert after[110].f == before[110].f + 1
    assert np.array_equal(after[110].phi, before[110].phi)
    for other in (100, 300):
        expect = before[other].phi + hist_oracle(other, [110], G10, SPEC10)
        assert np.array_equal(after[other].phi, expect)


def test_single_center_repeated_cell():
    rs = feed(Ringsum(1, SPEC10, G10), [42] * 30)
    (c,) = rs.centers()
    assert (c.cell, c.f, c.delta) == (42, 30, 0)
    assert not c.phi.any()


@given(st.lists(st.integers(0, 647), min_size=1, max_size=300), st.integers(1, 8))
def test_center_projection_equals_tsum(stream, m):
    rs = feed(Ringsum(m, SPEC10, G10), stream)
    ts = Tsum(m)
    for c in stream:
        ts.update(c)
    assert rs.tsum == ts
    assert rs.total_frequency() == len(stream)


@given(st.lists(st.integers(0, 647), min_size=1, max_size=200))
def test_rings_exact_without_evictions(stream):
    rs = feed(Ringsum(648, SPEC10, G10), stream)
    assert rs.stats.evictions == 0
    for c in rs.centers():
        first = stream.index(c.cell)
        assert np.array_equal(c.phi, hist_oracle(c.cell, stream[first + 1:], G10, SPEC10))


def test_add_to_rings_examples():
    spec = RingSpec((1000.0, 2000.0, 4000.0))
    center = RingCenter(300, 1, 0, np.zeros(3))
    near = next(c for c in range(648) if 1000 < great_circle_km(300, c, G10) <= 2000)
    far = next(c for c in range(648) if great_circle_km(300, c, G10) > 4000)
    add_to_rings(center, near, spec, G10)
    assert center.phi.tolist() == [0.0, 1.0, 0.0]
    add_to_rings(center, far, spec, G10)
    assert center.phi.tolist() == [0.0, 1.0, 0.0]
    with pytest.raises(ValueError):
        add_to_rings(center, 300, spec, G10)


def test_add_to_rings_histogram(rng):
    cells = rng.integers(0, 648, size=10_000).tolist()
    center = RingCenter(333, 1, 0, np.zeros(SPEC10.R))
    for c in cells:
        if c != 333:
            add_to_rings(center, c, SPEC10, G10)
    assert np.array_equal(center.phi, hist_oracle(333, cells, G10, SPEC10))


# Ring transfer

@pytest.mark.parametrize("transfer", ["cells", "planar"])
def test_transfer_identity_at_same_center(transfer, rng):
    phi = rng.uniform(0, 50, SPEC10.R)
    out = initialize_rings(200, RingCenter(200, 5, 0, phi), SPEC10, G10, transfer)
    assert np.allclose(out, phi, atol=1e-9)


@pytest.mark.parametrize("transfer", ["cells", "planar"])
def test_transfer_disjoint_is_zero(transfer):
    spec = RingSpec((500.0, 1000.0, 1500.0))
    a, b = 0, 647
    assert great_circle_km(a, b, G10) > 2 * spec.D
    out = initialize_rings(b, RingCenter(a, 5, 0, np.full(3, 7.0)), spec, G10, transfer)
    assert not out.any()


@pytest.mark.parametrize("transfer", ["cells", "planar"])
@given(old=st.integers(0, 647), new=st.integers(0, 647),
       phi=st.lists(st.floats(0, 1e4), min_size=SPEC10.R, max_size=SPEC10.R))
def test_transfer_never_creates_mass(transfer, old, new, phi):
    out = initialize_rings(new, RingCenter(old, 1, 0, np.array(phi)), SPEC10, G10, transfer)
    assert np.all(out >= 0)
    assert out.sum() <= sum(phi) * (1 + 1e-12) + 1e-9


def test_transfer_rejects_unknown_mode():
    with pytest.raises(InvalidSpecError):
        initialize_rings(1, RingCenter(0, 1, 0, np.zeros(SPEC10.R)), SPEC10, G10, "teleport")


def test_planar_transfer_matches_monte_carlo(rng):
    # Each old ring's mass spreads uniformly over its area; the share landing in
    # each new ring is the area fraction of the intersection.
    spec = RingSpec((100.0, 250.0, 400.0))
    s = 180.0
    M = ring_transfer_matrix(s, spec)
    n = 400_000
    r = spec.D * np.sqrt(rng.uniform(size=n))
    t = rng.uniform(0, 2 * np.pi, size=n)
    x, y = r * np.cos(t), r * np.sin(t)
    old_ring = np.searchsorted(spec.radii, r)
    new_ring = np.searchsorted(spec.radii, np.hypot(x - s, y))
    for k in range(spec.R):
        in_k = old_ring == k
        for i in range(spec.R):
            assert M[i, k] == pytest.approx(np.mean(new_ring[in_k] == i), abs=0.01)
    assert np.allclose(ring_overlap_matrix(0.0, spec), np.diag(spec.ring_areas))


def test_planar_first_ring_receives_nothing_from_empty_core():
    # Fig.-5 style: the new center sits in old ring 3; its first ring only
    # overlaps old ring 3, so with old ring 3 empty it starts at zero.
    spec = RingSpec((100.0, 200.0, 400.0))
    M = ring_transfer_matrix(300.0, spec)
    assert M[0, 0] == 0.0 and M[0, 1] == 0.0 and M[0, 2] > 0
    phi_old = np.array([5.0, 9.0, 0.0])
    assert (M @ phi_old)[0] == 0.0


# Strategies

def _stream(n, seed, center=330, alpha=1.0, g=G10):
    from ringsum.model import center_distances
    w = center_distances(center, g) ** -alpha
    return np.random.default_rng(seed).choice(g.n_cells, size=n, p=w / w.sum()).tolist()


def test_standard_work_bound():
    m = 20
    stream = _stream(5000, 1)
    rs = feed(Ringsum(m, SPEC10, G10), stream)
    assert rs.stats.distance_computations <= (m - 1) * len(stream)
    assert rs.stats.transfers == rs.stats.evictions > 0
    assert len(rs.stats.eviction_positions) == rs.stats.evictions


def test_fixed_center_freezes_center_set():
    stream = _stream(4000, 2)
    rs = Ringsum(20, SPEC10, G10, Strategy.FIXED_CENTER, theta=0.25, expected_total_len=len(stream))
    frozen_set = None
    for i, c in enumerate(stream, start=1):
        rs.update(c)
        if i == 1000:
            frozen_set = {x.cell for x in rs.centers()}
        if i > 1000:
            assert {x.cell for x in rs.centers()} == frozen_set
    assert rs.frozen
    assert rs.total_frequency() == len(stream)
    assert rs.tsum.total_frequency() + rs.stats.dropped == len(stream)


def test_fixed_center_needs_horizon():
    with pytest.raises(InvalidSpecError):
        Ringsum(5, SPEC10, G10, Strategy.FIXED_CENTER)


def test_fixed_center_ring_counts_match_standard_arithmetic():
    # After the freeze, every occurrence still lands in the rings of every center.
    stream = _stream(3000, 3)
    rs = Ringsum(10, SPEC10, G10, Strategy.FIXED_CENTER, theta=0.3, expected_total_len=len(stream))
    feed(rs, stream[:900])
    before = {c.cell: c.phi.copy() for c in rs.centers()}
    assert rs.frozen is False
    feed(rs, stream[900:])
    for c in rs.centers():
        # Integer increments on top of fractional transferred mass: compare to rounding.
        assert np.allclose(c.phi, before[c.cell] + hist_oracle(c.cell, stream[900:], G10, SPEC10),
                           rtol=0, atol=1e-9)


def test_light_update_restarts_rings():
    stream = _stream(3000, 4)
    rs = Ringsum(10, SPEC10, G10, Strategy.LIGHT_UPDATE)
    for c in stream:
        evicting = c not in rs and len(rs) == 10
        rs.update(c)
        if evicting:
            assert not rs.center(c).phi.any()
    assert rs.stats.transfers == 0 and rs.stats.evictions > 0


def test_proximity_aware_keeps_centers_apart():
    # Centers entering by eviction must be farther than d_1 from every other
    # center; centers inserted while the summary still had room are not policed.
    spec = RingSpec((1200.0, 3000.0, 20016.0))
    stream = _stream(3000, 5, alpha=0.5)
    rs = Ringsum(15, spec, G10, Strategy.PROXIMITY_AWARE)
    entered = 0
    for c in stream:
        full = len(rs) == rs.capacity
        present = c in rs
        rs.update(c)
        if full and not present and c in rs:
            entered += 1
            others = [x.cell for x in rs.centers() if x.cell != c]
            assert all(great_circle_km(c, o, G10) > spec.radii_km[0] for o in others)
    assert rs.stats.rejections > 0 and entered > 0


def test_proximity_rejection_only_touches_rings():
    # A first ring wide enough to hold the neighbors of a 10-degree cell.
    spec = RingSpec((1200.0, 3000.0, 20016.0))
    rs = feed(Ringsum(2, spec, G10, Strategy.PROXIMITY_AWARE), [330, 330, 100])
    near = next(c for c in range(648) if c not in (330, 100) and great_circle_km(330, c, G10) <= 1200.0)
    state = {c.cell: (c.f, c.delta) for c in rs.centers()}
    rs.update(near)
    assert {c.cell: (c.f, c.delta) for c in rs.centers()} == state
    assert rs.stats.rejections == 1
    assert rs.total_frequency() == 4


# Likelihood input

def test_ring_lik_input_fields():
    table = build_ring_cell_table(G10, SPEC10)
    c = RingCenter(330, 5, 1, np.zeros(SPEC10.R))
    inp = ring_lik_input(c, table, SPEC10, G10)
    assert inp.f_center == 5 and not inp.phi.any()
    assert np.array_equal(inp.T, table.row(330))
    assert np.allclose(inp.d_exp, (SPEC10.inner_km + SPEC10.radii) / 2)
    assert inp.d_min == G10.d_min_km
    assert inp.f_total == 5


def test_ring_lik_input_tiny_table():
    spec = RingSpec((50.0,))
    table = build_ring_cell_table(G10, spec)
    inp = ring_lik_input(RingCenter(330, 4, 0, np.array([2.0])), table, spec, G10)
    assert not inp.T.any()
    assert inp.f_total == 6.0


def test_ring_lik_input_rederived_from_state():
    table = build_ring_cell_table(G10, SPEC10)
    rs = feed(Ringsum(12, SPEC10, G10), _stream(2000, 6))
    for c in rs.centers():
        inp = rs.ring_lik_input(c, table)
        assert np.array_equal(inp.phi, c.phi)
        assert inp.f_center == c.f
        assert inp.f_total == pytest.approx(c.f + c.phi.sum())
        assert np.array_equal(inp.T, table.counts[c.cell])


# Snapshots

@pytest.mark.parametrize("strategy", list(Strategy))
def test_binary_round_trip(strategy):
    stream = _stream(1500, 7)
    kw = {"expected_total_len": 3000} if strategy is Strategy.FIXED_CENTER else {}
    rs = feed(Ringsum(8, SPEC10, G10, strategy, theta=0.3, **kw), stream[:1000])
    back = Ringsum.from_bytes(rs.to_bytes(), G10)
    assert back.state_key() == rs.state_key()
    assert back.to_bytes() == rs.to_bytes()
    feed(rs, stream[1000:])
    feed(back, stream[1000:])
    assert back.state_key() == rs.state_key()


def test_csv_snapshot_layout():
    rs = feed(Ringsum(3, SPEC10, G10), [1, 2, 3, 4])
    lines = rs.to_csv().splitlines()
    assert lines[0].startswith("# m=3 R=%d strategy=standard" % SPEC10.R)
    assert lines[1].split(",")[:4] == ["cell_id", "f", "delta", "phi_1"]
    assert len(lines) == 2 + 3


def test_from_bytes_rejects_garbage():
    with pytest.raises(SnapshotError):
        Ringsum.from_bytes(b"\x00" * 10, G10)
    data = feed(Ringsum(3, SPEC10, G10), [1, 2]).to_bytes()
    with pytest.raises(SnapshotError):
        Ringsum.from_bytes(data[:-3], G10)
