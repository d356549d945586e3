import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harness_lab import HeightField, Kernel, Region, evolve, evolve_seen_from_origin, generate_events
from harness_lab.engine import EventStream, sample_batch
from harness_lab.errors import (
    InitialMismatch,
    InvalidWindow,
    OriginOutsideCarrier,
    StreamMismatch,
    UnsupportedRegion,
)
from harness_lab.stats import estimate

from conftest import random_field, random_gamma, reference_forward, reference_shift


def test_generation_is_deterministic(nn2):
    r = Region.box(2, 2)
    a = generate_events(nn2, r, (0, 3), 11)
    b = generate_events(nn2, r, (0, 3), 11)
    c = generate_events(nn2, r, (0, 3), 12)
    assert np.array_equal(a.time, b.time) and np.array_equal(a.eps, b.eps)
    assert not np.array_equal(a.time[:5], c.time[:5])


def test_times_sorted_distinct_inside_window(nn1):
    ev = generate_events(nn1, Region.box(20, 1), (-2.0, 3.0), 5)
    assert np.all(np.diff(ev.time) > 0)
    assert ev.time[0] > -2.0 and ev.time[-1] <= 3.0


def test_invalid_window(nn1):
    with pytest.raises(InvalidWindow):
        generate_events(nn1, Region.box(1, 1), (2.0, 1.0), 0)
    with pytest.raises(InvalidWindow):
        generate_events(nn1, Region.box(1, 1), (0.0, math.inf), 0)


def test_nested_carriers_share_streams(nn2):
    big, small = Region.box(4, 2), Region.box(2, 2)
    ev_big = generate_events(nn2, big, (0, 4), 3)
    ev_small = generate_events(nn2, small, (0, 4), 3)
    sub = ev_big.restrict(small)
    assert np.array_equal(sub.time, ev_small.time)
    assert np.array_equal(sub.eps, ev_small.eps)
    assert np.array_equal(sub.site, ev_small.site)
    with pytest.raises(StreamMismatch):
        ev_small.restrict(big)


def test_restrict_window_matches_slice(nn1):
    ev = generate_events(nn1, Region.box(5, 1), (0, 10), 8)
    sub = ev.restrict(window=(2.0, 6.0))
    mask = (ev.time >= 2.0) & (ev.time <= 6.0)
    assert np.array_equal(sub.time, ev.time[mask])
    with pytest.raises(StreamMismatch):
        ev.restrict(window=(-1.0, 6.0))


def test_counts_are_poisson(nn1):
    r = Region.box(200, 1)
    ev = generate_events(nn1, r, (0.0, 5.0), 21)
    per = np.bincount(ev.site, minlength=len(r.sites))
    assert estimate(per).within(5.0, 4)
    assert abs(per.var(ddof=1) - 5.0) < 4 * math.sqrt(2 * 25 / len(per) + 5 / len(per))


@pytest.mark.parametrize("noise", ["gaussian", "uniform", "rademacher"])
def test_noise_laws_are_centered_unit_variance(noise):
    k = Kernel.nearest_neighbor(1, noise=noise)
    ev = generate_events(k, Region.box(500, 1), (0, 20), 4)
    e = estimate(ev.eps)
    assert abs(e.mean) < 4 * e.stderr
    assert estimate(ev.eps ** 2).within(1.0, 4)
    if noise == "rademacher":
        assert set(np.unique(ev.eps)) == {-1.0, 1.0}
    if noise == "uniform":
        assert np.abs(ev.eps).max() <= math.sqrt(3)


def test_jump_marks_follow_kernel(range2):
    ev = generate_events(range2, Region.box(300, 1), (0, 10), 9)
    offs = ev.jump_offsets()[:, 0]
    for o, p in range2.weights:
        assert estimate((offs == o[0]).astype(float)).within(p, 4)


def test_jsonl_roundtrip(tmp_path, nn2):
    r = random_gamma(Region.box(1, 2, pinned=[(0, 0)]), nn2, 1)
    ev = generate_events(nn2, r, (0, 2), 5)
    ev.to_jsonl(tmp_path / "ev.jsonl")
    back = EventStream.from_jsonl(tmp_path / "ev.jsonl")
    assert back.region == r and back.kernel == nn2
    for a in ("site", "time", "eps", "jump"):
        assert np.array_equal(getattr(back, a), getattr(ev, a))


@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("pinned", [False, True])
def test_forward_matches_reference(d, pinned):
    k = Kernel.nearest_neighbor(d, noise="uniform", sigma=0.7)
    r = Region.box(2, d, pinned=[(0,) * d] if pinned else [])
    r = random_gamma(r, k, 3)
    z = random_field(r, 4)
    ev = generate_events(k, r, (0, 3), 10 + d)
    got = evolve(ev, k, r, z).final.as_dict()
    want = reference_forward(ev, k, r, z)
    assert max(abs(got[s] - want[s]) for s in r.sites) < 1e-12


def test_forward_free_mode_matches_reference(range2):
    r = Region.box(4, 1, boundary="free", pinned=[(-2,)])
    z = random_field(r, 2)
    ev = generate_events(range2, r, (0, 4), 1)
    got = evolve(ev, range2, r, z).final.as_dict()
    want = reference_forward(ev, range2, r, z)
    assert max(abs(got[s] - want[s]) for s in r.sites) < 1e-12


def test_single_site_hand_computed(nn1):
    r = Region((0,), (0,))
    ev = generate_events(nn1, r, (0, 3), 2)
    assert len(ev) > 0
    got = evolve(ev, nn1, r, HeightField(r.sites, [5.0])).final[(0,)]
    assert got == pytest.approx(float(ev.eps[-1]))


def test_pinned_sites_stay_zero(nn2):
    r = Region.box(2, 2, pinned=[(0, 0), (1, 1)])
    ev = generate_events(nn2, r, (0, 5), 3)
    fin = evolve(ev, nn2, r, random_field(r, 0)).final
    assert fin[(0, 0)] == 0.0 and fin[(1, 1)] == 0.0


def test_evolve_errors(nn1):
    r = Region.box(2, 1, pinned=[(0,)])
    ev = generate_events(nn1, r, (0, 1), 0)
    with pytest.raises(InitialMismatch):
        evolve(ev, nn1, r, HeightField(r.sites, np.ones(5)))
    with pytest.raises(InitialMismatch):
        evolve(ev, nn1, r, HeightField.zeros(Region.box(1, 1)))
    with pytest.raises(InvalidWindow):
        evolve(ev, nn1, r, HeightField.zeros(r), sample_times=[2.0])
    free = Region.box(2, 1, boundary="free")
    with pytest.raises(UnsupportedRegion):
        evolve(generate_events(nn1, free, (0, 1), 0), nn1, free, HeightField.zeros(free))


def test_snapshots(nn1):
    r = Region.box(3, 1)
    ev = generate_events(nn1, r, (0, 4), 6)
    z = random_field(r, 1)
    tr = evolve(ev, nn1, r, z, sample_times=[0.0, 2.0, 4.0])
    assert np.array_equal(tr.snapshots[0].values, z.values)
    mid = evolve(ev.restrict(window=(0, 2.0)), nn1, r, z).final
    assert np.allclose(tr.snapshots[1].values, mid.values, atol=0)
    assert np.array_equal(tr.snapshots[2].values, tr.final.values)


def test_evolve_restricts_a_larger_stream(nn2):
    big, small = Region.box(3, 2), Region.box(1, 2)
    ev = generate_events(nn2, big, (0, 3), 4)
    z = random_field(small, 2)
    a = evolve(ev, nn2, small, z).final.values
    b = evolve(generate_events(nn2, small, (0, 3), 4), nn2, small, z).final.values
    assert np.array_equal(a, b)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.floats(-3, 3), st.floats(-3, 3))
def test_linearity_in_initial_and_boundary_data(seed, a, b):
    k = Kernel.nearest_neighbor(2)
    r = Region.box(1, 2)
    r1, r2 = random_gamma(r, k, seed), random_gamma(r, k, seed + 1)
    z1, z2 = random_field(r, seed), random_field(r, seed + 1)
    ev = generate_events(k, r, (0, 2), seed)
    comb = r.with_gamma({s: a * r1.boundary_value(s) + b * r2.boundary_value(s)
                         for s in r.shell(k)})
    lhs = evolve(ev, k, comb, z1.scaled(a) + z2.scaled(b), "no-noise").final.values
    rhs = (a * evolve(ev, k, r1, z1, "no-noise").final.values
           + b * evolve(ev, k, r2, z2, "no-noise").final.values)
    assert np.allclose(lhs, rhs, atol=1e-12 * (1 + abs(a) + abs(b)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31))
def test_noise_and_data_decompose(seed):
    k = Kernel.nearest_neighbor(1, noise="rademacher")
    r = random_gamma(Region.box(3, 1), k, seed)
    z = random_field(r, seed)
    ev = generate_events(k, r, (0, 3), seed)
    full = evolve(ev, k, r, z).final.values
    noise_only = evolve(ev, k, r.with_gamma(None), HeightField.zeros(r)).final.values
    data_only = evolve(ev, k, r, z, "no-noise").final.values
    assert np.allclose(full, noise_only + data_only, atol=1e-12)


def test_seen_from_origin_matches_reference(nn1):
    r = Region.box(3, 1, boundary="free")
    z = random_field(r, 5)
    z = HeightField(r.sites, z.values - z[(0,)])
    ev = generate_events(nn1, r, (0, 3), 2)
    got = evolve_seen_from_origin(ev, nn1, r, z).final.as_dict()
    want = reference_shift(ev, nn1, r, z)
    assert max(abs(got[s] - want[s]) for s in r.sites) < 1e-12
    assert got[(0,)] == 0.0


def test_seen_from_origin_fixed_boundary(nn2):
    r = random_gamma(Region.box(1, 2), nn2, 4)
    z = random_field(r, 6)
    z = HeightField(r.sites, z.values - z[(0, 0)])
    ev = generate_events(nn2, r, (0, 2), 7)
    got = evolve_seen_from_origin(ev, nn2, r, z).final.as_dict()
    want = reference_shift(ev, nn2, r, z)
    assert max(abs(got[s] - want[s]) for s in r.sites) < 1e-12


def test_seen_from_origin_errors(nn1):
    r = Region.box(2, 1)
    ev = generate_events(nn1, r, (0, 1), 0)
    with pytest.raises(InitialMismatch):
        evolve_seen_from_origin(ev, nn1, r, HeightField(r.sites, np.ones(5)))
    off = Region((1,), (3,))
    with pytest.raises(OriginOutsideCarrier):
        evolve_seen_from_origin(generate_events(nn1, off, (0, 1), 0), nn1, off,
                                HeightField.zeros(off))
    pin = r.with_pinned([(0,)])
    with pytest.raises(UnsupportedRegion):
        evolve_seen_from_origin(generate_events(nn1, pin, (0, 1), 0), nn1, pin,
                                HeightField.zeros(pin))


def test_batch_single_site_law(nn1):
    # one site, flat boundary: after time u the value is the last noise if any event fired
    r = Region((0,), (0,))
    x = sample_batch(nn1, r, 0.7, 40_000, 3)[:, 0]
    assert estimate(x ** 2).within(1.0 - math.exp(-0.7), 3)
    assert np.mean(x == 0.0) == pytest.approx(math.exp(-0.7), abs=4 * math.sqrt(0.25 / 40_000))


def test_batch_agrees_with_keyed_streams(nn1):
    # two independent routes to the same law: superposed clock vs per-site keyed streams
    r = Region.box(2, 1, pinned=[(-2,)])
    n = 6000
    a = sample_batch(nn1, r, 1.5, n, 17, out_sites=[(0,), (1,)])
    b = np.array([[evolve(generate_events(nn1, r, (0, 1.5), 1000 + q), nn1, r,
                          HeightField.zeros(r)).final[s] for s in [(0,), (1,)]] for q in range(n)])
    for c in range(2):
        ea, eb = estimate(a[:, c] ** 2), estimate(b[:, c] ** 2)
        assert abs(ea.mean - eb.mean) < 4 * math.hypot(ea.stderr, eb.stderr)


def test_batch_deterministic_and_shift(nn1):
    r = Region.box(2, 1, boundary="free")
    a = sample_batch(nn1, r, 1.0, 3000, 5, dynamics="shift")
    b = sample_batch(nn1, r, 1.0, 3000, 5, dynamics="shift")
    assert np.array_equal(a, b)
    assert np.all(a[:, r.index[(0,)]] == 0.0)
    with pytest.raises(UnsupportedRegion):
        sample_batch(nn1, r, 1.0, 10, 5)
    with pytest.raises(InitialMismatch):
        sample_batch(nn1, Region.box(2, 1), 1.0, 10, 5, x0=np.zeros((3, 5)))
