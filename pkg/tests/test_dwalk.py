import itertools
import math

import numpy as np
import pytest
import scipy.integrate as si
import scipy.linalg as sl
from hypothesis import given, settings
from hypothesis import strategies as st

from harness_lab import (
    DWalkLaw,
    Kernel,
    MonteCarlo,
    Uniformization,
    difference_variance,
    green_at_origin,
    occupancy_probability,
    potential_kernel,
    residual_tail,
    window_variance,
)
from harness_lab.dwalk import d_jump_distribution, default_radius, occupancy_table, symmetry_group
from harness_lab.errors import AsymmetricKernel, SelfLoopKernel, TruncationTooSmall

# Watson's integral for the simple random walk on Z^3 (expected visits to the origin)
WATSON_G3 = 1.516386059151978


def full_generator(law: DWalkLaw, radius: int):
    """Unlumped generator on the box {-R..R}^d; jumps leaving the box are dropped."""
    d = law.d
    states = list(itertools.product(range(-radius, radius + 1), repeat=d))
    idx = {s: q for q, s in enumerate(states)}
    Q = np.zeros((len(states), len(states)))
    for s in states:
        table = d_jump_distribution(law, s)
        for o, r in table.items():
            if not any(o):
                continue
            t = tuple(a + b for a, b in zip(s, o))
            Q[idx[s], idx[s]] -= r
            if t in idx:
                Q[idx[s], idx[t]] += r
    return states, idx, Q


def expm_occupancy(law, start, u, radius):
    states, idx, Q = full_generator(law, radius)
    p0 = np.zeros(len(states))
    p0[idx[tuple(start)]] = 1.0
    return float((p0 @ sl.expm(Q * u))[idx[(0,) * law.d]])


def test_d_jump_table_nearest_neighbor_1d(nn1):
    law = DWalkLaw.from_kernel(nn1)
    assert d_jump_distribution(law, (0,)) == pytest.approx({(-2,): 0.25, (0,): 0.5, (2,): 0.25})
    assert d_jump_distribution(law, (3,)) == pytest.approx({(-1,): 1.0, (1,): 1.0})
    assert law.origin_rate == pytest.approx(0.5) and law.off_rate == pytest.approx(2.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=4))
def test_origin_law_is_a_probability(ws):
    offs = [1, -1, 2, -2][:len(ws)]
    tot = sum(ws)
    k = Kernel.from_mapping(1, {o: w / tot for o, w in zip(offs, ws)})
    law = DWalkLaw.from_kernel(k)
    assert sum(r for _, r in law.at_origin) == pytest.approx(1.0)
    mu = dict(law.at_origin)
    for j, r in mu.items():
        assert mu.get((-j[0],), 0.0) == pytest.approx(r)


# both routes kill mass leaving the same box, so they agree regardless of leakage
@pytest.mark.parametrize("d,u", [(1, 0.5), (1, 3.0), (2, 2.0)])
def test_occupancy_matches_dense_expm(d, u):
    law = DWalkLaw.from_kernel(Kernel.nearest_neighbor(d))
    R = 12 if d == 1 else 8
    for start in [(0,) * d, (1,) + (0,) * (d - 1), (2,) * d]:
        got = occupancy_probability(law, start, u, Uniformization(radius=R, tol=1e-2))
        want = expm_occupancy(law, start, u, R)
        assert got.value == pytest.approx(want, abs=1e-9)


def test_occupancy_asymmetric_kernel_matches_expm():
    k = Kernel.from_mapping(1, {1: 0.7, -1: 0.2, 2: 0.1})
    law = DWalkLaw.from_kernel(k)
    got = occupancy_probability(law, (1,), 2.0, Uniformization(radius=14))
    assert got.value == pytest.approx(expm_occupancy(law, (1,), 2.0, 14), abs=1e-9)


def test_window_variance_matches_quad_of_expm(nn1):
    law = DWalkLaw.from_kernel(nn1)
    states, idx, Q = full_generator(law, 14)
    z = idx[(0,)]
    f = lambda u: sl.expm(Q * u)[z, z]
    want, _ = si.quad(f, 0.0, 4.0, epsabs=1e-11)
    got = window_variance(law, 4.0, Uniformization(radius=14, tol=1e-2))
    assert got.value == pytest.approx(want, abs=1e-8)


def test_small_time_limit(nn3):
    law = DWalkLaw.from_kernel(nn3)
    u = 1e-3
    p = occupancy_probability(law, (0, 0, 0), u, Uniformization()).value
    # leaving the origin happens at rate origin_rate
    assert p == pytest.approx(math.exp(-law.origin_rate * u), abs=1e-6)
    assert occupancy_probability(law, (0, 0, 0), 0.0, Uniformization()).value == 1.0
    assert occupancy_probability(law, (1, 0, 0), 0.0, Uniformization()).value == 0.0


def test_monte_carlo_agrees_with_uniformization(nn2):
    law = DWalkLaw.from_kernel(nn2)
    mc = window_variance(law, 5.0, MonteCarlo(20_000, 3))
    un = window_variance(law, 5.0, Uniformization())
    assert abs(mc.value - un.value) < 4 * mc.error
    mcp = occupancy_probability(law, (1, 0), 3.0, MonteCarlo(20_000, 4))
    unp = occupancy_probability(law, (1, 0), 3.0, Uniformization())
    assert abs(mcp.value - unp.value) < 4 * mcp.error + 1e-12


def test_difference_variance_routes_agree(nn1):
    law = DWalkLaw.from_kernel(nn1)
    mc = difference_variance(law, (1,), 6.0, MonteCarlo(20_000, 9))
    un = difference_variance(law, (1,), 6.0, Uniformization())
    assert abs(mc.value - un.value) < 4 * mc.error
    assert difference_variance(law, (0,), 6.0, Uniformization()).value == 0.0


def test_truncation_too_small(nn1):
    law = DWalkLaw.from_kernel(nn1)
    with pytest.raises(TruncationTooSmall):
        window_variance(law, 50.0, Uniformization(radius=3, tol=1e-9))


def test_symmetry_group_sizes(nn1, nn2, nn3):
    assert len(symmetry_group(DWalkLaw.from_kernel(nn3))) == 48
    assert len(symmetry_group(DWalkLaw.from_kernel(nn2))) == 8
    asym = Kernel.from_mapping(1, {1: 0.9, -1: 0.1})
    assert len(symmetry_group(DWalkLaw.from_kernel(asym))) == 2  # D-walk rates are symmetric


def test_default_radius_grows_diffusively(nn3):
    law = DWalkLaw.from_kernel(nn3)
    assert default_radius(law, 64.0) > default_radius(law, 16.0) > default_radius(law, 1.0)


def test_known_potential_kernels(nn1, nn2):
    for i in range(1, 5):
        assert potential_kernel(nn1, (i,)) == pytest.approx(float(i), abs=1e-9)
    assert potential_kernel(nn2, (1, 0)) == pytest.approx(1.0, abs=1e-7)
    assert potential_kernel(nn2, (1, 1)) == pytest.approx(4.0 / math.pi, abs=1e-7)


def test_green_at_origin_3d(nn3):
    assert green_at_origin(nn3) == pytest.approx(WATSON_G3, abs=1e-10)


def test_completion_requires_reversibility():
    with pytest.raises(AsymmetricKernel):
        green_at_origin(Kernel.from_mapping(3, {(1, 0, 0): 0.5, (0, 1, 0): 0.25,
                                                (0, 0, -1): 0.25}))
    with pytest.raises(SelfLoopKernel):
        potential_kernel(Kernel.from_mapping(1, {0: 0.5, 1: 0.25, -1: 0.25}), (1,))


def test_window_variance_approaches_green(nn3):
    law = DWalkLaw.from_kernel(nn3)
    vals = [window_variance(law, t, Uniformization()).value for t in (10, 40, 160)]
    assert vals[0] < vals[1] < vals[2] < WATSON_G3


def test_residual_tail(nn1, nn3):
    law3 = DWalkLaw.from_kernel(nn3)
    u = Uniformization()
    fin = residual_tail(law3, 10.0, 40.0, u)
    direct = window_variance(law3, 40.0, u).value - window_variance(law3, 10.0, u).value
    assert fin.value == pytest.approx(direct, abs=1e-12)
    inf = residual_tail(law3, 10.0, math.inf, u)
    assert inf.value > fin.value > 0
    law1 = DWalkLaw.from_kernel(nn1)
    a = residual_tail(law1, 10.0, math.inf, u, site=(1,)).value
    b = residual_tail(law1, 40.0, math.inf, u, site=(1,)).value
    # tail of the difference version decays like s^(-1/2) in d=1
    assert a / b == pytest.approx(2.0, rel=0.1)
    with pytest.raises(ValueError):
        residual_tail(law3, 5.0, 5.0, u)


def test_occupancy_table_csv(tmp_path, nn1):
    law = DWalkLaw.from_kernel(nn1)
    tab = occupancy_table(law, (1,), [0.0, 1.0, 2.0], Uniformization(), tmp_path / "t.csv")
    assert tab.shape == (3, 4) and tab[0, 1] == 1.0 and tab[0, 2] == 0.0
    assert (tmp_path / "t.csv").read_text().startswith("u,p0,pi,error")
