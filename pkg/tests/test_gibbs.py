import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harness_lab import HeightField, Kernel, Region, build_model, log_density, sample_field
from harness_lab.errors import (
    AsymmetricKernel,
    DimensionMismatch,
    NegativeRadicand,
    NoEscape,
    NonGaussianNoise,
    NonNestedBoxes,
    RegionError,
    SelfLoopKernel,
    UnsupportedRegion,
)
from harness_lab.gibbs import (
    as_fields,
    conditional_mean_weights,
    coupled_nested_batch,
    coupled_nested_fields,
    detailed_balance_statistic,
    detailed_balance_table,
    green_power_series,
    probe_battery,
    stationary_covariance,
    stationary_model,
)
from harness_lab.stats import estimate


def ruin_variance(i: int, m: int) -> float:
    """Expected visits to i of the simple walk from i, killed at 0 and m+1."""
    return 2.0 * i * (m + 1 - i) / (m + 1)


@pytest.mark.parametrize("m", [3, 10, 50])
def test_pinned_line_matches_gamblers_ruin(nn1, m):
    model = build_model(nn1, Region.box(m, 1, pinned=[(0,)]))
    for i in range(1, m + 1):
        q = model.free_sites.index((i,))
        assert model.covariance[q, q] == pytest.approx(ruin_variance(i, m), abs=1e-10)


def test_covariance_equals_power_series(nn2, range2):
    for k, r in ((nn2, Region.box(2, 2)), (range2, Region.box(3, 1, pinned=[(1,)]))):
        model = build_model(k, r)
        assert np.abs(green_power_series(k, r) - model.covariance).max() < 1e-10


def test_lyapunov_matches_gibbs_when_reversible(nn1, nn2):
    for k, r in ((nn1, Region.box(3, 1)), (nn2, Region.box(1, 2, pinned=[(0, 0)]))):
        free, C = stationary_covariance(k, r)
        model = build_model(k, r)
        assert free == model.free_sites
        assert np.abs(C - model.covariance).max() < 1e-10


def test_free_with_pin_is_not_reversible(nn1):
    r = Region.box(3, 1, boundary="free", pinned=[(0,)])
    with pytest.raises(AsymmetricKernel):
        build_model(nn1, r)
    m = stationary_model(nn1, r)
    assert m.source == "lyapunov" and np.all(np.linalg.eigvalsh(m.covariance) > 0)


def test_build_model_errors(nn1):
    with pytest.raises(AsymmetricKernel):
        build_model(Kernel.from_mapping(1, {1: 0.7, -1: 0.3}), Region.box(2, 1))
    with pytest.raises(SelfLoopKernel):
        build_model(Kernel.from_mapping(1, {0: 0.2, 1: 0.4, -1: 0.4}), Region.box(2, 1))
    with pytest.raises(NoEscape):
        build_model(nn1, Region.box(2, 1, boundary="free"))
    with pytest.raises(RegionError):
        build_model(nn1, Region.box(1, 1).with_gamma({(-2,): 1.0, (2,): 0.0}))
    with pytest.raises(UnsupportedRegion):
        stationary_covariance(nn1, Region.box(2, 1, pinned=[(0,)]), "shift")


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 2), st.integers(1, 3), st.booleans())
def test_covariance_is_symmetric_positive(d, r, pinned):
    k = Kernel.nearest_neighbor(d)
    model = build_model(k, Region.box(r, d, pinned=[(0,) * d] if pinned else []))
    C = model.covariance
    assert np.allclose(C, C.T, atol=0)
    assert np.all(np.linalg.eigvalsh(C) > 0)
    assert np.all(C >= -1e-15)
    assert np.allclose(model.precision @ C, np.eye(model.n), atol=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 2), st.integers(1, 3))
def test_green_function_grows_with_the_box(d, r):
    k = Kernel.nearest_neighbor(d)
    small = build_model(k, Region.box(r, d))
    big = build_model(k, Region.box(r + 1, d))
    idx = [big.free_sites.index(s) for s in small.free_sites]
    assert np.all(big.covariance[np.ix_(idx, idx)] >= small.covariance - 1e-13)


@pytest.mark.parametrize("which", ["nn1", "nn2", "range2"])
def test_harness_weights_are_kernel_weights(which, request):
    k = request.getfixturevalue(which)
    r = Region.box(3, k.d, pinned=[(0,) * k.d])
    model = build_model(k, r)
    free = set(model.free_sites)
    for s in model.free_sites:
        got = conditional_mean_weights(model, s)
        want = {}
        for o, p in k.weights:
            t = tuple(a + b for a, b in zip(s, o))
            if t in free:
                want[t] = want.get(t, 0.0) + p
        assert set(got) == set(want)
        assert all(abs(got[t] - want[t]) < 1e-12 for t in want)


def test_conditional_mean_from_samples(nn1):
    # regression of x_0 on its neighbours recovers the kernel weights
    model = build_model(nn1, Region.box(3, 1))
    x = sample_field(model, 200_000, 4)
    a = model.free_sites.index((0,))
    b, c = model.free_sites.index((-1,)), model.free_sites.index((1,))
    coef, *_ = np.linalg.lstsq(x[:, [b, c]], x[:, a], rcond=None)
    assert np.allclose(coef, [0.5, 0.5], atol=0.01)


def test_sampling_covariance_entrywise(nn1):
    model = build_model(nn1, Region.box(2, 1, pinned=[(0,)]))
    x = sample_field(model, 100_000, 11)
    for a in range(model.n):
        for b in range(a, model.n):
            assert estimate(x[:, a] * x[:, b]).within(model.covariance[a, b], 4)


def test_log_density_and_fields(nn1):
    r = Region.box(2, 1, pinned=[(0,)])
    model = build_model(nn1, r)
    x = np.array([1.0, 0.5, -0.5, 2.0])
    assert log_density(model, x) == pytest.approx(-0.5 * x @ model.precision @ x)
    h = as_fields(model, x[None, :])[0]
    assert h[(0,)] == 0.0 and log_density(model, h) == pytest.approx(log_density(model, x))
    with pytest.raises(DimensionMismatch):
        log_density(model, np.ones(3))


def test_probe_battery(nn1):
    model = build_model(nn1, Region.box(2, 1))
    names, specs = probe_battery(model, "local")
    full, _ = probe_battery(model, "full")
    assert names[0] == "1" and len(names) == 1 + 5 + 5 + 4
    assert len(full) == 1 + 5 + 15


def test_detailed_balance_controls(nn1):
    r = Region.box(2, 1)
    model = build_model(nn1, r)
    ok = detailed_balance_statistic(model, nn1, r, 1.0, 40_000, 3)
    assert ok < 4.5
    tab = detailed_balance_table(model, nn1, r, 1.0, 2000, 3)
    assert np.allclose(tab.asymmetry, -tab.asymmetry.T)
    scaled = type(model)(nn1, r, model.free_sites, model.precision / 2, model.covariance * 2,
                         model.factor * math.sqrt(2))
    assert detailed_balance_statistic(model, nn1, r, 1.0, 40_000, 3, initial=scaled) > 5
    assert detailed_balance_statistic(model, nn1, r, 0.0, 100, 3) == 0.0
    with pytest.warns(NonGaussianNoise):
        detailed_balance_statistic(model, nn1.with_noise("uniform"), r, 1.0, 100, 3)


def test_coupled_nested_fields(nn2):
    boxes = [Region.box(r, 2) for r in (1, 2, 3)]
    f = coupled_nested_fields(nn2, boxes, (-3.0, 0.0), [(0, 0), (1, 0)], 5)
    assert f.xi.shape == (3, 2) and f.telescoping < 1e-12
    assert np.all(np.diff(f.sq_weights, axis=0) >= -1e-15)
    with pytest.raises(NonNestedBoxes):
        coupled_nested_fields(nn2, boxes[::-1], (-3.0, 0.0), [(0, 0)], 5)
    with pytest.raises(NonNestedBoxes):
        coupled_nested_fields(nn2, [Region.box(1, 2, pinned=[(0, 0)]), boxes[1]], (-1.0, 0.0),
                              [(1, 0)], 5)
    with pytest.warns(NonGaussianNoise):
        coupled_nested_fields(nn2.with_noise("uniform"), boxes, (-1.0, 0.0), [(0, 0)], 5)


def test_coupled_fields_have_box_laws(nn1):
    boxes = [Region.box(r, 1) for r in (1, 2, 4)]
    batch = coupled_nested_batch(nn1, boxes, (-3.0, 0.0), [(0,)], 4000, 2)
    for m in range(3):
        e = estimate(batch.xi[:, m, 0] ** 2 - batch.dual[:, m, 0] ** 2)
        assert abs(e.mean) < 4 * e.stderr
        assert estimate(batch.xi[:, m, 0] ** 2).within(batch.sq_weights[:, m, 0].mean(), 4)


def test_negative_radicand_is_detected(monkeypatch, nn1):
    import harness_lab.gibbs as G
    real = G.K.backward_all

    def shrink(mass, *a):
        b = real(mass, *a)
        return b * (0.5 if mass.shape[0] > 10 else 1.0)

    monkeypatch.setattr(G.K, "backward_all", shrink)
    with pytest.raises(NegativeRadicand):
        coupled_nested_fields(nn1, [Region.box(1, 1), Region.box(6, 1)], (-5.0, 0.0), [(0,)], 1)
