import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asepkit.lattice_model import (
    Configuration, ModelError, TorusGeometry, apply_exchange, build_jump_law,
    instantaneous_current, renormalized_current, sample_bernoulli, tasep_law,
)


def test_tasep_law_d1():
    law = build_jump_law(1, [((1,), 1.0)])
    assert law.mean == (1.0,)
    assert law.rate(1) == 1.0 and law.rate(-1) == 0.0


def test_tasep_law_d2_mean_is_e1():
    law = build_jump_law(2, [((1, 0), 1), ((0, 1), 0.5), ((0, -1), 0.5)], asymmetric=True)
    assert law.mean == (1.0, 0.0)
    assert law == tasep_law(2)


@pytest.mark.parametrize("entries", [
    [((1,), -1.0)],
    [((0,), 1.0), ((1,), 1.0)],
    [],
    [((1,), 0.0)],
])
def test_bad_laws_rejected(entries):
    with pytest.raises(ModelError):
        build_jump_law(1, entries)


def test_symmetric_law_with_asymmetric_flag():
    with pytest.raises(ModelError, match="mean"):
        build_jump_law(1, [((1,), 0.5), ((-1,), 0.5)], asymmetric=True)


def test_torus_side_guard():
    with pytest.raises(ModelError):
        TorusGeometry((3,))
    TorusGeometry((4,))
    with pytest.raises(ModelError):
        TorusGeometry((5,), jump_range=2)


def test_bernoulli_mean_within_binomial_band():
    g = TorusGeometry((4096,))
    c = sample_bernoulli(g, 0.5, 7)
    sigma = np.sqrt(4096 * 0.25)
    assert abs(c.count - 2048) < 3 * sigma
    assert c.count == c.popcount() == c.occupations().sum()


@pytest.mark.parametrize("rho", [0.0, 1.0, -0.1, 1.5])
def test_degenerate_density_rejected(rho):
    with pytest.raises(ModelError):
        sample_bernoulli(TorusGeometry((8,)), rho, 0)


def test_sampling_deterministic():
    g = TorusGeometry((16, 16))
    assert sample_bernoulli(g, 0.3, 11) == sample_bernoulli(g, 0.3, 11)
    assert sample_bernoulli(g, 0.3, 11) != sample_bernoulli(g, 0.3, 12)


def test_exchange_moves_particle_and_is_involution():
    g = TorusGeometry((8,))
    occ = np.zeros(8, dtype=np.uint8)
    occ[2] = 1
    c = Configuration(g, occ)
    d = apply_exchange(c, 2, 3)
    assert d[2] == 0 and d[3] == 1
    assert apply_exchange(d, 2, 3) == c
    assert c[2] == 1      # not mutated


def test_exchange_equal_values_unchanged():
    g = TorusGeometry((8,))
    c = Configuration(g, np.ones(8))
    assert apply_exchange(c, 0, 5) == c


def test_exchange_same_site_rejected():
    c = Configuration(TorusGeometry((8,)), np.zeros(8))
    with pytest.raises(ModelError):
        apply_exchange(c, 3, 3)


def test_conservation_under_many_exchanges():
    g = TorusGeometry((256,))
    c = sample_bernoulli(g, 0.4, 3)
    n0 = c.count
    rng = np.random.default_rng(0)
    pairs = rng.integers(0, 256, size=(10 ** 6, 2))
    occ = c.occupations().astype(np.int64)
    for x, y in pairs[:2000]:
        if x != y:
            apply_exchange(c, int(x), int(y), inplace=True)
    assert c.popcount() == n0
    # the remaining moves on the unpacked field, same swap rule
    mask = pairs[:, 0] != pairs[:, 1]
    for x, y in pairs[mask]:
        occ[x], occ[y] = occ[y], occ[x]
    assert occ.sum() == n0


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=12, max_size=12),
       st.integers(0, 11), st.integers(0, 11))
def test_exchange_involution_property(bits, x, y):
    if x == y:
        return
    c = Configuration(TorusGeometry((12,)), bits)
    d = apply_exchange(c, x, y)
    assert apply_exchange(d, x, y) == c
    assert d.popcount() == c.popcount()
    assert d[x] == c[y] and d[y] == c[x]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=70, max_size=200))
def test_packing_roundtrip(bits):
    g = TorusGeometry((len(bits),))
    c = Configuration(g, bits)
    assert list(c.occupations()) == bits
    assert c.count == c.popcount() == sum(bits)


def test_instantaneous_current_values():
    g = TorusGeometry((6, 6))
    occ = np.zeros(36, dtype=np.uint8)
    occ[g.index((1, 1))] = 1
    c = Configuration(g, occ)
    assert instantaneous_current(c, (1, 1), 1) == 1.0
    assert instantaneous_current(c, (0, 1), 1) == 0.0
    assert instantaneous_current(c, (1, 1), 2) == -0.5
    assert instantaneous_current(c, (1, 0), 2) == 0.5
    with pytest.raises(ModelError):
        instantaneous_current(c, 0, 3)


def test_renormalized_current():
    g = TorusGeometry((6, 6))
    c = Configuration(g, np.ones(36))
    assert renormalized_current(c, 0, 1, 0.5) == 0.25
    assert renormalized_current(c, 0, 2, 0.5) == 0.0


def test_renormalized_current_zero_mean():
    g = TorusGeometry((4096,))
    vals = []
    for s in range(20):
        occ = sample_bernoulli(g, 0.5, s).occupations() - 0.5
        vals.append(occ * np.roll(occ, -1))
    vals = np.concatenate(vals)
    assert abs(vals.mean()) < 3 * vals.std() / np.sqrt(vals.size)
