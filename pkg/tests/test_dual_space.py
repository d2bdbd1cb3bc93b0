import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asepkit import dual_space as ds
from asepkit import exact_oracle as eo
from asepkit.lattice_model import tasep_law, torus_for


def mono(coeffs, degree, d=1, free=False, sides=None):
    return ds.MonomialFunction(degree, d, coeffs, free, sides)


def random_hardcore(rng, degree, n_terms=4, span=7, d=1):
    coeffs = {}
    while len(coeffs) < n_terms:
        pts = set()
        while len(pts) < degree:
            pts.add(tuple(int(c) for c in rng.integers(-span, span + 1, size=d)))
        coeffs[ds.canon(pts)] = float(rng.standard_normal())
    return mono(coeffs, degree, d)


@st.composite
def hardcore_functions(draw, degree, d=1, span=5):
    n = draw(st.integers(1, 4))
    coeffs = {}
    for _ in range(n):
        pts = draw(st.lists(st.tuples(*[st.integers(-span, span)] * d),
                            min_size=degree, max_size=degree, unique=True))
        coeffs[ds.canon(pts)] = draw(st.floats(-2, 2, allow_nan=False).filter(lambda v: abs(v) > 1e-3))
    return mono(coeffs, degree, d)


# ------------------------------------------------------------ decomposition

def test_decompose_current():
    g = ds.decompose_local_function(lambda e: (e[0] - 0.5) * (e[1] - 0.5), [0, 1])
    assert g.degrees == [2]
    assert g[2].coeffs == {((0,), (1,)): pytest.approx(0.25)}
    assert g.mean == 0.0


def test_decompose_single_site():
    g = ds.decompose_local_function(lambda e: e[0] - 0.5, [0])
    assert g.degrees == [1]
    assert g[1].get(((0,),)) == pytest.approx(0.5)


def test_decompose_constant():
    g = ds.decompose_local_function(np.full(8, 3.0), [0, 1, 2])
    assert g.degrees == []
    assert g.mean == 3.0


def test_decompose_incomplete_table():
    with pytest.raises(ValueError):
        ds.decompose_local_function(np.ones(7), [0, 1, 2])
    with pytest.raises(ValueError):
        ds.decompose_local_function([1, 2, np.nan, 4], [0, 1])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=16, max_size=16))
def test_reconstruction(vals):
    window = [0, 1, 3, 4]
    g = ds.decompose_local_function(np.array(vals), window)
    assert np.allclose(ds.reconstruct(g, window), vals, atol=1e-12)


def test_orthonormality_by_enumeration():
    window = list(range(12))
    states = np.arange(2 ** 12)
    occ = ((states[:, None] >> np.arange(12)) & 1).astype(float)
    xi = 2 * (occ - 0.5)
    rng = np.random.default_rng(5)
    for _ in range(20):
        a = rng.random(12) < 0.3
        b = rng.random(12) < 0.3
        pa = np.prod(xi[:, a], axis=1)
        pb = np.prod(xi[:, b], axis=1)
        assert np.mean(pa * pb) == (1.0 if np.array_equal(a, b) else 0.0)


# -------------------------------------------------------- semi-inner product

W1 = {((0,), (1,)): 0.25}


def test_current_norm():
    w = mono(W1, 2)
    assert ds.semi_inner_product(w, w) == pytest.approx(1 / 16)


def test_current_norm_by_covariance_sum():
    # brute force: sum over shifts of Cov(tau_z w, w) on a window
    window = list(range(-3, 5))
    k = len(window)
    states = np.arange(2 ** k)
    occ = ((states[:, None] >> np.arange(k)) & 1).astype(float)
    w = lambda x: (occ[:, window.index(x)] - 0.5) * (occ[:, window.index(x + 1)] - 0.5)
    tot = sum(np.mean(w(z) * w(0)) for z in range(-2, 3))
    assert tot == pytest.approx(1 / 16)


def test_gradient_has_zero_norm(rng):
    h = random_hardcore(rng, 2)
    g = h.shift((3,)) - h
    assert abs(ds.semi_inner_product(g, g)) < 1e-12


def test_cross_degree_orthogonal(rng):
    f = random_hardcore(rng, 1)
    g = random_hardcore(rng, 2)
    assert ds.semi_inner_product(f, g) == 0.0


def test_graded_pairing(rng):
    a, b = random_hardcore(rng, 2), random_hardcore(rng, 3)
    G = ds.GradedFunction({2: a, 3: b})
    assert ds.semi_inner_product(G, G) == pytest.approx(
        ds.semi_inner_product(a, a) + ds.semi_inner_product(b, b))


# ------------------------------------------------------------------ types

def test_coinciding_points_rejected():
    with pytest.raises(ValueError):
        mono({((0,), (0,)): 1.0}, 2)
    mono({((0,), (0,)): 1.0}, 2, free=True)


@settings(max_examples=30, deadline=None)
@given(st.permutations([(0,), (2,), (5,)]))
def test_symmetric_under_permutation(perm):
    f = mono({((0,), (2,), (5,)): 1.5}, 3)
    assert f(*perm) == 1.5


# --------------------------------------------------------------- operators

def test_S_degree_one_is_half_laplacian():
    f = mono({((0,),): 1.0, ((1,),): 2.0}, 1)
    Sf = ds.apply_S_hardcore(f)
    for x in range(-3, 5):
        lap = sum(f((x + s,)) - f((x,)) for s in (1, -1))
        assert Sf((x,)) == pytest.approx(0.5 * lap)


def test_S_preserves_degree(rng):
    for n in (1, 2, 3):
        f = random_hardcore(rng, n)
        assert ds.apply_S_hardcore(f).degree == n
        assert ds.apply_Aplus_hardcore(f).degree == n + 1
        if n > 1:
            assert ds.apply_Aplus_adjoint(f).degree == n - 1


def test_zero_inputs():
    z2, z3 = mono({}, 2), mono({}, 3)
    assert len(ds.apply_Aplus_hardcore(z2)) == 0
    assert len(ds.apply_Aplus_adjoint(z3)) == 0


def test_translation_covariance(rng):
    f = random_hardcore(rng, 2)
    z = (4,)
    assert ds.apply_Aplus_hardcore(f.shift(z)).close_to(ds.apply_Aplus_hardcore(f).shift(z))
    assert ds.apply_S_hardcore(f.shift(z)).close_to(ds.apply_S_hardcore(f).shift(z))


@pytest.fixture(scope="module")
def xi8():
    law = tasep_law(1)
    gen = eo.build_generator_matrix(torus_for(law, (8,)), law)
    return eo.xi_parts(gen, 0.5)


@pytest.mark.parametrize("name,index", [("S", 1), ("A+", 2), ("A+*", 3)])
def test_operators_match_generator(xi8, name, index):
    M = ds.operator_matrix_on_torus((8,), name)
    target = xi8[index] if name != "A+*" else -xi8[3]
    assert np.abs(M - target).max() < 1e-12


def test_generator_decomposition(xi8):
    L, S, Ap, Am, A0 = xi8
    assert np.abs(A0).max() < 1e-12
    Sm = ds.operator_matrix_on_torus((8,), "S")
    Pm = ds.operator_matrix_on_torus((8,), "A+")
    Qm = ds.operator_matrix_on_torus((8,), "A+*")
    assert np.abs(L - (Sm + Pm - Qm)).max() < 1e-12


def test_current_image_matches_oracle(xi8):
    # A+ w1 on the torus against the conjugated generator column sums
    L = xi8[0]
    f = mono({((0,), (1,)): 0.25}, 2, sides=(8,))
    out = ds.apply_Aplus_hardcore(f)
    col = L[:, 0b11] * 0.25
    deg3 = [m for m in range(256) if bin(m).count("1") == 3]
    for m in deg3:
        pts = tuple((i,) for i in range(8) if (m >> i) & 1)
        assert out.get(pts) == pytest.approx(col[m], abs=1e-12)


def test_adjointness_random_pairs(rng):
    worst = 0.0
    for _ in range(100):
        f = random_hardcore(rng, 2, n_terms=3, span=4)
        g = random_hardcore(rng, 3, n_terms=3, span=4)
        a = ds.semi_inner_product(ds.apply_Aplus_hardcore(f), g)
        b = ds.semi_inner_product(f, ds.apply_Aplus_adjoint(g))
        worst = max(worst, abs(a - b))
    assert worst < 1e-12


@settings(max_examples=40, deadline=None)
@given(hardcore_functions(2), hardcore_functions(3))
def test_adjointness_property(f, g):
    a = ds.semi_inner_product(ds.apply_Aplus_hardcore(f), g)
    b = ds.semi_inner_product(f, ds.apply_Aplus_adjoint(g))
    assert a == pytest.approx(b, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(hardcore_functions(2))
def test_S_is_nonpositive(f):
    assert ds.semi_inner_product(f, ds.apply_S_hardcore(f)) <= 1e-12


def test_AstarA_nonnegative():
    w = mono(W1, 2)
    assert ds.semi_inner_product(w, ds.apply_Aplus_adjoint(ds.apply_Aplus_hardcore(w))) >= 0


def test_free_and_hardcore_agree_off_diagonal(rng):
    f = random_hardcore(rng, 2, span=6)
    diff = ds.apply_Delta_free(f) - ds.apply_S_hardcore(f).like(
        ds.apply_S_hardcore(f).coeffs, free=True)
    for s, v in diff.coeffs.items():
        if abs(v) < 1e-14:
            continue
        gap = min(abs(a[0] - b[0]) for a, b in itertools.combinations(s, 2))
        assert gap <= 1


def test_free_laplacian_plane_wave():
    # on an 8x8 periodic window, a symmetric plane wave is an eigenfunction
    N = 8
    p = 2 * np.pi * np.array([1, 3]) / N
    coeffs = {}
    for x, y in itertools.product(range(N), repeat=2):
        s = ds.canon([(x,), (y,)])
        coeffs[s] = coeffs.get(s, 0.0)
    for x, y in itertools.product(range(N), repeat=2):
        s = ds.canon([(x,), (y,)])
        val = np.cos(p[0] * x + p[1] * y) + np.cos(p[0] * y + p[1] * x)
        coeffs[s] = val / 2 if x != y else val / 2
    F = mono(coeffs, 2, free=True, sides=(N,))
    out = ds.apply_Delta_free(F)
    omega = sum(4 * np.sin(q / 2) ** 2 for q in p)
    for s, v in F.coeffs.items():
        assert out.get(s) == pytest.approx(-0.5 * omega * v, abs=1e-12)


def test_free_raising_conserves_mass(rng):
    F = random_hardcore(rng, 2).like(random_hardcore(rng, 2).coeffs, free=True)
    G = ds.apply_Aplus_free(F)
    tot = sum(ds.weight(s) * v for s, v in G.coeffs.items())
    assert abs(tot) < 1e-12


# ---------------------------------------------------------------- T and R

def test_RT_identity(rng):
    for _ in range(10):
        f = random_hardcore(rng, 3, span=10)
        assert ds.restrict_R(ds.extend_T(f)).close_to(f)


def test_T_vanishes_on_E3():
    f = mono({((0,), (1,), (2,)): 1.0, ((-1,), (0,), (1,)): 2.0}, 3)
    F = ds.extend_T(f)
    assert F((0,), (0,), (1,)) == 0.0


def test_T_averages_isolated_double():
    f = mono({((-1,), (20,)): 2.0, ((1,), (20,)): 4.0}, 2)
    F = ds.extend_T(f)
    assert F((0,), (0,)) == 0.0     # degree 2: the pair is not a spectator situation
    g = mono({((-1,), (0,), (20,)): 2.0, ((0,), (1,), (20,)): 4.0}, 3)
    G = ds.extend_T(g)
    assert G((0,), (0,), (20,)) == pytest.approx((2.0 + 4.0) / 2)


def test_TR_not_identity():
    F = mono({((0,), (0,), (9,)): 1.0}, 3, free=True)
    assert not ds.extend_T(ds.restrict_R(F)).close_to(F)


def test_dirichlet_comparison_sampled(rng):
    lam = 0.1
    ratios = []
    for _ in range(15):
        f = random_hardcore(rng, 3, n_terms=5, span=6)
        F = ds.extend_T(f)
        hard = lam * ds.inner_product(f, f) - ds.inner_product(f, ds.apply_S_hardcore(f))
        free = lam * ds.inner_product(F, F) - ds.inner_product(F, ds.apply_Delta_free(F))
        ratios.append(free / hard)
    assert max(ratios) < 10


def test_free_adjointness(rng):
    for _ in range(30):
        F = random_hardcore(rng, 2, n_terms=3, span=3)
        F = F.like({**F.coeffs, ((1,), (1,)): 0.7}, free=True)
        G = random_hardcore(rng, 3, n_terms=3, span=3)
        G = G.like({**G.coeffs, ((0,), (0,), (1,)): -0.4, ((2,), (2,), (2,)): 0.3}, free=True)
        a = ds.semi_inner_product(ds.apply_Aplus_free(F), G)
        b = ds.semi_inner_product(F, ds.apply_Aplus_free_adjoint(G))
        assert a == pytest.approx(b, abs=1e-12)
