"""Exact small-torus ground truth built on the full 2^N generator.

States are integers whose bit ``i`` is the occupation of site ``i``.
Functions of the configuration are vectors indexed by state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import integrate, special

from .lattice_model import ModelError

MAX_SITES = 16


@dataclass
class DenseGenerator:
    geometry: object
    law: object
    matrix: sp.csr_matrix  # acts on functions: (Lf)(s) = sum_s' L[s, s'] f(s')
    popcount: np.ndarray

    @property
    def n_sites(self):
        return self.geometry.n_sites

    @property
    def n_states(self):
        return self.matrix.shape[0]

    def sector(self, k):
        """Indices of states with ``k`` particles."""
        return np.flatnonzero(self.popcount == k)

    def occupation(self, i):
        return ((np.arange(self.n_states) >> i) & 1).astype(float)


def _popcount(states):
    out = np.zeros(states.shape, dtype=np.int64)
    s = states.copy()
    while s.any():
        out += s & 1
        s >>= 1
    return out


def build_generator_matrix(geometry, law, max_sites=MAX_SITES):
    n = geometry.n_sites
    if n > max_sites:
        raise ModelError(f"{n} sites exceed the exact-oracle cap of {max_sites}")
    states = np.arange(2 ** n, dtype=np.int64)
    rows, cols, vals = [], [], []
    diag = np.zeros(states.size)
    for z, rate in law.rates.items():
        for i in range(n):
            j = geometry.shift(i, z)
            active = ((states >> i) & 1 == 1) & ((states >> j) & 1 == 0)
            src = states[active]
            rows.append(src)
            cols.append(src ^ (1 << i) ^ (1 << j))
            vals.append(np.full(src.size, rate))
            diag[active] -= rate
    rows.append(states)
    cols.append(states)
    vals.append(diag)
    mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(states.size, states.size))
    mat.sum_duplicates()
    return DenseGenerator(geometry, law, mat, _popcount(states))


def bernoulli_weights(gen, rho):
    k = gen.popcount
    return rho ** k * (1 - rho) ** (gen.n_sites - k)


def check_stationarity(gen, rho=None, measure=None):
    """``max |(nu L)(s)|`` for the Bernoulli measure (or a supplied one)."""
    nu = bernoulli_weights(gen, rho) if measure is None else np.asarray(measure, float)
    return float(np.abs(gen.matrix.T @ nu).max())


# ---------------------------------------------------------------- semigroup

def _uniformization_rate(gen):
    return max(float(-gen.matrix.diagonal().min()), 1e-12) * 1.05


def poisson_tail(m, a):
    """P(Poisson(a) >= m), vectorised in ``m``."""
    m = np.asarray(m, dtype=float)
    out = np.ones_like(m)
    pos = m > 0
    out[pos] = special.gammainc(m[pos], a)
    return out


def _n_terms(a, tol):
    k = int(a + 12 * np.sqrt(a + 1) + 40)
    while special.gammainc(k + 1, a) > tol:  # P(Poisson(a) > k)
        k = int(k * 1.2) + 10
    return k


def expm_apply(gen, t, v, tol=1e-13):
    """``e^{tL} v`` by uniformization."""
    v = np.asarray(v, dtype=float)
    if t == 0:
        return v.copy()
    lam = _uniformization_rate(gen)
    a = lam * t
    kmax = _n_terms(a, tol)
    P = sp.identity(gen.n_states, format="csr") + gen.matrix / lam
    k = np.arange(kmax + 1)
    logw = -a + k * np.log(a) - special.gammaln(k + 1)
    w = np.exp(logw)
    out = w[0] * v
    term = v
    for i in range(1, kmax + 1):
        term = P @ term
        if w[i] > 0:
            out = out + w[i] * term
    return out


def _moments(gen, f, g, kmax):
    """Scalars ``E_nu[(P^k f) g]`` for k = 0..kmax (``g`` already weighted)."""
    lam = _uniformization_rate(gen)
    P = sp.identity(gen.n_states, format="csr") + gen.matrix / lam
    out = np.empty(kmax + 1)
    term = np.asarray(f, float)
    for k in range(kmax + 1):
        out[k] = term @ g
        term = P @ term
    return out, lam


class _DoubleIntegral:
    """``G(t) = int_0^t (t-u) <e^{uL} f ; g> du`` for many t at once."""

    def __init__(self, gen, f, g, nu, t_max, tol=1e-14):
        lam = _uniformization_rate(gen)
        self.kmax = _n_terms(lam * t_max, tol) + 1
        self.m, self.lam = _moments(gen, f, g * nu, self.kmax)
        self.mean_prod = float(f @ nu) * float(g @ nu)
        self.t_max = t_max

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, float))
        if t.max() > self.t_max * (1 + 1e-12):
            raise ValueError("time beyond the precomputed horizon")
        k = np.arange(self.kmax + 1)
        lam = self.lam
        out = np.empty(t.size)
        for n, tt in enumerate(t):
            a = lam * tt
            ck = (tt / lam) * poisson_tail(k + 1, a) - ((k + 1) / lam ** 2) * poisson_tail(k + 2, a)
            out[n] = ck @ self.m - 0.5 * tt * tt * self.mean_prod
        return out


# ------------------------------------------------------------ diffusivity

def _jump_indicator(gen, a, b):
    """Vector of ``eta_a (1 - eta_b)``."""
    return gen.occupation(a) * (1 - gen.occupation(b))


def exact_structure_function(gen, rho, t):
    """``S(x, t)`` for every torus site x (index order)."""
    nu = bernoulli_weights(gen, rho)
    eta0 = gen.occupation(0)
    out = np.empty(gen.n_sites)
    for x in range(gen.n_sites):
        ex = gen.occupation(x)
        out[x] = (expm_apply(gen, t, ex) - ex) @ (nu * eta0)
    return out


@dataclass
class ExactDiffusivity:
    t: float
    D: np.ndarray
    velocity: np.ndarray
    second_moment: np.ndarray


def exact_velocity(gen, rho):
    """``v`` from the translation-summed jump currents (constant in time)."""
    nu = bernoulli_weights(gen, rho)
    chi = rho * (1 - rho)
    nsum = sum(gen.occupation(y) for y in range(gen.n_sites))
    v = np.zeros(gen.geometry.d)
    for z, p in gen.law.rates.items():
        cz = sum(_jump_indicator(gen, y, gen.geometry.shift(y, z)) for y in range(gen.n_sites))
        cov = (cz * nsum) @ nu - (cz @ nu) * (nsum @ nu)
        v += p * np.array(z) * cov / gen.n_sites
    return v / chi


class ExactDiffusivityCurve:
    """Exact ``D(t)`` on a torus, with the displacement moments unfolded.

    The second moment ``sum_x x_i x_j S(x, t)`` is rebuilt from its second
    time derivative, a translation-summed jump-current correlation, so the
    torus wrap-around never enters.
    """

    def __init__(self, gen, rho, t_max):
        self.gen, self.rho = gen, rho
        self.chi = rho * (1 - rho)
        d = gen.geometry.d
        nu = bernoulli_weights(gen, rho)
        self.v = exact_velocity(gen, rho)
        self.first = self.chi * sum(p * np.outer(z, z) for z, p in gen.law.rates.items())
        self.terms = []
        N = gen.n_sites
        Cz = {z: sum(_jump_indicator(gen, y, gen.geometry.shift(y, z)) for y in range(N))
              for z in gen.law.rates}
        for z, p in gen.law.rates.items():
            for zp, pp in gen.law.rates.items():
                back = _jump_indicator(gen, 0, gen.geometry.index(np.negative(zp)))
                coef = p * pp * (np.outer(z, zp) + np.outer(zp, z))
                if np.allclose(coef, 0):
                    continue
                self.terms.append((coef, _DoubleIntegral(gen, Cz[z], back, nu, t_max)))
        self.d = d

    def second_moment(self, t):
        t = np.atleast_1d(np.asarray(t, float))
        out = t[:, None, None] * self.first[None]
        for coef, G in self.terms:
            out = out + G(t)[:, None, None] * coef[None]
        return out

    def tD(self, t):
        """``t * D(t)`` as an array of shape ``(len(t), d, d)``."""
        t = np.atleast_1d(np.asarray(t, float))
        F = self.second_moment(t)
        vv = self.chi * np.outer(self.v, self.v)
        return (F - (t ** 2)[:, None, None] * vv[None]) / (2 * self.chi)

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, float))
        return self.tD(t) / t[:, None, None]


def exact_diffusivity(gen, rho, t, method="unfolded"):
    """Exact ``D(rho, t)`` on the torus.

    ``method="unfolded"`` integrates the current correlations (no wrap-around);
    ``method="folded"`` sums ``x_i x_j S(x, t)`` with torus coordinates folded
    into ``[-N/2, N/2)`` exactly as the textbook definition reads.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    chi = rho * (1 - rho)
    if method == "unfolded":
        curve = ExactDiffusivityCurve(gen, rho, t)
        return ExactDiffusivity(t, curve(t)[0], curve.v, curve.second_moment(t)[0])
    if method != "folded":
        raise ValueError(method)
    S = exact_structure_function(gen, rho, t)
    X = gen.geometry.centred_coords().astype(float)
    v = (X * S[:, None]).sum(axis=0) / (chi * t)
    M = np.einsum("xi,xj,x->ij", X, X, S)
    D = (M - chi * np.outer(v, v) * t * t) / (2 * chi * t)
    return ExactDiffusivity(t, D, v, M)


# --------------------------------------------------------------- resolvent

def current_vector(gen, rho, direction=1):
    """Degree-two current ``sum_z p(z) z_l (eta_0-rho)(eta_z-rho)`` as a state vector."""
    g = gen.geometry
    out = np.zeros(gen.n_states)
    a0 = gen.occupation(0) - rho
    for z, p in gen.law.rates.items():
        c = z[direction - 1]
        if c:
            out += p * c * a0 * (gen.occupation(g.index(z)) - rho)
    return out


def translation_sum(gen, f_of_site):
    return sum(f_of_site(y) for y in range(gen.n_sites))


def _shifted_current(gen, rho, y, direction=1):
    g = gen.geometry
    out = np.zeros(gen.n_states)
    ay = gen.occupation(y) - rho
    for z, p in gen.law.rates.items():
        c = z[direction - 1]
        if c:
            out += p * c * ay * (gen.occupation(g.shift(y, z)) - rho)
    return out


def resolvent_pairing_full(gen, rho, lam, direction=1):
    """``<<w, (lam - L)^{-1} w>>`` in the configuration basis."""
    nu = bernoulli_weights(gen, rho)
    w = current_vector(gen, rho, direction)
    W = translation_sum(gen, lambda y: _shifted_current(gen, rho, y, direction))
    A = (lam * sp.identity(gen.n_states, format="csc") - gen.matrix.tocsc())
    u = spla.spsolve(A, w)
    return float((u * W) @ nu - (u @ nu) * (W @ nu))


# ------------------------------------------------------------- xi basis

def xi_matrix(gen, rho=0.5):
    """``X[s, m] = xi_Lambda(s)`` with Lambda the bitmask ``m``."""
    n = gen.n_sites
    s = np.arange(2 ** n)
    sd = np.sqrt(rho * (1 - rho))
    X = np.ones((2 ** n, 2 ** n))
    for i in range(n):
        col_has = ((s >> i) & 1).astype(bool)
        val = (((s >> i) & 1) - rho) / sd
        X[:, col_has] *= val[:, None]
    return X


def conjugate_xi(gen, rho=0.5, matrix=None):
    """Matrix of an operator in the xi basis: ``M[m, m'] = <xi_m, L xi_m'>``."""
    if gen.n_sites > 12:
        raise ModelError("xi-basis conjugation limited to 12 sites")
    X = xi_matrix(gen, rho)
    nu = bernoulli_weights(gen, rho)
    L = gen.matrix if matrix is None else matrix
    return X.T @ (nu[:, None] * (L @ X))


def xi_degree(gen):
    return gen.popcount


def xi_coefficients(gen, f, rho=0.5):
    """Coefficients ``<f, xi_m>`` of a state vector."""
    X = xi_matrix(gen, rho)
    return X.T @ (bernoulli_weights(gen, rho) * f)


def adjoint_matrix(gen, rho):
    """Generator of the time-reversed process (adjoint in L^2(nu))."""
    nu = bernoulli_weights(gen, rho)
    L = gen.matrix.tocoo()
    vals = L.data * nu[L.row] / nu[L.col]
    return sp.csr_matrix((vals, (L.col, L.row)), shape=L.shape)


def xi_parts(gen, rho=0.5):
    """``(L, S, A_plus, A_minus, A_0)`` in the xi basis.

    ``S`` is the symmetric part; the antisymmetric part is split by degree
    change so that ``L = S + A_0 + A_plus + A_minus`` with ``A_minus = -A_plus^T``.
    """
    L = conjugate_xi(gen, rho)
    S = 0.5 * (L + L.T)
    A = 0.5 * (L - L.T)
    deg = gen.popcount
    up = deg[:, None] == deg[None, :] + 1
    down = deg[:, None] + 1 == deg[None, :]
    same = deg[:, None] == deg[None, :]
    return L, S, np.where(up, A, 0.0), np.where(down, A, 0.0), np.where(same, A, 0.0)


def exact_resolvent_pairing(gen, lam, degree=None, rho=0.5, direction=1):
    """``<<w, (lam - L_n)^{-1} w>>`` on the torus, with ``L_n`` the
    compression of the generator to xi-degrees ``1..n`` (``None``: no cutoff)."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if degree is None:
        return resolvent_pairing_full(gen, rho, lam, direction)
    L = conjugate_xi(gen, rho)
    deg = gen.popcount
    keep = np.flatnonzero((deg >= 1) & (deg <= degree))
    w = xi_coefficients(gen, current_vector(gen, rho, direction), rho)
    W = xi_coefficients(gen, translation_sum(
        gen, lambda y: _shifted_current(gen, rho, y, direction)), rho)
    Lk = L[np.ix_(keep, keep)]
    M = lam * np.eye(keep.size) - Lk
    u = np.linalg.solve(M, w[keep])
    return float(u @ W[keep])


# ------------------------------------------------------- Laplace identity

@dataclass
class LaplaceCheck:
    lam: float
    lhs: float
    rhs: float
    rel_gap: float
    abserr: float


def laplace_identity_check(gen, rho, lam, direction=1, epsrel=1e-11, curve=None):
    """Both sides of ``int e^{-lam t} t D_ll(t) dt = 1/(2 lam^2) + <<w,(lam-L)^{-1}w>>/(chi lam^2)``.

    The left side integrates the exact ``t D(t)`` curve numerically; the right
    side uses a linear solve. Horizon ``T`` is chosen so ``e^{-lam T}`` is
    below roundoff relative to the integral.
    """
    chi = rho * (1 - rho)
    T = 60.0 / lam
    curve = curve or ExactDiffusivityCurve(gen, rho, T)
    l = direction - 1

    def integrand(t):
        return np.exp(-lam * t) * curve.tD(t)[0, l, l]

    # split at a few scales so quad resolves the early transient
    edges = [0.0, 1.0 / lam, 5.0 / lam, 20.0 / lam, T]
    lhs, err = 0.0, 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, e = integrate.quad(integrand, a, b, epsabs=0, epsrel=epsrel, limit=400)
        lhs += val
        err += e
    rhs = 0.5 / lam ** 2 + resolvent_pairing_full(gen, rho, lam, direction) / (chi * lam ** 2)
    return LaplaceCheck(lam, lhs, rhs, abs(lhs - rhs) / abs(rhs), err)


def xi_transform(gen, f):
    """Coefficients ``<f, xi_m>`` at density 1/2 by a fast Walsh-Hadamard pass.

    Works for any torus the generator fits on (no dense basis matrix).
    """
    c = np.asarray(f, dtype=float).copy()
    n = gen.n_sites
    c = c.reshape((2,) * n)  # axis n-1-i carries bit i
    for ax in range(n):
        a = np.take(c, 0, axis=ax)
        b = np.take(c, 1, axis=ax)
        c = np.stack([a + b, b - a], axis=ax)
    return c.reshape(-1) / 2 ** n


def xi_function(gen, mask):
    """State vector of ``xi_mask`` at density 1/2."""
    s = np.arange(gen.n_states)
    out = np.ones(gen.n_states)
    for i in range(gen.n_sites):
        if (mask >> i) & 1:
            out *= 2.0 * ((s >> i) & 1) - 1.0
    return out
