"""Truncated resolvent hierarchy on translation-quotiented windows.

The current pairing ``<<w, (lam - L_n)^{-1} w>>`` is computed by eliminating
degrees from the top down. Each degree-k space is the set of translation
classes of k-point supports whose spread along every axis is at most ``M``;
values outside the window are zero (Dirichlet truncation), which keeps every
Schur complement positive definite.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import dual_space as ds
from .quadrature import graded_rule, symmetric_rule


class SolverError(RuntimeError):
    pass


@dataclass
class ResolventProblem:
    lam: float
    degree: int = 3
    window: int = 16
    dynamics: str = "hardcore"
    d: int = 1
    tol: float = 1e-10
    maxiter: int = 20000
    torus: tuple | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.dynamics not in ("hardcore", "free"):
            raise ValueError(f"unknown dynamics {self.dynamics!r}")
        if self.d not in (1, 2):
            raise ValueError("d must be 1 or 2")
        if self.torus is None:
            if self.degree not in (2, 3, 4):
                raise ValueError("degree cutoff must be 2, 3 or 4")
            if self.window < 4:
                raise ValueError("window radius must be at least 4")
        else:
            self.torus = tuple(self.torus)
            if self.dynamics != "hardcore":
                raise ValueError("torus runs use hard-core dynamics")
            if not 2 <= self.degree <= int(np.prod(self.torus)):
                raise ValueError("degree cutoff out of range for the torus")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")

    @property
    def free(self):
        return self.dynamics == "free"

    def with_window(self, M):
        return ResolventProblem(self.lam, self.degree, M, self.dynamics, self.d,
                                self.tol, self.maxiter, self.torus)


# ------------------------------------------------------------ class spaces

class QuotientSpace:
    """Translation classes of degree-k supports, with pairing weights."""

    def __init__(self, k, d, classes, free=False, sides=None):
        self.k, self.d, self.free, self.sides = k, d, free, sides
        self.classes = list(classes)
        self.index = {c: i for i, c in enumerate(self.classes)}
        w = []
        for c in self.classes:
            mu = ds.weight(c) if free else 1.0
            w.append(mu * ds.stabilizer(c, sides))
        self.weights = np.array(w)
        self.stab = np.array([ds.stabilizer(c, sides) for c in self.classes], float)

    def __len__(self):
        return len(self.classes)

    def lookup(self, support):
        c, _ = ds.class_rep(ds.canon(support), self.sides)
        return self.index.get(c)

    def vector(self, f):
        """Class sums of a MonomialFunction."""
        out = np.zeros(len(self))
        for s, v in f.coeffs.items():
            i = self.lookup(s)
            if i is not None:
                out[i] += v
        return out


def window_classes(k, d, M, free=False):
    origin = (0,) * d
    if d == 1:
        rest = range(0 if free else 1, M + 1)
        combos = (itertools.combinations_with_replacement(rest, k - 1) if free
                  else itertools.combinations(rest, k - 1))
        return [((0,),) + tuple((x,) for x in c) for c in combos]
    pts = [(a, b) for a in range(M + 1) for b in range(-M, M + 1)
           if (a, b) > origin or (free and (a, b) == origin)]
    combos = (itertools.combinations_with_replacement(pts, k - 1) if free
              else itertools.combinations(pts, k - 1))
    out = []
    for c in combos:
        bs = [0] + [p[1] for p in c]
        if max(bs) - min(bs) <= M:
            out.append(ds.canon((origin,) + c))
    return out


def torus_classes(k, sides):
    d = len(sides)
    sites = [tuple(int(c) for c in np.unravel_index(i, sides, order="F"))
             for i in range(int(np.prod(sides)))]
    seen = {}
    for combo in itertools.combinations(sites, k):
        rep, _ = ds.class_rep(ds.canon(combo), sides)
        seen[rep] = True
    return sorted(seen)


def make_space(problem, k):
    if problem.torus is not None:
        return QuotientSpace(k, problem.d, torus_classes(k, problem.torus), False,
                             problem.torus)
    return QuotientSpace(k, problem.d, window_classes(k, problem.d, problem.window,
                                                     problem.free), problem.free)


def assemble(out_space, in_space, row, **kw):
    """Quotient matrix of a translation-invariant stencil.

    Entry ``[c, c']`` acts on class sums: ``(Kf)bar(c) = sum Q[c,c'] fbar(c')``.
    """
    rows, cols, vals = [], [], []
    sides = out_space.sides
    for i, c in enumerate(out_space.classes):
        for s, v in row(c, out_space.d, sides, **kw):
            j = in_space.lookup(s)
            if j is not None:
                rows.append(i)
                cols.append(j)
                vals.append(v)
    Q = sp.csr_matrix((vals, (rows, cols)), shape=(len(out_space), len(in_space)))
    Q.sum_duplicates()
    if sides is not None:
        Q = sp.diags(1.0 / out_space.stab) @ Q @ sp.diags(in_space.stab)
    return Q.tocsr()


@dataclass
class Hierarchy:
    spaces: list
    H: list          # weighted lam - S per degree (symmetric)
    B: list          # weighted A+ from degree k to k+1 (B[k] maps k -> k+1)
    source: np.ndarray


def build_hierarchy(problem):
    spaces = {k: make_space(problem, k) for k in range(2, problem.degree + 1)}
    sym_row = ds.row_Delta if problem.free else ds.row_S
    H, B = {}, {}
    for k, sp_k in spaces.items():
        Q = assemble(sp_k, sp_k, sym_row)
        W = sp.diags(sp_k.weights)
        H[k] = (W @ (problem.lam * sp.identity(len(sp_k)) - Q)).tocsr()
        if k + 1 in spaces:
            QA = assemble(spaces[k + 1], sp_k, ds.row_Aplus, free=problem.free)
            B[k] = (sp.diags(spaces[k + 1].weights) @ QA).tocsr()
    w = current_function(problem)
    return Hierarchy(spaces, H, B, spaces[2].vector(w))


def current_function(problem):
    e1 = (1,) + (0,) * (problem.d - 1)
    return ds.MonomialFunction(2, problem.d, {((0,) * problem.d, e1): 0.25},
                               free=problem.free, sides=problem.torus)


# ------------------------------------------------------------------- PCG

@dataclass
class CGInfo:
    iterations: int = 0
    residual: float = 0.0


def pcg(matvec, b, diag=None, tol=1e-10, maxiter=10000, x0=None):
    """Jacobi-preconditioned conjugate gradients.

    ``b`` may be a 2-D array; columns are solved simultaneously with their
    own step lengths. Convergence is ``||r|| <= tol ||b||`` per column.
    """
    b = np.asarray(b, dtype=float)
    vec = b.ndim == 1
    B = b[:, None] if vec else b
    X = np.zeros_like(B) if x0 is None else np.array(x0, float).reshape(B.shape)
    Minv = np.ones(B.shape[0]) if diag is None else 1.0 / np.asarray(diag)
    R = B - matvec(X) if x0 is not None else B.copy()
    Z = Minv[:, None] * R
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    bnorm = np.linalg.norm(B, axis=0)
    bnorm[bnorm == 0] = 1.0
    it = 0
    res = np.linalg.norm(R, axis=0) / bnorm
    active = res > tol
    while active.any():
        if it >= maxiter:
            raise SolverError(f"CG did not converge in {maxiter} iterations "
                              f"(residual {res.max():.3e})")
        AP = matvec(P)
        pAp = np.einsum("ij,ij->j", P, AP)
        alpha = np.where(active, rz / np.where(pAp == 0, 1, pAp), 0.0)
        X += alpha * P
        R -= alpha * AP
        Z = Minv[:, None] * R
        rz_new = np.einsum("ij,ij->j", R, Z)
        beta = np.where(active, rz_new / np.where(rz == 0, 1, rz), 0.0)
        P = Z + beta * P
        rz = rz_new
        it += 1
        res = np.linalg.norm(R, axis=0) / bnorm
        active = res > tol
    info = CGInfo(it, float(res.max()) if res.size else 0.0)
    return (X[:, 0] if vec else X), info


# -------------------------------------------------------- nested elimination

class _Level:
    """Solver for one Schur complement ``G_k``."""

    def __init__(self, k, H, B=None, upper=None, inner="direct", tol=1e-10,
                 maxiter=20000, dense_cap=6000, block=256):
        self.k, self.H, self.B, self.upper = k, H, B, upper
        self.tol, self.maxiter = tol, maxiter
        self.iterations = 0
        n = H.shape[0]
        self.diag = H.diagonal().copy()
        self.mode = inner
        if inner == "direct":
            if upper is None:
                self.lu = spla.splu(H.tocsc())
                self.mode = "lu"
            elif n <= dense_cap:
                G = H.toarray()
                Bd = B.tocsc()
                for j0 in range(0, n, block):
                    Y = upper.solve(Bd[:, j0:j0 + block].toarray())
                    G[:, j0:j0 + block] += (B.T @ Y)
                G = 0.5 * (G + G.T)
                self.G = G
                self.diag = np.diag(G).copy()
                self.cho = sla.cho_factor(G)
                self.mode = "dense"
            else:
                self.mode = "cg"

    def matvec(self, X):
        out = self.H @ X
        if self.upper is not None:
            out = out + self.B.T @ self.upper.solve(self.B @ X)
        return out

    def solve(self, rhs):
        if self.mode == "lu":
            return self.lu.solve(rhs)
        if self.mode == "dense":
            return sla.cho_solve(self.cho, rhs)
        x, info = pcg(self.matvec, rhs, self.diag, tol=self.tol * 1e-2,
                      maxiter=self.maxiter)
        self.iterations += info.iterations
        return x


@dataclass
class ResolventResult:
    value: float
    window_converged: bool | None
    norms: dict
    iterations: int
    problem: ResolventProblem
    value_2M: float | None = None
    sizes: dict = field(default_factory=dict)


def _solve_once(problem, inner="direct"):
    hier = build_hierarchy(problem)
    n = problem.degree
    levels = {}
    upper = None
    for k in range(n, 1, -1):
        lev = _Level(k, hier.H[k], hier.B.get(k), upper, inner=inner,
                     tol=problem.tol, maxiter=problem.maxiter)
        levels[k] = lev
        upper = lev
    top = levels[2]
    rhs = hier.spaces[2].weights * hier.source
    # outermost system always by PCG so the reported iteration count is meaningful
    u2, info = pcg(top.matvec, rhs, top.diag, tol=problem.tol, maxiter=problem.maxiter)
    value = float(rhs @ u2)
    norms = {2: float(np.sqrt(u2 @ (hier.spaces[2].weights * u2)))}
    u = u2
    for k in range(3, n + 1):
        u = levels[k].solve(hier.B[k - 1] @ u)
        norms[k] = float(np.sqrt(u @ (hier.spaces[k].weights * u)))
    its = info.iterations + sum(lv.iterations for lv in levels.values())
    sizes = {k: len(s) for k, s in hier.spaces.items()}
    return value, norms, its, sizes


def solve_truncated_resolvent(problem, inner="direct", check_window=True):
    """``<<w, (lam - L_n)^{-1} w>>`` on the window (or torus) of ``problem``.

    With ``check_window`` the run is repeated at window ``2M`` and the result
    is flagged converged when the relative change is below ``10 tol``.
    """
    value, norms, its, sizes = _solve_once(problem, inner)
    converged, v2 = None, None
    if problem.torus is None and check_window:
        v2, _, its2, _ = _solve_once(problem.with_window(2 * problem.window), inner)
        its += its2
        converged = abs(v2 - value) <= 10 * problem.tol * abs(v2)
        if not converged:
            warnings.warn(f"window M={problem.window} not converged: "
                          f"{value:.12g} vs {v2:.12g} at 2M", RuntimeWarning, stacklevel=2)
    return ResolventResult(value, converged, norms, its, problem, v2, sizes)


def monotonicity_table(lam, window, dynamics="hardcore", d=1, tol=1e-10,
                       torus=None, inner="direct", strict=True):
    """Values for n = 2, 3, 4 and the check ``v3 <= v4 <= v2`` (within ``10 tol``)."""
    vals = {}
    for n in (2, 3, 4):
        p = ResolventProblem(lam, n, window, dynamics, d, tol, torus=torus)
        vals[n] = solve_truncated_resolvent(p, inner=inner, check_window=False).value
    slack = 10 * tol * max(abs(v) for v in vals.values())
    ok = vals[3] <= vals[4] + slack and vals[4] <= vals[2] + slack
    if strict and not ok:
        raise SolverError(f"monotonicity violated: {vals}")
    return vals, ok


# ------------------------------------------------- free dynamics, spectral

def _omega1(p):
    return 4.0 * np.sin(0.5 * p) ** 2


def free_spectral_value(lam, degree=3, order=8, refine=0, h_min=None):
    """Free-dynamics pairing on the infinite line (d=1) via Fourier space.

    Degree-2 functions are represented by ``phi(r) = F^(r, -r)`` on a graded
    Gauss-Legendre mesh; the degree-3 elimination becomes a Nystrom kernel
    over the zero-sum plane.
    """
    if degree not in (2, 3):
        raise ValueError("spectral route implemented for n = 2, 3")
    if h_min is None:
        h_min = min(np.sqrt(lam), lam ** 0.75) / 8
    r, h = symmetric_rule(h_min, order, refine=refine)
    two_pi = 2 * np.pi
    phi_w = 0.5 * np.cos(r)
    b = 0.5 * h * phi_w / two_pi
    K = np.diag(0.5 * h * (lam + _omega1(r)) / two_pi)
    if degree == 3:
        p1, p2 = r[:, None], r[None, :]
        p3 = -p1 - p2
        D = lam + 0.5 * (_omega1(p1) + _omega1(p2) + _omega1(p3))
        s1 = np.sin(p2) + np.sin(p3)
        s2 = np.sin(p1) + np.sin(p3)
        hh = h[:, None] * h[None, :]
        self_energy = 0.5 * (s1 ** 2 / D) @ h
        K += np.diag(h * self_energy) / two_pi ** 2
        K += hh * (s1 * s2 / D) / two_pi ** 2
    # symmetric diagonal scaling tames the tiny weights near r = 0
    sc = 1.0 / np.sqrt(np.diag(K))
    sol = sla.solve(sc[:, None] * K * sc[None, :], sc * b, assume_a="pos")
    return float((sc * b) @ sol)


# --------------------------------------------------- d=1 variational bound

@dataclass
class VariationalBound:
    lam: float
    value: float
    alpha: float
    linear: float
    mass: float
    dirichlet: float
    raising: float
    alpha_star: float
    value_star: float
    quad_converged: bool
    quad_change: float


def test_function_terms(lam):
    """Closed forms for ``f(x) = lam^{-1/4} exp(-lam^{3/4} x)``, x >= 0."""
    beta = lam ** 0.75
    q = np.exp(-beta)
    linear = 0.5 * lam ** -0.25                   # 2 <<w, f>> = f(0)/2
    mass = lam ** 0.5 / (-np.expm1(-2 * beta))     # lam sum f^2
    dirichlet = lam ** -0.5 * (-np.expm1(-beta)) / (1 + q)
    return linear, mass, dirichlet


def _axis_transform(k, beta, c):
    """Fourier transform of the reflected profile ``c e^{-beta y}``."""
    e = np.exp(-beta)
    z1 = 1 - e * np.exp(1j * k)
    z2 = 1 - e * np.exp(-1j * k)
    return c * (1 / z1 + np.exp(-1j * k) / z2)


def raising_term(lam, order=8, refine=0):
    """Upper bound for ``<<A+ f, (lam - S)^{-1} A+ f>>`` with the test function.

    The degree-3 quotient walk in gap coordinates is replaced by the product
    of two reflecting half-line walks (its diagonal bonds are dropped, which
    can only increase the resolvent). The reflected walks are unfolded onto
    Z^2 and the resolvent is evaluated in Fourier space.
    """
    beta = lam ** 0.75
    c = -0.5 * lam ** -0.25 * (-np.expm1(-beta))
    h_min = min(beta, np.sqrt(lam)) / 8
    k, wk = symmetric_rule(h_min, order, refine=refine)
    Ak = _axis_transform(k, beta, c)
    ek = 1 + np.exp(-1j * k)
    K, Q = k[:, None], k[None, :]
    num = np.abs(ek[:, None] * Ak[None, :] - Ak[:, None] * ek[None, :]) ** 2
    den = lam + (1 - np.cos(K)) + (1 - np.cos(Q))
    val = wk @ (num / den) @ wk
    return 0.25 * val / (2 * np.pi) ** 2


def alpha_grid():
    return 2.0 ** (-np.arange(0, 40 + 1) / 4.0)


def variational_bound_d1(lam, alphas=None, order=8):
    """Lower bound ``max_alpha 2 alpha <<w,f>> - alpha^2 (...)`` for d=1."""
    if not 0 < lam <= 0.1:
        raise ValueError("variational bound defined for 0 < lam <= 0.1")
    alphas = alpha_grid() if alphas is None else np.asarray(alphas, float)
    if np.any(alphas <= 0):
        raise ValueError("alpha must be positive")
    linear, mass, dirichlet = test_function_terms(lam)
    raising = raising_term(lam, order)
    finer = raising_term(lam, order, refine=1)
    change = abs(finer - raising) / abs(finer)
    quad = mass + dirichlet + finer
    vals = alphas * linear - alphas ** 2 * quad
    i = int(np.argmax(vals))
    a_star = linear / (2 * quad)
    return VariationalBound(lam, float(vals[i]), float(alphas[i]), linear, mass, dirichlet,
                            finer, a_star, linear ** 2 / (4 * quad), change < 1e-4, change)


def raising_term_real_space(lam, M, diagonal=True):
    """Same quadratic form computed on the quarter-plane window ``g1+g2 <= M``
    with Dirichlet truncation (diagnostic; small windows only)."""
    beta = lam ** 0.75
    fbar = lambda x: lam ** -0.25 * np.exp(-beta * x)
    pts = [(a, b) for a in range(M + 1) for b in range(M + 1 - a)]
    idx = {p: i for i, p in enumerate(pts)}
    steps = [(1, 0), (-1, 0), (0, 1), (0, -1)]
    if diagonal:
        steps += [(1, -1), (-1, 1)]
    rows, cols, vals = [], [], []
    for p, i in idx.items():
        diag = lam
        for s in steps:
            q = (p[0] + s[0], p[1] + s[1])
            if q[0] < 0 or q[1] < 0:
                continue
            diag += 0.5
            j = idx.get(q)
            if j is not None:
                rows.append(i)
                cols.append(j)
                vals.append(-0.5)
        rows.append(i)
        cols.append(i)
        vals.append(diag)
    A = sp.csc_matrix((vals, (rows, cols)), shape=(len(pts), len(pts)))
    h = np.zeros(len(pts))
    for (a, b), i in idx.items():
        if a == 0:
            h[i] += -0.5 * (fbar(b) - fbar(b + 1))
        if b == 0:
            h[i] += -0.5 * (fbar(a + 1) - fbar(a))
    return float(h @ spla.spsolve(A, h))
