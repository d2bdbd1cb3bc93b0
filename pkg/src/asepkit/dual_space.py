"""Duality calculus in the orthonormal product basis at density 1/2.

A degree-n function is stored by its coefficients on n-point supports. A
support is a sorted tuple of lattice points (each point an int tuple of
length d). In the hard-core representation the points are distinct; in the
free (symmetric-function) representation repeats are allowed and the tuple
is a multiset.

Operator conventions (rate-1/2 per undirected bond for the symmetric part):

* ``(S f)_L   = 1/2 sum_{x in L} sum_{y ~ x, y not in L} (f_{L-x+y} - f_L)``
* ``(A+ f)_L  = -1/2 sum_{x, x+e1 in L} (f_{L\\x} - f_{L\\(x+e1)})``
* free ``Delta`` and ``A+`` are the same stencils with multiplicities and
  without exclusion.

With these, ``L = S + A+ - A+*`` reproduces the generator exactly.
"""

from __future__ import annotations

import itertools
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from math import factorial, prod

import numpy as np

RHO = 0.5


# ------------------------------------------------------------------ points

def _unit(d, j, s=1):
    e = [0] * d
    e[j] = s
    return tuple(e)


def neighbours(d):
    return [_unit(d, j, s) for j in range(d) for s in (1, -1)]


def _add(p, q, sides=None):
    r = tuple(a + b for a, b in zip(p, q))
    if sides is not None:
        r = tuple(a % s for a, s in zip(r, sides))
    return r


def _sub(p, q):
    return tuple(a - b for a, b in zip(p, q))


def canon(points):
    return tuple(sorted(points))


def multiplicities(support):
    return Counter(support)


def weight(support):
    """Counting weight ``1/prod(m_x!)`` of a multiset (1 for a set)."""
    return 1.0 / prod(factorial(m) for m in Counter(support).values())


def shift_support(support, z, sides=None):
    return canon(_add(p, z, sides) for p in support)


def class_rep(support, sides=None):
    """Canonical translate of a support, and the shift that produced it.

    On Z^d the first (lexicographically smallest) point goes to the origin.
    On a torus the lexicographically smallest translate is chosen.
    """
    if sides is None:
        z = tuple(-c for c in support[0])
        return shift_support(support, z), z
    best, bz = None, None
    for p in support:
        z = tuple((-c) % s for c, s in zip(p, sides))
        cand = shift_support(support, z, sides)
        if best is None or cand < best:
            best, bz = cand, z
    return best, bz


def stabilizer(support, sides):
    """Number of torus translations fixing the support."""
    if sides is None:
        return 1
    count = 0
    p0 = support[0]
    for p in set(support):
        z = _sub(p, p0)
        if shift_support(support, z, sides) == tuple(support):
            count += 1
    return count


# ------------------------------------------------------------ data types

@dataclass
class MonomialFunction:
    """Degree-n function, stored as ``{support: coefficient}``."""

    degree: int
    d: int = 1
    coeffs: dict = field(default_factory=dict)
    free: bool = False
    sides: tuple | None = None

    def __post_init__(self):
        clean = {}
        for s, v in self.coeffs.items():
            s = canon(self._point(p) for p in s)
            if len(s) != self.degree:
                raise ValueError(f"support {s} does not have degree {self.degree}")
            if not self.free and len(set(s)) != len(s):
                raise ValueError(f"hard-core support {s} has coinciding points")
            if v != 0:
                clean[s] = clean.get(s, 0.0) + float(v)
        self.coeffs = clean

    def _point(self, p):
        p = (p,) if np.isscalar(p) else tuple(int(c) for c in p)
        if len(p) != self.d:
            raise ValueError(f"point {p} is not {self.d}-dimensional")
        if self.sides is not None:
            p = tuple(c % s for c, s in zip(p, self.sides))
        return p

    def like(self, coeffs, degree=None, free=None):
        return MonomialFunction(self.degree if degree is None else degree, self.d,
                                coeffs, self.free if free is None else free, self.sides)

    def __call__(self, *points):
        """Symmetric-function value ``f(x_1, ..., x_n)``."""
        s = canon(self._point(p) for p in points)
        if not self.free and len(set(s)) != len(s):
            return 0.0
        return self.coeffs.get(s, 0.0)

    def get(self, s):
        return self.coeffs.get(s, 0.0)

    def __add__(self, other):
        out = dict(self.coeffs)
        for s, v in other.coeffs.items():
            out[s] = out.get(s, 0.0) + v
        return self.like(out)

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, a):
        return self.like({s: a * v for s, v in self.coeffs.items()})

    def shift(self, z):
        z = self._point(z) if self.sides is None else tuple(z)
        return self.like({shift_support(s, z, self.sides): v for s, v in self.coeffs.items()})

    def norm_inf(self):
        return max((abs(v) for v in self.coeffs.values()), default=0.0)

    def close_to(self, other, tol=1e-12):
        keys = set(self.coeffs) | set(other.coeffs)
        return all(abs(self.get(k) - other.get(k)) <= tol for k in keys)

    def __len__(self):
        return len(self.coeffs)


@dataclass
class GradedFunction:
    """``(f_1, ..., f_n)``; ``parts[k]`` is the degree-k slot or ``None``."""

    parts: dict
    mean: float = 0.0

    def __getitem__(self, k):
        return self.parts.get(k)

    @property
    def degrees(self):
        return sorted(k for k, v in self.parts.items() if v is not None and len(v))


# -------------------------------------------------------- decomposition

def decompose_local_function(table, window, rho=RHO, d=1):
    """Expand a local function in the product basis.

    ``window`` lists the sites the function depends on; ``table`` is either a
    callable ``eta -> value`` (``eta`` a 0/1 tuple aligned with ``window``) or
    an array of length ``2**len(window)`` indexed by the bitmask.
    """
    window = [(p,) if np.isscalar(p) else tuple(p) for p in window]
    k = len(window)
    if callable(table):
        vals = np.array([table(tuple((s >> i) & 1 for i in range(k))) for s in range(2 ** k)],
                        dtype=float)
    else:
        vals = np.asarray(table, dtype=float)
        if vals.shape != (2 ** k,):
            raise ValueError(f"truth table must have {2 ** k} entries")
        if not np.all(np.isfinite(vals)):
            raise ValueError("truth table has missing entries")
    states = np.arange(2 ** k)
    occ = ((states[:, None] >> np.arange(k)) & 1).astype(float)
    nu = np.prod(np.where(occ == 1, rho, 1 - rho), axis=1)
    xi = (occ - rho) / np.sqrt(rho * (1 - rho))
    parts = defaultdict(dict)
    mean = float(nu @ vals)
    for mask in range(1, 2 ** k):
        idx = [i for i in range(k) if (mask >> i) & 1]
        basis = np.prod(xi[:, idx], axis=1)
        c = float(nu @ (vals * basis))
        if abs(c) > 1e-15:
            parts[len(idx)][canon(window[i] for i in idx)] = c
    return GradedFunction({n: MonomialFunction(n, d, c) for n, c in parts.items()}, mean)


def reconstruct(graded, window, rho=RHO):
    """Evaluate ``mean + sum f_L xi_L`` on every configuration of ``window``."""
    window = [(p,) if np.isscalar(p) else tuple(p) for p in window]
    pos = {p: i for i, p in enumerate(window)}
    k = len(window)
    states = np.arange(2 ** k)
    occ = ((states[:, None] >> np.arange(k)) & 1).astype(float)
    xi = (occ - rho) / np.sqrt(rho * (1 - rho))
    out = np.full(2 ** k, graded.mean)
    for f in graded.parts.values():
        for s, c in f.coeffs.items():
            out += c * np.prod(xi[:, [pos[p] for p in s]], axis=1)
    return out


# ------------------------------------------------------ semi-inner product

def _class_sums(f):
    out = defaultdict(float)
    for s, v in f.coeffs.items():
        out[class_rep(s, f.sides)[0]] += v
    return out


def semi_inner_product(g, h):
    """Shift-summed pairing ``sum_z sum_L g_{L+z} h_L`` (weighted by
    multiplicities in the free representation). Accepts graded functions."""
    if isinstance(g, GradedFunction):
        return sum(semi_inner_product(g[k], h[k]) for k in g.degrees
                   if h[k] is not None)
    if g.degree != h.degree:
        return 0.0
    gs, hs = _class_sums(g), _class_sums(h)
    tot = 0.0
    for c, v in gs.items():
        if c in hs:
            w = stabilizer(c, g.sides) * (weight(c) if g.free else 1.0)
            tot += w * v * hs[c]
    return tot


def inner_product(g, h):
    """Plain ``L^2`` pairing (no shift sum)."""
    if g.degree != h.degree:
        return 0.0
    tot = 0.0
    for s, v in g.coeffs.items():
        if s in h.coeffs:
            tot += (weight(s) if g.free else 1.0) * v * h.coeffs[s]
    return tot


# ---------------------------------------------------------- stencil rows
#
# A "row" function maps an output support L to the list of (input support,
# coefficient) pairs with (K f)_L = sum coeff * f_input. The same rows are
# reused by the quotient assembler in the resolvent solver.

def row_S(L, d, sides=None):
    Ls = set(L)
    out = []
    diag = 0.0
    for i, x in enumerate(L):
        if i and L[i - 1] == x:
            continue
        for e in neighbours(d):
            y = _add(x, e, sides)
            if y not in Ls:
                rest = list(L)
                rest.remove(x)
                out.append((canon(rest + [y]), 0.5))
                diag -= 0.5
    out.append((tuple(L), diag))
    return out


def row_Delta(L, d, sides=None):
    m = Counter(L)
    out = []
    diag = 0.0
    for x, mx in m.items():
        for e in neighbours(d):
            y = _add(x, e, sides)
            rest = list(L)
            rest.remove(x)
            out.append((canon(rest + [y]), 0.5 * mx))
            diag -= 0.5 * mx
    out.append((tuple(L), diag))
    return out


def row_Aplus(L, d, sides=None, free=False):
    """Row of ``A+`` at a degree-(n+1) support: inputs have degree n."""
    m = Counter(L)
    e1 = _unit(d, 0)
    out = []
    for x, mx in m.items():
        y = _add(x, e1, sides)
        my = m.get(y, 0)
        if not my:
            continue
        c = mx * my if free else 1
        rx, ry = list(L), list(L)
        rx.remove(x)
        ry.remove(y)
        out.append((canon(rx), -0.5 * c))
        out.append((canon(ry), 0.5 * c))
    return out


def row_Aplus_adjoint(O, d, sides=None, free=False):
    """Row of ``A+*`` at a degree-n support: inputs have degree n+1."""
    m = Counter(O)
    e1 = _unit(d, 0)
    out = {}
    for p in m:
        for z in (_add(p, e1, sides), _add(p, _unit(d, 0, -1), sides)):
            if z in out or (not free and z in m):
                continue
            c = 0.5 * (m.get(_add(z, _unit(d, 0, -1), sides), 0)
                       - m.get(_add(z, e1, sides), 0))
            if c:
                out[z] = c
    return [(canon(list(O) + [z]), c) for z, c in out.items()]


# ------------------------------------------------------------- operators

def _apply(f, row, out_degree, candidates, out_free, **kw):
    coeffs = {}
    for L in candidates:
        v = 0.0
        for s, c in row(L, f.d, f.sides, **kw):
            v += c * f.coeffs.get(s, 0.0)
        if v != 0.0:
            coeffs[L] = v
    return f.like(coeffs, degree=out_degree, free=out_free)


def _moves(f):
    """Supports reachable from supp(f) by moving one point to a neighbour."""
    cand = set(f.coeffs)
    for s in f.coeffs:
        for i, x in enumerate(s):
            for e in neighbours(f.d):
                y = _add(x, e, f.sides)
                if not f.free and y in s:
                    continue
                rest = list(s)
                del rest[i]
                cand.add(canon(rest + [y]))
    return cand


def _grow(f):
    """Degree-(n+1) supports obtained by adding a point next to supp(f) along e1."""
    cand = set()
    e1, m1 = _unit(f.d, 0), _unit(f.d, 0, -1)
    for s in f.coeffs:
        for x in s:
            for y in (_add(x, e1, f.sides), _add(x, m1, f.sides)):
                if not f.free and y in s:
                    continue
                cand.add(canon(list(s) + [y]))
    return cand


def _shrink(g):
    return {canon(s[:i] + s[i + 1:]) for s in g.coeffs for i in range(len(s))}


def apply_S_hardcore(f):
    if f.free:
        raise ValueError("S acts on hard-core functions")
    return _apply(f, row_S, f.degree, _moves(f), False)


def apply_Aplus_hardcore(f):
    if f.free:
        raise ValueError("hard-core A+ needs a hard-core function")
    return _apply(f, row_Aplus, f.degree + 1, _grow(f), False)


def apply_Aplus_adjoint(g):
    if g.free:
        raise ValueError("hard-core A+* needs a hard-core function")
    if g.degree < 2:
        return g.like({}, degree=max(g.degree - 1, 0))
    return _apply(g, row_Aplus_adjoint, g.degree - 1, _shrink(g), False)


def _as_free(F):
    return F if F.free else F.like(F.coeffs, free=True)


def apply_Delta_free(F):
    F = _as_free(F)
    return _apply(F, row_Delta, F.degree, _moves(F), True)


def apply_Aplus_free(F):
    F = _as_free(F)
    return _apply(F, row_Aplus, F.degree + 1, _grow(F), True, free=True)


def apply_Aplus_free_adjoint(G):
    G = _as_free(G)
    return _apply(G, row_Aplus_adjoint, G.degree - 1, _shrink(G), True, free=True)


def apply_L_hardcore(f):
    """``(S + A+ - A+*) f`` as a graded function."""
    parts = {f.degree: apply_S_hardcore(f), f.degree + 1: apply_Aplus_hardcore(f)}
    if f.degree > 1:
        parts[f.degree - 1] = apply_Aplus_adjoint(f).scale(-1.0)
    return GradedFunction(parts)


# ----------------------------------------------------------- T and R maps

ISOLATION = 5


def _l1(p, q):
    return sum(abs(a - b) for a, b in zip(p, q))


def double_sites(support, radius=ISOLATION):
    """Isolated double sites of a multiset, or ``None`` if it lies in E3.

    Returns an empty list for supports with distinct points (E1).
    """
    m = Counter(support)
    if any(v > 2 for v in m.values()):
        return None
    doubles = [x for x, v in m.items() if v == 2]
    for x in doubles:
        for p in support:
            if p != x and _l1(p, x) < radius:
                return None
    return doubles


def extend_T(f, radius=ISOLATION):
    """Extension off the exclusion set: averages over neighbour positions at
    isolated double sites, zero on all other coincidences."""
    if f.free:
        raise ValueError("T extends hard-core functions")
    F = dict(f.coeffs)
    nb = neighbours(f.d)
    # candidates: repeatedly collapse a point onto an adjacent one
    frontier = set(f.coeffs)
    seen = set(frontier)
    for _ in range(f.degree // 2):
        nxt = set()
        for s in frontier:
            for i, p in enumerate(s):
                for e in nb:
                    q = _add(p, e, f.sides)
                    if q in s:
                        rest = list(s)
                        del rest[i]
                        c = canon(rest + [q])
                        if c not in seen:
                            seen.add(c)
                            nxt.add(c)
        frontier = nxt
    for s in seen:
        if len(set(s)) == len(s):
            continue
        doubles = double_sites(s, radius)
        if not doubles:
            continue
        base = list(s)
        for x in doubles:
            base.remove(x)
        tot = 0.0
        count = 0
        for ys in itertools.product(nb, repeat=len(doubles)):
            pts = base + [_add(x, e, f.sides) for x, e in zip(doubles, ys)]
            tot += f.coeffs.get(canon(pts), 0.0)
            count += 1
        if tot:
            F[s] = tot / count
    return f.like(F, free=True)


def restrict_R(F):
    return F.like({s: v for s, v in F.coeffs.items() if len(set(s)) == len(s)}, free=False)


# ------------------------------------------------- matrices on a torus

def torus_supports(sides, degree):
    """All hard-core supports of the given degree on a torus, keyed by bitmask."""
    sites = [tuple(int(c) for c in np.unravel_index(i, sides, order="F"))
             for i in range(int(np.prod(sides)))]
    return sites


def operator_matrix_on_torus(sides, op, max_degree=None):
    """Matrix of a hard-core stencil in the bitmask ordering of the exact oracle.

    ``op`` is one of ``"S"``, ``"A+"``, ``"A+*"``. Entry ``[m, m']`` is the
    coefficient of ``xi_m`` in ``op(xi_m')``.
    """
    sides = tuple(sides)
    d = len(sides)
    sites = torus_supports(sides, None)
    index = {p: i for i, p in enumerate(sites)}
    n = len(sites)
    M = np.zeros((2 ** n, 2 ** n))
    fn = {"S": apply_S_hardcore, "A+": apply_Aplus_hardcore, "A+*": apply_Aplus_adjoint}[op]
    for mask in range(1, 2 ** n):
        pts = [sites[i] for i in range(n) if (mask >> i) & 1]
        if max_degree is not None and len(pts) > max_degree:
            continue
        f = MonomialFunction(len(pts), d, {canon(pts): 1.0}, sides=sides)
        out = fn(f)
        for s, v in out.coeffs.items():
            M[sum(1 << index[p] for p in s), mask] += v
    return M
