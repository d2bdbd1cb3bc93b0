"""Rejection-free kinetic Monte Carlo for exclusion processes on a torus.

Estimators reduce per-replica sums, so batches merge by concatenation.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np
from sklearn.base import BaseEstimator

from .lattice_model import ModelError, TorusGeometry, tasep_law, torus_for


class WrapAroundError(RuntimeError):
    pass


class WrapAroundWarning(UserWarning):
    pass


# ------------------------------------------------------------------ kernel

@numba.njit(cache=True, inline="always")
def _update(k, a, occ, nbr, lists, pos, sizes):
    b = nbr[k, a]
    ok = occ[a] == 1 and occ[b] == 0
    p = pos[k, a]
    if ok and p < 0:
        lists[k, sizes[k]] = a
        pos[k, a] = sizes[k]
        sizes[k] += 1
    elif not ok and p >= 0:
        last = lists[k, sizes[k] - 1]
        lists[k, p] = last
        pos[k, last] = p
        pos[k, a] = -1
        sizes[k] -= 1


@numba.njit(cache=True)
def _evolve(occ, nbr, prv, rates, disp, t_obs, gen, snaps, Q):
    K, n = nbr.shape
    lists = np.empty((K, n), dtype=np.int64)
    pos = -np.ones((K, n), dtype=np.int64)
    sizes = np.zeros(K, dtype=np.int64)
    for k in range(K):
        for a in range(n):
            _update(k, a, occ, nbr, lists, pos, sizes)
    acc = np.zeros(disp.shape[1], dtype=np.int64)
    t = 0.0
    j = 0
    nobs = t_obs.shape[0]
    while j < nobs:
        total = 0.0
        for k in range(K):
            total += rates[k] * sizes[k]
        if total > 0.0:
            t += gen.exponential() / total
        else:
            t = np.inf
        while j < nobs and t >= t_obs[j]:
            snaps[j, :] = occ
            Q[j, :] = acc
            j += 1
        if j == nobs:
            break
        u = gen.random() * total
        k = 0
        while k < K - 1 and u >= rates[k] * sizes[k]:
            u -= rates[k] * sizes[k]
            k += 1
        if sizes[k] == 0:      # round-off landed on an empty class
            continue
        i = int(gen.random() * sizes[k])
        if i >= sizes[k]:
            i = sizes[k] - 1
        x = lists[k, i]
        y = nbr[k, x]
        occ[x] = 0
        occ[y] = 1
        for c in range(acc.shape[0]):
            acc[c] += disp[k, c]
        for kk in range(K):
            _update(kk, x, occ, nbr, lists, pos, sizes)
            _update(kk, prv[kk, x], occ, nbr, lists, pos, sizes)
            _update(kk, y, occ, nbr, lists, pos, sizes)
            _update(kk, prv[kk, y], occ, nbr, lists, pos, sizes)


# ------------------------------------------------------------------ batch

@dataclass
class TrajectoryBatch:
    """Packed snapshots ``eta(0), eta(t_1..t_K)`` and net displacements per replica."""

    geometry: TorusGeometry
    law: object
    rho: float
    t_obs: np.ndarray
    seed: object
    snapshots: np.ndarray                 # (R, K+1, ceil(n/8)) uint8
    displacement: np.ndarray              # (R, K, d) int64
    extras: dict = field(default_factory=dict)

    @property
    def replicas(self):
        return self.snapshots.shape[0]

    @property
    def n_sites(self):
        return self.geometry.n_sites

    def occupations(self, r=None):
        """Unpacked occupations, shape ``(K+1, n)`` or ``(R, K+1, n)``."""
        s = self.snapshots if r is None else self.snapshots[r]
        return np.unpackbits(s, axis=-1, count=self.n_sites)

    def particle_counts(self):
        return self.occupations()[:, 0, :].sum(axis=1).astype(np.int64)

    def merge(self, other):
        if (other.geometry != self.geometry or other.rho != self.rho
                or not np.array_equal(other.t_obs, self.t_obs)):
            raise ValueError("batches differ in geometry, density or times")
        return TrajectoryBatch(self.geometry, self.law, self.rho, self.t_obs,
                               (self.seed, other.seed),
                               np.concatenate([self.snapshots, other.snapshots]),
                               np.concatenate([self.displacement, other.displacement]))


def _tables(geometry, law):
    disp = [tuple(z) for z in law.displacements]
    nbr = geometry.neighbour_table(disp)
    prv = np.empty_like(nbr)
    for k in range(len(disp)):
        prv[k, nbr[k]] = np.arange(geometry.n_sites)
    rates = np.array([law.rates[z] for z in disp], dtype=float)
    return nbr, prv, rates, np.array(disp, dtype=np.int64)


def _check_times(t_obs):
    t = np.asarray(t_obs, dtype=float).ravel()
    if t.size == 0 or np.any(t < 0) or np.any(np.diff(t) <= 0) or not np.all(np.isfinite(t)):
        raise ModelError("observation times must be finite, nonnegative and increasing")
    return t


def run_trajectory(geometry, law, rho, t_obs, rng, initial=None, _tabs=None):
    """One replica: Bernoulli(rho) start (or ``initial``), snapshots at ``t_obs``.

    Returns ``(eta0, snapshots (K, n), displacement (K, d))``.
    """
    t = _check_times(t_obs)
    n = geometry.n_sites
    if initial is None:
        if not 0.0 < rho < 1.0:
            raise ModelError("density must lie in (0, 1)")
        occ = (rng.random(n) < rho).astype(np.uint8)
    else:
        occ = np.asarray(initial, dtype=np.uint8).copy()
        if occ.shape != (n,) or occ.max(initial=0) > 1:
            raise ModelError("initial configuration must be a 0/1 vector over the sites")
    nbr, prv, rates, disp = _tabs or _tables(geometry, law)
    eta0 = occ.copy()
    snaps = np.empty((t.size, n), dtype=np.uint8)
    Q = np.zeros((t.size, geometry.d), dtype=np.int64)
    _evolve(occ, nbr, prv, rates, disp, t, rng, snaps, Q)
    return eta0, snaps, Q


def _run_chunk(args):
    geometry, law, rho, t, children, initial = args
    tabs = _tables(geometry, law)
    snaps, disps = [], []
    for c in children:
        g = np.random.Generator(np.random.Philox(c))
        eta0, s, Q = run_trajectory(geometry, law, rho, t, g, initial, tabs)
        snaps.append(np.packbits(np.vstack([eta0[None], s]), axis=-1))
        disps.append(Q)
    return snaps, disps


def simulate(geometry, law, rho, t_obs, replicas, seed=0, initial=None, n_jobs=1):
    """Independent replicas on split Philox streams; identical seeds give identical batches."""
    if replicas < 1:
        raise ModelError("need at least one replica")
    t = _check_times(t_obs)
    children = np.random.SeedSequence(seed).spawn(replicas)
    if n_jobs == 1:
        parts = [_run_chunk((geometry, law, rho, t, children, initial))]
    else:
        chunks = np.array_split(np.arange(replicas), n_jobs)
        jobs = [(geometry, law, rho, t, [children[i] for i in c], initial) for c in chunks if len(c)]
        with ProcessPoolExecutor(n_jobs) as ex:
            parts = list(ex.map(_run_chunk, jobs))     # order preserved
    snaps = np.stack([s for p in parts for s in p[0]])
    disp = np.stack([q for p in parts for q in p[1]])
    return TrajectoryBatch(geometry, law, rho, t, seed, snaps, disp)


# -------------------------------------------------------------- estimators

def predicted_speed(law, rho):
    return float(np.linalg.norm(law.mean)) * abs(1 - 2 * rho)


def wrap_limit(batch):
    """Largest time the estimators accept before finite-size wrap-around."""
    side = min(batch.geometry.sides)
    return side / (4 * max(1.0, predicted_speed(batch.law, batch.rho) + 2))


def _guard(batch, allow_wrap):
    limit = wrap_limit(batch)
    if batch.t_obs[-1] > limit:
        msg = (f"t = {batch.t_obs[-1]:g} exceeds the wrap-around limit {limit:g} "
               f"for side {min(batch.geometry.sides)}")
        if not allow_wrap:
            raise WrapAroundError(msg)
        warnings.warn(msg, WrapAroundWarning, stacklevel=3)


@dataclass
class StructureFunction:
    t: np.ndarray
    coords: np.ndarray          # centred site coordinates, (n, d)
    S: np.ndarray               # (K, n), index order of the torus
    stderr: np.ndarray

    def moment(self, f):
        """``sum_x f(x) S(x, t)`` for each t; ``f`` maps coords (n, d) to (n,)."""
        return self.S @ f(self.coords)


def _grid(batch, a):
    # site index x1 + N1 x2 becomes a C-ordered (N2, N1) array
    return a.reshape(a.shape[:-1] + tuple(reversed(batch.geometry.sides)))


def estimate_structure_function(batch):
    """``S(x, t) = E[(eta_x(t) - eta_x(0)) eta_0(0)]``, averaged over origins."""
    occ = batch.occupations().astype(np.int64)          # (R, K+1, n)
    n = batch.n_sites
    axes = tuple(range(-batch.geometry.d, 0))
    a0 = np.fft.fftn(_grid(batch, occ[:, 0, :]), axes=axes)
    delta = occ[:, 1:, :] - occ[:, :1, :]
    fd = np.fft.fftn(_grid(batch, delta), axes=axes)
    corr = np.fft.ifftn(fd * np.conj(a0)[:, None], axes=axes).real
    corr = np.rint(corr).reshape(delta.shape) / n          # integer sums, exact
    R = batch.replicas
    S = corr.mean(axis=0)
    err = corr.std(axis=0, ddof=1) / np.sqrt(R) if R > 1 else np.full_like(S, np.nan)
    return StructureFunction(batch.t_obs, batch.geometry.centred_coords(), S, err)


def _conditional_mean(batch):
    """Exact ``E[Q(t) | n]`` under the canonical measure, shape (R, K, d)."""
    N = batch.n_sites
    n = batch.particle_counts().astype(float)
    pair = n * (N - n) / (N - 1)
    drift = np.array(batch.law.mean, dtype=float)
    return pair[:, None, None] * batch.t_obs[None, :, None] * drift[None, None, :]


@dataclass
class VelocityEstimate:
    velocity: np.ndarray
    stderr: np.ndarray
    per_time: np.ndarray
    per_time_stderr: np.ndarray


def _slope(y, x):
    xc = x - x.mean()
    sxx = xc @ xc
    if sxx == 0:
        raise ValueError("particle number does not fluctuate across replicas")
    b = np.tensordot(xc, y - y.mean(axis=0), axes=(0, 0)) / sxx
    res = y - y.mean(axis=0) - np.multiply.outer(xc, b)
    dof = max(len(x) - 2, 1)
    se = np.sqrt((res ** 2).sum(axis=0) / dof / sxx)
    return b, se


def estimate_velocity(batch, allow_wrap=False):
    """``v = sum_x x S(x,t) / (chi t)`` via the slope of displacement on particle number.

    ``sum_x x S = Cov(Q, n) / N``; dividing by the sample variance of ``n``
    in place of ``N chi`` removes most of the sampling noise in ``n``.
    """
    _guard(batch, allow_wrap)
    keep = batch.t_obs > 0
    if not keep.any():
        raise ValueError("velocity needs a positive observation time")
    t = batch.t_obs[keep]
    n = batch.particle_counts().astype(float)
    Q = batch.displacement[:, keep, :].astype(float)
    per, per_se = _slope(Q / t[None, :, None], n)
    avg, avg_se = _slope((Q / t[None, :, None]).mean(axis=1), n)
    return VelocityEstimate(avg, avg_se, per, per_se)


@dataclass
class DiffusivityEstimate:
    t: float
    D: np.ndarray
    stderr: np.ndarray
    replicas: int


def _jackknife(stat, R, blocks=20):
    """Delete-a-block jackknife over replica indices."""
    blocks = min(blocks, R)
    idx = np.array_split(np.arange(R), blocks)
    full = stat(np.arange(R))
    reps = np.array([stat(np.setdiff1d(np.arange(R), b)) for b in idx])
    var = (blocks - 1) / blocks * ((reps - reps.mean(axis=0)) ** 2).sum(axis=0)
    return full, np.sqrt(var)


def estimate_diffusivity(batch, estimator="conditional", allow_wrap=False):
    """``D_ij(t) = (sum_x x_i x_j S - chi v_i v_j t^2) / (2 chi t)`` at each ``t > 0``.

    ``conditional``: the second moment of ``Q - E[Q | n]`` per site, which
    drops the drift term together with the finite-volume number fluctuation.
    ``plain``: ``Var(Q)/N`` minus ``chi v v t^2`` with the covariance velocity,
    the torus analogue of the defining formula.
    """
    _guard(batch, allow_wrap)
    rho = batch.rho
    chi = rho * (1 - rho)
    N = batch.n_sites
    R = batch.replicas
    Q = batch.displacement.astype(float)
    n = batch.particle_counts().astype(float)
    out = []
    if estimator == "conditional":
        r = Q - _conditional_mean(batch)
        Y = np.einsum("rki,rkj->rkij", r, r) / N
        mean, err = Y.mean(axis=0), Y.std(axis=0, ddof=1) / np.sqrt(R)
    elif estimator == "plain":
        def stat(ix):
            q, m = Q[ix], n[ix]
            qc = q - q.mean(axis=0)
            mc = m - m.mean()
            cov = np.einsum("rki,rkj->kij", qc, qc) / (len(ix) - 1)
            cqn = np.einsum("rki,r->ki", qc, mc) / (len(ix) - 1)
            return (cov - np.einsum("ki,kj->kij", cqn, cqn) / (N * chi)) / N
        mean, err = _jackknife(stat, R)
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    for k, t in enumerate(batch.t_obs):
        if t <= 0:
            continue
        D = mean[k] / (2 * chi * t)
        out.append(DiffusivityEstimate(float(t), 0.5 * (D + D.T),
                                       err[k] / (2 * chi * t), R))
    return out


@dataclass
class SpreadEstimate:
    t: np.ndarray
    spread: np.ndarray
    stderr: np.ndarray


def bond_currents(batch):
    """Net particle flux across every cut ``(x, x+1)``, shape (R, K, N)."""
    if batch.geometry.d != 1:
        raise ValueError("current spread is defined for d = 1")
    occ = batch.occupations().astype(np.int64)
    N = batch.n_sites
    c = np.cumsum(occ[:, 1:, :] - occ[:, :1, :], axis=-1)
    Q = batch.displacement[:, :, 0]
    tot = Q + c.sum(axis=-1)
    if np.any(tot % N):
        raise RuntimeError("flux reconstruction inconsistent with particle conservation")
    return (tot // N)[..., None] - c


def estimate_current_spread(batch, allow_wrap=False):
    """``sum_x |x| S(x, t)`` as the variance of the time-integrated bond current."""
    _guard(batch, allow_wrap)
    J = bond_currents(batch).astype(float)
    N = batch.n_sites
    m = _conditional_mean(batch)[..., 0] / N
    Y = ((J - m[..., None]) ** 2).mean(axis=-1)
    R = batch.replicas
    err = Y.std(axis=0, ddof=1) / np.sqrt(R) if R > 1 else np.full(Y.shape[1], np.nan)
    return SpreadEstimate(batch.t_obs, Y.mean(axis=0), err)


# -------------------------------------------------------------- estimator

class EquilibriumKMC(BaseEstimator):
    """Simulate at equilibrium and attach velocity, diffusivity and spread estimates."""

    def __init__(self, sides=(1024,), rho=0.5, t_obs=(1.0,), replicas=100, seed=0,
                 dimension=1, allow_wrap=False, n_jobs=1):
        self.sides = sides
        self.rho = rho
        self.t_obs = t_obs
        self.replicas = replicas
        self.seed = seed
        self.dimension = dimension
        self.allow_wrap = allow_wrap
        self.n_jobs = n_jobs

    def fit(self, X=None, y=None):
        law = tasep_law(self.dimension)
        geom = torus_for(law, self.sides)
        self.batch_ = simulate(geom, law, self.rho, self.t_obs, self.replicas,
                               self.seed, n_jobs=self.n_jobs)
        self.velocity_ = estimate_velocity(self.batch_, self.allow_wrap)
        self.diffusivity_ = estimate_diffusivity(self.batch_, allow_wrap=self.allow_wrap)
        self.spread_ = (estimate_current_spread(self.batch_, self.allow_wrap)
                        if geom.d == 1 else None)
        return self
