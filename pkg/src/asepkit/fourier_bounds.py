"""Degree-three Fourier integrals and small-lambda scaling fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quadrature import pairwise_sum, symmetric_rule


class QuadratureError(RuntimeError):
    pass


def dispersion_omega(p, d=1):
    """Lattice Laplacian symbol ``sum_k (2 - 2 cos p_k)``.

    ``p`` has a trailing axis of length ``d`` when ``d == 2``. Evaluated as
    ``4 sin^2(p/2)`` to avoid cancellation near 0.
    """
    p = np.asarray(p, dtype=float)
    w = 4.0 * np.sin(0.5 * p) ** 2
    if d == 1:
        return w
    if p.shape[-1] != d:
        raise ValueError(f"last axis must have length {d}")
    return w.sum(axis=-1)


def _converged_rule(integrate, tol, max_refine=6):
    """Evaluate with a graded rule and its refinement until they agree."""
    prev = integrate(0)
    for r in range(1, max_refine + 1):
        cur = integrate(r)
        change = abs(cur - prev) / abs(cur)
        if change < tol:
            return cur, change, r
        prev = cur
    raise QuadratureError(f"mesh refinement did not converge (last change {change:.2e})")


# ------------------------------------------------------------------ bubble

BOX = 1.0 / 8.0


def bubble_kernel(u, lam, d=1, box=BOX, order=8, tol=1e-8):
    """``B(u, lam) = int_{|v_k| <= box} dv / (lam + |u+v|^2 + |u-v|^2 + |u|^2)``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.size != d:
        raise ValueError(f"u must have {d} components")
    a = lam + 3.0 * float(u @ u)
    h = np.sqrt(a) / 8

    def run(refine):
        v, wv = symmetric_rule(h, order, top=box, refine=refine)
        if d == 1:
            return pairwise_sum(wv / (a + 2 * v * v))
        V1, V2 = v[:, None], v[None, :]
        vals = (wv[:, None] * wv[None, :]) / (a + 2 * (V1 ** 2 + V2 ** 2))
        return pairwise_sum(vals)

    return _converged_rule(run, tol)[0]


# ------------------------------------------------------- lower integrals

@dataclass
class IntegralResult:
    value: float
    change: float
    refinements: int


def _d1_integrand(x, lam):
    w = dispersion_omega(x)
    return 1.0 / (lam + w / np.sqrt(lam + w))


def _d2_integrand(X, Y, lam):
    wx, wy = dispersion_omega(X), dispersion_omega(Y)
    s = lam + wx + wy
    return 1.0 / (s + wx * np.abs(np.log(s)))


def degree3_lower_integral(lam, d=1, region="full", order=8, tol=1e-4, full=False):
    """Lower-bound integral for the n = 3 free pairing.

    ``d=1``: ``int dxi / (lam + omega (lam + omega)^{-1/2})``;
    ``d=2``: ``int int / (lam + omega(eta) + omega(xi) + omega(xi)|log(...)|)``.
    ``region="box"`` restricts to ``[-1/8, 1/8]^d`` (diagnostic). The mesh is
    graded toward 0 down to ``min(sqrt(lam), lam^{3/4})/8`` and refined until
    successive meshes agree to ``tol``.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    top = np.pi if region == "full" else BOX
    h = min(np.sqrt(lam), lam ** 0.75) / 8

    def run(refine):
        x, w = symmetric_rule(h, order, top=top, refine=refine)
        if d == 1:
            return pairwise_sum(w * _d1_integrand(x, lam))
        X, Y = x[:, None], x[None, :]
        return pairwise_sum((w[:, None] * w[None, :]) * _d2_integrand(X, Y, lam))

    if d not in (1, 2):
        raise ValueError("d must be 1 or 2")
    val, change, r = _converged_rule(run, tol * 0.1)
    res = IntegralResult(val, change, r)
    return res if full else res.value


# --------------------------------------------------------- upper form

@dataclass
class UpperForm:
    rhs: float
    lhs_bubble: float
    lhs_exact: float | None


def _line_function(F, d):
    """Callable ``u -> F^(u, -u)`` from a callable or a uniform-grid sample."""
    if callable(F):
        return F
    vals = np.asarray(F, dtype=complex)
    n = vals.shape[0]
    if d == 2:
        raise ValueError("grid input supported for d=1; pass a callable in d=2")
    coef = np.fft.fft(vals) / n          # samples at u_j = -pi + 2 pi j / n
    energy = np.abs(coef) ** 2
    k = np.fft.fftfreq(n, 1.0 / n)
    tail = energy[np.abs(k) >= n // 4].sum()
    if tail > 1e-10 * energy.sum():
        raise QuadratureError("grid too coarse: spectrum not resolved below Nyquist")

    def interp(u):
        u = np.asarray(u, dtype=float)
        ph = np.exp(1j * np.multiply.outer(u + np.pi, k))
        return ph @ coef

    return interp


def degree3_upper_form(F, lam, d=1, order=8, exact=True):
    """Both sides of the degree-three upper bound for ``F`` in ``M_2``.

    ``rhs``: ``int omega(u)(lam+omega(u))^{-1/2}|F^|^2`` (d=1) or
    ``int omega(e1.u)|log(lam+omega(u))||F^|^2`` (d=2).
    ``lhs_bubble``: ``int omega(e1.u) B(u, lam) |F^|^2`` over ``|u_k| <= 1/8``.
    ``lhs_exact`` (d=1): the quadratic form of ``A+* (lam-Delta)^{-1} A+`` on
    the symmetrised ``F`` over the zero-sum plane.
    """
    f = _line_function(F, d)
    h = min(np.sqrt(lam), lam ** 0.75) / 8
    u, wu = symmetric_rule(h, order)
    if d == 1:
        F2 = np.abs(f(u)) ** 2
        om = dispersion_omega(u)
        rhs = pairwise_sum(wu * om / np.sqrt(lam + om) * F2)
        ub, wb = symmetric_rule(h, order, top=BOX)
        Fb = np.abs(f(ub)) ** 2
        B = np.array([bubble_kernel(x, lam, 1) for x in ub])
        lhs_b = pairwise_sum(wb * dispersion_omega(ub) * B * Fb)
        lhs_e = _exact_raising_form(f, lam, order) if exact else None
        return UpperForm(rhs, lhs_b, lhs_e)
    U1, U2 = u[:, None], u[None, :]
    WW = wu[:, None] * wu[None, :]
    Fv = np.abs(f(np.stack(np.broadcast_arrays(U1, U2), axis=-1))) ** 2
    om = dispersion_omega(U1) + dispersion_omega(U2)
    rhs = pairwise_sum(WW * dispersion_omega(U1) * np.abs(np.log(lam + om)) * Fv)
    ub, wb = symmetric_rule(h, max(4, order // 2), top=BOX)
    B = np.array([[bubble_kernel((a, b), lam, 2, order=4, tol=1e-5) for b in ub] for a in ub])
    Fb = np.abs(f(np.stack(np.broadcast_arrays(ub[:, None], ub[None, :]), axis=-1))) ** 2
    lhs_b = pairwise_sum((wb[:, None] * wb[None, :]) * dispersion_omega(ub)[:, None] * B * Fb)
    return UpperForm(rhs, lhs_b, None)


def _exact_raising_form(f, lam, order):
    """``<<A+F, (lam - Delta)^{-1} A+F>>`` for the symmetrised line function."""
    h = min(np.sqrt(lam), lam ** 0.75) / 8
    r, w = symmetric_rule(h, order)
    phi = 0.5 * (f(r) + f(-r))
    om = dispersion_omega
    p1, p2 = r[:, None], r[None, :]
    p3 = -p1 - p2
    D = lam + 0.5 * (om(p1) + om(p2) + om(p3))
    phi3 = 0.5 * (f(-p3) + f(p3))
    s1 = np.sin(p2) + np.sin(p3)
    s2 = np.sin(p1) + np.sin(p3)
    s3 = np.sin(p1) + np.sin(p2)
    amp = phi[:, None] * s1 + phi[None, :] * s2 + phi3 * s3
    val = (w[:, None] * w[None, :]) * np.abs(amp) ** 2 / D
    return pairwise_sum(val) / (6 * (2 * np.pi) ** 2)


# ------------------------------------------------------------------ fits

@dataclass
class ScalingSeries:
    lambdas: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=float)
        val = np.asarray(self.values, dtype=float)
        order = np.argsort(lam)[::-1]
        lam, val = lam[order], val[order]
        if lam.size != val.size:
            raise ValueError("lambdas and values differ in length")
        if lam.size < 5:
            raise ValueError("a scaling fit needs at least 5 points")
        if np.any(lam <= 0) or np.any(np.diff(lam) >= 0):
            raise ValueError("lambdas must be positive and distinct")
        if np.any(val <= 0):
            raise ValueError("values must be positive")
        self.lambdas, self.values = lam, val


@dataclass
class ScalingFit:
    model: str
    exponent: float
    intercept: float
    stderr: float
    residual: float
    residuals: np.ndarray

    def band(self, z=1.96):
        return self.exponent - z * self.stderr, self.exponent + z * self.stderr


def fit_scaling(series, model="power"):
    """Least squares in log coordinates.

    ``power``: ``log v = a log lam + c``; ``logpower``: ``log v = b log|log lam| + c``.
    """
    if not isinstance(series, ScalingSeries):
        series = ScalingSeries(*series)
    y = np.log(series.values)
    if model == "power":
        x = np.log(series.lambdas)
    elif model == "logpower":
        if np.any(series.lambdas >= 1):
            raise ValueError("log-power fits need lambda < 1")
        x = np.log(np.abs(np.log(series.lambdas)))
    else:
        raise ValueError(f"unknown model {model!r}")
    if np.ptp(x) == 0:
        raise ValueError("zero variance in the abscissa")
    A = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    dof = max(len(x) - 2, 1)
    s2 = res @ res / dof
    cov = s2 * np.linalg.inv(A.T @ A)
    return ScalingFit(model, float(coef[0]), float(coef[1]), float(np.sqrt(cov[0, 0])),
                      float(np.linalg.norm(res)), res)


def scaling_series(lambdas, d=1, **kw):
    lam = np.asarray(lambdas, dtype=float)
    return ScalingSeries(lam, np.array([degree3_lower_integral(l, d, **kw) for l in lam]))
