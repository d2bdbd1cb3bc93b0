"""Graded Gauss-Legendre meshes on the Brillouin zone."""

import numpy as np


def dyadic_edges(h_min, top=np.pi):
    """Panel edges ``0, h, 2h, 4h, ..., top`` refined geometrically toward 0."""
    edges = [0.0]
    h = h_min
    while h < top:
        edges.append(h)
        h *= 2.0
    edges.append(top)
    return np.array(edges)


def graded_rule(h_min, order=8, top=np.pi, refine=0):
    """Nodes/weights on ``[0, top]`` with panels graded toward 0.

    ``refine`` splits every panel into ``2**refine`` equal sub-panels.
    """
    edges = dyadic_edges(h_min, top)
    if refine:
        fine = [edges[0]]
        for a, b in zip(edges[:-1], edges[1:]):
            fine.extend(np.linspace(a, b, 2 ** refine + 1)[1:])
        edges = np.array(fine)
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (b - a) * x + 0.5 * (b + a)).ravel()
    weights = (0.5 * (b - a) * w).ravel()
    return nodes, weights


def symmetric_rule(h_min, order=8, top=np.pi, refine=0):
    """Rule on ``[-top, top]`` graded toward 0 from both sides."""
    x, w = graded_rule(h_min, order, top, refine)
    return np.concatenate([-x[::-1], x]), np.concatenate([w[::-1], w])


def pairwise_sum(values):
    """Deterministic pairwise (tree) reduction of a 1-D array."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        return 0.0
    while v.size > 1:
        if v.size % 2:
            v = np.append(v, 0.0)
        v = v[0::2] + v[1::2]
    return float(v[0])
