"""Compiled inner loops for the SGD and PGD update rules.

Every update is applied in place and in statement order: a later line sees the
values written by an earlier one (e.g. the item-vector step uses the freshly
updated user vector).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def mf_epoch(users, items, values, order, mu, bu, bi, P, Q, delta, lam):
    """One SGD pass of the biased MF updates; returns the sum of squared errors seen."""
    k = P.shape[1]
    sse = 0.0
    for t in range(order.shape[0]):
        idx = order[t]
        u = users[idx]
        i = items[idx]
        dot = 0.0
        for f in range(k):
            dot += Q[i, f] * P[u, f]
        e = values[idx] - (mu + bu[u] + bi[i] + dot)
        sse += e * e
        bu[u] += delta * (e - lam * bu[u])
        bi[i] += delta * (e - lam * bi[i])
        for f in range(k):
            P[u, f] += delta * (e * Q[i, f] - lam * P[u, f])
        for f in range(k):
            Q[i, f] += delta * (e * P[u, f] - lam * Q[i, f])
    return sse


@njit(cache=True)
def device_epoch(rows, values, order, mu, bu_star, pu_star, b_shared, V_shared, counts, delta, lam):
    """One on-device pass over a user's private ratings.

    ``rows[j]`` selects the shared row (item or cluster) for rating ``j``; the
    shared-parameter steps are divided by ``counts[row]`` (all ones for items).
    ``bu_star`` is a length-1 array so the bias can be updated in place.
    """
    k = pu_star.shape[0]
    sse = 0.0
    for t in range(order.shape[0]):
        idx = order[t]
        c = rows[idx]
        dot = 0.0
        for f in range(k):
            dot += V_shared[c, f] * pu_star[f]
        e = values[idx] - (mu + bu_star[0] + b_shared[c] + dot)
        sse += e * e
        n = counts[c]
        bu_star[0] += delta * (e - lam * bu_star[0])
        b_shared[c] += delta * (e - lam * b_shared[c]) / n
        for f in range(k):
            pu_star[f] += delta * (e * V_shared[c, f] - lam * pu_star[f])
        for f in range(k):
            V_shared[c, f] += delta * (e * pu_star[f] - lam * V_shared[c, f]) / n
    return sse


@njit(cache=True)
def joint_epoch(users, items, values, order, mu, bu, bi, P, C, W, delta, lam):
    """One pass of joint MF + soft clustering with projection of weights onto w >= 0.

    ``C`` is (k, z) and ``W`` is (n_items, z); the item factor is ``C @ W[i]``.
    Returns (sse, min weight seen after projection).
    """
    k, z = C.shape
    q = np.empty(k)
    g = np.empty(z)
    sse = 0.0
    wmin = np.inf
    for t in range(order.shape[0]):
        idx = order[t]
        u = users[idx]
        i = items[idx]
        for f in range(k):
            acc = 0.0
            for j in range(z):
                acc += C[f, j] * W[i, j]
            q[f] = acc
        dot = 0.0
        for f in range(k):
            dot += q[f] * P[u, f]
        e = values[idx] - (mu + bu[u] + bi[i] + dot)
        sse += e * e
        bu[u] += delta * (e - lam * bu[u])
        bi[i] += delta * (e - lam * bi[i])
        for f in range(k):
            P[u, f] += delta * (e * q[f] - lam * P[u, f])
        for f in range(k):
            for j in range(z):
                C[f, j] += delta * (e * P[u, f] * W[i, j] - lam * C[f, j])
        for j in range(z):
            acc = 0.0
            for f in range(k):
                acc += C[f, j] * P[u, f]
            g[j] = acc
        for j in range(z):
            w = W[i, j] + delta * (e * g[j] - lam * W[i, j])
            if w < 0.0:
                w = 0.0
            W[i, j] = w
            if w < wmin:
                wmin = w
    return sse, wmin
