"""Pure-Python/numpy kernels, used when the compiled ``_core`` extension is absent.

Summations run in the same order as the compiled code so both backends pick
identical splits.  Only elementwise numpy operations and sequential
``cumsum``/``bincount`` reductions are used; pairwise ``np.sum`` would break
that guarantee.
"""
from __future__ import annotations

import numpy as np

HESS_FLOOR = 1e-16


def _seq_sum_sq(cols: np.ndarray) -> np.ndarray:
    """Row-wise sum of squares, accumulated left to right."""
    acc = np.zeros(cols.shape[0])
    for k in range(cols.shape[1]):
        acc = acc + cols[:, k] * cols[:, k]
    return acc


def best_split_class(X, idx, y, w, K, features):
    n = len(idx)
    best_f, best_t, best_d = -1, float("nan"), -float("inf")
    if n < 2:
        return best_f, best_t, best_d
    yi, wi = y[idx], w[idx]
    rows = np.arange(n)
    for f in features:
        x = X[idx, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        if xs[0] == xs[-1]:
            continue
        ws = wi[order]
        M = np.zeros((n, K))
        M[rows, yi[order]] = ws
        cl = np.cumsum(M, axis=0)
        wl = np.cumsum(ws)
        cp, wp = cl[-1], wl[-1]
        sqp = 0.0
        for k in range(K):
            sqp = sqp + cp[k] * cp[k]
        gp = 1.0 - sqp / (wp * wp)
        cand = np.flatnonzero(xs[:-1] < xs[1:])
        wL = wl[cand]
        wR = wp - wL
        ok = (wL > 0.0) & (wR > 0.0)
        cand, wL, wR = cand[ok], wL[ok], wR[ok]
        if not len(cand):
            continue
        L = cl[cand]
        R = cp - L
        d = gp - ((wL - _seq_sum_sq(L) / wL) + (wR - _seq_sum_sq(R) / wR)) / wp
        j = int(np.argmax(d))
        if d[j] > best_d:
            c = cand[j]
            thr = 0.5 * (xs[c] + xs[c + 1])
            if thr == xs[c + 1]:
                thr = xs[c]
            best_f, best_t, best_d = int(f), float(thr), float(d[j])
    return best_f, best_t, best_d


def random_split_class(X, idx, y, w, K, features, thresholds):
    best_f, best_t, best_d = -1, float("nan"), -float("inf")
    yi, wi = y[idx], w[idx]
    cp = np.bincount(yi, weights=wi, minlength=K)
    wp = float(np.cumsum(wi)[-1])
    sqp = 0.0
    for k in range(K):
        sqp = sqp + cp[k] * cp[k]
    gp = 1.0 - sqp / (wp * wp)
    for f, t in zip(features, thresholds):
        if np.isnan(t):
            continue
        mask = X[idx, f] <= t
        if not mask.any():
            continue
        cl = np.bincount(yi[mask], weights=wi[mask], minlength=K)
        wl = float(np.cumsum(wi[mask])[-1])
        wr = wp - wl
        if wl <= 0.0 or wr <= 0.0:
            continue
        sql = sqr = 0.0
        for k in range(K):
            sql = sql + cl[k] * cl[k]
            r = cp[k] - cl[k]
            sqr = sqr + r * r
        d = gp - ((wl - sql / wl) + (wr - sqr / wr)) / wp
        if d > best_d:
            best_f, best_t, best_d = int(f), float(t), float(d)
    return best_f, best_t, best_d


def _score(G, H, lam):
    return G * G / np.maximum(H + lam, HESS_FLOOR)


def best_split_grad(X, idx, g, h, features, lam, gamma):
    n = len(idx)
    best_f, best_t, best_d = -1, float("nan"), -float("inf")
    if n < 2:
        return best_f, best_t, best_d
    gi, hi = g[idx], h[idx]
    for f in features:
        x = X[idx, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        if xs[0] == xs[-1]:
            continue
        GL = np.cumsum(gi[order])
        HL = np.cumsum(hi[order])
        G, H = GL[-1], HL[-1]
        base = _score(G, H, lam)
        cand = np.flatnonzero(xs[:-1] < xs[1:])
        gl, hl = GL[cand], HL[cand]
        gain = 0.5 * (_score(gl, hl, lam) + _score(G - gl, H - hl, lam) - base) - gamma
        j = int(np.argmax(gain))
        if gain[j] > best_d:
            c = cand[j]
            thr = 0.5 * (xs[c] + xs[c + 1])
            if thr == xs[c + 1]:
                thr = xs[c]
            best_f, best_t, best_d = int(f), float(thr), float(gain[j])
    return best_f, best_t, best_d


def apply_tree(X, feature, threshold, left, right):
    n = X.shape[0]
    node = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    while active.size:
        nd = node[active]
        internal = feature[nd] >= 0
        active, nd = active[internal], nd[internal]
        if not active.size:
            break
        go_left = X[active, feature[nd]] <= threshold[nd]
        node[active] = np.where(go_left, left[nd], right[nd])
    return node


# -- path-dependent TreeSHAP ---------------------------------------------------

def _extend(m, pz, po, pi):
    l = len(m)
    m.append([pi, pz, po, 1.0 if l == 0 else 0.0])
    for i in range(l - 1, -1, -1):
        m[i + 1][3] += po * m[i][3] * (i + 1) / float(l + 1)
        m[i][3] = pz * m[i][3] * (l - i) / float(l + 1)


def _unwind(m, idx):
    l = len(m) - 1
    pz, po = m[idx][1], m[idx][2]
    nxt = m[l][3]
    for j in range(l - 1, -1, -1):
        if po != 0.0:
            tmp = m[j][3]
            m[j][3] = nxt * (l + 1) / ((j + 1) * po)
            nxt = tmp - m[j][3] * pz * (l - j) / float(l + 1)
        else:
            m[j][3] = m[j][3] * (l + 1) / (pz * (l - j))
    for j in range(idx, l):
        m[j][0:3] = m[j + 1][0:3]
    m.pop()


def _unwound_sum(m, idx):
    l = len(m) - 1
    pz, po = m[idx][1], m[idx][2]
    nxt = m[l][3]
    total = 0.0
    for j in range(l - 1, -1, -1):
        if po != 0.0:
            tmp = nxt * (l + 1) / ((j + 1) * po)
            total += tmp
            nxt = m[j][3] - tmp * pz * (l - j) / float(l + 1)
        else:
            total += m[j][3] * (l + 1) / (pz * (l - j))
    return total


def tree_shap(x, feature, threshold, left, right, value, cover, max_depth):
    d, V = len(x), value.shape[1]
    phi = np.zeros((d, V))
    feature = feature.tolist()
    threshold = threshold.tolist()
    left, right, cover = left.tolist(), right.tolist(), cover.tolist()
    x = x.tolist()

    def recurse(node, parent, pz, po, pi):
        m = [list(e) for e in parent]
        _extend(m, pz, po, pi)
        f = feature[node]
        if f < 0:
            for i in range(1, len(m)):
                w = _unwound_sum(m, i)
                phi[m[i][0]] += w * (m[i][2] - m[i][1]) * value[node]
            return
        if x[f] <= threshold[node]:
            hot, cold = left[node], right[node]
        else:
            hot, cold = right[node], left[node]
        iz = io = 1.0
        for i in range(1, len(m)):
            if m[i][0] == f:
                iz, io = m[i][1], m[i][2]
                _unwind(m, i)
                break
        recurse(hot, m, iz * cover[hot] / cover[node], io, f)
        recurse(cold, m, iz * cover[cold] / cover[node], 0.0, f)

    recurse(0, [], 1.0, 1.0, -1)
    return phi
