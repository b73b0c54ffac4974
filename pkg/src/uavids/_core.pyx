# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: split search, tree routing and path-dependent TreeSHAP.

Every routine mirrors ``_core_py`` operation for operation (same summation
order, same tie rules) so both backends grow bitwise-identical trees.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, NAN, isnan
from libc.stdlib cimport malloc, free

cnp.import_array()

ctypedef cnp.int64_t i64

cdef double HESS_FLOOR = 1e-16


def best_split_class(const double[:, ::1] X, const i64[::1] idx, const i64[::1] y,
                     const double[::1] w, int K, const i64[::1] features):
    cdef Py_ssize_t n = idx.shape[0], i, k, fi, f
    cdef double[::1] xbuf = np.empty(n)
    cdef double[::1] xs = np.empty(n)
    cdef double[::1] ws = np.empty(n)
    cdef i64[::1] ys = np.empty(n, dtype=np.int64)
    cdef double[::1] cl = np.zeros(K)
    cdef double[::1] cp = np.zeros(K)
    cdef const i64[::1] order
    cdef double wp, wl, wr, sqp, sql, sqr, r, gp, d, fbest, fthr
    cdef i64 best_f = -1
    cdef double best_t = NAN, best_d = -INFINITY
    if n < 2:
        return best_f, best_t, best_d
    for fi in range(features.shape[0]):
        f = features[fi]
        for i in range(n):
            xbuf[i] = X[idx[i], f]
        order = np.argsort(np.asarray(xbuf), kind="stable")
        for i in range(n):
            xs[i] = xbuf[order[i]]
            ys[i] = y[idx[order[i]]]
            ws[i] = w[idx[order[i]]]
        if xs[0] == xs[n - 1]:
            continue
        for k in range(K):
            cp[k] = 0.0
            cl[k] = 0.0
        wp = 0.0
        for i in range(n):
            cp[ys[i]] += ws[i]
            wp += ws[i]
        sqp = 0.0
        for k in range(K):
            sqp += cp[k] * cp[k]
        gp = 1.0 - sqp / (wp * wp)
        wl = 0.0
        fbest = -INFINITY
        fthr = NAN
        for i in range(n - 1):
            cl[ys[i]] += ws[i]
            wl += ws[i]
            if xs[i] < xs[i + 1]:
                wr = wp - wl
                if wl <= 0.0 or wr <= 0.0:
                    continue
                sql = 0.0
                sqr = 0.0
                for k in range(K):
                    sql += cl[k] * cl[k]
                    r = cp[k] - cl[k]
                    sqr += r * r
                d = gp - ((wl - sql / wl) + (wr - sqr / wr)) / wp
                if d > fbest:
                    fbest = d
                    fthr = 0.5 * (xs[i] + xs[i + 1])
                    if fthr == xs[i + 1]:
                        fthr = xs[i]
        if fbest > best_d:
            best_d = fbest
            best_t = fthr
            best_f = f
    return best_f, best_t, best_d


def random_split_class(const double[:, ::1] X, const i64[::1] idx, const i64[::1] y,
                       const double[::1] w, int K, const i64[::1] features,
                       const double[::1] thresholds):
    cdef Py_ssize_t n = idx.shape[0], i, k, fi, f, row
    cdef double[::1] cl = np.zeros(K)
    cdef double[::1] cp = np.zeros(K)
    cdef double wp, wl, wr, sqp, sql, sqr, r, gp, d, t
    cdef i64 best_f = -1
    cdef double best_t = NAN, best_d = -INFINITY
    for k in range(K):
        cp[k] = 0.0
    wp = 0.0
    for i in range(n):
        row = idx[i]
        cp[y[row]] += w[row]
        wp += w[row]
    sqp = 0.0
    for k in range(K):
        sqp += cp[k] * cp[k]
    gp = 1.0 - sqp / (wp * wp)
    for fi in range(features.shape[0]):
        f = features[fi]
        t = thresholds[fi]
        if isnan(t):
            continue
        for k in range(K):
            cl[k] = 0.0
        wl = 0.0
        for i in range(n):
            row = idx[i]
            if X[row, f] <= t:
                cl[y[row]] += w[row]
                wl += w[row]
        wr = wp - wl
        if wl <= 0.0 or wr <= 0.0:
            continue
        sql = 0.0
        sqr = 0.0
        for k in range(K):
            sql += cl[k] * cl[k]
            r = cp[k] - cl[k]
            sqr += r * r
        d = gp - ((wl - sql / wl) + (wr - sqr / wr)) / wp
        if d > best_d:
            best_d = d
            best_t = t
            best_f = f
    return best_f, best_t, best_d


cdef inline double _score(double G, double H, double lam) nogil:
    cdef double den = H + lam
    if den < HESS_FLOOR:
        den = HESS_FLOOR
    return G * G / den


def best_split_grad(const double[:, ::1] X, const i64[::1] idx, const double[::1] g,
                    const double[::1] h, const i64[::1] features, double lam, double gamma):
    cdef Py_ssize_t n = idx.shape[0], i, fi, f
    cdef double[::1] xbuf = np.empty(n)
    cdef double[::1] xs = np.empty(n)
    cdef double[::1] gs = np.empty(n)
    cdef double[::1] hs = np.empty(n)
    cdef const i64[::1] order
    cdef double G, H, GL, HL, base, gain, fbest, fthr
    cdef i64 best_f = -1
    cdef double best_t = NAN, best_d = -INFINITY
    if n < 2:
        return best_f, best_t, best_d
    for fi in range(features.shape[0]):
        f = features[fi]
        for i in range(n):
            xbuf[i] = X[idx[i], f]
        order = np.argsort(np.asarray(xbuf), kind="stable")
        for i in range(n):
            xs[i] = xbuf[order[i]]
            gs[i] = g[idx[order[i]]]
            hs[i] = h[idx[order[i]]]
        if xs[0] == xs[n - 1]:
            continue
        G = 0.0
        H = 0.0
        for i in range(n):
            G += gs[i]
            H += hs[i]
        base = _score(G, H, lam)
        GL = 0.0
        HL = 0.0
        fbest = -INFINITY
        fthr = NAN
        for i in range(n - 1):
            GL += gs[i]
            HL += hs[i]
            if xs[i] < xs[i + 1]:
                gain = 0.5 * (_score(GL, HL, lam) + _score(G - GL, H - HL, lam) - base) - gamma
                if gain > fbest:
                    fbest = gain
                    fthr = 0.5 * (xs[i] + xs[i + 1])
                    if fthr == xs[i + 1]:
                        fthr = xs[i]
        if fbest > best_d:
            best_d = fbest
            best_t = fthr
            best_f = f
    return best_f, best_t, best_d


def apply_tree(const double[:, ::1] X, const i64[::1] feature, const double[::1] threshold,
               const i64[::1] left, const i64[::1] right):
    cdef Py_ssize_t n = X.shape[0], i
    cdef i64 node
    out = np.empty(n, dtype=np.int64)
    cdef i64[::1] leaf = out
    with nogil:
        for i in range(n):
            node = 0
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            leaf[i] = node
    return out


# -- path-dependent TreeSHAP --------------------------------------------------

cdef struct PathElem:
    i64 feature
    double zero_frac
    double one_frac
    double weight


cdef void _extend(PathElem* m, int l, double pz, double po, i64 pi) nogil:
    cdef int i
    m[l].feature = pi
    m[l].zero_frac = pz
    m[l].one_frac = po
    m[l].weight = 1.0 if l == 0 else 0.0
    i = l - 1
    while i >= 0:
        m[i + 1].weight += po * m[i].weight * (i + 1) / <double>(l + 1)
        m[i].weight = pz * m[i].weight * (l - i) / <double>(l + 1)
        i -= 1


cdef void _unwind(PathElem* m, int l, int idx) nogil:
    # l is the index of the last element; the path shrinks by one
    cdef double po = m[idx].one_frac, pz = m[idx].zero_frac
    cdef double nxt = m[l].weight, tmp
    cdef int j = l - 1
    while j >= 0:
        if po != 0.0:
            tmp = m[j].weight
            m[j].weight = nxt * (l + 1) / ((j + 1) * po)
            nxt = tmp - m[j].weight * pz * (l - j) / <double>(l + 1)
        else:
            m[j].weight = m[j].weight * (l + 1) / (pz * (l - j))
        j -= 1
    for j in range(idx, l):
        m[j].feature = m[j + 1].feature
        m[j].zero_frac = m[j + 1].zero_frac
        m[j].one_frac = m[j + 1].one_frac


cdef double _unwound_sum(PathElem* m, int l, int idx) nogil:
    cdef double po = m[idx].one_frac, pz = m[idx].zero_frac
    cdef double nxt = m[l].weight, tmp, total = 0.0
    cdef int j = l - 1
    while j >= 0:
        if po != 0.0:
            tmp = nxt * (l + 1) / ((j + 1) * po)
            total += tmp
            nxt = m[j].weight - tmp * pz * (l - j) / <double>(l + 1)
        else:
            total += m[j].weight * (l + 1) / (pz * (l - j))
        j -= 1
    return total


cdef void _recurse(i64 node, PathElem* parent, int plen, double pz, double po, i64 pi,
                   const double* x, const i64* feature, const double* threshold,
                   const i64* left, const i64* right, const double* value, int V,
                   const double* cover, double* phi) nogil:
    # copy the parent path into this frame's slot, which starts right after it
    cdef PathElem* m = parent + plen
    cdef int i, v, k, l
    cdef double w, scale, iz, io
    cdef i64 hot, cold, f
    for i in range(plen):
        m[i] = parent[i]
    _extend(m, plen, pz, po, pi)
    l = plen  # index of last element
    f = feature[node]
    if f < 0:
        for i in range(1, l + 1):
            w = _unwound_sum(m, l, i)
            scale = w * (m[i].one_frac - m[i].zero_frac)
            for v in range(V):
                phi[m[i].feature * V + v] += scale * value[node * V + v]
        return
    if x[f] <= threshold[node]:
        hot = left[node]
        cold = right[node]
    else:
        hot = right[node]
        cold = left[node]
    iz = 1.0
    io = 1.0
    k = -1
    for i in range(1, l + 1):
        if m[i].feature == f:
            k = i
            break
    if k >= 0:
        iz = m[k].zero_frac
        io = m[k].one_frac
        _unwind(m, l, k)
        l -= 1
    _recurse(hot, m, l + 1, iz * cover[hot] / cover[node], io, f,
             x, feature, threshold, left, right, value, V, cover, phi)
    _recurse(cold, m, l + 1, iz * cover[cold] / cover[node], 0.0, f,
             x, feature, threshold, left, right, value, V, cover, phi)


def tree_shap(const double[::1] x, const i64[::1] feature, const double[::1] threshold,
              const i64[::1] left, const i64[::1] right, const double[:, ::1] value,
              const double[::1] cover, int max_depth):
    """Shapley values (d x V) of one tree at one instance."""
    cdef int d = x.shape[0], V = value.shape[1]
    out = np.zeros((d, V))
    cdef double[:, ::1] phi = out
    cdef int depth = max_depth + 2
    cdef PathElem* buf = <PathElem*> malloc(sizeof(PathElem) * (depth * (depth + 1)) // 2 + 8)
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            _recurse(0, buf, 0, 1.0, 1.0, -1, &x[0], &feature[0], &threshold[0],
                     &left[0], &right[0], &value[0, 0], V, &cover[0], &phi[0, 0])
    finally:
        free(buf)
    return out
