"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``HPN_DISABLE_NUMBA`` is unset (or ``0``).  Both paths compute the
same quantities; ``benchmarks/bench_kernels.py`` times one against the other.
"""
import os

import numpy as np

_DISABLED = os.environ.get("HPN_DISABLE_NUMBA", "0") not in ("", "0", "false", "False")

try:
    if _DISABLED:
        raise ImportError("numba disabled by HPN_DISABLE_NUMBA")
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False

BACKEND = "numba" if NUMBA_AVAILABLE else "numpy"

NORM_EPS = 1e-12


# ---------------------------------------------------------------------------
# pure-numpy reference implementations
# ---------------------------------------------------------------------------

def _cosine_matrix_np(E, P):
    ne = np.sqrt(np.einsum("ij,ij->i", E, E))
    npn = np.sqrt(np.einsum("ij,ij->i", P, P))
    dots = E @ P.T
    denom = np.outer(ne, npn)
    out = np.zeros_like(dots)
    ok = denom > 0
    ok &= (ne[:, None] >= NORM_EPS) & (npn[None, :] >= NORM_EPS)
    out[ok] = dots[ok] / denom[ok]
    return np.clip(out, -1.0, 1.0)


def _jacobi_eigvals_np(S, tol, max_sweeps):
    a = np.array(S, dtype=np.float64, copy=True)
    n = a.shape[0]
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-18 * (abs(a[p, p]) + abs(a[q, q])):
                    # negligible; rotating would overflow theta
                    a[p, q] = a[q, p] = 0.0
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :].copy()
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
    return np.diag(a).copy()


def _min_pair_distance_np(X, Y, chunk=512):
    best = np.inf
    yy = np.einsum("ij,ij->i", Y, Y)
    for start in range(0, X.shape[0], chunk):
        xs = X[start:start + chunk]
        xx = np.einsum("ij,ij->i", xs, xs)
        d2 = xx[:, None] + yy[None, :] - 2.0 * (xs @ Y.T)
        m = d2.min()
        if m < best:
            # recompute the winning pair exactly; the expanded form loses digits near 0
            i, j = np.unravel_index(np.argmin(d2), d2.shape)
            diff = xs[i] - Y[j]
            best = min(best, float(diff @ diff), max(float(m), 0.0))
            if best == 0.0:
                return 0.0
    return float(np.sqrt(best))


def _hop_frontiers_np(indptr, indices, allowed, v, hops):
    seen = np.zeros(allowed.shape[0], dtype=np.bool_)
    seen[v] = True
    frontier = np.array([v], dtype=np.int64)
    out = []
    offsets = [0]
    for _ in range(hops):
        if frontier.size:
            nbrs = np.concatenate([indices[indptr[u]:indptr[u + 1]] for u in frontier])
            nbrs = np.unique(nbrs)
            nbrs = nbrs[allowed[nbrs] & ~seen[nbrs]]
        else:
            nbrs = np.empty(0, dtype=np.int64)
        seen[nbrs] = True
        out.append(nbrs)
        offsets.append(offsets[-1] + nbrs.size)
        frontier = nbrs
    flat = np.concatenate(out) if out else np.empty(0, dtype=np.int64)
    return flat.astype(np.int64), np.asarray(offsets, dtype=np.int64)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if NUMBA_AVAILABLE:

    @njit(cache=True)
    def _cosine_matrix_nb(E, P):
        n, d = E.shape
        m = P.shape[0]
        out = np.zeros((n, m))
        pn = np.empty(m)
        for j in range(m):
            s = 0.0
            for k in range(d):
                s += P[j, k] * P[j, k]
            pn[j] = np.sqrt(s)
        for i in range(n):
            s = 0.0
            for k in range(d):
                s += E[i, k] * E[i, k]
            en = np.sqrt(s)
            if en < NORM_EPS:
                continue
            for j in range(m):
                if pn[j] < NORM_EPS:
                    continue
                dot = 0.0
                for k in range(d):
                    dot += E[i, k] * P[j, k]
                c = dot / (en * pn[j])
                if c > 1.0:
                    c = 1.0
                elif c < -1.0:
                    c = -1.0
                out[i, j] = c
        return out

    @njit(cache=True)
    def _jacobi_eigvals_nb(S, tol, max_sweeps):
        a = S.copy()
        n = a.shape[0]
        for _ in range(max_sweeps):
            off = 0.0
            for i in range(n):
                for j in range(n):
                    if i != j:
                        off += a[i, j] * a[i, j]
            if np.sqrt(off) < tol:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = a[p, q]
                    if abs(apq) <= 1e-18 * (abs(a[p, p]) + abs(a[q, q])):
                        a[p, q] = 0.0
                        a[q, p] = 0.0
                        continue
                    theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                    if theta != 0.0:
                        sgn = 1.0 if theta > 0 else -1.0
                        t = sgn / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    else:
                        t = 1.0
                    c = 1.0 / np.sqrt(t * t + 1.0)
                    s = t * c
                    for k in range(n):
                        akp = a[k, p]
                        akq = a[k, q]
                        a[k, p] = c * akp - s * akq
                        a[k, q] = s * akp + c * akq
                    for k in range(n):
                        apk = a[p, k]
                        aqk = a[q, k]
                        a[p, k] = c * apk - s * aqk
                        a[q, k] = s * apk + c * aqk
        out = np.empty(n)
        for i in range(n):
            out[i] = a[i, i]
        return out

    @njit(cache=True)
    def _min_pair_distance_nb(X, Y):
        best = np.inf
        d = X.shape[1]
        for i in range(X.shape[0]):
            for j in range(Y.shape[0]):
                s = 0.0
                for k in range(d):
                    diff = X[i, k] - Y[j, k]
                    s += diff * diff
                    if s >= best:
                        break
                if s < best:
                    best = s
                    if best == 0.0:
                        return 0.0
        return np.sqrt(best)

    @njit(cache=True)
    def _hop_frontiers_nb(indptr, indices, allowed, v, hops):
        n = allowed.shape[0]
        seen = np.zeros(n, dtype=np.bool_)
        seen[v] = True
        frontier = np.empty(1, dtype=np.int64)
        frontier[0] = v
        buf = np.empty(n, dtype=np.int64)
        offsets = np.zeros(hops + 1, dtype=np.int64)
        total = 0
        for hop in range(hops):
            cnt = 0
            for f in range(frontier.shape[0]):
                u = frontier[f]
                for e in range(indptr[u], indptr[u + 1]):
                    w = indices[e]
                    if allowed[w] and not seen[w]:
                        seen[w] = True
                        buf[total + cnt] = w
                        cnt += 1
            nxt = np.sort(buf[total:total + cnt])
            buf[total:total + cnt] = nxt
            frontier = nxt
            total += cnt
            offsets[hop + 1] = total
        return buf[:total].copy(), offsets


# ---------------------------------------------------------------------------
# public dispatch
# ---------------------------------------------------------------------------

def cosine_matrix(E, P):
    """Pairwise cosine similarities between rows of ``E`` and rows of ``P``.

    Rows with norm below ``NORM_EPS`` get similarity 0 against everything.
    """
    E = np.ascontiguousarray(E, dtype=np.float64)
    P = np.ascontiguousarray(P, dtype=np.float64)
    if E.shape[0] == 0 or P.shape[0] == 0:
        return np.zeros((E.shape[0], P.shape[0]))
    if NUMBA_AVAILABLE:
        return _cosine_matrix_nb(E, P)
    return _cosine_matrix_np(E, P)


def jacobi_eigvals(S, tol=1e-12, max_sweeps=100):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations (unsorted)."""
    S = np.ascontiguousarray(S, dtype=np.float64)
    if NUMBA_AVAILABLE:
        return _jacobi_eigvals_nb(S, tol, max_sweeps)
    return _jacobi_eigvals_np(S, tol, max_sweeps)


def min_pair_distance(X, Y):
    """Smallest Euclidean distance between any row of ``X`` and any row of ``Y``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if NUMBA_AVAILABLE:
        return float(_min_pair_distance_nb(X, Y))
    return _min_pair_distance_np(X, Y)


def hop_frontiers(indptr, indices, allowed, v, hops):
    """Exact-distance BFS frontiers of ``v`` restricted to ``allowed`` nodes.

    Returns ``(flat, offsets)``: hop ``l`` (1-based) occupies
    ``flat[offsets[l-1]:offsets[l]]``, sorted ascending.
    """
    if NUMBA_AVAILABLE:
        return _hop_frontiers_nb(indptr, indices, allowed, np.int64(v), np.int64(hops))
    return _hop_frontiers_np(indptr, indices, allowed, int(v), int(hops))
