"""Compiled kernels for survival trees on a discrete time grid.

Trees are stored flat: for a forest, node arrays of every tree are
concatenated and ``node_start[t]`` gives the root of tree ``t``. A node with
``feature < 0`` is a leaf and ``left`` then holds its row in the leaf
tables. Rows with ``x[feature] <= threshold`` go left.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, nogil=True)
def splitmix_next(state):
    """splitmix64 step; ``state`` is a length-1 uint64 array."""
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def randbelow(state, n):
    return np.int64(splitmix_next(state) % np.uint64(n))


@njit(cache=True, nogil=True)
def shuffle_inplace(a, state):
    for i in range(a.size - 1, 0, -1):
        j = randbelow(state, i + 1)
        tmp = a[i]
        a[i] = a[j]
        a[j] = tmp


@njit(cache=True, nogil=True)
def permutation(n, seed):
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    p = np.arange(n)
    shuffle_inplace(p, state)
    return p


@njit(cache=True, nogil=True)
def bootstrap_counts(n, seeds):
    """In-bag multiplicities (size-n bootstrap) per tree plus a growth seed
    drawn from the same per-tree stream."""
    counts = np.zeros((seeds.size, n), dtype=np.int64)
    grow = np.empty(seeds.size, dtype=np.uint64)
    state = np.empty(1, dtype=np.uint64)
    for t in range(seeds.size):
        state[0] = seeds[t]
        for _ in range(n):
            counts[t, randbelow(state, n)] += 1
        grow[t] = splitmix_next(state)
    return counts, grow


@njit(cache=True, nogil=True)
def _argsort_small(vals, n, order):
    """Stable argsort of ``vals[:n]`` into ``order`` (insertion sort for
    small nodes, mergesort otherwise)."""
    if n > 48:
        o = np.argsort(vals[:n], kind="mergesort")
        for r in range(n):
            order[r] = o[r]
        return
    for r in range(n):
        order[r] = r
    for r in range(1, n):
        cur = order[r]
        v = vals[cur]
        k = r - 1
        while k >= 0 and vals[order[k]] > v:
            order[k + 1] = order[k]
            k -= 1
        order[k + 1] = cur


@njit(cache=True, nogil=True)
def _best_split(X, interval, event, w, rows, lo, hi, feats, d, min_leaf, order_buf, work, vals,
                order):
    """Best log-rank split of ``rows[lo:hi]`` (row ``i`` repeated ``w[i]``
    times) over candidate features.

    Returns (feature, threshold, statistic); feature -1 when no admissible
    split exists. Ties keep the earliest feature in ``feats`` (callers pass
    them sorted) and the lowest threshold. ``work`` is a (6, d) scratch
    buffer; ``vals``, ``order`` and ``order_buf`` hold at least hi - lo.
    """
    n = hi - lo
    at = work[0]
    ev = work[1]
    a = work[2]
    b = work[3]
    cum_dy = work[4]
    yl = work[5]
    at[:] = 0.0
    ev[:] = 0.0
    n_w = 0
    for r in range(lo, hi):
        i = rows[r]
        at[interval[i]] += w[i]
        ev[interval[i]] += w[i] * event[i]
        n_w += w[i]
    # per-interval constants of the log-rank mean and variance
    Y = 0.0
    for s in range(d - 1, -1, -1):
        Y += at[s]
        a[s] = 0.0
        b[s] = 0.0
        cum_dy[s] = ev[s] / Y if Y > 0 else 0.0
        if Y > 1:
            a[s] = (Y - ev[s]) * ev[s] / ((Y - 1.0) * Y)
            b[s] = a[s] / Y
    for s in range(1, d):
        cum_dy[s] += cum_dy[s - 1]

    best_f = -1
    best_thr = 0.0
    best_stat = 0.0
    for f in feats:
        for r in range(n):
            vals[r] = X[rows[lo + r], f]
        _argsort_small(vals, n, order)
        for r in range(n):
            order_buf[r] = rows[lo + order[r]]
        yl[:] = 0.0
        u = 0.0
        var = 0.0
        left = 0
        for r in range(n - 1):
            i = order_buf[r]
            q = interval[i]
            wi = w[i]
            u += wi * (event[i] - cum_dy[q])
            for s in range(q + 1):
                var += wi * a[s] - b[s] * wi * (2.0 * yl[s] + wi)
                yl[s] += wi
            left += wi
            if left < min_leaf or n_w - left < min_leaf:
                continue
            v0 = vals[order[r]]
            v1 = vals[order[r + 1]]
            if not v0 < v1:
                continue
            if var <= 1e-12:
                continue
            stat = abs(u) / np.sqrt(var)
            if stat > best_stat:
                best_stat = stat
                best_f = f
                thr = 0.5 * (v0 + v1)
                if thr >= v1:
                    thr = v0
                best_thr = thr
    return best_f, best_thr, best_stat


@njit(cache=True, nogil=True)
def grow_tree(X, interval, event, counts, d, mtry, min_leaf, max_depth, seed,
              feature, threshold, left, right, leaf_ev, leaf_risk):
    """Grow one tree on the rows of ``X`` weighted by in-bag ``counts``.

    Writes into the preallocated output arrays and returns
    ``(n_nodes, n_leaves)``. ``max_depth < 0`` means unlimited.
    """
    state = np.empty(1, dtype=np.uint64)
    state[0] = seed
    p = X.shape[1]
    # distinct in-bag rows; multiplicities act as weights
    total = 0
    for i in range(counts.size):
        if counts[i] > 0:
            total += 1
    rows = np.empty(total, dtype=np.int64)
    k = 0
    for i in range(counts.size):
        if counts[i] > 0:
            rows[k] = i
            k += 1
    order_buf = np.empty(total, dtype=np.int64)
    tmp = np.empty(total, dtype=np.int64)
    work = np.empty((6, d))
    vals = np.empty(total)
    order = np.empty(total, dtype=np.int64)
    feats = np.empty(min(mtry, p), dtype=np.int64)
    pool = np.arange(p)
    mtry = min(mtry, p)

    # explicit stack of (node, lo, hi, depth)
    stack = np.empty((2 * total + 2, 4), dtype=np.int64)
    sp = 0
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = total
    stack[0, 3] = 0
    sp = 1
    n_nodes = 1
    n_leaves = 0
    while sp > 0:
        sp -= 1
        node = stack[sp, 0]
        lo = stack[sp, 1]
        hi = stack[sp, 2]
        depth = stack[sp, 3]
        n_ev = 0
        n_w = 0
        for r in range(lo, hi):
            n_ev += event[rows[r]]
            n_w += counts[rows[r]]
        f = -1
        thr = 0.0
        if n_w >= 2 * min_leaf and n_ev > 0 and (max_depth < 0 or depth < max_depth):
            # partial Fisher-Yates draw of mtry candidate features
            for c in range(mtry):
                j = c + randbelow(state, p - c)
                t = pool[c]
                pool[c] = pool[j]
                pool[j] = t
            for c in range(mtry):
                feats[c] = pool[c]
            feats.sort()
            f, thr, _ = _best_split(X, interval, event, counts, rows, lo, hi, feats, d, min_leaf,
                                    order_buf, work, vals, order)
        if f < 0:
            feature[node] = -1
            threshold[node] = 0.0
            left[node] = n_leaves
            right[node] = -1
            for s in range(d):
                leaf_ev[n_leaves, s] = 0.0
                leaf_risk[n_leaves, s] = 0.0
            for r in range(lo, hi):
                i = rows[r]
                q = interval[i]
                leaf_ev[n_leaves, q] += counts[i] * event[i]
                for s in range(q + 1):
                    leaf_risk[n_leaves, s] += counts[i]
            n_leaves += 1
            continue
        # stable partition of rows[lo:hi]
        nl = 0
        for r in range(lo, hi):
            if X[rows[r], f] <= thr:
                tmp[nl] = rows[r]
                nl += 1
        k = nl
        for r in range(lo, hi):
            if not X[rows[r], f] <= thr:
                tmp[k] = rows[r]
                k += 1
        for r in range(hi - lo):
            rows[lo + r] = tmp[r]
        feature[node] = f
        threshold[node] = thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        # left child is popped, and grown, first
        stack[sp, 0] = n_nodes + 1
        stack[sp, 1] = lo + nl
        stack[sp, 2] = hi
        stack[sp, 3] = depth + 1
        sp += 1
        stack[sp, 0] = n_nodes
        stack[sp, 1] = lo
        stack[sp, 2] = lo + nl
        stack[sp, 3] = depth + 1
        sp += 1
        n_nodes += 2
    return n_nodes, n_leaves


@njit(cache=True, nogil=True)
def grow_forest(X, interval, event, counts, d, mtry, min_leaf, max_depth, seeds):
    """Grow ``len(seeds)`` trees; ``counts[t]`` is tree t's in-bag vector."""
    n_trees = seeds.size
    n = X.shape[0]
    cap_nodes = 0
    cap_leaves = 0
    for t in range(n_trees):
        tot = 0
        for i in range(n):
            tot += counts[t, i]
        cap_nodes += 2 * tot + 1
        cap_leaves += tot // max(min_leaf, 1) + 1
    feature = np.empty(cap_nodes, dtype=np.int64)
    threshold = np.empty(cap_nodes)
    left = np.empty(cap_nodes, dtype=np.int64)
    right = np.empty(cap_nodes, dtype=np.int64)
    leaf_ev = np.empty((cap_leaves, d))
    leaf_risk = np.empty((cap_leaves, d))
    node_start = np.zeros(n_trees + 1, dtype=np.int64)
    leaf_start = np.zeros(n_trees + 1, dtype=np.int64)
    for t in range(n_trees):
        ns = node_start[t]
        ls = leaf_start[t]
        nn, nl = grow_tree(X, interval, event, counts[t], d, mtry, min_leaf, max_depth, seeds[t],
                           feature[ns:], threshold[ns:], left[ns:], right[ns:],
                           leaf_ev[ls:], leaf_risk[ls:])
        node_start[t + 1] = ns + nn
        leaf_start[t + 1] = ls + nl
    nn = node_start[n_trees]
    nl = leaf_start[n_trees]
    return (feature[:nn].copy(), threshold[:nn].copy(), left[:nn].copy(), right[:nn].copy(),
            leaf_ev[:nl].copy(), leaf_risk[:nl].copy(), node_start, leaf_start)


@njit(cache=True, nogil=True)
def route(x, feature, threshold, left, right, root):
    """Local leaf index reached by row ``x`` from node ``root``."""
    node = root
    while feature[node] >= 0:
        if x[feature[node]] <= threshold[node]:
            node = root + left[node]
        else:
            node = root + right[node]
    return left[node]


@njit(cache=True, nogil=True)
def leaf_hazards(leaf_ev, leaf_risk):
    h = np.zeros(leaf_ev.shape)
    for i in range(leaf_ev.shape[0]):
        for s in range(leaf_ev.shape[1]):
            if leaf_risk[i, s] > 0:
                h[i, s] = leaf_ev[i, s] / leaf_risk[i, s]
    return h


@njit(cache=True, nogil=True)
def predict_forest(X, feature, threshold, left, right, node_start, leaf_start, leaf_h):
    """Tree-averaged leaf hazard for every row of ``X``."""
    n = X.shape[0]
    n_trees = node_start.size - 1
    d = leaf_h.shape[1]
    out = np.zeros((n, d))
    for i in range(n):
        for t in range(n_trees):
            leaf = leaf_start[t] + route(X[i], feature, threshold, left, right, node_start[t])
            for s in range(d):
                out[i, s] += leaf_h[leaf, s]
        for s in range(d):
            out[i, s] /= n_trees
    return out


@njit(cache=True, nogil=True)
def _log_surv(h, eps):
    # exact factor eps at the upper clip, as in hazard.log_survival_factor
    if h >= 1.0 - eps:
        return np.log(eps)
    return np.log1p(-max(h, eps))


@njit(cache=True, nogil=True)
def row_nll(h, q, e, eps):
    """Clipped discrete-hazard loss of one row (0-based interval ``q``)."""
    acc = 0.0
    for s in range(q):
        acc -= _log_surv(h[s], eps)
    if e == 1:
        return acc - np.log(min(max(h[q], eps), 1.0 - eps))
    return acc - _log_surv(h[q], eps)


@njit(cache=True, nogil=True)
def oob_permutation_importance(X, interval, event, counts, feature, threshold, left, right,
                               node_start, leaf_start, leaf_h, perm_seeds, eps):
    """Mean over trees of the increase in out-of-bag loss after permuting
    each feature among that tree's out-of-bag rows.

    Returns ``(scores, n_used_trees)``; trees without OOB rows are skipped.
    """
    n, p = X.shape
    n_trees = node_start.size - 1
    scores = np.zeros(p)
    used = 0
    xrow = np.empty(p)
    for t in range(n_trees):
        oob = np.empty(n, dtype=np.int64)
        n_oob = 0
        for i in range(n):
            if counts[t, i] == 0:
                oob[n_oob] = i
                n_oob += 1
        if n_oob == 0:
            continue
        used += 1
        oob = oob[:n_oob]
        root = node_start[t]
        ls = leaf_start[t]
        base = 0.0
        for r in range(n_oob):
            i = oob[r]
            leaf = ls + route(X[i], feature, threshold, left, right, root)
            base += row_nll(leaf_h[leaf], interval[i], event[i], eps)
        base /= n_oob
        # features split on in this tree; others cannot change routing
        in_tree = np.zeros(p, dtype=np.bool_)
        for node in range(root, node_start[t + 1]):
            if feature[node] >= 0:
                in_tree[feature[node]] = True
        for j in range(p):
            if not in_tree[j]:
                continue
            perm = permutation(n_oob, perm_seeds[t, j])
            tot = 0.0
            for r in range(n_oob):
                i = oob[r]
                for c in range(p):
                    xrow[c] = X[i, c]
                xrow[j] = X[oob[perm[r]], j]
                leaf = ls + route(xrow, feature, threshold, left, right, root)
                tot += row_nll(leaf_h[leaf], interval[i], event[i], eps)
            scores[j] += tot / n_oob - base
    if used > 0:
        for j in range(p):
            scores[j] /= used
    return scores, used
