"""Compiled query kernels for the flattened k-means tree."""
import numpy as np
from numba import njit

GREEDY, BACKTRACK, EXACT = 0, 1, 2


@njit(cache=True, inline="always")
def _less(ka, ta, kb, tb):
    return ka < kb or (ka == kb and ta < tb)


@njit(cache=True)
def _push(keys, ticks, nodes, size, key, tick, node):
    i = size
    keys[i] = key
    ticks[i] = tick
    nodes[i] = node
    while i > 0:
        parent = (i - 1) // 2
        if _less(keys[i], ticks[i], keys[parent], ticks[parent]):
            keys[i], keys[parent] = keys[parent], keys[i]
            ticks[i], ticks[parent] = ticks[parent], ticks[i]
            nodes[i], nodes[parent] = nodes[parent], nodes[i]
            i = parent
        else:
            break
    return size + 1


@njit(cache=True)
def _pop(keys, ticks, nodes, size):
    key, node = keys[0], nodes[0]
    size -= 1
    keys[0], ticks[0], nodes[0] = keys[size], ticks[size], nodes[size]
    i = 0
    while True:
        left = 2 * i + 1
        right = left + 1
        small = i
        if left < size and _less(keys[left], ticks[left], keys[small], ticks[small]):
            small = left
        if right < size and _less(keys[right], ticks[right], keys[small], ticks[small]):
            small = right
        if small == i:
            break
        keys[i], keys[small] = keys[small], keys[i]
        ticks[i], ticks[small] = ticks[small], ticks[i]
        nodes[i], nodes[small] = nodes[small], nodes[i]
        i = small
    return key, node, size


@njit(cache=True)
def _sq(a, b):
    s = 0.0
    for j in range(a.shape[0]):
        t = a[j] - b[j]
        s += t * t
    return s


@njit(cache=True)
def query_batch(Q, points, centroids, radii, child_start, child_count, child_list,
                leaf_start, leaf_count, leaf_idx, mode, max_leaves, out_idx, out_d2, counters):
    """Answer each row of ``Q``; ``counters`` accumulates nodes, leaves, points scanned."""
    n_nodes = centroids.shape[0]
    keys = np.empty(n_nodes, np.float64)
    ticks = np.empty(n_nodes, np.int64)
    nodes = np.empty(n_nodes, np.int64)
    cd = np.empty(64, np.float64)
    limit = 1 if mode == GREEDY else max_leaves
    for qi in range(Q.shape[0]):
        q = Q[qi]
        best_d, best_i = np.inf, -1
        size = _push(keys, ticks, nodes, 0, 0.0, 0, 0)
        tick = 1
        leaves = 0
        while size > 0:
            key, node, size = _pop(keys, ticks, nodes, size)
            if mode == EXACT:
                if key > best_d * (1 + 1e-9) + 1e-12:
                    break
            elif leaves >= limit:
                break
            while child_count[node] > 0:
                counters[0] += 1
                s, n = child_start[node], child_count[node]
                if cd.shape[0] < n:
                    cd = np.empty(n, np.float64)
                first = -1
                for c in range(n):
                    cd[c] = _sq(centroids[child_list[s + c]], q)
                    if first < 0 or cd[c] < cd[first]:
                        first = c
                for c in range(n):
                    if c == first:
                        continue
                    kid = child_list[s + c]
                    if mode == EXACT:
                        lb = max(np.sqrt(cd[c]) - radii[kid], 0.0)
                        lb = lb * lb
                        if lb <= best_d * (1 + 1e-9) + 1e-12:
                            size = _push(keys, ticks, nodes, size, lb, tick, kid)
                            tick += 1
                    elif limit > 1:
                        size = _push(keys, ticks, nodes, size, cd[c], tick, kid)
                        tick += 1
                node = child_list[s + first]
            s, n = leaf_start[node], leaf_count[node]
            for j in range(n):
                pi = leaf_idx[s + j]
                d = _sq(points[pi], q)
                if d < best_d or (d == best_d and pi < best_i):
                    best_d, best_i = d, pi
            counters[1] += 1
            counters[2] += n
            leaves += 1
        out_idx[qi] = best_i
        out_d2[qi] = best_d


@njit(cache=True)
def splat(num, den, xs, ys, vecs, eff, w):
    """Add ``eff[i] * vecs[i]`` (a ``w x w`` window) at each anchor, in index order."""
    c = num.shape[2]
    for i in range(xs.shape[0]):
        x0, y0, e = xs[i], ys[i], eff[i]
        k = 0
        for dy in range(w):
            for dx in range(w):
                den[y0 + dy, x0 + dx] += e
                for ch in range(c):
                    num[y0 + dy, x0 + dx, ch] += e * vecs[i, k]
                    k += 1
