"""Binned-SAH BVH over triangles, flattened to arrays for the traversal
kernels.  Built once at scene load; traversal lives in the backend.
"""

import numpy as np

MAX_LEAF_TRIS = 4
N_BINS = 16


class Bvh:
    """Flattened two-child BVH.

    ``left[i]`` is the first-child node index for inner nodes (the second
    child is ``left[i] + ``count of subtree... stored explicitly in
    ``right``); for leaves ``left`` is the first index into ``order`` and
    ``count`` the triangle count (0 marks an inner node).
    """

    def __init__(self, lo, hi, left, right, count, order):
        self.lo = lo
        self.hi = hi
        self.left = left
        self.right = right
        self.count = count
        self.order = order

    @property
    def node_count(self):
        return len(self.count)


def build(v0, v1, v2):
    n = len(v0)
    tri_lo = np.minimum(np.minimum(v0, v1), v2)
    tri_hi = np.maximum(np.maximum(v0, v1), v2)
    centroid = (tri_lo + tri_hi) * 0.5

    order = np.arange(n, dtype=np.int64)
    nodes_lo, nodes_hi, left, right, count = [], [], [], [], []

    def add_node():
        nodes_lo.append(None)
        nodes_hi.append(None)
        left.append(-1)
        right.append(-1)
        count.append(0)
        return len(count) - 1

    def surface(lo, hi):
        e = np.maximum(hi - lo, 0.0)
        return 2.0 * (e[0] * e[1] + e[1] * e[2] + e[2] * e[0])

    def build_rec(node, start, end):
        ids = order[start:end]
        lo = tri_lo[ids].min(axis=0)
        hi = tri_hi[ids].max(axis=0)
        nodes_lo[node] = lo
        nodes_hi[node] = hi
        m = end - start
        if m <= MAX_LEAF_TRIS:
            left[node] = start
            count[node] = m
            return
        cen = centroid[ids]
        clo = cen.min(axis=0)
        chi = cen.max(axis=0)
        axis = int(np.argmax(chi - clo))
        extent = chi[axis] - clo[axis]
        if extent <= 0.0:
            mid = start + m // 2
        else:
            scale = N_BINS / extent
            bins = np.minimum((cen[:, axis] - clo[axis]) * scale, N_BINS - 1).astype(np.int64)
            bin_lo = np.full((N_BINS, 3), np.inf)
            bin_hi = np.full((N_BINS, 3), -np.inf)
            bin_n = np.zeros(N_BINS, dtype=np.int64)
            for b in range(N_BINS):
                sel = bins == b
                if sel.any():
                    bin_lo[b] = tri_lo[ids[sel]].min(axis=0)
                    bin_hi[b] = tri_hi[ids[sel]].max(axis=0)
                    bin_n[b] = sel.sum()
            best_cost, best_split = np.inf, -1
            for s in range(1, N_BINS):
                nl = bin_n[:s].sum()
                nr = bin_n[s:].sum()
                if nl == 0 or nr == 0:
                    continue
                sl = surface(bin_lo[:s].min(axis=0), bin_hi[:s].max(axis=0))
                sr = surface(bin_lo[s:].min(axis=0), bin_hi[s:].max(axis=0))
                cost = sl * nl + sr * nr
                if cost < best_cost:
                    best_cost, best_split = cost, s
            if best_split < 0:
                mid = start + m // 2
            else:
                sel = bins < best_split
                perm = np.concatenate([ids[sel], ids[~sel]])
                order[start:end] = perm
                mid = start + int(sel.sum())
                if mid == start or mid == end:
                    mid = start + m // 2
        cl = add_node()
        cr = add_node()
        left[node] = cl
        right[node] = cr
        build_rec(cl, start, mid)
        build_rec(cr, mid, end)

    root = add_node()
    build_rec(root, 0, n)
    return Bvh(
        np.asarray(nodes_lo, dtype=np.float64),
        np.asarray(nodes_hi, dtype=np.float64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(count, dtype=np.int64),
        order,
    )
