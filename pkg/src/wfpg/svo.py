"""Sparse voxel octree caching radiant exitance.

The scene is conservatively voxelized (separating-axis triangle/box overlap,
half-open [min, max) voxel extents), the hierarchy is built bottom-up from
Morton-sorted leaf codes, and each node carries an antipodal normal pair
(normal_b is stored implicitly as -normal_a) with one exitance accumulator
per side.  Queries pick the tree level whose voxel cross-section matches the
cone footprint A = r^2 * omega.
"""

import struct

import numpy as np

from . import backend, core

DUMP_MAGIC = b"WFPGSVO1"
DUMP_VERSION = 1

# bytes per node for the memory accounting log: morton code, child base,
# child mask, normal, two RGB sums, two weights, ray counter
NODE_RECORD_BYTES = 8 + 8 + 1 + 24 + 48 + 16 + 8


class VoxelFragments:
    """Conservative (voxel, triangle) overlap pairs."""

    __slots__ = ("coords", "normals", "tris")

    def __init__(self, coords, normals, tris):
        self.coords = coords
        self.normals = normals
        self.tris = tris

    def __len__(self):
        return len(self.coords)


def scene_cube(scene, pad=1e-4):
    """Padded cubic bound around the scene, so no surface sits exactly on
    the open upper voxel boundary."""
    lo = scene.bbox_lo
    hi = scene.bbox_hi
    center = 0.5 * (lo + hi)
    side = float((hi - lo).max()) * (1.0 + pad)
    return center - 0.5 * side, side


def _tri_box_overlap(v0, v1, v2, box_lo, box_hi):
    """Vectorized separating-axis triangle vs axis-aligned box test.

    v0/v1/v2 are single triangle vertices; box_lo/box_hi are (K, 3) batches.
    Returns a boolean mask of boxes the triangle overlaps (closed boxes).
    """
    c = 0.5 * (box_lo + box_hi)
    h = 0.5 * (box_hi - box_lo)
    a = v0[None, :] - c
    b = v1[None, :] - c
    d = v2[None, :] - c

    ok = np.ones(len(c), dtype=bool)

    # box face normals
    for ax in range(3):
        lo = np.minimum(np.minimum(a[:, ax], b[:, ax]), d[:, ax])
        hi = np.maximum(np.maximum(a[:, ax], b[:, ax]), d[:, ax])
        ok &= (lo <= h[:, ax]) & (hi >= -h[:, ax])

    edges = (v1 - v0, v2 - v1, v0 - v2)

    def axis_test(axis):
        nonlocal ok
        norm = np.linalg.norm(axis)
        if norm < 1e-30:
            return
        pa = a @ axis
        pb = b @ axis
        pd = d @ axis
        r = h @ np.abs(axis)
        lo = np.minimum(np.minimum(pa, pb), pd)
        hi = np.maximum(np.maximum(pa, pb), pd)
        ok &= (lo <= r) & (hi >= -r)

    # triangle normal
    axis_test(np.cross(edges[0], edges[1]))
    # nine edge cross products
    for e in edges:
        axis_test(np.array([0.0, -e[2], e[1]]))
        axis_test(np.array([e[2], 0.0, -e[0]]))
        axis_test(np.array([-e[1], e[0], 0.0]))
    return ok


def voxelize(scene, resolution):
    """Conservative voxelization at a power-of-two per-axis resolution.

    A fragment is emitted for every (voxel, triangle) pair whose separating
    axis test passes, restricted per axis to half-open voxel extents so
    geometry exactly on a voxel boundary lands on one deterministic side.
    Fragment normals are the triangle geometric normals.
    """
    r = int(resolution)
    if r <= 0 or (r & (r - 1)) != 0:
        raise ValueError("resolution must be a positive power of two")
    cube_lo, side = scene_cube(scene)
    h = side / r

    coords, normals, tris = [], [], []
    for t in range(scene.triangle_count):
        v0, v1, v2 = scene.v0[t], scene.v1[t], scene.v2[t]
        tlo = np.minimum(np.minimum(v0, v1), v2)
        thi = np.maximum(np.maximum(v0, v1), v2)
        # floor() on both ends implements the half-open rule per axis
        ilo = np.clip(np.floor((tlo - cube_lo) / h).astype(np.int64), 0, r - 1)
        ihi = np.clip(np.floor((thi - cube_lo) / h).astype(np.int64), 0, r - 1)
        gx, gy, gz = np.meshgrid(
            np.arange(ilo[0], ihi[0] + 1),
            np.arange(ilo[1], ihi[1] + 1),
            np.arange(ilo[2], ihi[2] + 1),
            indexing="ij",
        )
        cand = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
        box_lo = cube_lo + cand * h
        keep = _tri_box_overlap(v0, v1, v2, box_lo, box_lo + h)
        if keep.any():
            sel = cand[keep]
            coords.append(sel)
            normals.append(np.broadcast_to(scene.normals[t], (len(sel), 3)))
            tris.append(np.full(len(sel), t, dtype=np.int64))
    if not coords:
        return VoxelFragments(
            np.zeros((0, 3), dtype=np.int64), np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
        )
    return VoxelFragments(
        np.concatenate(coords), np.concatenate(normals).copy(), np.concatenate(tris)
    )


def cluster_normals(normals, rng):
    """Antipodal dual-normal fit: k-means with k=2 where the initial means
    are a randomly selected member normal and its opposite.

    Lloyd iterations assign each normal to the mean with the larger dot
    product (ties toward the first cluster) and recompute means as the
    normalized cluster averages, until the assignment reaches a fixed point
    or 32 iterations.  Returns (N, -N) with N the first cluster's mean, so
    the pair is exactly antipodal.
    """
    normals = np.asarray(normals, dtype=np.float64)
    if len(normals) == 0:
        raise ValueError("cluster_normals needs at least one normal")
    pick = min(int(rng.next() * len(normals)), len(normals) - 1)
    mean_a = normals[pick].copy()
    mean_b = -mean_a
    assign = None
    for _ in range(32):
        dots_a = normals @ mean_a
        dots_b = normals @ mean_b
        new_assign = dots_a >= dots_b  # ties toward side a
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        sa = normals[assign].sum(axis=0)
        sb = normals[~assign].sum(axis=0)
        na = np.linalg.norm(sa)
        nb = np.linalg.norm(sb)
        if na > 1e-12:
            mean_a = sa / na
        if nb > 1e-12:
            mean_b = sb / nb
        else:
            mean_b = -mean_a
    return mean_a, -mean_a


class SvoCache:
    """Level-grouped node arrays; level 0 is the root, level ``depth`` the
    leaves.  Node ids are indices into the flat arrays."""

    def __init__(self, resolution, cube_lo, cube_size):
        self.resolution = int(resolution)
        self.depth = int(np.log2(self.resolution))
        self.cube_lo = np.asarray(cube_lo, dtype=np.float64)
        self.cube_size = float(cube_size)
        # flat per-node arrays, filled by build
        self.level_off = None      # (depth+2,) offsets into the flat arrays
        self.codes = None          # uint64 morton code at the node's level
        self.child_base = None     # flat index of first child, -1 for leaves
        self.child_mask = None     # uint8
        self.parent = None         # flat index of parent, -1 for the root
        self.normal = None         # (n,3) normal_a; normal_b = -normal_a
        self.sum_a = None          # (n,3) exitance accumulators
        self.sum_b = None
        self.weight_a = None
        self.weight_b = None
        self.mean_a = None         # (n,3) query-ready means
        self.mean_b = None
        self.counter = None        # transient per-partition ray counters

    # -- structure ---------------------------------------------------------

    @property
    def node_count(self):
        return len(self.codes)

    @property
    def leaf_count(self):
        return int(self.level_off[self.depth + 1] - self.level_off[self.depth])

    def level_of(self, node_id):
        return int(np.searchsorted(self.level_off, node_id, side="right") - 1)

    def level_slice(self, level):
        return slice(int(self.level_off[level]), int(self.level_off[level + 1]))

    def voxel_side(self, level):
        return self.cube_size / (1 << level)

    def memory_bytes(self):
        return self.node_count * NODE_RECORD_BYTES

    def point_to_leaf_coords(self, positions):
        positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
        q = np.floor((positions - self.cube_lo) / self.cube_size * self.resolution)
        return np.clip(q, 0, self.resolution - 1).astype(np.int64)

    # -- queries -----------------------------------------------------------

    def descend_leaf(self, position):
        """Leaf node id containing ``position``, or -1 when that voxel is
        empty.  Positions outside the bounding cube are an error."""
        p = np.asarray(position, dtype=np.float64)
        if np.any(p < self.cube_lo) or np.any(p > self.cube_lo + self.cube_size):
            raise ValueError("position outside the scene bounding cube")
        idx = backend.get().descend_leaves(self, p[None, :])
        return int(idx[0])

    def descend_batch(self, positions):
        return backend.get().descend_leaves(self, positions)

    def accumulate_exitance(self, node_id, direction, radiance):
        """Deposit an outgoing-radiance estimate on the side of the stored
        normal pair that faces ``direction``; the stored quantity is a
        running mean (sum and weight, divided at query time)."""
        d = np.asarray(direction, dtype=np.float64)
        rad = np.asarray(radiance, dtype=np.float64)
        if float(d @ self.normal[node_id]) >= 0.0:
            self.sum_a[node_id] += rad
            self.weight_a[node_id] += 1.0
        else:
            self.sum_b[node_id] += rad
            self.weight_b[node_id] += 1.0

    def accumulate_batch(self, node_ids, directions, radiances):
        """Vectorized deposits, applied in input (path) order."""
        side_a = np.einsum("ij,ij->i", directions, self.normal[node_ids]) >= 0.0
        ids_a = node_ids[side_a]
        ids_b = node_ids[~side_a]
        np.add.at(self.sum_a, ids_a, radiances[side_a])
        np.add.at(self.weight_a, ids_a, 1.0)
        np.add.at(self.sum_b, ids_b, radiances[~side_a])
        np.add.at(self.weight_b, ids_b, 1.0)
        return np.unique(node_ids)

    def propagate_up(self, dirty_leaves=None):
        """Refresh query means: leaf means from the accumulators, then each
        internal node's per-side mean as the average of its children's
        corresponding sides (side matched by normal dot product).

        ``dirty_leaves`` restricts the update to the ancestors of the given
        leaf ids; omitted, the whole tree is refreshed.  Idempotent while the
        leaf accumulators are unchanged.
        """
        if dirty_leaves is None:
            leaves = np.arange(self.level_off[self.depth], self.level_off[self.depth + 1])
        else:
            leaves = np.asarray(dirty_leaves, dtype=np.int64)
            if len(leaves) == 0:
                return
        wa = self.weight_a[leaves]
        wb = self.weight_b[leaves]
        self.mean_a[leaves] = np.where(
            (wa > 0)[:, None], self.sum_a[leaves] / np.where(wa > 0, wa, 1.0)[:, None], 0.0
        )
        self.mean_b[leaves] = np.where(
            (wb > 0)[:, None], self.sum_b[leaves] / np.where(wb > 0, wb, 1.0)[:, None], 0.0
        )
        current = np.unique(self.parent[leaves])
        current = current[current >= 0]
        for level in range(self.depth - 1, -1, -1):
            if len(current) == 0:
                break
            self._average_children(current)
            current = np.unique(self.parent[current])
            current = current[current >= 0]

    def _average_children(self, nodes):
        base = self.child_base[nodes]
        counts = _popcount8(self.child_mask[nodes])
        total = counts.sum()
        child_idx = np.repeat(base, counts) + _segment_arange(counts)
        owner = np.repeat(np.arange(len(nodes)), counts)
        dots = np.einsum("ij,ij->i", self.normal[child_idx], self.normal[nodes][owner])
        aligned = dots >= 0.0
        child_a = np.where(aligned[:, None], self.mean_a[child_idx], self.mean_b[child_idx])
        child_b = np.where(aligned[:, None], self.mean_b[child_idx], self.mean_a[child_idx])
        acc_a = np.zeros((len(nodes), 3))
        acc_b = np.zeros((len(nodes), 3))
        np.add.at(acc_a, owner, child_a)
        np.add.at(acc_b, owner, child_b)
        self.mean_a[nodes] = acc_a / counts[:, None]
        self.mean_b[nodes] = acc_b / counts[:, None]
        assert total == counts.sum()

    def cone_trace(self, scene, origin, direction, aperture):
        """Radiance arriving at ``origin`` from a cone of solid angle
        ``aperture``: cast the central ray, match the footprint r^2*aperture
        against ancestor voxel cross-sections, and return that node's
        exitance on the side facing the cone, scaled by the clamped cosine.
        """
        o = np.asarray(origin, dtype=np.float64)[None, :]
        d = np.asarray(direction, dtype=np.float64)[None, :]
        rgb = backend.get().trace_cones(self, scene, o[0], d, float(aperture))
        return rgb[0]

    def ancestor_chain(self, leaf_coords):
        """Flat node ids from root to the deepest materialized node whose
        voxel contains the given leaf-grid coordinate."""
        code = core.morton_encode(*[int(c) for c in leaf_coords])
        chain = [int(self.level_off[0])]
        node = chain[0]
        for level in range(1, self.depth + 1):
            octant = (code >> (3 * (self.depth - level))) & 7
            mask = int(self.child_mask[node])
            if not (mask >> octant) & 1:
                break
            rank = bin(mask & ((1 << octant) - 1)).count("1")
            node = int(self.child_base[node]) + rank
            chain.append(node)
        return chain

    # -- debug dump ---------------------------------------------------------

    def dump(self, path):
        """Versioned little-endian binary dump (see docs/svo-dump.md)."""
        with open(path, "wb") as fh:
            fh.write(DUMP_MAGIC)
            fh.write(struct.pack("<IIQ", DUMP_VERSION, self.resolution, self.node_count))
            fh.write(struct.pack("<3dd", *self.cube_lo, self.cube_size))
            fh.write(self.level_off.astype("<i8").tobytes())
            for arr, dt in (
                (self.codes, "<u8"),
                (self.child_base, "<i8"),
                (self.child_mask, "u1"),
                (self.parent, "<i8"),
                (self.normal, "<f8"),
                (self.sum_a, "<f8"),
                (self.sum_b, "<f8"),
                (self.weight_a, "<f8"),
                (self.weight_b, "<f8"),
            ):
                fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())

    @classmethod
    def load_dump(cls, path):
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != DUMP_MAGIC:
                raise ValueError("not an SVO dump")
            version, resolution, n = struct.unpack("<IIQ", fh.read(16))
            if version != DUMP_VERSION:
                raise ValueError(f"unsupported dump version {version}")
            lo = struct.unpack("<3d", fh.read(24))
            (size,) = struct.unpack("<d", fh.read(8))
            svo = cls(resolution, np.array(lo), size)
            depth = svo.depth
            svo.level_off = np.frombuffer(fh.read(8 * (depth + 2)), dtype="<i8").copy()

            def arr(dt, shape):
                count = int(np.prod(shape))
                itemsize = np.dtype(dt).itemsize
                return np.frombuffer(fh.read(count * itemsize), dtype=dt).reshape(shape).copy()

            svo.codes = arr("<u8", (n,))
            svo.child_base = arr("<i8", (n,))
            svo.child_mask = arr("u1", (n,))
            svo.parent = arr("<i8", (n,))
            svo.normal = arr("<f8", (n, 3))
            svo.sum_a = arr("<f8", (n, 3))
            svo.sum_b = arr("<f8", (n, 3))
            svo.weight_a = arr("<f8", (n,))
            svo.weight_b = arr("<f8", (n,))
        svo.mean_a = np.zeros((n, 3))
        svo.mean_b = np.zeros((n, 3))
        svo.counter = np.zeros(n, dtype=np.int64)
        svo.propagate_up()
        return svo


def _popcount8(mask):
    m = mask.astype(np.uint8)
    out = np.zeros(len(m), dtype=np.int64)
    for b in range(8):
        out += (m >> b) & 1
    return out


def _segment_arange(counts):
    """[0..c0), [0..c1), ... concatenated."""
    total = int(counts.sum())
    out = np.arange(total, dtype=np.int64)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return out - np.repeat(starts, counts)


def build_octree(fragments, cube_lo, cube_size, resolution, seed=0):
    """Morton-sort the fragments, materialize the level hierarchy bottom-up,
    and fit per-leaf dual normals by k-means over the fragment normals."""
    if len(fragments) == 0:
        raise ValueError("cannot build an octree from an empty fragment list")
    svo = SvoCache(resolution, cube_lo, cube_size)
    depth = svo.depth

    frag_codes = core.morton_encode(
        fragments.coords[:, 0], fragments.coords[:, 1], fragments.coords[:, 2]
    )
    frag_codes = np.atleast_1d(frag_codes).astype(np.uint64)
    order = np.argsort(frag_codes, kind="stable")
    frag_codes = frag_codes[order]
    frag_normals = fragments.normals[order]

    leaf_codes, leaf_starts = np.unique(frag_codes, return_index=True)
    leaf_ends = np.append(leaf_starts[1:], len(frag_codes))

    # codes per level, bottom-up
    level_codes = [leaf_codes]
    for _ in range(depth):
        level_codes.append(np.unique(level_codes[-1] >> np.uint64(3)))
    level_codes.reverse()  # index 0 = root

    counts = np.array([len(c) for c in level_codes], dtype=np.int64)
    svo.level_off = np.concatenate([[0], np.cumsum(counts)])
    n = int(svo.level_off[-1])
    svo.codes = np.concatenate(level_codes)
    svo.child_base = np.full(n, -1, dtype=np.int64)
    svo.child_mask = np.zeros(n, dtype=np.uint8)
    svo.parent = np.full(n, -1, dtype=np.int64)
    svo.normal = np.zeros((n, 3))
    svo.sum_a = np.zeros((n, 3))
    svo.sum_b = np.zeros((n, 3))
    svo.weight_a = np.zeros(n)
    svo.weight_b = np.zeros(n)
    svo.mean_a = np.zeros((n, 3))
    svo.mean_b = np.zeros((n, 3))
    svo.counter = np.zeros(n, dtype=np.int64)

    # wire children to parents level by level
    for level in range(depth):
        po = int(svo.level_off[level])
        co = int(svo.level_off[level + 1])
        parents = level_codes[level]
        children = level_codes[level + 1]
        owner = np.searchsorted(parents, children >> np.uint64(3))
        svo.parent[co : co + len(children)] = po + owner
        first = np.unique(owner, return_index=True)[1]
        svo.child_base[po + np.unique(owner)] = co + first
        octant = (children & np.uint64(7)).astype(np.int64)
        masks = np.zeros(len(parents), dtype=np.uint8)
        np.bitwise_or.at(masks, owner, (1 << octant).astype(np.uint8))
        svo.child_mask[po : po + len(parents)] = masks

    # leaf normals: k-means over each leaf's fragment normals.  Leaves whose
    # fragments agree bitwise (flat interiors, the vast majority) shortcut to
    # that normal, which is exactly what the clustering would return.
    leaf_base = int(svo.level_off[depth])
    for i in range(len(leaf_codes)):
        seg = frag_normals[leaf_starts[i] : leaf_ends[i]]
        if len(seg) == 1 or (seg == seg[0]).all():
            na = seg[0].copy()
        else:
            rng = core.RngStream(seed, int(leaf_codes[i]) * 4 + 2)
            na, _ = cluster_normals(seg, rng)
        svo.normal[leaf_base + i] = na

    # internal normals, bottom-up, clustered over both child normals so the
    # result does not depend on each child's arbitrary sign choice
    for level in range(depth - 1, -1, -1):
        sl = svo.level_slice(level)
        for node in range(sl.start, sl.stop):
            base = int(svo.child_base[node])
            cnt = int(_popcount8(svo.child_mask[node : node + 1])[0])
            kid_n = svo.normal[base : base + cnt]
            if cnt == 1 or (np.abs(kid_n) == np.abs(kid_n[0])).all():
                svo.normal[node] = kid_n[0]
            else:
                both = np.concatenate([kid_n, -kid_n])
                rng = core.RngStream(seed, int(svo.codes[node]) * 4 + 3 + (level << 48))
                na, _ = cluster_normals(both, rng)
                svo.normal[node] = na
    return svo


def build_from_scene(scene, resolution, seed=0):
    fragments = voxelize(scene, resolution)
    cube_lo, side = scene_cube(scene)
    return build_octree(fragments, cube_lo, side, resolution, seed)
