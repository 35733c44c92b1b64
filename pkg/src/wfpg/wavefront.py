"""Wavefront render loop.

All paths advance one bounce at a time.  Each depth is a barrier: intersect
the whole batch, partition the surviving hits spatially (and by material),
generate one radiance field per spatial bin at guided depths, then run the
shading kernel over the batch.  After the depth loop, paths that reached an
emitter back-propagate its radiance into the exitance cache at every
recorded vertex.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import backend, core, guiding

PATH_STREAM_SPACE = 4  # path streams use stream ids tag 0 (mod 4)
BIN_STREAM_TAG = 1


@dataclass
class GuidingConfig:
    """Knobs of the guiding system (defaults mirror the reference setup)."""

    l_min: int = 5
    c_ray: int = 512
    field_res: int = 128        # base resolution N0 at depth 1
    guided_depths: int = 4      # G; depths beyond fall back to BSDF sampling
    max_depth: int = 5          # D
    product: bool = False
    jitter: bool = True
    blur_sigma: float = 1.0
    epsilon: float = guiding.EPSILON_FLOOR
    russian_roulette: bool = False
    rr_depth: int = 3
    seed: int = 0

    def validate(self, svo_depth=None):
        if self.field_res not in (16, 32, 64, 128):
            raise ValueError("field_res must be one of 16, 32, 64, 128")
        if self.c_ray < 1:
            raise ValueError("c_ray must be >= 1")
        if self.guided_depths > self.max_depth:
            raise ValueError("guided_depths cannot exceed max_depth")
        if svo_depth is not None and self.l_min >= svo_depth:
            raise ValueError("l_min must be below the SVO depth")

    def field_res_at(self, depth):
        """Fields decay by a factor of two per depth, floored at 8."""
        return max(8, self.field_res >> (depth - 1))


class PathState:
    """Struct-of-arrays wavefront state for one render pass."""

    def __init__(self, n_paths, max_depth, camera_pos):
        self.n = n_paths
        self.pixel = np.zeros(n_paths, dtype=np.int64)
        self.key = np.zeros(n_paths, dtype=np.uint64)
        self.ctr = np.zeros(n_paths, dtype=np.uint64)
        self.ray_o = np.zeros((n_paths, 3))
        self.ray_d = np.zeros((n_paths, 3))
        self.beta = np.ones((n_paths, 3))
        self.radiance = np.zeros((n_paths, 3))
        self.alive = np.ones(n_paths, dtype=bool)
        self.prev_pdf = np.full(n_paths, -1.0)
        self.rec_pos = np.zeros((n_paths, max_depth + 1, 3))
        self.rec_T = np.zeros((n_paths, max_depth + 1, 3))
        self.emit_le = np.zeros((n_paths, 3))
        self.emit_depth = np.zeros(n_paths, dtype=np.int32)
        self.rec_pos[:, 0] = camera_pos


@dataclass
class SpatialBin:
    node: int            # SVO node id (level >= l_min)
    level: int
    members: np.ndarray  # path indices


@dataclass
class PassStats:
    bins_per_depth: list = field(default_factory=list)
    rays_per_depth: list = field(default_factory=list)
    material_groups: list = field(default_factory=list)


def partition_material(mat_ids, path_idx):
    """Stable grouping of live paths by material id."""
    order = np.argsort(mat_ids, kind="stable")
    groups = {}
    for m in np.unique(mat_ids):
        groups[int(m)] = path_idx[order[np.searchsorted(mat_ids[order], m, "left"):
                                        np.searchsorted(mat_ids[order], m, "right")]]
    return groups


def partition_spatial(svo, positions, path_idx, l_min, c_ray):
    """Positional binning over the SVO (ray-counter marking scheme).

    Every path increments the counter of its containing leaf; subtree totals
    are accumulated bottom-up and a node is marked when its total reaches
    ``c_ray`` or its level equals ``l_min``.  Each path binds to the first
    marked node on the leaf-to-root ascent.  Callers pass only live,
    non-specular paths.  Counters are zeroed again before returning.
    """
    if l_min >= svo.depth:
        raise ValueError("l_min must be below the SVO depth")
    if len(path_idx) == 0:
        return []
    node, present, deepest = backend.get().descend_tracked(svo, positions)
    start = np.where(present, node, deepest)
    np.add.at(svo.counter, start, 1)

    levels = np.searchsorted(svo.level_off, start, side="right") - 1
    touched = [start]
    cur = np.unique(start)
    while True:
        cur_levels = np.searchsorted(svo.level_off, cur, side="right") - 1
        up = cur[cur_levels > 0]
        if len(up) == 0:
            break
        # push totals one level at a time, deepest first
        deepest_level = cur_levels.max()
        if deepest_level == 0:
            break
        sel = cur[cur_levels == deepest_level]
        parents = svo.parent[sel]
        np.add.at(svo.counter, parents, svo.counter[sel])
        cur = np.unique(np.concatenate([cur[cur_levels < deepest_level], parents]))
        touched.append(parents)

    # ascend each path to its first marked ancestor
    bin_node = start.copy()
    lev = levels.copy()
    for _ in range(svo.depth + 1):
        marked = (svo.counter[bin_node] >= c_ray) | (lev == l_min)
        if marked.all():
            break
        step = ~marked & (lev > l_min)
        if not step.any():
            break
        bin_node[step] = svo.parent[bin_node[step]]
        lev[step] -= 1

    # clear the counters we touched
    svo.counter[np.concatenate(touched)] = 0

    order = np.argsort(bin_node, kind="stable")
    sorted_nodes = bin_node[order]
    uniq, starts = np.unique(sorted_nodes, return_index=True)
    ends = np.append(starts[1:], len(sorted_nodes))
    bins = []
    for u, s, e in zip(uniq, starts, ends):
        level = int(np.searchsorted(svo.level_off, u, side="right") - 1)
        bins.append(SpatialBin(int(u), level, path_idx[order[s:e]]))
    return bins


def bin_stream_id(sample_index, depth, node_id):
    sid = ((sample_index * 64 + depth) << 32) + node_id
    return sid * PATH_STREAM_SPACE + BIN_STREAM_TAG


def bin_stream(cfg_seed, sample_index, depth, node_id):
    """Deterministic stream for per-bin randomness (origin pick, jitter)."""
    return core.RngStream(cfg_seed, bin_stream_id(sample_index, depth, node_id))


def _build_guide_tables(svo, scene, cfg, bins, positions_by_path, sample_index, depth,
                        n_paths):
    n = cfg.field_res_at(depth)
    mode = 2 if cfg.product else 1
    tables = guiding.GuideTables(mode, n, len(bins))
    bin_slot = np.full(n_paths, -1, dtype=np.int32)
    # per-bin randomness: counter 0 picks the origin, 1 and 2 the jitter
    sids = np.array([bin_stream_id(sample_index, depth, b.node) for b in bins],
                    dtype=np.uint64)
    keys = core.stream_key(np.uint64(cfg.seed), sids)
    u_pick = core.u01_at(keys, np.uint64(0))
    origins = np.zeros((len(bins), 3))
    jitters = np.full((len(bins), 2), 0.5)
    if cfg.jitter:
        jitters[:, 0] = core.u01_at(keys, np.uint64(1))
        jitters[:, 1] = core.u01_at(keys, np.uint64(2))
    for slot, b in enumerate(bins):
        k = min(int(u_pick[slot] * len(b.members)), len(b.members) - 1)
        origins[slot] = positions_by_path[b.members[k]]
        bin_slot[b.members] = slot
    values = guiding.generate_fields_batch(
        svo, scene, origins, n, jitters, blur_sigma=cfg.blur_sigma,
        epsilon=cfg.epsilon,
    )
    tables.fill_batch(values)
    return tables, bin_slot


def render_pass(scene, svo, cfg, sample_indices, collect_bin_image=False):
    """Trace one wavefront pass covering every pixel for each sample index.

    Returns (frame, stats).  The frame is the mean of the per-sample
    estimates in the pass; guided runs use single-sample passes so that the
    exitance cache is refreshed between samples.
    """
    cam = scene.camera
    w, h = cam.width, cam.height
    n_pix = w * h
    samples = np.asarray(sample_indices, dtype=np.int64)
    n_paths = n_pix * len(samples)

    state = PathState(n_paths, cfg.max_depth, cam.position)
    state.pixel = np.tile(np.arange(n_pix, dtype=np.int64), len(samples))
    sample_of_path = np.repeat(samples, n_pix)
    stream = (sample_of_path * n_pix + state.pixel) * PATH_STREAM_SPACE
    state.key = core.stream_key(np.uint64(cfg.seed), stream.astype(np.uint64))

    impl = backend.get()
    state.ray_o, state.ray_d = impl.camera_rays(cam, state.key, state.pixel)
    state.ctr[:] = 2
    stats = PassStats()
    bin_image = np.full(n_pix, -1, dtype=np.int64) if collect_bin_image else None

    hit_t = np.zeros(n_paths)
    hit_tri = np.zeros(n_paths, dtype=np.int64)

    for depth in range(1, cfg.max_depth + 1):
        act = np.nonzero(state.alive)[0]
        if len(act) == 0:
            break
        t, tri = scene.intersect_batch(state.ray_o[act], state.ray_d[act])
        hit_t[act] = t
        hit_tri[act] = tri

        guide = None
        bin_slot = None
        if svo is not None:
            hit_ok = tri >= 0
            kinds = np.full(len(act), -1, dtype=np.int32)
            kinds[hit_ok] = scene.mat_kind[scene.mat_ids[tri[hit_ok]]]
            lam = act[kinds == 0]
            pos = np.zeros((n_paths, 3))
            if len(lam):
                sel = kinds == 0
                pos[lam] = state.ray_o[lam] + t[sel][:, None] * state.ray_d[lam]
                bins = partition_spatial(svo, pos[lam], lam, cfg.l_min, cfg.c_ray)
            else:
                bins = []
            stats.bins_per_depth.append(len(bins))
            stats.rays_per_depth.append(len(lam))
            groups = partition_material(
                scene.mat_ids[tri[hit_ok]], act[hit_ok]
            ) if hit_ok.any() else {}
            stats.material_groups.append({k: len(v) for k, v in groups.items()})
            if collect_bin_image and depth == 1:
                for slot, b in enumerate(bins):
                    bin_image[state.pixel[b.members]] = b.node
            if depth <= cfg.guided_depths and bins:
                guide, bin_slot = _build_guide_tables(
                    svo, scene, cfg, bins, pos, int(samples[0]), depth, n_paths
                )
        impl.shade_depth(
            state, scene, depth, hit_t, hit_tri, guide, bin_slot,
            rr_enabled=cfg.russian_roulette, rr_depth=cfg.rr_depth,
        )

    if svo is not None:
        dirty = update_exitance(state, svo)
        if dirty is not None and len(dirty):
            svo.propagate_up(dirty)

    frame = np.zeros((n_pix, 3))
    np.add.at(frame, state.pixel, state.radiance)
    frame /= len(samples)
    out = frame.reshape(h, w, 3)
    if collect_bin_image:
        return out, stats, bin_image.reshape(h, w)
    return out, stats


def render_sample(scene, svo, cfg, sample_index):
    """One sample-per-pixel pass; returns the frame of that pass."""
    frame, _ = render_pass(scene, svo, cfg, [sample_index])
    return frame


def update_exitance(state, svo):
    """Back-propagate emitter radiance along every recorded path prefix.

    For a path that reached an emitter at vertex n, deposits
    (T(n)/T(k)) * L_e at vertex k's leaf for all 1 <= k < n, with outgoing
    direction toward the previous vertex.  Depths whose stored throughput
    has any zero channel are skipped.  Deposits are applied in path order.
    """
    has = (state.emit_depth >= 2) & (state.emit_le.sum(axis=1) > 0.0)
    paths = np.nonzero(has)[0]
    if len(paths) == 0:
        return np.zeros(0, dtype=np.int64)
    n_dep = state.emit_depth[paths].astype(np.int64)
    max_n = int(n_dep.max())
    pk, kk = [], []
    for k in range(1, max_n):
        sel = n_dep > k
        pk.append(paths[sel])
        kk.append(np.full(sel.sum(), k, dtype=np.int64))
    pk = np.concatenate(pk)
    kk = np.concatenate(kk)
    tk = state.rec_T[pk, kk]
    tn = state.rec_T[pk, n_dep[np.searchsorted(paths, pk)]]
    ok = (tk > 0.0).all(axis=1)
    pk, kk, tk, tn = pk[ok], kk[ok], tk[ok], tn[ok]
    if len(pk) == 0:
        return np.zeros(0, dtype=np.int64)
    radiance = (tn / tk) * state.emit_le[pk]
    pos = state.rec_pos[pk, kk]
    prev = state.rec_pos[pk, kk - 1]
    out_dir = prev - pos
    out_dir /= np.linalg.norm(out_dir, axis=1, keepdims=True)
    # nudge toward the previous vertex so boundary hits land in the voxel of
    # the visible face
    nudge = (svo.cube_size / svo.resolution) * 1e-3
    q = pos + out_dir * nudge
    tiny = svo.cube_size * 1e-12
    q = np.clip(q, svo.cube_lo + tiny, svo.cube_lo + svo.cube_size - tiny)
    # path-major order of (pk, kk) construction is k-major; re-sort to path order
    order = np.lexsort((kk, pk))
    pk, kk, radiance, out_dir, q = pk[order], kk[order], radiance[order], out_dir[order], q[order]
    leaf = svo.descend_batch(q)
    good = leaf >= 0
    if not good.any():
        return np.zeros(0, dtype=np.int64)
    dirty = svo.accumulate_batch(leaf[good], out_dir[good], radiance[good])
    return dirty
