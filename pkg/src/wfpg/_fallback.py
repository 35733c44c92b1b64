"""Pure-numpy implementations of the hot kernels.

This backend is selected when the compiled extension is unavailable (or
forced via WFPG_PURE_PYTHON=1).  Semantics match the compiled kernels; only
throughput differs.
"""

import numpy as np

from . import core

NAME = "python"
COMPILED = False

_DET_EPS = 1e-300


# ---------------------------------------------------------------------------
# Ray casting: brute force over triangles, vectorized over the ray batch.
# ---------------------------------------------------------------------------

def intersect_rays(scene, origins, dirs, t_min):
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = len(origins)
    best_t = np.full(n, np.inf)
    best_tri = np.full(n, -1, dtype=np.int64)
    for tri in range(scene.triangle_count):
        t = _mt_one(scene, tri, origins, dirs, t_min, best_t)
        better = t < best_t
        best_t[better] = t[better]
        best_tri[better] = tri
    return best_t, best_tri


def _mt_one(scene, tri, origins, dirs, t_min, upper):
    """Moeller-Trumbore of one triangle against the ray batch; returns the
    hit distance or +inf per ray."""
    e1 = scene.e1[tri]
    e2 = scene.e2[tri]
    v0 = scene.v0[tri]
    pvec = np.cross(dirs, e2)
    det = pvec @ e1
    tvec = origins - v0
    qvec = np.cross(tvec, e1)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / det
        u = (np.einsum("ij,ij->i", tvec, pvec)) * inv
        v = (np.einsum("ij,ij->i", dirs, qvec)) * inv
        t = (qvec @ e2) * inv
        ok = (
            (np.abs(det) > _DET_EPS)
            & (u >= 0.0)
            & (v >= 0.0)
            & (u + v <= 1.0)
            & (t > t_min)
            & (t < upper)
        )
    return np.where(ok, t, np.inf)


def occluded_rays(scene, origins, dirs, t_min, t_max):
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    t_max = np.broadcast_to(np.asarray(t_max, dtype=np.float64), (len(origins),))
    blocked = np.zeros(len(origins), dtype=bool)
    for tri in range(scene.triangle_count):
        t = _mt_one(scene, tri, origins, dirs, t_min, t_max)
        blocked |= np.isfinite(t)
    return blocked


# ---------------------------------------------------------------------------
# SVO walks
# ---------------------------------------------------------------------------

def descend_leaves(svo, positions):
    """Leaf node id per position, -1 where the containing voxel is empty."""
    node, present, _ = descend_tracked(svo, positions)
    return np.where(present, node, -1)


def descend_tracked(svo, positions):
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    coords = svo.point_to_leaf_coords(positions)
    codes = np.atleast_1d(core.morton_encode(coords[:, 0], coords[:, 1], coords[:, 2]))
    codes = codes.astype(np.uint64)
    depth = svo.depth
    node = np.full(len(positions), int(svo.level_off[0]), dtype=np.int64)
    deepest = node.copy()
    present = np.ones(len(positions), dtype=bool)
    for level in range(1, depth + 1):
        octant = ((codes >> np.uint64(3 * (depth - level))) & np.uint64(7)).astype(np.int64)
        mask = svo.child_mask[node].astype(np.int64)
        has = ((mask >> octant) & 1).astype(bool)
        present &= has
        below = mask & ((1 << octant) - 1)
        rank = np.zeros(len(node), dtype=np.int64)
        for b in range(8):
            rank += (below >> b) & 1
        nxt = svo.child_base[node] + rank
        node = np.where(present, nxt, node)
        deepest = np.where(present, node, deepest)
    return node, present, deepest


def trace_cones(svo, scene, origin, dirs, omega):
    """Cone-trace a batch of directions from one origin; returns (M, 3) RGB."""
    return trace_cones_multi(svo, scene,
                             np.asarray(origin, dtype=np.float64)[None, :],
                             dirs, omega)


def trace_cones_multi(svo, scene, origins, dirs, omega):
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    m = len(dirs)
    origins = np.broadcast_to(np.atleast_2d(np.asarray(origins, dtype=np.float64)),
                              (m, 3))
    t, tri = intersect_rays(scene, origins, dirs, scene.ray_eps)
    out = np.zeros((m, 3))
    hit = tri >= 0
    if not hit.any():
        return out
    hd = dirs[hit]
    ht = t[hit]
    hp = origins[hit] + ht[:, None] * hd
    # nudge the query point toward the cone apex so boundary-grazing hits
    # resolve into the voxel of the surface that was actually struck
    nudge = (svo.cube_size / svo.resolution) * 1e-3
    q = hp - hd * nudge
    tiny = svo.cube_size * 1e-12
    q = np.clip(q, svo.cube_lo + tiny, svo.cube_lo + svo.cube_size - tiny)
    _, _, deepest = descend_tracked(svo, q)

    area = ht * ht * omega
    best = deepest.copy()
    level = np.searchsorted(svo.level_off, deepest, side="right") - 1
    side = svo.cube_size / (1 << level).astype(np.float64)
    best_diff = np.abs(side * side - area)
    cur = svo.parent[deepest]
    while (cur >= 0).any():
        valid = cur >= 0
        lv = np.searchsorted(svo.level_off, np.where(valid, cur, 0), side="right") - 1
        sd = svo.cube_size / (1 << lv).astype(np.float64)
        diff = np.abs(sd * sd - area)
        upd = valid & (diff < best_diff)
        best[upd] = cur[upd]
        best_diff[upd] = diff[upd]
        cur = np.where(valid, svo.parent[np.where(valid, cur, 0)], -1)

    dot_a = np.einsum("ij,ij->i", hd, svo.normal[best])
    side_a = dot_a <= 0.0
    mean = np.where(side_a[:, None], svo.mean_a[best], svo.mean_b[best])
    out[hit] = mean * np.abs(dot_a)[:, None]
    return out


def camera_rays(camera, keys, pixels):
    """Primary ray origins/directions with the per-path sub-pixel jitter
    drawn from counters 0 and 1 of each path stream."""
    jx = core.u01_at(keys, np.uint64(0))
    jy = core.u01_at(keys, np.uint64(1))
    px = pixels % camera.width
    py = pixels // camera.width
    d = camera.ray_directions(px, py, jx, jy)
    o = np.broadcast_to(camera.position, d.shape).copy()
    return o, d


# ---------------------------------------------------------------------------
# Per-depth wavefront shading
# ---------------------------------------------------------------------------

def _u01(keys, ctrs, offset=0):
    return core.u01_at(keys, ctrs + np.uint64(offset))


def _sample_rows(cdf_rows, u):
    """Vectorized inverse CDF: per-row binary search plus residual."""
    n_rows, n = cdf_rows.shape
    shifted = cdf_rows + np.arange(n_rows)[:, None]
    idx = np.searchsorted(shifted.ravel(), u + np.arange(n_rows), side="right")
    idx = np.clip(idx - np.arange(n_rows) * n, 0, n - 1)
    lo = np.where(idx > 0, cdf_rows[np.arange(n_rows), idx - 1], 0.0)
    span = cdf_rows[np.arange(n_rows), idx] - lo
    frac = np.where(span > 0, (u - lo) / np.where(span > 0, span, 1.0), 0.0)
    return idx, np.clip(frac, 0.0, 1.0 - 1e-12)


def _octa_cells(dirs, n):
    u, v = core.octa_dir_to_uv(dirs)
    i = np.minimum((u * n).astype(np.int64), n - 1)
    j = np.minimum((v * n).astype(np.int64), n - 1)
    return i, j


def _pdf_plain(guide, slots, dirs):
    i, j = _octa_cells(dirs, guide.n)
    return guide.pdftab[slots, j, i]


def _pdf_product(guide, slots, dirs, upper, upper_sum):
    n = guide.n
    m = guide.block
    i, j = _octa_cells(dirs, n)
    bi = i // m
    bj = j // m
    rows = np.arange(len(slots))
    p_up = upper[rows, bj, bi] / upper_sum
    p_cell = guide.vals[slots, j, i] / guide.block_sums[slots, bj, bi]
    return p_up * p_cell * (n * n) / (4.0 * np.pi)


def _build_upper(guide, slots, n_s, albedo_lum):
    """Per-path 8x8 product layer: block means x clamped-cosine BSDF."""
    m = guide.block
    means = guide.block_sums[slots] / (m * m)
    cos = np.maximum(np.einsum("rcj,pj->prc", guide.upper_dirs, n_s), 0.0)
    upper = means * (albedo_lum[:, None, None] / np.pi) * cos
    upper = np.maximum(upper, guide.epsilon)
    return upper, upper.sum(axis=(1, 2))


def _sample_plain(guide, slots, u1, u2):
    n = guide.n
    j, fv = _sample_rows(guide.marg[slots], u1)
    i, fu = _sample_rows(guide.cond[slots, j], u2)
    u = (i + fu) / n
    v = (j + fv) / n
    d = core.octa_uv_to_dir(u, v)
    pdf = guide.pdftab[slots, j, i]
    return d, pdf


def _sample_product(guide, slots, upper, upper_sum, u1, u2, u3, u4):
    n = guide.n
    m = guide.block
    rows = np.arange(len(slots))
    urow = upper.sum(axis=2)
    marg = np.cumsum(urow, axis=1) / upper_sum[:, None]
    bj, _ = _sample_rows(marg, u1)
    cond = np.cumsum(upper[rows, bj], axis=1) / urow[rows, bj][:, None]
    bi, _ = _sample_rows(cond, u2)
    j_in, fv = _sample_rows(guide.blk_marg[slots, bj, bi], u3)
    i_in, fu = _sample_rows(guide.blk_cond[slots, bj, bi, j_in], u4)
    j = bj * m + j_in
    i = bi * m + i_in
    u = (i + fu) / n
    v = (j + fv) / n
    d = core.octa_uv_to_dir(u, v)
    p_up = upper[rows, bj, bi] / upper_sum
    p_cell = guide.vals[slots, j, i] / guide.block_sums[slots, bj, bi]
    pdf = p_up * p_cell * (n * n) / (4.0 * np.pi)
    return d, pdf


def _sample_emitters(scene, u1, u2):
    cdf = scene.emitter_cdf
    k = np.minimum(np.searchsorted(cdf, u1, side="right"), len(cdf) - 1)
    lo = np.where(k > 0, cdf[k - 1], 0.0)
    span = cdf[k] - lo
    b1 = np.clip(np.where(span > 0, (u1 - lo) / np.where(span > 0, span, 1.0), 0.0),
                 0.0, 1.0 - 1e-12)
    tri = scene.emitter_tris[k]
    su = np.sqrt(b1)
    a = 1.0 - su
    b = u2 * su
    p = scene.v0[tri] + a[:, None] * scene.e1[tri] + b[:, None] * scene.e2[tri]
    return p, scene.normals[tri], scene.mat_rgb[scene.mat_ids[tri]]


def shade_depth(state, scene, depth, hit_t, hit_tri, guide, bin_slot,
                rr_enabled=False, rr_depth=3):
    """Advance every live path one bounce.

    Handles misses, one-sided emitter hits (with balance-heuristic MIS
    against next-event estimation), NEE at lambert vertices, and the
    continuation sample: cosine-weighted for unguided vertices, a 50/50
    one-sample MIS mixture of the guided distribution and the BSDF for
    guided ones.  Records per-depth positions and throughputs for the
    exitance update.
    """
    act = np.nonzero(state.alive)[0]
    if len(act) == 0:
        return
    tri = hit_tri[act]
    miss = tri < 0
    state.alive[act[miss]] = False
    act = act[~miss]
    if len(act) == 0:
        return
    tri = hit_tri[act]
    t = hit_t[act]
    d = state.ray_d[act]
    pos = state.ray_o[act] + t[:, None] * d
    state.rec_pos[act, depth] = pos
    state.rec_T[act, depth] = state.beta[act]

    n_geo = scene.normals[tri]
    mid = scene.mat_ids[tri]
    kind = scene.mat_kind[mid]
    cos_in = -np.einsum("ij,ij->i", n_geo, d)

    # --- emitter hits: terminal, MIS-weighted against NEE ------------------
    em = kind == 2
    if em.any():
        ea = act[em]
        le = np.where((cos_in[em] > 0.0)[:, None], scene.mat_rgb[mid[em]], 0.0)
        ppdf = state.prev_pdf[ea]
        w = np.ones(len(ea))
        has_prev = (ppdf >= 0.0) & (cos_in[em] > 1e-9)
        pdf_l = np.where(
            cos_in[em] > 1e-9,
            t[em] * t[em] / (scene.emitter_area * np.maximum(cos_in[em], 1e-300)),
            0.0,
        )
        w = np.where(has_prev, ppdf / np.maximum(ppdf + pdf_l, 1e-300), 1.0)
        state.radiance[ea] += state.beta[ea] * w[:, None] * le
        state.emit_le[ea] = le
        state.emit_depth[ea] = depth
        state.alive[ea] = False

    # --- mirrors: deterministic reflection, no draws ------------------------
    mir = kind == 1
    if mir.any():
        ma = act[mir]
        flip = np.where(cos_in[mir] >= 0.0, 1.0, -1.0)
        n_s = n_geo[mir] * flip[:, None]
        wo = -d[mir]
        wi = 2.0 * np.einsum("ij,ij->i", wo, n_s)[:, None] * n_s - wo
        state.beta[ma] *= scene.mat_rgb[mid[mir]]
        state.ray_o[ma] = pos[mir]
        state.ray_d[ma] = wi
        state.prev_pdf[ma] = -1.0
        dead = cos_in[mir] == 0.0
        state.alive[ma[dead]] = False

    # --- lambert vertices ----------------------------------------------------
    lam = kind == 0
    if not lam.any():
        return
    la = act[lam]
    keys = state.key[la]
    ctr = state.ctr[la].copy()
    pos_l = pos[lam]
    flip = np.where(cos_in[lam] >= 0.0, 1.0, -1.0)
    n_s = n_geo[lam] * flip[:, None]
    albedo = scene.mat_rgb[mid[lam]]
    grazing = cos_in[lam] == 0.0

    slots = bin_slot[la] if guide is not None else np.full(len(la), -1, dtype=np.int64)
    guided = (slots >= 0) if guide is not None else np.zeros(len(la), dtype=bool)
    upper = upper_sum = None
    if guide is not None and guide.mode == 2 and guided.any():
        upper = np.zeros((len(la), 8, 8))
        upper_sum = np.ones(len(la))
        alb_lum = core.luminance(albedo)
        upper[guided], upper_sum[guided] = _build_upper(
            guide, slots[guided], n_s[guided], alb_lum[guided]
        )

    def mixture_pdf(dirs, cos_rel):
        pb = np.maximum(cos_rel, 0.0) / np.pi
        if guide is None or not guided.any():
            return pb
        pg = np.zeros(len(la))
        if guide.mode == 1:
            pg[guided] = _pdf_plain(guide, slots[guided], dirs[guided])
        else:
            pg[guided] = _pdf_product(
                guide, slots[guided], dirs[guided], upper[guided], upper_sum[guided]
            )
        return np.where(guided, 0.5 * pg + 0.5 * pb, pb)

    # NEE: two draws per lambert vertex
    u1 = _u01(keys, ctr, 0)
    u2 = _u01(keys, ctr, 1)
    ctr += np.uint64(2)
    lp, ln, lrad = _sample_emitters(scene, u1, u2)
    delta = lp - pos_l
    dist = np.linalg.norm(delta, axis=1)
    safe = dist > 2.0 * scene.ray_eps
    dl = delta / np.maximum(dist, 1e-300)[:, None]
    cos_l = -np.einsum("ij,ij->i", ln, dl)
    cos_s = np.einsum("ij,ij->i", n_s, dl)
    valid = safe & (cos_l > 1e-9) & (cos_s > 0.0) & ~grazing & (lrad.sum(axis=1) > 0.0)
    if valid.any():
        pdf_l = dist * dist / (scene.emitter_area * np.maximum(cos_l, 1e-300))
        blocked = np.ones(len(la), dtype=bool)
        blocked[valid] = occluded_rays(
            scene, pos_l[valid], dl[valid], scene.ray_eps, dist[valid] - scene.ray_eps
        )
        lit = valid & ~blocked
        if lit.any():
            p_cont = mixture_pdf(dl, cos_s)
            w = pdf_l / (pdf_l + p_cont)
            contrib = (
                state.beta[la]
                * (albedo / np.pi)
                * (cos_s * w / np.maximum(pdf_l, 1e-300))[:, None]
                * lrad
            )
            state.radiance[la[lit]] += contrib[lit]

    # optional russian roulette on the continuation
    rr_alive = np.ones(len(la), dtype=bool)
    if rr_enabled and depth >= rr_depth:
        u_rr = _u01(keys, ctr, 0)
        ctr += np.uint64(1)
        q = np.clip(state.beta[la].max(axis=1), 0.05, 1.0)
        rr_alive = u_rr < q
        state.beta[la[rr_alive]] /= q[rr_alive, None]

    # continuation sample
    wi = np.zeros((len(la), 3))
    pdf_mix = np.zeros(len(la))

    if guided.any():
        coin = _u01(keys[guided], ctr[guided], 0)
        ctr[guided] += np.uint64(1)
        take_g = coin < 0.5
    else:
        take_g = np.zeros(0, dtype=bool)

    unguided = ~guided
    if unguided.any():
        ub1 = _u01(keys[unguided], ctr[unguided], 0)
        ub2 = _u01(keys[unguided], ctr[unguided], 1)
        ctr[unguided] += np.uint64(2)
        dirs = _cosine_dirs(n_s[unguided], ub1, ub2)
        wi[unguided] = dirs
        pdf_mix[unguided] = np.maximum(
            np.einsum("ij,ij->i", dirs, n_s[unguided]), 0.0
        ) / np.pi

    if guided.any():
        gsel = np.nonzero(guided)[0]
        g_guided = gsel[take_g]
        g_bsdf = gsel[~take_g]
        if len(g_guided):
            if guide.mode == 1:
                s1 = _u01(keys[g_guided], ctr[g_guided], 0)
                s2 = _u01(keys[g_guided], ctr[g_guided], 1)
                ctr[g_guided] += np.uint64(2)
                dirs, _ = _sample_plain(guide, slots[g_guided], s1, s2)
            else:
                us = [_u01(keys[g_guided], ctr[g_guided], k) for k in range(4)]
                ctr[g_guided] += np.uint64(4)
                dirs, _ = _sample_product(
                    guide, slots[g_guided], upper[g_guided], upper_sum[g_guided], *us
                )
            wi[g_guided] = dirs
        if len(g_bsdf):
            s1 = _u01(keys[g_bsdf], ctr[g_bsdf], 0)
            s2 = _u01(keys[g_bsdf], ctr[g_bsdf], 1)
            ctr[g_bsdf] += np.uint64(2)
            wi[g_bsdf] = _cosine_dirs(n_s[g_bsdf], s1, s2)
        cos_rel = np.einsum("ij,ij->i", wi, n_s)
        pm = mixture_pdf(wi, cos_rel)
        pdf_mix[guided] = pm[guided]

    cos_i = np.einsum("ij,ij->i", wi, n_s)
    ok = rr_alive & (cos_i > 0.0) & (pdf_mix > 0.0) & ~grazing
    f_over = np.where(
        ok[:, None],
        (albedo / np.pi) * (cos_i / np.maximum(pdf_mix, 1e-300))[:, None],
        0.0,
    )
    state.beta[la] *= f_over
    state.ray_o[la] = pos_l
    state.ray_d[la] = wi
    state.prev_pdf[la] = pdf_mix
    state.ctr[la] = ctr
    state.alive[la] = ok & (state.beta[la].max(axis=1) > 0.0)


def _cosine_dirs(n_s, u1, u2):
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    x = r * np.cos(phi)
    y = r * np.sin(phi)
    z = np.sqrt(np.maximum(1.0 - u1, 0.0))
    t1, t2 = _onb(n_s)
    return x[:, None] * t1 + y[:, None] * t2 + z[:, None] * n_s


def _onb(n):
    s = np.copysign(1.0, n[:, 2])
    a = -1.0 / (s + n[:, 2])
    b = n[:, 0] * n[:, 1] * a
    t1 = np.stack([1.0 + s * n[:, 0] ** 2 * a, s * b, -s * n[:, 0]], axis=-1)
    t2 = np.stack([b, s + n[:, 1] ** 2 * a, -n[:, 1]], axis=-1)
    return t1, t2
