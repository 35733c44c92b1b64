"""Adapter exposing the compiled kernels under the backend API."""

import numpy as np

from . import _kernels as K
from . import backend as _backend_mod

NAME = "compiled"
COMPILED = True

# scenes at or below this triangle count skip the BVH for the 8-wide
# vectorized brute-force intersector
SIMD_BRUTE_MAX_TRIS = 512

_NO_PACK = np.zeros(0)


def _pack_of(scene):
    if scene.triangle_count <= SIMD_BRUTE_MAX_TRIS:
        return scene.tri_pack
    return _NO_PACK

_EMPTY3 = np.zeros((0, 0, 0))
_EMPTY4 = np.zeros((0, 0, 0, 0))
_EMPTY5 = np.zeros((0, 0, 0, 0, 0))
_EMPTY2 = np.zeros((0, 0))


def _nt():
    return _backend_mod.workers()


def intersect_rays(scene, origins, dirs, t_min):
    origins = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
    dirs = np.ascontiguousarray(np.atleast_2d(dirs), dtype=np.float64)
    n = len(origins)
    out_t = np.empty(n)
    out_tri = np.empty(n, dtype=np.int64)
    b = scene.bvh
    K.intersect_kernel(b.lo, b.hi, b.left, b.right, b.count, b.order,
                       scene.v0, scene.e1, scene.e2, _pack_of(scene),
                       origins, dirs, float(t_min), out_t, out_tri, _nt())
    out_t[out_tri < 0] = np.inf
    return out_t, out_tri


def occluded_rays(scene, origins, dirs, t_min, t_max):
    origins = np.ascontiguousarray(np.atleast_2d(origins), dtype=np.float64)
    dirs = np.ascontiguousarray(np.atleast_2d(dirs), dtype=np.float64)
    n = len(origins)
    t_max = np.ascontiguousarray(np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,)))
    out = np.zeros(n, dtype=np.uint8)
    b = scene.bvh
    K.occluded_kernel(b.lo, b.hi, b.left, b.right, b.count, b.order,
                      scene.v0, scene.e1, scene.e2, _pack_of(scene),
                      origins, dirs, float(t_min), t_max, out, _nt())
    return out.astype(bool)


def descend_tracked(svo, positions):
    positions = np.ascontiguousarray(np.atleast_2d(positions), dtype=np.float64)
    n = len(positions)
    node = np.empty(n, dtype=np.int64)
    present = np.zeros(n, dtype=np.uint8)
    deepest = np.empty(n, dtype=np.int64)
    K.descend_kernel(svo.child_base, svo.child_mask,
                     float(svo.cube_lo[0]), float(svo.cube_lo[1]),
                     float(svo.cube_lo[2]), svo.cube_size,
                     svo.resolution, svo.depth,
                     positions, node, present, deepest, _nt())
    return node, present.astype(bool), deepest


def descend_leaves(svo, positions):
    node, present, _ = descend_tracked(svo, positions)
    return np.where(present, node, -1)


def trace_cones_multi(svo, scene, origins, dirs, omega):
    dirs = np.ascontiguousarray(np.atleast_2d(dirs), dtype=np.float64)
    origins = np.ascontiguousarray(
        np.broadcast_to(np.atleast_2d(origins), dirs.shape), dtype=np.float64)
    out = np.zeros((len(dirs), 3))
    b = scene.bvh
    K.trace_kernel(b.lo, b.hi, b.left, b.right, b.count, b.order,
                   scene.v0, scene.e1, scene.e2, _pack_of(scene),
                   svo.child_base, svo.child_mask, svo.parent,
                   svo.normal, svo.mean_a, svo.mean_b,
                   float(svo.cube_lo[0]), float(svo.cube_lo[1]),
                   float(svo.cube_lo[2]), svo.cube_size,
                   svo.resolution, svo.depth,
                   origins, dirs, float(omega), scene.ray_eps, out, _nt())
    return out


def trace_cones(svo, scene, origin, dirs, omega):
    return trace_cones_multi(svo, scene, np.asarray(origin, dtype=np.float64)[None, :],
                             dirs, omega)


def camera_rays(camera, keys, pixels):
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    pixels = np.ascontiguousarray(pixels, dtype=np.int64)
    n = len(keys)
    out_o = np.empty((n, 3))
    out_d = np.empty((n, 3))
    K.camera_kernel(keys, pixels, camera.width, camera.height,
                    *camera.position, *camera.forward, *camera.right,
                    *camera.up_ortho, camera.tan_half, out_o, out_d, _nt())
    return out_o, out_d


def shade_depth(state, scene, depth, hit_t, hit_tri, guide, bin_slot,
                rr_enabled=False, rr_depth=3):
    active = np.nonzero(state.alive)[0]
    if len(active) == 0:
        return
    if guide is None:
        gmode, gn, gblock = 0, 1, 1
        gmarg, gcond, gpdftab, gvals = _EMPTY2, _EMPTY3, _EMPTY3, _EMPTY3
        gblock_sums, gblk_marg, gblk_cond = _EMPTY3, _EMPTY4, _EMPTY5
        gupper = _EMPTY3
        geps = 0.0
        slots = np.full(state.n, -1, dtype=np.int32)
    else:
        gmode = guide.mode
        gn = guide.n
        gblock = guide.block
        gmarg, gcond, gpdftab, gvals = guide.marg, guide.cond, guide.pdftab, guide.vals
        gblock_sums = guide.block_sums
        gblk_marg = guide.blk_marg
        gblk_cond = guide.blk_cond
        gupper = np.ascontiguousarray(guide.upper_dirs)
        geps = guide.epsilon
        slots = np.ascontiguousarray(bin_slot, dtype=np.int32)
    alive_u8 = state.alive.view(np.uint8)
    b = scene.bvh
    K.shade_kernel(active, depth, state.rec_pos.shape[1],
                   state.ray_o, state.ray_d, state.key, state.ctr,
                   state.beta, state.radiance, alive_u8, state.prev_pdf,
                   state.rec_pos, state.rec_T, state.emit_le, state.emit_depth,
                   hit_t, hit_tri,
                   scene.v0, scene.e1, scene.e2, _pack_of(scene), scene.normals,
                   np.ascontiguousarray(scene.mat_ids, dtype=np.int32),
                   scene.mat_kind, scene.mat_rgb,
                   scene.emitter_cdf, scene.emitter_tris, scene.emitter_area,
                   b.lo, b.hi, b.left, b.right, b.count, b.order,
                   scene.ray_eps,
                   gmode, gn, gblock, gmarg, gcond, gpdftab, gvals,
                   gblock_sums, gblk_marg, gblk_cond, gupper, geps,
                   slots, bool(rr_enabled), int(rr_depth), _nt())
