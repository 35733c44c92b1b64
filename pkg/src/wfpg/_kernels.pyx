# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: BVH ray casting, SVO walks, cone-traced field
generation, and the per-depth wavefront shading step.

Semantics mirror wfpg._fallback.  The outer kernels acquire numpy buffers
once and hand raw pointers to the per-element helpers, whose locals live on
each worker's stack; writes go to per-element slots only, so results do not
depend on the worker count.
"""

from cython.parallel cimport prange
from libc.math cimport atan, copysign, cos, fabs, fmax, fmin, sin, sqrt

import numpy as np

cimport numpy as cnp

cdef extern from *:
    """
    #include <stdint.h>

    /* 8-wide triangle tests over a padded SoA pack (blocks of 8 triangles:
       v0x[8] v0y[8] v0z[8] e1x[8] ... e2z[8] = 72 doubles per block).
       Padded lanes carry degenerate (all-zero) triangles, whose determinant
       is 0, so they can never report a hit. */
    #if defined(__GNUC__) && defined(__x86_64__)
    typedef double wfpg_v8d __attribute__((vector_size(64), aligned(8)));
    typedef int64_t wfpg_v8l __attribute__((vector_size(64), aligned(8)));

    static inline wfpg_v8d wfpg_sel(wfpg_v8l m, wfpg_v8d a, wfpg_v8d b)
    {
        return (wfpg_v8d)(((wfpg_v8l)a & m) | ((wfpg_v8l)b & ~m));
    }

    static inline wfpg_v8l wfpg_sel_l(wfpg_v8l m, wfpg_v8l a, wfpg_v8l b)
    {
        return (a & m) | (b & ~m);
    }

    static void wfpg_brute_nearest(const double* pack, int64_t nblk,
                                   double ox, double oy, double oz,
                                   double dx, double dy, double dz,
                                   double tmin,
                                   double* out_t, int64_t* out_id)
    {
        const wfpg_v8d ONE = {1, 1, 1, 1, 1, 1, 1, 1};
        const wfpg_v8l LANE = {0, 1, 2, 3, 4, 5, 6, 7};
        wfpg_v8d bt = {1e300, 1e300, 1e300, 1e300, 1e300, 1e300, 1e300, 1e300};
        wfpg_v8l bid = {-1, -1, -1, -1, -1, -1, -1, -1};
        int64_t b;
        int l;
        for (b = 0; b < nblk; b++) {
            const double* B = pack + b * 72;
            wfpg_v8d v0x = *(const wfpg_v8d*)(B);
            wfpg_v8d v0y = *(const wfpg_v8d*)(B + 8);
            wfpg_v8d v0z = *(const wfpg_v8d*)(B + 16);
            wfpg_v8d e1x = *(const wfpg_v8d*)(B + 24);
            wfpg_v8d e1y = *(const wfpg_v8d*)(B + 32);
            wfpg_v8d e1z = *(const wfpg_v8d*)(B + 40);
            wfpg_v8d e2x = *(const wfpg_v8d*)(B + 48);
            wfpg_v8d e2y = *(const wfpg_v8d*)(B + 56);
            wfpg_v8d e2z = *(const wfpg_v8d*)(B + 64);
            wfpg_v8d px = dy * e2z - dz * e2y;
            wfpg_v8d py = dz * e2x - dx * e2z;
            wfpg_v8d pz = dx * e2y - dy * e2x;
            wfpg_v8d det = e1x * px + e1y * py + e1z * pz;
            wfpg_v8d s = wfpg_sel(det > 0.0, ONE, -ONE);
            wfpg_v8d ad = det * s;
            wfpg_v8d tx = ox - v0x, ty = oy - v0y, tz = oz - v0z;
            wfpg_v8d us = (tx * px + ty * py + tz * pz) * s;
            wfpg_v8d qx = ty * e1z - tz * e1y;
            wfpg_v8d qy = tz * e1x - tx * e1z;
            wfpg_v8d qz = tx * e1y - ty * e1x;
            wfpg_v8d vs = (dx * qx + dy * qy + dz * qz) * s;
            wfpg_v8d ts = (e2x * qx + e2y * qy + e2z * qz) * s;
            wfpg_v8l ok = (ad > 1e-300) & (us >= 0.0) & (vs >= 0.0)
                        & (us + vs <= ad) & (ts > tmin * ad);
            wfpg_v8d t = ts / wfpg_sel(ok, ad, ONE);
            ok &= (t < bt);
            bt = wfpg_sel(ok, t, bt);
            bid = wfpg_sel_l(ok, LANE + b * 8, bid);
        }
        {
            double rbt = 1e300;
            int64_t rid = -1;
            for (l = 0; l < 8; l++) {
                if (bid[l] >= 0
                    && (bt[l] < rbt || (bt[l] == rbt && bid[l] < rid)))
                {
                    rbt = bt[l];
                    rid = bid[l];
                }
            }
            *out_t = rbt;
            *out_id = rid;
        }
    }

    static int wfpg_brute_occluded(const double* pack, int64_t nblk,
                                   double ox, double oy, double oz,
                                   double dx, double dy, double dz,
                                   double tmin, double tmax)
    {
        int64_t b;
        int l;
        for (b = 0; b < nblk; b++) {
            const double* B = pack + b * 72;
            wfpg_v8d v0x = *(const wfpg_v8d*)(B);
            wfpg_v8d v0y = *(const wfpg_v8d*)(B + 8);
            wfpg_v8d v0z = *(const wfpg_v8d*)(B + 16);
            wfpg_v8d e1x = *(const wfpg_v8d*)(B + 24);
            wfpg_v8d e1y = *(const wfpg_v8d*)(B + 32);
            wfpg_v8d e1z = *(const wfpg_v8d*)(B + 40);
            wfpg_v8d e2x = *(const wfpg_v8d*)(B + 48);
            wfpg_v8d e2y = *(const wfpg_v8d*)(B + 56);
            wfpg_v8d e2z = *(const wfpg_v8d*)(B + 64);
            wfpg_v8d px = dy * e2z - dz * e2y;
            wfpg_v8d py = dz * e2x - dx * e2z;
            wfpg_v8d pz = dx * e2y - dy * e2x;
            wfpg_v8d det = e1x * px + e1y * py + e1z * pz;
            const wfpg_v8d ONE = {1, 1, 1, 1, 1, 1, 1, 1};
            wfpg_v8d s = wfpg_sel(det > 0.0, ONE, -ONE);
            wfpg_v8d ad = det * s;
            wfpg_v8d tx = ox - v0x, ty = oy - v0y, tz = oz - v0z;
            wfpg_v8d us = (tx * px + ty * py + tz * pz) * s;
            wfpg_v8d qx = ty * e1z - tz * e1y;
            wfpg_v8d qy = tz * e1x - tx * e1z;
            wfpg_v8d qz = tx * e1y - ty * e1x;
            wfpg_v8d vs = (dx * qx + dy * qy + dz * qz) * s;
            wfpg_v8d ts = (e2x * qx + e2y * qy + e2z * qz) * s;
            wfpg_v8l ok = (ad > 1e-300) & (us >= 0.0) & (vs >= 0.0)
                        & (us + vs <= ad) & (ts > tmin * ad) & (ts < tmax * ad);
            for (l = 0; l < 8; l++) {
                if (ok[l]) return 1;
            }
        }
        return 0;
    }
    #else  /* scalar fallback for non-GNU toolchains */
    static void wfpg_brute_nearest(const double* pack, int64_t nblk,
                                   double ox, double oy, double oz,
                                   double dx, double dy, double dz,
                                   double tmin,
                                   double* out_t, int64_t* out_id)
    {
        double rbt = 1e300;
        int64_t rid = -1;
        int64_t b;
        int l;
        for (b = 0; b < nblk; b++) {
            const double* B = pack + b * 72;
            for (l = 0; l < 8; l++) {
                double px = dy * B[64 + l] - dz * B[56 + l];
                double py = dz * B[48 + l] - dx * B[64 + l];
                double pz = dx * B[56 + l] - dy * B[48 + l];
                double det = B[24 + l] * px + B[32 + l] * py + B[40 + l] * pz;
                double s = det > 0.0 ? 1.0 : -1.0;
                double ad = det * s;
                double tx = ox - B[l], ty = oy - B[8 + l], tz = oz - B[16 + l];
                double us = (tx * px + ty * py + tz * pz) * s;
                double qx = ty * B[40 + l] - tz * B[32 + l];
                double qy = tz * B[24 + l] - tx * B[40 + l];
                double qz = tx * B[32 + l] - ty * B[24 + l];
                double vs = (dx * qx + dy * qy + dz * qz) * s;
                double ts = (B[48 + l] * qx + B[56 + l] * qy + B[64 + l] * qz) * s;
                if (ad > 1e-300 && us >= 0.0 && vs >= 0.0 && us + vs <= ad
                    && ts > tmin * ad) {
                    double t = ts / ad;
                    if (t < rbt) { rbt = t; rid = b * 8 + l; }
                }
            }
        }
        *out_t = rbt;
        *out_id = rid;
    }

    static int wfpg_brute_occluded(const double* pack, int64_t nblk,
                                   double ox, double oy, double oz,
                                   double dx, double dy, double dz,
                                   double tmin, double tmax)
    {
        double t;
        int64_t id;
        wfpg_brute_nearest(pack, nblk, ox, oy, oz, dx, dy, dz, tmin, &t, &id);
        return id >= 0 && t < tmax;
    }
    #endif
    """
    void wfpg_brute_nearest(const double* pack, long nblk,
                            double ox, double oy, double oz,
                            double dx, double dy, double dz,
                            double tmin, double* out_t, long* out_id) nogil
    int wfpg_brute_occluded(const double* pack, long nblk,
                            double ox, double oy, double oz,
                            double dx, double dy, double dz,
                            double tmin, double tmax) nogil

cdef double PI = 3.141592653589793238462643383279502884
cdef double INV_2_53 = 1.0 / 9007199254740992.0

NAME = "compiled"
COMPILED = True

ctypedef unsigned long long u64
ctypedef unsigned char u8


# ---------------------------------------------------------------------------
# counter-based RNG (splitmix64 finalizer)
# ---------------------------------------------------------------------------

cdef inline u64 mix64(u64 x) nogil:
    x ^= x >> 30
    x *= <u64>0xBF58476D1CE4E5B9
    x ^= x >> 27
    x *= <u64>0x94D049BB133111EB
    x ^= x >> 31
    return x


cdef inline double u01(u64 key, u64 c) nogil:
    cdef u64 v = mix64(key + (c + 1) * <u64>0x9E3779B97F4A7C15)
    return <double>(v >> 11) * INV_2_53


def u01_scalar(key, counter):
    """Test hook: one uniform draw for a (key, counter) pair."""
    return u01(<u64>key, <u64>counter)


cdef inline double dot3(double ax, double ay, double az,
                        double bx, double by, double bz) nogil:
    return ax * bx + ay * by + az * bz


# ---------------------------------------------------------------------------
# equal-area octahedral mapping (scalar)
# ---------------------------------------------------------------------------

cdef inline void uv_to_dir(double u, double v,
                           double* ox, double* oy, double* oz) nogil:
    cdef double a = 2.0 * u - 1.0
    cdef double b = 2.0 * v - 1.0
    cdef double ap = fabs(a)
    cdef double bp = fabs(b)
    cdef double sd = 1.0 - (ap + bp)
    cdef double d = fabs(sd)
    cdef double r = 1.0 - d
    cdef double phi, z, rho, x, y, inv
    if r == 0.0:
        phi = 1.0
    else:
        phi = (bp - ap) / r + 1.0
    phi *= PI / 4.0
    z = copysign(1.0 - r * r, sd)
    rho = r * sqrt(fmax(2.0 - r * r, 0.0))
    x = copysign(cos(phi), a) * rho
    y = copysign(sin(phi), b) * rho
    inv = 1.0 / sqrt(x * x + y * y + z * z)
    ox[0] = x * inv
    oy[0] = y * inv
    oz[0] = z * inv


cdef inline void dir_to_uv(double dx, double dy, double dz,
                           double* ou, double* ov) nogil:
    cdef double x = fabs(dx)
    cdef double y = fabs(dy)
    cdef double r = sqrt(fmax(1.0 - fabs(dz), 0.0))
    cdef double hi = fmax(x, y)
    cdef double lo = fmin(x, y)
    cdef double ratio = 0.0
    cdef double phi, uq, vq, tmp, u, v
    if hi > 0.0:
        ratio = lo / hi
    phi = atan(ratio) * (2.0 / PI)
    if x < y:
        phi = 1.0 - phi
    vq = phi * r
    uq = r - vq
    if dz < 0.0:
        tmp = uq
        uq = 1.0 - vq
        vq = 1.0 - tmp
    uq = copysign(uq, dx)
    vq = copysign(vq, dy)
    u = 0.5 * (uq + 1.0)
    v = 0.5 * (vq + 1.0)
    if u < 0.0:
        u = 0.0
    if u > 1.0 - 1e-12:
        u = 1.0 - 1e-12
    if v < 0.0:
        v = 0.0
    if v > 1.0 - 1e-12:
        v = 1.0 - 1e-12
    ou[0] = u
    ov[0] = v


# ---------------------------------------------------------------------------
# BVH traversal (pointer-based)
# ---------------------------------------------------------------------------

cdef struct Bvh:
    const double* lo
    const double* hi
    const long* left
    const long* right
    const long* count
    const long* order
    const double* v0
    const double* e1
    const double* e2
    const double* pack
    long nblk


cdef inline bint box_hit(const double* lo, const double* hi,
                         double ox, double oy, double oz,
                         double ix, double iy, double iz,
                         double tmin, double tmax) nogil:
    cdef double t0, t1, tn, tf
    t0 = (lo[0] - ox) * ix
    t1 = (hi[0] - ox) * ix
    tn = fmin(t0, t1)
    tf = fmax(t0, t1)
    t0 = (lo[1] - oy) * iy
    t1 = (hi[1] - oy) * iy
    tn = fmax(tn, fmin(t0, t1))
    tf = fmin(tf, fmax(t0, t1))
    t0 = (lo[2] - oz) * iz
    t1 = (hi[2] - oz) * iz
    tn = fmax(tn, fmin(t0, t1))
    tf = fmin(tf, fmax(t0, t1))
    return tf >= tn and tn <= tmax and tf >= tmin


cdef inline double tri_hit(const double* v0, const double* e1, const double* e2,
                           double ox, double oy, double oz,
                           double dx, double dy, double dz,
                           double tmin, double tmax) nogil:
    """Moeller-Trumbore; returns the hit distance or -1.

    Comparisons run in determinant-scaled space so the division happens only
    for accepted candidates.
    """
    cdef double px, py, pz, det, ad, s, tx, ty, tz, us, qx, qy, qz, vs, ts
    px = dy * e2[2] - dz * e2[1]
    py = dz * e2[0] - dx * e2[2]
    pz = dx * e2[1] - dy * e2[0]
    det = e1[0] * px + e1[1] * py + e1[2] * pz
    ad = fabs(det)
    if ad <= 1e-300:
        return -1.0
    s = 1.0 if det > 0.0 else -1.0
    tx = ox - v0[0]
    ty = oy - v0[1]
    tz = oz - v0[2]
    us = (tx * px + ty * py + tz * pz) * s
    if us < 0.0 or us > ad:
        return -1.0
    qx = ty * e1[2] - tz * e1[1]
    qy = tz * e1[0] - tx * e1[2]
    qz = tx * e1[1] - ty * e1[0]
    vs = (dx * qx + dy * qy + dz * qz) * s
    if vs < 0.0 or us + vs > ad:
        return -1.0
    ts = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * s
    if ts > tmin * ad and ts < tmax * ad:
        return ts / ad
    return -1.0


cdef inline double box_near(const double* lo, const double* hi,
                            double ox, double oy, double oz,
                            double ix, double iy, double iz,
                            double tmin, double tmax) nogil:
    """Entry distance of the slab interval, or +inf on a miss."""
    cdef double t0, t1, tn, tf
    t0 = (lo[0] - ox) * ix
    t1 = (hi[0] - ox) * ix
    tn = fmin(t0, t1)
    tf = fmax(t0, t1)
    t0 = (lo[1] - oy) * iy
    t1 = (hi[1] - oy) * iy
    tn = fmax(tn, fmin(t0, t1))
    tf = fmin(tf, fmax(t0, t1))
    t0 = (lo[2] - oz) * iz
    t1 = (hi[2] - oz) * iz
    tn = fmax(tn, fmin(t0, t1))
    tf = fmin(tf, fmax(t0, t1))
    if tf >= tn and tn <= tmax and tf >= tmin:
        return tn
    return 1e301


cdef inline void bvh_nearest(const Bvh* b,
                             double ox, double oy, double oz,
                             double dx, double dy, double dz,
                             double tmin, double* best_t, long* best_tri) nogil:
    cdef long stack[64]
    cdef double dstack[64]
    cdef int sp
    cdef long node, k, tri, c0, c1, tmpn
    cdef double ix, iy, iz, t, d0, d1, tmpd
    ix = 1.0 / dx
    iy = 1.0 / dy
    iz = 1.0 / dz
    best_t[0] = 1e300
    best_tri[0] = -1
    stack[0] = 0
    dstack[0] = 0.0
    sp = 1
    while sp > 0:
        sp -= 1
        if dstack[sp] >= best_t[0]:
            continue
        node = stack[sp]
        if b.count[node] > 0:
            for k in range(b.left[node], b.left[node] + b.count[node]):
                tri = b.order[k]
                t = tri_hit(b.v0 + 3 * tri, b.e1 + 3 * tri, b.e2 + 3 * tri,
                            ox, oy, oz, dx, dy, dz, tmin, best_t[0])
                if t > 0.0:
                    best_t[0] = t
                    best_tri[0] = tri
        else:
            c0 = b.left[node]
            c1 = b.right[node]
            d0 = box_near(b.lo + 3 * c0, b.hi + 3 * c0,
                          ox, oy, oz, ix, iy, iz, tmin, best_t[0])
            d1 = box_near(b.lo + 3 * c1, b.hi + 3 * c1,
                          ox, oy, oz, ix, iy, iz, tmin, best_t[0])
            if d0 > d1:
                tmpn = c0; c0 = c1; c1 = tmpn
                tmpd = d0; d0 = d1; d1 = tmpd
            if d1 < 1e301:
                stack[sp] = c1
                dstack[sp] = d1
                sp += 1
            if d0 < 1e301:
                stack[sp] = c0
                dstack[sp] = d0
                sp += 1


cdef inline bint bvh_occluded(const Bvh* b,
                              double ox, double oy, double oz,
                              double dx, double dy, double dz,
                              double tmin, double tmax) nogil:
    cdef long stack[64]
    cdef int sp
    cdef long node, k, tri
    cdef double ix, iy, iz, t
    ix = 1.0 / dx
    iy = 1.0 / dy
    iz = 1.0 / dz
    stack[0] = 0
    sp = 1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        if not box_hit(b.lo + 3 * node, b.hi + 3 * node,
                       ox, oy, oz, ix, iy, iz, tmin, tmax):
            continue
        if b.count[node] > 0:
            for k in range(b.left[node], b.left[node] + b.count[node]):
                tri = b.order[k]
                t = tri_hit(b.v0 + 3 * tri, b.e1 + 3 * tri, b.e2 + 3 * tri,
                            ox, oy, oz, dx, dy, dz, tmin, tmax)
                if t > 0.0:
                    return True
        else:
            stack[sp] = b.left[node]
            stack[sp + 1] = b.right[node]
            sp += 2
    return False


cdef inline void ray_nearest(const Bvh* b,
                             double ox, double oy, double oz,
                             double dx, double dy, double dz,
                             double tmin, double* best_t, long* best_tri) nogil:
    if b.nblk > 0:
        wfpg_brute_nearest(b.pack, b.nblk, ox, oy, oz, dx, dy, dz,
                           tmin, best_t, best_tri)
    else:
        bvh_nearest(b, ox, oy, oz, dx, dy, dz, tmin, best_t, best_tri)


cdef inline bint ray_occluded(const Bvh* b,
                              double ox, double oy, double oz,
                              double dx, double dy, double dz,
                              double tmin, double tmax) nogil:
    if b.nblk > 0:
        return wfpg_brute_occluded(b.pack, b.nblk, ox, oy, oz, dx, dy, dz,
                                   tmin, tmax)
    return bvh_occluded(b, ox, oy, oz, dx, dy, dz, tmin, tmax)


def intersect_kernel(const double[:, ::1] nlo, const double[:, ::1] nhi,
                     const long[::1] left, const long[::1] right,
                     const long[::1] count, const long[::1] order,
                     const double[:, ::1] v0, const double[:, ::1] e1,
                     const double[:, ::1] e2, const double[::1] pack,
                     const double[:, ::1] origins, const double[:, ::1] dirs,
                     double tmin,
                     double[::1] out_t, long[::1] out_tri, int nthreads):
    cdef Py_ssize_t i, n = origins.shape[0]
    cdef Bvh b
    b.lo = &nlo[0, 0]; b.hi = &nhi[0, 0]
    b.left = &left[0]; b.right = &right[0]; b.count = &count[0]; b.order = &order[0]
    b.v0 = &v0[0, 0]; b.e1 = &e1[0, 0]; b.e2 = &e2[0, 0]
    b.pack = NULL
    b.nblk = 0
    if pack.shape[0] > 0:
        b.pack = &pack[0]
        b.nblk = pack.shape[0] // 72
    cdef const double* op = &origins[0, 0]
    cdef const double* dp = &dirs[0, 0]
    cdef double* tp = &out_t[0]
    cdef long* ip = &out_tri[0]
    for i in prange(n, nogil=True, schedule="static", num_threads=nthreads):
        ray_nearest(&b, op[3 * i], op[3 * i + 1], op[3 * i + 2],
                    dp[3 * i], dp[3 * i + 1], dp[3 * i + 2], tmin,
                    tp + i, ip + i)


def occluded_kernel(const double[:, ::1] nlo, const double[:, ::1] nhi,
                    const long[::1] left, const long[::1] right,
                    const long[::1] count, const long[::1] order,
                    const double[:, ::1] v0, const double[:, ::1] e1,
                    const double[:, ::1] e2, const double[::1] pack,
                    const double[:, ::1] origins, const double[:, ::1] dirs,
                    double tmin, const double[::1] tmax,
                    u8[::1] out, int nthreads):
    cdef Py_ssize_t i, n = origins.shape[0]
    cdef Bvh b
    b.lo = &nlo[0, 0]; b.hi = &nhi[0, 0]
    b.left = &left[0]; b.right = &right[0]; b.count = &count[0]; b.order = &order[0]
    b.v0 = &v0[0, 0]; b.e1 = &e1[0, 0]; b.e2 = &e2[0, 0]
    b.pack = NULL
    b.nblk = 0
    if pack.shape[0] > 0:
        b.pack = &pack[0]
        b.nblk = pack.shape[0] // 72
    cdef const double* op = &origins[0, 0]
    cdef const double* dp = &dirs[0, 0]
    cdef const double* mp = &tmax[0]
    cdef u8* outp = &out[0]
    for i in prange(n, nogil=True, schedule="static", num_threads=nthreads):
        outp[i] = ray_occluded(&b, op[3 * i], op[3 * i + 1], op[3 * i + 2],
                               dp[3 * i], dp[3 * i + 1], dp[3 * i + 2],
                               tmin, mp[i])


# ---------------------------------------------------------------------------
# SVO walks
# ---------------------------------------------------------------------------

cdef inline u64 spread21(u64 v) nogil:
    v &= <u64>0x1FFFFF
    v = (v | (v << 32)) & <u64>0x1F00000000FFFF
    v = (v | (v << 16)) & <u64>0x1F0000FF0000FF
    v = (v | (v << 8)) & <u64>0x100F00F00F00F00F
    v = (v | (v << 4)) & <u64>0x10C30C30C30C30C3
    v = (v | (v << 2)) & <u64>0x1249249249249249
    return v


cdef inline u64 morton3(long x, long y, long z) nogil:
    return (spread21(<u64>x) | (spread21(<u64>y) << 1) | (spread21(<u64>z) << 2))


cdef struct Svo:
    const long* child_base
    const u8* child_mask
    const long* parent
    const double* normal
    const double* mean_a
    const double* mean_b
    double lox
    double loy
    double loz
    double cube_size
    int resolution
    int depth


cdef inline long descend_point(const Svo* s, double px, double py, double pz,
                               bint* present, long* deepest) nogil:
    cdef double scale = s.resolution / s.cube_size
    cdef long qx = <long>((px - s.lox) * scale)
    cdef long qy = <long>((py - s.loy) * scale)
    cdef long qz = <long>((pz - s.loz) * scale)
    cdef int level, octant, bb, rank
    cdef long node = 0
    cdef u64 code
    cdef u8 mask
    if qx < 0: qx = 0
    if qy < 0: qy = 0
    if qz < 0: qz = 0
    if qx > s.resolution - 1: qx = s.resolution - 1
    if qy > s.resolution - 1: qy = s.resolution - 1
    if qz > s.resolution - 1: qz = s.resolution - 1
    code = morton3(qx, qy, qz)
    present[0] = True
    deepest[0] = 0
    for level in range(1, s.depth + 1):
        octant = <int>((code >> (3 * (s.depth - level))) & 7)
        mask = s.child_mask[node]
        if not (mask >> octant) & 1:
            present[0] = False
            return node
        rank = 0
        for bb in range(octant):
            rank += (mask >> bb) & 1
        node = s.child_base[node] + rank
        deepest[0] = node
    return node


cdef inline void descend_store(Py_ssize_t i, const Svo* s, const double* pp,
                               long* out_node, u8* out_present,
                               long* out_deepest) nogil:
    cdef bint pres
    cdef long deep
    out_node[i] = descend_point(s, pp[3 * i], pp[3 * i + 1], pp[3 * i + 2],
                                &pres, &deep)
    out_present[i] = 1 if pres else 0
    out_deepest[i] = deep


def descend_kernel(const long[::1] child_base, const u8[::1] child_mask,
                   double lox, double loy, double loz, double cube_size,
                   int resolution, int depth,
                   const double[:, ::1] pts,
                   long[::1] out_node, u8[::1] out_present,
                   long[::1] out_deepest, int nthreads):
    cdef Py_ssize_t i, n = pts.shape[0]
    cdef Svo s
    s.child_base = &child_base[0]
    s.child_mask = &child_mask[0]
    s.parent = NULL
    s.normal = NULL
    s.mean_a = NULL
    s.mean_b = NULL
    s.lox = lox; s.loy = loy; s.loz = loz
    s.cube_size = cube_size
    s.resolution = resolution
    s.depth = depth
    cdef const double* pp = &pts[0, 0]
    cdef long* np_ = &out_node[0]
    cdef u8* prp = &out_present[0]
    cdef long* dpp = &out_deepest[0]
    for i in prange(n, nogil=True, schedule="static", num_threads=nthreads):
        descend_store(i, &s, pp, np_, prp, dpp)


cdef inline void trace_one(const Bvh* b, const Svo* s,
                           double oxx, double oyy, double ozz,
                           double dx, double dy, double dz,
                           double omega, double ray_eps, double* out) nogil:
    cdef double bt, r, area, nudge, qx, qy, qz, tiny, side, diff, best_diff, da, w
    cdef long btri, deep, best, cur
    cdef int lv
    cdef bint pres
    out[0] = 0.0
    out[1] = 0.0
    out[2] = 0.0
    ray_nearest(b, oxx, oyy, ozz, dx, dy, dz, ray_eps, &bt, &btri)
    if btri < 0:
        return
    r = bt
    nudge = (s.cube_size / s.resolution) * 1e-3
    tiny = s.cube_size * 1e-12
    qx = oxx + r * dx - dx * nudge
    qy = oyy + r * dy - dy * nudge
    qz = ozz + r * dz - dz * nudge
    qx = fmin(fmax(qx, s.lox + tiny), s.lox + s.cube_size - tiny)
    qy = fmin(fmax(qy, s.loy + tiny), s.loy + s.cube_size - tiny)
    qz = fmin(fmax(qz, s.loz + tiny), s.loz + s.cube_size - tiny)
    descend_point(s, qx, qy, qz, &pres, &deep)
    area = r * r * omega
    lv = 0
    cur = deep
    while cur > 0:
        cur = s.parent[cur]
        lv += 1
    side = s.cube_size / (<double>(1 << lv))
    best = deep
    best_diff = fabs(side * side - area)
    cur = s.parent[deep]
    while cur >= 0:
        lv -= 1
        side = s.cube_size / (<double>(1 << lv))
        diff = fabs(side * side - area)
        if diff < best_diff:
            best_diff = diff
            best = cur
        cur = s.parent[cur]
    da = dot3(dx, dy, dz, s.normal[3 * best], s.normal[3 * best + 1],
              s.normal[3 * best + 2])
    w = fabs(da)
    if da <= 0.0:
        out[0] = s.mean_a[3 * best] * w
        out[1] = s.mean_a[3 * best + 1] * w
        out[2] = s.mean_a[3 * best + 2] * w
    else:
        out[0] = s.mean_b[3 * best] * w
        out[1] = s.mean_b[3 * best + 1] * w
        out[2] = s.mean_b[3 * best + 2] * w


def trace_kernel(const double[:, ::1] nlo, const double[:, ::1] nhi,
                 const long[::1] left, const long[::1] right,
                 const long[::1] count, const long[::1] order,
                 const double[:, ::1] v0, const double[:, ::1] e1,
                 const double[:, ::1] e2, const double[::1] pack,
                 const long[::1] child_base, const u8[::1] child_mask,
                 const long[::1] parent,
                 const double[:, ::1] normal,
                 const double[:, ::1] mean_a, const double[:, ::1] mean_b,
                 double lox, double loy, double loz, double cube_size,
                 int resolution, int depth,
                 const double[:, ::1] origins,
                 const double[:, ::1] dirs, double omega, double ray_eps,
                 double[:, ::1] out, int nthreads):
    cdef Py_ssize_t i, n = dirs.shape[0]
    cdef Bvh b
    b.lo = &nlo[0, 0]; b.hi = &nhi[0, 0]
    b.left = &left[0]; b.right = &right[0]; b.count = &count[0]; b.order = &order[0]
    b.v0 = &v0[0, 0]; b.e1 = &e1[0, 0]; b.e2 = &e2[0, 0]
    b.pack = NULL
    b.nblk = 0
    if pack.shape[0] > 0:
        b.pack = &pack[0]
        b.nblk = pack.shape[0] // 72
    cdef Svo s
    s.child_base = &child_base[0]
    s.child_mask = &child_mask[0]
    s.parent = &parent[0]
    s.normal = &normal[0, 0]
    s.mean_a = &mean_a[0, 0]
    s.mean_b = &mean_b[0, 0]
    s.lox = lox; s.loy = loy; s.loz = loz
    s.cube_size = cube_size
    s.resolution = resolution
    s.depth = depth
    cdef const double* dp = &dirs[0, 0]
    cdef const double* op = &origins[0, 0]
    cdef double* outp = &out[0, 0]
    for i in prange(n, nogil=True, schedule="static", num_threads=nthreads):
        trace_one(&b, &s, op[3 * i], op[3 * i + 1], op[3 * i + 2],
                  dp[3 * i], dp[3 * i + 1], dp[3 * i + 2],
                  omega, ray_eps, outp + 3 * i)


# ---------------------------------------------------------------------------
# camera rays
# ---------------------------------------------------------------------------

def camera_kernel(const u64[::1] keys, const long[::1] pixels,
                  int width, int height,
                  double px, double py, double pz,
                  double fx, double fy, double fz,
                  double rx, double ry, double rz,
                  double ux, double uy, double uz,
                  double tan_half,
                  double[:, ::1] out_o, double[:, ::1] out_d, int nthreads):
    cdef Py_ssize_t i, n = keys.shape[0]
    cdef const u64* kp = &keys[0]
    cdef const long* pp = &pixels[0]
    cdef double* oo = &out_o[0, 0]
    cdef double* od = &out_d[0, 0]
    cdef double jx, jy, sx, sy, dx, dy, dz, inv, aspect
    cdef long pix
    aspect = (<double>width) / (<double>height)
    for i in prange(n, nogil=True, schedule="static", num_threads=nthreads):
        pix = pp[i]
        jx = u01(kp[i], 0)
        jy = u01(kp[i], 1)
        sx = (2.0 * ((pix % width) + jx) / width - 1.0) * tan_half * aspect
        sy = (1.0 - 2.0 * ((pix / width) + jy) / height) * tan_half
        dx = fx + sx * rx + sy * ux
        dy = fy + sx * ry + sy * uy
        dz = fz + sx * rz + sy * uz
        inv = 1.0 / sqrt(dx * dx + dy * dy + dz * dz)
        oo[3 * i] = px
        oo[3 * i + 1] = py
        oo[3 * i + 2] = pz
        od[3 * i] = dx * inv
        od[3 * i + 1] = dy * inv
        od[3 * i + 2] = dz * inv


# ---------------------------------------------------------------------------
# per-depth shading
# ---------------------------------------------------------------------------

cdef inline int upper_bound(const double* cdf, int n, double u) nogil:
    cdef int lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if cdf[mid] <= u:
            lo = mid + 1
        else:
            hi = mid
    if lo > n - 1:
        lo = n - 1
    return lo


cdef inline int invert_cdf(const double* cdf, int n, double u, double* frac) nogil:
    cdef int i = upper_bound(cdf, n, u)
    cdef double lo = cdf[i - 1] if i > 0 else 0.0
    cdef double span = cdf[i] - lo
    cdef double f = 0.0
    if span > 0.0:
        f = (u - lo) / span
    if f > 1.0 - 1e-12:
        f = 1.0 - 1e-12
    if f < 0.0:
        f = 0.0
    frac[0] = f
    return i


cdef inline void cosine_dir(double nx, double ny, double nz,
                            double u1, double u2,
                            double* ox, double* oy, double* oz) nogil:
    cdef double r = sqrt(u1)
    cdef double phi = 2.0 * PI * u2
    cdef double x = r * cos(phi)
    cdef double y = r * sin(phi)
    cdef double z = sqrt(fmax(1.0 - u1, 0.0))
    cdef double s = copysign(1.0, nz)
    cdef double a = -1.0 / (s + nz)
    cdef double b = nx * ny * a
    ox[0] = x * (1.0 + s * nx * nx * a) + y * b + z * nx
    oy[0] = x * (s * b) + y * (s + ny * ny * a) + z * ny
    oz[0] = x * (-s * nx) + y * (-ny) + z * nz


cdef struct Guide:
    int mode          # 0 off, 1 plain, 2 product
    int n
    int m
    const double* marg         # (B, n)
    const double* cond         # (B, n, n)
    const double* pdftab       # (B, n, n)
    const double* vals         # (B, n, n)
    const double* block_sums   # (B, 8, 8)
    const double* blk_marg     # (B, 8, 8, m)
    const double* blk_cond     # (B, 8, 8, m, m)
    const double* upper_dirs   # (8, 8, 3)
    double eps


cdef struct SceneArrs:
    const double* v0
    const double* e1
    const double* e2
    const double* tri_n
    const int* tri_mat
    const int* mat_kind
    const double* mat_rgb
    const double* em_cdf
    const long* em_tris
    int n_em
    double em_area
    double ray_eps


cdef inline double pdf_plain_dir(const Guide* g, int slot,
                                 double dx, double dy, double dz) nogil:
    cdef double u, v
    cdef int i, j, n = g.n
    dir_to_uv(dx, dy, dz, &u, &v)
    i = <int>(u * n)
    j = <int>(v * n)
    if i > n - 1: i = n - 1
    if j > n - 1: j = n - 1
    return g.pdftab[(slot * n + j) * n + i]


cdef inline double pdf_product_dir(const Guide* g, int slot,
                                   const double* upper, double upsum,
                                   double dx, double dy, double dz) nogil:
    cdef double u, v
    cdef int i, j, bi, bj, n = g.n
    dir_to_uv(dx, dy, dz, &u, &v)
    i = <int>(u * n)
    j = <int>(v * n)
    if i > n - 1: i = n - 1
    if j > n - 1: j = n - 1
    bi = i / g.m
    bj = j / g.m
    return (upper[bj * 8 + bi] / upsum) \
        * (g.vals[(slot * n + j) * n + i] / g.block_sums[(slot * 8 + bj) * 8 + bi]) \
        * (<double>(n * n)) / (4.0 * PI)


cdef inline void shade_one(long p, int depth, int rec_depths,
                           const Bvh* b, const SceneArrs* sa, const Guide* g,
                           double* ray_o, double* ray_d,
                           const u64* key, u64* ctr,
                           double* beta, double* radiance,
                           u8* alive, double* prev_pdf,
                           double* rec_pos, double* rec_T,
                           double* emit_le, int* emit_depth,
                           const double* hit_t, const long* hit_tri,
                           const int* bin_slot,
                           bint rr_enabled, int rr_depth) nogil:
    cdef long tri, ltri
    cdef u64 kk, c
    cdef int mid, kind, slot, bj, bi, jin, iin, gj, gi, li, n, m
    cdef double t, dx, dy, dz, posx, posy, posz
    cdef double ngx, ngy, ngz, cos_in, flip, nsx, nsy, nsz
    cdef double lex, ley, lez, w, pl, alx, aly, alz
    cdef double u1, u2, b1, su, aa, bb, lpx, lpy, lpz, lnx, lny, lnz
    cdef double delx, dely, delz, dist, dlx, dly, dlz, cos_l, cos_s
    cdef double p_cont, scale, q, u_rr, coin, s1, s2, s3, s4
    cdef double wix, wiy, wiz, cos_rel, pg, pb, pdf_mix, factor
    cdef double alb_lum, mean, cosf, val, upsum, fv, fu, uu, vv
    cdef double urow[8]
    cdef double ucdf[8]
    cdef double upper[64]
    cdef bint grazing, rr_alive, guided, blocked
    cdef Py_ssize_t rbase

    tri = hit_tri[p]
    if tri < 0:
        alive[p] = 0
        return
    t = hit_t[p]
    dx = ray_d[3 * p]; dy = ray_d[3 * p + 1]; dz = ray_d[3 * p + 2]
    posx = ray_o[3 * p] + t * dx
    posy = ray_o[3 * p + 1] + t * dy
    posz = ray_o[3 * p + 2] + t * dz
    rbase = (p * rec_depths + depth) * 3
    rec_pos[rbase] = posx
    rec_pos[rbase + 1] = posy
    rec_pos[rbase + 2] = posz
    rec_T[rbase] = beta[3 * p]
    rec_T[rbase + 1] = beta[3 * p + 1]
    rec_T[rbase + 2] = beta[3 * p + 2]
    mid = sa.tri_mat[tri]
    kind = sa.mat_kind[mid]
    ngx = sa.tri_n[3 * tri]; ngy = sa.tri_n[3 * tri + 1]; ngz = sa.tri_n[3 * tri + 2]
    cos_in = -dot3(ngx, ngy, ngz, dx, dy, dz)

    if kind == 2:  # emitter: terminal
        if cos_in > 0.0:
            lex = sa.mat_rgb[3 * mid]
            ley = sa.mat_rgb[3 * mid + 1]
            lez = sa.mat_rgb[3 * mid + 2]
        else:
            lex = 0.0; ley = 0.0; lez = 0.0
        w = 1.0
        if prev_pdf[p] >= 0.0 and cos_in > 1e-9:
            pl = t * t / (sa.em_area * cos_in)
            w = prev_pdf[p] / (prev_pdf[p] + pl)
        radiance[3 * p] += beta[3 * p] * w * lex
        radiance[3 * p + 1] += beta[3 * p + 1] * w * ley
        radiance[3 * p + 2] += beta[3 * p + 2] * w * lez
        emit_le[3 * p] = lex; emit_le[3 * p + 1] = ley; emit_le[3 * p + 2] = lez
        emit_depth[p] = depth
        alive[p] = 0
        return

    if kind == 1:  # mirror
        if cos_in == 0.0:
            alive[p] = 0
            return
        flip = 1.0 if cos_in > 0.0 else -1.0
        nsx = ngx * flip; nsy = ngy * flip; nsz = ngz * flip
        w = dot3(-dx, -dy, -dz, nsx, nsy, nsz)
        wix = 2.0 * w * nsx + dx
        wiy = 2.0 * w * nsy + dy
        wiz = 2.0 * w * nsz + dz
        beta[3 * p] *= sa.mat_rgb[3 * mid]
        beta[3 * p + 1] *= sa.mat_rgb[3 * mid + 1]
        beta[3 * p + 2] *= sa.mat_rgb[3 * mid + 2]
        ray_o[3 * p] = posx; ray_o[3 * p + 1] = posy; ray_o[3 * p + 2] = posz
        ray_d[3 * p] = wix; ray_d[3 * p + 1] = wiy; ray_d[3 * p + 2] = wiz
        prev_pdf[p] = -1.0
        return

    # lambert
    n = g.n
    m = g.m
    grazing = cos_in == 0.0
    flip = 1.0 if cos_in >= 0.0 else -1.0
    nsx = ngx * flip; nsy = ngy * flip; nsz = ngz * flip
    alx = sa.mat_rgb[3 * mid]; aly = sa.mat_rgb[3 * mid + 1]; alz = sa.mat_rgb[3 * mid + 2]
    kk = key[p]
    c = ctr[p]
    slot = bin_slot[p] if g.mode > 0 else -1
    guided = slot >= 0

    upsum = 1.0
    if guided and g.mode == 2:
        alb_lum = 0.2126 * alx + 0.7152 * aly + 0.0722 * alz
        upsum = 0.0
        for bj in range(8):
            for bi in range(8):
                mean = g.block_sums[(slot * 8 + bj) * 8 + bi] / (<double>(m * m))
                cosf = dot3(g.upper_dirs[(bj * 8 + bi) * 3],
                            g.upper_dirs[(bj * 8 + bi) * 3 + 1],
                            g.upper_dirs[(bj * 8 + bi) * 3 + 2], nsx, nsy, nsz)
                if cosf < 0.0:
                    cosf = 0.0
                val = mean * (alb_lum / PI) * cosf
                if val < g.eps:
                    val = g.eps
                upper[bj * 8 + bi] = val
                upsum += val

    # ---- next-event estimation (2 draws) ----
    u1 = u01(kk, c)
    u2 = u01(kk, c + 1)
    c += 2
    li = upper_bound(sa.em_cdf, sa.n_em, u1)
    ltri = sa.em_tris[li]
    b1 = sa.em_cdf[li - 1] if li > 0 else 0.0
    su = sa.em_cdf[li] - b1
    b1 = (u1 - b1) / su if su > 0.0 else 0.0
    if b1 > 1.0 - 1e-12:
        b1 = 1.0 - 1e-12
    if b1 < 0.0:
        b1 = 0.0
    su = sqrt(b1)
    aa = 1.0 - su
    bb = u2 * su
    lpx = sa.v0[3 * ltri] + aa * sa.e1[3 * ltri] + bb * sa.e2[3 * ltri]
    lpy = sa.v0[3 * ltri + 1] + aa * sa.e1[3 * ltri + 1] + bb * sa.e2[3 * ltri + 1]
    lpz = sa.v0[3 * ltri + 2] + aa * sa.e1[3 * ltri + 2] + bb * sa.e2[3 * ltri + 2]
    lnx = sa.tri_n[3 * ltri]; lny = sa.tri_n[3 * ltri + 1]; lnz = sa.tri_n[3 * ltri + 2]
    lex = sa.mat_rgb[3 * sa.tri_mat[ltri]]
    ley = sa.mat_rgb[3 * sa.tri_mat[ltri] + 1]
    lez = sa.mat_rgb[3 * sa.tri_mat[ltri] + 2]
    delx = lpx - posx; dely = lpy - posy; delz = lpz - posz
    dist = sqrt(delx * delx + dely * dely + delz * delz)
    if dist > 2.0 * sa.ray_eps:
        dlx = delx / dist; dly = dely / dist; dlz = delz / dist
        cos_l = -dot3(lnx, lny, lnz, dlx, dly, dlz)
        cos_s = dot3(nsx, nsy, nsz, dlx, dly, dlz)
        if cos_l > 1e-9 and cos_s > 0.0 and (not grazing) and lex + ley + lez > 0.0:
            pl = dist * dist / (sa.em_area * cos_l)
            blocked = bvh_occluded(b, posx, posy, posz, dlx, dly, dlz,
                                   sa.ray_eps, dist - sa.ray_eps)
            if not blocked:
                if guided:
                    if g.mode == 1:
                        pg = pdf_plain_dir(g, slot, dlx, dly, dlz)
                    else:
                        pg = pdf_product_dir(g, slot, upper, upsum, dlx, dly, dlz)
                    p_cont = 0.5 * pg + 0.5 * (cos_s / PI)
                else:
                    p_cont = cos_s / PI
                w = pl / (pl + p_cont)
                scale = (cos_s * w / pl) / PI
                radiance[3 * p] += beta[3 * p] * alx * scale * lex
                radiance[3 * p + 1] += beta[3 * p + 1] * aly * scale * ley
                radiance[3 * p + 2] += beta[3 * p + 2] * alz * scale * lez

    # ---- optional russian roulette ----
    rr_alive = True
    if rr_enabled and depth >= rr_depth:
        u_rr = u01(kk, c)
        c += 1
        q = beta[3 * p]
        if beta[3 * p + 1] > q: q = beta[3 * p + 1]
        if beta[3 * p + 2] > q: q = beta[3 * p + 2]
        if q > 1.0: q = 1.0
        if q < 0.05: q = 0.05
        if u_rr < q:
            beta[3 * p] /= q
            beta[3 * p + 1] /= q
            beta[3 * p + 2] /= q
        else:
            rr_alive = False

    # ---- continuation ----
    wix = 0.0; wiy = 0.0; wiz = 1.0
    if guided:
        coin = u01(kk, c)
        c += 1
        if coin < 0.5:
            if g.mode == 1:
                s1 = u01(kk, c)
                s2 = u01(kk, c + 1)
                c += 2
                gj = invert_cdf(g.marg + slot * n, n, s1, &fv)
                gi = invert_cdf(g.cond + (slot * n + gj) * n, n, s2, &fu)
                uu = (gi + fu) / n
                vv = (gj + fv) / n
                uv_to_dir(uu, vv, &wix, &wiy, &wiz)
            else:
                s1 = u01(kk, c)
                s2 = u01(kk, c + 1)
                s3 = u01(kk, c + 2)
                s4 = u01(kk, c + 3)
                c += 4
                for bj in range(8):
                    urow[bj] = 0.0
                    for bi in range(8):
                        urow[bj] += upper[bj * 8 + bi]
                ucdf[0] = urow[0] / upsum
                for bj in range(1, 8):
                    ucdf[bj] = ucdf[bj - 1] + urow[bj] / upsum
                bj = invert_cdf(ucdf, 8, s1, &fv)
                ucdf[0] = upper[bj * 8] / urow[bj]
                for bi in range(1, 8):
                    ucdf[bi] = ucdf[bi - 1] + upper[bj * 8 + bi] / urow[bj]
                bi = invert_cdf(ucdf, 8, s2, &fu)
                jin = invert_cdf(g.blk_marg + ((slot * 8 + bj) * 8 + bi) * m,
                                 m, s3, &fv)
                iin = invert_cdf(g.blk_cond + (((slot * 8 + bj) * 8 + bi) * m + jin) * m,
                                 m, s4, &fu)
                gj = bj * m + jin
                gi = bi * m + iin
                uu = (gi + fu) / n
                vv = (gj + fv) / n
                uv_to_dir(uu, vv, &wix, &wiy, &wiz)
        else:
            s1 = u01(kk, c)
            s2 = u01(kk, c + 1)
            c += 2
            cosine_dir(nsx, nsy, nsz, s1, s2, &wix, &wiy, &wiz)
        cos_rel = dot3(wix, wiy, wiz, nsx, nsy, nsz)
        if g.mode == 1:
            pg = pdf_plain_dir(g, slot, wix, wiy, wiz)
        else:
            pg = pdf_product_dir(g, slot, upper, upsum, wix, wiy, wiz)
        pb = fmax(cos_rel, 0.0) / PI
        pdf_mix = 0.5 * pg + 0.5 * pb
    else:
        s1 = u01(kk, c)
        s2 = u01(kk, c + 1)
        c += 2
        cosine_dir(nsx, nsy, nsz, s1, s2, &wix, &wiy, &wiz)
        cos_rel = dot3(wix, wiy, wiz, nsx, nsy, nsz)
        pdf_mix = fmax(cos_rel, 0.0) / PI

    if rr_alive and cos_rel > 0.0 and pdf_mix > 0.0 and not grazing:
        factor = (cos_rel / pdf_mix) / PI
        beta[3 * p] *= alx * factor
        beta[3 * p + 1] *= aly * factor
        beta[3 * p + 2] *= alz * factor
        alive[p] = 1 if (beta[3 * p] > 0.0 or beta[3 * p + 1] > 0.0
                         or beta[3 * p + 2] > 0.0) else 0
    else:
        beta[3 * p] = 0.0; beta[3 * p + 1] = 0.0; beta[3 * p + 2] = 0.0
        alive[p] = 0
    ray_o[3 * p] = posx; ray_o[3 * p + 1] = posy; ray_o[3 * p + 2] = posz
    ray_d[3 * p] = wix; ray_d[3 * p + 1] = wiy; ray_d[3 * p + 2] = wiz
    prev_pdf[p] = pdf_mix
    ctr[p] = c


def shade_kernel(const long[::1] active, int depth, int rec_depths,
                 double[:, ::1] ray_o, double[:, ::1] ray_d,
                 const u64[::1] key, u64[::1] ctr,
                 double[:, ::1] beta, double[:, ::1] radiance,
                 u8[::1] alive, double[::1] prev_pdf,
                 double[:, :, ::1] rec_pos, double[:, :, ::1] rec_T,
                 double[:, ::1] emit_le, int[::1] emit_depth,
                 const double[::1] hit_t, const long[::1] hit_tri,
                 const double[:, ::1] v0, const double[:, ::1] e1,
                 const double[:, ::1] e2, const double[::1] pack,
                 const double[:, ::1] tri_n,
                 const int[::1] tri_mat,
                 const int[::1] mat_kind, const double[:, ::1] mat_rgb,
                 const double[::1] em_cdf, const long[::1] em_tris,
                 double em_area,
                 const double[:, ::1] nlo, const double[:, ::1] nhi,
                 const long[::1] bleft, const long[::1] bright,
                 const long[::1] bcount, const long[::1] border,
                 double ray_eps,
                 int gmode, int gn, int gblock,
                 const double[:, ::1] gmarg, const double[:, :, ::1] gcond,
                 const double[:, :, ::1] gpdftab, const double[:, :, ::1] gvals,
                 const double[:, :, ::1] gblock_sums,
                 const double[:, :, :, ::1] gblk_marg,
                 const double[:, :, :, :, ::1] gblk_cond,
                 const double[:, :, ::1] gupper_dirs,
                 double geps,
                 const int[::1] bin_slot,
                 bint rr_enabled, int rr_depth,
                 int nthreads):
    cdef Py_ssize_t idx, n_act = active.shape[0]
    cdef Bvh b
    b.lo = &nlo[0, 0]; b.hi = &nhi[0, 0]
    b.left = &bleft[0]; b.right = &bright[0]; b.count = &bcount[0]
    b.order = &border[0]
    b.v0 = &v0[0, 0]; b.e1 = &e1[0, 0]; b.e2 = &e2[0, 0]
    b.pack = NULL
    b.nblk = 0
    if pack.shape[0] > 0:
        b.pack = &pack[0]
        b.nblk = pack.shape[0] // 72
    cdef SceneArrs sa
    sa.v0 = &v0[0, 0]; sa.e1 = &e1[0, 0]; sa.e2 = &e2[0, 0]
    sa.tri_n = &tri_n[0, 0]
    sa.tri_mat = &tri_mat[0]
    sa.mat_kind = &mat_kind[0]
    sa.mat_rgb = &mat_rgb[0, 0]
    sa.em_cdf = &em_cdf[0]
    sa.em_tris = &em_tris[0]
    sa.n_em = <int>em_cdf.shape[0]
    sa.em_area = em_area
    sa.ray_eps = ray_eps
    cdef Guide g
    g.mode = gmode
    g.n = gn
    g.m = gblock
    g.eps = geps
    g.marg = NULL; g.cond = NULL; g.pdftab = NULL; g.vals = NULL
    g.block_sums = NULL; g.blk_marg = NULL; g.blk_cond = NULL; g.upper_dirs = NULL
    if gmode > 0:
        g.marg = &gmarg[0, 0]
        g.cond = &gcond[0, 0, 0]
        g.pdftab = &gpdftab[0, 0, 0]
        g.vals = &gvals[0, 0, 0]
        g.upper_dirs = &gupper_dirs[0, 0, 0]
        if gmode == 2:
            g.block_sums = &gblock_sums[0, 0, 0]
            g.blk_marg = &gblk_marg[0, 0, 0, 0]
            g.blk_cond = &gblk_cond[0, 0, 0, 0, 0]
    cdef const long* actp = &active[0]
    cdef double* rayop = &ray_o[0, 0]
    cdef double* raydp = &ray_d[0, 0]
    cdef const u64* keyp = &key[0]
    cdef u64* ctrp = &ctr[0]
    cdef double* betap = &beta[0, 0]
    cdef double* radp = &radiance[0, 0]
    cdef u8* alivep = &alive[0]
    cdef double* ppdfp = &prev_pdf[0]
    cdef double* rposp = &rec_pos[0, 0, 0]
    cdef double* rtp = &rec_T[0, 0, 0]
    cdef double* elep = &emit_le[0, 0]
    cdef int* edp = &emit_depth[0]
    cdef const double* htp = &hit_t[0]
    cdef const long* htrip = &hit_tri[0]
    cdef const int* slotp = &bin_slot[0]
    for idx in prange(n_act, nogil=True, schedule="static", num_threads=nthreads):
        shade_one(actp[idx], depth, rec_depths, &b, &sa, &g,
                  rayop, raydp, keyp, ctrp, betap, radp, alivep, ppdfp,
                  rposp, rtp, elep, edp, htp, htrip, slotp,
                  rr_enabled, rr_depth)
