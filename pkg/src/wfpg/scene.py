"""Scene ingestion and light-transport sampling primitives.

A scene is a single ``wfpg-scene v1`` text file declaring the camera,
materials, and OBJ mesh references (see docs/scene-format.md).  Meshes carry
positions and triangular faces only; geometric normals are recomputed from
the winding.  Emitters are one-sided: they radiate from the side their
authored normal points toward.
"""

import math
import os

import numpy as np

from . import bvh as _bvh
from . import backend

LAMBERT, MIRROR, EMITTER = 0, 1, 2
_KIND_NAMES = {"lambert": LAMBERT, "mirror": MIRROR, "emitter": EMITTER}

# Minimum hit distance, expressed as a fraction of the scene diagonal.
RAY_EPS_FRACTION = 1e-4


class SceneError(Exception):
    pass


class Camera:
    def __init__(self, position, target, up, vfov_deg, width, height):
        self.position = np.asarray(position, dtype=np.float64)
        self.target = np.asarray(target, dtype=np.float64)
        self.up = np.asarray(up, dtype=np.float64)
        self.vfov_deg = float(vfov_deg)
        self.width = int(width)
        self.height = int(height)
        fwd = self.target - self.position
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, self.up)
        right /= np.linalg.norm(right)
        self.forward = fwd
        self.right = right
        self.up_ortho = np.cross(right, fwd)
        self.tan_half = math.tan(math.radians(self.vfov_deg) * 0.5)

    def ray_directions(self, px, py, jx, jy):
        """Directions through pixel (px, py) at sub-pixel offset (jx, jy).

        Pixel (0, 0) is the top-left of the image.
        """
        px = np.asarray(px, dtype=np.float64)
        py = np.asarray(py, dtype=np.float64)
        aspect = self.width / self.height
        sx = (2.0 * (px + jx) / self.width - 1.0) * self.tan_half * aspect
        sy = (1.0 - 2.0 * (py + jy) / self.height) * self.tan_half
        d = (
            self.forward[None, :]
            + sx[..., None] * self.right[None, :]
            + sy[..., None] * self.up_ortho[None, :]
        )
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


class Material:
    __slots__ = ("name", "kind", "rgb")

    def __init__(self, name, kind, rgb):
        self.name = name
        self.kind = kind
        self.rgb = np.asarray(rgb, dtype=np.float64)


class Hit:
    __slots__ = ("position", "normal", "t", "material_id", "triangle_id")

    def __init__(self, position, normal, t, material_id, triangle_id):
        self.position = position
        self.normal = normal
        self.t = t
        self.material_id = material_id
        self.triangle_id = triangle_id


class Scene:
    def __init__(self, v0, v1, v2, mat_ids, materials, camera):
        self.v0 = v0
        self.v1 = v1
        self.v2 = v2
        self.e1 = v1 - v0
        self.e2 = v2 - v0
        n = np.cross(self.e1, self.e2)
        area2 = np.linalg.norm(n, axis=1)
        if np.any(area2 <= 0):
            raise SceneError("degenerate triangle in mesh")
        self.normals = n / area2[:, None]
        self.areas = 0.5 * area2
        self.mat_ids = mat_ids
        self.materials = materials
        self.camera = camera

        self.mat_kind = np.array([m.kind for m in materials], dtype=np.int32)
        self.mat_rgb = np.stack([m.rgb for m in materials])

        lo = np.minimum(np.minimum(v0, v1), v2).min(axis=0)
        hi = np.maximum(np.maximum(v0, v1), v2).max(axis=0)
        self.bbox_lo = lo
        self.bbox_hi = hi
        self.diagonal = float(np.linalg.norm(hi - lo))
        self.ray_eps = RAY_EPS_FRACTION * self.diagonal

        # SoA blocks of 8 triangles for the vectorized small-scene
        # intersector; the padding lanes hold degenerate triangles
        nblk = (len(v0) + 7) // 8
        pack = np.zeros((nblk, 9, 8))
        for k, arr in enumerate([v0[:, 0], v0[:, 1], v0[:, 2],
                                 self.e1[:, 0], self.e1[:, 1], self.e1[:, 2],
                                 self.e2[:, 0], self.e2[:, 1], self.e2[:, 2]]):
            padded = np.zeros(nblk * 8)
            padded[: len(v0)] = arr
            pack[:, k, :] = padded.reshape(nblk, 8)
        self.tri_pack = np.ascontiguousarray(pack.reshape(-1))

        em = np.nonzero(self.mat_kind[mat_ids] == EMITTER)[0]
        if len(em) == 0:
            raise SceneError("scene declares no emitter")
        self.emitter_tris = em.astype(np.int64)
        em_areas = self.areas[em]
        self.emitter_area = float(em_areas.sum())
        self.emitter_cdf = np.cumsum(em_areas) / self.emitter_area

        self.bvh = _bvh.build(v0, v1, v2)

    @property
    def triangle_count(self):
        return len(self.v0)

    def intersect_batch(self, origins, dirs, t_min=None):
        """Nearest hits for a batch of rays: returns (t, triangle_id).

        Misses have triangle_id == -1 and t == inf.
        """
        if t_min is None:
            t_min = self.ray_eps
        return backend.get().intersect_rays(self, origins, dirs, t_min)

    def occluded_batch(self, origins, dirs, t_max, t_min=None):
        if t_min is None:
            t_min = self.ray_eps
        return backend.get().occluded_rays(self, origins, dirs, t_min, t_max)


def intersect(scene, origin, direction, t_min=None):
    """Single-ray nearest hit; returns a Hit or None on miss."""
    o = np.asarray(origin, dtype=np.float64)[None, :]
    d = np.asarray(direction, dtype=np.float64)[None, :]
    t, tri = scene.intersect_batch(o, d, t_min)
    if tri[0] < 0:
        return None
    tid = int(tri[0])
    return Hit(o[0] + t[0] * d[0], scene.normals[tid], float(t[0]),
               int(scene.mat_ids[tid]), tid)


# ---------------------------------------------------------------------------
# BSDF evaluation and sampling
# ---------------------------------------------------------------------------

def build_onb(n):
    """Tangent frame (t1, t2) for normals n of shape (..., 3)."""
    n = np.asarray(n, dtype=np.float64)
    s = np.copysign(1.0, n[..., 2])
    a = -1.0 / (s + n[..., 2])
    b = n[..., 0] * n[..., 1] * a
    t1 = np.stack([1.0 + s * n[..., 0] ** 2 * a, s * b, -s * n[..., 0]], axis=-1)
    t2 = np.stack([b, s + n[..., 1] ** 2 * a, -n[..., 1]], axis=-1)
    return t1, t2


def sample_cosine(n, u1, u2):
    """Cosine-weighted direction about n; pdf = cos(theta)/pi."""
    u1 = np.asarray(u1, dtype=np.float64)
    u2 = np.asarray(u2, dtype=np.float64)
    r = np.sqrt(u1)
    phi = 2.0 * np.pi * u2
    x = r * np.cos(phi)
    y = r * np.sin(phi)
    z = np.sqrt(np.maximum(1.0 - u1, 0.0))
    t1, t2 = build_onb(n)
    d = x[..., None] * t1 + y[..., None] * t2 + z[..., None] * np.asarray(n)
    return d


def reflect(wo, n):
    """Mirror direction of incoming wo about n (wo points away from surface)."""
    wo = np.asarray(wo, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return 2.0 * np.sum(wo * n, axis=-1, keepdims=True) * n - wo


def sample_bsdf(material, wo, normal, u1, u2):
    """Sample a continuation direction.

    Returns (wi, pdf, f, is_delta).  Lambert: cosine-weighted, pdf =
    cos/pi, f = albedo/pi.  Mirror: deterministic reflection with pdf
    reported as 0 and is_delta True; f folds the reflectance and implicit
    delta so that f * cos / "pdf" is realized as plain reflectance by the
    caller.  Emitters reflect nothing.
    """
    wo = np.asarray(wo, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    if material.kind == LAMBERT:
        wi = sample_cosine(n, u1, u2)
        cos = max(float(np.dot(wi, n)), 0.0)
        return wi, cos / np.pi, material.rgb / np.pi, False
    if material.kind == MIRROR:
        wi = reflect(wo, n)
        return wi, 0.0, material.rgb.copy(), True
    return None, 0.0, np.zeros(3), False


def pdf_bsdf(material, wo, wi, normal):
    """Solid-angle density of sample_bsdf; 0 for delta materials."""
    if material.kind != LAMBERT:
        return 0.0
    cos = float(np.dot(np.asarray(wi, dtype=np.float64), np.asarray(normal)))
    return max(cos, 0.0) / np.pi


def eval_bsdf(material, wo, wi, normal):
    if material.kind != LAMBERT:
        return np.zeros(3)
    if np.dot(wi, normal) <= 0.0 or np.dot(wo, normal) <= 0.0:
        return np.zeros(3)
    return material.rgb / np.pi


# ---------------------------------------------------------------------------
# Next-event estimation
# ---------------------------------------------------------------------------

def sample_emitter_points(scene, u1, u2):
    """Uniform-by-area points on the emitters.

    Returns (point, normal, radiance, tri).  u1 selects the triangle through
    the area CDF and is rescaled for the barycentric draw, so two uniforms
    drive the whole sample.
    """
    u1 = np.atleast_1d(np.asarray(u1, dtype=np.float64))
    u2 = np.atleast_1d(np.asarray(u2, dtype=np.float64))
    cdf = scene.emitter_cdf
    k = np.minimum(np.searchsorted(cdf, u1, side="right"), len(cdf) - 1)
    lo = np.where(k > 0, cdf[k - 1], 0.0)
    span = cdf[k] - lo
    b1 = np.where(span > 0, (u1 - lo) / np.where(span > 0, span, 1.0), 0.0)
    b1 = np.clip(b1, 0.0, 1.0 - 1e-12)
    tri = scene.emitter_tris[k]
    # uniform barycentric via the square-root warp
    su = np.sqrt(b1)
    a = 1.0 - su
    b = u2 * su
    p = (scene.v0[tri] * (1.0 - a - b)[:, None]
         + scene.v1[tri] * a[:, None]
         + scene.v2[tri] * b[:, None])
    n = scene.normals[tri]
    rad = scene.mat_rgb[scene.mat_ids[tri]]
    return p, n, rad, tri


def sample_nee(scene, point, u1, u2):
    """One light sample for a shading point.

    Returns (direction, distance, pdf_solid_angle, radiance, shadow_origin).
    pdf converts the uniform-area density through distance^2 / cos(theta_l);
    samples facing the emitter's back report pdf 0 and zero radiance.  The
    caller is responsible for tracing the visibility ray.
    """
    point = np.asarray(point, dtype=np.float64)
    lp, ln, rad, _ = sample_emitter_points(scene, u1, u2)
    lp, ln, rad = lp[0], ln[0], rad[0]
    delta = lp - point
    dist = float(np.linalg.norm(delta))
    if dist <= 0.0:
        return np.zeros(3), 0.0, 0.0, np.zeros(3), point
    d = delta / dist
    cos_l = float(np.dot(ln, -d))
    if cos_l <= 1e-9:
        return d, dist, 0.0, np.zeros(3), point
    pdf = dist * dist / (scene.emitter_area * cos_l)
    return d, dist, pdf, rad, point


def pdf_nee(scene, point, light_point, light_normal):
    """Solid-angle density with which sample_nee generates light_point."""
    delta = np.asarray(light_point) - np.asarray(point)
    dist2 = float(np.dot(delta, delta))
    dist = math.sqrt(dist2)
    cos_l = float(np.dot(light_normal, -delta / dist))
    if cos_l <= 1e-9:
        return 0.0
    return dist2 / (scene.emitter_area * cos_l)


# ---------------------------------------------------------------------------
# Scene file parsing
# ---------------------------------------------------------------------------

def _parse_obj(path):
    verts = []
    faces = []
    try:
        with open(path, "r") as fh:
            for ln, line in enumerate(fh, 1):
                parts = line.split()
                if not parts or parts[0].startswith("#"):
                    continue
                if parts[0] == "v":
                    if len(parts) < 4:
                        raise SceneError(f"{path}:{ln}: vertex needs 3 coords")
                    verts.append([float(x) for x in parts[1:4]])
                elif parts[0] == "f":
                    idx = [int(p.split("/")[0]) for p in parts[1:]]
                    if len(idx) != 3:
                        raise SceneError(f"{path}:{ln}: faces must be triangles")
                    faces.append(idx)
                # other OBJ statements (vn, vt, o, g, s, usemtl) are ignored
    except OSError as e:
        raise SceneError(f"cannot read mesh file {path}: {e}") from e
    if not verts or not faces:
        raise SceneError(f"{path}: no geometry")
    v = np.asarray(verts, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise SceneError(f"{path}: non-finite vertex coordinate")
    f = np.asarray(faces, dtype=np.int64)
    f = np.where(f > 0, f - 1, len(verts) + f)
    if f.min() < 0 or f.max() >= len(verts):
        raise SceneError(f"{path}: face index out of range")
    return v, f


def load_scene(path):
    """Load a ``wfpg-scene v1`` description into a Scene."""
    base = os.path.dirname(os.path.abspath(path))
    try:
        with open(path, "r") as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise SceneError(f"cannot read scene file {path}: {e}") from e
    if not lines or lines[0].strip() != "wfpg-scene v1":
        raise SceneError(f"{path}: missing 'wfpg-scene v1' header")

    camera = None
    materials = []
    mat_index = {}
    tri_v0, tri_v1, tri_v2, tri_mat = [], [], [], []

    for ln, raw in enumerate(lines[1:], 2):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kw = parts[0]
        try:
            if kw == "camera":
                if len(parts) != 13:
                    raise SceneError(f"{path}:{ln}: camera needs 12 values")
                vals = [float(x) for x in parts[1:11]]
                camera = Camera(vals[0:3], vals[3:6], vals[6:9], vals[9],
                                int(parts[11]), int(parts[12]))
            elif kw == "material":
                name, kind = parts[1], parts[2]
                if kind not in _KIND_NAMES:
                    raise SceneError(f"{path}:{ln}: unknown material kind '{kind}'")
                rgb = np.array([float(x) for x in parts[3:6]])
                if len(parts) != 6:
                    raise SceneError(f"{path}:{ln}: material needs 3 color values")
                if not np.all(np.isfinite(rgb)) or np.any(rgb < 0):
                    raise SceneError(f"{path}:{ln}: material color must be finite and >= 0")
                if kind == "lambert" and np.any(rgb > 1.0):
                    raise SceneError(f"{path}:{ln}: lambert albedo must be <= 1")
                if name in mat_index:
                    raise SceneError(f"{path}:{ln}: duplicate material '{name}'")
                mat_index[name] = len(materials)
                materials.append(Material(name, _KIND_NAMES[kind], rgb))
            elif kw == "mesh":
                if len(parts) != 3:
                    raise SceneError(f"{path}:{ln}: mesh needs a path and a material")
                mesh_path, mat_name = parts[1], parts[2]
                if mat_name not in mat_index:
                    raise SceneError(f"{path}:{ln}: unknown material '{mat_name}'")
                v, f = _parse_obj(os.path.join(base, mesh_path))
                tri_v0.append(v[f[:, 0]])
                tri_v1.append(v[f[:, 1]])
                tri_v2.append(v[f[:, 2]])
                tri_mat.append(np.full(len(f), mat_index[mat_name], dtype=np.int32))
            else:
                raise SceneError(f"{path}:{ln}: unknown keyword '{kw}'")
        except (ValueError, IndexError) as e:
            raise SceneError(f"{path}:{ln}: parse failure: {e}") from e

    if camera is None:
        raise SceneError(f"{path}: no camera declared")
    if not tri_v0:
        raise SceneError(f"{path}: no meshes declared")
    return Scene(
        np.concatenate(tri_v0),
        np.concatenate(tri_v1),
        np.concatenate(tri_v2),
        np.concatenate(tri_mat),
        materials,
        camera,
    )
