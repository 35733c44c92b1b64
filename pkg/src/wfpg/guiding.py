"""Per-bin radiance fields and the distributions sampled from them.

A field is an NxN grid of incoming-radiance luminance over the equal-area
octahedral layout, generated by cone tracing the exitance cache from a bin's
origin, blurred, and floored at a small epsilon so the guiding pdf stays
strictly positive everywhere (the unbiasedness requirement).  Distributions
are piecewise-constant 2D functions sampled by inverse CDF; the product
variant multiplies an 8x8 subsampled layer by the BSDF and refines inside
the chosen block.
"""

import numpy as np

from . import backend, core, scene as scene_mod

# initial / floor value of the radiance field
EPSILON_FLOOR = 1e-2

UPPER_RES = 8

# cell-center directions of the 8x8 upper product layer (shared by all bins)
_uc = (np.arange(UPPER_RES) + 0.5) / UPPER_RES
_UG_U, _UG_V = np.meshgrid(_uc, _uc, indexing="xy")
UPPER_DIRS = core.octa_uv_to_dir(_UG_U, _UG_V)  # [row=v, col=u, 3]


class RadianceField:
    __slots__ = ("values", "resolution", "origin", "jitter_uv")

    def __init__(self, values, origin, jitter_uv=(0.5, 0.5)):
        self.values = np.asarray(values, dtype=np.float64)
        self.resolution = self.values.shape[0]
        self.origin = np.asarray(origin, dtype=np.float64)
        self.jitter_uv = jitter_uv


class GuidingDistribution:
    """Marginal CDF over rows plus per-row conditional CDFs.

    ``pdf_table[j, i]`` is the solid-angle density of cell (row j, col i):
    value * N^2 / (total * 4 pi).
    """

    __slots__ = ("field", "marginal_cdf", "conditional_cdf", "pdf_table", "total")

    def __init__(self, field):
        vals = field.values
        n = field.resolution
        row_sums = vals.sum(axis=1)
        total = float(row_sums.sum())
        if total <= 0.0:
            raise ValueError("field has no mass; the epsilon floor should prevent this")
        self.field = field
        self.total = total
        self.marginal_cdf = np.cumsum(row_sums) / total
        self.conditional_cdf = np.cumsum(vals, axis=1) / row_sums[:, None]
        self.pdf_table = vals * (n * n / (total * 4.0 * np.pi))


def select_origin(bin_positions, rng):
    """Uniformly pick one member hit position as the field origin."""
    k = min(int(rng.next() * len(bin_positions)), len(bin_positions) - 1)
    return np.asarray(bin_positions[k], dtype=np.float64)


def field_cell_directions(n, jitter_uv):
    ju, jv = jitter_uv
    us = (np.arange(n) + ju) / n
    vs = (np.arange(n) + jv) / n
    gu, gv = np.meshgrid(us, vs, indexing="xy")
    return core.octa_uv_to_dir(gu, gv)  # [row=v, col=u, 3]


def generate_field(svo, scene, origin, n, rng=None, jitter=True, blur_sigma=1.0,
                   epsilon=EPSILON_FLOOR):
    """Cone trace one incoming-radiance field of resolution n at ``origin``.

    Each cell traces a cone of solid angle 4*pi/n^2 through the cell center
    (optionally jittered by one shared sub-cell offset per field), the
    luminance image is Gaussian-blurred, and the result is clamped from
    below at ``epsilon``.
    """
    if jitter:
        if rng is None:
            raise ValueError("jitter requires an rng stream")
        ju, jv = rng.next(), rng.next()
    else:
        ju = jv = 0.5
    dirs = field_cell_directions(n, (ju, jv)).reshape(-1, 3)
    omega = 4.0 * np.pi / (n * n)
    rgb = backend.get().trace_cones(svo, scene, origin, dirs, omega)
    vals = core.luminance(rgb).reshape(n, n)
    if blur_sigma > 0.0:
        vals = core.gaussian_blur(vals, blur_sigma)
    vals = np.maximum(vals, epsilon)
    return RadianceField(vals, origin, (ju, jv))


def build_distribution(field):
    return GuidingDistribution(field)


def _invert_cdf(cdf, u):
    """Index and in-bin residual for one inverse-CDF lookup."""
    i = min(int(np.searchsorted(cdf, u, side="right")), len(cdf) - 1)
    lo = cdf[i - 1] if i > 0 else 0.0
    span = cdf[i] - lo
    frac = (u - lo) / span if span > 0 else 0.0
    return i, min(frac, 1.0 - 1e-12)


def sample_guided(dist, u1, u2):
    """Inverse-CDF sample; returns (direction, pdf).

    The residuals of u1/u2 place the sample uniformly inside the chosen
    cell; the returned pdf is pdf_guided evaluated at the returned
    direction, so sampler and density are consistent by construction.
    """
    n = dist.field.resolution
    j, fv = _invert_cdf(dist.marginal_cdf, u1)
    i, fu = _invert_cdf(dist.conditional_cdf[j], u2)
    u = (i + fu) / n
    v = (j + fv) / n
    d = core.octa_uv_to_dir(u, v)
    return d, pdf_guided(dist, d)


def pdf_guided(dist, direction):
    """Solid-angle pdf of sample_guided; strictly positive everywhere."""
    n = dist.field.resolution
    u, v = core.octa_dir_to_uv(np.asarray(direction, dtype=np.float64))
    i = min(int(u * n), n - 1)
    j = min(int(v * n), n - 1)
    return float(dist.pdf_table[j, i])


# ---------------------------------------------------------------------------
# Product guiding: 8x8 upper layer = box-averaged field x BSDF, refined by a
# second sampling stage inside the selected (N/8)^2 block of raw field
# values.
# ---------------------------------------------------------------------------

class ProductHierarchy:
    __slots__ = ("field", "upper", "upper_cdf_marg", "upper_cdf_cond",
                 "block", "block_sums", "upper_sum")

    def __init__(self, field, upper):
        n = field.resolution
        m = n // UPPER_RES
        self.field = field
        self.block = m
        vals = field.values
        blocks = vals.reshape(UPPER_RES, m, UPPER_RES, m)
        self.block_sums = blocks.sum(axis=(1, 3))
        self.upper = upper
        self.upper_sum = float(upper.sum())
        row = upper.sum(axis=1)
        self.upper_cdf_marg = np.cumsum(row) / row.sum()
        self.upper_cdf_cond = np.cumsum(upper, axis=1) / row[:, None]


def bsdf_product_factor(material, wo, normal, directions):
    """f_s(wo, d) * max(cos, 0) as a luminance scalar for each direction."""
    if material.kind != scene_mod.LAMBERT:
        raise ValueError("product guiding requires a non-delta material")
    lum = float(core.luminance(material.rgb)) / np.pi
    cos = np.maximum(np.einsum("...j,j->...", directions, normal), 0.0)
    return lum * cos


def build_product(field, material, wo, normal, epsilon=EPSILON_FLOOR):
    """Two-layer product hierarchy for a non-delta material."""
    n = field.resolution
    if n < UPPER_RES:
        raise ValueError("field resolution below the upper-layer resolution")
    m = n // UPPER_RES
    means = field.values.reshape(UPPER_RES, m, UPPER_RES, m).mean(axis=(1, 3))
    factor = bsdf_product_factor(material, wo, np.asarray(normal, dtype=np.float64),
                                 UPPER_DIRS)
    upper = np.maximum(means * factor, epsilon)
    return ProductHierarchy(field, upper)


def sample_product(hier, u1, u2, u3, u4):
    """Two-stage inverse-CDF sample from the product hierarchy.

    Stage 1 picks an upper cell from the 8x8 product layer; stage 2 refines
    within that cell's (N/8)x(N/8) block of raw field values.  Returns
    (direction, pdf).
    """
    n = hier.field.resolution
    m = hier.block
    bj, _ = _invert_cdf(hier.upper_cdf_marg, u1)
    bi, _ = _invert_cdf(hier.upper_cdf_cond[bj], u2)
    block = hier.field.values[bj * m : (bj + 1) * m, bi * m : (bi + 1) * m]
    rows = block.sum(axis=1)
    row_cdf = np.cumsum(rows) / rows.sum()
    j, fv = _invert_cdf(row_cdf, u3)
    col_cdf = np.cumsum(block[j]) / rows[j]
    i, fu = _invert_cdf(col_cdf, u4)
    gj = bj * m + j
    gi = bi * m + i
    u = (gi + fu) / n
    v = (gj + fv) / n
    d = core.octa_uv_to_dir(u, v)
    return d, pdf_product(hier, d)


def pdf_product_cell(hier, j, i):
    m = hier.block
    bj, bi = j // m, i // m
    p_upper = hier.upper[bj, bi] / hier.upper_sum
    p_cell = hier.field.values[j, i] / hier.block_sums[bj, bi]
    n = hier.field.resolution
    return float(p_upper * p_cell * (n * n) / (4.0 * np.pi))


def pdf_product(hier, direction):
    n = hier.field.resolution
    u, v = core.octa_dir_to_uv(np.asarray(direction, dtype=np.float64))
    i = min(int(u * n), n - 1)
    j = min(int(v * n), n - 1)
    return pdf_product_cell(hier, j, i)


# ---------------------------------------------------------------------------
# Flat per-depth tables consumed by the shading kernels.  One slot per bin;
# each guided path carries its slot index.
# ---------------------------------------------------------------------------

def generate_fields_batch(svo, scene, origins, n, jitters, blur_sigma=1.0,
                          epsilon=EPSILON_FLOOR):
    """Cone trace one field per origin in a single kernel pass.

    ``origins`` is (B, 3) and ``jitters`` (B, 2); returns values (B, n, n).
    Semantics per field match :func:`generate_field`.
    """
    b = len(origins)
    base_u = np.arange(n) / n
    us = base_u[None, :] + jitters[:, 0:1] / n          # (B, n)
    vs = base_u[None, :] + jitters[:, 1:2] / n
    gu = np.repeat(us[:, None, :], n, axis=1)           # (B, row, col) u varies by col
    gv = np.repeat(vs[:, :, None], n, axis=2)
    dirs = core.octa_uv_to_dir(gu, gv).reshape(-1, 3)
    org = np.repeat(origins, n * n, axis=0)
    omega = 4.0 * np.pi / (n * n)
    rgb = backend.get().trace_cones_multi(svo, scene, org, dirs, omega)
    vals = core.luminance(rgb).reshape(b, n, n)
    if blur_sigma > 0.0:
        vals = core.gaussian_blur(vals, blur_sigma)
    return np.maximum(vals, epsilon)


class GuideTables:
    __slots__ = ("mode", "n", "block", "marg", "cond", "pdftab", "vals",
                 "block_sums", "blk_marg", "blk_cond", "upper_dirs", "epsilon")

    def __init__(self, mode, n, n_bins):
        self.mode = mode  # 1 = plain, 2 = product
        self.n = n
        m = n // UPPER_RES
        self.block = m
        self.marg = np.zeros((n_bins, n))
        self.cond = np.zeros((n_bins, n, n))
        self.pdftab = np.zeros((n_bins, n, n))
        self.vals = np.zeros((n_bins, n, n))
        if mode == 2:
            self.block_sums = np.zeros((n_bins, UPPER_RES, UPPER_RES))
            self.blk_marg = np.zeros((n_bins, UPPER_RES, UPPER_RES, m))
            self.blk_cond = np.zeros((n_bins, UPPER_RES, UPPER_RES, m, m))
        else:
            self.block_sums = np.zeros((0, UPPER_RES, UPPER_RES))
            self.blk_marg = np.zeros((0, UPPER_RES, UPPER_RES, m))
            self.blk_cond = np.zeros((0, UPPER_RES, UPPER_RES, m, m))
        self.upper_dirs = UPPER_DIRS
        self.epsilon = EPSILON_FLOOR

    def fill_slot(self, slot, dist):
        field = dist.field
        self.marg[slot] = dist.marginal_cdf
        self.cond[slot] = dist.conditional_cdf
        self.pdftab[slot] = dist.pdf_table
        self.vals[slot] = field.values
        if self.mode == 2:
            m = self.block
            blocks = field.values.reshape(UPPER_RES, m, UPPER_RES, m).transpose(0, 2, 1, 3)
            sums = blocks.sum(axis=(2, 3))
            self.block_sums[slot] = sums
            rows = blocks.sum(axis=3)
            self.blk_marg[slot] = np.cumsum(rows, axis=2) / sums[..., None]
            self.blk_cond[slot] = np.cumsum(blocks, axis=3) / rows[..., None]

    def fill_batch(self, values):
        """Vectorized fill of all slots from stacked field values (B, n, n)."""
        n = self.n
        row_sums = values.sum(axis=2)
        totals = row_sums.sum(axis=1)
        self.marg[:] = np.cumsum(row_sums, axis=1) / totals[:, None]
        self.cond[:] = np.cumsum(values, axis=2) / row_sums[:, :, None]
        self.pdftab[:] = values * (n * n / (4.0 * np.pi)) / totals[:, None, None]
        self.vals[:] = values
        if self.mode == 2:
            m = self.block
            blocks = values.reshape(-1, UPPER_RES, m, UPPER_RES, m).transpose(0, 1, 3, 2, 4)
            sums = blocks.sum(axis=(3, 4))
            self.block_sums[:] = sums
            rows = blocks.sum(axis=4)
            self.blk_marg[:] = np.cumsum(rows, axis=3) / sums[..., None]
            self.blk_cond[:] = np.cumsum(blocks, axis=4) / rows[..., None]
