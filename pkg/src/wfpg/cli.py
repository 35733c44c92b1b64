"""Command-line front end.

Wires a scene, a render mode (pt / wfpg / wfpg-product), the guiding knobs,
and the accumulation heuristic into a reproducible run, writes PFM + PNG
outputs, and optionally reports error metrics against a reference image or
dumps debug artifacts (bin false-color image, per-pixel radiance fields).
"""

import argparse
import json
import os
import sys

import numpy as np

from . import accumulation, backend, core, guiding, imageio
from . import scene as scene_mod
from . import svo as svo_mod
from . import wavefront

MODES = ("pt", "wfpg", "wfpg-product")


class RunConfig:
    """Validated run parameters; defaults follow the reference setup
    (l_min=5, c_ray=512, SVO 256^3, base field 128^2)."""

    FIELDS = ("scene", "mode", "spp", "depth", "guided_depths", "field_res",
              "lmin", "cray", "svo_res", "heuristic", "seed", "deterministic",
              "out", "ref", "dump_bins", "dump_field", "workers", "rr")

    def __init__(self, scene, mode="wfpg", spp=8, depth=5, guided_depths=4,
                 field_res=128, lmin=5, cray=512, svo_res=256,
                 heuristic="pt-first", seed=0, deterministic=False,
                 out="out.pfm", ref=None, dump_bins=False, dump_field=None,
                 workers=None, rr=False):
        self.scene = scene
        self.mode = mode
        self.spp = int(spp)
        self.depth = int(depth)
        self.guided_depths = int(guided_depths)
        self.field_res = int(field_res)
        self.lmin = int(lmin)
        self.cray = int(cray)
        self.svo_res = int(svo_res)
        self.heuristic = heuristic
        self.seed = int(seed)
        self.deterministic = bool(deterministic)
        self.out = out
        self.ref = ref
        self.dump_bins = bool(dump_bins)
        self.dump_field = tuple(dump_field) if dump_field is not None else None
        self.workers = workers
        self.rr = bool(rr)
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.spp < 1:
            raise ValueError("spp must be >= 1")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not 0 <= self.guided_depths <= self.depth:
            raise ValueError("guided-depths must be within [0, depth]")
        if self.svo_res not in (16, 32, 64, 128, 256):
            raise ValueError("svo-res must be a power of two in [16, 256]")
        if self.field_res not in (16, 32, 64, 128):
            raise ValueError("field-res must be one of 16, 32, 64, 128")
        if self.heuristic not in accumulation.HEURISTICS:
            raise ValueError(f"unknown heuristic '{self.heuristic}'")
        if self.cray < 1:
            raise ValueError("cray must be >= 1")

    def effective_lmin(self, svo_depth):
        """Scale l_min down for shallow trees (small svo-res)."""
        return min(self.lmin, svo_depth - 1)

    def to_json(self):
        return json.dumps({k: getattr(self, k) for k in self.FIELDS}, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def __eq__(self, other):
        return isinstance(other, RunConfig) and all(
            getattr(self, k) == getattr(other, k) for k in self.FIELDS
        )


def _bin_false_color(bin_image):
    """Map bin node ids to stable pseudo-random colors; -1 stays black."""
    h, w = bin_image.shape
    out = np.zeros((h, w, 3))
    ids = bin_image.reshape(-1).astype(np.int64)
    valid = ids >= 0
    keys = core.stream_key(np.uint64(0xB1C0108), ids[valid].astype(np.uint64))
    rgb = np.stack([
        core.u01_at(keys, np.uint64(0)),
        core.u01_at(keys, np.uint64(1)),
        core.u01_at(keys, np.uint64(2)),
    ], axis=1)
    flat = out.reshape(-1, 3)
    flat[valid] = 0.15 + 0.85 * rgb
    return out


def estimate_incident_field(scene, origin, n, spp_per_cell, max_depth, seed):
    """Reference incoming-radiance field at ``origin`` estimated by path
    tracing: every cell of the NxN directional grid averages the radiance of
    ``spp_per_cell`` paths traced through random directions in the cell."""
    cells = n * n
    rng = core.RngStream(seed, 0xF1E1D)
    us = rng.next_n(cells * spp_per_cell * 2)
    iu = np.tile(np.arange(n), n)
    iv = np.repeat(np.arange(n), n)
    u = (np.repeat(iu, spp_per_cell) + us[0::2]) / n
    v = (np.repeat(iv, spp_per_cell) + us[1::2]) / n
    dirs = core.octa_uv_to_dir(u, v)
    cfg = wavefront.GuidingConfig(max_depth=max_depth, guided_depths=0, seed=seed)
    vals = _trace_radiance(scene, origin, dirs, cfg)
    lum = core.luminance(vals)
    return lum.reshape(cells, spp_per_cell).mean(axis=1).reshape(n, n)


def _trace_radiance(scene, origin, dirs, cfg):
    """Incoming radiance along arbitrary rays, via the wavefront machinery."""
    n = len(dirs)
    state = wavefront.PathState(n, cfg.max_depth, np.asarray(origin))
    state.pixel = np.arange(n, dtype=np.int64)
    state.key = core.stream_key(
        np.uint64(cfg.seed),
        (np.arange(n, dtype=np.uint64) * np.uint64(4) + np.uint64(3)),
    )
    state.ctr[:] = 0
    state.ray_o[:] = np.asarray(origin, dtype=np.float64)
    state.ray_d[:] = dirs
    impl = backend.get()
    hit_t = np.zeros(n)
    hit_tri = np.zeros(n, dtype=np.int64)
    for depth in range(1, cfg.max_depth + 1):
        act = np.nonzero(state.alive)[0]
        if len(act) == 0:
            break
        t, tri = scene.intersect_batch(state.ray_o[act], state.ray_d[act])
        hit_t[act] = t
        hit_tri[act] = tri
        impl.shade_depth(state, scene, depth, hit_t, hit_tri, None, None,
                         rr_enabled=cfg.russian_roulette, rr_depth=cfg.rr_depth)
    return state.radiance


def dump_field(config, scene, svo, pixel, out_prefix, log=print):
    """Write the guided field at the first-hit bin of ``pixel`` plus a
    path-traced reference field, both as PFMs normalized to max 1, and the
    field's pdf."""
    px, py = pixel
    cam = scene.camera
    if not (0 <= px < cam.width and 0 <= py < cam.height):
        raise ValueError("pixel out of range")
    d = cam.ray_directions(np.array([px]), np.array([py]), 0.5, 0.5)[0]
    hit = scene_mod.intersect(scene, cam.position, d)
    if hit is None:
        raise ValueError("pixel ray misses the scene")
    rng = core.RngStream(config.seed, 0xD0F1)
    n = config.field_res
    fld = guiding.generate_field(svo, scene, hit.position, n, rng=rng,
                                 jitter=False, blur_sigma=1.0)
    dist = guiding.build_distribution(fld)
    ref = estimate_incident_field(scene, hit.position, n, 64, config.depth,
                                  config.seed)
    ref = np.maximum(ref, 0.0)

    def norm(a):
        m = a.max()
        return a / m if m > 0 else a

    for name, grid in (("field", norm(fld.values)), ("field-ref", norm(ref)),
                       ("field-pdf", norm(dist.pdf_table))):
        imageio.write_pfm(f"{out_prefix}.{name}.pfm",
                          np.repeat(grid[:, :, None], 3, axis=2))
    log(f"dump-field: origin={hit.position.tolist()} res={n}")
    return fld, ref


def run(config, log=print):
    """Execute a configured render; returns (exit status, resolved frame)."""
    try:
        scene = scene_mod.load_scene(config.scene)
    except scene_mod.SceneError as e:
        log(f"error: {e}")
        return 1, None

    if config.workers is not None:
        os.environ["WFPG_THREADS"] = str(config.workers)
    if config.deterministic:
        os.environ["WFPG_THREADS"] = "1"

    log(f"config: {config.to_json()}")
    log(f"backend: {backend.get().NAME}")

    svo = None
    cfg = wavefront.GuidingConfig(
        l_min=config.lmin, c_ray=config.cray, field_res=config.field_res,
        guided_depths=config.guided_depths if config.mode != "pt" else 0,
        max_depth=config.depth, product=(config.mode == "wfpg-product"),
        seed=config.seed, russian_roulette=config.rr,
    )
    if config.mode != "pt":
        svo = svo_mod.build_from_scene(scene, config.svo_res, seed=config.seed)
        cfg.l_min = config.effective_lmin(svo.depth)
        log(f"svo: resolution={config.svo_res}^3 nodes={svo.node_count} "
            f"leaves={svo.leaf_count} memory_bytes={svo.memory_bytes()} "
            f"(record={svo_mod.NODE_RECORD_BYTES} B/node)")
        log(f"effective l_min: {cfg.l_min}")
    cfg.validate(svo.depth if svo is not None else None)

    h, w = scene.camera.height, scene.camera.width
    buf = accumulation.AccumulationBuffer(h, w, config.heuristic)
    bin_image = None
    for i in range(1, config.spp + 1):
        sample_cfg = cfg
        if config.heuristic == "pt-first" and i == 1 and config.mode != "pt":
            # first sample is a plain path-tracing frame
            sample_cfg = wavefront.GuidingConfig(
                l_min=cfg.l_min, c_ray=cfg.c_ray, field_res=cfg.field_res,
                guided_depths=0, max_depth=cfg.max_depth, product=cfg.product,
                seed=cfg.seed, russian_roulette=cfg.russian_roulette,
            )
        want_bins = config.dump_bins and i == 1 and svo is not None
        result = wavefront.render_pass(scene, svo, sample_cfg, [i - 1],
                                       collect_bin_image=want_bins)
        if want_bins:
            frame, stats, bin_image = result
        else:
            frame, stats = result
        buf.add_sample(frame, i)
        if svo is not None and stats.bins_per_depth:
            pairs = [
                f"{b}/{(r / b if b else 0):.1f}"
                for b, r in zip(stats.bins_per_depth, stats.rays_per_depth)
            ]
            log(f"sample {i}: bins/avg-rays per depth: " + " ".join(pairs))

    frame = buf.resolve()
    imageio.write_pfm(config.out, frame)
    png = os.path.splitext(config.out)[0] + ".png"
    imageio.write_png(png, frame)
    log(f"wrote {config.out} and {png}")

    if bin_image is not None:
        bout = os.path.splitext(config.out)[0] + ".bins.png"
        imageio.write_png(bout, _bin_false_color(bin_image), tonemap=False)
        n_bins = len(np.unique(bin_image[bin_image >= 0]))
        log(f"dump-bins: wrote {bout} regions={n_bins}")

    if config.dump_field is not None and svo is not None:
        prefix = os.path.splitext(config.out)[0]
        dump_field(config, scene, svo, config.dump_field, prefix, log=log)

    if config.ref:
        ref = imageio.read_pfm(config.ref)
        log(f"mse: {accumulation.mse(frame, ref):.6g}")
        log(f"mean-abs-diff: {accumulation.mean_abs_diff(frame, ref):.6g}")
    return 0, frame


def build_parser():
    p = argparse.ArgumentParser(
        prog="wfpg",
        description="Wavefront path tracer with sparse-voxel path guiding",
    )
    p.add_argument("--scene", required=True, help="wfpg-scene v1 file")
    p.add_argument("--mode", default="wfpg", choices=MODES)
    p.add_argument("--spp", type=int, default=8)
    p.add_argument("--depth", type=int, default=5, help="maximum path depth")
    p.add_argument("--guided-depths", type=int, default=4)
    p.add_argument("--field-res", type=int, default=128,
                   help="base radiance-field resolution (halves per depth)")
    p.add_argument("--lmin", type=int, default=5)
    p.add_argument("--cray", type=int, default=512)
    p.add_argument("--svo-res", type=int, default=256)
    p.add_argument("--heuristic", default="pt-first",
                   choices=sorted(accumulation.HEURISTICS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action="store_true",
                   help="force single-worker execution")
    p.add_argument("--out", default="out.pfm")
    p.add_argument("--ref", default=None, help="PFM reference for metrics")
    p.add_argument("--dump-bins", action="store_true",
                   help="write a false-color image of the depth-1 bins")
    p.add_argument("--dump-field", default=None, metavar="X,Y",
                   help="dump the guided + reference field at a pixel")
    p.add_argument("--workers", type=int, default=None,
                   help="kernel worker threads (WFPG_THREADS fallback)")
    p.add_argument("--rr", action="store_true", help="enable russian roulette")
    return p


def config_from_args(argv):
    args = build_parser().parse_args(argv)
    dump_field_px = None
    if args.dump_field:
        try:
            x, y = args.dump_field.split(",")
            dump_field_px = (int(x), int(y))
        except ValueError as e:
            raise ValueError("--dump-field expects X,Y") from e
    return RunConfig(
        scene=args.scene, mode=args.mode, spp=args.spp, depth=args.depth,
        guided_depths=min(args.guided_depths, args.depth),
        field_res=args.field_res, lmin=args.lmin, cray=args.cray,
        svo_res=args.svo_res, heuristic=args.heuristic, seed=args.seed,
        deterministic=args.deterministic, out=args.out, ref=args.ref,
        dump_bins=args.dump_bins, dump_field=dump_field_px,
        workers=args.workers, rr=args.rr,
    )


def main(argv=None):
    try:
        config = config_from_args(argv if argv is not None else sys.argv[1:])
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    status, _ = run(config)
    return status


if __name__ == "__main__":
    sys.exit(main())
