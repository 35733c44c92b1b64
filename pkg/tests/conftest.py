import hashlib
import os
import sys
from pathlib import Path

import numpy as np
import pytest

# the sandbox cores do not scale; keep kernels single-threaded for speed
os.environ.setdefault("WFPG_THREADS", "1")

REPO = Path(__file__).resolve().parent.parent
SCENES = REPO / "scenes"

import wfpg  # noqa: E402
from wfpg import scene as scene_mod  # noqa: E402
from wfpg import svo as svo_mod  # noqa: E402
from wfpg import wavefront  # noqa: E402


def _source_digest():
    """Digest of the package sources; keys the render cache so any code
    change invalidates cached reference frames."""
    h = hashlib.sha256()
    src = Path(wfpg.__file__).parent
    for p in sorted(src.glob("*.py")) + sorted(src.glob("*.pyx")):
        h.update(p.read_bytes())
    for p in sorted(SCENES.iterdir()):
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


SOURCE_DIGEST = _source_digest()


def cached_render(key, fn, cache_dir=None):
    """Compute-or-load a deterministic frame; cache under WFPG_TEST_CACHE."""
    root = cache_dir or os.environ.get("WFPG_TEST_CACHE")
    if not root:
        return fn()
    path = Path(root) / f"{key}-{SOURCE_DIGEST}.npy"
    if path.exists():
        return np.load(path)
    frame = fn()
    path.parent.mkdir(parents=True, exist_ok=True)
    np.save(path, frame)
    return frame


@pytest.fixture(scope="session")
def cornell_scene():
    return scene_mod.load_scene(str(SCENES / "cornell.scene"))


@pytest.fixture(scope="session")
def enclosed_scene():
    return scene_mod.load_scene(str(SCENES / "cornell_enclosed.scene"))


@pytest.fixture(scope="session")
def cornell_svo(cornell_scene):
    return svo_mod.build_from_scene(cornell_scene, 64, seed=1)


def render_pt(scene, spp, seed, max_depth, chunk=256):
    """Accumulated plain path tracing, chunked for throughput."""
    h, w = scene.camera.height, scene.camera.width
    cfg = wavefront.GuidingConfig(max_depth=max_depth, guided_depths=0, seed=seed)
    acc = np.zeros((h, w, 3))
    done = 0
    while done < spp:
        n = min(chunk, spp - done)
        frame, _ = wavefront.render_pass(scene, None, cfg, list(range(done, done + n)))
        acc += frame * n
        done += n
    return acc / spp


def render_guided(scene, spp, seed, max_depth, guided_depths, svo_res=64,
                  field_res=16, l_min=2, c_ray=512, product=False,
                  heuristic_weights=None, collect_frames=False, pt_first=False):
    """Accumulated guided render (single-sample passes; fresh SVO)."""
    from wfpg import accumulation

    svo = svo_mod.build_from_scene(scene, svo_res, seed=seed)
    cfg = wavefront.GuidingConfig(
        max_depth=max_depth, guided_depths=guided_depths, field_res=field_res,
        l_min=min(l_min, svo.depth - 1), c_ray=c_ray, product=product, seed=seed,
    )
    h, w = scene.camera.height, scene.camera.width
    frames = []
    acc = np.zeros((h, w, 3))
    for i in range(spp):
        sample_cfg = cfg
        if pt_first and i == 0:
            sample_cfg = wavefront.GuidingConfig(
                max_depth=max_depth, guided_depths=0, field_res=field_res,
                l_min=cfg.l_min, c_ray=c_ray, product=product, seed=seed,
            )
        frame, _ = wavefront.render_pass(scene, svo, sample_cfg, [i])
        if collect_frames:
            frames.append(frame)
        acc += frame
    if collect_frames:
        return acc / spp, frames
    return acc / spp
