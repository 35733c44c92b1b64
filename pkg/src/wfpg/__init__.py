"""Wavefront path tracer with on-the-fly path guiding.

Rays advance breadth-first; radiant exitance learned during rendering is
cached on a sparse voxel octree, local incoming-radiance fields are cone
traced from it per spatial bin, and continuation rays importance-sample
those fields (optionally multiplied by the BSDF).
"""

from . import accumulation, backend, core, guiding, imageio, scene, svo, wavefront

__all__ = [
    "accumulation",
    "backend",
    "core",
    "guiding",
    "imageio",
    "scene",
    "svo",
    "wavefront",
]
__version__ = "0.1.0"
