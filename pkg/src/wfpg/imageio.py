"""Image output: little-endian PFM for HDR frames, 8-bit PNG for the
tone-mapped view.

PFM layout written here: ``PF\\n<width> <height>\\n-1.0\\n`` followed by
height rows of width RGB float32 triples, bottom row first, little-endian
(the negative scale in the header marks the byte order).
"""

import numpy as np
from PIL import Image

from . import accumulation


def write_pfm(path, frame):
    frame = np.asarray(frame, dtype=np.float32)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) frame")
    h, w, _ = frame.shape
    with open(path, "wb") as fh:
        fh.write(b"PF\n")
        fh.write(f"{w} {h}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(frame[::-1], dtype="<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"PF":
            raise ValueError(f"{path}: not a color PFM")
        w, h = (int(x) for x in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(w * h * 3 * 4), dtype=dtype)
    return data.reshape(h, w, 3)[::-1].astype(np.float64)


def write_png(path, frame, tonemap=True):
    frame = np.asarray(frame, dtype=np.float64)
    if tonemap:
        frame = accumulation.tonemap_reinhard(frame)
    img = np.clip(frame * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="RGB").save(path)
