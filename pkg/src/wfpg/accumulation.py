"""Progressive accumulation with sample-combination heuristics, the
photographic tone map, and error metrics.

The accumulated image is sum(W_i * S_i * h(i)) / sum(W_i * h(i)) over the
per-sample frames S_i; h is the configured heuristic.  "pt-first" weighs all
samples equally but expects the caller to render sample 1 without guiding.
"""

import numpy as np


def _h_linear(i):
    return float(i) if i < 5 else 5.0


def _h_quadratic(i):
    return float(i * i) if i < 5 else 25.0


def _h_one_two(i):
    return 1.0 if i == 1 else 2.0


def _h_discard_first(i):
    return 0.0 if i == 1 else 1.0


def _h_constant(i):
    return 1.0


HEURISTICS = {
    "linear": _h_linear,
    "quadratic": _h_quadratic,
    "one-two": _h_one_two,
    "discard-first": _h_discard_first,
    "constant": _h_constant,
    "pt-first": _h_constant,
}


class AccumulationBuffer:
    def __init__(self, height, width, heuristic="constant"):
        if heuristic not in HEURISTICS:
            raise ValueError(f"unknown heuristic '{heuristic}'")
        self.heuristic = heuristic
        self._h = HEURISTICS[heuristic]
        self.weighted_sum = np.zeros((height, width, 3))
        self.weight_sum = 0.0
        self.sample_index = 0

    def add_sample(self, frame, i=None, weight=1.0):
        """Fold in frame S_i with weight W_i (default 1)."""
        frame = np.asarray(frame, dtype=np.float64)
        if not np.all(np.isfinite(frame)):
            raise ValueError("frame contains non-finite values")
        if i is None:
            i = self.sample_index + 1
        self.sample_index = i
        hw = weight * self._h(i)
        self.weighted_sum += hw * frame
        self.weight_sum += hw

    def resolve(self):
        if self.weight_sum <= 0.0:
            raise ValueError("no weighted samples accumulated")
        return self.weighted_sum / self.weight_sum


def add_sample(buffer, frame, i, weight=1.0):
    buffer.add_sample(frame, i, weight)


def resolve(buffer):
    return buffer.resolve()


def tonemap_reinhard(frame):
    """Global photographic operator in its simple form x/(1+x) per channel."""
    frame = np.asarray(frame, dtype=np.float64)
    return frame / (1.0 + frame)


def mse(frame, reference):
    """Mean squared difference of the tone-mapped frames."""
    frame = np.asarray(frame, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if frame.shape != reference.shape:
        raise ValueError("frame shapes differ")
    d = tonemap_reinhard(frame) - tonemap_reinhard(reference)
    return float(np.mean(d * d))


def mean_abs_diff(frame, reference):
    """Mean absolute per-pixel difference of the tone-mapped frames."""
    frame = np.asarray(frame, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if frame.shape != reference.shape:
        raise ValueError("frame shapes differ")
    return float(np.mean(np.abs(tonemap_reinhard(frame) - tonemap_reinhard(reference))))
