"""Deterministic seed streams.

Every random draw in the package is attributable to ``(master_seed, label,
*index)``. Child seeds come from :class:`numpy.random.SeedSequence`, so
replicas processed in any order or on any worker get identical streams.
"""

import numpy as np

STREAMS = {
    "noise": 1,
    "paths": 2,
    "pairs": 3,
    "bootstrap": 4,
    "smallball": 5,
    "resample": 6,
    "khasminskii": 7,
    "sizebiased": 8,
    "noise_alt": 9,
    "misc": 10,
}


def _entropy(master, label, index):
    if label not in STREAMS:
        raise KeyError(f"unknown stream label {label!r}")
    return [int(master) & 0xFFFFFFFFFFFFFFFF, STREAMS[label], *(int(i) for i in index)]


def stream_seed(master, label, *index):
    """64-bit integer seed for stream ``label`` at ``index``."""
    ss = np.random.SeedSequence(_entropy(master, label, index))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def stream_seed32(master, label, *index):
    ss = np.random.SeedSequence(_entropy(master, label, index))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def stream_rng(master, label, *index):
    """A fresh ``Generator`` for the given stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(_entropy(master, label, index))))


def child_rng(seed, *index):
    """Generator keyed by an already-derived 64-bit seed plus an index tuple."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(i) for i in index)]))
    )


class SeedLedger:
    """Records which streams were touched, for run records."""

    def __init__(self, master):
        self.master = int(master)
        self._counts = {}

    def seed(self, label, *index):
        self._counts[label] = self._counts.get(label, 0) + 1
        return stream_seed(self.master, label, *index)

    def seed32(self, label, *index):
        self._counts[label] = self._counts.get(label, 0) + 1
        return stream_seed32(self.master, label, *index)

    def rng(self, label, *index):
        self._counts[label] = self._counts.get(label, 0) + 1
        return stream_rng(self.master, label, *index)

    def lineage(self):
        return {
            "master_seed": self.master,
            "streams": {k: {"id": STREAMS[k], "draws": v} for k, v in sorted(self._counts.items())},
        }
