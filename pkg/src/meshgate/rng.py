"""Named, independent random substreams derived from one seed."""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, *names: str) -> np.random.Generator:
    """Generator for the substream ``names`` of ``seed``.

    Streams with different names are statistically independent, and a
    stream's draws never depend on how much any other stream was consumed.
    """
    keys = [zlib.crc32(n.encode("utf-8")) for n in names]
    return np.random.default_rng(np.random.SeedSequence([int(seed), *keys]))
