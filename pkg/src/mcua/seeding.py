"""Named, order-independent random streams derived from one master seed."""
import zlib

import numpy as np


def key(name) -> int:
    return zlib.crc32(str(name).encode("utf-8"))


def stream(seed, *names) -> np.random.Generator:
    """Generator for ``(seed, *names)``; the same tuple always gives the same stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [key(n) for n in names]))
