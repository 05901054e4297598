"""Atomic file writes and seed derivation helpers."""

from __future__ import annotations

import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np


@contextmanager
def atomic_write(path: str | Path):
    """Open a temp file next to `path` and rename over it on success.

    A failed writer never leaves a partial file at `path`.
    """
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as handle:
            yield handle
        os.chmod(tmp, 0o644)  # mkstemp defaults to 0600
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def derive_seed(*parts: int) -> int:
    """Mix integer parts into one 32-bit seed, stably across runs and platforms."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])
