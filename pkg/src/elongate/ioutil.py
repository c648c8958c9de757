"""Atomic file writes: temp file in the target directory, then rename."""

from __future__ import annotations

import os
import tempfile


def _atomic_write(path: str, data, mode: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: str, text: str) -> None:
    _atomic_write(path, text, "w")


def atomic_write_bytes(path: str, data: bytes) -> None:
    _atomic_write(path, data, "wb")
