#!/usr/bin/env python3
"""
File operations: UTF-8 reading, atomic writing and bundled data lookup.
"""

import os
import tempfile
from typing import Iterator, List, Tuple

from typedq.errors import DataIOError

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")


def data_path(name: str) -> str:
    """Path of a bundled resource under typedq/data."""
    return os.path.join(DATA_DIR, name)


def read_file(path: str) -> str:
    """Read file contents."""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return f.read()
    except (OSError, UnicodeDecodeError) as e:
        raise DataIOError(f"cannot read {path}: {e}") from e


def read_bytes(path: str) -> bytes:
    """Read a binary file."""
    try:
        with open(path, 'rb') as f:
            return f.read()
    except OSError as e:
        raise DataIOError(f"cannot read {path}: {e}") from e


def iter_lines(path: str) -> Iterator[Tuple[int, str]]:
    """Yield (line number, line without newline) pairs from a UTF-8 file."""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            for lineno, line in enumerate(f, 1):
                yield lineno, line.rstrip('\n').rstrip('\r')
    except (OSError, UnicodeDecodeError) as e:
        raise DataIOError(f"cannot read {path}: {e}") from e


def read_entries(path: str) -> List[Tuple[int, str]]:
    """Non-blank, non-comment lines of a resource file, stripped."""
    entries = []
    for lineno, line in iter_lines(path):
        stripped = line.strip()
        if stripped and not stripped.startswith('#'):
            entries.append((lineno, stripped))
    return entries


def _atomic_write(path: str, data: bytes) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(parent, exist_ok=True)
        fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=parent)
    except OSError as e:
        raise DataIOError(f"cannot write {path}: {e}") from e
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
        os.replace(tmp_path, path)
    except BaseException as e:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        if isinstance(e, OSError):
            raise DataIOError(f"cannot write {path}: {e}") from e
        raise


def write_file(path: str, content: str) -> None:
    """Write file contents through a temp file and rename, so readers never see a partial file."""
    _atomic_write(path, content.encode('utf-8'))


def write_bytes(path: str, data: bytes) -> None:
    """Binary counterpart of write_file."""
    _atomic_write(path, data)
