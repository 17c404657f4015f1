"""Byte sources for tensor archives."""

from pathlib import Path
from typing import Union

from .base import ByteSource
from .file_source import FileSource
from .memory_source import GzipSource, MemorySource


def open_source(path: Union[str, Path]) -> ByteSource:
    """Pick a source for path: gzip when it ends in .gz, plain file otherwise."""
    if str(path).endswith(".gz"):
        return GzipSource(path)
    return FileSource(path)


__all__ = ["ByteSource", "FileSource", "MemorySource", "GzipSource", "open_source"]
