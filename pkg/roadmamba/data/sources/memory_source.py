"""
MemorySource - Read archive bytes from a buffer or a gzip-compressed file.

Python's gzip module handles decompression; the whole archive is held in
memory.
"""

import gzip
from pathlib import Path
from typing import Optional, Union

from .base import ByteSource


class MemorySource(ByteSource):
    """Read an archive held in memory."""

    def __init__(self, data: Optional[bytes] = None, label: str = "<memory>"):
        """
        Initialize with raw archive bytes.

        Args:
            data: Archive contents
            label: Name used in error messages
        """
        self._data = data
        self._label = label
        self._position = 0

    def open(self) -> bool:
        self._position = 0
        return self._data is not None

    def close(self) -> None:
        self._position = 0

    @property
    def is_open(self) -> bool:
        return self._data is not None

    def read(self, count: int = 1) -> bytes:
        if self._data is None:
            return b""
        end = min(self._position + count, len(self._data))
        data = self._data[self._position : end]
        self._position = end
        return data

    def available(self) -> bool:
        return self._data is not None and self._position < len(self._data)

    @property
    def position(self) -> int:
        return self._position

    @property
    def name(self) -> str:
        return self._label


class GzipSource(MemorySource):
    """
    Read a gzip-compressed archive (.rmba.gz).

    Decompresses to memory on open().
    """

    def __init__(self, path: Union[str, Path]):
        super().__init__(None, label=str(path))
        self._path = Path(path)

    def open(self) -> bool:
        """
        Open and decompress the file.

        Returns:
            True if successfully opened and decompressed
        """
        try:
            with gzip.open(self._path, "rb") as f:
                self._data = f.read()
        except (OSError, EOFError):
            return False
        self._position = 0
        return True

    def close(self) -> None:
        self._data = None
        self._position = 0
