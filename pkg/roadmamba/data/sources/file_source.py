"""
FileSource - Read archive bytes from local files.
"""

from pathlib import Path
from typing import BinaryIO, Optional, Union

from .base import ByteSource


class FileSource(ByteSource):
    """Read an uncompressed archive from a local file."""

    def __init__(self, path: Union[str, Path]):
        """
        Initialize with a file path.

        Args:
            path: Path to a .rmba file
        """
        self._path = Path(path)
        self._file: Optional[BinaryIO] = None
        self._size = 0

    def open(self) -> bool:
        """
        Open the file for reading.

        Returns:
            True if file opened successfully
        """
        try:
            self._file = open(self._path, "rb")
            self._size = self._path.stat().st_size
            return True
        except OSError:
            return False

    def close(self) -> None:
        """Close the file."""
        if self._file:
            self._file.close()
            self._file = None

    @property
    def is_open(self) -> bool:
        return self._file is not None

    def read(self, count: int = 1) -> bytes:
        if not self._file:
            return b""
        return self._file.read(count)

    def available(self) -> bool:
        if not self._file:
            return False
        return self._file.tell() < self._size

    @property
    def position(self) -> int:
        return self._file.tell() if self._file else 0

    @property
    def name(self) -> str:
        return str(self._path)
