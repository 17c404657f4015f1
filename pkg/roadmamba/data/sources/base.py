"""
ByteSource - Abstract base class for archive byte streams.
"""

from abc import ABC, abstractmethod

from ...errors import ArchiveError


class ByteSource(ABC):
    """
    Abstract base class for reading tensor archives.

    Provides a common interface for reading archive bytes from files,
    in-memory buffers and gzip-compressed files.
    """

    @abstractmethod
    def open(self) -> bool:
        """
        Open the data source.

        Returns:
            True if successfully opened
        """

    @abstractmethod
    def close(self) -> None:
        """Close the data source."""

    @property
    @abstractmethod
    def is_open(self) -> bool:
        """Check if the source is currently open."""

    @abstractmethod
    def read(self, count: int = 1) -> bytes:
        """
        Read bytes from the source.

        Args:
            count: Number of bytes to read

        Returns:
            Bytes read (may be fewer than requested at EOF)
        """

    @abstractmethod
    def available(self) -> bool:
        """
        Check if more data is available.

        Returns:
            True if more data can be read
        """

    @property
    def position(self) -> int:
        """Current read position."""
        return 0

    @property
    def name(self) -> str:
        """Label used in error messages."""
        return type(self).__name__

    # Utility methods (non-abstract)

    def read_exact(self, count: int) -> bytes:
        """
        Read exactly count bytes.

        Raises:
            ArchiveError: The source ended early
        """
        data = self.read(count)
        if len(data) < count:
            raise ArchiveError(
                f"{self.name}: truncated at byte {self.position} "
                f"(wanted {count} bytes, got {len(data)})"
            )
        return data

    def read_uint8(self) -> int:
        """Read one unsigned byte."""
        return self.read_exact(1)[0]

    def read_uint32(self) -> int:
        """Read a 32-bit little-endian unsigned integer."""
        return int.from_bytes(self.read_exact(4), "little")

    def read_uint64(self) -> int:
        """Read a 64-bit little-endian unsigned integer."""
        return int.from_bytes(self.read_exact(8), "little")

    def __enter__(self) -> "ByteSource":
        if not self.is_open and not self.open():
            raise ArchiveError(f"{self.name}: cannot open")
        return self

    def __exit__(self, *exc) -> None:
        self.close()
