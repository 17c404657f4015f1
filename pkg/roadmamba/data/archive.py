"""
TensorArchive - named-tensor container used for datasets and checkpoints.

The byte layout is documented in roadmamba.constants. Archives are written
atomically (temporary file, then rename); paths ending in .gz are gzip
compressed.

Usage:
    save_archive("weights.rmba", {"w": np.zeros((2, 3), np.float32)})
    tensors = load_archive("weights.rmba")
"""

from __future__ import annotations

import gzip
import io
import logging
import math
import os
from collections import OrderedDict
from pathlib import Path
from typing import BinaryIO, Dict, Iterable, Mapping, Tuple, Union

import numpy as np

from ..constants import (
    ARCHIVE_DTYPES,
    ARCHIVE_MAGIC,
    ARCHIVE_MAX_RANK,
    ARCHIVE_VERSION,
)
from ..errors import ArchiveError
from .sources import ByteSource, MemorySource, open_source

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
Entries = Union[Mapping[str, np.ndarray], Iterable[Tuple[str, np.ndarray]]]

# numpy dtype -> archive code
_DTYPE_CODES = {np.dtype(v).newbyteorder("="): k for k, v in ARCHIVE_DTYPES.items()}


def _entry_pairs(entries: Entries) -> Iterable[Tuple[str, np.ndarray]]:
    if isinstance(entries, Mapping):
        return list(entries.items())
    return list(entries)


def _dtype_code(name: str, array: np.ndarray) -> int:
    code = _DTYPE_CODES.get(array.dtype.newbyteorder("="))
    if code is None:
        raise ArchiveError(f"entry '{name}' has unsupported dtype {array.dtype} (f32/f64 only)")
    return code


def write_archive(stream: BinaryIO, entries: Entries) -> int:
    """
    Serialize entries into an open binary stream.

    Args:
        stream: Writable binary stream
        entries: Mapping or (name, array) pairs; order is preserved

    Returns:
        Number of entries written

    Raises:
        ArchiveError: Duplicate or empty name, unsupported dtype, rank > 255
    """
    pairs = _entry_pairs(entries)
    seen = set()
    for name, _ in pairs:
        if not name:
            raise ArchiveError("archive entry names must be nonempty")
        if name in seen:
            raise ArchiveError(f"duplicate archive entry '{name}'")
        seen.add(name)

    stream.write(ARCHIVE_MAGIC)
    stream.write(ARCHIVE_VERSION.to_bytes(4, "little"))
    stream.write(len(pairs).to_bytes(4, "little"))
    for name, value in pairs:
        array = np.asarray(value)
        code = _dtype_code(name, array)
        if array.ndim > ARCHIVE_MAX_RANK:
            raise ArchiveError(f"entry '{name}' has rank {array.ndim} > {ARCHIVE_MAX_RANK}")
        encoded = name.encode("utf-8")
        stream.write(len(encoded).to_bytes(4, "little"))
        stream.write(encoded)
        stream.write(bytes((code, array.ndim)))
        for extent in array.shape:
            stream.write(int(extent).to_bytes(8, "little"))
        stream.write(np.ascontiguousarray(array, dtype=ARCHIVE_DTYPES[code]).tobytes())
    return len(pairs)


def encode_archive(entries: Entries) -> bytes:
    """Serialize entries to bytes."""
    buffer = io.BytesIO()
    write_archive(buffer, entries)
    return buffer.getvalue()


def save_archive(path: PathLike, entries: Entries) -> Path:
    """
    Write an archive file atomically.

    Args:
        path: Destination; a .gz suffix selects gzip compression
        entries: Mapping or (name, array) pairs

    Returns:
        The written path
    """
    path = Path(path)
    data = encode_archive(entries)
    if path.name.endswith(".gz"):
        # fixed mtime keeps compressed output reproducible
        data = gzip.compress(data, mtime=0)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)
    logger.debug("wrote %s (%d bytes)", path, len(data))
    return path


class TensorArchiveReader:
    """
    Parse a tensor archive from a byte source.

    Example:
        with FileSource("ckpt.rmba") as source:
            tensors = TensorArchiveReader(source).read()
    """

    def __init__(self, source: ByteSource):
        self._source = source
        self._version = 0
        self._count = 0

    @property
    def version(self) -> int:
        """Format version from the header (0 before read_header())."""
        return self._version

    @property
    def count(self) -> int:
        """Entry count from the header."""
        return self._count

    def read_header(self) -> None:
        """
        Validate magic and version.

        Raises:
            ArchiveError: Not a tensor archive, or an unsupported version
        """
        magic = self._source.read(len(ARCHIVE_MAGIC))
        if magic != ARCHIVE_MAGIC:
            raise ArchiveError(
                f"{self._source.name}: not a checkpoint or tensor archive (bad magic {magic!r})"
            )
        self._version = self._source.read_uint32()
        if self._version != ARCHIVE_VERSION:
            raise ArchiveError(
                f"{self._source.name}: unsupported archive version {self._version} "
                f"(expected {ARCHIVE_VERSION})"
            )
        self._count = self._source.read_uint32()

    def read_entry(self) -> Tuple[str, np.ndarray]:
        """Read one (name, array) entry at the current position."""
        source = self._source
        name_len = source.read_uint32()
        try:
            name = source.read_exact(name_len).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ArchiveError(f"{source.name}: entry name is not UTF-8") from exc
        code = source.read_uint8()
        if code not in ARCHIVE_DTYPES:
            raise ArchiveError(f"{source.name}: entry '{name}' has unknown dtype code {code}")
        rank = source.read_uint8()
        shape = tuple(source.read_uint64() for _ in range(rank))
        dtype = np.dtype(ARCHIVE_DTYPES[code])
        nbytes = math.prod(shape) * dtype.itemsize
        raw = source.read_exact(nbytes)
        array = np.frombuffer(raw, dtype=dtype).reshape(shape)
        return name, array.astype(dtype.newbyteorder("="), copy=True)

    def read(self) -> Dict[str, np.ndarray]:
        """
        Read the whole archive.

        Returns:
            Entries in file order

        Raises:
            ArchiveError: Bad header, truncation, duplicate names, trailing bytes
        """
        self.read_header()
        tensors: Dict[str, np.ndarray] = OrderedDict()
        for _ in range(self._count):
            name, array = self.read_entry()
            if name in tensors:
                raise ArchiveError(f"{self._source.name}: duplicate entry '{name}'")
            tensors[name] = array
        if self._source.available():
            raise ArchiveError(f"{self._source.name}: trailing bytes after {self._count} entries")
        logger.debug("read %d entries from %s", self._count, self._source.name)
        return tensors


def decode_archive(data: bytes, label: str = "<memory>") -> Dict[str, np.ndarray]:
    """Parse archive bytes."""
    with MemorySource(data, label=label) as source:
        return TensorArchiveReader(source).read()


def load_archive(path: PathLike) -> Dict[str, np.ndarray]:
    """
    Read an archive file.

    Raises:
        ArchiveError: Malformed archive
        OSError: File missing or unreadable
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such archive: {path}")
    with open_source(path) as source:
        return TensorArchiveReader(source).read()
