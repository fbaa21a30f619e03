"""Small I/O helpers shared by the binary artifact writers."""

import os
import struct
import tempfile
from contextlib import contextmanager
from typing import IO, BinaryIO, Iterator, List

import numpy as np


@contextmanager
def atomic_open(path: str, mode: str = "wb") -> Iterator[IO]:
    """Write to a temp file in the target directory, rename on success.

    A crash mid-write leaves either the old file or no file, never a
    truncated artifact.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_f32(fh: BinaryIO, arr: np.ndarray) -> None:
    """Row-major little-endian float32 dump."""
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_f32(fh: BinaryIO, shape: tuple) -> np.ndarray:
    count = int(np.prod(shape))
    data = fh.read(count * 4)
    if len(data) != count * 4:
        raise EOFError("truncated float32 block")
    return np.frombuffer(data, dtype="<f4").reshape(shape).copy()

def write_array(fh: BinaryIO, arr: np.ndarray, dtype: str) -> None:
    fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def read_array(fh: BinaryIO, shape: tuple, dtype: str) -> np.ndarray:
    itemsize = np.dtype(dtype).itemsize
    count = int(np.prod(shape))
    data = fh.read(count * itemsize)
    if len(data) != count * itemsize:
        raise EOFError(f"truncated {dtype} block")
    return np.frombuffer(data, dtype=dtype).reshape(shape).copy()


def write_str_block(fh: BinaryIO, items: List[str]) -> None:
    """Length-prefixed UTF-8 strings: u32 byte length + payload, repeated."""
    for item in items:
        raw = item.encode("utf-8")
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)


def read_str_block(fh: BinaryIO, count: int) -> List[str]:
    out = []
    for _ in range(count):
        (n,) = struct.unpack("<I", fh.read(4))
        out.append(fh.read(n).decode("utf-8"))
    return out
