"""Reader for the subset of MATLAB Level-5 MAT files used by the CWRU recordings.

Only top-level numeric matrices are returned.  Data elements may be stored
plainly or wrapped in ``miCOMPRESSED`` (zlib) envelopes, and either byte order
is accepted.  Anything else (cells, structs, sparse, char arrays) is skipped
and reported in :attr:`MatContents.skipped`.
"""

from __future__ import annotations

import struct
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np

HEADER_SIZE = 128

MI_INT8 = 1
MI_UINT8 = 2
MI_INT16 = 3
MI_UINT16 = 4
MI_INT32 = 5
MI_UINT32 = 6
MI_SINGLE = 7
MI_DOUBLE = 9
MI_INT64 = 12
MI_UINT64 = 13
MI_MATRIX = 14
MI_COMPRESSED = 15
MI_UTF8 = 16

# element type -> numpy scalar type (byte order applied later)
_MI_DTYPES = {
    MI_INT8: "i1",
    MI_UINT8: "u1",
    MI_INT16: "i2",
    MI_UINT16: "u2",
    MI_INT32: "i4",
    MI_UINT32: "u4",
    MI_SINGLE: "f4",
    MI_DOUBLE: "f8",
    MI_INT64: "i8",
    MI_UINT64: "u8",
}

MX_CELL = 1
MX_STRUCT = 2
MX_OBJECT = 3
MX_CHAR = 4
MX_SPARSE = 5

# array class -> (element_kind, numpy type)
_MX_NUMERIC = {
    6: ("float64", "f8"),
    7: ("float32", "f4"),
    8: ("int8", "i1"),
    9: ("uint8", "u1"),
    10: ("int16", "i2"),
    11: ("uint16", "u2"),
    12: ("int32", "i4"),
    13: ("uint32", "u4"),
    14: ("int64", "i8"),
    15: ("uint64", "u8"),
}
_MX_NAMES = {MX_CELL: "cell", MX_STRUCT: "struct", MX_OBJECT: "object", MX_CHAR: "char", MX_SPARSE: "sparse"}

_FLAG_COMPLEX = 0x0800


class MatFileError(ValueError):
    """Base class for parse failures; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class MalformedHeaderError(MatFileError):
    pass


class TruncatedElementError(MatFileError):
    pass


class UnsupportedElementError(MatFileError):
    pass


class DecompressionError(MatFileError):
    pass


@dataclass(frozen=True, eq=False)
class MatVariable:
    name: str
    shape: tuple[int, ...]
    element_kind: str
    data: np.ndarray  # flat, column-major

    def __post_init__(self):
        if not self.name or not self.name.isascii():
            raise ValueError(f"invalid variable name {self.name!r}")
        if int(np.prod(self.shape, dtype=np.int64)) != self.data.size:
            raise ValueError(f"{self.name}: shape {self.shape} does not match {self.data.size} elements")

    def as_vector(self) -> np.ndarray:
        """The data as a 1-D vector; only valid for [N,1], [1,N] and scalar shapes."""
        if sum(d != 1 for d in self.shape) > 1:
            raise ValueError(f"{self.name} has shape {self.shape}, not a vector")
        return self.data

    def __eq__(self, other):
        if not isinstance(other, MatVariable):
            return NotImplemented
        return (
            self.name == other.name
            and self.shape == other.shape
            and self.element_kind == other.element_kind
            and self.data.dtype == other.data.dtype
            and self.data.tobytes() == other.data.tobytes()
        )


@dataclass(frozen=True)
class SkippedVariable:
    name: str
    reason: str
    offset: int


class MatContents(dict):
    """``name -> MatVariable`` mapping that also carries the skipped-variable records."""

    def __init__(self, *args, header_text: str = "", skipped: list[SkippedVariable] | None = None):
        super().__init__(*args)
        self.header_text = header_text
        self.skipped: list[SkippedVariable] = skipped if skipped is not None else []


@dataclass
class _Reader:
    buf: bytes
    order: str  # "<" or ">"
    base: int = 0  # absolute offset of buf[0], for diagnostics
    skipped: list = field(default_factory=list)

    def tag(self, pos: int, end: int) -> tuple[int, int, int, int]:
        """Decode a data element tag; returns (type, nbytes, data_start, next_element)."""
        if pos + 8 > end:
            raise TruncatedElementError("truncated data element tag", self.base + pos)
        first, second = struct.unpack_from(self.order + "II", self.buf, pos)
        if first >> 16:
            # small data element: 2-byte size, 2-byte type, payload in the same 8 bytes
            mtype, nbytes = first & 0xFFFF, first >> 16
            if nbytes > 4:
                raise MatFileError(f"small data element claims {nbytes} bytes", self.base + pos)
            return mtype, nbytes, pos + 4, pos + 8
        mtype, nbytes = first, second
        start = pos + 8
        stop = start + nbytes
        if stop > end:
            raise TruncatedElementError(
                f"data element of type {mtype} needs {nbytes} bytes, only {end - start} remain",
                self.base + pos,
            )
        if mtype == MI_COMPRESSED:
            return mtype, nbytes, start, stop
        return mtype, nbytes, start, start + ((nbytes + 7) // 8) * 8

    def numeric(self, pos: int, end: int, context: str) -> tuple[np.ndarray, int]:
        mtype, nbytes, start, nxt = self.tag(pos, end)
        if mtype not in _MI_DTYPES:
            raise UnsupportedElementError(f"unsupported element type {mtype} in {context}", self.base + pos)
        dtype = np.dtype(_MI_DTYPES[mtype]).newbyteorder(self.order)
        if nbytes % dtype.itemsize:
            raise MatFileError(f"{context}: {nbytes} bytes is not a multiple of {dtype.itemsize}", self.base + pos)
        arr = np.frombuffer(self.buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=start)
        return arr, min(nxt, end)

    def matrix(self, start: int, stop: int) -> MatVariable | None:
        flags, pos = self.numeric(start, stop, "array flags")
        if flags.size < 2:
            raise MatFileError("array flags subelement too short", self.base + start)
        mx_class = int(flags[0]) & 0xFF
        dims, pos = self.numeric(pos, stop, "dimensions")
        shape = tuple(int(d) for d in dims)
        name_pos = pos
        raw_name, pos = self.numeric(pos, stop, "array name")
        name = raw_name.astype(np.uint8).tobytes().decode("ascii", errors="replace")

        if mx_class not in _MX_NUMERIC:
            kind = _MX_NAMES.get(mx_class, f"class {mx_class}")
            self.skip(name, f"non-numeric {kind} variable", self.base + start)
            return None
        if int(flags[0]) & _FLAG_COMPLEX:
            self.skip(name, "complex data is not supported", self.base + start)
            return None
        if not name:
            raise MatFileError("numeric matrix without a name", self.base + name_pos)

        kind, np_type = _MX_NUMERIC[mx_class]
        real, pos = self.numeric(pos, stop, f"real part of {name!r}")
        expected = int(np.prod(shape, dtype=np.int64))
        if real.size != expected:
            raise TruncatedElementError(
                f"{name!r}: declared shape {shape} needs {expected} values, found {real.size}", self.base + start
            )
        data = real.astype(np.dtype(np_type).newbyteorder("="), copy=True)
        return MatVariable(name=name, shape=shape, element_kind=kind, data=data)

    def skip(self, name: str, reason: str, offset: int):
        self.skipped.append(SkippedVariable(name, reason, offset))
        warnings.warn(f"skipping MAT variable {name!r}: {reason}", stacklevel=4)


def _parse_header(data: bytes) -> tuple[str, str]:
    if len(data) < HEADER_SIZE:
        raise MalformedHeaderError(f"file is {len(data)} bytes, shorter than the 128-byte header", 0)
    text = data[:116].decode("ascii", errors="replace").rstrip(" \x00")
    if not text.startswith("MATLAB 5.0"):
        raise MalformedHeaderError("descriptive text does not start with 'MATLAB 5.0'", 0)
    indicator = data[126:128]
    if indicator == b"IM":
        order = "<"
    elif indicator == b"MI":
        order = ">"
    else:
        raise MalformedHeaderError(f"bad endian indicator {indicator!r}", 126)
    (version,) = struct.unpack_from(order + "H", data, 124)
    if version != 0x0100:
        raise MalformedHeaderError(f"unsupported version 0x{version:04x}", 124)
    return text, order


def parse_mat(data: bytes) -> MatContents:
    """Parse a Level-5 MAT file held in memory.

    Returns every top-level numeric matrix keyed by name.  The input bytes are
    never modified and no state is kept between calls.
    """
    data = bytes(data)
    text, order = _parse_header(data)
    reader = _Reader(data, order)
    out = MatContents(header_text=text, skipped=reader.skipped)
    pos, end = HEADER_SIZE, len(data)
    while pos < end:
        if end - pos < 8 and not any(data[pos:end]):
            break  # trailing padding
        mtype, nbytes, start, nxt = reader.tag(pos, end)
        if mtype == MI_COMPRESSED:
            try:
                inner = zlib.decompress(data[start : start + nbytes])
            except zlib.error as exc:
                raise DecompressionError(f"zlib decompression failed: {exc}", pos) from exc
            sub = _Reader(inner, order, base=pos)
            sub.skipped = reader.skipped
            itype, inbytes, istart, _ = sub.tag(0, len(inner))
            if itype == MI_MATRIX:
                var = sub.matrix(istart, istart + inbytes)
                if var is not None:
                    out[var.name] = var
            else:
                reader.skip("<compressed>", f"compressed element of type {itype}", pos)
        elif mtype == MI_MATRIX:
            if nbytes:
                var = reader.matrix(start, start + nbytes)
                if var is not None:
                    out[var.name] = var
        else:
            reader.skip("<top-level>", f"top-level element of type {mtype}", pos)
        pos = nxt
    return out


def read_mat(path) -> MatContents:
    with open(path, "rb") as fh:
        return parse_mat(fh.read())
