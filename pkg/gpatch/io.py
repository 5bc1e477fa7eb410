# -*- coding: utf-8 -*-
"""Byte-level readers and writers shared by the gpatch artifact formats.

All binary artifacts start with a four byte magic string followed by
little-endian header fields and row-major arrays.
"""

import csv
import hashlib
import logging
import struct
from os.path import isfile

import numpy as np
import pandas as pd

from .errors import DataError

logger = logging.getLogger(__name__)

__all__ = [
    "write_header",
    "read_header",
    "write_array",
    "read_array",
    "write_vector_file",
    "read_vector_file",
    "file_digest",
]

VECTOR_MAGIC = b"GPE1"


def write_header(fp, magic, fmt="", *values):
    """Write ``magic`` and the little-endian ``values`` packed with ``fmt``."""
    fp.write(magic)
    if fmt:
        fp.write(struct.pack("<" + fmt, *values))


def read_header(fp, magic, fmt="", fn=None):
    """Check ``magic`` and return the values packed with ``fmt``."""
    found = fp.read(len(magic))
    if found != magic:
        raise DataError(
            f"{fn or 'file'} is not a {magic.decode()} file (magic bytes {found!r})."
        )
    if not fmt:
        return ()
    return read_struct(fp, fmt, fn=fn)


def read_struct(fp, fmt, fn=None):
    size = struct.calcsize("<" + fmt)
    buf = fp.read(size)
    if len(buf) != size:
        raise DataError(f"Unexpected end of file in {fn or 'file'}.")
    return struct.unpack("<" + fmt, buf)


def write_array(fp, arr, dtype):
    """Write ``arr`` row-major with a little-endian ``dtype``."""
    dtype = np.dtype(dtype).newbyteorder("<")
    fp.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def read_array(fp, dtype, shape, fn=None):
    """Read a row-major array of ``shape`` written by :py:func:`write_array`."""
    dtype = np.dtype(dtype).newbyteorder("<")
    count = int(np.prod(shape, dtype=np.int64))
    buf = fp.read(count * dtype.itemsize)
    if len(buf) != count * dtype.itemsize:
        raise DataError(f"Unexpected end of file in {fn or 'file'}.")
    arr = np.frombuffer(buf, dtype=dtype).astype(dtype.newbyteorder("="))
    return arr.reshape(shape)


def write_vector_file(fn, ids, matrix, binary=False):
    """Write dense vectors keyed by external ID.

    The text format has a ``d=<dim>`` header followed by one
    ``ext_id<TAB>v1,...,vd`` line per row; floats are written with ``repr`` so
    a read returns bit-identical values. The binary format is ``GPE1``, dim
    (uint32), count (uint64), the ID table (uint32 byte length + utf-8 bytes
    per ID) and the float64 matrix.

    Parameters
    ----------
    fn : str
        Output path.
    ids : list of str
        External IDs, one per row of ``matrix``.
    matrix : numpy.ndarray
        Array of shape (len(ids), d).
    binary : bool, optional
        Write the binary format instead of text.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise ValueError(
            f"Vector matrix of shape {matrix.shape} does not match {len(ids)} ids."
        )
    dim = matrix.shape[1]
    if binary:
        with open(fn, "wb") as fp:
            write_header(fp, VECTOR_MAGIC, "IQ", dim, len(ids))
            for ext_id in ids:
                raw = str(ext_id).encode("utf-8")
                fp.write(struct.pack("<I", len(raw)))
                fp.write(raw)
            write_array(fp, matrix, np.float64)
    else:
        with open(fn, "w", encoding="utf-8") as fp:
            print(f"d={dim}", file=fp)
            for ext_id, row in zip(ids, matrix.tolist()):
                print(f"{ext_id}\t" + ",".join(repr(v) for v in row), file=fp)


def read_vector_file(fn):
    """Read a vector file in either format of :py:func:`write_vector_file`.

    Text files may contain empty lines and ``#`` comments; IDs cannot
    contain ``#``.

    Returns
    -------
    ids : list of str
    matrix : numpy.ndarray
        Array of shape (len(ids), d).
    """
    if not isfile(fn):
        raise DataError(f"Vector file not found: {fn}")
    with open(fn, "rb") as fp:
        binary = fp.read(len(VECTOR_MAGIC)) == VECTOR_MAGIC
    if binary:
        with open(fn, "rb") as fp:
            dim, count = read_header(fp, VECTOR_MAGIC, "IQ", fn=fn)
            ids = []
            for _ in range(count):
                (size,) = read_struct(fp, "I", fn=fn)
                ids.append(fp.read(size).decode("utf-8"))
            matrix = read_array(fp, np.float64, (count, dim), fn=fn)
        return ids, matrix

    with open(fn, "r", encoding="utf-8") as fp:
        header = fp.readline().strip()
    if not header.startswith("d="):
        raise DataError(f"{fn}: missing 'd=<dim>' header, found '{header}'.")
    dim = int(header[2:])
    try:
        df = pd.read_csv(
            fn,
            sep="\t",
            comment="#",
            skiprows=1,
            header=None,
            names=["id", "values"],
            dtype={"id": str},
            converters={"values": _parse_values},
            keep_default_na=False,
            quoting=csv.QUOTE_NONE,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        return [], np.zeros((0, dim))
    except (pd.errors.ParserError, ValueError) as err:
        raise DataError(f"{fn}: {err}")
    # rows without a tab have no values column
    rows = [row if isinstance(row, list) else [] for row in df["values"]]
    for ext_id, row in zip(df["id"], rows):
        if len(row) != dim:
            raise DataError(
                f"{fn}: expected {dim} values for '{ext_id}', found {len(row)}."
            )
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return df["id"].tolist(), matrix


def _parse_values(values):
    return [float(v) for v in values.split(",")] if values else []


def file_digest(fn, chunk_size=1 << 20):
    """Return the sha256 hex digest of file ``fn``."""
    sha = hashlib.sha256()
    with open(fn, "rb") as fp:
        for chunk in iter(lambda: fp.read(chunk_size), b""):
            sha.update(chunk)
    return sha.hexdigest()
