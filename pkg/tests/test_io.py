"""Tests for the vector file formats and binary helpers"""

import numpy as np
import pytest

from gpatch.errors import DataError
from gpatch.io import write_vector_file, read_vector_file, file_digest


@pytest.mark.parametrize("binary", [False, True])
def test_vector_file_exact(tmpdir, binary):
    fn = str(tmpdir.join("vectors.txt"))
    matrix = np.array([[0.1, 1.0 / 3.0, -2.5e-300], [np.pi, 0.0, 1e10]])
    write_vector_file(fn, ["a", "é b"], matrix, binary=binary)
    ids, out = read_vector_file(fn)
    assert ids == ["a", "é b"]
    assert out.dtype == np.float64
    assert np.array_equal(out, matrix)


def test_vector_file_empty_rows(tmpdir):
    fn = str(tmpdir.join("empty.txt"))
    write_vector_file(fn, ["a", "b"], np.zeros((2, 0)))
    ids, out = read_vector_file(fn)
    assert ids == ["a", "b"]
    assert out.shape == (2, 0)


def test_vector_file_comments(tmpdir):
    fn = str(tmpdir.join("comments.txt"))
    with open(fn, "w") as fp:
        fp.write("d=2\n# exported vectors\na\t0.5,-1e-3\n\nNA\t2.0,3.0  # trailing\n")
    ids, out = read_vector_file(fn)
    assert ids == ["a", "NA"]
    assert out.tolist() == [[0.5, -1e-3], [2.0, 3.0]]
    with open(fn, "w") as fp:
        fp.write("d=3\n")
    ids, out = read_vector_file(fn)
    assert ids == [] and out.shape == (0, 3)


def test_vector_file_errors(tmpdir):
    fn = str(tmpdir.join("bad.txt"))
    with open(fn, "w") as fp:
        fp.write("d=2\na\t1.0,2.0\nb\t1.0\n")
    with pytest.raises(DataError, match="expected 2 values for 'b'"):
        read_vector_file(fn)
    with open(fn, "w") as fp:
        fp.write("a\t1.0,2.0\n")
    with pytest.raises(DataError, match="missing 'd=<dim>' header"):
        read_vector_file(fn)
    with pytest.raises(DataError, match="not found"):
        read_vector_file(str(tmpdir.join("missing.txt")))
    with pytest.raises(ValueError):
        write_vector_file(fn, ["a"], np.zeros((2, 2)))


def test_file_digest(tmpdir):
    fn = str(tmpdir.join("a.txt"))
    with open(fn, "w") as fp:
        fp.write("abc")
    digest = file_digest(fn)
    assert digest == (
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    )
    assert file_digest(fn, chunk_size=1) == digest
