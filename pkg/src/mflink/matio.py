"""Matrix file formats: dense CSV and Matrix Market coordinate files.

Dense CSV is one comma-separated row per line, no header. Sparse matrices
use the Matrix Market coordinate format. Both readers reject NaN and Inf.
"""

import math

import numpy as np
import scipy.sparse as sp


def _format_value(v):
    # repr gives the shortest float literal that round-trips, so files are
    # byte-stable across runs.
    f = float(v)
    if math.isfinite(f) and f == int(f) and abs(f) < 1e16:
        return str(int(f))
    return repr(f)


def write_dense_csv(path, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("expected a 2-d array")
    with open(path, "w") as fh:
        for row in X:
            fh.write(",".join(_format_value(v) for v in row))
            fh.write("\n")


def read_dense_csv(path):
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(tok) for tok in line.split(",")]
            except ValueError:
                raise ValueError("%s:%d: unparseable value" % (path, lineno))
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise ValueError("%s:%d: ragged row (%d values, expected %d)"
                                 % (path, lineno, len(row), width))
            if not all(np.isfinite(row)):
                raise ValueError("%s:%d: NaN or Inf rejected" % (path, lineno))
            rows.append(row)
    if not rows:
        raise ValueError("%s: empty matrix file" % path)
    return np.asarray(rows, dtype=np.float64)


def write_matrix_market(path, X):
    C = sp.coo_matrix(X)
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write("%d %d %d\n" % (C.shape[0], C.shape[1], C.nnz))
        for i, j, v in zip(C.row, C.col, C.data):
            fh.write("%d %d %s\n" % (i + 1, j + 1, _format_value(v)))


def read_matrix_market(path):
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("%%MatrixMarket"):
            raise ValueError("%s: missing MatrixMarket header" % path)
        parts = header.split()
        if parts[1:3] != ["matrix", "coordinate"] or "real" not in parts:
            raise ValueError("%s: only 'matrix coordinate real' supported" % path)
        lineno = 1
        line = fh.readline()
        lineno += 1
        while line.startswith("%"):
            line = fh.readline()
            lineno += 1
        try:
            n, m, nnz = (int(t) for t in line.split())
        except ValueError:
            raise ValueError("%s:%d: bad size line" % (path, lineno))
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=np.float64)
        for idx in range(nnz):
            line = fh.readline()
            lineno += 1
            toks = line.split()
            if len(toks) != 3:
                raise ValueError("%s:%d: expected 'row col value'" % (path, lineno))
            i, j = int(toks[0]) - 1, int(toks[1]) - 1
            v = float(toks[2])
            if not np.isfinite(v):
                raise ValueError("%s:%d: NaN or Inf rejected" % (path, lineno))
            if not (0 <= i < n and 0 <= j < m):
                raise ValueError("%s:%d: index out of bounds" % (path, lineno))
            rows[idx], cols[idx], vals[idx] = i, j, v
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, m))
