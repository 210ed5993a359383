"""Reading and writing counts, designs and parameter tables.

Counts are genes x cells everywhere.  Two count formats are supported:

* MatrixMarket ``coordinate integer general`` (``.mtx``), 1-based indices;
* dense CSV whose header row holds the cell IDs (after a corner label) and
  whose first column holds the gene IDs.

Parameter tables are CSV with row and column labels; floats are written with
``repr`` so that reading them back is lossless.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import DataError
from .model import CountMatrix

_MTX_BANNER = "%%MatrixMarket matrix coordinate integer general"


def _format_of(path, fmt):
    if fmt is not None:
        if fmt not in ("mtx", "csv"):
            raise DataError(f"unknown count format {fmt!r} (expected mtx or csv)")
        return fmt
    suffix = Path(path).suffix.lower()
    if suffix == ".mtx":
        return "mtx"
    if suffix in (".csv", ".txt"):
        return "csv"
    raise DataError(f"{path}: cannot infer count format from suffix {suffix!r}")


def _parse_count(token: str, where: str) -> int:
    try:
        value = float(token)
    except ValueError:
        raise DataError(f"{where}: non-numeric count {token!r}") from None
    if not math.isfinite(value):
        raise DataError(f"{where}: non-finite count {token!r}")
    if value < 0:
        raise DataError(f"{where}: negative count {token!r}")
    if value != int(value):
        raise DataError(f"{where}: fractional count {token!r}")
    return int(value)


def _read_lines(path):
    try:
        return Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    except UnicodeDecodeError:
        raise DataError(f"{path}: not a text file") from None


def _read_mtx(path) -> CountMatrix:
    lines = _read_lines(path)
    if not lines or not lines[0].startswith("%%MatrixMarket"):
        raise DataError(f"{path}:1: missing %%MatrixMarket banner")
    banner = lines[0].split()
    if len(banner) != 5 or banner[1].lower() != "matrix" or banner[2].lower() != "coordinate":
        raise DataError(f"{path}:1: only 'matrix coordinate' files are supported")
    if banner[3].lower() not in ("integer", "real") or banner[4].lower() != "general":
        raise DataError(f"{path}:1: unsupported field/symmetry {banner[3]} {banner[4]}")
    i = 1
    while i < len(lines) and (lines[i].startswith("%") or not lines[i].strip()):
        i += 1
    if i == len(lines):
        raise DataError(f"{path}: missing size line")
    size = lines[i].split()
    try:
        V, J, nnz = (int(t) for t in size)
    except ValueError:
        raise DataError(f"{path}:{i + 1}: malformed size line {lines[i]!r}") from None
    rows, cols, vals = [], [], []
    for lineno in range(i + 1, len(lines)):
        text = lines[lineno].strip()
        if not text or text.startswith("%"):
            continue
        where = f"{path}:{lineno + 1}"
        parts = text.split()
        if len(parts) != 3:
            raise DataError(f"{where}: expected 'row col value', got {text!r}")
        try:
            r, c = int(parts[0]), int(parts[1])
        except ValueError:
            raise DataError(f"{where}: non-integer index in {text!r}") from None
        if not (1 <= r <= V and 1 <= c <= J):
            raise DataError(f"{where}: index ({r}, {c}) outside {V} x {J}")
        rows.append(r - 1)
        cols.append(c - 1)
        vals.append(_parse_count(parts[2], where))
    if len(vals) != nnz:
        raise DataError(f"{path}: size line announces {nnz} entries, found {len(vals)}")
    mat = sparse.coo_matrix((np.array(vals, dtype=np.int64), (np.array(rows, dtype=np.int64),
                                                               np.array(cols, dtype=np.int64))), shape=(V, J))
    if len(set(zip(rows, cols))) != len(rows):
        raise DataError(f"{path}: duplicate coordinates")
    return CountMatrix(mat.tocsr())


def _read_csv(path) -> CountMatrix:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0]
    cell_ids = tuple(header[1:])
    if not cell_ids:
        raise DataError(f"{path}:1: header has no cell IDs")
    gene_ids, data = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: {len(row)} fields, header has {len(header)}")
        gene_ids.append(row[0])
        data.append([_parse_count(t.strip(), f"{path}:{lineno}") for t in row[1:]])
    if not data:
        raise DataError(f"{path}: no gene rows")
    return CountMatrix.from_dense(np.array(data, dtype=np.int64), gene_ids=tuple(gene_ids), cell_ids=cell_ids)


def read_counts(path, format: str | None = None) -> CountMatrix:
    """Read a genes x cells count matrix from an ``.mtx`` or ``.csv`` file."""
    fmt = _format_of(path, format)
    return _read_mtx(path) if fmt == "mtx" else _read_csv(path)


def write_counts(path, counts: CountMatrix, format: str | None = None) -> None:
    """Write ``counts`` so that :func:`read_counts` returns an equal matrix."""
    fmt = _format_of(path, format)
    if fmt == "mtx":
        coo = counts.matrix.tocoo()
        order = np.lexsort((coo.row, coo.col))
        with open(path, "w") as fh:
            fh.write(_MTX_BANNER + "\n")
            fh.write(f"{counts.n_genes} {counts.n_cells} {coo.nnz}\n")
            for k in order:
                fh.write(f"{coo.row[k] + 1} {coo.col[k] + 1} {coo.data[k]}\n")
        return
    gene_ids = counts.gene_ids or tuple(f"gene{v + 1}" for v in range(counts.n_genes))
    cell_ids = counts.cell_ids or tuple(f"cell{j + 1}" for j in range(counts.n_cells))
    dense = counts.dense
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gene", *cell_ids])
        for v in range(counts.n_genes):
            w.writerow([gene_ids[v], *dense[v].tolist()])


def read_design(path, n_columns: int | None = None, *, intercept: bool = False) -> np.ndarray:
    """Read a covariate block: one row per covariate, one column per unit.

    The file is plain numeric CSV without labels.  An empty file yields zero
    covariates, which needs ``n_columns``; with ``intercept`` an all-ones row
    is prepended.
    """
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(t.strip() for t in r)]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    values = []
    for lineno, row in enumerate(rows, start=1):
        parsed = []
        for t in row:
            try:
                x = float(t)
            except ValueError:
                raise DataError(f"{path}:{lineno}: non-numeric value {t.strip()!r}") from None
            if not math.isfinite(x):
                raise DataError(f"{path}:{lineno}: non-finite value {t.strip()!r}")
            parsed.append(x)
        if values and len(parsed) != len(values[0]):
            raise DataError(f"{path}:{lineno}: {len(parsed)} values, expected {len(values[0])}")
        values.append(parsed)
    if values:
        block = np.array(values, dtype=float)
        if n_columns is not None and block.shape[1] != n_columns:
            raise DataError(f"{path}: {block.shape[1]} columns, expected {n_columns}")
    else:
        if n_columns is None:
            raise DataError(f"{path}: empty design needs the number of columns")
        block = np.zeros((0, int(n_columns)))
    if intercept:
        block = np.vstack([np.ones((1, block.shape[1])), block])
    return block


def write_design(path, block) -> None:
    block = np.atleast_2d(np.asarray(block, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in block:
            w.writerow([repr(float(x)) for x in row])


def write_matrix(path, matrix, row_names, col_names, corner: str = "") -> None:
    """Labelled CSV table of a real matrix (floats written with ``repr``)."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([corner, *col_names])
        for name, row in zip(row_names, matrix):
            w.writerow([name, *(repr(float(x)) for x in row)])


def read_matrix(path):
    """Inverse of :func:`write_matrix`: returns ``(matrix, row_names, col_names)``."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise DataError(f"{path}: empty file")
    cols = rows[0][1:]
    names, data = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(cols) + 1:
            raise DataError(f"{path}:{lineno}: {len(row)} fields, expected {len(cols) + 1}")
        names.append(row[0])
        try:
            data.append([float(t) for t in row[1:]])
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric value") from None
    mat = np.array(data, dtype=float).reshape(len(names), len(cols))
    return mat, names, cols


def write_vector(path, values, names, header=("name", "value")) -> None:
    values = np.asarray(values).ravel()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for n, x in zip(names, values):
            w.writerow([n, repr(float(x)) if np.issubdtype(values.dtype, np.floating) else int(x)])


def read_vector(path) -> tuple[np.ndarray, list[str]]:
    mat, names, _ = read_matrix(path)
    return mat[:, 0], names
