"""Diffraction stack and scan-position files.

Stack layout (little endian)::

    b"PTYS" | u32 version=1 | u32 K | u32 N | u32 M | u32 dtype=0 | K*N*M float32

frames are stored one after another, each in row-major order.  Positions live
in a CSV with header ``index,row,col,x_um,y_um`` and one row per frame.
"""

import csv
import os
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import (
    DataError,
    EmptySelectionError,
    FormatError,
    GeometryError,
    SizeError,
    TruncationError,
)
from .validation import check_pattern_stack, check_rowcol

__all__ = [
    "ScanPosition",
    "ScanDataset",
    "load_dataset",
    "save_dataset",
    "filter_dataset",
    "read_stack",
    "write_stack",
    "read_positions",
    "write_positions",
    "write_selection",
    "read_selection",
]

MAGIC = b"PTYS"
VERSION = 1
DTYPE_FLOAT32 = 0
HEADER = struct.Struct("<4s5I")
POSITIONS_HEADER = ["index", "row", "col", "x_um", "y_um"]


class ScanPosition(NamedTuple):
    index: int
    row: int
    col: int
    x: float
    y: float


@dataclass(eq=False)
class ScanDataset:
    """K diffraction patterns with their scan-grid positions.

    ``patterns`` is a ``(K, N, M)`` float32 array.  Rows and columns are 1-based
    grid indices; ``x_um``/``y_um`` are physical coordinates kept as metadata.
    """

    patterns: np.ndarray
    index: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    x_um: np.ndarray
    y_um: np.ndarray
    grid_rows: int
    grid_cols: int
    step_size: float = 1.0

    def __post_init__(self):
        self.patterns = check_pattern_stack(self.patterns)
        if self.patterns.dtype != np.float32:
            self.patterns = self.patterns.astype(np.float32)
        self.index = np.asarray(self.index, dtype=np.int64)
        self.x_um = np.asarray(self.x_um, dtype=np.float64)
        self.y_um = np.asarray(self.y_um, dtype=np.float64)
        self.grid_rows, self.grid_cols = int(self.grid_rows), int(self.grid_cols)
        self.rows, self.cols = check_rowcol(
            np.column_stack([np.asarray(self.rows), np.asarray(self.cols)]),
            (self.grid_rows, self.grid_cols),
        )
        k = self.patterns.shape[0]
        for name in ("index", "rows", "cols", "x_um", "y_um"):
            if getattr(self, name).shape != (k,):
                raise GeometryError(f"{name} has {getattr(self, name).shape} entries, expected ({k},)")
        if np.unique(self.index).size != k:
            raise GeometryError("scan indices are not unique")

    @classmethod
    def from_grid(cls, patterns, rows, cols, grid_shape, step_size=1.0):
        """Build a dataset numbering frames 1..K and placing them at ``row*step``."""
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        k = len(rows)
        return cls(
            patterns=patterns,
            index=np.arange(1, k + 1),
            rows=rows,
            cols=cols,
            x_um=cols * float(step_size),
            y_um=rows * float(step_size),
            grid_rows=grid_shape[0],
            grid_cols=grid_shape[1],
            step_size=step_size,
        )

    @property
    def n_frames(self):
        return self.patterns.shape[0]

    @property
    def frame_shape(self):
        return self.patterns.shape[1:]

    @property
    def grid_shape(self):
        return (self.grid_rows, self.grid_cols)

    @property
    def positions(self):
        return [
            ScanPosition(int(i), int(r), int(c), float(x), float(y))
            for i, r, c, x, y in zip(self.index, self.rows, self.cols, self.x_um, self.y_um)
        ]

    def occupancy(self):
        occ = np.zeros(self.grid_shape, dtype=bool)
        occ[self.rows - 1, self.cols - 1] = True
        return occ

    def __len__(self):
        return self.n_frames

    def __eq__(self, other):
        if not isinstance(other, ScanDataset):
            return NotImplemented
        return (
            self.grid_shape == other.grid_shape
            and self.patterns.shape == other.patterns.shape
            and self.patterns.tobytes() == other.patterns.tobytes()
            and all(
                np.array_equal(getattr(self, f), getattr(other, f))
                for f in ("index", "rows", "cols", "x_um", "y_um")
            )
        )


# -- stack files -------------------------------------------------------------


def write_stack(path, stack):
    arr = np.asarray(stack)
    if arr.ndim == 2:
        arr = arr[np.newaxis]
    if arr.ndim != 3:
        raise GeometryError(f"stack must be (K, N, M), got shape {arr.shape}")
    k, n, m = arr.shape
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, k, n, m, DTYPE_FLOAT32))
        # chunked to keep peak memory flat for large stacks
        for start in range(0, k, 256):
            fh.write(np.ascontiguousarray(arr[start:start + 256], dtype="<f4").tobytes())


def read_stack_header(path):
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
    if len(raw) < HEADER.size:
        raise FormatError(f"{path}: file too short for a stack header")
    magic, version, k, n, m, dtype = HEADER.unpack(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dtype != DTYPE_FLOAT32:
        raise FormatError(f"{path}: unsupported dtype code {dtype}")
    return k, n, m


def read_stack(path, mmap=False):
    """Read a stack file into a ``(K, N, M)`` float32 array.

    With ``mmap=True`` the frames are memory-mapped read-only instead of read.
    """
    k, n, m = read_stack_header(path)
    # python ints: K*N*M*4 exceeds 2**32 for full-size scans
    expected = HEADER.size + int(k) * int(n) * int(m) * 4
    actual = os.path.getsize(path)
    if actual != expected:
        raise TruncationError(
            f"{path}: header declares K={k}, N={n}, M={m} ({expected} bytes) but file has {actual} bytes"
        )
    if k == 0 or n == 0 or m == 0:
        raise SizeError(f"{path}: empty stack (K={k}, N={n}, M={m})")
    if mmap:
        data = np.memmap(path, dtype="<f4", mode="r", offset=HEADER.size, shape=(k, n, m))
    else:
        data = np.fromfile(path, dtype="<f4", offset=HEADER.size).reshape(k, n, m)
    if data.dtype != np.float32:
        data = data.astype(np.float32)
    return data


# -- position tables ---------------------------------------------------------


def write_positions(path, index, rows, cols, x_um, y_um):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(POSITIONS_HEADER)
        for row in zip(index, rows, cols, x_um, y_um):
            i, r, c, x, y = row
            writer.writerow([int(i), int(r), int(c), repr(float(x)), repr(float(y))])


def read_positions(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != POSITIONS_HEADER:
            raise FormatError(f"{path}: expected header {','.join(POSITIONS_HEADER)}, got {header}")
        records = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 5:
                raise FormatError(f"{path}:{lineno}: expected 5 fields, got {len(rec)}")
            try:
                records.append((int(rec[0]), int(rec[1]), int(rec[2]), float(rec[3]), float(rec[4])))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not records:
        return tuple(np.empty(0, dtype=t) for t in (np.int64, np.int64, np.int64, float, float))
    index, rows, cols, x_um, y_um = (np.array(col) for col in zip(*records))
    if not np.array_equal(index, np.arange(1, len(index) + 1)):
        raise FormatError(f"{path}: indices must ascend from 1 without gaps")
    return index.astype(np.int64), rows.astype(np.int64), cols.astype(np.int64), x_um, y_um


def write_selection(path, indices):
    """Write the original scan indices retained by a selection, header ``index``."""
    with open(path, "w", newline="") as fh:
        fh.write("index\n")
        for i in indices:
            fh.write(f"{int(i)}\n")


def read_selection(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "index":
            raise FormatError(f"{path}: expected header 'index', got {header!r}")
        return np.array([int(line) for line in fh if line.strip()], dtype=np.int64)


# -- datasets ----------------------------------------------------------------


def load_dataset(stack_path, positions_path, *, grid_shape=None, step_size=None, mmap=False):
    """Load a stack file and its positions CSV into a :class:`ScanDataset`.

    The grid extent defaults to the largest row and column present; the step
    size defaults to the spacing of physical x coordinates along a grid row.
    """
    patterns = read_stack(stack_path, mmap=mmap)
    index, rows, cols, x_um, y_um = read_positions(positions_path)
    if len(index) != patterns.shape[0]:
        raise TruncationError(
            f"{positions_path}: {len(index)} positions for {patterns.shape[0]} frames in {stack_path}"
        )
    if grid_shape is None:
        grid_shape = (int(rows.max()), int(cols.max()))
    if step_size is None:
        step_size = _infer_step(cols, x_um)
    return ScanDataset(
        patterns=patterns,
        index=index,
        rows=rows,
        cols=cols,
        x_um=x_um,
        y_um=y_um,
        grid_rows=grid_shape[0],
        grid_cols=grid_shape[1],
        step_size=step_size,
    )


def _infer_step(cols, x_um):
    if len(cols) < 2 or np.unique(cols).size < 2:
        return 1.0
    slope = np.polyfit(cols.astype(float), x_um, 1)[0]
    return float(abs(slope)) or 1.0


def save_dataset(ds, stack_path, positions_path):
    write_stack(stack_path, ds.patterns)
    write_positions(positions_path, ds.index, ds.rows, ds.cols, ds.x_um, ds.y_um)


def filter_dataset(ds, mask, *, renumber=True):
    """Keep the frames whose grid cell is selected in ``mask``.

    ``mask`` is a :class:`~ptyroi.clustering.RoiMask` or a boolean grid.  Order
    of the retained frames follows the original scan index.  With
    ``renumber=True`` the retained frames are indexed 1..K' again (as the
    positions file format requires); the original indices are available from
    :func:`selected_indices`.
    """
    keep = selected_frames(ds, mask)
    if not keep.any():
        raise EmptySelectionError("mask selects no acquired frame")
    order = np.argsort(ds.index[keep], kind="stable")
    sel = np.flatnonzero(keep)[order]
    index = np.arange(1, sel.size + 1) if renumber else ds.index[sel]
    return ScanDataset(
        patterns=ds.patterns[sel],
        index=index,
        rows=ds.rows[sel],
        cols=ds.cols[sel],
        x_um=ds.x_um[sel],
        y_um=ds.y_um[sel],
        grid_rows=ds.grid_rows,
        grid_cols=ds.grid_cols,
        step_size=ds.step_size,
    )


def selected_frames(ds, mask):
    """Boolean per-frame selection induced by a grid mask."""
    cells = np.asarray(getattr(mask, "cells", mask), dtype=bool)
    if cells.shape != ds.grid_shape:
        raise GeometryError(f"mask grid {cells.shape} does not match dataset grid {ds.grid_shape}")
    return cells[ds.rows - 1, ds.cols - 1]


def selected_indices(ds, mask):
    return np.sort(ds.index[selected_frames(ds, mask)])


def check_dataset(ds):
    if not isinstance(ds, ScanDataset):
        raise TypeError(f"expected a ScanDataset, got {type(ds).__name__}")
    if ds.n_frames < 1:
        raise SizeError("dataset holds no frames")
    if np.any(ds.patterns < 0):
        raise DataError("negative intensity")
    return ds
