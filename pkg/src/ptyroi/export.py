"""CSV, grid-file and PNG writers for stat maps, masks and reconstructions."""

import csv
import json

import numpy as np
from PIL import Image

from .dataset import read_stack, write_stack
from .exceptions import FormatError

STAT_HEADER = ["index", "row", "col", "value"]
MASK_HEADER = ["index", "row", "col", "selected"]


def _format(value):
    return repr(float(value))


def write_stat_csv(path, index, rows, cols, values):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(STAT_HEADER)
        for i, r, c, v in zip(index, rows, cols, values):
            writer.writerow([int(i), int(r), int(c), _format(v)])


def read_stat_csv(path):
    """Return ``(index, rows, cols, values)`` arrays from a stat CSV."""
    return _read_table(path, STAT_HEADER, float)


def write_mask_csv(path, index, rows, cols, selected):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MASK_HEADER)
        for i, r, c, s in zip(index, rows, cols, selected):
            writer.writerow([int(i), int(r), int(c), int(bool(s))])


def read_mask_csv(path):
    index, rows, cols, selected = _read_table(path, MASK_HEADER, int)
    if np.any((selected != 0) & (selected != 1)):
        raise FormatError(f"{path}: 'selected' must be 0 or 1")
    return index, rows, cols, selected.astype(bool)


def _read_table(path, header, last_type):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got is None or [h.strip() for h in got] != header:
            raise FormatError(f"{path}: expected header {','.join(header)}, got {got}")
        cols = [[], [], [], []]
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 fields, got {len(rec)}")
            try:
                for dst, conv, field in zip(cols, (int, int, int, last_type), rec):
                    dst.append(conv(field))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return (
        np.array(cols[0], dtype=np.int64),
        np.array(cols[1], dtype=np.int64),
        np.array(cols[2], dtype=np.int64),
        np.array(cols[3], dtype=np.float64 if last_type is float else np.int64),
    )


def mask_to_grid(rows, cols, selected, grid_shape):
    cells = np.zeros(grid_shape, dtype=bool)
    occupied = np.zeros(grid_shape, dtype=bool)
    cells[rows - 1, cols - 1] = selected
    occupied[rows - 1, cols - 1] = True
    return cells, occupied


def write_grid(path, grid):
    """Store a real 2-D grid as a single-frame stack file."""
    write_stack(path, np.asarray(grid, dtype=np.float32)[np.newaxis])


def read_grid(path):
    stack = read_stack(path)
    if stack.shape[0] != 1:
        raise FormatError(f"{path}: grid file must hold exactly one frame, found {stack.shape[0]}")
    return np.array(stack[0])


def save_png(path, image, *, vmin=None, vmax=None):
    """Write a grayscale 8-bit rendering of a real grid; NaN and -inf show black."""
    img = np.asarray(image, dtype=np.float64)
    finite = np.isfinite(img)
    if not finite.any():
        out = np.zeros(img.shape, dtype=np.uint8)
    else:
        lo = img[finite].min() if vmin is None else vmin
        hi = img[finite].max() if vmax is None else vmax
        scale = 255.0 / (hi - lo) if hi > lo else 0.0
        out = np.zeros(img.shape, dtype=np.uint8)
        out[finite] = np.clip(np.round((img[finite] - lo) * scale), 0, 255).astype(np.uint8)
    Image.fromarray(out, mode="L").save(path)


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
